//! Intrinsic C1 calculus: numerical Pansu differentials, coercivity
//! constants, the implicit-function solver producing intrinsic graphs,
//! homogeneous tangents, cone checks and Lipschitz estimation.

use crate::algebra::{dilate, inverse, multiply, Dilation, Point};
use crate::metric::HomDistance;
use crate::optim::multi_start_minimize;
use crate::qmc::QuasiPoints;
use crate::spec::{direct_product, GradedAlgebra};
use crate::subgroup::{kernel, HomMorphism, HomSubgroup, Splitting};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("difference quotients did not extrapolate to a limit (tail spread {0:.3e})")]
    ExtrapolationDiverged(f64),
    #[error("coercivity constant degenerate: sampled minimum {0:.3e}")]
    DegenerateCoercivity(f64),
    #[error("Newton did not converge after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("differential restricted to the complement is not invertible")]
    SingularRestriction,
    #[error(transparent)]
    Subgroup(#[from] crate::subgroup::SubgroupError),
}

/// A function between groups, assumed intrinsically C1 on its domain;
/// the assumption is checked numerically wherever a differential is taken.
#[derive(Clone)]
pub struct C1hFunction {
    pub source: Arc<GradedAlgebra>,
    pub target: Arc<GradedAlgebra>,
    eval: Arc<dyn Fn(&Point) -> Point + Send + Sync>,
    pub analytic_differential: Option<Arc<dyn Fn(&Point) -> HomMorphism + Send + Sync>>,
    /// Coordinate box on which the function is declared usable.
    pub domain: Vec<(f64, f64)>,
}

impl std::fmt::Debug for C1hFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("C1hFunction")
            .field("source", &self.source.name)
            .field("target", &self.target.name)
            .finish()
    }
}

impl C1hFunction {
    pub fn new(
        source: Arc<GradedAlgebra>,
        target: Arc<GradedAlgebra>,
        eval: Arc<dyn Fn(&Point) -> Point + Send + Sync>,
    ) -> Self {
        let domain = vec![(-1e6, 1e6); source.dim];
        Self { source, target, eval, analytic_differential: None, domain }
    }

    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_analytic_differential(
        mut self,
        d: Arc<dyn Fn(&Point) -> HomMorphism + Send + Sync>,
    ) -> Self {
        self.analytic_differential = Some(d);
        self
    }

    pub fn eval(&self, p: &Point) -> Point {
        (self.eval)(p)
    }

    /// Wrap a homogeneous morphism; its differential is itself.
    pub fn from_morphism(l: &HomMorphism) -> Self {
        let lc = l.clone();
        let ld = l.clone();
        Self::new(
            l.source.clone(),
            l.target.clone(),
            Arc::new(move |p: &Point| lc.apply(p)),
        )
        .with_analytic_differential(Arc::new(move |_p: &Point| ld.clone()))
    }

    /// Pair `p -> (u(p), f(p))` into the direct product of the targets.
    /// In a direct product the differential is the stacked pair, so the
    /// analytic fast path survives pairing.
    pub fn pair(u: &C1hFunction, f: &C1hFunction) -> Self {
        assert!(Arc::ptr_eq(&u.source, &f.source) || *u.source == *f.source);
        let product = Arc::new(direct_product(&u.target, &f.target));
        let ue = u.eval.clone();
        let fe = f.eval.clone();
        let prod = product.clone();
        let dom = u.domain.clone();
        let analytic = match (&u.analytic_differential, &f.analytic_differential) {
            (Some(du), Some(df)) => {
                let (du, df) = (du.clone(), df.clone());
                let prod2 = product.clone();
                let source = u.source.clone();
                Some(Arc::new(move |p: &Point| {
                    let a = du(p);
                    let b = df(p);
                    let mut m = DMatrix::zeros(prod2.dim, source.dim);
                    m.rows_mut(0, a.matrix.nrows()).copy_from(&a.matrix);
                    m.rows_mut(a.matrix.nrows(), b.matrix.nrows()).copy_from(&b.matrix);
                    HomMorphism { matrix: m, source: source.clone(), target: prod2.clone() }
                }) as Arc<dyn Fn(&Point) -> HomMorphism + Send + Sync>)
            }
            _ => None,
        };
        Self {
            source: u.source.clone(),
            target: product,
            eval: Arc::new(move |p: &Point| {
                let a = ue(p);
                let b = fe(p);
                let mut coords = a.coords.clone();
                coords.extend_from_slice(&b.coords);
                Point::new(prod.clone(), coords)
            }),
            analytic_differential: analytic,
            domain: dom,
        }
    }
}

/// Default dyadic ladder for difference quotients.
pub fn default_ladder() -> Vec<f64> {
    (3..=10).map(|k| 2f64.powi(-k)).collect()
}

/// Differential at a point: the analytic one when the function carries it,
/// otherwise the numerical estimator.
pub fn differential_at(f: &C1hFunction, p: &Point) -> Result<HomMorphism, GraphError> {
    if let Some(d) = &f.analytic_differential {
        return Ok(d(p));
    }
    pansu_differential(f, p, &default_ladder())
}

/// Numerical Pansu differential at `p`: dilated difference quotients along
/// the layer-1 directions, Richardson-extrapolated down the ladder, then
/// extended to the full morphism through the stratification and validated.
pub fn pansu_differential(
    f: &C1hFunction,
    p: &Point,
    ladder: &[f64],
) -> Result<HomMorphism, GraphError> {
    assert!(ladder.len() >= 3, "ladder needs at least three scales");
    let source = &f.source;
    let target = &f.target;
    let fp = f.eval(p);
    let fp_inv = inverse(&fp);
    let layer1 = source.layer_indices(1);

    // one column of the layer-1 block per horizontal direction
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(layer1.len());
    let mut worst_spread = 0.0_f64;
    for &i in &layer1 {
        let mut e = vec![0.0; source.dim];
        e[i] = 1.0;
        let dir = Point::new(source.clone(), e);
        let quotient = |lam: f64| -> Vec<f64> {
            let step = dilate(Dilation::new(lam), &dir);
            let q = multiply(p, &step).expect("same algebra");
            let diff = multiply(&fp_inv, &f.eval(&q)).expect("same algebra");
            dilate(Dilation::new(1.0 / lam), &diff).coords
        };
        let raw: Vec<Vec<f64>> = ladder.iter().map(|&l| quotient(l)).collect();
        // first-order Richardson between consecutive ladder rungs
        let extrapolated: Vec<Vec<f64>> = raw
            .windows(2)
            .map(|w| {
                let ratio = ladder[0] / ladder[1]; // assume a geometric ladder
                let r = ratio;
                w[0]
                    .iter()
                    .zip(&w[1])
                    .map(|(a, b)| (r * b - a) / (r - 1.0))
                    .collect()
            })
            .collect();
        let last = extrapolated.last().unwrap();
        let prev = &extrapolated[extrapolated.len() - 2];
        let spread = last
            .iter()
            .zip(prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_spread = worst_spread.max(spread);
        columns.push(last.clone());
    }
    if worst_spread > 1e-5 {
        return Err(GraphError::ExtrapolationDiverged(worst_spread));
    }

    // assemble: layer-1 block from the quotients, higher layers generated
    // through brackets (the source is stratified)
    let mut matrix = DMatrix::zeros(target.dim, source.dim);
    let t_layer1 = target.layer_indices(1);
    for (col, &i) in layer1.iter().enumerate() {
        for &r in &t_layer1 {
            let v = columns[col][r];
            matrix[(r, i)] = if v.abs() < 1e-9 { 0.0 } else { v };
        }
        // components outside the first layer of the target must vanish
        for r in 0..target.dim {
            if !t_layer1.contains(&r) && columns[col][r].abs() > 1e-5 {
                return Err(GraphError::ExtrapolationDiverged(columns[col][r].abs()));
            }
        }
    }

    let mut images: HashMap<usize, Vec<f64>> = HashMap::new();
    for &i in &layer1 {
        let mut img = vec![0.0; target.dim];
        for r in 0..target.dim {
            img[r] = matrix[(r, i)];
        }
        images.insert(i, img);
    }
    for lay in 2..=source.step {
        let lower = source.layer_indices(lay - 1);
        let first = source.layer_indices(1);
        let targets = source.layer_indices(lay);
        if targets.is_empty() {
            continue;
        }
        // bracket columns [e_a, e_b], a in layer 1, b in layer lay-1
        let mut cols: Vec<((usize, usize), Vec<f64>)> = Vec::new();
        for &a in &first {
            for &b in &lower {
                let mut ea = vec![0.0; source.dim];
                ea[a] = 1.0;
                let mut eb = vec![0.0; source.dim];
                eb[b] = 1.0;
                let br = source.bracket(&ea, &eb);
                cols.push(((a, b), targets.iter().map(|&t| br[t]).collect()));
            }
        }
        let bmat = DMatrix::from_fn(targets.len(), cols.len(), |r, c| cols[c].1[r]);
        let svd = bmat.clone().svd(true, true);
        for (ti, &t_idx) in targets.iter().enumerate() {
            let mut rhs = DVector::zeros(targets.len());
            rhs[ti] = 1.0;
            let sol = svd.solve(&rhs, 1e-10).map_err(|_| GraphError::SingularRestriction)?;
            // L(e_t) = sum_c sol_c [L(e_a), L(e_b)]
            let mut img = vec![0.0; target.dim];
            for (c, ((a, b), _)) in cols.iter().enumerate() {
                if sol[c].abs() < 1e-14 {
                    continue;
                }
                let la = images.get(a).expect("layer-1 image");
                let lb = images.get(b).expect("lower-layer image");
                let br = target.bracket(la, lb);
                for (ii, bi) in img.iter_mut().zip(&br) {
                    *ii += sol[c] * bi;
                }
            }
            for r in 0..target.dim {
                matrix[(r, t_idx)] = if img[r].abs() < 1e-9 { 0.0 } else { img[r] };
            }
            images.insert(t_idx, img);
        }
    }

    crate::subgroup::hom_morphism_with_tol(matrix, source.clone(), target.clone(), 1e-6)
        .map_err(GraphError::from)
}

/// Sampled coercivity constant: the minimum of
/// `rho'(f(q), f(qv)) / ||v||` over `q` near `p` and small `v` in the
/// complement `V`. Must be positive for the implicit solver to proceed.
#[allow(clippy::too_many_arguments)]
pub fn coercivity_constant(
    f: &C1hFunction,
    p: &Point,
    v: &HomSubgroup,
    source_dist: &HomDistance,
    target_dist: &HomDistance,
    radius: f64,
    samples: u64,
    seed: u64,
) -> Result<f64, GraphError> {
    let a = &f.source;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_ratio = f64::INFINITY;
    let mut taken = 0u64;
    while taken < samples {
        // q = p * z with z in the ball of the given radius
        let z_coords: Vec<f64> = (0..a.dim)
            .map(|i| {
                let b = source_dist.layer_bound(a.layer_of[i], radius);
                rng.gen_range(-b..b)
            })
            .collect();
        let z = Point::new(a.clone(), z_coords);
        if source_dist.norm(&z) > radius {
            continue;
        }
        let q = multiply(p, &z).expect("same algebra");
        let scale = rng.gen_range(0.01..1.0) * radius;
        let coeffs: Vec<f64> = (0..v.top_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vraw = v.embed(&coeffs);
        let norm = source_dist.norm(&vraw);
        if norm < 1e-12 {
            continue;
        }
        let vpt = dilate(Dilation::new(scale / norm), &vraw);
        let qv = multiply(&q, &vpt).expect("same algebra");
        if source_dist.dist(p, &qv) > radius {
            continue;
        }
        let num = target_dist.dist(&f.eval(&q), &f.eval(&qv));
        min_ratio = min_ratio.min(num / source_dist.norm(&vpt));
        taken += 1;
    }
    if min_ratio < 1e-6 {
        return Err(GraphError::DegenerateCoercivity(min_ratio));
    }
    Ok(min_ratio)
}

/// Solve `f(a * phi) = b` for `phi` in the complement `V` by damped Newton
/// on the V-coordinates, the step given by the inverse of the restricted
/// Pansu differential.
#[allow(clippy::too_many_arguments)]
pub fn implicit_solve(
    f: &C1hFunction,
    base: &Point,
    b: &Point,
    splitting: &Splitting,
    target_dist: &HomDistance,
    tol: f64,
    coercivity: Option<f64>,
    max_iters: usize,
) -> Result<Point, GraphError> {
    let v = &splitting.v;
    let tv = v.top_dim();
    let mut coeffs = vec![0.0; tv];

    let point_at = |coeffs: &[f64]| -> Point {
        multiply(base, &v.embed(coeffs)).expect("same algebra")
    };
    let residual_vec = |coeffs: &[f64]| -> Vec<f64> {
        // group displacement from f(a phi) to b in exponential coordinates
        let fp = f.eval(&point_at(coeffs));
        multiply(&inverse(&fp), b).expect("same algebra").coords
    };
    let residual_norm = |coeffs: &[f64]| -> f64 {
        target_dist.dist(&f.eval(&point_at(coeffs)), b)
    };

    let mut res = residual_norm(&coeffs);
    for iter in 0..max_iters {
        if res < tol {
            return Ok(v.embed(&coeffs));
        }
        let here = point_at(&coeffs);
        let differential = differential_at(f, &here)?;
        // restriction to V in its orthonormal basis
        let mut j = DMatrix::zeros(f.target.dim, tv);
        for (c, basis_vec) in v.basis().iter().enumerate() {
            let img = differential.apply_coords(basis_vec);
            for (r, val) in img.iter().enumerate() {
                j[(r, c)] = *val;
            }
        }
        let svd = j.svd(true, true);
        let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        if smin < 1e-10 * smax.max(1.0) {
            return Err(GraphError::SingularRestriction);
        }
        let rhs = DVector::from_column_slice(&residual_vec(&coeffs));
        let mut step: Vec<f64> = svd
            .solve(&rhs, 1e-12)
            .map_err(|_| GraphError::SingularRestriction)?
            .iter()
            .copied()
            .collect();

        // cap the step so the linear model stays trustworthy: the coercivity
        // constant lower-bounds the residual decrease per unit step
        if let Some(c) = coercivity {
            let step_len = step.iter().map(|s| s * s).sum::<f64>().sqrt();
            let cap = res / (c * 0.5);
            if step_len > cap {
                let sc = cap / step_len;
                for s in step.iter_mut() {
                    *s *= sc;
                }
            }
        }

        // backtracking: demand at least half the linearly predicted decrease
        let mut tau = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = coeffs.iter().zip(&step).map(|(c, s)| c + tau * s).collect();
            let r_new = residual_norm(&trial);
            if r_new <= (1.0 - 0.5 * tau) * res {
                coeffs = trial;
                res = r_new;
                accepted = true;
                break;
            }
            tau *= 0.5;
        }
        if !accepted {
            return Err(GraphError::NoConvergence { iters: iter + 1, residual: res });
        }
    }
    if res < tol {
        Ok(v.embed(&coeffs))
    } else {
        Err(GraphError::NoConvergence { iters: max_iters, residual: res })
    }
}

/// A level set `{f = b}` represented as an intrinsic graph over a box in the
/// orthonormal coordinates of `W`. Graph values are memoized per node; the
/// cache is shared across threads and writes are idempotent.
pub struct IntrinsicGraph {
    pub splitting: Splitting,
    pub domain: Vec<(f64, f64)>,
    pub f: C1hFunction,
    pub level: Point,
    pub tol: f64,
    pub target_dist: HomDistance,
    coercivity: Option<f64>,
    cache: Mutex<HashMap<Vec<u64>, Vec<f64>>>,
}

impl IntrinsicGraph {
    /// The graph map value `phi(w)` in `V`, solved on demand.
    pub fn phi(&self, w_coeffs: &[f64]) -> Result<Point, GraphError> {
        let key: Vec<u64> = w_coeffs.iter().map(|x| x.to_bits()).collect();
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(self.splitting.v.embed(hit));
        }
        let base = self.splitting.w.embed(w_coeffs);
        let phi = implicit_solve(
            &self.f,
            &base,
            &self.level,
            &self.splitting,
            &self.target_dist,
            self.tol,
            self.coercivity,
            60,
        )?;
        let coeffs = self.splitting.v.coeffs_of(&phi.coords);
        self.cache.lock().unwrap().insert(key, coeffs.clone());
        Ok(self.splitting.v.embed(&coeffs))
    }

    /// `Phi(w) = w * phi(w)` on the represented level set.
    pub fn graph_point(&self, w_coeffs: &[f64]) -> Result<Point, GraphError> {
        let base = self.splitting.w.embed(w_coeffs);
        let phi = self.phi(w_coeffs)?;
        Ok(multiply(&base, &phi).expect("same algebra"))
    }

    /// Homogeneous tangent subgroup at a graph point: the kernel of the
    /// Pansu differential of the defining function.
    pub fn tangent(&self, at: &Point) -> Result<HomSubgroup, GraphError> {
        let d = differential_at(&self.f, at)?;
        Ok(kernel(&d))
    }

    /// Differential of the defining function at a graph point.
    pub fn differential(&self, at: &Point) -> Result<HomMorphism, GraphError> {
        differential_at(&self.f, at)
    }
}

/// Wrap the implicit solver into a graph over the box `domain` in
/// W-coordinates for the level `{f = b}`.
pub fn level_set_as_graph(
    f: &C1hFunction,
    b: &Point,
    splitting: &Splitting,
    domain: Vec<(f64, f64)>,
    target_dist: &HomDistance,
    tol: f64,
) -> IntrinsicGraph {
    IntrinsicGraph {
        splitting: splitting.clone(),
        domain,
        f: f.clone(),
        level: b.clone(),
        tol,
        target_dist: target_dist.clone(),
        coercivity: None,
        cache: Mutex::new(HashMap::new()),
    }
}

/// Check the intrinsic-cone condition on sampled graph pairs: for the cone
/// of aperture `coercivity / lipschitz` around the axis `V`, distinct graph
/// points must avoid each other's cones.
pub fn check_intrinsic_cone(
    graph: &IntrinsicGraph,
    coercivity: f64,
    lipschitz: f64,
    dist: &HomDistance,
    samples: u64,
    seed: u64,
) -> crate::report::ValidationReport {
    let mut rep = crate::report::ValidationReport::new();
    let ratio = coercivity / lipschitz;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..samples {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            graph
                .domain
                .iter()
                .map(|(lo, hi)| rng.gen_range(*lo..*hi))
                .collect()
        };
        let w1 = draw(&mut rng);
        let w2 = draw(&mut rng);
        if w1.iter().zip(&w2).all(|(a, b)| (a - b).abs() < 1e-9) {
            continue;
        }
        let (Ok(p), Ok(q)) = (graph.graph_point(&w1), graph.graph_point(&w2)) else {
            continue;
        };
        let z = multiply(&inverse(&p), &q).expect("same algebra");
        if dist.norm(&z) < 1e-9 {
            continue;
        }
        // q in p C means some v in V has rho(v, z) < ratio * ||v||
        let gap = |vc: &[f64]| -> f64 {
            let v = graph.splitting.v.embed(vc);
            dist.dist(&v, &z) - ratio * dist.norm(&v)
        };
        let seed_guess = graph.splitting.v.coeffs_of(&graph.splitting.project_v(&z).coords);
        let span = dist.norm(&z) * 4.0;
        let bounds: Vec<(f64, f64)> = seed_guess.iter().map(|&g| (g - span, g + span)).collect();
        let best = multi_start_minimize(&gap, &bounds, 6, 80, seed);
        if best.value < -1e-7 {
            violations += 1;
            if rep.violations.len() < 8 {
                rep.push(
                    "cone",
                    format!("w1={w1:?} w2={w2:?} gap={:.3e}", best.value),
                    -best.value,
                );
            }
        }
    }
    rep.note(format!("{violations} cone violations in {samples} samples"));
    rep
}

/// Sampled lower bound of the Lipschitz constant of `u` on the box `k`:
/// the sup of difference quotients over pairs at several dyadic separations.
pub fn estimate_lipschitz(
    u: &C1hFunction,
    k: &[(f64, f64)],
    source_dist: &HomDistance,
    target_dist: &HomDistance,
    samples: u64,
    seed: u64,
) -> f64 {
    let dim = k.len();
    let qp = QuasiPoints::new(dim, seed, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1f);
    let mut best = 0.0_f64;
    let mut ubuf = vec![0.0; dim];
    for i in 0..samples {
        qp.point(i, &mut ubuf);
        let x: Vec<f64> = k.iter().zip(&ubuf).map(|((lo, hi), t)| lo + t * (hi - lo)).collect();
        let xp = Point::new(u.source.clone(), x.clone());
        let scale = 2f64.powi(-(rng.gen_range(0..8) as i32));
        let y: Vec<f64> = k
            .iter()
            .zip(&x)
            .map(|((lo, hi), xi)| {
                let span = (hi - lo) * scale * 0.5;
                (xi + rng.gen_range(-span..span)).clamp(*lo, *hi)
            })
            .collect();
        let yp = Point::new(u.source.clone(), y);
        let d = source_dist.dist(&xp, &yp);
        if d < 1e-12 {
            continue;
        }
        best = best.max(target_dist.dist(&u.eval(&xp), &u.eval(&yp)) / d);
    }
    best
}
