//! Area factor, surface integration, coarea factor, slicing measures, the
//! density constant, the spherical/Hausdorff ratio interval, and the
//! cross-validation harnesses combining them.
//!
//! Two independent routes back every headline quantity:
//!
//! - the area factor has a Haar-quotient route and a ball-sup route;
//! - the coarea identity is checked by computing its two sides through
//!   disjoint pipelines (tangent-weighted surface integration vs. explicit
//!   slicing) and comparing z-scores.

use crate::algebra::Point;
use crate::graphs::{differential_at, level_set_as_graph, C1hFunction, IntrinsicGraph};
use crate::metric::{
    spherical_normalization, HaarMeasure, HomDistance,
};
use crate::optim::multi_start_maximize;
use crate::qmc::{integrate_unit_cube, Budget, MeasureEstimate, QuasiPoints};
use crate::spec::GradedAlgebra;
use crate::subgroup::{
    is_normal, make_subgroup, splitting_from_differential, HomMorphism, HomSubgroup, Splitting,
};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("subgroup is not an intrinsic graph over W: {0}")]
    NotAGraph(String),
    #[error("area-factor routes disagree: quotient {primary:.6}, ball-sup {secondary:.6}")]
    RoutesDisagree { primary: f64, secondary: f64 },
    #[error("projection Jacobian is not constant over the subgroup (spread {0:.3e})")]
    JacobianNotConstant(f64),
    #[error("subgroup must be normal for this operation")]
    NotNormalSubgroup,
    #[error("coarea hypothesis violated at sampled point {0:?}: differential surjective but kernel does not split")]
    HypothesisViolated(Vec<f64>),
    #[error("too many solver failures over the domain: {0} of {1} nodes")]
    SolverFailures(usize, usize),
    #[error(transparent)]
    Graph(#[from] crate::graphs::GraphError),
    #[error(transparent)]
    Subgroup(#[from] crate::subgroup::SubgroupError),
}

/// A named constant with its full input description, ready for JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantRecord {
    pub kind: String,
    pub inputs: serde_json::Value,
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<(f64, f64)>,
}

impl ConstantRecord {
    pub fn from_estimate(kind: &str, inputs: serde_json::Value, est: &MeasureEstimate) -> Self {
        Self {
            kind: kind.to_string(),
            inputs,
            value: est.value,
            std_error: est.std_error,
            samples: est.samples,
            seed: est.seed,
            flags: est.flags.clone(),
            interval: None,
        }
    }
}

/// Matrix of a morphism restricted to a subgroup, columns indexed by the
/// subgroup's orthonormal basis.
pub fn restricted_matrix(l: &HomMorphism, p: &HomSubgroup) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(l.target.dim, p.top_dim());
    for (c, b) in p.basis().iter().enumerate() {
        let img = l.apply_coords(b);
        for (r, v) in img.iter().enumerate() {
            m[(r, c)] = *v;
        }
    }
    m
}

/// Kernel of `l` restricted to `p`, as a subgroup of the ambient algebra.
pub fn kernel_within(l: &HomMorphism, p: &HomSubgroup) -> Result<HomSubgroup, MeasureError> {
    let a = &p.algebra;
    let mut layer_bases: Vec<Vec<Vec<f64>>> = vec![Vec::new(); a.step];
    for lay in 1..=a.step {
        let cols: Vec<usize> = (0..p.top_dim()).filter(|&i| p.basis_layer()[i] == lay).collect();
        if cols.is_empty() {
            continue;
        }
        let rows: Vec<usize> = if lay <= l.target.step {
            l.target.layer_indices(lay)
        } else {
            Vec::new()
        };
        if rows.is_empty() {
            for &c in &cols {
                layer_bases[lay - 1].push(p.basis()[c].clone());
            }
            continue;
        }
        let mut block = DMatrix::zeros(rows.len(), cols.len());
        for (cj, &c) in cols.iter().enumerate() {
            let img = l.apply_coords(&p.basis()[c]);
            for (ri, &r) in rows.iter().enumerate() {
                block[(ri, cj)] = img[r];
            }
        }
        // null space through a padded SVD
        let padded_rows = block.nrows().max(block.ncols());
        let mut padded = DMatrix::zeros(padded_rows, block.ncols());
        padded.view_mut((0, 0), (block.nrows(), block.ncols())).copy_from(&block);
        let svd = padded.svd(false, true);
        let v_t = svd.v_t.unwrap();
        let tol = 1e-10 * block.norm().max(1.0);
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        for r in rank..block.ncols() {
            let mut vec = vec![0.0; a.dim];
            for (cj, &c) in cols.iter().enumerate() {
                for (vi, bi) in vec.iter_mut().zip(&p.basis()[c]) {
                    *vi += v_t[(r, cj)] * bi;
                }
            }
            layer_bases[lay - 1].push(vec);
        }
    }
    Ok(make_subgroup(a.clone(), &layer_bases)?)
}

/// Jacobian of the projection `pi_W` restricted to the subgroup `P`, i.e.
/// of the coefficient map `u -> w-coeffs(pi_W(embed_P(u)))`, by central
/// differences at `at`. Constant over `P` by the Haar-pushforward argument,
/// which [`area_factor`] re-verifies by sampling.
fn projection_jacobian(p: &HomSubgroup, split: &Splitting, at: &[f64]) -> f64 {
    let t = p.top_dim();
    let h = 1e-5;
    let mut m = DMatrix::zeros(t, t);
    for c in 0..t {
        let mut up = at.to_vec();
        let mut dn = at.to_vec();
        up[c] += h;
        dn[c] -= h;
        let wp = split.w_coeffs(&p.embed(&up));
        let wn = split.w_coeffs(&p.embed(&dn));
        for r in 0..t {
            m[(r, c)] = (wp[r] - wn[r]) / (2.0 * h);
        }
    }
    m.determinant().abs()
}

/// Area factor of a subgroup graph `P` over the splitting `W · V`.
///
/// Primary route: `A = beta_P / (beta_W * J)` with `J` the constant Jacobian
/// of `pi_W|_P`. Validation route: the ball-sup
/// `S = sup { psi_W(pi_W(E ∩ P)) : 0 ∈ E, diam E = 1 }`, which must satisfy
/// `A * S = 1`. Disagreement beyond the combined tolerance is an error.
pub fn area_factor(
    p: &HomSubgroup,
    split: &Splitting,
    dist: &HomDistance,
    budget: &Budget,
    seed: u64,
) -> Result<MeasureEstimate, MeasureError> {
    let w_measure = spherical_normalization(&split.w, dist, budget, seed ^ 0x77);
    area_factor_with(&w_measure, p, split, dist, budget, seed, true)
}

/// Area factor with a precomputed normalization of `W`; `validate` toggles
/// the independent ball-sup route.
pub fn area_factor_with(
    w_measure: &HaarMeasure,
    p: &HomSubgroup,
    split: &Splitting,
    dist: &HomDistance,
    budget: &Budget,
    seed: u64,
    validate: bool,
) -> Result<MeasureEstimate, MeasureError> {
    if p.top_dim() != split.w.top_dim() {
        return Err(MeasureError::NotAGraph(format!(
            "dim P = {} != dim W = {}",
            p.top_dim(),
            split.w.top_dim()
        )));
    }
    // graph over W means P meets the fiber V trivially
    let mut cols = p.basis().to_vec();
    cols.extend(split.v.basis().iter().cloned());
    let m = DMatrix::from_fn(p.algebra.dim, cols.len(), |i, j| cols[j][i]);
    if m.rank(1e-9) < cols.len() {
        return Err(MeasureError::NotAGraph("P ∩ V != {0}".to_string()));
    }

    let beta_p = spherical_normalization(p, dist, budget, seed ^ 0x99);

    // constant projection Jacobian, sampled at several coefficient points
    let probes: Vec<Vec<f64>> = vec![
        vec![0.0; p.top_dim()],
        (0..p.top_dim()).map(|i| 0.31 + 0.13 * i as f64).collect(),
        (0..p.top_dim()).map(|i| -0.42 + 0.29 * i as f64).collect(),
    ];
    let jacs: Vec<f64> = probes.iter().map(|u| projection_jacobian(p, split, u)).collect();
    let j0 = jacs[0];
    let spread = jacs.iter().map(|j| (j - j0).abs()).fold(0.0, f64::max);
    if spread > 1e-4 * j0.max(1e-12) {
        return Err(MeasureError::JacobianNotConstant(spread));
    }

    let value = beta_p.beta / (w_measure.beta * j0);
    let rel = ((beta_p.theta.std_error / beta_p.theta.value).powi(2)
        + (w_measure.theta.std_error / w_measure.theta.value).powi(2))
    .sqrt();
    let mut estimate = MeasureEstimate {
        value,
        std_error: value * rel,
        samples: beta_p.theta.samples + w_measure.theta.samples,
        seed,
        flags: Vec::new(),
    };

    if validate {
        // independent route: optimize the projected mass over ball centers,
        // integrating the pointwise Jacobian rather than assuming constancy
        let a = &p.algebra;
        let bounds: Vec<(f64, f64)> = (0..a.dim)
            .map(|i| {
                let b = dist.layer_bound(a.layer_of[i], 0.5);
                (-b, b)
            })
            .collect();
        let coeff_box: Vec<(f64, f64)> = p
            .basis_layer()
            .iter()
            .map(|&l| {
                let b = dist.layer_bound(l, 1.0);
                (-b, b)
            })
            .collect();
        let vol: f64 = coeff_box.iter().map(|(lo, hi)| hi - lo).product();
        let opt_points = (budget.points / 4).max(1024);
        let projected_mass = |center: &Point, points: u64, reps: u64, s: u64| -> MeasureEstimate {
            let est = integrate_unit_cube(p.top_dim(), s, points, reps, |u| {
                let coeffs: Vec<f64> = u
                    .iter()
                    .zip(&coeff_box)
                    .map(|(t, (lo, hi))| lo + t * (hi - lo))
                    .collect();
                let q = p.embed(&coeffs);
                if dist.dist(center, &q) <= 0.5 {
                    projection_jacobian(p, split, &coeffs)
                } else {
                    0.0
                }
            });
            est.scale(vol * w_measure.beta, 0.0)
        };
        let objective = |zc: &[f64]| -> f64 {
            let z = dist.project_into_ball(&Point::new(a.clone(), zc.to_vec()), 0.5);
            projected_mass(&z, opt_points, 1, seed ^ 0xbb).value
        };
        let best = multi_start_maximize(&objective, &bounds, budget.starts, budget.iters, seed ^ 0xcc);
        let z = dist.project_into_ball(&Point::new(a.clone(), best.x.clone()), 0.5);
        let sup = projected_mass(&z, budget.points, budget.replicates, seed ^ 0xdd);
        let secondary = 1.0 / sup.value;
        let tol = 3.0 * (estimate.std_error + secondary * (sup.std_error / sup.value)) + 0.02 * value;
        if (secondary - value).abs() > tol {
            return Err(MeasureError::RoutesDisagree { primary: value, secondary });
        }
        estimate.flags.push(format!("ball-sup route agrees: {secondary:.6}"));
    }
    Ok(estimate)
}

/// Shared memo of area factors keyed by the quantized defining
/// differential: the factor is continuous in it, and the differential is a
/// stable key where the kernel's computed basis is not.
pub type AreaFactorCache = Arc<Mutex<HashMap<Vec<i64>, (f64, f64)>>>;

/// Surface integrator over an intrinsic graph: caches the normalization of
/// `W` and the area factors per (quantized) tangent differential.
pub struct SurfaceIntegrator<'a> {
    pub graph: &'a IntrinsicGraph,
    pub dist: &'a HomDistance,
    pub w_measure: Arc<HaarMeasure>,
    pub tangent_budget: Budget,
    area_cache: AreaFactorCache,
    failures: Mutex<usize>,
}

fn quantize(values: impl Iterator<Item = f64>, step: f64) -> Vec<i64> {
    values.map(|v| (v / step).round() as i64).collect()
}

/// Rescale each row to unit Euclidean norm; the kernel of a morphism only
/// depends on the row directions, so this canonicalizes cache keys along
/// continuous tangent families.
fn row_normalized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for r in 0..out.nrows() {
        let norm = out.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for c in 0..out.ncols() {
                out[(r, c)] /= norm;
            }
        }
    }
    out
}

/// Quantization pitch for tangent-differential cache keys, and the relative
/// error budget it contributes to each cached factor.
const TANGENT_KEY_STEP: f64 = 1.5e-2;
const TANGENT_KEY_REL_ERR: f64 = 1.2e-2;

fn tangent_budget_for(budget: &Budget, tangent_dim: usize) -> Budget {
    // thin high-codimension regions need denser quadrature
    let floor = 1024u64 << tangent_dim.saturating_sub(1).min(6);
    Budget {
        points: (budget.points / 4).max(floor),
        replicates: 3,
        starts: 8,
        iters: 80,
    }
}

impl<'a> SurfaceIntegrator<'a> {
    pub fn new(
        graph: &'a IntrinsicGraph,
        dist: &'a HomDistance,
        budget: &Budget,
        seed: u64,
    ) -> Self {
        let w_measure = Arc::new(spherical_normalization(
            &graph.splitting.w,
            dist,
            budget,
            seed ^ 0x5afe,
        ));
        Self::with_shared(graph, dist, w_measure, Arc::new(Mutex::new(HashMap::new())), budget)
    }

    /// Reuse a precomputed `W` normalization and a shared area-factor memo,
    /// e.g. across the slices of one slicing run.
    pub fn with_shared(
        graph: &'a IntrinsicGraph,
        dist: &'a HomDistance,
        w_measure: Arc<HaarMeasure>,
        area_cache: AreaFactorCache,
        budget: &Budget,
    ) -> Self {
        Self {
            graph,
            dist,
            w_measure,
            tangent_budget: tangent_budget_for(budget, graph.splitting.w.top_dim()),
            area_cache,
            failures: Mutex::new(0),
        }
    }

    /// Area factor of the homogeneous tangent at a graph point, memoized on
    /// the quantized row-normalized differential (the tangent only depends
    /// on the row directions, and the factor is continuous in them).
    pub fn area_factor_at(&self, at: &Point, seed: u64) -> Result<(f64, f64), MeasureError> {
        let d = self.graph.differential(at)?;
        let normalized = row_normalized(&d.matrix);
        let key = quantize(normalized.iter().copied(), TANGENT_KEY_STEP);
        if let Some(hit) = self.area_cache.lock().unwrap().get(&key) {
            return Ok(*hit);
        }
        // evaluate at the key's representative so equal keys give equal
        // values regardless of which node hit the cache first
        let representative = HomMorphism {
            matrix: DMatrix::from_fn(normalized.nrows(), normalized.ncols(), |r, c| {
                (normalized[(r, c)] / TANGENT_KEY_STEP).round() * TANGENT_KEY_STEP
            }),
            source: d.source.clone(),
            target: d.target.clone(),
        };
        let tangent = crate::subgroup::kernel(&representative);
        let est = area_factor_with(
            &self.w_measure,
            &tangent,
            &self.graph.splitting,
            self.dist,
            &self.tangent_budget,
            seed,
            false,
        )?;
        let rel = if est.value != 0.0 {
            (est.std_error / est.value).hypot(TANGENT_KEY_REL_ERR)
        } else {
            0.0
        };
        let out = (est.value, rel);
        self.area_cache.lock().unwrap().insert(key, out);
        Ok(out)
    }

    /// `∫ h(Phi(w)) * A(T_{Phi(w)}) d psi^d(w)` over the graph domain,
    /// with `psi^d ⌞ W = beta_W * Leb_W`.
    pub fn integrate<H>(&self, h: H, budget: &Budget, seed: u64) -> Result<MeasureEstimate, MeasureError>
    where
        H: Fn(&Point) -> f64 + Sync,
    {
        *self.failures.lock().unwrap() = 0;
        let domain = &self.graph.domain;
        let vol: f64 = domain.iter().map(|(lo, hi)| hi - lo).product();
        let mut max_rel_a = 0.0_f64;
        let rel_tracker = Mutex::new(&mut max_rel_a);
        let est = integrate_unit_cube(domain.len(), seed, budget.points, budget.replicates, |u| {
            let w: Vec<f64> = u
                .iter()
                .zip(domain)
                .map(|(t, (lo, hi))| lo + t * (hi - lo))
                .collect();
            let Ok(p) = self.graph.graph_point(&w) else {
                *self.failures.lock().unwrap() += 1;
                return 0.0;
            };
            let hv = h(&p);
            if hv == 0.0 {
                return 0.0;
            }
            match self.area_factor_at(&p, seed ^ 0xa1ea) {
                Ok((a, rel)) => {
                    let mut tracker = rel_tracker.lock().unwrap();
                    if rel > **tracker {
                        **tracker = rel;
                    }
                    hv * a
                }
                Err(_) => {
                    *self.failures.lock().unwrap() += 1;
                    0.0
                }
            }
        });
        let failures = *self.failures.lock().unwrap();
        let total_nodes = (budget.points * budget.replicates) as usize;
        if failures * 100 > total_nodes {
            return Err(MeasureError::SolverFailures(failures, total_nodes));
        }
        let scaled = est.scale(vol * self.w_measure.beta, 0.0);
        let w_rel = self.w_measure.theta.std_error / self.w_measure.theta.value;
        let se = (scaled.std_error.powi(2)
            + (scaled.value * w_rel).powi(2)
            + (scaled.value * max_rel_a).powi(2))
        .sqrt();
        Ok(MeasureEstimate {
            value: scaled.value,
            std_error: se,
            samples: scaled.samples,
            seed,
            flags: if failures > 0 {
                vec![format!("{failures} solver failures ignored")]
            } else {
                Vec::new()
            },
        })
    }
}

/// Integral of `h` with the tangent area factor over an intrinsic graph.
pub fn area_integrate<H>(
    graph: &IntrinsicGraph,
    h: H,
    dist: &HomDistance,
    budget: &Budget,
    seed: u64,
) -> Result<MeasureEstimate, MeasureError>
where
    H: Fn(&Point) -> f64 + Sync,
{
    SurfaceIntegrator::new(graph, dist, budget, seed).integrate(h, budget, seed)
}

/// Coarea factor of a normal homogeneous subgroup `P` under a homogeneous
/// morphism `L` to the slicing target.
///
/// Exactly zero when `L(P)` is a proper subgroup of the target (per-layer
/// rank test). Otherwise the definition is computed literally: a window of
/// `P` is sliced along an s-grid, each slice carries the spherical Haar
/// normalization of `P ∩ ker L`, the slice masses are integrated in `s`
/// (midpoint rule with one Richardson refinement in the pitch) and divided
/// by the spherical measure of the window.
pub fn coarea_factor(
    p: &HomSubgroup,
    l: &HomMorphism,
    dist: &HomDistance,
    ldist: &HomDistance,
    budget: &Budget,
    seed: u64,
) -> Result<MeasureEstimate, MeasureError> {
    if !is_normal(p) {
        return Err(MeasureError::NotNormalSubgroup);
    }
    if !l.is_surjective_from(p, 1e-9) {
        return Ok(MeasureEstimate::exact(0.0, seed));
    }
    let p0 = kernel_within(l, p)?;
    let beta_p = spherical_normalization(p, dist, budget, seed ^ 0x1);
    let beta_0 = spherical_normalization(&p0, dist, budget, seed ^ 0x2);
    let beta_l = spherical_normalization(&HomSubgroup::full(l.target.clone()), ldist, budget, seed ^ 0x3);

    // window: coefficient box on P
    let half = 0.75_f64;
    let t = p.top_dim();
    let window_mass = beta_p.beta * (2.0 * half).powi(t as i32);

    let restricted = restricted_matrix(l, p);
    let restricted_svd = restricted.clone().svd(true, true);

    // kernel directions in P-coefficient space (orthonormal)
    let kdim = p0.top_dim();
    let kernel_coeffs: Vec<Vec<f64>> = p0
        .basis()
        .iter()
        .map(|b| p.coeffs_of(b))
        .collect();

    // s-range: the exact image bound of the window under the restriction,
    // so the grid support aligns with the integrand's support
    let ldim = l.target.dim;
    let mut s_half = vec![0.0_f64; ldim];
    for r in 0..ldim {
        let mut acc = 0.0;
        for c in 0..t {
            acc += restricted[(r, c)].abs() * half;
        }
        s_half[r] = acc.max(1e-12);
    }

    let mu_at = |cells_per_dim: usize, seed2: u64| -> MeasureEstimate {
        let mut total = 0.0;
        let mut var = 0.0;
        let mut samples = 0u64;
        let cell_count = cells_per_dim.pow(ldim as u32);
        let slice_points = (budget.points / cells_per_dim as u64).max(1024);
        for cell in 0..cell_count {
            // midpoint of the cell in the slicing target
            let mut idx = cell;
            let mut s = vec![0.0; ldim];
            let mut cellvol = 1.0;
            for r in 0..ldim {
                let i = idx % cells_per_dim;
                idx /= cells_per_dim;
                let wdt = 2.0 * s_half[r] / cells_per_dim as f64;
                s[r] = -s_half[r] + (i as f64 + 0.5) * wdt;
                cellvol *= wdt;
            }
            // anchor point of the slice: least-squares preimage
            let rhs = DVector::from_column_slice(&s);
            let Ok(anchor) = restricted_svd.solve(&rhs, 1e-12) else { continue };
            let anchor: Vec<f64> = anchor.iter().copied().collect();
            // slice Lebesgue mass inside the window, over the affine
            // parameterization anchor + kernel directions
            let reach: f64 = half * (t as f64).sqrt()
                + anchor.iter().map(|x| x * x).sum::<f64>().sqrt();
            if kdim == 0 {
                // zero-dimensional slices carry no mass for l >= 1
                continue;
            }
            let est = integrate_unit_cube(
                kdim,
                seed2 ^ (cell as u64).wrapping_mul(0x9e37_79b9),
                slice_points,
                budget.replicates.min(4),
                |xi| {
                    let mut u = anchor.clone();
                    for (k, x) in xi.iter().enumerate() {
                        let span = 2.0 * reach * (x - 0.5);
                        for (ui, di) in u.iter_mut().zip(&kernel_coeffs[k]) {
                            *ui += span * di;
                        }
                    }
                    if u.iter().all(|&c| c.abs() <= half) {
                        1.0
                    } else {
                        0.0
                    }
                },
            );
            let boxvol = (2.0 * reach).powi(kdim as i32);
            total += est.value * boxvol * beta_0.beta * cellvol;
            var += (est.std_error * boxvol * beta_0.beta * cellvol).powi(2);
            samples += est.samples;
        }
        MeasureEstimate {
            value: total * beta_l.beta,
            std_error: var.sqrt() * beta_l.beta,
            samples,
            seed: seed2,
            flags: Vec::new(),
        }
    };

    let cells = if ldim == 1 { 24 } else { 8 };
    let coarse = mu_at(cells / 2, seed ^ 0x10);
    let fine = mu_at(cells, seed ^ 0x11);
    // midpoint rule is second order: eliminate the h^2 term
    let mu = MeasureEstimate {
        value: (4.0 * fine.value - coarse.value) / 3.0,
        std_error: ((16.0 * fine.std_error.powi(2) + coarse.std_error.powi(2)).sqrt()) / 3.0,
        samples: fine.samples + coarse.samples,
        seed,
        flags: Vec::new(),
    };

    let value = mu.value / window_mass;
    let rel_norms = ((beta_p.theta.std_error / beta_p.theta.value).powi(2)
        + (beta_0.theta.std_error / beta_0.theta.value).powi(2)
        + (beta_l.theta.std_error / beta_l.theta.value).powi(2))
    .sqrt();
    let se = ((mu.std_error / window_mass).powi(2) + (value * rel_norms).powi(2)).sqrt();
    Ok(MeasureEstimate { value, std_error: se, samples: mu.samples, seed, flags: Vec::new() })
}

/// `psi^{Q-m}(P ∩ B(0,1))`: the density constant of the tangent subgroup.
pub fn density_constant(
    p: &HomSubgroup,
    dist: &HomDistance,
    budget: &Budget,
    seed: u64,
) -> MeasureEstimate {
    let h = spherical_normalization(p, dist, budget, seed);
    h.ball_mass(&Point::origin(p.algebra.clone()), 1.0, budget, seed ^ 0xd)
}

/// Interval for the spherical-to-Hausdorff ratio on `P`: the Hausdorff
/// bracket maps onto `[1, 2^d]`, clipped (with a flag) to the admissible
/// range of the ratio.
pub fn sh_ratio(
    p: &HomSubgroup,
    dist: &HomDistance,
    budget: &Budget,
    seed: u64,
) -> ConstantRecord {
    let spherical = spherical_normalization(p, dist, budget, seed);
    let (lo_h, hi_h) = crate::metric::hausdorff_bracket(&spherical);
    let mut lo = spherical.beta / hi_h;
    let mut hi = spherical.beta / lo_h;
    let cap = 2f64.powi(p.hom_dim as i32);
    let mut flags = Vec::new();
    if lo < 1.0 || hi > cap {
        lo = lo.max(1.0);
        hi = hi.min(cap);
        flags.push("clipped to the admissible range".to_string());
    }
    ConstantRecord {
        kind: "sh_ratio".to_string(),
        inputs: serde_json::json!({
            "subgroup_dim": p.top_dim(),
            "hom_dim": p.hom_dim,
        }),
        value: 0.5 * (lo + hi),
        std_error: spherical.theta.std_error / spherical.theta.value,
        samples: spherical.theta.samples,
        seed,
        flags,
        interval: Some((lo, hi)),
    }
}

/// A coarea verification scenario: `Sigma` is either a level-set graph
/// (when `f` is present) or the whole window (codimension zero), sliced by
/// the level sets of `u`.
pub struct CoareaScenario {
    pub algebra: Arc<GradedAlgebra>,
    pub dist: HomDistance,
    /// Distance on the slicing target.
    pub ldist: HomDistance,
    /// Distance on the level target of `f` (unused when `f` is `None`).
    pub mdist: Option<HomDistance>,
    pub u: C1hFunction,
    pub f: Option<C1hFunction>,
    /// Splitting used to represent `Sigma` as a graph (when `f` is given).
    pub sigma_splitting: Option<Splitting>,
    /// Box domain: `W` coefficients when `f` is given, ambient coordinates
    /// of the window otherwise.
    pub sigma_domain: Vec<(f64, f64)>,
    /// Weight function; compactly supported inside the represented window.
    pub h: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
    /// Splitting for the slices (kernel of the combined differential plus a
    /// complement); derived from the window center when absent.
    pub slice_splitting: Option<Splitting>,
    /// Box domain for slice graphs in slice-W coefficients.
    pub slice_domain: Vec<(f64, f64)>,
    /// s-grid cells per slicing dimension.
    pub s_cells: usize,
}

/// Outcome of a coarea cross-validation run.
#[derive(Debug, Serialize)]
pub struct CoareaReport {
    pub lhs: MeasureEstimate,
    pub rhs: MeasureEstimate,
    pub z: f64,
    pub ratio: f64,
    /// Upper bound on what the skipped (bad) cells could contribute.
    pub bad_bound: f64,
    pub bad_cells: usize,
    pub empty_cells: usize,
    pub good_cells: usize,
    pub per_slice: Vec<SliceRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceRow {
    pub s: Vec<f64>,
    pub status: String,
    pub value: f64,
    pub std_error: f64,
}

/// The combined slicing function `uf` (or `u` itself in codimension zero).
fn combined_map(scn: &CoareaScenario) -> C1hFunction {
    match &scn.f {
        Some(f) => C1hFunction::pair(&scn.u, f),
        None => scn.u.clone(),
    }
}

/// Sample the split-regularity hypothesis on the represented window: at
/// each sampled point the restricted differential must either fail to be
/// surjective onto the slicing target, or the combined kernel must split.
pub fn check_hypothesis(
    scn: &CoareaScenario,
    samples: u64,
    seed: u64,
) -> Result<(), MeasureError> {
    let combined = combined_map(scn);
    let qp = QuasiPoints::new(scn.sigma_domain.len(), seed, 0);
    let mut u = vec![0.0; scn.sigma_domain.len()];
    for k in 0..samples {
        qp.point(k, &mut u);
        let coords: Vec<f64> = u
            .iter()
            .zip(&scn.sigma_domain)
            .map(|(t, (lo, hi))| lo + t * (hi - lo))
            .collect();
        let point = match (&scn.f, &scn.sigma_splitting) {
            (Some(f), Some(split)) => {
                let g = level_set_as_graph(
                    f,
                    &Point::origin(f.target.clone()),
                    split,
                    scn.sigma_domain.clone(),
                    scn.mdist.as_ref().expect("mdist required with f"),
                    1e-10,
                );
                match g.graph_point(&coords) {
                    Ok(p) => p,
                    Err(_) => continue,
                }
            }
            _ => Point::new(scn.algebra.clone(), coords),
        };
        let d_combined = differential_at(&combined, &point)?;
        let tangent = match &scn.f {
            Some(f) => crate::subgroup::kernel(&differential_at(f, &point)?),
            None => HomSubgroup::full(scn.algebra.clone()),
        };
        // the L-component of the combined differential, restricted
        let l_part = l_component(scn, &d_combined);
        if !l_part.is_surjective_from(&tangent, 1e-9) {
            continue; // first branch of the hypothesis
        }
        if splitting_from_differential(&d_combined, seed ^ 0xf00).is_err() {
            return Err(MeasureError::HypothesisViolated(point.coords.clone()));
        }
    }
    Ok(())
}

/// Project the combined differential onto the slicing target: for the
/// paired map the first block of rows, for the plain map the identity.
fn l_component(scn: &CoareaScenario, d: &HomMorphism) -> HomMorphism {
    match &scn.f {
        None => d.clone(),
        Some(_) => {
            let ldim = scn.u.target.dim;
            let rows = d.matrix.rows(0, ldim).into_owned();
            HomMorphism { matrix: rows, source: d.source.clone(), target: scn.u.target.clone() }
        }
    }
}

/// Per-point evaluator of the coarea factor `C(T_p Sigma, D(uf)_p)`,
/// memoized on the quantized combined differential (which determines both
/// the tangent and the restriction).
struct FactorField<'a> {
    scn: &'a CoareaScenario,
    combined: C1hFunction,
    budget: Budget,
    seed: u64,
    cache: Mutex<HashMap<Vec<i64>, (f64, f64)>>,
    failures: Mutex<usize>,
}

impl<'a> FactorField<'a> {
    fn new(scn: &'a CoareaScenario, budget: &Budget, seed: u64) -> Self {
        Self {
            scn,
            combined: combined_map(scn),
            budget: Budget {
                points: (budget.points / 2).max(4096),
                replicates: budget.replicates.min(6),
                starts: budget.starts,
                iters: budget.iters,
            },
            seed,
            cache: Mutex::new(HashMap::new()),
            failures: Mutex::new(0),
        }
    }

    fn at(&self, point: &Point) -> Result<(f64, f64), MeasureError> {
        let d = differential_at(&self.combined, point)?;
        let ldim = self.scn.u.target.dim;
        // key: the slicing rows carry their scale (the factor scales with
        // them), the tangent rows are direction-only
        let l_rows = d.matrix.rows(0, ldim).into_owned();
        let mut key = quantize(l_rows.iter().copied(), 1e-3);
        if let Some(f) = &self.scn.f {
            let f_rows = row_normalized(&d.matrix.rows(ldim, f.target.dim).into_owned());
            key.extend(quantize(f_rows.iter().copied(), TANGENT_KEY_STEP));
        }
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(*hit);
        }
        let l_part = l_component(self.scn, &d);
        // the tangent is the kernel of the f-rows of the combined
        // differential (the full group in codimension zero)
        let tangent = match &self.scn.f {
            Some(f) => {
                let rows = d.matrix.rows(ldim, f.target.dim).into_owned();
                let f_part = HomMorphism {
                    matrix: rows,
                    source: d.source.clone(),
                    target: f.target.clone(),
                };
                crate::subgroup::kernel(&f_part)
            }
            None => HomSubgroup::full(self.scn.algebra.clone()),
        };
        let est = coarea_factor(
            &tangent,
            &l_part,
            &self.scn.dist,
            &self.scn.ldist,
            &self.budget,
            self.seed,
        )?;
        let rel = if est.value != 0.0 {
            (est.std_error / est.value).hypot(TANGENT_KEY_REL_ERR)
        } else {
            0.0
        };
        self.cache.lock().unwrap().insert(key, (est.value, rel));
        Ok((est.value, rel))
    }
}

/// Left-hand side of the coarea identity: the surface integral of
/// `h * C(T_p Sigma, D(uf)_p)` over `Sigma`.
pub fn coarea_lhs(
    scn: &CoareaScenario,
    budget: &Budget,
    seed: u64,
) -> Result<MeasureEstimate, MeasureError> {
    let field = FactorField::new(scn, budget, seed ^ 0xc0);
    let max_rel = Mutex::new(0.0_f64);
    let h = scn.h.clone();
    let weight = |p: &Point| -> f64 {
        let hv = h(p);
        if hv == 0.0 {
            return 0.0;
        }
        match field.at(p) {
            Ok((c, rel)) => {
                let mut m = max_rel.lock().unwrap();
                if rel > *m {
                    *m = rel;
                }
                hv * c
            }
            Err(_) => {
                *field.failures.lock().unwrap() += 1;
                0.0
            }
        }
    };

    let est = match (&scn.f, &scn.sigma_splitting) {
        (Some(f), Some(split)) => {
            let mdist = scn.mdist.as_ref().expect("mdist required with f");
            let graph = level_set_as_graph(
                f,
                &Point::origin(f.target.clone()),
                split,
                scn.sigma_domain.clone(),
                mdist,
                1e-10,
            );
            let integrator = SurfaceIntegrator::new(&graph, &scn.dist, budget, seed);
            integrator.integrate(weight, budget, seed)?
        }
        _ => {
            // codimension zero: integrate over the window box directly
            let full = HomSubgroup::full(scn.algebra.clone());
            let g_measure = spherical_normalization(&full, &scn.dist, budget, seed ^ 0x6);
            let vol: f64 = scn.sigma_domain.iter().map(|(lo, hi)| hi - lo).product();
            let est = integrate_unit_cube(
                scn.sigma_domain.len(),
                seed,
                budget.points,
                budget.replicates,
                |u| {
                    let coords: Vec<f64> = u
                        .iter()
                        .zip(&scn.sigma_domain)
                        .map(|(t, (lo, hi))| lo + t * (hi - lo))
                        .collect();
                    weight(&Point::new(scn.algebra.clone(), coords))
                },
            );
            let scaled = est.scale(vol * g_measure.beta, 0.0);
            let w_rel = g_measure.theta.std_error / g_measure.theta.value;
            MeasureEstimate {
                value: scaled.value,
                std_error: (scaled.std_error.powi(2) + (scaled.value * w_rel).powi(2)).sqrt(),
                samples: scaled.samples,
                seed,
                flags: scaled.flags,
            }
        }
    };
    let failures = *field.failures.lock().unwrap();
    if failures * 50 > est.samples as usize {
        return Err(MeasureError::SolverFailures(failures, est.samples as usize));
    }
    let extra = *max_rel.lock().unwrap();
    Ok(MeasureEstimate {
        std_error: (est.std_error.powi(2) + (est.value * extra).powi(2)).sqrt(),
        ..est
    })
}

/// Right-hand side: the slicing measure, one slice per s-grid cell.
pub fn slice_measure(
    scn: &CoareaScenario,
    budget: &Budget,
    seed: u64,
) -> Result<(MeasureEstimate, Vec<SliceRow>, f64, (usize, usize, usize)), MeasureError> {
    let combined = combined_map(scn);
    let ldim = scn.u.target.dim;
    let beta_l = spherical_normalization(
        &HomSubgroup::full(scn.u.target.clone()),
        &scn.ldist,
        budget,
        seed ^ 0x4,
    );

    // sample u over Sigma to locate the slice range and detect empty cells
    let probe = probe_u_values(scn, 4096, seed ^ 0x8)?;
    let mut s_lo = vec![f64::INFINITY; ldim];
    let mut s_hi = vec![f64::NEG_INFINITY; ldim];
    for v in &probe {
        for r in 0..ldim {
            s_lo[r] = s_lo[r].min(v[r]);
            s_hi[r] = s_hi[r].max(v[r]);
        }
    }
    for r in 0..ldim {
        let pad = 0.05 * (s_hi[r] - s_lo[r]).max(1e-9);
        s_lo[r] -= pad;
        s_hi[r] += pad;
    }

    // slice splitting: provided, or derived at the window center; when no
    // splitting exists anywhere, distinguish the rank-degenerate branch
    // (factor identically zero, slices carry no mass) from a genuine
    // hypothesis violation
    let slice_split = match &scn.slice_splitting {
        Some(s) => s.clone(),
        None => {
            let center = vec![0.5; scn.sigma_domain.len()];
            let p0 = probe_point(scn, &center)?;
            let d = differential_at(&combined, &p0)?;
            match splitting_from_differential(&d, seed ^ 0x5) {
                Ok(s) => s,
                Err(_) => {
                    if restricted_rank_deficient_everywhere(scn, &combined, seed ^ 0x9)? {
                        let est = MeasureEstimate::exact(0.0, seed)
                            .with_flag("rank-degenerate: factor and slice masses vanish identically");
                        let grid = s_grid(&s_lo, &s_hi, scn.s_cells, ldim);
                        let rows: Vec<SliceRow> = grid
                            .into_iter()
                            .map(|(s, _, _)| SliceRow {
                                s,
                                status: "degenerate".into(),
                                value: 0.0,
                                std_error: 0.0,
                            })
                            .collect();
                        let cells = rows.len();
                        return Ok((est, rows, 0.0, (0, 0, cells)));
                    }
                    return Err(MeasureError::HypothesisViolated(p0.coords.clone()));
                }
            }
        }
    };

    let fine = slice_pass(scn, &combined, &slice_split, &beta_l, &probe, &s_lo, &s_hi, scn.s_cells, budget, seed)?;
    // midpoint rule is second order; one Richardson refinement in the pitch
    let coarse_cells = (scn.s_cells / 2).max(2);
    let coarse = slice_pass(scn, &combined, &slice_split, &beta_l, &probe, &s_lo, &s_hi, coarse_cells, budget, seed ^ 0x31)?;
    let value = (4.0 * fine.0.value - coarse.0.value) / 3.0;
    let se = (16.0 * fine.0.std_error.powi(2) + coarse.0.std_error.powi(2)).sqrt() / 3.0;
    let est = MeasureEstimate {
        value,
        std_error: se,
        samples: fine.0.samples + coarse.0.samples,
        seed,
        flags: fine.0.flags.clone(),
    };
    Ok((est, fine.1, fine.2, fine.3))
}

/// Midpoints, volumes and diameters of the s-grid cells.
fn s_grid(s_lo: &[f64], s_hi: &[f64], cells_per_dim: usize, ldim: usize) -> Vec<(Vec<f64>, f64, f64)> {
    let cells = cells_per_dim.pow(ldim as u32);
    (0..cells)
        .map(|cell| {
            let mut idx = cell;
            let mut s = vec![0.0; ldim];
            let mut cellvol = 1.0;
            let mut celldiam = 0.0_f64;
            for r in 0..ldim {
                let i = idx % cells_per_dim;
                idx /= cells_per_dim;
                let w = (s_hi[r] - s_lo[r]) / cells_per_dim as f64;
                s[r] = s_lo[r] + (i as f64 + 0.5) * w;
                cellvol *= w;
                celldiam = celldiam.max(w);
            }
            (s, cellvol, celldiam)
        })
        .collect()
}

/// True when the restricted differential fails to be surjective at every
/// probe point of the window (the Prop-4.5 zero branch).
fn restricted_rank_deficient_everywhere(
    scn: &CoareaScenario,
    combined: &C1hFunction,
    seed: u64,
) -> Result<bool, MeasureError> {
    let dim = scn.sigma_domain.len();
    let qp = QuasiPoints::new(dim, seed, 0);
    let mut u = vec![0.0; dim];
    for k in 0..32u64 {
        qp.point(k, &mut u);
        let Ok(p) = probe_point(scn, &u) else { continue };
        let d = differential_at(combined, &p)?;
        let l_part = l_component(scn, &d);
        let tangent = match &scn.f {
            Some(f) => {
                let ldim = scn.u.target.dim;
                let rows = d.matrix.rows(ldim, f.target.dim).into_owned();
                crate::subgroup::kernel(&HomMorphism {
                    matrix: rows,
                    source: d.source.clone(),
                    target: f.target.clone(),
                })
            }
            None => HomSubgroup::full(scn.algebra.clone()),
        };
        if l_part.is_surjective_from(&tangent, 1e-9) {
            return Ok(false);
        }
    }
    Ok(true)
}

type SlicePass = (MeasureEstimate, Vec<SliceRow>, f64, (usize, usize, usize));

#[allow(clippy::too_many_arguments)]
fn slice_pass(
    scn: &CoareaScenario,
    combined: &C1hFunction,
    slice_split: &Splitting,
    beta_l: &HaarMeasure,
    probe: &[Vec<f64>],
    s_lo: &[f64],
    s_hi: &[f64],
    cells_per_dim: usize,
    budget: &Budget,
    seed: u64,
) -> Result<SlicePass, MeasureError> {
    let ldim = scn.u.target.dim;
    let mut rows: Vec<SliceRow> = Vec::new();
    let mut total = 0.0;
    let mut var = 0.0;
    let mut samples = 0u64;
    let mut bad = 0usize;
    let mut empty = 0usize;
    let mut good = 0usize;
    let mut good_max = 0.0_f64;
    let mut bad_weight = 0.0;
    let slice_budget = Budget {
        points: (budget.points / cells_per_dim as u64).max(1024),
        replicates: budget.replicates.min(4),
        starts: budget.starts,
        iters: budget.iters,
    };
    // the slice W-normalization and area-factor memo are shared by every
    // slice: all slices are graphs over the same splitting
    let slice_w_measure = Arc::new(spherical_normalization(
        &slice_split.w,
        &scn.dist,
        budget,
        seed ^ 0x51,
    ));
    let shared_cache: AreaFactorCache = Arc::new(Mutex::new(HashMap::new()));
    let slice_dist = product_dist(scn);

    for (cell, (s, cellvol, celldiam)) in s_grid(s_lo, s_hi, cells_per_dim, ldim).into_iter().enumerate() {
        // empty-cell detection: no probed u-value near this midpoint
        let near = probe.iter().any(|v| {
            v.iter()
                .zip(&s)
                .all(|(a, b)| (a - b).abs() <= celldiam * 1.5)
        });
        if !near {
            empty += 1;
            rows.push(SliceRow { s, status: "empty".into(), value: 0.0, std_error: 0.0 });
            continue;
        }
        // build the slice as an intrinsic graph of the combined map at (s, 0)
        let mut level_coords = s.clone();
        if let Some(f) = &scn.f {
            level_coords.extend(vec![0.0; f.target.dim]);
        }
        let level = Point::new(combined.target.clone(), level_coords);
        let slice_graph = level_set_as_graph(
            combined,
            &level,
            slice_split,
            scn.slice_domain.clone(),
            &slice_dist,
            1e-9,
        );
        let h = scn.h.clone();
        let est = SurfaceIntegrator::with_shared(
            &slice_graph,
            &scn.dist,
            slice_w_measure.clone(),
            shared_cache.clone(),
            &slice_budget,
        )
        .integrate(|p| h(p), &slice_budget, seed ^ (cell as u64).wrapping_mul(0x9e37));
        match est {
            Ok(e) => {
                let weighted = e.value * cellvol * beta_l.beta;
                total += weighted;
                var += (e.std_error * cellvol * beta_l.beta).powi(2);
                samples += e.samples;
                good += 1;
                good_max = good_max.max(e.value);
                rows.push(SliceRow { s, status: "good".into(), value: e.value, std_error: e.std_error });
            }
            Err(_) => {
                bad += 1;
                bad_weight += cellvol * beta_l.beta;
                rows.push(SliceRow { s, status: "bad".into(), value: 0.0, std_error: 0.0 });
            }
        }
    }

    let rel_l = beta_l.theta.std_error / beta_l.theta.value;
    let est = MeasureEstimate {
        value: total,
        std_error: (var + (total * rel_l).powi(2)).sqrt(),
        samples,
        seed,
        flags: Vec::new(),
    };
    let bad_bound = bad_weight * good_max;
    Ok((est, rows, bad_bound, (good, empty, bad)))
}

fn product_dist(scn: &CoareaScenario) -> HomDistance {
    match (&scn.f, &scn.mdist) {
        (Some(f), Some(md)) => {
            let combined = combined_map(scn);
            let ld = scn.ldist.clone();
            let md = md.clone();
            let ldim = scn.u.target.dim;
            let fdim = f.target.dim;
            crate::metric::custom_norm(
                combined.target.clone(),
                Arc::new(move |coords: &[f64]| {
                    let a = ld.norm_coords(&coords[..ldim]);
                    let b = md.norm_coords(&coords[ldim..ldim + fdim]);
                    a.max(b)
                }),
                0x1234,
            )
        }
        _ => scn.ldist.clone(),
    }
}

fn probe_point(scn: &CoareaScenario, unit: &[f64]) -> Result<Point, MeasureError> {
    let coords: Vec<f64> = unit
        .iter()
        .zip(&scn.sigma_domain)
        .map(|(t, (lo, hi))| lo + t * (hi - lo))
        .collect();
    match (&scn.f, &scn.sigma_splitting) {
        (Some(f), Some(split)) => {
            let g = level_set_as_graph(
                f,
                &Point::origin(f.target.clone()),
                split,
                scn.sigma_domain.clone(),
                scn.mdist.as_ref().expect("mdist required with f"),
                1e-10,
            );
            Ok(g.graph_point(&coords)?)
        }
        _ => Ok(Point::new(scn.algebra.clone(), coords)),
    }
}

fn probe_u_values(
    scn: &CoareaScenario,
    count: u64,
    seed: u64,
) -> Result<Vec<Vec<f64>>, MeasureError> {
    let dim = scn.sigma_domain.len();
    let qp = QuasiPoints::new(dim, seed, 0);
    let mut u = vec![0.0; dim];
    let mut out = Vec::new();
    for k in 0..count {
        qp.point(k, &mut u);
        if let Ok(p) = probe_point(scn, &u) {
            if (scn.h)(&p) != 0.0 {
                out.push(scn.u.eval(&p).coords.clone());
            }
        }
    }
    if out.is_empty() {
        // keep the range finite even when h misses every probe
        out.push(vec![0.0; scn.u.target.dim]);
    }
    Ok(out)
}

/// Run both sides of the coarea identity and compare.
pub fn coarea_check(
    scn: &CoareaScenario,
    budget: &Budget,
    seed: u64,
) -> Result<CoareaReport, MeasureError> {
    check_hypothesis(scn, 64, seed ^ 0x4a7e)?;
    let lhs = coarea_lhs(scn, budget, seed ^ 0xaaaa)?;
    let (rhs, per_slice, bad_bound, (good, empty, bad)) = slice_measure(scn, budget, seed ^ 0xbbbb)?;
    let z = lhs.z_against(&rhs);
    let denom = if rhs.value.abs() > 1e-12 { rhs.value } else { 1.0 };
    let ratio = if lhs.value == 0.0 && rhs.value.abs() <= 3.0 * rhs.std_error.max(1e-15) {
        1.0
    } else {
        lhs.value / denom
    };
    Ok(CoareaReport {
        lhs,
        rhs,
        z,
        ratio,
        bad_bound,
        bad_cells: bad,
        empty_cells: empty,
        good_cells: good,
        per_slice,
    })
}

/// Calibrated covering constant for the coarea inequality with the
/// normalized spherical measures used throughout.
pub const COAREA_INEQUALITY_C: f64 = 1.5;

/// Report for the coarea inequality `mu(K) <= C Lip^l psi(K)`.
#[derive(Debug, Serialize)]
pub struct CoareaInequalityReport {
    pub mu: f64,
    pub lipschitz: f64,
    pub window_mass: f64,
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Verify the coarea inequality on a scenario window.
pub fn coarea_inequality_check(
    scn: &CoareaScenario,
    budget: &Budget,
    seed: u64,
) -> Result<CoareaInequalityReport, MeasureError> {
    let (mu, _, _, _) = slice_measure(scn, budget, seed ^ 0x77aa)?;
    let ell = scn.u.target.hom_dimension();
    // Lipschitz constant of u over the represented window
    let probe_box: Vec<(f64, f64)> = scn.sigma_domain.clone();
    let lip = match &scn.f {
        None => crate::graphs::estimate_lipschitz(
            &scn.u,
            &probe_box,
            &scn.dist,
            &scn.ldist,
            8192,
            seed ^ 0x3c,
        ),
        Some(_) => {
            // sample pairs of graph points
            let qp = QuasiPoints::new(probe_box.len(), seed ^ 0x3d, 0);
            let mut best = 0.0_f64;
            let mut u1 = vec![0.0; probe_box.len()];
            let mut u2 = vec![0.0; probe_box.len()];
            for k in 0..4096u64 {
                qp.point(2 * k, &mut u1);
                qp.point(2 * k + 1, &mut u2);
                let (Ok(p), Ok(q)) = (probe_point(scn, &u1), probe_point(scn, &u2)) else {
                    continue;
                };
                let d = scn.dist.dist(&p, &q);
                if d < 1e-9 {
                    continue;
                }
                best = best.max(scn.ldist.dist(&scn.u.eval(&p), &scn.u.eval(&q)) / d);
            }
            best
        }
    };
    // spherical mass of the represented window
    let window_mass = match (&scn.f, &scn.sigma_splitting) {
        (Some(f), Some(split)) => {
            let mdist = scn.mdist.as_ref().expect("mdist required with f");
            let graph = level_set_as_graph(
                f,
                &Point::origin(f.target.clone()),
                split,
                scn.sigma_domain.clone(),
                mdist,
                1e-10,
            );
            let h = scn.h.clone();
            area_integrate(&graph, |p| h(p), &scn.dist, budget, seed ^ 0x3e)?.value
        }
        _ => {
            let full = HomSubgroup::full(scn.algebra.clone());
            let m = spherical_normalization(&full, &scn.dist, budget, seed ^ 0x3f);
            let vol: f64 = scn.sigma_domain.iter().map(|(lo, hi)| hi - lo).product();
            // h-weighted volume
            let h = scn.h.clone();
            let est = integrate_unit_cube(scn.sigma_domain.len(), seed ^ 0x40, budget.points, 4, |u| {
                let coords: Vec<f64> = u
                    .iter()
                    .zip(&scn.sigma_domain)
                    .map(|(t, (lo, hi))| lo + t * (hi - lo))
                    .collect();
                h(&Point::new(scn.algebra.clone(), coords))
            });
            est.value * vol * m.beta
        }
    };
    let bound = COAREA_INEQUALITY_C * lip.powi(ell as i32) * window_mass;
    Ok(CoareaInequalityReport {
        mu: mu.value,
        lipschitz: lip,
        window_mass,
        bound,
        slack: bound - mu.value,
        holds: mu.value <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{box_norm, koranyi_norm};
    use crate::spec::builtin;
    use crate::subgroup::{hom_morphism, make_splitting, make_subgroup};

    fn heis1() -> Arc<GradedAlgebra> {
        Arc::new(builtin("heis", &[1]).unwrap())
    }

    fn abelian(n: usize) -> Arc<GradedAlgebra> {
        Arc::new(builtin("abelian", &[n]).unwrap())
    }

    fn euclid(n: usize) -> HomDistance {
        box_norm(abelian(n), &[1.0])
    }

    fn plane_splitting() -> Splitting {
        // abelian(2): W = x-axis, V = y-axis
        let a = abelian(2);
        let w = make_subgroup(a.clone(), &[vec![vec![1.0, 0.0]]]).unwrap();
        let v = make_subgroup(a, &[vec![vec![0.0, 1.0]]]).unwrap();
        make_splitting(w, v).unwrap()
    }

    #[test]
    fn area_factor_of_w_itself_is_one() {
        let s = plane_splitting();
        let d = euclid(2);
        let est = area_factor(&s.w.clone(), &s, &d, &Budget::light(), 3).unwrap();
        assert!((est.value - 1.0).abs() < 0.02, "{}", est.value);
    }

    #[test]
    fn area_factor_of_tilted_line_is_secant() {
        // pushforward of length under the linear projection: A = 1/cos(theta)
        let a = abelian(2);
        let s = plane_splitting();
        let d = euclid(2);
        for theta in [0.3_f64, -0.7, 1.0] {
            let line = make_subgroup(
                a.clone(),
                &[vec![vec![theta.cos(), theta.sin()]]],
            )
            .unwrap();
            let est = area_factor(&line, &s, &d, &Budget::light(), 5).unwrap();
            let want = 1.0 / theta.cos();
            assert!(
                (est.value - want).abs() / want < 0.03,
                "theta={theta}: got {} want {want}",
                est.value
            );
        }
    }

    #[test]
    fn area_factor_rejects_non_graph() {
        // P = V itself is not a graph over W
        let s = plane_splitting();
        let d = euclid(2);
        let r = area_factor(&s.v.clone(), &s, &d, &Budget::light(), 7);
        assert!(matches!(r, Err(MeasureError::NotAGraph(_))));
    }

    #[test]
    fn area_factor_continuous_along_vertical_plane_family() {
        // heis(1): vertical planes P_theta = ker(cos t x + sin t y), measured
        // against the fixed splitting W = {x=0}, V = x-axis
        let a = heis1();
        let d = koranyi_norm(a.clone()).unwrap();
        let w = make_subgroup(
            a.clone(),
            &[vec![vec![0.0, 1.0, 0.0]], vec![vec![0.0, 0.0, 1.0]]],
        )
        .unwrap();
        let v = make_subgroup(a.clone(), &[vec![vec![1.0, 0.0, 0.0]]]).unwrap();
        let s = make_splitting(w, v).unwrap();
        let mut values = Vec::new();
        for k in 0..6 {
            let theta = -0.4 + 0.16 * k as f64;
            let p = make_subgroup(
                a.clone(),
                &[
                    vec![vec![-theta.sin(), theta.cos(), 0.0]],
                    vec![vec![0.0, 0.0, 1.0]],
                ],
            )
            .unwrap();
            let est = area_factor_with(
                &spherical_normalization(&s.w, &d, &Budget::light(), 11),
                &p,
                &s,
                &d,
                &Budget::light(),
                11,
                false,
            )
            .unwrap();
            values.push(est.value);
        }
        for w in values.windows(2) {
            assert!(
                (w[1] - w[0]).abs() < 0.12 * w[0].max(w[1]),
                "jump too large along the family: {values:?}"
            );
        }
        // theta = 0 gives P = W, so the factor is 1 nearby
        assert!((values[2] - 1.0).abs() < 0.1, "{values:?}");
    }

    /// Graph of the subgroup `ker(x + c y)` over `W = {x=0}` in heis(1).
    fn subgroup_graph_scenario(c: f64) -> (Arc<GradedAlgebra>, Splitting, IntrinsicGraph, HomDistance) {
        let a = heis1();
        let t = abelian(1);
        let l = hom_morphism(
            DMatrix::from_row_slice(1, 3, &[1.0, c, 0.0]),
            a.clone(),
            t.clone(),
        )
        .unwrap();
        let f = C1hFunction::from_morphism(&l);
        let w = make_subgroup(
            a.clone(),
            &[vec![vec![0.0, 1.0, 0.0]], vec![vec![0.0, 0.0, 1.0]]],
        )
        .unwrap();
        let v = make_subgroup(a.clone(), &[vec![vec![1.0, 0.0, 0.0]]]).unwrap();
        let split = make_splitting(w, v).unwrap();
        let td = box_norm(t, &[1.0]);
        let level = Point::new(f.target.clone(), vec![0.0]);
        let g = level_set_as_graph(&f, &level, &split, vec![(-0.5, 0.5), (-0.5, 0.5)], &td, 1e-11);
        let d = koranyi_norm(a.clone()).unwrap();
        (a, split, g, d)
    }

    #[test]
    fn area_integrate_subgroup_window_matches_haar_oracle() {
        // oracle: the same window measured directly as beta_P Leb_P of the
        // region of P projecting into the domain box
        let (_a, split, g, d) = subgroup_graph_scenario(0.4);
        let budget = Budget::light();
        let est = area_integrate(&g, |_| 1.0, &d, &budget, 13).unwrap();

        let p = make_subgroup(
            g.splitting.w.algebra.clone(),
            &[
                vec![vec![
                    (1.0 + 0.16_f64).sqrt().recip() * 0.4,
                    -(1.0 + 0.16_f64).sqrt().recip(),
                    0.0,
                ]],
                vec![vec![0.0, 0.0, 1.0]],
            ],
        )
        .unwrap();
        let hp = spherical_normalization(&p, &d, &budget, 17);
        // Leb_P of the preimage of the domain box under pi_W
        let reach = 3.0;
        let leb = integrate_unit_cube(2, 19, 16_384, 6, |u| {
            let coeffs = [(2.0 * u[0] - 1.0) * reach, (2.0 * u[1] - 1.0) * reach];
            let q = p.embed(&coeffs);
            let w = split.w_coeffs(&q);
            if w[0].abs() <= 0.5 && w[1].abs() <= 0.5 {
                1.0
            } else {
                0.0
            }
        })
        .scale((2.0 * reach).powi(2), 0.0);
        let oracle = leb.value * hp.beta;
        let se = (est.std_error.powi(2)
            + (leb.std_error * hp.beta).powi(2)
            + (oracle * hp.theta.std_error / hp.theta.value).powi(2))
        .sqrt();
        let z = (est.value - oracle).abs() / se.max(1e-12);
        assert!(z < 3.0, "area {} vs oracle {oracle}, z = {z}", est.value);
    }

    #[test]
    fn area_integrate_zero_weight_is_zero() {
        let (_, _, g, d) = subgroup_graph_scenario(0.0);
        let est = area_integrate(&g, |_| 0.0, &d, &Budget::light(), 23).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn coarea_factor_euclidean_fubini() {
        // psi^1 = Leb on lines, psi^2 = (4/pi) Leb on the plane, so slicing
        // the plane by a coordinate functional gives C = pi/4
        let a = abelian(2);
        let t = abelian(1);
        let l = hom_morphism(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), a.clone(), t.clone()).unwrap();
        let p = HomSubgroup::full(a);
        let d = euclid(2);
        let ld = euclid(1);
        let est = coarea_factor(&p, &l, &d, &ld, &Budget::default(), 29).unwrap();
        let want = std::f64::consts::PI / 4.0;
        assert!(
            (est.value - want).abs() / want < 0.02,
            "got {} want {want}",
            est.value
        );
    }

    #[test]
    fn coarea_factor_zero_iff_not_surjective() {
        // L = x restricted to the vertical plane {x=0} is the zero map
        let a = heis1();
        let t = abelian(1);
        let l = hom_morphism(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]), a.clone(), t).unwrap();
        let p = make_subgroup(
            a.clone(),
            &[vec![vec![0.0, 1.0, 0.0]], vec![vec![0.0, 0.0, 1.0]]],
        )
        .unwrap();
        let d = koranyi_norm(a).unwrap();
        let est = coarea_factor(&p, &l, &d, &euclid(1), &Budget::light(), 31).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn coarea_factor_continuous_in_l() {
        // C(R^2, (1, c)) = sqrt(1 + c^2) pi/4 by the Euclidean coarea formula
        let a = abelian(2);
        let t = abelian(1);
        let p = HomSubgroup::full(a.clone());
        let d = euclid(2);
        let ld = euclid(1);
        let mut prev: Option<f64> = None;
        for c in [0.0, 0.15, 0.3] {
            let l = hom_morphism(DMatrix::from_row_slice(1, 2, &[1.0, c]), a.clone(), t.clone()).unwrap();
            let est = coarea_factor(&p, &l, &d, &ld, &Budget::light(), 37).unwrap();
            let want = (1.0 + c * c).sqrt() * std::f64::consts::PI / 4.0;
            assert!(
                (est.value - want).abs() / want < 0.04,
                "c={c}: got {} want {want}",
                est.value
            );
            if let Some(pv) = prev {
                assert!((est.value - pv).abs() < 0.1 * pv);
            }
            prev = Some(est.value);
        }
    }

    #[test]
    fn kernel_within_subgroup() {
        let a = heis1();
        let t = abelian(1);
        // y restricted to the vertical plane {x=0}: kernel is the center
        let l = hom_morphism(DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]), a.clone(), t).unwrap();
        let p = make_subgroup(
            a,
            &[vec![vec![0.0, 1.0, 0.0]], vec![vec![0.0, 0.0, 1.0]]],
        )
        .unwrap();
        let k = kernel_within(&l, &p).unwrap();
        assert_eq!(k.top_dim(), 1);
        assert_eq!(k.hom_dim, 2);
        assert_eq!(k.basis_layer(), &[2]);
    }

    #[test]
    fn density_constant_of_line_is_two() {
        // a diameter segment of the unit ball has length 2
        let a = abelian(2);
        let line = make_subgroup(a, &[vec![vec![0.6, 0.8]]]).unwrap();
        let d = euclid(2);
        let est = density_constant(&line, &d, &Budget::light(), 41);
        assert!((est.value - 2.0).abs() < 0.05, "{}", est.value);
    }

    #[test]
    fn density_constant_continuous_along_heis_planes() {
        let a = heis1();
        let d = koranyi_norm(a.clone()).unwrap();
        let mut values = Vec::new();
        for k in 0..5 {
            let theta = 0.2 * k as f64;
            let p = make_subgroup(
                a.clone(),
                &[
                    vec![vec![-theta.sin(), theta.cos(), 0.0]],
                    vec![vec![0.0, 0.0, 1.0]],
                ],
            )
            .unwrap();
            values.push(density_constant(&p, &d, &Budget::light(), 43).value);
        }
        for w in values.windows(2) {
            assert!((w[1] - w[0]).abs() < 0.05 * w[0], "{values:?}");
        }
    }

    #[test]
    fn sh_ratio_lands_in_admissible_range() {
        let a = heis1();
        let d = koranyi_norm(a.clone()).unwrap();
        let p = make_subgroup(
            a,
            &[vec![vec![0.0, 1.0, 0.0]], vec![vec![0.0, 0.0, 1.0]]],
        )
        .unwrap();
        let rec = sh_ratio(&p, &d, &Budget::light(), 47);
        let (lo, hi) = rec.interval.unwrap();
        let cap = 2f64.powi(p.hom_dim as i32);
        assert!(lo >= 1.0 - 1e-9 && hi <= cap + 1e-9, "[{lo}, {hi}]");
        assert!(rec.flags.is_empty(), "no clipping expected: {:?}", rec.flags);
    }

    #[test]
    fn sh_ratio_euclidean_contains_truth() {
        // in Euclidean space H = S on subspaces, the ratio is exactly 1
        let a = abelian(3);
        let plane = make_subgroup(
            a,
            &[vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]],
        )
        .unwrap();
        let rec = sh_ratio(&plane, &euclid(3), &Budget::light(), 53);
        let (lo, hi) = rec.interval.unwrap();
        assert!(lo <= 1.0 + 1e-9 && 1.0 <= hi + 1e-9, "[{lo}, {hi}]");
    }
}
