//! Homogeneous subgroups, homogeneous morphisms and splittings.
//!
//! A homogeneous subgroup is stored as a per-layer orthonormal basis of the
//! corresponding graded subalgebra; in exponential coordinates the subgroup
//! is exactly the linear span of that basis. The orthonormal basis also fixes
//! the Lebesgue measure `Leb_P` used by all measure normalizations.

use crate::algebra::{inverse, multiply, Point};
use crate::spec::GradedAlgebra;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

const SPAN_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SubgroupError {
    #[error("vectors of layer {0} are linearly dependent")]
    DependentBasis(usize),
    #[error("basis vector has components outside layer {0}")]
    NotLayerHomogeneous(usize),
    #[error("not bracket-closed: [b{0}, b{1}] leaves the span (residual {2:.3e})")]
    NotBracketClosed(usize, usize, f64),
    #[error("morphism violates the layer grading at entry ({0},{1})")]
    LayerViolation(usize, usize),
    #[error("morphism is not bracket-compatible on basis pair ({0},{1}) (defect {2:.3e})")]
    BracketViolation(usize, usize, f64),
    #[error("subgroup is not normal")]
    NotNormal,
    #[error("subgroups are not complementary: {0}")]
    NotComplementary(String),
    #[error("projection identity failed at construction (defect {0:.3e})")]
    ProjectionDefect(f64),
    #[error("no horizontal complement found: {0}")]
    NotFound(String),
    #[error("algebra mismatch")]
    AlgebraMismatch,
}

/// A homogeneous subgroup, i.e. a graded Lie subalgebra with a fixed
/// per-layer orthonormal basis.
#[derive(Debug, Clone)]
pub struct HomSubgroup {
    pub algebra: Arc<GradedAlgebra>,
    /// Orthonormal basis vectors in ambient coordinates, one per row.
    basis: Vec<Vec<f64>>,
    /// Layer of each basis vector.
    basis_layer: Vec<usize>,
    /// Homogeneous dimension `d = sum_i i * dim(P ∩ V_i)`.
    pub hom_dim: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthonormalize(vectors: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for b in &out {
            let c = dot(&w, b);
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= c * bi;
            }
        }
        let n = dot(&w, &w).sqrt();
        if n < 1e-10 {
            return None;
        }
        for wi in w.iter_mut() {
            *wi /= n;
        }
        out.push(w);
    }
    Some(out)
}

impl HomSubgroup {
    /// Number of basis vectors (topological dimension).
    pub fn top_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn basis_layer(&self) -> &[usize] {
        &self.basis_layer
    }

    pub fn layer_basis(&self, layer: usize) -> Vec<&Vec<f64>> {
        self.basis
            .iter()
            .zip(&self.basis_layer)
            .filter(|(_, &l)| l == layer)
            .map(|(b, _)| b)
            .collect()
    }

    /// The whole group as a subgroup of itself.
    pub fn full(algebra: Arc<GradedAlgebra>) -> Self {
        let n = algebra.dim;
        let mut basis = vec![vec![0.0; n]; n];
        for (i, b) in basis.iter_mut().enumerate() {
            b[i] = 1.0;
        }
        let basis_layer = algebra.layer_of.clone();
        let hom_dim = algebra.hom_dimension();
        Self { algebra, basis, basis_layer, hom_dim }
    }

    /// Map basis coefficients to a group element.
    pub fn embed(&self, coeffs: &[f64]) -> Point {
        assert_eq!(coeffs.len(), self.basis.len());
        let mut coords = vec![0.0; self.algebra.dim];
        for (c, b) in coeffs.iter().zip(&self.basis) {
            for (ci, bi) in coords.iter_mut().zip(b) {
                *ci += c * bi;
            }
        }
        Point::new(self.algebra.clone(), coords)
    }

    /// Orthonormal-basis coefficients of the projection of `coords` onto the
    /// span; exact coefficients when the point lies on the subgroup.
    pub fn coeffs_of(&self, coords: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|b| dot(coords, b)).collect()
    }

    /// Euclidean distance from `coords` to the linear span.
    pub fn off_span_residual(&self, coords: &[f64]) -> f64 {
        let c = self.coeffs_of(coords);
        let p = self.embed(&c);
        coords
            .iter()
            .zip(&p.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        self.off_span_residual(&p.coords) <= tol
    }

    /// Basis vectors as the columns of an n × t matrix.
    pub fn span_matrix(&self) -> DMatrix<f64> {
        let n = self.algebra.dim;
        let t = self.basis.len();
        DMatrix::from_fn(n, t, |i, j| self.basis[j][i])
    }
}

/// Build a validated subgroup from per-layer spanning vectors
/// (`layer_bases[l]` spans `P ∩ V_{l+1}`, ambient coordinates).
pub fn make_subgroup(
    algebra: Arc<GradedAlgebra>,
    layer_bases: &[Vec<Vec<f64>>],
) -> Result<HomSubgroup, SubgroupError> {
    let mut basis = Vec::new();
    let mut basis_layer = Vec::new();
    for (l0, vectors) in layer_bases.iter().enumerate() {
        let layer = l0 + 1;
        for v in vectors {
            assert_eq!(v.len(), algebra.dim);
            for (i, &x) in v.iter().enumerate() {
                if x != 0.0 && algebra.layer_of[i] != layer {
                    return Err(SubgroupError::NotLayerHomogeneous(layer));
                }
            }
        }
        let ortho = orthonormalize(vectors).ok_or(SubgroupError::DependentBasis(layer))?;
        for b in ortho {
            basis.push(b);
            basis_layer.push(layer);
        }
    }
    let hom_dim = basis_layer.iter().sum();
    let sub = HomSubgroup { algebra, basis, basis_layer, hom_dim };

    for i in 0..sub.basis.len() {
        for j in (i + 1)..sub.basis.len() {
            let br = sub.algebra.bracket(&sub.basis[i], &sub.basis[j]);
            let res = sub.off_span_residual(&br);
            if res > SPAN_TOL {
                return Err(SubgroupError::NotBracketClosed(i, j, res));
            }
        }
    }
    Ok(sub)
}

/// `[g, P] ⊆ P` checked on basis pairs.
pub fn is_normal(p: &HomSubgroup) -> bool {
    let n = p.algebra.dim;
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        for b in p.basis() {
            let br = p.algebra.bracket(&e, b);
            if p.off_span_residual(&br) > SPAN_TOL {
                return false;
            }
        }
    }
    true
}

/// A layer-preserving, bracket-compatible linear group morphism.
#[derive(Debug, Clone)]
pub struct HomMorphism {
    /// target-dim × source-dim matrix in exponential coordinates.
    pub matrix: DMatrix<f64>,
    pub source: Arc<GradedAlgebra>,
    pub target: Arc<GradedAlgebra>,
}

impl HomMorphism {
    pub fn apply(&self, p: &Point) -> Point {
        let v = DVector::from_column_slice(&p.coords);
        let out = &self.matrix * v;
        Point::new(self.target.clone(), out.iter().copied().collect())
    }

    pub fn apply_coords(&self, coords: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(coords);
        (&self.matrix * v).iter().copied().collect()
    }

    pub fn zero(source: Arc<GradedAlgebra>, target: Arc<GradedAlgebra>) -> Self {
        let matrix = DMatrix::zeros(target.dim, source.dim);
        Self { matrix, source, target }
    }

    /// Rank of the morphism restricted to a subgroup, computed per layer;
    /// full rank on every layer of the target means surjectivity.
    pub fn is_surjective_from(&self, domain: &HomSubgroup, tol: f64) -> bool {
        for l in 1..=self.target.step {
            let rows = self.target.layer_indices(l);
            if rows.is_empty() {
                continue;
            }
            let cols: Vec<Vec<f64>> = domain
                .basis()
                .iter()
                .zip(domain.basis_layer())
                .filter(|(_, &bl)| bl == l)
                .map(|(b, _)| {
                    let img = self.apply_coords(b);
                    rows.iter().map(|&r| img[r]).collect()
                })
                .collect();
            if cols.is_empty() {
                return false;
            }
            let m = DMatrix::from_fn(rows.len(), cols.len(), |i, j| cols[j][i]);
            if m.rank(tol) < rows.len() {
                return false;
            }
        }
        true
    }
}

/// Validate the layer-block structure and bracket compatibility of a matrix.
pub fn hom_morphism(
    matrix: DMatrix<f64>,
    source: Arc<GradedAlgebra>,
    target: Arc<GradedAlgebra>,
) -> Result<HomMorphism, SubgroupError> {
    hom_morphism_with_tol(matrix, source, target, SPAN_TOL)
}

/// Same as [`hom_morphism`] with a caller-chosen defect tolerance; used for
/// numerically estimated differentials where finite-difference noise sits
/// above the exact-arithmetic threshold.
pub fn hom_morphism_with_tol(
    matrix: DMatrix<f64>,
    source: Arc<GradedAlgebra>,
    target: Arc<GradedAlgebra>,
    tol: f64,
) -> Result<HomMorphism, SubgroupError> {
    assert_eq!(matrix.nrows(), target.dim);
    assert_eq!(matrix.ncols(), source.dim);
    for r in 0..target.dim {
        for c in 0..source.dim {
            if matrix[(r, c)].abs() > tol && target.layer_of[r] != source.layer_of[c] {
                return Err(SubgroupError::LayerViolation(r, c));
            }
        }
    }
    let m = HomMorphism { matrix, source, target };
    let n = m.source.dim;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut ei = vec![0.0; n];
            ei[i] = 1.0;
            let mut ej = vec![0.0; n];
            ej[j] = 1.0;
            let lhs = m.apply_coords(&m.source.bracket(&ei, &ej));
            let rhs = m.target.bracket(&m.apply_coords(&ei), &m.apply_coords(&ej));
            let defect = lhs
                .iter()
                .zip(&rhs)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if defect > tol {
                return Err(SubgroupError::BracketViolation(i, j, defect));
            }
        }
    }
    Ok(m)
}

/// Kernel of a homogeneous morphism, assembled from per-layer null spaces.
pub fn kernel(l: &HomMorphism) -> HomSubgroup {
    let source = &l.source;
    let mut layer_bases: Vec<Vec<Vec<f64>>> = vec![Vec::new(); source.step];
    for lay in 1..=source.step {
        let cols = source.layer_indices(lay);
        if cols.is_empty() {
            continue;
        }
        let rows: Vec<usize> = if lay <= l.target.step {
            l.target.layer_indices(lay)
        } else {
            Vec::new()
        };
        if rows.is_empty() {
            // the whole layer is in the kernel
            for &c in &cols {
                let mut v = vec![0.0; source.dim];
                v[c] = 1.0;
                layer_bases[lay - 1].push(v);
            }
            continue;
        }
        let block = DMatrix::from_fn(rows.len(), cols.len(), |i, j| l.matrix[(rows[i], cols[j])]);
        let smax = block.norm();
        for nvec in null_space(&block, smax.max(1.0) * 1e-10) {
            let mut v = vec![0.0; source.dim];
            for (jj, &c) in cols.iter().enumerate() {
                v[c] = nvec[jj];
            }
            layer_bases[lay - 1].push(v);
        }
    }
    make_subgroup(l.source.clone(), &layer_bases).expect("kernel of a morphism is a subgroup")
}

/// Orthonormal basis of the null space of `m`.
fn null_space(m: &DMatrix<f64>, tol: f64) -> Vec<Vec<f64>> {
    let cols = m.ncols();
    // pad with zero rows so the SVD carries a full, square V^T
    let rows = m.nrows().max(cols);
    let mut padded = DMatrix::zeros(rows, cols);
    padded.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    (rank..cols)
        .map(|r| (0..cols).map(|c| v_t[(r, c)]).collect())
        .collect()
}

/// A splitting `G = W · V` with `W` normal, carrying the two projections.
#[derive(Debug, Clone)]
pub struct Splitting {
    pub w: HomSubgroup,
    pub v: HomSubgroup,
    /// Linear projection onto `Lie(V)` along `Lie(W)` in ambient coordinates.
    pi_v: DMatrix<f64>,
}

impl Splitting {
    /// `pi_V(p)`: the unique `v` with `p = w v`. Linear because the quotient
    /// map of a simply connected nilpotent group is linear in exponential
    /// coordinates; the multiply-back identity is asserted at construction.
    pub fn project_v(&self, p: &Point) -> Point {
        let out = &self.pi_v * DVector::from_column_slice(&p.coords);
        Point::new(p.algebra.clone(), out.iter().copied().collect())
    }

    /// `pi_W(p) = p · pi_V(p)^{-1}`.
    pub fn project_w(&self, p: &Point) -> Point {
        let v = self.project_v(p);
        multiply(p, &inverse(&v)).expect("projection stays in one algebra")
    }

    /// Coefficients of `pi_W(p)` in the orthonormal basis of `W`.
    pub fn w_coeffs(&self, p: &Point) -> Vec<f64> {
        self.w.coeffs_of(&self.project_w(p).coords)
    }
}

/// Validate complementarity and build the projection pair.
pub fn make_splitting(w: HomSubgroup, v: HomSubgroup) -> Result<Splitting, SubgroupError> {
    if *w.algebra != *v.algebra {
        return Err(SubgroupError::AlgebraMismatch);
    }
    if !is_normal(&w) {
        return Err(SubgroupError::NotNormal);
    }
    let n = w.algebra.dim;
    if w.top_dim() + v.top_dim() != n {
        return Err(SubgroupError::NotComplementary(format!(
            "dim W + dim V = {} + {} != {}",
            w.top_dim(),
            v.top_dim(),
            n
        )));
    }
    let mut cols = w.basis().to_vec();
    cols.extend(v.basis().iter().cloned());
    let m = DMatrix::from_fn(n, n, |i, j| cols[j][i]);
    let lu = m.clone().lu();
    if !lu.is_invertible() {
        return Err(SubgroupError::NotComplementary("W ∩ V != {0}".to_string()));
    }
    let minv = lu.try_inverse().unwrap();
    // pi_v = B_V * (rows of M^{-1} corresponding to V-coefficients)
    let bv = v.span_matrix();
    let v_rows = minv.rows(w.top_dim(), v.top_dim()).into_owned();
    let pi_v = &bv * v_rows;

    let split = Splitting { w, v, pi_v };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5111);
    let mut worst: f64 = 0.0;
    for _ in 0..256 {
        let coords: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p = Point::new(split.w.algebra.clone(), coords);
        let back = multiply(&split.project_w(&p), &split.project_v(&p))
            .expect("same algebra");
        let defect = back
            .coords
            .iter()
            .zip(&p.coords)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(defect);
    }
    if worst > 1e-8 {
        return Err(SubgroupError::ProjectionDefect(worst));
    }
    Ok(split)
}

/// Search for an abelian horizontal complement `V ⊂ V1` of dimension `m` to
/// the normal subgroup `k`: `V ∩ K = {0}`, `[V,V] = 0`, `K · V = G`.
///
/// `NotFound` is advisory, never a proof of nonexistence.
pub fn find_horizontal_complement(
    k: &HomSubgroup,
    m: usize,
    seed: u64,
) -> Result<HomSubgroup, SubgroupError> {
    let a = &k.algebra;
    if k.top_dim() + m != a.dim {
        return Err(SubgroupError::NotFound(format!(
            "dimension obstruction: dim K + m = {} + {} != {}",
            k.top_dim(),
            m,
            a.dim
        )));
    }
    let layer1 = a.layer_indices(1);
    let k1: Vec<&Vec<f64>> = k.layer_basis(1);
    if layer1.len() - k1.len() != m {
        return Err(SubgroupError::NotFound(
            "kernel misses higher-layer directions; no horizontal complement".to_string(),
        ));
    }

    // exact symplectic construction on Heisenberg-like groups
    if let Some(v) = crate::heisenberg::isotropic_complement(k, m) {
        return Ok(v);
    }

    // orthogonal complement C of K ∩ V1 inside V1
    let mut c_basis: Vec<Vec<f64>> = Vec::new();
    for &i in &layer1 {
        let mut e = vec![0.0; a.dim];
        e[i] = 1.0;
        for b in &k1 {
            let t = dot(&e, b);
            for (ei, bi) in e.iter_mut().zip(b.iter()) {
                *ei -= t * bi;
            }
        }
        for b in &c_basis {
            let t = dot(&e, b);
            for (ei, bi) in e.iter_mut().zip(b) {
                *ei -= t * bi;
            }
        }
        let norm = dot(&e, &e).sqrt();
        if norm > 1e-8 {
            for x in e.iter_mut() {
                *x /= norm;
            }
            c_basis.push(e);
        }
    }
    assert_eq!(c_basis.len(), m);

    let try_build = |vectors: &[Vec<f64>]| -> Option<HomSubgroup> {
        let mut layer_bases = vec![Vec::new(); a.step];
        layer_bases[0] = vectors.to_vec();
        let v = make_subgroup(a.clone(), &layer_bases).ok()?;
        // abelian and transversal
        for i in 0..v.top_dim() {
            for j in (i + 1)..v.top_dim() {
                let br = a.bracket(&v.basis()[i], &v.basis()[j]);
                if br.iter().any(|x| x.abs() > 1e-10) {
                    return None;
                }
            }
        }
        let mut cols = k.basis().to_vec();
        cols.extend(v.basis().iter().cloned());
        let mat = DMatrix::from_fn(a.dim, cols.len(), |i, j| cols[j][i]);
        if mat.rank(1e-8) < a.dim {
            return None;
        }
        Some(v)
    };

    if let Some(v) = try_build(&c_basis) {
        return Ok(v);
    }

    // graph-over-C search: V = {c + M c}, M mapping C into K ∩ V1, repaired
    // towards isotropy by Gauss-Newton from random starts
    let k1_owned: Vec<Vec<f64>> = k1.iter().map(|v| (*v).clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kd = k1_owned.len();
    if kd == 0 || m < 2 {
        // nothing to repair with: the plain complement was the only candidate
        return Err(SubgroupError::NotFound(
            "no isotropic complement reachable from the kernel's first layer".to_string(),
        ));
    }
    for _attempt in 0..32 {
        let mut mvar: Vec<f64> = (0..m * kd).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for _ in 0..60 {
            let (res, jac) = isotropy_system(a, &c_basis, &k1_owned, &mvar);
            let rnorm = res.iter().map(|r| r * r).sum::<f64>().sqrt();
            if rnorm < 1e-12 {
                break;
            }
            let j = DMatrix::from_fn(res.len(), mvar.len(), |i, jj| jac[i][jj]);
            let r = DVector::from_column_slice(&res);
            let step = j.svd(true, true).solve(&r, 1e-10).unwrap();
            for (mi, si) in mvar.iter_mut().zip(step.iter()) {
                *mi -= si;
            }
        }
        let (res, _) = isotropy_system(a, &c_basis, &k1_owned, &mvar);
        if res.iter().map(|r| r * r).sum::<f64>().sqrt() < 1e-10 {
            let vectors: Vec<Vec<f64>> = (0..m)
                .map(|i| {
                    let mut v = c_basis[i].clone();
                    for (jj, kvec) in k1_owned.iter().enumerate() {
                        let coef = mvar[i * kd + jj];
                        for (vi, ki) in v.iter_mut().zip(kvec) {
                            *vi += coef * ki;
                        }
                    }
                    v
                })
                .collect();
            if let Some(v) = try_build(&vectors) {
                return Ok(v);
            }
        }
    }
    Err(SubgroupError::NotFound(
        "isotropy repair did not converge within budget".to_string(),
    ))
}

/// Residuals (all pairwise bracket components of the graph vectors) and the
/// finite-difference Jacobian of the isotropy system.
fn isotropy_system(
    a: &Arc<GradedAlgebra>,
    c_basis: &[Vec<f64>],
    k1: &[Vec<f64>],
    mvar: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = c_basis.len();
    let kd = k1.len();
    let vec_of = |mv: &[f64], i: usize| -> Vec<f64> {
        let mut v = c_basis[i].clone();
        for (jj, kvec) in k1.iter().enumerate() {
            let coef = mv[i * kd + jj];
            for (vi, ki) in v.iter_mut().zip(kvec) {
                *vi += coef * ki;
            }
        }
        v
    };
    let residuals = |mv: &[f64]| -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                let br = a.bracket(&vec_of(mv, i), &vec_of(mv, j));
                out.extend(br);
            }
        }
        out
    };
    let base = residuals(mvar);
    let h = 1e-6;
    let mut jac = vec![vec![0.0; mvar.len()]; base.len()];
    let mut pert = mvar.to_vec();
    for c in 0..mvar.len() {
        pert[c] += h;
        let r = residuals(&pert);
        pert[c] = mvar[c];
        for (row, (ri, bi)) in jac.iter_mut().zip(r.iter().zip(&base)) {
            row[c] = (ri - bi) / h;
        }
    }
    (base, jac)
}

/// Build the splitting witness for a surjective differential: kernel plus a
/// found complement. Pure linear algebra; differential estimation lives in
/// [`crate::graphs`].
pub fn splitting_from_differential(
    differential: &HomMorphism,
    seed: u64,
) -> Result<Splitting, SubgroupError> {
    let ker = kernel(differential);
    let m = differential.source.dim - ker.top_dim();
    let v = find_horizontal_complement(&ker, m, seed)?;
    make_splitting(ker, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::builtin;

    fn heis1() -> Arc<GradedAlgebra> {
        Arc::new(builtin("heis", &[1]).unwrap())
    }

    fn vertical_x0(a: &Arc<GradedAlgebra>) -> HomSubgroup {
        // span{Y, T} in heis(1)
        make_subgroup(
            a.clone(),
            &[vec![vec![0.0, 1.0, 0.0]], vec![vec![0.0, 0.0, 1.0]]],
        )
        .unwrap()
    }

    #[test]
    fn vertical_subgroup_has_hom_dim_three() {
        let a = heis1();
        let p = vertical_x0(&a);
        assert_eq!(p.top_dim(), 2);
        assert_eq!(p.hom_dim, 3);
    }

    #[test]
    fn span_xy_not_bracket_closed() {
        let a = heis1();
        let r = make_subgroup(
            a,
            &[vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]],
        );
        assert!(matches!(r, Err(SubgroupError::NotBracketClosed(..))));
    }

    #[test]
    fn abelian_any_subspace_works() {
        let a = Arc::new(builtin("abelian", &[3]).unwrap());
        let r = make_subgroup(a, &[vec![vec![1.0, 2.0, 0.5], vec![0.0, 1.0, -1.0]]]);
        assert!(r.is_ok());
    }

    #[test]
    fn normality_checks() {
        let a = heis1();
        assert!(is_normal(&vertical_x0(&a)));
        let x_axis = make_subgroup(a.clone(), &[vec![vec![1.0, 0.0, 0.0]]]).unwrap();
        assert!(!is_normal(&x_axis));
        // every vertical subgroup containing the center is normal
        let diag = make_subgroup(
            a,
            &[vec![vec![1.0, 1.0, 0.0]], vec![vec![0.0, 0.0, 1.0]]],
        )
        .unwrap();
        assert!(is_normal(&diag));
    }

    #[test]
    fn coordinate_functional_is_morphism_and_t_is_not() {
        let a = heis1();
        let target = Arc::new(builtin("abelian", &[1]).unwrap());
        let ok = hom_morphism(
            DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
            a.clone(),
            target.clone(),
        );
        assert!(ok.is_ok());
        let bad = hom_morphism(DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]), a, target);
        assert!(matches!(bad, Err(SubgroupError::LayerViolation(..))));
    }

    #[test]
    fn dilation_matrix_is_homogeneous_morphism() {
        let a = heis1();
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 2.0, 4.0]));
        assert!(hom_morphism(m, a.clone(), a).is_ok());
    }

    #[test]
    fn bracket_incompatible_rejected() {
        // doubling x only: L[X,Y] = L(T) = T but [LX, LY] = 2T
        let a = heis1();
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 1.0, 1.0]));
        assert!(matches!(
            hom_morphism(m, a.clone(), a),
            Err(SubgroupError::BracketViolation(..))
        ));
    }

    #[test]
    fn kernel_of_x_functional() {
        let a = heis1();
        let target = Arc::new(builtin("abelian", &[1]).unwrap());
        let l = hom_morphism(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]), a, target).unwrap();
        let k = kernel(&l);
        assert_eq!(k.top_dim(), 2);
        assert_eq!(k.hom_dim, 3);
        assert!(is_normal(&k));
        assert!(k.contains(&Point::new(k.algebra.clone(), vec![0.0, 3.0, -1.0]), 1e-12));
    }

    #[test]
    fn kernel_of_identity_is_trivial() {
        let a = heis1();
        let l = hom_morphism(DMatrix::identity(3, 3), a.clone(), a).unwrap();
        assert_eq!(kernel(&l).top_dim(), 0);
    }

    #[test]
    fn kernel_dimension_by_rank_nullity() {
        // surjective on V1 of heis(2) onto R^2: kernel top-dim 3, hom dim 4
        let a = Arc::new(builtin("heis", &[2]).unwrap());
        let target = Arc::new(builtin("abelian", &[2]).unwrap());
        let mut m = DMatrix::zeros(2, 5);
        m[(0, 0)] = 1.0;
        m[(0, 1)] = 0.4;
        m[(0, 2)] = -0.3;
        m[(1, 1)] = 1.0;
        m[(1, 3)] = 0.7;
        let l = hom_morphism(m, a, target).unwrap();
        let k = kernel(&l);
        assert_eq!(k.top_dim(), 3);
        assert_eq!(k.hom_dim, 4);
        assert!(is_normal(&k));
    }

    #[test]
    fn splitting_projections_match_hand_computation() {
        let a = heis1();
        let w = vertical_x0(&a);
        let v = make_subgroup(a.clone(), &[vec![vec![1.0, 0.0, 0.0]]]).unwrap();
        let s = make_splitting(w, v).unwrap();
        let p = Point::new(a, vec![1.0, 2.0, 3.0]);
        let pv = s.project_v(&p);
        let pw = s.project_w(&p);
        assert!((pv.coords[0] - 1.0).abs() < 1e-12);
        assert!(pv.coords[1].abs() < 1e-12);
        assert!(pv.coords[2].abs() < 1e-12);
        // oracle: (0,2,4)·(1,0,0) = (1,2,3) under the group law
        assert!((pw.coords[1] - 2.0).abs() < 1e-12);
        assert!((pw.coords[2] - 4.0).abs() < 1e-12);
        let back = multiply(&pw, &pv).unwrap();
        for i in 0..3 {
            assert!((back.coords[i] - p.coords[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn center_has_no_complement() {
        let a = heis1();
        let center = make_subgroup(a.clone(), &[vec![], vec![vec![0.0, 0.0, 1.0]]]).unwrap();
        let v = make_subgroup(a, &[vec![vec![1.0, 0.0, 0.0]]]).unwrap();
        assert!(matches!(
            make_splitting(center, v),
            Err(SubgroupError::NotComplementary(_))
        ));
    }

    #[test]
    fn projection_is_group_morphism_when_w_normal() {
        let a = heis1();
        let s = make_splitting(
            vertical_x0(&a),
            make_subgroup(a.clone(), &[vec![vec![1.0, 0.0, 0.0]]]).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let p = Point::new(a.clone(), (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let q = Point::new(a.clone(), (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let lhs = s.project_v(&multiply(&p, &q).unwrap());
            let rhs = multiply(&s.project_v(&p), &s.project_v(&q)).unwrap();
            for i in 0..3 {
                assert!((lhs.coords[i] - rhs.coords[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn projections_commute_with_dilations() {
        use crate::algebra::{dilate, Dilation};
        let a = heis1();
        let s = make_splitting(
            vertical_x0(&a),
            make_subgroup(a.clone(), &[vec![vec![1.0, 0.0, 0.0]]]).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let p = Point::new(a.clone(), (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let lam = Dilation::new(rng.gen_range(0.2..3.0));
            let lhs = s.project_w(&dilate(lam, &p));
            let rhs = dilate(lam, &s.project_w(&p));
            for i in 0..3 {
                assert!((lhs.coords[i] - rhs.coords[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn horizontal_complement_heis1_vertical() {
        let a = heis1();
        let k = vertical_x0(&a);
        let v = find_horizontal_complement(&k, 1, 5).unwrap();
        assert_eq!(v.top_dim(), 1);
        assert_eq!(v.basis_layer(), &[1]);
        assert!(make_splitting(k, v).is_ok());
    }

    #[test]
    fn center_complement_not_found() {
        let a = heis1();
        let center = make_subgroup(a, &[vec![], vec![vec![0.0, 0.0, 1.0]]]).unwrap();
        assert!(matches!(
            find_horizontal_complement(&center, 2, 5),
            Err(SubgroupError::NotFound(_))
        ));
    }

    #[test]
    fn heis2_isotropic_complement_of_codim2_kernel() {
        let a = Arc::new(builtin("heis", &[2]).unwrap());
        // K = kernel of (x1, x2): span{Y1, Y2, T}
        let k = make_subgroup(
            a.clone(),
            &[
                vec![
                    vec![0.0, 0.0, 1.0, 0.0, 0.0],
                    vec![0.0, 0.0, 0.0, 1.0, 0.0],
                ],
                vec![vec![0.0, 0.0, 0.0, 0.0, 1.0]],
            ],
        )
        .unwrap();
        let v = find_horizontal_complement(&k, 2, 9).unwrap();
        // isotropic and transversal, verified by brute force
        for i in 0..2 {
            for j in 0..2 {
                let br = a.bracket(&v.basis()[i], &v.basis()[j]);
                assert!(br.iter().all(|x| x.abs() < 1e-10));
            }
        }
        assert!(make_splitting(k, v).is_ok());
    }
}
