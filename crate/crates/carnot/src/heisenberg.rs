//! Closed forms special to Heisenberg groups: vertical/horizontal subgroup
//! constructions via symplectic linear algebra, the spherical-to-Euclidean
//! constants `c(n,k)` on vertical subgroups, the row-Gram Jacobian, and the
//! closed-form coarea factor they combine into.

use crate::metric::{spherical_normalization, HomDistance};
use crate::qmc::{Budget, MeasureEstimate};
use crate::spec::GradedAlgebra;
use crate::subgroup::{make_splitting, make_subgroup, HomSubgroup};
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeisError {
    #[error("`{0}` is not a Heisenberg group")]
    NotHeisenberg(String),
    #[error("codimension {0} exceeds n = {1}: no horizontal complement exists")]
    CodimTooLarge(usize, usize),
    #[error("subgroup is not vertical: {0}")]
    NotVertical(String),
    #[error("distance failed the rotational-invariance sampling test (defect {0:.3e})")]
    NotRotationallyInvariant(f64),
    #[error("estimates from two vertical representatives disagree: z = {0:.2}")]
    RepresentativeDisagreement(f64),
    #[error("hypothesis 1 <= m + l <= n violated: m={0}, l={1}, n={2}")]
    HypothesisViolated(usize, usize, usize),
    #[error("matrix shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Subgroup(#[from] crate::subgroup::SubgroupError),
}

/// Heisenberg parameter `n` when the algebra is `heis(n)` in its standard
/// basis, `None` otherwise.
pub fn heis_n(a: &GradedAlgebra) -> Option<usize> {
    if a.step != 2 {
        return None;
    }
    let dims = a.layer_dims();
    if dims.len() != 2 || dims[1] != 1 || dims[0] % 2 != 0 {
        return None;
    }
    let n = dims[0] / 2;
    let reference = crate::spec::builtin("heis", &[n]).ok()?;
    for i in 0..a.dim {
        for j in 0..a.dim {
            for k in 0..a.dim {
                if a.structure_constant(i, j, k) != reference.structure_constant(i, j, k) {
                    return None;
                }
            }
        }
    }
    Some(n)
}

/// A vertical subgroup `P = P1 x V2`: a layer-1 subspace together with the
/// whole center.
#[derive(Debug, Clone)]
pub struct VerticalSubgroup {
    pub subgroup: HomSubgroup,
    pub n: usize,
    /// Codimension `k` (topological and homogeneous codimension agree minus one).
    pub codim: usize,
}

/// Build a vertical subgroup from a spanning set of its layer-1 part; the
/// center is included automatically.
pub fn vertical_subgroup(
    a: Arc<GradedAlgebra>,
    p1_basis: &[Vec<f64>],
) -> Result<VerticalSubgroup, HeisError> {
    let n = heis_n(&a).ok_or_else(|| HeisError::NotHeisenberg(a.name.clone()))?;
    let mut center = vec![0.0; a.dim];
    center[2 * n] = 1.0;
    let sub = make_subgroup(a, &[p1_basis.to_vec(), vec![center]])?;
    let codim = 2 * n - p1_basis.len();
    Ok(VerticalSubgroup { subgroup: sub, n, codim })
}

/// Coordinate vertical subgroup of codimension `k`: the layer-1 part is the
/// orthogonal complement of `span{X_1, ..., X_k}`.
pub fn coordinate_vertical(a: Arc<GradedAlgebra>, k: usize) -> Result<VerticalSubgroup, HeisError> {
    let n = heis_n(&a).ok_or_else(|| HeisError::NotHeisenberg(a.name.clone()))?;
    assert!(k <= 2 * n);
    let mut p1 = Vec::new();
    for i in k..2 * n {
        let mut v = vec![0.0; a.dim];
        v[i] = 1.0;
        p1.push(v);
    }
    vertical_subgroup(a, &p1)
}

/// Standard symplectic form on the first layer read off the bracket:
/// `omega(v, w) = t-component of [v, w]`.
fn symplectic_form(a: &GradedAlgebra, v: &[f64], w: &[f64]) -> f64 {
    let t = a
        .layer_indices(2)
        .first()
        .copied()
        .expect("Heisenberg groups have a one-dimensional center");
    a.bracket(v, w)[t]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthonormal_complement_within(ambient: &[Vec<f64>], inside: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for cand in ambient {
        let mut v = cand.clone();
        for b in inside.iter().chain(out.iter()) {
            let c = dot(&v, b) / dot(b, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= c * bi;
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-9 {
            for x in v.iter_mut() {
                *x /= n;
            }
            out.push(v);
        }
    }
    out
}

/// Darboux reduction of an antisymmetric form on the given vectors: returns
/// (pairs (a_i, b_i) with form(a_i, b_i) = 1, radical basis).
fn darboux_reduce<F>(mut pool: Vec<Vec<f64>>, form: F) -> (Vec<(Vec<f64>, Vec<f64>)>, Vec<Vec<f64>>)
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let mut pairs = Vec::new();
    let mut radical = Vec::new();
    while let Some(v) = pool.first().cloned() {
        pool.remove(0);
        let best = pool
            .iter()
            .enumerate()
            .map(|(i, w)| (i, form(&v, w).abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((wi, mag)) if mag > 1e-9 => {
                let mut w = pool.remove(wi);
                let scale = form(&v, &w);
                for x in w.iter_mut() {
                    *x /= scale;
                }
                for u in pool.iter_mut() {
                    let fv = form(&v, u);
                    let fw = form(&w, u);
                    for i in 0..u.len() {
                        u[i] = u[i] - fv * w[i] + fw * v[i];
                    }
                }
                pairs.push((v, w));
            }
            _ => radical.push(v),
        }
    }
    (pairs, radical)
}

/// Exact isotropic complement of a vertical kernel inside a Heisenberg
/// group, or `None` when the algebra or the kernel do not qualify. Used as
/// the fast path of the generic complement search.
pub fn isotropic_complement(k: &HomSubgroup, m: usize) -> Option<HomSubgroup> {
    let a = &k.algebra;
    let n = heis_n(a)?;
    // the kernel must contain the full center and have codimension m <= n
    if k.layer_basis(2).len() != 1 || m > n {
        return None;
    }
    let p1: Vec<Vec<f64>> = k.layer_basis(1).into_iter().cloned().collect();
    if p1.len() + m != 2 * n {
        return None;
    }
    let omega = |v: &[f64], w: &[f64]| symplectic_form(a, v, w);

    // split P1 = radical ⊕ P2 with omega nondegenerate on P2
    let gram = DMatrix::from_fn(p1.len(), p1.len(), |i, j| omega(&p1[i], &p1[j]));
    let svd = gram.clone().svd(false, true);
    let v_t = svd.v_t.unwrap();
    let tol = 1e-9 * gram.norm().max(1.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let radical: Vec<Vec<f64>> = ((rank)..p1.len())
        .map(|r| {
            let mut v = vec![0.0; a.dim];
            for (j, pj) in p1.iter().enumerate() {
                for (vi, pji) in v.iter_mut().zip(pj) {
                    *vi += v_t[(r, j)] * pji;
                }
            }
            v
        })
        .collect();
    let p2 = orthonormal_complement_within(&p1, &radical);

    // U = symplectic complement of P2 inside V1
    let layer1: Vec<Vec<f64>> = a
        .layer_indices(1)
        .iter()
        .map(|&i| {
            let mut e = vec![0.0; a.dim];
            e[i] = 1.0;
            e
        })
        .collect();
    let pairing = DMatrix::from_fn(p2.len(), layer1.len(), |i, j| omega(&p2[i], &layer1[j]));
    let u_basis: Vec<Vec<f64>> = {
        let padded_rows = pairing.nrows().max(pairing.ncols());
        let mut padded = DMatrix::zeros(padded_rows, pairing.ncols());
        padded.view_mut((0, 0), (pairing.nrows(), pairing.ncols())).copy_from(&pairing);
        let svd = padded.svd(false, true);
        let v_t = svd.v_t.unwrap();
        let tol = 1e-9 * pairing.norm().max(1.0);
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        (rank..layer1.len())
            .map(|r| {
                let mut v = vec![0.0; a.dim];
                for (j, e) in layer1.iter().enumerate() {
                    for (vi, ei) in v.iter_mut().zip(e) {
                        *vi += v_t[(r, j)] * ei;
                    }
                }
                v
            })
            .collect()
    };

    // V0 = complement of the radical inside U
    let v0 = orthonormal_complement_within(&u_basis, &radical);
    if v0.len() != m {
        return None;
    }

    // Darboux bases of omega on V0 and on P2
    let (v0_pairs, v0_radical) = darboux_reduce(v0, omega);
    let (p2_pairs, _) = darboux_reduce(p2, omega);
    if v0_pairs.len() > p2_pairs.len() {
        return None; // cannot happen for m <= n
    }

    // graph map M kills the beta-radical and sends Darboux pairs of V0 onto
    // negated Darboux pairs of P2, making u + M(u) isotropic
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(m);
    for (idx, (av, bv)) in v0_pairs.iter().enumerate() {
        let (pv, qv) = &p2_pairs[idx];
        let mut a_lift = av.clone();
        let mut b_lift = bv.clone();
        for i in 0..a_lift.len() {
            a_lift[i] += pv[i];
            b_lift[i] -= qv[i];
        }
        vectors.push(a_lift);
        vectors.push(b_lift);
    }
    vectors.extend(v0_radical);

    let mut layer_bases = vec![Vec::new(); a.step];
    layer_bases[0] = vectors;
    let v = make_subgroup(a.clone(), &layer_bases).ok()?;

    // exact verification: isotropy and transversality
    for i in 0..v.top_dim() {
        for j in (i + 1)..v.top_dim() {
            if omega(&v.basis()[i], &v.basis()[j]).abs() > 1e-9 {
                return None;
            }
        }
    }
    let mut cols: Vec<Vec<f64>> = k.basis().to_vec();
    cols.extend(v.basis().iter().cloned());
    let mat = DMatrix::from_fn(a.dim, cols.len(), |i, j| cols[j][i]);
    if mat.rank(1e-8) < a.dim {
        return None;
    }
    Some(v)
}

/// Horizontal complement of a vertical subgroup of codimension `k <= n`:
/// an isotropic k-dimensional subspace of the first layer, validated by the
/// splitting constructor.
pub fn horizontal_complement_heis(p: &VerticalSubgroup) -> Result<HomSubgroup, HeisError> {
    if p.codim > p.n {
        return Err(HeisError::CodimTooLarge(p.codim, p.n));
    }
    isotropic_complement(&p.subgroup, p.codim).ok_or_else(|| {
        HeisError::NotVertical("isotropic complement construction failed".to_string())
    })
}

/// Sample the rotational-invariance identity of the distance: the gauge of
/// `(x, y, t)` may depend only on `|(x, y)|` and `t`.
pub fn check_rotational_invariance(dist: &HomDistance, samples: u64, seed: u64) -> f64 {
    let a = &dist.algebra;
    let Some(n) = heis_n(a) else { return f64::INFINITY };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let t = rng.gen_range(-2.0..2.0);
        let h: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = dot(&h, &h).sqrt();
        if r < 1e-9 {
            continue;
        }
        // a second point with the same horizontal length: any point of the
        // sphere |(x,y)| = r, here r * e_direction mixed by a rotation
        let mut h2 = vec![0.0; 2 * n];
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        h2[0] = r * phi.cos();
        h2[n] = r * phi.sin();
        let mut c1 = vec![0.0; a.dim];
        let mut c2 = vec![0.0; a.dim];
        c1[..2 * n].copy_from_slice(&h);
        c2[..2 * n].copy_from_slice(&h2);
        c1[2 * n] = t;
        c2[2 * n] = t;
        let n1 = dist.norm_coords(&c1);
        let n2 = dist.norm_coords(&c2);
        worst = worst.max((n1 - n2).abs() / n1.max(1e-9));
    }
    worst
}

/// The constant relating the spherical measure and the Euclidean-Hausdorff
/// measure on vertical subgroups: the isodiametric-type sup of the Euclidean
/// volume of `P` inside unit-diameter balls. Computed on one representative
/// and revalidated on a rotated one.
pub struct HeisConstant {
    pub n: usize,
    pub k: usize,
    pub value: MeasureEstimate,
}

/// Apply the unitary rotation by `phi` in each `(X_i, Y_i)` plane; a group
/// automorphism and an isometry of every rotationally invariant distance.
fn rotate_vertical(p: &VerticalSubgroup, phi: f64) -> VerticalSubgroup {
    let a = &p.subgroup.algebra;
    let n = p.n;
    let (c, s) = (phi.cos(), phi.sin());
    let rot = |v: &Vec<f64>| -> Vec<f64> {
        let mut out = v.clone();
        for i in 0..n {
            let (x, y) = (v[i], v[n + i]);
            out[i] = c * x - s * y;
            out[n + i] = s * x + c * y;
        }
        out
    };
    let p1: Vec<Vec<f64>> = p.subgroup.layer_basis(1).iter().map(|v| rot(v)).collect();
    vertical_subgroup(a.clone(), &p1).expect("rotation preserves verticality")
}

/// Compute `c(n, k)` for the given rotationally invariant distance.
/// `k = 0` is allowed and refers to the whole group.
pub fn c_constant(
    n: usize,
    k: usize,
    dist: &HomDistance,
    budget: &Budget,
    seed: u64,
) -> Result<HeisConstant, HeisError> {
    let a = dist.algebra.clone();
    let got = heis_n(&a).ok_or_else(|| HeisError::NotHeisenberg(a.name.clone()))?;
    assert_eq!(got, n, "distance algebra must be heis({n})");
    assert!(k <= 2 * n);
    let rot_defect = check_rotational_invariance(dist, 4000, seed);
    if rot_defect > 1e-9 {
        return Err(HeisError::NotRotationallyInvariant(rot_defect));
    }
    let p = coordinate_vertical(a.clone(), k)?;
    // Theta of the spherical normalization is exactly the unit-diameter sup
    // of the Euclidean volume carried by P's orthonormal coordinates
    let first = spherical_normalization(&p.subgroup, dist, budget, seed).theta;
    if k >= 1 {
        let rotated = rotate_vertical(&p, 0.7357);
        let second = spherical_normalization(&rotated.subgroup, dist, budget, seed ^ 0x9e37).theta;
        let z = first.z_against(&second).abs();
        // allow a floor on the combined error: the optimizer is a sup and
        // its replicate spread underestimates systematic error
        let rel = (first.value - second.value).abs() / first.value.max(1e-12);
        if z > 4.0 && rel > 0.03 {
            return Err(HeisError::RepresentativeDisagreement(z));
        }
    }
    Ok(HeisConstant { n, k, value: first })
}

/// Row-Gram Jacobian `sqrt(det(L L^T))` of an l x t matrix; zero exactly
/// when the rows are dependent.
pub fn jru(l: &DMatrix<f64>) -> f64 {
    let gram = l * l.transpose();
    let det = gram.determinant();
    if det <= 0.0 {
        0.0
    } else {
        det.sqrt()
    }
}

/// Closed-form Heisenberg coarea factor `c(n, m+l)/c(n, m) * sqrt(det(L L^T))`
/// for a vertical subgroup of codimension `m` and a morphism to `R^l` given
/// as its matrix on the subgroup's orthonormal basis.
pub fn heis_coarea_factor(
    n: usize,
    m: usize,
    ell: usize,
    restricted: &DMatrix<f64>,
    dist: &HomDistance,
    budget: &Budget,
    seed: u64,
) -> Result<MeasureEstimate, HeisError> {
    if m + ell < 1 || m + ell > n {
        return Err(HeisError::HypothesisViolated(m, ell, n));
    }
    if restricted.nrows() != ell {
        return Err(HeisError::ShapeMismatch(format!(
            "expected {ell} rows, got {}",
            restricted.nrows()
        )));
    }
    let j = jru(restricted);
    if j == 0.0 {
        return Ok(MeasureEstimate::exact(0.0, seed));
    }
    let c_hi = c_constant(n, m + ell, dist, budget, seed)?;
    let c_lo = c_constant(n, m, dist, budget, seed ^ 0xabcd)?;
    let value = c_hi.value.value / c_lo.value.value * j;
    let rel = ((c_hi.value.std_error / c_hi.value.value).powi(2)
        + (c_lo.value.std_error / c_lo.value.value).powi(2))
    .sqrt();
    Ok(MeasureEstimate {
        value,
        std_error: value.abs() * rel,
        samples: c_hi.value.samples + c_lo.value.samples,
        seed,
        flags: Vec::new(),
    })
}

/// Splitting of a Heisenberg group along a vertical subgroup: `W = P`,
/// `V = ` its horizontal complement.
pub fn vertical_splitting(p: &VerticalSubgroup) -> Result<crate::subgroup::Splitting, HeisError> {
    let v = horizontal_complement_heis(p)?;
    Ok(make_splitting(p.subgroup.clone(), v)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::koranyi_norm;
    use crate::spec::builtin;

    fn heis(n: usize) -> Arc<GradedAlgebra> {
        Arc::new(builtin("heis", &[n]).unwrap())
    }

    #[test]
    fn heis_detection() {
        assert_eq!(heis_n(&heis(1)), Some(1));
        assert_eq!(heis_n(&heis(3)), Some(3));
        assert_eq!(heis_n(&builtin("engel", &[]).unwrap()), None);
        assert_eq!(heis_n(&builtin("abelian", &[3]).unwrap()), None);
    }

    #[test]
    fn complement_of_coordinate_vertical_heis1() {
        let a = heis(1);
        let p = coordinate_vertical(a, 1).unwrap();
        let v = horizontal_complement_heis(&p).unwrap();
        assert_eq!(v.top_dim(), 1);
        assert!(vertical_splitting(&p).is_ok());
    }

    #[test]
    fn complement_of_codim2_vertical_heis2_is_isotropic() {
        let a = heis(2);
        let p = coordinate_vertical(a.clone(), 2).unwrap();
        let v = horizontal_complement_heis(&p).unwrap();
        assert_eq!(v.top_dim(), 2);
        for i in 0..2 {
            for j in 0..2 {
                assert!(symplectic_form(&a, &v.basis()[i], &v.basis()[j]).abs() < 1e-10);
            }
        }
        assert!(vertical_splitting(&p).is_ok());
    }

    #[test]
    fn symplectic_pair_kernel_needs_mixed_complement() {
        // P1 = span{X1, Y1} in heis(2): the orthogonal complement span{X2, Y2}
        // is not isotropic, the construction must mix in P1 directions
        let a = heis(2);
        let mut x1 = vec![0.0; 5];
        x1[0] = 1.0;
        let mut y1 = vec![0.0; 5];
        y1[2] = 1.0;
        let p = vertical_subgroup(a.clone(), &[x1, y1]).unwrap();
        assert_eq!(p.codim, 2);
        let v = horizontal_complement_heis(&p).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(symplectic_form(&a, &v.basis()[i], &v.basis()[j]).abs() < 1e-10);
            }
        }
        assert!(vertical_splitting(&p).is_ok());
    }

    #[test]
    fn center_is_not_a_valid_vertical_for_complementation() {
        let a = heis(1);
        let p = vertical_subgroup(a, &[]).unwrap();
        assert_eq!(p.codim, 2);
        assert!(matches!(
            horizontal_complement_heis(&p),
            Err(HeisError::CodimTooLarge(2, 1))
        ));
    }

    #[test]
    fn koranyi_passes_rotational_invariance_exactly() {
        for n in 1..=2 {
            let d = koranyi_norm(heis(n)).unwrap();
            assert!(check_rotational_invariance(&d, 3000, 1) < 1e-12);
        }
    }

    #[test]
    fn jru_values() {
        let one_row = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 0.0, 0.0]);
        assert!((jru(&one_row) - 1.0).abs() < 1e-14);
        // orthogonal rows of norms a, b
        let two = DMatrix::from_row_slice(2, 4, &[3.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!((jru(&two) - 6.0).abs() < 1e-12);
        // dependent rows
        let dep = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 2.0, 4.0, 0.0]);
        assert_eq!(jru(&dep), 0.0);
    }

    #[test]
    fn c_constant_matches_vertical_plane_regression() {
        // c(1,1) is exactly the unit-diameter sup of the plane Lebesgue mass,
        // frozen at 0.10922 from the first heavy-budget computation
        let d = koranyi_norm(heis(1)).unwrap();
        let c = c_constant(1, 1, &d, &Budget::light(), 20260810).unwrap();
        assert!(
            (c.value.value - 0.10922).abs() / 0.10922 < 0.02,
            "c(1,1) = {}",
            c.value.value
        );
    }

    #[test]
    fn c_constant_positive_and_representative_independent() {
        let d = koranyi_norm(heis(2)).unwrap();
        for k in [1, 2] {
            let c = c_constant(2, k, &d, &Budget::light(), 7).unwrap();
            assert!(c.value.value > 0.0, "c(2,{k}) must be positive");
        }
    }

    #[test]
    fn euclidean_degenerate_pipeline_recovers_unit_constant() {
        // the same sup pipeline on a line in the Euclidean plane gives the
        // plain length normalization: a unit-diameter ball meets the line in
        // a segment of length at most (and exactly) one
        let a = Arc::new(builtin("abelian", &[2]).unwrap());
        let d = crate::metric::box_norm(a.clone(), &[1.0]);
        let line = crate::subgroup::make_subgroup(a, &[vec![vec![0.8, 0.6]]]).unwrap();
        let h = spherical_normalization(&line, &d, &Budget::light(), 3);
        assert!((h.theta.value - 1.0).abs() < 0.01, "{}", h.theta.value);
    }

    #[test]
    fn non_rotationally_invariant_distance_rejected() {
        // an anisotropic box gauge on heis(1) is homogeneous but depends on
        // the horizontal direction, so the c-pipeline must refuse it
        let a = heis(1);
        let skew = crate::metric::custom_norm(
            a.clone(),
            Arc::new(|c: &[f64]| {
                let h = ((2.0 * c[0]).powi(2) + c[1] * c[1]).sqrt();
                (h.powi(4) + 16.0 * c[2] * c[2]).sqrt().sqrt()
            }),
            5,
        );
        assert!(matches!(
            c_constant(1, 1, &skew, &Budget::light(), 9),
            Err(HeisError::NotRotationallyInvariant(_))
        ));
    }

    #[test]
    fn coarea_factor_hypothesis_gate() {
        let d = koranyi_norm(heis(1)).unwrap();
        let l = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        // m = 1, l = 1 gives m + l = 2 > n = 1
        assert!(matches!(
            heis_coarea_factor(1, 1, 1, &l, &d, &Budget::light(), 1),
            Err(HeisError::HypothesisViolated(1, 1, 1))
        ));
    }

    #[test]
    fn coarea_factor_zero_map() {
        let d = koranyi_norm(heis(2)).unwrap();
        let l = DMatrix::zeros(1, 4);
        let est = heis_coarea_factor(2, 0, 1, &l, &d, &Budget::light(), 1).unwrap();
        assert_eq!(est.value, 0.0);
    }
}
