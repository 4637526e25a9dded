//! Group arithmetic in exponential coordinates.
//!
//! A graded nilpotent algebra of step at most 4 carries an exact polynomial
//! group law: the Baker-Campbell-Hausdorff series truncates, so
//!
//! ```text
//! p * q = p + q + 1/2 [p,q] + 1/12 ([p,[p,q]] + [q,[q,p]]) - 1/24 [q,[p,[p,q]]]
//! ```
//!
//! is the full product. Inversion is coordinate negation and dilations scale
//! layer-`i` coordinates by `lambda^i`.

use crate::spec::GradedAlgebra;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlgebraError {
    #[error("group law is closed-form only up to step 4, got step {0}")]
    UnsupportedStep(usize),
    #[error("points belong to different algebras")]
    AlgebraMismatch,
}

/// A group element in exponential coordinates.
#[derive(Debug, Clone)]
pub struct Point {
    pub coords: Vec<f64>,
    pub algebra: Arc<GradedAlgebra>,
}

impl Point {
    pub fn new(algebra: Arc<GradedAlgebra>, coords: Vec<f64>) -> Self {
        assert_eq!(coords.len(), algebra.dim, "coordinate length must match dimension");
        Self { coords, algebra }
    }

    pub fn origin(algebra: Arc<GradedAlgebra>) -> Self {
        let n = algebra.dim;
        Self::new(algebra, vec![0.0; n])
    }

    pub fn is_origin(&self, tol: f64) -> bool {
        self.coords.iter().all(|c| c.abs() <= tol)
    }

    /// Euclidean norm of the coordinate vector (not a homogeneous norm).
    pub fn euclidean_norm(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    fn same_algebra(&self, other: &Point) -> bool {
        Arc::ptr_eq(&self.algebra, &other.algebra) || *self.algebra == *other.algebra
    }
}

/// A one-parameter anisotropic dilation `delta_lambda`.
#[derive(Debug, Clone, Copy)]
pub struct Dilation {
    pub lambda: f64,
}

impl Dilation {
    pub fn new(lambda: f64) -> Self {
        assert!(lambda > 0.0, "dilation parameter must be positive");
        Self { lambda }
    }
}

/// BCH product of two points of the same algebra, exact for step <= 4.
pub fn multiply(p: &Point, q: &Point) -> Result<Point, AlgebraError> {
    if !p.same_algebra(q) {
        return Err(AlgebraError::AlgebraMismatch);
    }
    let a = &p.algebra;
    if a.step >= 5 {
        return Err(AlgebraError::UnsupportedStep(a.step));
    }
    let x = &p.coords;
    let y = &q.coords;
    let n = a.dim;

    let mut out: Vec<f64> = (0..n).map(|i| x[i] + y[i]).collect();
    if a.step >= 2 {
        let xy = a.bracket(x, y);
        for i in 0..n {
            out[i] += 0.5 * xy[i];
        }
        if a.step >= 3 {
            let xxy = a.bracket(x, &xy);
            // [y,[y,x]] = [y,-[x,y]] = -[y,[x,y]]
            let yxy = a.bracket(y, &xy);
            for i in 0..n {
                out[i] += (xxy[i] - yxy[i]) / 12.0;
            }
            if a.step >= 4 {
                let yxxy = a.bracket(y, &xxy);
                for i in 0..n {
                    out[i] -= yxxy[i] / 24.0;
                }
            }
        }
    }
    Ok(Point::new(p.algebra.clone(), out))
}

/// Group inverse: coordinate negation.
pub fn inverse(p: &Point) -> Point {
    Point::new(p.algebra.clone(), p.coords.iter().map(|c| -c).collect())
}

/// Apply the dilation: coordinate `i` is scaled by `lambda^layer(i)`.
pub fn dilate(d: Dilation, p: &Point) -> Point {
    let coords = p
        .coords
        .iter()
        .zip(&p.algebra.layer_of)
        .map(|(c, &l)| c * d.lambda.powi(l as i32))
        .collect();
    Point::new(p.algebra.clone(), coords)
}

/// Homogeneous dimension `Q` of the algebra.
pub fn hom_dimension(a: &GradedAlgebra) -> usize {
    a.hom_dimension()
}

/// Conjugation `q^{-1} p q`.
pub fn conjugate(q: &Point, p: &Point) -> Result<Point, AlgebraError> {
    let qi = inverse(q);
    multiply(&multiply(&qi, p)?, q)
}

/// `p^{-1} q`, the displacement entering left-invariant distances.
pub fn left_difference(p: &Point, q: &Point) -> Result<Point, AlgebraError> {
    multiply(&inverse(p), q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::builtin;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn pt(a: &Arc<GradedAlgebra>, coords: &[f64]) -> Point {
        Point::new(a.clone(), coords.to_vec())
    }

    /// Closed-form Heisenberg law, the oracle for BCH on heis(n).
    fn heis_law(x: &[f64], y: &[f64], n: usize) -> Vec<f64> {
        let mut out: Vec<f64> = (0..2 * n + 1).map(|i| x[i] + y[i]).collect();
        let mut t = 0.0;
        for j in 0..n {
            t += x[j] * y[n + j] - y[j] * x[n + j];
        }
        out[2 * n] += 0.5 * t;
        out
    }

    #[test]
    fn heis1_product_matches_group_law() {
        let a = Arc::new(builtin("heis", &[1]).unwrap());
        let p = pt(&a, &[1.0, 0.0, 0.0]);
        let q = pt(&a, &[0.0, 1.0, 0.0]);
        let r = multiply(&p, &q).unwrap();
        assert_eq!(r.coords, vec![1.0, 1.0, 0.5]);
    }

    #[test]
    fn heis_n_bch_equals_closed_form_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=3 {
            let a = Arc::new(builtin("heis", &[n]).unwrap());
            for _ in 0..2000 {
                let x: Vec<f64> = (0..a.dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let y: Vec<f64> = (0..a.dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let got = multiply(&pt(&a, &x), &pt(&a, &y)).unwrap();
                let want = heis_law(&x, &y, n);
                for i in 0..a.dim {
                    assert!((got.coords[i] - want[i]).abs() < 1e-14, "n={n} i={i}");
                }
            }
        }
    }

    #[test]
    fn abelian_product_is_componentwise_addition() {
        let a = Arc::new(builtin("abelian", &[2]).unwrap());
        let r = multiply(&pt(&a, &[1.0, 2.0]), &pt(&a, &[3.0, -4.0])).unwrap();
        assert_eq!(r.coords, vec![4.0, -2.0]);
    }

    #[test]
    fn engel_associativity_on_random_triples() {
        let a = Arc::new(builtin("engel", &[]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let coords = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect()
            };
            let p = pt(&a, &coords(&mut rng));
            let q = pt(&a, &coords(&mut rng));
            let r = pt(&a, &coords(&mut rng));
            let lhs = multiply(&multiply(&p, &q).unwrap(), &r).unwrap();
            let rhs = multiply(&p, &multiply(&q, &r).unwrap()).unwrap();
            let scale = lhs.euclidean_norm().max(1.0);
            for i in 0..4 {
                assert!(
                    (lhs.coords[i] - rhs.coords[i]).abs() / scale < 1e-9,
                    "associativity defect at coordinate {i}"
                );
            }
        }
    }

    #[test]
    fn inverse_is_negation_and_cancels() {
        let a = Arc::new(builtin("heis", &[1]).unwrap());
        let p = pt(&a, &[1.0, 2.0, 3.0]);
        assert_eq!(inverse(&p).coords, vec![-1.0, -2.0, -3.0]);
        assert!(inverse(&Point::origin(a.clone())).is_origin(0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = pt(&a, &[rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]);
            let z = multiply(&p, &inverse(&p)).unwrap();
            assert!(z.is_origin(0.0), "p * p^-1 must be exactly zero, got {:?}", z.coords);
        }
    }

    #[test]
    fn dilation_weights_and_identity() {
        let a = Arc::new(builtin("heis", &[1]).unwrap());
        let p = pt(&a, &[1.0, 1.0, 1.0]);
        assert_eq!(dilate(Dilation::new(2.0), &p).coords, vec![2.0, 2.0, 4.0]);
        assert_eq!(dilate(Dilation::new(1.0), &p).coords, p.coords);
    }

    #[test]
    fn dilation_composition_law() {
        let a = Arc::new(builtin("engel", &[]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = pt(&a, &(0..4).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
            let (l, m) = (rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0));
            let a1 = dilate(Dilation::new(l), &dilate(Dilation::new(m), &p));
            let a2 = dilate(Dilation::new(l * m), &p);
            for i in 0..4 {
                assert!((a1.coords[i] - a2.coords[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dilation_is_group_automorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..=3 {
            let a = Arc::new(builtin("heis", &[n]).unwrap());
            for _ in 0..300 {
                let x: Vec<f64> = (0..a.dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..a.dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let lam = Dilation::new(rng.gen_range(0.2..4.0));
                let lhs = dilate(lam, &multiply(&pt(&a, &x), &pt(&a, &y)).unwrap());
                let rhs = multiply(&dilate(lam, &pt(&a, &x)), &dilate(lam, &pt(&a, &y))).unwrap();
                for i in 0..a.dim {
                    assert!((lhs.coords[i] - rhs.coords[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hom_dimensions() {
        assert_eq!(hom_dimension(&builtin("heis", &[1]).unwrap()), 4);
        assert_eq!(hom_dimension(&builtin("heis", &[2]).unwrap()), 6);
        assert_eq!(hom_dimension(&builtin("abelian", &[5]).unwrap()), 5);
        assert_eq!(hom_dimension(&builtin("engel", &[]).unwrap()), 7);
    }

    #[test]
    fn conjugation_trivial_on_abelian() {
        let a = Arc::new(builtin("abelian", &[3]).unwrap());
        let p = pt(&a, &[1.0, -2.0, 0.5]);
        let q = pt(&a, &[4.0, 4.0, 4.0]);
        assert_eq!(conjugate(&q, &p).unwrap().coords, p.coords);
    }

    #[test]
    fn heis1_conjugation_matches_two_explicit_multiplies() {
        // oracle: q^-1 p q via two applications of the closed-form law;
        // for p = X, q = Y this is p + [p,q] = (1, 0, 1)
        let a = Arc::new(builtin("heis", &[1]).unwrap());
        let q = pt(&a, &[0.0, 1.0, 0.0]);
        let p = pt(&a, &[1.0, 0.0, 0.0]);
        let qi_p = heis_law(&[0.0, -1.0, 0.0], &p.coords, 1);
        let want = heis_law(&qi_p, &q.coords, 1);
        let got = conjugate(&q, &p).unwrap();
        assert_eq!(got.coords, want);
        assert_eq!(got.coords, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn step_five_rejected() {
        let text = "group f5\nstep 5\nlayer 1: A B\nlayer 2: C\nlayer 3: D\nlayer 4: E\nlayer 5: F\n\
                    bracket [A,B] = C\nbracket [A,C] = D\nbracket [A,D] = E\nbracket [A,E] = F\n";
        let a = Arc::new(
            crate::spec::parse_group_spec(&crate::spec::GroupSpecSource::inline(text)).unwrap(),
        );
        let p = Point::origin(a.clone());
        let q = Point::origin(a);
        assert!(matches!(multiply(&p, &q), Err(AlgebraError::UnsupportedStep(5))));
    }

    #[test]
    fn mismatched_algebras_rejected() {
        let a = Arc::new(builtin("heis", &[1]).unwrap());
        let b = Arc::new(builtin("abelian", &[3]).unwrap());
        let p = Point::origin(a);
        let q = Point::origin(b);
        assert!(matches!(multiply(&p, &q), Err(AlgebraError::AlgebraMismatch)));
    }
}
