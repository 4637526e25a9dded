//! Bundled verification scenarios shared by the CLI and the acceptance
//! suite. Each builder fixes the group, the distances, the slicing data and
//! the windows; only seeds and budgets vary per run.

use crate::algebra::Point;
use crate::graphs::C1hFunction;
use crate::measures::CoareaScenario;
use crate::metric::{box_norm, koranyi_norm, HomDistance};
use crate::spec::{builtin, GradedAlgebra};
use crate::subgroup::{hom_morphism, make_splitting, make_subgroup, HomMorphism, Splitting};
use nalgebra::DMatrix;
use std::sync::Arc;

pub fn heis(n: usize) -> Arc<GradedAlgebra> {
    Arc::new(builtin("heis", &[n]).unwrap())
}

pub fn abelian(n: usize) -> Arc<GradedAlgebra> {
    Arc::new(builtin("abelian", &[n]).unwrap())
}

pub fn euclidean(n: usize) -> HomDistance {
    box_norm(abelian(n), &[1.0])
}

/// Coordinate-row morphism `p -> (p_{i_1}, ..., p_{i_l})` into `R^l`.
pub fn row_morphism(a: Arc<GradedAlgebra>, rows: &[Vec<f64>]) -> HomMorphism {
    let target = abelian(rows.len());
    let mut m = DMatrix::zeros(rows.len(), a.dim);
    for (r, row) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            m[(r, c)] = *v;
        }
    }
    hom_morphism(m, a, target).expect("rows must define a homogeneous morphism")
}

/// Smooth compactly supported weight: a product of quartic bumps of the
/// given half-width per coordinate, centered at the origin.
pub fn bump_weight(radius: f64, dim: usize) -> Arc<dyn Fn(&Point) -> f64 + Send + Sync> {
    Arc::new(move |p: &Point| {
        let mut out = 1.0;
        for &c in p.coords.iter().take(dim) {
            let z = c / radius;
            if z.abs() >= 1.0 {
                return 0.0;
            }
            out *= (1.0 - z * z).powi(2);
        }
        out
    })
}

/// Splitting of heis(1) along the vertical plane `{x = 0}` with the x-axis
/// as the horizontal complement.
pub fn heis1_x_splitting() -> Splitting {
    let a = heis(1);
    let w = make_subgroup(
        a.clone(),
        &[vec![vec![0.0, 1.0, 0.0]], vec![vec![0.0, 0.0, 1.0]]],
    )
    .unwrap();
    let v = make_subgroup(a, &[vec![vec![1.0, 0.0, 0.0]]]).unwrap();
    make_splitting(w, v).unwrap()
}

/// Codimension-zero slicing of a heis(1) box by the vertical planes
/// `{x = s}`: the slices of `u = x`.
pub fn heis1_plane_slice() -> CoareaScenario {
    let a = heis(1);
    let dist = koranyi_norm(a.clone()).unwrap();
    let u = C1hFunction::from_morphism(&row_morphism(a.clone(), &[vec![1.0, 0.0, 0.0]]));
    CoareaScenario {
        algebra: a.clone(),
        dist,
        ldist: euclidean(1),
        mdist: None,
        u,
        f: None,
        sigma_splitting: None,
        sigma_domain: vec![(-0.5, 0.5), (-0.5, 0.5), (-0.5, 0.5)],
        h: bump_weight(0.42, 3),
        slice_splitting: Some(heis1_x_splitting()),
        slice_domain: vec![(-0.8, 0.8), (-0.8, 0.8)],
        s_cells: 16,
    }
}

/// Codimension-one surface `{x1 = 0}` in heis(2), sliced by `u = x2`
/// (the `m = l = 1` case of the Heisenberg hypothesis `m + l <= n`).
pub fn heis2_vertical_slice() -> CoareaScenario {
    let a = heis(2);
    let dist = koranyi_norm(a.clone()).unwrap();
    let f_m = row_morphism(a.clone(), &[vec![1.0, 0.0, 0.0, 0.0, 0.0]]);
    let u_m = row_morphism(a.clone(), &[vec![0.0, 1.0, 0.0, 0.0, 0.0]]);
    let f = C1hFunction::from_morphism(&f_m);
    let u = C1hFunction::from_morphism(&u_m);

    // Sigma = {x1 = 0} as a graph over itself, complement the x1-axis
    let w = make_subgroup(
        a.clone(),
        &[
            vec![
                vec![0.0, 1.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0, 0.0],
            ],
            vec![vec![0.0, 0.0, 0.0, 0.0, 1.0]],
        ],
    )
    .unwrap();
    let v = make_subgroup(a.clone(), &[vec![vec![1.0, 0.0, 0.0, 0.0, 0.0]]]).unwrap();
    let sigma_splitting = make_splitting(w, v).unwrap();

    // slices live over W' = {x1 = x2 = 0} with the horizontal complement
    // span{X1, X2}
    let wp = make_subgroup(
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
    let vp = make_subgroup(
        a.clone(),
        &[vec![
            vec![1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0, 0.0],
        ]],
    )
    .unwrap();
    let slice_splitting = make_splitting(wp, vp).unwrap();

    CoareaScenario {
        algebra: a.clone(),
        dist,
        ldist: euclidean(1),
        mdist: Some(euclidean(1)),
        u,
        f: Some(f),
        sigma_splitting: Some(sigma_splitting),
        sigma_domain: vec![(-0.5, 0.5); 4],
        h: bump_weight(0.42, 5),
        slice_splitting: Some(slice_splitting),
        slice_domain: vec![(-0.8, 0.8); 3],
        s_cells: 14,
    }
}

/// The nonexistence branch: `u = (x, y)` on a surface in heis(1). The
/// restricted differential has rank 1 < 2 everywhere, so the coarea factor
/// vanishes identically and both sides of the identity are null.
pub fn heis1_xy_degenerate() -> CoareaScenario {
    let a = heis(1);
    let dist = koranyi_norm(a.clone()).unwrap();
    let u = C1hFunction::from_morphism(&row_morphism(
        a.clone(),
        &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
    ));
    let f = C1hFunction::from_morphism(&row_morphism(a.clone(), &[vec![1.0, 0.0, 0.0]]));
    CoareaScenario {
        algebra: a.clone(),
        dist,
        ldist: euclidean(2),
        mdist: Some(euclidean(1)),
        u,
        f: Some(f),
        sigma_splitting: Some(heis1_x_splitting()),
        sigma_domain: vec![(-0.5, 0.5), (-0.5, 0.5)],
        h: bump_weight(0.42, 3),
        slice_splitting: None,
        slice_domain: vec![(-0.8, 0.8)],
        s_cells: 8,
    }
}

/// Hypothesis violation on purpose: slicing the full heis(1) box by
/// `u = (x, y)` (codimension zero). The differential is surjective but its
/// kernel, the center, admits no complement.
pub fn heis1_xy_full_box() -> CoareaScenario {
    let a = heis(1);
    let dist = koranyi_norm(a.clone()).unwrap();
    let u = C1hFunction::from_morphism(&row_morphism(
        a.clone(),
        &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
    ));
    CoareaScenario {
        algebra: a.clone(),
        dist,
        ldist: euclidean(2),
        mdist: None,
        u,
        f: None,
        sigma_splitting: None,
        sigma_domain: vec![(-0.5, 0.5); 3],
        h: bump_weight(0.42, 3),
        slice_splitting: None,
        slice_domain: vec![(-0.8, 0.8)],
        s_cells: 8,
    }
}

/// The curved level set `{x + t = 0}` in heis(1) represented over two
/// distinct splittings; the surface integral must not depend on the choice.
pub struct SplittingInvariance {
    pub f: C1hFunction,
    pub dist: HomDistance,
    pub target_dist: HomDistance,
    pub splittings: [Splitting; 2],
    pub domains: [Vec<(f64, f64)>; 2],
    pub h: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
}

pub fn heis1_splitting_invariance() -> SplittingInvariance {
    let a = heis(1);
    let t = abelian(1);
    let f = C1hFunction::new(
        a.clone(),
        t.clone(),
        Arc::new({
            let t = t.clone();
            move |p: &Point| Point::new(t.clone(), vec![p.coords[0] + p.coords[2]])
        }),
    );

    let s1 = heis1_x_splitting();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let w2 = make_subgroup(
        a.clone(),
        &[vec![vec![-r, r, 0.0]], vec![vec![0.0, 0.0, 1.0]]],
    )
    .unwrap();
    let v2 = make_subgroup(a.clone(), &[vec![vec![r, r, 0.0]]]).unwrap();
    let s2 = make_splitting(w2, v2).unwrap();

    SplittingInvariance {
        f,
        dist: koranyi_norm(a).unwrap(),
        target_dist: euclidean(1),
        splittings: [s1, s2],
        domains: [vec![(-0.7, 0.7), (-0.7, 0.7)], vec![(-0.7, 0.7), (-0.7, 0.7)]],
        h: bump_weight(0.3, 3),
    }
}

/// One linear-window instance for the area oracle: a subgroup graph and the
/// data needed to measure the same window two independent ways.
pub struct LinearWindow {
    pub name: String,
    pub algebra: Arc<GradedAlgebra>,
    pub dist: HomDistance,
    pub target_dist: HomDistance,
    pub defining: HomMorphism,
    pub splitting: Splitting,
    pub domain: Vec<(f64, f64)>,
}

/// Five subgroup-graph windows across heis(1) and heis(2).
pub fn linear_windows() -> Vec<LinearWindow> {
    let mut out = Vec::new();
    let a1 = heis(1);
    let d1 = koranyi_norm(a1.clone()).unwrap();
    for (name, row) in [
        ("heis1-x", vec![1.0, 0.0, 0.0]),
        ("heis1-tilt", vec![1.0, 0.4, 0.0]),
        ("heis1-steep", vec![1.0, -0.8, 0.0]),
    ] {
        out.push(LinearWindow {
            name: name.to_string(),
            algebra: a1.clone(),
            dist: d1.clone(),
            target_dist: euclidean(1),
            defining: row_morphism(a1.clone(), &[row]),
            splitting: heis1_x_splitting(),
            domain: vec![(-0.5, 0.5), (-0.5, 0.5)],
        });
    }

    let a2 = heis(2);
    let d2 = koranyi_norm(a2.clone()).unwrap();
    let w = make_subgroup(
        a2.clone(),
        &[
            vec![
                vec![0.0, 1.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0, 0.0],
            ],
            vec![vec![0.0, 0.0, 0.0, 0.0, 1.0]],
        ],
    )
    .unwrap();
    let v = make_subgroup(a2.clone(), &[vec![vec![1.0, 0.0, 0.0, 0.0, 0.0]]]).unwrap();
    let split2 = make_splitting(w, v).unwrap();
    for (name, row) in [
        ("heis2-x1", vec![1.0, 0.0, 0.0, 0.0, 0.0]),
        ("heis2-mixed", vec![1.0, 0.3, -0.2, 0.5, 0.0]),
    ] {
        out.push(LinearWindow {
            name: name.to_string(),
            algebra: a2.clone(),
            dist: d2.clone(),
            target_dist: euclidean(1),
            defining: row_morphism(a2.clone(), &[row]),
            splitting: split2.clone(),
            domain: vec![(-0.5, 0.5); 4],
        });
    }
    out
}
