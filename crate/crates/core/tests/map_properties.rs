mod common;

use common::{brute_singular_values, random_torus};
use nalgebra::{Point3, Rotation3, Vector2, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shapedist::optimizer::{image_mesh, random_feasible_map};
use shapedist::{sample_torus_mesh, FlatTorus, PLMap, TriMesh, UvLift};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

/// Image of an `n × n` square torus grid under a random map into a random
/// torus.
fn random_image(source: &TriMesh, seed: u64, magnitude: f64) -> TriMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = random_torus(&mut rng);
    let vars = random_feasible_map(source, &target, magnitude, seed).unwrap();
    image_mesh(source, &vars).unwrap()
}

fn revolution_torus(n: usize, m: usize, stretch: [f64; 3]) -> TriMesh {
    let (big, small) = (2.0, 0.7);
    let mut vertices = Vec::new();
    for i in 0..n {
        let u = std::f64::consts::TAU * i as f64 / n as f64;
        for j in 0..m {
            let v = std::f64::consts::TAU * j as f64 / m as f64;
            let rho = big + small * v.cos();
            vertices.push(Point3::new(
                stretch[0] * rho * u.cos(),
                stretch[1] * rho * u.sin(),
                stretch[2] * small * v.sin(),
            ));
        }
    }
    let idx = |i: usize, j: usize| (i % n) * m + (j % m);
    let mut faces = Vec::new();
    for i in 0..n {
        for j in 0..m {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriMesh::new(vertices, faces, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inverse_swaps_and_inverts_singular_values(seed in any::<u64>(), n in 2usize..7, mag in 0.0f64..0.05) {
        let a = sample_torus_mesh(&FlatTorus::square(), n).unwrap();
        let b = random_image(&a, seed, mag);
        let f = PLMap::new(&a, &b).unwrap();
        let g = f.invert();
        for (x, y) in f.face_distortions().iter().zip(g.face_distortions()) {
            prop_assert!(rel(y.lambda1, 1.0 / x.lambda2) <= 1e-12);
            prop_assert!(rel(y.lambda2, 1.0 / x.lambda1) <= 1e-12);
        }
        let (ef, eg) = (f.energy_total(), g.energy_total());
        prop_assert!((ef.e1 - eg.e1).abs() <= 1e-10 * (1.0 + ef.e1));
        prop_assert!((ef.e2 - eg.e2).abs() <= 1e-10 * (1.0 + ef.e2));
    }

    #[test]
    fn composition_bounds_and_subadditivity(seed in any::<u64>(), n in 2usize..7) {
        let a = sample_torus_mesh(&FlatTorus::square(), n).unwrap();
        let b = random_image(&a, seed, 0.04);
        let c = random_image(&a, seed.wrapping_add(1), 0.04);
        let f = PLMap::new(&a, &b).unwrap();
        let g = PLMap::new(&b, &c).unwrap();
        let h = f.compose(&g).unwrap();
        let fd = f.face_distortions();
        let gd = g.face_distortions();
        for (k, hd) in h.face_distortions().iter().enumerate() {
            let (l1, l2) = (fd[k].lambda1, fd[k].lambda2);
            let (m1, m2) = (gd[k].lambda1, gd[k].lambda2);
            prop_assert!(hd.lambda2 > 0.0);
            prop_assert!(l2 * m2 <= hd.lambda2 * (1.0 + 1e-12));
            prop_assert!(hd.lambda2 <= hd.lambda1);
            prop_assert!(hd.lambda1 <= l1 * m1 * (1.0 + 1e-12));
            let product = g.face_differential(k) * f.face_differential(k);
            let diff = (product - h.face_differential(k)).abs().max();
            prop_assert!(diff <= 1e-12 * product.abs().max());
        }
        let (ef, eg, eh) = (f.energy_total(), g.energy_total(), h.energy_total());
        prop_assert!(eh.e1 <= ef.e1 + eg.e1 + 1e-10);
        prop_assert!(eh.e2 <= ef.e2 + eg.e2 + 1e-12);
    }

    #[test]
    fn pushed_forward_area_is_target_area(seed in any::<u64>(), n in 2usize..9, mag in 0.0f64..0.05) {
        let a = sample_torus_mesh(&FlatTorus::square(), n).unwrap();
        let b = random_image(&a, seed, mag);
        let report = PLMap::new(&a, &b).unwrap().energy_total();
        prop_assert!(rel(report.pushed_forward_area(&a), b.total_area()) <= 1e-9);
    }

    #[test]
    fn face_relations_hold(seed in any::<u64>()) {
        let a = sample_torus_mesh(&FlatTorus::square(), 4).unwrap();
        let b = random_image(&a, seed, 0.05);
        let f = PLMap::new(&a, &b).unwrap();
        for (k, fd) in f.face_distortions().iter().enumerate() {
            let (s1, s2) = brute_singular_values(&f.face_differential(k));
            prop_assert!(rel(fd.lambda1, s1) <= 1e-12 && rel(fd.lambda2, s2) <= 1e-12);
            prop_assert!(rel(fd.lambda1, (fd.jacobian * fd.dilatation).sqrt()) <= 1e-12);
            prop_assert!(rel(fd.lambda2, (fd.jacobian / fd.dilatation).sqrt()) <= 1e-12);
            let k_ratio = fd.dilatation;
            prop_assert!((fd.beltrami_mod - (k_ratio - 1.0) / (k_ratio + 1.0)).abs() <= 1e-12);
        }
    }
}

#[test]
fn rigid_motions_do_not_change_energies() {
    let a = revolution_torus(12, 9, [1.0, 1.0, 1.0]);
    let b = revolution_torus(12, 9, [1.3, 0.9, 1.1]);
    let base = PLMap::new(&a, &b).unwrap().energy_total();
    assert!(base.total > 0.05);
    let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
    let shift = Vector3::new(4.0, -1.0, 0.5);
    let a_moved = a.rigidly_moved(&rot, shift).unwrap();
    let b_moved = b.rigidly_moved(&rot.inverse(), -shift).unwrap();
    for (s, t) in [(&a_moved, &b), (&a, &b_moved), (&a_moved, &b_moved)] {
        let e = PLMap::new(s, t).unwrap().energy_total();
        assert!((e.e1 - base.e1).abs() <= 1e-12 * (1.0 + base.e1));
        assert!((e.e2 - base.e2).abs() <= 1e-12 * (1.0 + base.e2));
    }
    let iso = PLMap::new(&a, &a_moved).unwrap().energy_total();
    assert!(iso.total <= 1e-12);
}

#[test]
fn energies_do_not_depend_on_thread_count() {
    let a = sample_torus_mesh(&FlatTorus::square(), 24).unwrap();
    let b = random_image(&a, 5, 0.05);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let r = PLMap::new(&a, &b).unwrap().energy_total();
            (r.e1.to_bits(), r.e2.to_bits(), r.dirichlet.to_bits())
        })
    };
    let single = run(1);
    for threads in [2, 3, 8] {
        assert_eq!(run(threads), single);
    }
}

/// Image of a square grid under `(x, y) ↦ (x + a·sin(2πy)/2π, y)`, whose
/// differential `[[1, a·cos 2πy], [0, 1]]` has sup of ½ log K equal to
/// `asinh(a/2)` at `y = 0`.
fn smooth_shear_image(source: &TriMesh, a: f64) -> TriMesh {
    let lift = source.lift().unwrap();
    let tau = std::f64::consts::TAU;
    let uv: Vec<_> = lift
        .uv()
        .iter()
        .map(|q| Vector2::new(q.x + a * (tau * q.y).sin() / tau, q.y))
        .collect();
    let vertices = uv.iter().map(|q| Point3::new(q.x, q.y, 0.0)).collect();
    let moved = UvLift::new(uv, lift.periods().copied(), lift.shifts().to_vec());
    TriMesh::new(vertices, source.faces().to_vec(), Some(moved)).unwrap()
}

#[test]
fn discrete_sup_converges_under_refinement() {
    let a: f64 = 0.5;
    let smooth_sup = (0.5 * a).asinh();
    let mut previous_gap = f64::INFINITY;
    for n in [8, 16, 32, 64] {
        let source = sample_torus_mesh(&FlatTorus::square(), n).unwrap();
        let image = smooth_shear_image(&source, a);
        let e2 = PLMap::new(&source, &image).unwrap().energy_e2();
        let gap = smooth_sup - e2;
        assert!(gap >= -1e-12, "n = {n}: discrete max {e2} above the smooth sup {smooth_sup}");
        assert!(gap < previous_gap, "n = {n}: gap {gap} did not shrink from {previous_gap}");
        previous_gap = gap;
    }
    assert!(previous_gap <= 1e-3, "gap at n = 64 is {previous_gap}");
}
