//! Property suites for the metric axioms of the shape distance: symmetry,
//! the triangle inequality, invariance under isometries and the identity
//! axiom.
//!
//! Every suite is deterministic in `(trials, seed)`. Trial `t` draws from
//! its own ChaCha stream, so trials run in parallel and the verdict (a max
//! of signed residuals) does not depend on scheduling.

use nalgebra::{Matrix2, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::distortion::PLMap;
use crate::error::{Error, Result};
use crate::mesh::{TriMesh, UvLift};
use crate::optimizer::{image_mesh, minimize, random_feasible_map, OptimizerConfig};
use crate::torus::{analytic_distance, sample_torus_mesh, torus_of_mesh, FlatTorus, Unimodular};

pub const SYMMETRY_TOL: f64 = 1e-10;
pub const TRIANGLE_TOL: f64 = 1e-10;
pub const ISOMETRY_TOL: f64 = 1e-12;
pub const SELF_DISTANCE_TOL: f64 = 1e-9;
pub const ISOMETRIC_PAIR_TOL: f64 = 1e-6;
/// Lower bound required of the square/rectangle torus distance.
pub const DISTINCT_LOWER_BOUND: f64 = 0.34;

/// Grid resolution of the random-map fixtures.
pub const FIXTURE_GRID: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyVerdict {
    pub property_name: String,
    pub trials: usize,
    /// Largest signed residual; positive values beyond `tolerance` fail.
    pub worst_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl PropertyVerdict {
    fn from_residuals(name: &str, residuals: &[f64], tolerance: f64) -> Self {
        let worst = residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            property_name: name.to_string(),
            trials: residuals.len(),
            worst_violation: worst,
            tolerance,
            pass: worst <= tolerance,
        }
    }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn fixture_source() -> TriMesh {
    sample_torus_mesh(&FlatTorus::square(), FIXTURE_GRID).expect("valid grid")
}

/// Random oriented lattice with moderate anisotropy.
fn random_target_torus(rng: &mut ChaCha8Rng) -> FlatTorus {
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (s, c) = theta.sin_cos();
    let rot = Matrix2::new(c, -s, s, c);
    let upper = Matrix2::new(
        rng.gen_range(0.7..1.4),
        rng.gen_range(-0.4..0.4),
        0.0,
        rng.gen_range(0.7..1.4),
    );
    FlatTorus::new(rot * upper).expect("positive determinant")
}

/// Image of the fixture source under a random feasible map.
fn random_image(source: &TriMesh, rng: &mut ChaCha8Rng) -> Result<TriMesh> {
    let target = random_target_torus(rng);
    let magnitude = rng.gen_range(0.005..0.04);
    let vars = random_feasible_map(source, &target, magnitude, rng.gen())?;
    image_mesh(source, &vars)
}

fn energy(f: &PLMap<'_>) -> f64 {
    f.energy_total().total
}

/// `|E(f) − E(f⁻¹)| / (1 + E(f))` for one map.
pub fn symmetry_residual(source: &TriMesh, target: &TriMesh) -> Result<f64> {
    let f = PLMap::new(source, target)?;
    let e = energy(&f);
    Ok((e - energy(&f.invert())).abs() / (1.0 + e))
}

/// `E(g∘f) − E(f) − E(g)`; non-positive when the inequality holds.
pub fn triangle_residual(f: &PLMap<'_>, g: &PLMap<'_>) -> Result<f64> {
    let h = f.compose(g)?;
    Ok(energy(&h) - energy(f) - energy(g))
}

/// Symmetry over random maps; trial 0 is the identity map.
pub fn check_symmetry(trials: usize, seed: u64) -> Result<PropertyVerdict> {
    let source = fixture_source();
    let residuals = (0..trials)
        .into_par_iter()
        .map(|t| {
            if t == 0 {
                return symmetry_residual(&source, &source);
            }
            let target = random_image(&source, &mut trial_rng(seed, t))?;
            symmetry_residual(&source, &target)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyVerdict::from_residuals("symmetry", &residuals, SYMMETRY_TOL))
}

/// Symmetry on explicit `(source, target)` pairs.
pub fn check_symmetry_pairs(pairs: &[(&TriMesh, &TriMesh)]) -> Result<PropertyVerdict> {
    let residuals = pairs
        .iter()
        .map(|(s, t)| symmetry_residual(s, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyVerdict::from_residuals("symmetry", &residuals, SYMMETRY_TOL))
}

/// Triangle inequality over random composable pairs `A → B → C`; trial 0
/// composes a random map with its inverse.
pub fn check_triangle(trials: usize, seed: u64) -> Result<PropertyVerdict> {
    let source = fixture_source();
    let residuals = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let b = random_image(&source, &mut rng)?;
            let f = PLMap::new(&source, &b)?;
            if t == 0 {
                return triangle_residual(&f, &f.invert());
            }
            let c = random_image(&source, &mut rng)?;
            let g = PLMap::new(&b, &c)?;
            triangle_residual(&f, &g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyVerdict::from_residuals("triangle", &residuals, TRIANGLE_TOL))
}

/// Triangle inequality with `g = f⁻¹` on explicit pairs.
pub fn check_triangle_pairs(pairs: &[(&TriMesh, &TriMesh)]) -> Result<PropertyVerdict> {
    let residuals = pairs
        .iter()
        .map(|(s, t)| {
            let f = PLMap::new(s, t)?;
            triangle_residual(&f, &f.invert())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyVerdict::from_residuals("triangle", &residuals, TRIANGLE_TOL))
}

/// `i₂ ∘ f ∘ i₁⁻¹` as a map out of `source`, where `i₁` is the grid
/// translation by `(a, b)` cells and `i₂` translates the target lift by
/// `shift`. `source` must be an `n × n` grid from [`sample_torus_mesh`].
pub fn conjugate_by_translations(
    source: &TriMesh,
    target: &TriMesh,
    n: usize,
    cells: [usize; 2],
    shift: Vector2<f64>,
) -> Result<TriMesh> {
    let lift = target
        .lift()
        .ok_or_else(|| Error::Geometry("target has no lift".into()))?;
    if source.num_vertices() != n * n {
        return Err(Error::Geometry(format!("source is not an {n}x{n} grid")));
    }
    // i₁⁻¹ sends grid vertex (i, j) to (i − a, j − b).
    let pre = |w: usize| {
        let (i, j) = (w % n, w / n);
        ((j + n - cells[1] % n) % n) * n + (i + n - cells[0] % n) % n
    };
    let uv: Vec<_> = (0..n * n).map(|w| lift.uv()[pre(w)] + shift).collect();
    let vertices = uv.iter().map(|q| nalgebra::Point3::new(q.x, q.y, 0.0)).collect();
    let new_lift = UvLift::with_min_image_shifts(uv, lift.periods().copied(), source.faces())?;
    TriMesh::new(vertices, source.faces().to_vec(), Some(new_lift))
}

/// Isometry invariance under random grid translations of the source and
/// random translations of the target; trial 0 uses zero translations.
pub fn check_isometry_invariance(trials: usize, seed: u64) -> Result<PropertyVerdict> {
    let n = FIXTURE_GRID;
    let source = fixture_source();
    let residuals = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let target = random_image(&source, &mut rng)?;
            let (cells, shift) = if t == 0 {
                ([0, 0], Vector2::zeros())
            } else {
                (
                    [rng.gen_range(0..n), rng.gen_range(0..n)],
                    Vector2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                )
            };
            let moved = conjugate_by_translations(&source, &target, n, cells, shift)?;
            let e = energy(&PLMap::new(&source, &target)?);
            let e_moved = energy(&PLMap::new(&source, &moved)?);
            Ok((e - e_moved).abs() / (1.0 + e))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyVerdict::from_residuals("isometry_invariance", &residuals, ISOMETRY_TOL))
}

/// Optimizer distance of each mesh to itself.
pub fn check_self_distance(meshes: &[TriMesh], cfg: &OptimizerConfig) -> Result<PropertyVerdict> {
    let residuals = meshes
        .iter()
        .map(|m| Ok(minimize(m, &torus_of_mesh(m)?, &Unimodular::IDENTITY, cfg)?.report.total))
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyVerdict::from_residuals("self_distance", &residuals, SELF_DISTANCE_TOL))
}

/// Optimizer distance on pairs related by an isometry isotopic to the
/// identity.
pub fn check_identity_axiom(pairs: &[(TriMesh, TriMesh)], cfg: &OptimizerConfig) -> Result<PropertyVerdict> {
    let residuals = pairs
        .iter()
        .map(|(source, target)| {
            let torus = torus_of_mesh(target)?;
            Ok(minimize(source, &torus, &Unimodular::IDENTITY, cfg)?.report.total)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PropertyVerdict::from_residuals("identity", &residuals, ISOMETRIC_PAIR_TOL))
}

/// Grid tori over random unit-area lattices.
pub fn self_distance_meshes(trials: usize, seed: u64) -> Result<Vec<TriMesh>> {
    (0..trials)
        .map(|t| {
            let torus = random_target_torus(&mut trial_rng(seed, t)).normalize_unit_area();
            sample_torus_mesh(&torus, FIXTURE_GRID)
        })
        .collect()
}

/// Grid tori over random unit-area lattices, each paired with a rotated and
/// translated copy.
pub fn identity_pairs(trials: usize, seed: u64) -> Result<Vec<(TriMesh, TriMesh)>> {
    (0..trials)
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let torus = random_target_torus(&mut rng).normalize_unit_area();
            let mesh = sample_torus_mesh(&torus, FIXTURE_GRID)?;
            let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), rng.gen_range(0.0..std::f64::consts::TAU));
            let shift = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
            let moved = mesh.rigidly_moved(&rot, shift)?;
            Ok((mesh, moved))
        })
        .collect()
}

/// Falsification side of the identity axiom: the square and the unit-area
/// rectangle `diag(√2, 1/√2)` are not isometric, and both the analytic
/// and the optimizer distance must stay above [`DISTINCT_LOWER_BOUND`].
/// The residual is `bound − min(distance)`.
pub fn check_distinct_positive(cfg: &OptimizerConfig) -> Result<PropertyVerdict> {
    let square = FlatTorus::square();
    let s = std::f64::consts::SQRT_2;
    let rect = FlatTorus::new(Matrix2::new(s, 0.0, 0.0, 1.0 / s))?;
    let analytic = analytic_distance(&square, &rect)?;
    let mesh = sample_torus_mesh(&square, FIXTURE_GRID)?;
    let numeric = minimize(&mesh, &rect, &Unimodular::IDENTITY, cfg)?.report.total;
    let residual = DISTINCT_LOWER_BOUND - analytic.min(numeric);
    Ok(PropertyVerdict::from_residuals("distinct_positive", &[residual], 0.0))
}

/// Self-distance, distance between isometric copies, and positivity on a
/// non-isometric pair.
pub fn check_identity(trials: usize, seed: u64, cfg: &OptimizerConfig) -> Result<Vec<PropertyVerdict>> {
    Ok(vec![
        check_self_distance(&self_distance_meshes(trials, seed)?, cfg)?,
        check_identity_axiom(&identity_pairs(trials, seed)?, cfg)?,
        check_distinct_positive(cfg)?,
    ])
}
