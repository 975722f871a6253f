//! Numerical minimization of `E = E1 + E2` over PL maps between flat
//! tori in a fixed homotopy class.
//!
//! The unknowns are the lifted images of the source vertices. A corner of
//! a face that carries lattice shift `k` in the source lift is placed at
//! `x[v] + T·k`, where `T` is the target lattice basis composed with the
//! class matrix, so every candidate stays in the prescribed class.
//!
//! `E2` is a max over faces; it is replaced by an area-weighted power mean
//! of `log K` with exponents increasing across continuation stages. Both
//! the square root in `E1` and the per-face `log K` are smoothed with
//! `√(x² + δ²) − δ`, since each has a kink where the map is locally an
//! isometry. A relative log-barrier on the Jacobians (zero where `J` is
//! uniform) keeps iterates inside the orientation-preserving region.
//! Reported energies are always the exact, nonsmooth ones.
//!
//! Each stage runs L-BFGS whose initial inverse Hessian is the inverse
//! P1 stiffness matrix of the source, so iteration counts do not grow
//! with mesh resolution.

use std::collections::VecDeque;

use nalgebra::{Matrix2, Point3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortion::{EnergyReport, PLMap};
use crate::error::{Error, Result};
use crate::mesh::{TriMesh, UvLift};
use crate::svd::{conformal_split, det2};
use crate::torus::{FlatTorus, Unimodular};

/// Free variables of a PL torus map.
#[derive(Clone, Debug, PartialEq)]
pub struct MapVariables {
    pub uv_images: Vec<Vector2<f64>>,
    /// Target lattice basis composed with the class matrix.
    pub monodromy: Matrix2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub p_schedule: Vec<f64>,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub barrier_weight: f64,
    /// Factor applied to the barrier weight after each stage.
    pub barrier_decay: f64,
    /// Smoothing scale of the two nonsmooth terms: `E1` is replaced by
    /// `√(S + δ²) − δ` with `δ = smoothing·√(source area)`, and each face's
    /// `log K` by `√(log²K + smoothing²) − smoothing`.
    pub smoothing: f64,
    /// Number of L-BFGS correction pairs.
    pub memory: usize,
    /// Extra runs from randomly perturbed starts; the best result is kept.
    pub restarts: usize,
    /// Perturbation magnitude of restarts.
    pub restart_magnitude: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            p_schedule: vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            grad_tol: 1e-8,
            max_iters: 500,
            barrier_weight: 1e-3,
            barrier_decay: 0.1,
            smoothing: 1e-3,
            memory: 8,
            restarts: 0,
            restart_magnitude: 0.02,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_schedule.is_empty() {
            return Err(Error::Config("p_schedule is empty".into()));
        }
        if self.p_schedule[0] < 1.0 || self.p_schedule.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "p_schedule must be strictly increasing and start at >= 1".into(),
            ));
        }
        let positive = [
            ("grad_tol", self.grad_tol),
            ("barrier_decay", self.barrier_decay),
            ("smoothing", self.smoothing),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.barrier_weight >= 0.0) || !(self.restart_magnitude >= 0.0) {
            return Err(Error::Config("weights must be non-negative".into()));
        }
        if self.memory == 0 {
            return Err(Error::Config("memory must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameters of one continuation stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageParams {
    pub p: f64,
    pub barrier_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRecord {
    pub p: f64,
    pub barrier_weight: f64,
    pub iterations: usize,
    pub start_energy: f64,
    pub end_energy: f64,
    /// Exact `E1 + E2` at the end of the stage.
    pub true_energy: f64,
    pub grad_norm: f64,
    pub converged: bool,
    /// Surrogate energy after every accepted iteration, starting point included.
    pub energies: Vec<f64>,
}

/// Area-weighted power mean `(Σ wᵢ vᵢᵖ / Σ wᵢ)^{1/p}` of non-negative
/// values, evaluated with the maximum factored out.
pub fn smoothed_max(values: &[f64], weights: &[f64], p: f64) -> f64 {
    let vmax = values.iter().copied().fold(0.0, f64::max);
    if vmax == 0.0 {
        return 0.0;
    }
    let wsum: f64 = weights.iter().sum();
    let acc: f64 = values.iter().zip(weights).map(|(v, w)| w * (v / vmax).powf(p)).sum();
    vmax * (acc / wsum).powf(1.0 / p)
}

/// Neumaier summation. Near a minimum the energy decrease of a step is
/// far below the rounding error of a plain sum over thousands of faces.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Per-face quantities needed for the energy and its gradient.
struct FaceEval {
    d: Matrix2<f64>,
    jacobian: f64,
    q: f64,
    r: f64,
    /// `√(log²K + η²) − η`
    soft_log_k: f64,
    /// derivative of `soft_log_k` with respect to `log K`
    soft_slope: f64,
}

/// Surrogate objective for PL maps from a lifted torus mesh.
#[derive(Clone, Debug)]
pub struct Objective {
    faces: Vec<[usize; 3]>,
    offsets: Vec<[Vector2<f64>; 3]>,
    source_inv: Vec<Matrix2<f64>>,
    areas: Vec<f64>,
    source_area: f64,
    mean_jacobian: f64,
    e1_delta: f64,
    log_k_delta: f64,
    stiffness: Stiffness,
    num_vertices: usize,
    pinned: usize,
}

impl Objective {
    /// `monodromy` is the target lattice basis (class applied). The source
    /// must carry a lift with lattice periods.
    pub fn new(source: &TriMesh, monodromy: Matrix2<f64>, smoothing: f64) -> Result<Self> {
        let lift = source
            .lift()
            .filter(|l| l.periods().is_some())
            .ok_or_else(|| Error::Geometry("optimization needs a torus mesh with a periodic lift".into()))?;
        let target_area = monodromy.determinant();
        if !(target_area > 0.0) {
            return Err(Error::DegenerateLattice { det: target_area });
        }
        let mut offsets = Vec::with_capacity(source.num_faces());
        let mut source_inv = Vec::with_capacity(source.num_faces());
        let mut areas = Vec::with_capacity(source.num_faces());
        for (f, s) in lift.shifts().iter().enumerate() {
            offsets.push(s.map(|k| monodromy * Vector2::new(k[0] as f64, k[1] as f64)));
            let [q0, q1, q2] = source.lifted_corners(f).expect("lift present");
            let m = Matrix2::from_columns(&[q1 - q0, q2 - q0]);
            source_inv.push(m.try_inverse().ok_or_else(|| {
                Error::Geometry(format!("face {f} is degenerate in the lift"))
            })?);
            areas.push(0.5 * m.determinant());
        }
        let source_area: f64 = areas.iter().sum();
        let faces = source.faces().to_vec();
        let stiffness = Stiffness::new(&faces, &source_inv, &areas, source.num_vertices(), 0);
        Ok(Self {
            faces,
            stiffness,
            offsets,
            source_inv,
            areas,
            source_area,
            mean_jacobian: target_area / source_area,
            e1_delta: smoothing * source_area.sqrt(),
            log_k_delta: smoothing,
            num_vertices: source.num_vertices(),
            pinned: 0,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    /// Index of the vertex whose image is held fixed (translation gauge).
    pub fn pinned_vertex(&self) -> usize {
        self.pinned
    }

    fn face_eval(&self, x: &[Vector2<f64>], f: usize) -> Result<FaceEval> {
        let [a, b, c] = self.faces[f];
        let o = &self.offsets[f];
        let y0 = x[a] + o[0];
        let t = Matrix2::from_columns(&[x[b] + o[1] - y0, x[c] + o[2] - y0]);
        let d = t * self.source_inv[f];
        let jacobian = det2(&d);
        if !(jacobian > 0.0) || !jacobian.is_finite() {
            return Err(Error::InfeasiblePoint { face: f, jacobian });
        }
        let (q, r) = conformal_split(&d);
        let log_k = 2.0 * (r / q).atanh();
        let eta = self.log_k_delta;
        let hyp = log_k.hypot(eta);
        Ok(FaceEval {
            d,
            jacobian,
            q,
            r,
            soft_log_k: if hyp > 0.0 { log_k * log_k / (hyp + eta) } else { 0.0 },
            soft_slope: if hyp > 0.0 { log_k / hyp } else { 0.0 },
        })
    }

    fn evaluate(
        &self,
        x: &[Vector2<f64>],
        params: StageParams,
        want_grad: bool,
    ) -> Result<(f64, Option<Vec<Vector2<f64>>>)> {
        if x.len() != self.num_vertices {
            return Err(Error::Config(format!(
                "expected {} vertex images, got {}",
                self.num_vertices,
                x.len()
            )));
        }
        let evals = (0..self.faces.len())
            .into_par_iter()
            .map(|f| self.face_eval(x, f))
            .collect::<Result<Vec<_>>>()?;

        let jbar = self.mean_jacobian;
        let mut defect = CompensatedSum::default();
        let mut barrier = CompensatedSum::default();
        let mut lmax = 0.0f64;
        for (fe, &a) in evals.iter().zip(&self.areas) {
            let s = fe.jacobian.sqrt();
            let t = (1.0 - fe.jacobian) / (1.0 + s);
            defect.add(a * t * t);
            let u = (fe.jacobian - jbar) / jbar;
            barrier.add(a * (u - u.ln_1p()));
            lmax = lmax.max(fe.soft_log_k);
        }
        let (defect, barrier) = (defect.value(), barrier.value());
        let root = (defect + self.e1_delta * self.e1_delta).sqrt();
        let e1 = defect / (root + self.e1_delta);
        let p = params.p;
        let mean = if lmax > 0.0 {
            let mut acc = CompensatedSum::default();
            for (fe, &a) in evals.iter().zip(&self.areas) {
                acc.add(a * (fe.soft_log_k / lmax).powf(p));
            }
            lmax * (acc.value() / self.source_area).powf(1.0 / p)
        } else {
            0.0
        };
        let value = e1 + 0.5 * mean + params.barrier_weight * barrier;
        if !want_grad {
            return Ok((value, None));
        }

        let face_grads: Vec<Matrix2<f64>> = evals
            .par_iter()
            .zip(self.areas.par_iter())
            .zip(self.source_inv.par_iter())
            .map(|((fe, &a), b)| {
                let j = fe.jacobian;
                let s = j.sqrt();
                let d_dj = -a * (1.0 - s) / s / (2.0 * root)
                    + params.barrier_weight * a * (1.0 / jbar - 1.0 / j);
                let d = &fe.d;
                let mut g = Matrix2::new(d[(1, 1)], -d[(1, 0)], -d[(0, 1)], d[(0, 0)]) * d_dj;
                if mean > 0.0 && fe.r > 0.0 {
                    let d_dl =
                        0.5 * a * (fe.soft_log_k / mean).powf(p - 1.0) / self.source_area * fe.soft_slope;
                    let d_dq = d_dl * (-2.0 * fe.r / j);
                    let d_dr = d_dl * (2.0 * fe.q / j);
                    let (ee, ff) = (0.5 * (d[(0, 0)] + d[(1, 1)]), 0.5 * (d[(0, 0)] - d[(1, 1)]));
                    let (gg, hh) = (0.5 * (d[(1, 0)] + d[(0, 1)]), 0.5 * (d[(1, 0)] - d[(0, 1)]));
                    let (g_e, g_h) = (d_dq * ee / fe.q, d_dq * hh / fe.q);
                    let (g_f, g_g) = (d_dr * ff / fe.r, d_dr * gg / fe.r);
                    g += Matrix2::new(
                        0.5 * (g_e + g_f),
                        0.5 * (g_g - g_h),
                        0.5 * (g_g + g_h),
                        0.5 * (g_e - g_f),
                    );
                }
                g * b.transpose()
            })
            .collect();

        let mut grad = vec![Vector2::zeros(); self.num_vertices];
        for (face, g) in self.faces.iter().zip(&face_grads) {
            let c1 = g.column(0).into_owned();
            let c2 = g.column(1).into_owned();
            grad[face[1]] += c1;
            grad[face[2]] += c2;
            grad[face[0]] -= c1 + c2;
        }
        grad[self.pinned] = Vector2::zeros();
        Ok((value, Some(grad)))
    }

    /// `E1 + ½·(power mean of log K) + barrier`. Fails on non-positive Jacobians.
    pub fn surrogate_energy(&self, vars: &MapVariables, params: StageParams) -> Result<f64> {
        Ok(self.evaluate(&vars.uv_images, params, false)?.0)
    }

    /// Exact gradient of [`Objective::surrogate_energy`] with respect to the
    /// vertex images; the pinned vertex has zero gradient.
    pub fn gradient(&self, vars: &MapVariables, params: StageParams) -> Result<Vec<Vector2<f64>>> {
        Ok(self.evaluate(&vars.uv_images, params, true)?.1.expect("gradient requested"))
    }

    pub fn value_and_gradient(
        &self,
        vars: &MapVariables,
        params: StageParams,
    ) -> Result<(f64, Vec<Vector2<f64>>)> {
        let (v, g) = self.evaluate(&vars.uv_images, params, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    fn feasible(&self, x: &[Vector2<f64>]) -> Result<()> {
        (0..self.faces.len()).try_for_each(|f| self.face_eval(x, f).map(|_| ()))
    }
}

/// Target mesh whose lift is the image of `vars`, with the source's
/// connectivity and seam shifts and periods equal to the monodromy.
pub fn image_mesh(source: &TriMesh, vars: &MapVariables) -> Result<TriMesh> {
    let lift = source
        .lift()
        .ok_or_else(|| Error::Geometry("source mesh has no lift".into()))?;
    let vertices = vars.uv_images.iter().map(|q| Point3::new(q.x, q.y, 0.0)).collect();
    let image_lift = UvLift::new(vars.uv_images.clone(), Some(vars.monodromy), lift.shifts().to_vec());
    TriMesh::new(vertices, source.faces().to_vec(), Some(image_lift))
}

fn source_lift_periods(source: &TriMesh) -> Result<(&UvLift, Matrix2<f64>)> {
    let lift = source
        .lift()
        .ok_or_else(|| Error::Geometry("source mesh has no lift".into()))?;
    let periods = *lift
        .periods()
        .ok_or_else(|| Error::Geometry("source lift has no lattice periods".into()))?;
    Ok((lift, periods))
}

/// Image of the source lift under the affine map `T·A₁⁻¹`.
pub fn affine_initial_map(source: &TriMesh, target: &FlatTorus, class: &Unimodular) -> Result<MapVariables> {
    let (lift, periods) = source_lift_periods(source)?;
    let monodromy = target.basis() * class.matrix();
    let inv = periods
        .try_inverse()
        .ok_or(Error::DegenerateLattice { det: periods.determinant() })?;
    let m = monodromy * inv;
    Ok(MapVariables {
        uv_images: lift.uv().iter().map(|q| m * q).collect(),
        monodromy,
    })
}

const RANDOM_MODES: [[i32; 2]; 6] = [[1, 0], [0, 1], [1, 1], [1, -1], [2, 0], [0, 2]];

/// Affine initial map plus a smooth, lattice-periodic random displacement
/// of size `magnitude·√(target area)`, resampled until every face is
/// positively oriented.
pub fn random_feasible_map(source: &TriMesh, target: &FlatTorus, magnitude: f64, seed: u64) -> Result<MapVariables> {
    random_feasible_map_in_class(source, target, &Unimodular::IDENTITY, magnitude, seed)
}

pub fn random_feasible_map_in_class(
    source: &TriMesh,
    target: &FlatTorus,
    class: &Unimodular,
    magnitude: f64,
    seed: u64,
) -> Result<MapVariables> {
    const ATTEMPTS: usize = 100;
    let base = affine_initial_map(source, target, class)?;
    if magnitude == 0.0 {
        return Ok(base);
    }
    let (lift, periods) = source_lift_periods(source)?;
    let to_lattice = periods.try_inverse().expect("validated periods");
    let objective = Objective::new(source, base.monodromy, 1e-6)?;
    let scale = magnitude * target.area().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..ATTEMPTS {
        let coeffs: Vec<([f64; 2], [f64; 2])> = RANDOM_MODES
            .iter()
            .map(|_| {
                (
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    [rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU)],
                )
            })
            .collect();
        let norm = RANDOM_MODES.len() as f64;
        let uv_images: Vec<_> = lift
            .uv()
            .iter()
            .zip(&base.uv_images)
            .map(|(q, x)| {
                let theta = to_lattice * q;
                let mut disp = Vector2::zeros();
                for (mode, (amp, phase)) in RANDOM_MODES.iter().zip(&coeffs) {
                    let arg = std::f64::consts::TAU * (mode[0] as f64 * theta.x + mode[1] as f64 * theta.y);
                    disp.x += amp[0] * (arg + phase[0]).sin();
                    disp.y += amp[1] * (arg + phase[1]).sin();
                }
                x + disp * (scale / norm)
            })
            .collect();
        if objective.feasible(&uv_images).is_ok() {
            return Ok(MapVariables {
                uv_images,
                monodromy: base.monodromy,
            });
        }
    }
    Err(Error::RejectionExhausted { attempts: ATTEMPTS })
}

/// Outcome of [`minimize`].
#[derive(Clone, Debug)]
pub struct OptResult {
    pub source: TriMesh,
    pub target: TriMesh,
    pub variables: MapVariables,
    /// Exact energies of the final map.
    pub report: EnergyReport,
    pub converged: bool,
    pub iterations: usize,
    pub stage_history: Vec<StageRecord>,
}

#[derive(Serialize)]
pub struct OptResultJson<'a> {
    pub report: &'a EnergyReport,
    pub converged: bool,
    pub iterations: usize,
    pub stage_history: &'a [StageRecord],
}

impl OptResult {
    pub fn map(&self) -> PLMap<'_> {
        PLMap::new(&self.source, &self.target).expect("optimizer keeps the map feasible")
    }

    pub fn to_json(&self) -> OptResultJson<'_> {
        OptResultJson {
            report: &self.report,
            converged: self.converged,
            iterations: self.iterations,
            stage_history: &self.stage_history,
        }
    }
}

/// Minimizes `E1 + E2` over PL maps from `source` onto `target` in the
/// homotopy class `class`, starting from the affine map.
pub fn minimize(source: &TriMesh, target: &FlatTorus, class: &Unimodular, cfg: &OptimizerConfig) -> Result<OptResult> {
    cfg.validate()?;
    let start = affine_initial_map(source, target, class)?;
    let objective = Objective::new(source, start.monodromy, cfg.smoothing)?;
    objective
        .feasible(&start.uv_images)
        .map_err(|e| Error::InfeasibleStart(e.to_string()))?;
    let mut best = minimize_from(source, &objective, start, cfg)?;
    for k in 0..cfg.restarts {
        let seed = cfg.seed.wrapping_add(k as u64);
        let perturbed = random_feasible_map_in_class(source, target, class, cfg.restart_magnitude, seed)?;
        let run = minimize_from(source, &objective, perturbed, cfg)?;
        if run.report.total < best.report.total {
            best = run;
        }
    }
    Ok(best)
}

/// Runs the continuation schedule from a given feasible starting map.
pub fn minimize_from(
    source: &TriMesh,
    objective: &Objective,
    start: MapVariables,
    cfg: &OptimizerConfig,
) -> Result<OptResult> {
    cfg.validate()?;
    objective
        .feasible(&start.uv_images)
        .map_err(|e| Error::InfeasibleStart(e.to_string()))?;
    let mut vars = start;
    let mut history = Vec::with_capacity(cfg.p_schedule.len());
    let mut weight = cfg.barrier_weight;
    let mut iterations = 0;
    for &p in &cfg.p_schedule {
        let params = StageParams {
            p,
            barrier_weight: weight,
        };
        let mut record = run_stage(objective, &mut vars, params, cfg)?;
        iterations += record.iterations;
        let target = image_mesh(source, &vars)?;
        record.true_energy = PLMap::new(source, &target)?.energy_total().total;
        history.push(record);
        weight *= cfg.barrier_decay;
    }
    let target = image_mesh(source, &vars)?;
    let report = PLMap::new(source, &target)?.energy_total();
    Ok(OptResult {
        source: source.clone(),
        target,
        variables: vars,
        report,
        converged: history.last().is_some_and(|r| r.converged),
        iterations,
        stage_history: history,
    })
}

fn dot(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn max_step(d: &[Vector2<f64>]) -> f64 {
    d.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn mean_edge_length(objective: &Objective, x: &[Vector2<f64>]) -> f64 {
    let mut total = 0.0;
    for (face, o) in objective.faces.iter().zip(&objective.offsets) {
        total += (x[face[1]] + o[1] - x[face[0]] - o[0]).norm();
    }
    total / objective.faces.len() as f64
}

/// One continuation stage of L-BFGS with Armijo backtracking. Steps that
/// make any face Jacobian non-positive are rejected like any other failed
/// trial step.
fn run_stage(
    objective: &Objective,
    vars: &mut MapVariables,
    params: StageParams,
    cfg: &OptimizerConfig,
) -> Result<StageRecord> {
    const ARMIJO: f64 = 1e-4;
    const MAX_BACKTRACKS: usize = 60;

    let (mut f, mut g) = objective.value_and_gradient(vars, params)?;
    let start_energy = f;
    let step_cap = 0.25 * mean_edge_length(objective, &vars.uv_images);
    let mut pairs: VecDeque<(Vec<Vector2<f64>>, Vec<Vector2<f64>>, f64)> = VecDeque::new();
    let mut energies = vec![f];
    let mut accepted = 0;
    let mut converged = false;
    let mut grad_norm = dot(&g, &g).sqrt();

    for _ in 0..cfg.max_iters {
        if grad_norm <= cfg.grad_tol {
            converged = true;
            break;
        }
        let mut step = None;
        for use_memory in [true, false] {
            if !use_memory && pairs.is_empty() {
                break;
            }
            let d = if use_memory {
                lbfgs_direction(&g, &pairs, &objective.stiffness)
            } else {
                pairs.clear();
                g.iter().map(|v| -v).collect()
            };
            let slope = dot(&g, &d);
            if !(slope < 0.0) {
                continue;
            }
            let mut alpha = if pairs.is_empty() { 1.0_f64.min(step_cap / max_step(&d)) } else { 1.0 };
            for _ in 0..MAX_BACKTRACKS {
                let trial = MapVariables {
                    uv_images: vars.uv_images.iter().zip(&d).map(|(x, di)| x + di * alpha).collect(),
                    monodromy: vars.monodromy,
                };
                match objective.value_and_gradient(&trial, params) {
                    Ok((ft, gt)) if ft <= f + ARMIJO * alpha * slope && ft <= f => {
                        step = Some((trial, ft, gt));
                        break;
                    }
                    Ok(_) | Err(Error::InfeasiblePoint { .. }) => alpha *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            if step.is_some() {
                break;
            }
        }
        let Some((trial, ft, gt)) = step else {
            break;
        };
        debug_assert!(ft <= f);
        let s: Vec<_> = trial.uv_images.iter().zip(&vars.uv_images).map(|(a, b)| a - b).collect();
        let y: Vec<_> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        *vars = trial;
        f = ft;
        g = gt;
        grad_norm = dot(&g, &g).sqrt();
        energies.push(f);
        accepted += 1;
    }
    if grad_norm <= cfg.grad_tol {
        converged = true;
    }
    if accepted == 0 && !converged {
        return Err(Error::StageDivergence {
            p: params.p,
            iterations: cfg.max_iters,
            grad_norm,
        });
    }
    Ok(StageRecord {
        p: params.p,
        barrier_weight: params.barrier_weight,
        iterations: accepted,
        start_energy,
        end_energy: f,
        true_energy: f64::NAN,
        grad_norm,
        converged,
        energies,
    })
}

/// P1 stiffness matrix of the source lift with the pinned vertex held at
/// zero. Its inverse is the initial inverse Hessian of L-BFGS, which
/// removes the mesh-size dependence of the conditioning.
#[derive(Clone, Debug)]
struct Stiffness {
    rows: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
    pinned: usize,
}

impl Stiffness {
    fn new(faces: &[[usize; 3]], source_inv: &[Matrix2<f64>], areas: &[f64], nv: usize, pinned: usize) -> Self {
        let mut entries: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); nv];
        for ((face, b), &a) in faces.iter().zip(source_inv).zip(areas) {
            let g1 = b.row(0).transpose();
            let g2 = b.row(1).transpose();
            let grads = [-(g1 + g2), g1, g2];
            for i in 0..3 {
                for j in 0..3 {
                    *entries[face[i]].entry(face[j]).or_insert(0.0) += a * grads[i].dot(&grads[j]);
                }
            }
        }
        let mut diag = vec![0.0; nv];
        let rows = entries
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .filter(|&(j, w)| {
                        if i == j {
                            diag[i] = w;
                        }
                        i != j && i != pinned && j != pinned && w != 0.0
                    })
                    .collect()
            })
            .collect();
        Self { rows, diag, pinned }
    }

    fn apply(&self, x: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
        let mut y: Vec<_> = (0..x.len())
            .map(|i| {
                let mut acc = x[i] * self.diag[i];
                for &(j, w) in &self.rows[i] {
                    acc += x[j] * w;
                }
                acc
            })
            .collect();
        y[self.pinned] = Vector2::zeros();
        y
    }

    /// Approximate `K⁻¹ r` by Jacobi-preconditioned conjugate gradients.
    fn solve(&self, r: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
        const RTOL: f64 = 1e-8;
        let n = r.len();
        let mut res: Vec<Vector2<f64>> = r.to_vec();
        res[self.pinned] = Vector2::zeros();
        let precond = |v: &[Vector2<f64>]| -> Vec<Vector2<f64>> {
            v.iter()
                .zip(&self.diag)
                .map(|(vi, &d)| if d > 0.0 { vi / d } else { Vector2::zeros() })
                .collect()
        };
        let mut x = vec![Vector2::zeros(); n];
        let r0 = dot(&res, &res).sqrt();
        if r0 == 0.0 {
            return x;
        }
        let mut z = precond(&res);
        z[self.pinned] = Vector2::zeros();
        let mut p = z.clone();
        let mut rz = dot(&res, &z);
        for _ in 0..4 * n {
            let kp = self.apply(&p);
            let pkp = dot(&p, &kp);
            if !(pkp > 0.0) {
                break;
            }
            let alpha = rz / pkp;
            for i in 0..n {
                x[i] += p[i] * alpha;
                res[i] -= kp[i] * alpha;
            }
            if dot(&res, &res).sqrt() <= RTOL * r0 {
                break;
            }
            z = precond(&res);
            z[self.pinned] = Vector2::zeros();
            let rz_next = dot(&res, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + p[i] * beta;
            }
        }
        x
    }
}

fn lbfgs_direction(
    g: &[Vector2<f64>],
    pairs: &VecDeque<(Vec<Vector2<f64>>, Vec<Vector2<f64>>, f64)>,
    stiffness: &Stiffness,
) -> Vec<Vector2<f64>> {
    let mut q: Vec<Vector2<f64>> = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= yi * a;
        }
        alphas.push(a);
    }
    q = stiffness.solve(&q);
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, &stiffness.solve(y));
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += si * (a - b);
        }
    }
    q.iter().map(|v| -v).collect()
}
