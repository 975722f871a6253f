//! Oracles shared by the integration tests and the acceptance suite. None
//! of them call into the code under test for the quantity being checked.
#![allow(dead_code)]

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use shapedist::optimizer::{MapVariables, Objective, StageParams};
use shapedist::FlatTorus;

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Clone, Copy, Debug)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> DoubleDouble {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    DoubleDouble { hi: s, lo: err }
}

fn quick_two_sum(a: f64, b: f64) -> DoubleDouble {
    let s = a + b;
    DoubleDouble { hi: s, lo: b - (s - a) }
}

impl DoubleDouble {
    pub fn from(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn product(a: f64, b: f64) -> Self {
        let p = a * b;
        Self { hi: p, lo: a.mul_add(b, -p) }
    }

    pub fn add(self, o: Self) -> Self {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let u = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(u.hi, u.lo + t.lo)
    }

    pub fn neg(self) -> Self {
        Self { hi: -self.hi, lo: -self.lo }
    }

    pub fn sub(self, o: Self) -> Self {
        self.add(o.neg())
    }

    pub fn mul(self, o: Self) -> Self {
        let p = Self::product(self.hi, o.hi);
        quick_two_sum(p.hi, p.lo + (self.hi * o.lo + self.lo * o.hi))
    }

    pub fn scale(self, c: f64) -> Self {
        self.mul(Self::from(c))
    }

    pub fn div(self, o: Self) -> Self {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.scale(q1));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.scale(q2));
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2).add(Self::from(q3))
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Self::from(0.0);
        }
        let s = self.hi.sqrt();
        // one Newton step doubles the number of correct bits
        let r = self.sub(Self::product(s, s));
        Self::from(s).add(Self::from(r.hi / (2.0 * s)))
    }

    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Singular values of `m` as square roots of the eigenvalues of `MᵀM`,
/// found from its characteristic polynomial in double-double arithmetic.
/// The smaller root is taken from the product of the roots to avoid
/// cancellation.
pub fn brute_singular_values(m: &Matrix2<f64>) -> (f64, f64) {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let dd = DoubleDouble::product;
    // MᵀM = [[p, q], [q, r]]
    let p = dd(a, a).add(dd(c, c));
    let q = dd(a, b).add(dd(c, d));
    let r = dd(b, b).add(dd(d, d));
    let half_trace = p.add(r).scale(0.5);
    let half_gap = p.sub(r).scale(0.5);
    let disc = half_gap.mul(half_gap).add(q.mul(q)).sqrt();
    let big = half_trace.add(disc);
    let det = p.mul(r).sub(q.mul(q));
    if big.hi == 0.0 {
        return (0.0, 0.0);
    }
    let small = det.div(big);
    (big.sqrt().value(), small.sqrt().value())
}

/// Random lattice with entries in `[-2, 2]` and determinant above 0.1.
pub fn random_torus(rng: &mut ChaCha8Rng) -> FlatTorus {
    loop {
        let m = Matrix2::from_fn(|_, _| rng.gen_range(-2.0..2.0));
        if m.determinant() > 0.1 {
            return FlatTorus::new(m).unwrap();
        }
    }
}

/// Componentwise comparison of the analytic gradient with central
/// differences with step `rel_step` times the bounding-box diagonal of
/// the images. Components are compared relative to
/// `max(|analytic|, |numeric|, floor·‖g‖∞)`; the pinned vertex is
/// skipped because it is not a free variable. Returns the worst error.
pub fn finite_difference_error(
    objective: &Objective,
    vars: &MapVariables,
    params: StageParams,
    rel_step: f64,
    floor: f64,
) -> f64 {
    let g = objective.gradient(vars, params).unwrap();
    let (lo, hi) = vars.uv_images.iter().fold(
        (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY)),
        |(lo, hi), x| (lo.inf(x), hi.sup(x)),
    );
    let h = rel_step * (hi - lo).norm();
    let gmax = g.iter().map(|v| v.amax()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for v in 0..vars.uv_images.len() {
        if v == objective.pinned_vertex() {
            continue;
        }
        for c in 0..2 {
            let mut plus = vars.clone();
            plus.uv_images[v][c] += h;
            let mut minus = vars.clone();
            minus.uv_images[v][c] -= h;
            let fp = objective.surrogate_energy(&plus, params).unwrap();
            let fm = objective.surrogate_energy(&minus, params).unwrap();
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = g[v][c];
            let scale = analytic.abs().max(numeric.abs()).max(floor * gmax);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
    }
    worst
}
