//! Closed-form singular values of 2×2 matrices.

use nalgebra::Matrix2;

/// Singular values of a 2×2 matrix in descending order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingularPair {
    pub sigma1: f64,
    pub sigma2: f64,
}

/// `ad − bc` with one rounding error in each product compensated by FMA.
pub fn det2(m: &Matrix2<f64>) -> f64 {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let w = b * c;
    let err = (-b).mul_add(c, w);
    a.mul_add(d, -w) + err
}

/// Decomposes `M` into its conformal part `(E, H)` and anti-conformal
/// part `(F, G)` and returns `(Q, R) = (|(E, H)|, |(F, G)|)`.
///
/// `Q + R` and `|Q − R|` are the singular values, `Q² − R² = det M`, and
/// `R / Q` is the modulus of the Beltrami coefficient when `det M > 0`.
pub fn conformal_split(m: &Matrix2<f64>) -> (f64, f64) {
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    let e = 0.5 * (a + d);
    let f = 0.5 * (a - d);
    let g = 0.5 * (c + b);
    let h = 0.5 * (c - b);
    (e.hypot(h), f.hypot(g))
}

/// Singular values `σ₁ ≥ σ₂ ≥ 0` of `m`.
///
/// `σ₁ = Q + R` and `σ₂ = |Q − R|`, with the latter evaluated as
/// `|det M| / σ₁` to avoid cancellation when `M` is nearly singular.
pub fn svd2(m: &Matrix2<f64>) -> SingularPair {
    let (q, r) = conformal_split(m);
    let sigma1 = q + r;
    if sigma1 == 0.0 {
        return SingularPair {
            sigma1: 0.0,
            sigma2: 0.0,
        };
    }
    let sigma2 = (det2(m).abs() / sigma1).min(sigma1);
    SingularPair { sigma1, sigma2 }
}
