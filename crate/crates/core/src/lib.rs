//! Quasiconformal shape distance between triangulated surfaces of genus ≥ 1.
//!
//! The distance between two metrics on the same surface is the infimum, over
//! maps isotopic to the identity, of `E = E1 + E2`: the L² deviation of the
//! area scale from one plus half the sup of the log-dilatation. This crate
//! evaluates those energies for PL maps between meshes of shared
//! connectivity, gives the closed-form answer for flat tori, minimizes `E`
//! numerically on torus meshes and checks the metric axioms.

#[cfg(test)]
macro_rules! assert_rel {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!(
            (a - b).abs() <= $tol * a.abs().max(b.abs()).max(1e-300),
            "{} = {a} vs {} = {b}",
            stringify!($a),
            stringify!($b)
        );
    }};
}

pub mod distortion;
pub mod error;
pub mod io;
pub mod json;
pub mod mesh;
pub mod metric;
pub mod optimizer;
pub mod svd;
pub mod torus;

#[cfg(test)]
pub(crate) mod testutil;

pub use distortion::{EnergyReport, FaceDistortion, PLMap};
pub use error::{Error, Result};
pub use mesh::{FaceFrame, TriMesh, UvLift};
pub use optimizer::{minimize, MapVariables, OptResult, OptimizerConfig};
pub use svd::{svd2, SingularPair};
pub use torus::{analytic_distance, sample_torus_mesh, AffineTorusMap, FlatTorus, Unimodular};
