//! Flat tori `ℝ² / A·ℤ²` and the affine maps between them.
//!
//! Marking convention: both lattices use the same integer coordinates, so
//! the identity-marked map sends `A₁·k` to `A₂·k` and is the linear map
//! `A₂·A₁⁻¹`. A different marking is expressed by relatticing one side
//! with a unimodular integer matrix.

use nalgebra::{Matrix2, Point3, Vector2};
use serde::{Deserialize, Serialize};

use crate::distortion::{EnergyReport, FaceDistortion};
use crate::error::{Error, Result};
use crate::mesh::{LatticeShift, TriMesh, UvLift};

/// Tolerance on `|area − 1|` for tori that must have unit area.
pub const UNIT_AREA_TOL: f64 = 1e-9;

/// Oriented flat torus. The columns of `basis` generate the lattice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatTorus {
    basis: Matrix2<f64>,
}

/// JSON form `{"basis": [[a, b], [c, d]]}`, rows of the basis matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TorusJson {
    pub basis: [[f64; 2]; 2],
}

impl FlatTorus {
    pub fn new(basis: Matrix2<f64>) -> Result<Self> {
        let det = basis.determinant();
        if !(det > 0.0) || !basis.iter().all(|x| x.is_finite()) {
            return Err(Error::DegenerateLattice { det });
        }
        Ok(Self { basis })
    }

    /// The square unit torus.
    pub fn square() -> Self {
        Self {
            basis: Matrix2::identity(),
        }
    }

    pub fn from_rows(rows: [[f64; 2]; 2]) -> Result<Self> {
        Self::new(Matrix2::new(rows[0][0], rows[0][1], rows[1][0], rows[1][1]))
    }

    pub fn to_json(&self) -> TorusJson {
        let b = &self.basis;
        TorusJson {
            basis: [[b[(0, 0)], b[(0, 1)]], [b[(1, 0)], b[(1, 1)]]],
        }
    }

    pub fn basis(&self) -> &Matrix2<f64> {
        &self.basis
    }

    pub fn area(&self) -> f64 {
        self.basis.determinant()
    }

    pub fn is_unit_area(&self) -> bool {
        (self.area() - 1.0).abs() <= UNIT_AREA_TOL
    }

    /// Rescales the basis by `1/√det` so the area becomes one.
    pub fn normalize_unit_area(&self) -> Self {
        Self {
            basis: self.basis / self.area().sqrt(),
        }
    }

    /// The same torus with lattice basis `A·U`, i.e. a change of marking.
    pub fn relattice(&self, class: &Unimodular) -> Self {
        Self {
            basis: self.basis * class.matrix(),
        }
    }
}

/// Integer 2×2 matrix with determinant one: a mapping class of the torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unimodular([[i64; 2]; 2]);

impl Unimodular {
    pub const IDENTITY: Self = Self([[1, 0], [0, 1]]);

    pub fn new(rows: [[i64; 2]; 2]) -> Result<Self> {
        let det = rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0];
        if det != 1 {
            return Err(Error::Config(format!(
                "homotopy class matrix must have determinant 1, got {det}"
            )));
        }
        Ok(Self(rows))
    }

    pub fn rows(&self) -> [[i64; 2]; 2] {
        self.0
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        let r = self.0;
        Matrix2::new(r[0][0] as f64, r[0][1] as f64, r[1][0] as f64, r[1][1] as f64)
    }
}

impl std::str::FromStr for Unimodular {
    type Err = Error;

    /// Row-major `a,b,c,d`.
    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("bad class '{s}': {e}")))?;
        match parts[..] {
            [a, b, c, d] => Self::new([[a, b], [c, d]]),
            _ => Err(Error::Config(format!("class '{s}' must have 4 entries"))),
        }
    }
}

/// Linear map between flat tori that respects their lattices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTorusMap {
    pub matrix: Matrix2<f64>,
    pub source: FlatTorus,
    pub target: FlatTorus,
}

/// `M = A₂·A₁⁻¹`, the affine map inducing the identity marking.
pub fn identity_affine_map(t1: &FlatTorus, t2: &FlatTorus) -> Result<AffineTorusMap> {
    let inv = t1.basis.try_inverse().ok_or(Error::DegenerateLattice {
        det: t1.area(),
    })?;
    Ok(AffineTorusMap {
        matrix: t2.basis * inv,
        source: *t1,
        target: *t2,
    })
}

/// Energies of a map with constant differential `M` over a source of area `A`:
/// `e1 = |1 − √det M|·√A`, `e2 = ½ log(σ₁/σ₂)`. The per-face table holds
/// the single constant distortion.
pub fn affine_energy(map: &AffineTorusMap) -> EnergyReport {
    let fd = FaceDistortion::from_differential(0, &map.matrix)
        .expect("lattice-preserving maps between oriented tori have positive determinant");
    let area = map.source.area();
    EnergyReport::from_faces(vec![fd], &[area], map.target.area())
}

/// Teichmüller distance between two identity-marked unit-area tori,
/// `½ log K(A₂·A₁⁻¹)`. Both tori must have unit area.
pub fn analytic_distance(t1: &FlatTorus, t2: &FlatTorus) -> Result<f64> {
    for t in [t1, t2] {
        if !t.is_unit_area() {
            return Err(Error::NotUnitArea { area: t.area() });
        }
    }
    Ok(affine_energy(&identity_affine_map(t1, t2)?).total)
}

/// Analytic distance in the homotopy class `class` (target relatticed).
pub fn analytic_distance_in_class(t1: &FlatTorus, t2: &FlatTorus, class: &Unimodular) -> Result<f64> {
    analytic_distance(t1, &t2.relattice(class))
}

/// `n × n` grid triangulation of the fundamental domain, each cell split
/// along its `(0,0)–(1,1)` diagonal. Vertex `(i, j)` has index `j·n + i`
/// and lattice coordinates `(i/n, j/n)`. The embedding lays the fundamental
/// domain flat in the `z = 0` plane; the lift carries the seam shifts.
pub fn sample_torus_mesh(t: &FlatTorus, n: usize) -> Result<TriMesh> {
    if n < 2 {
        return Err(Error::Config(format!("grid resolution must be >= 2, got {n}")));
    }
    let nf = n as f64;
    let mut uv = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            uv.push(t.basis * Vector2::new(i as f64 / nf, j as f64 / nf));
        }
    }
    let vertices: Vec<Point3<f64>> = uv.iter().map(|q| Point3::new(q.x, q.y, 0.0)).collect();

    let corner = |i: usize, j: usize| -> (usize, LatticeShift) {
        ((j % n) * n + (i % n), [(i / n) as i64, (j / n) as i64])
    };
    let mut faces = Vec::with_capacity(2 * n * n);
    let mut shifts = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let c00 = corner(i, j);
            let c10 = corner(i + 1, j);
            let c11 = corner(i + 1, j + 1);
            let c01 = corner(i, j + 1);
            for tri in [[c00, c10, c11], [c00, c11, c01]] {
                faces.push(tri.map(|c| c.0));
                shifts.push(tri.map(|c| c.1));
            }
        }
    }
    let lift = UvLift::new(uv, Some(t.basis), shifts);
    TriMesh::new(vertices, faces, Some(lift))
}

/// Flat torus spanned by the periods of a lifted mesh.
pub fn torus_of_mesh(mesh: &TriMesh) -> Result<FlatTorus> {
    let periods = mesh
        .lift()
        .and_then(|l| l.periods())
        .ok_or_else(|| Error::Geometry("mesh has no lattice periods".into()))?;
    FlatTorus::new(*periods)
}
