use nalgebra::{Matrix2, Point3};
use rand::Rng;

use crate::mesh::TriMesh;
use crate::torus::{sample_torus_mesh, FlatTorus};

/// Grid torus embedded as a torus of revolution (no lift).
pub(crate) fn revolution_torus(n: usize, m: usize) -> TriMesh {
    let mut vertices = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let u = std::f64::consts::TAU * i as f64 / n as f64;
            let v = std::f64::consts::TAU * j as f64 / m as f64;
            let r = 2.0 + 0.7 * v.cos();
            vertices.push(Point3::new(r * u.cos(), r * u.sin(), 0.7 * v.sin()));
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

pub(crate) fn flat_grid(basis: &Matrix2<f64>, n: usize) -> TriMesh {
    sample_torus_mesh(&FlatTorus::new(*basis).unwrap(), n).unwrap()
}

/// Random oriented lattice normalized to unit area.
pub(crate) fn random_unit_torus(rng: &mut impl Rng) -> FlatTorus {
    loop {
        let m = Matrix2::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        if m.determinant() > 0.1 {
            return FlatTorus::new(m).unwrap().normalize_unit_area();
        }
    }
}
