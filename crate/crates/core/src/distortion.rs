//! Piecewise-linear maps between meshes of shared connectivity and their
//! area/angle distortion energies.
//!
//! The differential of a PL map is constant on each face, so integrals over
//! the source surface become area-weighted sums and the essential supremum
//! becomes an exact maximum over faces.

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{FaceFrame, TriMesh};
use crate::svd::{conformal_split, det2, svd2};

/// Per-face distortion data of a PL map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FaceDistortion {
    pub face_index: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub jacobian: f64,
    pub dilatation: f64,
    pub beltrami_mod: f64,
}

impl FaceDistortion {
    /// Distortion of an orientation-preserving differential. Returns
    /// `None` when `det d <= 0`.
    pub fn from_differential(face_index: usize, d: &Matrix2<f64>) -> Option<Self> {
        let jacobian = det2(d);
        if !(jacobian > 0.0) {
            return None;
        }
        let (q, r) = conformal_split(d);
        let lambda1 = q + r;
        let lambda2 = jacobian / lambda1;
        Some(Self {
            face_index,
            lambda1,
            lambda2,
            jacobian,
            dilatation: lambda1 / lambda2,
            beltrami_mod: r / q,
        })
    }

    /// `log(λ₁/λ₂)`, evaluated as `2·atanh|μ|`.
    pub fn log_dilatation(&self) -> f64 {
        2.0 * self.beltrami_mod.atanh()
    }

    /// `(1 − √J)²`, evaluated without cancellation near `J = 1`.
    pub fn area_defect_sq(&self) -> f64 {
        let s = self.jacobian.sqrt();
        let t = (1.0 - self.jacobian) / (1.0 + s);
        t * t
    }
}

/// Energies of a PL map. `total` is always `e1 + e2`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    pub e1: f64,
    pub e2: f64,
    pub total: f64,
    pub dirichlet: f64,
    pub source_area: f64,
    pub target_area: f64,
    #[serde(skip)]
    pub per_face: Vec<FaceDistortion>,
}

/// Row of the per-face table in serialized reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FaceRecord {
    pub face: usize,
    pub l1: f64,
    pub l2: f64,
    #[serde(rename = "J")]
    pub jacobian: f64,
    #[serde(rename = "K")]
    pub dilatation: f64,
}

/// Serialized form of an [`EnergyReport`], with the per-face table optional.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyReportJson<'a> {
    #[serde(flatten)]
    pub report: &'a EnergyReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_face: Option<Vec<FaceRecord>>,
}

impl EnergyReport {
    /// Builds the report from per-face data and the source face areas.
    /// Sums run in face order.
    pub fn from_faces(per_face: Vec<FaceDistortion>, source_areas: &[f64], target_area: f64) -> Self {
        let mut e1_sq = 0.0;
        let mut e2 = 0.0f64;
        let mut dirichlet = 0.0;
        let mut source_area = 0.0;
        for (fd, &a) in per_face.iter().zip(source_areas) {
            e1_sq += fd.area_defect_sq() * a;
            e2 = e2.max(fd.log_dilatation());
            dirichlet += (fd.lambda1 * fd.lambda1 + fd.lambda2 * fd.lambda2) * a;
            source_area += a;
        }
        let e1 = e1_sq.sqrt();
        let e2 = 0.5 * e2;
        Self {
            e1,
            e2,
            total: e1 + e2,
            dirichlet,
            source_area,
            target_area,
            per_face,
        }
    }

    pub fn face_records(&self) -> Vec<FaceRecord> {
        self.per_face
            .iter()
            .map(|fd| FaceRecord {
                face: fd.face_index,
                l1: fd.lambda1,
                l2: fd.lambda2,
                jacobian: fd.jacobian,
                dilatation: fd.dilatation,
            })
            .collect()
    }

    pub fn to_json(&self, with_per_face: bool) -> EnergyReportJson<'_> {
        EnergyReportJson {
            report: self,
            per_face: with_per_face.then(|| self.face_records()),
        }
    }

    /// `Σ J·area_source`, which equals the target area for a valid map.
    pub fn pushed_forward_area(&self, source: &TriMesh) -> f64 {
        self.per_face
            .iter()
            .zip(source.face_frames())
            .map(|(fd, fr)| fd.jacobian * fr.area)
            .sum()
    }

    pub fn max_jacobian_deviation(&self) -> f64 {
        self.per_face
            .iter()
            .map(|fd| (fd.jacobian - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Differential of the affine map sending the source face onto the target
/// face, both in their own orthonormal frames.
pub fn frame_differential(source: &FaceFrame, target: &FaceFrame) -> Result<Matrix2<f64>> {
    let inv = source.edges.try_inverse().ok_or_else(|| {
        Error::Geometry(format!("face {} is degenerate", source.face_index))
    })?;
    let d = target.edges * inv;
    let det = det2(&d);
    if !(det > 0.0) {
        return Err(Error::Orientation {
            face: source.face_index,
            det,
        });
    }
    Ok(d)
}

/// Index-correspondence PL homeomorphism between two meshes with the same
/// faces. Vertex `i` of the source maps to vertex `i` of the target.
#[derive(Clone, Debug)]
pub struct PLMap<'a> {
    source: &'a TriMesh,
    target: &'a TriMesh,
    differentials: Vec<Matrix2<f64>>,
}

impl<'a> PLMap<'a> {
    /// Fails with [`Error::ConnectivityMismatch`] when the face lists differ
    /// and with [`Error::Orientation`] on the first face whose differential
    /// has non-positive determinant.
    pub fn new(source: &'a TriMesh, target: &'a TriMesh) -> Result<Self> {
        if !source.same_connectivity(target) {
            return Err(Error::ConnectivityMismatch(format!(
                "source has {} vertices / {} faces, target has {} / {}",
                source.num_vertices(),
                source.num_faces(),
                target.num_vertices(),
                target.num_faces()
            )));
        }
        let differentials = source
            .face_frames()
            .par_iter()
            .zip(target.face_frames().par_iter())
            .map(|(s, t)| frame_differential(s, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            source,
            target,
            differentials,
        })
    }

    pub fn source(&self) -> &'a TriMesh {
        self.source
    }

    pub fn target(&self) -> &'a TriMesh {
        self.target
    }

    /// The 2×2 differential on `face`, from the source frame to the target frame.
    pub fn face_differential(&self, face: usize) -> Matrix2<f64> {
        self.differentials[face]
    }

    pub fn differentials(&self) -> &[Matrix2<f64>] {
        &self.differentials
    }

    pub fn face_distortions(&self) -> Vec<FaceDistortion> {
        self.differentials
            .par_iter()
            .enumerate()
            .map(|(f, d)| {
                FaceDistortion::from_differential(f, d)
                    .expect("differentials are orientation preserving by construction")
            })
            .collect()
    }

    /// `√(Σ (1 − √(λ₁λ₂))² · area)` over source faces.
    pub fn energy_e1(&self) -> f64 {
        self.energy_total().e1
    }

    /// `½ · max log(λ₁/λ₂)` over faces.
    pub fn energy_e2(&self) -> f64 {
        self.energy_total().e2
    }

    pub fn dirichlet_energy(&self) -> f64 {
        self.energy_total().dirichlet
    }

    pub fn energy_total(&self) -> EnergyReport {
        let areas: Vec<f64> = self.source.face_frames().iter().map(|fr| fr.area).collect();
        EnergyReport::from_faces(self.face_distortions(), &areas, self.target.total_area())
    }

    /// The inverse map, target to source.
    pub fn invert(&self) -> PLMap<'a> {
        PLMap::new(self.target, self.source).expect("inverse of a valid map is valid")
    }

    /// `g ∘ self`. The target of `self` must be the source of `g`.
    pub fn compose(&self, g: &PLMap<'a>) -> Result<PLMap<'a>> {
        let same_mesh = std::ptr::eq(self.target, g.source)
            || (self.target.same_connectivity(g.source)
                && self.target.face_frames() == g.source.face_frames());
        if !same_mesh {
            return Err(Error::ConnectivityMismatch(
                "target of the first map is not the source of the second".into(),
            ));
        }
        PLMap::new(self.source, g.target)
    }
}

/// Per-face singular values of an arbitrary differential, without the
/// orientation requirement.
pub fn singular_values(d: &Matrix2<f64>) -> (f64, f64) {
    let p = svd2(d);
    (p.sigma1, p.sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{flat_grid, revolution_torus};
    use nalgebra::{Point3, Rotation3, Vector3};

    #[test]
    fn identity_map() {
        let m = revolution_torus(6, 5);
        let f = PLMap::new(&m, &m).unwrap();
        for d in f.differentials() {
            assert!((d - Matrix2::identity()).abs().max() < 1e-14);
        }
        for fd in f.face_distortions() {
            assert_rel!(fd.lambda1, 1.0, 1e-14);
            assert_rel!(fd.lambda2, 1.0, 1e-14);
            assert_rel!(fd.jacobian, 1.0, 1e-14);
            assert!(fd.beltrami_mod < 1e-14);
        }
        let r = f.energy_total();
        assert!(r.e1 < 1e-14 && r.e2 < 1e-14 && r.total < 1e-14);
        assert_rel!(r.dirichlet, 2.0 * m.total_area(), 1e-13);
    }

    #[test]
    fn uniform_scaling() {
        let m = revolution_torus(6, 5);
        let area = m.total_area();
        for c in [0.5, 2.0, 3.0] {
            let s = m.scaled(c).unwrap();
            let f = PLMap::new(&m, &s).unwrap();
            for d in f.differentials() {
                assert!((d - Matrix2::identity() * c).abs().max() < 1e-13);
            }
            for fd in f.face_distortions() {
                assert_rel!(fd.lambda1, c, 1e-13);
                assert_rel!(fd.lambda2, c, 1e-13);
                assert_rel!(fd.jacobian, c * c, 1e-13);
                assert_rel!(fd.dilatation, 1.0, 1e-13);
            }
            let r = f.energy_total();
            assert_rel!(r.e1, (1.0 - c).abs() * area.sqrt(), 1e-12);
            assert!(r.e2 < 1e-13);
            assert_rel!(r.dirichlet, 2.0 * c * c * area, 1e-12);
            let inv = f.invert();
            for d in inv.differentials() {
                assert!((d - Matrix2::identity() / c).abs().max() < 1e-13);
            }
        }
    }

    #[test]
    fn scale_two_of_unit_area() {
        let m = flat_grid(&Matrix2::identity(), 4);
        let s = m.scaled(2.0).unwrap();
        let r = PLMap::new(&m, &s).unwrap().energy_total();
        assert_rel!(r.e1, 1.0, 1e-12);
        assert!(r.e2 < 1e-14);
        assert_rel!(r.total, 1.0, 1e-12);
    }

    #[test]
    fn sheared_face_singular_values_match_eigen_oracle() {
        let src = FaceFrame::from_planar(
            0,
            nalgebra::Vector2::zeros(),
            nalgebra::Vector2::new(1.0, 0.0),
            nalgebra::Vector2::new(0.0, 1.0),
        )
        .unwrap();
        let shear = Matrix2::new(1.0, 0.5, 0.0, 1.0);
        let tgt = FaceFrame::from_planar(
            0,
            nalgebra::Vector2::zeros(),
            shear * nalgebra::Vector2::new(1.0, 0.0),
            shear * nalgebra::Vector2::new(0.0, 1.0),
        )
        .unwrap();
        let d = frame_differential(&src, &tgt).unwrap();
        let (s1, s2) = singular_values(&d);
        // eigenvalues of ShᵀSh
        let ata = shear.transpose() * shear;
        let eig = ata.symmetric_eigenvalues();
        let (hi, lo) = (eig.max().sqrt(), eig.min().sqrt());
        assert_rel!(s1, hi, 1e-13);
        assert_rel!(s2, lo, 1e-13);
        let fd = FaceDistortion::from_differential(0, &d).unwrap();
        assert_rel!(fd.dilatation, 1.2807764064044151 / 0.7807764064044151, 1e-12);
        assert!((fd.dilatation - 1.6403882).abs() < 1e-7);
    }

    #[test]
    fn diagonal_affine_on_unit_torus() {
        let s2 = std::f64::consts::SQRT_2;
        let m = Matrix2::new(s2, 0.0, 0.0, 1.0 / s2);
        let src = flat_grid(&Matrix2::identity(), 6);
        let tgt = flat_grid(&m, 6);
        let r = PLMap::new(&src, &tgt).unwrap().energy_total();
        assert!(r.e1 < 1e-12);
        assert_rel!(r.e2, 0.5 * 2f64.ln(), 1e-12);
        assert!((r.e2 - 0.3465736).abs() < 1e-7);
        assert_rel!(r.total, 0.5 * 2f64.ln(), 1e-12);
        assert_rel!(r.dirichlet, 2.5, 1e-12);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn e2_takes_the_max_dilatation() {
        let fds: Vec<_> = [1.0f64, 2.0, 4.0]
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let d = Matrix2::new(k.sqrt(), 0.0, 0.0, 1.0 / k.sqrt());
                FaceDistortion::from_differential(i, &d).unwrap()
            })
            .collect();
        let r = EnergyReport::from_faces(fds, &[1.0, 1.0, 1.0], 3.0);
        assert_rel!(r.e2, 0.5 * 4f64.ln(), 1e-14);
        assert!((r.e2 - 0.6931472).abs() < 1e-7);
        assert!(r.e1 < 1e-15);
    }

    #[test]
    fn face_distortion_relations() {
        let d = Matrix2::new(1.3, -0.4, 0.7, 0.9);
        let fd = FaceDistortion::from_differential(0, &d).unwrap();
        assert_rel!(fd.jacobian, fd.lambda1 * fd.lambda2, 1e-12);
        assert_rel!(fd.dilatation, fd.lambda1 / fd.lambda2, 1e-12);
        assert_rel!(fd.lambda1, (fd.jacobian * fd.dilatation).sqrt(), 1e-12);
        assert_rel!(fd.lambda2, (fd.jacobian / fd.dilatation).sqrt(), 1e-12);
        assert_rel!(
            fd.beltrami_mod,
            (fd.lambda1 - fd.lambda2) / (fd.lambda1 + fd.lambda2),
            1e-12
        );
        assert_rel!(
            fd.dilatation,
            (1.0 + fd.beltrami_mod) / (1.0 - fd.beltrami_mod),
            1e-12
        );
        assert!(FaceDistortion::from_differential(0, &Matrix2::new(1.0, 0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn connectivity_mismatch() {
        let a = revolution_torus(6, 5);
        let b = revolution_torus(5, 6);
        assert!(matches!(PLMap::new(&a, &b), Err(Error::ConnectivityMismatch(_))));
        let f = PLMap::new(&a, &a).unwrap();
        let s = a.scaled(2.0).unwrap();
        let g = PLMap::new(&s, &s).unwrap();
        assert!(matches!(f.compose(&g), Err(Error::ConnectivityMismatch(_))));
    }

    #[test]
    fn compose_scalings_and_inverse() {
        let m = revolution_torus(6, 5);
        let a = m.scaled(2.0).unwrap();
        let ab = m.scaled(2.0 * 1.5).unwrap();
        let f = PLMap::new(&m, &a).unwrap();
        let g = PLMap::new(&a, &ab).unwrap();
        let h = f.compose(&g).unwrap();
        for (k, d) in h.differentials().iter().enumerate() {
            assert!((d - Matrix2::identity() * 3.0).abs().max() < 1e-12);
            let prod = g.face_differential(k) * f.face_differential(k);
            assert!((d - prod).abs().max() < 1e-12);
        }
        let inv = f.invert();
        let id = f.compose(&inv).unwrap();
        assert!(id.energy_total().total < 1e-13);
    }

    #[test]
    fn rigid_motion_is_an_isometry() {
        let m = revolution_torus(8, 6);
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), 0.7);
        let moved = m.rigidly_moved(&rot, Vector3::new(1.0, -2.0, 0.5)).unwrap();
        let r = PLMap::new(&m, &moved).unwrap().energy_total();
        assert!(r.total < 1e-12);
    }

    #[test]
    fn flipped_lift_face_is_orientation_error() {
        let src = flat_grid(&Matrix2::identity(), 4);
        let lift = src.lift().unwrap();
        let mut uv = lift.uv().to_vec();
        // drag vertex 5 across its neighbours
        uv[5] += nalgebra::Vector2::new(0.6, 0.6);
        let flipped = crate::mesh::UvLift::new(uv.clone(), lift.periods().copied(), lift.shifts().to_vec());
        let verts: Vec<Point3<f64>> = uv.iter().map(|q| Point3::new(q.x, q.y, 0.0)).collect();
        assert!(TriMesh::new(verts.clone(), src.faces().to_vec(), Some(flipped.clone())).is_err());
        let tgt = TriMesh::new_map_target(verts, src.faces().to_vec(), Some(flipped)).unwrap();
        assert!(matches!(PLMap::new(&src, &tgt), Err(Error::Orientation { .. })));
    }
}
