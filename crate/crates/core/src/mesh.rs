//! Closed oriented triangle meshes and their piecewise-flat metric.
//!
//! A [`TriMesh`] carries shared connectivity plus per-vertex geometry. The
//! metric of each face is read from the optional universal-cover lift
//! ([`UvLift`]) when present and from the 3D embedding otherwise. Torus
//! meshes built on a lattice store, per face, the integer lattice shift of
//! every corner so that faces straddling the fundamental-domain seam are
//! still flat triangles in the plane.

use std::collections::HashMap;

use nalgebra::{Matrix2, Point3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Integer lattice coordinates of a deck translation.
pub type LatticeShift = [i64; 2];

/// Relative tolerance on edge lengths between the lift and the embedding.
pub const LIFT_ISOMETRY_RTOL: f64 = 1e-9;

/// Faces with area below this fraction of the squared longest edge are
/// rejected as degenerate.
const DEGENERATE_AREA_RATIO: f64 = 1e-12;

/// Planar coordinates of a torus mesh in the universal cover.
#[derive(Clone, Debug, PartialEq)]
pub struct UvLift {
    uv: Vec<Vector2<f64>>,
    periods: Option<Matrix2<f64>>,
    shifts: Vec<[LatticeShift; 3]>,
}

impl UvLift {
    /// Lift with explicit per-corner lattice shifts. `periods` holds the
    /// lattice generators as columns.
    pub fn new(
        uv: Vec<Vector2<f64>>,
        periods: Option<Matrix2<f64>>,
        shifts: Vec<[LatticeShift; 3]>,
    ) -> Self {
        Self { uv, periods, shifts }
    }

    /// Lift whose corner shifts place every corner at the lattice image
    /// nearest (in lattice coordinates) to the face's first corner.
    pub fn with_min_image_shifts(
        uv: Vec<Vector2<f64>>,
        periods: Option<Matrix2<f64>>,
        faces: &[[usize; 3]],
    ) -> Result<Self> {
        let shifts = match periods {
            None => vec![[[0, 0]; 3]; faces.len()],
            Some(p) => {
                let inv = p.try_inverse().ok_or(Error::DegenerateLattice {
                    det: p.determinant(),
                })?;
                let mut shifts = Vec::with_capacity(faces.len());
                for face in faces {
                    let mut s = [[0i64; 2]; 3];
                    for k in 0..3 {
                        if face[k] >= uv.len() || face[0] >= uv.len() {
                            return Err(Error::Topology(format!(
                                "face index {} out of range",
                                face[k].max(face[0])
                            )));
                        }
                        let d = inv * (uv[face[0]] - uv[face[k]]);
                        s[k] = [d.x.round() as i64, d.y.round() as i64];
                    }
                    shifts.push(s);
                }
                shifts
            }
        };
        Ok(Self { uv, periods, shifts })
    }

    pub fn uv(&self) -> &[Vector2<f64>] {
        &self.uv
    }

    pub fn periods(&self) -> Option<&Matrix2<f64>> {
        self.periods.as_ref()
    }

    pub fn shifts(&self) -> &[[LatticeShift; 3]] {
        &self.shifts
    }

    fn shift_vector(&self, s: LatticeShift) -> Vector2<f64> {
        match self.periods {
            Some(p) => p * Vector2::new(s[0] as f64, s[1] as f64),
            None => Vector2::zeros(),
        }
    }

    fn corners(&self, face_index: usize, face: &[usize; 3]) -> [Vector2<f64>; 3] {
        let s = &self.shifts[face_index];
        [0, 1, 2].map(|k| self.uv[face[k]] + self.shift_vector(s[k]))
    }

    fn face_is_unshifted(&self, face_index: usize) -> bool {
        self.periods.is_none() || self.shifts[face_index].iter().all(|s| *s == [0, 0])
    }
}

/// Local orthonormal frame of one face.
///
/// `e1` points along the edge v0→v1 and `e2` completes a positively
/// oriented basis of the face plane. `edges` holds the two edge vectors
/// v0→v1 and v0→v2 (as columns) in `(e1, e2)` coordinates, so the
/// differential of a PL map is `target.edges * source.edges⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceFrame {
    pub face_index: usize,
    pub origin: Point3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub area: f64,
    pub edges: Matrix2<f64>,
}

impl FaceFrame {
    /// Frame of an embedded triangle. The second axis follows the face
    /// normal, so the local edge matrix always has positive determinant.
    pub fn from_points(
        face_index: usize,
        p0: Point3<f64>,
        p1: Point3<f64>,
        p2: Point3<f64>,
    ) -> Result<Self> {
        let a = p1 - p0;
        let b = p2 - p0;
        let normal = a.cross(&b);
        let area = 0.5 * normal.norm();
        let longest = a.norm_squared().max(b.norm_squared()).max((p2 - p1).norm_squared());
        if !(area > DEGENERATE_AREA_RATIO * longest) {
            return Err(Error::Geometry(format!(
                "face {face_index} is degenerate (area {area:e})"
            )));
        }
        let e1 = a / a.norm();
        let e2 = normal.normalize().cross(&e1);
        let edges = Matrix2::new(a.dot(&e1), b.dot(&e1), a.dot(&e2), b.dot(&e2));
        Ok(Self {
            face_index,
            origin: p0,
            e1,
            e2,
            area,
            edges,
        })
    }

    /// Frame of a planar triangle. The second axis is the fixed quarter
    /// turn of `e1`, so a clockwise triangle yields a negative determinant
    /// in `edges`.
    pub fn from_planar(
        face_index: usize,
        q0: Vector2<f64>,
        q1: Vector2<f64>,
        q2: Vector2<f64>,
    ) -> Result<Self> {
        let a = q1 - q0;
        let b = q2 - q0;
        let signed = 0.5 * (a.x * b.y - a.y * b.x);
        let area = signed.abs();
        let longest = a.norm_squared().max(b.norm_squared()).max((q2 - q1).norm_squared());
        if !(area > DEGENERATE_AREA_RATIO * longest) {
            return Err(Error::Geometry(format!(
                "face {face_index} is degenerate in the lift (area {area:e})"
            )));
        }
        let len = a.norm();
        let u = a / len;
        let w = Vector2::new(-u.y, u.x);
        let edges = Matrix2::new(len, b.dot(&u), 0.0, b.dot(&w));
        Ok(Self {
            face_index,
            origin: Point3::new(q0.x, q0.y, 0.0),
            e1: Vector3::new(u.x, u.y, 0.0),
            e2: Vector3::new(w.x, w.y, 0.0),
            area,
            edges,
        })
    }

    pub fn signed_area(&self) -> f64 {
        0.5 * self.edges.determinant()
    }
}

/// How strictly the orientation of a lift is checked at construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LiftOrientation {
    Positive,
    Any,
}

/// Closed, oriented, connected triangle mesh.
#[derive(Clone, Debug)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    lift: Option<UvLift>,
    num_edges: usize,
    frames: Vec<FaceFrame>,
}

impl TriMesh {
    /// Builds and validates a mesh. Every invariant is checked, including
    /// positive orientation of every lifted face.
    pub fn new(
        vertices: Vec<Point3<f64>>,
        faces: Vec<[usize; 3]>,
        lift: Option<UvLift>,
    ) -> Result<Self> {
        Self::build(vertices, faces, lift, LiftOrientation::Positive)
    }

    /// Like [`TriMesh::new`] but accepts lifted faces of either orientation.
    /// Used for the image side of a map, whose orientation is judged by
    /// [`crate::distortion::PLMap::new`].
    pub fn new_map_target(
        vertices: Vec<Point3<f64>>,
        faces: Vec<[usize; 3]>,
        lift: Option<UvLift>,
    ) -> Result<Self> {
        Self::build(vertices, faces, lift, LiftOrientation::Any)
    }

    fn build(
        vertices: Vec<Point3<f64>>,
        faces: Vec<[usize; 3]>,
        lift: Option<UvLift>,
        orientation: LiftOrientation,
    ) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::Topology("mesh has no vertices or no faces".into()));
        }
        for (f, face) in faces.iter().enumerate() {
            if let Some(&v) = face.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::Topology(format!(
                    "face {f} references vertex {v} out of range"
                )));
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::Topology(format!("face {f} repeats a vertex")));
            }
        }
        if vertices.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::Geometry("non-finite vertex coordinate".into()));
        }
        if let Some(lift) = &lift {
            if lift.uv.len() != vertices.len() {
                return Err(Error::Geometry(format!(
                    "lift has {} coordinates for {} vertices",
                    lift.uv.len(),
                    vertices.len()
                )));
            }
            if lift.shifts.len() != faces.len() {
                return Err(Error::Geometry(format!(
                    "lift has {} shift triples for {} faces",
                    lift.shifts.len(),
                    faces.len()
                )));
            }
            if let Some(p) = lift.periods {
                if !(p.determinant() > 0.0) {
                    return Err(Error::DegenerateLattice {
                        det: p.determinant(),
                    });
                }
            }
            if lift.uv.iter().any(|q| !q.iter().all(|c| c.is_finite())) {
                return Err(Error::Geometry("non-finite lift coordinate".into()));
            }
        }

        let num_edges = check_topology(vertices.len(), &faces, lift.as_ref())?;

        let mut frames = Vec::with_capacity(faces.len());
        for (f, face) in faces.iter().enumerate() {
            let frame = match &lift {
                Some(lift) => {
                    let [q0, q1, q2] = lift.corners(f, face);
                    let frame = FaceFrame::from_planar(f, q0, q1, q2)?;
                    if orientation == LiftOrientation::Positive && frame.signed_area() <= 0.0 {
                        return Err(Error::Geometry(format!(
                            "face {f} is negatively oriented in the lift"
                        )));
                    }
                    if lift.face_is_unshifted(f) {
                        check_lift_isometry(f, [q0, q1, q2], face.map(|v| vertices[v]))?;
                    }
                    frame
                }
                None => FaceFrame::from_points(
                    f,
                    vertices[face[0]],
                    vertices[face[1]],
                    vertices[face[2]],
                )?,
            };
            frames.push(frame);
        }

        Ok(Self {
            vertices,
            faces,
            lift,
            num_edges,
            frames,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn lift(&self) -> Option<&UvLift> {
        self.lift.as_ref()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices() as i64 - self.num_edges as i64 + self.num_faces() as i64
    }

    /// `(2 − χ) / 2`.
    pub fn genus(&self) -> usize {
        ((2 - self.euler_characteristic()) / 2) as usize
    }

    /// Fails with [`Error::GenusZero`] on spheres.
    pub fn require_positive_genus(&self) -> Result<()> {
        match self.genus() {
            0 => Err(Error::GenusZero { genus: 0 }),
            _ => Ok(()),
        }
    }

    /// One frame per face, in face order. Frames come from the lift when
    /// present and from the embedding otherwise.
    pub fn face_frames(&self) -> &[FaceFrame] {
        &self.frames
    }

    pub fn total_area(&self) -> f64 {
        self.frames.iter().map(|fr| fr.area).sum()
    }

    /// Lifted corner positions of a face, if the mesh has a lift.
    pub fn lifted_corners(&self, face: usize) -> Option<[Vector2<f64>; 3]> {
        self.lift.as_ref().map(|l| l.corners(face, &self.faces[face]))
    }

    /// True when both meshes have the same face list.
    pub fn same_connectivity(&self, other: &TriMesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.faces == other.faces
    }

    /// Uniform scaling of the embedding and of the lift.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let vertices = self.vertices.iter().map(|p| Point3::from(p.coords * c)).collect();
        let lift = self.lift.as_ref().map(|l| UvLift {
            uv: l.uv.iter().map(|q| q * c).collect(),
            periods: l.periods.map(|p| p * c),
            shifts: l.shifts.clone(),
        });
        Self::new(vertices, self.faces.clone(), lift)
    }

    /// Rigid motion `x ↦ R x + t` of the embedding. A lift, if present, is
    /// carried along by the in-plane part of `R`, which must then fix the
    /// z axis.
    pub fn rigidly_moved(&self, rotation: &nalgebra::Rotation3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let vertices = self.vertices.iter().map(|p| rotation * p + translation).collect();
        let lift = match &self.lift {
            None => None,
            Some(l) => {
                let m = rotation.matrix();
                if (m[(2, 2)] - 1.0).abs() > 1e-12 {
                    return Err(Error::Geometry(
                        "rigid motion of a lifted mesh must fix the z axis".into(),
                    ));
                }
                let r = Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
                let t = Vector2::new(translation.x, translation.y);
                Some(UvLift {
                    uv: l.uv.iter().map(|q| r * q + t).collect(),
                    periods: l.periods.map(|p| r * p),
                    shifts: l.shifts.clone(),
                })
            }
        };
        Self::new(vertices, self.faces.clone(), lift)
    }
}

/// Key of a directed edge: endpoints plus the lattice offset between the
/// lifted endpoints (zero without periods).
type HalfEdgeKey = (usize, usize, LatticeShift);

/// Checks that the faces form a closed, oriented, connected 2-manifold and
/// returns the number of undirected edges.
fn check_topology(num_vertices: usize, faces: &[[usize; 3]], lift: Option<&UvLift>) -> Result<usize> {
    let has_periods = lift.is_some_and(|l| l.periods.is_some());
    let key_of = |f: usize, k: usize| -> HalfEdgeKey {
        let face = &faces[f];
        let k1 = (k + 1) % 3;
        let delta = match lift {
            Some(l) if has_periods => {
                let s = &l.shifts[f];
                [s[k1][0] - s[k][0], s[k1][1] - s[k][1]]
            }
            _ => [0, 0],
        };
        (face[k], face[k1], delta)
    };

    let num_half = faces.len() * 3;
    let mut index: HashMap<HalfEdgeKey, usize> = HashMap::with_capacity(num_half);
    for f in 0..faces.len() {
        for k in 0..3 {
            let key = key_of(f, k);
            if let Some(prev) = index.insert(key, 3 * f + k) {
                return Err(Error::Topology(format!(
                    "directed edge {}->{} appears in faces {} and {} (non-manifold or inconsistently oriented)",
                    key.0,
                    key.1,
                    prev / 3,
                    f
                )));
            }
        }
    }

    let mut twin = vec![usize::MAX; num_half];
    for f in 0..faces.len() {
        for k in 0..3 {
            let (a, b, d) = key_of(f, k);
            match index.get(&(b, a, [-d[0], -d[1]])) {
                Some(&h) => twin[3 * f + k] = h,
                None => {
                    return Err(Error::Topology(format!(
                        "edge {a}-{b} of face {f} is a boundary edge"
                    )))
                }
            }
        }
    }

    // Every vertex referenced, and its faces form a single fan.
    let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); num_vertices];
    for (f, face) in faces.iter().enumerate() {
        for k in 0..3 {
            outgoing[face[k]].push(3 * f + k);
        }
    }
    for (v, out) in outgoing.iter().enumerate() {
        let Some(&start) = out.first() else {
            return Err(Error::Topology(format!("vertex {v} is not used by any face")));
        };
        let mut h = start;
        let mut count = 0;
        loop {
            count += 1;
            let prev = 3 * (h / 3) + (h % 3 + 2) % 3;
            h = twin[prev];
            if h == start || count > out.len() {
                break;
            }
        }
        if count != out.len() {
            return Err(Error::Topology(format!(
                "vertex {v} has a non-manifold neighbourhood"
            )));
        }
    }

    // Connectedness over shared edges.
    let mut parent: Vec<usize> = (0..faces.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for h in 0..num_half {
        let (a, b) = (find(&mut parent, h / 3), find(&mut parent, twin[h] / 3));
        if a != b {
            parent[a] = b;
        }
    }
    let root = find(&mut parent, 0);
    if (0..faces.len()).any(|f| find(&mut parent, f) != root) {
        return Err(Error::Topology("surface is not connected".into()));
    }

    Ok(num_half / 2)
}

fn check_lift_isometry(face: usize, lifted: [Vector2<f64>; 3], embedded: [Point3<f64>; 3]) -> Result<()> {
    for k in 0..3 {
        let k1 = (k + 1) % 3;
        let l2 = (lifted[k1] - lifted[k]).norm();
        let l3 = (embedded[k1] - embedded[k]).norm();
        if (l2 - l3).abs() > LIFT_ISOMETRY_RTOL * l3.max(l2) {
            return Err(Error::Geometry(format!(
                "face {face}: lifted edge length {l2} differs from embedded length {l3}"
            )));
        }
    }
    Ok(())
}
