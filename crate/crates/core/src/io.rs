//! ASCII OFF and OBJ triangle meshes, plus the JSON lift sidecar
//! `{"uv": [[x, y], ...], "periods": [[a, b], [c, d]], "shifts": [...]}`.
//!
//! `uv` is indexed by vertex. `periods` (rows of the lattice basis matrix)
//! and `shifts` (per face, the integer lattice shift of each corner) are
//! optional; without `shifts` they are reconstructed by the nearest lattice
//! image rule. For `mesh.off` the sidecar is looked up at `mesh.uv.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Point3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{LatticeShift, TriMesh, UvLift};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
}

impl MeshFormat {
    /// Format from the file extension (case-insensitive).
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("off") => Ok(Self::Off),
            Some("obj") => Ok(Self::Obj),
            _ => Err(Error::Parse {
                line: 0,
                message: format!("cannot infer mesh format of {}", path.display()),
            }),
        }
    }
}

/// Raw mesh data as read from disk, before validation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub uv: Option<Vec<Vector2<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiftSidecar {
    pub uv: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<[[f64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shifts: Option<Vec<[LatticeShift; 3]>>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let x: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("expected a number, found '{tok}'")))?;
    if !x.is_finite() {
        return Err(parse_err(line, format!("non-finite coordinate '{tok}'")));
    }
    Ok(x)
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("expected a non-negative integer, found '{tok}'")))
}

/// Parses ASCII OFF text. Faces must be triangles.
pub fn parse_off(text: &str) -> Result<RawMesh> {
    let mut tokens = text.lines().enumerate().flat_map(|(i, l)| {
        let content = l.split('#').next().unwrap_or("");
        content.split_whitespace().map(move |t| (i + 1, t))
    });
    let mut next = |what: &str| {
        tokens
            .next()
            .ok_or_else(|| parse_err(0, format!("unexpected end of file, expected {what}")))
    };
    let (line, header) = next("OFF header")?;
    if header != "OFF" {
        return Err(parse_err(line, format!("expected 'OFF', found '{header}'")));
    }
    let (l, t) = next("vertex count")?;
    let nv = parse_usize(t, l)?;
    let (l, t) = next("face count")?;
    let nf = parse_usize(t, l)?;
    let (l, t) = next("edge count")?;
    parse_usize(t, l)?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut c = [0.0; 3];
        for x in c.iter_mut() {
            let (l, t) = next("vertex coordinate")?;
            *x = parse_f64(t, l)?;
        }
        vertices.push(Point3::from(c));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (l, t) = next("face size")?;
        if parse_usize(t, l)? != 3 {
            return Err(parse_err(l, format!("face of size {t}; only triangles are supported")));
        }
        let mut f = [0usize; 3];
        for v in f.iter_mut() {
            let (l, t) = next("face index")?;
            *v = parse_usize(t, l)?;
            if *v >= nv {
                return Err(parse_err(l, format!("vertex index {v} out of range ({nv} vertices)")));
            }
        }
        faces.push(f);
    }
    Ok(RawMesh {
        vertices,
        faces,
        uv: None,
    })
}

fn obj_index(tok: &str, count: usize, line: usize) -> Result<usize> {
    let i: i64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("bad index '{tok}'")))?;
    let idx = match i {
        0 => return Err(parse_err(line, "OBJ indices start at 1")),
        i if i > 0 => i - 1,
        i => count as i64 + i,
    };
    let idx = usize::try_from(idx)
        .ok()
        .filter(|&k| k < count)
    .ok_or_else(|| parse_err(line, format!("index {tok} out of range")))?;
    Ok(idx)
}

/// Parses ASCII OBJ text (`v`, `vt`, triangular `f`). Per-vertex `vt`
/// records are returned as the lift coordinates when their count matches
/// the vertex count.
pub fn parse_obj(text: &str) -> Result<RawMesh> {
    let mut vertices = Vec::new();
    let mut uv = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<f64> = toks.map(|t| parse_f64(t, line)).collect::<Result<_>>()?;
                if c.len() < 3 {
                    return Err(parse_err(line, "vertex needs three coordinates"));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("vt") => {
                let c: Vec<f64> = toks.map(|t| parse_f64(t, line)).collect::<Result<_>>()?;
                if c.len() < 2 {
                    return Err(parse_err(line, "texture coordinate needs two values"));
                }
                uv.push(Vector2::new(c[0], c[1]));
            }
            Some("f") => {
                let corners: Vec<&str> = toks.collect();
                if corners.len() != 3 {
                    return Err(parse_err(
                        line,
                        format!("face with {} corners; only triangles are supported", corners.len()),
                    ));
                }
                let mut f = [0usize; 3];
                for (slot, c) in f.iter_mut().zip(&corners) {
                    let v = c.split('/').next().unwrap_or("");
                    *slot = obj_index(v, vertices.len(), line)?;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    let uv = (!uv.is_empty() && uv.len() == vertices.len()).then_some(uv);
    Ok(RawMesh { vertices, faces, uv })
}

/// Path of the lift sidecar belonging to a mesh file.
pub fn sidecar_path(mesh_path: &Path) -> PathBuf {
    mesh_path.with_extension("uv.json")
}

pub fn read_sidecar(path: &Path) -> Result<LiftSidecar> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(e.line(), format!("{}: {e}", path.display())))
}

fn lift_from_parts(
    uv: Vec<Vector2<f64>>,
    periods: Option<[[f64; 2]; 2]>,
    shifts: Option<Vec<[LatticeShift; 3]>>,
    faces: &[[usize; 3]],
) -> Result<UvLift> {
    let periods = periods.map(|r| Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1]));
    match shifts {
        Some(s) => Ok(UvLift::new(uv, periods, s)),
        None => UvLift::with_min_image_shifts(uv, periods, faces),
    }
}

fn read_raw(path: &Path, format: MeshFormat) -> Result<(RawMesh, Option<UvLift>)> {
    let text = read_to_string(path)?;
    let raw = match format {
        MeshFormat::Off => parse_off(&text)?,
        MeshFormat::Obj => parse_obj(&text)?,
    };
    let sidecar = sidecar_path(path);
    let lift = if sidecar.exists() {
        let s = read_sidecar(&sidecar)?;
        let uv = s.uv.iter().map(|q| Vector2::new(q[0], q[1])).collect();
        Some(lift_from_parts(uv, s.periods, s.shifts, &raw.faces)?)
    } else if let Some(uv) = raw.uv.clone() {
        Some(lift_from_parts(uv, None, None, &raw.faces)?)
    } else {
        None
    };
    Ok((raw, lift))
}

/// Reads and fully validates a mesh, picking up a lift from the sidecar
/// file or from OBJ `vt` records.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriMesh> {
    let (raw, lift) = read_raw(path, format)?;
    TriMesh::new(raw.vertices, raw.faces, lift)
}

/// Like [`load_mesh`], but lifted faces may have either orientation; the
/// result is meant as the image side of a map.
pub fn load_map_target(path: &Path, format: MeshFormat) -> Result<TriMesh> {
    let (raw, lift) = read_raw(path, format)?;
    TriMesh::new_map_target(raw.vertices, raw.faces, lift)
}

pub fn format_off(mesh: &TriMesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "OFF\n{} {} {}", mesh.num_vertices(), mesh.num_faces(), mesh.num_edges());
    for p in mesh.vertices() {
        let _ = writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

pub fn sidecar_of(lift: &UvLift) -> LiftSidecar {
    LiftSidecar {
        uv: lift.uv().iter().map(|q| [q.x, q.y]).collect(),
        periods: lift
            .periods()
            .map(|p| [[p[(0, 0)], p[(0, 1)]], [p[(1, 0)], p[(1, 1)]]]),
        shifts: lift.periods().map(|_| lift.shifts().to_vec()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the mesh as OFF and, when it has a lift, the sidecar next to it.
/// Returns every file written.
pub fn write_off(mesh: &TriMesh, path: &Path) -> Result<Vec<PathBuf>> {
    write_file(path, &format_off(mesh))?;
    let mut written = vec![path.to_path_buf()];
    if let Some(lift) = mesh.lift() {
        let side = sidecar_path(path);
        let json = serde_json::to_string(&sidecar_of(lift)).expect("sidecar serializes");
        write_file(&side, &json)?;
        written.push(side);
    }
    Ok(written)
}
