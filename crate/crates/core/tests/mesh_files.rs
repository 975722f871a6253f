use std::fs;

use nalgebra::{Matrix2, Point3, Vector2};
use shapedist::io::{load_map_target, load_mesh, read_sidecar, sidecar_path, write_off, MeshFormat};
use shapedist::{sample_torus_mesh, Error, FlatTorus, PLMap, TriMesh, UvLift};

const OCTAHEDRON: &str = "OFF
6 8 12
1 0 0
-1 0 0
0 1 0
0 -1 0
0 0 1
0 0 -1
3 0 2 4
3 2 1 4
3 1 3 4
3 3 0 4
3 2 0 5
3 1 2 5
3 3 1 5
3 0 3 5
";

#[test]
fn torus_round_trips_through_off_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let t = FlatTorus::new(Matrix2::new(1.1, 0.3, -0.2, 0.95)).unwrap();
    for n in [2, 4, 9] {
        let mesh = sample_torus_mesh(&t, n).unwrap();
        let path = dir.path().join(format!("grid{n}.off"));
        let written = write_off(&mesh, &path).unwrap();
        assert_eq!(written, vec![path.clone(), sidecar_path(&path)]);
        let back = load_mesh(&path, MeshFormat::from_path(&path).unwrap()).unwrap();
        assert_eq!(back.vertices(), mesh.vertices());
        assert_eq!(back.faces(), mesh.faces());
        assert_eq!(back.lift(), mesh.lift());
        assert_eq!(back.face_frames(), mesh.face_frames());
        assert_eq!((back.num_vertices(), back.num_edges(), back.num_faces()), (n * n, 3 * n * n, 2 * n * n));
        assert_eq!(back.genus(), 1);
    }
}

#[test]
fn grid_torus_counts_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.off");
    write_off(&sample_torus_mesh(&FlatTorus::square(), 4).unwrap(), &path).unwrap();
    let m = load_mesh(&path, MeshFormat::Off).unwrap();
    assert_eq!((m.num_vertices(), m.num_edges(), m.num_faces()), (16, 48, 32));
    assert_eq!(m.euler_characteristic(), 0);
    assert!((m.total_area() - 1.0).abs() < 1e-12);
}

#[test]
fn sidecar_with_uv_only_uses_minimum_image_shifts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.off");
    let mesh = sample_torus_mesh(&FlatTorus::square(), 5).unwrap();
    write_off(&mesh, &path).unwrap();
    let side = read_sidecar(&sidecar_path(&path)).unwrap();
    let stripped = serde_json::json!({ "uv": side.uv, "periods": side.periods });
    fs::write(sidecar_path(&path), stripped.to_string()).unwrap();
    let back = load_mesh(&path, MeshFormat::Off).unwrap();
    assert_eq!(back.lift(), mesh.lift());
}

#[test]
fn obj_parses_texture_forms_then_checks_topology() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("square.obj");
    fs::write(
        &path,
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1/1 2/2 3/3\nf 1/1 3/3 -1/4\n",
    )
    .unwrap();
    // an open square: parsing succeeds, validation rejects the boundary
    assert!(matches!(load_mesh(&path, MeshFormat::Obj), Err(Error::Topology(_))));
}

#[test]
fn obj_torus_picks_up_the_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = sample_torus_mesh(&FlatTorus::square(), 3).unwrap();
    let off = dir.path().join("t.off");
    write_off(&mesh, &off).unwrap();
    let obj = dir.path().join("u.obj");
    let mut text = String::new();
    for p in mesh.vertices() {
        text += &format!("v {:?} {:?} {:?}\n", p.x, p.y, p.z);
    }
    for f in mesh.faces() {
        text += &format!("f {}//1 {}//1 {}//1\n", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    fs::write(&obj, text).unwrap();
    fs::copy(sidecar_path(&off), sidecar_path(&obj)).unwrap();
    let back = load_mesh(&obj, MeshFormat::Obj).unwrap();
    assert_eq!(back.lift(), mesh.lift());
    assert_eq!(back.genus(), 1);
}

#[test]
fn octahedron_is_genus_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("octa.off");
    fs::write(&path, OCTAHEDRON).unwrap();
    let m = load_mesh(&path, MeshFormat::Off).unwrap();
    assert_eq!(m.genus(), 0);
    let err = m.require_positive_genus().unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn malformed_files_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("trunc.off", "OFF\n6 8 12\n1 0 0\n"),
        ("three.off", "OFF\n4 3 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 1 0 3\n3 0 1 3\n"),
        ("flat.off", "OFF\n3 2 3\n0 0 0\n1 0 0\n2 0 0\n3 0 1 2\n3 0 2 1\n"),
        ("bad.obj", "v 0 0 0\nf 1 2 3\n"),
    ];
    for (name, text) in cases {
        let path = dir.path().join(name);
        fs::write(&path, text).unwrap();
        let err = load_mesh(&path, MeshFormat::from_path(&path).unwrap()).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{name}: {err}");
    }
    let missing = load_mesh(&dir.path().join("none.off"), MeshFormat::Off).unwrap_err();
    assert_eq!(missing.exit_code(), 2);
    assert!(MeshFormat::from_path(&dir.path().join("x.ply")).is_err());
}

#[test]
fn flipped_target_is_reported_by_the_map() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("src.off");
    let mesh = sample_torus_mesh(&FlatTorus::square(), 4).unwrap();
    write_off(&mesh, &path).unwrap();
    // push vertex 5 across its neighbours so several lifted faces flip
    let lift = mesh.lift().unwrap();
    let mut uv = lift.uv().to_vec();
    uv[5] += Vector2::new(0.6, 0.6);
    let vertices = uv.iter().map(|q| Point3::new(q.x, q.y, 0.0)).collect();
    let moved = UvLift::new(uv, lift.periods().copied(), lift.shifts().to_vec());
    let flipped = TriMesh::new_map_target(vertices, mesh.faces().to_vec(), Some(moved)).unwrap();
    let tgt = dir.path().join("tgt.off");
    write_off(&flipped, &tgt).unwrap();
    assert!(load_mesh(&tgt, MeshFormat::Off).is_err());
    let source = load_mesh(&path, MeshFormat::Off).unwrap();
    let target = load_map_target(&tgt, MeshFormat::Off).unwrap();
    let err = PLMap::new(&source, &target).unwrap_err();
    assert!(matches!(err, Error::Orientation { .. }));
    assert_eq!(err.exit_code(), 5);
}
