//! `shapedist`: validate meshes, evaluate map energies, compute torus
//! distances and run the metric property suites. Results go to stdout as
//! JSON (and to `--out`); a run manifest goes to stderr (and next to
//! `--out`).

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use shapedist::io::{load_map_target, load_mesh, sidecar_path, write_off, MeshFormat};
use shapedist::metric::{self, PropertyVerdict};
use shapedist::torus::{analytic_distance_in_class, TorusJson};
use shapedist::{json as sjson, minimize, sample_torus_mesh, Error, FlatTorus, OptimizerConfig, PLMap, Result, TriMesh, Unimodular};

use manifest::{manifest_path, RunManifest};

#[derive(Parser)]
#[command(name = "shapedist", version, about = "Quasiconformal shape distance between genus >= 1 meshes")]
struct Cli {
    /// Also write the result here (`sample-torus`: the OFF file); the run
    /// manifest goes to `<out>.manifest.json`
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that a mesh is a closed oriented manifold of genus >= 1
    Validate { mesh: PathBuf },

    /// Energies of the map between two meshes of shared connectivity
    Energy {
        source: PathBuf,
        target: PathBuf,
        /// Include the per-face table (and write `<out>.faces.csv`)
        #[arg(long)]
        per_face: bool,
    },

    /// Distance between two flat tori given as `{"basis": [[a,b],[c,d]]}`
    /// files or inline JSON
    #[command(group(ArgGroup::new("mode").required(true).args(["analytic", "optimize"])))]
    TorusDistance {
        basis1: String,
        basis2: String,
        /// Mapping class, row-major unimodular matrix
        #[arg(long, default_value = "1,0,0,1", value_name = "a,b,c,d")]
        class: Unimodular,
        #[arg(long)]
        analytic: bool,
        /// Minimize on an n x n grid of the first torus
        #[arg(long, value_name = "N")]
        optimize: Option<usize>,
        /// Optimizer config, file or inline JSON
        #[arg(long, value_name = "JSON")]
        config: Option<String>,
    },

    /// Run the metric property suites
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check symmetry and the triangle inequality on this map instead
        #[arg(long, num_args = 2, value_names = ["SOURCE", "TARGET"])]
        pair: Option<Vec<PathBuf>>,
        /// Optimizer config for the identity suite, file or inline JSON
        #[arg(long, value_name = "JSON")]
        config: Option<String>,
    },

    /// Write an n x n grid of a flat torus as OFF plus lift sidecar
    SampleTorus {
        basis: String,
        #[arg(long)]
        n: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Symmetry,
    Triangle,
    Isometry,
    Identity,
    All,
}

/// JSON result plus the exit code of a completed run.
struct Outcome {
    body: Value,
    exit_code: i32,
}

impl Outcome {
    fn ok(body: Value) -> Self {
        Self { body, exit_code: 0 }
    }
}

fn command_label(cmd: &Command) -> &'static str {
    match cmd {
        Command::Validate { .. } => "validate",
        Command::Energy { .. } => "energy",
        Command::TorusDistance { .. } => "torus-distance",
        Command::Verify { .. } => "verify",
        Command::SampleTorus { .. } => "sample-torus",
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SHAPEDIST_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("SHAPEDIST_THREADS must be a non-negative integer, got '{raw}'")))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Reads a mesh file and its sidecar into the manifest, then loads it.
fn read_mesh(run: &mut RunManifest, path: &Path, as_target: bool) -> Result<TriMesh> {
    let format = MeshFormat::from_path(path)?;
    run.read_input(path)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        run.read_input(&sidecar)?;
    }
    if as_target {
        load_map_target(path, format)
    } else {
        load_mesh(path, format)
    }
}

/// An argument that names a JSON file if one exists, otherwise is JSON.
fn read_json_arg(run: &mut RunManifest, arg: &str) -> Result<String> {
    let path = Path::new(arg);
    if path.is_file() {
        let bytes = run.read_input(path)?;
        String::from_utf8(bytes).map_err(|e| Error::Parse {
            line: 0,
            message: format!("{arg}: {e}"),
        })
    } else {
        run.inline_input(arg);
        Ok(arg.to_string())
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{what}: {e}"),
    })
}

fn read_torus(run: &mut RunManifest, arg: &str) -> Result<FlatTorus> {
    let text = read_json_arg(run, arg)?;
    let t: TorusJson = parse_json(&text, "torus basis")?;
    FlatTorus::from_rows(t.basis)
}

fn read_config(run: &mut RunManifest, arg: Option<&str>) -> Result<OptimizerConfig> {
    let cfg = match arg {
        Some(a) => {
            let text = read_json_arg(run, a)?;
            parse_json(&text, "optimizer config")?
        }
        None => OptimizerConfig::default(),
    };
    cfg.validate()?;
    run.config = Some(cfg.clone());
    Ok(cfg)
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn cmd_validate(run: &mut RunManifest, path: &Path) -> Result<Outcome> {
    let mesh = read_mesh(run, path, false)?;
    mesh.require_positive_genus()?;
    Ok(Outcome::ok(json!({
        "genus": mesh.genus(),
        "V": mesh.num_vertices(),
        "E": mesh.num_edges(),
        "F": mesh.num_faces(),
        "area": mesh.total_area(),
    })))
}

fn cmd_energy(run: &mut RunManifest, out: Option<&Path>, source: &Path, target: &Path, per_face: bool) -> Result<Outcome> {
    let src = read_mesh(run, source, false)?;
    let tgt = read_mesh(run, target, true)?;
    let report = PLMap::new(&src, &tgt)?.energy_total();
    if per_face {
        if let Some(out) = out {
            let csv_path = out.with_extension("faces.csv");
            let mut w = csv::Writer::from_writer(Vec::new());
            for rec in report.face_records() {
                w.serialize(rec).map_err(|e| Error::Config(format!("csv: {e}")))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
            run.write_output(&csv_path, &String::from_utf8_lossy(&bytes))?;
        }
    }
    run.results = Some(json!({ "e1": report.e1, "e2": report.e2, "total": report.total }));
    Ok(Outcome::ok(to_value(&report.to_json(per_face))))
}

fn cmd_torus_distance(
    run: &mut RunManifest,
    basis1: &str,
    basis2: &str,
    class: &Unimodular,
    optimize: Option<usize>,
    config: Option<&str>,
) -> Result<Outcome> {
    let t1 = read_torus(run, basis1)?;
    let t2 = read_torus(run, basis2)?;
    let head = json!({
        "basis1": t1.to_json().basis,
        "basis2": t2.to_json().basis,
        "class": class.rows(),
    });
    let Some(n) = optimize else {
        let distance = analytic_distance_in_class(&t1, &t2, class)?;
        run.results = Some(json!({ "analytic": distance }));
        let mut body = head;
        body["mode"] = json!("analytic");
        body["distance"] = json!(distance);
        return Ok(Outcome::ok(body));
    };
    let cfg = read_config(run, config)?;
    let analytic = if t1.is_unit_area() && t2.is_unit_area() {
        Some(analytic_distance_in_class(&t1, &t2, class)?)
    } else {
        None
    };
    let mesh = sample_torus_mesh(&t1, n)?;
    let result = minimize(&mesh, &t2, class, &cfg)?;
    let distance = result.report.total;
    run.results = Some(json!({ "optimized": distance, "analytic": analytic }));
    let mut body = head;
    body["mode"] = json!("optimize");
    body["n"] = json!(n);
    body["distance"] = json!(distance);
    body["analytic"] = json!(analytic);
    body["result"] = to_value(&result.to_json());
    Ok(Outcome::ok(body))
}

fn cmd_verify(
    run: &mut RunManifest,
    suite: Suite,
    trials: usize,
    seed: u64,
    pair: Option<&[PathBuf]>,
    config: Option<&str>,
) -> Result<Outcome> {
    let has = |s: Suite| suite == s || suite == Suite::All;
    let mut verdicts: Vec<PropertyVerdict> = Vec::new();
    if let Some(pair) = pair {
        if matches!(suite, Suite::Isometry | Suite::Identity) {
            return Err(Error::Config("--pair supports the symmetry and triangle suites".into()));
        }
        let source = read_mesh(run, &pair[0], false)?;
        let target = read_mesh(run, &pair[1], true)?;
        let pairs = [(&source, &target)];
        if has(Suite::Symmetry) {
            verdicts.push(metric::check_symmetry_pairs(&pairs)?);
        }
        if has(Suite::Triangle) {
            verdicts.push(metric::check_triangle_pairs(&pairs)?);
        }
    } else {
        let cfg = if has(Suite::Identity) {
            Some(read_config(run, config)?)
        } else {
            None
        };
        if has(Suite::Symmetry) {
            verdicts.push(metric::check_symmetry(trials, seed)?);
        }
        if has(Suite::Triangle) {
            verdicts.push(metric::check_triangle(trials, seed)?);
        }
        if has(Suite::Isometry) {
            verdicts.push(metric::check_isometry_invariance(trials, seed)?);
        }
        if let Some(cfg) = cfg {
            verdicts.extend(metric::check_identity(trials, seed, &cfg)?);
        }
    }
    let failed: Vec<&str> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| v.property_name.as_str())
        .collect();
    run.results = Some(json!({ "failed": failed }));
    Ok(Outcome {
        exit_code: verdict_exit_code(&verdicts),
        body: to_value(&verdicts),
    })
}

fn verdict_exit_code(verdicts: &[PropertyVerdict]) -> i32 {
    if verdicts.iter().all(|v| v.pass) {
        0
    } else {
        1
    }
}

fn cmd_sample_torus(run: &mut RunManifest, out: Option<&Path>, basis: &str, n: usize) -> Result<Outcome> {
    let out = out.ok_or_else(|| Error::Config("sample-torus needs --out <path.off>".into()))?;
    let torus = read_torus(run, basis)?;
    let mesh = sample_torus_mesh(&torus, n)?;
    let files = write_off(&mesh, out)?;
    run.outputs.extend(files.iter().cloned());
    Ok(Outcome::ok(json!({
        "V": mesh.num_vertices(),
        "E": mesh.num_edges(),
        "F": mesh.num_faces(),
        "area": mesh.total_area(),
        "files": files,
    })))
}

fn execute(cli: &Cli, run: &mut RunManifest) -> Result<Outcome> {
    configure_threads()?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Validate { mesh } => cmd_validate(run, mesh),
        Command::Energy { source, target, per_face } => cmd_energy(run, out, source, target, *per_face),
        Command::TorusDistance {
            basis1,
            basis2,
            class,
            optimize,
            config,
            ..
        } => cmd_torus_distance(run, basis1, basis2, class, *optimize, config.as_deref()),
        Command::Verify {
            suite,
            trials,
            seed,
            pair,
            config,
        } => cmd_verify(run, *suite, *trials, *seed, pair.as_deref(), config.as_deref()),
        Command::SampleTorus { basis, n } => cmd_sample_torus(run, out, basis, *n),
    }
}

fn error_body(err: &Error) -> Value {
    json!({ "error": { "code": err.exit_code(), "message": err.to_string() } })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let mut run = RunManifest::new(command_label(&cli.command));

    let (body, mut code) = match execute(&cli, &mut run) {
        Ok(o) => (o.body, o.exit_code),
        Err(e) => {
            run.error = Some(e.to_string());
            (error_body(&e), e.exit_code())
        }
    };
    let text = sjson::to_string_pretty(&body);
    print!("{text}");

    let writes_json = !matches!(cli.command, Command::SampleTorus { .. });
    if let (Some(out), true) = (cli.out.as_deref(), writes_json) {
        if let Err(e) = run.write_output(out, &text) {
            eprintln!("{e}");
            run.error.get_or_insert_with(|| e.to_string());
            code = code.max(e.exit_code());
        }
    }

    run.exit_code = code;
    run.wall_time = start.elapsed().as_secs_f64();
    let manifest = sjson::to_string_pretty(&run);
    eprint!("{manifest}");
    if let Some(out) = cli.out.as_deref() {
        if let Err(e) = std::fs::write(manifest_path(out), &manifest) {
            eprintln!("cannot write manifest: {e}");
        }
    }
    ExitCode::from(code as u8)
}
