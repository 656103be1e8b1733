//! Experiment front end: configuration parsing and validation, run
//! orchestration, and emission of CSV / JSON / gnuplot-ready outputs together
//! with a reproducibility manifest per run directory.
//!
//! All data files are written with shortest round-trip float formatting, so a
//! rerun of the same resolved configuration is byte-identical (the manifest,
//! which carries wall-clock timestamps, is the one deliberate exception).

use crate::flow::{
    self, DiagnosticsRow, FlowAbort, FlowParams, FlowState, RunResult,
};
use crate::maps::{self, MapState};
use crate::qdiff;
use crate::surface::build::{build_genus2_octagon, OctagonSurface};
use crate::surface::io as surfio;
use crate::surface::metric;
use crate::targets::{FuchsianRep, Target, TargetPoint};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Exit code contract: 0 all checks pass, 2 configuration/validation error,
/// 3 numerical abort (snapshot written), 4 a requested check failed.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical abort (snapshot written to {snapshot}): {message}")]
    Abort { message: String, snapshot: PathBuf },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Abort { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// All requested checks passed (exit 0).
    Pass,
    /// At least one requested check failed (exit 4).
    ChecksFailed,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default)]
    pub mesh: MeshSpec,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub flow: FlowSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub output: OutputSpec,
    /// Seed for randomized test maps only; the solvers are deterministic.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    42
}

impl Default for Config {
    fn default() -> Config {
        Config {
            schema_version: SCHEMA_VERSION,
            mesh: MeshSpec::default(),
            target: TargetSpec::default(),
            flow: FlowSpec::default(),
            sweep: SweepSpec::default(),
            output: OutputSpec::default(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSpec {
    /// Builtin genus-2 octagon at this midpoint-subdivision level…
    pub level: Option<u32>,
    /// …or a surface file produced by `mesh gen` (mutually exclusive).
    pub path: Option<PathBuf>,
}

impl Default for MeshSpec {
    fn default() -> MeshSpec {
        MeshSpec {
            level: Some(3),
            path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    /// "hyperbolic" (same-genus quotient, identity class) or "torus"
    /// (abelianized class of the octagon identification).
    pub kind: String,
    pub r1: f64,
    pub r2: f64,
}

impl Default for TargetSpec {
    fn default() -> TargetSpec {
        TargetSpec {
            kind: "hyperbolic".into(),
            r1: 1.0,
            r2: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSpec {
    /// Metric coupling for the η-flow (a = 1, b = η²/4).
    pub eta: f64,
    /// If set, run the rescaled flow instead (a = κ, b = 1).
    pub kappa: Option<f64>,
    pub dt: f64,
    pub t_end: f64,
    /// "identity" | "harmonic" | "perturbed" (harmonic map, metric pushed
    /// along a holomorphic differential by `perturbation`).
    pub init: String,
    pub perturbation: f64,
    pub uniformize_tol: f64,
    pub harmonic_tol: f64,
    pub harmonic_max_iter: usize,
    pub basis_refresh_threshold: f64,
    pub hqd_min_separation: f64,
    pub cfl: f64,
    pub systole_every: usize,
    pub probe_radius: f64,
    /// Snapshot cadence in steps (0 = none).
    pub record_every: usize,
    /// Uniformized substeps per metric increment.
    pub metric_substeps: usize,
}

impl Default for FlowSpec {
    fn default() -> FlowSpec {
        let p = FlowParams::default();
        FlowSpec {
            eta: 0.1,
            kappa: None,
            dt: p.dt,
            t_end: p.t_end,
            init: "perturbed".into(),
            perturbation: 0.5,
            uniformize_tol: p.uniformize_tol,
            harmonic_tol: p.harmonic_tol,
            harmonic_max_iter: p.harmonic_max_iter,
            basis_refresh_threshold: p.basis_refresh_threshold,
            hqd_min_separation: p.hqd_min_separation,
            cfl: p.cfl,
            systole_every: p.systole_every,
            probe_radius: p.probe_radius,
            record_every: 0,
            metric_substeps: p.metric_substeps,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub etas: Vec<f64>,
    pub kappas: Vec<f64>,
    /// Transient cutoff for κ-sweep statistics, as a fraction of t_end.
    pub eps_frac: f64,
    /// Comparison-grid coarsening for the κ-sweep (in steps of the coarsest
    /// run); the limit flow steps at this grid spacing.
    pub grid_stride: usize,
}

impl Default for SweepSpec {
    fn default() -> SweepSpec {
        SweepSpec {
            etas: vec![0.4, 0.2, 0.1, 0.05],
            kappas: vec![4.0, 8.0, 16.0, 32.0],
            eps_frac: 0.1,
            grid_stride: 16,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config, CliError> {
        let cfg = match path {
            None => Config::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.schema_version != SCHEMA_VERSION {
            return bad(&format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        match (&self.mesh.level, &self.mesh.path) {
            (Some(_), Some(_)) => return bad("mesh.level and mesh.path are mutually exclusive"),
            (None, None) => return bad("one of mesh.level or mesh.path is required"),
            _ => {}
        }
        if !matches!(self.target.kind.as_str(), "hyperbolic" | "torus") {
            return bad(&format!("unknown target.kind {:?}", self.target.kind));
        }
        if !matches!(self.flow.init.as_str(), "identity" | "harmonic" | "perturbed") {
            return bad(&format!("unknown flow.init {:?}", self.flow.init));
        }
        for (name, v) in [
            ("flow.eta", self.flow.eta),
            ("flow.dt", self.flow.dt),
            ("flow.t_end", self.flow.t_end),
            ("target.r1", self.target.r1),
            ("target.r2", self.target.r2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive and finite"));
            }
        }
        if let Some(k) = self.flow.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return bad("flow.kappa must be positive and finite");
            }
        }
        Ok(())
    }

    /// Canonical text of the resolved configuration (echoed into the run
    /// directory; its hash keys the manifest).
    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_toml().as_bytes());
        let d = h.finalize();
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn flow_params(&self) -> FlowParams {
        let f = &self.flow;
        let (a_map, b_metric) = match f.kappa {
            Some(k) => (k, 1.0),
            None => (1.0, f.eta * f.eta / 4.0),
        };
        FlowParams {
            a_map,
            b_metric,
            dt: f.dt,
            t_end: f.t_end,
            uniformize_tol: f.uniformize_tol,
            basis_refresh_threshold: f.basis_refresh_threshold,
            hqd_min_separation: f.hqd_min_separation,
            harmonic_tol: f.harmonic_tol,
            harmonic_max_iter: f.harmonic_max_iter,
            cfl: f.cfl,
            systole_every: f.systole_every,
            probe_radius: f.probe_radius,
            record_every: if f.record_every == 0 {
                usize::MAX
            } else {
                f.record_every
            },
            metric_substeps: f.metric_substeps.max(1),
        }
    }
}

/// Output directory resolution: explicit flag, then config, then the
/// TEICHFLOW_OUT environment variable, then ./teichflow-out.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &Config) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output.dir {
        return p.clone();
    }
    if let Ok(p) = std::env::var("TEICHFLOW_OUT") {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    PathBuf::from("teichflow-out")
}

// ---------------------------------------------------------------------------
// experiment assembly
// ---------------------------------------------------------------------------

pub struct Experiment {
    pub surface: OctagonSurface,
    pub target: Target,
    pub init: FlowState,
    pub params: FlowParams,
}

pub fn build_experiment(cfg: &Config) -> Result<Experiment, CliError> {
    let surface = match (&cfg.mesh.level, &cfg.mesh.path) {
        (Some(level), None) => build_genus2_octagon(*level)
            .map_err(|e| CliError::Config(format!("mesh build failed: {e}")))?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            surfio::read_surface(&text)
                .map_err(|e| CliError::Config(format!("bad surface file: {e}")))?
        }
        _ => unreachable!("validated"),
    };
    let target = match cfg.target.kind.as_str() {
        "hyperbolic" => Target::HyperbolicQuotient {
            rep: FuchsianRep::new(surface.generators)
                .map_err(|e| CliError::Config(format!("bad generators: {e}")))?,
        },
        "torus" => Target::FlatTorus {
            r1: cfg.target.r1,
            r2: cfg.target.r2,
        },
        _ => unreachable!("validated"),
    };
    let u0 = match &target {
        Target::HyperbolicQuotient { .. } => MapState {
            points: surface.lift.iter().map(|z| TargetPoint::Hyp(*z)).collect(),
            winding: None,
        },
        Target::FlatTorus { r1, r2 } => {
            let class = maps::torus_winding_from_words(&surface.mesh);
            maps::torus_harmonic_init(&surface.mesh, &surface.metric, *r1, *r2, &class)
                .map_err(|e| CliError::Config(format!("torus init failed: {e}")))?
        }
        Target::RoundSphere { .. } => {
            return Err(CliError::Config(
                "positively curved targets are diagnostics-only".into(),
            ))
        }
    };
    let params = cfg.flow_params();
    let numerr = |e: &dyn std::fmt::Display| CliError::Config(format!("init failed: {e}"));
    let (u, g) = match cfg.flow.init.as_str() {
        "identity" => (u0, surface.metric.clone()),
        "harmonic" => {
            let (u, _) = maps::harmonic_solve(
                &surface.mesh,
                &surface.metric,
                &target,
                &u0,
                params.harmonic_tol,
                params.harmonic_max_iter,
            )
            .map_err(|e| numerr(&e))?;
            (u, surface.metric.clone())
        }
        "perturbed" => {
            let (u, _) = maps::harmonic_solve(
                &surface.mesh,
                &surface.metric,
                &target,
                &u0,
                params.harmonic_tol,
                params.harmonic_max_iter,
            )
            .map_err(|e| numerr(&e))?;
            let basis = qdiff::hqd_basis_min_sep(
                &surface.mesh,
                &surface.metric,
                params.hqd_min_separation,
            )
            .map_err(|e| numerr(&e))?;
            let h = qdiff::re_part(&basis.elements[0]);
            let g = flow::metric_step(
                &surface.mesh,
                &surface.metric,
                &h,
                cfg.flow.perturbation,
                params.uniformize_tol,
                1,
            )
            .map_err(|e| numerr(&e))?;
            (u, g)
        }
        _ => unreachable!("validated"),
    };
    Ok(Experiment {
        surface,
        target,
        init: FlowState { t: 0.0, u, g },
        params,
    })
}

// ---------------------------------------------------------------------------
// file emission
// ---------------------------------------------------------------------------

/// Write via a temporary file in the same directory plus rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

pub fn rows_to_csv(rows: &[DiagnosticsRow]) -> String {
    let mut out = String::from(DiagnosticsRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn rows_to_dat(rows: &[DiagnosticsRow]) -> String {
    let mut out = format!("# {}\n", DiagnosticsRow::CSV_HEADER.replace(',', " "));
    for r in rows {
        out.push_str(&r.to_csv().replace(',', " "));
        out.push('\n');
    }
    out
}

const TRAJECTORY_GNUPLOT: &str = r##"# gnuplot script for a flow trajectory
set terminal pngcairo size 1200,800
set datafile commentschars "#"
set xlabel "t"
set output "energy.png"
plot "trajectory.dat" using 1:2 with lines title "E"
set output "tension.png"
set logscale y
plot "trajectory.dat" using 1:3 with lines title "T2"
unset logscale y
set output "metric.png"
plot "trajectory.dat" using 1:5 with lines title "L2len", \
     "trajectory.dat" using 1:7 with lines title "dC0"
"##;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub files: Vec<String>,
    /// Name → pass of every acceptance-style check this run requested.
    pub checks: BTreeMap<String, bool>,
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Accumulates a run directory's outputs and finalizes the manifest.
pub struct RunDir {
    dir: PathBuf,
    files: Vec<String>,
    checks: BTreeMap<String, bool>,
    started: u64,
    config_hash: String,
}

impl RunDir {
    pub fn create(dir: &Path, cfg: &Config) -> Result<RunDir, CliError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut rd = RunDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            checks: BTreeMap::new(),
            started: now_unix(),
            config_hash: cfg.hash(),
        };
        rd.emit("config.toml", &cfg.canonical_toml())?;
        Ok(rd)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn emit(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), content)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn check(&mut self, name: &str, pass: bool) {
        self.checks.insert(name.to_string(), pass);
    }

    /// Write the manifest and report the overall outcome.
    pub fn finish(mut self) -> Result<Outcome, CliError> {
        let all_pass = self.checks.values().all(|&p| p);
        self.files.push("manifest.json".into());
        self.files.sort();
        let manifest = RunManifest {
            config_hash: self.config_hash.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: self.started,
            finished_unix: now_unix(),
            files: self.files.clone(),
            checks: self.checks.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&self.dir.join("manifest.json"), &text)?;
        Ok(if all_pass {
            Outcome::Pass
        } else {
            Outcome::ChecksFailed
        })
    }

    /// Abort path: persist the last good state and partial trajectory, then
    /// surface the numerical error (exit 3).
    pub fn abort(mut self, ab: &FlowAbort) -> CliError {
        let snapshot = self.dir.join("snapshot.json");
        let snap = Snapshot {
            config_hash: self.config_hash.clone(),
            state: (*ab.state).clone(),
        };
        let text = serde_json::to_string_pretty(&snap).expect("state serializes");
        let _ = write_atomic(&snapshot, &text);
        let _ = self.emit("trajectory.csv", &rows_to_csv(&ab.rows));
        self.check("completed", false);
        let _ = self.finish();
        CliError::Abort {
            message: ab.to_string(),
            snapshot,
        }
    }
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

pub fn cmd_mesh_gen(cfg: &Config, out: &Path) -> Result<Outcome, CliError> {
    let Some(level) = cfg.mesh.level else {
        return Err(CliError::Config("mesh gen needs mesh.level".into()));
    };
    let s = build_genus2_octagon(level)
        .map_err(|e| CliError::Config(format!("mesh build failed: {e}")))?;
    let mut rd = RunDir::create(out, cfg)?;
    rd.emit("surface.txt", &surfio::write_surface(&s))?;
    let mesh = &s.mesh;
    let chi = mesh.num_vertices as i64 - mesh.num_edges() as i64 + mesh.num_faces() as i64;
    let area: f64 = metric::face_areas(mesh, &s.metric).iter().sum();
    let gb_target = 4.0 * std::f64::consts::PI;
    println!("V - E + F = {chi}");
    println!("total area = {area} (Gauss-Bonnet target {gb_target})");
    rd.check("euler_characteristic", chi == -2);
    rd.check("gauss_bonnet", (area - gb_target).abs() <= 1e-8);
    rd.finish()
}

#[derive(Debug, Serialize)]
struct FlowSummary {
    e0: f64,
    e_final: f64,
    t2_final: f64,
    max_eires: f64,
    l2len: f64,
    l2len_bound: Option<f64>,
    sup_dc0: f64,
    min_systole: f64,
    stationary: bool,
    checks: BTreeMap<String, bool>,
}

/// Snapshot envelope: the state plus the hash of the config that produced
/// it, so a resume under a different configuration is rejected.
#[derive(Serialize, Deserialize)]
struct Snapshot {
    config_hash: String,
    state: FlowState,
}

fn load_resume(path: &Path, cfg: &Config) -> Result<FlowState, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let snap: Snapshot = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("bad snapshot {path:?}: {e}")))?;
    if snap.config_hash != cfg.hash() {
        return Err(CliError::Config(format!(
            "snapshot {path:?} was produced by a different config ({} != {})",
            snap.config_hash,
            cfg.hash()
        )));
    }
    Ok(snap.state)
}

pub fn cmd_flow_run(
    cfg: &Config,
    out: &Path,
    resume: Option<&Path>,
) -> Result<Outcome, CliError> {
    let exp = build_experiment(cfg)?;
    let init = match resume {
        Some(p) => load_resume(p, cfg)?,
        None => exp.init,
    };
    let mut rd = RunDir::create(out, cfg)?;
    let res = flow::run(
        &exp.surface.mesh,
        &exp.surface.generators,
        &init,
        &exp.params,
        &exp.target,
    )
    .map_err(|ab| {
        // RunDir is consumed by the abort path
        let fresh = RunDir::create(out, cfg).unwrap_or_else(|_| unreachable!());
        fresh.abort(&ab)
    })?;
    emit_trajectory(&mut rd, &res)?;
    let rows = &res.rows;
    let e0 = rows.first().map_or(0.0, |r| r.e);
    let max_eires = rows.iter().map(|r| r.eires).fold(0.0f64, f64::max);
    let l2len = rows.last().map_or(0.0, |r| r.l2len);
    // the L²-length bound is the η-flow statement; the rescaled flow reports
    // the raw length only
    let l2len_bound = cfg
        .flow
        .kappa
        .is_none()
        .then(|| cfg.flow.eta * (cfg.flow.t_end * e0).sqrt() * 1.05);
    let sup_dc0 = rows.iter().map(|r| r.dc0).fold(0.0f64, f64::max);
    let min_systole = rows.iter().map(|r| r.systole).fold(f64::INFINITY, f64::min);
    let stationary = rows.iter().all(|r| (r.e - e0).abs() <= 1e-6 * e0.abs());
    let mut checks = BTreeMap::new();
    if let Some(bound) = l2len_bound {
        checks.insert("l2len_bound".to_string(), l2len <= bound);
    }
    let summary = FlowSummary {
        e0,
        e_final: rows.last().map_or(0.0, |r| r.e),
        t2_final: rows.last().map_or(0.0, |r| r.t2),
        max_eires,
        l2len,
        l2len_bound,
        sup_dc0,
        min_systole,
        stationary,
        checks: checks.clone(),
    };
    rd.emit(
        "summary.json",
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    for (name, pass) in checks {
        rd.check(&name, pass);
    }
    rd.check("completed", true);
    rd.finish()
}

pub fn cmd_limit_run(
    cfg: &Config,
    out: &Path,
    resume: Option<&Path>,
) -> Result<Outcome, CliError> {
    let exp = build_experiment(cfg)?;
    let init = match resume {
        Some(p) => load_resume(p, cfg)?,
        None => exp.init,
    };
    let mut rd = RunDir::create(out, cfg)?;
    let res = flow::run_limit_flow(
        &exp.surface.mesh,
        &exp.surface.generators,
        &init,
        &exp.params,
        &exp.target,
    )
    .map_err(|ab| {
        let fresh = RunDir::create(out, cfg).unwrap_or_else(|_| unreachable!());
        fresh.abort(&ab)
    })?;
    emit_trajectory(&mut rd, &res)?;
    let rows = &res.rows;
    let e0 = rows.first().map_or(0.0, |r| r.e);
    let stationary = rows.iter().all(|r| (r.e - e0).abs() <= 1e-6 * e0.abs());
    let summary = serde_json::json!({
        "e0": e0,
        "e_final": rows.last().map_or(0.0, |r| r.e),
        "l2len": rows.last().map_or(0.0, |r| r.l2len),
        "sup_dc0": rows.iter().map(|r| r.dc0).fold(0.0f64, f64::max),
        "max_discarded_l1": rows.iter().map(|r| r.dbar_l1).fold(0.0f64, f64::max),
        "dgdt_rel_err": res.dgdt_rel_err,
        "max_eires": rows.iter().map(|r| r.eires).fold(0.0f64, f64::max),
        "stationary": stationary,
    });
    rd.emit(
        "summary.json",
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    rd.check("completed", true);
    rd.finish()
}

fn emit_trajectory(rd: &mut RunDir, res: &RunResult) -> Result<(), CliError> {
    rd.emit("trajectory.csv", &rows_to_csv(&res.rows))?;
    rd.emit("trajectory.dat", &rows_to_dat(&res.rows))?;
    rd.emit("plot.gnuplot", TRAJECTORY_GNUPLOT)?;
    let state = serde_json::to_string_pretty(&res.final_state).expect("state serializes");
    rd.emit("final_state.json", &state)?;
    Ok(())
}

pub fn cmd_sweep_eta(cfg: &Config, out: &Path) -> Result<Outcome, CliError> {
    let exp = build_experiment(cfg)?;
    let mut rd = RunDir::create(out, cfg)?;
    let report = flow::eta_sweep(
        &exp.surface.mesh,
        &exp.surface.generators,
        &exp.init,
        &cfg.sweep.etas,
        &exp.params,
        &exp.target,
    )
    .map_err(|ab| {
        let fresh = RunDir::create(out, cfg).unwrap_or_else(|_| unreachable!());
        fresh.abort(&ab)
    })?;
    let slope_ok = report.dc0_slope >= 0.8;
    let entries: Vec<serde_json::Value> = report
        .entries
        .iter()
        .map(|e| {
            serde_json::json!({
                "eta": e.eta,
                "sup_dc0": e.sup_dc0,
                "sup_map_l2": e.sup_map_l2,
            })
        })
        .collect();
    let summary = serde_json::json!({
        "entries": entries,
        "dc0_slope": report.dc0_slope,
        "map_dist_monotone": report.map_dist_monotone,
        "checks": {
            "dc0_slope_ge_0.8": slope_ok,
            "map_dist_monotone": report.map_dist_monotone,
        },
    });
    rd.emit(
        "eta_sweep.json",
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    let mut dat = String::from("# eta sup_dc0 sup_map_l2\n");
    for e in &report.entries {
        writeln!(dat, "{} {} {}", e.eta, e.sup_dc0, e.sup_map_l2).unwrap();
    }
    rd.emit("eta_sweep.dat", &dat)?;
    rd.emit(
        "plot.gnuplot",
        "set terminal pngcairo\nset logscale xy\nset output \"eta_sweep.png\"\n\
         plot \"eta_sweep.dat\" using 1:2 with linespoints title \"sup dC0\"\n",
    )?;
    rd.check("dc0_slope_ge_0.8", slope_ok);
    rd.check("map_dist_monotone", report.map_dist_monotone);
    rd.finish()
}

pub fn cmd_sweep_kappa(cfg: &Config, out: &Path) -> Result<Outcome, CliError> {
    let exp = build_experiment(cfg)?;
    let mut rd = RunDir::create(out, cfg)?;
    let eps = cfg.sweep.eps_frac * cfg.flow.t_end;
    let report = flow::kappa_sweep(
        &exp.surface.mesh,
        &exp.surface.generators,
        &exp.init,
        &cfg.sweep.kappas,
        eps,
        cfg.sweep.grid_stride,
        &exp.params,
        &exp.target,
    )
    .map_err(|ab| {
        let fresh = RunDir::create(out, cfg).unwrap_or_else(|_| unreachable!());
        fresh.abort(&ab)
    })?;
    let slope_ok = report.tension_slope <= -0.8;
    let pair_dc0: Vec<f64> = report
        .entries
        .iter()
        .filter(|e| !e.sup_dc0_to_next.is_nan())
        .map(|e| e.sup_dc0_to_next)
        .collect();
    let cauchy = pair_dc0.windows(2).all(|w| w[1] < w[0]);
    let dgdt_ok = report.limit_dgdt_rel_err <= 1e-2;
    let entries: Vec<serde_json::Value> = report
        .entries
        .iter()
        .map(|e| {
            serde_json::json!({
                "kappa": e.kappa,
                "max_tension_after_eps": e.max_tension_after_eps,
                "sup_dc0_to_next": if e.sup_dc0_to_next.is_nan() {
                    serde_json::Value::Null
                } else {
                    serde_json::json!(e.sup_dc0_to_next)
                },
                "sup_dc0_to_limit": e.sup_dc0_to_limit,
                "sup_map_c0_to_limit": e.sup_map_c0_to_limit,
            })
        })
        .collect();
    let summary = serde_json::json!({
        "entries": entries,
        "tension_slope": report.tension_slope,
        "limit_dgdt_rel_err": report.limit_dgdt_rel_err,
        "checks": {
            "tension_slope_le_-0.8": slope_ok,
            "dc0_pairs_strictly_decreasing": cauchy,
            "limit_dgdt_rel_err_le_1e-2": dgdt_ok,
        },
    });
    rd.emit(
        "kappa_sweep.json",
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    let mut dat = String::from("# kappa max_tension dc0_next dc0_limit map_c0_limit\n");
    for e in &report.entries {
        writeln!(
            dat,
            "{} {} {} {} {}",
            e.kappa,
            e.max_tension_after_eps,
            e.sup_dc0_to_next,
            e.sup_dc0_to_limit,
            e.sup_map_c0_to_limit
        )
        .unwrap();
    }
    rd.emit("kappa_sweep.dat", &dat)?;
    rd.emit(
        "plot.gnuplot",
        "set terminal pngcairo\nset logscale xy\nset output \"kappa_sweep.png\"\n\
         plot \"kappa_sweep.dat\" using 1:2 with linespoints title \"max tension\"\n",
    )?;
    rd.check("tension_slope_le_-0.8", slope_ok);
    rd.check("dc0_pairs_strictly_decreasing", cauchy);
    rd.check("limit_dgdt_rel_err_le_1e-2", dgdt_ok);
    rd.finish()
}

pub fn cmd_diag_hqd(cfg: &Config, out: &Path) -> Result<Outcome, CliError> {
    let exp = build_experiment(cfg)?;
    let mut rd = RunDir::create(out, cfg)?;
    let basis = qdiff::hqd_basis_min_sep(
        &exp.surface.mesh,
        &exp.surface.metric,
        1.0, // report the measured separation rather than failing early
    )
    .map_err(|e| CliError::Config(format!("hqd diagnostics failed: {e}")))?;
    let separation = basis.lambda_gap / basis.lambda_ker;
    let kernel_ok = basis.elements.len() == qdiff::HQD_DIM;
    let sep_ok = separation >= cfg.flow.hqd_min_separation;
    let basis_dbar: Vec<f64> = basis
        .elements
        .iter()
        .map(|e| qdiff::dbar_residual(e, &exp.surface.mesh, &exp.surface.metric))
        .collect();
    let summary = serde_json::json!({
        "kernel_dim": basis.elements.len(),
        "lambda_ker": basis.lambda_ker,
        "lambda_gap": basis.lambda_gap,
        "separation": separation,
        "eigenvalues": basis.eigenvalues,
        "basis_dbar_residuals": basis_dbar,
        "checks": {
            "kernel_dim_6": kernel_ok,
            "separation": sep_ok,
        },
    });
    rd.emit(
        "hqd.json",
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    rd.check("kernel_dim_6", kernel_ok);
    rd.check("separation", sep_ok);
    rd.finish()
}

/// Aggregate every run manifest under `root` into a single human-readable
/// report. Idempotent: contains no timestamps of its own.
pub fn cmd_report(root: &Path) -> Result<Outcome, CliError> {
    let mut report = String::from("teichflow run report\n====================\n");
    let mut dirs: Vec<PathBuf> = Vec::new();
    if root.is_dir() {
        for entry in std::fs::read_dir(root).map_err(io_err(root))? {
            let entry = entry.map_err(io_err(root))?;
            if entry.path().is_dir() {
                dirs.push(entry.path());
            }
        }
    }
    dirs.sort();
    let mut missing = Vec::new();
    let mut listed = 0usize;
    for dir in &dirs {
        let mpath = dir.join("manifest.json");
        if !mpath.is_file() {
            missing.push(dir.clone());
            continue;
        }
        let text = std::fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("bad manifest {mpath:?}: {e}")))?;
        let npass = m.checks.values().filter(|&&p| p).count();
        let status = if npass == m.checks.len() { "PASS" } else { "FAIL" };
        let name = dir.file_name().map(|s| s.to_string_lossy().into_owned());
        writeln!(
            report,
            "{}: {status} ({npass}/{} checks)  config {}",
            name.unwrap_or_default(),
            m.checks.len(),
            &m.config_hash[..12.min(m.config_hash.len())]
        )
        .unwrap();
        for (check, pass) in &m.checks {
            writeln!(report, "    {} {check}", if *pass { "ok  " } else { "FAIL" }).unwrap();
        }
        listed += 1;
    }
    if listed == 0 {
        report.push_str("(no runs found)\n");
        eprintln!("warning: no run manifests under {}", root.display());
    }
    for dir in &missing {
        writeln!(report, "missing manifest: {}", dir.display()).unwrap();
        eprintln!("warning: {} has no manifest.json", dir.display());
    }
    write_atomic(&root.join("report.txt"), &report)?;
    println!("{report}");
    Ok(Outcome::Pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip_and_unknown_key_rejection() {
        let cfg = Config::default();
        let text = cfg.canonical_toml();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back.hash(), cfg.hash());
        let bad = format!("{text}\nnot_a_key = 1\n");
        assert!(toml::from_str::<Config>(&bad).is_err());
        let wrong_version = text.replace("schema_version = 1", "schema_version = 9");
        let parsed: Config = toml::from_str(&wrong_version).unwrap();
        assert!(matches!(parsed.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn config_validation_catches_contradictions() {
        let mut cfg = Config::default();
        cfg.mesh.path = Some(PathBuf::from("x"));
        assert!(cfg.validate().is_err());
        let mut cfg = Config::default();
        cfg.target.kind = "klein-bottle".into();
        assert!(cfg.validate().is_err());
        let mut cfg = Config::default();
        cfg.flow.dt = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn csv_and_dat_agree_up_to_separator() {
        let row = DiagnosticsRow {
            t: 0.125,
            e: 12.5,
            t2: 1e-3,
            pphi_l2: 0.5,
            l2len: 0.01,
            systole: 2.3,
            dc0: 1e-4,
            eires: 1e-5,
            dbar_l1: 0.2,
            conc: 0.9,
        };
        let csv = rows_to_csv(&[row]);
        let dat = rows_to_dat(&[row]);
        assert!(csv.starts_with("t,E,"));
        assert_eq!(
            csv.lines().nth(1).unwrap().replace(',', " "),
            dat.lines().nth(1).unwrap()
        );
    }
}
