//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dynamics::{integrate_riccati, TransientSolver, DEFAULT_DT};
use crate::error::Error;
use crate::linalg2::{is_positive_definite, SymMat2};
use crate::model::{
    build_system_matrices, strengths_from_coords, DetectorConfig, OscillatorParams, ParamSet,
    StrengthCoords,
};
use crate::output::{write_header, write_row};
use crate::steady_state::{
    are_residual, purity_interval, steady_state_covariance, zero_correlation_ratio,
};
use crate::sweep::{
    compare_final_correlation, log_spaced, purity_surface, render_protocol_svg, run_quasi_static,
    write_protocol_csv, write_surface_csv, QuasiStaticProtocol, SweepGrid, DEFAULT_ELLIPSE_LEVEL,
    DEFAULT_SETTLE_CRITERION,
};
use crate::trajectories::{run_ensemble, EnsembleConfig};
use crate::VERSION;

/// Environment variable capping worker threads; 0 or unset means automatic.
pub const THREADS_ENV: &str = "GAUSSMON_THREADS";

/// Correlation value quoted for the end of the squeezing protocol.
const CAPTION_FINAL_CORRELATION: f64 = -1.04;

#[derive(Debug, Parser)]
#[command(name = "gaussmon", version, about = "Covariance and trajectory analysis of a continuously monitored oscillator")]
#[command(allow_negative_numbers = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stationary covariance, purity and Riccati residual
    Steady(SteadyArgs),
    /// Closed-form transient against RK4 integration of the Riccati equation
    Transient(TransientArgs),
    /// Monte Carlo ensemble of conditional-mean trajectories
    Trajectories(TrajectoryArgs),
    /// Steady-state purity over a (q, s) grid
    Sweep(SweepArgs),
    /// Quasi-static squeezing protocol with confidence ellipses
    Protocol(ProtocolArgs),
}

#[derive(Debug, Clone, Args)]
struct ParamArgs {
    /// JSON file with any of m, omega, hbar, k_x, k_p, q, s, eta_x, eta_p
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    hbar: Option<f64>,
    #[arg(long = "k-x", conflicts_with_all = ["q", "s"])]
    k_x: Option<f64>,
    #[arg(long = "k-p", conflicts_with_all = ["q", "s"])]
    k_p: Option<f64>,
    /// Strength product k_x·k_p
    #[arg(long, requires = "s")]
    q: Option<f64>,
    /// Strength ratio k_x/k_p
    #[arg(long, requires = "q")]
    s: Option<f64>,
    #[arg(long = "eta-x")]
    eta_x: Option<f64>,
    #[arg(long = "eta-p")]
    eta_p: Option<f64>,
}

#[derive(Debug, Clone, Args)]
struct OutArgs {
    /// Output directory; without it the primary artifact goes to stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, Args)]
struct Sigma0Args {
    #[arg(long = "v-x0", requires_all = ["c0", "v_p0"])]
    v_x0: Option<f64>,
    #[arg(long = "c0", requires_all = ["v_x0", "v_p0"])]
    c0: Option<f64>,
    #[arg(long = "v-p0", requires_all = ["v_x0", "c0"])]
    v_p0: Option<f64>,
}

impl Sigma0Args {
    fn get(&self) -> Option<SymMat2> {
        match (self.v_x0, self.c0, self.v_p0) {
            (Some(a), Some(b), Some(c)) => Some(SymMat2::new(a, b, c)),
            _ => None,
        }
    }
}

#[derive(Debug, Args)]
struct SteadyArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct TransientArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Initial covariance; defaults to Σ∞ + I
    #[command(flatten)]
    sigma0: Sigma0Args,
    /// Start exactly at the stationary covariance
    #[arg(long, conflicts_with_all = ["v_x0", "c0", "v_p0"])]
    from_steady: bool,
    #[arg(long = "t-final", default_value_t = 10.0)]
    t_final: f64,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct TrajectoryArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Initial covariance; defaults to the coherent state (ħ/2)·diag(1/(mω), mω)
    #[command(flatten)]
    sigma0: Sigma0Args,
    #[arg(long = "mu-x0", default_value_t = 1.0)]
    mu_x0: f64,
    #[arg(long = "mu-p0", default_value_t = 0.0)]
    mu_p0: f64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long = "t-final", default_value_t = 10.0)]
    t_final: f64,
    #[arg(long, default_value_t = DEFAULT_DT)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record every k-th grid point
    #[arg(long = "record-every", default_value_t = 1)]
    record_every: usize,
    /// Maximum number of per-trajectory files
    #[arg(long = "max-files", default_value_t = 10)]
    max_files: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Full surface preset: 101 × 101 log grid on [1e-3, 1e3]² with figure parameters
    #[arg(long, conflicts_with = "fig3")]
    fig2: bool,
    /// Slice preset: 101 q values against fixed ratios, with figure parameters
    #[arg(long)]
    fig3: bool,
    /// Explicit q values (comma separated, increasing)
    #[arg(long = "q-values", value_delimiter = ',', conflicts_with_all = ["q_min", "q_max", "q_n"])]
    q_values: Option<Vec<f64>>,
    /// Explicit s values (comma separated, increasing)
    #[arg(long = "s-values", value_delimiter = ',', conflicts_with_all = ["s_min", "s_max", "s_n"])]
    s_values: Option<Vec<f64>>,
    #[arg(long = "q-min")]
    q_min: Option<f64>,
    #[arg(long = "q-max")]
    q_max: Option<f64>,
    #[arg(long = "q-n")]
    q_n: Option<usize>,
    #[arg(long = "s-min")]
    s_min: Option<f64>,
    #[arg(long = "s-max")]
    s_max: Option<f64>,
    #[arg(long = "s-n")]
    s_n: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct ProtocolArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Squeezing preset: s from 3 to 1e-4 over 21 log-spaced points at q = 1
    #[arg(long)]
    fig4: bool,
    /// Explicit ratio schedule (comma separated)
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["s_start", "s_end", "steps"])]
    schedule: Option<Vec<f64>>,
    #[arg(long = "s-start")]
    s_start: Option<f64>,
    #[arg(long = "s-end")]
    s_end: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Strength product held fixed during the protocol
    #[arg(long = "q-fixed")]
    q_fixed: Option<f64>,
    /// Probability mass enclosed by each ellipse
    #[arg(long, default_value_t = DEFAULT_ELLIPSE_LEVEL)]
    level: f64,
    #[command(flatten)]
    out: OutArgs,
}

/// Failure carrying the process exit code.
#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parameter file contents; every key optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamLayer {
    m: Option<f64>,
    omega: Option<f64>,
    hbar: Option<f64>,
    k_x: Option<f64>,
    k_p: Option<f64>,
    q: Option<f64>,
    s: Option<f64>,
    eta_x: Option<f64>,
    eta_p: Option<f64>,
}

impl ParamLayer {
    fn from_flags(a: &ParamArgs) -> Self {
        ParamLayer {
            m: a.m,
            omega: a.omega,
            hbar: a.hbar,
            k_x: a.k_x,
            k_p: a.k_p,
            q: a.q,
            s: a.s,
            eta_x: a.eta_x,
            eta_p: a.eta_p,
        }
    }

    fn apply(&self, p: &mut ParamSet) -> CliResult<()> {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.m, self.m);
        set(&mut p.omega, self.omega);
        set(&mut p.hbar, self.hbar);
        set(&mut p.eta_x, self.eta_x);
        set(&mut p.eta_p, self.eta_p);
        match (self.q, self.s) {
            (Some(q), Some(s)) => {
                if self.k_x.is_some() || self.k_p.is_some() {
                    return Err(input_error("q/s and k_x/k_p cannot be combined"));
                }
                let (kx, kp) = strengths_from_coords(StrengthCoords { q, s })?;
                p.k_x = kx;
                p.k_p = kp;
            }
            (None, None) => {
                set(&mut p.k_x, self.k_x);
                set(&mut p.k_p, self.k_p);
            }
            _ => return Err(input_error("q and s must be given together")),
        }
        Ok(())
    }
}

/// Figure-caption parameters: m = ω = 1, ħ = 2, η_x = 0.1, η_p = 0.9.
fn caption_params() -> ParamSet {
    ParamSet {
        m: 1.0,
        omega: 1.0,
        hbar: 2.0,
        k_x: 1.0,
        k_p: 1.0,
        eta_x: 0.1,
        eta_p: 0.9,
    }
}

/// Defaults, then the parameter file, then individual flags.
fn resolve_params(a: &ParamArgs) -> CliResult<(ParamSet, OscillatorParams, DetectorConfig)> {
    let mut p = caption_params();
    if let Some(path) = &a.params {
        let text = fs::read_to_string(path)
            .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
        let layer: ParamLayer = serde_json::from_str(&text)
            .map_err(|e| input_error(format!("invalid parameter file {}: {e}", path.display())))?;
        layer.apply(&mut p)?;
    }
    ParamLayer::from_flags(a).apply(&mut p)?;
    let (osc, det) = p.split()?;
    Ok((p, osc, det))
}

fn threads_from_env() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(v) if v.trim().is_empty() => Ok(0),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| input_error(format!("{THREADS_ENV} must be a nonnegative integer, got {v:?}"))),
    }
}

fn check_format(f: Option<Format>, allowed: &[Format], default: Format) -> CliResult<Format> {
    let f = f.unwrap_or(default);
    if allowed.contains(&f) {
        Ok(f)
    } else {
        Err(input_error(format!("format {f:?} is not available for this command").to_lowercase()))
    }
}

/// Writes artifacts to the output directory, or the primary one to stdout.
struct Sink<'a> {
    dir: Option<PathBuf>,
    stdout: &'a mut dyn Write,
    written: Vec<String>,
}

impl<'a> Sink<'a> {
    fn new(dir: &Option<PathBuf>, stdout: &'a mut dyn Write) -> CliResult<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d)
                .map_err(|e| input_error(format!("cannot create output directory {}: {e}", d.display())))?;
        }
        Ok(Sink {
            dir: dir.clone(),
            stdout,
            written: Vec::new(),
        })
    }

    fn file(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        if let Some(d) = &self.dir {
            write_file(&d.join(name), bytes)?;
            self.written.push(name.to_string());
        }
        Ok(())
    }

    /// Primary artifact: a file with `--out`, stdout otherwise.
    fn primary(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        if self.dir.is_some() {
            self.file(name, bytes)
        } else {
            self.stdout.write_all(bytes).map_err(|e| CliError {
                code: 3,
                message: format!("cannot write to stdout: {e}"),
            })
        }
    }

    fn metadata(&mut self, command: &str, params: &ParamSet, settings: serde_json::Value) -> CliResult<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        let mut outputs = self.written.clone();
        outputs.push("metadata.json".into());
        let doc = json!({
            "command": command,
            "version": VERSION,
            "params": params,
            "settings": settings,
            "outputs": outputs,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("metadata serializes");
        text.push('\n');
        self.file("metadata.json", text.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| input_error(format!("cannot write {}: {e}", path.display())))
}

fn to_json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

fn cmd_steady(a: &SteadyArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let format = check_format(a.out.format, &[Format::Json, Format::Csv], Format::Json)?;
    let (params, osc, det) = resolve_params(&a.params)?;
    let ss = steady_state_covariance(&osc, &det)?;
    let sys = build_system_matrices(&osc, &det)?;
    let eff = det.efficiencies();
    let coords = det.coords();
    let res = are_residual(&ss.sigma_inf, &sys);
    let interval = purity_interval(&eff);
    let report = json!({
        "params": params,
        "q": coords.q,
        "s": coords.s,
        "steady_state": ss.report(),
        "correlation_coefficient": ss.correlation_coefficient(),
        "are_residual": {
            "absolute": res.absolute,
            "q_relative": res.q_relative,
            "scaled": res.scaled,
        },
        "purity_interval": interval,
        "zero_correlation_ratio": zero_correlation_ratio(&osc, &eff),
    });
    let mut sink = Sink::new(&a.out.out, stdout)?;
    match format {
        Format::Json => sink.primary("steady.json", &to_json_bytes(&report))?,
        _ => {
            let mut buf = Vec::new();
            let cols = ["v_x_inf", "c_inf", "v_p_inf", "d_inf", "p_inf", "residual"];
            write_header(&mut buf, &cols).expect("in-memory write");
            write_row(
                &mut buf,
                &[ss.v_x_inf(), ss.c_inf(), ss.v_p_inf(), ss.d_inf, ss.p_inf, ss.residual],
            )
            .expect("in-memory write");
            sink.primary("steady.csv", &buf)?;
        }
    }
    sink.metadata("steady", &params, json!({ "format": format }))
}

fn cmd_transient(a: &TransientArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    check_format(a.out.format, &[Format::Csv], Format::Csv)?;
    let (params, osc, det) = resolve_params(&a.params)?;
    let sys = build_system_matrices(&osc, &det)?;
    let ss = steady_state_covariance(&osc, &det)?;
    let sigma0 = if a.from_steady {
        ss.sigma_inf
    } else {
        a.sigma0.get().unwrap_or(ss.sigma_inf + SymMat2::IDENTITY)
    };
    if !sigma0.is_finite() || !is_positive_definite(&sigma0) {
        return Err(input_error("sigma0 must be positive definite"));
    }
    let path = integrate_riccati(&sigma0, &sys, a.t_final, a.dt)?;
    let mut warnings = Vec::new();
    let solver = match TransientSolver::new(&sigma0, &ss, &sys) {
        Ok(s) => Some(s),
        Err(Error::Precondition(msg)) => {
            warnings.push(format!("closed form omitted: {msg}"));
            None
        }
        Err(e) => return Err(e.into()),
    };
    let mut buf = Vec::new();
    let mut max_dev: Option<f64> = None;
    if let Some(solver) = &solver {
        let cols = [
            "t", "cf_v_x", "cf_c", "cf_v_p", "rk4_v_x", "rk4_c", "rk4_v_p", "dev_v_x", "dev_c", "dev_v_p",
        ];
        write_header(&mut buf, &cols).expect("in-memory write");
        let mut worst = 0.0f64;
        for (t, rk) in path.times.iter().zip(&path.covs) {
            let cf = solver.at(*t)?;
            let d = cf - *rk;
            worst = worst.max(d.max_abs());
            write_row(&mut buf, &[*t, cf.xx, cf.xp, cf.pp, rk.xx, rk.xp, rk.pp, d.xx, d.xp, d.pp])
                .expect("in-memory write");
        }
        max_dev = Some(worst);
    } else {
        write_header(&mut buf, &["t", "rk4_v_x", "rk4_c", "rk4_v_p"]).expect("in-memory write");
        for (t, rk) in path.times.iter().zip(&path.covs) {
            write_row(&mut buf, &[*t, rk.xx, rk.xp, rk.pp]).expect("in-memory write");
        }
    }
    for w in &warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    match max_dev {
        Some(d) => {
            let _ = writeln!(stderr, "max deviation: {d:e}");
        }
        None => {
            let _ = writeln!(stderr, "max deviation: n/a");
        }
    }
    let mut sink = Sink::new(&a.out.out, stdout)?;
    sink.primary("transient.csv", &buf)?;
    sink.metadata(
        "transient",
        &params,
        json!({
            "sigma0": [sigma0.xx, sigma0.xp, sigma0.pp],
            "t_final": a.t_final,
            "dt": a.dt,
            "max_deviation": max_dev,
            "warnings": warnings,
        }),
    )
}

fn cmd_trajectories(a: &TrajectoryArgs, stdout: &mut dyn Write, threads: usize) -> CliResult<()> {
    check_format(a.out.format, &[Format::Csv], Format::Csv)?;
    if a.n == 0 {
        return Err(input_error("n must be at least 1"));
    }
    let (params, osc, det) = resolve_params(&a.params)?;
    let sys = build_system_matrices(&osc, &det)?;
    let sigma0 = a.sigma0.get().unwrap_or_else(|| {
        let mw = osc.mass * osc.omega;
        SymMat2::diag(0.5 * osc.hbar / mw, 0.5 * osc.hbar * mw)
    });
    if !sigma0.is_finite() || !is_positive_definite(&sigma0) {
        return Err(input_error("sigma0 must be positive definite"));
    }
    let path = integrate_riccati(&sigma0, &sys, a.t_final, a.dt)?;
    let keep = if a.out.out.is_some() { a.max_files.min(a.n) } else { 0 };
    let cfg = EnsembleConfig {
        mu0: [a.mu_x0, a.mu_p0],
        dt: a.dt,
        n_traj: a.n,
        seed: a.seed,
        record_every: a.record_every,
        threads,
        keep,
    };
    let run = run_ensemble(&cfg, &path, &sys)?;
    let mut sink = Sink::new(&a.out.out, stdout)?;
    for (i, rec) in run.kept.iter().enumerate() {
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).expect("in-memory write");
        sink.file(&format!("trajectory_{i:05}.csv"), &buf)?;
    }
    let mut buf = Vec::new();
    if a.n == 1 {
        write_header(&mut buf, &["t", "mean_mu_x", "mean_mu_p"]).expect("in-memory write");
        let acc = &run.accumulator;
        for (t, m) in acc.times().iter().zip(acc.means()) {
            write_row(&mut buf, &[*t, m[0], m[1]]).expect("in-memory write");
        }
    } else {
        run.accumulator.finish()?.write_csv(&mut buf).expect("in-memory write");
    }
    sink.primary("ensemble.csv", &buf)?;
    if sink.dir.is_some() {
        let mut cov = Vec::new();
        write_header(&mut cov, &["t", "v_x", "c", "v_p"]).expect("in-memory write");
        let last = path.len() - 1;
        for (k, (t, s)) in path.times.iter().zip(&path.covs).enumerate() {
            if k % a.record_every == 0 || k == last {
                write_row(&mut cov, &[*t, s.xx, s.xp, s.pp]).expect("in-memory write");
            }
        }
        sink.file("covariance.csv", &cov)?;
    }
    sink.metadata(
        "trajectories",
        &params,
        json!({
            "n": a.n,
            "seed": a.seed,
            "rng": "ChaCha8, stream = trajectory index",
            "mu0": [a.mu_x0, a.mu_p0],
            "sigma0": [sigma0.xx, sigma0.xp, sigma0.pp],
            "t_final": a.t_final,
            "dt": a.dt,
            "record_every": a.record_every,
            "max_files": a.max_files,
        }),
    )
}

fn axis(
    explicit: &Option<Vec<f64>>,
    lo: Option<f64>,
    hi: Option<f64>,
    n: Option<usize>,
    default: (f64, f64, usize),
) -> CliResult<Vec<f64>> {
    match explicit {
        Some(v) => Ok(v.clone()),
        None => Ok(log_spaced(
            lo.unwrap_or(default.0),
            hi.unwrap_or(default.1),
            n.unwrap_or(default.2),
        )?),
    }
}

fn cmd_sweep(a: &SweepArgs, stdout: &mut dyn Write, pool: &rayon::ThreadPool) -> CliResult<()> {
    let format = check_format(a.out.format, &[Format::Csv, Format::Json], Format::Csv)?;
    let (params, osc, det) = resolve_params(&a.params)?;
    let eff = det.efficiencies();
    let (grid, preset) = if a.fig2 {
        (SweepGrid::surface_preset(osc, eff)?, Some("fig2"))
    } else if a.fig3 {
        (SweepGrid::slices_preset(osc, eff)?, Some("fig3"))
    } else {
        let q = axis(&a.q_values, a.q_min, a.q_max, a.q_n, (1e-3, 1e3, 101))?;
        let s = axis(&a.s_values, a.s_min, a.s_max, a.s_n, (1e-3, 1e3, 101))?;
        (SweepGrid::new(q, s, osc, eff)?, None)
    };
    let rows = pool.install(|| purity_surface(&grid))?;
    let mut buf = Vec::new();
    match format {
        Format::Json => buf = to_json_bytes(&rows),
        _ => write_surface_csv(&rows, &mut buf).expect("in-memory write"),
    }
    let mut sink = Sink::new(&a.out.out, stdout)?;
    let name = if format == Format::Json { "surface.json" } else { "surface.csv" };
    sink.primary(name, &buf)?;
    sink.metadata(
        "sweep",
        &params,
        json!({
            "preset": preset,
            "q_values": grid.q_values,
            "s_values": grid.s_values,
            "row_order": "q outer, s inner",
            "zero_correlation_ratio": zero_correlation_ratio(&osc, &eff),
            "purity_interval": purity_interval(&eff),
        }),
    )
}

fn cmd_protocol(a: &ProtocolArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    let format = check_format(a.out.format, &[Format::Csv, Format::Svg], Format::Csv)?;
    let (params, osc, det) = resolve_params(&a.params)?;
    let eff = det.efficiencies();
    let mut protocol = QuasiStaticProtocol::squeezing_preset();
    if !a.fig4 {
        if let Some(s) = &a.schedule {
            protocol.s_schedule = s.clone();
        } else if a.s_start.is_some() || a.s_end.is_some() || a.steps.is_some() {
            let start = a.s_start.unwrap_or(3.0);
            let end = a.s_end.unwrap_or(1e-4);
            let mut s = log_spaced(start.min(end), start.max(end), a.steps.unwrap_or(21))?;
            if start > end {
                s.reverse();
            }
            protocol.s_schedule = s;
        }
        if let Some(q) = a.q_fixed {
            protocol.q_fixed = q;
        }
    }
    protocol.level = a.level;
    protocol.validate()?;
    let steps = run_quasi_static(&protocol, &osc, &eff)?;
    let cmp = compare_final_correlation(&steps, CAPTION_FINAL_CORRELATION);
    if let Some(c) = &cmp {
        let _ = writeln!(
            stderr,
            "final point: c_inf = {:.4}, correlation coefficient = {:.4}; closer to {}: {:?}",
            c.c_inf, c.correlation_coefficient, c.target, c.closer
        );
    }
    let mut csv = Vec::new();
    write_protocol_csv(&steps, &mut csv).expect("in-memory write");
    let svg = render_protocol_svg(&steps);
    let mut sink = Sink::new(&a.out.out, stdout)?;
    if sink.dir.is_some() {
        sink.file("protocol.csv", &csv)?;
        sink.file("protocol.svg", svg.as_bytes())?;
    } else if format == Format::Svg {
        sink.primary("protocol.svg", svg.as_bytes())?;
    } else {
        sink.primary("protocol.csv", &csv)?;
    }
    let correlation: Vec<f64> = steps.iter().map(|s| s.solution.correlation_coefficient()).collect();
    sink.metadata(
        "protocol",
        &params,
        json!({
            "preset": a.fig4.then_some("fig4"),
            "s_schedule": protocol.s_schedule,
            "schedule_spacing": if a.schedule.is_some() { "explicit" } else { "logarithmic" },
            "q_fixed": protocol.q_fixed,
            "ellipse_level": protocol.level,
            "settle_criterion": DEFAULT_SETTLE_CRITERION,
            "quasi_static": "instantaneous steady state at each schedule point",
            "correlation_coefficient": correlation,
            "final_correlation": cmp,
        }),
    )
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write, threads: usize) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError {
            code: 3,
            message: format!("thread pool: {e}"),
        })?;
    match &cli.command {
        Command::Steady(a) => cmd_steady(a, stdout),
        Command::Transient(a) => cmd_transient(a, stdout, stderr),
        Command::Trajectories(a) => cmd_trajectories(a, stdout, threads),
        Command::Sweep(a) => cmd_sweep(a, stdout, &pool),
        Command::Protocol(a) => cmd_protocol(a, stdout, stderr),
    }
}

/// Parses `args` (including the program name) and runs one command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(rendered.as_bytes())
            } else {
                stderr.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let outcome = threads_from_env().and_then(|threads| dispatch(&cli, stdout, stderr, threads));
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}
