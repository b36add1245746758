//! Command-line front end: `test`, `protocol`, `simulate` and `power`.
//!
//! Exit codes: 0 whenever an analysis completes (whatever its verdict),
//! 2 for problems with the input data, 3 for invalid flags or settings.

pub mod envelope;
pub mod render;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::data::{iv_roles, load_csv, Dataset};
use crate::error::{Error, Result};
use crate::extests::{run_all, ExclusionConfig};
use crate::independence::Permutations;
use crate::protocol::{run_multi_instrument, run_protocol, MultiIvConfig, ProtocolConfig};
use crate::rng::RandomSource;
use crate::simulate::{power_analysis, SimulationSpec};

pub use envelope::{body_json, Body, Envelope, SCHEMA};
pub use render::render;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Caps the worker threads used by resampling loops.
pub const THREADS_ENV: &str = "IVLINGAM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ivlingam", version, about = "Test the IV exclusion restriction with DirectLiNGAM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the five exclusion tests on one instrument.
    Test(TestArgs),
    /// Full diagnostic protocol; several --z give the Bonferroni per-instrument analysis.
    Protocol(ProtocolArgs),
    /// Draw a dataset from the linear IV model with Student-t errors.
    Simulate(SimulateArgs),
    /// Monte Carlo rejection rates over a grid of alpha_zy and n.
    Power(PowerArgs),
}

#[derive(Debug, Args)]
struct TestSettings {
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap replicates B.
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    /// Permutations R, used by the permutation and HSIC tests.
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TestSettings {
    fn exclusion(&self) -> ExclusionConfig {
        ExclusionConfig {
            alpha: self.alpha,
            bootstrap: self.bootstrap,
            permutations: Permutations::Random(self.permutations),
            hsic_permutations: Permutations::Random(self.permutations),
        }
    }
}

#[derive(Debug, Args)]
struct TestArgs {
    /// CSV file with a header row.
    data: PathBuf,
    /// Instrument column.
    #[arg(long)]
    z: String,
    /// Treatment column.
    #[arg(long)]
    x: String,
    /// Outcome column.
    #[arg(long)]
    y: String,
    #[command(flatten)]
    settings: TestSettings,
    /// Also write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProtocolArgs {
    data: PathBuf,
    /// Instrument column; repeat for several instruments.
    #[arg(long, required = true)]
    z: Vec<String>,
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    #[command(flatten)]
    settings: TestSettings,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DgpArgs {
    #[arg(long, default_value_t = 0.7)]
    alpha_zx: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha_xy: f64,
    /// Degrees of freedom of the t errors.
    #[arg(long, default_value_t = 5.0)]
    df: f64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    alpha_zy: f64,
    #[command(flatten)]
    dgp: DgpArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PowerArgs {
    /// Comma-separated alpha_zy values.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.5")]
    grid_alpha_zy: Vec<f64>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "100,500,1000")]
    grid_n: Vec<usize>,
    /// Replications per cell.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[command(flatten)]
    dgp: DgpArgs,
    #[command(flatten)]
    settings: TestSettings,
    /// Write the rates as CSV (alpha_zy,n,test,rate,reps).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    let mut buf = Vec::new();
    let result = pool.install(|| dispatch(cli.command, &mut buf));
    let _ = out.write_all(&buf);
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_CONFIG
            }
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let threads: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(threads);
    }
    builder.build().map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn dispatch(command: Command, out: &mut Vec<u8>) -> Result<()> {
    match command {
        Command::Test(a) => cmd_test(a, out),
        Command::Protocol(a) => cmd_protocol(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Power(a) => cmd_power(a, out),
    }
}

fn settings_json(s: &TestSettings) -> serde_json::Value {
    json!({
        "alpha": s.alpha,
        "bootstrap": s.bootstrap,
        "permutations": s.permutations,
        "seed": s.seed,
    })
}

fn emit(out: &mut dyn Write, envelope: &Envelope, json_path: Option<&Path>) -> Result<()> {
    out.write_all(render(&envelope.body).as_bytes())?;
    if let Some(path) = json_path {
        std::fs::write(path, envelope.to_json() + "\n")?;
    }
    Ok(())
}

fn load(path: &Path, z: &[String], x: &str, y: &str) -> Result<Dataset<f64>> {
    let zs: Vec<&str> = z.iter().map(String::as_str).collect();
    load_csv(path, &iv_roles(&zs, x, y))
}

fn cmd_test(a: TestArgs, out: &mut dyn Write) -> Result<()> {
    let config = a.settings.exclusion();
    config.validate()?;
    let data = load(&a.data, std::slice::from_ref(&a.z), &a.x, &a.y)?;
    let verdict = run_all(&data, &config, &RandomSource::new(a.settings.seed))?;
    let echo = json!({
        "data": a.data.display().to_string(),
        "z": [a.z], "x": a.x, "y": a.y,
        "settings": settings_json(&a.settings),
    });
    let env = Envelope::new("test", a.settings.seed, echo, Body::Exclusion(verdict));
    emit(out, &env, a.json.as_deref())
}

fn cmd_protocol(a: ProtocolArgs, out: &mut dyn Write) -> Result<()> {
    let exclusion = a.settings.exclusion();
    exclusion.validate()?;
    let data = load(&a.data, &a.z, &a.x, &a.y)?;
    let rng = RandomSource::new(a.settings.seed);
    let body = if a.z.len() == 1 {
        let config = ProtocolConfig { exclusion, exogeneity_permutations: Permutations::Random(a.settings.permutations) };
        Body::Protocol(Box::new(run_protocol(&data, &config, &rng)?))
    } else {
        let config = MultiIvConfig { exclusion, ..MultiIvConfig::default() };
        Body::MultiInstrument(run_multi_instrument(&data, a.settings.alpha, &config, &rng)?)
    };
    let echo = json!({
        "data": a.data.display().to_string(),
        "z": a.z, "x": a.x, "y": a.y,
        "settings": settings_json(&a.settings),
    });
    let env = Envelope::new("protocol", a.settings.seed, echo, body);
    emit(out, &env, a.json.as_deref())
}

fn cmd_simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let spec = SimulationSpec {
        n: a.n,
        alpha_zx: a.dgp.alpha_zx,
        alpha_xy: a.dgp.alpha_xy,
        alpha_zy: a.alpha_zy,
        df: a.dgp.df,
        seed: a.seed,
    };
    let data = spec.generate()?;
    match a.out {
        Some(path) => data.write_csv(std::fs::File::create(path)?),
        None => data.write_csv(out),
    }
}

fn cmd_power(a: PowerArgs, out: &mut dyn Write) -> Result<()> {
    let config = a.settings.exclusion();
    config.validate()?;
    let base = SimulationSpec {
        alpha_zx: a.dgp.alpha_zx,
        alpha_xy: a.dgp.alpha_xy,
        df: a.dgp.df,
        seed: a.settings.seed,
        ..SimulationSpec::default()
    };
    let table = power_analysis(&a.grid_alpha_zy, &a.grid_n, a.reps, &base, &config, &RandomSource::new(a.settings.seed))?;
    if let Some(path) = &a.out {
        table.write_csv(std::fs::File::create(path)?)?;
    }
    let echo = json!({
        "grid_alpha_zy": a.grid_alpha_zy,
        "grid_n": a.grid_n,
        "reps": a.reps,
        "alpha_zx": a.dgp.alpha_zx,
        "alpha_xy": a.dgp.alpha_xy,
        "df": a.dgp.df,
        "settings": settings_json(&a.settings),
    });
    let env = Envelope::new("power", a.settings.seed, echo, Body::Power(table));
    emit(out, &env, a.json.as_deref())
}
