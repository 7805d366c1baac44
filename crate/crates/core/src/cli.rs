//! Command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input, 3 a receiver failed to decode
//! (or the channel never reached generic position), 4 the batch does not
//! clear the delayed schedule, 1 anything else (I/O).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_traits::{One, Zero};

use crate::dof::{sweep, write_csv, DofPoint, SweepSpec, CSV_HEADER};
use crate::error::Error;
use crate::model::{normalize_config, Demand, RawConfig, SystemConfig};
use crate::ratio::{decimal, exact, parse_rational, Rational};
use crate::trace::{simulate, verify_trace, write_trace, Regime};

pub const SIG_DIGITS: usize = 6;

#[derive(Parser, Debug)]
#[command(name = "cacheic", version, about = "Coded caching DoF calculator and delivery simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Closed-form DoF at one cache point
    Dof {
        #[command(flatten)]
        params: Params,
        /// Print the sweep CSV header and row instead of text
        #[arg(long)]
        csv: bool,
    },
    /// DoF table over a grid of alpha or beta values
    Sweep(SweepArgs),
    /// Run a delivery simulation and print its report
    Simulate(SimArgs),
    /// Run a simulation and dump the JSON-lines trace, or verify one
    Trace {
        #[command(flatten)]
        sim: SimArgs,
        /// Replay an existing trace and print the rebuilt report
        #[arg(long, value_name = "FILE")]
        verify: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct Params {
    #[arg(long = "k_t")]
    pub k_t: Option<i64>,
    #[arg(long = "k_r")]
    pub k_r: Option<i64>,
    /// Number of files
    #[arg(long = "n")]
    pub n: Option<i64>,
    #[arg(long = "m_t")]
    pub m_t: Option<String>,
    #[arg(long = "m_r")]
    pub m_r: Option<String>,
    #[arg(long = "t_t")]
    pub t_t: Option<String>,
    #[arg(long = "t_r")]
    pub t_r: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long = "t_c")]
    pub t_c: Option<String>,
    #[arg(long = "t_f")]
    pub t_f: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "field-prime")]
    pub field_prime: Option<u64>,
    /// JSON config file; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    #[command(flatten)]
    pub params: Params,
    #[arg(long, value_enum, default_value = "full")]
    pub regime: Regime,
    /// Symbols per minifile
    #[arg(long)]
    pub batch: Option<usize>,
    /// Comma-separated 1-based file index per receiver (default: round robin)
    #[arg(long)]
    pub demand: Option<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Fig3,
    Fig4,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    Alpha,
    Beta,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Which parameter the grid runs over
    #[arg(long, value_enum, default_value = "alpha")]
    pub mode: SweepMode,
    /// Values or ranges (`start:end:step`), comma separated
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    /// Aggregate cache sums t_t + t_r
    #[arg(long)]
    pub sum: Option<String>,
    /// Defaults to each sum
    #[arg(long = "k_r")]
    pub k_r: Option<u64>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: i32,
    pub msg: String,
}

impl From<Error> for Exit {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Divisibility { .. } => 4,
            Error::DecodingFailure { .. }
            | Error::GenericityFailure { .. }
            | Error::SingularSystem(_)
            | Error::SingularMatrix
            | Error::FullRowRankExhausted => 3,
            _ => 2,
        };
        let msg = match &e {
            Error::Divisibility { required, .. } => format!("error: {e}\nrequired batch: {required}"),
            _ => format!("error: {e}"),
        };
        Exit { code, msg }
    }
}

fn io_exit(e: std::io::Error) -> Exit {
    Exit { code: 1, msg: format!("error: {e}") }
}

fn rational(name: &str, v: &Option<String>) -> Result<Option<Rational>, Exit> {
    v.as_deref()
        .map(|s| parse_rational(s).map_err(|e| Exit { code: 2, msg: format!("error: --{name}: {e}") }))
        .transpose()
}

impl Params {
    /// Config file values overlaid with the flags.
    pub fn raw(&self) -> Result<RawConfig, Exit> {
        let flags = RawConfig {
            k_t: self.k_t,
            k_r: self.k_r,
            n_files: self.n,
            m_t: rational("m_t", &self.m_t)?,
            m_r: rational("m_r", &self.m_r)?,
            t_t: rational("t_t", &self.t_t)?,
            t_r: rational("t_r", &self.t_r)?,
            alpha: rational("alpha", &self.alpha)?,
            t_c: rational("t_c", &self.t_c)?,
            t_f: rational("t_f", &self.t_f)?,
            field_prime: self.field_prime,
            seed: self.seed,
        };
        let base = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Exit { code: 2, msg: format!("error: {}: {e}", path.display()) })?;
                RawConfig::from_json(&text)?
            }
            None => RawConfig::default(),
        };
        Ok(base.overlay(&flags))
    }
}

/// Writes `bytes` to `out` through a temporary sibling and a rename, or
/// to `stdout` if no path is given.
fn emit(out: &Option<PathBuf>, bytes: &[u8], stdout: &mut dyn Write) -> Result<(), Exit> {
    match out {
        None => stdout.write_all(bytes).map_err(io_exit),
        Some(path) => write_atomic(path, bytes).map_err(io_exit),
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().ok_or_else(|| std::io::Error::other("output path has no file name"))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

fn dof_point(p: &Params) -> Result<DofPoint, Exit> {
    let raw = p.raw()?;
    let need = |what: &str| Exit { code: 2, msg: format!("error: --{what} is required") };
    let k_r = raw.k_r.ok_or_else(|| need("k_r"))?;
    if k_r < 1 {
        return Err(Error::OutOfRange(format!("k_r = {k_r} (must be >= 1)")).into());
    }
    let t_t = match (&raw.t_t, &raw.m_t, raw.k_t, raw.n_files) {
        (Some(t), _, _, _) => t.clone(),
        (None, Some(m), Some(k), Some(n)) if n > 0 => m * Rational::from_integer(k.into()) / Rational::from_integer(n.into()),
        _ => return Err(need("t_t (or --m_t with --k_t and --n)")),
    };
    let t_r = match (&raw.t_r, &raw.m_r, raw.n_files) {
        (Some(t), _, _) => t.clone(),
        (None, Some(m), Some(n)) if n > 0 => m * Rational::from_integer(k_r.into()) / Rational::from_integer(n.into()),
        _ => Rational::zero(),
    };
    if t_t < Rational::one() {
        return Err(Error::TransmitCacheTooSmall(exact(&t_t)).into());
    }
    if t_r < Rational::zero() || t_r > Rational::from_integer(k_r.into()) {
        return Err(Error::OutOfRange(format!("t_r = {} (must lie in [0, k_r])", exact(&t_r))).into());
    }
    let alpha = match (&raw.alpha, &raw.t_c, &raw.t_f) {
        (Some(a), _, _) => a.clone(),
        (None, Some(tc), Some(tf)) => crate::mixed::alpha_from_block(tf, tc)?,
        (None, None, None) => Rational::zero(),
        _ => return Err(Error::Config("t_c and t_f must be given together".into()).into()),
    };
    Ok(DofPoint::evaluate(&t_t, &t_r, k_r as u64, &alpha)?)
}

fn cmd_dof(p: &Params, csv: bool, stdout: &mut dyn Write) -> Result<(), Exit> {
    let pt = dof_point(p)?;
    let text = if csv {
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&pt), SIG_DIGITS, &mut buf).map_err(io_exit)?;
        String::from_utf8(buf).expect("ascii")
    } else {
        let line = |name: &str, r: &Rational| format!("{name} {} ({})\n", decimal(r, SIG_DIGITS), exact(r));
        [line("d_full", &pt.d_full), line("d_delayed", &pt.d_delayed), line("d_mixed", &pt.d_mixed)].concat()
    };
    emit(&p.out, text.as_bytes(), stdout)
}

/// Parses `a,b,c` where each item is a value or `start:end:step`.
pub fn parse_grid(text: &str) -> Result<Vec<Rational>, Error> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let parts: Vec<&str> = item.split(':').collect();
        match parts.as_slice() {
            [v] => out.push(parse_rational(v)?),
            [a, b, step] => {
                let (a, b, step) = (parse_rational(a)?, parse_rational(b)?, parse_rational(step)?);
                if step <= Rational::zero() {
                    return Err(Error::Domain(format!("grid step {} must be > 0", exact(&step))));
                }
                let count = ((&b - &a) / &step).floor();
                if count > Rational::from_integer(100_000.into()) {
                    return Err(Error::Domain("grid has more than 100000 points".into()));
                }
                let mut x = a;
                while x <= b {
                    out.push(x.clone());
                    x += &step;
                }
            }
            _ => return Err(Error::Config(format!("bad grid item {item:?}"))),
        }
    }
    Ok(out)
}

fn parse_sums(text: &str) -> Result<Vec<u64>, Error> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().map_err(|_| Error::Config(format!("sum {s:?} is not a positive integer"))))
        .collect()
}

pub fn sweep_spec(a: &SweepArgs) -> Result<SweepSpec, Error> {
    if let Some(p) = a.preset {
        return Ok(match p {
            Preset::Fig3 => SweepSpec::fig3(),
            Preset::Fig4 => SweepSpec::fig4(),
        });
    }
    let need = |what: &str| Error::Config(format!("--{what} is required without --preset"));
    let sums = parse_sums(a.sum.as_deref().ok_or_else(|| need("sum"))?)?;
    let alphas = parse_grid(a.alpha.as_deref().ok_or_else(|| need("alpha"))?)?;
    match a.mode {
        SweepMode::Alpha => {
            let betas = parse_grid(a.beta.as_deref().unwrap_or("1"))?;
            let [beta] = betas.as_slice() else {
                return Err(Error::Config("alpha sweeps take a single --beta".into()));
            };
            Ok(SweepSpec::Alpha { beta: beta.clone(), sums, k_r: a.k_r, grid: alphas })
        }
        SweepMode::Beta => {
            let [sum] = sums.as_slice() else {
                return Err(Error::Config("beta sweeps take a single --sum".into()));
            };
            let grid = parse_grid(a.beta.as_deref().ok_or_else(|| need("beta"))?)?;
            Ok(SweepSpec::Beta { sum: *sum, k_r: a.k_r, alphas, grid })
        }
    }
}

fn cmd_sweep(a: &SweepArgs, stdout: &mut dyn Write) -> Result<(), Exit> {
    let rows = sweep(&sweep_spec(a)?)?;
    let mut buf = Vec::new();
    write_csv(&rows, SIG_DIGITS, &mut buf).map_err(io_exit)?;
    debug_assert!(buf.starts_with(CSV_HEADER.as_bytes()));
    emit(&a.out, &buf, stdout)
}

fn resolve(s: &SimArgs) -> Result<(SystemConfig, Demand), Exit> {
    let cfg = normalize_config(&s.params.raw()?)?;
    let demand = match &s.demand {
        Some(d) => Demand::parse(d, &cfg)?,
        None => Demand::round_robin(&cfg),
    };
    Ok((cfg, demand))
}

fn report_json(sim: &crate::trace::Simulation) -> serde_json::Value {
    let mut v = serde_json::to_value(&sim.report).expect("serializable");
    let obj = v.as_object_mut().expect("object");
    obj.insert("regime".into(), serde_json::to_value(sim.regime).expect("serializable"));
    obj.insert("batch".into(), sim.batch.into());
    if let Some(m) = &sim.mixed {
        obj.insert("mixed".into(), serde_json::to_value(m).expect("serializable"));
    }
    v
}

fn decode_exit(ok: &[bool]) -> Result<(), Exit> {
    match ok.iter().position(|b| !b) {
        None => Ok(()),
        Some(k) => Err(Exit { code: 3, msg: format!("error: receiver {} failed to decode", k + 1) }),
    }
}

fn cmd_simulate(s: &SimArgs, stdout: &mut dyn Write) -> Result<(), Exit> {
    let (cfg, demand) = resolve(s)?;
    let sim = simulate(s.regime, &cfg, &demand, s.batch)?;
    let mut text = serde_json::to_string(&report_json(&sim)).expect("serializable");
    text.push('\n');
    emit(&s.params.out, text.as_bytes(), stdout)?;
    decode_exit(&sim.report.decoded_ok)
}

fn cmd_trace(s: &SimArgs, verify: &Option<PathBuf>, stdout: &mut dyn Write) -> Result<(), Exit> {
    if let Some(path) = verify {
        let text = fs::read_to_string(path).map_err(|e| Exit { code: 2, msg: format!("error: {}: {e}", path.display()) })?;
        let report = verify_trace(&text)?;
        let mut out = serde_json::to_string(&report).expect("serializable");
        out.push('\n');
        emit(&s.params.out, out.as_bytes(), stdout)?;
        return decode_exit(&report.decoded_ok);
    }
    let (cfg, demand) = resolve(s)?;
    let sim = simulate(s.regime, &cfg, &demand, s.batch)?;
    let mut buf = Vec::new();
    write_trace(&sim, &mut buf).map_err(io_exit)?;
    emit(&s.params.out, &buf, stdout)?;
    decode_exit(&sim.report.decoded_ok)
}

/// Runs the CLI on `args` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let res = match &cli.command {
        Command::Dof { params, csv } => cmd_dof(params, *csv, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::Simulate(s) => cmd_simulate(s, stdout),
        Command::Trace { sim, verify } => cmd_trace(sim, verify, stdout),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.msg);
            e.code
        }
    }
}
