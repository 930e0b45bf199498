//! Command-line front end: argument parsing and the five subcommands.
//!
//! Exit codes: 0 success, 1 a validation check failed, 2 usage or input
//! error, 3 I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::error::{usage, Error, Result};
use crate::estimators::{empirical_cdf, sm_estimate, Sample, SmoothingVector};
use crate::lscv::{select_m, Selection};
use crate::models::ModelKind;
use crate::simharness::{
    read_raw_log, run_experiment_with, summarize_log, summary_csv, write_tables, ExperimentConfig,
    CONFIG_KEYS, SUMMARY_HEADER,
};
use crate::validation::{rows_csv, run_suite, Suite, DEFAULT_SEED};

pub const THREADS_ENV: &str = "SZASZ_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "szasz", version, about = "Szász–Mirakyan distribution function estimation")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate F_n and the smoothed estimator at points; prints x_1..x_d,F_ecdf,F_sm.
    Estimate(EstimateArgs),
    /// Select m by cross-validation; prints m★ and the score trace.
    Lscv(LscvArgs),
    /// Run the Monte Carlo experiment grid.
    Simulate(SimulateArgs),
    /// Run validation suites; prints check,predicted,observed,tolerance,pass.
    Validate(ValidateArgs),
    /// Recompute summary, m★ and figure tables from raw logs.
    Tables(TablesArgs),
}

/// Config file and `key=value` overrides shared by every subcommand that
/// reads experiment settings.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one config key (repeatable), e.g. --set delta=0.1.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Data file: one observation per line, comma or whitespace separated.
    #[arg(long)]
    pub data: PathBuf,

    /// Smoothing levels: one integer (isotropic), a comma list, or "auto".
    #[arg(long, short = 'm', default_value = "auto")]
    pub m: String,

    /// Evaluation point as a comma list (repeatable).
    #[arg(long = "x", value_name = "X1,X2,...")]
    pub points: Vec<String>,

    /// File of evaluation points, same format as the data file.
    #[arg(long)]
    pub points_file: Option<PathBuf>,

    /// Evaluate on the QMC grid of the config (delta, G, qmc_kind, scramble).
    #[arg(long)]
    pub grid: bool,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct LscvArgs {
    #[arg(long)]
    pub data: PathBuf,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Shorthand for --set models=<list>.
    #[arg(long)]
    pub model: Option<String>,

    /// Shorthand for --set n_mc=<N>.
    #[arg(long)]
    pub nmc: Option<usize>,

    /// Shorthand for --set sample_sizes=<list>.
    #[arg(long)]
    pub n: Option<String>,

    /// Shorthand for --set out_dir=<DIR>.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Shorthand for --set seed=<SEED>.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// bias, variance, boundary, clt, skellam, deficiency or all (repeatable).
    #[arg(long, required = true)]
    pub suite: Vec<String>,

    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TablesArgs {
    /// Raw per-replication log(s) written by simulate.
    #[arg(long, required = true)]
    pub log: Vec<PathBuf>,

    /// Output directory (defaults to the directory of the first log).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn config_help() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Config keys (config file or --set KEY=VALUE):\n");
    for (k, v) in CONFIG_KEYS {
        s.push_str(&format!("  {k:width$}  {v}\n"));
    }
    s.push_str(&format!("\nExit codes: 0 ok, 1 check failed, 2 usage, 3 I/O. {THREADS_ENV} sets the default thread count."));
    s
}

/// The clap command with the config key table attached to every
/// subcommand's help.
pub fn command() -> clap::Command {
    let help = config_help();
    let mut cmd = Cli::command().after_help(help.clone());
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        let h = help.clone();
        cmd = cmd.mut_subcommand(name, move |s| s.after_help(h));
    }
    cmd
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return EXIT_USAGE;
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return usage("--threads must be at least 1");
        }
        // a pool already built in this process keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match cli.command {
        Command::Estimate(a) => cmd_estimate(&a, out),
        Command::Lscv(a) => cmd_lscv(&a, out),
        Command::Simulate(a) => cmd_simulate(&a, out, err),
        Command::Validate(a) => cmd_validate(&a, out),
        Command::Tables(a) => cmd_tables(&a, out),
    }
}

fn split_override(raw: &str) -> Result<(String, String)> {
    match raw.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => usage(format!("override {raw:?} is not KEY=VALUE")),
    }
}

fn load_config(args: &ConfigArgs, extra: Vec<(String, String)>) -> Result<ExperimentConfig> {
    let mut overrides: Vec<(String, String)> =
        args.overrides.iter().map(|s| split_override(s)).collect::<Result<_>>()?;
    overrides.extend(extra);
    match &args.config {
        Some(path) => ExperimentConfig::from_file(path, &overrides),
        None => ExperimentConfig::from_toml("", &overrides),
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(io_error(Path::new("<stdout>")))
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| Error::Usage(format!("{what}: cannot parse {t:?}"))))
        .collect()
}

fn fmt_levels(m: &SmoothingVector) -> String {
    m.as_slice().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn selection_for(sample: &Sample, cfg: &ExperimentConfig) -> Result<Selection> {
    select_m(sample, &cfg.grid()?, &cfg.search_domain())
}

pub fn cmd_estimate(a: &EstimateArgs, out: &mut dyn Write) -> Result<i32> {
    let sample = Sample::read_delimited(&a.data)?;
    let d = sample.d();
    let mut cfg = load_config(&a.config, vec![])?;
    cfg.d = d;

    let mut points: Vec<Vec<f64>> = Vec::new();
    for p in &a.points {
        points.push(parse_list(p, "--x")?);
    }
    if let Some(path) = &a.points_file {
        let pts = Sample::read_delimited(path)?;
        points.extend(pts.rows().map(|r| r.to_vec()));
    }
    if a.grid {
        points.extend(cfg.grid()?.points().map(|r| r.to_vec()));
    }
    if points.is_empty() {
        return usage("no evaluation points; use --x, --points-file or --grid");
    }
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return usage(format!("point has {} coordinates, data has {d}", p.len()));
    }

    let mut text = String::new();
    let m = if a.m.trim().eq_ignore_ascii_case("auto") {
        let sel = selection_for(&sample, &cfg)?;
        text.push_str(&format!("# m_star={} lscv={:.12e}\n", fmt_levels(&sel.m), sel.score));
        sel.m
    } else {
        let levels: Vec<u32> = parse_list(&a.m, "-m")?;
        match levels.len() {
            1 => SmoothingVector::isotropic(levels[0], d)?,
            k if k == d => SmoothingVector::new(levels)?,
            k => return usage(format!("-m has {k} levels, data has {d} coordinates")),
        }
    };
    let header: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
    text.push_str(&format!("{},F_ecdf,F_sm\n", header.join(",")));
    for p in &points {
        let coords: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        text.push_str(&format!(
            "{},{:.12e},{:.12e}\n",
            coords.join(","),
            empirical_cdf(&sample, p)?,
            sm_estimate(&sample, &m, p)?
        ));
    }
    write_out(out, &text)?;
    Ok(EXIT_OK)
}

pub fn cmd_lscv(a: &LscvArgs, out: &mut dyn Write) -> Result<i32> {
    let sample = Sample::read_delimited(&a.data)?;
    let mut cfg = load_config(&a.config, vec![])?;
    cfg.d = sample.d();
    let sel = selection_for(&sample, &cfg)?;
    let d = sample.d();
    let mut text = format!("# m_star={} lscv={:.12e}\n", fmt_levels(&sel.m), sel.score);
    let cols: Vec<String> = (1..=d).map(|j| format!("m_{j}")).collect();
    text.push_str(&format!("stage,{},score\n", cols.join(",")));
    for t in &sel.trace {
        text.push_str(&format!("{},{},{:.12e}\n", t.stage, fmt_levels(&t.m), t.score));
    }
    write_out(out, &text)?;
    Ok(EXIT_OK)
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let mut extra = Vec::new();
    if let Some(m) = &a.model {
        extra.push(("models".to_string(), m.clone()));
    }
    if let Some(k) = a.nmc {
        extra.push(("n_mc".to_string(), k.to_string()));
    }
    if let Some(n) = &a.n {
        extra.push(("sample_sizes".to_string(), n.clone()));
    }
    if let Some(dir) = &a.out {
        extra.push(("out_dir".to_string(), format!("{:?}", dir.display().to_string())));
    }
    if let Some(s) = a.seed {
        extra.push(("seed".to_string(), s.to_string()));
    }
    let cfg = load_config(&a.config, extra)?;
    let output = run_experiment_with(&cfg, |kind, s| {
        let _ = writeln!(
            err,
            "{} n={} mean_ecdf={:.6e} mean_sm={:.6e} delta_n={:.4}",
            kind.as_str(),
            s.n,
            s.ecdf.mean,
            s.sm.mean,
            s.delta_n
        );
    })?;
    let mut text = String::new();
    let mut kinds: Vec<ModelKind> = Vec::new();
    for (k, _) in &output.summaries {
        if !kinds.contains(k) {
            kinds.push(*k);
        }
    }
    text.push_str(&format!("model,{SUMMARY_HEADER}\n"));
    for kind in kinds {
        let cells: Vec<_> =
            output.summaries.iter().filter(|(k, _)| *k == kind).map(|(_, s)| s.clone()).collect();
        for line in summary_csv(&cells).lines().skip(1) {
            text.push_str(&format!("{},{line}\n", kind.as_str()));
        }
    }
    write_out(out, &text)?;
    for f in &output.files {
        let _ = writeln!(err, "wrote {}", f.display());
    }
    Ok(EXIT_OK)
}

pub fn cmd_validate(a: &ValidateArgs, out: &mut dyn Write) -> Result<i32> {
    let mut suites = Vec::new();
    for s in &a.suite {
        for name in s.split(',') {
            if name.trim().eq_ignore_ascii_case("all") {
                suites.extend(Suite::ALL);
            } else {
                suites.push(Suite::parse(name.trim())?);
            }
        }
    }
    let mut rows = Vec::new();
    for s in suites {
        rows.extend(run_suite(s, a.seed)?);
    }
    write_out(out, &rows_csv(&rows))?;
    Ok(if rows.iter().any(|r| r.failed()) { EXIT_CHECK_FAILED } else { EXIT_OK })
}

pub fn cmd_tables(a: &TablesArgs, out: &mut dyn Write) -> Result<i32> {
    let mut records = Vec::new();
    for path in &a.log {
        records.extend(read_raw_log(path)?);
    }
    let summaries = summarize_log(&records)?;
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a.log[0].parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(&dir).map_err(io_error(&dir))?;
    let files = write_tables(&dir, &summaries)?;
    let text: String = files.iter().map(|f| format!("{}\n", f.display())).collect();
    write_out(out, &text)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("szasz").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn help_lists_every_config_key() {
        for sub in ["estimate", "lscv", "simulate", "validate", "tables"] {
            let (code, out, _) = run_capture(&[sub, "--help"]);
            assert_eq!(code, 0);
            for (k, _) in CONFIG_KEYS {
                assert!(out.contains(k), "{sub} help misses {k}");
            }
        }
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_capture(&[]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["validate", "--suite", "nope"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["simulate", "--set", "delta=1.5"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["simulate", "--set", "novalue"]).0, EXIT_USAGE);
    }

    #[test]
    fn missing_data_file_is_io_error() {
        let (code, _, err) = run_capture(&["estimate", "--data", "/nonexistent/file.csv", "--x", "1"]);
        assert_eq!(code, EXIT_IO);
        assert!(err.contains("/nonexistent/file.csv"));
    }

    #[test]
    fn deficiency_suite_passes() {
        let (code, out, _) = run_capture(&["validate", "--suite", "deficiency"]);
        assert_eq!(code, 0, "{out}");
        assert!(out.starts_with(crate::validation::CSV_HEADER));
    }
}
