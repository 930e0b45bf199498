//! Monte Carlo experiments: ISE of the empirical CDF and of the
//! LSCV-selected estimator over replications, per (model, n) cell.
//!
//! The raw per-replication log is the source of truth. Summaries, the m★
//! table and the figure data are always recomputed from it.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::estimators::SmoothingVector;
use crate::lscv::{
    ise_from_values, qmc_grid, select_with_kernel, truth_on_grid, EvaluationGrid, GridKernel,
    IntegrationRegion, QmcKind, SearchDomain,
};
use crate::models::{build_model, mix_seed, DistributionModel, ModelKind, ModelParams};
use crate::theory::IntegratedExpansion;

/// Experiment configuration. Every field is a flat key in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub models: Vec<ModelKind>,
    pub d: usize,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub sample_sizes: Vec<usize>,
    pub n_mc: usize,
    pub delta: f64,
    #[serde(rename = "G", alias = "g")]
    pub grid_size: usize,
    pub qmc_kind: QmcKind,
    /// Seed for the QMC randomisation; absent means unscrambled.
    pub scramble: Option<u64>,
    pub m_min: u32,
    pub m_cap: u32,
    pub c: f64,
    pub passes: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = ModelParams::default();
        let s = SearchDomain::default();
        Self {
            models: vec![ModelKind::M1, ModelKind::M2],
            d: p.d,
            alpha: p.alpha,
            beta: p.beta,
            theta: p.theta,
            sample_sizes: vec![25, 50, 100, 200, 400],
            n_mc: 100,
            delta: 0.05,
            grid_size: 4096,
            qmc_kind: QmcKind::Sobol,
            scramble: None,
            m_min: s.m_min,
            m_cap: s.m_cap,
            c: s.c,
            passes: s.passes,
            seed: 20_250_101,
            out_dir: None,
        }
    }
}

/// Keys accepted by [`ExperimentConfig::from_toml`], with a one-line
/// description each.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("models", "list of models to run: m1, m2 (default [\"m1\", \"m2\"])"),
    ("d", "dimension (default 2)"),
    ("alpha", "gamma margin shape (default 2)"),
    ("beta", "gamma margin rate (default 1)"),
    ("theta", "Clayton parameter for m2 (default 2)"),
    ("sample_sizes", "list of n (default [25, 50, 100, 200, 400])"),
    ("n_mc", "replications per cell (default 100)"),
    ("delta", "region S = [delta, 1/delta)^d (default 0.05)"),
    ("G", "QMC grid size (default 4096)"),
    ("qmc_kind", "sobol or halton (default sobol)"),
    ("scramble", "seed for a random shift of the QMC grid (default off)"),
    ("m_min", "smallest smoothing level searched (default 5)"),
    ("m_cap", "hard cap on the search range (default 500)"),
    ("c", "growth constant in m_max(n) = min(c n^(2/3), m_cap, n) (default 3)"),
    ("passes", "coordinate-descent passes (default 2)"),
    ("seed", "master seed"),
    ("out_dir", "directory for raw log, summaries and figure data"),
];

fn parse_value(key: &str, raw: &str) -> toml::Value {
    let raw = raw.trim();
    let text = if key == "sample_sizes" || key == "models" {
        if raw.starts_with('[') {
            raw.to_string()
        } else {
            let items: Vec<String> = raw
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| if key == "models" { format!("\"{s}\"") } else { s.to_string() })
                .collect();
            format!("[{}]", items.join(","))
        }
    } else {
        raw.to_string()
    };
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").expect("key v was just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentConfig {
    /// Parses flat `key = value` text, applies `overrides` on top and
    /// validates the result.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)
            .map_err(|e| Error::Usage(format!("config: {}", e.message())))?;
        for (k, v) in overrides {
            table.insert(k.clone(), parse_value(k, v));
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return usage("config: models must not be empty");
        }
        if self.sample_sizes.is_empty() {
            return usage("config: sample_sizes must not be empty");
        }
        if let Some(n) = self.sample_sizes.iter().find(|&&n| n < 2) {
            return usage(format!("config: sample sizes must be at least 2, got {n}"));
        }
        if self.n_mc == 0 {
            return usage("config: n_mc must be positive");
        }
        if self.grid_size == 0 {
            return usage("config: G must be positive");
        }
        if self.passes == 0 {
            return usage("config: passes must be positive");
        }
        IntegrationRegion::new(self.delta, self.d)
            .map_err(|e| Error::Usage(format!("config: {e}")))?;
        for &kind in &self.models {
            build_model(kind, &self.model_params())?;
        }
        let dom = self.search_domain();
        for &n in &self.sample_sizes {
            dom.range(n)?;
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams { d: self.d, alpha: self.alpha, beta: self.beta, theta: self.theta }
    }

    pub fn search_domain(&self) -> SearchDomain {
        SearchDomain { m_min: self.m_min, c: self.c, m_cap: self.m_cap, passes: self.passes }
    }

    pub fn region(&self) -> Result<IntegrationRegion> {
        IntegrationRegion::new(self.delta, self.d)
    }

    pub fn grid(&self) -> Result<EvaluationGrid> {
        qmc_grid(self.region()?, self.grid_size, self.qmc_kind, self.scramble)
    }

    /// `seed(master, model, n, r)`.
    pub fn replication_seed(&self, kind: ModelKind, n: usize, r: usize) -> u64 {
        mix_seed(self.seed, &[kind.tag(), n as u64, r as u64])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub rep: usize,
    pub ise_ecdf: f64,
    pub ise_sm: f64,
    pub m_star: SmoothingVector,
}

/// Grid, truth and model for one model, shared by all its cells.
pub struct ModelContext {
    pub kind: ModelKind,
    pub model: Box<dyn DistributionModel>,
    pub grid: EvaluationGrid,
    pub truth: Vec<f64>,
}

impl ModelContext {
    pub fn new(config: &ExperimentConfig, kind: ModelKind) -> Result<Self> {
        let model = build_model(kind, &config.model_params())?;
        let grid = config.grid()?;
        let truth = truth_on_grid(model.as_ref(), &grid);
        Ok(Self { kind, model, grid, truth })
    }

    /// `n⁻¹ ∫_S σ²`, the exact IMSE of the empirical CDF (up to QMC error).
    pub fn ecdf_imse(&self, n: usize) -> Result<f64> {
        Ok(IntegratedExpansion::on_grid(self.model.as_ref(), &self.grid)?.sigma2 / n as f64)
    }

    pub fn replication(&self, config: &ExperimentConfig, n: usize, r: usize) -> Result<ReplicationResult> {
        let sample = self.model.sample(config.replication_seed(self.kind, n, r), n);
        let kernel = GridKernel::new(&sample, &self.grid)?;
        let w = self.grid.cell_weight();
        let ise_ecdf = ise_from_values(&kernel.ecdf(), &self.truth, w);
        let sel = select_with_kernel(&kernel, sample.d(), &config.search_domain())?;
        let ise_sm = ise_from_values(&kernel.estimates(&sel.m), &self.truth, w);
        Ok(ReplicationResult { rep: r, ise_ecdf, ise_sm, m_star: sel.m })
    }

    /// All replications of one cell, in replication order.
    pub fn cell(&self, config: &ExperimentConfig, n: usize) -> Result<Vec<ReplicationResult>> {
        (0..config.n_mc)
            .into_par_iter()
            .map(|r| self.replication(config, n, r))
            .collect()
    }
}

pub fn run_replication(
    config: &ExperimentConfig,
    kind: ModelKind,
    n: usize,
    r: usize,
) -> Result<ReplicationResult> {
    ModelContext::new(config, kind)?.replication(config, n, r)
}

/// Mean, type-7 quartiles and `n − 1` variance of one ISE column.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IseStats {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub variance: f64,
}

impl IseStats {
    pub fn from_values(values: &[f64]) -> Self {
        let k = values.len();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / k as f64;
        let variance = if k > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64
        } else {
            0.0
        };
        let q1 = quantile_type7(&sorted, 0.25);
        let q3 = quantile_type7(&sorted, 0.75);
        Self { mean, median: quantile_type7(&sorted, 0.5), q1, q3, iqr: q3 - q1, variance }
    }

    /// Monte Carlo standard error of the mean.
    pub fn se(&self, reps: usize) -> f64 {
        (self.variance / reps as f64).sqrt()
    }
}

/// Linear-interpolation quantile `x_(⌊h⌋) + (h − ⌊h⌋)(x_(⌊h⌋+1) − x_(⌊h⌋))`
/// with `h = (N − 1)p` on sorted data.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct IseSummary {
    pub n: usize,
    pub reps: usize,
    pub ecdf: IseStats,
    pub sm: IseStats,
    /// `n^{4/3}(mean_ecdf − mean_sm)`.
    pub delta_n: f64,
    pub m_star_min_mean: f64,
    pub m_star_max_mean: f64,
    pub m_star_min_scaled: f64,
    pub m_star_max_scaled: f64,
    /// Set when the cell has a single replication and variances are not
    /// defined (reported as 0).
    pub degenerate: bool,
}

pub fn delta_n(n: usize, mean_ecdf: f64, mean_sm: f64) -> f64 {
    (n as f64).powf(4.0 / 3.0) * (mean_ecdf - mean_sm)
}

pub fn summarize(results: &[ReplicationResult], n: usize) -> Result<IseSummary> {
    if results.is_empty() {
        return usage("cannot summarise an empty cell");
    }
    let reps = results.len();
    let ecdf = IseStats::from_values(&results.iter().map(|r| r.ise_ecdf).collect::<Vec<_>>());
    let sm = IseStats::from_values(&results.iter().map(|r| r.ise_sm).collect::<Vec<_>>());
    let scale = (n as f64).powf(2.0 / 3.0);
    let min_mean = results.iter().map(|r| r.m_star.min_level() as f64).sum::<f64>() / reps as f64;
    let max_mean = results.iter().map(|r| r.m_star.max_level() as f64).sum::<f64>() / reps as f64;
    Ok(IseSummary {
        n,
        reps,
        delta_n: delta_n(n, ecdf.mean, sm.mean),
        ecdf,
        sm,
        m_star_min_mean: min_mean,
        m_star_max_mean: max_mean,
        m_star_min_scaled: min_mean / scale,
        m_star_max_scaled: max_mean / scale,
        degenerate: reps == 1,
    })
}

/// One logged replication with its cell coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub model: ModelKind,
    pub n: usize,
    pub result: ReplicationResult,
}

pub fn raw_log_header(d: usize) -> String {
    let mut h = String::from("model,n,rep,ise_ecdf,ise_sm");
    for j in 1..=d {
        h.push_str(&format!(",m_star_{j}"));
    }
    h
}

fn raw_log_line(model: ModelKind, n: usize, r: &ReplicationResult) -> String {
    format!(
        "{},{},{},{},{},{}",
        model.as_str(),
        n,
        r.rep,
        r.ise_ecdf,
        r.ise_sm,
        r.m_star
    )
}

pub fn parse_raw_log(text: &str, origin: &Path) -> Result<Vec<LogRecord>> {
    let err = |line: usize, msg: String| Error::Parse { path: origin.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(err(1, "empty raw log".into()));
    };
    if !header.starts_with("model,n,rep,ise_ecdf,ise_sm,m_star_1") {
        return Err(err(1, format!("unexpected header {header:?}")));
    }
    let d = header.split(',').count() - 5;
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 + d {
            return Err(err(line_no, format!("expected {} fields, found {}", 5 + d, f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| err(line_no, format!("not a number: {s:?}")))
        };
        let int = |s: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| err(line_no, format!("not a count: {s:?}")))
        };
        let model = ModelKind::parse(f[0]).map_err(|e| err(line_no, e.to_string()))?;
        let m: Vec<u32> = f[5..]
            .iter()
            .map(|s| s.parse::<u32>().map_err(|_| err(line_no, format!("bad smoothing level {s:?}"))))
            .collect::<Result<_>>()?;
        out.push(LogRecord {
            model,
            n: int(f[1])?,
            result: ReplicationResult {
                rep: int(f[2])?,
                ise_ecdf: num(f[3])?,
                ise_sm: num(f[4])?,
                m_star: SmoothingVector::new(m).map_err(|e| err(line_no, e.to_string()))?,
            },
        });
    }
    Ok(out)
}

pub fn read_raw_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_raw_log(&text, path)
}

/// Per-model summaries in order of first appearance of each (model, n).
pub fn summarize_log(records: &[LogRecord]) -> Result<Vec<(ModelKind, IseSummary)>> {
    let mut cells: Vec<(ModelKind, usize)> = Vec::new();
    for r in records {
        if !cells.contains(&(r.model, r.n)) {
            cells.push((r.model, r.n));
        }
    }
    cells
        .into_iter()
        .map(|(model, n)| {
            let cell: Vec<ReplicationResult> = records
                .iter()
                .filter(|r| r.model == model && r.n == n)
                .map(|r| r.result.clone())
                .collect();
            Ok((model, summarize(&cell, n)?))
        })
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

pub const SUMMARY_HEADER: &str = "n,median_ecdf,median_sm,iqr_ecdf,iqr_sm,mean_ecdf,mean_sm,var_ecdf,var_sm,delta_n,reps,degenerate";
pub const MSTAR_HEADER: &str = "n,mean_m_star_min,mean_m_star_max,mean_m_star_min_scaled,mean_m_star_max_scaled";
pub const FIGURE_HEADER: &str = "n,mean_ise_ecdf,mean_ise_sm";

pub fn summary_csv(summaries: &[IseSummary]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for c in summaries {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            c.n,
            c.ecdf.median,
            c.sm.median,
            c.ecdf.iqr,
            c.sm.iqr,
            c.ecdf.mean,
            c.sm.mean,
            c.ecdf.variance,
            c.sm.variance,
            c.delta_n,
            c.reps,
            c.degenerate
        ));
    }
    s
}

pub fn mstar_csv(summaries: &[IseSummary]) -> String {
    let mut s = format!("{MSTAR_HEADER}\n");
    for c in summaries {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            c.n, c.m_star_min_mean, c.m_star_max_mean, c.m_star_min_scaled, c.m_star_max_scaled
        ));
    }
    s
}

pub fn figure_csv(summaries: &[IseSummary]) -> String {
    let mut s = format!("{FIGURE_HEADER}\n");
    for c in summaries {
        s.push_str(&format!("{},{},{}\n", c.n, c.ecdf.mean, c.sm.mean));
    }
    s
}

pub fn raw_log_path(dir: &Path, model: ModelKind) -> PathBuf {
    dir.join(format!("raw_{}.csv", model.as_str()))
}

/// Writes `summary_<model>.csv`, `mstar_<model>.csv` and
/// `figure_<model>.csv` for every model in `summaries`.
pub fn write_tables(dir: &Path, summaries: &[(ModelKind, IseSummary)]) -> Result<Vec<PathBuf>> {
    let mut kinds: Vec<ModelKind> = Vec::new();
    for (k, _) in summaries {
        if !kinds.contains(k) {
            kinds.push(*k);
        }
    }
    let mut written = Vec::new();
    for kind in kinds {
        let cells: Vec<IseSummary> = summaries
            .iter()
            .filter(|(k, _)| *k == kind)
            .map(|(_, s)| s.clone())
            .collect();
        for (stem, body) in [
            ("summary", summary_csv(&cells)),
            ("mstar", mstar_csv(&cells)),
            ("figure", figure_csv(&cells)),
        ] {
            let path = dir.join(format!("{stem}_{}.csv", kind.as_str()));
            write_file(&path, &body)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Serialized appender for one model's raw log.
struct RawLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RawLog {
    fn create(path: PathBuf, d: usize) -> Result<Self> {
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut log = Self { out: BufWriter::new(file), path };
        log.append(&[raw_log_header(d)])?;
        Ok(log)
    }

    fn append(&mut self, lines: &[String]) -> Result<()> {
        for l in lines {
            writeln!(self.out, "{l}").map_err(io_err(&self.path))?;
        }
        self.out.flush().map_err(io_err(&self.path))?;
        self.out.get_ref().sync_data().map_err(io_err(&self.path))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<LogRecord>,
    pub summaries: Vec<(ModelKind, IseSummary)>,
    pub files: Vec<PathBuf>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_experiment_with(config, |_, _| {})
}

/// Runs every (model, n) cell; `on_cell` sees each cell summary as soon as
/// its replications are logged.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    mut on_cell: impl FnMut(ModelKind, &IseSummary),
) -> Result<ExperimentOutput> {
    config.validate()?;
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut records = Vec::new();
    let mut files = Vec::new();
    for &kind in &config.models {
        let ctx = ModelContext::new(config, kind)?;
        let mut log = match &config.out_dir {
            Some(dir) => Some(RawLog::create(raw_log_path(dir, kind), config.d)?),
            None => None,
        };
        for &n in &config.sample_sizes {
            let cell = ctx.cell(config, n)?;
            if let Some(log) = log.as_mut() {
                let lines: Vec<String> = cell.iter().map(|r| raw_log_line(kind, n, r)).collect();
                log.append(&lines)?;
            }
            on_cell(kind, &summarize(&cell, n)?);
            records.extend(cell.into_iter().map(|result| LogRecord { model: kind, n, result }));
        }
        if let Some(log) = log {
            files.push(log.path);
        }
    }
    let summaries = match &config.out_dir {
        Some(dir) => {
            let mut from_disk = Vec::new();
            for &kind in &config.models {
                from_disk.extend(read_raw_log(&raw_log_path(dir, kind))?);
            }
            let summaries = summarize_log(&from_disk)?;
            files.extend(write_tables(dir, &summaries)?);
            summaries
        }
        None => summarize_log(&records)?,
    };
    Ok(ExperimentOutput { records, summaries, files })
}
