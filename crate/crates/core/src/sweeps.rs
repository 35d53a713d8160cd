//! Configurable experiments: one simulated link evaluated over a grid of a
//! single swept parameter and a list of seeds.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::channel::{propagate, ChannelConfig};
use crate::error::{Result, SerError};
use crate::frontend::{detect, set_lospr, FrontEndConfig};
use crate::reconstruct::{cic_imbalanced, dfr, gd_imbalanced, raw_passthrough, ClipSpec, Method};
use crate::report::fmt_num;
use crate::rxdsp::{empirical_dser, rx_chain, MetricReport, RxConfig};
use crate::waveform::{gen_qam_symbols, rrc_shape, QamFormat, Shaping};

/// Smallest symbol count accepted for statistical outputs.
pub const MIN_SYMBOLS: usize = 1 << 12;
pub const DEFAULT_SYMBOLS: usize = 1 << 15;
/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "SER_DSP_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepVariable {
    LosprDb,
    Bwr,
    Iterations,
    ClipDb,
    OsnrDb,
    Mu,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::LosprDb => "lospr_db",
            SweepVariable::Bwr => "bwr",
            SweepVariable::Iterations => "iterations",
            SweepVariable::ClipDb => "clip_db",
            SweepVariable::OsnrDb => "osnr_db",
            SweepVariable::Mu => "mu",
        }
    }
}

impl std::str::FromStr for SweepVariable {
    type Err = SerError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "lospr_db" | "lospr" => SweepVariable::LosprDb,
            "bwr" => SweepVariable::Bwr,
            "iterations" | "n_iter" => SweepVariable::Iterations,
            "clip_db" | "clip" => SweepVariable::ClipDb,
            "osnr_db" | "osnr" => SweepVariable::OsnrDb,
            "mu" => SweepVariable::Mu,
            other => return Err(SerError::invalid("sweep", format!("unknown sweep variable `{other}`"))),
        })
    }
}

/// Clipping level for the iterative methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipSetting {
    Off,
    /// Level in dB relative to the initial-guess power.
    Fixed(f64),
    /// Level follows the operating point: LOSPR + offset dB.
    LosprOffset(f64),
}

impl ClipSetting {
    fn level(self, lospr_db: f64) -> Option<f64> {
        match self {
            ClipSetting::Off => None,
            ClipSetting::Fixed(l) => Some(l),
            ClipSetting::LosprOffset(o) => Some(lospr_db + o),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub format: QamFormat,
    pub symbol_count: usize,
    pub shaping: Shaping,
    pub symbol_rate: f64,
    pub channel: ChannelConfig,
    /// Receiver model. The LO amplitudes are rescaled to `lospr_db` at each
    /// point; their ratio (the imbalance) is kept.
    pub frontend: FrontEndConfig,
    pub lospr_db: f64,
    pub method: Method,
    pub n_iter: usize,
    pub mu: f64,
    pub clip: ClipSetting,
    pub sweep: SweepVariable,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "experiment".into(),
            format: QamFormat::Qam64,
            symbol_count: DEFAULT_SYMBOLS,
            shaping: Shaping::default(),
            symbol_rate: 100e9,
            channel: ChannelConfig::with_length(160.0),
            frontend: FrontEndConfig::balanced(1.0),
            lospr_db: 8.0,
            method: Method::Dfr,
            n_iter: 10,
            mu: 0.05,
            clip: ClipSetting::Off,
            sweep: SweepVariable::LosprDb,
            grid: vec![8.0],
            seeds: vec![1],
            output: None,
        }
    }
}

/// Parameters of a single evaluation, after the grid value is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Point {
    lospr_db: f64,
    bwr: Option<f64>,
    n_iter: usize,
    mu: f64,
    clip_db: Option<f64>,
    osnr_db: Option<f64>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(SerError::invalid("name", "must not be empty"));
        }
        if self.symbol_count < MIN_SYMBOLS {
            return Err(SerError::invalid("symbol_count", format!("need at least {MIN_SYMBOLS}")));
        }
        if self.shaping.sps < 2 {
            return Err(SerError::invalid("sps", "need at least 2 samples per symbol"));
        }
        if !(0.0..=1.0).contains(&self.shaping.rolloff) {
            return Err(SerError::invalid("rolloff", "must lie in [0, 1]"));
        }
        if self.shaping.span == 0 || (self.shaping.span * self.shaping.sps) % 2 != 0 {
            return Err(SerError::invalid("span", "span * sps must be even and positive"));
        }
        if !(self.symbol_rate > 0.0 && self.symbol_rate.is_finite()) {
            return Err(SerError::invalid("symbol_rate", "must be positive"));
        }
        self.channel.validate()?;
        self.frontend.validate()?;
        if !self.lospr_db.is_finite() {
            return Err(SerError::invalid("lospr_db", "must be finite"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(SerError::invalid("mu", "must be positive"));
        }
        if self.grid.is_empty() {
            return Err(SerError::invalid("grid", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(SerError::invalid("seeds", "must not be empty"));
        }
        if matches!(self.method, Method::Cic | Method::Gd) && self.sweep != SweepVariable::Iterations && self.n_iter == 0
        {
            return Err(SerError::invalid("n_iter", "iterative methods need at least one iteration"));
        }
        for &x in &self.grid {
            if !x.is_finite() {
                return Err(SerError::invalid("grid", "values must be finite"));
            }
            match self.sweep {
                SweepVariable::Bwr if !(x > 0.0 && x <= self.shaping.sps as f64) => {
                    return Err(SerError::invalid("grid", format!("bwr must lie in (0, sps], got {x}")));
                }
                SweepVariable::Iterations if x < 0.0 || x.fract() != 0.0 => {
                    return Err(SerError::invalid("grid", format!("iteration counts must be whole, got {x}")));
                }
                SweepVariable::Mu if !(x > 0.0) => {
                    return Err(SerError::invalid("grid", "mu must be positive"));
                }
                _ => {}
            }
        }
        if let Some(b) = self.frontend.bwr {
            if b > self.shaping.sps as f64 {
                return Err(SerError::invalid("bwr", "must not exceed sps"));
            }
        }
        Ok(())
    }

    fn point(&self, x: f64) -> Point {
        let mut p = Point {
            lospr_db: self.lospr_db,
            bwr: self.frontend.bwr,
            n_iter: self.n_iter,
            mu: self.mu,
            clip_db: None,
            osnr_db: self.channel.osnr_db,
        };
        match self.sweep {
            SweepVariable::LosprDb => p.lospr_db = x,
            SweepVariable::Bwr => p.bwr = Some(x),
            SweepVariable::Iterations => p.n_iter = x as usize,
            SweepVariable::ClipDb => p.clip_db = Some(x),
            SweepVariable::OsnrDb => p.osnr_db = Some(x),
            SweepVariable::Mu => p.mu = x,
        }
        if self.sweep != SweepVariable::ClipDb {
            p.clip_db = self.clip.level(p.lospr_db);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub grid_index: usize,
    pub seed: u64,
    pub report: MetricReport,
}

/// Worker pool sized by `SER_DSP_THREADS` when set, rayon's default otherwise.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| SerError::invalid("SER_DSP_THREADS", format!("not a thread count: `{v}`")))?;
        if n == 0 {
            return Err(SerError::invalid("SER_DSP_THREADS", "must be at least 1"));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| SerError::invalid("SER_DSP_THREADS", e.to_string()))
}

fn evaluate(spec: &ExperimentSpec, x: f64, seed: u64) -> Result<MetricReport> {
    let p = spec.point(x);
    let symbols = gen_qam_symbols(spec.format, spec.symbol_count, seed)?;
    let tx = rrc_shape(&symbols, spec.shaping, spec.symbol_rate)?;
    let channel = ChannelConfig {
        osnr_db: p.osnr_db,
        ..spec.channel
    };
    let field = propagate(&tx, &channel, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let mut fe = set_lospr(&field, p.lospr_db, &spec.frontend)?;
    fe.bwr = p.bwr;
    let pair = detect(&field, &fe)?;
    let (a1, a2) = (fe.a1, fe.a2);
    let rec = match spec.method {
        Method::Raw => raw_passthrough(&pair, a1, a2)?,
        Method::Dfr => dfr(&pair, a1, a2)?,
        Method::Cic => cic_imbalanced(&pair, a1, a2, p.n_iter, p.clip_db.map(ClipSpec::ssbi))?,
        Method::Gd => gd_imbalanced(&pair, a1, a2, p.n_iter, p.mu, p.clip_db.map(ClipSpec::iq))?,
    };
    let rx = RxConfig {
        channel,
        shaping: spec.shaping,
        symbol_rate: spec.symbol_rate,
    };
    let mut report = rx_chain(&rec.i_hat, &rec.q_hat, &rx, &symbols, spec.method, p.lospr_db)?;
    report.dser_empirical = Some(empirical_dser(&field.samples, fe.mean_amplitude()));
    report.sweep = Some((spec.sweep.name().to_string(), x));
    Ok(report)
}

/// Evaluates every (grid point, seed) pair. Rows are ordered by grid index,
/// then by position in `seeds`, whatever order the workers finish in.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ExperimentRow>> {
    spec.validate()?;
    let jobs: Vec<(usize, f64, u64)> = spec
        .grid
        .iter()
        .enumerate()
        .flat_map(|(k, &x)| spec.seeds.iter().map(move |&s| (k, x, s)))
        .collect();
    let pool = worker_pool()?;
    let rows: Result<Vec<ExperimentRow>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, x, seed)| {
                Ok(ExperimentRow {
                    grid_index: k,
                    seed,
                    report: evaluate(spec, x, seed)?,
                })
            })
            .collect()
    });
    let rows = rows?;
    if let Some(path) = &spec.output {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let f = std::fs::File::create(path)?;
        write_csv(spec, &rows, std::io::BufWriter::new(f))?;
    }
    Ok(rows)
}

/// Column names in output order. The swept variable comes first; `lospr_db`
/// is not repeated when it is the swept variable.
pub fn csv_columns(sweep: SweepVariable) -> Vec<&'static str> {
    let mut c = vec![sweep.name(), "seed", "method"];
    if sweep != SweepVariable::LosprDb {
        c.push("lospr_db");
    }
    c.extend(["effective_snr_db", "ber", "symbol_error_rate", "dser_empirical"]);
    c
}

pub fn write_csv<W: Write>(spec: &ExperimentSpec, rows: &[ExperimentRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_columns(spec.sweep))?;
    for row in rows {
        let r = &row.report;
        let x = spec.grid[row.grid_index];
        let mut rec = vec![fmt_num(x), row.seed.to_string(), r.method.name().to_string()];
        if spec.sweep != SweepVariable::LosprDb {
            rec.push(fmt_num(r.lospr_db));
        }
        rec.push(fmt_num(r.effective_snr_db));
        rec.push(fmt_num(r.ber));
        rec.push(fmt_num(r.symbol_error_rate));
        rec.push(r.dser_empirical.map(fmt_num).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean SNR per grid point across seeds.
pub fn mean_snr_by_point(spec: &ExperimentSpec, rows: &[ExperimentRow]) -> Vec<f64> {
    let mut acc = vec![(0.0, 0usize); spec.grid.len()];
    for r in rows {
        acc[r.grid_index].0 += r.report.effective_snr_db;
        acc[r.grid_index].1 += 1;
    }
    acc.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}
