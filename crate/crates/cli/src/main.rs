//! `ser-dsp`: sweeps, bifurcation diagrams, front-end calibration and
//! convergence-class queries from the command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

mod config;
mod selfcheck;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use ser_core::calibration::{
    calibrate, extract_responses, frequency_grid, write_cost_csv, write_response_csv, write_taps_csv,
};
use ser_core::dynamics::{bifurcation, bifurcation_delta, classify_with, fixed_points, write_bifurcation_csv, ClassifierConfig, ConvergenceClass};
use ser_core::report::fmt_num;
use ser_core::sweeps::{run_experiment, SweepVariable};

use config::{BifurcationConfig, CalibrationConfig, ConfigError, SweepConfig};

#[derive(Parser, Debug)]
#[command(name = "ser-dsp", version, about = "Single-ended coherent receiver simulations")]
struct Cli {
    /// More output; repeat for more.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Only errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Replaces the configured seed(s).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a configured sweep and write its CSV.
    Sweep(Common),
    /// Terminal values of the CIC error map versus b (or s).
    Bifurcation {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        bmin: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        bmax: Option<f64>,
        #[arg(long)]
        nb: Option<usize>,
        /// Random initial values per grid point.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        /// `b` for the map parameter, `delta` for terminal ΔĪ versus s.
        #[arg(long)]
        form: Option<String>,
    },
    /// Train the calibration circuit and export taps, cost and responses.
    Calibrate(Common),
    /// Convergence class of the CIC error for one (s, ΔĪ0) pair.
    Classify {
        /// s = Ī + Q̄
        #[arg(long, allow_hyphen_values = true)]
        s: f64,
        /// initial error ΔĪ(0)
        #[arg(long, allow_hyphen_values = true)]
        delta0: f64,
        #[arg(long, default_value_t = ClassifierConfig::default().period2_max)]
        period2_max: f64,
    },
    /// Run the built-in invariant checks.
    Selfcheck,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

struct Ui {
    level: i8,
}

impl Ui {
    fn info(&self, msg: impl AsRef<str>) {
        if self.level >= 1 {
            println!("{}", msg.as_ref());
        }
    }

    fn debug(&self, msg: impl AsRef<str>) {
        if self.level >= 2 {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("output directory {}: {e}", dir.display())))?;
    let probe = dir.join(".write_probe");
    File::create(&probe)
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| Failure::Config(format!("output directory {} is not writable: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load<T: Default + for<'de> serde::Deserialize<'de>>(path: &Option<PathBuf>) -> Result<T, Failure> {
    match path {
        Some(p) => Ok(config::read(p)?),
        None => Ok(T::default()),
    }
}

fn run_sweep(c: &Common, ui: &Ui) -> Result<(), Failure> {
    let cfg: SweepConfig = load(&c.config)?;
    let resolved = cfg.resolve(c.seed)?;
    let spec = resolved.to_spec(&c.out)?;
    spec.validate().map_err(config_err)?;
    prepare_out(&c.out)?;
    config::write_echo(&resolved, &c.out).map_err(runtime)?;
    ui.debug(format!("{spec:#?}"));
    let rows = run_experiment(&spec).map_err(runtime)?;
    for r in &rows {
        let m = &r.report;
        let lospr = match spec.sweep {
            SweepVariable::LosprDb => String::new(),
            _ => format!(" lospr_db={}", fmt_num(m.lospr_db)),
        };
        ui.info(format!(
            "{}={} seed={} method={}{lospr} effective_snr_db={} ber={}",
            spec.sweep.name(),
            fmt_num(spec.grid[r.grid_index]),
            r.seed,
            m.method.name(),
            fmt_num((m.effective_snr_db * 1e3).round() / 1e3),
            fmt_num(m.ber)
        ));
    }
    ui.info(format!("wrote {}", spec.output.as_ref().unwrap().display()));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_bifurcation(
    c: &Common,
    bmin: Option<f64>,
    bmax: Option<f64>,
    nb: Option<usize>,
    samples: Option<usize>,
    iters: Option<usize>,
    form: Option<String>,
    ui: &Ui,
) -> Result<(), Failure> {
    let file: BifurcationConfig = load(&c.config)?;
    let cfg = BifurcationConfig {
        b_min: bmin.or(file.b_min),
        b_max: bmax.or(file.b_max),
        nb: nb.or(file.nb),
        samples_per_b: samples.or(file.samples_per_b),
        n_iter: iters.or(file.n_iter),
        seed: c.seed.or(file.seed),
        form: form.or(file.form),
    }
    .resolve();
    let (lo, hi, n) = (cfg.b_min.unwrap(), cfg.b_max.unwrap(), cfg.nb.unwrap());
    let (k, it, seed) = (cfg.samples_per_b.unwrap(), cfg.n_iter.unwrap(), cfg.seed.unwrap());
    if n == 0 {
        return Err(Failure::Config("config key `nb`: need at least one grid point".into()));
    }
    let (rows, x_name) = match cfg.form.as_deref().unwrap() {
        "b" => (bifurcation(lo, hi, n, k, it, seed).map_err(config_err)?, "b"),
        "delta" => (bifurcation_delta(lo, hi, n, k, it, seed).map_err(config_err)?, "s"),
        other => return Err(Failure::Config(format!("config key `form`: expected b or delta, got `{other}`"))),
    };
    prepare_out(&c.out)?;
    config::write_echo(&cfg, &c.out).map_err(runtime)?;
    let path = c.out.join("bifurcation.csv");
    write_bifurcation_csv(&rows, x_name, create(&path)?).map_err(runtime)?;
    let mut start = 0;
    while start < rows.len() {
        let x = rows[start].x;
        let end = start + rows[start..].iter().take_while(|r| r.x == x).count();
        ui.debug(format!("{x_name}={} accumulation_values={}", fmt_num(x), end - start));
        start = end;
    }
    ui.info(format!("{} rows over {n} grid points; wrote {}", rows.len(), path.display()));
    Ok(())
}

fn run_calibrate(c: &Common, ui: &Ui) -> Result<(), Failure> {
    let cfg: CalibrationConfig = load(&c.config)?;
    let resolved = cfg.resolve(c.seed)?;
    let job = resolved.to_job()?;
    prepare_out(&c.out)?;
    config::write_echo(&resolved, &c.out).map_err(runtime)?;
    let traces = job.scenario.simulate().map_err(runtime)?;
    let st = calibrate(&traces.r1, &traces.r2, &traces.training, &job.state).map_err(runtime)?;
    let fmax = 0.5;
    let est = extract_responses(&st, &frequency_grid(fmax, job.response_points)).map_err(runtime)?;
    write_taps_csv(&st, create(&c.out.join("taps.csv"))?).map_err(runtime)?;
    write_cost_csv(&st, job.window, job.cost_stride, create(&c.out.join("cost.csv"))?).map_err(runtime)?;
    write_response_csv(&est, traces.sample_rate, create(&c.out.join("response.csv"))?).map_err(runtime)?;
    ui.info(format!(
        "samples={} inversion={} taps={} lag={} final_mse_db={}",
        st.cost_trace.len(),
        st.inversion.name(),
        st.taps(),
        st.lag,
        fmt_num((st.windowed_mse_db(job.window) * 1e3).round() / 1e3)
    ));
    ui.info(format!("wrote taps.csv, cost.csv, response.csv to {}", c.out.display()));
    Ok(())
}

fn run_classify(s: f64, delta0: f64, period2_max: f64) -> Result<(), Failure> {
    if !s.is_finite() || !delta0.is_finite() {
        return Err(Failure::Config("`s` and `delta0` must be finite".into()));
    }
    let b = s * s + s;
    let (alpha, beta) = fixed_points(b).map_err(runtime)?;
    let class = classify_with(s, delta0, &ClassifierConfig { period2_max });
    let extra = match class {
        ConvergenceClass::ConvergesToOffset(v) => format!(" terminal_error={}", fmt_num(v)),
        _ => String::new(),
    };
    println!(
        "class={}{extra} b={} e0={} alpha={} beta={}",
        class.name(),
        fmt_num(b),
        fmt_num(2.0 * delta0 + s),
        fmt_num(alpha),
        fmt_num(beta)
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let ui = Ui {
        level: if cli.quiet { 0 } else { 1 + cli.verbose as i8 },
    };
    let res = match cli.command {
        Command::Sweep(c) => run_sweep(&c, &ui),
        Command::Bifurcation {
            common,
            bmin,
            bmax,
            nb,
            samples,
            iters,
            form,
        } => run_bifurcation(&common, bmin, bmax, nb, samples, iters, form, &ui),
        Command::Calibrate(c) => run_calibrate(&c, &ui),
        Command::Classify { s, delta0, period2_max } => run_classify(s, delta0, period2_max),
        Command::Selfcheck => {
            if selfcheck::run(ui.level >= 1) {
                Ok(())
            } else {
                Err(Failure::Runtime("self-check failed".into()))
            }
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
