//! Flat TOML configuration files. Every key is optional; unknown keys are
//! rejected. `resolve` turns a file into the fully defaulted form that is
//! echoed next to the outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ser_core::calibration::{CalibrationScenario, CalibrationState, InversionBlock};
use ser_core::channel::ChannelConfig;
use ser_core::frontend::FrontEndConfig;
use ser_core::sweeps::{ClipSetting, ExperimentSpec, SweepVariable, DEFAULT_SYMBOLS};
use ser_core::{Method, QamFormat, Shaping};

/// A configuration problem, always tied to a key.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad(key: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("config key `{key}`: {e}"))
}

pub fn read<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}

pub fn write_echo<T: Serialize>(cfg: &T, dir: &Path) -> std::io::Result<PathBuf> {
    let path = dir.join("effective_config.toml");
    let text = toml::to_string(cfg).map_err(std::io::Error::other)?;
    std::fs::write(&path, text)?;
    Ok(path)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: Option<String>,
    /// qam4, qam16, qam32 or qam64
    pub format: Option<String>,
    pub symbol_count: Option<usize>,
    pub sps: Option<usize>,
    pub rolloff: Option<f64>,
    /// RRC length in symbols
    pub span: Option<usize>,
    /// Hz
    pub symbol_rate: Option<f64>,
    pub length_km: Option<f64>,
    /// ps/nm/km
    pub dispersion: Option<f64>,
    /// nm
    pub wavelength: Option<f64>,
    /// absent = noiseless
    pub osnr_db: Option<f64>,
    pub osnr_ref_bw: Option<f64>,
    pub lospr_db: Option<f64>,
    /// a2/a1 LO amplitude ratio
    pub lo_imbalance: Option<f64>,
    /// absent = unlimited
    pub bwr: Option<f64>,
    /// raw, dfr, cic or gd
    pub method: Option<String>,
    pub n_iter: Option<usize>,
    pub mu: Option<f64>,
    /// fixed clip level in dB
    pub clip_db: Option<f64>,
    /// clip level as LOSPR + offset dB
    pub clip_offset_db: Option<f64>,
    /// lospr_db, bwr, iterations, clip_db, osnr_db or mu
    pub sweep: Option<String>,
    pub grid: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    /// CSV file name inside the output directory
    pub output: Option<String>,
}

impl SweepConfig {
    pub fn resolve(&self, seed: Option<u64>) -> Result<SweepConfig, ConfigError> {
        if self.clip_db.is_some() && self.clip_offset_db.is_some() {
            return Err(bad("clip_offset_db", "cannot be combined with clip_db"));
        }
        let d = ExperimentSpec::default();
        let sh = Shaping::default();
        let ch = ChannelConfig::with_length(160.0);
        let name = self.name.clone().unwrap_or_else(|| d.name.clone());
        Ok(SweepConfig {
            output: Some(self.output.clone().unwrap_or_else(|| format!("{name}.csv"))),
            name: Some(name),
            format: Some(self.format.clone().unwrap_or_else(|| d.format.name().into())),
            symbol_count: Some(self.symbol_count.unwrap_or(DEFAULT_SYMBOLS)),
            sps: Some(self.sps.unwrap_or(sh.sps)),
            rolloff: Some(self.rolloff.unwrap_or(sh.rolloff)),
            span: Some(self.span.unwrap_or(sh.span)),
            symbol_rate: Some(self.symbol_rate.unwrap_or(d.symbol_rate)),
            length_km: Some(self.length_km.unwrap_or(ch.length_km)),
            dispersion: Some(self.dispersion.unwrap_or(ch.dispersion)),
            wavelength: Some(self.wavelength.unwrap_or(ch.wavelength)),
            osnr_db: self.osnr_db,
            osnr_ref_bw: Some(self.osnr_ref_bw.unwrap_or(ch.osnr_ref_bw)),
            lospr_db: Some(self.lospr_db.unwrap_or(d.lospr_db)),
            lo_imbalance: Some(self.lo_imbalance.unwrap_or(1.0)),
            bwr: self.bwr,
            method: Some(self.method.clone().unwrap_or_else(|| d.method.name().into())),
            n_iter: Some(self.n_iter.unwrap_or(d.n_iter)),
            mu: Some(self.mu.unwrap_or(d.mu)),
            clip_db: self.clip_db,
            clip_offset_db: self.clip_offset_db,
            sweep: Some(self.sweep.clone().unwrap_or_else(|| d.sweep.name().into())),
            grid: Some(self.grid.clone().unwrap_or_else(|| d.grid.clone())),
            seeds: Some(match seed {
                Some(s) => vec![s],
                None => self.seeds.clone().unwrap_or_else(|| d.seeds.clone()),
            }),
        })
    }

    /// Builds the experiment from a resolved config.
    pub fn to_spec(&self, out_dir: &Path) -> Result<ExperimentSpec, ConfigError> {
        let r = self.resolve(None)?;
        let format: QamFormat = r.format.as_deref().unwrap().parse().map_err(|e| bad("format", e))?;
        let method: Method = r.method.as_deref().unwrap().parse().map_err(|e| bad("method", e))?;
        let sweep: SweepVariable = r.sweep.as_deref().unwrap().parse().map_err(|e| bad("sweep", e))?;
        let ratio = r.lo_imbalance.unwrap();
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(bad("lo_imbalance", "must be positive"));
        }
        let clip = match (r.clip_db, r.clip_offset_db) {
            (Some(l), None) => ClipSetting::Fixed(l),
            (None, Some(o)) => ClipSetting::LosprOffset(o),
            _ => ClipSetting::Off,
        };
        let output = r.output.unwrap();
        if output.is_empty() || Path::new(&output).file_name().map(|f| f != output.as_str()).unwrap_or(true) {
            return Err(bad("output", "must be a plain file name"));
        }
        let frontend = FrontEndConfig {
            a2: ratio,
            bwr: r.bwr,
            ..FrontEndConfig::balanced(1.0)
        };
        Ok(ExperimentSpec {
            name: r.name.unwrap(),
            format,
            symbol_count: r.symbol_count.unwrap(),
            shaping: Shaping {
                rolloff: r.rolloff.unwrap(),
                span: r.span.unwrap(),
                sps: r.sps.unwrap(),
            },
            symbol_rate: r.symbol_rate.unwrap(),
            channel: ChannelConfig {
                length_km: r.length_km.unwrap(),
                dispersion: r.dispersion.unwrap(),
                wavelength: r.wavelength.unwrap(),
                osnr_db: r.osnr_db,
                osnr_ref_bw: r.osnr_ref_bw.unwrap(),
            },
            frontend,
            lospr_db: r.lospr_db.unwrap(),
            method,
            n_iter: r.n_iter.unwrap(),
            mu: r.mu.unwrap(),
            clip,
            sweep,
            grid: r.grid.unwrap(),
            seeds: r.seeds.unwrap(),
            output: Some(out_dir.join(output)),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub name: Option<String>,
    pub format: Option<String>,
    pub symbols: Option<usize>,
    pub sps: Option<usize>,
    pub rolloff: Option<f64>,
    pub span: Option<usize>,
    pub symbol_rate: Option<f64>,
    pub lospr_db: Option<f64>,
    /// 3 dB bandwidth in Hz; 0 = flat
    pub tx_bandwidth: Option<f64>,
    pub rx_bandwidth: Option<f64>,
    pub gaussian_order: Option<u32>,
    pub response_taps: Option<usize>,
    /// radians
    pub phase: Option<f64>,
    pub seed: Option<u64>,
    pub taps: Option<usize>,
    /// dfr or ic1
    pub inversion: Option<String>,
    pub mu: Option<f64>,
    pub normalized: Option<bool>,
    pub eps: Option<f64>,
    pub halve_on_increase: Option<bool>,
    /// LO amplitude; absent = estimated from the traces
    pub lo_amplitude: Option<f64>,
    /// samples in the MSE window
    pub window: Option<usize>,
    /// keep every n-th sample in the cost CSV
    pub cost_stride: Option<usize>,
    pub response_points: Option<usize>,
}

/// Everything `calibrate` needs after resolution.
pub struct CalibrationJob {
    pub scenario: CalibrationScenario,
    pub state: CalibrationState,
    pub window: usize,
    pub cost_stride: usize,
    pub response_points: usize,
}

impl CalibrationConfig {
    pub fn resolve(&self, seed: Option<u64>) -> Result<CalibrationConfig, ConfigError> {
        let d = CalibrationScenario::default();
        Ok(CalibrationConfig {
            name: Some(self.name.clone().unwrap_or_else(|| "calibration".into())),
            format: Some(self.format.clone().unwrap_or_else(|| d.format.name().into())),
            symbols: Some(self.symbols.unwrap_or(d.symbols)),
            sps: Some(self.sps.unwrap_or(d.shaping.sps)),
            rolloff: Some(self.rolloff.unwrap_or(d.shaping.rolloff)),
            span: Some(self.span.unwrap_or(d.shaping.span)),
            symbol_rate: Some(self.symbol_rate.unwrap_or(d.symbol_rate)),
            lospr_db: Some(self.lospr_db.unwrap_or(d.lospr_db)),
            tx_bandwidth: Some(self.tx_bandwidth.unwrap_or(d.tx_bandwidth.unwrap_or(0.0))),
            rx_bandwidth: Some(self.rx_bandwidth.unwrap_or(d.rx_bandwidth.unwrap_or(0.0))),
            gaussian_order: Some(self.gaussian_order.unwrap_or(d.gaussian_order)),
            response_taps: Some(self.response_taps.unwrap_or(d.response_taps)),
            phase: Some(self.phase.unwrap_or(d.phase)),
            seed: Some(seed.or(self.seed).unwrap_or(d.seed)),
            taps: Some(self.taps.unwrap_or(65)),
            inversion: Some(self.inversion.clone().unwrap_or_else(|| "dfr".into())),
            mu: Some(self.mu.unwrap_or(0.1)),
            normalized: Some(self.normalized.unwrap_or(true)),
            eps: Some(self.eps.unwrap_or(1e-3)),
            halve_on_increase: Some(self.halve_on_increase.unwrap_or(false)),
            lo_amplitude: self.lo_amplitude,
            window: Some(self.window.unwrap_or(1024)),
            cost_stride: Some(self.cost_stride.unwrap_or(64)),
            response_points: Some(self.response_points.unwrap_or(129)),
        })
    }

    pub fn to_job(&self) -> Result<CalibrationJob, ConfigError> {
        let r = self.resolve(None)?;
        let format: QamFormat = r.format.as_deref().unwrap().parse().map_err(|e| bad("format", e))?;
        let inversion: InversionBlock = r.inversion.as_deref().unwrap().parse().map_err(|e| bad("inversion", e))?;
        let bw = |key: &str, v: f64| -> Result<Option<f64>, ConfigError> {
            if v == 0.0 {
                Ok(None)
            } else if v > 0.0 && v.is_finite() {
                Ok(Some(v))
            } else {
                Err(bad(key, "must be positive, or 0 for a flat response"))
            }
        };
        let symbols = r.symbols.unwrap();
        let sps = r.sps.unwrap();
        let window = r.window.unwrap();
        if symbols * sps < 2 * window || window == 0 {
            return Err(bad("window", "need a positive window shorter than half the trace"));
        }
        let mu = r.mu.unwrap();
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(bad("mu", "must be positive"));
        }
        if r.response_taps.unwrap() == 0 {
            return Err(bad("response_taps", "need at least one tap"));
        }
        if r.cost_stride.unwrap() == 0 {
            return Err(bad("cost_stride", "must be at least 1"));
        }
        if r.response_points.unwrap() < 2 {
            return Err(bad("response_points", "need at least 2 points"));
        }
        let scenario = CalibrationScenario {
            format,
            symbols,
            shaping: Shaping {
                rolloff: r.rolloff.unwrap(),
                span: r.span.unwrap(),
                sps,
            },
            symbol_rate: r.symbol_rate.unwrap(),
            lospr_db: r.lospr_db.unwrap(),
            tx_bandwidth: bw("tx_bandwidth", r.tx_bandwidth.unwrap())?,
            rx_bandwidth: bw("rx_bandwidth", r.rx_bandwidth.unwrap())?,
            gaussian_order: r.gaussian_order.unwrap(),
            response_taps: r.response_taps.unwrap(),
            phase: r.phase.unwrap(),
            seed: r.seed.unwrap(),
        };
        let mut state = CalibrationState::identity(r.taps.unwrap(), inversion).map_err(|e| bad("taps", e))?;
        state.mu1 = mu;
        state.mu2 = mu;
        state.normalized = r.normalized.unwrap();
        state.eps = r.eps.unwrap();
        state.halve_on_increase = r.halve_on_increase.unwrap();
        if let Some(a) = r.lo_amplitude {
            if !(a > 0.0 && a.is_finite()) {
                return Err(bad("lo_amplitude", "must be positive"));
            }
            state.a = Some(a);
        }
        Ok(CalibrationJob {
            scenario,
            state,
            window,
            cost_stride: r.cost_stride.unwrap(),
            response_points: r.response_points.unwrap(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BifurcationConfig {
    pub b_min: Option<f64>,
    pub b_max: Option<f64>,
    pub nb: Option<usize>,
    pub samples_per_b: Option<usize>,
    pub n_iter: Option<usize>,
    pub seed: Option<u64>,
    /// b (map parameter) or delta (terminal ΔĪ versus s = Ī + Q̄)
    pub form: Option<String>,
}

impl BifurcationConfig {
    pub fn resolve(&self) -> BifurcationConfig {
        BifurcationConfig {
            b_min: Some(self.b_min.unwrap_or(-0.25)),
            b_max: Some(self.b_max.unwrap_or(2.5)),
            nb: Some(self.nb.unwrap_or(500)),
            samples_per_b: Some(self.samples_per_b.unwrap_or(50)),
            n_iter: Some(self.n_iter.unwrap_or(1000)),
            seed: Some(self.seed.unwrap_or(1)),
            form: Some(self.form.clone().unwrap_or_else(|| "b".into())),
        }
    }
}
