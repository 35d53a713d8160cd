//! Single-ended coherent receiver front end: square-law detection of field
//! plus LO, O/E responses and electrical bandwidth limitation.

use num_complex::Complex64;

use crate::dsp;
use crate::error::{Result, SerError};
use crate::waveform::Waveform;

/// Receiver model. `a1`, `a2` are effective LO amplitudes after the
/// per-branch rescaling that equalizes the |E|² term across the two outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontEndConfig {
    pub a1: f64,
    pub a2: f64,
    /// O/E impulse responses, centered taps; `[1.0]` is ideal.
    pub j1: Vec<f64>,
    pub j2: Vec<f64>,
    /// Bandwidth ratio; `None` is unlimited.
    pub bwr: Option<f64>,
}

impl FrontEndConfig {
    pub fn balanced(a: f64) -> Self {
        FrontEndConfig {
            a1: a,
            a2: a,
            j1: vec![1.0],
            j2: vec![1.0],
            bwr: None,
        }
    }

    /// Effective amplitudes from a hybrid with per-branch signal power split
    /// `sig` and LO power split `lo`. Dividing branch k by `sig[k]` leaves
    /// |E|² + (lo/sig)·A² + 2·sqrt(lo/sig)·A·Re/Im(E).
    pub fn from_hybrid(lo_amplitude: f64, sig: [f64; 2], lo: [f64; 2]) -> Result<Self> {
        if sig.iter().chain(lo.iter()).any(|&v| !(v > 0.0)) {
            return Err(SerError::invalid("split", "hybrid split factors must be positive"));
        }
        Ok(FrontEndConfig {
            a1: lo_amplitude * (lo[0] / sig[0]).sqrt(),
            a2: lo_amplitude * (lo[1] / sig[1]).sqrt(),
            ..FrontEndConfig::balanced(lo_amplitude)
        })
    }

    /// Ā = sqrt((a1² + a2²)/2).
    pub fn mean_amplitude(&self) -> f64 {
        ((self.a1 * self.a1 + self.a2 * self.a2) / 2.0).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a1 > 0.0 && self.a1.is_finite()) {
            return Err(SerError::invalid("a1", "must be positive"));
        }
        if !(self.a2 > 0.0 && self.a2.is_finite()) {
            return Err(SerError::invalid("a2", "must be positive"));
        }
        for (name, j) in [("j1", &self.j1), ("j2", &self.j2)] {
            if j.is_empty() || j.iter().any(|v| !v.is_finite()) {
                return Err(SerError::invalid(name, "need a finite, non-empty tap vector"));
            }
        }
        if let Some(b) = self.bwr {
            if !(b > 0.0) {
                return Err(SerError::invalid("bwr", "must be positive"));
            }
        }
        Ok(())
    }
}

/// The two detected traces.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotocurrentPair {
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    pub sample_rate: f64,
    pub config_used: FrontEndConfig,
}

impl PhotocurrentPair {
    pub fn len(&self) -> usize {
        self.r1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r1.is_empty()
    }
}

/// R1 = A1² + I² + Q² + 2·A1·I and R2 = A2² + I² + Q² + 2·A2·Q, each convolved
/// with its O/E response, then brick-wall limited when `bwr` is set.
pub fn detect(field: &Waveform, cfg: &FrontEndConfig) -> Result<PhotocurrentPair> {
    cfg.validate()?;
    let (a1, a2) = (cfg.a1, cfg.a2);
    let mut r1 = Vec::with_capacity(field.len());
    let mut r2 = Vec::with_capacity(field.len());
    for z in &field.samples {
        let p = z.norm_sqr();
        r1.push(a1 * a1 + p + 2.0 * a1 * z.re);
        r2.push(a2 * a2 + p + 2.0 * a2 * z.im);
    }
    let pair = PhotocurrentPair {
        r1: dsp::cconv_real(&r1, &cfg.j1),
        r2: dsp::cconv_real(&r2, &cfg.j2),
        sample_rate: field.sample_rate(),
        config_used: cfg.clone(),
    };
    match cfg.bwr {
        Some(b) => apply_bwr(&pair, b, field.symbol_rate),
        None => Ok(pair),
    }
}

/// Detection of two polarizations as independent single-polarization receivers.
pub fn detect_dual(
    x: &Waveform,
    y: &Waveform,
    cfg_x: &FrontEndConfig,
    cfg_y: &FrontEndConfig,
) -> Result<(PhotocurrentPair, PhotocurrentPair)> {
    Ok((detect(x, cfg_x)?, detect(y, cfg_y)?))
}

/// Ideal brick-wall low-pass with one-sided cutoff (bwr/2)·symbol_rate.
pub fn apply_bwr(pair: &PhotocurrentPair, bwr: f64, symbol_rate: f64) -> Result<PhotocurrentPair> {
    if !(bwr > 0.0) {
        return Err(SerError::invalid("bwr", "must be positive"));
    }
    let cutoff = bwr / 2.0 * symbol_rate;
    if pair.sample_rate < bwr * symbol_rate * (1.0 - 1e-12) {
        return Err(SerError::SampleRateTooLow {
            sample_rate: pair.sample_rate,
            cutoff,
        });
    }
    let lim = cutoff * (1.0 + 1e-12);
    let h = |f: f64| {
        if f.abs() <= lim {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let mut cfg = pair.config_used.clone();
    cfg.bwr = Some(bwr);
    Ok(PhotocurrentPair {
        r1: dsp::filter_freq_real(&pair.r1, pair.sample_rate, h),
        r2: dsp::filter_freq_real(&pair.r2, pair.sample_rate, h),
        sample_rate: pair.sample_rate,
        config_used: cfg,
    })
}

/// 10·log10(Ā² / E{I² + Q²}).
pub fn lospr_of(field: &Waveform, cfg: &FrontEndConfig) -> Result<f64> {
    let p = field.power();
    if p <= 0.0 {
        return Err(SerError::ZeroPower);
    }
    let a = cfg.mean_amplitude();
    Ok(dsp::db(a * a / p))
}

/// Rescales a1 and a2 by a common factor so that [`lospr_of`] returns `target_db`.
pub fn set_lospr(field: &Waveform, target_db: f64, cfg: &FrontEndConfig) -> Result<FrontEndConfig> {
    if !target_db.is_finite() {
        return Err(SerError::invalid("target_db", "must be finite"));
    }
    let current = lospr_of(field, cfg)?;
    let k = dsp::from_db((target_db - current) / 2.0);
    let mut out = cfg.clone();
    out.a1 *= k;
    out.a2 *= k;
    Ok(out)
}

/// Estimates Ā from the traces alone. Per branch, mean m = A² + P and AC
/// power v ≈ 2·A²·P, so A² is the larger root of x² − m·x + v/2.
pub fn estimate_lo_amplitude(r1: &[f64], r2: &[f64]) -> Result<f64> {
    let branch = |r: &[f64]| -> Result<f64> {
        if r.is_empty() {
            return Err(SerError::invalid("trace", "empty"));
        }
        let m = dsp::mean(r);
        let v = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / r.len() as f64;
        let disc = m * m - 2.0 * v;
        if !(m > 0.0) || disc < 0.0 {
            return Err(SerError::invalid("trace", "LO amplitude not identifiable"));
        }
        Ok((m + disc.sqrt()) / 2.0)
    };
    let a_sq = (branch(r1)? + branch(r2)?) / 2.0;
    Ok(a_sq.sqrt())
}

/// SIR as E{4A²(I²+Q²)} over 2·E{I²+Q²}², i.e. 4A²/P with P = 2E{I²+Q²}.
/// The useful beat terms are taken from the traces themselves.
pub fn empirical_sir(field: &Waveform, pair: &PhotocurrentPair) -> f64 {
    let (a1, a2) = (pair.config_used.a1, pair.config_used.a2);
    let n = field.len() as f64;
    let mut useful = 0.0;
    let mut ssbi = 0.0;
    for (k, z) in field.samples.iter().enumerate() {
        let s = z.norm_sqr();
        useful += (pair.r1[k] - a1 * a1 - s).powi(2) + (pair.r2[k] - a2 * a2 - s).powi(2);
        ssbi += s;
    }
    let ssbi = ssbi / n;
    (useful / n) / (2.0 * ssbi * ssbi)
}

/// Fraction of a real trace's AC power (DC bin excluded) within |f| ≤ cutoff.
pub fn in_band_fraction(trace: &[f64], sample_rate: f64, cutoff: f64) -> f64 {
    let mut buf: Vec<Complex64> = trace.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    dsp::fft(&mut buf);
    let f = dsp::fftfreq(buf.len(), sample_rate);
    let mut inside = 0.0;
    let mut total = 0.0;
    for (z, f) in buf.iter().zip(&f).skip(1) {
        let p = z.norm_sqr();
        total += p;
        if f.abs() <= cutoff {
            inside += p;
        }
    }
    inside / total
}
