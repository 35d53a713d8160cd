//! Linear fiber channel: chromatic dispersion and ASE noise.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dsp;
use crate::error::{Result, SerError};
use crate::waveform::Waveform;

pub const SPEED_OF_LIGHT: f64 = 3e8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub length_km: f64,
    /// ps/nm/km
    pub dispersion: f64,
    /// nm
    pub wavelength: f64,
    /// `None` means noiseless.
    pub osnr_db: Option<f64>,
    /// Hz
    pub osnr_ref_bw: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            length_km: 0.0,
            dispersion: 17.0,
            wavelength: 1550.0,
            osnr_db: None,
            osnr_ref_bw: 12.5e9,
        }
    }
}

impl ChannelConfig {
    pub fn with_length(length_km: f64) -> Self {
        ChannelConfig {
            length_km,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_km >= 0.0 && self.length_km.is_finite()) {
            return Err(SerError::invalid("length_km", "must be finite and >= 0"));
        }
        if !self.dispersion.is_finite() {
            return Err(SerError::invalid("dispersion", "must be finite"));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(SerError::invalid("wavelength", "must be positive"));
        }
        if !(self.osnr_ref_bw > 0.0) {
            return Err(SerError::invalid("osnr_ref_bw", "must be positive"));
        }
        if let Some(o) = self.osnr_db {
            if o.is_nan() {
                return Err(SerError::invalid("osnr_db", "NaN"));
            }
        }
        Ok(())
    }

    /// Quadratic phase coefficient k in exp(j·k·f²) for a signed length.
    fn phase_coefficient(&self, length_km: f64) -> f64 {
        let d = self.dispersion * 1e-6; // ps/nm/km -> s/m²
        let lambda = self.wavelength * 1e-9;
        PI * d * length_km * 1e3 * lambda * lambda / SPEED_OF_LIGHT
    }
}

fn cd_signed(w: &Waveform, cfg: &ChannelConfig, length_km: f64) -> Waveform {
    if length_km == 0.0 {
        return w.clone();
    }
    let k = cfg.phase_coefficient(length_km);
    let out = dsp::filter_freq(&w.samples, w.sample_rate(), |f| {
        Complex64::from_polar(1.0, k * f * f)
    });
    w.with_samples(out)
}

/// All-pass dispersion exp(+j·π·D·L·λ²·f²/c) over the whole trace.
pub fn apply_cd(w: &Waveform, cfg: &ChannelConfig) -> Result<Waveform> {
    cfg.validate()?;
    Ok(cd_signed(w, cfg, cfg.length_km))
}

/// Exact inverse of [`apply_cd`].
pub fn compensate_cd(w: &Waveform, cfg: &ChannelConfig) -> Result<Waveform> {
    cfg.validate()?;
    Ok(cd_signed(w, cfg, -cfg.length_km))
}

/// Adds circular complex white Gaussian noise so that the signal power over
/// the noise power inside `ref_bw` equals the OSNR. A non-finite OSNR returns
/// the input unchanged.
pub fn add_ase(w: &Waveform, osnr_db: f64, ref_bw: f64, seed: u64) -> Result<Waveform> {
    if !(ref_bw > 0.0) {
        return Err(SerError::invalid("ref_bw", "must be positive"));
    }
    if osnr_db.is_nan() {
        return Err(SerError::invalid("osnr_db", "NaN"));
    }
    if osnr_db == f64::INFINITY {
        return Ok(w.clone());
    }
    let ps = w.power();
    if ps <= 0.0 {
        return Err(SerError::ZeroPower);
    }
    let var = ase_variance(ps, osnr_db, ref_bw, w.sample_rate());
    let sigma = (var / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = w
        .samples
        .iter()
        .map(|z| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            z + Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    Ok(w.with_samples(out))
}

/// Total complex noise variance over the full sample bandwidth.
pub fn ase_variance(signal_power: f64, osnr_db: f64, ref_bw: f64, sample_rate: f64) -> f64 {
    signal_power * sample_rate / (ref_bw * dsp::from_db(osnr_db))
}

/// Applies CD then, when configured, ASE.
pub fn propagate(w: &Waveform, cfg: &ChannelConfig, seed: u64) -> Result<Waveform> {
    let out = apply_cd(w, cfg)?;
    match cfg.osnr_db {
        Some(o) => add_ase(&out, o, cfg.osnr_ref_bw, seed),
        None => Ok(out),
    }
}
