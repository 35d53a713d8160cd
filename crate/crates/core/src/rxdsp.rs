//! Data-aided receiver chain after reconstruction, and closed-form metrics.

use std::f64::consts::PI;

use num_complex::Complex64;
use libm::erfc;

use crate::channel::{compensate_cd, ChannelConfig};
use crate::dsp;
use crate::error::{Result, SerError};
use crate::reconstruct::Method;
use crate::waveform::{matched_filter, Constellation, Shaping, SymbolSequence, Waveform};

/// One evaluated point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub effective_snr_db: f64,
    pub ber: f64,
    pub symbol_error_rate: f64,
    /// Empirical Pr{I + Q + A < 0}, when the true field was available.
    pub dser_empirical: Option<f64>,
    pub lospr_db: f64,
    pub method: Method,
    /// (name, value) of the swept variable.
    pub sweep: Option<(String, f64)>,
}

/// Timing and rate information needed to undo CD and shaping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxConfig {
    pub channel: ChannelConfig,
    pub shaping: Shaping,
    pub symbol_rate: f64,
}

/// Symbol-rate samples after inverse CD and matched filtering.
pub fn equalize(i_hat: &[f64], q_hat: &[f64], cfg: &RxConfig) -> Result<Vec<Complex64>> {
    if i_hat.len() != q_hat.len() {
        return Err(SerError::LengthMismatch {
            left: i_hat.len(),
            right: q_hat.len(),
        });
    }
    let y: Vec<Complex64> = i_hat
        .iter()
        .zip(q_hat)
        .map(|(&i, &q)| Complex64::new(i, q))
        .collect();
    let w = Waveform::new(y, cfg.symbol_rate, cfg.shaping.sps)?;
    let w = compensate_cd(&w, &cfg.channel)?;
    matched_filter(&w.samples, cfg.shaping)
}

/// Least-squares complex gain g minimizing Σ|s − g·y|².
pub fn ls_gain(y: &[Complex64], s: &[Complex64]) -> Complex64 {
    let num: Complex64 = y.iter().zip(s).map(|(y, s)| y.conj() * s).sum();
    let den: f64 = y.iter().map(|y| y.norm_sqr()).sum();
    if den == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        num / den
    }
}

/// (SNR dB, BER, SER) of received symbol-rate samples against the truth.
pub fn symbol_metrics(y: &[Complex64], tx: &SymbolSequence) -> Result<(f64, f64, f64)> {
    if y.len() != tx.len() {
        return Err(SerError::LengthMismatch {
            left: y.len(),
            right: tx.len(),
        });
    }
    let g = ls_gain(y, &tx.symbols);
    let c = Constellation::new(tx.format);
    let bits = tx.format.bits_per_symbol() as usize;
    let mut sig = 0.0;
    let mut err = 0.0;
    let mut bit_errors = 0usize;
    let mut sym_errors = 0usize;
    for ((y, s), &label) in y.iter().zip(&tx.symbols).zip(&tx.labels) {
        let x = g * y;
        sig += s.norm_sqr();
        err += (s - x).norm_sqr();
        let d = c.decide(x);
        if d != label {
            sym_errors += 1;
            bit_errors += (d ^ label).count_ones() as usize;
        }
    }
    let n = tx.len() as f64;
    Ok((
        dsp::db(sig / err),
        bit_errors as f64 / (n * bits as f64),
        sym_errors as f64 / n,
    ))
}

/// Î + jQ̂ → inverse CD → matched RRC → decimation → LS gain → metrics.
/// Non-finite input yields an SNR of −∞ and NaN error rates.
pub fn rx_chain(
    i_hat: &[f64],
    q_hat: &[f64],
    cfg: &RxConfig,
    tx_symbols: &SymbolSequence,
    method: Method,
    lospr_db: f64,
) -> Result<MetricReport> {
    if i_hat.iter().chain(q_hat).any(|v| !v.is_finite()) {
        // The reconstruction blew up; there is nothing left to decode.
        return Ok(MetricReport {
            effective_snr_db: f64::NEG_INFINITY,
            ber: f64::NAN,
            symbol_error_rate: f64::NAN,
            dser_empirical: None,
            lospr_db,
            method,
            sweep: None,
        });
    }
    let y = equalize(i_hat, q_hat, cfg)?;
    let (snr, ber, ser) = symbol_metrics(&y, tx_symbols)?;
    Ok(MetricReport {
        effective_snr_db: snr,
        ber,
        symbol_error_rate: ser,
        dser_empirical: None,
        lospr_db,
        method,
        sweep: None,
    })
}

/// Gaussian tail probability Q(x) = erfc(x/√2)/2.
pub fn q_func(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

pub fn theoretical_dser(lospr_db: f64) -> f64 {
    if lospr_db == f64::INFINITY {
        return 0.0;
    }
    q_func(dsp::from_db(lospr_db).sqrt())
}

pub fn theoretical_eser(lospr_db: f64) -> f64 {
    2.0 * theoretical_dser(lospr_db)
}

/// DFR mean-square error for a circular Gaussian field, normalized to the
/// field power, with x = A/σ = sqrt(LOSPR):
/// MSE = 2(1 + x²)Q(x) − 2x·exp(−x²/2)/sqrt(2π).
///
/// The closed form cancels badly for large x; there the equivalent
/// (2/sqrt(2π))·exp(−x²/2)·∫₀^∞ t²·exp(−xt − t²/2) dt is integrated instead.
pub fn theoretical_dfr_mse(lospr_db: f64) -> f64 {
    if lospr_db == f64::INFINITY {
        return 0.0;
    }
    let x = dsp::from_db(lospr_db).sqrt();
    if x <= 3.0 {
        dfr_mse_closed(x)
    } else {
        dfr_mse_integral(x)
    }
}

pub(crate) fn dfr_mse_closed(x: f64) -> f64 {
    2.0 * (1.0 + x * x) * q_func(x) - 2.0 * x * (-x * x / 2.0).exp() / (2.0 * PI).sqrt()
}

pub(crate) fn dfr_mse_integral(x: f64) -> f64 {
    // The integrand decays at least as fast as t²·exp(−t²/2); [0, 40] is ample.
    let upper = 40.0;
    let n = 20_000;
    let h = upper / n as f64;
    let f = |t: f64| t * t * (-x * t - t * t / 2.0).exp();
    let mut acc = f(0.0) + f(upper);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(k as f64 * h);
    }
    let integral = acc * h / 3.0;
    2.0 / (2.0 * PI).sqrt() * (-x * x / 2.0).exp() * integral
}

pub fn theoretical_dfr_snr(lospr_db: f64) -> f64 {
    -dsp::db(theoretical_dfr_mse(lospr_db))
}

/// LOSPR + 10·log10(8/3).
pub fn in_band_sir(lospr_db: f64) -> f64 {
    lospr_db + dsp::db(8.0 / 3.0)
}

/// LOSPR + 10·log10(2).
pub fn raw_sir(lospr_db: f64) -> f64 {
    lospr_db + dsp::db(2.0)
}

/// Fraction of field samples with I + Q + A < 0.
pub fn empirical_dser(field: &[Complex64], a: f64) -> f64 {
    let bad = field.iter().filter(|z| z.re + z.im + a < 0.0).count();
    bad as f64 / field.len().max(1) as f64
}
