//! QAM symbol generation and root-raised-cosine pulse shaping.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp;
use crate::error::{Result, SerError};

/// Supported QAM formats. 32QAM is the usual cross constellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QamFormat {
    Qam4,
    Qam16,
    Qam32,
    Qam64,
}

impl QamFormat {
    pub fn order(self) -> usize {
        match self {
            QamFormat::Qam4 => 4,
            QamFormat::Qam16 => 16,
            QamFormat::Qam32 => 32,
            QamFormat::Qam64 => 64,
        }
    }

    pub fn bits_per_symbol(self) -> u32 {
        self.order().trailing_zeros()
    }

    pub fn from_order(m: usize) -> Result<Self> {
        match m {
            4 => Ok(QamFormat::Qam4),
            16 => Ok(QamFormat::Qam16),
            32 => Ok(QamFormat::Qam32),
            64 => Ok(QamFormat::Qam64),
            _ => Err(SerError::invalid("format", format!("unsupported QAM order {m}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QamFormat::Qam4 => "qam4",
            QamFormat::Qam16 => "qam16",
            QamFormat::Qam32 => "qam32",
            QamFormat::Qam64 => "qam64",
        }
    }
}

impl std::str::FromStr for QamFormat {
    type Err = SerError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let digits = t.trim_start_matches("qam").trim_end_matches("qam");
        digits
            .parse::<usize>()
            .map_err(|_| SerError::invalid("format", format!("unsupported format `{s}`")))
            .and_then(QamFormat::from_order)
    }
}

fn gray(x: usize) -> usize {
    x ^ (x >> 1)
}

/// Normalized constellation with a fixed bit labeling.
///
/// `points[label]` is the point carrying bit pattern `label`. Square formats use
/// a per-axis Gray code (I bits high, Q bits low). The 32QAM cross uses a Gray
/// code along a row-serpentine walk, which is Gray between walk neighbours only.
#[derive(Debug, Clone)]
pub struct Constellation {
    format: QamFormat,
    points: Vec<Complex64>,
    side: usize,
    scale: f64,
}

impl Constellation {
    pub fn new(format: QamFormat) -> Self {
        let m = format.order();
        let mut raw = vec![Complex64::new(0.0, 0.0); m];
        let side;
        if format == QamFormat::Qam32 {
            side = 6;
            let mut walk = 0usize;
            for row in 0..6usize {
                let cols: Vec<usize> = if row % 2 == 0 {
                    (0..6).collect()
                } else {
                    (0..6).rev().collect()
                };
                for col in cols {
                    let corner = (row == 0 || row == 5) && (col == 0 || col == 5);
                    if corner {
                        continue;
                    }
                    let re = 2.0 * col as f64 - 5.0;
                    let im = 5.0 - 2.0 * row as f64;
                    raw[gray(walk)] = Complex64::new(re, im);
                    walk += 1;
                }
            }
        } else {
            side = (m as f64).sqrt().round() as usize;
            let b = side.trailing_zeros();
            for ix in 0..side {
                for iq in 0..side {
                    let label = (gray(ix) << b) | gray(iq);
                    let lv = |k: usize| 2.0 * k as f64 - (side as f64 - 1.0);
                    raw[label] = Complex64::new(lv(ix), lv(iq));
                }
            }
        }
        let p = raw.iter().map(|z| z.norm_sqr()).sum::<f64>() / m as f64;
        let scale = p.sqrt();
        let points = raw.iter().map(|z| z / scale).collect();
        Constellation {
            format,
            points,
            side,
            scale,
        }
    }

    pub fn format(&self) -> QamFormat {
        self.format
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Label of the nearest point.
    pub fn decide(&self, z: Complex64) -> usize {
        if self.format == QamFormat::Qam32 {
            let mut best = 0;
            let mut dmin = f64::INFINITY;
            for (k, p) in self.points.iter().enumerate() {
                let d = (z - p).norm_sqr();
                if d < dmin {
                    dmin = d;
                    best = k;
                }
            }
            return best;
        }
        let side = self.side as f64;
        let level = |v: f64| -> usize {
            let k = ((v * self.scale + side - 1.0) / 2.0).round();
            k.clamp(0.0, side - 1.0) as usize
        };
        let b = self.side.trailing_zeros();
        (gray(level(z.re)) << b) | gray(level(z.im))
    }
}

/// A drawn symbol sequence; `labels[k]` is the bit label of `symbols[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSequence {
    pub symbols: Vec<Complex64>,
    pub labels: Vec<usize>,
    pub format: QamFormat,
    pub seed: u64,
}

impl SymbolSequence {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Draws `n` i.i.d. uniform symbols. All orders are powers of two, so the
/// label is the low bits of one ChaCha8 output word.
pub fn gen_qam_symbols(format: QamFormat, n: usize, seed: u64) -> Result<SymbolSequence> {
    if n == 0 {
        return Err(SerError::invalid("n", "need at least one symbol"));
    }
    let c = Constellation::new(format);
    let mask = format.order() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.next_u32() as usize & mask).collect();
    let symbols = labels.iter().map(|&l| c.points[l]).collect();
    Ok(SymbolSequence {
        symbols,
        labels,
        format,
        seed,
    })
}

/// Uniformly sampled complex baseband signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<Complex64>,
    pub symbol_rate: f64,
    pub sps: usize,
}

impl Waveform {
    pub fn new(samples: Vec<Complex64>, symbol_rate: f64, sps: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(SerError::invalid("samples", "empty waveform"));
        }
        if samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(SerError::invalid("samples", "non-finite sample"));
        }
        if sps < 2 {
            return Err(SerError::invalid("sps", "need at least 2 samples per symbol"));
        }
        if !(symbol_rate > 0.0 && symbol_rate.is_finite()) {
            return Err(SerError::invalid("symbol_rate", "must be positive"));
        }
        Ok(Waveform {
            samples,
            symbol_rate,
            sps,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sps as f64 * self.symbol_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn power(&self) -> f64 {
        dsp::mean_power(&self.samples)
    }

    /// Copy with the same metadata and new samples.
    pub fn with_samples(&self, samples: Vec<Complex64>) -> Waveform {
        Waveform {
            samples,
            symbol_rate: self.symbol_rate,
            sps: self.sps,
        }
    }

    /// Copy rescaled to unit mean power.
    pub fn normalized(&self) -> Result<Waveform> {
        let p = self.power();
        if p <= 0.0 {
            return Err(SerError::ZeroPower);
        }
        let k = 1.0 / p.sqrt();
        Ok(self.with_samples(self.samples.iter().map(|z| z * k).collect()))
    }
}

/// Pulse-shaping parameters shared by transmitter and matched filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shaping {
    pub rolloff: f64,
    pub span: usize,
    pub sps: usize,
}

impl Default for Shaping {
    fn default() -> Self {
        Shaping {
            rolloff: 0.01,
            span: 512,
            sps: 2,
        }
    }
}

fn check_shaping(sps: usize, rolloff: f64, span: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&rolloff) {
        return Err(SerError::invalid("rolloff", format!("{rolloff} outside [0, 1]")));
    }
    if sps < 2 {
        return Err(SerError::invalid("sps", "need at least 2 samples per symbol"));
    }
    if span < 8 {
        return Err(SerError::invalid("span", "need at least 8 symbols"));
    }
    if (span * sps) % 2 != 0 {
        return Err(SerError::invalid("span", "span*sps must be even for a centered filter"));
    }
    Ok(())
}

/// Unnormalized RRC impulse response at t symbol periods.
fn rrc_value(t: f64, b: f64) -> f64 {
    if t == 0.0 {
        1.0 - b + 4.0 * b / PI
    } else if b > 0.0 && ((4.0 * b * t).abs() - 1.0).abs() < 1e-9 {
        b / 2f64.sqrt()
            * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
    } else {
        ((PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos())
            / (PI * t * (1.0 - (4.0 * b * t).powi(2)))
    }
}

/// RRC taps, `span*sps + 1` long, scaled so that sum(h²) = sps
/// (unit energy with time measured in symbol periods).
pub fn rrc_taps(rolloff: f64, sps: usize, span: usize) -> Result<Vec<f64>> {
    check_shaping(sps, rolloff, span)?;
    let half = (span * sps / 2) as i64;
    let mut h: Vec<f64> = (-half..=half)
        .map(|n| rrc_value(n as f64 / sps as f64, rolloff))
        .collect();
    let e: f64 = h.iter().map(|v| v * v).sum();
    let k = (sps as f64 / e).sqrt();
    for v in h.iter_mut() {
        *v *= k;
    }
    Ok(h)
}

/// Upsamples (symbol k at sample k·sps) and applies circular RRC filtering.
pub fn rrc_shape(symbols: &SymbolSequence, shaping: Shaping, symbol_rate: f64) -> Result<Waveform> {
    shape_symbols(&symbols.symbols, shaping, symbol_rate)
}

pub fn shape_symbols(symbols: &[Complex64], shaping: Shaping, symbol_rate: f64) -> Result<Waveform> {
    let taps = rrc_taps(shaping.rolloff, shaping.sps, shaping.span)?;
    if symbols.is_empty() {
        return Err(SerError::invalid("symbols", "empty sequence"));
    }
    let mut up = vec![Complex64::new(0.0, 0.0); symbols.len() * shaping.sps];
    for (k, s) in symbols.iter().enumerate() {
        up[k * shaping.sps] = *s;
    }
    Waveform::new(dsp::cconv(&up, &taps), symbol_rate, shaping.sps)
}

/// Matched RRC filtering followed by symbol-rate sampling at phase 0.
/// Output is scaled so an ideal round trip returns the symbols.
pub fn matched_filter(samples: &[Complex64], shaping: Shaping) -> Result<Vec<Complex64>> {
    let taps = rrc_taps(shaping.rolloff, shaping.sps, shaping.span)?;
    let y = dsp::cconv(samples, &taps);
    let k = 1.0 / shaping.sps as f64;
    Ok(y.iter().step_by(shaping.sps).map(|z| z * k).collect())
}

/// Peak-to-average power ratio in dB.
pub fn papr(w: &Waveform) -> Result<f64> {
    let p = w.power();
    if p <= 0.0 {
        return Err(SerError::ZeroPower);
    }
    let peak = w.samples.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
    Ok(dsp::db(peak / p))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [QamFormat; 4] = [
        QamFormat::Qam4,
        QamFormat::Qam16,
        QamFormat::Qam32,
        QamFormat::Qam64,
    ];

    #[test]
    fn qpsk_points() {
        let s = gen_qam_symbols(QamFormat::Qam4, 4, 99).unwrap();
        let r = 1.0 / 2f64.sqrt();
        for z in &s.symbols {
            assert!((z.re.abs() - r).abs() < 1e-15 && (z.im.abs() - r).abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_power_is_one() {
        for f in ALL {
            let c = Constellation::new(f);
            let p: f64 = c.points().iter().map(|z| z.norm_sqr()).sum::<f64>() / f.order() as f64;
            assert!((p - 1.0).abs() < 1e-14, "{f:?}");
        }
    }

    #[test]
    fn qam16_empirical_power() {
        let s = gen_qam_symbols(QamFormat::Qam16, 100_000, 1).unwrap();
        let p = dsp::mean_power(&s.symbols);
        assert!((p - 1.0).abs() < 0.01);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_qam_symbols(QamFormat::Qam64, 10, 7).unwrap();
        let b = gen_qam_symbols(QamFormat::Qam64, 10, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_qam_symbols(QamFormat::Qam64, 10, 8).unwrap();
        assert_ne!(a.symbols, c.symbols);
    }

    #[test]
    fn zero_symbols_rejected() {
        assert!(gen_qam_symbols(QamFormat::Qam4, 0, 1).is_err());
        assert!(QamFormat::from_order(8).is_err());
        assert!("qam128".parse::<QamFormat>().is_err());
        assert_eq!("16qam".parse::<QamFormat>().unwrap(), QamFormat::Qam16);
    }

    #[test]
    fn labels_are_distinct_and_decisions_invert() {
        for f in ALL {
            let c = Constellation::new(f);
            let mut seen = std::collections::HashSet::new();
            for (l, p) in c.points().iter().enumerate() {
                assert!(seen.insert(((p.re * 1e9) as i64, (p.im * 1e9) as i64)));
                assert_eq!(c.decide(*p), l);
                assert_eq!(c.decide(p * 1.05 + Complex64::new(0.01, -0.01)), l);
            }
        }
    }

    #[test]
    fn square_labels_are_gray() {
        // Nearest neighbours differ in exactly one bit.
        for f in [QamFormat::Qam4, QamFormat::Qam16, QamFormat::Qam64] {
            let c = Constellation::new(f);
            let pts = c.points();
            let dmin = (pts[0] - pts[1]).norm().min(
                pts.iter()
                    .skip(1)
                    .map(|p| (p - pts[0]).norm())
                    .fold(f64::INFINITY, f64::min),
            );
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    if i != j && ((pts[i] - pts[j]).norm() - dmin).abs() < 1e-9 {
                        assert_eq!((i ^ j).count_ones(), 1, "{f:?} {i} {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn cross_32_has_no_corners() {
        let c = Constellation::new(QamFormat::Qam32);
        let s = (20f64).sqrt();
        for p in c.points() {
            assert!(!((p.re * s).abs() > 4.0 && (p.im * s).abs() > 4.0));
        }
    }

    #[test]
    fn rrc_taps_symmetric_and_normalized() {
        let h = rrc_taps(0.01, 2, 64).unwrap();
        assert_eq!(h.len(), 129);
        for i in 0..64 {
            assert!((h[i] - h[128 - i]).abs() < 1e-15);
        }
        let e: f64 = h.iter().map(|v| v * v).sum();
        assert!((e - 2.0).abs() < 1e-12);
        assert!(rrc_taps(1.2, 2, 64).is_err());
        assert!(rrc_taps(-0.1, 2, 64).is_err());
        assert!(rrc_taps(0.05, 2, 64).is_ok());
        assert!(rrc_taps(0.0, 2, 64).is_ok());
        assert!(rrc_taps(0.25, 4, 16).is_ok());
    }

    #[test]
    fn rrc_singular_point_is_continuous() {
        // t = 1/(4b) hits the removable singularity.
        for b in [0.25, 0.1, 0.5] {
            let t = 1.0 / (4.0 * b);
            let v = rrc_value(t, b);
            for d in [-1e-6, 1e-6] {
                assert!((v - rrc_value(t + d, b)).abs() < 1e-5, "{b}");
            }
        }
        assert!(rrc_taps(0.25, 4, 16).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn impulse_returns_taps() {
        let sh = Shaping {
            rolloff: 0.01,
            span: 64,
            sps: 2,
        };
        let n = 256;
        let mut sym = vec![Complex64::new(0.0, 0.0); n];
        sym[n / 2] = Complex64::new(1.0, 0.0);
        let w = shape_symbols(&sym, sh, 1.0).unwrap();
        let h = rrc_taps(0.01, 2, 64).unwrap();
        let c = n; // sample index of the impulse
        for (i, t) in h.iter().enumerate() {
            let z = w.samples[c - 64 + i];
            assert!((z.re - t).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }

    fn round_trip_evm_db(rolloff: f64, span: usize) -> f64 {
        let s = gen_qam_symbols(QamFormat::Qam64, 1 << 14, 5).unwrap();
        let sh = Shaping { rolloff, span, sps: 2 };
        let y = matched_filter(&rrc_shape(&s, sh, 1.0).unwrap().samples, sh).unwrap();
        let e: f64 = y.iter().zip(&s.symbols).map(|(a, b)| (a - b).norm_sqr()).sum();
        let p: f64 = s.symbols.iter().map(|z| z.norm_sqr()).sum();
        10.0 * (e / p).log10()
    }

    #[test]
    fn matched_filter_round_trip_evm() {
        for (r, span) in [(0.01, 256), (0.01, 512), (0.1, 64), (0.25, 64), (1.0, 64)] {
            let evm = round_trip_evm_db(r, span);
            assert!(evm < -40.0, "rolloff {r} span {span}: {evm:.1} dB");
        }
    }

    #[test]
    fn round_trip_evm_falls_with_span() {
        let e: Vec<f64> = [64, 128, 256, 512].iter().map(|&n| round_trip_evm_db(0.01, n)).collect();
        assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
    }

    #[test]
    fn shaping_is_linear() {
        let s = gen_qam_symbols(QamFormat::Qam16, 512, 3).unwrap();
        let sh = Shaping {
            rolloff: 0.1,
            span: 32,
            sps: 2,
        };
        let a = Complex64::new(0.3, -1.7);
        let scaled: Vec<Complex64> = s.symbols.iter().map(|z| z * a).collect();
        let w1 = shape_symbols(&scaled, sh, 1.0).unwrap();
        let w2 = rrc_shape(&s, sh, 1.0).unwrap();
        for (u, v) in w1.samples.iter().zip(&w2.samples) {
            assert!((u - v * a).norm() < 1e-12);
        }
    }

    #[test]
    fn output_power_matches_symbol_power() {
        let s = gen_qam_symbols(QamFormat::Qam64, 1 << 14, 5).unwrap();
        let w = rrc_shape(&s, Shaping::default(), 1.0).unwrap();
        let ratio = w.power() / dsp::mean_power(&s.symbols);
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn spectrum_confined() {
        let s = gen_qam_symbols(QamFormat::Qam16, 1 << 14, 2).unwrap();
        let w = rrc_shape(&s, Shaping::default(), 1.0).unwrap();
        let mut buf = w.samples.clone();
        dsp::fft(&mut buf);
        let f = dsp::fftfreq(buf.len(), 2.0);
        let total: f64 = buf.iter().map(|z| z.norm_sqr()).sum();
        let outside: f64 = buf
            .iter()
            .zip(&f)
            .filter(|(_, f)| f.abs() > 1.01 / 2.0)
            .map(|(z, _)| z.norm_sqr())
            .sum();
        assert!(dsp::db(outside / total) < -40.0);
    }

    #[test]
    fn papr_examples() {
        let w = Waveform::new(vec![Complex64::new(0.6, 0.8); 10], 1.0, 2).unwrap();
        assert!(papr(&w).unwrap().abs() < 1e-12);
        let mut v = vec![Complex64::new(0.0, 0.0); 100];
        v[0] = Complex64::new(1.0, 0.0);
        let w = Waveform::new(v, 1.0, 2).unwrap();
        assert!((papr(&w).unwrap() - 20.0).abs() < 1e-12);
        let w = Waveform::new(vec![Complex64::new(0.0, 0.0); 4], 1.0, 2).unwrap();
        assert_eq!(papr(&w), Err(SerError::ZeroPower));
    }

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(Waveform::new(vec![], 1.0, 2).is_err());
        assert!(Waveform::new(vec![Complex64::new(f64::NAN, 0.0)], 1.0, 2).is_err());
        assert!(Waveform::new(vec![Complex64::new(1.0, 0.0)], 1.0, 1).is_err());
        let w = Waveform::new(vec![Complex64::new(1.0, 0.0)], 100e9, 2).unwrap();
        assert_eq!(w.sample_rate(), 200e9);
    }
}
