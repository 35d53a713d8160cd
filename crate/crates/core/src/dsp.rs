//! Shared FFT-based helpers.
//!
//! Every trace is treated as one period of a periodic signal, so filtering is
//! circular. FIR tap vectors are centered: tap `len / 2` sits at zero delay.

use num_complex::Complex64;
use rustfft::FftPlanner;

pub(crate) fn fft(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(buf);
}

/// Inverse FFT including the 1/N scaling.
pub(crate) fn ifft(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(buf.len()).process(buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// FFT bin frequencies for `n` samples at `sample_rate`, in numpy ordering.
pub fn fftfreq(n: usize, sample_rate: f64) -> Vec<f64> {
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let k = if k <= (n - 1) / 2 {
                k as f64
            } else {
                k as f64 - nf
            };
            k * sample_rate / nf
        })
        .collect()
}

/// Spectrum of a centered tap vector wrapped onto an `n`-point circle.
fn kernel_spectrum(taps: &[f64], n: usize) -> Vec<Complex64> {
    let mut k = vec![Complex64::new(0.0, 0.0); n];
    let c = (taps.len() / 2) as i64;
    for (i, &t) in taps.iter().enumerate() {
        let idx = (i as i64 - c).rem_euclid(n as i64) as usize;
        k[idx].re += t;
    }
    fft(&mut k);
    k
}

fn is_identity(taps: &[f64]) -> bool {
    taps.len() == 1 && taps[0] == 1.0
}

/// Circular convolution of a complex trace with centered real taps.
pub fn cconv(x: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    if x.is_empty() || is_identity(taps) {
        return x.to_vec();
    }
    let h = kernel_spectrum(taps, x.len());
    let mut buf = x.to_vec();
    fft(&mut buf);
    for (b, hk) in buf.iter_mut().zip(&h) {
        *b *= hk;
    }
    ifft(&mut buf);
    buf
}

/// Circular convolution of a real trace with centered real taps.
pub fn cconv_real(x: &[f64], taps: &[f64]) -> Vec<f64> {
    if x.is_empty() || is_identity(taps) {
        return x.to_vec();
    }
    let cx: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    cconv(&cx, taps).into_iter().map(|v| v.re).collect()
}

/// Multiplies the spectrum of `x` by `response(f)`, `f` in Hz.
pub fn filter_freq<F>(x: &[Complex64], sample_rate: f64, response: F) -> Vec<Complex64>
where
    F: Fn(f64) -> Complex64,
{
    let mut buf = x.to_vec();
    fft(&mut buf);
    for (b, f) in buf.iter_mut().zip(fftfreq(x.len(), sample_rate)) {
        *b *= response(f);
    }
    ifft(&mut buf);
    buf
}

/// Real-input variant of [`filter_freq`] keeping the real part.
pub fn filter_freq_real<F>(x: &[f64], sample_rate: f64, response: F) -> Vec<f64>
where
    F: Fn(f64) -> Complex64,
{
    let cx: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    filter_freq(&cx, sample_rate, response)
        .into_iter()
        .map(|v| v.re)
        .collect()
}

/// Zero-phase Gaussian low-pass of the given order with a 3 dB point at `f3`:
/// |H(f)| = exp(-ln2/2 · (|f|/f3)^(2·order)).
pub fn gaussian_response(f: f64, f3: f64, order: u32) -> f64 {
    (-std::f64::consts::LN_2 / 2.0 * (f.abs() / f3).powi(2 * order as i32)).exp()
}

/// Centered FIR approximation of [`gaussian_response`] with `len` taps.
pub fn gaussian_taps(f3: f64, order: u32, sample_rate: f64, len: usize) -> Vec<f64> {
    // Sample the response densely, then take the central part of the impulse response.
    let n = (len * 16).next_power_of_two().max(1024);
    let mut h: Vec<Complex64> = fftfreq(n, sample_rate)
        .into_iter()
        .map(|f| Complex64::new(gaussian_response(f, f3, order), 0.0))
        .collect();
    ifft(&mut h);
    let c = (len / 2) as i64;
    let taps: Vec<f64> = (0..len as i64)
        .map(|i| h[(i - c).rem_euclid(n as i64) as usize].re)
        .collect();
    // Truncation leaks a little DC gain; restore it.
    let dc: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / dc).collect()
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
}

pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn from_db(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_cconv(x: &[f64], taps: &[f64]) -> Vec<f64> {
        let n = x.len() as i64;
        let c = (taps.len() / 2) as i64;
        (0..n)
            .map(|k| {
                taps.iter()
                    .enumerate()
                    .map(|(i, t)| t * x[(k - (i as i64 - c)).rem_euclid(n) as usize])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn fftfreq_matches_numpy_layout() {
        assert_eq!(fftfreq(4, 4.0), vec![0.0, 1.0, -2.0, -1.0]);
        assert_eq!(fftfreq(5, 5.0), vec![0.0, 1.0, 2.0, -2.0, -1.0]);
    }

    #[test]
    fn cconv_matches_direct_sum() {
        let x: Vec<f64> = (0..17).map(|k| ((k * 7) % 5) as f64 - 1.5).collect();
        let taps = [0.25, -1.0, 2.0, 0.5, 0.125];
        let a = cconv_real(&x, &taps);
        let b = direct_cconv(&x, &taps);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn taps_longer_than_trace_wrap() {
        let x = [1.0, 2.0, 3.0];
        let taps = [1.0, 1.0, 1.0, 1.0, 1.0];
        let a = cconv_real(&x, &taps);
        let b = direct_cconv(&x, &taps);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_three_db_point() {
        assert!((db(gaussian_response(35e9, 35e9, 2).powi(2)) + 3.0103).abs() < 1e-3);
        assert_eq!(gaussian_response(0.0, 1.0, 2), 1.0);
    }

    #[test]
    fn gaussian_taps_unit_dc_and_symmetric() {
        let t = gaussian_taps(35e9, 2, 200e9, 33);
        let s: f64 = t.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        for i in 0..16 {
            assert!((t[i] - t[32 - i]).abs() < 1e-12);
        }
    }
}
