//! Self-calibration circuit: four adaptive FIR filters around a nonlinear
//! inversion block, trained by LMS on a known training sequence.
//!
//! Signal flow per output sample n:
//!
//! ```text
//! R̄1 ─ H11 ─ I1 ┐            ┌ I2 ─ H12 ─ I3 ┐
//!               ├ inversion ─┤               ├ d = I3² + Q3²,  e = |s|² − d
//! R̄2 ─ H21 ─ Q1 ┘            └ Q2 ─ H22 ─ Q3 ┘
//! ```
//!
//! R̄ = (R − Ā²)/(2Ā) so that R̄1 = I + (I² + Q²)/(2Ā) in field units.
//! Every filter is centered, so the circuit delays the target by L − 1.

use std::io::Write;

use num_complex::Complex64;

use crate::dsp;
use crate::error::{Result, SerError};
use crate::frontend::{detect, estimate_lo_amplitude, FrontEndConfig};
use crate::report::fmt_num;
use crate::waveform::{gen_qam_symbols, rrc_shape, QamFormat, Shaping, Waveform};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionBlock {
    Dfr,
    Ic1,
}

impl InversionBlock {
    pub fn name(self) -> &'static str {
        match self {
            InversionBlock::Dfr => "dfr",
            InversionBlock::Ic1 => "ic1",
        }
    }
}

impl std::str::FromStr for InversionBlock {
    type Err = SerError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dfr" | "dfr_block" => Ok(InversionBlock::Dfr),
            "ic1" | "ic1_block" => Ok(InversionBlock::Ic1),
            _ => Err(SerError::invalid("inversion", format!("unknown block `{s}`"))),
        }
    }
}

/// One step of SSBI cancellation in normalized units: i − (i² + q²).
pub fn invert_ic1(i1: &[f64], q1: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if i1.len() != q1.len() {
        return Err(SerError::LengthMismatch {
            left: i1.len(),
            right: q1.len(),
        });
    }
    Ok(i1
        .iter()
        .zip(q1)
        .map(|(&i, &q)| {
            let s = i * i + q * q;
            (i - s, q - s)
        })
        .unzip())
}

/// Balanced DFR applied to R̄-domain inputs (field units).
pub fn invert_dfr_block(i1: &[f64], q1: &[f64], a: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if i1.len() != q1.len() {
        return Err(SerError::LengthMismatch {
            left: i1.len(),
            right: q1.len(),
        });
    }
    if !(a > 0.0) {
        return Err(SerError::invalid("a", "amplitude must be positive"));
    }
    Ok(i1
        .iter()
        .zip(q1)
        .map(|(&i, &q)| {
            let (o, _) = block_eval(InversionBlock::Dfr, i, q, a);
            o
        })
        .unzip())
}

/// Block output and Jacobian [[∂I2/∂I1, ∂I2/∂Q1], [∂Q2/∂I1, ∂Q2/∂Q1]].
/// The IC1 block is scaled to field units: i − (i² + q²)/(2a).
#[inline]
pub fn block_eval(block: InversionBlock, i: f64, q: f64, a: f64) -> ((f64, f64), [[f64; 2]; 2]) {
    match block {
        InversionBlock::Dfr => {
            let d = (a + 2.0 * i) * (a + 2.0 * q) - (i + q) * (i + q);
            let r = d.abs().sqrt();
            let i2 = -a / 2.0 + (i - q) / 2.0 + 0.5 * r;
            let q2 = -a / 2.0 - (i - q) / 2.0 + 0.5 * r;
            let di = 2.0 * (a + 2.0 * q) - 2.0 * (i + q);
            let dq = 2.0 * (a + 2.0 * i) - 2.0 * (i + q);
            // d|D|^(1/2) = sgn(D)·dD/(2·sqrt|D|); the guard only matters at D = 0
            let k = if r > 0.0 { 0.25 * d.signum() / r } else { 0.0 };
            ((i2, q2), [[0.5 + k * di, -0.5 + k * dq], [-0.5 + k * di, 0.5 + k * dq]])
        }
        InversionBlock::Ic1 => {
            let s = (i * i + q * q) / (2.0 * a);
            ((i - s, q - s), [[1.0 - i / a, -q / a], [-i / a, 1.0 - q / a]])
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationState {
    pub h11: Vec<f64>,
    pub h12: Vec<f64>,
    pub h21: Vec<f64>,
    pub h22: Vec<f64>,
    pub mu1: f64,
    pub mu2: f64,
    /// LO amplitude; estimated from the traces when `None`.
    pub a: Option<f64>,
    pub inversion: InversionBlock,
    /// Per-sample squared error e(n)².
    pub cost_trace: Vec<f64>,
    /// Normalized step: mu / (eps + |∂d/∂h|²) over all taps.
    pub normalized: bool,
    pub eps: f64,
    /// Halve both steps whenever the mean cost over a 4096-sample block rises.
    pub halve_on_increase: bool,
    /// E{|s|⁴} of the training target, for relative MSE.
    pub cost_reference: f64,
    /// Training-to-trace lag found by alignment.
    pub lag: usize,
}

pub const DEFAULT_TAPS: usize = 33;
pub const HALVING_BLOCK: usize = 4096;

impl CalibrationState {
    /// Identity filters (center tap 1) of length `taps`.
    pub fn identity(taps: usize, inversion: InversionBlock) -> Result<Self> {
        if taps == 0 {
            return Err(SerError::invalid("taps", "need at least one tap"));
        }
        let mut h = vec![0.0; taps];
        h[taps / 2] = 1.0;
        Ok(CalibrationState {
            h11: h.clone(),
            h12: h.clone(),
            h21: h.clone(),
            h22: h,
            mu1: 0.1,
            mu2: 0.1,
            a: None,
            inversion,
            cost_trace: Vec::new(),
            normalized: true,
            eps: 1e-3,
            halve_on_increase: false,
            cost_reference: 0.0,
            lag: 0,
        })
    }

    pub fn taps(&self) -> usize {
        self.h11.len()
    }

    fn validate(&self) -> Result<()> {
        let l = self.h11.len();
        if l == 0 || self.h12.len() != l || self.h21.len() != l || self.h22.len() != l {
            return Err(SerError::invalid("taps", "all four filters need the same non-zero length"));
        }
        if !(self.mu1 > 0.0 && self.mu2 > 0.0) {
            return Err(SerError::invalid("mu", "step sizes must be positive"));
        }
        Ok(())
    }

    /// Mean cost over the trailing `window` samples relative to E{|s|⁴}, in dB.
    pub fn windowed_mse_db(&self, window: usize) -> f64 {
        let n = self.cost_trace.len();
        let w = window.min(n).max(1);
        let m = self.cost_trace[n - w..].iter().sum::<f64>() / w as f64;
        dsp::db(m / self.cost_reference)
    }

    /// Windowed relative MSE (dB) ending at every sample index.
    pub fn mse_curve_db(&self, window: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cost_trace.len());
        let mut acc = 0.0;
        for (k, c) in self.cost_trace.iter().enumerate() {
            acc += c;
            if k >= window {
                acc -= self.cost_trace[k - window];
            }
            let w = (k + 1).min(window) as f64;
            out.push(dsp::db(acc.max(0.0) / w / self.cost_reference));
        }
        out
    }
}

/// Working buffers and the exact per-sample cost and gradient of the circuit.
struct Circuit<'a> {
    rb1: &'a [f64],
    rb2: &'a [f64],
    a: f64,
    block: InversionBlock,
    l: usize,
    i2: Vec<f64>,
    q2: Vec<f64>,
    jac: Vec<[[f64; 2]; 2]>,
}

/// d(n) and its gradient with respect to the four tap vectors.
struct Eval {
    d: f64,
    g11: Vec<f64>,
    g12: Vec<f64>,
    g21: Vec<f64>,
    g22: Vec<f64>,
}

impl<'a> Circuit<'a> {
    fn new(rb1: &'a [f64], rb2: &'a [f64], a: f64, block: InversionBlock, l: usize) -> Self {
        Circuit {
            rb1,
            rb2,
            a,
            block,
            l,
            i2: vec![0.0; l],
            q2: vec![0.0; l],
            jac: vec![[[0.0; 2]; 2]; l],
        }
    }

    /// First output index with a full input history.
    fn first(&self) -> usize {
        2 * (self.l - 1)
    }

    fn eval(&mut self, st: &CalibrationState, n: usize, want_grad: bool) -> Eval {
        let l = self.l;
        for p in 0..l {
            let m = n - p;
            let mut i1 = 0.0;
            let mut q1 = 0.0;
            for j in 0..l {
                i1 += st.h11[j] * self.rb1[m - j];
                q1 += st.h21[j] * self.rb2[m - j];
            }
            let ((i2, q2), jac) = block_eval(self.block, i1, q1, self.a);
            self.i2[p] = i2;
            self.q2[p] = q2;
            self.jac[p] = jac;
        }
        let mut i3 = 0.0;
        let mut q3 = 0.0;
        for p in 0..l {
            i3 += st.h12[p] * self.i2[p];
            q3 += st.h22[p] * self.q2[p];
        }
        let d = i3 * i3 + q3 * q3;
        if !want_grad {
            return Eval {
                d,
                g11: Vec::new(),
                g12: Vec::new(),
                g21: Vec::new(),
                g22: Vec::new(),
            };
        }
        let g12: Vec<f64> = (0..l).map(|p| 2.0 * i3 * self.i2[p]).collect();
        let g22: Vec<f64> = (0..l).map(|p| 2.0 * q3 * self.q2[p]).collect();
        let mut g11 = vec![0.0; l];
        let mut g21 = vec![0.0; l];
        for p in 0..l {
            let ci = 2.0 * i3 * st.h12[p];
            let cq = 2.0 * q3 * st.h22[p];
            let jac = self.jac[p];
            let w1 = ci * jac[0][0] + cq * jac[1][0];
            let w2 = ci * jac[0][1] + cq * jac[1][1];
            let m = n - p;
            for j in 0..l {
                g11[j] += w1 * self.rb1[m - j];
                g21[j] += w2 * self.rb2[m - j];
            }
        }
        Eval { d, g11, g12, g21, g22 }
    }
}

/// Lag maximizing the circular cross-correlation between the training
/// intensity |s|² and the trace intensity proxy R̄1² + R̄2².
pub fn align_training(rb1: &[f64], rb2: &[f64], target: &[f64]) -> Result<usize> {
    let n = rb1.len();
    if rb2.len() != n || target.len() != n {
        return Err(SerError::LengthMismatch {
            left: n,
            right: target.len(),
        });
    }
    let proxy: Vec<f64> = rb1.iter().zip(rb2).map(|(a, b)| a * a + b * b).collect();
    let zm = |x: &[f64]| -> Vec<Complex64> {
        let m = dsp::mean(x);
        x.iter().map(|v| Complex64::new(v - m, 0.0)).collect()
    };
    let mut x = zm(&proxy);
    let mut t = zm(target);
    dsp::fft(&mut x);
    dsp::fft(&mut t);
    let mut c: Vec<Complex64> = x.iter().zip(&t).map(|(x, t)| x * t.conj()).collect();
    dsp::ifft(&mut c);
    let (lag, _) = c
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bk, bv), (k, v)| if v.re > bv { (k, v.re) } else { (bk, bv) });
    Ok(lag)
}

/// Runs the circuit over the traces and adapts the four filters.
pub fn calibrate(r1: &[f64], r2: &[f64], training: &Waveform, state0: &CalibrationState) -> Result<CalibrationState> {
    state0.validate()?;
    let n = r1.len();
    if r2.len() != n || training.len() != n {
        return Err(SerError::LengthMismatch {
            left: n,
            right: if r2.len() != n { r2.len() } else { training.len() },
        });
    }
    let a = match state0.a {
        Some(a) if a > 0.0 => a,
        Some(_) => return Err(SerError::invalid("a", "amplitude must be positive")),
        None => estimate_lo_amplitude(r1, r2)?,
    };
    let l = state0.taps();
    if n <= 2 * l {
        return Err(SerError::invalid("training", "trace shorter than twice the filter length"));
    }
    let rb1: Vec<f64> = r1.iter().map(|r| (r - a * a) / (2.0 * a)).collect();
    let rb2: Vec<f64> = r2.iter().map(|r| (r - a * a) / (2.0 * a)).collect();
    let target: Vec<f64> = training.samples.iter().map(|z| z.norm_sqr()).collect();
    let lag = align_training(&rb1, &rb2, &target)?;
    let delay = l - 1 + lag;

    let mut st = state0.clone();
    st.a = Some(a);
    st.lag = lag;
    st.cost_reference = target.iter().map(|t| t * t).sum::<f64>() / n as f64;
    let mut circuit = Circuit::new(&rb1, &rb2, a, st.inversion, l);
    let mut block_sum = 0.0;
    let mut block_len = 0;
    let mut prev_block = f64::INFINITY;
    for k in circuit.first()..n {
        let ev = circuit.eval(&st, k, true);
        let t = target[(k + n - delay % n) % n];
        let e = t - ev.d;
        let cost = e * e;
        if !cost.is_finite() {
            return Err(SerError::Diverged { sample: k });
        }
        st.cost_trace.push(cost);
        let (m1, m2) = if st.normalized {
            let norm: f64 = [&ev.g11, &ev.g12, &ev.g21, &ev.g22]
                .iter()
                .map(|g| g.iter().map(|v| v * v).sum::<f64>())
                .sum();
            (st.mu1 / (st.eps + norm), st.mu2 / (st.eps + norm))
        } else {
            (st.mu1, st.mu2)
        };
        for j in 0..l {
            st.h11[j] += m1 * e * ev.g11[j];
            st.h21[j] += m1 * e * ev.g21[j];
            st.h12[j] += m2 * e * ev.g12[j];
            st.h22[j] += m2 * e * ev.g22[j];
        }
        if st.halve_on_increase {
            block_sum += cost;
            block_len += 1;
            if block_len == HALVING_BLOCK {
                let m = block_sum / block_len as f64;
                if m > prev_block {
                    st.mu1 /= 2.0;
                    st.mu2 /= 2.0;
                }
                prev_block = m;
                block_sum = 0.0;
                block_len = 0;
            }
        }
    }
    Ok(st)
}

/// Instantaneous error e(n) = t − d(n) for given taps, used by the
/// gradient audit.
pub fn instantaneous_error(st: &CalibrationState, rb1: &[f64], rb2: &[f64], target: f64, n: usize) -> f64 {
    let a = st.a.expect("amplitude set");
    let mut c = Circuit::new(rb1, rb2, a, st.inversion, st.taps());
    target - c.eval(st, n, false).d
}

/// Tap-update directions e(n)·∂d/∂h for (h11, h12, h21, h22).
pub fn update_directions(st: &CalibrationState, rb1: &[f64], rb2: &[f64], target: f64, n: usize) -> [Vec<f64>; 4] {
    let a = st.a.expect("amplitude set");
    let mut c = Circuit::new(rb1, rb2, a, st.inversion, st.taps());
    let ev = c.eval(st, n, true);
    let e = target - ev.d;
    let s = |g: Vec<f64>| g.into_iter().map(|v| e * v).collect::<Vec<f64>>();
    [s(ev.g11), s(ev.g12), s(ev.g21), s(ev.g22)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseEstimate {
    /// Frequencies in cycles per sample.
    pub freqs: Vec<f64>,
    pub rx_response_1: Vec<Complex64>,
    pub rx_response_2: Vec<Complex64>,
    pub tx_response_1: Vec<Complex64>,
    pub tx_response_2: Vec<Complex64>,
}

fn dtft(h: &[f64], f: f64) -> Complex64 {
    let c = (h.len() / 2) as f64;
    h.iter()
        .enumerate()
        .map(|(k, &v)| Complex64::from_polar(v, -2.0 * std::f64::consts::PI * f * (k as f64 - c)))
        .sum()
}

/// Reciprocal response normalized to unit DC gain with the best-fit linear
/// phase removed.
fn reciprocal(h: &[f64], freqs: &[f64]) -> Result<Vec<Complex64>> {
    let hs: Vec<Complex64> = freqs.iter().map(|&f| dtft(h, f)).collect();
    let peak = hs.iter().map(|z| z.norm()).fold(0.0, f64::max).max(dtft(h, 0.0).norm());
    for (z, &f) in hs.iter().zip(freqs) {
        if z.norm() <= 1e-9 * peak {
            return Err(SerError::ResponseUndefined { frequency: f });
        }
    }
    let h0 = dtft(h, 0.0);
    if h0.norm() <= 1e-9 * peak {
        return Err(SerError::ResponseUndefined { frequency: 0.0 });
    }
    let est: Vec<Complex64> = hs.iter().map(|z| h0 / z).collect();
    // Unwrap along the grid (sorted by frequency) and fit phase = τ·f.
    let mut order: Vec<usize> = (0..freqs.len()).collect();
    order.sort_by(|&x, &y| freqs[x].total_cmp(&freqs[y]));
    let mut phase = vec![0.0; freqs.len()];
    let mut prev: Option<(f64, f64)> = None;
    for &k in &order {
        let mut p = est[k].arg();
        if let Some((_, pp)) = prev {
            while p - pp > std::f64::consts::PI {
                p -= 2.0 * std::f64::consts::PI;
            }
            while p - pp < -std::f64::consts::PI {
                p += 2.0 * std::f64::consts::PI;
            }
        }
        phase[k] = p;
        prev = Some((freqs[k], p));
    }
    let num: f64 = freqs.iter().zip(&phase).map(|(f, p)| f * p).sum();
    let den: f64 = freqs.iter().map(|f| f * f).sum();
    let tau = if den > 0.0 { num / den } else { 0.0 };
    Ok(est
        .iter()
        .zip(freqs)
        .map(|(z, f)| z * Complex64::from_polar(1.0, -tau * f))
        .collect())
}

/// Rx estimates 1/H11, 1/H21 and Tx estimates 1/H12, 1/H22 on `freqs`
/// (cycles per sample).
pub fn extract_responses(state: &CalibrationState, freqs: &[f64]) -> Result<ResponseEstimate> {
    Ok(ResponseEstimate {
        freqs: freqs.to_vec(),
        rx_response_1: reciprocal(&state.h11, freqs)?,
        rx_response_2: reciprocal(&state.h21, freqs)?,
        tx_response_1: reciprocal(&state.h12, freqs)?,
        tx_response_2: reciprocal(&state.h22, freqs)?,
    })
}

/// `n` evenly spaced frequencies on [0, f_max] in cycles per sample.
pub fn frequency_grid(f_max: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    (0..n).map(|k| f_max * k as f64 / (n - 1) as f64).collect()
}

fn csv_io(e: csv::Error) -> SerError {
    SerError::Io(e.to_string())
}

/// Columns: filter, tap, value.
pub fn write_taps_csv<W: Write>(state: &CalibrationState, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["filter", "tap", "value"]).map_err(csv_io)?;
    for (name, h) in [("h11", &state.h11), ("h12", &state.h12), ("h21", &state.h21), ("h22", &state.h22)] {
        for (k, v) in h.iter().enumerate() {
            w.write_record([name.to_string(), k.to_string(), fmt_num(*v)]).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns: sample, cost, windowed_mse_db; every `stride`-th sample.
pub fn write_cost_csv<W: Write>(state: &CalibrationState, window: usize, stride: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample", "cost", "windowed_mse_db"]).map_err(csv_io)?;
    let curve = state.mse_curve_db(window);
    for k in (0..state.cost_trace.len()).step_by(stride.max(1)) {
        w.write_record([k.to_string(), fmt_num(state.cost_trace[k]), fmt_num(curve[k])])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: frequency_hz, response, magnitude_db, phase_rad.
pub fn write_response_csv<W: Write>(est: &ResponseEstimate, sample_rate: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frequency_hz", "response", "magnitude_db", "phase_rad"]).map_err(csv_io)?;
    for (name, r) in [
        ("rx1", &est.rx_response_1),
        ("rx2", &est.rx_response_2),
        ("tx1", &est.tx_response_1),
        ("tx2", &est.tx_response_2),
    ] {
        for (f, z) in est.freqs.iter().zip(r) {
            w.write_record([
                fmt_num(f * sample_rate),
                name.to_string(),
                fmt_num(20.0 * z.norm().log10()),
                fmt_num(z.arg()),
            ])
            .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Training link: QAM training shaped by RRC, Tx and Rx Gaussian responses.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationScenario {
    pub format: QamFormat,
    pub symbols: usize,
    pub shaping: Shaping,
    pub symbol_rate: f64,
    pub lospr_db: f64,
    /// 3 dB bandwidths in Hz; `None` is flat.
    pub tx_bandwidth: Option<f64>,
    pub rx_bandwidth: Option<f64>,
    pub gaussian_order: u32,
    /// Length of the FIR realizing the Gaussian responses.
    pub response_taps: usize,
    /// Constant phase applied to the received field.
    pub phase: f64,
    pub seed: u64,
}

impl Default for CalibrationScenario {
    fn default() -> Self {
        CalibrationScenario {
            format: QamFormat::Qam16,
            symbols: 60_000,
            shaping: Shaping::default(),
            symbol_rate: 100e9,
            lospr_db: 13.0,
            tx_bandwidth: Some(35e9),
            rx_bandwidth: Some(35e9),
            gaussian_order: 2,
            response_taps: 129,
            phase: 0.0,
            seed: 3,
        }
    }
}

/// Simulated traces for a calibration run.
#[derive(Debug, Clone)]
pub struct ScenarioTraces {
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    /// Unit-power shaped training field before the Tx response.
    pub training: Waveform,
    pub a: f64,
    pub sample_rate: f64,
}

impl CalibrationScenario {
    pub fn simulate(&self) -> Result<ScenarioTraces> {
        let s = gen_qam_symbols(self.format, self.symbols, self.seed)?;
        let x = rrc_shape(&s, self.shaping, self.symbol_rate)?.normalized()?;
        let fs = x.sample_rate();
        let taps = |bw: Option<f64>| match bw {
            Some(b) => dsp::gaussian_taps(b, self.gaussian_order, fs, self.response_taps),
            None => vec![1.0],
        };
        let rot = Complex64::from_polar(1.0, self.phase);
        let tx = dsp::cconv(&x.samples, &taps(self.tx_bandwidth));
        let field = x.with_samples(tx.into_iter().map(|z| z * rot).collect());
        let a = (dsp::from_db(self.lospr_db) * field.power()).sqrt();
        let j = taps(self.rx_bandwidth);
        let cfg = FrontEndConfig {
            j1: j.clone(),
            j2: j,
            ..FrontEndConfig::balanced(a)
        };
        let pair = detect(&field, &cfg)?;
        Ok(ScenarioTraces {
            r1: pair.r1,
            r2: pair.r2,
            training: x,
            a,
            sample_rate: fs,
        })
    }

    /// Magnitude of the true Rx response at `f` cycles per sample.
    pub fn rx_truth(&self, f: f64) -> f64 {
        match self.rx_bandwidth {
            Some(b) => dsp::gaussian_response(f * self.shaping.sps as f64 * self.symbol_rate, b, self.gaussian_order),
            None => 1.0,
        }
    }
}
