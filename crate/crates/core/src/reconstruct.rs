//! Field reconstruction from the two single-ended photocurrents.
//!
//! Three SSBI mitigation schemes are provided: direct field reconstruction
//! (DFR), clipped iterative SSBI cancellation (CIC) and gradient descent (GD),
//! plus the unmitigated baseline.
//!
//! The iterative schemes work in normalized units, Ī = I/(2a), Q̄ = Q/(2a),
//! where the detection equations read U1 = Ī + Ī² + Q̄², U2 = Q̄ + Ī² + Q̄².
//! Trace means used by the initial guess and the clip references are computed
//! once, before the per-sample work is fanned out, so results do not depend on
//! the thread count.

use rayon::prelude::*;

use crate::error::{Result, SerError};
use crate::frontend::PhotocurrentPair;
use crate::dsp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Dfr,
    Cic,
    Gd,
    Raw,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dfr => "dfr",
            Method::Cic => "cic",
            Method::Gd => "gd",
            Method::Raw => "raw",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = SerError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dfr" => Ok(Method::Dfr),
            "cic" => Ok(Method::Cic),
            "gd" => Ok(Method::Gd),
            "raw" => Ok(Method::Raw),
            _ => Err(SerError::invalid("method", format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipTarget {
    /// Ceiling on the SSBI estimate Ī² + Q̄² (CIC).
    SsbiEstimate,
    /// Symmetric magnitude clip on Ī and Q̄ separately (GD).
    IqBranches,
}

/// Clipper setting: `level_db` above the reference mean power of the target,
/// measured once from the initial guess.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec {
    pub level_db: f64,
    pub target: ClipTarget,
}

impl ClipSpec {
    pub fn ssbi(level_db: f64) -> Self {
        ClipSpec {
            level_db,
            target: ClipTarget::SsbiEstimate,
        }
    }

    pub fn iq(level_db: f64) -> Self {
        ClipSpec {
            level_db,
            target: ClipTarget::IqBranches,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub i_hat: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub iterations: usize,
    pub real_mults_per_sample: u64,
    pub clip_events: u64,
    pub method: Method,
}

/// Arithmetic used by the per-sample kernels. Multiplications by powers of
/// two are written as plain operations: they are shifts and cost nothing.
pub trait Arith {
    fn mul(&mut self, a: f64, b: f64) -> f64;
    fn sqrt(&mut self, x: f64) -> f64;
}

struct Plain;

impl Arith for Plain {
    #[inline(always)]
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }

    #[inline(always)]
    fn sqrt(&mut self, x: f64) -> f64 {
        x.sqrt()
    }
}

/// Counts real multiplications; a square root is charged as 4.
#[derive(Debug, Default, Clone, Copy)]
pub struct MulCounter {
    pub mults: u64,
}

pub const SQRT_COST: u64 = 4;

impl Arith for MulCounter {
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        self.mults += 1;
        a * b
    }

    fn sqrt(&mut self, x: f64) -> f64 {
        self.mults += SQRT_COST;
        x.sqrt()
    }
}

/// Multiplications per output (Ī, Q̄) sample.
pub fn mult_count(method: Method, n_iter: usize) -> Result<u64> {
    match method {
        Method::Dfr => Ok(10),
        Method::Raw => Ok(0),
        Method::Cic | Method::Gd if n_iter == 0 => {
            Err(SerError::invalid("n_iter", "iterative methods need n_iter >= 1"))
        }
        _ => Ok(formula(method, n_iter)),
    }
}

fn formula(method: Method, n: usize) -> u64 {
    let n = n as u64;
    match method {
        Method::Dfr => 10,
        Method::Cic => 2 * n + 2,
        Method::Gd => 6 * n + 2,
        Method::Raw => 0,
    }
}

fn check_amp(name: &'static str, a: f64) -> Result<()> {
    if a > 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(SerError::invalid(name, "amplitude must be positive"))
    }
}

#[derive(Debug, Clone, Copy)]
struct DfrCoeffs {
    ax2: f64,
    a1h: f64,
    a2h: f64,
    c1: f64,
    c2: f64,
}

impl DfrCoeffs {
    fn new(a1: f64, a2: f64) -> Self {
        let ax2 = a1 * a1 + a2 * a2;
        DfrCoeffs {
            ax2,
            a1h: a1 / 2.0,
            a2h: a2 / 2.0,
            c1: a1 / (2.0 * ax2),
            c2: a2 / (2.0 * ax2),
        }
    }
}

/// Returns (Î, Q̂, Δ).
#[inline(always)]
fn dfr_kernel<A: Arith>(ar: &mut A, r1: f64, r2: f64, c: &DfrCoeffs) -> (f64, f64, f64) {
    let p = ar.mul(r1, r2);
    let t = r1 + r2 - c.ax2;
    let delta = 4.0 * p - ar.mul(t, t);
    let root = ar.sqrt(delta.abs());
    let d = r1 - r2;
    let i = -c.a1h + ar.mul(c.c1, d) + ar.mul(c.c2, root);
    let q = -c.a2h - ar.mul(c.c2, d) + ar.mul(c.c1, root);
    (i, q, delta)
}

/// Discriminant Δ = 4R1R2 − (R1 + R2 − Ax²)² for one sample.
pub fn dfr_delta(r1: f64, r2: f64, a1: f64, a2: f64) -> f64 {
    dfr_kernel(&mut Plain, r1, r2, &DfrCoeffs::new(a1, a2)).2
}

/// Direct field reconstruction taking the "+" root with |Δ| under the radical.
pub fn dfr(pair: &PhotocurrentPair, a1: f64, a2: f64) -> Result<ReconstructionResult> {
    check_amp("a1", a1)?;
    check_amp("a2", a2)?;
    let c = DfrCoeffs::new(a1, a2);
    let (i_hat, q_hat): (Vec<f64>, Vec<f64>) = pair
        .r1
        .par_iter()
        .zip(&pair.r2)
        .map(|(&r1, &r2)| {
            let (i, q, _) = dfr_kernel(&mut Plain, r1, r2, &c);
            (i, q)
        })
        .unzip();
    Ok(ReconstructionResult {
        i_hat,
        q_hat,
        iterations: 0,
        real_mults_per_sample: formula(Method::Dfr, 0),
        clip_events: 0,
        method: Method::Dfr,
    })
}

/// Unmitigated baseline: (R − a²)/(2a) with the trace mean removed.
pub fn raw_passthrough(pair: &PhotocurrentPair, a1: f64, a2: f64) -> Result<ReconstructionResult> {
    check_amp("a1", a1)?;
    check_amp("a2", a2)?;
    let lin = |r: &[f64], a: f64| -> Vec<f64> {
        let v: Vec<f64> = r.iter().map(|x| (x - a * a) / (2.0 * a)).collect();
        let m = dsp::mean(&v);
        v.into_iter().map(|x| x - m).collect()
    };
    Ok(ReconstructionResult {
        i_hat: lin(&pair.r1, a1),
        q_hat: lin(&pair.r2, a2),
        iterations: 0,
        real_mults_per_sample: 0,
        clip_events: 0,
        method: Method::Raw,
    })
}

/// Normalized traces U = (R − a²)/(4a²) per branch.
#[derive(Debug, Clone)]
struct Normalized {
    k1: f64,
    k2: f64,
    a1sq: f64,
    a2sq: f64,
    /// Trace means of U1 and U2, subtracted by the initial guess.
    m1: f64,
    m2: f64,
}

impl Normalized {
    fn new(pair: &PhotocurrentPair, a1: f64, a2: f64) -> Self {
        let (a1sq, a2sq) = (a1 * a1, a2 * a2);
        let (k1, k2) = (1.0 / (4.0 * a1sq), 1.0 / (4.0 * a2sq));
        let m1 = pair.r1.iter().map(|r| (r - a1sq) * k1).sum::<f64>() / pair.len().max(1) as f64;
        let m2 = pair.r2.iter().map(|r| (r - a2sq) * k2).sum::<f64>() / pair.len().max(1) as f64;
        Normalized {
            k1,
            k2,
            a1sq,
            a2sq,
            m1,
            m2,
        }
    }

    #[inline(always)]
    fn apply<A: Arith>(&self, ar: &mut A, r1: f64, r2: f64) -> (f64, f64) {
        (ar.mul(r1 - self.a1sq, self.k1), ar.mul(r2 - self.a2sq, self.k2))
    }

    /// Reference powers of the initial guess: (E{Ī0²}, E{Q̄0²}).
    fn initial_powers(&self, pair: &PhotocurrentPair) -> (f64, f64) {
        let n = pair.len().max(1) as f64;
        let mut pi = 0.0;
        let mut pq = 0.0;
        for (&r1, &r2) in pair.r1.iter().zip(&pair.r2) {
            let (u1, u2) = self.apply(&mut Plain, r1, r2);
            pi += (u1 - self.m1).powi(2);
            pq += (u2 - self.m2).powi(2);
        }
        (pi / n, pq / n)
    }
}

/// One CIC sample in normalized units. Returns (Ī(n), Q̄(n), clip count).
#[inline(always)]
pub fn cic_kernel<A: Arith>(
    ar: &mut A,
    u1: f64,
    u2: f64,
    i0: f64,
    q0: f64,
    n_iter: usize,
    ceiling: Option<f64>,
) -> (f64, f64, u64) {
    let (mut i, mut q) = (i0, q0);
    let mut clips = 0;
    for _ in 0..n_iter {
        let mut ss = ar.mul(i, i) + ar.mul(q, q);
        if let Some(c) = ceiling {
            if ss > c {
                ss = c;
                clips += 1;
            }
        }
        i = u1 - ss;
        q = u2 - ss;
    }
    (i, q, clips)
}

/// Iterative SSBI cancellation, Ī(n+1) = U1 − (Ī(n)² + Q̄(n)²).
/// Each branch is normalized by its own amplitude; `a` is the nominal LO
/// amplitude used for both branches (see [`cic_imbalanced`]).
pub fn cic(pair: &PhotocurrentPair, a: f64, n_iter: usize, clip: Option<ClipSpec>) -> Result<ReconstructionResult> {
    cic_imbalanced(pair, a, a, n_iter, clip)
}

pub fn cic_imbalanced(
    pair: &PhotocurrentPair,
    a1: f64,
    a2: f64,
    n_iter: usize,
    clip: Option<ClipSpec>,
) -> Result<ReconstructionResult> {
    check_amp("a1", a1)?;
    check_amp("a2", a2)?;
    let norm = Normalized::new(pair, a1, a2);
    let ceiling = match clip {
        None => None,
        Some(ClipSpec {
            level_db,
            target: ClipTarget::SsbiEstimate,
        }) => {
            check_level(level_db)?;
            let n = pair.len().max(1) as f64;
            let reference = pair
                .r1
                .iter()
                .zip(&pair.r2)
                .map(|(&r1, &r2)| {
                    let (u1, u2) = norm.apply(&mut Plain, r1, r2);
                    (u1 - norm.m1).powi(2) + (u2 - norm.m2).powi(2)
                })
                .sum::<f64>()
                / n;
            Some(reference * dsp::from_db(level_db))
        }
        Some(_) => {
            return Err(SerError::invalid("clip", "CIC clips the SSBI estimate"));
        }
    };
    let out: Vec<(f64, f64, u64)> = pair
        .r1
        .par_iter()
        .zip(&pair.r2)
        .map(|(&r1, &r2)| {
            let (u1, u2) = norm.apply(&mut Plain, r1, r2);
            cic_kernel(&mut Plain, u1, u2, u1 - norm.m1, u2 - norm.m2, n_iter, ceiling)
        })
        .collect();
    Ok(finish(out, 2.0 * a1, 2.0 * a2, n_iter, Method::Cic))
}

fn finish(out: Vec<(f64, f64, u64)>, g1: f64, g2: f64, n_iter: usize, method: Method) -> ReconstructionResult {
    let mut i_hat = Vec::with_capacity(out.len());
    let mut q_hat = Vec::with_capacity(out.len());
    let mut clip_events = 0;
    for (i, q, c) in out {
        i_hat.push(g1 * i);
        q_hat.push(g2 * q);
        clip_events += c;
    }
    ReconstructionResult {
        i_hat,
        q_hat,
        iterations: n_iter,
        real_mults_per_sample: formula(method, n_iter),
        clip_events,
        method,
    }
}

fn check_level(level_db: f64) -> Result<()> {
    if level_db.is_finite() {
        Ok(())
    } else {
        Err(SerError::invalid("clip.level_db", "must be finite"))
    }
}

/// G = X² + Y², X = Ī² + Q̄² + Ī − U1, Y = Ī² + Q̄² + Q̄ − U2.
pub fn gd_objective(i: f64, q: f64, u1: f64, u2: f64) -> f64 {
    let s = i * i + q * q;
    let x = s + i - u1;
    let y = s + q - u2;
    x * x + y * y
}

/// Full gradient (∂G/∂Ī, ∂G/∂Q̄).
pub fn gd_gradient(i: f64, q: f64, u1: f64, u2: f64) -> (f64, f64) {
    let s = i * i + q * q;
    let x = s + i - u1;
    let y = s + q - u2;
    (2.0 * (x * (2.0 * i + 1.0) + y * 2.0 * i), 2.0 * (x * 2.0 * q + y * (2.0 * q + 1.0)))
}

/// One GD sample in normalized units; the step is mu times half the gradient,
/// X + 2Ī(X+Y) and Y + 2Q̄(X+Y). `limits` are the (Ī, Q̄) magnitude clips.
#[inline(always)]
#[allow(clippy::too_many_arguments)]
pub fn gd_kernel<A: Arith>(
    ar: &mut A,
    u1: f64,
    u2: f64,
    i0: f64,
    q0: f64,
    n_iter: usize,
    mu: f64,
    limits: Option<(f64, f64)>,
) -> (f64, f64, u64) {
    let (mut i, mut q) = (i0, q0);
    let mut clips = 0;
    for _ in 0..n_iter {
        let s = ar.mul(i, i) + ar.mul(q, q);
        let x = s + i - u1;
        let y = s + q - u2;
        let sum = x + y;
        let gi = x + 2.0 * ar.mul(i, sum);
        let gq = y + 2.0 * ar.mul(q, sum);
        i -= ar.mul(mu, gi);
        q -= ar.mul(mu, gq);
        if let Some((ti, tq)) = limits {
            if i.abs() > ti {
                i = ti.copysign(i);
                clips += 1;
            }
            if q.abs() > tq {
                q = tq.copysign(q);
                clips += 1;
            }
        }
    }
    (i, q, clips)
}

/// Gradient-descent reconstruction starting from the CIC initial guess.
pub fn gd(pair: &PhotocurrentPair, a: f64, n_iter: usize, mu: f64, clip: Option<ClipSpec>) -> Result<ReconstructionResult> {
    gd_imbalanced(pair, a, a, n_iter, mu, clip)
}

pub fn gd_imbalanced(
    pair: &PhotocurrentPair,
    a1: f64,
    a2: f64,
    n_iter: usize,
    mu: f64,
    clip: Option<ClipSpec>,
) -> Result<ReconstructionResult> {
    check_amp("a1", a1)?;
    check_amp("a2", a2)?;
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(SerError::invalid("mu", "step size must be positive"));
    }
    let norm = Normalized::new(pair, a1, a2);
    let limits = match clip {
        None => None,
        Some(ClipSpec {
            level_db,
            target: ClipTarget::IqBranches,
        }) => {
            check_level(level_db)?;
            let (pi, pq) = norm.initial_powers(pair);
            let g = dsp::from_db(level_db);
            Some(((pi * g).sqrt(), (pq * g).sqrt()))
        }
        Some(_) => return Err(SerError::invalid("clip", "GD clips the I and Q branches")),
    };
    let out: Vec<(f64, f64, u64)> = pair
        .r1
        .par_iter()
        .zip(&pair.r2)
        .map(|(&r1, &r2)| {
            let (u1, u2) = norm.apply(&mut Plain, r1, r2);
            gd_kernel(&mut Plain, u1, u2, u1 - norm.m1, u2 - norm.m2, n_iter, mu, limits)
        })
        .collect();
    Ok(finish(out, 2.0 * a1, 2.0 * a2, n_iter, Method::Gd))
}

/// Per-sample 2·sqrt((Ī(n) − Ī)² + (Q̄(n) − Q̄)²).
pub fn gd_error_norm(i_n: &[f64], q_n: &[f64], i_true: &[f64], q_true: &[f64]) -> Result<Vec<f64>> {
    let n = i_n.len();
    for len in [q_n.len(), i_true.len(), q_true.len()] {
        if len != n {
            return Err(SerError::LengthMismatch { left: n, right: len });
        }
    }
    Ok((0..n)
        .map(|k| 2.0 * ((i_n[k] - i_true[k]).powi(2) + (q_n[k] - q_true[k]).powi(2)).sqrt())
        .collect())
}

/// One step of the CIC error recurrence ΔĪ' = −2ΔĪ(ΔĪ + s), s = Ī + Q̄.
pub fn cic_error_step(delta: f64, s: f64) -> f64 {
    -2.0 * delta * (delta + s)
}

/// Multiplications counted while running each kernel on one sample, including
/// the two normalizations (R − a²)·1/(4a²) for the iterative schemes.
pub fn instrumented_mults(method: Method, n_iter: usize) -> u64 {
    let mut ar = MulCounter::default();
    let (r1, r2, a) = (5.3, 3.9, 2.0);
    match method {
        Method::Dfr => {
            dfr_kernel(&mut ar, r1, r2, &DfrCoeffs::new(a, a * 1.05));
        }
        Method::Cic | Method::Gd => {
            let pair = PhotocurrentPair {
                r1: vec![r1],
                r2: vec![r2],
                sample_rate: 1.0,
                config_used: crate::frontend::FrontEndConfig::balanced(a),
            };
            let norm = Normalized::new(&pair, a, a);
            let (u1, u2) = norm.apply(&mut ar, r1, r2);
            if method == Method::Cic {
                cic_kernel(&mut ar, u1, u2, u1 - 0.01, u2 - 0.01, n_iter, Some(0.05));
            } else {
                gd_kernel(&mut ar, u1, u2, u1 - 0.01, u2 - 0.01, n_iter, 0.05, Some((0.3, 0.3)));
            }
        }
        Method::Raw => {}
    }
    ar.mults
}
