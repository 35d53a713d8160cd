//! The quadratic map e(n+1) = −e(n)² + b that governs the CIC error.
//!
//! With s = Ī + Q̄ and ΔĪ the estimation error, e = 2ΔĪ + s and b = s² + s.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, SerError};
use crate::report::fmt_num;

/// Magnitude beyond which a trajectory is pinned to `f64::NEG_INFINITY`.
pub const OVERFLOW_LIMIT: f64 = 1e150;
/// Tolerance for merging terminal values.
pub const DEDUP_TOL: f64 = 1e-6;
/// Number of trailing iterates inspected for accumulation values.
pub const TAIL: usize = 64;

/// Trajectory [e0, e1, ..., en]. Once |e| exceeds [`OVERFLOW_LIMIT`] (or the
/// value stops being finite) the rest of the trajectory is `-inf`.
pub fn iterate_map(b: f64, e0: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut e = e0;
    out.push(e);
    for _ in 0..n {
        e = if e == f64::NEG_INFINITY || !e.is_finite() || e.abs() > OVERFLOW_LIMIT {
            f64::NEG_INFINITY
        } else {
            -e * e + b
        };
        if !e.is_finite() || e.abs() > OVERFLOW_LIMIT {
            e = f64::NEG_INFINITY;
        }
        out.push(e);
    }
    out
}

/// (α, β) = −1/2 ∓ sqrt(1 + 4b)/2.
pub fn fixed_points(b: f64) -> Result<(f64, f64)> {
    if b < -0.25 || b.is_nan() {
        return Err(SerError::ComplexFixedPoints(b));
    }
    let r = (1.0 + 4.0 * b).sqrt() / 2.0;
    Ok((-0.5 - r, -0.5 + r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvergenceClass {
    DivergesToMinusInfinity,
    ConvergesToZeroError,
    /// Terminal error ΔĪ → value.
    ConvergesToOffset(f64),
    PeriodicOscillation,
    ChaoticOrHigherPeriod,
    UnboundedOrBounded,
}

impl ConvergenceClass {
    pub fn name(&self) -> &'static str {
        match self {
            ConvergenceClass::DivergesToMinusInfinity => "diverges_to_minus_infinity",
            ConvergenceClass::ConvergesToZeroError => "converges_to_zero_error",
            ConvergenceClass::ConvergesToOffset(_) => "converges_to_offset",
            ConvergenceClass::PeriodicOscillation => "periodic_oscillation",
            ConvergenceClass::ChaoticOrHigherPeriod => "chaotic_or_higher_period",
            ConvergenceClass::UnboundedOrBounded => "unbounded_or_bounded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    /// Largest b still reported as a period-2 oscillation.
    pub period2_max: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { period2_max: 1.25 }
    }
}

/// Convergence class of the CIC error for s = Ī + Q̄ and initial error ΔĪ(0).
pub fn classify(s: f64, delta0: f64) -> ConvergenceClass {
    classify_with(s, delta0, &ClassifierConfig::default())
}

pub fn classify_with(s: f64, delta0: f64, cfg: &ClassifierConfig) -> ConvergenceClass {
    let e0 = 2.0 * delta0 + s;
    let b = s * s + s;
    let abs_alpha = 0.5 + (s + 0.5).abs();
    let to_beta = || {
        if s >= -0.5 {
            ConvergenceClass::ConvergesToZeroError
        } else {
            ConvergenceClass::ConvergesToOffset(-(s + 0.5))
        }
    };
    if e0.abs() > abs_alpha {
        return ConvergenceClass::DivergesToMinusInfinity;
    }
    if e0.abs() == abs_alpha {
        // e0 = ±α lands on α and stays there.
        return if s <= -0.5 {
            ConvergenceClass::ConvergesToZeroError
        } else {
            ConvergenceClass::ConvergesToOffset(-(s + 0.5))
        };
    }
    if b <= 0.75 {
        to_beta()
    } else if b <= 2.0 {
        if b <= cfg.period2_max {
            ConvergenceClass::PeriodicOscillation
        } else {
            ConvergenceClass::ChaoticOrHigherPeriod
        }
    } else {
        ConvergenceClass::UnboundedOrBounded
    }
}

/// Sorted values with neighbours closer than `tol` merged; returns
/// (value, count) pairs where value is the first member of each cluster.
pub fn dedup(values: &[f64], tol: f64) -> Vec<(f64, usize)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, usize)> = Vec::new();
    let mut last = f64::NAN;
    for x in v {
        match out.last_mut() {
            Some((_, c)) if x - last <= tol => *c += 1,
            _ => out.push((x, 1)),
        }
        last = x;
    }
    out
}

/// Accumulation values of a trajectory: deduplicated last [`TAIL`] iterates,
/// or `None` when the trajectory diverged.
pub fn terminal_set(b: f64, e0: f64, n_iter: usize) -> Option<Vec<f64>> {
    let t = iterate_map(b, e0, n_iter);
    let tail = &t[t.len().saturating_sub(TAIL)..];
    if tail.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(dedup(tail, DEDUP_TOL).into_iter().map(|(v, _)| v).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BifurcationRow {
    /// Map parameter b, or s = Ī + Q̄ for the ΔĪ form.
    pub x: f64,
    pub terminal_value: f64,
    /// Number of sampled trajectories that visit the value.
    pub multiplicity: usize,
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

fn merge(sets: Vec<Vec<f64>>) -> Vec<(f64, usize)> {
    let all: Vec<f64> = sets.into_iter().flatten().collect();
    dedup(&all, DEDUP_TOL)
}

fn check_bifurcation(n_iter: usize, samples: usize) -> Result<()> {
    if n_iter < 100 {
        return Err(SerError::invalid("n_iter", "need at least 100 iterations"));
    }
    if samples == 0 {
        return Err(SerError::invalid("samples_per_b", "need at least one sample"));
    }
    Ok(())
}

/// Terminal values of e(n) versus b for random e0 drawn uniformly inside the
/// confinement interval (α, |α|). Diverging trajectories contribute nothing.
pub fn bifurcation(
    b_min: f64,
    b_max: f64,
    n_b: usize,
    samples_per_b: usize,
    n_iter: usize,
    seed: u64,
) -> Result<Vec<BifurcationRow>> {
    if b_min < -0.25 || b_max < b_min {
        return Err(SerError::invalid("b_min", "need -1/4 <= b_min <= b_max"));
    }
    check_bifurcation(n_iter, samples_per_b)?;
    let bs = grid(b_min, b_max, n_b);
    let rows: Vec<Vec<BifurcationRow>> = bs
        .par_iter()
        .enumerate()
        .map(|(k, &b)| {
            let (alpha, _) = fixed_points(b).expect("b checked");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let sets: Vec<Vec<f64>> = (0..samples_per_b)
                .filter_map(|_| {
                    let e0 = if alpha < -alpha {
                        rng.random_range(alpha..-alpha)
                    } else {
                        alpha
                    };
                    terminal_set(b, e0, n_iter)
                })
                .collect();
            merge(sets)
                .into_iter()
                .map(|(v, m)| BifurcationRow {
                    x: b,
                    terminal_value: v,
                    multiplicity: m,
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Terminal ΔĪ versus s = Ī + Q̄, iterating the error recurrence directly with
/// ΔĪ(0) drawn so that 2ΔĪ(0) + s lies in (α, |α|).
pub fn bifurcation_delta(
    s_min: f64,
    s_max: f64,
    n_s: usize,
    samples_per_s: usize,
    n_iter: usize,
    seed: u64,
) -> Result<Vec<BifurcationRow>> {
    if s_max < s_min {
        return Err(SerError::invalid("s_min", "need s_min <= s_max"));
    }
    check_bifurcation(n_iter, samples_per_s)?;
    let ss = grid(s_min, s_max, n_s);
    let rows: Vec<Vec<BifurcationRow>> = ss
        .par_iter()
        .enumerate()
        .map(|(k, &s)| {
            let abs_alpha = 0.5 + (s + 0.5).abs();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let sets: Vec<Vec<f64>> = (0..samples_per_s)
                .filter_map(|_| {
                    let e0: f64 = rng.random_range(-abs_alpha..abs_alpha);
                    let mut d = (e0 - s) / 2.0;
                    let mut tail = Vec::with_capacity(TAIL);
                    for n in 0..n_iter {
                        d = crate::reconstruct::cic_error_step(d, s);
                        if !d.is_finite() || d.abs() > OVERFLOW_LIMIT {
                            return None;
                        }
                        if n + TAIL >= n_iter {
                            tail.push(d);
                        }
                    }
                    Some(dedup(&tail, DEDUP_TOL).into_iter().map(|(v, _)| v).collect())
                })
                .collect();
            merge(sets)
                .into_iter()
                .map(|(v, m)| BifurcationRow {
                    x: s,
                    terminal_value: v,
                    multiplicity: m,
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Writes rows with header `x_name,terminal_value,multiplicity`.
pub fn write_bifurcation_csv<W: Write>(rows: &[BifurcationRow], x_name: &str, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| SerError::Io(e.to_string());
    w.write_record([x_name, "terminal_value", "multiplicity"]).map_err(io)?;
    for r in rows {
        w.write_record([fmt_num(r.x), fmt_num(r.terminal_value), r.multiplicity.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
