//! Quick invariant checks on a small simulated link.

use ser_core::channel::{apply_cd, compensate_cd, ChannelConfig};
use ser_core::dynamics::{classify, fixed_points, ConvergenceClass};
use ser_core::frontend::{detect, FrontEndConfig};
use ser_core::reconstruct::{cic, dfr, mult_count, Method};
use ser_core::waveform::{gen_qam_symbols, rrc_shape, rrc_taps, QamFormat, Shaping};

type Check = (&'static str, fn() -> Result<String, String>);

fn rrc_energy() -> Result<String, String> {
    let h = rrc_taps(0.01, 2, 512).map_err(|e| e.to_string())?;
    let e: f64 = h.iter().map(|v| v * v).sum();
    if (e - 2.0).abs() < 1e-9 {
        Ok(format!("sum h^2 = {e:.12}"))
    } else {
        Err(format!("sum h^2 = {e}"))
    }
}

fn cd_round_trip() -> Result<String, String> {
    let s = gen_qam_symbols(QamFormat::Qam16, 4096, 1).map_err(|e| e.to_string())?;
    let w = rrc_shape(&s, Shaping::default(), 100e9).map_err(|e| e.to_string())?;
    let ch = ChannelConfig::with_length(160.0);
    let back = compensate_cd(&apply_cd(&w, &ch).map_err(|e| e.to_string())?, &ch).map_err(|e| e.to_string())?;
    let err = w.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    if err < 1e-9 {
        Ok(format!("max error {err:.1e}"))
    } else {
        Err(format!("max error {err:.1e}"))
    }
}

fn dfr_exact_above_threshold() -> Result<String, String> {
    let s = gen_qam_symbols(QamFormat::Qam64, 4096, 2).map_err(|e| e.to_string())?;
    let w = rrc_shape(&s, Shaping::default(), 100e9).map_err(|e| e.to_string())?;
    let w = apply_cd(&w, &ChannelConfig::with_length(160.0)).map_err(|e| e.to_string())?;
    let peak = w.samples.iter().map(|z| (z.re + z.im).abs()).fold(0.0, f64::max);
    let a = 1.5 * peak;
    let pair = detect(&w, &FrontEndConfig::balanced(a)).map_err(|e| e.to_string())?;
    let rec = dfr(&pair, a, a).map_err(|e| e.to_string())?;
    let err = w
        .samples
        .iter()
        .enumerate()
        .map(|(k, z)| (rec.i_hat[k] - z.re).abs().max((rec.q_hat[k] - z.im).abs()))
        .fold(0.0, f64::max);
    if err < 1e-9 * a {
        Ok(format!("max error {err:.1e}"))
    } else {
        Err(format!("max error {err:.1e}"))
    }
}

fn cic_converges_above_threshold() -> Result<String, String> {
    let s = gen_qam_symbols(QamFormat::Qam16, 4096, 3).map_err(|e| e.to_string())?;
    let w = rrc_shape(&s, Shaping::default(), 100e9).map_err(|e| e.to_string())?;
    let peak = w.samples.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let a = 4.0 * peak;
    let pair = detect(&w, &FrontEndConfig::balanced(a)).map_err(|e| e.to_string())?;
    let rec = cic(&pair, a, 60, None).map_err(|e| e.to_string())?;
    let err = w
        .samples
        .iter()
        .enumerate()
        .map(|(k, z)| (rec.i_hat[k] - z.re).abs())
        .fold(0.0, f64::max);
    if err < 1e-6 * a {
        Ok(format!("max error {err:.1e}"))
    } else {
        Err(format!("max error {err:.1e}"))
    }
}

fn fixed_point_classes() -> Result<String, String> {
    let (alpha, beta) = fixed_points(0.5).map_err(|e| e.to_string())?;
    let ok_fp = (alpha * alpha + alpha - 0.5).abs() < 1e-12 && (beta * beta + beta - 0.5).abs() < 1e-12;
    let near = matches!(classify(0.1, 0.01), ConvergenceClass::ConvergesToZeroError);
    let far = matches!(classify(2.0, 5.0), ConvergenceClass::DivergesToMinusInfinity);
    if ok_fp && near && far {
        Ok(format!("alpha {alpha:.6}, beta {beta:.6}"))
    } else {
        Err(format!("fixed points ok {ok_fp}, small-s class ok {near}, divergence ok {far}"))
    }
}

fn multiplication_counts() -> Result<String, String> {
    let counts = [
        mult_count(Method::Dfr, 0).map_err(|e| e.to_string())?,
        mult_count(Method::Cic, 10).map_err(|e| e.to_string())?,
        mult_count(Method::Gd, 10).map_err(|e| e.to_string())?,
    ];
    if counts == [10, 22, 62] {
        Ok(format!("dfr {}, cic(10) {}, gd(10) {}", counts[0], counts[1], counts[2]))
    } else {
        Err(format!("{counts:?}"))
    }
}

const CHECKS: &[Check] = &[
    ("rrc energy", rrc_energy),
    ("cd round trip", cd_round_trip),
    ("dfr exact above threshold", dfr_exact_above_threshold),
    ("cic converges above threshold", cic_converges_above_threshold),
    ("fixed points and classes", fixed_point_classes),
    ("multiplication counts", multiplication_counts),
];

/// Runs every check; true when all pass.
pub fn run(verbose: bool) -> bool {
    let mut all = true;
    for (name, check) in CHECKS {
        let (tag, detail) = match check() {
            Ok(d) => ("ok", d),
            Err(d) => {
                all = false;
                ("FAIL", d)
            }
        };
        if verbose || tag == "FAIL" {
            println!("{tag:4} {name}: {detail}");
        }
    }
    all
}
