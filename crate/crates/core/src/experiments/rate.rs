//! Rate exponent as a function of `alpha = log d / log n`, and the peak and
//! valley locations it predicts.

use crate::error::{Error, Result};

/// `(iota, beta)` with `alpha in [1/(iota+1), 1/iota)` and
/// `beta = min{(iota+1) alpha - 1, 1 - iota alpha}`.
pub fn theoretical_rate(alpha: f64) -> Result<(u32, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut iota = (1.0 / alpha).floor() as u32;
    // floor(1/alpha) puts alpha = 1/iota in regime iota; the half-open
    // interval puts it in iota - 1. Also guards rounding in 1/alpha.
    while iota > 1 && alpha >= 1.0 / f64::from(iota) {
        iota -= 1;
    }
    while alpha < 1.0 / f64::from(iota + 1) {
        iota += 1;
    }
    let i = f64::from(iota);
    let beta = ((i + 1.0) * alpha - 1.0).min(1.0 - i * alpha).max(0.0);
    Ok((iota, beta))
}

/// `peaks[i-1] = n^{1/i}`, `valleys[i-1] = n^{1/(i+1/2)}` for `i = 1..=iota_max`.
pub fn predicted_peaks_valleys(n: usize, iota_max: u32) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 || iota_max < 1 {
        return Err(Error::usage("peaks need n >= 2 and iota_max >= 1"));
    }
    let nf = n as f64;
    let peaks = (1..=iota_max).map(|i| nf.powf(1.0 / f64::from(i))).collect();
    let valleys = (1..=iota_max).map(|i| nf.powf(1.0 / (f64::from(i) + 0.5))).collect();
    Ok((peaks, valleys))
}

/// Uniform grid `k / (points + 1)` merged with every regime boundary `1/iota`
/// and crest `1/(iota + 1/2)` above the grid's smallest value.
pub fn rate_curve_alphas(points: usize) -> Vec<f64> {
    let step = 1.0 / (points as f64 + 1.0);
    let mut alphas: Vec<f64> = (1..=points).map(|k| k as f64 * step).collect();
    let floor = step.min(0.5);
    let mut i = 1u32;
    loop {
        let crest = 1.0 / (f64::from(i) + 0.5);
        if crest < floor {
            break;
        }
        alphas.push(crest);
        if i > 1 {
            alphas.push(1.0 / f64::from(i));
        }
        i += 1;
    }
    alphas.sort_by(f64::total_cmp);
    alphas.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    alphas
}
