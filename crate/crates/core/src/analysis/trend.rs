use serde::Serialize;

use super::AnalysisError;

pub const TREND_POINTS: usize = 100;

/// Smoothed curve sampled on an even grid over the x range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendCurve {
    pub bandwidth: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// x where the cumulative share of observations first reaches 1% and 99%.
    /// Points are weighted by `exp(x)`, i.e. x is read as a log count.
    pub mark_low: f64,
    pub mark_high: f64,
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, falling back to the sd when the
/// IQR is zero and to 1 when all x coincide.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if spread > 0.0 {
        0.9 * spread * n.powf(-0.2)
    } else {
        1.0
    }
}

fn defined_points(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| a.is_finite() && b.is_finite()).map(|(a, b)| (*a, *b)).collect();
    // Canonical order so the result does not depend on input order.
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts
}

pub fn kernel_trend(x: &[f64], y: &[f64]) -> Result<TrendCurve, AnalysisError> {
    let pts = defined_points(x, y);
    if pts.len() < 2 {
        return Err(AnalysisError::InsufficientPoints { needed: 2, got: pts.len() });
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let h = silverman_bandwidth(&xs);
    build(&pts, h)
}

/// Same as [`kernel_trend`] with a fixed bandwidth.
pub fn kernel_trend_with_bandwidth(x: &[f64], y: &[f64], bandwidth: f64) -> Result<TrendCurve, AnalysisError> {
    let pts = defined_points(x, y);
    if pts.len() < 2 {
        return Err(AnalysisError::InsufficientPoints { needed: 2, got: pts.len() });
    }
    assert!(bandwidth > 0.0, "bandwidth must be positive");
    build(&pts, bandwidth)
}

fn nadaraya_watson(pts: &[(f64, f64)], h: f64, at: f64) -> f64 {
    // Shift exponents by their maximum so far-away evaluation points do not
    // underflow every weight.
    let expo: Vec<f64> = pts.iter().map(|(x, _)| -0.5 * ((at - x) / h).powi(2)).collect();
    let top = expo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for ((_, y), e) in pts.iter().zip(&expo) {
        let w = (e - top).exp();
        num += w * y;
        den += w;
    }
    num / den
}

fn build(pts: &[(f64, f64)], h: f64) -> Result<TrendCurve, AnalysisError> {
    let lo = pts.first().unwrap().0;
    let hi = pts.last().unwrap().0;
    let xs: Vec<f64> = (0..TREND_POINTS)
        .map(|i| if i + 1 == TREND_POINTS { hi } else { lo + (hi - lo) * i as f64 / (TREND_POINTS - 1) as f64 })
        .collect();
    let (ymin, ymax) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let ys = xs.iter().map(|&x| nadaraya_watson(pts, h, x).clamp(ymin, ymax)).collect();

    let top = hi;
    let weights: Vec<f64> = pts.iter().map(|p| (p.0 - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mark = |q: f64| {
        let mut acc = 0.0;
        for (p, w) in pts.iter().zip(&weights) {
            acc += w;
            if acc / total >= q {
                return p.0;
            }
        }
        hi
    };
    Ok(TrendCurve { bandwidth: h, xs, ys, mark_low: mark(0.01), mark_high: mark(0.99) })
}
