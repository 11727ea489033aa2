use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use super::PerCodeStats;
use crate::calibrate::Metric;
use crate::hisco::HiscamTable;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum RegressionError {
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("{got} observations, need at least {needed}")]
    TooFewObservations { got: usize, needed: usize },
}

/// OLS fit with heteroskedasticity-robust (HC1) standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub n: usize,
}

const Z95: f64 = 1.96;

/// Regresses `y` on the given columns plus an intercept (listed last).
pub fn ols_hc1(y: &[f64], columns: &[(&str, Vec<f64>)]) -> Result<RegressionResult, RegressionError> {
    let n = y.len();
    let k = columns.len() + 1;
    let needed = (k + 1).max(3);
    if n < needed {
        return Err(RegressionError::TooFewObservations { got: n, needed });
    }
    let x = DMatrix::from_fn(n, k, |i, j| if j < k - 1 { columns[j].1[i] } else { 1.0 });
    let sv = x.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let tol = smax * (n.max(k) as f64) * f64::EPSILON;
    if smax == 0.0 || sv.iter().any(|&s| s <= tol) {
        return Err(RegressionError::RankDeficient);
    }
    let xt = x.transpose();
    let xtx_inv = (&xt * &x).try_inverse().ok_or(RegressionError::RankDeficient)?;
    let yv = DVector::from_column_slice(y);
    let beta = &xtx_inv * (&xt * &yv);
    let resid = &yv - &x * &beta;
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let row = x.row(i).transpose();
        meat += (&row * row.transpose()) * resid[i].powi(2);
    }
    let cov = (&xtx_inv * meat * &xtx_inv) * (n as f64 / (n - k) as f64);
    let se: Vec<f64> = (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let mut names: Vec<String> = columns.iter().map(|c| c.0.to_string()).collect();
    names.push("Constant".into());
    Ok(RegressionResult {
        ci_low: coefficients.iter().zip(&se).map(|(b, s)| b - Z95 * s).collect(),
        ci_high: coefficients.iter().zip(&se).map(|(b, s)| b + Z95 * s).collect(),
        names,
        coefficients,
        std_errors: se,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Panel {
    /// metric ~ hiscam
    A,
    /// metric ~ hiscam + log(n_train)
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SesCell {
    pub metric: Metric,
    pub panel: Panel,
    pub result: Result<RegressionResult, RegressionError>,
    /// Codes left out for a missing score, an undefined metric, or (panel B) no training rows.
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SesReport {
    pub cells: Vec<SesCell>,
}

pub const HISCAM_NAME: &str = "HISCAM";
pub const LOG_N_NAME: &str = "log(N. train obs.)";

fn metric_of(s: &PerCodeStats, m: Metric) -> Option<f64> {
    match m {
        Metric::Accuracy => s.accuracy,
        Metric::Precision => s.precision,
        Metric::Recall => s.recall,
        Metric::F1 => s.f1,
    }
}

/// Unweighted OLS of each per-code metric on the code's HISCAM score.
pub fn ses_regression(stats: &[PerCodeStats], hiscam: &HiscamTable) -> SesReport {
    let mut cells = Vec::new();
    for panel in [Panel::A, Panel::B] {
        for m in Metric::ALL {
            let mut y = Vec::new();
            let mut score = Vec::new();
            let mut logn = Vec::new();
            for s in stats {
                let (Some(v), Some(h)) = (metric_of(s, m), hiscam.lookup(&s.code)) else { continue };
                if panel == Panel::B && s.n_train == 0 {
                    continue;
                }
                y.push(v);
                score.push(h);
                logn.push((s.n_train.max(1) as f64).ln());
            }
            let dropped = stats.len() - y.len();
            let mut cols = vec![(HISCAM_NAME, score)];
            if panel == Panel::B {
                cols.push((LOG_N_NAME, logn));
            }
            cells.push(SesCell { metric: m, panel, result: ols_hc1(&y, &cols), dropped });
        }
    }
    SesReport { cells }
}

impl SesReport {
    pub fn get(&self, metric: Metric, panel: Panel) -> Option<&SesCell> {
        self.cells.iter().find(|c| c.metric == metric && c.panel == panel)
    }

    /// Two panels, one column per metric, coefficient rows with bracketed 95%
    /// intervals beneath, and an observation count row.
    pub fn render(&self) -> String {
        const W: usize = 22;
        let mut s = String::new();
        let _ = write!(s, "{:<20}", "");
        for m in Metric::ALL {
            let _ = write!(s, "{:>W$}", m.label());
        }
        s.push('\n');
        for (panel, title, rows) in [
            (Panel::A, "Panel A", vec![HISCAM_NAME, "Constant"]),
            (Panel::B, "Panel B", vec![HISCAM_NAME, LOG_N_NAME, "Constant"]),
        ] {
            let _ = writeln!(s, "{title}");
            for name in rows {
                let mut coef = format!("{name:<20}");
                let mut ci = format!("{:<20}", "");
                for m in Metric::ALL {
                    let fit = self.get(m, panel).and_then(|c| c.result.as_ref().ok());
                    match fit.and_then(|r| r.names.iter().position(|x| x == name).map(|j| (r, j))) {
                        Some((r, j)) => {
                            let _ = write!(coef, "{:>W$}", format!("{:.4}", r.coefficients[j]));
                            let _ = write!(ci, "{:>W$}", format!("[{:.4}, {:.4}]", r.ci_low[j], r.ci_high[j]));
                        }
                        None => {
                            let _ = write!(coef, "{:>W$}", "-");
                            let _ = write!(ci, "{:>W$}", "");
                        }
                    }
                }
                let _ = writeln!(s, "{coef}");
                let _ = writeln!(s, "{}", ci.trim_end());
            }
            let _ = write!(s, "{:<20}", "Observations");
            for m in Metric::ALL {
                let n = self.get(m, panel).and_then(|c| c.result.as_ref().ok()).map_or("-".into(), |r| r.n.to_string());
                let _ = write!(s, "{n:>W$}");
            }
            s.push('\n');
        }
        s
    }
}
