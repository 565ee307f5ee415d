//! Linear regression and the correlation metrics used to judge a measure.
//!
//! Accuracy lives in [0, 1] everywhere inside the crate; percentage
//! points appear only at the reporting boundary (`mae` multiplies by
//! 100).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fitted slope/intercept mapping a measure value to accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    #[serde(rename = "w")]
    pub slope: f64,
    #[serde(rename = "b")]
    pub intercept: f64,
    #[serde(rename = "n")]
    pub n_fit_points: usize,
    #[serde(rename = "r2")]
    pub r_squared_fit: f64,
}

impl RegressionModel {
    /// Raw regression output w*measure + b, unclamped.
    pub fn predict_raw(&self, measure: f64) -> f64 {
        self.slope * measure + self.intercept
    }

    /// Prediction clamped to [0, 1] for reporting.
    pub fn predict_clamped(&self, measure: f64) -> f64 {
        self.predict_raw(measure).clamp(0.0, 1.0)
    }
}

/// Correlation metrics of a measure against accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub r_squared: f64,
    /// Mean absolute error in percentage points, when predictions were
    /// compared against ground truth.
    pub mae: Option<f64>,
}

/// Ordinary least squares of accuracy on measure, closed form.
pub fn fit_linear(pairs: &[(f64, f64)]) -> Result<RegressionModel> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::DegenerateFit(format!("need >= 2 points, got {n}")));
    }
    let nf = n as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit(
            "all measure values identical".into(),
        ));
    }
    let sxy: f64 = pairs
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let ss_res: f64 = pairs
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).powi(2))
        .sum();
    let ss_tot: f64 = pairs.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    // constant-target convention: r^2 = 0 when both sums vanish
    let r_squared_fit = if ss_tot == 0.0 { 0.0 } else { 1.0 - ss_res / ss_tot };

    Ok(RegressionModel {
        slope,
        intercept,
        n_fit_points: n,
        r_squared_fit,
    })
}

/// Mean absolute error in percentage points.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::LengthMismatch { left: 0, right: 0 });
    }
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(100.0 * sum / pred.len() as f64)
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::DegenerateFit("pearson needs >= 2 points".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x".into()));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks (1-based); tied values share the mean of their rank range.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average-rank tie handling.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::DegenerateFit("spearman needs >= 2 points".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry).map_err(|e| match e {
        Error::ZeroVariance(which) => Error::ZeroVariance(format!("ranks of {which}")),
        other => other,
    })
}

/// Coefficient of determination of predictions against truth.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.len() < 2 {
        return Err(Error::DegenerateFit("r_squared needs >= 2 points".into()));
    }
    let mean_t = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean_t).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance("truth".into()));
    }
    let ss_res: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (t - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn fit_exact_line() {
        let m = fit_linear(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        assert!(close(m.slope, 1.0, 1e-12));
        assert!(close(m.intercept, 0.0, 1e-12));
        assert!(close(m.r_squared_fit, 1.0, 1e-12));
    }

    #[test]
    fn fit_flat_target() {
        let m = fit_linear(&[(0.0, 1.0), (1.0, 1.0)]).unwrap();
        assert!(close(m.slope, 0.0, 1e-12));
        assert!(close(m.intercept, 1.0, 1e-12));
        assert_eq!(m.r_squared_fit, 0.0);
    }

    #[test]
    fn fit_noiseless_50_points() {
        let pairs: Vec<(f64, f64)> = (0..50)
            .map(|i| {
                let x = i as f64 / 10.0;
                (x, -0.3 * x + 0.9)
            })
            .collect();
        let m = fit_linear(&pairs).unwrap();
        assert!(close(m.slope, -0.3, 1e-10));
        assert!(close(m.intercept, 0.9, 1e-10));
    }

    #[test]
    fn fit_rejects_constant_x() {
        assert!(matches!(
            fit_linear(&[(1.0, 0.0), (1.0, 1.0)]),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn predict_clamps() {
        let m = RegressionModel {
            slope: 2.0,
            intercept: 0.0,
            n_fit_points: 2,
            r_squared_fit: 1.0,
        };
        assert!(close(m.predict_raw(0.9), 1.8, 1e-12));
        assert_eq!(m.predict_clamped(0.9), 1.0);
        let id = RegressionModel {
            slope: 1.0,
            intercept: 0.0,
            n_fit_points: 2,
            r_squared_fit: 1.0,
        };
        assert!(close(id.predict_raw(0.42), 0.42, 1e-12));
    }

    #[test]
    fn mae_basic() {
        assert_eq!(mae(&[0.5, 0.3], &[0.5, 0.3]).unwrap(), 0.0);
        assert!(close(mae(&[0.5], &[0.4]).unwrap(), 10.0, 1e-12));
        assert!(mae(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn pearson_affine() {
        let x = [1.0, 2.0, 3.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!(close(pearson(&x, &y).unwrap(), 1.0, 1e-12));
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(close(pearson(&x, &neg).unwrap(), -1.0, 1e-12));
    }

    #[test]
    fn pearson_zero_variance_errors() {
        assert!(matches!(
            pearson(&[1.0, 1.0], &[0.0, 1.0]),
            Err(Error::ZeroVariance(_))
        ));
    }

    #[test]
    fn spearman_monotone() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert!(close(spearman(&x, &y).unwrap(), 1.0, 1e-12));
        let rev: Vec<f64> = x.iter().map(|v| -v.powi(3)).collect();
        assert!(close(spearman(&x, &rev).unwrap(), -1.0, 1e-12));
    }

    #[test]
    fn average_ranks_handle_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn r_squared_basic() {
        let truth = [0.1, 0.4, 0.7];
        assert!(close(r_squared(&truth, &truth).unwrap(), 1.0, 1e-12));
        let mean = truth.iter().sum::<f64>() / 3.0;
        assert!(close(r_squared(&[mean, mean, mean], &truth).unwrap(), 0.0, 1e-12));
    }

    #[test]
    fn residuals_orthogonal_to_regressor() {
        let pairs: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let x = i as f64;
                (x, 0.5 * x + ((i * 7919) % 13) as f64 / 13.0)
            })
            .collect();
        let m = fit_linear(&pairs).unwrap();
        let dot: f64 = pairs
            .iter()
            .map(|(x, y)| (y - m.predict_raw(*x)) * x)
            .sum();
        assert!(dot.abs() <= 1e-9 * 20.0 * 20.0);
    }

    #[test]
    fn model_json_shape() {
        let m = RegressionModel {
            slope: 1.5,
            intercept: -0.25,
            n_fit_points: 10,
            r_squared_fit: 0.875,
        };
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"w":1.5,"b":-0.25,"n":10,"r2":0.875}"#);
        let back: RegressionModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
