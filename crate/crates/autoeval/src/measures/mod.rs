//! Dataset-level measures computed from logit stores.
//!
//! The central statistic is the meta-distribution energy: per-sample
//! free energies `Z(x; f) = -T log sum_j exp(f_j(x)/T)` are re-normalized
//! by a softmax over the N samples of the dataset, and the measure is the
//! negative mean log of those probabilities. The module also implements
//! the confidence, entropy, threshold, spectral, distributional and
//! transport baselines it is compared against.
//!
//! Every operation is a pure function of immutable inputs; all of them
//! may run concurrently. Log-sum-exp is always computed with max
//! subtraction, so logits up to roughly +-700*T are overflow-free.

mod cot;

pub use cot::{cot_score, CotScore};

use crate::data_model::LogitStore;
use crate::linalg::{psd_sqrt, sym_eigen, Matrix};
use crate::{Error, Result};

/// Positive temperature constant of the energy function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidStore(format!(
                "temperature must be a positive finite real, got {value}"
            )));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature(1.0)
    }
}

/// Per-sample free energies of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyVector {
    pub energies: Vec<f64>,
}

/// Sums in ascending order so the result does not depend on the input
/// ordering; keeps energy statistics bit-identical under sample or class
/// permutations.
fn ordered_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

/// log sum_i exp(x_i), stabilized by max subtraction; permutation
/// invariant bit-for-bit.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s = ordered_sum(xs.iter().map(|x| (x - m).exp()).collect());
    m + s.ln()
}

/// Softmax over class logits at temperature T.
fn softmax_row(row: &[f64], t: f64) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| ((x - m) / t).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Free energy Z(x; f) = -T log sum_j exp(f_j(x)/T) per sample.
pub fn energy(store: &LogitStore, t: Temperature) -> EnergyVector {
    let tv = t.value();
    let energies = store
        .rows()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s = ordered_sum(row.iter().map(|&x| ((x - m) / tv).exp()).collect());
            -m - tv * s.ln()
        })
        .collect();
    EnergyVector { energies }
}

/// Meta-distribution energy: negative mean log-softmax over the N sample
/// energies. Equals `log_sum_exp(Z) - mean(Z)`; `log N` exactly when all
/// samples are identical.
pub fn mde(store: &LogitStore, t: Temperature) -> f64 {
    let z = energy(store, t).energies;
    let n = z.len() as f64;
    let lse = log_sum_exp(&z);
    lse - ordered_sum(z) / n
}

/// Mean free energy of the store.
pub fn avg_energy(store: &LogitStore, t: Temperature) -> f64 {
    let z = energy(store, t).energies;
    let n = z.len() as f64;
    ordered_sum(z) / n
}

/// Mean maximum softmax confidence.
pub fn conf_score(store: &LogitStore) -> f64 {
    let sum: f64 = store
        .rows()
        .map(|row| {
            softmax_row(row, 1.0)
                .into_iter()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    sum / store.n_samples() as f64
}

/// Negated Shannon entropy of one probability vector; larger means more
/// confident. 0 log 0 is treated as 0.
fn neg_entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum()
}

/// Mean negated softmax entropy over the store; ranges in [-log K, 0].
pub fn entropy_score(store: &LogitStore) -> f64 {
    let sum: f64 = store.rows().map(|row| neg_entropy(&softmax_row(row, 1.0))).sum();
    sum / store.n_samples() as f64
}

/// Confidence score kind used by the ATC threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtcScoreKind {
    NegativeEntropy,
}

/// Threshold calibrated on a labeled source so that the fraction of
/// source points scoring below it matches the source error rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtcThreshold {
    pub t: f64,
    pub score_kind: AtcScoreKind,
}

fn atc_sample_scores(store: &LogitStore) -> Vec<f64> {
    store
        .rows()
        .map(|row| neg_entropy(&softmax_row(row, 1.0)))
        .collect()
}

/// Calibrates the ATC threshold on a labeled source store.
///
/// With error rate `e` and scores sorted ascending, the threshold is the
/// order statistic at index `ceil(e*N)`; indices outside [0, N-1] clamp
/// to -inf/+inf so zero-error sources score 1.0 and zero-accuracy
/// sources score 0.0.
pub fn atc_calibrate(source: &LogitStore) -> Result<AtcThreshold> {
    if source.labels().is_none() {
        return Err(Error::MissingLabels);
    }
    let n = source.n_samples();
    let err = 1.0 - source.true_accuracy()?;
    let mut scores = atc_sample_scores(source);
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = (err * n as f64).ceil() as i64;
    let t = if k <= 0 {
        f64::NEG_INFINITY
    } else if k >= n as i64 {
        f64::INFINITY
    } else {
        scores[k as usize]
    };
    Ok(AtcThreshold {
        t,
        score_kind: AtcScoreKind::NegativeEntropy,
    })
}

/// Fraction of target samples whose confidence score is >= the threshold.
pub fn atc_score(target: &LogitStore, th: AtcThreshold) -> f64 {
    let scores = atc_sample_scores(target);
    let hits = scores.iter().filter(|&&s| s >= th.t).count();
    hits as f64 / target.n_samples() as f64
}

/// Normalized nuclear norm of the N x K softmax prediction matrix:
/// sum of singular values over sqrt(min(N, K) * N).
///
/// Singular values come from the eigenvalues of the K x K Gram matrix
/// P^T P; negative eigenvalues are clamped to 0 before the square root.
pub fn nuclear_norm_score(store: &LogitStore) -> Result<f64> {
    let n = store.n_samples();
    let k = store.n_classes();
    let mut p = Matrix::zeros(n, k);
    for (i, row) in store.rows().enumerate() {
        let probs = softmax_row(row, 1.0);
        p.data[i * k..(i + 1) * k].copy_from_slice(&probs);
    }
    let (eigvals, _) = sym_eigen(&p.gram())?;
    let nuclear: f64 = eigvals.iter().map(|&l| l.max(0.0).sqrt()).sum();
    Ok(nuclear / ((n.min(k) * n) as f64).sqrt())
}

/// Mean and covariance of a store's logit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetStats {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
}

/// Column means and unbiased sample covariance (divisor N-1) of the
/// logit vectors.
pub fn frechet_stats(store: &LogitStore) -> Result<FrechetStats> {
    let n = store.n_samples();
    let k = store.n_classes();
    if n < 2 {
        return Err(Error::InvalidStore(
            "frechet_stats needs at least 2 samples".into(),
        ));
    }
    let mut mean = vec![0.0; k];
    for row in store.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = Matrix::zeros(k, k);
    for row in store.rows() {
        for i in 0..k {
            let di = row[i] - mean[i];
            for j in i..k {
                cov.data[i * k + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..k {
        for j in i..k {
            let v = cov.data[i * k + j] / denom;
            cov.data[i * k + j] = v;
            cov.data[j * k + i] = v;
        }
    }
    Ok(FrechetStats {
        mean,
        covariance: cov,
    })
}

/// Frechet distance between two Gaussians summarized by (mean,
/// covariance): ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
///
/// The cross term is computed through the symmetrized product
/// sqrt(S_a)·S_b·sqrt(S_a); small negative results (within -1e-8)
/// clamp to 0.
pub fn frechet_distance(a: &FrechetStats, b: &FrechetStats) -> Result<f64> {
    let k = a.mean.len();
    if b.mean.len() != k {
        return Err(Error::ShapeMismatch(format!(
            "frechet dimensions {} vs {}",
            k,
            b.mean.len()
        )));
    }
    let mean_sq: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    let s = psd_sqrt(&a.covariance)?;
    let inner = s.matmul(&b.covariance).matmul(&s);
    let (eigvals, _) = sym_eigen(&inner)?;
    let tr_sqrt: f64 = eigvals.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let fd = mean_sq + a.covariance.trace() + b.covariance.trace() - 2.0 * tr_sqrt;
    if (-1e-8..0.0).contains(&fd) {
        return Ok(0.0);
    }
    Ok(fd)
}

/// Fraction of samples where two models' argmax predictions coincide.
pub fn agree_score(store_a: &LogitStore, store_b: &LogitStore) -> Result<f64> {
    if store_a.n_samples() != store_b.n_samples()
        || store_a.n_classes() != store_b.n_classes()
    {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            store_a.n_samples(),
            store_a.n_classes(),
            store_b.n_samples(),
            store_b.n_classes()
        )));
    }
    let agree = (0..store_a.n_samples())
        .filter(|&i| store_a.argmax(i) == store_b.argmax(i))
        .count();
    Ok(agree as f64 / store_a.n_samples() as f64)
}

/// Per-sample log-probability of the true class at temperature T:
/// `f_y/T - log sum_j exp(f_j/T)`. Always <= 0; scaled by T it tends to
/// `f_y - max_j f_j` as T approaches 0.
pub fn theorem_gap(store: &LogitStore, t: Temperature) -> Result<Vec<f64>> {
    let labels = store.labels().ok_or(Error::MissingLabels)?;
    let tv = t.value();
    Ok(store
        .rows()
        .zip(labels)
        .map(|(row, &y)| {
            let scaled: Vec<f64> = row.iter().map(|&f| f / tv).collect();
            scaled[y as usize] - log_sum_exp(&scaled)
        })
        .collect())
}

/// Softmax probability rows of a store at T=1; used by the transport
/// measure and exposed for tests.
pub fn softmax_rows(store: &LogitStore) -> Vec<Vec<f64>> {
    store.rows().map(|row| softmax_row(row, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(logits: &[&[f64]], labels: Option<&[u32]>) -> LogitStore {
        let k = logits[0].len();
        let flat: Vec<f64> = logits.iter().flat_map(|r| r.iter().copied()).collect();
        LogitStore::new(logits.len(), k, flat, labels.map(|l| l.to_vec()), "t").unwrap()
    }

    fn temp(v: f64) -> Temperature {
        Temperature::new(v).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn energy_uniform_logits() {
        let s = store(&[&[0.0, 0.0]], None);
        let z = energy(&s, temp(1.0)).energies;
        assert!(close(z[0], -(2.0f64.ln()), 1e-12));
    }

    #[test]
    fn energy_low_temperature_approaches_neg_max() {
        let s = store(&[&[3.0, 1.0, 0.0]], None);
        let z = energy(&s, temp(0.001)).energies;
        assert!(close(z[0], -3.0, 1e-3));
    }

    #[test]
    fn energy_matches_formula() {
        // Z = -2 log(e^{0.5} + e^{1})
        let s = store(&[&[1.0, 2.0]], None);
        let z = energy(&s, temp(2.0)).energies;
        let expected = -2.0 * (0.5f64.exp() + 1.0f64.exp()).ln();
        assert!(close(z[0], expected, 1e-12));
        // extended-precision oracle value
        assert!(close(z[0], -2.948_153_968_360_213_4, 1e-12));
    }

    #[test]
    fn energy_overflow_free_at_large_logits() {
        let s = store(&[&[700.0, 650.0], &[-700.0, -710.0]], None);
        let z = energy(&s, temp(1.0)).energies;
        assert!(z.iter().all(|v| v.is_finite()));
        assert!(close(z[0], -700.0 - (1.0 + (-50.0f64).exp()).ln(), 1e-9));
    }

    #[test]
    fn mde_identical_samples_is_log_n() {
        let row: &[f64] = &[1.0, -2.0];
        let s = store(&[row; 5], None);
        assert!(close(mde(&s, temp(1.0)), (5.0f64).ln(), 1e-12));
    }

    #[test]
    fn mde_two_sample_hand_value() {
        // energies 0 and log 3 => -0.5(log 1/4 + log 3/4)
        // realized with K=2 logit rows whose free energies hit those values:
        // Z = -log(e^a + e^b); pick rows with sum of exps 1 and 1/3.
        let r1 = [(0.5f64).ln(), (0.5f64).ln()]; // Z = -log 1 = 0
        let r2 = [(1.0f64 / 6.0).ln(), (1.0f64 / 6.0).ln()]; // Z = -log(1/3) = log 3
        let s = store(&[&r1, &r2], None);
        let z = energy(&s, temp(1.0)).energies;
        assert!(close(z[0], 0.0, 1e-12));
        assert!(close(z[1], 3.0f64.ln(), 1e-12));
        let expected = -0.5 * ((0.25f64).ln() + (0.75f64).ln());
        assert!(close(mde(&s, temp(1.0)), expected, 1e-12));
        assert!(close(expected, 0.836_988_216_785_681_7, 1e-12));
    }

    #[test]
    fn mde_singleton_is_zero() {
        let s = store(&[&[4.0, -1.0, 2.0]], None);
        assert!(close(mde(&s, temp(1.0)), 0.0, 1e-12));
    }

    #[test]
    fn avg_energy_uniform() {
        let s = store(&[&[0.0, 0.0], &[0.0, 0.0]], None);
        assert!(close(avg_energy(&s, temp(1.0)), -(2.0f64.ln()), 1e-12));
    }

    #[test]
    fn conf_uniform_is_one_over_k() {
        let s = store(&[&[0.0, 0.0, 0.0, 0.0]], None);
        assert!(close(conf_score(&s), 0.25, 1e-12));
    }

    #[test]
    fn conf_log_odds() {
        let s = store(&[&[(7.0f64).ln(), (3.0f64).ln()]], None);
        assert!(close(conf_score(&s), 0.7, 1e-12));
    }

    #[test]
    fn conf_peaked() {
        let s = store(&[&[10.0, 0.0, 0.0]], None);
        let expected = (10.0f64).exp() / ((10.0f64).exp() + 2.0);
        assert!(close(conf_score(&s), expected, 1e-12));
        assert!(close(conf_score(&s), 0.999_909_207_154_089, 1e-6));
    }

    #[test]
    fn entropy_uniform_is_neg_log_k() {
        let s = store(&[&[0.0, 0.0, 0.0]], None);
        assert!(close(entropy_score(&s), -(3.0f64.ln()), 1e-12));
    }

    #[test]
    fn entropy_near_one_hot_limit() {
        let s = store(&[&[1000.0, 0.0]], None);
        assert!(close(entropy_score(&s), 0.0, 1e-12));
    }

    #[test]
    fn entropy_hand_value() {
        let s = store(&[&[(0.7f64).ln(), (0.3f64).ln()]], None);
        let expected = 0.7 * (0.7f64).ln() + 0.3 * (0.3f64).ln();
        assert!(close(entropy_score(&s), expected, 1e-12));
        assert!(close(expected, -0.610_864_302_054_894_1, 1e-12));
    }

    #[test]
    fn atc_perfect_source_scores_one() {
        let s = store(&[&[3.0, 0.0], &[0.0, 3.0], &[2.0, 0.0]], Some(&[0, 1, 0]));
        let th = atc_calibrate(&s).unwrap();
        assert_eq!(th.t, f64::NEG_INFINITY);
        assert_eq!(atc_score(&s, th), 1.0);
    }

    #[test]
    fn atc_zero_accuracy_source_scores_zero() {
        let s = store(&[&[3.0, 0.0], &[0.0, 3.0]], Some(&[1, 0]));
        let th = atc_calibrate(&s).unwrap();
        assert_eq!(th.t, f64::INFINITY);
        assert_eq!(atc_score(&s, th), 0.0);
    }

    #[test]
    fn atc_all_above_and_below() {
        let s = store(&[&[3.0, 0.0], &[0.0, 3.0]], Some(&[0, 1]));
        let th_low = AtcThreshold {
            t: -100.0,
            score_kind: AtcScoreKind::NegativeEntropy,
        };
        assert_eq!(atc_score(&s, th_low), 1.0);
        let th_high = AtcThreshold {
            t: 100.0,
            score_kind: AtcScoreKind::NegativeEntropy,
        };
        assert_eq!(atc_score(&s, th_high), 0.0);
    }

    #[test]
    fn atc_missing_labels_errors() {
        let s = store(&[&[1.0, 0.0]], None);
        assert!(matches!(atc_calibrate(&s), Err(Error::MissingLabels)));
    }

    #[test]
    fn nuclear_identity_matrix_is_one() {
        // strongly peaked diagonal logits approximate the K x K identity
        let k = 4;
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 60.0 } else { 0.0 }).collect())
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = store(&refs, None);
        assert!(close(nuclear_norm_score(&s).unwrap(), 1.0, 1e-9));
    }

    #[test]
    fn nuclear_uniform_rank_one() {
        // P uniform 1/K with N=4, K=2: score = sqrt(N/K)/sqrt(min*K N) = 0.5
        let row: &[f64] = &[0.0, 0.0];
        let s = store(&[row; 4], None);
        assert!(close(nuclear_norm_score(&s).unwrap(), 0.5, 1e-12));
    }

    #[test]
    fn frechet_stats_identical_samples_zero_cov() {
        let s = store(&[&[1.0, 2.0], &[1.0, 2.0]], None);
        let st = frechet_stats(&s).unwrap();
        assert!(st.covariance.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frechet_stats_hand_covariance() {
        let s = store(&[&[0.0, 0.0], &[2.0, 0.0]], None);
        let st = frechet_stats(&s).unwrap();
        assert_eq!(st.mean, vec![1.0, 0.0]);
        assert!(close(st.covariance.get(0, 0), 2.0, 1e-12));
        assert_eq!(st.covariance.get(0, 1), 0.0);
        assert_eq!(st.covariance.get(1, 1), 0.0);
    }

    #[test]
    fn frechet_stats_needs_two_samples() {
        let s = store(&[&[0.0, 0.0]], None);
        assert!(frechet_stats(&s).is_err());
    }

    #[test]
    fn frechet_distance_self_is_zero() {
        let s = store(
            &[&[0.1, 0.9], &[0.4, -0.2], &[1.3, 0.5], &[-0.6, 0.0]],
            None,
        );
        let st = frechet_stats(&s).unwrap();
        let d = frechet_distance(&st, &st).unwrap();
        assert!(d.abs() <= 1e-9, "{d}");
    }

    #[test]
    fn frechet_distance_diagonal_closed_form() {
        let a = FrechetStats {
            mean: vec![0.0, 0.0],
            covariance: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
        };
        let b = FrechetStats {
            mean: vec![1.0, 1.0],
            covariance: Matrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 1.0]]),
        };
        // 2 + (sqrt1 - sqrt4)^2 + 0 = 3
        assert!(close(frechet_distance(&a, &b).unwrap(), 3.0, 1e-9));
    }

    #[test]
    fn frechet_distance_dimension_mismatch() {
        let a = FrechetStats {
            mean: vec![0.0, 0.0],
            covariance: Matrix::identity(2),
        };
        let b = FrechetStats {
            mean: vec![0.0, 0.0, 0.0],
            covariance: Matrix::identity(3),
        };
        assert!(frechet_distance(&a, &b).is_err());
    }

    #[test]
    fn agree_identical_and_opposite() {
        let a = store(&[&[2.0, 0.0], &[0.0, 2.0]], None);
        assert_eq!(agree_score(&a, &a).unwrap(), 1.0);
        let b = store(&[&[0.0, 2.0], &[2.0, 0.0]], None);
        assert_eq!(agree_score(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn agree_shape_mismatch_errors() {
        let a = store(&[&[2.0, 0.0]], None);
        let b = store(&[&[2.0, 0.0], &[0.0, 2.0]], None);
        assert!(agree_score(&a, &b).is_err());
    }

    #[test]
    fn theorem_gap_uniform() {
        let s = store(&[&[0.0, 0.0]], Some(&[0]));
        let g = theorem_gap(&s, temp(1.0)).unwrap();
        assert!(close(g[0], (0.5f64).ln(), 1e-12));
    }

    #[test]
    fn theorem_gap_correct_argmax_low_t() {
        let s = store(&[&[5.0, 0.0]], Some(&[0]));
        let g = theorem_gap(&s, temp(0.01)).unwrap();
        assert!(g[0].abs() <= 1e-9, "{}", g[0]);
    }

    #[test]
    fn theorem_gap_wrong_argmax_low_t_limit() {
        let s = store(&[&[5.0, 0.0]], Some(&[1]));
        let g = theorem_gap(&s, temp(0.01)).unwrap();
        assert!(close(g[0] * 0.01, -5.0, 1e-3));
    }
}
