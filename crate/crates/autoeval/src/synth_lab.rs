//! Desk-scale synthetic world: Gaussian-mixture data, a multinomial
//! logistic classifier over an optional random-Fourier feature map,
//! controllable corruption families, exponential-decay class imbalance,
//! and the two training-must baselines (partner models for agreement,
//! parameter-difference projection norm).
//!
//! Everything is a pure function of `(inputs, seed)`: reruns are
//! byte-identical. All trainers start from zero parameters, which also
//! pins down the initialized network the projection norm measures
//! against.

use serde::{Deserialize, Serialize};

use crate::data_model::LogitStore;
use crate::rng::CounterRng;
use crate::{Error, Result};

/// Corruption severity multipliers, one knob per family.
pub const GAUSSIAN_NOISE_STD_PER_SEVERITY: f64 = 0.1;
pub const DROPOUT_PROB_PER_SEVERITY: f64 = 0.05;
pub const SCALE_PER_SEVERITY: f64 = 0.15;
pub const ROTATE_RADIANS_PER_SEVERITY: f64 = 0.1;
pub const MEAN_SHIFT_PER_SEVERITY: f64 = 0.2;

/// K-component isotropic Gaussian mixture with equal class priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
    /// Isotropic variance of each component.
    pub covariance_scale: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig {
                pointer: "/mixture/n_classes".into(),
                detail: "need at least 2 classes".into(),
            });
        }
        if self.dim < 1 {
            return Err(Error::InvalidConfig {
                pointer: "/mixture/dim".into(),
                detail: "dim must be >= 1".into(),
            });
        }
        if self.means.len() != self.n_classes
            || self.means.iter().any(|m| m.len() != self.dim)
        {
            return Err(Error::InvalidConfig {
                pointer: "/mixture/means".into(),
                detail: "means must be n_classes vectors of length dim".into(),
            });
        }
        for a in 0..self.n_classes {
            for b in a + 1..self.n_classes {
                if self.means[a] == self.means[b] {
                    return Err(Error::InvalidConfig {
                        pointer: "/mixture/means".into(),
                        detail: format!("means of classes {a} and {b} coincide"),
                    });
                }
            }
        }
        if !(self.covariance_scale.is_finite() && self.covariance_scale > 0.0) {
            return Err(Error::InvalidConfig {
                pointer: "/mixture/covariance_scale".into(),
                detail: "covariance_scale must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Labeled feature set, row-major n x dim.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Feature map applied before the affine classifier layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    Identity,
    RandomFourier {
        n_features: usize,
        bandwidth: f64,
        seed: u64,
    },
}

impl FeatureMap {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            FeatureMap::Identity => input_dim,
            FeatureMap::RandomFourier { n_features, .. } => *n_features,
        }
    }

    /// Maps raw features through the transform, row by row.
    pub fn apply(&self, data_dim: usize, features: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Identity => features.to_vec(),
            FeatureMap::RandomFourier {
                n_features,
                bandwidth,
                seed,
            } => {
                let m = *n_features;
                // projection directions and phases are regenerated from the
                // seed so the map itself needs no stored state
                let mut rng = CounterRng::substream(*seed, 0xF0F0);
                let mut proj = vec![0.0; m * data_dim];
                for w in proj.iter_mut() {
                    *w = rng.normal() / bandwidth;
                }
                let mut phase = vec![0.0; m];
                for p in phase.iter_mut() {
                    *p = rng.uniform() * std::f64::consts::TAU;
                }
                let scale = (2.0 / m as f64).sqrt();
                let n = features.len() / data_dim;
                let mut out = vec![0.0; n * m];
                for i in 0..n {
                    let x = &features[i * data_dim..(i + 1) * data_dim];
                    for j in 0..m {
                        let dot: f64 = proj[j * data_dim..(j + 1) * data_dim]
                            .iter()
                            .zip(x)
                            .map(|(w, v)| w * v)
                            .sum();
                        out[i * m + j] = scale * (dot + phase[j]).cos();
                    }
                }
                out
            }
        }
    }

    /// Same map with its random-Fourier directions reseeded; identity is
    /// unchanged.
    pub fn reseeded(&self, new_seed: u64) -> FeatureMap {
        match self {
            FeatureMap::Identity => FeatureMap::Identity,
            FeatureMap::RandomFourier {
                n_features,
                bandwidth,
                ..
            } => FeatureMap::RandomFourier {
                n_features: *n_features,
                bandwidth: *bandwidth,
                seed: new_seed,
            },
        }
    }
}

/// Multinomial logistic classifier: logits = W phi(x) + b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxClassifier {
    pub n_classes: usize,
    pub input_dim: usize,
    /// K x F row-major, F = feature_map.output_dim(input_dim).
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub feature_map: FeatureMap,
}

impl SoftmaxClassifier {
    pub fn zeros(n_classes: usize, input_dim: usize, feature_map: FeatureMap) -> Self {
        let f = feature_map.output_dim(input_dim);
        Self {
            n_classes,
            input_dim,
            weights: vec![0.0; n_classes * f],
            bias: vec![0.0; n_classes],
            feature_map,
        }
    }

    /// Flattened parameter vector (weights then bias).
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }
}

/// Full-batch gradient-descent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub feature_map: FeatureMap,
}

/// A trained classifier plus the per-epoch NLL trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub classifier: SoftmaxClassifier,
    /// Mean negative log-likelihood evaluated at the start of each epoch.
    pub nll_trace: Vec<f64>,
}

/// Draws `n` labeled points from the mixture; labels are assigned
/// round-robin so equal priors hold exactly.
pub fn generate(spec: &MixtureSpec, n: usize) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = CounterRng::substream(spec.seed, 0x6E);
    let std = spec.covariance_scale.sqrt();
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.n_classes;
        labels.push(class as u32);
        for d in 0..spec.dim {
            features.push(spec.means[class][d] + std * rng.normal());
        }
    }
    Ok(Dataset {
        n,
        dim: spec.dim,
        features,
        labels,
    })
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Trains a multinomial logistic classifier by full-batch gradient
/// descent on the mean NLL, from zero initialization. Stops at the
/// epoch cap or when the gradient infinity-norm falls below 1e-6.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let k = (data.labels.iter().copied().max().unwrap_or(0) + 1).max(2) as usize;
    train_k(data, k, config)
}

/// Like [`train`] with an explicit class count (needed when pseudo-labels
/// may not cover every class).
pub fn train_k(data: &Dataset, n_classes: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    let f = config.feature_map.output_dim(data.dim);
    let phi = config.feature_map.apply(data.dim, &data.features);
    let n = data.n;
    let k = n_classes;
    let mut clf = SoftmaxClassifier::zeros(k, data.dim, config.feature_map.clone());
    let mut trace = Vec::with_capacity(config.epochs);

    let mut probs = vec![0.0; k];
    for epoch in 0..config.epochs {
        let mut loss = 0.0;
        let mut grad_w = vec![0.0; k * f];
        let mut grad_b = vec![0.0; k];
        for i in 0..n {
            let x = &phi[i * f..(i + 1) * f];
            for c in 0..k {
                let row = &clf.weights[c * f..(c + 1) * f];
                probs[c] = clf.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                if !probs[c].is_finite() {
                    return Err(Error::TrainingDiverged { epoch });
                }
            }
            softmax_in_place(&mut probs);
            let y = data.labels[i] as usize;
            loss -= probs[y].max(f64::MIN_POSITIVE).ln();
            for c in 0..k {
                let delta = probs[c] - (c == y) as usize as f64;
                grad_b[c] += delta;
                for (g, v) in grad_w[c * f..(c + 1) * f].iter_mut().zip(x) {
                    *g += delta * v;
                }
            }
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        trace.push(loss);

        let inv_n = 1.0 / n as f64;
        let mut grad_inf = 0.0f64;
        for g in grad_w.iter_mut().chain(grad_b.iter_mut()) {
            *g *= inv_n;
            grad_inf = grad_inf.max(g.abs());
        }
        if grad_inf < 1e-6 {
            break;
        }
        for (w, g) in clf.weights.iter_mut().zip(&grad_w) {
            *w -= config.learning_rate * g;
        }
        for (b, g) in clf.bias.iter_mut().zip(&grad_b) {
            *b -= config.learning_rate * g;
        }
    }
    Ok(TrainOutcome {
        classifier: clf,
        nll_trace: trace,
    })
}

/// Applies the classifier to a feature set, carrying labels through.
pub fn logits_of(clf: &SoftmaxClassifier, data: &Dataset, dataset_id: &str) -> Result<LogitStore> {
    if data.dim != clf.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "feature dim {} vs classifier input dim {}",
            data.dim, clf.input_dim
        )));
    }
    let f = clf.feature_map.output_dim(data.dim);
    let phi = clf.feature_map.apply(data.dim, &data.features);
    let k = clf.n_classes;
    let mut logits = Vec::with_capacity(data.n * k);
    for i in 0..data.n {
        let x = &phi[i * f..(i + 1) * f];
        for c in 0..k {
            let row = &clf.weights[c * f..(c + 1) * f];
            logits.push(clf.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
    let labels = if data.labels.is_empty() {
        None
    } else {
        Some(data.labels.clone())
    };
    LogitStore::new(data.n, k, logits, labels, dataset_id)
}

/// Corruption families. Noise, scale and mean-shift are the "seen"
/// families the regressor is fitted on; dropout and rotation are held
/// out as "unseen" evaluation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftFamily {
    GaussianNoise,
    FeatureDropout,
    Scale,
    Rotate,
    MeanShift,
}

impl ShiftFamily {
    pub fn seen() -> [ShiftFamily; 3] {
        [
            ShiftFamily::GaussianNoise,
            ShiftFamily::Scale,
            ShiftFamily::MeanShift,
        ]
    }

    pub fn unseen() -> [ShiftFamily; 2] {
        [ShiftFamily::FeatureDropout, ShiftFamily::Rotate]
    }

    pub fn name(self) -> &'static str {
        match self {
            ShiftFamily::GaussianNoise => "gaussian_noise",
            ShiftFamily::FeatureDropout => "feature_dropout",
            ShiftFamily::Scale => "scale",
            ShiftFamily::Rotate => "rotate",
            ShiftFamily::MeanShift => "mean_shift",
        }
    }
}

/// One corruption: family, severity 1..=5, seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub family: ShiftFamily,
    pub severity: u8,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.severity) {
            return Err(Error::InvalidConfig {
                pointer: "/severity".into(),
                detail: format!("severity must be in 1..=5, got {}", self.severity),
            });
        }
        Ok(())
    }

    pub fn dataset_id(&self) -> String {
        format!("{}_s{}_seed{}", self.family.name(), self.severity, self.seed)
    }
}

/// Applies the corruption at full intensity.
pub fn apply_shift(data: &Dataset, spec: &ShiftSpec) -> Result<Dataset> {
    apply_shift_scaled(data, spec, 1.0)
}

/// Applies the corruption with its severity constants multiplied by
/// `intensity` (0 disables the corruption entirely; used by tests).
pub fn apply_shift_scaled(data: &Dataset, spec: &ShiftSpec, intensity: f64) -> Result<Dataset> {
    spec.validate()?;
    let mut out = data.clone();
    let sev = spec.severity as f64 * intensity;
    if sev == 0.0 {
        return Ok(out);
    }
    let mut rng = CounterRng::substream(spec.seed, spec.family as u64 + 1);
    let d = data.dim;
    match spec.family {
        ShiftFamily::GaussianNoise => {
            let mean = data.features.iter().sum::<f64>() / data.features.len() as f64;
            let var = data
                .features
                .iter()
                .map(|v| (v - mean).powi(2))
                .sum::<f64>()
                / data.features.len() as f64;
            let noise_std = GAUSSIAN_NOISE_STD_PER_SEVERITY * sev * var.sqrt();
            for v in out.features.iter_mut() {
                *v += noise_std * rng.normal();
            }
        }
        ShiftFamily::FeatureDropout => {
            let p = DROPOUT_PROB_PER_SEVERITY * sev;
            for v in out.features.iter_mut() {
                if rng.uniform() < p {
                    *v = 0.0;
                }
            }
        }
        ShiftFamily::Scale => {
            // sign of the perturbation alternates with severity parity
            let sign = if spec.severity % 2 == 1 { 1.0 } else { -1.0 };
            let factor = 1.0 + sign * SCALE_PER_SEVERITY * sev;
            for v in out.features.iter_mut() {
                *v *= factor;
            }
        }
        ShiftFamily::Rotate => {
            if d >= 2 {
                let (u, v) = random_2_plane(&mut rng, d);
                let angle = ROTATE_RADIANS_PER_SEVERITY * sev;
                let (sin, cos) = angle.sin_cos();
                for i in 0..out.n {
                    let x = &mut out.features[i * d..(i + 1) * d];
                    let xu: f64 = x.iter().zip(&u).map(|(a, b)| a * b).sum();
                    let xv: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum();
                    let du = (cos - 1.0) * xu - sin * xv;
                    let dv = sin * xu + (cos - 1.0) * xv;
                    for j in 0..d {
                        x[j] += du * u[j] + dv * v[j];
                    }
                }
            }
        }
        ShiftFamily::MeanShift => {
            let dir = random_unit_vector(&mut rng, d);
            let step = MEAN_SHIFT_PER_SEVERITY * sev;
            for i in 0..out.n {
                for j in 0..d {
                    out.features[i * d + j] += step * dir[j];
                }
            }
        }
    }
    Ok(out)
}

fn random_unit_vector(rng: &mut CounterRng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn random_2_plane(rng: &mut CounterRng, d: usize) -> (Vec<f64>, Vec<f64>) {
    let u = random_unit_vector(rng, d);
    loop {
        let mut v = random_unit_vector(rng, d);
        let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        for (x, &ux) in v.iter_mut().zip(&u) {
            *x -= dot * ux;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return (u, v.into_iter().map(|x| x / norm).collect());
        }
    }
}

/// Exponential-decay class subsampling. With per-class budget
/// `n_max` (the smallest class count), class k keeps
/// `round(n_max * r^{k/(K-1)})` samples drawn without replacement.
pub fn imbalance_sample(data: &Dataset, r: f64, seed: u64) -> Result<Dataset> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidConfig {
            pointer: "/imbalance_ratio".into(),
            detail: format!("r must be in (0, 1], got {r}"),
        });
    }
    let k = (data.labels.iter().copied().max().unwrap_or(0) + 1) as usize;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in data.labels.iter().enumerate() {
        by_class[y as usize].push(i);
    }
    let n_max = by_class.iter().map(|c| c.len()).min().unwrap_or(0);
    let mut keep = Vec::new();
    for (class, indices) in by_class.iter().enumerate() {
        let frac = if k > 1 {
            r.powf(class as f64 / (k - 1) as f64)
        } else {
            1.0
        };
        let n_k = (n_max as f64 * frac).round() as usize;
        if n_k == 0 {
            return Err(Error::EmptyClass { class });
        }
        let mut shuffled = indices.clone();
        CounterRng::substream(seed, class as u64).shuffle(&mut shuffled);
        keep.extend_from_slice(&shuffled[..n_k]);
    }
    keep.sort_unstable();
    let mut features = Vec::with_capacity(keep.len() * data.dim);
    let mut labels = Vec::with_capacity(keep.len());
    for &i in &keep {
        features.extend_from_slice(data.row(i));
        labels.push(data.labels[i]);
    }
    Ok(Dataset {
        n: keep.len(),
        dim: data.dim,
        features,
        labels,
    })
}

/// Pseudo-labels the target with `clf`, retrains from zero init, and
/// returns the L2 norm of the flattened parameter difference.
pub fn proj_norm(clf: &SoftmaxClassifier, target: &Dataset, config: &TrainConfig) -> Result<f64> {
    if config.feature_map != clf.feature_map {
        return Err(Error::ShapeMismatch(
            "proj_norm requires the retrained model to share the classifier's feature map".into(),
        ));
    }
    let store = logits_of(clf, target, "projnorm_pseudo")?;
    let pseudo: Vec<u32> = (0..target.n).map(|i| store.argmax(i) as u32).collect();
    let pseudo_data = Dataset {
        n: target.n,
        dim: target.dim,
        features: target.features.clone(),
        labels: pseudo,
    };
    let retrained = train_k(&pseudo_data, clf.n_classes, config)?;
    let pf = clf.parameters();
    let pr = retrained.classifier.parameters();
    Ok(pf
        .iter()
        .zip(&pr)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Trains a second classifier on the same data with the random-Fourier
/// map reseeded, giving `agree_score` its partner model. With an
/// identity feature map and full-batch descent the objective is convex,
/// so the partner is identical; the reseeded feature map is what makes
/// the pair disagree under shift.
pub fn agree_partner(data: &Dataset, config: &TrainConfig, alt_seed: u64) -> Result<SoftmaxClassifier> {
    let cfg = TrainConfig {
        feature_map: config.feature_map.reseeded(alt_seed),
        ..config.clone()
    };
    Ok(train(data, &cfg)?.classifier)
}
