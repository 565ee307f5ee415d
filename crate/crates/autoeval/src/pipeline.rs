//! End-to-end AutoEval orchestration: sweep shifted test sets, compute
//! (accuracy, measure) pairs, fit one linear model per measure, predict
//! the held-out sets, and report correlations and MAE. Also the two
//! stress protocols (re-corruption and class imbalance).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_model::{save_store, LogitStore, MeasureReport, StoreFormat};
use crate::measures::{
    agree_score, atc_calibrate, atc_score, avg_energy, conf_score, cot_score, entropy_score,
    frechet_distance, frechet_stats, mde, nuclear_norm_score, AtcThreshold, FrechetStats,
    Temperature,
};
use crate::rng::CounterRng;
use crate::stats::{fit_linear, mae, pearson, r_squared, spearman, CorrelationReport, RegressionModel};
use crate::synth_lab::{
    agree_partner, apply_shift, generate, imbalance_sample, logits_of, proj_norm, train, Dataset,
    MixtureSpec, ShiftSpec, SoftmaxClassifier, TrainConfig,
};
use crate::{Error, Result};

/// Identifiers of the measures the pipeline can sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeasureId {
    #[serde(rename = "mde")]
    Mde,
    #[serde(rename = "avg_energy")]
    AvgEnergy,
    #[serde(rename = "conf")]
    Conf,
    #[serde(rename = "entropy")]
    Entropy,
    #[serde(rename = "atc")]
    Atc,
    #[serde(rename = "nuclear")]
    Nuclear,
    #[serde(rename = "frechet")]
    Frechet,
    #[serde(rename = "cot")]
    Cot,
    #[serde(rename = "agree")]
    Agree,
    #[serde(rename = "projnorm")]
    ProjNorm,
}

impl MeasureId {
    pub const ALL: [MeasureId; 10] = [
        MeasureId::Mde,
        MeasureId::AvgEnergy,
        MeasureId::Conf,
        MeasureId::Entropy,
        MeasureId::Atc,
        MeasureId::Nuclear,
        MeasureId::Frechet,
        MeasureId::Cot,
        MeasureId::Agree,
        MeasureId::ProjNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureId::Mde => "mde",
            MeasureId::AvgEnergy => "avg_energy",
            MeasureId::Conf => "conf",
            MeasureId::Entropy => "entropy",
            MeasureId::Atc => "atc",
            MeasureId::Nuclear => "nuclear",
            MeasureId::Frechet => "frechet",
            MeasureId::Cot => "cot",
            MeasureId::Agree => "agree",
            MeasureId::ProjNorm => "projnorm",
        }
    }
}

impl std::str::FromStr for MeasureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MeasureId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig {
                pointer: "/measure".into(),
                detail: format!("unknown measure id '{s}'"),
            })
    }
}

impl std::fmt::Display for MeasureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Full experiment description; a pure function of this config plus its
/// seeds determines every artifact bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mixture: MixtureSpec,
    pub train_config: TrainConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub seen_shifts: Vec<ShiftSpec>,
    pub unseen_shifts: Vec<ShiftSpec>,
    pub measures: Vec<MeasureId>,
    pub temperature: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.mixture.validate()?;
        if self.n_train == 0 {
            return Err(Error::InvalidConfig {
                pointer: "/n_train".into(),
                detail: "must be >= 1".into(),
            });
        }
        if self.n_test == 0 {
            return Err(Error::InvalidConfig {
                pointer: "/n_test".into(),
                detail: "must be >= 1".into(),
            });
        }
        if self.seen_shifts.len() < 2 {
            return Err(Error::InvalidConfig {
                pointer: "/seen_shifts".into(),
                detail: "need at least 2 seen shift specs".into(),
            });
        }
        for (i, s) in self.seen_shifts.iter().enumerate() {
            s.validate().map_err(|_| Error::InvalidConfig {
                pointer: format!("/seen_shifts/{i}/severity"),
                detail: format!("severity must be in 1..=5, got {}", s.severity),
            })?;
        }
        for (i, s) in self.unseen_shifts.iter().enumerate() {
            s.validate().map_err(|_| Error::InvalidConfig {
                pointer: format!("/unseen_shifts/{i}/severity"),
                detail: format!("severity must be in 1..=5, got {}", s.severity),
            })?;
        }
        for (i, s) in self.seen_shifts.iter().enumerate() {
            if self.unseen_shifts.iter().any(|u| u.family == s.family) {
                return Err(Error::InvalidConfig {
                    pointer: format!("/seen_shifts/{i}/family"),
                    detail: format!(
                        "family {} appears in both seen and unseen shifts",
                        s.family.name()
                    ),
                });
            }
        }
        if self.measures.is_empty() {
            return Err(Error::InvalidConfig {
                pointer: "/measures".into(),
                detail: "need at least one measure".into(),
            });
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConfig {
                pointer: "/temperature".into(),
                detail: format!("temperature must be positive, got {}", self.temperature),
            });
        }
        Ok(())
    }
}

/// One held-out dataset's prediction under one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dataset_id: String,
    pub value: f64,
    pub accuracy: f64,
    pub predicted_raw: f64,
    /// Raw prediction clamped to [0, 1]; MAE uses this.
    pub predicted: f64,
}

/// Fit, correlations, and held-out predictions for one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureOutcome {
    pub measure: MeasureId,
    pub model: RegressionModel,
    pub seen: CorrelationReport,
    pub predictions: Vec<PredictionRecord>,
    /// Mean absolute error on the held-out sets, percentage points.
    pub mae: f64,
}

/// Manifest entry for one generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub dataset_id: String,
    pub family: String,
    pub severity: u8,
    pub seed: u64,
    pub accuracy: f64,
    pub role: String,
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub datasets: Vec<DatasetRecord>,
    pub seen_reports: Vec<MeasureReport>,
    pub outcomes: Vec<MeasureOutcome>,
}

impl ExperimentResult {
    pub fn outcome(&self, measure: MeasureId) -> Option<&MeasureOutcome> {
        self.outcomes.iter().find(|o| o.measure == measure)
    }

    /// CSV of `dataset_id,measure,value,accuracy,predicted`.
    pub fn to_csv(&self) -> String {
        use crate::data_model::format_f64 as f;
        let mut out = String::from("dataset_id,measure,value,accuracy,predicted\n");
        for o in &self.outcomes {
            for r in self
                .seen_reports
                .iter()
                .filter(|r| r.measure_name == o.measure.name())
            {
                let predicted = o.model.predict_clamped(r.value);
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.dataset_id,
                    o.measure.name(),
                    f(r.value),
                    f(r.accuracy.unwrap_or(f64::NAN)),
                    f(predicted)
                ));
            }
            for p in &o.predictions {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    p.dataset_id,
                    o.measure.name(),
                    f(p.value),
                    f(p.accuracy),
                    f(p.predicted)
                ));
            }
        }
        out
    }
}

/// Shared context for measure evaluation on one classifier.
struct MeasureContext {
    clf: SoftmaxClassifier,
    partner: Option<SoftmaxClassifier>,
    atc_threshold: Option<AtcThreshold>,
    source_stats: Option<FrechetStats>,
    source_marginal: Vec<f64>,
    temperature: Temperature,
    train_config: TrainConfig,
}

impl MeasureContext {
    fn compute(&self, id: MeasureId, store: &LogitStore, features: &Dataset) -> Result<f64> {
        let t = self.temperature;
        let v = match id {
            MeasureId::Mde => mde(store, t),
            MeasureId::AvgEnergy => avg_energy(store, t),
            MeasureId::Conf => conf_score(store),
            MeasureId::Entropy => entropy_score(store),
            MeasureId::Atc => atc_score(
                store,
                self.atc_threshold.expect("atc threshold calibrated in fit phase"),
            ),
            MeasureId::Nuclear => nuclear_norm_score(store)?,
            MeasureId::Frechet => {
                let stats = frechet_stats(store)?;
                frechet_distance(self.source_stats.as_ref().unwrap(), &stats)?
            }
            MeasureId::Cot => cot_score(store, &self.source_marginal)?.value,
            MeasureId::Agree => {
                let partner = self.partner.as_ref().unwrap();
                let other = logits_of(partner, features, store.dataset_id())?;
                agree_score(store, &other)?
            }
            MeasureId::ProjNorm => proj_norm(&self.clf, features, &self.train_config)?,
        };
        Ok(v)
    }
}

struct FittedPipeline {
    ctx: MeasureContext,
    base_test: Dataset,
    datasets: Vec<DatasetRecord>,
    seen_reports: Vec<MeasureReport>,
    /// Per measure: fitted model plus seen values/accuracies.
    fits: Vec<(MeasureId, RegressionModel, CorrelationReport)>,
}

fn fit_phase(cfg: &ExperimentConfig, sink: Option<&Path>) -> Result<FittedPipeline> {
    cfg.validate()?;
    let temperature = Temperature::new(cfg.temperature)?;

    let train_data = generate(&cfg.mixture, cfg.n_train)?;
    let clf = train(&train_data, &cfg.train_config)?.classifier;
    let source_store = logits_of(&clf, &train_data, "source")?;

    let partner = if cfg.measures.contains(&MeasureId::Agree) {
        let alt_seed = CounterRng::substream(cfg.seed, 0xA9).next_u64();
        Some(agree_partner(&train_data, &cfg.train_config, alt_seed)?)
    } else {
        None
    };
    let atc_threshold = if cfg.measures.contains(&MeasureId::Atc) {
        Some(atc_calibrate(&source_store)?)
    } else {
        None
    };
    let source_stats = if cfg.measures.contains(&MeasureId::Frechet) {
        Some(frechet_stats(&source_store)?)
    } else {
        None
    };
    let k = cfg.mixture.n_classes;
    let mut source_marginal = vec![0.0; k];
    for &y in &train_data.labels {
        source_marginal[y as usize] += 1.0 / cfg.n_train as f64;
    }

    let ctx = MeasureContext {
        clf,
        partner,
        atc_threshold,
        source_stats,
        source_marginal,
        temperature,
        train_config: cfg.train_config.clone(),
    };

    let test_seed = CounterRng::substream(cfg.seed, 0x7E57).next_u64();
    let base_test = generate(
        &MixtureSpec {
            seed: test_seed,
            ..cfg.mixture.clone()
        },
        cfg.n_test,
    )?;

    if let Some(dir) = sink {
        save_store(
            &source_store,
            &dir.join("source.aev"),
            StoreFormat::Binary,
        )?;
    }

    let mut datasets = Vec::new();
    let mut seen_reports = Vec::new();
    let mut per_measure: Vec<(MeasureId, Vec<f64>, Vec<f64>)> = cfg
        .measures
        .iter()
        .map(|&m| (m, Vec::new(), Vec::new()))
        .collect();

    for spec in &cfg.seen_shifts {
        let id = spec.dataset_id();
        let shifted = apply_shift(&base_test, spec).map_err(|e| e.for_dataset(&id))?;
        let store = logits_of(&ctx.clf, &shifted, &id).map_err(|e| e.for_dataset(&id))?;
        let acc = store.true_accuracy().map_err(|e| e.for_dataset(&id))?;
        if let Some(dir) = sink {
            save_store(&store, &dir.join(format!("{id}.aev")), StoreFormat::Binary)?;
        }
        datasets.push(DatasetRecord {
            dataset_id: id.clone(),
            family: spec.family.name().to_string(),
            severity: spec.severity,
            seed: spec.seed,
            accuracy: acc,
            role: "seen".into(),
        });
        for (m, values, accs) in per_measure.iter_mut() {
            let v = ctx
                .compute(*m, &store, &shifted)
                .map_err(|e| e.for_dataset(&id))?;
            values.push(v);
            accs.push(acc);
            let mut report = MeasureReport::new(&id, m, v);
            report.accuracy = Some(acc);
            report
                .params
                .insert("temperature".into(), temperature.value());
            seen_reports.push(report);
        }
    }

    let mut fits = Vec::new();
    for (m, values, accs) in &per_measure {
        let pairs: Vec<(f64, f64)> = values.iter().cloned().zip(accs.iter().cloned()).collect();
        let model = fit_linear(&pairs)?;
        // correlations are reported for the regression estimates, so an
        // inversely oriented measure (larger value, lower accuracy) still
        // scores positively once the fitted slope absorbs the sign
        let fitted: Vec<f64> = values.iter().map(|&v| model.predict_raw(v)).collect();
        let seen = CorrelationReport {
            pearson_r: pearson(&fitted, accs)?,
            spearman_rho: spearman(&fitted, accs)?,
            r_squared: r_squared(&fitted, accs)?,
            mae: None,
        };
        fits.push((*m, model, seen));
    }

    Ok(FittedPipeline {
        ctx,
        base_test,
        datasets,
        seen_reports,
        fits,
    })
}

fn evaluate_sets(
    fitted: &mut FittedPipeline,
    sets: &[(String, ShiftSpec, Dataset)],
    sink: Option<&Path>,
) -> Result<Vec<MeasureOutcome>> {
    let mut outcomes: Vec<MeasureOutcome> = fitted
        .fits
        .iter()
        .map(|(m, model, seen)| MeasureOutcome {
            measure: *m,
            model: model.clone(),
            seen: seen.clone(),
            predictions: Vec::new(),
            mae: 0.0,
        })
        .collect();

    for (id, spec, data) in sets {
        let store = logits_of(&fitted.ctx.clf, data, id).map_err(|e| e.for_dataset(id))?;
        let acc = store.true_accuracy().map_err(|e| e.for_dataset(id))?;
        if let Some(dir) = sink {
            save_store(&store, &dir.join(format!("{id}.aev")), StoreFormat::Binary)?;
        }
        fitted.datasets.push(DatasetRecord {
            dataset_id: id.clone(),
            family: spec.family.name().to_string(),
            severity: spec.severity,
            seed: spec.seed,
            accuracy: acc,
            role: "unseen".into(),
        });
        for outcome in outcomes.iter_mut() {
            let v = fitted
                .ctx
                .compute(outcome.measure, &store, data)
                .map_err(|e| e.for_dataset(id))?;
            let raw = outcome.model.predict_raw(v);
            outcome.predictions.push(PredictionRecord {
                dataset_id: id.clone(),
                value: v,
                accuracy: acc,
                predicted_raw: raw,
                predicted: raw.clamp(0.0, 1.0),
            });
        }
    }

    for outcome in outcomes.iter_mut() {
        let pred: Vec<f64> = outcome.predictions.iter().map(|p| p.predicted).collect();
        let truth: Vec<f64> = outcome.predictions.iter().map(|p| p.accuracy).collect();
        outcome.mae = mae(&pred, &truth)?;
    }
    Ok(outcomes)
}

/// Runs the full AutoEval sweep: fit on seen shifts, predict unseen.
pub fn run_autoeval(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_autoeval_to(cfg, None)
}

/// Like [`run_autoeval`], additionally writing every generated logit
/// store as an `.aev` file into `dir`.
pub fn run_autoeval_to(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<ExperimentResult> {
    let mut fitted = fit_phase(cfg, dir)?;
    let sets: Vec<(String, ShiftSpec, Dataset)> = cfg
        .unseen_shifts
        .iter()
        .map(|spec| {
            let id = spec.dataset_id();
            apply_shift(&fitted.base_test, spec).map(|d| (id, *spec, d))
        })
        .collect::<Result<_>>()?;
    let outcomes = evaluate_sets(&mut fitted, &sets, dir)?;
    Ok(ExperimentResult {
        datasets: fitted.datasets,
        seen_reports: fitted.seen_reports,
        outcomes,
    })
}

/// Stress protocol: held-out sets are re-corrupted with their own family
/// at severities 1..=5 before evaluation, so predictions face shifts
/// stronger than anything the fit saw.
pub fn stress_noise(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    if cfg.unseen_shifts.is_empty() {
        return Err(Error::InvalidConfig {
            pointer: "/unseen_shifts".into(),
            detail: "stress_noise needs at least one unseen shift".into(),
        });
    }
    let mut fitted = fit_phase(cfg, None)?;
    let mut sets = Vec::new();
    for spec in &cfg.unseen_shifts {
        let shifted = apply_shift(&fitted.base_test, spec)?;
        for severity in 1..=5u8 {
            let re_spec = ShiftSpec {
                family: spec.family,
                severity,
                seed: CounterRng::substream(spec.seed, 0x57 + severity as u64).next_u64(),
            };
            let recorrupted = apply_shift(&shifted, &re_spec)?;
            let id = format!("{}+re_s{}", spec.dataset_id(), severity);
            sets.push((id, *spec, recorrupted));
        }
    }
    let outcomes = evaluate_sets(&mut fitted, &sets, None)?;
    Ok(ExperimentResult {
        datasets: fitted.datasets,
        seen_reports: fitted.seen_reports,
        outcomes,
    })
}

/// Stress protocol: exponential-decay class imbalance applied to every
/// held-out set, one result per requested ratio.
pub fn stress_imbalance(
    cfg: &ExperimentConfig,
    ratios: &[f64],
) -> Result<Vec<(f64, ExperimentResult)>> {
    if cfg.unseen_shifts.is_empty() {
        return Err(Error::InvalidConfig {
            pointer: "/unseen_shifts".into(),
            detail: "stress_imbalance needs at least one unseen shift".into(),
        });
    }
    let mut results = Vec::new();
    for &r in ratios {
        let mut fitted = fit_phase(cfg, None)?;
        let mut sets = Vec::new();
        for spec in &cfg.unseen_shifts {
            let shifted = apply_shift(&fitted.base_test, spec)?;
            let sub = imbalance_sample(&shifted, r, spec.seed)?;
            let id = format!("{}+r{}", spec.dataset_id(), r);
            sets.push((id, *spec, sub));
        }
        let outcomes = evaluate_sets(&mut fitted, &sets, None)?;
        results.push((
            r,
            ExperimentResult {
                datasets: fitted.datasets,
                seen_reports: fitted.seen_reports,
                outcomes,
            },
        ));
    }
    Ok(results)
}
