//! Command-line surface: compute measures on logit files, fit and apply
//! the accuracy regression, run the synthetic laboratory, and emit
//! CSV/JSON/SVG reports.
//!
//! Exit codes: 0 success, 2 input/validation error, 3 missing auxiliary
//! input, 4 internal numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use autoeval::data_model::{load_store, LogitStore, StoreFormat};
use autoeval::measures::{
    agree_score, atc_calibrate, atc_score, avg_energy, conf_score, cot_score, entropy_score,
    frechet_distance, frechet_stats, mde, nuclear_norm_score, Temperature,
};
use autoeval::pipeline::{
    run_autoeval_to, stress_imbalance, stress_noise, ExperimentConfig, ExperimentResult, MeasureId,
};
use autoeval::stats::{fit_linear, mae, pearson, r_squared, spearman, RegressionModel};
use autoeval::svg::render_scatter;
use autoeval::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_MISSING_INPUT: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "autoeval", about = "Unsupervised accuracy estimation from classifier logits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a measure on one or more logit stores
    Measure {
        /// Input logit stores (.aev binary, or .csv)
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Measure id: mde, avg_energy, conf, entropy, atc, nuclear,
        /// frechet, cot, agree, projnorm
        #[arg(long)]
        measure: String,
        /// Temperature of the energy function
        #[arg(long, default_value_t = 1.0)]
        temp: f64,
        /// Auxiliary labeled source store (atc, frechet, cot, agree)
        #[arg(long)]
        source: Option<PathBuf>,
        /// Optional CSV output path
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the accuracy-on-measure linear model from a pairs CSV
    Fit {
        /// CSV with measure,accuracy pairs (header optional)
        #[arg(long = "in")]
        input: PathBuf,
        /// Output path for the model JSON
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict accuracy for logit stores using a fitted model
    Predict {
        /// Model JSON produced by `fit`
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        measure: String,
        #[arg(long, default_value_t = 1.0)]
        temp: f64,
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlation metrics for a measure,accuracy pairs CSV
    Correlate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output format: csv or json
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Run the synthetic-laboratory AutoEval sweep from a config JSON
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a stress protocol (noise re-corruption or class imbalance)
    Stress {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// noise or imbalance
        #[arg(long, default_value = "noise")]
        mode: String,
        /// Imbalance ratios (imbalance mode)
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.2, 0.4, 0.6, 0.8, 1.0])]
        ratios: Vec<f64>,
    },
    /// Render SVG scatter plots from a result JSON
    Report {
        /// ExperimentResult JSON from `synth`/`stress`
        #[arg(long = "in")]
        input: PathBuf,
        /// SVG output path; multiple measures get a _<measure> suffix
        #[arg(long)]
        out: PathBuf,
    },
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    fn missing(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_MISSING_INPUT,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        fn code(e: &Error) -> u8 {
            match e {
                Error::EigenNonConvergence { .. } | Error::TrainingDiverged { .. } => EXIT_NUMERIC,
                Error::WithDataset { source, .. } => code(source),
                _ => EXIT_VALIDATION,
            }
        }
        CliError {
            code: code(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::validation(format!("i/o error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn detect_format(path: &Path) -> StoreFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => StoreFormat::Csv,
        _ => StoreFormat::Binary,
    }
}

fn load(path: &Path) -> Result<LogitStore, CliError> {
    Ok(load_store(path, detect_format(path))?)
}

fn needs_source(measure: MeasureId) -> bool {
    matches!(
        measure,
        MeasureId::Atc | MeasureId::Frechet | MeasureId::Cot | MeasureId::Agree
    )
}

fn compute_measure(
    measure: MeasureId,
    store: &LogitStore,
    temp: Temperature,
    source: Option<&LogitStore>,
) -> Result<f64, CliError> {
    let value = match measure {
        MeasureId::Mde => mde(store, temp),
        MeasureId::AvgEnergy => avg_energy(store, temp),
        MeasureId::Conf => conf_score(store),
        MeasureId::Entropy => entropy_score(store),
        MeasureId::Nuclear => nuclear_norm_score(store)?,
        MeasureId::Atc => {
            let th = atc_calibrate(source.unwrap())?;
            atc_score(store, th)
        }
        MeasureId::Frechet => {
            let a = frechet_stats(source.unwrap())?;
            let b = frechet_stats(store)?;
            frechet_distance(&a, &b)?
        }
        MeasureId::Cot => {
            let src = source.unwrap();
            let labels = src.labels().ok_or_else(|| {
                CliError::missing("cot requires a labeled --source store for the class marginal")
            })?;
            let mut marginal = vec![0.0; src.n_classes()];
            for &y in labels {
                marginal[y as usize] += 1.0 / labels.len() as f64;
            }
            cot_score(store, &marginal)?.value
        }
        MeasureId::Agree => agree_score(store, source.unwrap())?,
        MeasureId::ProjNorm => {
            return Err(CliError::validation(
                "projnorm needs model parameters and raw features; run it through `synth`",
            ))
        }
    };
    Ok(value)
}

fn parse_measure(s: &str) -> Result<MeasureId, CliError> {
    s.parse::<MeasureId>().map_err(CliError::from)
}

fn measure_lines(
    inputs: &[PathBuf],
    measure: MeasureId,
    temp: f64,
    source: &Option<PathBuf>,
) -> Result<Vec<(String, f64, Option<f64>)>, CliError> {
    let temp = Temperature::new(temp)?;
    let source_store = match source {
        Some(p) => Some(load(p)?),
        None => {
            if needs_source(measure) {
                return Err(CliError::missing(format!(
                    "measure '{measure}' requires --source"
                )));
            }
            None
        }
    };
    let mut lines = Vec::new();
    for path in inputs {
        let store = load(path)?;
        let value = compute_measure(measure, &store, temp, source_store.as_ref())?;
        let accuracy = store.labels().map(|_| store.true_accuracy()).transpose()?;
        lines.push((store.dataset_id().to_string(), value, accuracy));
    }
    Ok(lines)
}

fn fmt_value(v: f64) -> String {
    autoeval::data_model::format_f64(v)
}

fn read_pairs_csv(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("measure")) {
            continue;
        }
        let mut parts = line.split(',');
        let (a, b) = (parts.next(), parts.next());
        match (a, b) {
            (Some(a), Some(b)) => {
                let x: f64 = a.trim().parse().map_err(|_| {
                    CliError::validation(format!("row {i}: unparseable measure '{a}'"))
                })?;
                let y: f64 = b.trim().parse().map_err(|_| {
                    CliError::validation(format!("row {i}: unparseable accuracy '{b}'"))
                })?;
                pairs.push((x, y));
            }
            _ => return Err(CliError::validation(format!("row {i}: expected two fields"))),
        }
    }
    Ok(pairs)
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("config parse error: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_result(result: &ExperimentResult, dir: &Path, stem: &str) -> Result<(), CliError> {
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(result).map_err(Error::from)?,
    )?;
    fs::write(dir.join(format!("{stem}.csv")), result.to_csv())?;
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Measure {
            inputs,
            measure,
            temp,
            source,
            out,
        } => {
            let measure = parse_measure(&measure)?;
            let lines = measure_lines(&inputs, measure, temp, &source)?;
            let mut csv = String::from("dataset_id,measure,value,accuracy\n");
            for (id, value, accuracy) in &lines {
                match accuracy {
                    Some(acc) => {
                        println!("{id},{measure},{},{}", fmt_value(*value), fmt_value(*acc));
                        csv.push_str(&format!(
                            "{id},{measure},{},{}\n",
                            fmt_value(*value),
                            fmt_value(*acc)
                        ));
                    }
                    None => {
                        println!("{id},{measure},{}", fmt_value(*value));
                        csv.push_str(&format!("{id},{measure},{},\n", fmt_value(*value)));
                    }
                }
            }
            if let Some(out) = out {
                fs::write(out, csv)?;
            }
            Ok(())
        }
        Command::Fit { input, out } => {
            let pairs = read_pairs_csv(&input)?;
            let model = fit_linear(&pairs)?;
            fs::write(out, serde_json::to_string(&model).map_err(Error::from)?)?;
            println!(
                "w={},b={},n={},r2={}",
                fmt_value(model.slope),
                fmt_value(model.intercept),
                model.n_fit_points,
                fmt_value(model.r_squared_fit)
            );
            Ok(())
        }
        Command::Predict {
            model,
            inputs,
            measure,
            temp,
            source,
            out,
        } => {
            let measure = parse_measure(&measure)?;
            let model: RegressionModel = serde_json::from_str(&fs::read_to_string(&model)?)
                .map_err(|e| CliError::validation(format!("model parse error: {e}")))?;
            let lines = measure_lines(&inputs, measure, temp, &source)?;
            let mut csv = String::from("dataset_id,measure,predicted_accuracy\n");
            for (id, value, _) in &lines {
                let predicted = model.predict_clamped(*value);
                println!("{id},{measure},{}", fmt_value(predicted));
                csv.push_str(&format!("{id},{measure},{}\n", fmt_value(predicted)));
            }
            if let Some(out) = out {
                fs::write(out, csv)?;
            }
            Ok(())
        }
        Command::Correlate { input, format } => {
            let pairs = read_pairs_csv(&input)?;
            let model = fit_linear(&pairs)?;
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let fitted: Vec<f64> = xs.iter().map(|&x| model.predict_raw(x)).collect();
            let clamped: Vec<f64> = xs.iter().map(|&x| model.predict_clamped(x)).collect();
            let r = pearson(&xs, &ys)?;
            let rho = spearman(&xs, &ys)?;
            let r2 = r_squared(&fitted, &ys)?;
            let eps = mae(&clamped, &ys)?;
            match format.as_str() {
                "json" => println!(
                    "{}",
                    serde_json::json!({
                        "pearson_r": r,
                        "spearman_rho": rho,
                        "r_squared": r2,
                        "mae": eps,
                    })
                ),
                "csv" => {
                    println!("pearson_r,spearman_rho,r_squared,mae");
                    println!(
                        "{},{},{},{}",
                        fmt_value(r),
                        fmt_value(rho),
                        fmt_value(r2),
                        fmt_value(eps)
                    );
                }
                other => {
                    return Err(CliError::validation(format!(
                        "unknown format '{other}', expected csv or json"
                    )))
                }
            }
            Ok(())
        }
        Command::Synth { config, out } => {
            let cfg = load_config(&config)?;
            fs::create_dir_all(&out)?;
            let result = run_autoeval_to(&cfg, Some(&out))?;
            write_result(&result, &out, "report")?;
            fs::write(
                out.join("manifest.json"),
                serde_json::to_string_pretty(&result.datasets).map_err(Error::from)?,
            )?;
            for o in &result.outcomes {
                println!(
                    "{}: r2={} pearson={} spearman={} mae={}",
                    o.measure,
                    fmt_value(o.seen.r_squared),
                    fmt_value(o.seen.pearson_r),
                    fmt_value(o.seen.spearman_rho),
                    fmt_value(o.mae)
                );
            }
            Ok(())
        }
        Command::Stress {
            config,
            out,
            mode,
            ratios,
        } => {
            let cfg = load_config(&config)?;
            fs::create_dir_all(&out)?;
            match mode.as_str() {
                "noise" => {
                    let result = stress_noise(&cfg)?;
                    write_result(&result, &out, "stress_noise")?;
                    for o in &result.outcomes {
                        println!("{}: stress mae={}", o.measure, fmt_value(o.mae));
                    }
                }
                "imbalance" => {
                    let results = stress_imbalance(&cfg, &ratios)?;
                    for (r, result) in &results {
                        write_result(result, &out, &format!("stress_imbalance_r{r}"))?;
                        for o in &result.outcomes {
                            println!("{} r={r}: mae={}", o.measure, fmt_value(o.mae));
                        }
                    }
                }
                other => {
                    return Err(CliError::validation(format!(
                        "unknown stress mode '{other}', expected noise or imbalance"
                    )))
                }
            }
            Ok(())
        }
        Command::Report { input, out } => {
            let result: ExperimentResult =
                serde_json::from_str(&fs::read_to_string(&input)?)
                    .map_err(|e| CliError::validation(format!("result parse error: {e}")))?;
            if result.outcomes.is_empty() || result.seen_reports.is_empty() {
                return Err(CliError::validation("result contains no measure outcomes"));
            }
            for o in &result.outcomes {
                let points: Vec<(f64, f64)> = result
                    .seen_reports
                    .iter()
                    .filter(|r| r.measure_name == o.measure.name())
                    .map(|r| (r.value, r.accuracy.unwrap_or(f64::NAN)))
                    .collect();
                let svg = render_scatter(o.measure.name(), &points, &o.model, &o.seen);
                let path = if result.outcomes.len() == 1 {
                    out.clone()
                } else {
                    let stem = out
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "report".into());
                    out.with_file_name(format!("{stem}_{}.svg", o.measure))
                };
                fs::write(&path, svg)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}
