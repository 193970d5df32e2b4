//! Training runs and the three-variant ablation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sccnn::data::{stratified_sample, Dataset, Split};
use sccnn::nn::layers::cross_entropy;
use sccnn::nn::model::argmax_rows;
use sccnn::nn::{Adam, Batch, Model, ModelParams, Variant};
use sccnn::{grid_complex, image_features, GridGeometry, Matrix, SimplicialComplex2};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

const EVAL_BATCH: usize = 100;

/// Independent random streams derived from one run seed.
#[derive(Clone, Copy, Debug)]
enum Stream {
    TrainSample = 0,
    TestSample = 1,
    Init = 2,
    Shuffle = 3,
}

fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

pub struct MnistData {
    pub train: Dataset,
    pub test: Dataset,
}

impl MnistData {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let hint = "run `sccnn fetch-data` or point the config at local IDX files";
        let train = Dataset::load(&config.train_images, &config.train_labels, Split::Train)
            .with_context(|| format!("loading {} ({hint})", config.train_images.display()))?;
        let test = Dataset::load(&config.test_images, &config.test_labels, Split::Test)
            .with_context(|| format!("loading {} ({hint})", config.test_images.display()))?;
        Ok(Self { train, test })
    }
}

/// One training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub seed: u64,
    /// Test accuracy in percent.
    pub accuracy: f64,
    pub test_loss: f64,
    pub epochs: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Mean training loss over the batches of each epoch.
    pub loss_trace: Vec<f64>,
    pub wall_clock_s: f64,
}

/// The grid complex for the configured kernel and stride on 28×28 images.
pub fn mnist_grid(config: &ExperimentConfig) -> Result<(SimplicialComplex2, GridGeometry)> {
    Ok(grid_complex(28, 28, config.kernel, config.stride)?)
}

fn encode(
    data: &Dataset,
    indices: &[usize],
    geom: &GridGeometry,
    complex: &SimplicialComplex2,
) -> Result<(Vec<Matrix>, Vec<usize>)> {
    let mut feats = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        feats.push(image_features(&data.images[i], geom, complex)?.x0().clone());
        labels.push(data.labels[i] as usize);
    }
    Ok((feats, labels))
}

fn make_batch(feats: &[Matrix], labels: &[usize], idx: &[usize]) -> Result<Batch> {
    let rows: Vec<&Matrix> = idx.iter().map(|&i| &feats[i]).collect();
    Ok(Batch::new(&rows, idx.iter().map(|&i| labels[i]).collect())?)
}

/// Accuracy in percent and mean cross-entropy on the given samples.
pub fn evaluate(model: &Model, params: &ModelParams, feats: &[Matrix], labels: &[usize]) -> Result<(f64, f64)> {
    if feats.is_empty() {
        bail!("empty evaluation set");
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    let order: Vec<usize> = (0..feats.len()).collect();
    for chunk in order.chunks(EVAL_BATCH) {
        let batch = make_batch(feats, labels, chunk)?;
        let logits = model.predict(params, &batch)?;
        for (row, (&pred, &label)) in argmax_rows(&logits).iter().zip(&batch.labels).enumerate() {
            correct += usize::from(pred == label);
            loss += cross_entropy(logits.row(row), label);
        }
    }
    let n = feats.len() as f64;
    Ok((100.0 * correct as f64 / n, loss / n))
}

/// Trains `variant` for one seed and evaluates it on the sampled test set.
///
/// The seed fixes the train and test samples, the initialization and the
/// batch order, so every variant sees the same images for a given seed.
/// `on_epoch` receives the epoch index and its mean training loss.
pub fn train_model(
    config: &ExperimentConfig,
    variant: Variant,
    seed: u64,
    data: &MnistData,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Model, ModelParams, RunReport)> {
    config.validate()?;
    let start = Instant::now();
    let (complex, geom) = mnist_grid(config)?;

    let train_idx = stratified_sample(
        &data.train.labels,
        config.train_per_class,
        stream_rng(seed, Stream::TrainSample).next_u64(),
    )?;
    let test_idx = stratified_sample(
        &data.test.labels,
        config.test_per_class,
        stream_rng(seed, Stream::TestSample).next_u64(),
    )?;
    let (train_x, train_y) = encode(&data.train, &train_idx, &geom, &complex)?;
    let (test_x, test_y) = encode(&data.test, &test_idx, &geom, &complex)?;

    let mut init = stream_rng(seed, Stream::Init);
    let (model, mut params) = Model::new(variant, config.model_config(), &complex, &mut init)?;
    let adam = Adam::new(config.lr);
    let mut rng = stream_rng(seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = make_batch(&train_x, &train_y, chunk)?;
            let loss = model.train_step(&mut params, &batch, &adam, &mut rng)?;
            if !loss.is_finite() {
                bail!("non-finite training loss {loss} at epoch {epoch} ({variant}, seed {seed})");
            }
            total += loss;
            batches += 1;
        }
        let mean = if batches > 0 { total / batches as f64 } else { 0.0 };
        loss_trace.push(mean);
        on_epoch(epoch, mean);
    }

    let (accuracy, test_loss) = evaluate(&model, &params, &test_x, &test_y)?;
    let report = RunReport {
        variant,
        seed,
        accuracy,
        test_loss,
        epochs: config.epochs,
        train_samples: train_x.len(),
        test_samples: test_x.len(),
        loss_trace,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok((model, params, report))
}

/// Per-variant statistics over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub config: ExperimentConfig,
    pub variants: Vec<VariantSummary>,
    pub runs: Vec<RunReport>,
}

impl AblationSummary {
    pub fn variant(&self, variant: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant == variant)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (denominator `n − 1`); 0 when `n < 2`.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Groups runs by variant, in the order of `variants`, each sorted by seed.
pub fn summarize(variants: &[Variant], runs: &[RunReport]) -> Vec<VariantSummary> {
    variants
        .iter()
        .map(|&variant| {
            let mut mine: Vec<&RunReport> = runs.iter().filter(|r| r.variant == variant).collect();
            mine.sort_by_key(|r| r.seed);
            let accuracies: Vec<f64> = mine.iter().map(|r| r.accuracy).collect();
            VariantSummary {
                variant,
                runs: accuracies.len(),
                mean: mean(&accuracies),
                std: sample_std(&accuracies),
                accuracies,
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct RunRecord {
    config: ExperimentConfig,
    report: RunReport,
}

fn run_file(output: &Path, variant: Variant, seed: u64) -> PathBuf {
    output.join("runs").join(format!("{variant}-seed{seed}.json"))
}

pub fn checkpoint_file(output: &Path, variant: Variant, seed: u64) -> PathBuf {
    output.join("checkpoints").join(format!("{variant}-seed{seed}.json"))
}

/// Writes `runs.csv` with columns `variant, seed, accuracy, epochs, wall_clock_s`.
pub fn write_runs_csv(path: &Path, runs: &[RunReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["variant", "seed", "accuracy", "epochs", "wall_clock_s"])?;
    for r in runs {
        w.write_record([
            r.variant.to_string(),
            r.seed.to_string(),
            format!("{:.2}", r.accuracy),
            r.epochs.to_string(),
            format!("{:.3}", r.wall_clock_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_outputs(config: &ExperimentConfig, runs: &[RunReport]) -> Result<AblationSummary> {
    let mut ordered = runs.to_vec();
    ordered.sort_by_key(|r| {
        let v = config
            .variants
            .iter()
            .position(|&v| v == r.variant)
            .unwrap_or(usize::MAX);
        (v, r.seed)
    });
    let summary = AblationSummary {
        config: config.clone(),
        variants: summarize(&config.variants, &ordered),
        runs: ordered,
    };
    write_runs_csv(&config.output.join("runs.csv"), &summary.runs)?;
    fs::write(
        config.output.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

/// Trains every configured variant for every seed.
///
/// Each finished run is written to `runs/`, its parameters to
/// `checkpoints/`, and `runs.csv` plus `summary.json` are refreshed after
/// every run, so an interrupted ablation keeps what it finished. With
/// `resume`, runs already on disk under the same protocol are reused.
/// A failing run does not stop the others; the error is returned at the end.
pub fn run_ablation(
    config: &ExperimentConfig,
    data: &MnistData,
    resume: bool,
    mut on_run: impl FnMut(&RunReport, bool),
) -> Result<AblationSummary> {
    config.validate()?;
    fs::create_dir_all(config.output.join("runs"))?;
    fs::create_dir_all(config.output.join("checkpoints"))?;
    if config.seeds.len() == 1 {
        eprintln!("warning: a single seed gives a standard deviation of 0");
    }

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &variant in &config.variants {
        for &seed in &config.seeds {
            let path = run_file(&config.output, variant, seed);
            if resume {
                if let Some(report) = load_run(&path, config) {
                    on_run(&report, true);
                    runs.push(report);
                    write_outputs(config, &runs)?;
                    continue;
                }
            }
            match train_model(config, variant, seed, data, |_, _| {}) {
                Ok((model, params, report)) => {
                    let meta = serde_json::json!({
                        "variant": variant,
                        "seed": seed,
                        "model": model.config(),
                        "accuracy": report.accuracy,
                    });
                    params.save_checkpoint(&checkpoint_file(&config.output, variant, seed), meta)?;
                    let record = RunRecord {
                        config: config.clone(),
                        report: report.clone(),
                    };
                    fs::write(&path, serde_json::to_string_pretty(&record)?)?;
                    on_run(&report, false);
                    runs.push(report);
                    write_outputs(config, &runs)?;
                }
                Err(e) => {
                    eprintln!("run {variant} seed {seed} failed: {e:#}");
                    failures.push(format!("{variant} seed {seed}: {e:#}"));
                }
            }
        }
    }
    let summary = write_outputs(config, &runs)?;
    if !failures.is_empty() {
        bail!("{} run(s) failed: {}", failures.len(), failures.join("; "));
    }
    Ok(summary)
}

fn load_run(path: &Path, config: &ExperimentConfig) -> Option<RunReport> {
    let text = fs::read_to_string(path).ok()?;
    let record: RunRecord = serde_json::from_str(&text).ok()?;
    record.config.same_protocol(config).then_some(record.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_matches_hand_values() {
        assert_eq!(sample_std(&[87.0]), 0.0);
        assert_eq!(sample_std(&[]), 0.0);
        let s = sample_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
    }

    #[test]
    fn streams_are_distinct() {
        let a = stream_rng(1, Stream::TrainSample).next_u64();
        let b = stream_rng(1, Stream::TestSample).next_u64();
        let c = stream_rng(2, Stream::TrainSample).next_u64();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, stream_rng(1, Stream::TrainSample).next_u64());
    }

    #[test]
    fn summary_orders_by_variant_then_seed() {
        let run = |variant, seed, accuracy| RunReport {
            variant,
            seed,
            accuracy,
            test_loss: 0.0,
            epochs: 1,
            train_samples: 10,
            test_samples: 10,
            loss_trace: vec![],
            wall_clock_s: 0.0,
        };
        let runs = [
            run(Variant::ScconvConv1dFc, 2, 90.0),
            run(Variant::Conv1dFc, 1, 80.0),
            run(Variant::ScconvConv1dFc, 1, 92.0),
        ];
        let s = summarize(&Variant::ALL, &runs);
        assert_eq!(s[0].accuracies, vec![80.0]);
        assert_eq!(s[1].runs, 0);
        assert!(s[1].mean.is_nan());
        assert_eq!(s[2].accuracies, vec![92.0, 90.0]);
        assert_eq!(s[2].mean, 91.0);
    }
}
