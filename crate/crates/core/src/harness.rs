//! Study orchestration: learning-rate selection, modeling-bias reports,
//! parameter sweeps over synthetic devices, and the experimental-data
//! pipeline.
//!
//! Sweeps persist one CSV row per axis value plus a JSON manifest with the
//! full accuracy traces. Rows carry the root seed, a hash of the sweep
//! configuration, and the crate version; every quantity in a row is a pure
//! function of (configuration, root seed), so re-running a row reproduces
//! it byte for byte. A sweep restarted over an existing output directory
//! appends only the rows not yet completed; rows that previously failed are
//! retried.

use crate::binning::{build_binning_model, default_candidate_grid, optimize_bins, BinningConfig};
use crate::dataio::sha256_hex;
use crate::device::{ConductanceBounds, DeviceDataset, JumpTablePair, Profile};
use crate::error::{Error, Result};
use crate::metrics::{compare_models, ks2d};
use crate::mnist::ReducedMnist;
use crate::nn::{train, ModelSource, ProvenanceTag, RunRecord, TrainConfig};
use crate::optimizer::{
    initialize_from_binning, optimize_profiles, synth_test_error, OptimizedModel, SearchBudget,
    FINAL_REPS,
};
use crate::rng::{self, derive_seed};
use crate::synth::{build_target_tables, generate_synthetic_data, TargetSpec};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// Log-spaced learning-rate candidates spanning three decades.
pub const DEFAULT_LR_GRID: [f64; 7] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0];

/// Epochs trained per grid-search candidate; the score is the mean test
/// accuracy over them.
pub const GRID_SEARCH_EPOCHS: usize = 10;

/// Shared evaluation axis size for model-vs-target metric comparisons.
pub const MODEL_EVAL_POINTS: usize = 101;

/// Outcome of a learning-rate search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrSelection {
    pub learning_rate: f64,
    /// Per-candidate mean test accuracy, in the caller's candidate order.
    pub scores: Vec<f64>,
}

/// Trains one run per candidate rate and picks the argmax of mean test
/// accuracy over the first [`GRID_SEARCH_EPOCHS`] epochs; ties go to the
/// smaller rate.
pub fn grid_search_lr(
    source: ModelSource,
    provenance: ProvenanceTag,
    candidates: &[f64],
    data: &ReducedMnist,
    base: &TrainConfig,
) -> Result<LrSelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidSpec("empty learning-rate grid".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for &lr in candidates {
        let cfg = TrainConfig {
            learning_rate: lr,
            epochs: GRID_SEARCH_EPOCHS,
            ..*base
        };
        let record = train(source, provenance, &cfg, data)?;
        scores.push(record.test_accuracy.iter().sum::<f64>() / record.test_accuracy.len() as f64);
    }
    let mut best = 0;
    for i in 1..candidates.len() {
        if scores[i] > scores[best]
            || (scores[i] == scores[best] && candidates[i] < candidates[best])
        {
            best = i;
        }
    }
    Ok(LrSelection {
        learning_rate: candidates[best],
        scores,
    })
}

/// Accuracy gap between a device-model network and the target-device
/// network, per training epoch.
#[derive(Debug, Clone, Serialize)]
pub struct BiasReport {
    /// Signed trace: mean model test accuracy minus mean target test
    /// accuracy at each epoch. Positive means the model curve sits above
    /// the target curve.
    pub mb: Vec<f64>,
    /// Average of |mb| over epochs.
    pub mean_abs_bias: f64,
    pub n_repeats: usize,
    pub model_runs: Vec<RunRecord>,
    pub target_runs: Vec<RunRecord>,
}

pub fn modeling_bias(model_runs: &[RunRecord], target_runs: &[RunRecord]) -> Result<BiasReport> {
    if model_runs.is_empty() || target_runs.is_empty() {
        return Err(Error::InvalidSpec(
            "bias needs at least one run on each side".into(),
        ));
    }
    let epochs = model_runs[0].test_accuracy.len();
    for r in model_runs.iter().chain(target_runs) {
        if r.test_accuracy.len() != epochs {
            return Err(Error::EpochMismatch {
                left: epochs,
                right: r.test_accuracy.len(),
            });
        }
    }
    let mean_at = |runs: &[RunRecord], i: usize| {
        runs.iter().map(|r| r.test_accuracy[i]).sum::<f64>() / runs.len() as f64
    };
    let mb: Vec<f64> = (0..epochs)
        .map(|i| mean_at(model_runs, i) - mean_at(target_runs, i))
        .collect();
    let mean_abs_bias = mb.iter().map(|v| v.abs()).sum::<f64>() / epochs as f64;
    Ok(BiasReport {
        mb,
        mean_abs_bias,
        n_repeats: model_runs.len(),
        model_runs: model_runs.to_vec(),
        target_runs: target_runs.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DatasetSize,
    C2cSigma,
    NonlinearityK,
    Voltage,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::DatasetSize => "dataset_size",
            SweepAxis::C2cSigma => "c2c_sigma",
            SweepAxis::NonlinearityK => "nonlinearity_k",
            SweepAxis::Voltage => "voltage",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Training repeats per row.
    pub repeats: usize,
    /// Training epochs per repeat.
    pub epochs: usize,
    pub base: TargetSpec,
    /// Synthetic samples per direction for axes other than dataset_size.
    pub dataset_size: usize,
    pub lr_candidates: Vec<f64>,
    /// Template for batch size and quantization; learning rate, epochs and
    /// seed are filled per row.
    pub train: TrainConfig,
}

impl SweepSpec {
    /// Reduced scale that keeps a full sweep in desk-session territory.
    pub fn desk_scale(axis: SweepAxis, values: Vec<f64>) -> Self {
        Self {
            axis,
            values,
            repeats: 5,
            epochs: 20,
            base: TargetSpec::default(),
            dataset_size: 10_000,
            lr_candidates: DEFAULT_LR_GRID.to_vec(),
            train: TrainConfig::default(),
        }
    }

    /// Full study scale: 20 repeats of 100 epochs.
    pub fn paper_scale(axis: SweepAxis, values: Vec<f64>) -> Self {
        Self {
            repeats: 20,
            epochs: 100,
            ..Self::desk_scale(axis, values)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidSpec("sweep needs at least one value".into()));
        }
        if self.repeats == 0 || self.epochs == 0 {
            return Err(Error::InvalidSpec(
                "repeats and epochs must be positive".into(),
            ));
        }
        if self.axis == SweepAxis::Voltage {
            return Err(Error::InvalidSpec(
                "the voltage axis runs on measured data; use the experimental pipeline".into(),
            ));
        }
        self.base.validate()
    }

    fn target_for(&self, value: f64) -> Result<TargetSpec> {
        let spec = match self.axis {
            SweepAxis::DatasetSize => self.base,
            SweepAxis::C2cSigma => TargetSpec {
                c2c: value / self.base.bounds.range(),
                ..self.base
            },
            SweepAxis::NonlinearityK => TargetSpec {
                nonlinearity_k: value,
                ..self.base
            },
            SweepAxis::Voltage => unreachable!("rejected by validate"),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn samples_for(&self, value: f64) -> Result<usize> {
        let n = match self.axis {
            SweepAxis::DatasetSize => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "dataset_size value {value} is not a positive integer"
                    )));
                }
                value as usize
            }
            _ => self.dataset_size,
        };
        Ok(n)
    }
}

/// One completed sweep row. Scalar fields mirror the CSV columns; the
/// accuracy traces live in the row's JSON manifest.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub row_index: usize,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub n_per_direction: usize,
    pub set_bins: (usize, usize),
    pub reset_bins: (usize, usize),
    pub low_confidence: bool,
    pub ovle_set: f64,
    pub ovle_reset: f64,
    pub ovle_avg: f64,
    pub ssd_set: f64,
    pub ssd_reset: f64,
    pub ssd_avg: f64,
    pub learning_rate: f64,
    pub target_final_mean: f64,
    pub target_final_std: f64,
    pub model_final_mean: f64,
    pub model_final_std: f64,
    pub mean_abs_bias: f64,
    pub bias: Option<BiasReport>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn config_hash(spec: &SweepSpec, root_seed: u64) -> String {
    let doc = serde_json::to_string(&(spec, root_seed)).expect("spec serializes");
    sha256_hex(doc.as_bytes())
}

/// Builds the binning device model for one synthetic dataset pair.
fn fit_binning_pair(
    d_set: &DeviceDataset,
    d_reset: &DeviceDataset,
    bounds: &ConductanceBounds,
    root_seed: u64,
    row: usize,
) -> Result<(JumpTablePair, (usize, usize), (usize, usize), bool)> {
    let grid = default_candidate_grid();
    let fit_one = |d: &DeviceDataset, dir: u64| -> Result<(Profile, BinningConfig, bool)> {
        let mut bin_rng = rng::stream(root_seed, "sweep-bins", &[row as u64, dir]);
        let cfg = optimize_bins(d, bounds, &grid, &mut bin_rng)?;
        let model = build_binning_model(d, &cfg, bounds)?;
        Ok((model.profile, cfg, model.low_confidence))
    };
    let (set_profile, set_cfg, set_low) = fit_one(d_set, 0)?;
    let (reset_profile, reset_cfg, reset_low) = fit_one(d_reset, 1)?;
    Ok((
        JumpTablePair::new(set_profile, reset_profile, *bounds),
        (set_cfg.g_bins, set_cfg.dg_bins),
        (reset_cfg.g_bins, reset_cfg.dg_bins),
        set_low || reset_low,
    ))
}

/// Computes one sweep row from scratch. Pure in (spec, root_seed, row
/// index, MNIST data): repeated calls produce identical rows.
pub fn sweep_row(
    spec: &SweepSpec,
    data: &ReducedMnist,
    root_seed: u64,
    row: usize,
) -> Result<SweepRow> {
    let value = spec.values[row];
    let target_spec = spec.target_for(value)?;
    let n = spec.samples_for(value)?;
    let bounds = target_spec.bounds;
    let target = build_target_tables(&target_spec)?;

    let data_rng = |dir: u64| rng::stream(root_seed, "sweep-data", &[row as u64, dir]);
    let d_set = generate_synthetic_data(n, &bounds, &target.set_table, &mut data_rng(0))?;
    let d_reset = generate_synthetic_data(n, &bounds, &target.reset_table, &mut data_rng(1))?;

    let (binning, set_bins, reset_bins, low_confidence) =
        fit_binning_pair(&d_set, &d_reset, &bounds, root_seed, row)?;
    let cmp = compare_models(&binning, &target, MODEL_EVAL_POINTS)?;

    // The pulse cap belongs to the device being modeled, so runs through
    // the binning model reuse the target's cap.
    let p_max = crate::nn::compute_p_max(&target)?;
    let lr_cfg = TrainConfig {
        seed: derive_seed(root_seed, "sweep-lr", &[row as u64]),
        p_max_override: Some(p_max),
        ..spec.train
    };
    let selection = grid_search_lr(
        ModelSource::Device(&target),
        ProvenanceTag::Target,
        &spec.lr_candidates,
        data,
        &lr_cfg,
    )?;

    let mut target_runs = Vec::with_capacity(spec.repeats);
    let mut model_runs = Vec::with_capacity(spec.repeats);
    for r in 0..spec.repeats {
        let cfg = TrainConfig {
            learning_rate: selection.learning_rate,
            epochs: spec.epochs,
            seed: derive_seed(root_seed, "sweep-train", &[row as u64, r as u64]),
            p_max_override: Some(p_max),
            ..spec.train
        };
        target_runs.push(train(
            ModelSource::Device(&target),
            ProvenanceTag::Target,
            &cfg,
            data,
        )?);
        model_runs.push(train(
            ModelSource::Device(&binning),
            ProvenanceTag::Binning,
            &cfg,
            data,
        )?);
    }
    let bias = modeling_bias(&model_runs, &target_runs)?;
    let (target_final_mean, target_final_std) = mean_std(
        &target_runs
            .iter()
            .map(|r| r.final_test_accuracy())
            .collect::<Vec<_>>(),
    );
    let (model_final_mean, model_final_std) = mean_std(
        &model_runs
            .iter()
            .map(|r| r.final_test_accuracy())
            .collect::<Vec<_>>(),
    );

    Ok(SweepRow {
        axis: spec.axis,
        value,
        row_index: row,
        seed: root_seed,
        config_hash: config_hash(spec, root_seed),
        version: env!("CARGO_PKG_VERSION").to_string(),
        n_per_direction: n,
        set_bins,
        reset_bins,
        low_confidence,
        ovle_set: cmp.ovle_set,
        ovle_reset: cmp.ovle_reset,
        ovle_avg: cmp.ovle,
        ssd_set: cmp.ssd_set,
        ssd_reset: cmp.ssd_reset,
        ssd_avg: cmp.ssd,
        learning_rate: selection.learning_rate,
        target_final_mean,
        target_final_std,
        model_final_mean,
        model_final_std,
        mean_abs_bias: bias.mean_abs_bias,
        bias: Some(bias),
    })
}

pub const SWEEP_CSV_HEADER: [&str; 26] = [
    "axis",
    "value",
    "row",
    "seed",
    "config_hash",
    "version",
    "status",
    "n_per_direction",
    "set_g_bins",
    "set_dg_bins",
    "reset_g_bins",
    "reset_dg_bins",
    "low_confidence",
    "ovle_set",
    "ovle_reset",
    "ovle_avg",
    "ssd_set",
    "ssd_reset",
    "ssd_avg",
    "learning_rate",
    "target_final_mean",
    "target_final_std",
    "model_final_mean",
    "model_final_std",
    "mean_abs_bias",
    "error",
];

fn row_record(row: &SweepRow) -> Vec<String> {
    vec![
        row.axis.name().to_string(),
        format!("{}", row.value),
        format!("{}", row.row_index),
        format!("{}", row.seed),
        row.config_hash.clone(),
        row.version.clone(),
        "ok".to_string(),
        format!("{}", row.n_per_direction),
        format!("{}", row.set_bins.0),
        format!("{}", row.set_bins.1),
        format!("{}", row.reset_bins.0),
        format!("{}", row.reset_bins.1),
        format!("{}", row.low_confidence),
        format!("{}", row.ovle_set),
        format!("{}", row.ovle_reset),
        format!("{}", row.ovle_avg),
        format!("{}", row.ssd_set),
        format!("{}", row.ssd_reset),
        format!("{}", row.ssd_avg),
        format!("{}", row.learning_rate),
        format!("{}", row.target_final_mean),
        format!("{}", row.target_final_std),
        format!("{}", row.model_final_mean),
        format!("{}", row.model_final_std),
        format!("{}", row.mean_abs_bias),
        String::new(),
    ]
}

fn error_record(
    spec: &SweepSpec,
    root_seed: u64,
    row: usize,
    err: &Error,
) -> Vec<String> {
    let mut rec = vec![String::new(); SWEEP_CSV_HEADER.len()];
    rec[0] = spec.axis.name().to_string();
    rec[1] = format!("{}", spec.values[row]);
    rec[2] = format!("{row}");
    rec[3] = format!("{root_seed}");
    rec[4] = config_hash(spec, root_seed);
    rec[5] = env!("CARGO_PKG_VERSION").to_string();
    rec[6] = "error".to_string();
    rec[25] = err.to_string();
    rec
}

/// Reads the (value, status) pairs already present in a sweep CSV. The
/// last status recorded for a value wins, so a retried row counts by its
/// latest attempt.
fn completed_values(path: &Path) -> Result<HashSet<String>> {
    let mut done: HashSet<String> = HashSet::new();
    if !path.exists() {
        return Ok(done);
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    for record in reader.records() {
        let record = record?;
        if record.len() != SWEEP_CSV_HEADER.len() {
            return Err(Error::DataFormat {
                path: path.display().to_string(),
                detail: format!("sweep row with {} fields", record.len()),
            });
        }
        let value = record[1].to_string();
        if &record[6] == "ok" {
            done.insert(value);
        } else {
            done.remove(&value);
        }
    }
    Ok(done)
}

/// Runs every row of the sweep, appending results to `out_dir/rows.csv`
/// and one manifest JSON per row. Rows whose value already has a
/// successful entry in the CSV are skipped; failed rows are recorded and
/// the sweep continues. Returns the rows computed in this call.
pub fn run_sweep(
    spec: &SweepSpec,
    data: &ReducedMnist,
    root_seed: u64,
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("rows.csv");
    let done = completed_values(&csv_path)?;

    let fresh = !csv_path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv_path)?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    if fresh {
        writer.write_record(SWEEP_CSV_HEADER)?;
    }

    let mut rows = Vec::new();
    for j in 0..spec.values.len() {
        if done.contains(&format!("{}", spec.values[j])) {
            continue;
        }
        match sweep_row(spec, data, root_seed, j) {
            Ok(row) => {
                writer.write_record(row_record(&row))?;
                writer.flush()?;
                let manifest = out_dir.join(format!("row_{j:03}.json"));
                let mut text = serde_json::to_string_pretty(&row)?;
                text.push('\n');
                std::fs::write(manifest, text)?;
                rows.push(row);
            }
            Err(err) => {
                writer.write_record(error_record(spec, root_seed, j, &err))?;
                writer.flush()?;
            }
        }
    }
    Ok(rows)
}

/// Mean and population standard deviation of a per-iteration statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterStat {
    pub mean: f64,
    pub std: f64,
}

fn iter_stat(xs: &[f64]) -> IterStat {
    let (mean, std) = mean_std(xs);
    IterStat { mean, std }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineConfig {
    /// Independent split-fit-synthesize iterations per dataset.
    pub iterations: usize,
    /// Coefficient-search budget per iteration.
    pub max_trials: usize,
    /// Polynomial degrees for the optimizer; None picks by pulse polarity
    /// (linear for potentiation data, quadratic for depression and for
    /// unlabeled data).
    pub mu_degree: Option<usize>,
    pub sigma_degree: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            max_trials: 500,
            mu_degree: None,
            sigma_degree: None,
        }
    }
}

/// Per-dataset outcome of the experimental pipeline. KS statistics compare
/// the held-out half against synthetic data from each model; the baseline
/// compares the two halves directly, which bounds what any model can
/// achieve. Profile differences are the binning profile relative to the
/// optimized one, in percent of the optimized profile's peak magnitude.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub voltage: Option<f64>,
    pub n_samples: usize,
    pub iterations: usize,
    pub ks_baseline: IterStat,
    pub ks_binning: IterStat,
    pub ks_optimized: IterStat,
    pub mu_diff_percent: IterStat,
    pub sigma_diff_percent: IterStat,
    /// Iterations where the coefficient search beat the binning reference
    /// error before exhausting its budget.
    pub beat_target_count: usize,
}

fn degrees_for(d: &DeviceDataset, cfg: &PipelineConfig) -> (usize, usize) {
    let by_polarity = match d.voltage {
        Some(v) if v > 0.0 => 1,
        _ => 2,
    };
    (
        cfg.mu_degree.unwrap_or(by_polarity),
        cfg.sigma_degree.unwrap_or(by_polarity),
    )
}

/// Percent difference of `binning` relative to `optimized` on the binning
/// knots: 100 * mean((binning - optimized) / max |optimized|).
fn profile_diff_percent(binning: &Profile, optimized: &Profile) -> (f64, f64) {
    let axis = binning.knots();
    let one = |pick: fn((f64, f64)) -> f64| {
        let b: Vec<f64> = axis.iter().map(|&g| pick(binning.eval(g))).collect();
        let o: Vec<f64> = axis.iter().map(|&g| pick(optimized.eval(g))).collect();
        let peak = o.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
        let mean_diff =
            b.iter().zip(&o).map(|(x, y)| x - y).sum::<f64>() / axis.len() as f64;
        100.0 * mean_diff / peak
    };
    (one(|p| p.0), one(|p| p.1))
}

fn pipeline_one(
    d: &DeviceDataset,
    bounds: &ConductanceBounds,
    cfg: &PipelineConfig,
    root_seed: u64,
    d_idx: usize,
) -> Result<PipelineReport> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidSpec("pipeline needs iterations >= 1".into()));
    }
    let (mu_deg, sigma_deg) = degrees_for(d, cfg);
    let grid = default_candidate_grid();

    let mut ks_base = Vec::with_capacity(cfg.iterations);
    let mut ks_bin = Vec::with_capacity(cfg.iterations);
    let mut ks_opt = Vec::with_capacity(cfg.iterations);
    let mut mu_diffs = Vec::with_capacity(cfg.iterations);
    let mut sigma_diffs = Vec::with_capacity(cfg.iterations);
    let mut beat = 0usize;

    for it in 0..cfg.iterations {
        let ids = &[d_idx as u64, it as u64];
        let mut order: Vec<usize> = (0..d.len()).collect();
        let mut split_rng = rng::stream(root_seed, "exp-split", ids);
        rng::shuffle(&mut split_rng, &mut order);
        let model_len = d.len().div_ceil(2);
        let take = |ids: &[usize]| -> Result<DeviceDataset> {
            DeviceDataset::new(ids.iter().map(|&i| d.samples[i]).collect(), d.voltage)
        };
        let d_model = take(&order[..model_len])?;
        let d_test = take(&order[model_len..])?;

        let mut bin_rng = rng::stream(root_seed, "exp-bins", ids);
        let bin_cfg = optimize_bins(&d_model, bounds, &grid, &mut bin_rng)?;
        let binning = build_binning_model(&d_model, &bin_cfg, bounds)?;

        let opt_seed = derive_seed(root_seed, "exp-opt", ids);
        let reference = synth_test_error(
            &binning.profile,
            d_model.len(),
            &d_test,
            bounds,
            opt_seed,
            "opt-final",
            FINAL_REPS,
        )?;
        let init = initialize_from_binning(&binning.profile, mu_deg, sigma_deg)?;
        let optimized: OptimizedModel = optimize_profiles(
            &d_model,
            &d_test,
            &init,
            bounds,
            &SearchBudget {
                max_trials: cfg.max_trials,
                target_error: reference,
                seed: opt_seed,
            },
        )?;
        if optimized.final_error < reference {
            beat += 1;
        }

        let synth_len = d_test.len();
        let mut synth_rng = rng::stream(root_seed, "exp-synth-bin", ids);
        let synth_bin = generate_synthetic_data(synth_len, bounds, &binning.profile, &mut synth_rng)?;
        let mut synth_rng = rng::stream(root_seed, "exp-synth-opt", ids);
        let synth_opt =
            generate_synthetic_data(synth_len, bounds, &optimized.profile, &mut synth_rng)?;

        ks_base.push(ks2d(&d_test, &d_model));
        ks_bin.push(ks2d(&d_test, &synth_bin));
        ks_opt.push(ks2d(&d_test, &synth_opt));
        let (md, sd) = profile_diff_percent(&binning.profile, &optimized.profile);
        mu_diffs.push(md);
        sigma_diffs.push(sd);
    }

    Ok(PipelineReport {
        voltage: d.voltage,
        n_samples: d.len(),
        iterations: cfg.iterations,
        ks_baseline: iter_stat(&ks_base),
        ks_binning: iter_stat(&ks_bin),
        ks_optimized: iter_stat(&ks_opt),
        mu_diff_percent: iter_stat(&mu_diffs),
        sigma_diff_percent: iter_stat(&sigma_diffs),
        beat_target_count: beat,
    })
}

/// Runs the split-fit-synthesize-compare pipeline on each measured
/// dataset. A failure in one dataset does not stop the others.
pub fn experimental_pipeline(
    datasets: &[DeviceDataset],
    bounds: &ConductanceBounds,
    cfg: &PipelineConfig,
    root_seed: u64,
) -> Vec<(Option<f64>, Result<PipelineReport>)> {
    datasets
        .iter()
        .enumerate()
        .map(|(i, d)| (d.voltage, pipeline_one(d, bounds, cfg, root_seed, i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::QuantSpec;
    use ndarray::Array2;

    fn tiny_mnist(seed: u64, n_train: usize, n_test: usize, dim: usize) -> ReducedMnist {
        let mut r = rng::stream(seed, "harness-data", &[]);
        let mut mk = |n: usize| {
            let mut images = Array2::zeros((n, dim));
            for v in images.iter_mut() {
                *v = rng::uniform(&mut r, -1.0, 1.0);
            }
            let labels: Vec<u8> = (0..n).map(|_| rng::below(&mut r, 10) as u8).collect();
            (images, labels)
        };
        let (train_images, train_labels) = mk(n_train);
        let (test_images, test_labels) = mk(n_test);
        ReducedMnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
        }
    }

    fn fast_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 2,
            seed,
            quant: QuantSpec::default(),
            p_max_override: None,
        }
    }

    #[test]
    fn single_candidate_is_returned() {
        let data = tiny_mnist(1, 64, 32, 8);
        let tables = build_target_tables(&TargetSpec::default()).unwrap();
        let sel = grid_search_lr(
            ModelSource::Device(&tables),
            ProvenanceTag::Target,
            &[0.05],
            &data,
            &fast_cfg(3),
        )
        .unwrap();
        assert_eq!(sel.learning_rate, 0.05);
        assert_eq!(sel.scores.len(), 1);
    }

    #[test]
    fn grid_search_prefers_smaller_rate_on_ties() {
        // Two identical candidates force a tie.
        let data = tiny_mnist(2, 64, 32, 8);
        let sel = grid_search_lr(
            ModelSource::IdealFloat,
            ProvenanceTag::IdealFloat,
            &[0.2, 0.2 / 2.0, 0.1],
            &data,
            &fast_cfg(5),
        )
        .unwrap();
        // Candidates 1 and 2 are both 0.1: equal scores, and any tie with
        // another rate resolves toward the smaller one.
        assert_eq!(sel.scores[1], sel.scores[2]);
        assert!(sel.learning_rate <= 0.2);
    }

    #[test]
    fn bias_identities() {
        let mk = |acc: &[f64]| RunRecord {
            train_accuracy: acc.to_vec(),
            test_accuracy: acc.to_vec(),
            config: fast_cfg(0),
            provenance: ProvenanceTag::Target,
        };
        let a = vec![mk(&[0.5, 0.6, 0.7]), mk(&[0.7, 0.8, 0.9])];
        let same = modeling_bias(&a, &a).unwrap();
        assert!(same.mb.iter().all(|&v| v == 0.0));
        assert_eq!(same.mean_abs_bias, 0.0);
        assert_eq!(same.n_repeats, 2);

        let model = vec![mk(&[0.8, 0.8])];
        let target = vec![mk(&[0.9, 0.9])];
        let under = modeling_bias(&model, &target).unwrap();
        for &v in &under.mb {
            assert!((v + 0.1).abs() < 1e-15);
        }
        assert!((under.mean_abs_bias - 0.1).abs() < 1e-15);
        assert!(under.mb.iter().all(|&v| (-1.0..=1.0).contains(&v)));

        let short = vec![mk(&[0.5])];
        assert!(matches!(
            modeling_bias(&model, &short),
            Err(Error::EpochMismatch { .. })
        ));
        assert!(modeling_bias(&[], &target).is_err());
    }

    #[test]
    fn sweep_spec_validation() {
        let mut spec = SweepSpec::desk_scale(SweepAxis::DatasetSize, vec![]);
        assert!(spec.validate().is_err());
        spec.values = vec![100.0];
        assert!(spec.validate().is_ok());
        assert_eq!(spec.repeats, 5);
        assert_eq!(spec.epochs, 20);
        let paper = SweepSpec::paper_scale(SweepAxis::C2cSigma, vec![1.0]);
        assert_eq!(paper.repeats, 20);
        assert_eq!(paper.epochs, 100);
        assert!(
            SweepSpec::desk_scale(SweepAxis::Voltage, vec![1.5])
                .validate()
                .is_err()
        );
        assert!(spec.samples_for(100.0).unwrap() == 100);
        assert!(spec.samples_for(99.5).is_err());
    }

    #[test]
    fn c2c_axis_reparameterizes_sigma() {
        let spec = SweepSpec::desk_scale(SweepAxis::C2cSigma, vec![0.7]);
        let target = spec.target_for(0.7).unwrap();
        assert!((target.sigma() - 0.7).abs() < 1e-12);
        let k_spec = SweepSpec::desk_scale(SweepAxis::NonlinearityK, vec![4.0]);
        assert_eq!(k_spec.target_for(4.0).unwrap().nonlinearity_k, 4.0);
    }

    fn small_sweep_spec() -> SweepSpec {
        let mut spec = SweepSpec::desk_scale(SweepAxis::DatasetSize, vec![300.0, 600.0]);
        spec.repeats = 2;
        spec.epochs = 2;
        spec.lr_candidates = vec![0.1];
        spec.train = TrainConfig {
            batch_size: 32,
            ..TrainConfig::default()
        };
        spec
    }

    #[test]
    fn sweep_rows_are_reproducible_and_resumable() {
        let data = tiny_mnist(7, 48, 24, 6);
        let spec = small_sweep_spec();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();

        let rows_a = run_sweep(&spec, &data, 123, dir_a.path()).unwrap();
        let _rows_b = run_sweep(&spec, &data, 123, dir_b.path()).unwrap();
        let csv_text = std::fs::read_to_string(dir_a.path().join("rows.csv")).unwrap();
        assert_eq!(rows_a.len(), 2, "{csv_text}");
        let bytes_a = std::fs::read(dir_a.path().join("rows.csv")).unwrap();
        let bytes_b = std::fs::read(dir_b.path().join("rows.csv")).unwrap();
        assert_eq!(bytes_a, bytes_b);

        // Resuming over a complete sweep recomputes nothing.
        let again = run_sweep(&spec, &data, 123, dir_a.path()).unwrap();
        assert!(again.is_empty());
        assert_eq!(std::fs::read(dir_a.path().join("rows.csv")).unwrap(), bytes_a);

        // Dropping the second row and resuming restores identical bytes.
        let text = String::from_utf8(bytes_a.clone()).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        lines.truncate(2);
        let mut truncated = lines.join("\n");
        truncated.push('\n');
        std::fs::write(dir_a.path().join("rows.csv"), truncated).unwrap();
        let resumed = run_sweep(&spec, &data, 123, dir_a.path()).unwrap();
        assert_eq!(resumed.len(), 1);
        assert_eq!(resumed[0].value, 600.0);
        assert_eq!(std::fs::read(dir_a.path().join("rows.csv")).unwrap(), bytes_a);

        // Manifests exist and carry the traces.
        let manifest = std::fs::read_to_string(dir_a.path().join("row_000.json")).unwrap();
        assert!(manifest.contains("test_accuracy"));
        assert!(manifest.contains("config_hash"));
    }

    #[test]
    fn sweep_records_row_failures_and_continues() {
        let data = tiny_mnist(8, 48, 24, 6);
        let mut spec = small_sweep_spec();
        // One sample cannot split into model and validation halves, so the
        // bin optimizer fails for that row; the other row still runs.
        spec.values = vec![1.0, 300.0];
        let dir = tempfile::tempdir().unwrap();
        let rows = run_sweep(&spec, &data, 9, dir.path()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].value, 300.0);
        let text = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap().split(',').next().unwrap(), "axis");
        let failed: Vec<&str> = text
            .lines()
            .filter(|l| l.split(',').nth(6) == Some("error"))
            .collect();
        assert_eq!(failed.len(), 1, "{text}");

        // A failed row is retried on resume and appended again.
        let retried = run_sweep(&spec, &data, 9, dir.path()).unwrap();
        assert!(retried.is_empty());
        let after = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
        assert!(after.lines().count() > text.lines().count());
    }

    #[test]
    fn pipeline_orders_models_on_synthetic_stand_in() {
        // Stand-in for measured data: draws from a known device.
        let spec = TargetSpec::default();
        let tables = build_target_tables(&spec).unwrap();
        let bounds = spec.bounds;
        let mut r = rng::stream(31, "exp-standin", &[]);
        let mut d = generate_synthetic_data(1200, &bounds, &tables.set_table, &mut r).unwrap();
        d.voltage = Some(1.5);

        let cfg = PipelineConfig {
            iterations: 4,
            max_trials: 40,
            mu_degree: None,
            sigma_degree: None,
        };
        let out = experimental_pipeline(&[d], &bounds, &cfg, 77);
        assert_eq!(out.len(), 1);
        let report = out[0].1.as_ref().unwrap();
        assert_eq!(report.voltage, Some(1.5));
        assert_eq!(report.iterations, 4);
        for stat in [report.ks_baseline, report.ks_binning, report.ks_optimized] {
            assert!(stat.mean > 0.0 && stat.mean < 1.0);
            assert!(stat.std >= 0.0);
        }
        assert!(report.ks_baseline.mean <= report.ks_binning.mean + 0.05);
        assert!(report.mu_diff_percent.mean.is_finite());
        assert!(report.sigma_diff_percent.mean.is_finite());
    }

    #[test]
    fn pipeline_isolates_failures() {
        let spec = TargetSpec::default();
        let bounds = spec.bounds;
        let tables = build_target_tables(&spec).unwrap();
        let mut r = rng::stream(32, "exp-standin", &[]);
        let good = generate_synthetic_data(600, &bounds, &tables.set_table, &mut r).unwrap();
        // Two samples cannot support a held-out bin optimization.
        let bad = DeviceDataset::new(good.samples[..2].to_vec(), Some(-1.8)).unwrap();

        let cfg = PipelineConfig {
            iterations: 2,
            max_trials: 10,
            mu_degree: Some(1),
            sigma_degree: Some(1),
        };
        let out = experimental_pipeline(&[bad, good], &bounds, &cfg, 5);
        assert_eq!(out.len(), 2);
        assert!(out[0].1.is_err());
        assert!(out[1].1.is_ok());
    }

    #[test]
    fn profile_diff_is_zero_for_identical_profiles() {
        let p = Profile::new(
            vec![3.0, 20.0, 38.0],
            vec![0.2, 0.1, 0.05],
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        let (mu, sigma) = profile_diff_percent(&p, &p);
        assert_eq!(mu, 0.0);
        assert_eq!(sigma, 0.0);

        // Binning mu uniformly 10% above optimized peak: +10.
        let q = Profile::new(
            vec![3.0, 20.0, 38.0],
            vec![0.22, 0.12, 0.07],
            vec![0.5, 0.5, 0.5],
        )
        .unwrap();
        let (mu, sigma) = profile_diff_percent(&q, &p);
        assert!((mu - 10.0).abs() < 1e-9);
        // Sigma uniformly halved: (0.5 - 1.0)/1.0 = -50%.
        assert!((sigma + 50.0).abs() < 1e-9);
    }
}
