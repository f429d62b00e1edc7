//! Histogram-based jump-table construction: 2D binning of (G, deltaG)
//! samples, per-bin Gaussian characterization, and data-driven selection of
//! the bin counts.

use crate::device::{ConductanceBounds, DeviceDataset, Profile, Sample};
use crate::error::{Error, Result};
use crate::math::mean_population_std;
use crate::metrics::ks2d;
use crate::rng::{self, Stream};
use crate::synth::generate_synthetic_data;
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub g_bins: usize,
    pub dg_bins: usize,
    /// Bins with fewer samples than this are treated as empty.
    pub min_samples_per_bin: usize,
}

impl BinningConfig {
    pub fn new(g_bins: usize, dg_bins: usize) -> Result<Self> {
        if g_bins < 2 || dg_bins < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 bins per axis, got {g_bins}x{dg_bins}"
            )));
        }
        Ok(Self {
            g_bins,
            dg_bins,
            min_samples_per_bin: 2,
        })
    }
}

/// Equal-width bin axis over the observed data range. A degenerate range
/// (all values equal) maps everything to bin 0.
#[derive(Debug, Clone)]
struct BinAxis {
    lo: f64,
    width: f64,
    bins: usize,
}

impl BinAxis {
    fn from_values(values: impl Iterator<Item = f64> + Clone, bins: usize) -> Self {
        let lo = values.clone().fold(f64::INFINITY, f64::min);
        let hi = values.fold(f64::NEG_INFINITY, f64::max);
        Self {
            lo,
            width: (hi - lo) / bins as f64,
            bins,
        }
    }

    fn index(&self, v: f64) -> usize {
        if self.width == 0.0 {
            return 0;
        }
        (((v - self.lo) / self.width) as usize).min(self.bins - 1)
    }

    fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width
    }
}

/// Result of binning one dataset: per-G-bin Gaussian moments, raw counts,
/// and empirical deltaG CDFs kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedSummary {
    pub g_centers: Vec<f64>,
    pub dg_centers: Vec<f64>,
    /// Sample mean of deltaG per G bin; 0 where the bin is empty.
    pub per_bin_mu: Vec<f64>,
    /// Population standard deviation of deltaG per G bin; 0 where empty.
    pub per_bin_sigma: Vec<f64>,
    pub per_bin_count: Vec<usize>,
    /// Normalized cumulative histogram over the deltaG bins, one per
    /// occupied G bin (empty list where the bin holds no samples).
    pub per_bin_cdf: Vec<Vec<f64>>,
    pub min_samples_per_bin: usize,
}

impl BinnedSummary {
    /// Indices of bins with enough samples to characterize.
    pub fn occupied(&self) -> Vec<usize> {
        (0..self.g_centers.len())
            .filter(|&i| self.per_bin_count[i] >= self.min_samples_per_bin)
            .collect()
    }
}

/// 2D histogram over [min G, max G] x [min deltaG, max deltaG] with per-bin
/// Gaussian moments computed from the raw samples in each G bin.
pub fn bin2d(d: &DeviceDataset, cfg: &BinningConfig) -> Result<BinnedSummary> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let g_axis = BinAxis::from_values(d.samples.iter().map(|s| s.g), cfg.g_bins);
    let dg_axis = BinAxis::from_values(d.samples.iter().map(|s| s.delta_g), cfg.dg_bins);

    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); cfg.g_bins];
    let mut hist: Vec<Vec<usize>> = vec![vec![0; cfg.dg_bins]; cfg.g_bins];
    for s in &d.samples {
        let gi = g_axis.index(s.g);
        per_bin[gi].push(s.delta_g);
        hist[gi][dg_axis.index(s.delta_g)] += 1;
    }

    let mut per_bin_mu = vec![0.0; cfg.g_bins];
    let mut per_bin_sigma = vec![0.0; cfg.g_bins];
    let mut per_bin_count = vec![0; cfg.g_bins];
    let mut per_bin_cdf = vec![Vec::new(); cfg.g_bins];
    for i in 0..cfg.g_bins {
        per_bin_count[i] = per_bin[i].len();
        if per_bin[i].is_empty() {
            continue;
        }
        // Sorting before the moment computation makes the result
        // independent of sample order.
        per_bin[i].sort_by(f64::total_cmp);
        let (mu, sigma) = mean_population_std(&per_bin[i]);
        per_bin_mu[i] = mu;
        per_bin_sigma[i] = sigma;
        let n = per_bin[i].len() as f64;
        let mut acc = 0.0;
        per_bin_cdf[i] = hist[i]
            .iter()
            .map(|&c| {
                acc += c as f64 / n;
                acc
            })
            .collect();
    }

    Ok(BinnedSummary {
        g_centers: (0..cfg.g_bins).map(|i| g_axis.center(i)).collect(),
        dg_centers: (0..cfg.dg_bins).map(|i| dg_axis.center(i)).collect(),
        per_bin_mu,
        per_bin_sigma,
        per_bin_count,
        per_bin_cdf,
        min_samples_per_bin: cfg.min_samples_per_bin,
    })
}

/// Collapses a binned summary into an update profile: knots at the centers
/// of sufficiently occupied bins, skipping empty ones so gaps interpolate
/// linearly.
pub fn fit_profiles(summary: &BinnedSummary) -> Result<Profile> {
    let occupied = summary.occupied();
    if occupied.len() < 2 {
        return Err(Error::TooFewBins {
            occupied: occupied.len(),
        });
    }
    Profile::new(
        occupied.iter().map(|&i| summary.g_centers[i]).collect(),
        occupied.iter().map(|&i| summary.per_bin_mu[i]).collect(),
        occupied.iter().map(|&i| summary.per_bin_sigma[i]).collect(),
    )
}

/// A fitted binning model for one switching direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningModel {
    pub profile: Profile,
    /// Set when the median occupied-bin count falls below 30 samples:
    /// per-bin Gaussian fits get unstable below that.
    pub low_confidence: bool,
    pub occupied_bins: usize,
}

/// Bins a dataset and fits its update profile. Evaluation outside the knot
/// span clamps to the endpoint values, which extends the model across the
/// full device window.
pub fn build_binning_model(
    d: &DeviceDataset,
    cfg: &BinningConfig,
    _bounds: &ConductanceBounds,
) -> Result<BinningModel> {
    let summary = bin2d(d, cfg)?;
    let profile = fit_profiles(&summary)?;
    let occupied = summary.occupied();
    let mut counts: Vec<usize> = occupied.iter().map(|&i| summary.per_bin_count[i]).collect();
    counts.sort_unstable();
    let median = counts[counts.len() / 2];
    Ok(BinningModel {
        profile,
        low_confidence: median < 30,
        occupied_bins: occupied.len(),
    })
}

/// Default bin-count candidates: both axes over {4, 8, 16, 32, 64}.
pub fn default_candidate_grid() -> Vec<(usize, usize)> {
    let sizes = [4usize, 8, 16, 32, 64];
    let mut grid = Vec::with_capacity(25);
    for &g in &sizes {
        for &dg in &sizes {
            grid.push((g, dg));
        }
    }
    grid
}

/// Selects bin counts by held-out comparison: the dataset is shuffled and
/// split in half, each candidate's model (built on the first half) is used
/// to synthesize a validation-sized dataset, and the candidate whose
/// synthetic data sits closest to the held-out half under the 2D KS
/// statistic wins. Ties break toward fewer total bins, then
/// lexicographically. Candidates whose model cannot be built (too many
/// empty bins) are skipped.
pub fn optimize_bins(
    d: &DeviceDataset,
    bounds: &ConductanceBounds,
    candidates: &[(usize, usize)],
    rng: &mut Stream,
) -> Result<BinningConfig> {
    if candidates.is_empty() {
        return Err(Error::InvalidSpec("empty bin candidate grid".into()));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    rng::shuffle(rng, &mut order);
    let model_len = d.len().div_ceil(2);
    let model_half: Vec<Sample> = order[..model_len].iter().map(|&i| d.samples[i]).collect();
    let valid_half: Vec<Sample> = order[model_len..].iter().map(|&i| d.samples[i]).collect();
    let model_data = DeviceDataset::new(model_half, d.voltage)?;
    let valid_data = DeviceDataset::new(valid_half, d.voltage)?;

    let eval_seed = rng.next_u64();
    let mut best: Option<((usize, usize), f64)> = None;
    for (c_idx, &(g_bins, dg_bins)) in candidates.iter().enumerate() {
        let cfg = BinningConfig::new(g_bins, dg_bins)?;
        let Ok(model) = build_binning_model(&model_data, &cfg, bounds) else {
            continue;
        };
        let mut sub = rng::stream(eval_seed, "bin-candidate", &[c_idx as u64]);
        let synth = generate_synthetic_data(valid_data.len(), bounds, &model.profile, &mut sub)?;
        let score = ks2d(&valid_data, &synth);
        let better = match best {
            None => true,
            Some(((bg, bdg), bs)) => {
                score < bs
                    || (score == bs
                        && (g_bins * dg_bins, g_bins, dg_bins) < (bg * bdg, bg, bdg))
            }
        };
        if better {
            best = Some(((g_bins, dg_bins), score));
        }
    }
    let ((g_bins, dg_bins), _) = best.ok_or(Error::TooFewBins { occupied: 0 })?;
    BinningConfig::new(g_bins, dg_bins)
}
