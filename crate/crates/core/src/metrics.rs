//! Disagreement metrics between device models and between datasets.
//!
//! Model-level metrics compare two (mu, sigma) profiles state by state on a
//! shared conductance axis: SSD measures sign disagreement of the update,
//! OVLE the non-overlap of the update distributions. Dataset-level
//! disagreement uses the two-sample two-dimensional Kolmogorov-Smirnov
//! statistic with quadrants anchored at sample points.

use crate::device::{DeviceDataset, JumpTablePair, Profile};
use crate::error::{Error, Result};
use crate::math::{integrate, normal_pdf};
use serde::{Deserialize, Serialize};

/// Probability that a Gaussian update with the given parameters is
/// negative. The sigma = 0 limit is the step function with value 1/2 at
/// mu = 0.
pub fn prob_negative(mu: f64, sigma: f64) -> f64 {
    debug_assert!(sigma >= 0.0);
    if sigma == 0.0 {
        if mu < 0.0 {
            1.0
        } else if mu > 0.0 {
            0.0
        } else {
            0.5
        }
    } else {
        0.5 * libm::erfc(mu / (sigma * std::f64::consts::SQRT_2))
    }
}

/// Switching-sign discrepancy between two models evaluated on a shared
/// axis: mean absolute difference of their negative-update probabilities.
/// Inputs are (mu, sigma) pairs aligned by axis point.
pub fn ssd(x: &[(f64, f64)], y: &[(f64, f64)]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::AxisMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let total: f64 = x
        .iter()
        .zip(y)
        .map(|(&(mx, sx), &(my, sy))| (prob_negative(mx, sx) - prob_negative(my, sy)).abs())
        .sum();
    Ok(total / x.len() as f64)
}

/// Half the L1 distance between two Gaussian densities, i.e. the missing
/// overlap: 0 for identical distributions, 1 for disjoint ones.
fn pair_overlap_error(mx: f64, sx: f64, my: f64, sy: f64) -> f64 {
    if sx == 0.0 && sy == 0.0 {
        return if mx == my { 0.0 } else { 1.0 };
    }
    if sx == 0.0 || sy == 0.0 {
        // A point mass shares no density with a continuous distribution.
        return 1.0;
    }
    let smax = sx.max(sy);
    let lo = mx.min(my) - 8.0 * smax;
    let hi = mx.max(my) + 8.0 * smax;
    let f = |dg: f64| {
        (normal_pdf((dg - mx) / sx) / sx - normal_pdf((dg - my) / sy) / sy).abs()
    };
    0.5 * integrate(&f, lo, hi, 1e-6)
}

/// Overlapping error between two models on a shared axis: mean over axis
/// points of the per-state missing overlap, each integral computed to
/// absolute accuracy 1e-6.
pub fn ovle(x: &[(f64, f64)], y: &[(f64, f64)]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::AxisMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let total: f64 = x
        .iter()
        .zip(y)
        .map(|(&(mx, sx), &(my, sy))| pair_overlap_error(mx, sx, my, sy))
        .sum();
    Ok(total / x.len() as f64)
}

/// Prefix-count tree over compressed ranks.
struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks <= i.
    fn prefix(&self, i: usize) -> i64 {
        let mut i = i + 1;
        let mut acc = 0;
        while i > 0 {
            acc += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        acc
    }
}

/// Two-sample two-dimensional Kolmogorov-Smirnov statistic over (G, deltaG)
/// points.
///
/// For every pooled sample point and each of the four closed/open quadrant
/// orientations anchored there, the statistic is the largest absolute
/// difference between the two datasets' quadrant fractions. Counting is
/// exact: cross-multiplied integer counts are compared and the single
/// division happens at the end.
pub fn ks2d(a: &DeviceDataset, b: &DeviceDataset) -> f64 {
    let n = a.len() as i64;
    let m = b.len() as i64;
    assert!(n > 0 && m > 0);

    // Compress deltaG onto pooled ranks.
    let mut dgs: Vec<f64> = a
        .samples
        .iter()
        .chain(&b.samples)
        .map(|s| s.delta_g)
        .collect();
    dgs.sort_by(f64::total_cmp);
    dgs.dedup();
    let rank = |dg: f64| dgs.partition_point(|&v| v < dg);

    // (g, dg rank, belongs-to-a) sorted by g.
    let mut pts: Vec<(f64, usize, bool)> = a
        .samples
        .iter()
        .map(|s| (s.g, rank(s.delta_g), true))
        .chain(b.samples.iter().map(|s| (s.g, rank(s.delta_g), false)))
        .collect();
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));

    // Global per-dataset counts of dg <= each rank.
    let mut tot_a = Fenwick::new(dgs.len());
    let mut tot_b = Fenwick::new(dgs.len());
    for &(_, r, is_a) in &pts {
        if is_a { tot_a.add(r) } else { tot_b.add(r) }
    }

    let mut ins_a = Fenwick::new(dgs.len());
    let mut ins_b = Fenwick::new(dgs.len());
    let (mut inserted_a, mut inserted_b) = (0i64, 0i64);
    let mut best = 0i64;

    let mut i = 0;
    while i < pts.len() {
        // Insert the whole run of equal g so quadrant counts treat ties as
        // inside the closed half-plane.
        let mut j = i;
        while j < pts.len() && pts[j].0 == pts[i].0 {
            if pts[j].2 {
                ins_a.add(pts[j].1);
                inserted_a += 1;
            } else {
                ins_b.add(pts[j].1);
                inserted_b += 1;
            }
            j += 1;
        }
        for &(_, r, _) in &pts[i..j] {
            // Quadrant counts for dataset a anchored at this point:
            // (g<=, dg<=), (g<=, dg>), (g>, dg<=), (g>, dg>).
            let a_ll = ins_a.prefix(r);
            let a_lh = inserted_a - a_ll;
            let a_total_low = tot_a.prefix(r);
            let a_hl = a_total_low - a_ll;
            let a_hh = n - inserted_a - a_hl;

            let b_ll = ins_b.prefix(r);
            let b_lh = inserted_b - b_ll;
            let b_total_low = tot_b.prefix(r);
            let b_hl = b_total_low - b_ll;
            let b_hh = m - inserted_b - b_hl;

            for (ca, cb) in [(a_ll, b_ll), (a_lh, b_lh), (a_hl, b_hl), (a_hh, b_hh)] {
                best = best.max((ca * m - cb * n).abs());
            }
        }
        i = j;
    }
    best as f64 / (n as f64 * m as f64)
}

/// Per-direction and averaged model disagreement on a shared evaluation
/// axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub ssd_set: f64,
    pub ssd_reset: f64,
    pub ssd: f64,
    pub ovle_set: f64,
    pub ovle_reset: f64,
    pub ovle: f64,
    pub g_eval_axis: Vec<f64>,
}

impl ModelComparison {
    pub fn n_eval_points(&self) -> usize {
        self.g_eval_axis.len()
    }
}

/// Evenly spaced conductance values strictly inside the window.
pub fn interior_axis(g_min: f64, g_max: f64, n_points: usize) -> Vec<f64> {
    let step = (g_max - g_min) / (n_points as f64 + 1.0);
    (1..=n_points).map(|i| g_min + i as f64 * step).collect()
}

fn eval_on_axis(p: &Profile, axis: &[f64]) -> Vec<(f64, f64)> {
    axis.iter().map(|&g| p.eval(g)).collect()
}

/// SSD and OVLE between two device models for both switching directions on
/// `n_points` evenly spaced states strictly inside the bounds of `x`.
pub fn compare_models(x: &JumpTablePair, y: &JumpTablePair, n_points: usize) -> Result<ModelComparison> {
    let axis = interior_axis(x.bounds.g_min, x.bounds.g_max, n_points);
    let xs = eval_on_axis(&x.set_table, &axis);
    let ys = eval_on_axis(&y.set_table, &axis);
    let xr = eval_on_axis(&x.reset_table, &axis);
    let yr = eval_on_axis(&y.reset_table, &axis);
    let ssd_set = ssd(&xs, &ys)?;
    let ssd_reset = ssd(&xr, &yr)?;
    let ovle_set = ovle(&xs, &ys)?;
    let ovle_reset = ovle(&xr, &yr)?;
    Ok(ModelComparison {
        ssd_set,
        ssd_reset,
        ssd: 0.5 * (ssd_set + ssd_reset),
        ovle_set,
        ovle_reset,
        ovle: 0.5 * (ovle_set + ovle_reset),
        g_eval_axis: axis,
    })
}
