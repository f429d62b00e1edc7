//! Derivative-free polynomial profile search.
//!
//! Starting from a polynomial fit of a binning model's profiles, the search
//! perturbs the coefficients of mu(G) and sigma(G), scores each candidate
//! by synthesizing data from it and comparing against a held-out test
//! subset with the 2D KS statistic, and stops once it beats the reference
//! (binning) test error or the trial budget runs out.

use crate::device::{ConductanceBounds, DeviceDataset, Profile};
use crate::error::{Error, Result};
use crate::math::{polyfit, polyval};
use crate::metrics::ks2d;
use crate::rng::{self, derive_seed};
use crate::synth::generate_synthetic_data;
use serde::{Deserialize, Serialize};

/// Knot count of materialized polynomial profiles, endpoints included.
pub const DENSE_KNOTS: usize = 129;

/// Scoring repetitions per trial; the winner is re-scored with
/// [`FINAL_REPS`] fresh repetitions.
pub const TRIAL_REPS: usize = 3;
pub const FINAL_REPS: usize = 10;

/// Polynomial coefficients (ascending) for both profiles plus the
/// per-coefficient search intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyProfileSpec {
    pub mu_coeffs: Vec<f64>,
    pub sigma_coeffs: Vec<f64>,
    /// (low, high) per coefficient, mu coefficients first.
    pub coeff_search_ranges: Vec<(f64, f64)>,
}

impl PolyProfileSpec {
    pub fn mu_degree(&self) -> usize {
        self.mu_coeffs.len() - 1
    }

    pub fn sigma_degree(&self) -> usize {
        self.sigma_coeffs.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_trials: usize,
    /// Stop as soon as a trial's error falls below this.
    pub target_error: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub mu_coeffs: Vec<f64>,
    pub sigma_coeffs: Vec<f64>,
    pub e_prime: f64,
    /// Derived seed of this trial's scoring streams.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchOutcome {
    /// A trial scored below the target error.
    BeatTarget,
    /// All trials ran without reaching the target; the best is returned.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedModel {
    pub profile: Profile,
    pub mu_coeffs: Vec<f64>,
    pub sigma_coeffs: Vec<f64>,
    /// Winner's error re-scored with [`FINAL_REPS`] repetitions.
    pub final_error: f64,
    pub outcome: SearchOutcome,
    pub trials: Vec<Trial>,
}

/// Evaluates an ascending-coefficient polynomial at each axis point.
pub fn evaluate_polynomial(coeffs: &[f64], g_axis: &[f64]) -> Vec<f64> {
    g_axis.iter().map(|&g| polyval(coeffs, g)).collect()
}

/// Evenly spaced conductance knots spanning the bounds, endpoints included.
pub fn dense_axis(bounds: &ConductanceBounds, n: usize) -> Vec<f64> {
    let step = bounds.range() / (n - 1) as f64;
    (0..n).map(|i| bounds.g_min + i as f64 * step).collect()
}

/// Materializes coefficient vectors into a dense-knot profile. Negative
/// sigma evaluations clamp to 0.
pub fn materialize(
    mu_coeffs: &[f64],
    sigma_coeffs: &[f64],
    bounds: &ConductanceBounds,
) -> Result<Profile> {
    let axis = dense_axis(bounds, DENSE_KNOTS);
    let mu = evaluate_polynomial(mu_coeffs, &axis);
    let sigma = evaluate_polynomial(sigma_coeffs, &axis)
        .into_iter()
        .map(|s| s.max(0.0))
        .collect();
    Profile::new(axis, mu, sigma)
}

/// Least-squares initialization from a binning profile: degree `m` fit to
/// the mean knots, degree `n` to the standard-deviation knots. Search
/// ranges are each coefficient plus/minus its own magnitude, with a minimum
/// half-width of 1e-3.
pub fn initialize_from_binning(binning: &Profile, m: usize, n: usize) -> Result<PolyProfileSpec> {
    let knots = binning.knots();
    let worst = m.max(n);
    if knots.len() < worst + 1 {
        return Err(Error::TooFewKnots {
            degree: worst,
            knots: knots.len(),
        });
    }
    let mu_coeffs = polyfit(knots, binning.mu(), m);
    let sigma_coeffs = polyfit(knots, binning.sigma(), n);
    let ranges = mu_coeffs
        .iter()
        .chain(&sigma_coeffs)
        .map(|&c| {
            let h = c.abs().max(1e-3);
            (c - h, c + h)
        })
        .collect();
    Ok(PolyProfileSpec {
        mu_coeffs,
        sigma_coeffs,
        coeff_search_ranges: ranges,
    })
}

/// Mean 2D-KS error of data synthesized from `profile` against `d_test`,
/// over `reps` repetitions with streams derived from (seed, label, [rep]).
/// This is the same scoring rule the optimizer applies to its candidates,
/// so reference errors computed with it are directly comparable.
pub fn synth_test_error(
    profile: &Profile,
    n_synth: usize,
    d_test: &DeviceDataset,
    bounds: &ConductanceBounds,
    seed: u64,
    label: &str,
    reps: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for rep in 0..reps {
        let mut stream = rng::stream(seed, label, &[rep as u64]);
        let synth = generate_synthetic_data(n_synth, bounds, profile, &mut stream)?;
        total += ks2d(&synth, d_test);
    }
    Ok(total / reps as f64)
}

fn score_trial(
    mu_coeffs: &[f64],
    sigma_coeffs: &[f64],
    d_model_len: usize,
    d_test: &DeviceDataset,
    bounds: &ConductanceBounds,
    seed: u64,
    t: usize,
) -> Result<f64> {
    let profile = materialize(mu_coeffs, sigma_coeffs, bounds)?;
    let mut total = 0.0;
    for rep in 0..TRIAL_REPS {
        let mut stream = rng::stream(seed, "opt-eval", &[t as u64, rep as u64]);
        let synth = generate_synthetic_data(d_model_len, bounds, &profile, &mut stream)?;
        total += ks2d(&synth, d_test);
    }
    Ok(total / TRIAL_REPS as f64)
}

/// Runs the coefficient search. Trial 0 evaluates `init` unchanged; later
/// trials draw either uniformly within the search ranges or as a Gaussian
/// perturbation of the best coefficients so far, with the perturbation
/// scale halving after every 100 trials without improvement. Terminates as
/// soon as a trial beats `budget.target_error` (that trial is necessarily
/// the running best) or when the budget is exhausted.
pub fn optimize_profiles(
    d_model: &DeviceDataset,
    d_test: &DeviceDataset,
    init: &PolyProfileSpec,
    bounds: &ConductanceBounds,
    budget: &SearchBudget,
) -> Result<OptimizedModel> {
    if budget.max_trials == 0 {
        return Err(Error::InvalidSpec("max_trials must be >= 1".into()));
    }
    let n_mu = init.mu_coeffs.len();
    let ranges = &init.coeff_search_ranges;

    let mut trials: Vec<Trial> = Vec::new();
    let mut best_idx = 0usize;
    let mut stagnant = 0usize;
    let mut outcome = SearchOutcome::BudgetExhausted;

    for t in 0..budget.max_trials {
        let (mu_coeffs, sigma_coeffs) = if t == 0 {
            (init.mu_coeffs.clone(), init.sigma_coeffs.clone())
        } else {
            let mut prop = rng::stream(budget.seed, "opt-propose", &[t as u64]);
            let scale = 0.5_f64.powi((stagnant / 100) as i32);
            let best = &trials[best_idx];
            let flat: Vec<f64> = best
                .mu_coeffs
                .iter()
                .chain(&best.sigma_coeffs)
                .copied()
                .collect();
            let explore = rng::open_unit(&mut prop) < 0.5;
            let coeffs: Vec<f64> = ranges
                .iter()
                .zip(&flat)
                .map(|(&(lo, hi), &b)| {
                    if explore {
                        rng::uniform(&mut prop, lo, hi)
                    } else {
                        let half = 0.5 * (hi - lo);
                        (b + 0.25 * half * scale * rng::standard_normal(&mut prop))
                            .clamp(lo, hi)
                    }
                })
                .collect();
            (coeffs[..n_mu].to_vec(), coeffs[n_mu..].to_vec())
        };

        let e_prime = score_trial(
            &mu_coeffs,
            &sigma_coeffs,
            d_model.len(),
            d_test,
            bounds,
            budget.seed,
            t,
        )?;
        trials.push(Trial {
            index: t,
            mu_coeffs,
            sigma_coeffs,
            e_prime,
            seed: derive_seed(budget.seed, "opt-eval", &[t as u64]),
        });

        if e_prime < trials[best_idx].e_prime || t == 0 {
            best_idx = t;
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        if e_prime < budget.target_error {
            outcome = SearchOutcome::BeatTarget;
            break;
        }
    }

    let winner = &trials[best_idx];
    let profile = materialize(&winner.mu_coeffs, &winner.sigma_coeffs, bounds)?;
    let final_error = synth_test_error(
        &profile,
        d_model.len(),
        d_test,
        bounds,
        budget.seed,
        "opt-final",
        FINAL_REPS,
    )?;
    Ok(OptimizedModel {
        profile,
        mu_coeffs: winner.mu_coeffs.clone(),
        sigma_coeffs: winner.sigma_coeffs.clone(),
        final_error,
        outcome,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::{build_binning_model, BinningConfig};
    use crate::synth::{build_target_tables, TargetSpec};

    fn split(d: &DeviceDataset) -> (DeviceDataset, DeviceDataset) {
        let half = d.len() / 2;
        (
            DeviceDataset::new(d.samples[..half].to_vec(), None).unwrap(),
            DeviceDataset::new(d.samples[half..].to_vec(), None).unwrap(),
        )
    }

    #[test]
    fn polynomial_evaluation_on_axis() {
        assert_eq!(evaluate_polynomial(&[5.0], &[1.0, 2.0, 3.0]), vec![5.0; 3]);
        assert_eq!(evaluate_polynomial(&[1.0, 2.0], &[3.0]), vec![7.0]);
        let v = evaluate_polynomial(&[0.3, -0.05, 0.001], &[10.0]);
        assert!((v[0] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn dense_axis_spans_bounds_inclusively() {
        let b = ConductanceBounds::new(3.0, 38.0).unwrap();
        let axis = dense_axis(&b, DENSE_KNOTS);
        assert_eq!(axis.len(), 129);
        assert_eq!(axis[0], 3.0);
        assert!((axis[128] - 38.0).abs() < 1e-12);
    }

    #[test]
    fn materialize_clamps_negative_sigma() {
        let b = ConductanceBounds::new(3.0, 38.0).unwrap();
        // Sigma polynomial dips below zero over part of the window.
        let p = materialize(&[0.1], &[1.0, -0.1], &b).unwrap();
        assert_eq!(p.eval(30.0).1, 0.0);
        assert!((p.eval(5.0).1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn initialization_reproduces_exact_fits() {
        let lin = Profile::new(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1.0, 1.5, 2.0, 2.5],
            vec![0.3, 0.3, 0.3, 0.3],
        )
        .unwrap();
        let spec = initialize_from_binning(&lin, 1, 0).unwrap();
        assert!((spec.mu_coeffs[0] - 1.0).abs() < 1e-9);
        assert!((spec.mu_coeffs[1] - 0.5).abs() < 1e-9);
        assert!((spec.sigma_coeffs[0] - 0.3).abs() < 1e-9);

        let para = Profile::new(
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 4.0],
            vec![0.0, 0.0, 0.0],
        )
        .unwrap();
        let spec = initialize_from_binning(&para, 2, 0).unwrap();
        assert!(spec.mu_coeffs[0].abs() < 1e-9);
        assert!(spec.mu_coeffs[1].abs() < 1e-9);
        assert!((spec.mu_coeffs[2] - 1.0).abs() < 1e-9);

        // Constant fit is the mean of the knot values.
        let spec = initialize_from_binning(&para, 0, 0).unwrap();
        assert!((spec.mu_coeffs[0] - 5.0 / 3.0).abs() < 1e-9);

        assert!(matches!(
            initialize_from_binning(&para, 3, 0),
            Err(Error::TooFewKnots { degree: 3, knots: 3 })
        ));
    }

    #[test]
    fn search_ranges_have_minimum_width() {
        let p = Profile::new(vec![0.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let spec = initialize_from_binning(&p, 1, 0).unwrap();
        for &(lo, hi) in &spec.coeff_search_ranges {
            assert!(hi - lo >= 2e-3 - 1e-15);
        }
    }

    fn optimizer_fixture(seed: u64) -> (DeviceDataset, DeviceDataset, PolyProfileSpec, ConductanceBounds) {
        let spec = TargetSpec::default();
        let t = build_target_tables(&spec).unwrap();
        let mut r = rng::stream(seed, "opt-fixture", &[]);
        let d = generate_synthetic_data(1_000, &spec.bounds, &t.set_table, &mut r).unwrap();
        let (d_model, d_test) = split(&d);
        let binning =
            build_binning_model(&d_model, &BinningConfig::new(8, 8).unwrap(), &spec.bounds)
                .unwrap();
        let init = initialize_from_binning(&binning.profile, 1, 0).unwrap();
        (d_model, d_test, init, spec.bounds)
    }

    #[test]
    fn trivial_budget_returns_initialization() {
        let (d_model, d_test, init, bounds) = optimizer_fixture(31);
        let budget = SearchBudget {
            max_trials: 1,
            target_error: 1.0,
            seed: 5,
        };
        let out = optimize_profiles(&d_model, &d_test, &init, &bounds, &budget).unwrap();
        assert_eq!(out.trials.len(), 1);
        assert_eq!(out.outcome, SearchOutcome::BeatTarget);
        assert_eq!(out.mu_coeffs, init.mu_coeffs);
        assert_eq!(out.sigma_coeffs, init.sigma_coeffs);
    }

    #[test]
    fn search_is_deterministic_and_best_monotone() {
        let (d_model, d_test, init, bounds) = optimizer_fixture(32);
        let budget = SearchBudget {
            max_trials: 40,
            target_error: 0.0,
            seed: 77,
        };
        let a = optimize_profiles(&d_model, &d_test, &init, &bounds, &budget).unwrap();
        let b = optimize_profiles(&d_model, &d_test, &init, &bounds, &budget).unwrap();
        assert_eq!(a.trials, b.trials);
        assert_eq!(a.outcome, SearchOutcome::BudgetExhausted);

        let mut running = f64::INFINITY;
        let mut mins = Vec::new();
        for t in &a.trials {
            running = running.min(t.e_prime);
            mins.push(running);
        }
        for w in mins.windows(2) {
            assert!(w[1] <= w[0]);
        }
        // The returned coefficients are the best trial's.
        let best = a
            .trials
            .iter()
            .min_by(|x, y| x.e_prime.total_cmp(&y.e_prime))
            .unwrap();
        assert_eq!(a.mu_coeffs, best.mu_coeffs);
    }

    #[test]
    fn objective_is_noisy_across_seeds() {
        let (d_model, d_test, init, bounds) = optimizer_fixture(33);
        let profile = materialize(&init.mu_coeffs, &init.sigma_coeffs, &bounds).unwrap();
        let scores: Vec<f64> = (0..20)
            .map(|s| {
                synth_test_error(&profile, d_model.len(), &d_test, &bounds, s, "noise-probe", 1)
                    .unwrap()
            })
            .collect();
        let spread = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - scores.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(spread > 0.0);
    }

    #[test]
    fn termination_by_threshold_reproduces_winning_score() {
        let (d_model, d_test, init, bounds) = optimizer_fixture(34);
        // Reference error from the initialization profile itself, so the
        // threshold is realistically beatable within a few trials.
        let init_profile = materialize(&init.mu_coeffs, &init.sigma_coeffs, &bounds).unwrap();
        let target = synth_test_error(
            &init_profile,
            d_model.len(),
            &d_test,
            &bounds,
            9,
            "opt-target",
            TRIAL_REPS,
        )
        .unwrap();
        let budget = SearchBudget {
            max_trials: 200,
            target_error: target,
            seed: 9,
        };
        let out = optimize_profiles(&d_model, &d_test, &init, &bounds, &budget).unwrap();
        if out.outcome == SearchOutcome::BeatTarget {
            let last = out.trials.last().unwrap();
            assert!(last.e_prime < target);
            // Re-scoring the winner with its logged trial index and the
            // same seed reproduces the recorded error exactly.
            let again = score_trial(
                &last.mu_coeffs,
                &last.sigma_coeffs,
                d_model.len(),
                &d_test,
                &bounds,
                budget.seed,
                last.index,
            )
            .unwrap();
            assert_eq!(again, last.e_prime);
        }
    }
}
