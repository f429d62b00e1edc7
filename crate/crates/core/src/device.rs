//! Jump-table device model: conductance bounds, per-state update
//! distributions, and pulse application.
//!
//! A [`Profile`] stores the mean and standard deviation of the conductance
//! update at a grid of conductance knots. One profile describes one update
//! direction; a [`JumpTablePair`] holds the potentiation (SET) and
//! depression (RESET) profiles together with the device bounds.

use crate::error::{Error, Result};
use crate::math::normal_quantile;
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

/// Update direction for a programming pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Potentiation: drives conductance up.
    Set,
    /// Depression: drives conductance down.
    Reset,
}

/// Physical conductance window of a device, in nS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConductanceBounds {
    pub g_min: f64,
    pub g_max: f64,
}

impl ConductanceBounds {
    pub fn new(g_min: f64, g_max: f64) -> Result<Self> {
        if !(g_min.is_finite() && g_max.is_finite() && g_min > 0.0 && g_min < g_max) {
            return Err(Error::InvalidBounds(format!(
                "need 0 < g_min < g_max, both finite; got [{g_min}, {g_max}]"
            )));
        }
        Ok(Self { g_min, g_max })
    }

    pub fn range(&self) -> f64 {
        self.g_max - self.g_min
    }

    pub fn clip(&self, g: f64) -> f64 {
        g.clamp(self.g_min, self.g_max)
    }

    pub fn contains(&self, g: f64) -> bool {
        g >= self.g_min && g <= self.g_max
    }
}

/// Mean and standard deviation of the conductance update as functions of
/// conductance, tabulated at strictly increasing knots. Evaluation between
/// knots interpolates linearly; outside the knot span it clamps to the
/// endpoint values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    knots: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl Profile {
    pub fn new(knots: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || mu.len() != knots.len() || sigma.len() != knots.len() {
            return Err(Error::InvalidProfile(format!(
                "need equal-length knot/mu/sigma lists of length >= 2; got {}/{}/{}",
                knots.len(),
                mu.len(),
                sigma.len()
            )));
        }
        if !knots.windows(2).all(|w| w[0] < w[1]) || !knots.iter().all(|k| k.is_finite()) {
            return Err(Error::InvalidProfile(
                "knots must be finite and strictly increasing".into(),
            ));
        }
        if !mu.iter().chain(sigma.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidProfile("mu and sigma must be finite".into()));
        }
        if sigma.iter().any(|&s| s < 0.0) {
            return Err(Error::InvalidProfile("sigma values must be >= 0".into()));
        }
        Ok(Self { knots, mu, sigma })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Mean and standard deviation of the update distribution at `g`.
    ///
    /// Interpolated sigma is clamped to 0 from below: fitted profiles can
    /// dip fractionally negative between knots and a standard deviation
    /// cannot.
    pub fn eval(&self, g: f64) -> (f64, f64) {
        let n = self.knots.len();
        if g <= self.knots[0] {
            return (self.mu[0], self.sigma[0]);
        }
        if g >= self.knots[n - 1] {
            return (self.mu[n - 1], self.sigma[n - 1]);
        }
        // partition_point > 0 here because g > knots[0].
        let hi = self.knots.partition_point(|&k| k < g).min(n - 1);
        if self.knots[hi] == g {
            return (self.mu[hi], self.sigma[hi]);
        }
        let lo = hi - 1;
        let t = (g - self.knots[lo]) / (self.knots[hi] - self.knots[lo]);
        let mu = self.mu[lo] + t * (self.mu[hi] - self.mu[lo]);
        let sigma = self.sigma[lo] + t * (self.sigma[hi] - self.sigma[lo]);
        (mu, sigma.max(0.0))
    }

    /// Inverse-CDF draw of a conductance update at `g`: mu + sigma * Phi^-1(u).
    pub fn sample_delta_g(&self, g: f64, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::UniformVariate(u));
        }
        let (mu, sigma) = self.eval(g);
        Ok(mu + sigma * normal_quantile(u))
    }
}

/// A complete stochastic device model: one profile per update direction
/// plus the conductance window the device can occupy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpTablePair {
    pub set_table: Profile,
    pub reset_table: Profile,
    pub bounds: ConductanceBounds,
}

impl JumpTablePair {
    pub fn new(set_table: Profile, reset_table: Profile, bounds: ConductanceBounds) -> Self {
        Self {
            set_table,
            reset_table,
            bounds,
        }
    }

    pub fn profile(&self, direction: Direction) -> &Profile {
        match direction {
            Direction::Set => &self.set_table,
            Direction::Reset => &self.reset_table,
        }
    }

    /// One programming pulse: sample an update and clip the result into the
    /// device window.
    pub fn apply_pulse(&self, direction: Direction, g: f64, u: f64) -> Result<f64> {
        if !self.bounds.contains(g) {
            return Err(Error::OutOfBounds {
                g,
                g_min: self.bounds.g_min,
                g_max: self.bounds.g_max,
            });
        }
        let dg = self.profile(direction).sample_delta_g(g, u)?;
        Ok(self.bounds.clip(g + dg))
    }

    /// Conductance trace under `n_pulses` repeated pulses, starting value
    /// included: the result has length `n_pulses + 1`.
    pub fn trajectory(
        &self,
        direction: Direction,
        g_start: f64,
        n_pulses: usize,
        rng: &mut Stream,
    ) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n_pulses + 1);
        let mut g = g_start;
        out.push(g);
        for _ in 0..n_pulses {
            g = self.apply_pulse(direction, g, crate::rng::open_unit(rng))?;
            out.push(g);
        }
        Ok(out)
    }
}

/// One experimental record: conductance before a pulse and the measured
/// update, both in nS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub g: f64,
    pub delta_g: f64,
}

/// A set of (G, deltaG) measurements, optionally labelled with the pulse
/// voltage they were taken at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDataset {
    pub samples: Vec<Sample>,
    pub voltage: Option<f64>,
}

impl DeviceDataset {
    pub fn new(samples: Vec<Sample>, voltage: Option<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { samples, voltage })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn profile(knots: &[f64], mu: &[f64], sigma: &[f64]) -> Profile {
        Profile::new(knots.to_vec(), mu.to_vec(), sigma.to_vec()).unwrap()
    }

    #[test]
    fn eval_interpolates_and_clamps() {
        let p = profile(&[0.0, 10.0], &[1.0, 3.0], &[0.5, 0.5]);
        assert_eq!(p.eval(5.0).0, 2.0);
        assert_eq!(p.eval(-5.0).0, 1.0);
        assert_eq!(p.eval(25.0).0, 3.0);

        let p = profile(&[3.0, 38.0], &[2.1, 0.3], &[0.0, 0.0]);
        assert!((p.eval(20.5).0 - 1.2).abs() < 1e-12);
    }

    #[test]
    fn eval_is_exact_at_knots() {
        let knots = [3.0, 7.5, 12.25, 38.0];
        let mu = [0.4, -0.1, 0.22, 0.9];
        let sigma = [0.0, 1.5, 0.3, 2.0];
        let p = profile(&knots, &mu, &sigma);
        for i in 0..knots.len() {
            let (m, s) = p.eval(knots[i]);
            assert_eq!(m, mu[i]);
            assert_eq!(s, sigma[i]);
        }
    }

    #[test]
    fn interpolated_sigma_never_negative() {
        // Legal knot values, but a hostile query between them cannot go
        // below zero even with mu pulling strongly negative.
        let p = profile(&[0.0, 1.0], &[0.0, 0.0], &[0.0, 2.0]);
        for i in 0..=100 {
            let g = i as f64 / 100.0;
            assert!(p.eval(g).1 >= 0.0);
        }
    }

    #[test]
    fn sampling_median_and_degenerate() {
        let p = profile(&[0.0, 10.0], &[1.0, 3.0], &[0.7, 0.7]);
        assert_eq!(p.sample_delta_g(5.0, 0.5).unwrap(), 2.0);

        let d = profile(&[0.0, 10.0], &[1.0, 1.0], &[0.0, 0.0]);
        for u in [1e-9, 0.3, 0.9999] {
            assert_eq!(d.sample_delta_g(4.0, u).unwrap(), 1.0);
        }

        // The quantile approximation carries a 1.5e-9 relative error bound,
        // scaled here by sigma.
        let z = profile(&[0.0, 10.0], &[0.0, 0.0], &[1.2250, 1.2250]);
        let got = z.sample_delta_g(5.0, 0.8413).unwrap();
        assert!((got - 1.2250 * 0.9998150936147446).abs() < 1.2250 * 1.5e-9);

        assert!(p.sample_delta_g(5.0, 0.0).is_err());
        assert!(p.sample_delta_g(5.0, 1.0).is_err());
    }

    #[test]
    fn sample_moments_match_profile() {
        let p = profile(&[0.0, 10.0], &[0.5, 2.5], &[1.0, 3.0]);
        let g = 2.5;
        let (mu, sigma) = p.eval(g);
        let mut rng = rng::stream(7, "moments", &[]);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| p.sample_delta_g(g, rng::open_unit(&mut rng)).unwrap())
            .collect();
        let (m, s) = crate::math::mean_population_std(&draws);
        assert!((m - mu).abs() / mu.abs() < 0.01, "mean {m} vs {mu}");
        assert!((s - sigma).abs() / sigma < 0.01, "std {s} vs {sigma}");
    }

    #[test]
    fn pulses_clip_into_bounds() {
        let bounds = ConductanceBounds::new(3.0, 38.0).unwrap();
        let set = profile(&[3.0, 38.0], &[5.0, 5.0], &[0.0, 0.0]);
        let reset = profile(&[3.0, 38.0], &[-5.0, -5.0], &[0.0, 0.0]);
        let table = JumpTablePair::new(set, reset, bounds);

        assert_eq!(table.apply_pulse(Direction::Set, 37.0, 0.5).unwrap(), 38.0);
        assert_eq!(table.apply_pulse(Direction::Reset, 4.0, 0.5).unwrap(), 3.0);

        let interior = profile(&[3.0, 38.0], &[1.5, 1.5], &[0.0, 0.0]);
        let table = JumpTablePair::new(interior.clone(), interior, bounds);
        assert_eq!(table.apply_pulse(Direction::Set, 20.0, 0.5).unwrap(), 21.5);

        assert!(table.apply_pulse(Direction::Set, 2.0, 0.5).is_err());
        assert!(table.apply_pulse(Direction::Set, 38.5, 0.5).is_err());
    }

    #[test]
    fn trajectory_matches_deterministic_recurrence() {
        // sigma = 0 and mu linear in g: mu(g) = a - b*g with a = 2, b = 0.05,
        // expressed through knot values at the bounds.
        let bounds = ConductanceBounds::new(3.0, 38.0).unwrap();
        let (a, b) = (2.0, 0.05);
        let mu = |g: f64| a - b * g;
        let set = profile(
            &[3.0, 38.0],
            &[mu(3.0), mu(38.0)],
            &[0.0, 0.0],
        );
        let table = JumpTablePair::new(set.clone(), set, bounds);
        let mut rng = rng::stream(1, "traj", &[]);
        let trace = table
            .trajectory(Direction::Set, 5.0, 64, &mut rng)
            .unwrap();
        assert_eq!(trace.len(), 65);
        let mut g = 5.0;
        for (k, &got) in trace.iter().enumerate() {
            assert!((got - g).abs() < 1e-12, "pulse {k}");
            g = (g + mu(g)).clamp(3.0, 38.0);
        }
        // mu > 0 throughout [3, 38], so long runs saturate at g_max.
        assert_eq!(*trace.last().unwrap(), 38.0);
    }

    #[test]
    fn trajectory_zero_pulses() {
        let bounds = ConductanceBounds::new(3.0, 38.0).unwrap();
        let p = profile(&[3.0, 38.0], &[0.1, 0.1], &[0.0, 0.0]);
        let table = JumpTablePair::new(p.clone(), p, bounds);
        let mut rng = rng::stream(1, "traj0", &[]);
        assert_eq!(
            table.trajectory(Direction::Set, 9.0, 0, &mut rng).unwrap(),
            vec![9.0]
        );
    }

    #[test]
    fn constructor_rejections() {
        assert!(ConductanceBounds::new(5.0, 5.0).is_err());
        assert!(ConductanceBounds::new(-1.0, 5.0).is_err());
        assert!(ConductanceBounds::new(3.0, f64::INFINITY).is_err());
        assert!(Profile::new(vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(Profile::new(vec![1.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(Profile::new(vec![2.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(Profile::new(vec![1.0, 2.0], vec![0.0, 0.0], vec![0.0, -0.1]).is_err());
        assert!(DeviceDataset::new(vec![], None).is_err());
    }
}
