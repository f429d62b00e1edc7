//! Analytic target device models and synthetic dataset generation.
//!
//! The target model has a mean update profile linear in conductance and a
//! constant standard deviation set by the cycle-to-cycle variation
//! fraction. Synthetic datasets pair a uniform conductance draw with a
//! Gaussian update draw, clipped so the post-update conductance stays in
//! bounds.

use crate::device::{ConductanceBounds, DeviceDataset, JumpTablePair, Profile, Sample};
use crate::error::{Error, Result};
use crate::rng::{open_unit, uniform, Stream};
use serde::{Deserialize, Serialize};

/// Default device window, nS.
pub const DEFAULT_G_MIN: f64 = 3.0;
pub const DEFAULT_G_MAX: f64 = 38.0;

/// Default cycle-to-cycle variation fraction (gives sigma = 1.2250 nS over
/// the default window).
pub const DEFAULT_C2C: f64 = 0.035;

/// Mean-update endpoints (value at g_min, value at g_max) of the default
/// potentiation and depression profiles, nS. Frozen from
/// [`saturating_mean_endpoints`] with curvature 2.4 (potentiation) and 4.88
/// (depression) over 500 levels on the default window; the unit test below
/// re-derives them.
pub const SET_MEAN_ENDPOINTS: (f64, f64) = (0.1843184355755155, 0.016720991228917202);
pub const RESET_MEAN_ENDPOINTS: (f64, f64) = (-0.002602286415865235, -0.3425406885414144);

/// Endpoints of the linear mean-update profile implied by an
/// exponential-saturation programming curve.
///
/// A device driven by identical pulses along
/// `G(P) = B (1 - exp(-c P / L)) + g_min` with `B = range / (1 - exp(-c))`
/// reaches the far bound after exactly `L` pulses, and its per-pulse update
/// satisfies `dG = s (B - (G - g_min))` with `s = 1 - exp(-c / L)`, exactly
/// linear in G. Returns `(dG at g_min, dG at g_max)`.
pub fn saturating_mean_endpoints(curvature: f64, levels: f64, bounds: &ConductanceBounds) -> (f64, f64) {
    let s = 1.0 - (-curvature / levels).exp();
    let b = bounds.range() / (1.0 - (-curvature).exp());
    (s * b, s * (b - bounds.range()))
}

/// Constant update standard deviation implied by a cycle-to-cycle
/// variation fraction: `c2c * (g_max - g_min)`.
pub fn sigma_from_c2c(c2c: f64, bounds: &ConductanceBounds) -> f64 {
    c2c * bounds.range()
}

/// Parameters of an analytic target device model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub bounds: ConductanceBounds,
    /// Cycle-to-cycle variation as a fraction of the conductance range.
    pub c2c: f64,
    /// Scales both mean profiles; the standard deviation is unaltered.
    pub nonlinearity_k: f64,
    /// Mean update at (g_min, g_max) for potentiation, nS; both >= 0.
    pub set_mean_endpoints: (f64, f64),
    /// Mean update at (g_min, g_max) for depression, nS; both <= 0.
    pub reset_mean_endpoints: (f64, f64),
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self {
            bounds: ConductanceBounds {
                g_min: DEFAULT_G_MIN,
                g_max: DEFAULT_G_MAX,
            },
            c2c: DEFAULT_C2C,
            nonlinearity_k: 1.0,
            set_mean_endpoints: SET_MEAN_ENDPOINTS,
            reset_mean_endpoints: RESET_MEAN_ENDPOINTS,
        }
    }
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        ConductanceBounds::new(self.bounds.g_min, self.bounds.g_max)?;
        if !(self.c2c >= 0.0 && self.c2c.is_finite()) {
            return Err(Error::InvalidSpec(format!("c2c must be >= 0, got {}", self.c2c)));
        }
        if !(self.nonlinearity_k > 0.0 && self.nonlinearity_k.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "nonlinearity_k must be > 0, got {}",
                self.nonlinearity_k
            )));
        }
        if self.set_mean_endpoints.0 < 0.0 || self.set_mean_endpoints.1 < 0.0 {
            return Err(Error::InvalidSpec(
                "potentiation mean endpoints must be >= 0".into(),
            ));
        }
        if self.reset_mean_endpoints.0 > 0.0 || self.reset_mean_endpoints.1 > 0.0 {
            return Err(Error::InvalidSpec(
                "depression mean endpoints must be <= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        sigma_from_c2c(self.c2c, &self.bounds)
    }
}

/// Builds the target jump tables: two-knot linear means (scaled by
/// `nonlinearity_k`) and a constant standard deviation.
pub fn build_target_tables(spec: &TargetSpec) -> Result<JumpTablePair> {
    spec.validate()?;
    let sigma = spec.sigma();
    let k = spec.nonlinearity_k;
    let knots = vec![spec.bounds.g_min, spec.bounds.g_max];
    let set = Profile::new(
        knots.clone(),
        vec![k * spec.set_mean_endpoints.0, k * spec.set_mean_endpoints.1],
        vec![sigma, sigma],
    )?;
    let reset = Profile::new(
        knots,
        vec![k * spec.reset_mean_endpoints.0, k * spec.reset_mean_endpoints.1],
        vec![sigma, sigma],
    )?;
    Ok(JumpTablePair::new(set, reset, spec.bounds))
}

/// Draws `n` (G, deltaG) samples from a profile: G uniform over the window,
/// deltaG Gaussian at that G, then clipped so G + deltaG stays in bounds.
///
/// Each sample consumes exactly two variates (one for G, one for deltaG)
/// regardless of sigma, so streams stay aligned across model variants.
pub fn generate_synthetic_data(
    n: usize,
    bounds: &ConductanceBounds,
    profile: &Profile,
    rng: &mut Stream,
) -> Result<DeviceDataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let g = uniform(rng, bounds.g_min, bounds.g_max);
        let mut dg = profile.sample_delta_g(g, open_unit(rng))?;
        // Clip only real excursions so in-bounds updates keep their exact
        // sampled value.
        if !bounds.contains(g + dg) {
            dg = bounds.clip(g + dg) - g;
        }
        samples.push(Sample { g, delta_g: dg });
    }
    DeviceDataset::new(samples, None)
}
