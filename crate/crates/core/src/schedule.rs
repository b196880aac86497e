//! Variance-preserving noise schedule `z_t = sqrt(1 - sigma_t^2) z + sigma_t eps`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invalid;

/// Noise levels `sigma_0..=sigma_T`, non-decreasing from exactly 0 to exactly 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

impl TryFrom<Vec<f64>> for NoiseSchedule {
    type Error = Error;
    fn try_from(sigmas: Vec<f64>) -> Result<Self> {
        NoiseSchedule::from_sigmas(sigmas)
    }
}

impl From<NoiseSchedule> for Vec<f64> {
    fn from(s: NoiseSchedule) -> Self {
        s.sigmas
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear_vp(1000, 1e-4, 0.02)
    }
}

impl NoiseSchedule {
    /// Linear-beta DDPM schedule with `sigma_t = sqrt(1 - prod_{s<=t} (1 - beta_s))`.
    ///
    /// The terminal level is pinned to 1 so that `z_T` is pure noise.
    pub fn linear_vp(steps: usize, beta_start: f64, beta_end: f64) -> Self {
        assert!(steps >= 1, "schedule needs at least one step");
        let mut sigmas = Vec::with_capacity(steps + 1);
        sigmas.push(0.0);
        let mut alpha_bar = 1.0;
        for i in 0..steps {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            let beta = beta_start + frac * (beta_end - beta_start);
            alpha_bar *= 1.0 - beta;
            sigmas.push(libm::sqrt(1.0 - alpha_bar));
        }
        sigmas[steps] = 1.0;
        Self { sigmas }
    }

    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(invalid!("schedule needs sigma_0 and sigma_T"));
        }
        if sigmas[0].abs() > 1e-6 || (sigmas[sigmas.len() - 1] - 1.0).abs() > 1e-6 {
            return Err(invalid!("schedule must start at 0 and end at 1"));
        }
        if sigmas.iter().any(|s| !(0.0..=1.0).contains(s)) || sigmas.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid!("schedule must be monotone within [0, 1]"));
        }
        Ok(Self { sigmas })
    }

    /// `T`, the index of the last noise level.
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    /// `sqrt(1 - sigma_t^2)`.
    pub fn signal(&self, t: usize) -> f64 {
        let s = self.sigmas[t];
        libm::sqrt((1.0 - s * s).max(0.0))
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        let s = self.sigmas[t];
        1.0 - s * s
    }

    pub fn add_noise(&self, z: &[f32], t: usize, eps: &[f32]) -> Result<Vec<f32>> {
        if t > self.steps() {
            return Err(Error::Index { index: t, last: self.steps() });
        }
        if z.len() != eps.len() {
            return Err(Error::Shape(alloc::format!("latent has {} values, noise {}", z.len(), eps.len())));
        }
        let (a, s) = (self.signal(t), self.sigma(t));
        Ok(z.iter().zip(eps).map(|(&z, &e)| (a * f64::from(z) + s * f64::from(e)) as f32).collect())
    }

    /// Descending DDIM time steps `T - ratio, ..., 1` (`ratio = T / steps`), offset so
    /// the first model call never sees the degenerate `sigma_T = 1` level.
    pub fn sampling_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        let total = self.steps();
        if steps == 0 || steps > total {
            return Err(invalid!("sampling steps must be in 1..={total}, got {steps}"));
        }
        let ratio = total / steps;
        Ok((0..steps).rev().map(|i| i * ratio + 1).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn endpoints_and_monotonicity() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.sigma(0), 0.0);
        assert!((s.sigma(1000) - 1.0).abs() <= 1e-6);
        assert!(s.sigmas().windows(2).all(|w| w[1] >= w[0]));
        assert!((0..=1000).all(|t| s.signal(t).is_finite()));
        assert!(NoiseSchedule::from_sigmas(vec![0.0, 0.7, 0.5, 1.0]).is_err());
        assert!(NoiseSchedule::from_sigmas(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn add_noise_endpoints_are_exact() {
        let s = NoiseSchedule::default();
        let z = [0.3f32, -1.2, 2.5];
        let e = [-0.7f32, 0.1, 1.9];
        assert_eq!(s.add_noise(&z, 0, &e).unwrap(), z);
        assert_eq!(s.add_noise(&z, 1000, &e).unwrap(), e);
        assert!(matches!(s.add_noise(&z, 1001, &e), Err(Error::Index { .. })));
        assert!(matches!(s.add_noise(&z, 3, &e[..2]), Err(Error::Shape(_))));
    }

    #[test]
    fn add_noise_hand_value() {
        let s = NoiseSchedule::from_sigmas(vec![0.0, 0.6, 1.0]).unwrap();
        let out = s.add_noise(&[1.0; 4], 1, &[-0.5; 4]).unwrap();
        // 0.8 * 1.0 + 0.6 * -0.5
        assert!(out.iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn late_noise_variance_matches_eps() {
        use crate::rng;
        let s = NoiseSchedule::default();
        let mut r = rng::stream(3, 99, 0);
        let z: Vec<f32> = (0..1000).map(|_| rng::normal(&mut r) as f32).collect();
        let e: Vec<f32> = (0..1000).map(|_| rng::normal(&mut r) as f32).collect();
        let var = |v: &[f32]| {
            let m = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
            v.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        for t in [900, 950, 990, 1000] {
            let zt = s.add_noise(&z, t, &e).unwrap();
            let ratio = var(&zt) / var(&e);
            assert!((ratio - 1.0).abs() <= 0.05, "t={t}: {ratio}");
        }
    }

    #[test]
    fn ddim_timesteps() {
        let s = NoiseSchedule::default();
        let ts = s.sampling_timesteps(50).unwrap();
        assert_eq!(ts.len(), 50);
        assert_eq!((ts[0], ts[49]), (981, 1));
        assert!(s.sampling_timesteps(0).is_err());
    }
}
