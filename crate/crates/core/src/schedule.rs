//! Noise levels, step grids and denoiser preconditioning.
//!
//! Time and noise level are identified (`σ(t) = t`), so every "time" below is
//! a noise standard deviation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_data: f64,
    /// Grid curvature exponent.
    pub rho: f64,
    pub n_steps: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma_min: 0.002,
            sigma_max: 160.0,
            sigma_data: 0.25,
            rho: 7.0,
            n_steps: 18,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite())
        {
            return Err(Error::arg(format!(
                "need 0 < sigma_min < sigma_max, got {} / {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(Error::arg(format!(
                "sigma_data must be > 0, got {}",
                self.sigma_data
            )));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::arg(format!("rho must be > 0, got {}", self.rho)));
        }
        if self.n_steps == 0 {
            return Err(Error::arg("n_steps must be >= 1"));
        }
        Ok(())
    }

    /// Step grid with `n` intervals: `n + 1` decreasing levels ending at 0.
    ///
    /// Interior points follow `(σ_max^{1/ρ} + i/(n−1)·(σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ`
    /// for `i < n`. With `n = 1` the grid is `[σ_max, 0]`.
    pub fn grid(&self, n: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::arg("number of steps must be >= 1"));
        }
        let mut out = Vec::with_capacity(n + 1);
        if n == 1 {
            out.push(self.sigma_max);
        } else {
            let inv = 1.0 / self.rho;
            let hi = self.sigma_max.powf(inv);
            let lo = self.sigma_min.powf(inv);
            for i in 0..n {
                let s = if i == 0 {
                    self.sigma_max
                } else if i == n - 1 {
                    self.sigma_min
                } else {
                    (hi + i as f64 / (n - 1) as f64 * (lo - hi)).powf(self.rho)
                };
                out.push(s);
            }
        }
        out.push(0.0);
        Ok(out)
    }
}

/// The schedule's own grid (`n_steps` intervals).
pub fn sigma_steps(schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.grid(schedule.n_steps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

/// Input/output scalings of the preconditioned denoiser. `c_noise` uses the
/// natural logarithm.
pub fn precondition_coeffs(sigma: f64, sigma_data: f64) -> Result<Preconditioning> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("sigma must be > 0, got {sigma}")));
    }
    if !(sigma_data > 0.0 && sigma_data.is_finite()) {
        return Err(Error::arg(format!(
            "sigma_data must be > 0, got {sigma_data}"
        )));
    }
    let s2 = sigma * sigma;
    let d2 = sigma_data * sigma_data;
    let total = s2 + d2;
    Ok(Preconditioning {
        c_skip: d2 / total,
        c_out: sigma * sigma_data / total.sqrt(),
        c_in: 1.0 / total.sqrt(),
        c_noise: sigma.ln() / 4.0,
    })
}

/// Log-normal training noise distribution, clamped to `[sigma_min, sigma_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SigmaDistribution {
    /// Mean of `ln σ`.
    pub location: f64,
    /// Standard deviation of `ln σ`.
    pub scale: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for SigmaDistribution {
    fn default() -> Self {
        Self {
            location: -1.2,
            scale: 1.2,
            sigma_min: 0.002,
            sigma_max: 160.0,
        }
    }
}

impl SigmaDistribution {
    pub fn for_schedule(schedule: &NoiseSchedule) -> Self {
        Self {
            sigma_min: schedule.sigma_min,
            sigma_max: schedule.sigma_max,
            ..Self::default()
        }
    }
}

pub fn sample_training_sigma(rng: &mut SeededRng, dist: &SigmaDistribution) -> f64 {
    let z = if dist.scale == 0.0 { 0.0 } else { rng.normal() };
    (dist.location + dist.scale * z)
        .exp()
        .clamp(dist.sigma_min, dist.sigma_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_examples() {
        let c = precondition_coeffs(0.25, 0.25).unwrap();
        assert!((c.c_skip - 0.5).abs() < 1e-15);
        assert!((c.c_out - 0.0625 / 0.125f64.sqrt()).abs() < 1e-15);
        assert!((c.c_out - 0.176777).abs() < 1e-6);
        assert!((c.c_in - 2.828427).abs() < 1e-6);
        assert_eq!(precondition_coeffs(1.0, 0.25).unwrap().c_noise, 0.0);
        assert!(precondition_coeffs(0.0, 0.25).is_err());
        assert!(precondition_coeffs(-1.0, 0.25).is_err());
        assert!(precondition_coeffs(1.0, 0.0).is_err());
    }

    #[test]
    fn limits_of_c_skip() {
        assert!((precondition_coeffs(1e-6, 0.25).unwrap().c_skip - 1.0).abs() < 1e-6);
        assert!(precondition_coeffs(1e6, 0.25).unwrap().c_skip.abs() < 1e-6);
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let s = 0.002 * (160.0f64 / 0.002).powf(i as f64 / 99.0);
            let c = precondition_coeffs(s, 0.25).unwrap().c_skip;
            assert!(c < prev);
            prev = c;
        }
    }

    #[test]
    fn grid_shapes() {
        let s = NoiseSchedule::default();
        assert_eq!(s.grid(1).unwrap(), vec![160.0, 0.0]);
        let g = s.grid(10).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 160.0);
        assert_eq!(g[10], 0.0);
        assert!((g[9] - 0.002).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        assert!(s.grid(0).is_err());
        assert_eq!(sigma_steps(&s).unwrap(), sigma_steps(&s).unwrap());
    }

    #[test]
    fn grid_interior_matches_formula() {
        let s = NoiseSchedule::default();
        let g = s.grid(10).unwrap();
        let hi = 160f64.powf(1.0 / 7.0);
        let lo = 0.002f64.powf(1.0 / 7.0);
        for (i, &v) in g.iter().enumerate().take(9).skip(1) {
            let expect = (hi + i as f64 / 9.0 * (lo - hi)).powf(7.0);
            assert!((v - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn degenerate_lognormal() {
        let dist = SigmaDistribution {
            scale: 0.0,
            ..Default::default()
        };
        let mut rng = SeededRng::new(0);
        for _ in 0..10 {
            assert_eq!(sample_training_sigma(&mut rng, &dist), (-1.2f64).exp());
        }
    }

    #[test]
    fn invalid_schedule() {
        let bad = NoiseSchedule {
            sigma_min: 2.0,
            sigma_max: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
