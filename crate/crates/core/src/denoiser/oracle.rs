//! Exact posterior-mean denoisers for Gaussian and Gaussian-mixture data.
//! These are already `D(x, σ)` and bypass preconditioning.

use serde::{Deserialize, Serialize};

use super::{DenoiseCondition, Denoiser};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Data distribution `N(mean, data_std² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianOracle {
    pub mean: Tensor,
    pub data_std: f64,
}

impl GaussianOracle {
    pub fn new(mean: Tensor, data_std: f64) -> Result<Self> {
        if !(data_std > 0.0 && data_std.is_finite()) {
            return Err(Error::arg(format!("data_std must be > 0, got {data_std}")));
        }
        Ok(Self { mean, data_std })
    }
}

/// `E[y | y + n = x]` for `n ~ N(0, σ² I)`:
/// `(σ_d² x + σ² μ) / (σ_d² + σ²)`, evaluated as `x + σ²/(σ_d²+σ²)·(μ − x)`
/// so that `σ = 0` returns `x` exactly.
pub fn oracle_gaussian_denoise(x: &Tensor, sigma: f64, oracle: &GaussianOracle) -> Result<Tensor> {
    x.check_same_shape(&oracle.mean)?;
    if !(sigma >= 0.0) {
        return Err(Error::arg(format!("sigma must be >= 0, got {sigma}")));
    }
    let d2 = oracle.data_std * oracle.data_std;
    let s2 = sigma * sigma;
    let w = s2 / (d2 + s2);
    x.zip_map(&oracle.mean, |xv, mv| xv + w * (mv - xv))
}

impl Denoiser for GaussianOracle {
    fn denoise(&self, x: &Tensor, sigma: f64, _cond: &DenoiseCondition) -> Result<Tensor> {
        oracle_gaussian_denoise(x, sigma, self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Tensor,
    pub std: f64,
}

/// Isotropic Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmOracle {
    components: Vec<GmmComponent>,
}

impl GmmOracle {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::arg("mixture needs at least one component"))?;
        let shape = first.mean.shape().to_vec();
        for c in &components {
            if !(c.weight > 0.0) || !(c.std > 0.0) {
                return Err(Error::arg(format!(
                    "component weight and std must be positive, got {} / {}",
                    c.weight, c.std
                )));
            }
            if c.mean.shape() != shape.as_slice() {
                return Err(Error::arg("component means differ in shape"));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::arg(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// Posterior component probabilities `r_k(x) ∝ w_k N(x; μ_k, (σ_k² + σ²) I)`,
    /// evaluated with log-sum-exp.
    pub fn responsibilities(&self, x: &Tensor, sigma: f64) -> Result<Vec<f64>> {
        let dim = x.len() as f64;
        let mut logs = Vec::with_capacity(self.components.len());
        for c in &self.components {
            x.check_same_shape(&c.mean)?;
            let var = c.std * c.std + sigma * sigma;
            let dist: f64 = x
                .data()
                .iter()
                .zip(c.mean.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            logs.push(c.weight.ln() - 0.5 * dist / var - 0.5 * dim * var.ln());
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / sum).collect())
    }
}

/// `Σ_k r_k(x) · (σ_k² x + σ² μ_k) / (σ_k² + σ²)`.
pub fn oracle_gmm_denoise(x: &Tensor, sigma: f64, gmm: &GmmOracle) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(Error::arg(format!("sigma must be >= 0, got {sigma}")));
    }
    let resp = gmm.responsibilities(x, sigma)?;
    let mut out = vec![0.0; x.len()];
    let s2 = sigma * sigma;
    for (c, r) in gmm.components.iter().zip(resp) {
        let d2 = c.std * c.std;
        let denom = d2 + s2;
        for ((o, &xv), &mv) in out.iter_mut().zip(x.data()).zip(c.mean.data()) {
            *o += r * (d2 * xv + s2 * mv) / denom;
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

impl Denoiser for GmmOracle {
    fn denoise(&self, x: &Tensor, sigma: f64, _cond: &DenoiseCondition) -> Result<Tensor> {
        oracle_gmm_denoise(x, sigma, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_gaussian, SeededRng};

    fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn gaussian_closed_form() {
        let o = GaussianOracle::new(scalar(0.0), 0.25).unwrap();
        let d = oracle_gaussian_denoise(&scalar(1.0), 0.5, &o).unwrap();
        assert!((d.data()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn gaussian_identity_at_zero_noise_and_fixed_point() {
        let mut rng = SeededRng::new(1);
        let mu = seeded_gaussian(&[2, 3], 1.0, &mut rng).unwrap();
        let x = seeded_gaussian(&[2, 3], 1.0, &mut rng).unwrap();
        let o = GaussianOracle::new(mu.clone(), 0.3).unwrap();
        assert_eq!(oracle_gaussian_denoise(&x, 0.0, &o).unwrap(), x);
        let at_mu = oracle_gaussian_denoise(&mu, 7.0, &o).unwrap();
        for (a, b) in at_mu.data().iter().zip(mu.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(oracle_gaussian_denoise(&scalar(0.0), 1.0, &o).is_err());
    }

    #[test]
    fn single_component_mixture_reduces_to_gaussian() {
        let mut rng = SeededRng::new(2);
        let mu = seeded_gaussian(&[4], 1.0, &mut rng).unwrap();
        let x = seeded_gaussian(&[4], 2.0, &mut rng).unwrap();
        let g = GaussianOracle::new(mu.clone(), 0.4).unwrap();
        let m = GmmOracle::new(vec![GmmComponent {
            weight: 1.0,
            mean: mu,
            std: 0.4,
        }])
        .unwrap();
        for s in [0.0, 0.1, 1.0, 10.0] {
            let a = oracle_gaussian_denoise(&x, s, &g).unwrap();
            let b = oracle_gmm_denoise(&x, s, &m).unwrap();
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_mixture_at_origin() {
        let m = GmmOracle::new(vec![
            GmmComponent {
                weight: 0.5,
                mean: scalar(-1.0),
                std: 0.05,
            },
            GmmComponent {
                weight: 0.5,
                mean: scalar(1.0),
                std: 0.05,
            },
        ])
        .unwrap();
        for s in [0.01, 0.5, 3.0] {
            assert!(oracle_gmm_denoise(&scalar(0.0), s, &m).unwrap().data()[0].abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_mixtures() {
        assert!(GmmOracle::new(vec![]).is_err());
        assert!(GmmOracle::new(vec![GmmComponent {
            weight: 0.7,
            mean: scalar(0.0),
            std: 1.0
        }])
        .is_err());
        assert!(GmmOracle::new(vec![GmmComponent {
            weight: 1.0,
            mean: scalar(0.0),
            std: 0.0
        }])
        .is_err());
    }

    #[test]
    fn responsibilities_sum_to_one() {
        let mut rng = SeededRng::new(3);
        let m = GmmOracle::new(vec![
            GmmComponent {
                weight: 0.2,
                mean: seeded_gaussian(&[3], 1.0, &mut rng).unwrap(),
                std: 0.1,
            },
            GmmComponent {
                weight: 0.3,
                mean: seeded_gaussian(&[3], 1.0, &mut rng).unwrap(),
                std: 0.5,
            },
            GmmComponent {
                weight: 0.5,
                mean: seeded_gaussian(&[3], 1.0, &mut rng).unwrap(),
                std: 1.5,
            },
        ])
        .unwrap();
        for _ in 0..1000 {
            let x = seeded_gaussian(&[3], 5.0, &mut rng).unwrap();
            let s = rng.uniform() * 3.0;
            let r = m.responsibilities(&x, s).unwrap();
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
