use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

/// Portable seeded generator.
///
/// The bit stream is ChaCha8 (counter based, identical on every platform).
/// Uniforms take the top 53 bits of a `u64`. Normals use the Box–Muller
/// transform on consecutive uniform pairs `(u1, u2)`, emitting
/// `r·cos(2πu2)` first and caching `r·sin(2πu2)` for the next request.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
    spare: Option<f64>,
    draw_calls: u64,
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
            draw_calls: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of public draw requests served so far (one per `uniform`,
    /// `normal` or tensor fill, regardless of how many values it produced).
    pub fn draw_calls(&self) -> u64 {
        self.draw_calls
    }

    /// Independent child stream labelled by `label`.
    pub fn fork(&self, label: &str) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, label))
    }

    fn raw_uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * TWO_POW_M53
    }

    fn raw_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - self.raw_uniform();
        let u2 = self.raw_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.draw_calls += 1;
        self.raw_uniform()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.draw_calls += 1;
        ((self.raw_uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.draw_calls += 1;
        self.raw_normal()
    }

    pub fn fill_normal(&mut self, out: &mut [f64], std: f64) {
        self.draw_calls += 1;
        for v in out.iter_mut() {
            *v = std * self.raw_normal();
        }
    }
}

/// i.i.d. `N(0, std²)` tensor.
pub fn seeded_gaussian(shape: &[usize], std: f64, rng: &mut SeededRng) -> Result<Tensor> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::arg(format!(
            "std must be finite and >= 0, got {std}"
        )));
    }
    let mut data = vec![0.0; shape.iter().product()];
    rng.fill_normal(&mut data, std);
    Ok(Tensor::from_parts(shape.to_vec(), data))
}

/// Stable per-purpose seed: first 8 bytes (LE) of SHA-256(master LE ‖ label).
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
