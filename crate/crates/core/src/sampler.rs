//! Stochastic second-order sampler with noise churn, and the two-stage
//! cascade orchestrator.

use serde::{Deserialize, Serialize};

use crate::dataset::{Clip, Normalization};
use crate::denoiser::{DenoiseCondition, Denoiser};
use crate::error::{Error, Result};
use crate::numerics::{seeded_gaussian, SeededRng, Tensor};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerParams {
    pub n_steps: usize,
    pub s_churn: f64,
    pub s_tmin: f64,
    pub s_tmax: f64,
    /// Standard deviation of the churn noise.
    pub s_noise: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            n_steps: 18,
            s_churn: 0.0,
            s_tmin: 0.05,
            s_tmax: 50.0,
            s_noise: 1.003,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::arg("n_steps must be >= 1"));
        }
        if !(self.s_churn >= 0.0 && self.s_churn.is_finite()) {
            return Err(Error::arg(format!(
                "s_churn must be >= 0, got {}",
                self.s_churn
            )));
        }
        if !(self.s_tmin < self.s_tmax) {
            return Err(Error::arg(format!(
                "need s_tmin < s_tmax, got {} / {}",
                self.s_tmin, self.s_tmax
            )));
        }
        if !(self.s_noise > 0.0 && self.s_noise.is_finite()) {
            return Err(Error::arg(format!(
                "s_noise must be > 0, got {}",
                self.s_noise
            )));
        }
        Ok(())
    }
}

/// Churn factor: `min(s_churn / N, √2 − 1)` inside `(s_tmin, s_tmax)`, else 0.
pub fn churn_gamma(t: f64, params: &SamplerParams) -> f64 {
    if t > params.s_tmin && t < params.s_tmax {
        (params.s_churn / params.n_steps as f64).min(std::f64::consts::SQRT_2 - 1.0)
    } else {
        0.0
    }
}

fn slope<D: Denoiser + ?Sized>(
    model: &D,
    x: &Tensor,
    t: f64,
    cond: &DenoiseCondition,
) -> Result<Tensor> {
    let d = model.denoise(x, t, cond)?;
    x.check_same_shape(&d)?;
    Ok(x.zip_map(&d, |xv, dv| (xv - dv) / t).expect("same shape"))
}

/// One step from `t` to `t_next`: optional churn, Euler proposal, and a
/// trapezoidal correction unless `t_next` is zero. The RNG is only touched
/// when churn is active.
pub fn sample_step<D: Denoiser + ?Sized>(
    x: &Tensor,
    t: f64,
    t_next: f64,
    model: &D,
    cond: &DenoiseCondition,
    params: &SamplerParams,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    if !(t > t_next && t_next >= 0.0) {
        return Err(Error::arg(format!(
            "need t > t_next >= 0, got {t} -> {t_next}"
        )));
    }
    let gamma = churn_gamma(t, params);
    let (x_hat, t_hat) = if gamma > 0.0 {
        let t_hat = (gamma + 1.0) * t;
        let eps = seeded_gaussian(x.shape(), params.s_noise, rng)?;
        (x.add_scaled(&eps, (t_hat * t_hat - t * t).sqrt())?, t_hat)
    } else {
        (x.clone(), t)
    };
    let d = slope(model, &x_hat, t_hat, cond)?;
    let h = t_next - t_hat;
    let euler = x_hat.add_scaled(&d, h)?;
    if t_next == 0.0 {
        return Ok(euler);
    }
    let d_next = slope(model, &euler, t_next, cond)?;
    let avg = d.zip_map(&d_next, |a, b| 0.5 * (a + b))?;
    x_hat.add_scaled(&avg, h)
}

/// Full trajectory from `N(0, σ_max²)` noise down to `σ = 0`, in the model
/// domain.
pub fn generate_tensor<D: Denoiser + ?Sized>(
    model: &D,
    cond: &DenoiseCondition,
    shape: &[usize],
    schedule: &NoiseSchedule,
    params: &SamplerParams,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    params.validate()?;
    let grid = schedule.grid(params.n_steps)?;
    let mut x = seeded_gaussian(shape, grid[0], rng)?;
    for (i, w) in grid.windows(2).enumerate() {
        x = sample_step(&x, w[0], w[1], model, cond, params, rng)?;
        if !x.all_finite() {
            return Err(Error::Divergence {
                step: i,
                message: format!("non-finite state at sigma {} -> {}", w[0], w[1]),
            });
        }
    }
    Ok(x)
}

/// [`generate_tensor`] for a `(frames, height, width)` clip, mapped back to
/// 8-bit pixels.
#[allow(clippy::too_many_arguments)]
pub fn generate<D: Denoiser + ?Sized>(
    model: &D,
    cond: &DenoiseCondition,
    shape: [usize; 3],
    schedule: &NoiseSchedule,
    params: &SamplerParams,
    norm: &Normalization,
    fps: u16,
    rng: &mut SeededRng,
) -> Result<Clip> {
    let x = generate_tensor(model, cond, &shape, schedule, params, rng)?;
    Clip::from_tensor(&x, norm, fps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upsampler {
    Nearest,
    #[default]
    Bilinear,
}

/// Resizes every frame of a `(frames, h, w)` tensor to `(frames, out_h, out_w)`.
/// Bilinear uses half-pixel centres with edge clamping.
pub fn upsample(t: &Tensor, out_h: usize, out_w: usize, mode: Upsampler) -> Result<Tensor> {
    let [f, h, w] = *t.shape() else {
        return Err(Error::arg(format!(
            "expected (frames, height, width), got {:?}",
            t.shape()
        )));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::arg("output size must be positive"));
    }
    let src = t.data();
    let mut out = Vec::with_capacity(f * out_h * out_w);
    for fi in 0..f {
        let frame = &src[fi * h * w..(fi + 1) * h * w];
        for i in 0..out_h {
            for j in 0..out_w {
                let v = match mode {
                    Upsampler::Nearest => frame[(i * h / out_h) * w + j * w / out_w],
                    Upsampler::Bilinear => {
                        let (i0, i1, a) = lerp_index(i, h, out_h);
                        let (j0, j1, b) = lerp_index(j, w, out_w);
                        let top = frame[i0 * w + j0] * (1.0 - b) + frame[i0 * w + j1] * b;
                        let bot = frame[i1 * w + j0] * (1.0 - b) + frame[i1 * w + j1] * b;
                        top * (1.0 - a) + bot * a
                    }
                };
                out.push(v);
            }
        }
    }
    Ok(Tensor::from_parts(vec![f, out_h, out_w], out))
}

fn lerp_index(o: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let pos = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, pos - lo as f64)
}

/// Spatial average pooling by an integer factor.
pub fn downsample_box(t: &Tensor, factor: usize) -> Result<Tensor> {
    let [f, h, w] = *t.shape() else {
        return Err(Error::arg(format!(
            "expected (frames, height, width), got {:?}",
            t.shape()
        )));
    };
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::arg(format!("{h}×{w} not divisible by {factor}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let src = t.data();
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; f * oh * ow];
    for fi in 0..f {
        for i in 0..h {
            for j in 0..w {
                out[(fi * oh + i / factor) * ow + j / factor] += src[(fi * h + i) * w + j] * norm;
            }
        }
    }
    Ok(Tensor::from_parts(vec![f, oh, ow], out))
}

pub struct CascadeStage<'a> {
    pub model: &'a dyn Denoiser,
    /// Square output resolution.
    pub resolution: usize,
}

pub struct CascadeSpec<'a> {
    pub stages: Vec<CascadeStage<'a>>,
    pub upsampler: Upsampler,
}

impl CascadeSpec<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::arg("cascade needs at least one stage"));
        }
        if self.stages.iter().any(|s| s.resolution == 0) {
            return Err(Error::arg("stage resolution must be positive"));
        }
        if self
            .stages
            .windows(2)
            .any(|w| w[1].resolution < w[0].resolution)
        {
            return Err(Error::arg("cascade resolutions must be non-decreasing"));
        }
        Ok(())
    }
}

/// Runs every stage in order. Stage `s ≥ 1` sees the previous output,
/// upsampled to its resolution, as an extra input channel. Returns all stage
/// outputs; the last one is the result.
pub fn cascade_generate(
    cascade: &CascadeSpec,
    cond: &DenoiseCondition,
    frames: usize,
    schedule: &NoiseSchedule,
    params: &SamplerParams,
    rng: &mut SeededRng,
) -> Result<Vec<Tensor>> {
    cascade.validate()?;
    let mut outputs: Vec<Tensor> = Vec::with_capacity(cascade.stages.len());
    for stage in &cascade.stages {
        let r = stage.resolution;
        let prev = match outputs.last() {
            Some(v) => Some(upsample(v, r, r, cascade.upsampler)?),
            None => None,
        };
        let stage_cond = DenoiseCondition {
            prev_stage: prev.as_ref(),
            ..*cond
        };
        outputs.push(generate_tensor(
            stage.model,
            &stage_cond,
            &[frames, r, r],
            schedule,
            params,
            rng,
        )?);
    }
    Ok(outputs)
}
