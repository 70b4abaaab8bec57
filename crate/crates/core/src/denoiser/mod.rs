//! Denoising functions `D(x, σ)`.
//!
//! [`GaussianOracle`] and [`GmmOracle`] are exact posterior means used as
//! verification oracles. [`LearnedDenoiser`] wraps the network `F_θ` with
//! preconditioning:
//!
//! `D(x; σ, c) = c_skip(σ)·x + c_out(σ)·F_θ(c_in(σ)·x; c_noise(σ), c)`
//!
//! where `c` is the audio stream alone (mode A) or the fused audio-text
//! features (mode A+T).

pub mod checkpoint;
pub(crate) mod layers;
mod network;
mod oracle;

use serde::{Deserialize, Serialize};

pub use network::{Architecture, ForwardCache, NetInput, Network, ParamLayout};
pub use oracle::{
    oracle_gaussian_denoise, oracle_gmm_denoise, GaussianOracle, GmmComponent, GmmOracle,
};

use crate::conditioning::ConditionBundle;
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};
use crate::schedule::{precondition_coeffs, NoiseSchedule, Preconditioning};

/// What a denoiser may condition on besides `(x, σ)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenoiseCondition<'a> {
    pub bundle: Option<&'a ConditionBundle>,
    /// Previous cascade output, resampled to the shape of `x`.
    pub prev_stage: Option<&'a Tensor>,
    /// Absolute index of the first frame of `x` within its clip.
    pub frame_offset: usize,
}

impl<'a> DenoiseCondition<'a> {
    pub fn with_bundle(bundle: &'a ConditionBundle) -> Self {
        Self {
            bundle: Some(bundle),
            ..Self::default()
        }
    }
}

pub trait Denoiser {
    fn denoise(&self, x: &Tensor, sigma: f64, cond: &DenoiseCondition) -> Result<Tensor>;
}

/// Adapts a closure into a [`Denoiser`].
pub struct FnDenoiser<F>(pub F);

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&Tensor, f64) -> Result<Tensor>,
{
    fn denoise(&self, x: &Tensor, sigma: f64, _cond: &DenoiseCondition) -> Result<Tensor> {
        (self.0)(x, sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionMode {
    /// Audio-only conditioning.
    #[serde(rename = "A")]
    Audio,
    /// Audio and text fused by cross-attention.
    #[serde(rename = "A+T")]
    AudioText,
}

impl ConditionMode {
    pub fn label(&self) -> &'static str {
        match self {
            ConditionMode::Audio => "A",
            ConditionMode::AudioText => "A+T",
        }
    }

    pub fn uses_text(&self) -> bool {
        matches!(self, ConditionMode::AudioText)
    }
}

impl std::str::FromStr for ConditionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(ConditionMode::Audio),
            "A+T" | "a+t" | "AT" => Ok(ConditionMode::AudioText),
            other => Err(Error::arg(format!(
                "unknown condition mode {other:?} (expected A or A+T)"
            ))),
        }
    }
}

/// `F_θ` plus preconditioning constants.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedDenoiser {
    network: Network,
    schedule: NoiseSchedule,
    mode: ConditionMode,
}

impl LearnedDenoiser {
    pub fn new(network: Network, schedule: NoiseSchedule, mode: ConditionMode) -> Result<Self> {
        schedule.validate()?;
        if network.architecture().fusion != mode.uses_text() {
            return Err(Error::arg(format!(
                "architecture fusion flag {} inconsistent with mode {}",
                network.architecture().fusion,
                mode.label()
            )));
        }
        Ok(Self {
            network,
            schedule,
            mode,
        })
    }

    /// Fresh model; `arch.fusion` is set from `mode`.
    pub fn init(
        mut arch: Architecture,
        schedule: NoiseSchedule,
        mode: ConditionMode,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        arch.fusion = mode.uses_text();
        Self::new(Network::init(arch, rng)?, schedule, mode)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn mode(&self) -> ConditionMode {
        self.mode
    }

    fn build_input(
        &self,
        x: &Tensor,
        scale: f64,
        cond: &DenoiseCondition,
    ) -> Result<(Vec<f64>, [usize; 3])> {
        let [f, h, w] = *x.shape() else {
            return Err(Error::arg(format!(
                "expected (frames, height, width), got {:?}",
                x.shape()
            )));
        };
        let extra = self.network.architecture().in_channels - 1;
        let mut input: Vec<f64> = x.data().iter().map(|v| v * scale).collect();
        match (extra, cond.prev_stage) {
            (0, None) => {}
            (1, Some(prev)) => {
                x.check_same_shape(prev)?;
                input.extend_from_slice(prev.data());
            }
            (0, Some(_)) => {
                return Err(Error::Condition(
                    "single-stage model given a previous-stage input".into(),
                ))
            }
            _ => {
                return Err(Error::Condition(format!(
                    "model expects {extra} previous-stage channel(s)"
                )))
            }
        }
        Ok((input, [f, h, w]))
    }

    fn tokens<'a>(
        &self,
        cond: &DenoiseCondition<'a>,
        frames: usize,
    ) -> Result<(&'a Tensor, Option<&'a Tensor>)> {
        let bundle = cond
            .bundle
            .ok_or_else(|| Error::Condition("learned denoiser needs a condition bundle".into()))?;
        if bundle.frames() != frames {
            return Err(Error::Condition(format!(
                "condition has {} frames, input has {frames}",
                bundle.frames()
            )));
        }
        let text = match self.mode {
            ConditionMode::Audio => None,
            ConditionMode::AudioText => Some(bundle.text_seq.as_ref().ok_or_else(|| {
                Error::Condition("audio-textual model requires a text stream".into())
            })?),
        };
        Ok((&bundle.audio_seq, text))
    }

    /// Raw `F_θ(x_in; c_noise, cond)` on an already scaled input.
    pub fn network_forward(
        &self,
        x_in: &Tensor,
        c_noise: f64,
        cond: &DenoiseCondition,
    ) -> Result<Tensor> {
        let (input, [f, h, w]) = self.build_input(x_in, 1.0, cond)?;
        let (audio, text) = self.tokens(cond, f)?;
        let (out, _) = self.network.forward(&NetInput {
            x: &input,
            frames: f,
            height: h,
            width: w,
            c_noise,
            audio,
            text,
            frame_offset: cond.frame_offset,
        })?;
        Ok(Tensor::from_parts(vec![f, h, w], out))
    }

    fn forward_cached(
        &self,
        x: &Tensor,
        sigma: f64,
        cond: &DenoiseCondition,
    ) -> Result<(Tensor, ForwardCache, Preconditioning)> {
        let pc = precondition_coeffs(sigma, self.schedule.sigma_data)?;
        let (input, [f, h, w]) = self.build_input(x, pc.c_in, cond)?;
        let (audio, text) = self.tokens(cond, f)?;
        let (out, cache) = self.network.forward(&NetInput {
            x: &input,
            frames: f,
            height: h,
            width: w,
            c_noise: pc.c_noise,
            audio,
            text,
            frame_offset: cond.frame_offset,
        })?;
        let d = x
            .data()
            .iter()
            .zip(&out)
            .map(|(xv, fv)| pc.c_skip * xv + pc.c_out * fv)
            .collect();
        Ok((Tensor::from_parts(vec![f, h, w], d), cache, pc))
    }

    /// `‖D(y + n, σ) − y‖²` and its gradient with respect to all parameters.
    pub fn loss_and_grad(
        &self,
        clean: &Tensor,
        noise: &Tensor,
        sigma: f64,
        cond: &DenoiseCondition,
    ) -> Result<(f64, Vec<f64>)> {
        let noisy = clean.add(noise)?;
        let (d, cache, pc) = self.forward_cached(&noisy, sigma, cond)?;
        let resid: Vec<f64> = d
            .data()
            .iter()
            .zip(clean.data())
            .map(|(a, b)| a - b)
            .collect();
        let loss = resid.iter().map(|r| r * r).sum();
        let d_out: Vec<f64> = resid.iter().map(|r| 2.0 * pc.c_out * r).collect();
        Ok((loss, self.network.backward(&cache, &d_out)))
    }

    /// `‖D(y + n, σ) − y‖²` without gradients.
    pub fn loss(
        &self,
        clean: &Tensor,
        noise: &Tensor,
        sigma: f64,
        cond: &DenoiseCondition,
    ) -> Result<f64> {
        let noisy = clean.add(noise)?;
        let d = self.denoise(&noisy, sigma, cond)?;
        Ok(d.sub(clean)?.norm_sq())
    }
}

impl Denoiser for LearnedDenoiser {
    fn denoise(&self, x: &Tensor, sigma: f64, cond: &DenoiseCondition) -> Result<Tensor> {
        if !(sigma > 0.0) {
            return Err(Error::arg(format!(
                "learned denoiser needs sigma > 0, got {sigma}"
            )));
        }
        Ok(self.forward_cached(x, sigma, cond)?.0)
    }
}

/// Preconditioned denoise; oracles bypass preconditioning since they are
/// already exact `D` functions.
pub fn denoise<D: Denoiser + ?Sized>(
    model: &D,
    x: &Tensor,
    sigma: f64,
    cond: &DenoiseCondition,
) -> Result<Tensor> {
    model.denoise(x, sigma, cond)
}
