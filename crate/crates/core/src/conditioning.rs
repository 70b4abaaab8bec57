//! Condition streams: a speaker-entangled per-frame "audio" embedding, a
//! speaker-free per-token "text" embedding, and their cross-attention fusion.
//!
//! Both encoders are deterministic stand-ins for pretrained models: the audio
//! encoder is a fixed random projection of `one_hot(symbol) ⊕ speaker`, the
//! text encoder a fixed random lookup table.

use serde::{Deserialize, Serialize};

use crate::denoiser::layers::{
    attention_backward, attention_forward, AttnCache, AttnDims, AttnWeights,
};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, seeded_gaussian, SeededRng, Tensor};

/// Number of speaker features appended to the audio encoder input.
pub const SPEAKER_FEATURES: usize = 3;

/// Per-speaker ("individual") articulation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerParams {
    pub speaker_id: u32,
    /// Contour shift as a fraction of image height, in `[-0.1, 0.1]`.
    pub vertical_offset: f64,
    /// Bump amplitude multiplier, in `[0.8, 1.2]`.
    pub amplitude_gain: f64,
    /// Ridge peak brightness as a fraction of 255, in `[0.7, 1.0]`.
    pub brightness: f64,
}

impl SpeakerParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (-0.1..=0.1).contains(&self.vertical_offset)
            && (0.8..=1.2).contains(&self.amplitude_gain)
            && (0.7..=1.0).contains(&self.brightness);
        if !ok {
            return Err(Error::arg(format!(
                "speaker parameters out of range: {self:?}"
            )));
        }
        Ok(())
    }

    /// Deterministic speaker drawn uniformly from the valid ranges.
    pub fn generate(speaker_id: u32, master_seed: u64) -> Self {
        let mut rng = SeededRng::new(derive_seed(master_seed, &format!("speaker/{speaker_id}")));
        Self {
            speaker_id,
            vertical_offset: rng.uniform_range(-0.1, 0.1),
            amplitude_gain: rng.uniform_range(0.8, 1.2),
            brightness: rng.uniform_range(0.7, 1.0),
        }
    }

    /// Centred, roughly unit-scale feature vector fed to the audio projection.
    pub fn features(&self) -> [f64; SPEAKER_FEATURES] {
        [
            10.0 * self.vertical_offset,
            5.0 * (self.amplitude_gain - 1.0),
            (self.brightness - 0.85) / 0.075,
        ]
    }
}

/// Condition streams for one clip (or window).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionBundle {
    /// `T_a × d` per-frame embeddings.
    pub audio_seq: Tensor,
    /// `T_t × d` per-token embeddings.
    pub text_seq: Option<Tensor>,
    /// `T_a × d` fused features; present only after fusion ran.
    pub fused: Option<Tensor>,
}

impl ConditionBundle {
    pub fn new(audio_seq: Tensor, text_seq: Option<Tensor>) -> Result<Self> {
        let bundle = Self {
            audio_seq,
            text_seq,
            fused: None,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn frames(&self) -> usize {
        self.audio_seq.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.audio_seq.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let [_, d] = *self.audio_seq.shape() else {
            return Err(Error::arg(format!(
                "audio_seq must be 2-D, got {:?}",
                self.audio_seq.shape()
            )));
        };
        if let Some(text) = &self.text_seq {
            match *text.shape() {
                [t, dt] if t >= 1 && dt == d => {}
                _ => {
                    return Err(Error::arg(format!(
                        "text_seq shape {:?} incompatible with d={d}",
                        text.shape()
                    )))
                }
            }
        }
        if let Some(fused) = &self.fused {
            if self.text_seq.is_none() {
                return Err(Error::arg("fused features present without a text stream"));
            }
            fused.check_same_shape(&self.audio_seq)?;
        }
        Ok(())
    }

    /// Frames `[start, start + len)` of the audio stream; the text stream is
    /// utterance-level and kept whole.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        let (t, d) = (self.frames(), self.dim());
        if start + len > t || len == 0 {
            return Err(Error::arg(format!(
                "window {start}+{len} outside {t} frames"
            )));
        }
        let slice = |x: &Tensor| {
            Tensor::from_parts(
                vec![len, d],
                x.data()[start * d..(start + len) * d].to_vec(),
            )
        };
        Ok(Self {
            audio_seq: slice(&self.audio_seq),
            text_seq: self.text_seq.clone(),
            fused: self.fused.as_ref().map(slice),
        })
    }

    pub fn without_text(&self) -> Self {
        Self {
            audio_seq: self.audio_seq.clone(),
            text_seq: None,
            fused: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Symbol inventory size `P`.
    pub n_symbols: usize,
    /// Embedding width `d`.
    pub dim: usize,
    /// Seed of both fixed codebooks (projection and lookup table).
    pub codebook_seed: u64,
    pub jitter_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_symbols: 10,
            dim: 32,
            codebook_seed: 0x5eed_c0de,
            jitter_std: 0.01,
        }
    }
}

/// The fixed `(P + 3) × d` audio projection.
pub fn audio_projection(cfg: &EncoderConfig) -> Tensor {
    let mut rng = SeededRng::new(derive_seed(cfg.codebook_seed, "audio-projection"));
    seeded_gaussian(&[cfg.n_symbols + SPEAKER_FEATURES, cfg.dim], 1.0, &mut rng)
        .expect("unit std is valid")
}

/// The fixed `P × d` text lookup table.
pub fn text_table(cfg: &EncoderConfig) -> Tensor {
    let mut rng = SeededRng::new(derive_seed(cfg.codebook_seed, "text-table"));
    seeded_gaussian(&[cfg.n_symbols, cfg.dim], 1.0, &mut rng).expect("unit std is valid")
}

fn check_symbols(symbols: &[u32], n_symbols: usize) -> Result<()> {
    if let Some(&s) = symbols.iter().find(|&&s| s as usize >= n_symbols) {
        return Err(Error::arg(format!("symbol {s} outside [0, {n_symbols})")));
    }
    if symbols.is_empty() {
        return Err(Error::arg("empty symbol sequence"));
    }
    Ok(())
}

/// Per-frame audio-like embedding: `[one_hot(symbol) ⊕ speaker features] · A`
/// plus `N(0, jitter_std²)` jitter seeded by `clip_seed`.
pub fn encode_audio_like(
    frame_symbols: &[u32],
    speaker: &SpeakerParams,
    cfg: &EncoderConfig,
    clip_seed: u64,
) -> Result<Tensor> {
    check_symbols(frame_symbols, cfg.n_symbols)?;
    speaker.validate()?;
    let proj = audio_projection(cfg);
    let d = cfg.dim;
    let p = proj.data();
    let sf = speaker.features();
    let mut out = vec![0.0; frame_symbols.len() * d];
    let mut rng = SeededRng::new(derive_seed(clip_seed, "audio-jitter"));
    for (t, &s) in frame_symbols.iter().enumerate() {
        let row = &mut out[t * d..(t + 1) * d];
        row.copy_from_slice(&p[s as usize * d..(s as usize + 1) * d]);
        for (k, &f) in sf.iter().enumerate() {
            let prow = &p[(cfg.n_symbols + k) * d..(cfg.n_symbols + k + 1) * d];
            for (o, &w) in row.iter_mut().zip(prow) {
                *o += f * w;
            }
        }
    }
    if cfg.jitter_std > 0.0 {
        let mut jitter = vec![0.0; out.len()];
        rng.fill_normal(&mut jitter, cfg.jitter_std);
        for (o, j) in out.iter_mut().zip(jitter) {
            *o += j;
        }
    }
    Tensor::new(vec![frame_symbols.len(), d], out)
}

/// Per-token text-like embedding: a plain table lookup, no speaker input.
pub fn encode_text_like(symbols: &[u32], cfg: &EncoderConfig) -> Result<Tensor> {
    check_symbols(symbols, cfg.n_symbols)?;
    let table = text_table(cfg);
    let d = cfg.dim;
    let mut out = Vec::with_capacity(symbols.len() * d);
    for &s in symbols {
        out.extend_from_slice(&table.data()[s as usize * d..(s as usize + 1) * d]);
    }
    Tensor::new(vec![symbols.len(), d], out)
}

/// `d × d` projections of the fusion block.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub dim: usize,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

impl FusionWeights {
    /// Random `N(0, 1/d)` projections with a zero output projection.
    pub fn init(dim: usize, rng: &mut SeededRng) -> Self {
        let std = 1.0 / (dim as f64).sqrt();
        let mut draw = || {
            let mut v = vec![0.0; dim * dim];
            rng.fill_normal(&mut v, std);
            v
        };
        Self {
            dim,
            wq: draw(),
            wk: draw(),
            wv: draw(),
            wo: vec![0.0; dim * dim],
        }
    }

    pub fn from_slices(dim: usize, wq: &[f64], wk: &[f64], wv: &[f64], wo: &[f64]) -> Result<Self> {
        for w in [wq, wk, wv, wo] {
            if w.len() != dim * dim {
                return Err(Error::arg(format!(
                    "fusion weight has {} values, need {}",
                    w.len(),
                    dim * dim
                )));
            }
        }
        Ok(Self {
            dim,
            wq: wq.to_vec(),
            wk: wk.to_vec(),
            wv: wv.to_vec(),
            wo: wo.to_vec(),
        })
    }

    fn as_attn(&self) -> AttnWeights<'_> {
        AttnWeights {
            wq: &self.wq,
            wk: &self.wk,
            wv: &self.wv,
            wo: &self.wo,
        }
    }
}

pub(crate) struct FusionCache {
    attn: AttnCache,
}

/// Parameter gradients of the fusion block plus the gradient reaching the
/// audio stream.
pub(crate) struct FusionGrads {
    /// Only the tests inspect this; audio tokens are not trainable.
    #[cfg_attr(not(test), allow(dead_code))]
    pub audio: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

fn fusion_dims(audio: &Tensor, text: &Tensor, d: usize) -> Result<AttnDims> {
    let (ta, da) = match *audio.shape() {
        [t, d] => (t, d),
        _ => return Err(Error::arg("audio_seq must be 2-D")),
    };
    let (tt, dt) = match *text.shape() {
        [t, d] => (t, d),
        _ => return Err(Error::arg("text_seq must be 2-D")),
    };
    if da != d || dt != d {
        return Err(Error::arg(format!(
            "dimension mismatch: audio d={da}, text d={dt}, weights d={d}"
        )));
    }
    Ok(AttnDims {
        n: ta,
        m: tt,
        q_in: d,
        k_in: d,
        v_in: d,
        head: d,
        out: d,
    })
}

pub(crate) fn fuse_forward(
    audio: &Tensor,
    text: &Tensor,
    w: &FusionWeights,
) -> Result<(Vec<f64>, FusionCache)> {
    let dims = fusion_dims(audio, text, w.dim)?;
    let (delta, attn) =
        attention_forward(dims, audio.data(), text.data(), text.data(), &w.as_attn());
    let fused = audio
        .data()
        .iter()
        .zip(&delta)
        .map(|(a, b)| a + b)
        .collect();
    Ok((fused, FusionCache { attn }))
}

pub(crate) fn fuse_backward(
    cache: &FusionCache,
    w: &FusionWeights,
    d_fused: &[f64],
) -> FusionGrads {
    let g = attention_backward(&cache.attn, &w.as_attn(), d_fused);
    let audio = d_fused.iter().zip(&g.q_src).map(|(a, b)| a + b).collect();
    FusionGrads {
        audio,
        wq: g.wq,
        wk: g.wk,
        wv: g.wv,
        wo: g.wo,
    }
}

/// `fused = audio + softmax((audio·Wq)(text·Wk)ᵀ/√d)·(text·Wv)·Wo`.
///
/// Audio is the query stream so the result stays aligned to video frames.
pub fn cross_attention_fuse(
    audio: &Tensor,
    text: &Tensor,
    weights: &FusionWeights,
) -> Result<Tensor> {
    let (fused, _) = fuse_forward(audio, text, weights)?;
    Ok(Tensor::from_parts(audio.shape().to_vec(), fused))
}

/// Runs fusion and stores the result on the bundle.
pub fn fuse_bundle(bundle: &ConditionBundle, weights: &FusionWeights) -> Result<ConditionBundle> {
    let text = bundle
        .text_seq
        .as_ref()
        .ok_or_else(|| Error::Condition("fusion requires a text stream".into()))?;
    let fused = cross_attention_fuse(&bundle.audio_seq, text, weights)?;
    Ok(ConditionBundle {
        audio_seq: bundle.audio_seq.clone(),
        text_seq: Some(text.clone()),
        fused: Some(fused),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{central_difference, max_relative_error};

    fn speaker(offset: f64) -> SpeakerParams {
        SpeakerParams {
            speaker_id: 1,
            vertical_offset: offset,
            amplitude_gain: 1.0,
            brightness: 0.9,
        }
    }

    #[test]
    fn audio_is_deterministic_and_speaker_dependent() {
        let cfg = EncoderConfig::default();
        let syms = [0, 1, 1, 2, 3];
        let a = encode_audio_like(&syms, &speaker(0.0), &cfg, 9).unwrap();
        let b = encode_audio_like(&syms, &speaker(0.0), &cfg, 9).unwrap();
        assert_eq!(a, b);
        let c = encode_audio_like(&syms, &speaker(0.05), &cfg, 9).unwrap();
        assert!(a.sub(&c).unwrap().norm() > 0.0);
    }

    #[test]
    fn audio_without_jitter_is_exact_projection() {
        let cfg = EncoderConfig {
            jitter_std: 0.0,
            ..Default::default()
        };
        let sp = speaker(-0.04);
        let syms = [4u32, 7];
        let a = encode_audio_like(&syms, &sp, &cfg, 1).unwrap();
        let proj = audio_projection(&cfg);
        let rows = cfg.n_symbols + SPEAKER_FEATURES;
        for (t, &s) in syms.iter().enumerate() {
            let mut u = vec![0.0; rows];
            u[s as usize] = 1.0;
            u[cfg.n_symbols..].copy_from_slice(&sp.features());
            for j in 0..cfg.dim {
                let expect: f64 = (0..rows).map(|r| u[r] * proj.data()[r * cfg.dim + j]).sum();
                assert!((a.data()[t * cfg.dim + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoders_reject_out_of_range_symbols() {
        let cfg = EncoderConfig::default();
        assert!(matches!(
            encode_text_like(&[10], &cfg),
            Err(Error::Argument(_))
        ));
        assert!(encode_audio_like(&[0, 99], &speaker(0.0), &cfg, 0).is_err());
    }

    #[test]
    fn text_is_lookup_without_speaker() {
        let cfg = EncoderConfig::default();
        let t = encode_text_like(&[3, 5, 3], &cfg).unwrap();
        let d = cfg.dim;
        assert_eq!(t.data()[..d], t.data()[2 * d..]);
    }

    fn random_weights(d: usize, seed: u64) -> FusionWeights {
        let mut rng = SeededRng::new(seed);
        let mut w = FusionWeights::init(d, &mut rng);
        rng.fill_normal(&mut w.wo, 0.3);
        w
    }

    #[test]
    fn single_text_token_broadcasts_value() {
        let d = 4;
        let mut rng = SeededRng::new(1);
        let audio = seeded_gaussian(&[3, d], 1.0, &mut rng).unwrap();
        let text = seeded_gaussian(&[1, d], 1.0, &mut rng).unwrap();
        let w = random_weights(d, 2);
        let fused = cross_attention_fuse(&audio, &text, &w).unwrap();
        // v·Wo with v = text·Wv
        let v: Vec<f64> = (0..d)
            .map(|j| (0..d).map(|k| text.data()[k] * w.wv[k * d + j]).sum())
            .collect();
        let vo: Vec<f64> = (0..d)
            .map(|j| (0..d).map(|k| v[k] * w.wo[k * d + j]).sum())
            .collect();
        for t in 0..3 {
            for j in 0..d {
                let expect = audio.data()[t * d + j] + vo[j];
                assert!((fused.data()[t * d + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_projection_is_identity() {
        let d = 6;
        let mut rng = SeededRng::new(3);
        let audio = seeded_gaussian(&[5, d], 1.0, &mut rng).unwrap();
        let text = seeded_gaussian(&[4, d], 1.0, &mut rng).unwrap();
        let w = FusionWeights::init(d, &mut rng);
        assert_eq!(cross_attention_fuse(&audio, &text, &w).unwrap(), audio);
    }

    #[test]
    fn identical_text_rows_give_frame_independent_update() {
        let d = 4;
        let mut rng = SeededRng::new(4);
        let audio = seeded_gaussian(&[5, d], 1.0, &mut rng).unwrap();
        let row = seeded_gaussian(&[d], 1.0, &mut rng).unwrap();
        let text = Tensor::new(vec![3, d], row.data().repeat(3)).unwrap();
        let w = random_weights(d, 5);
        let fused = cross_attention_fuse(&audio, &text, &w).unwrap();
        let delta = fused.sub(&audio).unwrap();
        for t in 1..5 {
            for j in 0..d {
                assert!((delta.data()[t * d + j] - delta.data()[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let audio = Tensor::zeros(&[2, 4]);
        let text = Tensor::zeros(&[2, 3]);
        let w = random_weights(4, 1);
        assert!(matches!(
            cross_attention_fuse(&audio, &text, &w),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn fusion_gradients_match_finite_differences() {
        let d = 3;
        let mut rng = SeededRng::new(8);
        let audio = seeded_gaussian(&[4, d], 1.0, &mut rng).unwrap();
        let text = seeded_gaussian(&[3, d], 1.0, &mut rng).unwrap();
        let r = seeded_gaussian(&[4 * d], 1.0, &mut rng)
            .unwrap()
            .into_data();
        let w = random_weights(d, 9);
        let (_, cache) = fuse_forward(&audio, &text, &w).unwrap();
        let g = fuse_backward(&cache, &w, &r);
        let loss = |w: &FusionWeights| -> f64 {
            let f = cross_attention_fuse(&audio, &text, w).unwrap();
            f.data().iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let params: Vec<f64> = [w.wq.clone(), w.wk.clone(), w.wv.clone(), w.wo.clone()].concat();
        let num = central_difference(&params, 1e-5, |p| {
            let n = d * d;
            loss(
                &FusionWeights::from_slices(
                    d,
                    &p[..n],
                    &p[n..2 * n],
                    &p[2 * n..3 * n],
                    &p[3 * n..],
                )
                .unwrap(),
            )
        });
        let ana: Vec<f64> = [g.wq, g.wk, g.wv, g.wo].concat();
        let (i, e) = max_relative_error(&ana, &num, 1e-8);
        assert!(e < 1e-4, "param {i} rel err {e}");

        let num_audio = central_difference(audio.data(), 1e-5, |a| {
            let a = Tensor::new(vec![4, d], a.to_vec()).unwrap();
            let f = cross_attention_fuse(&a, &text, &w).unwrap();
            f.data().iter().zip(&r).map(|(x, y)| x * y).sum()
        });
        let (i, e) = max_relative_error(&g.audio, &num_audio, 1e-8);
        assert!(e < 1e-4, "audio {i} rel err {e}");
    }
}
