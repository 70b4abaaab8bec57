//! The learned network `F_θ`: a residual stack of 3-D convolutions with
//! group-norm, SiLU and FiLM conditioning, one per-frame cross-attention block
//! over condition tokens, and a zero-initialised output projection.
//!
//! Parameters live in one flat vector; [`ParamLayout`] fixes the declared
//! order, which is also the checkpoint order.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::layers::{
    attention_backward, attention_forward, conv3d_backward, conv3d_forward, fourier_features,
    group_norm_backward, group_norm_forward, position_features, silu, silu_grad, AttnCache,
    AttnDims, AttnWeights, GroupNormCache, Volume, KERNEL,
};
use crate::conditioning::{fuse_backward, fuse_forward, FusionCache, FusionWeights};
use crate::error::{Error, Result};
use crate::numerics::linalg::matmul;
use crate::numerics::{SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    /// Noisy input plus any cascade conditioning channels.
    pub in_channels: usize,
    pub channels: usize,
    pub blocks: usize,
    pub groups: usize,
    /// Condition token width `d`.
    pub cond_dim: usize,
    /// Fourier features of `c_noise` (even).
    pub time_features: usize,
    /// Sinusoidal frame-index features used by the attention block (even).
    pub pos_features: usize,
    /// Audio-text fusion block present (A+T mode).
    pub fusion: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            in_channels: 1,
            channels: 32,
            blocks: 4,
            groups: 8,
            cond_dim: 32,
            time_features: 8,
            pos_features: 8,
            fusion: false,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.channels == 0 || self.cond_dim == 0 {
            return Err(Error::arg("channel counts and cond_dim must be positive"));
        }
        if self.groups == 0 || !self.channels.is_multiple_of(self.groups) {
            return Err(Error::arg(format!(
                "channels ({}) must be a multiple of groups ({})",
                self.channels, self.groups
            )));
        }
        if !self.time_features.is_multiple_of(2) || !self.pos_features.is_multiple_of(2) {
            return Err(Error::arg("time_features and pos_features must be even"));
        }
        Ok(())
    }

    fn embed_in(&self) -> usize {
        self.time_features + self.cond_dim
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone)]
struct BlockSlots {
    conv1_w: Range<usize>,
    conv1_b: Range<usize>,
    gn_gamma: Range<usize>,
    gn_beta: Range<usize>,
    film_w: Range<usize>,
    film_b: Range<usize>,
    conv2_w: Range<usize>,
    conv2_b: Range<usize>,
}

#[derive(Debug, Clone)]
struct FusionSlots {
    wq: Range<usize>,
    wk: Range<usize>,
    wv: Range<usize>,
    wo: Range<usize>,
}

/// Named ranges into the flat parameter vector, in declared order.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    segments: Vec<(String, Range<usize>)>,
    total: usize,
    lift_w: Range<usize>,
    lift_b: Range<usize>,
    embed_w: Range<usize>,
    embed_b: Range<usize>,
    blocks: Vec<BlockSlots>,
    attn_q: Range<usize>,
    attn_k: Range<usize>,
    attn_v: Range<usize>,
    attn_o: Range<usize>,
    proj_w: Range<usize>,
    proj_b: Range<usize>,
    fusion: Option<FusionSlots>,
}

impl ParamLayout {
    fn new(a: &Architecture) -> Self {
        let mut segments = Vec::new();
        let mut next = 0;
        let mut add = |name: String, len: usize| {
            let r = next..next + len;
            next += len;
            segments.push((name, r.clone()));
            r
        };
        let (c, d) = (a.channels, a.cond_dim);
        let lift_w = add("lift.weight".into(), c * a.in_channels * KERNEL);
        let lift_b = add("lift.bias".into(), c);
        let embed_w = add("embed.weight".into(), a.embed_in() * d);
        let embed_b = add("embed.bias".into(), d);
        let blocks = (0..a.blocks)
            .map(|i| BlockSlots {
                conv1_w: add(format!("block{i}.conv1.weight"), c * c * KERNEL),
                conv1_b: add(format!("block{i}.conv1.bias"), c),
                gn_gamma: add(format!("block{i}.norm.gamma"), c),
                gn_beta: add(format!("block{i}.norm.beta"), c),
                film_w: add(format!("block{i}.film.weight"), d * 2 * c),
                film_b: add(format!("block{i}.film.bias"), 2 * c),
                conv2_w: add(format!("block{i}.conv2.weight"), c * c * KERNEL),
                conv2_b: add(format!("block{i}.conv2.bias"), c),
            })
            .collect();
        let attn_q = add("attn.query".into(), (c + a.pos_features) * d);
        let attn_k = add("attn.key".into(), (d + a.pos_features) * d);
        let attn_v = add("attn.value".into(), d * d);
        let attn_o = add("attn.out".into(), d * c);
        let proj_w = add("proj.weight".into(), c * KERNEL);
        let proj_b = add("proj.bias".into(), 1);
        let fusion = a.fusion.then(|| FusionSlots {
            wq: add("fusion.query".into(), d * d),
            wk: add("fusion.key".into(), d * d),
            wv: add("fusion.value".into(), d * d),
            wo: add("fusion.out".into(), d * d),
        });
        Self {
            segments,
            total: next,
            lift_w,
            lift_b,
            embed_w,
            embed_b,
            blocks,
            attn_q,
            attn_k,
            attn_v,
            attn_o,
            proj_w,
            proj_b,
            fusion,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[(String, Range<usize>)] {
        &self.segments
    }

    pub fn range_of(&self, name: &str) -> Option<Range<usize>> {
        self.segments
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
    }

    /// Parameter names that belong to the fusion block.
    pub fn fusion_range(&self) -> Option<Range<usize>> {
        self.fusion.as_ref().map(|f| f.wq.start..f.wo.end)
    }
}

/// Network inputs for one sample.
#[derive(Debug, Clone, Copy)]
pub struct NetInput<'a> {
    /// `in_channels × frames × height × width`, channel 0 is the scaled noisy input.
    pub x: &'a [f64],
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub c_noise: f64,
    /// `frames × d` audio tokens.
    pub audio: &'a Tensor,
    pub text: Option<&'a Tensor>,
    /// Absolute index of the first frame (for the frame-index code).
    pub frame_offset: usize,
}

struct BlockCache {
    input: Vec<f64>,
    gn: GroupNormCache,
    normed: Vec<f64>,
    activated: Vec<f64>,
    film: Vec<f64>,
    modulated: Vec<f64>,
}

pub struct ForwardCache {
    vol: Volume,
    input: Vec<f64>,
    n_tokens: usize,
    fusion: Option<FusionCache>,
    raw_embed: Vec<f64>,
    pre_embed: Vec<f64>,
    embed: Vec<f64>,
    blocks: Vec<BlockCache>,
    attn: AttnCache,
    attended: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    layout_total: usize,
    params: Vec<f64>,
}

impl Network {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let total = arch.param_count();
        Ok(Self {
            arch,
            layout_total: total,
            params: vec![0.0; total],
        })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let total = arch.param_count();
        if params.len() != total {
            return Err(Error::arg(format!(
                "architecture needs {total} parameters, got {}",
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NumericDomain(format!("parameter {i} is not finite")));
        }
        Ok(Self {
            arch,
            layout_total: total,
            params,
        })
    }

    /// Standard initialisation. The output projection and every residual
    /// output (attention and fusion `out`) start at zero, so an untrained
    /// network returns 0. Fusion parameters are drawn last: an A+T network
    /// shares all other initial values with the A network from the same seed.
    pub fn init(arch: Architecture, rng: &mut SeededRng) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let l = arch.layout();
        let c = arch.channels;
        let d = arch.cond_dim;
        let p = &mut net.params;
        let mut normal = |r: Range<usize>, std: f64| rng.fill_normal(&mut p[r], std);
        normal(
            l.lift_w.clone(),
            1.0 / ((arch.in_channels * KERNEL) as f64).sqrt(),
        );
        normal(l.embed_w.clone(), 1.0 / (arch.embed_in() as f64).sqrt());
        for b in &l.blocks {
            normal(b.conv1_w.clone(), 1.0 / ((c * KERNEL) as f64).sqrt());
            normal(b.film_w.clone(), 0.1 / (d as f64).sqrt());
            normal(b.conv2_w.clone(), 0.5 / ((c * KERNEL) as f64).sqrt());
        }
        normal(
            l.attn_q.clone(),
            1.0 / ((c + arch.pos_features) as f64).sqrt(),
        );
        normal(
            l.attn_k.clone(),
            1.0 / ((d + arch.pos_features) as f64).sqrt(),
        );
        normal(l.attn_v.clone(), 1.0 / (d as f64).sqrt());
        for b in &l.blocks {
            p[b.gn_gamma.clone()].fill(1.0);
        }
        if let Some(f) = &l.fusion {
            let w = FusionWeights::init(d, rng);
            p[f.wq.clone()].copy_from_slice(&w.wq);
            p[f.wk.clone()].copy_from_slice(&w.wk);
            p[f.wv.clone()].copy_from_slice(&w.wv);
            p[f.wo.clone()].copy_from_slice(&w.wo);
        }
        Ok(net)
    }

    /// Every parameter drawn `N(0, std²)` (GN gammas around 1). For gradient
    /// checks, where zero-initialised branches would hide errors.
    pub fn randomized(arch: Architecture, std: f64, rng: &mut SeededRng) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        rng.fill_normal(&mut net.params, std);
        let l = arch.layout();
        for b in &l.blocks {
            for g in &mut net.params[b.gn_gamma.clone()] {
                *g += 1.0;
            }
        }
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout_total {
            return Err(Error::arg("parameter length mismatch"));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        self.arch.layout()
    }

    pub fn fusion_weights(&self) -> Option<FusionWeights> {
        let l = self.layout();
        let f = l.fusion.as_ref()?;
        let p = &self.params;
        FusionWeights::from_slices(
            self.arch.cond_dim,
            &p[f.wq.clone()],
            &p[f.wk.clone()],
            &p[f.wv.clone()],
            &p[f.wo.clone()],
        )
        .ok()
    }

    fn check_input(&self, input: &NetInput) -> Result<Volume> {
        let vol = Volume {
            frames: input.frames,
            height: input.height,
            width: input.width,
        };
        if input.x.len() != self.arch.in_channels * vol.len() {
            return Err(Error::arg(format!(
                "input has {} values, architecture expects {} channels × {}",
                input.x.len(),
                self.arch.in_channels,
                vol.len()
            )));
        }
        match *input.audio.shape() {
            [t, d] if t == vol.frames && d == self.arch.cond_dim => {}
            ref s => {
                return Err(Error::arg(format!(
                    "audio tokens {s:?} do not match {} frames × d={}",
                    vol.frames, self.arch.cond_dim
                )))
            }
        }
        if self.arch.fusion && input.text.is_none() {
            return Err(Error::Condition(
                "audio-textual model needs a text stream".into(),
            ));
        }
        Ok(vol)
    }

    pub fn forward(&self, input: &NetInput) -> Result<(Vec<f64>, ForwardCache)> {
        let vol = self.check_input(input)?;
        let a = &self.arch;
        let l = self.layout();
        let p = &self.params;
        let (c, d, nv) = (a.channels, a.cond_dim, vol.len());

        // Condition tokens: fused (A+T) or raw audio (A).
        let (tokens, fusion) = match (&l.fusion, input.text) {
            (Some(_), Some(text)) => {
                let w = self.fusion_weights().expect("layout has fusion");
                let (fused, cache) = fuse_forward(input.audio, text, &w)?;
                (fused, Some(cache))
            }
            _ => (input.audio.data().to_vec(), None),
        };
        let n_tokens = vol.frames;

        // Global embedding of noise level and mean token.
        let mut raw_embed = fourier_features(input.c_noise, a.time_features);
        for j in 0..d {
            raw_embed.push((0..n_tokens).map(|t| tokens[t * d + j]).sum::<f64>() / n_tokens as f64);
        }
        let mut pre_embed = matmul(&raw_embed, &p[l.embed_w.clone()], 1, a.embed_in(), d);
        for (v, b) in pre_embed.iter_mut().zip(&p[l.embed_b.clone()]) {
            *v += b;
        }
        let embed: Vec<f64> = pre_embed.iter().map(|&v| silu(v)).collect();

        let mut h = conv3d_forward(
            input.x,
            a.in_channels,
            vol,
            &p[l.lift_w.clone()],
            &p[l.lift_b.clone()],
            c,
        );

        let mut blocks = Vec::with_capacity(a.blocks);
        for b in &l.blocks {
            let pre_norm =
                conv3d_forward(&h, c, vol, &p[b.conv1_w.clone()], &p[b.conv1_b.clone()], c);
            let (normed, gn) = group_norm_forward(
                &pre_norm,
                c,
                nv,
                a.groups,
                &p[b.gn_gamma.clone()],
                &p[b.gn_beta.clone()],
            );
            let activated: Vec<f64> = normed.iter().map(|&v| silu(v)).collect();
            let mut film = matmul(&embed, &p[b.film_w.clone()], 1, d, 2 * c);
            for (v, bias) in film.iter_mut().zip(&p[b.film_b.clone()]) {
                *v += bias;
            }
            let mut modulated = activated.clone();
            for ch in 0..c {
                let (scale, shift) = (1.0 + film[ch], film[c + ch]);
                for v in &mut modulated[ch * nv..(ch + 1) * nv] {
                    *v = *v * scale + shift;
                }
            }
            let delta = conv3d_forward(
                &modulated,
                c,
                vol,
                &p[b.conv2_w.clone()],
                &p[b.conv2_b.clone()],
                c,
            );
            let next: Vec<f64> = h.iter().zip(&delta).map(|(x, y)| x + y).collect();
            blocks.push(BlockCache {
                input: std::mem::replace(&mut h, next),
                gn,
                normed,
                activated,
                film,
                modulated,
            });
        }

        // Per-frame cross-attention over tokens.
        let plane = vol.height * vol.width;
        let qw = c + a.pos_features;
        let kw = d + a.pos_features;
        let mut q_src = vec![0.0; vol.frames * qw];
        for f in 0..vol.frames {
            for ch in 0..c {
                let s = &h[ch * nv + f * plane..ch * nv + (f + 1) * plane];
                q_src[f * qw + ch] = s.iter().sum::<f64>() / plane as f64;
            }
            q_src[f * qw + c..(f + 1) * qw]
                .copy_from_slice(&position_features(input.frame_offset + f, a.pos_features));
        }
        let mut k_src = vec![0.0; n_tokens * kw];
        for t in 0..n_tokens {
            k_src[t * kw..t * kw + d].copy_from_slice(&tokens[t * d..(t + 1) * d]);
            k_src[t * kw + d..(t + 1) * kw]
                .copy_from_slice(&position_features(input.frame_offset + t, a.pos_features));
        }
        let dims = AttnDims {
            n: vol.frames,
            m: n_tokens,
            q_in: qw,
            k_in: kw,
            v_in: d,
            head: d,
            out: c,
        };
        let w = AttnWeights {
            wq: &p[l.attn_q.clone()],
            wk: &p[l.attn_k.clone()],
            wv: &p[l.attn_v.clone()],
            wo: &p[l.attn_o.clone()],
        };
        let (attn_out, attn) = attention_forward(dims, &q_src, &k_src, &tokens, &w);
        let mut attended = h;
        for ch in 0..c {
            for f in 0..vol.frames {
                let add = attn_out[f * c + ch];
                for v in &mut attended[ch * nv + f * plane..ch * nv + (f + 1) * plane] {
                    *v += add;
                }
            }
        }

        let out = conv3d_forward(
            &attended,
            c,
            vol,
            &p[l.proj_w.clone()],
            &p[l.proj_b.clone()],
            1,
        );
        let cache = ForwardCache {
            vol,
            input: input.x.to_vec(),
            n_tokens,
            fusion,
            raw_embed,
            pre_embed,
            embed,
            blocks,
            attn,
            attended,
        };
        Ok((out, cache))
    }

    /// Gradient of `Σ d_out ⊙ F(input)` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, d_out: &[f64]) -> Vec<f64> {
        let a = &self.arch;
        let l = self.layout();
        let p = &self.params;
        let vol = cache.vol;
        let (c, d, nv) = (a.channels, a.cond_dim, vol.len());
        let plane = vol.height * vol.width;
        let mut g = vec![0.0; self.layout_total];

        let proj = conv3d_backward(
            &cache.attended,
            c,
            vol,
            &p[l.proj_w.clone()],
            1,
            d_out,
            true,
        );
        g[l.proj_w.clone()].copy_from_slice(&proj.weight);
        g[l.proj_b.clone()].copy_from_slice(&proj.bias);
        let mut d_h = proj.input.expect("requested");

        // Attention: the broadcast add sums over each frame's plane.
        let mut d_attn_out = vec![0.0; vol.frames * c];
        for ch in 0..c {
            for f in 0..vol.frames {
                d_attn_out[f * c + ch] = d_h[ch * nv + f * plane..ch * nv + (f + 1) * plane]
                    .iter()
                    .sum();
            }
        }
        let w = AttnWeights {
            wq: &p[l.attn_q.clone()],
            wk: &p[l.attn_k.clone()],
            wv: &p[l.attn_v.clone()],
            wo: &p[l.attn_o.clone()],
        };
        let ag = attention_backward(&cache.attn, &w, &d_attn_out);
        g[l.attn_q.clone()].copy_from_slice(&ag.wq);
        g[l.attn_k.clone()].copy_from_slice(&ag.wk);
        g[l.attn_v.clone()].copy_from_slice(&ag.wv);
        g[l.attn_o.clone()].copy_from_slice(&ag.wo);
        let qw = c + a.pos_features;
        let kw = d + a.pos_features;
        for f in 0..vol.frames {
            for ch in 0..c {
                let gq = ag.q_src[f * qw + ch] / plane as f64;
                for v in &mut d_h[ch * nv + f * plane..ch * nv + (f + 1) * plane] {
                    *v += gq;
                }
            }
        }
        let mut d_tokens = ag.v_src;
        for t in 0..cache.n_tokens {
            for j in 0..d {
                d_tokens[t * d + j] += ag.k_src[t * kw + j];
            }
        }

        let mut d_embed = vec![0.0; d];
        for (b, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
            let conv2 =
                conv3d_backward(&bc.modulated, c, vol, &p[b.conv2_w.clone()], c, &d_h, true);
            g[b.conv2_w.clone()].copy_from_slice(&conv2.weight);
            g[b.conv2_b.clone()].copy_from_slice(&conv2.bias);
            let d_mod = conv2.input.expect("requested");
            let mut d_film = vec![0.0; 2 * c];
            let mut d_act = vec![0.0; c * nv];
            for ch in 0..c {
                let scale = 1.0 + bc.film[ch];
                let span = ch * nv..(ch + 1) * nv;
                let mut ds = 0.0;
                let mut db = 0.0;
                for i in span {
                    ds += d_mod[i] * bc.activated[i];
                    db += d_mod[i];
                    d_act[i] = d_mod[i] * scale;
                }
                d_film[ch] = ds;
                d_film[c + ch] = db;
            }
            // film = embed · W + b
            let fw = &mut g[b.film_w.clone()];
            for i in 0..d {
                for j in 0..2 * c {
                    fw[i * 2 * c + j] = cache.embed[i] * d_film[j];
                }
            }
            g[b.film_b.clone()].copy_from_slice(&d_film);
            let wf = &p[b.film_w.clone()];
            for i in 0..d {
                d_embed[i] += (0..2 * c)
                    .map(|j| wf[i * 2 * c + j] * d_film[j])
                    .sum::<f64>();
            }
            let d_norm: Vec<f64> = d_act
                .iter()
                .zip(&bc.normed)
                .map(|(g, &x)| g * silu_grad(x))
                .collect();
            let (d_pre, d_gamma, d_beta) =
                group_norm_backward(&bc.gn, c, nv, a.groups, &p[b.gn_gamma.clone()], &d_norm);
            g[b.gn_gamma.clone()].copy_from_slice(&d_gamma);
            g[b.gn_beta.clone()].copy_from_slice(&d_beta);
            let conv1 = conv3d_backward(&bc.input, c, vol, &p[b.conv1_w.clone()], c, &d_pre, true);
            g[b.conv1_w.clone()].copy_from_slice(&conv1.weight);
            g[b.conv1_b.clone()].copy_from_slice(&conv1.bias);
            for (dh, di) in d_h.iter_mut().zip(conv1.input.expect("requested")) {
                *dh += di;
            }
        }

        let lift = conv3d_backward(
            &cache.input,
            a.in_channels,
            vol,
            &p[l.lift_w.clone()],
            c,
            &d_h,
            false,
        );
        g[l.lift_w.clone()].copy_from_slice(&lift.weight);
        g[l.lift_b.clone()].copy_from_slice(&lift.bias);

        // embed = silu(raw · W + b)
        let d_pre: Vec<f64> = d_embed
            .iter()
            .zip(&cache.pre_embed)
            .map(|(g, &x)| g * silu_grad(x))
            .collect();
        let ein = a.embed_in();
        let ew = &mut g[l.embed_w.clone()];
        for i in 0..ein {
            for j in 0..d {
                ew[i * d + j] = cache.raw_embed[i] * d_pre[j];
            }
        }
        g[l.embed_b.clone()].copy_from_slice(&d_pre);
        let we = &p[l.embed_w.clone()];
        for j in 0..d {
            let d_mean: f64 = (0..d)
                .map(|k| we[(a.time_features + j) * d + k] * d_pre[k])
                .sum();
            for t in 0..cache.n_tokens {
                d_tokens[t * d + j] += d_mean / cache.n_tokens as f64;
            }
        }

        if let (Some(slots), Some(fc)) = (&l.fusion, &cache.fusion) {
            let w = self.fusion_weights().expect("layout has fusion");
            let fg = fuse_backward(fc, &w, &d_tokens);
            g[slots.wq.clone()].copy_from_slice(&fg.wq);
            g[slots.wk.clone()].copy_from_slice(&fg.wk);
            g[slots.wv.clone()].copy_from_slice(&fg.wv);
            g[slots.wo.clone()].copy_from_slice(&fg.wo);
        }
        g
    }
}
