//! Synthetic tongue-contour video, the UTIV clip format, and speaker-disjoint
//! dataset manifests.
//!
//! Each symbol maps to a contour target (bump centre, amplitude, width); frames
//! interpolate linearly between consecutive targets (the speaker-independent
//! part). Speakers shift the contour vertically, scale the bump and set the
//! ridge brightness (the speaker-specific part).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditioning::{
    encode_audio_like, encode_text_like, ConditionBundle, EncoderConfig, SpeakerParams,
};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, SeededRng, Tensor};

pub const UTIV_MAGIC: &[u8; 4] = b"UTIV";
pub const UTIV_VERSION: u32 = 1;
pub const UTIV_HEADER_LEN: usize = 4 + 4 + 12 + 2;
pub const DEFAULT_FPS: u16 = 60;
pub const SUPPORTED_RESOLUTIONS: [usize; 5] = [16, 32, 64, 96, 112];

/// 8-bit grayscale video, row-major `frames × height × width`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clip {
    frames: usize,
    height: usize,
    width: usize,
    fps: u16,
    pixels: Vec<u8>,
}

impl Clip {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        fps: u16,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::arg("clip extents must be positive"));
        }
        if pixels.len() != frames * height * width {
            return Err(Error::arg(format!(
                "{} pixels for a {frames}×{height}×{width} clip",
                pixels.len()
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            fps,
            pixels,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn fps(&self) -> u16 {
        self.fps
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.frames, self.height, self.width]
    }

    pub fn frame(&self, f: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.pixels[f * n..(f + 1) * n]
    }

    /// Model-domain tensor `(frames, height, width)`.
    pub fn to_tensor(&self, norm: &Normalization) -> Tensor {
        let data = self.pixels.iter().map(|&p| norm.to_model(p)).collect();
        Tensor::from_parts(self.shape().to_vec(), data)
    }

    /// Inverse of [`Clip::to_tensor`], rounding and clamping to `[0, 255]`.
    pub fn from_tensor(t: &Tensor, norm: &Normalization, fps: u16) -> Result<Self> {
        let [f, h, w] = *t.shape() else {
            return Err(Error::arg(format!(
                "expected (frames, height, width), got {:?}",
                t.shape()
            )));
        };
        let pixels = t.data().iter().map(|&v| norm.to_pixel(v)).collect();
        Self::new(f, h, w, fps, pixels)
    }

    /// Sub-clip of frames `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames {
            return Err(Error::arg(format!(
                "window {start}+{len} outside {} frames",
                self.frames
            )));
        }
        let n = self.height * self.width;
        Self::new(
            len,
            self.height,
            self.width,
            self.fps,
            self.pixels[start * n..(start + len) * n].to_vec(),
        )
    }
}

/// Affine map between 8-bit pixels and the model domain:
/// `x = ((p / 255 − 0.5) − offset) · scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            offset: 0.0,
            scale: 1.0,
        }
    }
}

impl Normalization {
    /// Centres the pixels and scales them to standard deviation `target_std`.
    pub fn fit(pixels: impl Iterator<Item = u8>, target_std: f64) -> Result<Self> {
        let mut n = 0u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for p in pixels {
            let v = p as f64 / 255.0 - 0.5;
            n += 1;
            sum += v;
            sum_sq += v * v;
        }
        if n == 0 {
            return Ok(Self::default());
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        if var == 0.0 {
            return Err(Error::NumericDomain(
                "constant pixels cannot be normalised".into(),
            ));
        }
        Ok(Self {
            offset: mean,
            scale: target_std / var.sqrt(),
        })
    }

    pub fn to_model(&self, p: u8) -> f64 {
        (p as f64 / 255.0 - 0.5 - self.offset) * self.scale
    }

    pub fn to_pixel(&self, x: f64) -> u8 {
        let p = ((x / self.scale + self.offset + 0.5) * 255.0).round();
        p.clamp(0.0, 255.0) as u8
    }
}

pub fn encode_clip(clip: &Clip) -> Vec<u8> {
    let mut out = Vec::with_capacity(UTIV_HEADER_LEN + clip.pixels.len());
    out.extend_from_slice(UTIV_MAGIC);
    out.extend_from_slice(&UTIV_VERSION.to_le_bytes());
    out.extend_from_slice(&(clip.frames as u32).to_le_bytes());
    out.extend_from_slice(&(clip.height as u32).to_le_bytes());
    out.extend_from_slice(&(clip.width as u32).to_le_bytes());
    out.extend_from_slice(&clip.fps.to_le_bytes());
    out.extend_from_slice(&clip.pixels);
    out
}

/// UTIV header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct UtivHeader {
    pub version: u32,
    pub frames: u32,
    pub height: u32,
    pub width: u32,
    pub fps: u16,
}

fn format_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn decode_header(bytes: &[u8]) -> Result<UtivHeader> {
    if bytes.len() < 4 {
        return Err(format_error(bytes.len(), "truncated before magic"));
    }
    if &bytes[..4] != UTIV_MAGIC {
        return Err(format_error(0, "bad magic, expected UTIV"));
    }
    if bytes.len() < UTIV_HEADER_LEN {
        return Err(format_error(
            bytes.len(),
            format!(
                "truncated header ({} of {UTIV_HEADER_LEN} bytes)",
                bytes.len()
            ),
        ));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let header = UtivHeader {
        version: u32_at(4),
        frames: u32_at(8),
        height: u32_at(12),
        width: u32_at(16),
        fps: u16::from_le_bytes([bytes[20], bytes[21]]),
    };
    if header.version != UTIV_VERSION {
        return Err(format_error(
            4,
            format!("unsupported version {}", header.version),
        ));
    }
    if header.frames == 0 || header.height == 0 || header.width == 0 {
        return Err(format_error(8, "zero extent"));
    }
    Ok(header)
}

pub fn decode_clip(bytes: &[u8]) -> Result<Clip> {
    let h = decode_header(bytes)?;
    let n = (h.frames as u64) * (h.height as u64) * (h.width as u64);
    let body = (bytes.len() - UTIV_HEADER_LEN) as u64;
    if body < n {
        return Err(format_error(
            bytes.len(),
            format!("truncated pixel data: {body} of {n} bytes"),
        ));
    }
    if body > n {
        return Err(format_error(
            UTIV_HEADER_LEN + n as usize,
            format!("{} trailing bytes", body - n),
        ));
    }
    Clip::new(
        h.frames as usize,
        h.height as usize,
        h.width as usize,
        h.fps,
        bytes[UTIV_HEADER_LEN..].to_vec(),
    )
}

pub fn write_clip(clip: &Clip, path: &Path) -> Result<()> {
    fs::write(path, encode_clip(clip)).map_err(|e| Error::io(path, e))
}

pub fn read_clip(path: &Path) -> Result<Clip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_clip(&bytes)
}

/// Writes frame `f` as a binary PGM (P5).
pub fn write_pgm(clip: &Clip, f: usize, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write!(file, "P5\n{} {}\n255\n", clip.width, clip.height)
        .and_then(|_| file.write_all(clip.frame(f)))
        .map_err(|e| Error::io(path, e))
}

/// Rendering parameters for synthetic clips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub resolution: usize,
    pub frames_per_symbol: usize,
    pub n_symbols: usize,
    /// Resting contour height (fraction of image height, from the bottom).
    pub base_height: f64,
    /// Ridge cross-section std as a fraction of height.
    pub thickness: f64,
    pub background: f64,
    /// Additive Gaussian speckle std, gray levels.
    pub speckle_std: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            frames_per_symbol: 4,
            n_symbols: 10,
            base_height: 0.35,
            thickness: 0.06,
            background: 16.0,
            speckle_std: 8.0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_RESOLUTIONS.contains(&self.resolution) {
            return Err(Error::arg(format!(
                "resolution {} not in {:?}",
                self.resolution, SUPPORTED_RESOLUTIONS
            )));
        }
        if self.frames_per_symbol == 0 || self.n_symbols == 0 {
            return Err(Error::arg(
                "frames_per_symbol and n_symbols must be positive",
            ));
        }
        if !(self.speckle_std >= 0.0) {
            return Err(Error::arg("speckle_std must be >= 0"));
        }
        Ok(())
    }
}

/// Contour target of one symbol, in image fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourTarget {
    pub center: f64,
    pub amplitude: f64,
    pub width: f64,
}

impl ContourTarget {
    fn lerp(&self, other: &ContourTarget, t: f64) -> ContourTarget {
        ContourTarget {
            center: self.center + t * (other.center - self.center),
            amplitude: self.amplitude + t * (other.amplitude - self.amplitude),
            width: self.width + t * (other.width - self.width),
        }
    }
}

pub fn contour_codebook(n_symbols: usize, seed: u64) -> Vec<ContourTarget> {
    let mut rng = SeededRng::new(derive_seed(seed, "contour-codebook"));
    (0..n_symbols)
        .map(|_| ContourTarget {
            center: rng.uniform_range(0.3, 0.7),
            amplitude: rng.uniform_range(0.1, 0.3),
            width: rng.uniform_range(0.08, 0.18),
        })
        .collect()
}

/// Per-frame symbol ids: each symbol held for `frames_per_symbol` frames.
pub fn frame_symbols(symbols: &[u32], frames_per_symbol: usize) -> Vec<u32> {
    symbols
        .iter()
        .flat_map(|&s| std::iter::repeat_n(s, frames_per_symbol))
        .collect()
}

/// Analytic ridge centre row for every frame and column: `[frame][column]`.
///
/// Frame `f` sits between the target of its symbol and the next one
/// (`t = (f mod K) / K`). The contour height is
/// `y(x) = base + g·a·exp(−(x−m)²/(2w²))`, drawn at row `(1 − y)·H`, then
/// shifted up by the whole-pixel speaker offset `round(δ·H)`.
pub fn contour_rows(
    symbols: &[u32],
    speaker: &SpeakerParams,
    cfg: &RenderConfig,
    codebook: &[ContourTarget],
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    speaker.validate()?;
    if symbols.is_empty() {
        return Err(Error::arg("empty symbol sequence"));
    }
    if let Some(&s) = symbols.iter().find(|&&s| s as usize >= codebook.len()) {
        return Err(Error::arg(format!(
            "symbol {s} outside [0, {})",
            codebook.len()
        )));
    }
    let res = cfg.resolution;
    let k = cfg.frames_per_symbol;
    let shift = (speaker.vertical_offset * res as f64).round();
    let mut rows = Vec::with_capacity(symbols.len() * k);
    for f in 0..symbols.len() * k {
        let i = f / k;
        let t = (f % k) as f64 / k as f64;
        let cur = codebook[symbols[i] as usize];
        let next = codebook[symbols[(i + 1).min(symbols.len() - 1)] as usize];
        let p = cur.lerp(&next, t);
        let row: Vec<f64> = (0..res)
            .map(|j| {
                let x = (j as f64 + 0.5) / res as f64;
                let bump = (-(x - p.center).powi(2) / (2.0 * p.width * p.width)).exp();
                let y = cfg.base_height + speaker.amplitude_gain * p.amplitude * bump;
                (1.0 - y) * res as f64 - shift
            })
            .collect();
        rows.push(row);
    }
    Ok(rows)
}

/// Renders a clip: a bright ridge with Gaussian cross-section on a dark
/// background, plus seeded speckle.
pub fn synth_clip(
    symbols: &[u32],
    speaker: &SpeakerParams,
    cfg: &RenderConfig,
    codebook: &[ContourTarget],
    seed: u64,
) -> Result<Clip> {
    let rows = contour_rows(symbols, speaker, cfg, codebook)?;
    let res = cfg.resolution;
    let tau = cfg.thickness * res as f64;
    let peak = speaker.brightness * 255.0;
    let mut rng = SeededRng::new(derive_seed(seed, "speckle"));
    let mut noise = vec![0.0; rows.len() * res * res];
    if cfg.speckle_std > 0.0 {
        rng.fill_normal(&mut noise, cfg.speckle_std);
    }
    let mut pixels = Vec::with_capacity(noise.len());
    for (f, frame_rows) in rows.iter().enumerate() {
        for i in 0..res {
            for (j, &centre) in frame_rows.iter().enumerate() {
                let d = i as f64 - centre;
                let v =
                    cfg.background + (peak - cfg.background) * (-d * d / (2.0 * tau * tau)).exp();
                let v = v + noise[(f * res + i) * res + j];
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Clip::new(rows.len(), res, res, DEFAULT_FPS, pixels)
}

/// Per-clip condition sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSidecar {
    pub clip_id: String,
    pub symbols: Vec<u32>,
    pub frame_symbols: Vec<u32>,
    pub speaker: SpeakerParams,
    /// Seed of the audio jitter for this clip.
    pub jitter_seed: u64,
    /// Seed of the speckle noise for this clip.
    pub render_seed: u64,
}

impl ConditionSidecar {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Audio stream for all frames, plus the text stream when requested.
    pub fn bundle(&self, encoder: &EncoderConfig, with_text: bool) -> Result<ConditionBundle> {
        let audio = encode_audio_like(
            &self.frame_symbols,
            &self.speaker,
            encoder,
            self.jitter_seed,
        )?;
        let text = if with_text {
            Some(encode_text_like(&self.symbols, encoder)?)
        } else {
            None
        };
        ConditionBundle::new(audio, text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    /// Paths are relative to the manifest's directory.
    pub clip: String,
    pub sidecar: String,
    pub speaker_id: u32,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub master_seed: u64,
    pub render: RenderConfig,
    pub encoder: EncoderConfig,
    pub contour_seed: u64,
    pub frames_per_clip: usize,
    pub fps: u16,
    pub normalization: Normalization,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn speakers(&self, split: Split) -> std::collections::BTreeSet<u32> {
        self.entries_in(split).map(|e| e.speaker_id).collect()
    }
}

/// Encoder settings plus entries naming a clip id and its condition sidecar
/// (relative to the file's directory). A manifest also parses as a
/// conditions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionsFile {
    pub encoder: EncoderConfig,
    pub entries: Vec<ConditionRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRef {
    pub clip_id: String,
    pub sidecar: String,
    #[serde(default)]
    pub split: Option<Split>,
}

impl ConditionsFile {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub train_speakers: u32,
    pub test_speakers: u32,
    pub clips_per_speaker: usize,
    /// Symbols per utterance.
    pub sequence_length: usize,
    pub render: RenderConfig,
    pub embedding_dim: usize,
    pub jitter_std: f64,
    /// Target model-domain std after normalisation.
    pub target_std: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train_speakers: 40,
            test_speakers: 4,
            clips_per_speaker: 4,
            sequence_length: 4,
            render: RenderConfig::default(),
            embedding_dim: 32,
            jitter_std: 0.01,
            target_std: 0.25,
        }
    }
}

/// Generates clips, sidecars and `manifest.json` under `out_dir`.
///
/// Utterance `j` has the same symbol sequence for every speaker; speakers
/// `0..train_speakers` form the training split and the following
/// `test_speakers` ids the test split.
pub fn build_dataset(
    cfg: &DatasetConfig,
    master_seed: u64,
    out_dir: &Path,
) -> Result<(Manifest, PathBuf)> {
    cfg.render.validate()?;
    if cfg.sequence_length == 0 {
        return Err(Error::arg("sequence_length must be positive"));
    }
    let clips_dir = out_dir.join("clips");
    let cond_dir = out_dir.join("conditions");
    for d in [out_dir, &clips_dir, &cond_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let contour_seed = derive_seed(master_seed, "contours");
    let codebook = contour_codebook(cfg.render.n_symbols, contour_seed);
    let encoder = EncoderConfig {
        n_symbols: cfg.render.n_symbols,
        dim: cfg.embedding_dim,
        codebook_seed: derive_seed(master_seed, "encoders"),
        jitter_std: cfg.jitter_std,
    };
    let mut seq_rng = SeededRng::new(derive_seed(master_seed, "sequences"));
    let sequences: Vec<Vec<u32>> = (0..cfg.clips_per_speaker)
        .map(|_| {
            (0..cfg.sequence_length)
                .map(|_| seq_rng.below(cfg.render.n_symbols) as u32)
                .collect()
        })
        .collect();

    let mut entries = Vec::new();
    let mut train_pixels: Vec<u8> = Vec::new();
    let total = cfg.train_speakers + cfg.test_speakers;
    for speaker_id in 0..total {
        let speaker = SpeakerParams::generate(speaker_id, master_seed);
        let split = if speaker_id < cfg.train_speakers {
            Split::Train
        } else {
            Split::Test
        };
        for (j, seq) in sequences.iter().enumerate() {
            let clip_id = format!("spk{speaker_id:03}_utt{j:02}");
            let render_seed = derive_seed(master_seed, &format!("render/{clip_id}"));
            let clip = synth_clip(seq, &speaker, &cfg.render, &codebook, render_seed)?;
            if split == Split::Train {
                train_pixels.extend_from_slice(clip.pixels());
            }
            let sidecar = ConditionSidecar {
                clip_id: clip_id.clone(),
                symbols: seq.clone(),
                frame_symbols: frame_symbols(seq, cfg.render.frames_per_symbol),
                speaker,
                jitter_seed: derive_seed(master_seed, &format!("jitter/{clip_id}")),
                render_seed,
            };
            let clip_rel = format!("clips/{clip_id}.utiv");
            let side_rel = format!("conditions/{clip_id}.json");
            write_clip(&clip, &out_dir.join(&clip_rel))?;
            write_json(&out_dir.join(&side_rel), &sidecar)?;
            entries.push(ManifestEntry {
                clip_id,
                clip: clip_rel,
                sidecar: side_rel,
                speaker_id,
                split,
            });
        }
    }
    let normalization = if train_pixels.is_empty() {
        Normalization::default()
    } else {
        Normalization::fit(train_pixels.into_iter(), cfg.target_std)?
    };
    let manifest = Manifest {
        version: 1,
        master_seed,
        render: cfg.render,
        encoder,
        contour_seed,
        frames_per_clip: cfg.sequence_length * cfg.render.frames_per_symbol,
        fps: DEFAULT_FPS,
        normalization,
        entries,
    };
    let path = out_dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok((manifest, path))
}

fn file_digest(path: &Path) -> Result<[u8; 32]> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).into())
}

/// SHA-256 over the concatenated digests of the manifest and every file it
/// references, in entry order. Hex encoded.
pub fn manifest_digest(manifest_path: &Path) -> Result<String> {
    let manifest = Manifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut h = Sha256::new();
    h.update(file_digest(manifest_path)?);
    for e in &manifest.entries {
        h.update(file_digest(&root.join(&e.clip))?);
        h.update(file_digest(&root.join(&e.sidecar))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// A clip with its condition metadata, resolved from a manifest.
#[derive(Debug, Clone)]
pub struct LoadedClip {
    pub entry: ManifestEntry,
    pub clip: Clip,
    pub sidecar: ConditionSidecar,
}

pub fn load_split(manifest: &Manifest, root: &Path, split: Split) -> Result<Vec<LoadedClip>> {
    manifest
        .entries_in(split)
        .map(|e| {
            Ok(LoadedClip {
                entry: e.clone(),
                clip: read_clip(&root.join(&e.clip))?,
                sidecar: ConditionSidecar::load(&root.join(&e.sidecar))?,
            })
        })
        .collect()
}
