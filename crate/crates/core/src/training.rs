//! Denoising objective, Adam, and the training loop (single stage and the
//! sequential two-stage cascade).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conditioning::ConditionBundle;
use crate::dataset::{
    build_dataset, load_split, write_json, Clip, DatasetConfig, Manifest, Normalization, Split,
};
use crate::denoiser::checkpoint::{write_checkpoint, CheckpointMeta};
use crate::denoiser::{Architecture, ConditionMode, DenoiseCondition, Denoiser, LearnedDenoiser};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, ToyExtractor};
use crate::numerics::{derive_seed, seeded_gaussian, SeededRng, Tensor};
use crate::sampler::{
    downsample_box, generate, generate_tensor, upsample, SamplerParams, Upsampler,
};
use crate::schedule::{sample_training_sigma, NoiseSchedule, SigmaDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam step, in place.
pub fn update_params(
    theta: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    adam: &AdamConfig,
    learning_rate: f64,
) -> Result<()> {
    if theta.len() != grads.len() || state.m.len() != theta.len() || state.v.len() != theta.len() {
        return Err(Error::arg(format!(
            "Adam shape mismatch: {} params, {} grads, {} state",
            theta.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - adam.beta1.powi(t);
    let bc2 = 1.0 - adam.beta2.powi(t);
    for i in 0..theta.len() {
        let g = grads[i];
        state.m[i] = adam.beta1 * state.m[i] + (1.0 - adam.beta1) * g;
        state.v[i] = adam.beta2 * state.v[i] + (1.0 - adam.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        theta[i] -= learning_rate * m_hat / (v_hat.sqrt() + adam.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
    pub condition_mode: ConditionMode,
    /// Frames per training window.
    pub window: usize,
    pub architecture: Architecture,
    pub sigma: SigmaDistribution,
    /// Loss-curve rows (and validation passes) every this many iterations.
    pub log_every: usize,
    /// Pinned validation draws (window, σ, noise) over the test split.
    pub val_samples: usize,
    /// Derived from the master seed, never read from a config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 4,
            iterations: 2000,
            checkpoint_every: 1000,
            adam: AdamConfig::default(),
            condition_mode: ConditionMode::Audio,
            window: 8,
            architecture: Architecture::default(),
            sigma: SigmaDistribution::default(),
            log_every: 100,
            val_samples: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0
            || self.checkpoint_every == 0
            || self.window == 0
            || self.log_every == 0
        {
            return Err(Error::Config(
                "batch_size, checkpoint_every, window and log_every must be >= 1".into(),
            ));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid Adam parameters {a:?}")));
        }
        Ok(())
    }
}

/// One training window: clean target, its conditions, and (for later cascade
/// stages) the upsampled previous-stage output.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub clean: Tensor,
    pub bundle: ConditionBundle,
    pub prev_stage: Option<Tensor>,
    pub frame_offset: usize,
}

impl TrainExample {
    fn cond(&self) -> DenoiseCondition<'_> {
        DenoiseCondition {
            bundle: Some(&self.bundle),
            prev_stage: self.prev_stage.as_ref(),
            frame_offset: self.frame_offset,
        }
    }
}

fn divergence(message: String) -> Error {
    Error::Divergence { step: 0, message }
}

fn draw_noise(batch: &[TrainExample], sigmas: &[f64], rng: &mut SeededRng) -> Result<Vec<Tensor>> {
    if batch.len() != sigmas.len() || batch.is_empty() {
        return Err(Error::arg(format!(
            "{} examples for {} sigmas",
            batch.len(),
            sigmas.len()
        )));
    }
    batch
        .iter()
        .zip(sigmas)
        .map(|(ex, &s)| seeded_gaussian(ex.clean.shape(), s, rng))
        .collect()
}

/// Batch mean of `‖D(y + n, σ) − y‖²` with `n ~ N(0, σ²I)`, plus its gradient.
/// Per-example gradients are summed in batch order.
pub fn denoising_loss(
    model: &LearnedDenoiser,
    batch: &[TrainExample],
    sigmas: &[f64],
    rng: &mut SeededRng,
) -> Result<(f64, Vec<f64>)> {
    let noise = draw_noise(batch, sigmas, rng)?;
    let mut total = 0.0;
    let mut grads = vec![0.0; model.network().params().len()];
    for ((ex, &s), n) in batch.iter().zip(sigmas).zip(&noise) {
        let (l, g) = model.loss_and_grad(&ex.clean, n, s, &ex.cond())?;
        total += l;
        for (a, b) in grads.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    let loss = total * inv;
    grads.iter_mut().for_each(|g| *g *= inv);
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(divergence(format!("non-finite loss {loss}")));
    }
    Ok((loss, grads))
}

/// Loss value only, for any denoiser. `σ = 0` evaluates `D(y, 0)` directly.
pub fn denoising_loss_value<D: Denoiser + ?Sized>(
    model: &D,
    batch: &[TrainExample],
    sigmas: &[f64],
    rng: &mut SeededRng,
) -> Result<f64> {
    let noise = draw_noise(batch, sigmas, rng)?;
    let mut total = 0.0;
    for ((ex, &s), n) in batch.iter().zip(sigmas).zip(&noise) {
        let d = model.denoise(&ex.clean.add(n)?, s, &ex.cond())?;
        total += d.sub(&ex.clean)?.norm_sq();
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(divergence(format!("non-finite loss {loss}")));
    }
    Ok(loss)
}

/// A full-length clip in the model domain with its conditions.
#[derive(Debug, Clone)]
pub struct ClipRecord {
    pub clip_id: String,
    pub clean: Tensor,
    pub bundle: ConditionBundle,
    pub prev_stage: Option<Tensor>,
}

fn frames_window(t: &Tensor, start: usize, len: usize) -> Tensor {
    let per = t.shape()[1] * t.shape()[2];
    Tensor::from_parts(
        vec![len, t.shape()[1], t.shape()[2]],
        t.data()[start * per..(start + len) * per].to_vec(),
    )
}

impl ClipRecord {
    pub fn frames(&self) -> usize {
        self.clean.shape()[0]
    }

    pub fn window(&self, start: usize, len: usize) -> Result<TrainExample> {
        if len == 0 || start + len > self.frames() {
            return Err(Error::arg(format!(
                "window {start}+{len} outside {} frames",
                self.frames()
            )));
        }
        Ok(TrainExample {
            clean: frames_window(&self.clean, start, len),
            bundle: self.bundle.window(start, len)?,
            prev_stage: self
                .prev_stage
                .as_ref()
                .map(|p| frames_window(p, start, len)),
            frame_offset: start,
        })
    }
}

/// Loads one split of a manifest as model-domain records. The text stream is
/// always attached; audio-only models ignore it.
pub fn load_records(manifest: &Manifest, root: &Path, split: Split) -> Result<Vec<ClipRecord>> {
    load_split(manifest, root, split)?
        .into_iter()
        .map(|c| {
            Ok(ClipRecord {
                clip_id: c.entry.clip_id.clone(),
                clean: c.clip.to_tensor(&manifest.normalization),
                bundle: c.sidecar.bundle(&manifest.encoder, true)?,
                prev_stage: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub val_loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: LearnedDenoiser,
    pub checkpoint: PathBuf,
    pub curve: Vec<LossRecord>,
}

/// Pinned validation set: windows, σ and noise fixed by the seed.
pub struct Validation {
    examples: Vec<TrainExample>,
    sigmas: Vec<f64>,
    noise: Vec<Tensor>,
}

impl Validation {
    pub fn new(
        records: &[ClipRecord],
        n: usize,
        window: usize,
        sigma: &SigmaDistribution,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let mut out = Self {
            examples: Vec::new(),
            sigmas: Vec::new(),
            noise: Vec::new(),
        };
        if records.is_empty() {
            return Ok(out);
        }
        for i in 0..n {
            let rec = &records[i % records.len()];
            let start = rng.below(rec.frames().saturating_sub(window) + 1);
            let ex = rec.window(start, window)?;
            let s = sample_training_sigma(&mut rng, sigma);
            out.noise
                .push(seeded_gaussian(ex.clean.shape(), s, &mut rng)?);
            out.sigmas.push(s);
            out.examples.push(ex);
        }
        Ok(out)
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Mean denoising loss; NaN when the set is empty.
    pub fn loss(&self, model: &LearnedDenoiser) -> Result<f64> {
        if self.examples.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for ((ex, &s), n) in self.examples.iter().zip(&self.sigmas).zip(&self.noise) {
            total += model.loss(&ex.clean, n, s, &ex.cond())?;
        }
        Ok(total / self.examples.len() as f64)
    }
}

/// Where and how a stage is written.
#[derive(Debug, Clone)]
pub struct StageInfo {
    pub stage: usize,
    pub resolution: usize,
    pub normalization: Normalization,
    pub out_dir: PathBuf,
    /// File name of the final checkpoint inside `out_dir`.
    pub name: String,
}

fn write_curve(path: &Path, curve: &[LossRecord]) -> Result<()> {
    let mut text = String::from("iteration,loss,val_loss\n");
    for r in curve {
        text.push_str(&format!("{},{},{}\n", r.iteration, r.loss, r.val_loss));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains one denoiser on random windows of `records`.
///
/// Writes `<name>` (final), `<stem>-iter<k>.sdnz` every `checkpoint_every`
/// iterations and `<stem>-loss.csv`. The reported training loss in each CSV
/// row is the mean over the preceding `log_every` iterations.
pub fn train(
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    records: &[ClipRecord],
    validation: &Validation,
    info: &StageInfo,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    schedule.validate()?;
    if records.is_empty() {
        return Err(Error::Config("no training clips".into()));
    }
    if records.iter().any(|r| r.frames() < cfg.window) {
        return Err(Error::Config(format!(
            "clips shorter than the {}-frame window",
            cfg.window
        )));
    }
    fs::create_dir_all(&info.out_dir).map_err(|e| Error::io(&info.out_dir, e))?;
    let root = SeededRng::new(cfg.seed);
    let mut arch = cfg.architecture;
    arch.in_channels = if records[0].prev_stage.is_some() {
        2
    } else {
        1
    };
    let mut model =
        LearnedDenoiser::init(arch, *schedule, cfg.condition_mode, &mut root.fork("init"))?;
    let mut rng = root.fork("batches");
    let mut adam = AdamState::new(model.network().params().len());
    let meta = |iteration: usize, model: &LearnedDenoiser| CheckpointMeta {
        condition_mode: cfg.condition_mode,
        has_text_stream: cfg.condition_mode.uses_text(),
        fusion_weights: model.network().architecture().fusion,
        schedule: *schedule,
        architecture: *model.network().architecture(),
        iteration,
        stage: info.stage,
        resolution: info.resolution,
        normalization: Some(info.normalization),
    };
    let stem = info.name.trim_end_matches(".sdnz").to_string();

    let mut curve = vec![LossRecord {
        iteration: 0,
        loss: f64::NAN,
        val_loss: validation.loss(&model)?,
    }];
    let mut running = 0.0;
    let mut since = 0usize;
    for it in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        let mut sigmas = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let rec = &records[rng.below(records.len())];
            let start = rng.below(rec.frames() - cfg.window + 1);
            batch.push(rec.window(start, cfg.window)?);
            sigmas.push(sample_training_sigma(&mut rng, &cfg.sigma));
        }
        let (loss, grads) =
            denoising_loss(&model, &batch, &sigmas, &mut rng).map_err(|e| match e {
                Error::Divergence { message, .. } => Error::Divergence { step: it, message },
                other => other,
            })?;
        let mut params = model.network().params().to_vec();
        update_params(&mut params, &grads, &mut adam, &cfg.adam, cfg.learning_rate)?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                step: it,
                message: "non-finite parameters after update".into(),
            });
        }
        model.network_mut().set_params(&params)?;
        running += loss;
        since += 1;
        if it % cfg.log_every == 0 || it == cfg.iterations {
            let rec = LossRecord {
                iteration: it,
                loss: running / since as f64,
                val_loss: validation.loss(&model)?,
            };
            log::info!(
                "stage {} iter {it}: loss {:.5} val {:.5}",
                info.stage,
                rec.loss,
                rec.val_loss
            );
            curve.push(rec);
            running = 0.0;
            since = 0;
        }
        if it % cfg.checkpoint_every == 0 {
            let p = info.out_dir.join(format!("{stem}-iter{it}.sdnz"));
            write_checkpoint(&p, &model, &meta(it, &model))?;
        }
    }
    let checkpoint = info.out_dir.join(&info.name);
    write_checkpoint(&checkpoint, &model, &meta(cfg.iterations, &model))?;
    write_curve(&info.out_dir.join(format!("{stem}-loss.csv")), &curve)?;
    Ok(TrainOutcome {
        model,
        checkpoint,
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeConfig {
    pub upsampler: Upsampler,
    /// Sampler used to produce the frozen stage-0 outputs that condition
    /// stage 1.
    pub stage0_sampler: SamplerParams,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            upsampler: Upsampler::Bilinear,
            stage0_sampler: SamplerParams::default(),
        }
    }
}

/// Index file naming each stage checkpoint, relative to its own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeManifest {
    pub condition_mode: ConditionMode,
    pub upsampler: Upsampler,
    pub stages: Vec<CascadeStageEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeStageEntry {
    pub checkpoint: String,
    pub resolution: usize,
}

impl CascadeManifest {
    pub fn load(path: &Path) -> Result<Self> {
        crate::dataset::read_json(path)
    }
}

fn downsample_records(records: &[ClipRecord], factor: usize) -> Result<Vec<ClipRecord>> {
    records
        .iter()
        .map(|r| {
            Ok(ClipRecord {
                clean: downsample_box(&r.clean, factor)?,
                ..r.clone()
            })
        })
        .collect()
}

/// Generates a frozen stage-0 output for each record (full clip length) and
/// attaches it, upsampled, to the full-resolution record.
fn attach_stage0(
    stage0: &LearnedDenoiser,
    records: &[ClipRecord],
    low: usize,
    cascade: &CascadeConfig,
    seed: u64,
) -> Result<Vec<ClipRecord>> {
    let root = SeededRng::new(seed);
    records
        .iter()
        .map(|r| {
            let [f, h, w] = *r.clean.shape() else {
                unreachable!()
            };
            let mut rng = root.fork(&r.clip_id);
            let cond = DenoiseCondition::with_bundle(&r.bundle);
            let v0 = generate_tensor(
                stage0,
                &cond,
                &[f, low, low],
                stage0.schedule(),
                &cascade.stage0_sampler,
                &mut rng,
            )?;
            Ok(ClipRecord {
                prev_stage: Some(upsample(&v0, h, w, cascade.upsampler)?),
                ..r.clone()
            })
        })
        .collect()
}

#[derive(Debug)]
pub struct CascadeOutcome {
    pub manifest_path: PathBuf,
    pub stages: Vec<TrainOutcome>,
}

/// Sequential two-stage training: stage 0 at half resolution, then stage 1 at
/// full resolution conditioned on frozen stage-0 samples.
pub fn train_cascade(
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    cascade: &CascadeConfig,
    train_records: &[ClipRecord],
    val_records: &[ClipRecord],
    normalization: Normalization,
    out_dir: &Path,
) -> Result<CascadeOutcome> {
    let Some(first) = train_records.first() else {
        return Err(Error::Config("no training clips".into()));
    };
    let full = first.clean.shape()[1];
    if full % 2 != 0 {
        return Err(Error::Config(format!("resolution {full} is not even")));
    }
    let low = full / 2;
    let root = SeededRng::new(cfg.seed);
    let val_seed = root.fork("validation").seed();

    let cfg0 = TrainConfig {
        seed: root.fork("stage0").seed(),
        ..*cfg
    };
    let train0 = downsample_records(train_records, 2)?;
    let val0 = Validation::new(
        &downsample_records(val_records, 2)?,
        cfg.val_samples,
        cfg.window,
        &cfg.sigma,
        val_seed,
    )?;
    let info0 = StageInfo {
        stage: 0,
        resolution: low,
        normalization,
        out_dir: out_dir.to_path_buf(),
        name: "stage0.sdnz".into(),
    };
    let out0 = train(&cfg0, schedule, &train0, &val0, &info0)?;

    let v0_seed = root.fork("stage0-samples").seed();
    let train1 = attach_stage0(&out0.model, train_records, low, cascade, v0_seed)?;
    let val1_records = attach_stage0(&out0.model, val_records, low, cascade, v0_seed)?;
    let val1 = Validation::new(
        &val1_records,
        cfg.val_samples,
        cfg.window,
        &cfg.sigma,
        val_seed,
    )?;
    let cfg1 = TrainConfig {
        seed: root.fork("stage1").seed(),
        ..*cfg
    };
    let info1 = StageInfo {
        stage: 1,
        resolution: full,
        normalization,
        out_dir: out_dir.to_path_buf(),
        name: "stage1.sdnz".into(),
    };
    let out1 = train(&cfg1, schedule, &train1, &val1, &info1)?;

    let manifest = CascadeManifest {
        condition_mode: cfg.condition_mode,
        upsampler: cascade.upsampler,
        stages: vec![
            CascadeStageEntry {
                checkpoint: info0.name.clone(),
                resolution: low,
            },
            CascadeStageEntry {
                checkpoint: info1.name.clone(),
                resolution: full,
            },
        ],
    };
    let manifest_path = out_dir.join("cascade.json");
    write_json(&manifest_path, &manifest)?;
    Ok(CascadeOutcome {
        manifest_path,
        stages: vec![out0, out1],
    })
}


/// A vs A+T comparison: identical data, initialisation (apart from the
/// fusion block) and batches per seed; only the condition mode differs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub dataset: DatasetConfig,
    pub dataset_seed: u64,
    pub train: TrainConfig,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerParams,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub mode: ConditionMode,
    pub val_loss: f64,
    pub frechet: f64,
    pub rmse: f64,
}

/// Trains both modes for every seed on one generated dataset, then samples
/// every test clip and scores it against its reference.
pub fn run_ablation(cfg: &AblationConfig, dir: &Path) -> Result<Vec<AblationRun>> {
    let (manifest, manifest_path) =
        build_dataset(&cfg.dataset, cfg.dataset_seed, &dir.join("data"))?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let train_records = load_records(&manifest, root, Split::Train)?;
    let test_records = load_records(&manifest, root, Split::Test)?;
    let references: Vec<(String, Clip)> = test_records
        .iter()
        .map(|r| {
            Ok((
                r.clip_id.clone(),
                Clip::from_tensor(&r.clean, &manifest.normalization, manifest.fps)?,
            ))
        })
        .collect::<Result<_>>()?;
    let extractor = ToyExtractor::default();
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let val = Validation::new(
            &test_records,
            cfg.train.val_samples,
            cfg.train.window,
            &cfg.train.sigma,
            derive_seed(seed, "validation"),
        )?;
        for mode in [ConditionMode::Audio, ConditionMode::AudioText] {
            let tc = TrainConfig {
                condition_mode: mode,
                seed: derive_seed(seed, "train"),
                ..cfg.train
            };
            let info = StageInfo {
                stage: 0,
                resolution: manifest.render.resolution,
                normalization: manifest.normalization,
                out_dir: dir.join(format!(
                    "seed{seed}-{}",
                    if mode.uses_text() { "AT" } else { "A" }
                )),
                name: "model.sdnz".into(),
            };
            let out = train(&tc, &cfg.schedule, &train_records, &val, &info)?;
            let val_loss = out.curve.last().map_or(f64::NAN, |r| r.val_loss);
            let sample_seed = derive_seed(seed, "sample");
            let generated: Vec<(String, Clip)> = test_records
                .iter()
                .map(|r| {
                    let mut rng = SeededRng::new(derive_seed(sample_seed, &r.clip_id));
                    let [f, h, w] = *r.clean.shape() else {
                        unreachable!()
                    };
                    let clip = generate(
                        &out.model,
                        &DenoiseCondition::with_bundle(&r.bundle),
                        [f, h, w],
                        &cfg.schedule,
                        &cfg.sampler,
                        &manifest.normalization,
                        manifest.fps,
                        &mut rng,
                    )?;
                    Ok((r.clip_id.clone(), clip))
                })
                .collect::<Result<_>>()?;
            let report = evaluate(&generated, &references, &extractor)?;
            log::info!(
                "ablation seed {seed} {}: val {val_loss:.5} frechet {:.6} rmse {:.3}",
                mode.label(),
                report.frechet,
                report.rmse
            );
            runs.push(AblationRun {
                seed,
                mode,
                val_loss,
                frechet: report.frechet,
                rmse: report.rmse,
            });
        }
    }
    Ok(runs)
}
