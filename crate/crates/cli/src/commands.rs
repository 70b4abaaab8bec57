use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sonotrace_core::config::RunConfig;
use sonotrace_core::dataset::{
    build_dataset, decode_header, load_split, read_clip, write_clip, write_json, write_pgm, Clip,
    ConditionSidecar, ConditionsFile, Manifest, Normalization, Split, DEFAULT_FPS, UTIV_MAGIC,
};
use sonotrace_core::denoiser::checkpoint::{
    decode_checkpoint, read_checkpoint, sidecar_path, CheckpointMeta, MAGIC,
};
use sonotrace_core::denoiser::{ConditionMode, DenoiseCondition, LearnedDenoiser};
use sonotrace_core::metrics::{
    evaluate as evaluate_sets, ExternalFeatures, FeatureExtractor, ToyExtractor,
};
use sonotrace_core::numerics::{derive_seed, SeededRng};
use sonotrace_core::sampler::{cascade_generate, generate, CascadeSpec, CascadeStage};
use sonotrace_core::training::{
    load_records, train as train_stage, train_cascade, CascadeManifest, StageInfo, Validation,
};
use sonotrace_core::{Error, Result};

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => RunConfig::from_json("{}"),
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn gen_data(config: Option<&Path>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config)?;
    let out = out.unwrap_or_else(|| cfg.output_dir.join("data"));
    let (manifest, path) = build_dataset(&cfg.dataset, cfg.module_seed("dataset"), &out)?;
    cfg.echo(&out)?;
    log::info!(
        "{} clips ({} train / {} test speakers)",
        manifest.entries.len(),
        manifest.speakers(Split::Train).len(),
        manifest.speakers(Split::Test).len()
    );
    println!("{}", path.display());
    Ok(())
}

pub fn train(
    config: Option<&Path>,
    manifest_path: &Path,
    mode: Option<ConditionMode>,
    cascade: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let mut tc = cfg.train_config();
    if let Some(m) = mode {
        tc.condition_mode = m;
    }
    let manifest = Manifest::load(manifest_path)?;
    if manifest.encoder.dim != tc.architecture.cond_dim {
        return Err(Error::Config(format!(
            "architecture cond_dim {} does not match the dataset embedding width {}",
            tc.architecture.cond_dim, manifest.encoder.dim
        )));
    }
    let out = out.unwrap_or_else(|| {
        let tag = if tc.condition_mode.uses_text() {
            "AT"
        } else {
            "A"
        };
        cfg.output_dir.join(format!("train-{tag}"))
    });
    let root = parent_dir(manifest_path);
    let train_records = load_records(&manifest, &root, Split::Train)?;
    let val_records = load_records(&manifest, &root, Split::Test)?;
    cfg.echo(&out)?;
    let result = if cascade {
        train_cascade(
            &tc,
            &cfg.schedule,
            &cfg.cascade,
            &train_records,
            &val_records,
            manifest.normalization,
            &out,
        )?
        .manifest_path
    } else {
        let val = Validation::new(
            &val_records,
            tc.val_samples,
            tc.window,
            &tc.sigma,
            cfg.module_seed("validation"),
        )?;
        let info = StageInfo {
            stage: 0,
            resolution: manifest.render.resolution,
            normalization: manifest.normalization,
            out_dir: out.clone(),
            name: "model.sdnz".into(),
        };
        train_stage(&tc, &cfg.schedule, &train_records, &val, &info)?.checkpoint
    };
    println!("{}", result.display());
    Ok(())
}

pub struct SampleArgs<'a> {
    pub config: Option<&'a Path>,
    pub checkpoint: &'a Path,
    pub conditions: &'a Path,
    pub split: Option<&'a str>,
    pub out: Option<PathBuf>,
    pub frames: bool,
    pub cascade: bool,
}

struct Stage {
    model: LearnedDenoiser,
    meta: CheckpointMeta,
}

fn normalization_of(meta: &CheckpointMeta) -> Normalization {
    meta.normalization.unwrap_or_else(|| {
        log::warn!("checkpoint has no normalization; using the identity map");
        Normalization::default()
    })
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!(
            "unknown split {other:?} (expected train or test)"
        ))),
    }
}

fn write_frames(clip: &Clip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for f in 0..clip.frames() {
        write_pgm(clip, f, &dir.join(format!("{f:03}.pgm")))?;
    }
    Ok(())
}

pub fn sample(args: SampleArgs) -> Result<()> {
    let cfg = load_config(args.config)?;
    let out = args.out.unwrap_or_else(|| cfg.output_dir.join("samples"));
    let conditions: ConditionsFile = ConditionsFile::load(args.conditions)?;
    let split = args.split.map(parse_split).transpose()?;
    let entries: Vec<_> = conditions
        .entries
        .iter()
        .filter(|e| split.is_none() || e.split == split)
        .collect();
    let stages: Vec<Stage> = if args.cascade {
        let index = CascadeManifest::load(args.checkpoint)?;
        let dir = parent_dir(args.checkpoint);
        index
            .stages
            .iter()
            .map(|s| {
                let (model, meta) = read_checkpoint(&dir.join(&s.checkpoint))?;
                Ok(Stage { model, meta })
            })
            .collect::<Result<_>>()?
    } else {
        let (model, meta) = read_checkpoint(args.checkpoint)?;
        vec![Stage { model, meta }]
    };
    let upsampler = if args.cascade {
        CascadeManifest::load(args.checkpoint)?.upsampler
    } else {
        Default::default()
    };
    let last = stages.last().expect("at least one stage");
    let norm = normalization_of(&last.meta);
    let uses_text = last.model.mode().uses_text();
    fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    cfg.echo(&out)?;
    let cond_root = parent_dir(args.conditions);
    let sample_seed = cfg.module_seed("sample");

    let results: Vec<Result<PathBuf>> = entries
        .par_iter()
        .map(|entry| {
            let sidecar = ConditionSidecar::load(&cond_root.join(&entry.sidecar))?;
            let bundle = sidecar.bundle(&conditions.encoder, uses_text)?;
            let frames = sidecar.frame_symbols.len();
            let mut rng = SeededRng::new(derive_seed(sample_seed, &entry.clip_id));
            let cond = DenoiseCondition::with_bundle(&bundle);
            let path = out.join(format!("{}.utiv", entry.clip_id));
            let clip = if args.cascade {
                let spec = CascadeSpec {
                    stages: stages
                        .iter()
                        .map(|s| CascadeStage {
                            model: &s.model,
                            resolution: s.meta.resolution,
                        })
                        .collect(),
                    upsampler,
                };
                let outputs = cascade_generate(
                    &spec,
                    &cond,
                    frames,
                    last.model.schedule(),
                    &cfg.sampler,
                    &mut rng,
                )?;
                for (s, v) in outputs.iter().enumerate().take(outputs.len() - 1) {
                    let clip = Clip::from_tensor(v, &norm, DEFAULT_FPS)?;
                    write_clip(&clip, &out.join(format!("{}.v{s}.utiv", entry.clip_id)))?;
                }
                Clip::from_tensor(outputs.last().expect("non-empty"), &norm, DEFAULT_FPS)?
            } else {
                let r = last.meta.resolution;
                generate(
                    &last.model,
                    &cond,
                    [frames, r, r],
                    last.model.schedule(),
                    &cfg.sampler,
                    &norm,
                    DEFAULT_FPS,
                    &mut rng,
                )?
            };
            write_clip(&clip, &path)?;
            if args.frames {
                write_frames(&clip, &out.join("frames").join(&entry.clip_id))?;
            }
            Ok(path)
        })
        .collect();
    for r in results {
        println!("{}", r?.display());
    }
    Ok(())
}

/// Final-stage clips in `dir` keyed by file stem; intermediate cascade
/// outputs (`<id>.v<k>.utiv`) are skipped.
fn generated_clips(dir: &Path) -> Result<Vec<(String, Clip)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "utiv"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let stem = p
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if stem
            .rsplit_once('.')
            .is_some_and(|(_, tail)| tail.starts_with('v'))
        {
            continue;
        }
        out.push((stem, read_clip(&p)?));
    }
    Ok(out)
}

pub fn evaluate(
    config: Option<&Path>,
    generated: &Path,
    reference: &Path,
    out: &Path,
) -> Result<()> {
    let cfg = load_config(config)?;
    let gen = generated_clips(generated)?;
    let manifest = Manifest::load(reference)?;
    let refs: Vec<(String, Clip)> = load_split(&manifest, &parent_dir(reference), Split::Test)?
        .into_iter()
        .map(|c| (c.entry.clip_id, c.clip))
        .collect();
    let extractor: Box<dyn FeatureExtractor> = match &cfg.metrics.external_features {
        Some(p) => Box::new(ExternalFeatures::load(p)?),
        None => Box::new(ToyExtractor::default()),
    };
    let mut report = evaluate_sets(&gen, &refs, extractor.as_ref())?;
    report.config_digest = Some(cfg.digest());
    let dir = parent_dir(out);
    if !dir.as_os_str().is_empty() {
        cfg.echo(&dir)?;
    }
    write_json(out, &report)?;
    let psnr = report
        .psnr_db
        .map_or("inf".to_string(), |p| format!("{p:.4}"));
    eprintln!(
        "n={:<4} rmse={:.4} psnr_db={psnr} frechet={:.6}",
        report.n_generated, report.rmse, report.frechet
    );
    println!("{}", out.display());
    Ok(())
}

pub fn inspect(path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if bytes.starts_with(UTIV_MAGIC) {
        let h = decode_header(&bytes)?;
        let clip = sonotrace_core::dataset::decode_clip(&bytes)?;
        let text = serde_json::json!({
            "format": "UTIV",
            "version": h.version,
            "frames": h.frames,
            "height": h.height,
            "width": h.width,
            "fps": h.fps,
            "bytes": bytes.len(),
            "mean_pixel": clip.pixels().iter().map(|&p| p as f64).sum::<f64>() / clip.pixels().len() as f64,
        });
        println!("{}", serde_json::to_string_pretty(&text).expect("json"));
        Ok(())
    } else if bytes.starts_with(MAGIC) {
        let net = decode_checkpoint(&bytes)?;
        let side = sidecar_path(path);
        let meta = fs::read_to_string(&side)
            .ok()
            .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok());
        let text = serde_json::json!({
            "format": "SDNZ",
            "architecture": net.architecture(),
            "parameters": net.params().len(),
            "metadata": meta,
        });
        println!("{}", serde_json::to_string_pretty(&text).expect("json"));
        Ok(())
    } else {
        Err(Error::Format {
            offset: 0,
            message: "unrecognised magic (expected UTIV or SDNZ)".into(),
        })
    }
}
