use sonotrace_core::conditioning::{
    cross_attention_fuse, encode_text_like, text_table, ConditionBundle, EncoderConfig,
    FusionWeights,
};
use sonotrace_core::denoiser::checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta};
use sonotrace_core::denoiser::{
    Architecture, ConditionMode, DenoiseCondition, Denoiser, GaussianOracle, LearnedDenoiser,
    Network,
};
use sonotrace_core::numerics::gradcheck::{central_difference, max_relative_error};
use sonotrace_core::numerics::{seeded_gaussian, SeededRng, Tensor};
use sonotrace_core::schedule::{precondition_coeffs, NoiseSchedule};

const D: usize = 8;

fn tiny_arch(in_channels: usize) -> Architecture {
    Architecture {
        in_channels,
        channels: 4,
        blocks: 1,
        groups: 2,
        cond_dim: D,
        ..Default::default()
    }
}

fn bundle(frames: usize, rng: &mut SeededRng) -> ConditionBundle {
    let audio = seeded_gaussian(&[frames, D], 1.0, rng).unwrap();
    let text = seeded_gaussian(&[3, D], 1.0, rng).unwrap();
    ConditionBundle::new(audio, Some(text)).unwrap()
}

fn randomized(mode: ConditionMode, in_channels: usize, seed: u64) -> LearnedDenoiser {
    let mut arch = tiny_arch(in_channels);
    arch.fusion = mode.uses_text();
    let net = Network::randomized(arch, 0.3, &mut SeededRng::new(seed)).unwrap();
    LearnedDenoiser::new(net, NoiseSchedule::default(), mode).unwrap()
}

fn check_gradients(mode: ConditionMode, prev: bool) {
    let mut rng = SeededRng::new(21);
    let shape = [4, 8, 8];
    let clean = seeded_gaussian(&shape, 0.25, &mut rng).unwrap();
    let noise = seeded_gaussian(&shape, 0.6, &mut rng).unwrap();
    let prev_t = seeded_gaussian(&shape, 0.25, &mut rng).unwrap();
    let b = bundle(4, &mut rng);
    let cond = DenoiseCondition {
        bundle: Some(&b),
        prev_stage: prev.then_some(&prev_t),
        frame_offset: 3,
    };
    let model = randomized(mode, 1 + prev as usize, 4);
    let (_, analytic) = model.loss_and_grad(&clean, &noise, 0.6, &cond).unwrap();
    let mut probe = model.clone();
    let numeric = central_difference(model.network().params(), 1e-5, |p| {
        probe.network_mut().set_params(p).unwrap();
        probe.loss(&clean, &noise, 0.6, &cond).unwrap()
    });
    let layout = model.network().layout();
    for (name, range) in layout.segments() {
        let (i, err) = max_relative_error(&analytic[range.clone()], &numeric[range.clone()], 1e-6);
        assert!(
            err < 1e-4,
            "{name}[{i}]: analytic {} numeric {} (rel {err})",
            analytic[range.start + i],
            numeric[range.start + i]
        );
    }
    if mode.uses_text() {
        assert!(layout.fusion_range().is_some());
    }
}

#[test]
fn network_gradients_audio() {
    check_gradients(ConditionMode::Audio, false);
}

#[test]
fn network_gradients_audio_text() {
    check_gradients(ConditionMode::AudioText, false);
}

#[test]
fn network_gradients_with_previous_stage() {
    check_gradients(ConditionMode::AudioText, true);
}

#[test]
fn denoise_recomposes_from_raw_network() {
    let mut rng = SeededRng::new(2);
    let model = randomized(ConditionMode::AudioText, 1, 9);
    let x = seeded_gaussian(&[4, 8, 8], 1.0, &mut rng).unwrap();
    let b = bundle(4, &mut rng);
    let cond = DenoiseCondition::with_bundle(&b);
    for sigma in [0.01, 0.25, 3.0, 80.0] {
        let pc = precondition_coeffs(sigma, 0.25).unwrap();
        let f = model
            .network_forward(&x.scale(pc.c_in), pc.c_noise, &cond)
            .unwrap();
        let expect = x.scale(pc.c_skip).add(&f.scale(pc.c_out)).unwrap();
        let d = model.denoise(&x, sigma, &cond).unwrap();
        for (a, e) in d.data().iter().zip(expect.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_network_returns_skip_scaled_input() {
    let net = Network::zeros(tiny_arch(1)).unwrap();
    let model = LearnedDenoiser::new(net, NoiseSchedule::default(), ConditionMode::Audio).unwrap();
    let mut rng = SeededRng::new(3);
    let x = seeded_gaussian(&[2, 8, 8], 1.0, &mut rng).unwrap();
    let b = bundle(2, &mut rng);
    let d = model
        .denoise(&x, 0.5, &DenoiseCondition::with_bundle(&b))
        .unwrap();
    let c = precondition_coeffs(0.5, 0.25).unwrap().c_skip;
    for (a, xv) in d.data().iter().zip(x.data()) {
        assert!((a - c * xv).abs() < 1e-15);
    }
}

#[test]
fn initial_model_is_skip_connection() {
    // The output head starts at zero, so a fresh model denoises like c_skip·x.
    let model = LearnedDenoiser::init(
        tiny_arch(1),
        NoiseSchedule::default(),
        ConditionMode::AudioText,
        &mut SeededRng::new(5),
    )
    .unwrap();
    let mut rng = SeededRng::new(6);
    let x = seeded_gaussian(&[2, 8, 8], 1.0, &mut rng).unwrap();
    let b = bundle(2, &mut rng);
    let d = model
        .denoise(&x, 2.0, &DenoiseCondition::with_bundle(&b))
        .unwrap();
    let c = precondition_coeffs(2.0, 0.25).unwrap().c_skip;
    assert!(d
        .data()
        .iter()
        .zip(x.data())
        .all(|(a, xv)| (a - c * xv).abs() < 1e-12));
}

#[test]
fn condition_errors() {
    let model = randomized(ConditionMode::AudioText, 1, 1);
    let mut rng = SeededRng::new(1);
    let x = seeded_gaussian(&[4, 8, 8], 1.0, &mut rng).unwrap();
    let b = bundle(4, &mut rng);
    assert!(model
        .denoise(&x, 1.0, &DenoiseCondition::default())
        .is_err());
    assert!(model
        .denoise(&x, 1.0, &DenoiseCondition::with_bundle(&b.without_text()))
        .is_err());
    let short = b.window(0, 2).unwrap();
    assert!(model
        .denoise(&x, 1.0, &DenoiseCondition::with_bundle(&short))
        .is_err());
    assert!(model
        .denoise(&x, 0.0, &DenoiseCondition::with_bundle(&b))
        .is_err());
}

#[test]
fn checkpoint_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sdnz");
    let model = randomized(ConditionMode::AudioText, 2, 3);
    let meta = CheckpointMeta {
        condition_mode: ConditionMode::AudioText,
        has_text_stream: true,
        fusion_weights: true,
        schedule: NoiseSchedule::default(),
        architecture: *model.network().architecture(),
        iteration: 12,
        stage: 1,
        resolution: 8,
        normalization: None,
    };
    write_checkpoint(&path, &model, &meta).unwrap();
    let (back, meta_back) = read_checkpoint(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(meta_back, meta);
}

#[test]
fn text_table_rows_are_pinned() {
    let table = text_table(&EncoderConfig::default());
    let norms: Vec<f64> = table
        .data()
        .chunks(32)
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let pinned = [
        4.952904968412444,
        5.149367945945277,
        5.366166517860716,
        4.948231989977395,
        6.7880567831708225,
        6.770146170407229,
        6.904033256361481,
        5.992101944914303,
        4.772828491246923,
        6.233616598014709,
    ];
    assert_eq!(norms.len(), pinned.len());
    for (n, p) in norms.iter().zip(pinned) {
        assert!((n - p).abs() < 1e-12, "{n} vs {p}");
    }
}

#[test]
fn fusion_ignores_text_order() {
    let mut rng = SeededRng::new(12);
    let cfg = EncoderConfig {
        dim: D,
        ..Default::default()
    };
    let audio = seeded_gaussian(&[5, D], 1.0, &mut rng).unwrap();
    let mut w = FusionWeights::init(D, &mut rng);
    rng.fill_normal(&mut w.wo, 0.3);
    let text = encode_text_like(&[3, 1, 4, 1, 5], &cfg).unwrap();
    let shuffled = encode_text_like(&[5, 1, 4, 3, 1], &cfg).unwrap();
    let a = cross_attention_fuse(&audio, &text, &w).unwrap();
    let b = cross_attention_fuse(&audio, &shuffled, &w).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
    let other = encode_text_like(&[0, 0, 0, 0, 0], &cfg).unwrap();
    let c = cross_attention_fuse(&audio, &other, &w).unwrap();
    assert!(a.sub(&c).unwrap().norm() > 1e-3);
}

#[test]
fn fused_bundle_shape_tracks_audio() {
    let mut rng = SeededRng::new(13);
    let b = bundle(6, &mut rng);
    let w = FusionWeights::init(D, &mut rng);
    let fused = cross_attention_fuse(&b.audio_seq, b.text_seq.as_ref().unwrap(), &w).unwrap();
    assert_eq!(fused.shape(), &[6, D]);
    // Zero output projection leaves the audio untouched.
    assert_eq!(
        fused,
        Tensor::new(vec![6, D], b.audio_seq.data().to_vec()).unwrap()
    );
}

#[test]
fn gaussian_oracle_is_l2_optimal() {
    let dim = 16;
    let mean = Tensor::full(&[dim], 0.3);
    let oracle = GaussianOracle::new(mean.clone(), 0.25).unwrap();
    let mut rng = SeededRng::new(40);
    let draws = 2000;
    for sigma in [0.05, 0.25, 1.0, 4.0] {
        let mut pairs = Vec::with_capacity(draws);
        for _ in 0..draws {
            let y = seeded_gaussian(&[dim], 0.25, &mut rng)
                .unwrap()
                .add(&mean)
                .unwrap();
            let x = y
                .add(&seeded_gaussian(&[dim], sigma, &mut rng).unwrap())
                .unwrap();
            pairs.push((y, x));
        }
        let loss = |f: &dyn Fn(&Tensor) -> Tensor| -> f64 {
            pairs
                .iter()
                .map(|(y, x)| f(x).sub(y).unwrap().norm_sq())
                .sum::<f64>()
                / draws as f64
        };
        let best = loss(&|x| {
            oracle
                .denoise(x, sigma, &DenoiseCondition::default())
                .unwrap()
        });
        for k in 0..20 {
            // Smooth perturbation eps·sin(a·x + b) with per-variant a, b.
            let (a, b) = (0.5 + k as f64 * 0.3, k as f64 * 0.7);
            let eps = 0.02 * (1 + k % 5) as f64;
            let worse = loss(&|x| {
                oracle
                    .denoise(x, sigma, &DenoiseCondition::default())
                    .unwrap()
                    .add(&x.map(|v| eps * (a * v + b).sin()))
                    .unwrap()
            });
            assert!(worse > best, "sigma {sigma} variant {k}: {worse} <= {best}");
        }
    }
}

#[test]
fn learned_denoiser_limits_and_lipschitz() {
    let mut rng = SeededRng::new(41);
    let net = Network::randomized(tiny_arch(1), 0.1, &mut SeededRng::new(2)).unwrap();
    let model = LearnedDenoiser::new(net, NoiseSchedule::default(), ConditionMode::Audio).unwrap();
    let x = seeded_gaussian(&[2, 8, 8], 1.0, &mut rng).unwrap();
    let b = bundle(2, &mut rng);
    let cond = DenoiseCondition::with_bundle(&b);
    let d = model.denoise(&x, 1e-6, &cond).unwrap();
    let rel = d.sub(&x).unwrap().norm() / x.norm();
    assert!(rel <= 1e-5, "relative gap {rel}");
    assert_eq!(d, model.denoise(&x, 1e-6, &cond).unwrap());

    let zero = LearnedDenoiser::new(
        Network::zeros(tiny_arch(1)).unwrap(),
        NoiseSchedule::default(),
        ConditionMode::Audio,
    )
    .unwrap();
    let x2 = seeded_gaussian(&[2, 8, 8], 1.0, &mut rng).unwrap();
    for sigma in [0.01, 0.5, 20.0] {
        let c = precondition_coeffs(sigma, 0.25).unwrap().c_skip;
        let gap = zero
            .denoise(&x, sigma, &cond)
            .unwrap()
            .sub(&zero.denoise(&x2, sigma, &cond).unwrap())
            .unwrap()
            .norm();
        assert!((gap - c * x.sub(&x2).unwrap().norm()).abs() < 1e-12);
    }
}
