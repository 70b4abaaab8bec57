use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use sonotrace_core::dataset::Clip;
use sonotrace_core::metrics::{
    evaluate, feature_moments, frechet_distance, psnr, psnr_from_rmse, rmse, FeatureExtractor,
    ToyExtractor, FEATURE_DIM,
};
use sonotrace_core::numerics::{seeded_gaussian, SeededRng, Tensor};
use sonotrace_core::Error;

fn random_spd(d: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    let a = seeded_gaussian(&[d, d], 1.0, rng).unwrap();
    let a = DMatrix::from_row_slice(d, d, a.data());
    a.transpose() * a / d as f64
}

fn to_tensor(m: &DMatrix<f64>) -> Tensor {
    let d = m.nrows();
    Tensor::new(vec![d, d], m.transpose().as_slice().to_vec()).unwrap()
}

/// Independent Fréchet distance through nalgebra's eigensolver.
fn reference_frechet(mu1: &[f64], c1: &DMatrix<f64>, mu2: &[f64], c2: &DMatrix<f64>) -> f64 {
    let sqrt = |m: &DMatrix<f64>| {
        let e = SymmetricEigen::new(m.clone());
        let vals = e.eigenvalues.map(|l| l.max(0.0).sqrt());
        &e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose()
    };
    let r1 = sqrt(c1);
    let inner = &r1 * c2 * &r1;
    let inner = (&inner + inner.transpose()) / 2.0;
    let mean: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b).powi(2)).sum();
    mean + c1.trace() + c2.trace() - 2.0 * sqrt(&inner).trace()
}

#[test]
fn frechet_matches_nalgebra() {
    let mut rng = SeededRng::new(31);
    for d in [1, 3, 8, 16] {
        let c1 = random_spd(d, &mut rng);
        let c2 = random_spd(d, &mut rng);
        let mu1: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let mu2: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let ours = frechet_distance(&mu1, &to_tensor(&c1), &mu2, &to_tensor(&c2)).unwrap();
        let theirs = reference_frechet(&mu1, &c1, &mu2, &c2);
        assert!(
            (ours - theirs).abs() < 1e-6 * (1.0 + theirs),
            "d={d}: {ours} vs {theirs}"
        );
    }
}

#[test]
fn frechet_unit_cases() {
    let c = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
    assert!(frechet_distance(&[0.0], &c, &[0.0], &c).unwrap().abs() < 1e-12);
    assert!((frechet_distance(&[0.0], &c, &[1.0], &c).unwrap() - 1.0).abs() < 1e-12);
    // Two Gaussians differing only in variance: (σ1 − σ2)².
    let a = Tensor::new(vec![1, 1], vec![4.0]).unwrap();
    let b = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
    assert!((frechet_distance(&[0.0], &a, &[0.0], &b).unwrap() - 1.0).abs() < 1e-7);
}

#[test]
fn frechet_rejects_shape_mismatch_and_indefinite() {
    let c = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
    assert!(frechet_distance(&[0.0, 1.0], &c, &[0.0], &c).is_err());
    let bad = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, -1.0]).unwrap();
    assert!(frechet_distance(&[0.0, 0.0], &bad, &[0.0, 0.0], &bad).is_err());
}

#[test]
fn table_psnr_pairs_follow_8bit_convention() {
    for (r, p) in [(5.8489, 32.8234), (5.6635, 33.1081), (5.6341, 33.1482)] {
        assert!(
            (psnr_from_rmse(r) - p).abs() <= 0.05,
            "{r}: {}",
            psnr_from_rmse(r)
        );
    }
}

#[test]
fn rmse_and_psnr_on_clips() {
    let a = Clip::new(1, 2, 2, 60, vec![0, 0, 0, 0]).unwrap();
    let b = Clip::new(1, 2, 2, 60, vec![10, 10, 10, 10]).unwrap();
    assert_eq!(rmse(&a, &b).unwrap(), 10.0);
    assert!((psnr(&a, &b).unwrap() - 20.0 * 25.5f64.log10()).abs() < 1e-12);
    assert!(psnr(&a, &a).unwrap().is_infinite());
    let c = Clip::new(1, 1, 4, 60, vec![0; 4]).unwrap();
    assert!(rmse(&a, &c).is_err());
}

fn noise_clip(seed: u64) -> Clip {
    let mut rng = SeededRng::new(seed);
    Clip::new(
        4,
        32,
        32,
        60,
        (0..4 * 32 * 32).map(|_| rng.below(256) as u8).collect(),
    )
    .unwrap()
}

#[test]
fn toy_extractor_projection_is_orthonormal() {
    let p = ToyExtractor::default().projection();
    let m = DMatrix::from_row_slice(p.shape()[0], p.shape()[1], p.data());
    let gram = m.transpose() * &m;
    assert!((gram - DMatrix::identity(FEATURE_DIM, FEATURE_DIM)).norm() < 1e-10);
    let f = ToyExtractor::default()
        .extract("x", &noise_clip(1))
        .unwrap();
    assert_eq!(f.len(), FEATURE_DIM);
}

#[test]
fn evaluate_identical_sets() {
    let set: Vec<(String, Clip)> = (0..5).map(|i| (format!("c{i}"), noise_clip(i))).collect();
    let rep = evaluate(&set, &set, &ToyExtractor::default()).unwrap();
    assert_eq!(rep.rmse, 0.0);
    assert_eq!(rep.psnr_db, None);
    assert!(rep.frechet.abs() < 1e-6);
    assert_eq!(rep.n_generated, 5);
}

#[test]
fn evaluate_lists_unmatched_ids() {
    let gen: Vec<(String, Clip)> = (0..3).map(|i| (format!("c{i}"), noise_clip(i))).collect();
    let refs: Vec<(String, Clip)> = (1..4).map(|i| (format!("c{i}"), noise_clip(i))).collect();
    match evaluate(&gen, &refs, &ToyExtractor::default()) {
        Err(Error::Protocol { unmatched }) => {
            assert_eq!(unmatched, vec!["c0".to_string(), "c3".to_string()])
        }
        other => panic!("expected a pairing error, got {other:?}"),
    }
}

#[test]
fn evaluate_ignores_input_order() {
    let gen: Vec<(String, Clip)> = (0..4).map(|i| (format!("c{i}"), noise_clip(i))).collect();
    let refs: Vec<(String, Clip)> = (0..4)
        .map(|i| (format!("c{i}"), noise_clip(10 + i)))
        .collect();
    let mut shuffled = gen.clone();
    shuffled.reverse();
    let x = evaluate(&gen, &refs, &ToyExtractor::default()).unwrap();
    let y = evaluate(&shuffled, &refs, &ToyExtractor::default()).unwrap();
    assert_eq!(x, y);
    assert!(x.rmse > 0.0 && x.psnr_db.is_some());
}

proptest! {
    #[test]
    fn frechet_is_symmetric_and_nonnegative(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = SeededRng::new(seed);
        let c1 = to_tensor(&random_spd(d, &mut rng));
        let c2 = to_tensor(&random_spd(d, &mut rng));
        let mu1: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let mu2: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let ab = frechet_distance(&mu1, &c1, &mu2, &c2).unwrap();
        let ba = frechet_distance(&mu2, &c2, &mu1, &c1).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-8 * (1.0 + ab));
        prop_assert!(frechet_distance(&mu1, &c1, &mu1, &c1).unwrap() < 1e-7);
    }

    #[test]
    fn moments_are_shift_equivariant(seed in any::<u64>(), shift in -5.0f64..5.0) {
        let mut rng = SeededRng::new(seed);
        let feats: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let moved: Vec<Vec<f64>> = feats.iter().map(|f| f.iter().map(|v| v + shift).collect()).collect();
        let (m1, c1) = feature_moments(&feats).unwrap();
        let (m2, c2) = feature_moments(&moved).unwrap();
        for (a, b) in m1.iter().zip(&m2) {
            prop_assert!((b - a - shift).abs() < 1e-9);
        }
        for (a, b) in c1.data().iter().zip(c2.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
