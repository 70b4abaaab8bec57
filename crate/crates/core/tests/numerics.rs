use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sonotrace_core::numerics::gradcheck::{central_difference, max_relative_error};
use sonotrace_core::numerics::{
    derive_seed, seeded_gaussian, softmax_rows, sym_eigen, sym_sqrtm, SeededRng, Tensor,
};

/// Box–Muller written out directly against the raw ChaCha8 stream.
fn reference_normals(seed: u64, n: usize) -> Vec<f64> {
    let mut raw = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = || (raw.next_u64() >> 11) as f64 / 9007199254740992.0;
    let mut out = Vec::new();
    while out.len() < n {
        let u1 = 1.0 - uniform();
        let u2 = uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        out.push(r * (2.0 * std::f64::consts::PI * u2).cos());
        out.push(r * (2.0 * std::f64::consts::PI * u2).sin());
    }
    out.truncate(n);
    out
}

#[test]
fn gaussian_stream_matches_independent_box_muller() {
    let mut rng = SeededRng::new(7);
    let t = seeded_gaussian(&[9], 1.0, &mut rng).unwrap();
    let expect = reference_normals(7, 9);
    for (a, b) in t.data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }
}

#[test]
fn gaussian_stream_pinned_values() {
    // Regression anchor: these values must never change across platforms.
    let mut rng = SeededRng::new(7);
    let t = seeded_gaussian(&[4], 1.0, &mut rng).unwrap();
    let pinned = [
        0.28880184241151724,
        0.5099605414308933,
        -0.22730853267554407,
        -1.5443409860014,
    ];
    for (a, b) in t.data().iter().zip(&pinned) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn seed_derivation_uses_sha256_prefix() {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(42u64.to_le_bytes());
    h.update(b"train");
    let d = h.finalize();
    let expect = u64::from_le_bytes(d[..8].try_into().unwrap());
    assert_eq!(derive_seed(42, "train"), expect);
}

#[test]
fn large_sample_moments() {
    let mut rng = SeededRng::new(11);
    let t = seeded_gaussian(&[100_000], 2.0, &mut rng).unwrap();
    assert!(t.mean().abs() < 3.0 * 2.0 / (1e5f64).sqrt());
    assert!((t.std() - 2.0).abs() < 0.04);
}

#[test]
fn eigen_agrees_with_nalgebra() {
    let mut rng = SeededRng::new(3);
    let n = 8;
    let a = seeded_gaussian(&[n, n], 1.0, &mut rng).unwrap();
    let am = DMatrix::from_row_slice(n, n, a.data());
    let m = am.transpose() * &am;
    let t = Tensor::new(vec![n, n], m.as_slice().to_vec()).unwrap();
    let mut ours = sym_eigen(&t, 1e-10).unwrap().values;
    let mut theirs: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ours.sort_by(f64::total_cmp);
    theirs.sort_by(f64::total_cmp);
    for (a, b) in ours.iter().zip(&theirs) {
        assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
    }
    let s = sym_sqrtm(&t, 1e-10).unwrap();
    let sm = DMatrix::from_row_slice(n, n, s.data());
    assert!((&sm - sm.transpose()).norm() < 1e-10);
    assert!((&sm * &sm - &m).norm() / m.norm() < 1e-10);
}

#[test]
fn softmax_random_rows_sum_to_one() {
    let mut rng = SeededRng::new(4);
    let m = seeded_gaussian(&[3, 4], 3.0, &mut rng).unwrap();
    let s = softmax_rows(&m).unwrap();
    for row in s.data().chunks(4) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn finite_difference_oracle_on_known_gradient() {
    let p = [0.3, -1.2, 2.0];
    let numeric = central_difference(&p, 1e-5, |x| x[0] * x[1] + x[2].sin());
    let analytic = [p[1], p[0], p[2].cos()];
    let (_, err) = max_relative_error(&analytic, &numeric, 1e-8);
    assert!(err < 1e-8);
}

proptest! {
    #[test]
    fn sqrtm_squares_back(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = SeededRng::new(seed);
        let a = seeded_gaussian(&[n, n], 1.0, &mut rng).unwrap();
        let am = DMatrix::from_row_slice(n, n, a.data());
        let m = am.transpose() * &am;
        let t = Tensor::new(vec![n, n], m.as_slice().to_vec()).unwrap();
        let s = sym_sqrtm(&t, 1e-9).unwrap();
        let sm = DMatrix::from_row_slice(n, n, s.data());
        prop_assert!((&sm - sm.transpose()).norm() < 1e-10);
        prop_assert!((&sm * &sm - &m).norm() <= 1e-9 * m.norm().max(1.0));
        let eig = sym_eigen(&s, 1e-9).unwrap();
        prop_assert!(eig.values.iter().all(|&l| l >= -1e-9));
    }

    #[test]
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-500.0f64..500.0, 6)) {
        let s = softmax_rows(&Tensor::new(vec![2, 3], vals).unwrap()).unwrap();
        for row in s.data().chunks(3) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_stream(seed in any::<u64>()) {
        let a = seeded_gaussian(&[5], 1.5, &mut SeededRng::new(seed)).unwrap();
        let b = seeded_gaussian(&[5], 1.5, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
