//! Python bindings for the sonotrace core: schedules, oracle sampling,
//! metrics, the UTIV clip format and the synthetic data generator.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use sonotrace_core::conditioning::{
    encode_audio_like, encode_text_like, EncoderConfig, SpeakerParams,
};
use sonotrace_core::dataset::{self, contour_codebook, Clip, RenderConfig};
use sonotrace_core::denoiser::{
    oracle_gaussian_denoise, DenoiseCondition, GaussianOracle, GmmComponent, GmmOracle,
};
use sonotrace_core::metrics;
use sonotrace_core::numerics::{self, SeededRng, Tensor};
use sonotrace_core::sampler::{self, generate_tensor, SamplerParams};
use sonotrace_core::schedule::{self, NoiseSchedule};
use sonotrace_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn vector(values: Vec<f64>) -> PyResult<Tensor> {
    Tensor::new(vec![values.len()], values).map_err(err)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("covariance must be square"));
    }
    Tensor::new(vec![n, n], rows.concat()).map_err(err)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = *t.shape().last().unwrap_or(&1);
    t.data().chunks(cols.max(1)).map(<[f64]>::to_vec).collect()
}

fn schedule(sigma_min: f64, sigma_max: f64, sigma_data: f64, rho: f64) -> NoiseSchedule {
    NoiseSchedule {
        sigma_min,
        sigma_max,
        sigma_data,
        rho,
        ..NoiseSchedule::default()
    }
}

/// 8-bit grayscale clip (`frames × height × width`).
#[pyclass(name = "Clip", frozen)]
struct PyClip {
    inner: Clip,
}

#[pymethods]
impl PyClip {
    #[new]
    #[pyo3(signature = (frames, height, width, pixels, fps=60))]
    fn new(
        frames: usize,
        height: usize,
        width: usize,
        pixels: &Bound<'_, PyBytes>,
        fps: u16,
    ) -> PyResult<Self> {
        let inner =
            Clip::new(frames, height, width, fps, pixels.as_bytes().to_vec()).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn frames(&self) -> usize {
        self.inner.frames()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn fps(&self) -> u16 {
        self.inner.fps()
    }

    #[getter]
    fn pixels<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.pixels())
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &dataset::encode_clip(&self.inner))
    }

    #[staticmethod]
    fn from_bytes(data: &Bound<'_, PyBytes>) -> PyResult<Self> {
        Ok(Self {
            inner: dataset::decode_clip(data.as_bytes()).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        let [f, h, w] = self.inner.shape();
        format!(
            "Clip(frames={f}, height={h}, width={w}, fps={})",
            self.inner.fps()
        )
    }
}

/// `(c_skip, c_out, c_in, c_noise)` at noise level `sigma`.
#[pyfunction]
#[pyo3(signature = (sigma, sigma_data=0.25))]
fn precondition_coeffs(sigma: f64, sigma_data: f64) -> PyResult<(f64, f64, f64, f64)> {
    let p = schedule::precondition_coeffs(sigma, sigma_data).map_err(err)?;
    Ok((p.c_skip, p.c_out, p.c_in, p.c_noise))
}

/// Decreasing noise levels for `n_steps` steps, ending at 0.
#[pyfunction]
#[pyo3(signature = (n_steps=18, sigma_min=0.002, sigma_max=160.0, rho=7.0))]
fn sigma_steps(n_steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> PyResult<Vec<f64>> {
    schedule(sigma_min, sigma_max, 0.25, rho)
        .grid(n_steps)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (t, n_steps, s_churn, s_tmin=0.05, s_tmax=50.0))]
fn churn_gamma(t: f64, n_steps: usize, s_churn: f64, s_tmin: f64, s_tmax: f64) -> f64 {
    sampler::churn_gamma(
        t,
        &SamplerParams {
            n_steps,
            s_churn,
            s_tmin,
            s_tmax,
            ..SamplerParams::default()
        },
    )
}

/// Posterior mean of `N(mean, data_std²)` data given `x` at noise `sigma`.
#[pyfunction]
fn gaussian_denoise(x: Vec<f64>, sigma: f64, mean: Vec<f64>, data_std: f64) -> PyResult<Vec<f64>> {
    let oracle = GaussianOracle::new(vector(mean)?, data_std).map_err(err)?;
    Ok(oracle_gaussian_denoise(&vector(x)?, sigma, &oracle)
        .map_err(err)?
        .into_data())
}

/// Runs the sampler on the Gaussian oracle; returns the endpoint.
#[pyfunction]
#[pyo3(signature = (mean, data_std, n_steps, seed, s_churn=0.0, sigma_max=160.0))]
fn sample_gaussian(
    mean: Vec<f64>,
    data_std: f64,
    n_steps: usize,
    seed: u64,
    s_churn: f64,
    sigma_max: f64,
) -> PyResult<Vec<f64>> {
    let shape = [mean.len()];
    let oracle = GaussianOracle::new(vector(mean)?, data_std).map_err(err)?;
    let params = SamplerParams {
        n_steps,
        s_churn,
        ..SamplerParams::default()
    };
    let sched = schedule(0.002, sigma_max, data_std, 7.0);
    let mut rng = SeededRng::new(seed);
    let x = generate_tensor(
        &oracle,
        &DenoiseCondition::default(),
        &shape,
        &sched,
        &params,
        &mut rng,
    )
    .map_err(err)?;
    Ok(x.into_data())
}

/// Draws `n_samples` scalar samples from a 1-D Gaussian mixture through the
/// stochastic sampler (one trajectory per sample).
#[pyfunction]
#[pyo3(signature = (weights, means, std, n_samples, seed, n_steps=40, s_churn=40.0))]
fn sample_gmm(
    weights: Vec<f64>,
    means: Vec<f64>,
    std: f64,
    n_samples: usize,
    seed: u64,
    n_steps: usize,
    s_churn: f64,
) -> PyResult<Vec<f64>> {
    if weights.len() != means.len() {
        return Err(PyValueError::new_err("weights and means differ in length"));
    }
    let components = weights
        .iter()
        .zip(&means)
        .map(|(&w, &m)| {
            Ok(GmmComponent {
                weight: w,
                mean: vector(vec![m])?,
                std,
            })
        })
        .collect::<PyResult<_>>()?;
    let gmm = GmmOracle::new(components).map_err(err)?;
    let params = SamplerParams {
        n_steps,
        s_churn,
        ..SamplerParams::default()
    };
    let sched = NoiseSchedule::default();
    let mut rng = SeededRng::new(seed);
    (0..n_samples)
        .map(|_| {
            let x = generate_tensor(
                &gmm,
                &DenoiseCondition::default(),
                &[1],
                &sched,
                &params,
                &mut rng,
            )
            .map_err(err)?;
            Ok(x.data()[0])
        })
        .collect()
}

#[pyfunction]
fn frechet_distance(
    mu1: Vec<f64>,
    cov1: Vec<Vec<f64>>,
    mu2: Vec<f64>,
    cov2: Vec<Vec<f64>>,
) -> PyResult<f64> {
    metrics::frechet_distance(&mu1, &matrix(cov1)?, &mu2, &matrix(cov2)?).map_err(err)
}

/// Sample mean and covariance of a list of feature vectors.
#[pyfunction]
fn feature_moments(features: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let (mu, cov) = metrics::feature_moments(&features).map_err(err)?;
    Ok((mu, rows(&cov)))
}

#[pyfunction]
fn rmse(a: &PyClip, b: &PyClip) -> PyResult<f64> {
    metrics::rmse(&a.inner, &b.inner).map_err(err)
}

#[pyfunction]
fn psnr(a: &PyClip, b: &PyClip) -> PyResult<f64> {
    metrics::psnr(&a.inner, &b.inner).map_err(err)
}

#[pyfunction]
fn psnr_from_rmse(rmse: f64) -> f64 {
    metrics::psnr_from_rmse(rmse)
}

/// 64-dim toy features of a clip.
#[pyfunction]
fn extract_features(clip: &PyClip) -> PyResult<Vec<f64>> {
    use metrics::FeatureExtractor;
    metrics::ToyExtractor::default()
        .extract("", &clip.inner)
        .map_err(err)
}

#[pyfunction]
fn read_clip(path: PathBuf) -> PyResult<PyClip> {
    Ok(PyClip {
        inner: dataset::read_clip(&path).map_err(err)?,
    })
}

#[pyfunction]
fn write_clip(clip: &PyClip, path: PathBuf) -> PyResult<()> {
    dataset::write_clip(&clip.inner, &path).map_err(err)
}

/// Renders a synthetic clip for speaker `speaker_id` of the dataset drawn
/// from `master_seed`.
#[pyfunction]
#[pyo3(signature = (symbols, speaker_id, master_seed, seed, resolution=32, frames_per_symbol=4, speckle_std=8.0))]
fn synth_clip(
    symbols: Vec<u32>,
    speaker_id: u32,
    master_seed: u64,
    seed: u64,
    resolution: usize,
    frames_per_symbol: usize,
    speckle_std: f64,
) -> PyResult<PyClip> {
    let cfg = RenderConfig {
        resolution,
        frames_per_symbol,
        speckle_std,
        ..RenderConfig::default()
    };
    let book = contour_codebook(
        cfg.n_symbols,
        numerics::derive_seed(master_seed, "contours"),
    );
    let speaker = SpeakerParams::generate(speaker_id, master_seed);
    Ok(PyClip {
        inner: dataset::synth_clip(&symbols, &speaker, &cfg, &book, seed).map_err(err)?,
    })
}

/// Per-frame audio-like embeddings (`frames × dim`).
#[pyfunction]
#[pyo3(signature = (frame_symbols, speaker_id, master_seed, clip_seed, dim=32, jitter_std=0.01))]
fn encode_audio(
    frame_symbols: Vec<u32>,
    speaker_id: u32,
    master_seed: u64,
    clip_seed: u64,
    dim: usize,
    jitter_std: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let cfg = EncoderConfig {
        dim,
        jitter_std,
        ..EncoderConfig::default()
    };
    let speaker = SpeakerParams::generate(speaker_id, master_seed);
    Ok(rows(
        &encode_audio_like(&frame_symbols, &speaker, &cfg, clip_seed).map_err(err)?,
    ))
}

/// Per-token text-like embeddings (`tokens × dim`).
#[pyfunction]
#[pyo3(signature = (symbols, dim=32))]
fn encode_text(symbols: Vec<u32>, dim: usize) -> PyResult<Vec<Vec<f64>>> {
    let cfg = EncoderConfig {
        dim,
        ..EncoderConfig::default()
    };
    Ok(rows(&encode_text_like(&symbols, &cfg).map_err(err)?))
}

#[pyfunction]
fn derive_seed(master: u64, label: &str) -> u64 {
    numerics::derive_seed(master, label)
}

#[pymodule]
fn sonotrace(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClip>()?;
    m.add_function(wrap_pyfunction!(precondition_coeffs, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_steps, m)?)?;
    m.add_function(wrap_pyfunction!(churn_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_denoise, m)?)?;
    m.add_function(wrap_pyfunction!(sample_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(sample_gmm, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(feature_moments, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(psnr_from_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(read_clip, m)?)?;
    m.add_function(wrap_pyfunction!(write_clip, m)?)?;
    m.add_function(wrap_pyfunction!(synth_clip, m)?)?;
    m.add_function(wrap_pyfunction!(encode_audio, m)?)?;
    m.add_function(wrap_pyfunction!(encode_text, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    Ok(())
}
