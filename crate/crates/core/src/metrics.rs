//! Pixel error metrics, the toy clip feature extractor and the Fréchet
//! distance between Gaussian feature fits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Clip;
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, sym_eigen, sym_sqrtm, SeededRng, Tensor};

pub const FEATURE_DIM: usize = 64;
pub const POOL_SIDE: usize = 16;
const POOLED_DIM: usize = 2 * POOL_SIDE * POOL_SIDE;
/// Diagonal regulariser added to both covariances.
pub const COV_EPS: f64 = 1e-8;

fn check_pair(a: &Clip, b: &Clip) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::arg(format!(
            "clip shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Root mean squared difference in gray levels.
pub fn rmse(a: &Clip, b: &Clip) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok((sum / a.pixels().len() as f64).sqrt())
}

/// `20·log10(255 / rmse)`; `+∞` for a zero error.
pub fn psnr_from_rmse(rmse: f64) -> f64 {
    20.0 * (255.0 / rmse).log10()
}

pub fn psnr(a: &Clip, b: &Clip) -> Result<f64> {
    Ok(psnr_from_rmse(rmse(a, b)?))
}

/// Per-clip feature vectors.
pub trait FeatureExtractor {
    fn id(&self) -> String;
    fn extract(&self, clip_id: &str, clip: &Clip) -> Result<Vec<f64>>;
}

/// Box-pools frames to 16×16, takes the temporal mean and std per cell
/// (512 values, pixels scaled to `[0, 1]`), then projects onto 64 seeded
/// orthonormal directions.
#[derive(Debug, Clone)]
pub struct ToyExtractor {
    seed: u64,
    /// `POOLED_DIM × FEATURE_DIM`, row-major, orthonormal columns.
    projection: Vec<f64>,
}

/// Seed of the projection used by default, fixed so that scores are
/// comparable across runs and master seeds.
pub const TOY_EXTRACTOR_SEED: u64 = 0x70e_f0e5;

impl Default for ToyExtractor {
    fn default() -> Self {
        Self::new(TOY_EXTRACTOR_SEED)
    }
}

impl ToyExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = SeededRng::new(derive_seed(seed, "toy-extractor"));
        let (n, k) = (POOLED_DIM, FEATURE_DIM);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
        for _ in 0..k {
            let mut v = vec![0.0; n];
            rng.fill_normal(&mut v, 1.0);
            // Modified Gram-Schmidt, applied twice for stability.
            for _ in 0..2 {
                for c in &cols {
                    let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
        let mut projection = vec![0.0; n * k];
        for (j, c) in cols.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                projection[i * k + j] = v;
            }
        }
        Self { seed, projection }
    }

    pub fn projection(&self) -> Tensor {
        Tensor::from_parts(vec![POOLED_DIM, FEATURE_DIM], self.projection.clone())
    }

    /// Temporal mean block followed by the temporal std block.
    pub fn pooled(clip: &Clip) -> Vec<f64> {
        let (h, w) = (clip.height(), clip.width());
        let cells = POOL_SIDE * POOL_SIDE;
        let mut counts = vec![0usize; cells];
        for i in 0..h {
            for j in 0..w {
                counts[(i * POOL_SIDE / h) * POOL_SIDE + j * POOL_SIDE / w] += 1;
            }
        }
        let mut sum = vec![0.0; cells];
        let mut sum_sq = vec![0.0; cells];
        let mut cell = vec![0.0; cells];
        for f in 0..clip.frames() {
            cell.iter_mut().for_each(|v| *v = 0.0);
            for (idx, &p) in clip.frame(f).iter().enumerate() {
                let (i, j) = (idx / w, idx % w);
                cell[(i * POOL_SIDE / h) * POOL_SIDE + j * POOL_SIDE / w] += p as f64 / 255.0;
            }
            for c in 0..cells {
                let v = cell[c] / counts[c].max(1) as f64;
                sum[c] += v;
                sum_sq[c] += v * v;
            }
        }
        let n = clip.frames() as f64;
        let mut out = Vec::with_capacity(POOLED_DIM);
        out.extend(sum.iter().map(|s| s / n));
        out.extend(
            sum.iter()
                .zip(&sum_sq)
                .map(|(s, q)| (q / n - (s / n).powi(2)).max(0.0).sqrt()),
        );
        out
    }
}

impl FeatureExtractor for ToyExtractor {
    fn id(&self) -> String {
        format!("toy-pool16-mean-std-proj64-{:016x}", self.seed)
    }

    fn extract(&self, _clip_id: &str, clip: &Clip) -> Result<Vec<f64>> {
        let x = Self::pooled(clip);
        let k = FEATURE_DIM;
        let mut out = vec![0.0; k];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &q) in out.iter_mut().zip(&self.projection[i * k..(i + 1) * k]) {
                *o += xi * q;
            }
        }
        Ok(out)
    }
}

/// Precomputed features read from a CSV of `clip_id,f_1,…,f_64` rows
/// (an optional header line starting with `clip_id` is skipped).
#[derive(Debug, Clone)]
pub struct ExternalFeatures {
    id: String,
    table: BTreeMap<String, Vec<f64>>,
}

impl ExternalFeatures {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &format!("external:{}", path.display()))
    }

    pub fn parse(text: &str, id: &str) -> Result<Self> {
        let mut table = BTreeMap::new();
        let mut dim = None;
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (line_no == 0 && line.starts_with("clip_id")) {
                continue;
            }
            let mut fields = line.split(',');
            let clip_id = fields.next().unwrap_or_default().trim().to_string();
            let values = fields
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::arg(format!("feature CSV line {}: {e}", line_no + 1)))?;
            if *dim.get_or_insert(values.len()) != values.len() || values.is_empty() {
                return Err(Error::arg(format!(
                    "feature CSV line {}: inconsistent width",
                    line_no + 1
                )));
            }
            table.insert(clip_id, values);
        }
        Ok(Self {
            id: id.to_string(),
            table,
        })
    }
}

impl FeatureExtractor for ExternalFeatures {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn extract(&self, clip_id: &str, _clip: &Clip) -> Result<Vec<f64>> {
        self.table
            .get(clip_id)
            .cloned()
            .ok_or_else(|| Error::arg(format!("no external features for {clip_id}")))
    }
}

/// Sample mean and unbiased covariance (zero covariance for one sample).
pub fn feature_moments(features: &[Vec<f64>]) -> Result<(Vec<f64>, Tensor)> {
    let Some(first) = features.first() else {
        return Err(Error::arg("no feature vectors"));
    };
    let d = first.len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::arg("feature vectors differ in length"));
    }
    let n = features.len() as f64;
    let mut mu = vec![0.0; d];
    for f in features {
        mu.iter_mut().zip(f).for_each(|(m, v)| *m += v);
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    for f in features {
        for i in 0..d {
            let di = f[i] - mu[i];
            for j in i..d {
                cov[i * d + j] += di * (f[j] - mu[j]);
            }
        }
    }
    let denom = if features.len() > 1 { n - 1.0 } else { 1.0 };
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok((mu, Tensor::from_parts(vec![d, d], cov)))
}

const PSD_TOL: f64 = 1e-9;

/// `‖μ1−μ2‖² + Tr(Σ1 + Σ2 − 2·(Σ1^½ Σ2 Σ1^½)^½)` with `COV_EPS·I` added to
/// both covariances. Small negative results (round-off) are clamped to 0.
pub fn frechet_distance(mu1: &[f64], cov1: &Tensor, mu2: &[f64], cov2: &Tensor) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.shape() != [d, d] || cov2.shape() != [d, d] {
        return Err(Error::arg(format!(
            "moment shapes disagree: {d}, {}, {:?}, {:?}",
            mu2.len(),
            cov1.shape(),
            cov2.shape()
        )));
    }
    let reg = |c: &Tensor| {
        let mut v = c.data().to_vec();
        for i in 0..d {
            v[i * d + i] += COV_EPS;
        }
        Tensor::from_parts(vec![d, d], v)
    };
    let (c1, c2) = (reg(cov1), reg(cov2));
    let root1 = sym_sqrtm(&c1, PSD_TOL)?;
    // Confirms Σ2 is PSD as well.
    sym_sqrtm(&c2, PSD_TOL)?;
    let r = root1.data();
    let tmp = crate::numerics::linalg::matmul(r, c2.data(), d, d, d);
    let mut inner = crate::numerics::linalg::matmul(&tmp, r, d, d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let m = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            inner[i * d + j] = m;
            inner[j * d + i] = m;
        }
    }
    let eig = sym_eigen(&Tensor::from_parts(vec![d, d], inner), PSD_TOL)?;
    let tr_sqrt: f64 = eig.values.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let trace = |c: &Tensor| (0..d).map(|i| c.data()[i * d + i]).sum::<f64>();
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b).powi(2)).sum();
    let (t1, t2) = (trace(&c1), trace(&c2));
    let value = mean_term + t1 + t2 - 2.0 * tr_sqrt;
    let floor = 1e-8 * (1.0 + t1 + t2);
    if value < -floor {
        return Err(Error::NumericDomain(format!(
            "Fréchet distance {value:e} is negative"
        )));
    }
    Ok(value.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    /// Mean per-clip PSNR over clips with non-zero error; `null` (infinite)
    /// when every pair is identical.
    pub psnr_db: Option<f64>,
    pub frechet: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    pub extractor_id: String,
    pub config_digest: Option<String>,
}

/// Pairs clips by id (every id must appear in both sets), averages per-clip
/// RMSE and PSNR, and computes the Fréchet distance between the two pooled
/// feature sets. Input order does not matter.
pub fn evaluate(
    generated: &[(String, Clip)],
    reference: &[(String, Clip)],
    extractor: &dyn FeatureExtractor,
) -> Result<MetricsReport> {
    let gen: BTreeMap<&str, &Clip> = generated.iter().map(|(k, c)| (k.as_str(), c)).collect();
    let refs: BTreeMap<&str, &Clip> = reference.iter().map(|(k, c)| (k.as_str(), c)).collect();
    if gen.len() != generated.len() || refs.len() != reference.len() {
        return Err(Error::arg("duplicate clip ids"));
    }
    let gk: BTreeSet<&str> = gen.keys().copied().collect();
    let rk: BTreeSet<&str> = refs.keys().copied().collect();
    let unmatched: Vec<String> = gk
        .symmetric_difference(&rk)
        .map(|s| s.to_string())
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Protocol { unmatched });
    }
    if gen.is_empty() {
        return Err(Error::arg("nothing to evaluate"));
    }
    let mut rmse_sum = 0.0;
    let mut psnr_sum = 0.0;
    let mut psnr_n = 0usize;
    let mut fg = Vec::with_capacity(gen.len());
    let mut fr = Vec::with_capacity(gen.len());
    for (id, g) in &gen {
        let r = refs[id];
        let e = rmse(g, r)?;
        rmse_sum += e;
        if e > 0.0 {
            psnr_sum += psnr_from_rmse(e);
            psnr_n += 1;
        }
        fg.push(extractor.extract(id, g)?);
        fr.push(extractor.extract(id, r)?);
    }
    if psnr_n < gen.len() {
        log::warn!(
            "{} identical clip pair(s) excluded from the PSNR mean",
            gen.len() - psnr_n
        );
    }
    let (mg, cg) = feature_moments(&fg)?;
    let (mr, cr) = feature_moments(&fr)?;
    Ok(MetricsReport {
        rmse: rmse_sum / gen.len() as f64,
        psnr_db: (psnr_n > 0).then(|| psnr_sum / psnr_n as f64),
        frechet: frechet_distance(&mg, &cg, &mr, &cr)?,
        n_generated: generated.len(),
        n_reference: reference.len(),
        extractor_id: extractor.id(),
        config_digest: None,
    })
}
