//! Forward/backward kernels for the denoiser network. Everything is plain
//! row-major `f64` slices; callers own the parameter layout.

use crate::numerics::linalg::{matmul, matmul_nt, matmul_tn, softmax_rows_in_place};

/// Spatio-temporal extent of one channel: frames × height × width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Volume {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Volume {
    pub fn len(&self) -> usize {
        self.frames * self.height * self.width
    }
}

pub(crate) const KERNEL: usize = 27;

/// Valid output range along an axis of extent `n` for tap offset `d ∈ {-1,0,1}`.
#[inline]
fn valid(n: usize, d: isize) -> (usize, usize) {
    match d {
        -1 => (1, n),
        1 => (0, n.saturating_sub(1)),
        _ => (0, n),
    }
}

/// 3×3×3 convolution, stride 1, zero padding 1.
/// `weight` is `[cout][cin][3][3][3]`, `input` is `[cin][vol]`.
pub(crate) fn conv3d_forward(
    input: &[f64],
    cin: usize,
    vol: Volume,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let n = vol.len();
    let (fh, w) = (vol.height, vol.width);
    let mut out = vec![0.0; cout * n];
    for co in 0..cout {
        let out_c = &mut out[co * n..(co + 1) * n];
        out_c.fill(bias[co]);
        for ci in 0..cin {
            let in_c = &input[ci * n..(ci + 1) * n];
            let wbase = (co * cin + ci) * KERNEL;
            for tap in 0..KERNEL {
                let wv = weight[wbase + tap];
                if wv == 0.0 {
                    continue;
                }
                let dt = (tap / 9) as isize - 1;
                let dh = ((tap / 3) % 3) as isize - 1;
                let dw = (tap % 3) as isize - 1;
                let (f0, f1) = valid(vol.frames, dt);
                let (y0, y1) = valid(fh, dh);
                let (x0, x1) = valid(w, dw);
                for f in f0..f1 {
                    let fi = (f as isize + dt) as usize;
                    for y in y0..y1 {
                        let yi = (y as isize + dh) as usize;
                        let orow = (f * fh + y) * w;
                        let irow = ((fi * fh + yi) * w) as isize + dw;
                        let o = &mut out_c[orow + x0..orow + x1];
                        let i = &in_c[(irow + x0 as isize) as usize..(irow + x1 as isize) as usize];
                        for (a, &b) in o.iter_mut().zip(i) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn conv3d_backward(
    input: &[f64],
    cin: usize,
    vol: Volume,
    weight: &[f64],
    cout: usize,
    d_out: &[f64],
    want_input: bool,
) -> ConvGrads {
    let n = vol.len();
    let (fh, w) = (vol.height, vol.width);
    let mut d_in = want_input.then(|| vec![0.0; cin * n]);
    let mut d_w = vec![0.0; cout * cin * KERNEL];
    let mut d_b = vec![0.0; cout];
    for co in 0..cout {
        let g_c = &d_out[co * n..(co + 1) * n];
        d_b[co] = g_c.iter().sum();
        for ci in 0..cin {
            let in_c = &input[ci * n..(ci + 1) * n];
            let wbase = (co * cin + ci) * KERNEL;
            for tap in 0..KERNEL {
                let dt = (tap / 9) as isize - 1;
                let dh = ((tap / 3) % 3) as isize - 1;
                let dw = (tap % 3) as isize - 1;
                let (f0, f1) = valid(vol.frames, dt);
                let (y0, y1) = valid(fh, dh);
                let (x0, x1) = valid(w, dw);
                let wv = weight[wbase + tap];
                let mut acc = 0.0;
                for f in f0..f1 {
                    let fi = (f as isize + dt) as usize;
                    for y in y0..y1 {
                        let yi = (y as isize + dh) as usize;
                        let orow = (f * fh + y) * w;
                        let irow = (((fi * fh + yi) * w) as isize + dw + x0 as isize) as usize;
                        let g = &g_c[orow + x0..orow + x1];
                        let i = &in_c[irow..irow + (x1 - x0)];
                        acc += g.iter().zip(i).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(d_in) = d_in.as_mut() {
                            if wv != 0.0 {
                                let di = &mut d_in[ci * n + irow..ci * n + irow + (x1 - x0)];
                                for (d, &gv) in di.iter_mut().zip(g) {
                                    *d += wv * gv;
                                }
                            }
                        }
                    }
                }
                d_w[wbase + tap] = acc;
            }
        }
    }
    ConvGrads {
        input: d_in,
        weight: d_w,
        bias: d_b,
    }
}

pub(crate) const GN_EPS: f64 = 1e-5;

pub(crate) struct GroupNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Group normalisation over `[channels][n]` with per-channel affine.
pub(crate) fn group_norm_forward(
    x: &[f64],
    channels: usize,
    n: usize,
    groups: usize,
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, GroupNormCache) {
    let per = channels / groups;
    let count = (per * n) as f64;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; groups];
    let mut y = vec![0.0; x.len()];
    for g in 0..groups {
        let span = g * per * n..(g + 1) * per * n;
        let xs = &x[span.clone()];
        let mean = xs.iter().sum::<f64>() / count;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        let inv = 1.0 / (var + GN_EPS).sqrt();
        inv_std[g] = inv;
        for (xh, &v) in xhat[span].iter_mut().zip(xs) {
            *xh = (v - mean) * inv;
        }
        for c in g * per..(g + 1) * per {
            for i in c * n..(c + 1) * n {
                y[i] = gamma[c] * xhat[i] + beta[c];
            }
        }
    }
    (y, GroupNormCache { xhat, inv_std })
}

/// Returns `(d_x, d_gamma, d_beta)`.
pub(crate) fn group_norm_backward(
    cache: &GroupNormCache,
    channels: usize,
    n: usize,
    groups: usize,
    gamma: &[f64],
    d_y: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let per = channels / groups;
    let count = (per * n) as f64;
    let mut d_gamma = vec![0.0; channels];
    let mut d_beta = vec![0.0; channels];
    let mut d_x = vec![0.0; d_y.len()];
    let mut d_xhat = vec![0.0; d_y.len()];
    for c in 0..channels {
        for i in c * n..(c + 1) * n {
            d_gamma[c] += d_y[i] * cache.xhat[i];
            d_beta[c] += d_y[i];
            d_xhat[i] = d_y[i] * gamma[c];
        }
    }
    for g in 0..groups {
        let span = g * per * n..(g + 1) * per * n;
        let mean_d = d_xhat[span.clone()].iter().sum::<f64>() / count;
        let mean_dx = d_xhat[span.clone()]
            .iter()
            .zip(&cache.xhat[span.clone()])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / count;
        let inv = cache.inv_std[g];
        for i in span {
            d_x[i] = inv * (d_xhat[i] - mean_d - cache.xhat[i] * mean_dx);
        }
    }
    (d_x, d_gamma, d_beta)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `[sin(v·2^k), cos(v·2^k)]` for `k < count/2`.
pub(crate) fn fourier_features(v: f64, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    for k in 0..count / 2 {
        let a = v * (1u64 << k) as f64;
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

/// Fixed sinusoidal index code, periods 4, 8, 16, ... frames.
pub(crate) fn position_features(index: usize, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    for k in 0..count / 2 {
        let a = std::f64::consts::TAU * index as f64 / (4u64 << k) as f64;
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

/// Shapes for single-head scaled dot-product attention:
/// queries `n × q_in`, keys `m × k_in`, values `m × v_in`,
/// projections to `head` dims, output projection `head × out`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnDims {
    pub n: usize,
    pub m: usize,
    pub q_in: usize,
    pub k_in: usize,
    pub v_in: usize,
    pub head: usize,
    pub out: usize,
}

pub(crate) struct AttnWeights<'a> {
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub wo: &'a [f64],
}

pub(crate) struct AttnCache {
    dims: AttnDims,
    q_src: Vec<f64>,
    k_src: Vec<f64>,
    v_src: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
}

pub(crate) struct AttnGrads {
    pub q_src: Vec<f64>,
    pub k_src: Vec<f64>,
    pub v_src: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

pub(crate) fn attention_forward(
    dims: AttnDims,
    q_src: &[f64],
    k_src: &[f64],
    v_src: &[f64],
    w: &AttnWeights,
) -> (Vec<f64>, AttnCache) {
    let AttnDims {
        n,
        m,
        q_in,
        k_in,
        v_in,
        head,
        out,
    } = dims;
    let q = matmul(q_src, w.wq, n, q_in, head);
    let k = matmul(k_src, w.wk, m, k_in, head);
    let v = matmul(v_src, w.wv, m, v_in, head);
    let scale = 1.0 / (head as f64).sqrt();
    let mut probs = matmul_nt(&q, &k, n, head, m);
    probs.iter_mut().for_each(|s| *s *= scale);
    softmax_rows_in_place(&mut probs, n, m);
    let ctx = matmul(&probs, &v, n, m, head);
    let result = matmul(&ctx, w.wo, n, head, out);
    let cache = AttnCache {
        dims,
        q_src: q_src.to_vec(),
        k_src: k_src.to_vec(),
        v_src: v_src.to_vec(),
        q,
        k,
        v,
        probs,
        ctx,
    };
    (result, cache)
}

pub(crate) fn attention_backward(cache: &AttnCache, w: &AttnWeights, d_out: &[f64]) -> AttnGrads {
    let AttnDims {
        n,
        m,
        q_in,
        k_in,
        v_in,
        head,
        out,
    } = cache.dims;
    let scale = 1.0 / (head as f64).sqrt();
    let d_wo = matmul_tn(&cache.ctx, d_out, n, head, out);
    let d_ctx = matmul_nt(d_out, w.wo, n, out, head);
    let d_probs = matmul_nt(&d_ctx, &cache.v, n, head, m);
    let d_v = matmul_tn(&cache.probs, &d_ctx, n, m, head);
    let mut d_scores = vec![0.0; n * m];
    for i in 0..n {
        let p = &cache.probs[i * m..(i + 1) * m];
        let dp = &d_probs[i * m..(i + 1) * m];
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for j in 0..m {
            d_scores[i * m + j] = p[j] * (dp[j] - dot) * scale;
        }
    }
    let d_q = matmul(&d_scores, &cache.k, n, m, head);
    let d_k = matmul_tn(&d_scores, &cache.q, n, m, head);
    AttnGrads {
        wq: matmul_tn(&cache.q_src, &d_q, n, q_in, head),
        wk: matmul_tn(&cache.k_src, &d_k, m, k_in, head),
        wv: matmul_tn(&cache.v_src, &d_v, m, v_in, head),
        q_src: matmul_nt(&d_q, w.wq, n, head, q_in),
        k_src: matmul_nt(&d_k, w.wk, m, head, k_in),
        v_src: matmul_nt(&d_v, w.wv, m, head, v_in),
        wo: d_wo,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{central_difference, max_relative_error};
    use crate::numerics::{seeded_gaussian, SeededRng};

    fn randn(n: usize, rng: &mut SeededRng) -> Vec<f64> {
        seeded_gaussian(&[n], 1.0, rng).unwrap().into_data()
    }

    fn weighted_sum(y: &[f64], r: &[f64]) -> f64 {
        y.iter().zip(r).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_identity_kernel() {
        let vol = Volume {
            frames: 2,
            height: 3,
            width: 4,
        };
        let mut rng = SeededRng::new(1);
        let x = randn(vol.len(), &mut rng);
        let mut w = vec![0.0; KERNEL];
        w[13] = 1.0; // centre tap
        let y = conv3d_forward(&x, 1, vol, &w, &[0.5], 1);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - (b + 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn conv_matches_naive() {
        let vol = Volume {
            frames: 3,
            height: 4,
            width: 5,
        };
        let (cin, cout) = (2, 3);
        let mut rng = SeededRng::new(2);
        let x = randn(cin * vol.len(), &mut rng);
        let w = randn(cout * cin * KERNEL, &mut rng);
        let b = randn(cout, &mut rng);
        let y = conv3d_forward(&x, cin, vol, &w, &b, cout);
        let at = |c: usize, f: isize, h: isize, ww: isize| -> f64 {
            if f < 0 || h < 0 || ww < 0 {
                return 0.0;
            }
            let (f, h, ww) = (f as usize, h as usize, ww as usize);
            if f >= vol.frames || h >= vol.height || ww >= vol.width {
                return 0.0;
            }
            x[c * vol.len() + (f * vol.height + h) * vol.width + ww]
        };
        for co in 0..cout {
            for f in 0..vol.frames {
                for h in 0..vol.height {
                    for ww in 0..vol.width {
                        let mut s = b[co];
                        for ci in 0..cin {
                            for t in 0..KERNEL {
                                let (dt, dh, dw) = (
                                    (t / 9) as isize - 1,
                                    ((t / 3) % 3) as isize - 1,
                                    (t % 3) as isize - 1,
                                );
                                s += w[(co * cin + ci) * KERNEL + t]
                                    * at(ci, f as isize + dt, h as isize + dh, ww as isize + dw);
                            }
                        }
                        let got = y[co * vol.len() + (f * vol.height + h) * vol.width + ww];
                        assert!((got - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let vol = Volume {
            frames: 2,
            height: 3,
            width: 3,
        };
        let (cin, cout) = (2, 2);
        let mut rng = SeededRng::new(3);
        let x = randn(cin * vol.len(), &mut rng);
        let w = randn(cout * cin * KERNEL, &mut rng);
        let b = randn(cout, &mut rng);
        let r = randn(cout * vol.len(), &mut rng);
        let g = conv3d_backward(&x, cin, vol, &w, cout, &r, true);
        let num_w = central_difference(&w, 1e-5, |p| {
            weighted_sum(&conv3d_forward(&x, cin, vol, p, &b, cout), &r)
        });
        let num_x = central_difference(&x, 1e-5, |p| {
            weighted_sum(&conv3d_forward(p, cin, vol, &w, &b, cout), &r)
        });
        let num_b = central_difference(&b, 1e-5, |p| {
            weighted_sum(&conv3d_forward(&x, cin, vol, &w, p, cout), &r)
        });
        assert!(max_relative_error(&g.weight, &num_w, 1e-8).1 < 1e-6);
        assert!(max_relative_error(g.input.as_ref().unwrap(), &num_x, 1e-8).1 < 1e-6);
        assert!(max_relative_error(&g.bias, &num_b, 1e-8).1 < 1e-6);
    }

    #[test]
    fn group_norm_gradients_match_finite_differences() {
        let (c, n, groups) = (4, 6, 2);
        let mut rng = SeededRng::new(4);
        let x = randn(c * n, &mut rng);
        let gamma = randn(c, &mut rng);
        let beta = randn(c, &mut rng);
        let r = randn(c * n, &mut rng);
        let (_, cache) = group_norm_forward(&x, c, n, groups, &gamma, &beta);
        let (dx, dg, db) = group_norm_backward(&cache, c, n, groups, &gamma, &r);
        let f = |x: &[f64], g: &[f64], b: &[f64]| {
            weighted_sum(&group_norm_forward(x, c, n, groups, g, b).0, &r)
        };
        let nx = central_difference(&x, 1e-5, |p| f(p, &gamma, &beta));
        let ng = central_difference(&gamma, 1e-5, |p| f(&x, p, &beta));
        let nb = central_difference(&beta, 1e-5, |p| f(&x, &gamma, p));
        assert!(max_relative_error(&dx, &nx, 1e-8).1 < 1e-5);
        assert!(max_relative_error(&dg, &ng, 1e-8).1 < 1e-6);
        assert!(max_relative_error(&db, &nb, 1e-8).1 < 1e-6);
    }

    #[test]
    fn group_norm_normalises() {
        let mut rng = SeededRng::new(5);
        let x: Vec<f64> = randn(2 * 50, &mut rng)
            .iter()
            .map(|v| 3.0 * v + 7.0)
            .collect();
        let (y, _) = group_norm_forward(&x, 2, 50, 1, &[1.0, 1.0], &[0.0, 0.0]);
        let mean = y.iter().sum::<f64>() / 100.0;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 100.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn silu_derivative() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let num = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((silu_grad(x) - num).abs() < 1e-8);
        }
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let dims = AttnDims {
            n: 3,
            m: 4,
            q_in: 5,
            k_in: 6,
            v_in: 2,
            head: 3,
            out: 2,
        };
        let mut rng = SeededRng::new(6);
        let q_src = randn(dims.n * dims.q_in, &mut rng);
        let k_src = randn(dims.m * dims.k_in, &mut rng);
        let v_src = randn(dims.m * dims.v_in, &mut rng);
        let wq = randn(dims.q_in * dims.head, &mut rng);
        let wk = randn(dims.k_in * dims.head, &mut rng);
        let wv = randn(dims.v_in * dims.head, &mut rng);
        let wo = randn(dims.head * dims.out, &mut rng);
        let r = randn(dims.n * dims.out, &mut rng);
        let w = AttnWeights {
            wq: &wq,
            wk: &wk,
            wv: &wv,
            wo: &wo,
        };
        let (_, cache) = attention_forward(dims, &q_src, &k_src, &v_src, &w);
        let g = attention_backward(&cache, &w, &r);
        let eval =
            |qs: &[f64], ks: &[f64], vs: &[f64], wq: &[f64], wk: &[f64], wv: &[f64], wo: &[f64]| {
                let w = AttnWeights { wq, wk, wv, wo };
                weighted_sum(&attention_forward(dims, qs, ks, vs, &w).0, &r)
            };
        let checks = [
            (
                g.q_src.clone(),
                central_difference(&q_src, 1e-5, |p| {
                    eval(p, &k_src, &v_src, &wq, &wk, &wv, &wo)
                }),
            ),
            (
                g.k_src.clone(),
                central_difference(&k_src, 1e-5, |p| {
                    eval(&q_src, p, &v_src, &wq, &wk, &wv, &wo)
                }),
            ),
            (
                g.v_src.clone(),
                central_difference(&v_src, 1e-5, |p| {
                    eval(&q_src, &k_src, p, &wq, &wk, &wv, &wo)
                }),
            ),
            (
                g.wq.clone(),
                central_difference(&wq, 1e-5, |p| {
                    eval(&q_src, &k_src, &v_src, p, &wk, &wv, &wo)
                }),
            ),
            (
                g.wk.clone(),
                central_difference(&wk, 1e-5, |p| {
                    eval(&q_src, &k_src, &v_src, &wq, p, &wv, &wo)
                }),
            ),
            (
                g.wv.clone(),
                central_difference(&wv, 1e-5, |p| {
                    eval(&q_src, &k_src, &v_src, &wq, &wk, p, &wo)
                }),
            ),
            (
                g.wo.clone(),
                central_difference(&wo, 1e-5, |p| {
                    eval(&q_src, &k_src, &v_src, &wq, &wk, &wv, p)
                }),
            ),
        ];
        for (i, (a, n)) in checks.iter().enumerate() {
            let (_, e) = max_relative_error(a, n, 1e-8);
            assert!(e < 1e-5, "attention grad {i}: rel err {e}");
        }
    }
}
