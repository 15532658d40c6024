//! Naive reference kernels and fixtures shared by the integration suites.
//! These are written independently of the engine's im2col/GEMM paths.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Six nested loops (plus batch) over the zero-padded cross-correlation.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    ws: [usize; 4],
    b: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, cin, h, wd] = xs;
    let [cout, _, kh, kw] = ws;
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for i in 0..n {
        for co in 0..cout {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b[co]);
                    for ci in 0..cin {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (oh * stride + ki) as isize - pad as isize;
                                let iw = (ow * stride + kj) as isize - pad as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= wd as isize {
                                    continue;
                                }
                                let xv = x[((i * cin + ci) * h + ih as usize) * wd + iw as usize];
                                let wv = w[((co * cin + ci) * kh + ki) * kw + kj];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((i * cout + co) * ho + oh) * wo + ow] = acc;
                }
            }
        }
    }
    (out, [n, cout, ho, wo])
}

pub fn naive_maxpool(x: &[f64], xs: [usize; 4], k: usize, stride: usize) -> Vec<f64> {
    let [n, c, h, w] = xs;
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let mut out = Vec::new();
    for i in 0..n * c {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut m = f64::NEG_INFINITY;
                for a in 0..k {
                    for b in 0..k {
                        m = m.max(x[i * h * w + (oh * stride + a) * w + ow * stride + b]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn naive_global_max(x: &[f64], xs: [usize; 4]) -> Vec<f64> {
    let hw = xs[2] * xs[3];
    x.chunks(hw)
        .map(|p| p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn naive_linear(x: &[f64], n: usize, d: usize, w: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            let mut acc = b[j];
            for t in 0..d {
                acc += x[i * d + t] * w[j * d + t];
            }
            out[i * k + j] = acc;
        }
    }
    out
}

pub fn assert_close_rel(got: &[f64], want: &[f64], rel: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        let denom = w.abs().max(1.0);
        assert!((g - w).abs() <= rel * denom, "index {i}: got {g}, want {w}");
    }
}

use swiftnet_core::nn::Network;
use swiftnet_core::tensor::{BnMode, GradCheckReport};
use swiftnet_core::train::loss_and_grad;
use swiftnet_core::{Tape, Tensor};

fn forward_loss<N: Network<f64>>(model: &mut N, x: &Tensor<f64>, labels: &[usize], smoothing: f64) -> (f64, u64) {
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let logits = model
        .forward(&mut tape, xv, BnMode::Train { update_stats: false })
        .unwrap();
    let (loss, _) = tape.smoothed_cross_entropy(logits, labels, smoothing).unwrap();
    (tape.scalar(loss), tape.branch_signature())
}

/// Outcome of [`param_grad_check`].
#[derive(Debug)]
pub struct ParamCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    /// Candidates rejected because `w ± step` changed a pooling winner or ReLU mask.
    pub rejected: usize,
    /// Tensors where no kink-free coordinate was found.
    pub unverified: Vec<String>,
}

/// Central differences on `coords` sampled parameter entries (at least one per
/// tensor), compared per tensor against the tape gradient. Candidates whose
/// `±step` evaluations leave the smooth piece containing `w` are redrawn
/// (up to `retries` times per slot).
#[allow(clippy::too_many_arguments)]
pub fn param_grad_check<N: Network<f64>>(
    model: &mut N,
    x: &Tensor<f64>,
    labels: &[usize],
    smoothing: f64,
    coords: usize,
    step: f64,
    retries: usize,
    seed: u64,
) -> ParamCheck {
    loss_and_grad(model, x, labels, smoothing, BnMode::Train { update_stats: false }).unwrap();
    let grads: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|e| e.tensor.grad().unwrap().to_vec())
        .collect();
    let (_, base) = forward_loss(model, x, labels, smoothing);
    let sizes: Vec<usize> = grads.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let mut g = rng(seed);
    let mut slots: Vec<usize> = (0..sizes.len()).collect();
    while slots.len() < coords {
        let mut flat = g.random_range(0..total);
        let mut k = 0;
        while flat >= sizes[k] {
            flat -= sizes[k];
            k += 1;
        }
        slots.push(k);
    }

    let mut by_tensor: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); sizes.len()];
    let mut rejected = 0;
    let mut unverified = Vec::new();
    for &k in &slots {
        let mut accepted = false;
        for _ in 0..=retries {
            let i = g.random_range(0..sizes[k]);
            let orig = model.params().tensor(k).data()[i];
            let at = |v: f64, m: &mut N| {
                m.params_mut().entries_mut()[k].tensor.data_mut()[i] = v;
                forward_loss(m, x, labels, smoothing)
            };
            let (plus, sp) = at(orig + step, model);
            let (minus, sm) = at(orig - step, model);
            model.params_mut().entries_mut()[k].tensor.data_mut()[i] = orig;
            if sp != base || sm != base {
                rejected += 1;
                continue;
            }
            by_tensor[k].push((i, grads[k][i], (plus - minus) / (2.0 * step)));
            accepted = true;
            break;
        }
        if !accepted {
            unverified.push(model.params().entries()[k].name.clone());
        }
    }
    let mut out = ParamCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: by_tensor.iter().map(Vec::len).sum(),
        rejected,
        unverified,
    };
    for (k, pairs) in by_tensor.into_iter().enumerate() {
        if pairs.is_empty() {
            continue;
        }
        let r = GradCheckReport::from_pairs(pairs, 0.0);
        if r.max_rel_error > out.max_rel_error || r.max_rel_error.is_nan() {
            out.max_rel_error = r.max_rel_error;
            out.worst = format!("{}[{}]", model.params().entries()[k].name, r.worst_coord);
        }
    }
    out
}

/// A temporary directory holding a synthetic CIFAR-format dataset
/// (`train_per_file` records in each of the five train files).
pub fn cifar_fixture(train_per_file: usize, test_records: usize, seed: u64) -> tempfile::TempDir {
    let dir = tempfile::tempdir().expect("tempdir");
    swiftnet_core::data::synthetic::write_cifar_dir(dir.path(), train_per_file, test_records, seed).expect("fixture");
    dir
}

/// A run small enough for an integration test: 1/16 width, a few images.
pub fn tiny_run(dir: &std::path::Path, out: &str) -> swiftnet_core::harness::RunConfig {
    swiftnet_core::harness::RunConfig {
        data_dir: dir.to_path_buf(),
        per_class: 4,
        test_per_class: 2,
        budget_seconds: 1e9,
        max_epochs: 2,
        batch_size: 16,
        lr_peak: 0.2,
        width_divisor: 16,
        whitening_patches: 2000,
        metrics_out: dir.join(out),
        ..Default::default()
    }
}

pub const K: usize = 10;

/// Plain-vector linear softmax model used as the reference.
#[derive(Clone)]
pub struct RefLinear {
    pub w: Vec<f64>, // [K, PIXELS]
    pub b: Vec<f64>,
}

impl RefLinear {
    pub fn from(p: &swiftnet_core::nn::ParamSet<f64>) -> Self {
        RefLinear {
            w: p.tensor(0).data().to_vec(),
            b: p.tensor(1).data().to_vec(),
        }
    }

    /// Gradient of the mean smoothed cross-entropy over `rows`.
    pub fn grad(&self, x: &[f64], y: &[usize], rows: &[usize], alpha: f64) -> (Vec<f64>, Vec<f64>) {
        let mut gw = vec![0.0; self.w.len()];
        let mut gb = vec![0.0; K];
        for &r in rows {
            let xi = &x[r * swiftnet_core::data::PIXELS..(r + 1) * swiftnet_core::data::PIXELS];
            let z: Vec<f64> = (0..K)
                .map(|k| {
                    self.b[k]
                        + self.w[k * swiftnet_core::data::PIXELS..(k + 1) * swiftnet_core::data::PIXELS]
                            .iter()
                            .zip(xi)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                })
                .collect();
            let zmax = z.iter().cloned().fold(f64::MIN, f64::max);
            let s: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
            for k in 0..K {
                let p = (z[k] - zmax).exp() / s;
                let t = alpha / K as f64 + if k == y[r] { 1.0 - alpha } else { 0.0 };
                let d = (p - t) / rows.len() as f64;
                gb[k] += d;
                for (g, xv) in gw[k * swiftnet_core::data::PIXELS..(k + 1) * swiftnet_core::data::PIXELS]
                    .iter_mut()
                    .zip(xi)
                {
                    *g += d * xv;
                }
            }
        }
        (gw, gb)
    }
}

pub struct RefCfg {
    pub lr: f64,
    pub mu: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub batch: usize,
    pub steps: usize,
    pub beta: f64,
}

/// Reptile-style round: momentum SGD from the shared point on each task, then
/// interpolate toward the mean of the results.
pub fn reference_round(shared: &mut RefLinear, tasks: &[(&[f64], &[usize])], c: &RefCfg) {
    let mut adapted = Vec::new();
    for (x, y) in tasks {
        let m = y.len();
        let mut cur = shared.clone();
        let (mut vw, mut vb) = (vec![0.0; cur.w.len()], vec![0.0; K]);
        let nb = m.div_ceil(c.batch);
        for j in 0..c.steps {
            let start = (j % nb) * c.batch;
            let rows: Vec<usize> = (start..(start + c.batch).min(m)).collect();
            let (gw, gb) = cur.grad(x, y, &rows, c.alpha);
            for i in 0..cur.w.len() {
                vw[i] = c.mu * vw[i] + gw[i] + 2.0 * c.lambda * cur.w[i];
                cur.w[i] -= c.lr * vw[i];
            }
            for k in 0..K {
                vb[k] = c.mu * vb[k] + gb[k];
                cur.b[k] -= c.lr * vb[k];
            }
        }
        adapted.push(cur);
    }
    let n = adapted.len() as f64;
    for i in 0..shared.w.len() {
        let mean = adapted.iter().map(|a| a.w[i]).sum::<f64>() / n;
        shared.w[i] = (1.0 - c.beta) * shared.w[i] + c.beta * mean;
    }
    for k in 0..K {
        let mean = adapted.iter().map(|a| a.b[k]).sum::<f64>() / n;
        shared.b[k] = (1.0 - c.beta) * shared.b[k] + c.beta * mean;
    }
}

/// Covariance of whitened patches, computed with explicit loops.
pub fn projected_covariance(filters: &[f64], patches: &[f64]) -> Vec<f64> {
    let d = 27;
    let n = patches.len() / d;
    let mut z = vec![0.0; n * d];
    for p in 0..n {
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += filters[i * d + j] * patches[p * d + j];
            }
            z[p * d + i] = acc;
        }
    }
    let mut mean = vec![0.0; d];
    for p in 0..n {
        for i in 0..d {
            mean[i] += z[p * d + i] / n as f64;
        }
    }
    let mut cov = vec![0.0; d * d];
    for p in 0..n {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (z[p * d + i] - mean[i]) * (z[p * d + j] - mean[j]) / n as f64;
            }
        }
    }
    cov
}
