//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use gazekit::dataset::NormalizedSample;
use gazekit::geometry::{EyeSide, GazeAngles, HeadAngles};
use gazekit::imaging::GrayImage;
use gazekit::regressors::{Batch, Cnn, CONV1_MAPS, CONV2_MAPS, FC1_UNITS, KERNEL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct convolution: `out[o][y][x] = b[o] + sum w[o][c][ky][kx] * in[c][y+ky-pad][x+kx-pad]`.
fn conv(input: &[f64], c_in: usize, h: usize, w: usize, weights: &[f64], bias: &[f64], pad: usize) -> (Vec<f64>, usize, usize) {
    let c_out = bias.len();
    let (oh, ow) = (h + 2 * pad + 1 - KERNEL, w + 2 * pad + 1 - KERNEL);
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias[o];
                for c in 0..c_in {
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            let iy = y as isize + ky as isize - pad as isize;
                            let ix = x as isize + kx as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let wi = ((o * c_in + c) * KERNEL + ky) * KERNEL + kx;
                            acc += weights[wi] * input[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    (out, oh, ow)
}

fn pool_relu(input: &[f64], maps: usize, h: usize, w: usize, s: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / s, w / s);
    let mut out = vec![0.0; maps * oh * ow];
    for m in 0..maps {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..s {
                    for dx in 0..s {
                        best = best.max(input[(m * h + y * s + dy) * w + x * s + dx]);
                    }
                }
                out[(m * oh + y) * ow + x] = best.max(0.0);
            }
        }
    }
    (out, oh, ow)
}

/// Forward pass of one sample written from the layer definitions alone.
pub fn naive_forward(net: &Cnn<f64>, image: &[f64], features: &[f64]) -> [f64; 2] {
    let a = net.arch;
    let l = net.layout();
    let p = &net.params;
    let (c1, h, w) = conv(image, 1, a.in_height, a.in_width, &p[l.conv1_w..l.conv1_b], &p[l.conv1_b..l.conv2_w], a.conv1_pad);
    let (p1, h, w) = pool_relu(&c1, CONV1_MAPS, h, w, a.pool1);
    let (c2, h, w) = conv(&p1, CONV1_MAPS, h, w, &p[l.conv2_w..l.conv2_b], &p[l.conv2_b..l.fc1_w], a.conv2_pad);
    let (mut fc_in, _, _) = pool_relu(&c2, CONV2_MAPS, h, w, a.pool2);
    fc_in.extend_from_slice(features);
    let d = fc_in.len();
    let hidden: Vec<f64> = (0..FC1_UNITS)
        .map(|u| {
            let row = &p[l.fc1_w + u * d..l.fc1_w + (u + 1) * d];
            (p[l.fc1_b + u] + row.iter().zip(&fc_in).map(|(a, b)| a * b).sum::<f64>()).max(0.0)
        })
        .collect();
    let mut out = [0.0; 2];
    for (k, o) in out.iter_mut().enumerate() {
        let row = &p[l.fc2_w + k * FC1_UNITS..l.fc2_w + (k + 1) * FC1_UNITS];
        *o = p[l.fc2_b + k] + row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
    }
    out
}

/// Random batch with small nonzero targets.
pub fn random_batch(width: usize, height: usize, features: usize, n: usize, seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Batch::new();
    for _ in 0..n {
        let img: Vec<f64> = (0..width * height).map(|_| rng.gen::<f64>()).collect();
        let feat: Vec<f64> = (0..features).map(|_| rng.gen_range(-0.5..0.5)).collect();
        batch.push(&img, &feat, [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)]);
    }
    batch
}

pub struct GradCheck {
    pub checked: usize,
    pub passed: usize,
    pub blocks: Vec<&'static str>,
    pub worst: f64,
}

/// Compares analytic gradients of `per_block` parameters from every block
/// against central differences with step `h`.
pub fn gradient_check(net: &Cnn<f64>, batch: &Batch<f64>, per_block: usize, h: f64, tol: f64, seed: u64) -> GradCheck {
    let mut grad = vec![0.0; net.params.len()];
    net.loss_and_gradient(batch, &mut grad).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = net.clone();
    let mut out = GradCheck {
        checked: 0,
        passed: 0,
        blocks: Vec::new(),
        worst: 0.0,
    };
    let mut rels = Vec::new();
    for (name, range) in net.layout().blocks() {
        out.blocks.push(name);
        let len = range.len();
        let picks: Vec<usize> = if len <= per_block {
            range.collect()
        } else {
            (0..per_block).map(|_| range.start + rng.gen_range(0..len)).collect()
        };
        for i in picks {
            let orig = probe.params[i];
            probe.params[i] = orig + h;
            let up = probe.loss(batch).unwrap();
            probe.params[i] = orig - h;
            let down = probe.loss(batch).unwrap();
            probe.params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad[i];
            let scale = analytic.abs().max(numeric.abs());
            let rel = if scale < 1e-10 { 0.0 } else { (analytic - numeric).abs() / scale };
            rels.push(rel);
            out.checked += 1;
            if rel < tol {
                out.passed += 1;
            }
        }
    }
    out.worst = rels.iter().copied().fold(0.0, f64::max);
    out
}

/// Makes a network whose output is mirror-equivariant: kernels symmetric
/// in x, first fully connected units in mirrored pairs, yaw read out with
/// opposite signs from each pair. Requires even map widths at every
/// pooling stage.
pub fn flip_symmetric(net: &Cnn<f64>) -> Cnn<f64> {
    let a = net.arch;
    let l = net.layout();
    let mut s = net.clone();
    let sym_kernels = |p: &mut [f64]| {
        for k in p.chunks_mut(KERNEL * KERNEL) {
            for y in 0..KERNEL {
                for x in 0..KERNEL / 2 {
                    let m = 0.5 * (k[y * KERNEL + x] + k[y * KERNEL + KERNEL - 1 - x]);
                    k[y * KERNEL + x] = m;
                    k[y * KERNEL + KERNEL - 1 - x] = m;
                }
            }
        }
    };
    sym_kernels(&mut s.params[l.conv1_w..l.conv1_b]);
    sym_kernels(&mut s.params[l.conv2_w..l.conv2_b]);

    let (pw, ph) = a.pool2_out();
    let flat = a.flat_dim();
    let d = a.fc_input();
    // Image of each fc input under the horizontal mirror; the head yaw
    // feature (first) changes sign.
    let mirror = |j: usize| -> (usize, f64) {
        if j < flat {
            let (m, rem) = (j / (pw * ph), j % (pw * ph));
            let (y, x) = (rem / pw, rem % pw);
            ((m * ph + y) * pw + pw - 1 - x, 1.0)
        } else if j == flat && a.feature_dim > 0 {
            (j, -1.0)
        } else {
            (j, 1.0)
        }
    };
    for u in (0..FC1_UNITS).step_by(2) {
        let (ra, rb) = (l.fc1_w + u * d, l.fc1_w + (u + 1) * d);
        for j in 0..d {
            let (mj, sign) = mirror(j);
            s.params[rb + mj] = sign * s.params[ra + j];
        }
        s.params[l.fc1_b + u + 1] = s.params[l.fc1_b + u];
        let (yaw, pitch) = (l.fc2_w, l.fc2_w + FC1_UNITS);
        s.params[yaw + u + 1] = -s.params[yaw + u];
        s.params[pitch + u + 1] = s.params[pitch + u];
    }
    s.params[l.fc2_b] = 0.0;
    s
}

/// Mirrors a flattened `width x height` image.
pub fn mirror_image(img: &[f64], width: usize) -> Vec<f64> {
    img.chunks(width).flat_map(|row| row.iter().rev().copied()).collect()
}

/// Random patches with random labels, all distinct.
pub fn random_samples(n: usize, width: usize, height: usize, persons: usize, seed: u64) -> Vec<NormalizedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| NormalizedSample {
            id: format!("r{i:05}"),
            person: format!("p{:02}", i % persons),
            eye: if i % 2 == 0 { EyeSide::Right } else { EyeSide::Left },
            patch: GrayImage::from_fn(width, height, |_, _| rng.gen()),
            head: HeadAngles::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.3..0.3)),
            gaze: GazeAngles::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.2..0.3)),
            pupil: None,
            geometry: None,
        })
        .collect()
}

/// Brute-force k nearest neighbours by pixel L2 distance over all samples,
/// ties broken by index; returns the mean label.
pub fn brute_force_knn(train: &[NormalizedSample], patch: &GrayImage, k: usize) -> GazeAngles {
    let mut d: Vec<(u64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let dist = s
                .patch
                .pixels()
                .iter()
                .zip(patch.pixels())
                .map(|(&a, &b)| (a as i64 - b as i64).pow(2) as u64)
                .sum();
            (dist, i)
        })
        .collect();
    d.sort();
    let k = k.min(d.len());
    let (y, p) = d[..k]
        .iter()
        .fold((0.0, 0.0), |(y, p), &(_, i)| (y + train[i].gaze.yaw, p + train[i].gaze.pitch));
    GazeAngles::new(y / k as f64, p / k as f64)
}
