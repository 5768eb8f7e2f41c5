//! Reference implementations written directly from the defining formulas,
//! using plain nested vectors and no crate kernels.

#![allow(dead_code, clippy::needless_range_loop)]

use fusion_core::detect::Box3D;
use fusion_core::gcfat::GcfatConfig;
use fusion_core::numerics::ParamSet;
use fusion_core::sffa::SffaConfig;
use fusion_core::vga::{GateMode, VgaConfig};
use fusion_core::voxel::{SparseVoxelGrid, VoxelIndex};
use fusion_core::Tensor;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub const EPS: f64 = 1e-6;

pub fn rows(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn max_diff(a: &Mat, t: &Tensor) -> f64 {
    assert_eq!(a.len(), t.rows(), "row count");
    let mut m = 0.0f64;
    for (r, row) in a.iter().enumerate() {
        assert_eq!(row.len(), t.last_dim(), "width");
        for (x, y) in row.iter().zip(t.row(r)) {
            m = m.max((x - y).abs());
        }
    }
    m
}

fn param(p: &ParamSet, name: &str) -> Tensor {
    p.get(name).unwrap().clone()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = b[0].len();
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| {
                    let mut s = 0.0;
                    for (k, x) in row.iter().enumerate() {
                        s += x * b[k][j];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn linear(x: &Mat, p: &ParamSet, prefix: &str, bias: bool) -> Mat {
    let w = rows(&param(p, &format!("{prefix}.weight")));
    let mut y = matmul(x, &w);
    if bias {
        let b = param(p, &format!("{prefix}.bias"));
        for row in &mut y {
            for (v, b) in row.iter_mut().zip(b.data()) {
                *v += b;
            }
        }
    }
    y
}

pub fn mlp(x: &Mat, p: &ParamSet, prefix: &str, layers: usize) -> Mat {
    let mut h = x.clone();
    for i in 0..layers {
        h = linear(&h, p, &format!("{prefix}.{i}"), true);
        if i + 1 < layers {
            for v in h.iter_mut().flatten() {
                *v = v.max(0.0);
            }
        }
    }
    h
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn layer_norm(x: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + EPS).sqrt() * gain[i] + bias[i])
                .collect()
        })
        .collect()
}

/// `LN(x + αv)` where each window's keys and values attend from the shared
/// global query; window slots map row-major over an `h_p x w_p` block.
pub fn gda(x: &Tensor, q: &Tensor, cfg: &GcfatConfig, p: &ParamSet, prefix: &str) -> Mat {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let c = cfg.width;
    let xs = rows(&x.reshape(&[h * w, c]).unwrap());
    let qs = rows(q);
    let k = linear(&xs, p, &format!("{prefix}.k"), true);
    let v = linear(&xs, p, &format!("{prefix}.v"), true);
    let (hp, wp) = cfg.window;
    let d = c / cfg.heads;
    let mut av = vec![vec![0.0; c]; h * w];
    for wy in 0..h.div_ceil(hp) {
        for wx in 0..w.div_ceil(wp) {
            let mut slots = Vec::new();
            for a in 0..hp {
                for b in 0..wp {
                    let (r, cc) = (wy * hp + a, wx * wp + b);
                    slots.push((r < h && cc < w).then_some(r * w + cc));
                }
            }
            let toks: Vec<usize> = slots.iter().flatten().copied().collect();
            for head in 0..cfg.heads {
                let cols = head * d..(head + 1) * d;
                for (s, slot) in slots.iter().enumerate() {
                    let Some(dst) = slot else { continue };
                    let scores: Vec<f64> = toks
                        .iter()
                        .map(|&t| cols.clone().map(|j| qs[s][j] * k[t][j]).sum::<f64>() / (d as f64).sqrt())
                        .collect();
                    let alpha = softmax(&scores);
                    for j in cols.clone() {
                        av[*dst][j] = toks.iter().zip(&alpha).map(|(&t, a)| a * v[t][j]).sum();
                    }
                }
            }
        }
    }
    let sum: Mat = xs
        .iter()
        .zip(&av)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let g = param(p, &format!("{prefix}.norm.gain"));
    let b = param(p, &format!("{prefix}.norm.bias"));
    layer_norm(&sum, g.data(), b.data())
}

/// `(β, F^SFFA)` with `β = ReLU(s q kᵀ)` and
/// `F = RMSNorm(β v) ⊙ (x_img W_m + b_m) + x_img`.
pub fn sffa(lidar: &Tensor, image: &Tensor, cfg: &SffaConfig, p: &ParamSet) -> (Mat, Mat) {
    let (l, x) = (rows(lidar), rows(image));
    let q = linear(&l, p, "sffa.q", true);
    let k = linear(&x, p, "sffa.k", true);
    let v = linear(&x, p, "sffa.v", true);
    let m = linear(&x, p, "sffa.merge", true);
    let s = cfg.scale.unwrap_or(1.0 / (cfg.width as f64).sqrt());
    let beta: Mat = q
        .iter()
        .map(|qi| {
            k.iter()
                .map(|kj| (s * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>()).max(0.0))
                .collect()
        })
        .collect();
    let g = param(p, "sffa.norm.gain");
    let bv = matmul(&beta, &v);
    let out = bv
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let rms = (row.iter().map(|a| a * a).sum::<f64>() / row.len() as f64 + cfg.eps).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, a)| a / rms * g.data()[j] * m[i][j] + x[i][j])
                .collect()
        })
        .collect();
    (beta, out)
}

/// Gated fusion: `θ = σ(MLP_g([l, s]))`, output `MLP_f([θ_l ⊙ l, θ_s ⊙ s])`.
/// Returns `(θ_l, θ_s, output)`.
pub fn vga_fuse(l: &Tensor, s: &Tensor, cfg: &VgaConfig, p: &ParamSet) -> (Mat, Mat, Mat) {
    let (l, s) = (rows(l), rows(s));
    let c = cfg.width;
    let cat: Mat = l
        .iter()
        .zip(&s)
        .map(|(a, b)| a.iter().chain(b).copied().collect())
        .collect();
    let logits = mlp(&cat, p, "vga.gate", 2);
    let (mut tl, mut ts) = (Vec::new(), Vec::new());
    for row in &logits {
        let (a, b): (Vec<f64>, Vec<f64>) = match cfg.gate {
            GateMode::PerChannel => (
                row[..c].iter().map(|&x| sigmoid(x)).collect(),
                row[c..].iter().map(|&x| sigmoid(x)).collect(),
            ),
            GateMode::PerPoint => (vec![sigmoid(row[0]); c], vec![sigmoid(row[1]); c]),
        };
        tl.push(a);
        ts.push(b);
    }
    let gated: Mat = (0..l.len())
        .map(|i| {
            let a = (0..c).map(|j| tl[i][j] * l[i][j]);
            let b = (0..c).map(|j| ts[i][j] * s[i][j]);
            a.chain(b).collect()
        })
        .collect();
    let out = mlp(&gated, p, "vga.fuse", 2);
    (tl, ts, out)
}

/// Densify, run a dense 3x3x3 convolution with bias and ReLU at every
/// output position, then keep the positions the sparse rule activates.
pub fn dense_conv(grid: &SparseVoxelGrid, p: &ParamSet, prefix: &str, stride: usize) -> Vec<(VoxelIndex, Vec<f64>)> {
    let e = grid.extents();
    let cin = grid.width();
    let kernel = param(p, &format!("{prefix}.kernel"));
    let bias = param(p, &format!("{prefix}.bias"));
    let cout = bias.len();
    let mut dense = vec![vec![vec![vec![0.0; cin]; e[2]]; e[1]]; e[0]];
    for (idx, f) in grid.indices().iter().zip(0..) {
        dense[idx[0]][idx[1]][idx[2]] = grid.features().row(f).to_vec();
    }
    let oe = e.map(|x| x.div_ceil(stride));
    let active = |o: [usize; 3]| -> bool {
        if stride == 1 {
            grid.get(o).is_some()
        } else {
            grid.indices().iter().any(|i| i.map(|x| x / 2) == o)
        }
    };
    let mut out = Vec::new();
    for i in 0..oe[0] {
        for j in 0..oe[1] {
            for k in 0..oe[2] {
                let o = [i, j, k];
                if !active(o) {
                    continue;
                }
                let mut acc = bias.data().to_vec();
                for a in 0..3 {
                    for b in 0..3 {
                        for c in 0..3 {
                            let src = [
                                (i * stride) as i64 + a as i64 - 1,
                                (j * stride) as i64 + b as i64 - 1,
                                (k * stride) as i64 + c as i64 - 1,
                            ];
                            if (0..3).any(|ax| src[ax] < 0 || src[ax] >= e[ax] as i64) {
                                continue;
                            }
                            let x = &dense[src[0] as usize][src[1] as usize][src[2] as usize];
                            for ci in 0..cin {
                                for co in 0..cout {
                                    acc[co] += x[ci] * kernel.data()[(((a * 3 + b) * 3 + c) * cin + ci) * cout + co];
                                }
                            }
                        }
                    }
                }
                out.push((o, acc.into_iter().map(|v| v.max(0.0)).collect()));
            }
        }
    }
    out
}

/// Greedy furthest-point order from `start`: each step takes the point whose
/// distance to the selected set is largest, lowest index on ties.
pub fn fps(points: &[[f64; 3]], k: usize, start: usize) -> Vec<usize> {
    let dist =
        |a: [f64; 3], b: [f64; 3]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    let mut sel = vec![start];
    while sel.len() < k.min(points.len()) {
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in points.iter().enumerate() {
            let d = sel.iter().map(|&s| dist(*p, points[s])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        sel.push(best.unwrap().1);
    }
    sel
}

fn inside_bev(b: &Box3D, x: f64, y: f64) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let (dx, dy) = (x - b.center[0], y - b.center[1]);
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= 0.5 * b.size[0] && v.abs() <= 0.5 * b.size[1]
}

/// BEV IoU estimated by uniform sampling over the joint bounding rectangle.
pub fn monte_carlo_bev_iou(a: &Box3D, b: &Box3D, samples: usize, rng: &mut impl Rng) -> f64 {
    let r = a.bev_radius().max(b.bev_radius());
    let x0 = a.center[0].min(b.center[0]) - r;
    let x1 = a.center[0].max(b.center[0]) + r;
    let y0 = a.center[1].min(b.center[1]) - r;
    let y1 = a.center[1].max(b.center[1]) + r;
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let x = rng.random_range(x0..x1);
        let y = rng.random_range(y0..y1);
        let (ia, ib) = (inside_bev(a, x, y), inside_bev(b, x, y));
        inter += (ia && ib) as usize;
        union += (ia || ib) as usize;
    }
    inter as f64 / union as f64
}

/// Textbook suppression loop: walk boxes by score, keep each unsuppressed
/// one and suppress every later box overlapping it by more than `thresh`.
pub fn nms(dets: &[Box3D], thresh: f64, top_n: usize, iou: impl Fn(&Box3D, &Box3D) -> f64) -> Vec<usize> {
    let n = dets.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable insertion sort by descending score
    for i in 1..n {
        let mut j = i;
        while j > 0 && dets[order[j - 1]].score < dets[order[j]].score {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut suppressed = vec![false; n];
    let mut keep = Vec::new();
    for a in 0..n {
        if suppressed[a] {
            continue;
        }
        if keep.len() == top_n {
            break;
        }
        keep.push(order[a]);
        for b in a + 1..n {
            if iou(&dets[order[a]], &dets[order[b]]) > thresh {
                suppressed[b] = true;
            }
        }
    }
    keep
}
