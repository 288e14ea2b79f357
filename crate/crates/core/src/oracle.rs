//! Brute-force reference implementations used by the test suite and the
//! `check` command. Each one favours the most literal formulation over
//! speed and shares no code with the production path.

use crate::fusion::{CameraParams, ViewObservation};
use crate::volume::{GridSpec, TsdfVolume};

/// Dense trilinear weight of every voxel for grid point `p`: the product of
/// 1D tent functions.
pub fn trilinear_dense(p: [f64; 3], spec: &GridSpec) -> Vec<f64> {
    let g = spec.edge;
    let mut w = vec![0.0; g * g * g];
    for z in 0..g {
        for y in 0..g {
            for x in 0..g {
                let c = [x as f64, y as f64, z as f64];
                let mut prod = 1.0;
                for a in 0..3 {
                    prod *= (1.0 - (p[a] - c[a]).abs()).max(0.0);
                }
                w[(z * g + y) * g + x] = prod;
            }
        }
    }
    w
}

/// Pixel `(u, w)` at depth `d` in canonical coordinates, written out with
/// scalar pinhole algebra (zero skew assumed).
pub fn back_project_scalar(u: f64, w: f64, d: f64, cam: &CameraParams) -> [f64; 3] {
    let k = cam.intrinsics();
    let (fx, fy, cx, cy) = (k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)]);
    let pc = [(u - cx) / fx * d, (w - cy) / fy * d, d];
    let t = cam.translation();
    let r = cam.rotation();
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        for j in 0..3 {
            *o += r[(i, j)] * (pc[j] - t[j]);
        }
    }
    out
}

fn to_grid(p: [f64; 3], spec: &GridSpec) -> [f64; 3] {
    std::array::from_fn(|a| {
        (p[a] - spec.origin_min[a]) / (spec.origin_max[a] - spec.origin_min[a]) * (spec.edge - 1) as f64
    })
}

/// `(feature_sum [C x G^3], weight_sum [G^3])` of one view.
pub fn splat(view: &ViewObservation, spec: &GridSpec) -> (Vec<f64>, Vec<f64>) {
    let n = spec.voxel_count();
    let c = view.channels;
    let mut fs = vec![0.0; c * n];
    let mut ws = vec![0.0; n];
    let ps = view.patch_size;
    let cols = view.width / ps;
    for patch in 0..view.patch_count() {
        let (pr, pc) = (patch / cols, patch % cols);
        let mut pts = Vec::new();
        for w in pr * ps..(pr + 1) * ps {
            for u in pc * ps..(pc + 1) * ps {
                let d = view.depth[w * view.width + u] as f64;
                if d > 0.0 {
                    pts.push(back_project_scalar(u as f64, w as f64, d, &view.camera));
                }
            }
        }
        if pts.is_empty() {
            continue;
        }
        let center: [f64; 3] = std::array::from_fn(|a| pts.iter().map(|p| p[a]).sum::<f64>() / pts.len() as f64);
        let weights = trilinear_dense(to_grid(center, spec), spec);
        let feat = view.patch_feature(patch);
        for v in 0..n {
            ws[v] += weights[v];
            for ch in 0..c {
                fs[ch * n + v] += weights[v] * feat[ch];
            }
        }
    }
    (fs, ws)
}

/// Per-view `S / (W + eps)` with zero where `W == 0`.
pub fn normalize(fs: &[f64], ws: &[f64], eps: f64) -> Vec<f64> {
    let n = ws.len();
    (0..fs.len())
        .map(|i| {
            if ws[i % n] > 0.0 {
                fs[i] / (ws[i % n] + eps)
            } else {
                0.0
            }
        })
        .collect()
}

/// Keeps features and weights only where the ground truth is inside.
pub fn filter(feat: &[f64], ws: &[f64], gt: &TsdfVolume) -> (Vec<f64>, Vec<f64>) {
    let n = ws.len();
    let t = gt.values();
    let f = (0..feat.len())
        .map(|i| if t[i % n] <= 0.0 { feat[i] } else { 0.0 })
        .collect();
    let w = (0..n).map(|i| if t[i] <= 0.0 { ws[i] } else { 0.0 }).collect();
    (f, w)
}

/// `sum_v W_v F_v / (sum_v W_v + eps)` voxel by voxel.
pub fn fuse(per_view: &[(Vec<f64>, Vec<f64>)], channels: usize, eps: f64) -> Vec<f64> {
    let n = per_view[0].1.len();
    let mut out = vec![0.0; channels * n];
    for v in 0..n {
        let den: f64 = per_view.iter().map(|(_, w)| w[v]).sum();
        for ch in 0..channels {
            let num: f64 = per_view.iter().map(|(f, w)| w[v] * f[ch * n + v]).sum();
            out[ch * n + v] = num / (den + eps);
        }
    }
    out
}

pub fn coverage(ws: &[f64]) -> Vec<f64> {
    ws.iter().map(|&w| if w > 0.0 { 1.0 } else { 0.0 }).collect()
}

/// Direct recurrence with `A_bar = exp(dt a)` and `B_bar = (A_bar - 1) / a * b`.
/// Shapes follow [`crate::ssm::ScanInputs`].
#[allow(clippy::too_many_arguments)]
pub fn ssm_recurrence(
    len: usize,
    channels: usize,
    state_dim: usize,
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    d: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; len * channels];
    for ch in 0..channels {
        let mut h = vec![0.0; state_dim];
        for k in 0..len {
            let xv = x[k * channels + ch];
            let dt = delta[k * channels + ch];
            let mut out = d[ch] * xv;
            for j in 0..state_dim {
                let aj = a[ch * state_dim + j];
                let a_bar = (dt * aj).exp();
                let b_bar = (a_bar - 1.0) / aj * b[k * state_dim + j];
                h[j] = a_bar * h[j] + b_bar * xv;
                out += c[k * state_dim + j] * h[j];
            }
            y[k * channels + ch] = out;
        }
    }
    y
}

/// Direct 3D convolution of `x [Cin, G, G, G]` with `w [Cout, Cin, k, k, k]`,
/// zero padding, cubic input.
pub fn conv3(
    x: &[f64],
    cin: usize,
    g: usize,
    w: &[f64],
    bias: &[f64],
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize) {
    let cout = bias.len();
    let go = (g + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * go * go * go];
    for co in 0..cout {
        for oz in 0..go {
            for oy in 0..go {
                for ox in 0..go {
                    let mut s = bias[co];
                    for ci in 0..cin {
                        for kz in 0..k {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iz = (oz * stride + kz) as isize - pad as isize;
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    let gi = g as isize;
                                    if iz < 0 || iy < 0 || ix < 0 || iz >= gi || iy >= gi || ix >= gi {
                                        continue;
                                    }
                                    let xi = ((ci * g + iz as usize) * g + iy as usize) * g + ix as usize;
                                    let wi = (((co * cin + ci) * k + kz) * k + ky) * k + kx;
                                    s += w[wi] * x[xi];
                                }
                            }
                        }
                    }
                    out[((co * go + oz) * go + oy) * go + ox] = s;
                }
            }
        }
    }
    (out, go)
}

/// O(n m) symmetric Chamfer distance between occupied voxel centers.
pub fn chamfer(pred: &TsdfVolume, gt: &TsdfVolume) -> Option<f64> {
    let pts = |v: &TsdfVolume| -> Vec<[f64; 3]> {
        let s = v.spec();
        (0..s.voxel_count())
            .filter(|&i| v.values()[i] <= 0.0)
            .map(|i| s.coords(i).map(|c| c as f64))
            .collect()
    };
    let (p, q) = (pts(pred), pts(gt));
    if p.is_empty() || q.is_empty() {
        return None;
    }
    let directed = |a: &[[f64; 3]], b: &[[f64; 3]]| -> f64 {
        a.iter()
            .map(|x| {
                b.iter()
                    .map(|y| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / a.len() as f64
    };
    Some(0.5 * (directed(&p, &q) + directed(&q, &p)))
}

/// Mean `|seq(u) - seq(v)|` over face-adjacent voxel pairs, where `seq`
/// maps a flat voxel index to its sequence position.
pub fn mean_adjacent_gap(edge: usize, seq: impl Fn(usize) -> usize) -> f64 {
    let g = edge;
    let (mut sum, mut n) = (0.0, 0usize);
    for z in 0..g {
        for y in 0..g {
            for x in 0..g {
                let v = (z * g + y) * g + x;
                let mut nb = Vec::with_capacity(3);
                if x + 1 < g {
                    nb.push(v + 1);
                }
                if y + 1 < g {
                    nb.push(v + g);
                }
                if z + 1 < g {
                    nb.push(v + g * g);
                }
                for u in nb {
                    sum += seq(v).abs_diff(seq(u)) as f64;
                    n += 1;
                }
            }
        }
    }
    sum / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tent_weights_at_a_center_are_one_hot() {
        let spec = GridSpec::with_edge(4).unwrap();
        let w = trilinear_dense([1.0, 2.0, 3.0], &spec);
        assert_eq!(w.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(w[spec.index(1, 2, 3)], 1.0);
    }

    #[test]
    fn raster_gap_matches_closed_form() {
        // x pairs gap 1, y pairs gap g, z pairs gap g^2, equal counts
        let g = 4;
        let want = (1.0 + 4.0 + 16.0) / 3.0;
        assert!((mean_adjacent_gap(g, |v| v) - want).abs() < 1e-12);
    }

    #[test]
    fn recurrence_single_step() {
        let y = ssm_recurrence(1, 1, 1, &[2.0], &[2f64.ln()], &[-1.0], &[1.0], &[1.0], &[0.0]);
        assert!((y[0] - 1.0).abs() < 1e-12);
    }
}
