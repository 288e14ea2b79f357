use super::shapes::ShapeProgram;
use super::teacher::TeacherOracle;
use crate::error::{Error, Result};
use crate::fusion::{CameraParams, ViewObservation};
use crate::volume::{GridSpec, TsdfVolume};

const MAX_STEPS: usize = 256;
const HIT_EPS: f64 = 1e-6;
const MAX_RAY: f64 = 8.0;

/// Sphere tracing along a unit direction; returns the hit distance and the
/// label of the primitive hit.
pub fn raymarch(prog: &ShapeProgram, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, u8)> {
    let mut t = 0.0;
    for _ in 0..MAX_STEPS {
        let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
        let (d, label) = prog.distance_and_label(p);
        if d < HIT_EPS {
            return Some((t, label));
        }
        t += d;
        if t > MAX_RAY {
            return None;
        }
    }
    None
}

/// Per-pixel depth (0 = miss) and hit label of a `width x height` raster.
pub fn render_depth(
    prog: &ShapeProgram,
    cam: &CameraParams,
    width: usize,
    height: usize,
) -> (Vec<f32>, Vec<Option<u8>>) {
    let origin = cam.center();
    let mut depth = Vec::with_capacity(width * height);
    let mut labels = Vec::with_capacity(width * height);
    for w in 0..height {
        for u in 0..width {
            let (dir, per_len) = cam.ray([u as f64, w as f64]);
            match raymarch(prog, origin, dir) {
                Some((t, label)) => {
                    depth.push((t * per_len) as f32);
                    labels.push(Some(label));
                }
                None => {
                    depth.push(0.0);
                    labels.push(None);
                }
            }
        }
    }
    (depth, labels)
}

/// Projective TSDF of one depth raster: free space `+t`, the band carries
/// the signed depth difference, occluded and unobserved space `-t`.
pub fn scan_from_depth(
    depth: &[f32],
    width: usize,
    height: usize,
    cam: &CameraParams,
    spec: &GridSpec,
) -> Result<TsdfVolume> {
    if depth.len() != width * height {
        return Err(Error::InvalidVolume(format!(
            "depth raster has {} values, expected {}",
            depth.len(),
            width * height
        )));
    }
    let g = spec.edge;
    let t = spec.truncation;
    let voxel = spec.voxel_size(0);
    let mut values = Vec::with_capacity(spec.voxel_count());
    for z in 0..g {
        for y in 0..g {
            for x in 0..g {
                let v = match cam.project(spec.voxel_center(x, y, z)) {
                    None => -t,
                    Some((q, zc)) => {
                        let (u, w) = (q[0].round(), q[1].round());
                        if u < 0.0 || w < 0.0 || u >= width as f64 || w >= height as f64 {
                            -t
                        } else {
                            let d = depth[w as usize * width + u as usize] as f64;
                            if d == 0.0 {
                                t
                            } else {
                                ((d - zc) / voxel).clamp(-t, t)
                            }
                        }
                    }
                };
                values.push(v as f32);
            }
        }
    }
    TsdfVolume::new(*spec, values)
}

/// Single-view partial scan of `prog`: `(partial TSDF, depth raster)`.
pub fn virtual_scan(
    prog: &ShapeProgram,
    cam: &CameraParams,
    spec: &GridSpec,
    width: usize,
    height: usize,
) -> Result<(TsdfVolume, Vec<f32>)> {
    if width == 0 || height == 0 {
        return Err(Error::Camera("empty raster".into()));
    }
    let (depth, _) = render_depth(prog, cam, width, height);
    let vol = scan_from_depth(&depth, width, height, cam, spec)?;
    Ok((vol, depth))
}

/// Renders depth and teacher patch features for one camera. Patch features
/// are means of the per-pixel part embeddings over hit pixels.
pub fn render_teacher_view(
    prog: &ShapeProgram,
    cam: &CameraParams,
    oracle: &TeacherOracle,
    width: usize,
    height: usize,
    patch_size: usize,
) -> Result<ViewObservation> {
    if patch_size == 0 || !width.is_multiple_of(patch_size) || !height.is_multiple_of(patch_size) {
        return Err(Error::InvalidVolume(format!(
            "raster {width}x{height} does not tile into {patch_size}-pixel patches"
        )));
    }
    let (depth, labels) = render_depth(prog, cam, width, height);
    let c = oracle.feat_dim();
    let (rows, cols) = (height / patch_size, width / patch_size);
    let np = rows * cols;
    let mut feats = vec![0.0f32; c * np];
    for pr in 0..rows {
        for pc in 0..cols {
            let mut sum = vec![0.0f64; c];
            let mut count = 0usize;
            for w in pr * patch_size..(pr + 1) * patch_size {
                for u in pc * patch_size..(pc + 1) * patch_size {
                    if let Some(label) = labels[w * width + u] {
                        for (s, e) in sum.iter_mut().zip(oracle.embedding(label)) {
                            *s += e;
                        }
                        count += 1;
                    }
                }
            }
            if count > 0 {
                let patch = pr * cols + pc;
                for ch in 0..c {
                    feats[ch * np + patch] = (sum[ch] / count as f64) as f32;
                }
            }
        }
    }
    ViewObservation::new(cam.clone(), width, height, depth, c, feats, patch_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::shapes::{Part, Primitive, LABEL_BODY, LABEL_TOP};
    use crate::volume::occupancy;

    fn cam(eye: [f64; 3], w: usize) -> CameraParams {
        CameraParams::look_at(
            CameraParams::pinhole(48.0 * w as f64 / 64.0, w, w),
            eye,
            [0.0; 3],
            [0.0, 1.0, 0.0],
        )
        .unwrap()
    }

    fn sphere(r: f64) -> ShapeProgram {
        ShapeProgram::new(vec![Part {
            primitive: Primitive::Sphere {
                center: [0.0; 3],
                radius: r,
            },
            label: LABEL_BODY,
        }])
        .unwrap()
    }

    #[test]
    fn hits_a_sphere_at_the_right_distance() {
        let prog = sphere(0.3);
        let (t, label) = raymarch(&prog, [0.0, 0.0, 1.6], [0.0, 0.0, -1.0]).unwrap();
        assert!((t - 1.3).abs() < 1e-5 && label == LABEL_BODY);
        assert!(raymarch(&prog, [0.0, 0.0, 1.6], [0.0, 0.0, 1.0]).is_none());
    }

    #[test]
    fn empty_depth_gives_free_space_everywhere() {
        let spec = GridSpec::with_edge(8).unwrap();
        let c = cam([0.3, 0.4, 1.5], 16);
        let vol = scan_from_depth(&[0.0; 256], 16, 16, &c, &spec).unwrap();
        assert!(vol.values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn plane_scan_has_free_band_and_occluded_layers() {
        let spec = GridSpec::with_edge(8).unwrap();
        let plane = ShapeProgram::new(vec![Part {
            primitive: Primitive::Box {
                center: [0.0, 0.0, -1.0],
                half_extents: [4.0, 4.0, 1.0],
            },
            label: LABEL_BODY,
        }])
        .unwrap();
        let c = cam([0.0, 0.0, 1.6], 64);
        let (vol, _) = virtual_scan(&plane, &c, &spec, 64, 64).unwrap();
        let h = spec.voxel_size(0);
        for z in 0..8 {
            let zc = spec.voxel_center(0, 0, z)[2];
            let want = (zc / h).clamp(-3.0, 3.0);
            for y in 0..8 {
                for x in 0..8 {
                    assert!((vol.get(x, y, z) as f64 - want).abs() < 1e-4, "z={z}");
                }
            }
        }
    }

    #[test]
    fn scan_is_partial_and_never_occupies_free_space() {
        let spec = GridSpec::with_edge(16).unwrap();
        let prog = sphere(0.3);
        let full = occupancy(&crate::synth::shapes::analytic_tsdf(&prog, &spec).unwrap());
        let c = cam([0.0, 0.5, 1.5], 64);
        let (vol, depth) = virtual_scan(&prog, &c, &spec, 64, 64).unwrap();
        let mut observed_occupied = 0;
        for i in 0..spec.voxel_count() {
            let [x, y, z] = spec.coords(i);
            let (q, zc) = c.project(spec.voxel_center(x, y, z)).unwrap();
            let d = depth[q[1].round() as usize * 64 + q[0].round() as usize] as f64;
            if d == 0.0 || zc < d {
                assert!(vol.values()[i] > 0.0);
            }
            if full.values()[i] > 0.5 && vol.values()[i].abs() < 3.0 {
                observed_occupied += 1;
            }
        }
        assert!(observed_occupied > 0 && observed_occupied < full.count_set());
    }

    #[test]
    fn teacher_patches_are_convex_mixtures() {
        let oracle = TeacherOracle::new(3, 16).unwrap();
        let prog = ShapeProgram::new(vec![
            Part {
                primitive: Primitive::Box {
                    center: [0.0, -0.1, 0.0],
                    half_extents: [0.3, 0.1, 0.3],
                },
                label: LABEL_BODY,
            },
            Part {
                primitive: Primitive::Sphere {
                    center: [0.0, 0.15, 0.0],
                    radius: 0.15,
                },
                label: LABEL_TOP,
            },
        ])
        .unwrap();
        let view = render_teacher_view(&prog, &cam([0.0, 0.8, 1.4], 64), &oracle, 64, 64, 8).unwrap();
        let (a, b) = (oracle.embedding(LABEL_BODY), oracle.embedding(LABEL_TOP));
        let mut hits = 0;
        for p in 0..view.patch_count() {
            let f = view.patch_feature(p);
            if f.iter().all(|&v| v == 0.0) {
                continue;
            }
            hits += 1;
            // least-squares weight on a, residual must vanish
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let r: Vec<f64> = f.iter().zip(b).map(|(x, y)| x - y).collect();
            let lam = r.iter().zip(&d).map(|(x, y)| x * y).sum::<f64>() / d.iter().map(|x| x * x).sum::<f64>();
            assert!((-1e-5..=1.0 + 1e-5).contains(&lam));
            let res: f64 = r.iter().zip(&d).map(|(x, y)| (x - lam * y).powi(2)).sum();
            assert!(res < 1e-10);
        }
        assert!(hits > 0);
    }
}
