//! Multi-view feature voxelization.
//!
//! Patch features from each view are lifted to 3D through the depth map,
//! splatted onto the grid with trilinear weights, normalized per view,
//! restricted to the object interior and averaged across views.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{FeatureVolume, GridSpec, MaskVolume, TsdfVolume};
use crate::vxl::{self, RawVolume, VolumeKind};

/// Denominator guard for all fusion normalizations.
pub const FUSION_EPS: f64 = 1e-8;

/// Pinhole camera with the row-vector extrinsic convention
/// `x_can = (depth * K^-1 [u, w, 1]^T - t) R^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    intrinsics: Matrix3<f64>,
    intrinsics_inv: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraParams {
    pub fn new(intrinsics: Matrix3<f64>, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let intrinsics_inv = intrinsics
            .try_inverse()
            .ok_or_else(|| Error::Camera("intrinsics matrix is not invertible".into()))?;
        if !intrinsics_inv.iter().all(|v| v.is_finite()) {
            return Err(Error::Camera("intrinsics matrix is not invertible".into()));
        }
        let det = rotation.determinant();
        let ortho = (rotation * rotation.transpose() - Matrix3::identity()).abs().max();
        if (det - 1.0).abs() >= 1e-6 || ortho >= 1e-6 {
            return Err(Error::Camera(format!(
                "rotation is not a proper rotation (det {det:.3e}, orthogonality error {ortho:.3e})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Camera("translation is not finite".into()));
        }
        Ok(CameraParams {
            intrinsics,
            intrinsics_inv,
            rotation,
            translation,
        })
    }

    /// Square-pixel intrinsics with the principal point at the raster center.
    pub fn pinhole(focal: f64, width: usize, height: usize) -> Matrix3<f64> {
        Matrix3::new(
            focal,
            0.0,
            (width as f64 - 1.0) / 2.0,
            0.0,
            focal,
            (height as f64 - 1.0) / 2.0,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera at `eye` looking at `target`; image rows run against `up`.
    pub fn look_at(intrinsics: Matrix3<f64>, eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Result<Self> {
        let eye = Vector3::from(eye);
        let forward = Vector3::from(target) - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::Camera("eye and target coincide".into()));
        }
        let forward = forward.normalize();
        let mut up = Vector3::from(up);
        if up.cross(&forward).norm() < 1e-6 {
            up = if forward.x.abs() < 0.9 {
                Vector3::x()
            } else {
                Vector3::z()
            };
        }
        let down = -(up - forward * up.dot(&forward)).normalize();
        let right = down.cross(&forward);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        let translation = -(rotation.transpose() * eye);
        CameraParams::new(intrinsics, rotation, translation)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in canonical coordinates.
    pub fn center(&self) -> [f64; 3] {
        (-(self.rotation * self.translation)).into()
    }

    /// Unit ray direction (canonical frame) through pixel `q`, and the depth
    /// reached per unit of ray length.
    pub fn ray(&self, q: [f64; 2]) -> ([f64; 3], f64) {
        let cam = self.intrinsics_inv * Vector3::new(q[0], q[1], 1.0);
        let len = cam.norm();
        let dir = self.rotation * (cam / len);
        (dir.into(), 1.0 / len)
    }

    /// Projects a canonical point to `(u, w, depth)`; `None` behind the camera.
    pub fn project(&self, x: [f64; 3]) -> Option<([f64; 2], f64)> {
        let p = self.rotation.transpose() * Vector3::from(x) + self.translation;
        if p.z <= 0.0 {
            return None;
        }
        let h = self.intrinsics * p;
        Some(([h.x / h.z, h.y / h.z], p.z))
    }
}

/// Lifts pixel `q = (u, w)` with depth `depth` into canonical space.
pub fn back_project(q: [f64; 2], depth: f64, cam: &CameraParams) -> [f64; 3] {
    let ray = cam.intrinsics_inv * Vector3::new(q[0], q[1], 1.0);
    let p = ray * depth - cam.translation;
    // row vector times R^T == R times column vector
    (cam.rotation * p).into()
}

/// One rendered view: depth raster (0 = invalid) plus a patch feature raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewObservation {
    pub camera: CameraParams,
    pub width: usize,
    pub height: usize,
    /// `height x width`, row-major.
    pub depth: Vec<f32>,
    pub channels: usize,
    /// `channels x patch_rows x patch_cols`.
    pub patch_features: Vec<f32>,
    pub patch_size: usize,
}

impl ViewObservation {
    pub fn new(
        camera: CameraParams,
        width: usize,
        height: usize,
        depth: Vec<f32>,
        channels: usize,
        patch_features: Vec<f32>,
        patch_size: usize,
    ) -> Result<Self> {
        if patch_size == 0 || !width.is_multiple_of(patch_size) || !height.is_multiple_of(patch_size) {
            return Err(Error::InvalidVolume(format!(
                "raster {width}x{height} is not divisible into {patch_size}-pixel patches"
            )));
        }
        if depth.len() != width * height {
            return Err(Error::InvalidVolume(format!(
                "depth raster has {} values, expected {}",
                depth.len(),
                width * height
            )));
        }
        if depth.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidVolume("depth values must be finite and >= 0".into()));
        }
        let view = ViewObservation {
            camera,
            width,
            height,
            depth,
            channels,
            patch_features,
            patch_size,
        };
        if view.patch_features.len() != channels * view.patch_count() {
            return Err(Error::InvalidVolume(format!(
                "patch feature raster has {} values, expected {}",
                view.patch_features.len(),
                channels * view.patch_count()
            )));
        }
        if view.patch_features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("patch features".into()));
        }
        Ok(view)
    }

    pub fn patch_rows(&self) -> usize {
        self.height / self.patch_size
    }

    pub fn patch_cols(&self) -> usize {
        self.width / self.patch_size
    }

    pub fn patch_count(&self) -> usize {
        self.patch_rows() * self.patch_cols()
    }

    pub fn patch_feature(&self, patch: usize) -> Vec<f64> {
        let n = self.patch_count();
        (0..self.channels)
            .map(|c| self.patch_features[c * n + patch] as f64)
            .collect()
    }

    pub fn depth_at(&self, u: usize, w: usize) -> f32 {
        self.depth[w * self.width + u]
    }

    /// Writes `<stem>.json`, `<stem>_depth.vxl` and `<stem>_feat.vxl`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let file = CameraFile::from_view(self);
        let json_path = dir.join(format!("{stem}.json"));
        std::fs::write(&json_path, serde_json::to_vec_pretty(&file)?).map_err(|e| Error::io(&json_path, e))?;
        vxl::write_raw(
            dir.join(format!("{stem}_depth.vxl")),
            &RawVolume::raster(VolumeKind::Feature, 1, self.height, self.width, self.depth.clone())?,
        )?;
        vxl::write_raw(
            dir.join(format!("{stem}_feat.vxl")),
            &RawVolume::raster(
                VolumeKind::Feature,
                self.channels,
                self.patch_rows(),
                self.patch_cols(),
                self.patch_features.clone(),
            )?,
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json_path = dir.join(format!("{stem}.json"));
        let text = std::fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let file: CameraFile = serde_json::from_slice(&text)?;
        let camera = file.camera()?;
        let depth = vxl::read_raw(dir.join(format!("{stem}_depth.vxl")))?;
        if depth.dims != [1, file.height as u32, file.width as u32] || depth.channels != 1 {
            return Err(Error::InvalidVolume(format!(
                "depth raster dims {:?} do not match camera file {}x{}",
                depth.dims, file.width, file.height
            )));
        }
        let feats = vxl::read_raw(dir.join(format!("{stem}_feat.vxl")))?;
        let (rows, cols) = (
            file.height / file.patch_size.max(1),
            file.width / file.patch_size.max(1),
        );
        if feats.dims != [1, rows as u32, cols as u32] {
            return Err(Error::InvalidVolume(format!(
                "feature raster dims {:?} do not match a {rows}x{cols} patch grid",
                feats.dims
            )));
        }
        ViewObservation::new(
            camera,
            file.width,
            file.height,
            depth.data,
            feats.channels as usize,
            feats.data,
            file.patch_size,
        )
    }
}

/// On-disk camera description. `K` and `R` are row-major; the extrinsics
/// follow the row-vector convention documented on [`CameraParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    #[serde(rename = "K")]
    pub k: [f64; 9],
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub patch_size: usize,
    pub width: usize,
    pub height: usize,
}

impl CameraFile {
    pub fn from_view(view: &ViewObservation) -> Self {
        let row_major = |m: &Matrix3<f64>| -> [f64; 9] { std::array::from_fn(|i| m[(i / 3, i % 3)]) };
        CameraFile {
            k: row_major(&view.camera.intrinsics),
            r: row_major(&view.camera.rotation),
            t: view.camera.translation.into(),
            patch_size: view.patch_size,
            width: view.width,
            height: view.height,
        }
    }

    pub fn camera(&self) -> Result<CameraParams> {
        CameraParams::new(
            Matrix3::from_row_slice(&self.k),
            Matrix3::from_row_slice(&self.r),
            Vector3::from(self.t),
        )
    }
}

/// Mean of the back-projected valid pixels of patch `patch`, or `None` when
/// the patch has no valid depth.
pub fn patch_center(view: &ViewObservation, patch: usize) -> Option<[f64; 3]> {
    let cols = view.patch_cols();
    let (pr, pc) = (patch / cols, patch % cols);
    let ps = view.patch_size;
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for w in pr * ps..(pr + 1) * ps {
        for u in pc * ps..(pc + 1) * ps {
            let d = view.depth_at(u, w);
            if d > 0.0 {
                let x = back_project([u as f64, w as f64], d as f64, &view.camera);
                for a in 0..3 {
                    sum[a] += x[a];
                }
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum.map(|s| s / count as f64))
}

/// Trilinear splat weights of continuous grid point `p` onto its (up to 8)
/// neighboring voxel centers. Neighbors outside the grid and zero weights
/// are dropped; the remaining weights are not renormalized.
pub fn trilinear_weights(p: [f64; 3], spec: &GridSpec) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(8);
    if !p.iter().all(|v| v.is_finite()) {
        return out;
    }
    let base = p.map(|v| v.floor());
    let g = spec.edge as i64;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let k = [base[0] + dx as f64, base[1] + dy as f64, base[2] + dz as f64];
                let w = (1.0 - (p[0] - k[0]).abs()) * (1.0 - (p[1] - k[1]).abs()) * (1.0 - (p[2] - k[2]).abs());
                if w <= 0.0 {
                    continue;
                }
                let ki = k.map(|v| v as i64);
                if ki.iter().any(|&c| c < 0 || c >= g) {
                    continue;
                }
                out.push((spec.index(ki[0] as usize, ki[1] as usize, ki[2] as usize), w));
            }
        }
    }
    out
}

/// Per-view feature and weight sums.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatAccumulator {
    pub spec: GridSpec,
    pub channels: usize,
    /// `channels x G^3`, channel-major.
    pub feature_sum: Vec<f64>,
    /// `G^3`.
    pub weight_sum: Vec<f64>,
}

impl SplatAccumulator {
    pub fn new(spec: GridSpec, channels: usize) -> Self {
        let n = spec.voxel_count();
        SplatAccumulator {
            spec,
            channels,
            feature_sum: vec![0.0; channels * n],
            weight_sum: vec![0.0; n],
        }
    }

    /// Adds one feature vector at continuous grid position `p`.
    pub fn splat(&mut self, p: [f64; 3], feature: &[f64]) {
        let n = self.spec.voxel_count();
        for (k, w) in trilinear_weights(p, &self.spec) {
            self.weight_sum[k] += w;
            for (c, f) in feature.iter().enumerate() {
                self.feature_sum[c * n + k] += w * f;
            }
        }
    }

    /// Field-wise sum of two accumulators over the same grid.
    pub fn merge(&mut self, other: &SplatAccumulator) -> Result<()> {
        if self.spec.edge != other.spec.edge || self.channels != other.channels {
            return Err(Error::shape(
                "SplatAccumulator::merge",
                format!(
                    "edge {} vs {}, channels {} vs {}",
                    self.spec.edge, other.spec.edge, self.channels, other.channels
                ),
            ));
        }
        for (a, b) in self.feature_sum.iter_mut().zip(&other.feature_sum) {
            *a += b;
        }
        for (a, b) in self.weight_sum.iter_mut().zip(&other.weight_sum) {
            *a += b;
        }
        Ok(())
    }
}

/// Splats every patch with a valid center into a fresh accumulator.
pub fn splat_view(view: &ViewObservation, spec: &GridSpec) -> SplatAccumulator {
    let mut acc = SplatAccumulator::new(*spec, view.channels);
    for patch in 0..view.patch_count() {
        if let Some(center) = patch_center(view, patch) {
            acc.splat(spec.canonical_to_grid(center), &view.patch_feature(patch));
        }
    }
    acc
}

/// `S / (W + eps)` per voxel.
pub fn normalize_view(acc: &SplatAccumulator, eps: f64) -> FeatureVolume {
    let n = acc.spec.voxel_count();
    let values: Vec<f64> = (0..acc.channels * n)
        .map(|i| {
            let w = acc.weight_sum[i % n];
            if w == 0.0 {
                0.0
            } else {
                acc.feature_sum[i] / (w + eps)
            }
        })
        .collect();
    FeatureVolume::from_f64(acc.spec, acc.channels, &values).expect("normalized features are finite")
}

/// Zeroes features and weights outside the ground-truth interior (`T > 0`).
pub fn tsdf_filter(feat: &FeatureVolume, weights: &[f64], gt: &TsdfVolume) -> Result<(FeatureVolume, Vec<f64>)> {
    let n = feat.spec().voxel_count();
    if gt.spec().edge != feat.spec().edge || weights.len() != n {
        return Err(Error::shape(
            "tsdf_filter",
            format!(
                "features edge {}, weights {} voxels, gt edge {}",
                feat.spec().edge,
                weights.len(),
                gt.spec().edge
            ),
        ));
    }
    let inside: Vec<bool> = gt.values().iter().map(|&t| t <= 0.0).collect();
    let values = feat
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| if inside[i % n] { v } else { 0.0 })
        .collect();
    let w = weights
        .iter()
        .zip(&inside)
        .map(|(&w, &keep)| if keep { w } else { 0.0 })
        .collect();
    Ok((FeatureVolume::new(*feat.spec(), feat.channels(), values)?, w))
}

/// Weighted average of filtered per-view features.
pub fn fuse_views(per_view: &[(FeatureVolume, Vec<f64>)], eps: f64) -> Result<FeatureVolume> {
    let (first, _) = per_view
        .first()
        .ok_or_else(|| Error::Empty("fuse_views needs at least one view".into()))?;
    let spec = *first.spec();
    let channels = first.channels();
    let n = spec.voxel_count();
    let mut num = vec![0.0f64; channels * n];
    let mut den = vec![0.0f64; n];
    for (v, (feat, w)) in per_view.iter().enumerate() {
        if feat.spec().edge != spec.edge || feat.channels() != channels || w.len() != n {
            return Err(Error::shape(
                "fuse_views",
                format!(
                    "view {v} does not match the first view's {channels}x{}^3 layout",
                    spec.edge
                ),
            ));
        }
        for k in 0..n {
            den[k] += w[k];
        }
        for (i, f) in feat.values().iter().enumerate() {
            num[i] += w[i % n] * *f as f64;
        }
    }
    let values: Vec<f64> = num.iter().enumerate().map(|(i, s)| s / (den[i % n] + eps)).collect();
    FeatureVolume::from_f64(spec, channels, &values)
}

/// `1` wherever the view deposited any weight.
pub fn coverage_mask(acc: &SplatAccumulator) -> MaskVolume {
    MaskVolume::from_bools(acc.spec, acc.weight_sum.iter().map(|&w| w > 0.0)).expect("binary mask")
}

pub fn incomplete_target(fgt: &FeatureVolume, cov: &MaskVolume) -> Result<FeatureVolume> {
    let n = fgt.spec().voxel_count();
    if cov.spec().edge != fgt.spec().edge {
        return Err(Error::shape(
            "incomplete_target",
            format!("features edge {} vs mask edge {}", fgt.spec().edge, cov.spec().edge),
        ));
    }
    let m = cov.values();
    let values = fgt.values().iter().enumerate().map(|(i, &v)| v * m[i % n]).collect();
    FeatureVolume::new(*fgt.spec(), fgt.channels(), values)
}

/// Full ground-truth fusion: per-view splat, normalize, filter, then fuse.
pub fn fuse_ground_truth(views: &[ViewObservation], gt: &TsdfVolume, eps: f64) -> Result<(FeatureVolume, Vec<f64>)> {
    let spec = *gt.spec();
    let mut filtered = Vec::with_capacity(views.len());
    for view in views {
        let acc = splat_view(view, &spec);
        let g = normalize_view(&acc, eps);
        filtered.push(tsdf_filter(&g, &acc.weight_sum, gt)?);
    }
    let fused = fuse_views(&filtered, eps)?;
    let mut total = vec![0.0; spec.voxel_count()];
    for (_, w) in &filtered {
        for (t, x) in total.iter_mut().zip(w) {
            *t += x;
        }
    }
    Ok((fused, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_cam(t: [f64; 3]) -> CameraParams {
        CameraParams::new(Matrix3::identity(), Matrix3::identity(), Vector3::from(t)).unwrap()
    }

    #[test]
    fn back_project_identity_camera() {
        assert_eq!(back_project([2.0, 3.0], 4.0, &identity_cam([0.0; 3])), [8.0, 12.0, 4.0]);
        assert_eq!(
            back_project([0.0, 0.0], 1.0, &identity_cam([1.0, 0.0, 0.0])),
            [-1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn singular_intrinsics_rejected() {
        let k = Matrix3::new(1.0, 2.0, 0.0, 2.0, 4.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraParams::new(k, Matrix3::identity(), Vector3::zeros()).is_err());
        let bad_r = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(CameraParams::new(Matrix3::identity(), bad_r, Vector3::zeros()).is_err());
    }

    #[test]
    fn look_at_projects_target_to_principal_point() {
        let k = CameraParams::pinhole(50.0, 64, 64);
        let cam = CameraParams::look_at(k, [0.0, 0.9, -1.2], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        let (q, depth) = cam.project([0.0; 3]).unwrap();
        assert!((q[0] - 31.5).abs() < 1e-9 && (q[1] - 31.5).abs() < 1e-9);
        assert!((depth - 1.5).abs() < 1e-9);
        let back = back_project(q, depth, &cam);
        assert!(back.iter().all(|v| v.abs() < 1e-9));
        let c = cam.center();
        assert!((c[1] - 0.9).abs() < 1e-12 && (c[2] + 1.2).abs() < 1e-12);
        // up in the world is up in the image
        let (above, _) = cam.project([0.0, 0.2, 0.0]).unwrap();
        assert!(above[1] < 31.5);
    }

    #[test]
    fn trilinear_special_points() {
        let spec = GridSpec::with_edge(32).unwrap();
        assert_eq!(
            trilinear_weights([3.0, 4.0, 5.0], &spec),
            vec![(spec.index(3, 4, 5), 1.0)]
        );
        let mid = trilinear_weights([3.5, 4.0, 5.0], &spec);
        assert_eq!(mid, vec![(spec.index(3, 4, 5), 0.5), (spec.index(4, 4, 5), 0.5)]);
        let center = trilinear_weights([15.5; 3], &spec);
        assert_eq!(center.len(), 8);
        assert!(center.iter().all(|&(_, w)| w == 0.125));
    }

    #[test]
    fn trilinear_drops_outside_neighbors() {
        let spec = GridSpec::with_edge(4).unwrap();
        let w = trilinear_weights([-0.5, 0.0, 0.0], &spec);
        assert_eq!(w, vec![(0, 0.5)]);
        assert!(trilinear_weights([10.0, 0.0, 0.0], &spec).is_empty());
    }

    fn single_patch_view(depth: f32, feature: Vec<f32>) -> ViewObservation {
        // 1x1 raster, one patch; identity intrinsics put pixel (0,0) on the optical axis.
        let channels = feature.len();
        ViewObservation::new(identity_cam([0.0; 3]), 1, 1, vec![depth], channels, feature, 1).unwrap()
    }

    #[test]
    fn patch_center_singleton_and_empty() {
        let view = single_patch_view(0.25, vec![1.0]);
        assert_eq!(patch_center(&view, 0), Some([0.0, 0.0, 0.25]));
        let empty = single_patch_view(0.0, vec![1.0]);
        assert_eq!(patch_center(&empty, 0), None);
    }

    #[test]
    fn splat_single_patch_on_voxel_center() {
        // Canonical box [-0.5, 0.5] with G = 3 would not be a power of two;
        // use G = 2 where canonical (0.5, -0.5, ...) are voxel centers.
        let spec = GridSpec::with_edge(2).unwrap();
        let cam = CameraParams::new(Matrix3::identity(), Matrix3::identity(), Vector3::new(0.5, 0.5, 0.0)).unwrap();
        // pixel (0,0) at depth 0.5 -> (0 - 0.5, 0 - 0.5, 0.5)
        let view = ViewObservation::new(cam, 1, 1, vec![0.5], 2, vec![2.0, -1.0], 1).unwrap();
        let acc = splat_view(&view, &spec);
        let k = spec.index(0, 0, 1);
        assert_eq!(acc.weight_sum[k], 1.0);
        assert_eq!(acc.weight_sum.iter().sum::<f64>(), 1.0);
        assert_eq!(acc.feature_sum[k], 2.0);
        assert_eq!(acc.feature_sum[8 + k], -1.0);

        let mut twice = acc.clone();
        twice.merge(&acc).unwrap();
        assert_eq!(twice.weight_sum[k], 2.0);
        let g = normalize_view(&twice, FUSION_EPS);
        assert!((g.get(0, k) - 2.0).abs() < 1e-6);
        assert_eq!(g.get(0, 0), 0.0);
        assert_eq!(coverage_mask(&acc).count_set(), 1);
    }

    #[test]
    fn fuse_equal_weights_is_mean() {
        let spec = GridSpec::with_edge(2).unwrap();
        let mut f1 = vec![0.0; 16];
        let mut f2 = vec![0.0; 16];
        f1[0] = 1.0;
        f2[8] = 1.0;
        let mut w = vec![0.0; 8];
        w[0] = 1.0;
        let views = vec![
            (FeatureVolume::new(spec, 2, f1).unwrap(), w.clone()),
            (FeatureVolume::new(spec, 2, f2).unwrap(), w.clone()),
        ];
        let fused = fuse_views(&views, FUSION_EPS).unwrap();
        assert!((fused.get(0, 0) - 0.5).abs() < 1e-7);
        assert!((fused.get(1, 0) - 0.5).abs() < 1e-7);
        assert!(fuse_views(&[], FUSION_EPS).is_err());
    }

    #[test]
    fn filter_and_coverage_extremes() {
        let spec = GridSpec::with_edge(2).unwrap();
        let feat = FeatureVolume::new(spec, 1, (0..8).map(|i| i as f32 + 1.0).collect()).unwrap();
        let w = vec![1.0; 8];
        let inside = TsdfVolume::filled(spec, -1.0).unwrap();
        let (f, fw) = tsdf_filter(&feat, &w, &inside).unwrap();
        assert_eq!(f, feat);
        assert_eq!(fw, w);
        let outside = TsdfVolume::filled(spec, 1.0).unwrap();
        let (f, fw) = tsdf_filter(&feat, &w, &outside).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0) && fw.iter().all(|&v| v == 0.0));
        let wrong = TsdfVolume::filled(GridSpec::with_edge(4).unwrap(), 1.0).unwrap();
        assert!(tsdf_filter(&feat, &w, &wrong).is_err());

        let none = SplatAccumulator::new(spec, 1);
        let inc = incomplete_target(&feat, &coverage_mask(&none)).unwrap();
        assert!(inc.values().iter().all(|&v| v == 0.0));
        let mut all = SplatAccumulator::new(spec, 1);
        all.weight_sum.iter_mut().for_each(|w| *w = 0.3);
        assert_eq!(incomplete_target(&feat, &coverage_mask(&all)).unwrap(), feat);
    }

    #[test]
    fn camera_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let k = CameraParams::pinhole(40.0, 16, 16);
        let cam = CameraParams::look_at(k, [0.0, 0.5, 1.5], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        let depth: Vec<f32> = (0..256).map(|i| (i % 5) as f32 * 0.1).collect();
        let feats: Vec<f32> = (0..3 * 4).map(|i| i as f32).collect();
        let view = ViewObservation::new(cam, 16, 16, depth, 3, feats, 8).unwrap();
        view.save(dir.path(), "view_00").unwrap();
        let back = ViewObservation::load(dir.path(), "view_00").unwrap();
        assert_eq!(back.depth, view.depth);
        assert_eq!(back.patch_features, view.patch_features);
        assert!((back.camera.rotation() - view.camera.rotation()).abs().max() < 1e-15);
        let json: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("view_00.json")).unwrap()).unwrap();
        for key in ["K", "R", "t", "patch_size", "width", "height"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }
}
