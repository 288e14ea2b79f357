//! Dense cubic voxel grids.
//!
//! Voxel `(x, y, z)` lives at flat index `(z * G + y) * G + x`: depth is the
//! slowest axis and width the fastest. Feature volumes are channel-major on top
//! of that layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CANONICAL_MIN: f64 = -0.5;
pub const DEFAULT_CANONICAL_MAX: f64 = 0.5;
pub const DEFAULT_TRUNCATION: f64 = 3.0;
pub const DEFAULT_EDGE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub edge: usize,
    pub origin_min: [f64; 3],
    pub origin_max: [f64; 3],
    /// In voxel units.
    pub truncation: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::with_edge(DEFAULT_EDGE).expect("default edge is valid")
    }
}

impl GridSpec {
    pub fn new(edge: usize, origin_min: [f64; 3], origin_max: [f64; 3], truncation: f64) -> Result<Self> {
        let spec = GridSpec {
            edge,
            origin_min,
            origin_max,
            truncation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid over the default canonical box `[-0.5, 0.5]^3` with truncation 3.
    pub fn with_edge(edge: usize) -> Result<Self> {
        GridSpec::new(
            edge,
            [DEFAULT_CANONICAL_MIN; 3],
            [DEFAULT_CANONICAL_MAX; 3],
            DEFAULT_TRUNCATION,
        )
    }

    pub fn with_truncation(mut self, truncation: f64) -> Result<Self> {
        self.truncation = truncation;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.edge < 2 || !self.edge.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "edge must be a power of two >= 2, got {}",
                self.edge
            )));
        }
        for axis in 0..3 {
            if !(self.origin_min[axis] < self.origin_max[axis]) {
                return Err(Error::InvalidGrid(format!(
                    "origin_min[{axis}] = {} is not below origin_max[{axis}] = {}",
                    self.origin_min[axis], self.origin_max[axis]
                )));
            }
        }
        if !(self.truncation > 0.0) || !self.truncation.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "truncation must be positive, got {}",
                self.truncation
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn voxel_count(&self) -> usize {
        self.edge * self.edge * self.edge
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.edge + y) * self.edge + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let g = self.edge;
        [index % g, (index / g) % g, index / (g * g)]
    }

    /// Canonical units per voxel step along `axis`.
    pub fn voxel_size(&self, axis: usize) -> f64 {
        (self.origin_max[axis] - self.origin_min[axis]) / (self.edge - 1) as f64
    }

    /// Maps a canonical point to continuous grid coordinates; the box corners
    /// land on voxel centers `0` and `G - 1`.
    pub fn canonical_to_grid(&self, p: [f64; 3]) -> [f64; 3] {
        let scale = (self.edge - 1) as f64;
        std::array::from_fn(|a| scale * (p[a] - self.origin_min[a]) / (self.origin_max[a] - self.origin_min[a]))
    }

    pub fn grid_to_canonical(&self, q: [f64; 3]) -> [f64; 3] {
        let scale = (self.edge - 1) as f64;
        std::array::from_fn(|a| self.origin_min[a] + q[a] * (self.origin_max[a] - self.origin_min[a]) / scale)
    }

    /// Canonical position of the center of voxel `(x, y, z)`.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        self.grid_to_canonical([x as f64, y as f64, z as f64])
    }
}

/// Free-function form of [`GridSpec::canonical_to_grid`].
pub fn canonical_to_grid(p: [f64; 3], spec: &GridSpec) -> [f64; 3] {
    spec.canonical_to_grid(p)
}

fn check_len(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::InvalidVolume(format!(
            "{what}: expected {expected} values, found {found}"
        )));
    }
    Ok(())
}

/// Truncated signed distance field in voxel units.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    spec: GridSpec,
    values: Vec<f32>,
}

impl TsdfVolume {
    pub fn new(spec: GridSpec, values: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        check_len("tsdf", spec.voxel_count(), values.len())?;
        let t = spec.truncation as f32;
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.abs() <= t)) {
            return Err(Error::InvalidVolume(format!(
                "tsdf value {v} at voxel {i} outside [-{t}, {t}]"
            )));
        }
        Ok(TsdfVolume { spec, values })
    }

    /// Builds a volume, clamping every value into the truncation band.
    pub fn from_clamped(spec: GridSpec, mut values: Vec<f32>) -> Result<Self> {
        let t = spec.truncation as f32;
        for v in values.iter_mut() {
            if v.is_nan() {
                return Err(Error::NonFinite("tsdf value is NaN".into()));
            }
            *v = v.clamp(-t, t);
        }
        TsdfVolume::new(spec, values)
    }

    pub fn filled(spec: GridSpec, value: f32) -> Result<Self> {
        TsdfVolume::new(spec, vec![value; spec.voxel_count()])
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.spec.index(x, y, z)]
    }

    pub fn same_grid(&self, other: &TsdfVolume) -> bool {
        self.spec.edge == other.spec.edge
    }
}

/// Per-voxel feature vectors, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    spec: GridSpec,
    channels: usize,
    values: Vec<f32>,
}

impl FeatureVolume {
    pub fn new(spec: GridSpec, channels: usize, values: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        if channels == 0 {
            return Err(Error::InvalidVolume("feature volume needs at least one channel".into()));
        }
        check_len("features", channels * spec.voxel_count(), values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature volume contains non-finite entries".into()));
        }
        Ok(FeatureVolume { spec, channels, values })
    }

    pub fn zeros(spec: GridSpec, channels: usize) -> Result<Self> {
        FeatureVolume::new(spec, channels, vec![0.0; channels * spec.voxel_count()])
    }

    pub fn from_f64(spec: GridSpec, channels: usize, values: &[f64]) -> Result<Self> {
        FeatureVolume::new(spec, channels, values.iter().map(|&v| v as f32).collect())
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn get(&self, channel: usize, voxel: usize) -> f32 {
        self.values[channel * self.spec.voxel_count() + voxel]
    }

    /// Feature vector of one voxel.
    pub fn voxel(&self, voxel: usize) -> Vec<f32> {
        let n = self.spec.voxel_count();
        (0..self.channels).map(|c| self.values[c * n + voxel]).collect()
    }

    pub fn shape(&self) -> [usize; 4] {
        let g = self.spec.edge;
        [self.channels, g, g, g]
    }
}

/// Scalar field in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    spec: GridSpec,
    values: Vec<f32>,
}

impl MaskVolume {
    pub fn new(spec: GridSpec, values: Vec<f32>) -> Result<Self> {
        spec.validate()?;
        check_len("mask", spec.voxel_count(), values.len())?;
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidVolume(format!("mask entry {v} outside [0, 1]")));
        }
        Ok(MaskVolume { spec, values })
    }

    pub fn from_bools(spec: GridSpec, bits: impl IntoIterator<Item = bool>) -> Result<Self> {
        MaskVolume::new(spec, bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect())
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_set(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.5).count()
    }
}

/// Occupancy: 1 exactly where the signed distance is `<= 0`.
pub fn occupancy(vol: &TsdfVolume) -> MaskVolume {
    MaskVolume {
        spec: vol.spec,
        values: vol.values.iter().map(|&v| if v <= 0.0 { 1.0 } else { 0.0 }).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_edges() {
        assert!(GridSpec::with_edge(0).is_err());
        assert!(GridSpec::with_edge(1).is_err());
        assert!(GridSpec::with_edge(12).is_err());
        assert!(GridSpec::with_edge(2).is_ok());
        assert!(GridSpec::new(4, [0.0; 3], [0.0, 1.0, 1.0], 3.0).is_err());
        assert!(GridSpec::with_edge(4).unwrap().with_truncation(0.0).is_err());
    }

    #[test]
    fn occupancy_extremes() {
        let spec = GridSpec::with_edge(4).unwrap();
        let free = TsdfVolume::filled(spec, 3.0).unwrap();
        assert_eq!(occupancy(&free).count_set(), 0);
        let full = TsdfVolume::filled(spec, -3.0).unwrap();
        assert_eq!(occupancy(&full).count_set(), 64);
    }

    #[test]
    fn occupancy_boundary_is_inclusive() {
        let spec = GridSpec::with_edge(4).unwrap();
        let mut values = vec![3.0; 64];
        let k = spec.index(1, 2, 3);
        values[k] = 0.0;
        let mask = occupancy(&TsdfVolume::new(spec, values).unwrap());
        assert_eq!(mask.count_set(), 1);
        assert_eq!(mask.values()[k], 1.0);
        assert!(mask.is_binary());
    }

    #[test]
    fn canonical_corners_and_center() {
        let spec = GridSpec::with_edge(32).unwrap();
        assert_eq!(canonical_to_grid([-0.5; 3], &spec), [0.0; 3]);
        assert_eq!(canonical_to_grid([0.5; 3], &spec), [31.0; 3]);
        assert_eq!(canonical_to_grid([0.0; 3], &spec), [15.5; 3]);
    }

    #[test]
    fn tsdf_rejects_out_of_band_values() {
        let spec = GridSpec::with_edge(2).unwrap();
        assert!(TsdfVolume::new(spec, vec![3.5; 8]).is_err());
        assert!(TsdfVolume::new(spec, vec![0.0; 7]).is_err());
        let clamped = TsdfVolume::from_clamped(spec, vec![-10.0; 8]).unwrap();
        assert!(clamped.values().iter().all(|&v| v == -3.0));
    }

    #[test]
    fn mask_rejects_out_of_range() {
        let spec = GridSpec::with_edge(2).unwrap();
        assert!(MaskVolume::new(spec, vec![1.5; 8]).is_err());
        assert!(MaskVolume::new(spec, vec![0.25; 8]).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn occupancy_partitions_by_sign(values in proptest::collection::vec(-3.0f32..=3.0, 64)) {
                let spec = GridSpec::with_edge(4).unwrap();
                let vol = TsdfVolume::new(spec, values.clone()).unwrap();
                let mask = occupancy(&vol);
                for (v, m) in values.iter().zip(mask.values()) {
                    prop_assert_eq!(*m == 1.0, *v <= 0.0);
                }
            }

            #[test]
            fn canonical_mapping_round_trips(p in proptest::array::uniform3(-2.0f64..2.0), lo in -1.0f64..0.0, width in 0.1f64..3.0) {
                let spec = GridSpec::new(16, [lo; 3], [lo + width; 3], 3.0).unwrap();
                let back = spec.grid_to_canonical(spec.canonical_to_grid(p));
                for a in 0..3 {
                    prop_assert!((back[a] - p[a]).abs() < 1e-12);
                }
            }

            #[test]
            fn canonical_mapping_is_monotone(a in -1.0f64..1.0, d in 1e-6f64..1.0) {
                let spec = GridSpec::with_edge(32).unwrap();
                let lo = spec.canonical_to_grid([a; 3]);
                let hi = spec.canonical_to_grid([a + d; 3]);
                for axis in 0..3 {
                    prop_assert!(hi[axis] > lo[axis]);
                }
            }
        }
    }
}
