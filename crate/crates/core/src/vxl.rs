//! The `VXL1` volume container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "VXL1"
//! 4       4     kind      u32  (0 = tsdf, 1 = feature, 2 = mask)
//! 8       4     channels  u32
//! 12      4     D         u32
//! 16      4     H         u32
//! 20      4     W         u32
//! 24      4     dtype     u32  (0 = f32)
//! 28      ..    payload   f32, channel-major then D, H, W (W fastest)
//! ```
//!
//! Grid bounds and truncation are not stored; typed reads assume the default
//! canonical box and truncation.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{FeatureVolume, GridSpec, MaskVolume, TsdfVolume};

pub const MAGIC: &[u8; 4] = b"VXL1";
pub const HEADER_LEN: usize = 28;
pub const DTYPE_F32: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Tsdf = 0,
    Feature = 1,
    Mask = 2,
}

impl VolumeKind {
    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(VolumeKind::Tsdf),
            1 => Some(VolumeKind::Feature),
            2 => Some(VolumeKind::Mask),
            _ => None,
        }
    }
}

/// Untyped view of a `VXL1` file; also used for 2D rasters stored with `D = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVolume {
    pub kind: VolumeKind,
    pub channels: u32,
    /// `[D, H, W]`
    pub dims: [u32; 3],
    pub data: Vec<f32>,
}

impl RawVolume {
    pub fn expected_len(&self) -> usize {
        self.channels as usize * self.dims.iter().map(|&d| d as usize).product::<usize>()
    }

    /// 2D raster with `channels x height x width` entries.
    pub fn raster(kind: VolumeKind, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let raw = RawVolume {
            kind,
            channels: channels as u32,
            dims: [1, height as u32, width as u32],
            data,
        };
        if raw.expected_len() != raw.data.len() {
            return Err(Error::InvalidVolume(format!(
                "raster declares {} values but holds {}",
                raw.expected_len(),
                raw.data.len()
            )));
        }
        Ok(raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Tsdf(TsdfVolume),
    Feature(FeatureVolume),
    Mask(MaskVolume),
}

impl From<TsdfVolume> for Volume {
    fn from(v: TsdfVolume) -> Self {
        Volume::Tsdf(v)
    }
}

impl From<FeatureVolume> for Volume {
    fn from(v: FeatureVolume) -> Self {
        Volume::Feature(v)
    }
}

impl From<MaskVolume> for Volume {
    fn from(v: MaskVolume) -> Self {
        Volume::Mask(v)
    }
}

impl Volume {
    pub fn to_raw(&self) -> RawVolume {
        let (kind, channels, edge, data) = match self {
            Volume::Tsdf(v) => (VolumeKind::Tsdf, 1, v.spec().edge, v.values().to_vec()),
            Volume::Feature(v) => (VolumeKind::Feature, v.channels(), v.spec().edge, v.values().to_vec()),
            Volume::Mask(v) => (VolumeKind::Mask, 1, v.spec().edge, v.values().to_vec()),
        };
        let e = edge as u32;
        RawVolume {
            kind,
            channels: channels as u32,
            dims: [e, e, e],
            data,
        }
    }

    pub fn into_tsdf(self) -> Result<TsdfVolume> {
        match self {
            Volume::Tsdf(v) => Ok(v),
            other => Err(Error::InvalidVolume(format!(
                "expected a tsdf volume, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn into_feature(self) -> Result<FeatureVolume> {
        match self {
            Volume::Feature(v) => Ok(v),
            other => Err(Error::InvalidVolume(format!(
                "expected a feature volume, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn into_mask(self) -> Result<MaskVolume> {
        match self {
            Volume::Mask(v) => Ok(v),
            other => Err(Error::InvalidVolume(format!(
                "expected a mask volume, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn kind(&self) -> VolumeKind {
        match self {
            Volume::Tsdf(_) => VolumeKind::Tsdf,
            Volume::Feature(_) => VolumeKind::Feature,
            Volume::Mask(_) => VolumeKind::Mask,
        }
    }
}

pub fn encode(raw: &RawVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + raw.data.len() * 4);
    out.extend_from_slice(MAGIC);
    for field in [
        raw.kind as u32,
        raw.channels,
        raw.dims[0],
        raw.dims[1],
        raw.dims[2],
        DTYPE_F32,
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    for v in &raw.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<RawVolume> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            path: path.into(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
    };
    let kind = VolumeKind::from_code(word(0)).ok_or_else(|| Error::DimensionMismatch {
        path: path.into(),
        detail: format!("unknown kind code {}", word(0)),
    })?;
    let channels = word(1);
    let dims = [word(2), word(3), word(4)];
    let dtype = word(5);
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    if channels == 0 || dims.contains(&0) {
        return Err(Error::DimensionMismatch {
            path: path.into(),
            detail: format!("zero-sized header: channels={channels} dims={dims:?}"),
        });
    }
    let count = (channels as usize)
        .checked_mul(dims.iter().map(|&d| d as usize).product())
        .ok_or_else(|| Error::DimensionMismatch {
            path: path.into(),
            detail: "declared size overflows".into(),
        })?;
    let expected = HEADER_LEN + count * 4;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::DimensionMismatch {
            path: path.into(),
            detail: format!("{} trailing bytes after the declared payload", bytes.len() - expected),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(RawVolume {
        kind,
        channels,
        dims,
        data,
    })
}

pub fn write_raw(path: impl AsRef<Path>, raw: &RawVolume) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(raw)).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_volume(path: impl AsRef<Path>, vol: &Volume) -> Result<()> {
    write_raw(path, &vol.to_raw())
}

/// Converts a cubic raw volume into its typed form.
pub fn typed(raw: RawVolume, path: &Path) -> Result<Volume> {
    let [d, h, w] = raw.dims;
    if d != h || h != w {
        return Err(Error::DimensionMismatch {
            path: path.into(),
            detail: format!("volume is not cubic: {d}x{h}x{w}"),
        });
    }
    let spec = GridSpec::with_edge(d as usize).map_err(|e| Error::DimensionMismatch {
        path: path.into(),
        detail: e.to_string(),
    })?;
    match raw.kind {
        VolumeKind::Tsdf | VolumeKind::Mask if raw.channels != 1 => Err(Error::DimensionMismatch {
            path: path.into(),
            detail: format!(
                "{:?} volume must have one channel, header says {}",
                raw.kind, raw.channels
            ),
        }),
        VolumeKind::Tsdf => Ok(Volume::Tsdf(TsdfVolume::new(spec, raw.data)?)),
        VolumeKind::Mask => Ok(Volume::Mask(MaskVolume::new(spec, raw.data)?)),
        VolumeKind::Feature => Ok(Volume::Feature(FeatureVolume::new(
            spec,
            raw.channels as usize,
            raw.data,
        )?)),
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    typed(read_raw(path)?, path)
}

pub fn write_tsdf(path: impl AsRef<Path>, vol: &TsdfVolume) -> Result<()> {
    write_volume(path, &Volume::Tsdf(vol.clone()))
}

pub fn write_features(path: impl AsRef<Path>, vol: &FeatureVolume) -> Result<()> {
    write_volume(path, &Volume::Feature(vol.clone()))
}

pub fn write_mask(path: impl AsRef<Path>, vol: &MaskVolume) -> Result<()> {
    write_volume(path, &Volume::Mask(vol.clone()))
}

pub fn read_tsdf(path: impl AsRef<Path>) -> Result<TsdfVolume> {
    read_volume(path)?.into_tsdf()
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureVolume> {
    read_volume(path)?.into_feature()
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    read_volume(path)?.into_mask()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn zero_tsdf_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.vxl");
        let vol = TsdfVolume::filled(GridSpec::with_edge(32).unwrap(), 0.0).unwrap();
        write_tsdf(&path, &vol).unwrap();
        assert_eq!(read_tsdf(&path).unwrap(), vol);
        assert_eq!(
            fs::metadata(&path).unwrap().len() as usize,
            HEADER_LEN + 4 * 32 * 32 * 32
        );
    }

    #[test]
    fn header_layout_is_pinned() {
        let raw = RawVolume::raster(VolumeKind::Feature, 2, 1, 1, vec![1.0, -2.0]).unwrap();
        let bytes = encode(&raw);
        assert_eq!(&bytes[..4], b"VXL1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..24], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[24..28], &0u32.to_le_bytes());
        assert_eq!(&bytes[28..32], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[32..36], &(-2.0f32).to_le_bytes());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes =
            encode(&Volume::from(TsdfVolume::filled(GridSpec::with_edge(2).unwrap(), 1.0).unwrap()).to_raw());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes, p()), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn short_payload_is_truncated() {
        let spec16 = GridSpec::with_edge(16).unwrap();
        let mut bytes = encode(&Volume::from(TsdfVolume::filled(spec16, 1.0).unwrap()).to_raw());
        // claim 32^3 while carrying a 16^3 payload
        for i in 0..3 {
            bytes[12 + 4 * i..16 + 4 * i].copy_from_slice(&32u32.to_le_bytes());
        }
        assert!(matches!(decode(&bytes, p()), Err(Error::TruncatedPayload { .. })));
    }

    #[test]
    fn long_payload_and_bad_shapes_are_dimension_errors() {
        let spec = GridSpec::with_edge(2).unwrap();
        let mut bytes = encode(&Volume::from(TsdfVolume::filled(spec, 1.0).unwrap()).to_raw());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(decode(&bytes, p()), Err(Error::DimensionMismatch { .. })));

        let raw = RawVolume::raster(VolumeKind::Tsdf, 1, 2, 4, vec![0.0; 8]).unwrap();
        assert!(matches!(typed(raw, p()), Err(Error::DimensionMismatch { .. })));

        let raw = RawVolume {
            kind: VolumeKind::Mask,
            channels: 2,
            dims: [2, 2, 2],
            data: vec![0.0; 16],
        };
        assert!(matches!(typed(raw, p()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn unknown_dtype_is_rejected() {
        let spec = GridSpec::with_edge(2).unwrap();
        let mut bytes = encode(&Volume::from(TsdfVolume::filled(spec, 1.0).unwrap()).to_raw());
        bytes[24] = 7;
        assert!(matches!(decode(&bytes, p()), Err(Error::UnsupportedDtype(7))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn feature_round_trip_is_bitwise(channels in 1usize..=64, edge_pow in 1u32..=3, seed in any::<u64>()) {
            let spec = GridSpec::with_edge(1 << edge_pow).unwrap();
            let n = channels * spec.voxel_count();
            let mut state = seed | 1;
            let data: Vec<f32> = (0..n).map(|_| {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                f32::from_bits((state as u32) & 0x7f7f_ffff) * if state & (1 << 40) != 0 { -1.0 } else { 1.0 }
            }).collect();
            let vol = Volume::Feature(FeatureVolume::new(spec, channels, data).unwrap());
            let back = typed(decode(&encode(&vol.to_raw()), p()).unwrap(), p()).unwrap();
            let (a, b) = (vol.to_raw().data, back.to_raw().data);
            prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(back.kind(), VolumeKind::Feature);
        }

        #[test]
        fn tsdf_and_mask_round_trip(values in proptest::collection::vec(-3.0f32..=3.0, 64)) {
            let spec = GridSpec::with_edge(4).unwrap();
            let tsdf = Volume::Tsdf(TsdfVolume::new(spec, values.clone()).unwrap());
            prop_assert_eq!(typed(decode(&encode(&tsdf.to_raw()), p()).unwrap(), p()).unwrap(), tsdf);
            let mask = Volume::Mask(MaskVolume::new(spec, values.iter().map(|v| v.abs() / 3.0).collect()).unwrap());
            prop_assert_eq!(typed(decode(&encode(&mask.to_raw()), p()).unwrap(), p()).unwrap(), mask);
        }
    }
}
