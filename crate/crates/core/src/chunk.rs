//! Folding `R^3` neighborhoods into channels and back.
//!
//! A chunk token at chunk-grid cell `(bx, by, bz)` carries channel
//! `((c * R + lz) * R + ly) * R + lx` taken from voxel
//! `(bx * R + lx, by * R + ly, bz * R + lz)`, original channel `c` slowest.

use crate::error::{Error, Result};
use crate::volume::{FeatureVolume, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkLayout {
    pub edge: usize,
    pub chunk: usize,
    pub chunks_per_axis: usize,
    pub channels: usize,
}

impl ChunkLayout {
    pub fn new(edge: usize, chunk: usize, channels: usize) -> Result<Self> {
        if chunk == 0 || !edge.is_multiple_of(chunk) {
            return Err(Error::InvalidGrid(format!(
                "chunk size {chunk} does not divide edge {edge}"
            )));
        }
        Ok(ChunkLayout {
            edge,
            chunk,
            chunks_per_axis: edge / chunk,
            channels,
        })
    }

    pub fn token_dim(&self) -> usize {
        self.channels * self.chunk.pow(3)
    }

    /// Gather map: `chunked[i] = volume[map[i]]`.
    pub fn chunkify_map(&self) -> Vec<usize> {
        let (g, r, b) = (self.edge, self.chunk, self.chunks_per_axis);
        let n = g * g * g;
        let nb = b * b * b;
        let mut map = vec![0usize; self.token_dim() * nb];
        for c in 0..self.channels {
            for lz in 0..r {
                for ly in 0..r {
                    for lx in 0..r {
                        let oc = ((c * r + lz) * r + ly) * r + lx;
                        for bz in 0..b {
                            for by in 0..b {
                                for bx in 0..b {
                                    let src = c * n + ((bz * r + lz) * g + (by * r + ly)) * g + bx * r + lx;
                                    map[oc * nb + (bz * b + by) * b + bx] = src;
                                }
                            }
                        }
                    }
                }
            }
        }
        map
    }

    /// Inverse gather of [`ChunkLayout::chunkify_map`].
    pub fn unchunkify_map(&self) -> Vec<usize> {
        let forward = self.chunkify_map();
        let mut map = vec![0usize; forward.len()];
        for (i, &src) in forward.iter().enumerate() {
            map[src] = i;
        }
        map
    }

    pub fn chunk_spec(&self, spec: &GridSpec) -> Result<GridSpec> {
        GridSpec::new(self.chunks_per_axis, spec.origin_min, spec.origin_max, spec.truncation)
    }
}

pub fn chunkify(vol: &FeatureVolume, chunk: usize) -> Result<FeatureVolume> {
    let layout = ChunkLayout::new(vol.spec().edge, chunk, vol.channels())?;
    let src = vol.values();
    let data = layout.chunkify_map().into_iter().map(|i| src[i]).collect();
    FeatureVolume::new(layout.chunk_spec(vol.spec())?, layout.token_dim(), data)
}

/// Restores a `channels x (b R)^3` volume from its chunked form; `spec` is
/// the full-resolution grid.
pub fn unchunkify(vol: &FeatureVolume, chunk: usize, channels: usize, spec: &GridSpec) -> Result<FeatureVolume> {
    let layout = ChunkLayout::new(spec.edge, chunk, channels)?;
    if vol.channels() != layout.token_dim() || vol.spec().edge != layout.chunks_per_axis {
        return Err(Error::shape(
            "unchunkify",
            format!(
                "expected {}x{}^3 chunk tokens, found {}x{}^3",
                layout.token_dim(),
                layout.chunks_per_axis,
                vol.channels(),
                vol.spec().edge
            ),
        ));
    }
    let src = vol.values();
    let data = layout.unchunkify_map().into_iter().map(|i| src[i]).collect();
    FeatureVolume::new(*spec, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn chunk_shape_for_two_cubed() {
        let spec = GridSpec::with_edge(4).unwrap();
        let vol = FeatureVolume::new(spec, 1, (0..64).map(|i| i as f32).collect()).unwrap();
        let chunked = chunkify(&vol, 2).unwrap();
        assert_eq!(chunked.shape(), [8, 2, 2, 2]);
        // token (0,0,0) holds the 2x2x2 corner block in (z, y, x) order
        let corner: Vec<f32> = chunked.voxel(0);
        assert_eq!(corner, vec![0.0, 1.0, 4.0, 5.0, 16.0, 17.0, 20.0, 21.0]);
    }

    #[test]
    fn constant_volume_gives_constant_tokens() {
        let spec = GridSpec::with_edge(8).unwrap();
        let vol = FeatureVolume::new(spec, 2, vec![1.25; 2 * 512]).unwrap();
        let chunked = chunkify(&vol, 4).unwrap();
        assert!(chunked.values().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn non_divisible_chunk_is_rejected() {
        let spec = GridSpec::with_edge(8).unwrap();
        let vol = FeatureVolume::zeros(spec, 1).unwrap();
        assert!(chunkify(&vol, 3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn chunk_round_trip_is_exact(channels in 1usize..4, edge_pow in 2u32..=4, r_pow in 0u32..=1, seed in any::<u32>()) {
            let edge = 1usize << edge_pow;
            let chunk = 1usize << (r_pow + 1).min(edge_pow - 1);
            let spec = GridSpec::with_edge(edge).unwrap();
            let n = channels * spec.voxel_count();
            let data: Vec<f32> = (0..n).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 * 1e-9).collect();
            let vol = FeatureVolume::new(spec, channels, data).unwrap();
            let back = unchunkify(&chunkify(&vol, chunk).unwrap(), chunk, channels, &spec).unwrap();
            prop_assert!(back.values().iter().zip(vol.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
