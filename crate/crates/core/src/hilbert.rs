//! 3D Hilbert ordering of a cubic grid (Skilling's transpose transcoding,
//! axis order x, y, z, entry cell at the origin).

use crate::error::{Error, Result};
use crate::volume::{FeatureVolume, GridSpec};

/// Converts Hilbert "transpose" form to axis coordinates in place.
fn transpose_to_axes(x: &mut [u32; 3], bits: u32) {
    let n = x.len();
    let big = 2u32 << (bits - 1);
    // Gray decode
    let t = x[n - 1] >> 1;
    for i in (1..n).rev() {
        x[i] ^= x[i - 1];
    }
    x[0] ^= t;
    // undo excess work
    let mut q = 2u32;
    while q != big {
        let p = q - 1;
        for i in (0..n).rev() {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q <<= 1;
    }
}

/// Inverse of [`transpose_to_axes`].
fn axes_to_transpose(x: &mut [u32; 3], bits: u32) {
    let n = x.len();
    let m = 1u32 << (bits - 1);
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..n {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // Gray encode
    for i in 1..n {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[n - 1] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for v in x.iter_mut() {
        *v ^= t;
    }
}

/// Distributes index bits MSB-first over the three transpose words.
fn index_to_transpose(h: u64, bits: u32) -> [u32; 3] {
    let mut x = [0u32; 3];
    for level in 0..bits {
        for (i, word) in x.iter_mut().enumerate() {
            let shift = (bits - 1 - level) * 3 + (2 - i as u32);
            *word |= (((h >> shift) & 1) as u32) << (bits - 1 - level);
        }
    }
    x
}

fn transpose_to_index(x: &[u32; 3], bits: u32) -> u64 {
    let mut h = 0u64;
    for level in (0..bits).rev() {
        for word in x {
            h = (h << 1) | ((word >> level) & 1) as u64;
        }
    }
    h
}

/// Coordinates `(x, y, z)` of Hilbert index `h` on a `2^bits` cube.
pub fn hilbert_decode(h: u64, bits: u32) -> [u32; 3] {
    let mut x = index_to_transpose(h, bits);
    transpose_to_axes(&mut x, bits);
    x
}

pub fn hilbert_encode(p: [u32; 3], bits: u32) -> u64 {
    let mut x = p;
    axes_to_transpose(&mut x, bits);
    transpose_to_index(&x, bits)
}

/// Precomputed sequence index <-> voxel lookup for one grid edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertOrder {
    edge: usize,
    /// sequence index -> flat voxel index
    forward: Vec<u32>,
    /// flat voxel index -> sequence index
    inverse: Vec<u32>,
}

impl HilbertOrder {
    pub fn build(edge: usize) -> Result<Self> {
        if edge < 2 || !edge.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "Hilbert order needs a power-of-two edge >= 2, got {edge}"
            )));
        }
        let bits = edge.trailing_zeros();
        let n = edge * edge * edge;
        let mut forward = Vec::with_capacity(n);
        let mut inverse = vec![0u32; n];
        for h in 0..n {
            let [x, y, z] = hilbert_decode(h as u64, bits);
            let flat = (z as usize * edge + y as usize) * edge + x as usize;
            forward.push(flat as u32);
            inverse[flat] = h as u32;
        }
        Ok(HilbertOrder { edge, forward, inverse })
    }

    pub fn edge(&self) -> usize {
        self.edge
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// Flat voxel index visited at sequence position `k`.
    #[inline]
    pub fn voxel_at(&self, k: usize) -> usize {
        self.forward[k] as usize
    }

    /// Sequence position of flat voxel index `voxel`.
    #[inline]
    pub fn position_of(&self, voxel: usize) -> usize {
        self.inverse[voxel] as usize
    }

    pub fn coords_at(&self, k: usize) -> [usize; 3] {
        let v = self.voxel_at(k);
        let g = self.edge;
        [v % g, (v / g) % g, v / (g * g)]
    }

    /// Gather map from a `[C, G^3]` channel-major volume to a `[L, C]`
    /// token-major sequence: `seq[i] = vol[map[i]]`.
    pub fn serialize_map(&self, channels: usize) -> Vec<usize> {
        let n = self.len();
        let mut map = Vec::with_capacity(n * channels);
        for k in 0..n {
            let v = self.voxel_at(k);
            for c in 0..channels {
                map.push(c * n + v);
            }
        }
        map
    }

    /// Gather map from a `[L, C]` sequence back to a `[C, G^3]` volume.
    pub fn deserialize_map(&self, channels: usize) -> Vec<usize> {
        let n = self.len();
        let mut map = Vec::with_capacity(n * channels);
        for c in 0..channels {
            for v in 0..n {
                map.push(self.position_of(v) * channels + c);
            }
        }
        map
    }
}

/// Token-major sequence of `len` vectors with `channels` entries each.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub len: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Sequence {
    pub fn token(&self, k: usize) -> &[f32] {
        &self.data[k * self.channels..(k + 1) * self.channels]
    }
}

fn check_edge(op: &'static str, spec: &GridSpec, order: &HilbertOrder) -> Result<()> {
    if spec.edge != order.edge() {
        return Err(Error::shape(
            op,
            format!("volume edge {} vs Hilbert order edge {}", spec.edge, order.edge()),
        ));
    }
    Ok(())
}

pub fn serialize(vol: &FeatureVolume, order: &HilbertOrder) -> Result<Sequence> {
    check_edge("serialize", vol.spec(), order)?;
    let src = vol.values();
    let data = order
        .serialize_map(vol.channels())
        .into_iter()
        .map(|i| src[i])
        .collect();
    Ok(Sequence {
        len: order.len(),
        channels: vol.channels(),
        data,
    })
}

pub fn deserialize(seq: &Sequence, order: &HilbertOrder, spec: &GridSpec) -> Result<FeatureVolume> {
    check_edge("deserialize", spec, order)?;
    if seq.len != order.len() || seq.data.len() != seq.len * seq.channels {
        return Err(Error::shape(
            "deserialize",
            format!("sequence length {} vs {} voxels", seq.len, order.len()),
        ));
    }
    let data = order
        .deserialize_map(seq.channels)
        .into_iter()
        .map(|i| seq.data[i])
        .collect();
    FeatureVolume::new(*spec, seq.channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manhattan(a: [usize; 3], b: [usize; 3]) -> usize {
        (0..3).map(|i| a[i].abs_diff(b[i])).sum()
    }

    #[test]
    fn edge_two_visits_all_cells_adjacently() {
        let order = HilbertOrder::build(2).unwrap();
        let mut seen = [false; 8];
        for k in 0..8 {
            seen[order.voxel_at(k)] = true;
        }
        assert!(seen.iter().all(|&s| s));
        for k in 1..8 {
            assert_eq!(manhattan(order.coords_at(k - 1), order.coords_at(k)), 1);
        }
        assert_eq!(order.coords_at(0), [0, 0, 0]);
    }

    #[test]
    fn encode_inverts_decode() {
        for bits in 1..=5 {
            let n = 1u64 << (3 * bits);
            for h in 0..n {
                assert_eq!(hilbert_encode(hilbert_decode(h, bits), bits), h);
            }
        }
    }

    #[test]
    fn forward_and_inverse_compose_to_identity() {
        let order = HilbertOrder::build(4).unwrap();
        for k in 0..64 {
            assert_eq!(order.position_of(order.voxel_at(k)), k);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(HilbertOrder::build(6).is_err());
        assert!(HilbertOrder::build(1).is_err());
    }

    #[test]
    fn serialize_constant_and_round_trip() {
        let spec = GridSpec::with_edge(4).unwrap();
        let order = HilbertOrder::build(4).unwrap();
        let constant = FeatureVolume::new(spec, 3, vec![0.5; 3 * 64]).unwrap();
        let seq = serialize(&constant, &order).unwrap();
        assert!(seq.data.iter().all(|&v| v == 0.5));

        let vol = FeatureVolume::new(spec, 3, (0..192).map(|i| i as f32 * 0.37 - 5.0).collect()).unwrap();
        let seq = serialize(&vol, &order).unwrap();
        for k in 0..64 {
            assert_eq!(seq.token(k), vol.voxel(order.voxel_at(k)).as_slice());
        }
        assert_eq!(deserialize(&seq, &order, &spec).unwrap(), vol);
        assert!(serialize(&vol, &HilbertOrder::build(8).unwrap()).is_err());
    }
}
