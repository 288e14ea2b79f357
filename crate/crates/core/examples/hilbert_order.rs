//! Hilbert ordering of a voxel grid: curve encode/decode, volume
//! serialization and the locality of the traversal.

use semvox::check::locality_gaps;
use semvox::hilbert::{deserialize, hilbert_decode, hilbert_encode, serialize, HilbertOrder};
use semvox::volume::{FeatureVolume, GridSpec};

fn main() -> semvox::Result<()> {
    for h in 0..8 {
        let p = hilbert_decode(h, 1);
        println!("h={h} -> {p:?} -> {}", hilbert_encode(p, 1));
    }

    let spec = GridSpec::with_edge(4)?;
    let order = HilbertOrder::build(4)?;
    let steps: Vec<usize> = (1..order.len())
        .map(|k| {
            let (a, b) = (order.coords_at(k - 1), order.coords_at(k));
            (0..3).map(|i| a[i].abs_diff(b[i])).sum()
        })
        .collect();
    println!("every step moves one voxel: {}", steps.iter().all(|&s| s == 1));

    let vol = FeatureVolume::new(spec, 2, (0..2 * 64).map(|i| i as f32).collect())?;
    let seq = serialize(&vol, &order)?;
    println!("first tokens: {:?} {:?} {:?}", seq.token(0), seq.token(1), seq.token(2));
    assert_eq!(deserialize(&seq, &order, &spec)?, vol);

    for edge in [8, 16, 32] {
        let (hilbert, raster) = locality_gaps(edge)?;
        println!("edge {edge:2}: mean adjacent gap hilbert {hilbert:8.2}  raster {raster:8.2}");
    }
    Ok(())
}
