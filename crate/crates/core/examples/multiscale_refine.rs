//! Chunk a volume into coarse tokens and run the three-branch multi-scale
//! refinement operator.

use semvox::chunk::{chunkify, unchunkify};
use semvox::ssm::{multiscale_refine, ChunkBranchParams, LinearMap, MultiScaleParams, SsmParams, VoxelStateParams};
use semvox::volume::{FeatureVolume, GridSpec};

fn state(ch: usize, n: usize) -> VoxelStateParams {
    let mut s = SsmParams::s4d_real(ch, n);
    s.b_proj = LinearMap::new(
        ch,
        n,
        (0..ch * n).map(|i| 0.3 * (i as f64).sin()).collect(),
        vec![0.0; n],
    )
    .unwrap();
    s.c_proj = LinearMap::new(
        ch,
        n,
        (0..ch * n).map(|i| 0.3 * (i as f64).cos()).collect(),
        vec![0.0; n],
    )
    .unwrap();
    VoxelStateParams::identity_norm(s)
}

fn branch(chunk: usize, channels: usize, token: usize) -> ChunkBranchParams {
    let td = channels * chunk.pow(3);
    ChunkBranchParams {
        chunk,
        embed: LinearMap::new(
            td,
            token,
            (0..td * token).map(|i| 0.05 * ((i % 11) as f64 - 5.0)).collect(),
            vec![0.0; token],
        )
        .unwrap(),
        state: state(token, 4),
        unembed: LinearMap::new(
            token,
            td,
            (0..td * token).map(|i| 0.05 * ((i % 7) as f64 - 3.0)).collect(),
            vec![0.0; td],
        )
        .unwrap(),
    }
}

fn main() -> semvox::Result<()> {
    let spec = GridSpec::with_edge(8)?;
    let ch = 2;
    let f = FeatureVolume::new(
        spec,
        ch,
        (0..ch * 512).map(|i| ((i * 31) % 17) as f32 / 8.0 - 1.0).collect(),
    )?;

    let coarse = chunkify(&f, 2)?;
    println!("chunkify r=2: {:?} -> {:?}", f.shape(), coarse.shape());
    assert_eq!(unchunkify(&coarse, 2, ch, &spec)?, f);

    let params = MultiScaleParams {
        full: state(ch, 4),
        chunk_a: branch(2, ch, 6),
        chunk_b: branch(4, ch, 6),
    };
    let out = multiscale_refine(&f, &params)?;
    let change: f64 = out
        .values()
        .iter()
        .zip(f.values())
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / f.values().len() as f64;
    println!("mean |refined - input| = {change:.4}");
    Ok(())
}
