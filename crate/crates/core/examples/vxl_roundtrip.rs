//! Write a TSDF, a feature volume and a mask to VXL1 files and read them back.

use semvox::volume::{FeatureVolume, GridSpec, MaskVolume, TsdfVolume};
use semvox::vxl;

fn main() -> semvox::Result<()> {
    let spec = GridSpec::with_edge(8)?;
    let dir = std::env::temp_dir().join("semvox-vxl-example");
    std::fs::create_dir_all(&dir).map_err(|e| semvox::Error::Io {
        path: dir.clone(),
        source: e,
    })?;

    // a ball of radius 2.5 voxels around the grid center
    let tsdf = TsdfVolume::from_clamped(
        spec,
        (0..spec.voxel_count())
            .map(|i| {
                let [x, y, z] = spec.coords(i).map(|c| c as f32 - 3.5);
                (x * x + y * y + z * z).sqrt() - 2.5
            })
            .collect(),
    )?;
    let feats = FeatureVolume::new(spec, 2, (0..2 * spec.voxel_count()).map(|i| i as f32 * 0.01).collect())?;
    let mask = MaskVolume::from_bools(spec, tsdf.values().iter().map(|&v| v <= 0.0))?;

    vxl::write_tsdf(dir.join("ball.vxl"), &tsdf)?;
    vxl::write_features(dir.join("feats.vxl"), &feats)?;
    vxl::write_mask(dir.join("mask.vxl"), &mask)?;

    assert_eq!(vxl::read_tsdf(dir.join("ball.vxl"))?, tsdf);
    assert_eq!(vxl::read_features(dir.join("feats.vxl"))?, feats);
    let back = vxl::read_mask(dir.join("mask.vxl"))?;
    println!("occupied voxels: {} of {}", back.count_set(), spec.voxel_count());

    let bytes = std::fs::read(dir.join("ball.vxl")).expect("just written");
    println!("header {:?}, {} bytes total", &bytes[..4], bytes.len());
    // a mangled header is rejected with a typed error
    let mut bad = bytes.clone();
    bad[0] = b'X';
    match vxl::decode(&bad, &dir.join("bad.vxl")) {
        Err(e) => println!("corrupt file -> {} ({})", e, e.kind()),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
