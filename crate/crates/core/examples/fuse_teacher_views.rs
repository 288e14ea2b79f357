//! Render teacher views of a procedural shape, then splat, filter and fuse
//! their patch features into the voxel grid.

use rand::SeedableRng;
use semvox::fusion::{coverage_mask, fuse_ground_truth, splat_view, FUSION_EPS};
use semvox::synth::{analytic_tsdf, fibonacci_cameras, render_teacher_view, Category, SynthConfig, TeacherOracle};

fn main() -> semvox::Result<()> {
    let cfg = SynthConfig::default();
    let spec = cfg.spec()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let prog = Category::Table.generate(&mut rng);
    let gt = analytic_tsdf(&prog, &spec)?;
    let oracle = TeacherOracle::new(0, cfg.feat_dim)?;

    let views = fibonacci_cameras(cfg.views, &cfg, 0.4)?
        .iter()
        .map(|cam| render_teacher_view(&prog, cam, &oracle, cfg.width, cfg.height, cfg.patch_size))
        .collect::<semvox::Result<Vec<_>>>()?;
    for (k, v) in views.iter().enumerate() {
        let cov = coverage_mask(&splat_view(v, &spec));
        let hits = v.depth.iter().filter(|&&d| d > 0.0).count();
        println!("view {k}: {hits:4} hit pixels, {:4} voxels touched", cov.count_set());
    }

    let (fused, weights) = fuse_ground_truth(&views, &gt, FUSION_EPS)?;
    let inside = gt.values().iter().filter(|&&v| v <= 0.0).count();
    let valid: Vec<usize> = (0..spec.voxel_count()).filter(|&i| weights[i] > 0.0).collect();
    println!("{} of {inside} interior voxels received features", valid.len());

    // each fused feature should sit close to one part embedding
    let mut agree = 0;
    for &v in &valid {
        let f: Vec<f64> = fused.voxel(v).iter().map(|&x| x as f64).collect();
        let label = oracle.nearest_label(&f);
        let p = spec.voxel_center(spec.coords(v)[0], spec.coords(v)[1], spec.coords(v)[2]);
        agree += (label == prog.distance_and_label(p).1) as usize;
    }
    println!(
        "nearest embedding matches the part label at {:.1}% of valid voxels",
        100.0 * agree as f64 / valid.len() as f64
    );
    Ok(())
}
