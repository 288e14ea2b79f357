//! Completion metrics on two shapes and a shared PCA coloring of their
//! teacher features.

use rand::SeedableRng;
use semvox::eval::{chamfer, iou, l1_error, PcaBasis};
use semvox::synth::{build_sample, Category, SynthConfig, TeacherOracle};

fn main() -> semvox::Result<()> {
    let cfg = SynthConfig::default();
    let oracle = TeacherOracle::new(1, cfg.feat_dim)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let a = build_sample(&Category::Lamp.generate(&mut rng), &oracle, &cfg, 1)?;
    let b = build_sample(&Category::Snowman.generate(&mut rng), &oracle, &cfg, 2)?;

    println!(
        "partial vs gt   iou {:.3}  cd {:.3}  l1 {:.3}",
        iou(&a.partial, &a.gt)?,
        chamfer(&a.partial, &a.gt)?,
        l1_error(&a.partial, &a.gt)?
    );
    println!(
        "lamp vs snowman iou {:.3}  cd {:.3}  l1 {:.3}",
        iou(&a.gt, &b.gt)?,
        chamfer(&a.gt, &b.gt)?,
        l1_error(&a.gt, &b.gt)?
    );

    let basis = PcaBasis::fit(&[(&a.dino_gt, &a.mask), (&b.dino_gt, &b.mask)])?;
    println!("{} principal components", basis.components.len());
    for (name, s) in [("lamp", &a), ("snowman", &b)] {
        let rgb = basis.colorize(&s.dino_gt, &s.mask)?;
        let n = s.mask.count_set() as f64;
        let mean: Vec<f64> = (0..3)
            .map(|c| {
                (0..rgb.spec().voxel_count())
                    .filter(|&v| s.mask.values()[v] > 0.5)
                    .map(|v| rgb.get(c, v) as f64)
                    .sum::<f64>()
                    / n
            })
            .collect();
        println!("{name}: mean color {mean:.3?} over {n} voxels");
    }
    Ok(())
}
