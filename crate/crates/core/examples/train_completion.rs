//! Train the completion network with and without its feature student and
//! multi-scale branches, and compare held-out IoU with the copy-input
//! baseline.
//!
//! `cargo run --release --example train_completion -- [n] [epochs]`

use semvox::eval::iou;
use semvox::model::{train_completion, train_student, Checkpoint, ModelKind, TrainConfig, TrainingSample};
use semvox::synth::{generate_dataset, SynthConfig};

fn held_out_iou(
    samples: &[TrainingSample],
    mut predict: impl FnMut(&TrainingSample) -> semvox::Result<f64>,
) -> semvox::Result<f64> {
    let held: Vec<&TrainingSample> = samples.iter().filter(|s| s.split.is_held_out()).collect();
    let mut total = 0.0;
    for s in &held {
        total += predict(s)?;
    }
    Ok(total / held.len() as f64)
}

fn main() -> semvox::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let dir = std::env::temp_dir().join(format!("semvox-complete-{n}"));
    let samples = generate_dataset(&dir, n, 0, &SynthConfig::default(), |_, _, _| Ok(()))?.load_all()?;

    let copy = held_out_iou(&samples, |s| iou(&s.partial, &s.gt))?;
    println!("copy-input baseline: {copy:.3}");

    let base = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let (_, student, _) = train_student(&samples, &base, |_| {})?;
    let ck = Checkpoint::from_store(ModelKind::Student, 3.0, &base, &student);

    for (name, use_student, use_multiscale) in [
        ("tsdf", false, false),
        ("tsdf+student", true, false),
        ("full", true, true),
    ] {
        let mut cfg = base.clone();
        cfg.model.use_student = use_student;
        cfg.model.use_multiscale = use_multiscale;
        let (net, store, report) = train_completion(&samples, &cfg, Some(&ck), |_| {})?;
        let score = held_out_iou(&samples, |s| iou(&net.predict(&store, &s.partial)?, &s.gt))?;
        println!(
            "{name:<13} L_tsdf {:.3} -> {:.3}  held-out IoU {score:.3}",
            report.first_loss(),
            report.last_loss()
        );
    }
    Ok(())
}
