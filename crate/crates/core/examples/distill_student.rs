//! Distill teacher features into the 3D student and report masked cosine
//! similarity per split.
//!
//! `cargo run --release --example distill_student -- [n] [epochs]`

use semvox::model::{masked_cosine_similarity, train_student, TrainConfig};
use semvox::synth::{generate_dataset, Split, SynthConfig};

fn main() -> semvox::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let dir = std::env::temp_dir().join(format!("semvox-distill-{n}"));
    let samples = generate_dataset(&dir, n, 0, &SynthConfig::default(), |_, _, _| Ok(()))?.load_all()?;

    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let (net, store, report) = train_student(&samples, &cfg, |log| {
        println!("epoch {:2}  L_distill {:.4}  {:?}", log.epoch, log.loss, log.parts)
    })?;
    println!("loss {:.4} -> {:.4}", report.first_loss(), report.last_loss());

    for split in Split::ALL {
        let cos: Vec<f64> = samples
            .iter()
            .filter(|s| s.split == split)
            .filter_map(|s| masked_cosine_similarity(&net.predict(&store, &s.partial).ok()?.0, s))
            .collect();
        if !cos.is_empty() {
            println!(
                "{split}: masked cosine {:.3}",
                cos.iter().sum::<f64>() / cos.len() as f64
            );
        }
    }
    Ok(())
}
