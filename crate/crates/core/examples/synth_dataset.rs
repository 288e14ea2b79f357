//! Generate a small procedural dataset and inspect one sample.
//!
//! `cargo run --release --example synth_dataset -- <out-dir> [n] [seed]`

use semvox::eval::iou;
use semvox::synth::{generate_dataset, Manifest, Split, SynthConfig};

fn main() -> semvox::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("semvox-synth"));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(12);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    generate_dataset(&out, n, seed, &SynthConfig::default(), |i, e, rec| {
        println!("{i:3} {:<16} {:<10} scanner view {}", e.id, e.split, rec.scan_view);
        Ok(())
    })?;

    let manifest = Manifest::load(&out)?;
    for split in Split::ALL {
        println!("{split}: {} samples", manifest.split(split).count());
    }
    let s = manifest.load_sample(&manifest.entries[0], true)?;
    let occupied = |v: &[f32]| v.iter().filter(|&&x| x <= 0.0).count();
    println!(
        "{}: {} occupied gt voxels, {} in the partial scan, copy-input IoU {:.3}, {} teacher-valid voxels",
        s.id,
        occupied(s.gt.values()),
        occupied(s.partial.values()),
        iou(&s.partial, &s.gt)?,
        s.support.len()
    );
    Ok(())
}
