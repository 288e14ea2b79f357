//! Reverse-mode gradients against central differences for a small
//! conv-scan-loss pipeline.

use semvox::diff::{check_graph, ConvGeom, Tensor};

fn main() -> semvox::Result<()> {
    let x = Tensor::from_fn(&[1, 4, 4, 4], |i| (i as f64 * 0.29).sin());
    let w = Tensor::from_fn(&[2, 1, 3, 3, 3], |i| 0.1 * (i as f64 * 0.71).cos());
    let b = Tensor::from_fn(&[2], |i| 0.05 * i as f64);
    let report = check_graph(&[x, w, b], 1e-6, 0, |g, v| {
        let y = g.conv3(v[0], v[1], v[2], ConvGeom::new(3, 1, 1))?;
        let y = g.silu(y);
        let y = g.reshape(y, &[2, 64])?;
        let y = g.transpose(y)?;
        let t = g.constant(Tensor::from_fn(&[64, 2], |i| (i % 3) as f64 - 1.0));
        let d = g.sub(y, t)?;
        let l = g.smooth_l1(d, 1.0);
        Ok(g.mean(l))
    })?;
    println!(
        "checked {} coordinates, max relative error {:.2e} (coordinate {})",
        report.checked, report.max_rel_error, report.worst_index
    );
    assert!(report.passes(1e-4));
    Ok(())
}
