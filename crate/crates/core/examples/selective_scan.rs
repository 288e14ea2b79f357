//! The diagonal state-space scan: zero-order-hold discretization, the
//! selective recurrence, and the convolution view of a constant-parameter
//! scan.

use semvox::oracle::ssm_recurrence;
use semvox::ssm::{discretize, scan, scan_forward, LinearMap, ScanInputs, SsmParams};

fn main() -> semvox::Result<()> {
    let (a_bar, b_bar) = discretize(-1.0, 2f64.ln(), 1.0);
    println!("a=-1, delta=ln 2: A_bar={a_bar}, B_bar={b_bar}");

    // constant parameters: y_k = sum_j C A_bar^j B_bar x_{k-j}
    let len = 12;
    let x: Vec<f64> = (0..len).map(|k| ((k * 5) % 7) as f64 - 3.0).collect();
    let (a, dt, b, c) = (-0.7, 0.3, 0.9, 1.3);
    let inputs = ScanInputs {
        len,
        channels: 1,
        state_dim: 1,
        x: &x,
        delta: &vec![dt; len],
        a: &[a],
        b: &vec![b; len],
        c: &vec![c; len],
        d: &[0.0],
    };
    let (y, _) = scan_forward(&inputs, false);
    let (ab, bb) = discretize(a, dt, b);
    let kernel: Vec<f64> = (0..len).map(|j| c * ab.powi(j as i32) * bb).collect();
    let conv: Vec<f64> = (0..len).map(|k| (0..=k).map(|j| kernel[j] * x[k - j]).sum()).collect();
    let worst = y.iter().zip(&conv).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!("scan vs convolution kernel: max diff {worst:.2e}");

    // input-dependent step and projections
    let (ch, n) = (3, 4);
    let mut params = SsmParams::s4d_real(ch, n);
    params.b_proj = LinearMap::new(
        ch,
        n,
        (0..ch * n).map(|i| (i as f64 * 0.7).sin()).collect(),
        vec![0.0; n],
    )?;
    params.c_proj = LinearMap::new(
        ch,
        n,
        (0..ch * n).map(|i| (i as f64 * 1.3).cos()).collect(),
        vec![0.0; n],
    )?;
    let seq: Vec<f64> = (0..20 * ch).map(|i| (i as f64 * 0.37).sin()).collect();
    let out = scan(&params, &seq)?;
    let (delta, bs, cs) = params.selective_inputs(&seq);
    let naive = ssm_recurrence(20, ch, n, &seq, &delta, &params.a_diag, &bs, &cs, &params.skip);
    let worst = out.iter().zip(&naive).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    println!("selective scan vs naive recurrence: max diff {worst:.2e}");
    Ok(())
}
