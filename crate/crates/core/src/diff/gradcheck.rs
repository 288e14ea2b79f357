use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |ad - fd| / (|ad| + |fd| + 1e-12)` over checked coordinates.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Evenly spaced coordinate subset, all coordinates when `max` covers them.
pub fn sample_coords(n: usize, max: usize) -> Vec<usize> {
    if max == 0 || n <= max {
        return (0..n).collect();
    }
    (0..max).map(|i| i * n / max).collect()
}

/// Compares `analytic` against central differences of `f` at `theta`.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    analytic: &[f64],
    theta: &[f64],
    h: f64,
    coords: &[usize],
) -> GradCheckReport {
    let mut x = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    for &i in coords {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let ad = analytic[i];
        let rel = (ad - fd).abs() / (ad.abs() + fd.abs() + 1e-12);
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    report
}

/// Gradient check of a graph-built scalar function of several tensors.
/// `build` receives one variable per input and must return a scalar.
pub fn check_graph(
    inputs: &[Tensor],
    h: f64,
    max_coords: usize,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let mut analytic = Vec::new();
    for (v, t) in vars.iter().zip(inputs) {
        match g.grad(*v) {
            Some(gr) => analytic.extend_from_slice(gr.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, t.len())),
        }
    }
    let theta: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let eval = |x: &[f64]| {
        let mut g = Graph::new();
        let mut offset = 0;
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| {
                let part = x[offset..offset + t.len()].to_vec();
                offset += t.len();
                g.constant(Tensor::new(t.shape(), part).expect("same shape"))
            })
            .collect();
        match build(&mut g, &vars) {
            Ok(l) => g.value(l).item(),
            Err(_) => f64::NAN,
        }
    };
    Ok(grad_check(
        eval,
        &analytic,
        &theta,
        h,
        &sample_coords(theta.len(), max_coords),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let theta = [0.3, -1.2, 2.0];
        let grad: Vec<f64> = theta.iter().map(|x| 2.0 * x * 1.5).collect();
        let r = grad_check(
            |x| x.iter().map(|v| 1.5 * v * v).sum(),
            &grad,
            &theta,
            DEFAULT_STEP,
            &[0, 1, 2],
        );
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn sigmoid_chain() {
        let x = Tensor::from_fn(&[5], |i| i as f64 * 0.4 - 1.0);
        let r = check_graph(&[x], DEFAULT_STEP, 0, |g, v| {
            let a = g.sigmoid(v[0]);
            let b = g.sigmoid(a);
            let c = g.mul(b, a)?;
            Ok(g.sum(c))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
