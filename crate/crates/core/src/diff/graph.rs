use std::rc::Rc;

use super::tensor::{gemm, same_shape, Tensor};
use crate::error::{Error, Result};
use crate::ssm::{self, ScanInputs};

pub const BCE_CLAMP: f64 = 1e-7;
pub const COSINE_NORM_FLOOR: f64 = 1e-8;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a 3-D convolution or its transpose over `[C, D, H, W]` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeom { kernel, stride, pad }
    }

    fn conv_out(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.pad;
        (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }

    fn transpose_out(&self, n: usize) -> Option<usize> {
        ((n - 1) * self.stride + self.kernel)
            .checked_sub(2 * self.pad)
            .filter(|&v| v > 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Sigmoid,
    Softplus,
    Exp,
    Abs,
    Tanh,
    Silu,
    SmoothL1(f64),
    Scale(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Unary(Unary, Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Gather(Var, Rc<[usize]>),
    Concat(Vec<Var>),
    MulChannels(Var, Var),
    Linear(Var, Var, Var),
    Conv3 {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    ConvT3 {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    AvgPool3(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        means: Vec<f64>,
        rstds: Vec<f64>,
    },
    Scan {
        x: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d: Var,
        states: Option<Vec<f64>>,
    },
    MaskedCosine(Var, Var, Rc<[usize]>),
    MaskedMse(Var, Var, Rc<[usize]>),
    Bce(Var, Rc<[f64]>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of tensor operations supporting one reverse sweep.
///
/// Nodes are appended in evaluation order, so creation order is a
/// topological order and `backward` simply walks the tape in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn unary_forward(op: Unary, x: f64) -> f64 {
    match op {
        Unary::Sigmoid => ssm::sigmoid(x),
        Unary::Softplus => ssm::softplus(x),
        Unary::Exp => x.exp(),
        Unary::Abs => x.abs(),
        Unary::Tanh => x.tanh(),
        Unary::Silu => x * ssm::sigmoid(x),
        Unary::SmoothL1(beta) => {
            let a = x.abs();
            if a < beta {
                0.5 * a * a / beta
            } else {
                a - 0.5 * beta
            }
        }
        Unary::Scale(s) => s * x,
    }
}

fn unary_derivative(op: Unary, x: f64, y: f64) -> f64 {
    match op {
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Softplus => ssm::sigmoid(x),
        Unary::Exp => y,
        Unary::Abs => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Unary::Tanh => 1.0 - y * y,
        Unary::Silu => {
            let s = ssm::sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        }
        Unary::SmoothL1(beta) => {
            if x.abs() < beta {
                x / beta
            } else {
                x.signum()
            }
        }
        Unary::Scale(s) => s,
    }
}

/// Unfolds `[cin, in^3]` into `[cin * k^3, out^3]` patches.
fn im2col(x: &[f64], cin: usize, inp: [usize; 3], out: [usize; 3], g: ConvGeom) -> Vec<f64> {
    let k = g.kernel;
    let p_out = out[0] * out[1] * out[2];
    let mut cols = vec![0.0; cin * k * k * k * p_out];
    let mut row = 0;
    for ci in 0..cin {
        let xc = &x[ci * inp[0] * inp[1] * inp[2]..];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[row * p_out..(row + 1) * p_out];
                    row += 1;
                    for oz in 0..out[0] {
                        let iz = (oz * g.stride + kz) as isize - g.pad as isize;
                        if iz < 0 || iz >= inp[0] as isize {
                            continue;
                        }
                        for oy in 0..out[1] {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= inp[1] as isize {
                                continue;
                            }
                            let src = (iz as usize * inp[1] + iy as usize) * inp[2];
                            let base = (oz * out[1] + oy) * out[2];
                            for ox in 0..out[2] {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix >= 0 && (ix as usize) < inp[2] {
                                    dst[base + ox] = xc[src + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patches back onto `[cin, in^3]`.
fn col2im(cols: &[f64], cin: usize, inp: [usize; 3], out: [usize; 3], g: ConvGeom) -> Vec<f64> {
    let k = g.kernel;
    let p_out = out[0] * out[1] * out[2];
    let vol = inp[0] * inp[1] * inp[2];
    let mut x = vec![0.0; cin * vol];
    let mut row = 0;
    for ci in 0..cin {
        let xc = &mut x[ci * vol..(ci + 1) * vol];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[row * p_out..(row + 1) * p_out];
                    row += 1;
                    for oz in 0..out[0] {
                        let iz = (oz * g.stride + kz) as isize - g.pad as isize;
                        if iz < 0 || iz >= inp[0] as isize {
                            continue;
                        }
                        for oy in 0..out[1] {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= inp[1] as isize {
                                continue;
                            }
                            let dst = (iz as usize * inp[1] + iy as usize) * inp[2];
                            let base = (oz * out[1] + oy) * out[2];
                            for ox in 0..out[2] {
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if ix >= 0 && (ix as usize) < inp[2] {
                                    xc[dst + ix as usize] += src[base + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn spatial(shape: &[usize], op: &'static str) -> Result<(usize, [usize; 3])> {
    if shape.len() != 4 {
        return Err(Error::shape(op, format!("expected [C, D, H, W], got {shape:?}")));
    }
    Ok((shape[0], [shape[1], shape[2], shape[3]]))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`], if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn binary(&self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(op, self.shape(a), self.shape(b))?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |p, q| p + q)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |p, q| p - q)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |p, q| p * q)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    fn unary(&mut self, op: Unary, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::from_fn(v.shape(), |i| unary_forward(op, v.data()[i]));
        self.push(t, Op::Unary(op, x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Unary::Softplus, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(Unary::Abs, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(Unary::Silu, x)
    }

    /// Elementwise Huber-style smooth L1 with transition `beta`.
    pub fn smooth_l1(&mut self, x: Var, beta: f64) -> Var {
        self.unary(Unary::SmoothL1(beta), x)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(Unary::Scale(s), x)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// `out[i] = x[index[i]]`, reshaped to `shape`. Covers transposes,
    /// serialization and chunk rearrangements.
    pub fn gather(&mut self, x: Var, index: Rc<[usize]>, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= v.len()) {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of range for {} values", v.len()),
            ));
        }
        let data: Vec<f64> = index.iter().map(|&i| v.data()[i]).collect();
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Gather(x, index), &[x]))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let index: Rc<[usize]> = (0..r * c).map(|i| (i % r) * c + i / r).collect();
        self.gather(x, index, &[c, r])
    }

    /// Concatenation along axis 0.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() {
                return Err(Error::shape("concat", "scalar input"));
            }
            same_shape("concat", &s[1..], &tail)?;
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let t = Tensor::new(&shape, data)?;
        Ok(self.push(t, Op::Concat(parts.to_vec()), parts))
    }

    /// `x[c, s] * m[s]` for `x` of shape `[C, ...]` and `m` of shape `[...]`
    /// or `[1, ...]`.
    pub fn mul_channels(&mut self, x: Var, m: Var) -> Result<Var> {
        let (xv, mv) = (self.value(x), self.value(m));
        let xs = xv.shape();
        let ms = mv.shape();
        let tail = &xs[1.min(xs.len())..];
        let m_tail = if ms.len() == xs.len() && ms.first() == Some(&1) {
            &ms[1..]
        } else {
            ms
        };
        same_shape("mul_channels", m_tail, tail)?;
        let s = mv.len();
        let t = Tensor::from_fn(xs, |i| xv.data()[i] * mv.data()[i % s]);
        Ok(self.push(t, Op::MulChannels(x, m), &[x, m]))
    }

    /// `x [rows, in] -> [rows, out]` with `w [out, in]` and `b [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(Error::shape("linear", format!("x {xs:?}, weight {ws:?}, bias {bs:?}")));
        }
        let (rows, inp, out) = (xs[0], xs[1], ws[0]);
        if ws[1] != inp {
            return Err(Error::shape(
                "linear",
                format!("axis 1: input width {inp} vs weight {}", ws[1]),
            ));
        }
        if bs[0] != out {
            return Err(Error::shape(
                "linear",
                format!("axis 0: bias {} vs weight rows {out}", bs[0]),
            ));
        }
        let mut y = Vec::with_capacity(rows * out);
        for _ in 0..rows {
            y.extend_from_slice(self.value(b).data());
        }
        gemm(
            rows,
            inp,
            out,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut y,
            1.0,
        );
        let t = Tensor::new(&[rows, out], y)?;
        Ok(self.push(t, Op::Linear(x, w, b), &[x, w, b]))
    }

    /// Cross-correlation of `x [Cin, D, H, W]` with `w [Cout, Cin, k, k, k]`
    /// plus `b [Cout]`.
    pub fn conv3(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let (cin, inp) = spatial(self.shape(x), "conv3")?;
        let ws = self.shape(w).to_vec();
        let k = geom.kernel;
        if ws.len() != 5 || ws[1] != cin || ws[2..] != [k, k, k] {
            return Err(Error::shape(
                "conv3",
                format!("kernel {ws:?} for {cin} input channels and size {k}"),
            ));
        }
        let cout = ws[0];
        if self.shape(b) != [cout] {
            return Err(Error::shape(
                "conv3",
                format!("bias {:?} for {cout} outputs", self.shape(b)),
            ));
        }
        let mut out = [0; 3];
        for (axis, o) in out.iter_mut().enumerate() {
            *o = geom
                .conv_out(inp[axis])
                .ok_or_else(|| Error::shape("conv3", format!("axis {}: size {} too small", axis + 1, inp[axis])))?;
        }
        let p = out[0] * out[1] * out[2];
        let cols = im2col(self.value(x).data(), cin, inp, out, geom);
        let mut y = Vec::with_capacity(cout * p);
        for &bv in self.value(b).data() {
            y.extend(std::iter::repeat_n(bv, p));
        }
        gemm(
            cout,
            cin * k * k * k,
            p,
            self.value(w).data(),
            false,
            &cols,
            false,
            &mut y,
            1.0,
        );
        let t = Tensor::new(&[cout, out[0], out[1], out[2]], y)?;
        Ok(self.push(t, Op::Conv3 { x, w, b, geom }, &[x, w, b]))
    }

    /// Transposed convolution with weight layout `[Cin, Cout, k, k, k]`.
    pub fn conv_transpose3(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let (cin, inp) = spatial(self.shape(x), "conv_transpose3")?;
        let ws = self.shape(w).to_vec();
        let k = geom.kernel;
        if ws.len() != 5 || ws[0] != cin || ws[2..] != [k, k, k] {
            return Err(Error::shape(
                "conv_transpose3",
                format!("kernel {ws:?} for {cin} input channels and size {k}"),
            ));
        }
        let cout = ws[1];
        if self.shape(b) != [cout] {
            return Err(Error::shape(
                "conv_transpose3",
                format!("bias {:?} for {cout} outputs", self.shape(b)),
            ));
        }
        let mut out = [0; 3];
        for (axis, o) in out.iter_mut().enumerate() {
            *o = geom
                .transpose_out(inp[axis])
                .ok_or_else(|| Error::shape("conv_transpose3", format!("axis {}: empty output", axis + 1)))?;
        }
        let pin = inp[0] * inp[1] * inp[2];
        let kk = cout * k * k * k;
        let mut cols = vec![0.0; kk * pin];
        gemm(
            kk,
            cin,
            pin,
            self.value(w).data(),
            true,
            self.value(x).data(),
            false,
            &mut cols,
            0.0,
        );
        let mut y = col2im(&cols, cout, out, inp, geom);
        let p = out[0] * out[1] * out[2];
        for (c, &bv) in self.value(b).data().iter().enumerate() {
            y[c * p..(c + 1) * p].iter_mut().for_each(|v| *v += bv);
        }
        let t = Tensor::new(&[cout, out[0], out[1], out[2]], y)?;
        Ok(self.push(t, Op::ConvT3 { x, w, b, geom }, &[x, w, b]))
    }

    /// Non-overlapping average pooling with window `k` on `[C, D, H, W]`.
    pub fn avg_pool3(&mut self, x: Var, k: usize) -> Result<Var> {
        let (c, inp) = spatial(self.shape(x), "avg_pool3")?;
        if k == 0 || inp.iter().any(|&n| n % k != 0) {
            return Err(Error::shape("avg_pool3", format!("window {k} does not divide {inp:?}")));
        }
        let out = [inp[0] / k, inp[1] / k, inp[2] / k];
        let xv = self.value(x).data();
        let mut y = vec![0.0; c * out[0] * out[1] * out[2]];
        let norm = 1.0 / (k * k * k) as f64;
        for (i, v) in xv.iter().enumerate() {
            let (ch, rest) = (i / (inp[0] * inp[1] * inp[2]), i % (inp[0] * inp[1] * inp[2]));
            let (z, y_, x_) = (rest / (inp[1] * inp[2]), (rest / inp[2]) % inp[1], rest % inp[2]);
            y[((ch * out[0] + z / k) * out[1] + y_ / k) * out[2] + x_ / k] += v * norm;
        }
        let t = Tensor::new(&[c, out[0], out[1], out[2]], y)?;
        Ok(self.push(t, Op::AvgPool3(x, k), &[x]))
    }

    /// Layer normalization over the last axis of a `[rows, C]` matrix.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(Error::shape("layer_norm", format!("expected [rows, C], got {xs:?}")));
        }
        let c = xs[1];
        same_shape("layer_norm", self.shape(gain), &[c])?;
        same_shape("layer_norm", self.shape(bias), &[c])?;
        let (y, means, rstds) = ssm::layer_norm_forward(
            self.value(x).data(),
            c,
            self.value(gain).data(),
            self.value(bias).data(),
        );
        let t = Tensor::new(&xs, y)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                means,
                rstds,
            },
            &[x, gain, bias],
        ))
    }

    /// Selective scan. Shapes: `x, delta [L, C]`, `a [C, N]`, `b, c [L, N]`,
    /// `d [C]`; returns `[L, C]`.
    #[allow(clippy::too_many_arguments)]
    pub fn scan(&mut self, x: Var, delta: Var, a: Var, b: Var, c: Var, d: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let as_ = self.shape(a).to_vec();
        if xs.len() != 2 || as_.len() != 2 {
            return Err(Error::shape("scan", format!("x {xs:?}, a {as_:?}")));
        }
        let (l, ch, n) = (xs[0], xs[1], as_[1]);
        same_shape("scan", self.shape(delta), &[l, ch])?;
        same_shape("scan", &as_, &[ch, n])?;
        same_shape("scan", self.shape(b), &[l, n])?;
        same_shape("scan", self.shape(c), &[l, n])?;
        same_shape("scan", self.shape(d), &[ch])?;
        let inputs = ScanInputs {
            len: l,
            channels: ch,
            state_dim: n,
            x: self.value(x).data(),
            delta: self.value(delta).data(),
            a: self.value(a).data(),
            b: self.value(b).data(),
            c: self.value(c).data(),
            d: self.value(d).data(),
        };
        inputs.validate()?;
        let keep = [x, delta, a, b, c, d].iter().any(|v| self.requires_grad(*v));
        let (y, states) = ssm::scan_forward(&inputs, keep);
        let t = Tensor::new(&[l, ch], y)?;
        Ok(self.push(
            t,
            Op::Scan {
                x,
                delta,
                a,
                b,
                c,
                d,
                states,
            },
            &[x, delta, a, b, c, d],
        ))
    }

    fn check_support(&self, op: &'static str, z: Var, t: Var, support: &[usize]) -> Result<(usize, usize)> {
        let zs = self.shape(z);
        same_shape(op, zs, self.shape(t))?;
        if zs.len() < 2 {
            return Err(Error::shape(op, format!("expected [C, ...], got {zs:?}")));
        }
        let c = zs[0];
        let s = self.value(z).len() / c.max(1);
        if let Some(&bad) = support.iter().find(|&&v| v >= s) {
            return Err(Error::shape(op, format!("support voxel {bad} out of range {s}")));
        }
        Ok((c, s))
    }

    /// Mean of `1 - cos(z_v, t_v)` over the voxels in `support`, where the
    /// cosine is taken over channels of `[C, ...]` volumes. Zero when the
    /// support is empty.
    pub fn masked_cosine(&mut self, z: Var, t: Var, support: Rc<[usize]>) -> Result<Var> {
        let (c, s) = self.check_support("masked_cosine", z, t, &support)?;
        let (zv, tv) = (self.value(z).data(), self.value(t).data());
        let mut total = 0.0;
        for &v in support.iter() {
            let (mut dot, mut nz, mut nt) = (0.0, 0.0, 0.0);
            for ch in 0..c {
                let (p, q) = (zv[ch * s + v], tv[ch * s + v]);
                dot += p * q;
                nz += p * p;
                nt += q * q;
            }
            total += 1.0 - dot / (nz.sqrt().max(COSINE_NORM_FLOOR) * nt.sqrt().max(COSINE_NORM_FLOOR));
        }
        let value = if support.is_empty() {
            0.0
        } else {
            total / support.len() as f64
        };
        Ok(self.push(Tensor::scalar(value), Op::MaskedCosine(z, t, support), &[z, t]))
    }

    /// Mean over `support` voxels of the squared distance summed over channels.
    pub fn masked_mse(&mut self, z: Var, t: Var, support: Rc<[usize]>) -> Result<Var> {
        let (c, s) = self.check_support("masked_mse", z, t, &support)?;
        let (zv, tv) = (self.value(z).data(), self.value(t).data());
        let mut total = 0.0;
        for &v in support.iter() {
            for ch in 0..c {
                let e = zv[ch * s + v] - tv[ch * s + v];
                total += e * e;
            }
        }
        let value = if support.is_empty() {
            0.0
        } else {
            total / support.len() as f64
        };
        Ok(self.push(Tensor::scalar(value), Op::MaskedMse(z, t, support), &[z, t]))
    }

    /// Mean binary cross-entropy of probabilities `p` against fixed targets,
    /// with `p` clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, target: Rc<[f64]>) -> Result<Var> {
        let pv = self.value(p).data();
        if pv.len() != target.len() {
            return Err(Error::shape(
                "bce",
                format!("{} probabilities vs {} targets", pv.len(), target.len()),
            ));
        }
        let mut total = 0.0;
        for (&q, &t) in pv.iter().zip(target.iter()) {
            let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        }
        let value = total / pv.len().max(1) as f64;
        Ok(self.push(Tensor::scalar(value), Op::Bce(p, target), &[p]))
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta) {
                    *a += b;
                }
            }
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(Tensor::new(&shape, delta).expect("gradient matches node shape"));
            }
        }
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every node that
    /// requires them are available through [`Graph::grad`] afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).shape().is_empty() {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            let op = self.nodes[i].op.clone();
            self.backprop(i, &op, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop(&mut self, i: usize, op: &Op, g: &Tensor) -> Result<()> {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, gd.to_vec());
                self.accumulate(*b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, gd.to_vec());
                self.accumulate(*b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let ga = gd.iter().zip(self.value(*b).data()).map(|(g, y)| g * y).collect();
                let gb = gd.iter().zip(self.value(*a).data()).map(|(g, x)| g * x).collect();
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Unary(u, x) => {
                let xv = self.value(*x).data();
                let yv = self.nodes[i].value.data();
                let gx = (0..gd.len())
                    .map(|j| gd[j] * unary_derivative(*u, xv[j], yv[j]))
                    .collect();
                self.accumulate(*x, gx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(*x, vec![gd[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(*x, vec![gd[0] / n.max(1) as f64; n]);
            }
            Op::Reshape(x) => self.accumulate(*x, gd.to_vec()),
            Op::Gather(x, index) => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (o, &src) in index.iter().enumerate() {
                    gx[src] += gd[o];
                }
                self.accumulate(*x, gx);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(p, gd[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::MulChannels(x, m) => {
                let mv = self.value(*m).data();
                let s = mv.len();
                let gx = (0..gd.len()).map(|j| gd[j] * mv[j % s]).collect();
                let xv = self.value(*x).data();
                let mut gm = vec![0.0; s];
                for j in 0..gd.len() {
                    gm[j % s] += gd[j] * xv[j];
                }
                self.accumulate(*x, gx);
                self.accumulate(*m, gm);
            }
            Op::Linear(x, w, b) => {
                let (rows, inp) = (self.shape(*x)[0], self.shape(*x)[1]);
                let out = self.shape(*w)[0];
                if self.requires_grad(*x) {
                    let mut gx = vec![0.0; rows * inp];
                    gemm(rows, out, inp, gd, false, self.value(*w).data(), false, &mut gx, 0.0);
                    self.accumulate(*x, gx);
                }
                if self.requires_grad(*w) {
                    let mut gw = vec![0.0; out * inp];
                    gemm(out, rows, inp, gd, true, self.value(*x).data(), false, &mut gw, 0.0);
                    self.accumulate(*w, gw);
                }
                let mut gb = vec![0.0; out];
                for r in 0..rows {
                    for o in 0..out {
                        gb[o] += gd[r * out + o];
                    }
                }
                self.accumulate(*b, gb);
            }
            Op::Conv3 { x, w, b, geom } => {
                let (cin, inp) = spatial(self.shape(*x), "conv3")?;
                let ys = self.nodes[i].value.shape();
                let (cout, out) = (ys[0], [ys[1], ys[2], ys[3]]);
                let p = out[0] * out[1] * out[2];
                let kk = cin * geom.kernel.pow(3);
                if self.requires_grad(*w) {
                    let cols = im2col(self.value(*x).data(), cin, inp, out, *geom);
                    let mut gw = vec![0.0; cout * kk];
                    gemm(cout, p, kk, gd, false, &cols, true, &mut gw, 0.0);
                    self.accumulate(*w, gw);
                }
                if self.requires_grad(*x) {
                    let mut gcols = vec![0.0; kk * p];
                    gemm(kk, cout, p, self.value(*w).data(), true, gd, false, &mut gcols, 0.0);
                    self.accumulate(*x, col2im(&gcols, cin, inp, out, *geom));
                }
                let gb = (0..cout).map(|c| gd[c * p..(c + 1) * p].iter().sum()).collect();
                self.accumulate(*b, gb);
            }
            Op::ConvT3 { x, w, b, geom } => {
                let (cin, inp) = spatial(self.shape(*x), "conv_transpose3")?;
                let ys = self.nodes[i].value.shape();
                let (cout, out) = (ys[0], [ys[1], ys[2], ys[3]]);
                let pin = inp[0] * inp[1] * inp[2];
                let kk = cout * geom.kernel.pow(3);
                // the transposed conv's output gradient unfolds like a conv input
                let gcols = im2col(gd, cout, out, inp, *geom);
                if self.requires_grad(*x) {
                    let mut gx = vec![0.0; cin * pin];
                    gemm(cin, kk, pin, self.value(*w).data(), false, &gcols, false, &mut gx, 0.0);
                    self.accumulate(*x, gx);
                }
                if self.requires_grad(*w) {
                    let mut gw = vec![0.0; cin * kk];
                    gemm(cin, pin, kk, self.value(*x).data(), false, &gcols, true, &mut gw, 0.0);
                    self.accumulate(*w, gw);
                }
                let p = out[0] * out[1] * out[2];
                let gb = (0..cout).map(|c| gd[c * p..(c + 1) * p].iter().sum()).collect();
                self.accumulate(*b, gb);
            }
            Op::AvgPool3(x, k) => {
                let (_, inp) = spatial(self.shape(*x), "avg_pool3")?;
                let out = [inp[0] / k, inp[1] / k, inp[2] / k];
                let norm = 1.0 / (k * k * k) as f64;
                let n = self.value(*x).len();
                let vol = inp[0] * inp[1] * inp[2];
                let gx = (0..n)
                    .map(|j| {
                        let (ch, rest) = (j / vol, j % vol);
                        let (z, y, xx) = (rest / (inp[1] * inp[2]), (rest / inp[2]) % inp[1], rest % inp[2]);
                        gd[((ch * out[0] + z / k) * out[1] + y / k) * out[2] + xx / k] * norm
                    })
                    .collect();
                self.accumulate(*x, gx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                means,
                rstds,
            } => {
                let c = self.shape(*x)[1];
                let (gx, ggain, gbias) =
                    ssm::layer_norm_backward(self.value(*x).data(), c, self.value(*gain).data(), means, rstds, gd);
                self.accumulate(*x, gx);
                self.accumulate(*gain, ggain);
                self.accumulate(*bias, gbias);
            }
            Op::Scan {
                x,
                delta,
                a,
                b,
                c,
                d,
                states,
            } => {
                let states = states.as_ref().expect("scan states kept when gradients are required");
                let (l, ch) = (self.shape(*x)[0], self.shape(*x)[1]);
                let inputs = ScanInputs {
                    len: l,
                    channels: ch,
                    state_dim: self.shape(*a)[1],
                    x: self.value(*x).data(),
                    delta: self.value(*delta).data(),
                    a: self.value(*a).data(),
                    b: self.value(*b).data(),
                    c: self.value(*c).data(),
                    d: self.value(*d).data(),
                };
                let sg = ssm::scan_backward(&inputs, states, gd);
                self.accumulate(*x, sg.x);
                self.accumulate(*delta, sg.delta);
                self.accumulate(*a, sg.a);
                self.accumulate(*b, sg.b);
                self.accumulate(*c, sg.c);
                self.accumulate(*d, sg.d);
            }
            Op::MaskedCosine(z, t, support) => {
                if support.is_empty() {
                    return Ok(());
                }
                let c = self.shape(*z)[0];
                let s = self.value(*z).len() / c;
                let (zv, tv) = (self.value(*z).data(), self.value(*t).data());
                let mut gz = vec![0.0; zv.len()];
                let mut gt = vec![0.0; zv.len()];
                let scale = -gd[0] / support.len() as f64;
                for &v in support.iter() {
                    let (mut dot, mut nz2, mut nt2) = (0.0, 0.0, 0.0);
                    for ch in 0..c {
                        let (p, q) = (zv[ch * s + v], tv[ch * s + v]);
                        dot += p * q;
                        nz2 += p * p;
                        nt2 += q * q;
                    }
                    let (nz, nt) = (nz2.sqrt(), nt2.sqrt());
                    let (fz, ft) = (nz.max(COSINE_NORM_FLOOR), nt.max(COSINE_NORM_FLOOR));
                    let cos = dot / (fz * ft);
                    for ch in 0..c {
                        let j = ch * s + v;
                        let (p, q) = (zv[j], tv[j]);
                        let dz = q / (fz * ft) - if nz > COSINE_NORM_FLOOR { cos * p / nz2 } else { 0.0 };
                        let dt = p / (fz * ft) - if nt > COSINE_NORM_FLOOR { cos * q / nt2 } else { 0.0 };
                        gz[j] = scale * dz;
                        gt[j] = scale * dt;
                    }
                }
                self.accumulate(*z, gz);
                self.accumulate(*t, gt);
            }
            Op::MaskedMse(z, t, support) => {
                if support.is_empty() {
                    return Ok(());
                }
                let c = self.shape(*z)[0];
                let s = self.value(*z).len() / c;
                let (zv, tv) = (self.value(*z).data(), self.value(*t).data());
                let mut gz = vec![0.0; zv.len()];
                let scale = 2.0 * gd[0] / support.len() as f64;
                for &v in support.iter() {
                    for ch in 0..c {
                        let j = ch * s + v;
                        gz[j] = scale * (zv[j] - tv[j]);
                    }
                }
                let gt = gz.iter().map(|v| -v).collect();
                self.accumulate(*z, gz);
                self.accumulate(*t, gt);
            }
            Op::Bce(p, target) => {
                let pv = self.value(*p).data();
                let n = pv.len().max(1) as f64;
                let gp = pv
                    .iter()
                    .zip(target.iter())
                    .map(|(&q, &t)| {
                        if q <= BCE_CLAMP || q >= 1.0 - BCE_CLAMP {
                            0.0
                        } else {
                            gd[0] * (-t / q + (1.0 - t) / (1.0 - q)) / n
                        }
                    })
                    .collect();
                self.accumulate(*p, gp);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shape_mismatch_names_axis() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(&[2, 3]));
        let b = g.param(Tensor::zeros(&[2, 4]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("axis 1"), "{err}");
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 3, 3], |i| i as f64 * 0.1));
        let mut w = Tensor::zeros(&[2, 2, 1, 1, 1]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let w = g.constant(w);
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.conv3(x, w, b, ConvGeom::new(1, 1, 0)).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn identity_linear_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[4, 3], |i| i as f64 - 5.0));
        let w = g.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let b = g.constant(Tensor::zeros(&[3]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn transposed_conv_doubles_resolution() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::filled(&[1, 2, 2, 2], 1.0));
        let w = g.constant(Tensor::filled(&[1, 3, 2, 2, 2], 0.5));
        let b = g.constant(Tensor::zeros(&[3]));
        let y = g.conv_transpose3(x, w, b, ConvGeom::new(2, 2, 0)).unwrap();
        assert_eq!(g.shape(y), &[3, 4, 4, 4]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn masked_cosine_special_cases() {
        let mut g = Graph::new();
        let z = g.constant(t(&[2, 3], &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]));
        let same = g.constant(t(&[2, 3], &[2.0, 0.0, -1.0, 0.0, 1.0, 0.0]));
        let support: Rc<[usize]> = vec![0].into();
        let l = g.masked_cosine(z, same, support).unwrap();
        assert!(g.value(l).item().abs() < 1e-15);
        let l = g.masked_cosine(z, same, vec![1].into()).unwrap();
        assert!((g.value(l).item() - 1.0).abs() < 1e-15);
        let l = g.masked_cosine(z, same, vec![2].into()).unwrap();
        assert!((g.value(l).item() - 2.0).abs() < 1e-15);
        let l = g.masked_cosine(z, same, Vec::new().into()).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn backward_is_repeatable() {
        let build = || {
            let mut g = Graph::new();
            let x = g.param(Tensor::from_fn(&[2, 4, 4, 4], |i| (i as f64 * 0.37).sin()));
            let w = g.param(Tensor::from_fn(&[3, 2, 3, 3, 3], |i| (i as f64 * 0.11).cos() * 0.2));
            let b = g.param(Tensor::from_fn(&[3], |i| i as f64 * 0.1));
            let y = g.conv3(x, w, b, ConvGeom::new(3, 2, 1)).unwrap();
            let y = g.silu(y);
            let l = g.mean(y);
            g.backward(l).unwrap();
            (g.grad(x).unwrap().clone(), g.grad(w).unwrap().clone())
        };
        assert_eq!(build(), build());
    }
}
