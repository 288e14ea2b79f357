use rand::Rng;

use super::layers::{Conv, ConvTranspose};
use crate::diff::{Binding, ConvGeom, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::volume::{FeatureVolume, MaskVolume, TsdfVolume};

pub const MODEL_EDGE: usize = 32;

/// Outputs of the feature student on one volume.
#[derive(Debug, Clone, Copy)]
pub struct StudentOut {
    /// `[C_feat, G, G, G]`
    pub features: Var,
    /// `[1, G, G, G]`, in (0, 1)
    pub mask: Var,
    /// `features * mask`
    pub gated: Var,
}

/// Small 3-D U-Net predicting voxel features and a gating mask from a
/// partial TSDF.
#[derive(Debug, Clone)]
pub struct StudentNet {
    feat_dim: usize,
    enc1: Conv,
    enc2: Conv,
    mid: Conv,
    up1: ConvTranspose,
    merge1: Conv,
    up2: ConvTranspose,
    feat_head: Conv,
    mask_head: Conv,
}

/// Scales a TSDF to `[-1, 1]` and wraps it as a `[1, G, G, G]` constant.
pub fn input_tensor(x: &TsdfVolume) -> Result<Tensor> {
    let g = x.spec().edge;
    if g != MODEL_EDGE {
        return Err(Error::InvalidGrid(format!(
            "model expects a {MODEL_EDGE}^3 grid, got {g}^3"
        )));
    }
    let t = x.spec().truncation;
    Tensor::new(&[1, g, g, g], x.values().iter().map(|&v| v as f64 / t).collect())
}

impl StudentNet {
    pub fn new(store: &mut ParamStore, widths: [usize; 3], feat_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let [w1, w2, w3] = widths;
        let down = ConvGeom::new(3, 2, 1);
        let same = ConvGeom::new(3, 1, 1);
        let up = ConvGeom::new(2, 2, 0);
        Ok(StudentNet {
            feat_dim,
            enc1: Conv::new(store, "student.enc1", 1, w1, down, rng)?,
            enc2: Conv::new(store, "student.enc2", w1, w2, down, rng)?,
            mid: Conv::new(store, "student.mid", w2, w3, same, rng)?,
            up1: ConvTranspose::new(store, "student.up1", w3, w2, up, rng)?,
            merge1: Conv::new(store, "student.merge1", w2 + w1, w2, same, rng)?,
            up2: ConvTranspose::new(store, "student.up2", w2, w1, up, rng)?,
            feat_head: Conv::pointwise(store, "student.feat_head", w1 + 1, feat_dim, rng)?,
            mask_head: Conv::pointwise(store, "student.mask_head", w1 + 1, 1, rng)?,
        })
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    /// `x` is the normalized `[1, 32, 32, 32]` input.
    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<StudentOut> {
        if g.shape(x) != [1, MODEL_EDGE, MODEL_EDGE, MODEL_EDGE] {
            return Err(Error::shape("student_forward", format!("input {:?}", g.shape(x))));
        }
        let e1 = self.enc1.forward(g, p, x)?;
        let e1 = g.silu(e1);
        let e2 = self.enc2.forward(g, p, e1)?;
        let e2 = g.silu(e2);
        let m = self.mid.forward(g, p, e2)?;
        let m = g.silu(m);
        let u1 = self.up1.forward(g, p, m)?;
        let u1 = g.silu(u1);
        let c1 = g.concat(&[u1, e1])?;
        let d1 = self.merge1.forward(g, p, c1)?;
        let d1 = g.silu(d1);
        let u2 = self.up2.forward(g, p, d1)?;
        let u2 = g.silu(u2);
        let c2 = g.concat(&[u2, x])?;
        let features = self.feat_head.forward(g, p, c2)?;
        let logits = self.mask_head.forward(g, p, c2)?;
        let mask = g.sigmoid(logits);
        let gated = g.mul_channels(features, mask)?;
        Ok(StudentOut { features, mask, gated })
    }

    /// Inference on a TSDF volume: `(features, mask)`.
    pub fn predict(&self, store: &ParamStore, x: &TsdfVolume) -> Result<(FeatureVolume, MaskVolume)> {
        let mut g = Graph::new();
        let p = store.bind(&mut g, |_| false);
        let xv = g.constant(input_tensor(x)?);
        let out = self.forward(&mut g, &p, xv)?;
        let spec = *x.spec();
        let feats = FeatureVolume::from_f64(spec, self.feat_dim, g.value(out.features).data())?;
        let mask = MaskVolume::new(spec, g.value(out.mask).to_f32())?;
        Ok((feats, mask))
    }
}
