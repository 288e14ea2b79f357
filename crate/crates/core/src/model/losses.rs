use std::rc::Rc;

use super::config::LossWeights;
use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::volume::{FeatureVolume, MaskVolume, TsdfVolume};

/// Sign-disagreement masks between a prediction and the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfMasks {
    pub false_positive: MaskVolume,
    pub false_negative: MaskVolume,
    pub correct: MaskVolume,
}

fn check_pair(op: &'static str, a: &TsdfVolume, b: &TsdfVolume) -> Result<()> {
    if !a.same_grid(b) {
        return Err(Error::shape(
            op,
            format!("grids differ: edge {} vs {}", a.spec().edge, b.spec().edge),
        ));
    }
    Ok(())
}

pub fn tsdf_masks(pred: &TsdfVolume, gt: &TsdfVolume) -> Result<TsdfMasks> {
    check_pair("tsdf_masks", pred, gt)?;
    let spec = *pred.spec();
    let pairs: Vec<(bool, bool)> = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &g)| (p <= 0.0, g <= 0.0))
        .collect();
    Ok(TsdfMasks {
        false_positive: MaskVolume::from_bools(spec, pairs.iter().map(|&(p, g)| p && !g))?,
        false_negative: MaskVolume::from_bools(spec, pairs.iter().map(|&(p, g)| !p && g))?,
        correct: MaskVolume::from_bools(spec, pairs.iter().map(|&(p, g)| p == g))?,
    })
}

/// Per-voxel sign-aware weights; computed from values, so constant with
/// respect to the prediction.
pub fn voxel_weights(pred: &[f64], gt: &[f64], w: &LossWeights) -> Vec<f64> {
    pred.iter()
        .zip(gt)
        .map(|(&p, &g)| match (p <= 0.0, g <= 0.0) {
            (true, false) => w.w_fp,
            (false, true) => w.w_fn,
            _ => w.w_correct,
        })
        .collect()
}

/// Differentiable sign-aware smooth-L1 loss; `gt` is fixed.
pub fn tsdf_loss_graph(g: &mut Graph, pred: Var, gt: &[f64], w: &LossWeights) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    if g.value(pred).len() != gt.len() {
        return Err(Error::shape(
            "tsdf_loss",
            format!("{} predictions vs {} targets", g.value(pred).len(), gt.len()),
        ));
    }
    let weights = voxel_weights(g.value(pred).data(), gt, w);
    let target = g.constant(Tensor::new(&shape, gt.to_vec())?);
    let weights = g.constant(Tensor::new(&shape, weights)?);
    let diff = g.sub(pred, target)?;
    let l = g.smooth_l1(diff, w.beta);
    let wl = g.mul(l, weights)?;
    Ok(g.mean(wl))
}

pub fn tsdf_loss(pred: &TsdfVolume, gt: &TsdfVolume, w: &LossWeights) -> Result<f64> {
    check_pair("tsdf_loss", pred, gt)?;
    let mut g = Graph::new();
    let n = pred.values().len();
    let p = g.constant(Tensor::from_f32(&[n], pred.values())?);
    let gt: Vec<f64> = gt.values().iter().map(|&v| v as f64).collect();
    let l = tsdf_loss_graph(&mut g, p, &gt, w)?;
    Ok(g.value(l).item())
}

/// Graph handles of the distillation terms.
#[derive(Debug, Clone, Copy)]
pub struct DistillVars {
    pub total: Var,
    pub cos: Var,
    pub mse: Var,
    pub mask: Var,
    /// The teacher-valid support was empty; cosine and MSE are zero.
    pub empty_support: bool,
}

/// `lambda_cos L_cos + lambda_mse L_mse + lambda_mask BCE(m, m_hat)`.
/// `support` lists voxels with `m_hat = 1`.
pub fn distill_loss_graph(
    g: &mut Graph,
    z: Var,
    target: Var,
    mask: Var,
    support: Rc<[usize]>,
    w: &LossWeights,
) -> Result<DistillVars> {
    let s = g.value(mask).len();
    let mut m_hat = vec![0.0; s];
    for &v in support.iter() {
        if v >= s {
            return Err(Error::shape(
                "distill_loss",
                format!("support voxel {v} outside {s} voxels"),
            ));
        }
        m_hat[v] = 1.0;
    }
    let empty_support = support.is_empty();
    let cos = g.masked_cosine(z, target, support.clone())?;
    let mse = g.masked_mse(z, target, support)?;
    let mask = g.bce(mask, m_hat.into())?;
    let a = g.scale(cos, w.cos);
    let b = g.scale(mse, w.mse);
    let c = g.scale(mask, w.mask);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(DistillVars {
        total,
        cos,
        mse,
        mask,
        empty_support,
    })
}

/// Values of the distillation terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillTerms {
    pub total: f64,
    pub cos: f64,
    pub mse: f64,
    pub mask: f64,
    pub empty_support: bool,
}

pub fn distill_loss(
    z: &FeatureVolume,
    target: &FeatureVolume,
    m: &MaskVolume,
    m_hat: &MaskVolume,
    w: &LossWeights,
) -> Result<DistillTerms> {
    if z.shape() != target.shape()
        || m.values().len() != m_hat.values().len()
        || m.values().len() * z.channels() != z.values().len()
    {
        return Err(Error::shape(
            "distill_loss",
            format!(
                "features {:?} / {:?}, masks {} / {}",
                z.shape(),
                target.shape(),
                m.values().len(),
                m_hat.values().len()
            ),
        ));
    }
    if !m_hat.is_binary() {
        return Err(Error::InvalidVolume("teacher validity mask must be binary".into()));
    }
    let mut g = Graph::new();
    let shape = z.shape();
    let zv = g.constant(Tensor::from_f32(&shape, z.values())?);
    let tv = g.constant(Tensor::from_f32(&shape, target.values())?);
    let mv = g.constant(Tensor::from_f32(&[m.values().len()], m.values())?);
    let support: Rc<[usize]> = m_hat
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 1.0)
        .map(|(i, _)| i)
        .collect();
    let d = distill_loss_graph(&mut g, zv, tv, mv, support, w)?;
    Ok(DistillTerms {
        total: g.value(d.total).item(),
        cos: g.value(d.cos).item(),
        mse: g.value(d.mse).item(),
        mask: g.value(d.mask).item(),
        empty_support: d.empty_support,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridSpec;

    fn vol(values: Vec<f32>) -> TsdfVolume {
        TsdfVolume::new(GridSpec::with_edge(2).unwrap(), values).unwrap()
    }

    #[test]
    fn single_voxel_hand_values() {
        let w = LossWeights::default();
        let mut gt = vec![3.0f32; 8];
        let mut pred = gt.clone();
        gt[0] = -1.0;
        pred[0] = 1.0;
        let l = tsdf_loss(&vol(pred.clone()), &vol(gt.clone()), &w).unwrap();
        assert!((l * 8.0 - 7.5).abs() < 1e-12);
        gt[0] = 1.0;
        pred[0] = 0.5;
        let l = tsdf_loss(&vol(pred), &vol(gt), &w).unwrap();
        assert!((l * 8.0 - 0.125).abs() < 1e-12);
    }

    #[test]
    fn mask_cases() {
        let all_in = vol(vec![-1.0; 8]);
        let all_out = vol(vec![1.0; 8]);
        let m = tsdf_masks(&all_out, &all_in).unwrap();
        assert_eq!(m.false_negative.count_set(), 8);
        let m = tsdf_masks(&all_in, &all_out).unwrap();
        assert_eq!(m.false_positive.count_set(), 8);
        let m = tsdf_masks(&all_in, &all_in).unwrap();
        assert_eq!(m.correct.count_set(), 8);
    }

    #[test]
    fn identical_features_leave_only_bce() {
        let spec = GridSpec::with_edge(2).unwrap();
        let z = FeatureVolume::new(spec, 2, (0..16).map(|i| i as f32 + 1.0).collect()).unwrap();
        let m = MaskVolume::new(spec, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let t = distill_loss(&z, &z, &m, &m, &LossWeights::default()).unwrap();
        assert!(t.cos.abs() < 1e-12 && t.mse == 0.0);
        assert!((t.mask + (1.0f64 - 1e-7).ln()).abs() < 1e-12);
        let empty = MaskVolume::new(spec, vec![0.0; 8]).unwrap();
        let t = distill_loss(&z, &z, &m, &empty, &LossWeights::default()).unwrap();
        assert!(t.empty_support && t.cos == 0.0 && t.mse == 0.0);
    }
}
