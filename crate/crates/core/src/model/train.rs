use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, ModelKind};
use super::completion::CompletionNet;
use super::config::TrainConfig;
use super::losses::{distill_loss_graph, tsdf_loss_graph};
use super::student::{input_tensor, StudentNet, MODEL_EDGE};
use crate::diff::{accumulate_grads, Adam, Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::synth::Split;
use crate::volume::{FeatureVolume, MaskVolume, TsdfVolume};

/// One training example with the teacher target kept only on its support.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub id: String,
    pub split: Split,
    pub category: String,
    pub partial: TsdfVolume,
    pub gt: TsdfVolume,
    /// Voxels where the teacher mask is 1.
    pub support: Rc<[usize]>,
    /// `[support.len(), feat_dim]`
    pub support_features: Vec<f32>,
    pub feat_dim: usize,
}

impl TrainingSample {
    pub fn new(
        id: impl Into<String>,
        split: Split,
        category: impl Into<String>,
        partial: TsdfVolume,
        gt: TsdfVolume,
        target: &FeatureVolume,
        mask: &MaskVolume,
    ) -> Result<Self> {
        let s = gt.values().len();
        if !partial.same_grid(&gt) || target.values().len() != target.channels() * s || mask.values().len() != s {
            return Err(Error::shape(
                "TrainingSample",
                "partial, gt, features and mask must share one grid",
            ));
        }
        let support: Rc<[usize]> = mask
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v >= 0.5)
            .map(|(i, _)| i)
            .collect();
        let c = target.channels();
        let mut support_features = Vec::with_capacity(support.len() * c);
        for &v in support.iter() {
            support_features.extend((0..c).map(|ch| target.get(ch, v)));
        }
        Ok(TrainingSample {
            id: id.into(),
            split,
            category: category.into(),
            partial,
            gt,
            support,
            support_features,
            feat_dim: c,
        })
    }

    /// Dense `[C, G, G, G]` target, zero off the support.
    pub fn target_tensor(&self) -> Tensor {
        let g = self.gt.spec().edge;
        let s = g * g * g;
        let c = self.feat_dim;
        let mut t = Tensor::zeros(&[c, g, g, g]);
        let d = t.data_mut();
        for (k, &v) in self.support.iter().enumerate() {
            for ch in 0..c {
                d[ch * s + v] = self.support_features[k * c + ch] as f64;
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Named loss components, averaged like `loss`.
    pub parts: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub steps: u64,
    /// Samples with an empty teacher support.
    pub empty_support_samples: usize,
}

impl TrainReport {
    pub fn first_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.loss)
    }

    pub fn last_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.loss)
    }
}

fn training_subset<'a>(samples: &'a [TrainingSample], cfg: &TrainConfig) -> Result<Vec<&'a TrainingSample>> {
    let mut train: Vec<&TrainingSample> = samples.iter().filter(|s| s.split == Split::Train).collect();
    if let Some(max) = cfg.max_train_samples {
        train.truncate(max);
    }
    if train.is_empty() {
        return Err(Error::Empty("no training samples".into()));
    }
    Ok(train)
}

fn check_finite(value: f64, what: &str, epoch: usize, id: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} = {value} at epoch {epoch}, sample {id}"
        )))
    }
}

fn scale_grads(grads: &mut [Option<Tensor>], s: f64) {
    for t in grads.iter_mut().flatten() {
        t.data_mut().iter_mut().for_each(|v| *v *= s);
    }
}

struct Loop<'a> {
    cfg: &'a TrainConfig,
    rng: ChaCha8Rng,
    opt: Adam,
}

impl Loop<'_> {
    /// Runs all epochs; `step` returns the sample's loss parts with the
    /// total first and accumulates gradients into its argument.
    fn run(
        &mut self,
        store: &mut ParamStore,
        samples: &[&TrainingSample],
        names: &[&str],
        mut step: impl FnMut(&ParamStore, &TrainingSample, &mut Vec<Option<Tensor>>) -> Result<Vec<f64>>,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for epoch in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            let mut sums = vec![0.0; names.len()];
            for batch in order.chunks(self.cfg.batch_size) {
                let mut grads = Vec::new();
                for &i in batch {
                    let parts = step(store, samples[i], &mut grads)?;
                    check_finite(parts[0], names[0], epoch, &samples[i].id)?;
                    for (s, p) in sums.iter_mut().zip(&parts) {
                        *s += p;
                    }
                }
                scale_grads(&mut grads, 1.0 / batch.len() as f64);
                self.opt.step(store.tensors_mut(), &grads)?;
            }
            let n = samples.len() as f64;
            let log = EpochLog {
                epoch,
                loss: sums[0] / n,
                parts: names
                    .iter()
                    .zip(&sums)
                    .skip(1)
                    .map(|(k, v)| (k.to_string(), v / n))
                    .collect(),
            };
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }
}

/// Distillation training of the feature student.
pub fn train_student(
    samples: &[TrainingSample],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(StudentNet, ParamStore, TrainReport)> {
    cfg.validate(MODEL_EDGE)?;
    let train = training_subset(samples, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let net = StudentNet::new(&mut store, cfg.model.student_widths, cfg.feat_dim, &mut rng)?;
    if let Some(s) = train.iter().find(|s| s.feat_dim != cfg.feat_dim) {
        return Err(Error::Config(format!(
            "sample {} has {} feature channels, config says {}",
            s.id, s.feat_dim, cfg.feat_dim
        )));
    }
    let empty = train.iter().filter(|s| s.support.is_empty()).count();
    let w = cfg.loss_weights;
    let mut lp = Loop {
        cfg,
        rng,
        opt: Adam::new(cfg.lr),
    };
    let epochs = lp.run(
        &mut store,
        &train,
        &["distill", "cos", "mse", "mask"],
        |store, s, grads| {
            let mut g = Graph::new();
            let p = store.bind(&mut g, |_| true);
            let x = g.constant(input_tensor(&s.partial)?);
            let out = net.forward(&mut g, &p, x)?;
            let target = g.constant(s.target_tensor());
            let d = distill_loss_graph(&mut g, out.features, target, out.mask, s.support.clone(), &w)?;
            let parts = vec![
                g.value(d.total).item(),
                g.value(d.cos).item(),
                g.value(d.mse).item(),
                g.value(d.mask).item(),
            ];
            if parts[0].is_finite() {
                g.backward(d.total)?;
                accumulate_grads(grads, store.grads(&g, &p));
            }
            Ok(parts)
        },
        on_epoch,
    )?;
    let steps = lp.opt.steps();
    Ok((
        net,
        store,
        TrainReport {
            epochs,
            steps,
            empty_support_samples: empty,
        },
    ))
}

/// Builds a completion network, optionally seeding its student from a
/// distillation checkpoint.
pub fn build_completion(
    cfg: &TrainConfig,
    truncation: f64,
    student: Option<&Checkpoint>,
) -> Result<(CompletionNet, ParamStore, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let net = CompletionNet::new(&mut store, cfg, truncation, &mut rng)?;
    if let (Some(ck), true) = (student, cfg.model.use_student) {
        if ck.index.kind != ModelKind::Student {
            return Err(Error::Checkpoint("expected a student checkpoint".into()));
        }
        let copied = ck.apply(&mut store, |n| n.starts_with("student."))?;
        if copied == 0 {
            return Err(Error::Checkpoint(
                "student checkpoint holds no student parameters".into(),
            ));
        }
    }
    Ok((net, store, rng))
}

/// Completion training with the sign-aware TSDF loss.
pub fn train_completion(
    samples: &[TrainingSample],
    cfg: &TrainConfig,
    student: Option<&Checkpoint>,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(CompletionNet, ParamStore, TrainReport)> {
    let train = training_subset(samples, cfg)?;
    let truncation = train[0].gt.spec().truncation;
    let (net, mut store, rng) = build_completion(cfg, truncation, student)?;
    let w = cfg.loss_weights;
    let freeze = cfg.freeze_student;
    let mut lp = Loop {
        cfg,
        rng,
        opt: Adam::new(cfg.lr),
    };
    let epochs = lp.run(
        &mut store,
        &train,
        &["tsdf"],
        |store, s, grads| {
            let mut g = Graph::new();
            let p = store.bind(&mut g, |n| !(freeze && n.starts_with("student.")));
            let x = g.constant(input_tensor(&s.partial)?);
            let out = net.forward(&mut g, &p, x)?;
            let gt: Vec<f64> = s.gt.values().iter().map(|&v| v as f64).collect();
            let loss = tsdf_loss_graph(&mut g, out.pred, &gt, &w)?;
            let value = g.value(loss).item();
            if value.is_finite() {
                g.backward(loss)?;
                accumulate_grads(grads, store.grads(&g, &p));
            }
            Ok(vec![value])
        },
        on_epoch,
    )?;
    let steps = lp.opt.steps();
    Ok((
        net,
        store,
        TrainReport {
            epochs,
            steps,
            empty_support_samples: 0,
        },
    ))
}

/// Mean over support voxels of the cosine between predicted and target
/// features; `None` for an empty support.
pub fn masked_cosine_similarity(pred: &FeatureVolume, sample: &TrainingSample) -> Option<f64> {
    if sample.support.is_empty() {
        return None;
    }
    let c = sample.feat_dim;
    let total: f64 = sample
        .support
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let (mut dot, mut np, mut nt) = (0.0, 0.0, 0.0);
            for ch in 0..c {
                let p = pred.get(ch, v) as f64;
                let t = sample.support_features[k * c + ch] as f64;
                dot += p * t;
                np += p * p;
                nt += t * t;
            }
            dot / (np.sqrt().max(1e-8) * nt.sqrt().max(1e-8))
        })
        .sum();
    Some(total / sample.support.len() as f64)
}
