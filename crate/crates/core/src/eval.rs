//! Occupancy IoU, Chamfer distance, truncation-normalized l1 and PCA
//! colorization of feature volumes.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Split;
use crate::volume::{FeatureVolume, GridSpec, MaskVolume, TsdfVolume};

fn check_same(op: &'static str, a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("grids differ: edge {} vs {}", a.edge, b.edge)));
    }
    Ok(())
}

/// IoU of the `T <= 0` sets; 1 when both are empty.
pub fn iou(pred: &TsdfVolume, gt: &TsdfVolume) -> Result<f64> {
    check_same("iou", pred.spec(), gt.spec())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        let (a, b) = (p <= 0.0, g <= 0.0);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean `|pred - gt| / truncation` over all voxels.
pub fn l1_error(pred: &TsdfVolume, gt: &TsdfVolume) -> Result<f64> {
    check_same("l1_error", pred.spec(), gt.spec())?;
    let t = gt.spec().truncation;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &g)| (p as f64 - g as f64).abs() / t)
        .sum();
    Ok(sum / gt.values().len() as f64)
}

const FAR: f64 = 1e12;

/// Exact squared distance transform of a 1D sampled function (lower
/// envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let sect = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..f.len() {
        let mut s = sect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = sect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (voxel units) from every voxel to the nearest
/// set voxel of `occ`; `FAR` everywhere if nothing is set.
pub fn squared_distance_transform(occ: &[bool], edge: usize) -> Vec<f64> {
    let g = edge;
    let mut d: Vec<f64> = occ.iter().map(|&o| if o { 0.0 } else { FAR }).collect();
    let mut f = vec![0.0; g];
    let mut out = vec![0.0; g];
    let mut v = vec![0usize; g];
    let mut z = vec![0.0; g + 1];
    for (stride, outer) in [(1usize, [g, g * g]), (g, [1, g * g]), (g * g, [1, g])] {
        for a in 0..g {
            for b in 0..g {
                let base = a * outer[0] + b * outer[1];
                for i in 0..g {
                    f[i] = d[base + i * stride];
                }
                edt_1d(&f, &mut out, &mut v, &mut z);
                for i in 0..g {
                    d[base + i * stride] = out[i];
                }
            }
        }
    }
    d
}

fn occupied(vol: &TsdfVolume) -> Vec<bool> {
    vol.values().iter().map(|&v| v <= 0.0).collect()
}

fn directed(from: &[bool], to_dist: &[f64]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for (i, &o) in from.iter().enumerate() {
        if o {
            sum += to_dist[i].sqrt();
            n += 1;
        }
    }
    (sum, n)
}

/// Symmetric Chamfer distance between occupied voxel centers, in voxels.
pub fn chamfer(pred: &TsdfVolume, gt: &TsdfVolume) -> Result<f64> {
    check_same("chamfer", pred.spec(), gt.spec())?;
    let (p, q) = (occupied(pred), occupied(gt));
    if !p.contains(&true) || !q.contains(&true) {
        return Err(Error::Empty(
            "chamfer needs at least one occupied voxel in each volume".into(),
        ));
    }
    let g = gt.spec().edge;
    let (sp, np) = directed(&p, &squared_distance_transform(&q, g));
    let (sq, nq) = directed(&q, &squared_distance_transform(&p, g));
    Ok(0.5 * (sp / np as f64 + sq / nq as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iou: f64,
    /// `None` when either volume has no occupied voxel.
    pub cd: Option<f64>,
    pub l1: f64,
}

pub fn metrics(pred: &TsdfVolume, gt: &TsdfVolume) -> Result<Metrics> {
    let cd = match chamfer(pred, gt) {
        Ok(v) => Some(v),
        Err(Error::Empty(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Metrics {
        iou: iou(pred, gt)?,
        cd,
        l1: l1_error(pred, gt)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub split: Option<Split>,
    pub category: Option<String>,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    /// `"all"` or a split name.
    pub split: String,
    pub count: usize,
    pub iou: f64,
    /// Mean over samples with a defined Chamfer distance.
    pub cd: Option<f64>,
    pub cd_count: usize,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleMetrics>,
    pub splits: Vec<SplitSummary>,
    pub config: serde_json::Value,
}

fn summarize(name: &str, rows: &[&SampleMetrics]) -> SplitSummary {
    let n = rows.len().max(1) as f64;
    let cds: Vec<f64> = rows.iter().filter_map(|r| r.metrics.cd).collect();
    SplitSummary {
        split: name.to_string(),
        count: rows.len(),
        iou: rows.iter().map(|r| r.metrics.iou).sum::<f64>() / n,
        cd: (!cds.is_empty()).then(|| cds.iter().sum::<f64>() / cds.len() as f64),
        cd_count: cds.len(),
        l1: rows.iter().map(|r| r.metrics.l1).sum::<f64>() / n,
    }
}

impl EvalReport {
    pub fn new(samples: Vec<SampleMetrics>, config: serde_json::Value) -> Self {
        let mut splits = vec![summarize("all", &samples.iter().collect::<Vec<_>>())];
        for split in Split::ALL {
            let rows: Vec<&SampleMetrics> = samples.iter().filter(|s| s.split == Some(split)).collect();
            if !rows.is_empty() {
                splits.push(summarize(split.as_str(), &rows));
            }
        }
        EvalReport {
            samples,
            splits,
            config,
        }
    }

    pub fn split(&self, name: &str) -> Option<&SplitSummary> {
        self.splits.iter().find(|s| s.split == name)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            let m = &s.metrics;
            if !(0.0..=1.0).contains(&m.iou) || m.l1 < 0.0 || m.cd.is_some_and(|c| c < 0.0) {
                return Err(Error::InvalidVolume(format!(
                    "sample {} has out-of-range metrics",
                    s.id
                )));
            }
        }
        Ok(())
    }

    /// One row per sample, then one per split summary.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        let mut out = String::from("kind,id,split,category,count,iou,cd,l1\n");
        for s in &self.samples {
            out += &format!(
                "sample,{},{},{},1,{},{},{}\n",
                s.id,
                s.split.map_or("", |x| x.as_str()),
                s.category.as_deref().unwrap_or(""),
                s.metrics.iou,
                opt(s.metrics.cd),
                s.metrics.l1
            );
        }
        for s in &self.splits {
            out += &format!("split,,{},,{},{},{},{}\n", s.split, s.count, s.iou, opt(s.cd), s.l1);
        }
        out
    }
}

/// Principal axes fitted on the masked voxels of one or more volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Up to three unit-length principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Per-component projection range over the fit set.
    pub ranges: Vec<(f64, f64)>,
}

fn masked_rows<'a>(feat: &'a FeatureVolume, mask: &'a MaskVolume) -> Result<impl Iterator<Item = Vec<f64>> + 'a> {
    if feat.spec().edge != mask.spec().edge {
        return Err(Error::shape("pca", "feature and mask grids differ"));
    }
    Ok(mask
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m >= 0.5)
        .map(move |(v, _)| (0..feat.channels()).map(|c| feat.get(c, v) as f64).collect()))
}

const RANK_TOL: f64 = 1e-10;

impl PcaBasis {
    pub fn fit(set: &[(&FeatureVolume, &MaskVolume)]) -> Result<Self> {
        let c = set
            .first()
            .ok_or_else(|| Error::Empty("PCA fit needs at least one volume".into()))?
            .0
            .channels();
        let mut rows = Vec::new();
        for (f, m) in set {
            if f.channels() != c {
                return Err(Error::shape("pca", "feature volumes differ in channel count"));
            }
            rows.extend(masked_rows(f, m)?);
        }
        if rows.is_empty() {
            return Err(Error::Empty("PCA fit set has no masked voxels".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; c];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x / n;
            }
        }
        let mut cov = DMatrix::<f64>::zeros(c, c);
        for r in &rows {
            for i in 0..c {
                let di = r[i] - mean[i];
                for j in 0..c {
                    cov[(i, j)] += di * (r[j] - mean[j]) / n;
                }
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let components: Vec<Vec<f64>> = order
            .into_iter()
            .take(3)
            .filter(|&k| eig.eigenvalues[k] > RANK_TOL * scale)
            .map(|k| eig.eigenvectors.column(k).iter().copied().collect())
            .collect();
        let mut basis = PcaBasis {
            mean,
            components,
            ranges: Vec::new(),
        };
        let k = basis.components.len();
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); k];
        for r in &rows {
            for (j, p) in basis.project(r).into_iter().enumerate() {
                ranges[j] = (ranges[j].0.min(p), ranges[j].1.max(p));
            }
        }
        basis.ranges = ranges;
        Ok(basis)
    }

    fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|u| u.iter().zip(x).zip(&self.mean).map(|((u, x), m)| u * (x - m)).sum())
            .collect()
    }

    /// RGB volume in `[0, 1]`; unmasked voxels are black and missing
    /// components are 0.5.
    pub fn colorize(&self, feat: &FeatureVolume, mask: &MaskVolume) -> Result<FeatureVolume> {
        if feat.channels() != self.mean.len() {
            return Err(Error::shape(
                "pca_colorize",
                "channel count differs from the fitted basis",
            ));
        }
        let spec = *feat.spec();
        let n = spec.voxel_count();
        let mut rgb = vec![0.0f64; 3 * n];
        let m = mask.values();
        if m.len() != n {
            return Err(Error::shape("pca_colorize", "feature and mask grids differ"));
        }
        for v in 0..n {
            if m[v] < 0.5 {
                continue;
            }
            let x: Vec<f64> = (0..feat.channels()).map(|c| feat.get(c, v) as f64).collect();
            let p = self.project(&x);
            for ch in 0..3 {
                rgb[ch * n + v] = match (p.get(ch), self.ranges.get(ch)) {
                    (Some(&val), Some(&(lo, hi))) if hi > lo => ((val - lo) / (hi - lo)).clamp(0.0, 1.0),
                    _ => 0.5,
                };
            }
        }
        FeatureVolume::from_f64(spec, 3, &rgb)
    }
}

/// Fits on `feat` alone and colorizes it.
pub fn pca_colorize(feat: &FeatureVolume, mask: &MaskVolume) -> Result<FeatureVolume> {
    PcaBasis::fit(&[(feat, mask)])?.colorize(feat, mask)
}
