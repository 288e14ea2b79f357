use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::shapes::NUM_LABELS;
use crate::error::{Error, Result};

/// Largest allowed `|cos|` between two part embeddings.
pub const MAX_EMBEDDING_COSINE: f64 = 0.5;
const MAX_DRAWS: usize = 10_000;

/// Deterministic stand-in for a frozen image feature extractor: each part
/// label maps to a fixed unit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOracle {
    seed: u64,
    feat_dim: usize,
    embeddings: Vec<Vec<f64>>,
    draws: usize,
}

impl TeacherOracle {
    /// Draws Gaussian directions until all pairs satisfy
    /// `|cos| < MAX_EMBEDDING_COSINE`.
    pub fn new(seed: u64, feat_dim: usize) -> Result<Self> {
        if feat_dim < 2 {
            return Err(Error::Config("teacher features need at least 2 channels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for draw in 1..=MAX_DRAWS {
            let embeddings: Vec<Vec<f64>> = (0..NUM_LABELS)
                .map(|_| {
                    let v: Vec<f64> = (0..feat_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / n).collect()
                })
                .collect();
            let separated = (0..NUM_LABELS).all(|i| {
                (i + 1..NUM_LABELS).all(|j| cosine(&embeddings[i], &embeddings[j]).abs() < MAX_EMBEDDING_COSINE)
            });
            if separated {
                return Ok(TeacherOracle {
                    seed,
                    feat_dim,
                    embeddings,
                    draws: draw,
                });
            }
        }
        Err(Error::Config(format!(
            "no separated embedding set found for {feat_dim} channels"
        )))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    /// Number of candidate sets drawn before one was accepted.
    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn embedding(&self, label: u8) -> &[f64] {
        &self.embeddings[label as usize]
    }

    /// Label whose embedding has the largest cosine with `v`.
    pub fn nearest_label(&self, v: &[f64]) -> u8 {
        let mut best = (f64::NEG_INFINITY, 0u8);
        for (l, e) in self.embeddings.iter().enumerate() {
            let c = cosine(v, e);
            if c > best.0 {
                best = (c, l as u8);
            }
        }
        best.1
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_are_unit_and_separated() {
        for seed in 0..10 {
            let t = TeacherOracle::new(seed, 16).unwrap();
            for l in 0..NUM_LABELS as u8 {
                let n: f64 = t.embedding(l).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-6);
                assert_eq!(t.nearest_label(t.embedding(l)), l);
            }
            assert_eq!(t, TeacherOracle::new(seed, 16).unwrap());
        }
    }
}
