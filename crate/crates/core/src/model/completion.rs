use rand::Rng;

use super::config::TrainConfig;
use super::layers::{Conv, ConvTranspose, MultiScale, VoxelState};
use super::student::{input_tensor, StudentNet, StudentOut, MODEL_EDGE};
use crate::diff::{Binding, ConvGeom, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::volume::TsdfVolume;

const FUSE_EDGE: usize = 8;

/// Graph handles produced by one completion forward pass.
#[derive(Debug, Clone, Copy)]
pub struct CompletionOut {
    /// `[1, G, G, G]` TSDF in voxel units, inside `[-trunc, trunc]`.
    pub pred: Var,
    pub student: Option<StudentOut>,
}

/// TSDF encoder + feature student, voxel-state fusion at `8^3`, a small
/// decoder, multi-scale refinement and a scaled-tanh head.
#[derive(Debug, Clone)]
pub struct CompletionNet {
    truncation: f64,
    student: Option<StudentNet>,
    enc1: Conv,
    enc2: Conv,
    dino_proj: Option<Conv>,
    phi_tsdf: Option<VoxelState>,
    phi_dino: Option<VoxelState>,
    up1: ConvTranspose,
    merge1: Conv,
    up2: ConvTranspose,
    merge2: Conv,
    refine: Option<MultiScale>,
    head: Conv,
}

impl CompletionNet {
    pub fn new(store: &mut ParamStore, cfg: &TrainConfig, truncation: f64, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate(MODEL_EDGE)?;
        let m = &cfg.model;
        let down = ConvGeom::new(3, 2, 1);
        let up = ConvGeom::new(2, 2, 0);
        let same = ConvGeom::new(3, 1, 1);
        let student = if m.use_student {
            Some(StudentNet::new(store, m.student_widths, cfg.feat_dim, rng)?)
        } else {
            None
        };
        let enc1 = Conv::new(store, "tsdf.enc1", 1, m.tsdf_width, down, rng)?;
        let enc2 = Conv::new(store, "tsdf.enc2", m.tsdf_width, m.fuse_dim, down, rng)?;
        let (dino_proj, phi_tsdf, phi_dino) = if m.use_student {
            (
                Some(Conv::pointwise(store, "fuse.dino_proj", cfg.feat_dim, m.fuse_dim, rng)?),
                Some(VoxelState::new(
                    store,
                    "fuse.phi_tsdf",
                    m.fuse_dim,
                    cfg.state_dim,
                    FUSE_EDGE,
                    rng,
                )?),
                Some(VoxelState::new(
                    store,
                    "fuse.phi_dino",
                    m.fuse_dim,
                    cfg.state_dim,
                    FUSE_EDGE,
                    rng,
                )?),
            )
        } else {
            (None, None, None)
        };
        let up1 = ConvTranspose::new(store, "dec.up1", m.fuse_dim, m.tsdf_width, up, rng)?;
        let merge1 = Conv::new(store, "dec.merge1", 2 * m.tsdf_width, m.tsdf_width, same, rng)?;
        let up2 = ConvTranspose::new(store, "dec.up2", m.tsdf_width, m.decoder_dim, up, rng)?;
        let merge2 = Conv::pointwise(store, "dec.merge2", m.decoder_dim + 1, m.decoder_dim, rng)?;
        let refine = if m.use_multiscale {
            Some(MultiScale::new(
                store,
                "refine",
                m.decoder_dim,
                MODEL_EDGE,
                (cfg.chunk_a, cfg.chunk_b),
                m.token_dim,
                cfg.state_dim,
                rng,
            )?)
        } else {
            None
        };
        let head = Conv::pointwise(store, "head", m.decoder_dim, 1, rng)?;
        Ok(CompletionNet {
            truncation,
            student,
            enc1,
            enc2,
            dino_proj,
            phi_tsdf,
            phi_dino,
            up1,
            merge1,
            up2,
            merge2,
            refine,
            head,
        })
    }

    pub fn student(&self) -> Option<&StudentNet> {
        self.student.as_ref()
    }

    pub fn refine(&self) -> Option<&MultiScale> {
        self.refine.as_ref()
    }

    /// `phi_tsdf(z_tsdf) + phi_dino(z_dino) + z_tsdf`.
    pub fn fuse(&self, g: &mut Graph, p: &Binding, z_tsdf: Var, z_dino: Var) -> Result<Var> {
        let (Some(pt), Some(pd)) = (&self.phi_tsdf, &self.phi_dino) else {
            return Err(Error::Config("fusion requires the student branch".into()));
        };
        if g.shape(z_tsdf) != g.shape(z_dino) {
            return Err(Error::shape(
                "fuse",
                format!("z_tsdf {:?} vs z_dino {:?}", g.shape(z_tsdf), g.shape(z_dino)),
            ));
        }
        let a = pt.forward(g, p, z_tsdf)?;
        let b = pd.forward(g, p, z_dino)?;
        let s = g.add(a, b)?;
        g.add(s, z_tsdf)
    }

    /// Zeroes both fusion operators' output paths.
    pub fn zero_fusion_outputs(&self, store: &mut ParamStore) {
        for phi in [&self.phi_tsdf, &self.phi_dino].into_iter().flatten() {
            phi.block().zero_output(store);
        }
    }

    pub fn zero_head(&self, store: &mut ParamStore) {
        store
            .get_mut(self.head.weight())
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }

    pub fn head_bias(&self) -> crate::diff::ParamId {
        self.head.bias()
    }

    /// `x` is the normalized `[1, 32, 32, 32]` partial scan.
    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<CompletionOut> {
        if g.shape(x) != [1, MODEL_EDGE, MODEL_EDGE, MODEL_EDGE] {
            return Err(Error::shape("complete_forward", format!("input {:?}", g.shape(x))));
        }
        let e1 = self.enc1.forward(g, p, x)?;
        let e1 = g.silu(e1);
        let z = self.enc2.forward(g, p, e1)?;
        let z_tsdf = g.silu(z);
        let (fused, student) = match (&self.student, &self.dino_proj) {
            (Some(s), Some(proj)) => {
                let out = s.forward(g, p, x)?;
                let pooled = g.avg_pool3(out.gated, MODEL_EDGE / FUSE_EDGE)?;
                let z_dino = proj.forward(g, p, pooled)?;
                (self.fuse(g, p, z_tsdf, z_dino)?, Some(out))
            }
            _ => (z_tsdf, None),
        };
        let u1 = self.up1.forward(g, p, fused)?;
        let u1 = g.silu(u1);
        let c1 = g.concat(&[u1, e1])?;
        let d1 = self.merge1.forward(g, p, c1)?;
        let d1 = g.silu(d1);
        let u2 = self.up2.forward(g, p, d1)?;
        let u2 = g.silu(u2);
        let c2 = g.concat(&[u2, x])?;
        let d2 = self.merge2.forward(g, p, c2)?;
        let mut d = g.silu(d2);
        if let Some(r) = &self.refine {
            d = r.forward(g, p, d)?;
        }
        let h = self.head.forward(g, p, d)?;
        let t = g.tanh(h);
        let pred = g.scale(t, self.truncation);
        Ok(CompletionOut { pred, student })
    }

    pub fn predict(&self, store: &ParamStore, x: &TsdfVolume) -> Result<TsdfVolume> {
        let mut g = Graph::new();
        let p = store.bind(&mut g, |_| false);
        let xv = g.constant(input_tensor(x)?);
        let out = self.forward(&mut g, &p, xv)?;
        TsdfVolume::from_clamped(*x.spec(), g.value(out.pred).to_f32())
    }
}
