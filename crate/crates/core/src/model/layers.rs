use std::rc::Rc;

use rand::Rng;

use crate::chunk::ChunkLayout;
use crate::diff::{Binding, ConvGeom, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::hilbert::HilbertOrder;
use crate::ssm::{LinearMap, SsmParams, VoxelStateParams};

/// 3-D convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    w: ParamId,
    b: ParamId,
    geom: ConvGeom,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let k = geom.kernel;
        let fan_in = cin * k * k * k;
        let w = store.add_uniform(
            format!("{name}.weight"),
            &[cout, cin, k, k, k],
            fan_in,
            3f64.sqrt(),
            rng,
        )?;
        let b = store.add_filled(format!("{name}.bias"), &[cout], 0.0)?;
        Ok(Conv { w, b, geom })
    }

    pub fn pointwise(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<Self> {
        Conv::new(store, name, cin, cout, ConvGeom::new(1, 1, 0), rng)
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        g.conv3(x, p.var(self.w), p.var(self.b), self.geom)
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }
}

/// Transposed 3-D convolution, weight layout `[Cin, Cout, k, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose {
    w: ParamId,
    b: ParamId,
    geom: ConvGeom,
}

impl ConvTranspose {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let k = geom.kernel;
        let fan_in = cin * (k / geom.stride.max(1)).max(1).pow(3);
        let w = store.add_uniform(
            format!("{name}.weight"),
            &[cin, cout, k, k, k],
            fan_in,
            3f64.sqrt(),
            rng,
        )?;
        let b = store.add_filled(format!("{name}.bias"), &[cout], 0.0)?;
        Ok(ConvTranspose { w, b, geom })
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        g.conv_transpose3(x, p.var(self.w), p.var(self.b), self.geom)
    }
}

/// Row-wise affine map `[rows, in] -> [rows, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Result<Self> {
        let w = store.add_uniform(format!("{name}.weight"), &[outputs, inputs], inputs, 1.0, rng)?;
        let b = store.add_filled(format!("{name}.bias"), &[outputs], 0.0)?;
        Ok(Linear { w, b })
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.w), p.var(self.b))
    }

    pub fn zero(&self, store: &mut ParamStore) {
        for id in [self.w, self.b] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn to_map(&self, store: &ParamStore) -> LinearMap {
        let w = store.get(self.w);
        LinearMap {
            inputs: w.shape()[1],
            outputs: w.shape()[0],
            weight: w.data().to_vec(),
            bias: store.get(self.b).data().to_vec(),
        }
    }
}

/// Layer norm followed by a diagonal selective SSM over a `[L, C]` sequence.
#[derive(Debug, Clone)]
pub struct SsmBlock {
    channels: usize,
    state_dim: usize,
    norm_gain: ParamId,
    norm_bias: ParamId,
    a_log: ParamId,
    skip: ParamId,
    delta_w: ParamId,
    delta_b: ParamId,
    b_w: ParamId,
    c_w: ParamId,
}

impl SsmBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        state_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let norm_gain = store.add_filled(format!("{name}.norm.gain"), &[channels], 1.0)?;
        let norm_bias = store.add_filled(format!("{name}.norm.bias"), &[channels], 0.0)?;
        let a_log = store.add(
            format!("{name}.a_log"),
            Tensor::from_fn(&[channels, state_dim], |i| ((i % state_dim) as f64 + 1.0).ln()),
        )?;
        let skip = store.add_filled(format!("{name}.skip"), &[channels], 1.0)?;
        let delta_w = store.add_uniform(
            format!("{name}.delta.weight"),
            &[channels, channels],
            channels,
            0.5,
            rng,
        )?;
        // step sizes log-uniform in [1e-3, 1e-1]
        let delta_b = store.add(
            format!("{name}.delta.bias"),
            Tensor::from_fn(&[channels], |_| {
                let dt = (rng.gen_range(1e-3f64.ln()..0.1f64.ln())).exp();
                dt.exp_m1().ln()
            }),
        )?;
        let b_w = store.add_uniform(format!("{name}.b.weight"), &[state_dim, channels], channels, 1.0, rng)?;
        let c_w = store.add_uniform(format!("{name}.c.weight"), &[state_dim, channels], channels, 1.0, rng)?;
        Ok(SsmBlock {
            channels,
            state_dim,
            norm_gain,
            norm_bias,
            a_log,
            skip,
            delta_w,
            delta_b,
            b_w,
            c_w,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `seq [L, C] -> [L, C]`.
    pub fn forward(&self, g: &mut Graph, p: &Binding, seq: Var) -> Result<Var> {
        let n = g.layer_norm(seq, p.var(self.norm_gain), p.var(self.norm_bias))?;
        let dl = g.linear(n, p.var(self.delta_w), p.var(self.delta_b))?;
        let delta = g.softplus(dl);
        let ea = g.exp(p.var(self.a_log));
        let a = g.scale(ea, -1.0);
        let zero = g.constant(Tensor::zeros(&[self.state_dim]));
        let b = g.linear(n, p.var(self.b_w), zero)?;
        let c = g.linear(n, p.var(self.c_w), zero)?;
        g.scan(n, delta, a, b, c, p.var(self.skip))
    }

    /// Zeroes the output path (`C` projection and skip) so the block maps
    /// everything to zero.
    pub fn zero_output(&self, store: &mut ParamStore) {
        for id in [self.c_w, self.skip] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Plain-parameter view for the non-differentiable operators.
    pub fn to_params(&self, store: &ParamStore) -> VoxelStateParams {
        let (c, n) = (self.channels, self.state_dim);
        let ssm = SsmParams {
            channels: c,
            state_dim: n,
            a_diag: store.get(self.a_log).data().iter().map(|v| -v.exp()).collect(),
            skip: store.get(self.skip).data().to_vec(),
            delta_proj: LinearMap {
                inputs: c,
                outputs: c,
                weight: store.get(self.delta_w).data().to_vec(),
                bias: store.get(self.delta_b).data().to_vec(),
            },
            b_proj: LinearMap {
                inputs: c,
                outputs: n,
                weight: store.get(self.b_w).data().to_vec(),
                bias: vec![0.0; n],
            },
            c_proj: LinearMap {
                inputs: c,
                outputs: n,
                weight: store.get(self.c_w).data().to_vec(),
                bias: vec![0.0; n],
            },
        };
        VoxelStateParams {
            norm_gain: store.get(self.norm_gain).data().to_vec(),
            norm_bias: store.get(self.norm_bias).data().to_vec(),
            ssm,
        }
    }
}

/// Voxel state operator on a `[C, G, G, G]` volume (Hilbert order).
#[derive(Debug, Clone)]
pub struct VoxelState {
    block: SsmBlock,
    edge: usize,
    to_seq: Rc<[usize]>,
    to_vol: Rc<[usize]>,
}

impl VoxelState {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        state_dim: usize,
        edge: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let order = HilbertOrder::build(edge)?;
        Ok(VoxelState {
            block: SsmBlock::new(store, name, channels, state_dim, rng)?,
            edge,
            to_seq: order.serialize_map(channels).into(),
            to_vol: order.deserialize_map(channels).into(),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let c = self.block.channels();
        let g3 = self.edge.pow(3);
        let seq = g.gather(x, self.to_seq.clone(), &[g3, c])?;
        let y = self.block.forward(g, p, seq)?;
        g.gather(y, self.to_vol.clone(), &[c, self.edge, self.edge, self.edge])
    }

    pub fn block(&self) -> &SsmBlock {
        &self.block
    }
}

/// Chunk operator: fold `R^3` chunks to tokens, embed, scan over the chunk
/// grid in Hilbert order, unembed and unfold.
#[derive(Debug, Clone)]
pub struct ChunkState {
    chunk: usize,
    channels: usize,
    edge: usize,
    token_in: usize,
    chunks: usize,
    embed: Linear,
    block: SsmBlock,
    unembed: Linear,
    to_rows: Rc<[usize]>,
    to_vol: Rc<[usize]>,
}

impl ChunkState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        edge: usize,
        chunk: usize,
        token_dim: usize,
        state_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let layout = ChunkLayout::new(edge, chunk, channels)?;
        let order = HilbertOrder::build(layout.chunks_per_axis)?;
        let td = layout.token_dim();
        let nb = order.len();
        let fold = layout.chunkify_map();
        // rows in Hilbert order of the chunk grid: row k, column t
        let to_rows: Rc<[usize]> = (0..nb * td)
            .map(|i| fold[(i % td) * nb + order.voxel_at(i / td)])
            .collect();
        let to_vol: Rc<[usize]> = layout
            .unchunkify_map()
            .into_iter()
            .map(|j| order.position_of(j % nb) * td + j / nb)
            .collect();
        Ok(ChunkState {
            chunk,
            channels,
            edge,
            token_in: td,
            chunks: nb,
            embed: Linear::new(store, &format!("{name}.embed"), td, token_dim, rng)?,
            block: SsmBlock::new(store, &format!("{name}.ssm"), token_dim, state_dim, rng)?,
            unembed: Linear::new(store, &format!("{name}.unembed"), token_dim, td, rng)?,
            to_rows,
            to_vol,
        })
    }

    pub fn chunk(&self) -> usize {
        self.chunk
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let rows = g.gather(x, self.to_rows.clone(), &[self.chunks, self.token_in])?;
        let tokens = self.embed.forward(g, p, rows)?;
        let mixed = self.block.forward(g, p, tokens)?;
        let back = self.unembed.forward(g, p, mixed)?;
        g.gather(
            back,
            self.to_vol.clone(),
            &[self.channels, self.edge, self.edge, self.edge],
        )
    }

    pub fn zero_output(&self, store: &mut ParamStore) {
        self.unembed.zero(store);
    }

    pub fn parts(&self) -> (&Linear, &SsmBlock, &Linear) {
        (&self.embed, &self.block, &self.unembed)
    }
}

/// `phi(f) + psi_a(f) + psi_b(f) + f`.
#[derive(Debug, Clone)]
pub struct MultiScale {
    full: VoxelState,
    branch_a: ChunkState,
    branch_b: ChunkState,
}

impl MultiScale {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        edge: usize,
        chunks: (usize, usize),
        token_dim: usize,
        state_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(MultiScale {
            full: VoxelState::new(store, &format!("{name}.full"), channels, state_dim, edge, rng)?,
            branch_a: ChunkState::new(
                store,
                &format!("{name}.chunk_a"),
                channels,
                edge,
                chunks.0,
                token_dim,
                state_dim,
                rng,
            )?,
            branch_b: ChunkState::new(
                store,
                &format!("{name}.chunk_b"),
                channels,
                edge,
                chunks.1,
                token_dim,
                state_dim,
                rng,
            )?,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Binding, x: Var) -> Result<Var> {
        let f = self.full.forward(g, p, x)?;
        let a = self.branch_a.forward(g, p, x)?;
        let b = self.branch_b.forward(g, p, x)?;
        let s = g.add(f, a)?;
        let s = g.add(s, b)?;
        g.add(s, x)
    }

    pub fn zero_outputs(&self, store: &mut ParamStore) {
        self.full.block().zero_output(store);
        self.branch_a.zero_output(store);
        self.branch_b.zero_output(store);
    }

    pub fn branches(&self) -> (&VoxelState, &ChunkState, &ChunkState) {
        (&self.full, &self.branch_a, &self.branch_b)
    }
}
