//! Implicit object graph: multi-head weighted cosine similarity, ε-sparsification
//! and a residual GCN stack.

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, MultiHeadAttention, ParamId, ParamInit, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// S[i, j] = (1/K) Σ_p cos(w_p ⊙ v_i, w_p ⊙ v_j) for the K rows of `weights`.
/// Rows whose weighted vector is zero have similarity 0 to everything.
pub fn multihead_cosine<S: Scalar>(tape: &mut Tape<S>, v: Var, weights: Var) -> Result<Var> {
    let (k, f) = tape.shape(weights);
    if f != tape.shape(v).1 {
        let (t, got) = tape.shape(v);
        return Err(Error::shape("similarity input", format!("{t}x{f}"), format!("{t}x{got}")));
    }
    let mut total = None;
    for p in 0..k {
        let w = tape.slice_rows(weights, p, 1)?;
        let x = tape.mul_row(v, w)?;
        let xv = tape.value(x);
        let zero_rows = (0..xv.rows()).filter(|&i| xv.row(i).iter().all(|&e| e == S::zero())).count();
        if zero_rows > 0 {
            log::warn!("similarity head {p}: {zero_rows} zero-norm rows, cosine set to 0");
        }
        let n = tape.normalize_rows(x);
        let nt = tape.transpose(n);
        let s = tape.matmul(n, nt)?;
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    let total = total.ok_or_else(|| Error::Config("similarity needs at least one head".into()))?;
    Ok(tape.scale(total, 1.0 / k as f64))
}

/// Keeps entries ≥ ε.
pub fn epsilon_sparsify<S: Scalar>(tape: &mut Tape<S>, sim: Var, epsilon: f64) -> Var {
    tape.threshold(sim, epsilon)
}

/// X = [V, Ṽ] row-wise.
pub fn node_features<S: Scalar>(tape: &mut Tape<S>, objects: Var, latents: Var) -> Result<Var> {
    tape.concat_cols(&[objects, latents])
}

/// D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.
pub fn normalized_adjacency<S: Scalar>(tape: &mut Tape<S>, adj: Var) -> Result<Var> {
    let (t, c) = tape.shape(adj);
    if t != c {
        return Err(Error::shape("adjacency", "square", format!("{t}x{c}")));
    }
    let eye = tape.constant(Tensor::identity(t));
    let a_hat = tape.add(adj, eye)?;
    let deg = tape.row_sum(a_hat);
    let dinv = tape.powf(deg, -0.5);
    let dt = tape.transpose(dinv);
    let outer = tape.matmul(dinv, dt)?;
    tape.mul(a_hat, outer)
}

/// One residual spectral GCN layer.
#[derive(Clone, Debug)]
pub struct GcnLayer {
    pub weight: Linear,
    /// Projection on the residual branch when input and output widths differ.
    pub shortcut: Option<Linear>,
}

impl GcnLayer {
    pub fn new<S: Scalar>(init: &mut ParamInit<S>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        GcnLayer {
            weight: Linear::new(init, &format!("{name}.w"), in_dim, out_dim, false),
            shortcut: (in_dim != out_dim).then(|| Linear::new(init, &format!("{name}.shortcut"), in_dim, out_dim, false)),
        }
    }

    /// (ReLU(N X W) + X) / √2 with N the normalized adjacency.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, x: Var, norm_adj: Var) -> Result<Var> {
        let prop = tape.matmul(norm_adj, x)?;
        let h = self.weight.forward(tape, prop)?;
        let h = tape.relu(h);
        let res = match &self.shortcut {
            Some(s) => s.forward(tape, x)?,
            None => x,
        };
        let sum = tape.add(h, res)?;
        Ok(tape.scale(sum, std::f64::consts::FRAC_1_SQRT_2))
    }
}

#[derive(Clone, Debug)]
pub struct GraphNet {
    /// K × F_h similarity head weights.
    pub heads: ParamId,
    pub epsilon: f64,
    pub layers: Vec<GcnLayer>,
}

#[derive(Clone, Copy, Debug)]
pub struct ObjectGraph {
    pub similarity: Var,
    pub adjacency: Var,
}

impl GraphNet {
    pub fn new<S: Scalar>(
        init: &mut ParamInit<S>,
        latent_dim: usize,
        node_dim: usize,
        out_dim: usize,
        heads: usize,
        layers: usize,
        epsilon: f64,
    ) -> Self {
        let noise = init.tensor(heads, latent_dim, crate::nn::InitSpec::Normal { std: 0.1 });
        let heads = init.store.add("graph.heads", noise.map(|x| x + S::one()));
        let layers = (0..layers)
            .map(|l| GcnLayer::new(init, &format!("graph.gcn{l}"), if l == 0 { node_dim } else { out_dim }, out_dim))
            .collect();
        GraphNet { heads, epsilon, layers }
    }

    pub fn build_graph<S: Scalar>(&self, tape: &mut Tape<S>, aligned: Var) -> Result<ObjectGraph> {
        let w = tape.param(self.heads);
        let similarity = multihead_cosine(tape, aligned, w)?;
        let adjacency = epsilon_sparsify(tape, similarity, self.epsilon);
        Ok(ObjectGraph { similarity, adjacency })
    }

    /// Runs the GCN stack on node features `x` over `adjacency`.
    pub fn encode<S: Scalar>(&self, tape: &mut Tape<S>, x: Var, adjacency: Var) -> Result<Var> {
        let norm = normalized_adjacency(tape, adjacency)?;
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, h, norm)?;
        }
        Ok(h)
    }
}

/// Transformer encoder over the object set, replacing the graph in one ablation.
#[derive(Clone, Debug)]
pub struct ObjectTransformer {
    pub input: Linear,
    pub layers: Vec<EncoderLayer>,
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

impl ObjectTransformer {
    pub fn new<S: Scalar>(
        init: &mut ParamInit<S>,
        in_dim: usize,
        dim: usize,
        heads: usize,
        layers: usize,
    ) -> Result<Self> {
        let input = Linear::new(init, "objenc.input", in_dim, dim, true);
        let layers = (0..layers)
            .map(|l| {
                let n = format!("objenc.layer{l}");
                Ok(EncoderLayer {
                    attn: MultiHeadAttention::new(init, &format!("{n}.attn"), dim, dim, dim, heads)?,
                    norm1: LayerNorm::new(init, &format!("{n}.norm1"), dim),
                    ff1: Linear::new(init, &format!("{n}.ff1"), dim, 2 * dim, true),
                    ff2: Linear::new(init, &format!("{n}.ff2"), 2 * dim, dim, true),
                    norm2: LayerNorm::new(init, &format!("{n}.norm2"), dim),
                })
            })
            .collect::<Result<_>>()?;
        Ok(ObjectTransformer { input, layers })
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let mut h = self.input.forward(tape, x)?;
        for l in &self.layers {
            let a = l.attn.forward(tape, h, h, false, None)?.output;
            let r = tape.add(a, h)?;
            h = l.norm1.forward(tape, r)?;
            let f = l.ff1.forward(tape, h)?;
            let f = tape.relu(f);
            let f = l.ff2.forward(tape, f)?;
            let r = tape.add(f, h)?;
            h = l.norm2.forward(tape, r)?;
        }
        Ok(h)
    }
}
