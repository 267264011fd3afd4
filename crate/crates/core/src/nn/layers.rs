//! Parameterized building blocks. Each layer only holds parameter ids and
//! dimensions; values live in the [`ParamStore`] the tape borrows.

use crate::error::{Error, Result};
use crate::nn::params::{InitSpec, ParamId, ParamInit};
use crate::nn::tape::{Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(init: &mut ParamInit<S>, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let spec = InitSpec::UniformFanIn { fan_in: in_dim };
        let w = init.add(format!("{name}.w"), in_dim, out_dim, spec);
        let b = bias.then(|| init.add(format!("{name}.b"), 1, out_dim, spec));
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub n: usize,
    pub dim: usize,
}

impl Embedding {
    /// Word-embedding table initialized N(0, std).
    pub fn new<S: Scalar>(init: &mut ParamInit<S>, name: &str, n: usize, dim: usize, std: f64) -> Self {
        let table = init.add(format!("{name}.table"), n, dim, InitSpec::Normal { std });
        Embedding { table, n, dim }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.n) {
            return Err(Error::Index {
                what: "embedding",
                index: bad,
                size: self.n,
            });
        }
        let t = tape.param(self.table);
        tape.select_rows(t, ids)
    }
}

/// Gated recurrent unit, gate order (reset, update, candidate).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub x_proj: Linear,
    pub h_proj: Linear,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<S: Scalar>(init: &mut ParamInit<S>, name: &str, in_dim: usize, hidden: usize) -> Self {
        GruCell {
            x_proj: Linear::new(init, &format!("{name}.x"), in_dim, 3 * hidden, true),
            h_proj: Linear::new(init, &format!("{name}.h"), hidden, 3 * hidden, true),
            hidden,
        }
    }

    pub fn step<S: Scalar>(&self, tape: &mut Tape<S>, x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let gx = self.x_proj.forward(tape, x)?;
        let gh = self.h_proj.forward(tape, h)?;
        let xr = tape.slice_cols(gx, 0, 2 * hd)?;
        let hr = tape.slice_cols(gh, 0, 2 * hd)?;
        let rz = tape.add(xr, hr)?;
        let rz = tape.sigmoid(rz);
        let r = tape.slice_cols(rz, 0, hd)?;
        let z = tape.slice_cols(rz, hd, hd)?;
        let xn = tape.slice_cols(gx, 2 * hd, hd)?;
        let hn = tape.slice_cols(gh, 2 * hd, hd)?;
        let rhn = tape.mul(r, hn)?;
        let n = tape.add(xn, rhn)?;
        let n = tape.tanh(n);
        // h' = n + z * (h - n)
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }

    /// Runs over the rows of `xs` from a zero state, returning all hidden states (rows).
    pub fn run<S: Scalar>(&self, tape: &mut Tape<S>, xs: Var) -> Result<Var> {
        let steps = tape.shape(xs).0;
        let mut h = tape.constant(crate::tensor::Tensor::zeros(1, self.hidden));
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = tape.slice_rows(xs, t, 1)?;
            h = self.step(tape, x, h)?;
            outs.push(h);
        }
        tape.concat_rows(&outs)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// LSTM cell, gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub x_proj: Linear,
    pub h_proj: Linear,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<S: Scalar>(init: &mut ParamInit<S>, name: &str, in_dim: usize, hidden: usize) -> Self {
        LstmCell {
            x_proj: Linear::new(init, &format!("{name}.x"), in_dim, 4 * hidden, true),
            h_proj: Linear::new(init, &format!("{name}.h"), hidden, 4 * hidden, false),
            hidden,
        }
    }

    pub fn step<S: Scalar>(&self, tape: &mut Tape<S>, x: Var, state: LstmState) -> Result<LstmState> {
        let hd = self.hidden;
        let gx = self.x_proj.forward(tape, x)?;
        let gh = self.h_proj.forward(tape, state.h)?;
        let gates = tape.add(gx, gh)?;
        let ifg = tape.slice_cols(gates, 0, 2 * hd)?;
        let ifg = tape.sigmoid(ifg);
        let i = tape.slice_cols(ifg, 0, hd)?;
        let f = tape.slice_cols(ifg, hd, hd)?;
        let g = tape.slice_cols(gates, 2 * hd, hd)?;
        let g = tape.tanh(g);
        let o = tape.slice_cols(gates, 3 * hd, hd)?;
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, state.c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<S: Scalar>(init: &mut ParamInit<S>, name: &str, dim: usize) -> Self {
        let gain = init.store.add(format!("{name}.gain"), crate::tensor::Tensor::filled(1, dim, S::one()));
        let bias = init.add(format!("{name}.bias"), 1, dim, InitSpec::Zeros);
        LayerNorm { gain, bias, dim }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x, Self::EPS);
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        let y = tape.mul_row(n, g)?;
        tape.add_row(y, b)
    }
}

/// Additive attention: score = tanh(q·W_q + k·W_k)·w, weights = softmax(score),
/// output = Σ weight · (k·W_v).
#[derive(Clone, Debug)]
pub struct AdditiveAttention {
    pub query_proj: Linear,
    pub key_proj: Linear,
    pub score: Linear,
    pub value_proj: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOut {
    pub output: Var,
    pub weights: Var,
}

impl AdditiveAttention {
    pub fn new<S: Scalar>(
        init: &mut ParamInit<S>,
        name: &str,
        query_dim: usize,
        key_dim: usize,
        attn_dim: usize,
        out_dim: usize,
    ) -> Self {
        AdditiveAttention {
            query_proj: Linear::new(init, &format!("{name}.query"), query_dim, attn_dim, false),
            key_proj: Linear::new(init, &format!("{name}.key"), key_dim, attn_dim, true),
            score: Linear::new(init, &format!("{name}.score"), attn_dim, 1, false),
            value_proj: Linear::new(init, &format!("{name}.value"), key_dim, out_dim, false),
        }
    }

    /// Attends every row of `queries` (m×dq) over `keys` (n×dk). Returns m×out outputs
    /// and m×n weights.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, queries: Var, keys: Var) -> Result<AttentionOut> {
        let (m, n) = (tape.shape(queries).0, tape.shape(keys).0);
        if n == 0 {
            return Err(Error::shape("additive attention keys", ">= 1 row", 0));
        }
        let q = self.query_proj.forward(tape, queries)?;
        let k = self.key_proj.forward(tape, keys)?;
        let pre = tape.pairwise_add(q, k)?;
        let act = tape.tanh(pre);
        let s = self.score.forward(tape, act)?;
        let s = tape.reshape(s, m, n)?;
        let weights = tape.softmax_rows(s);
        let v = self.value_proj.forward(tape, keys)?;
        let output = tape.matmul(weights, v)?;
        Ok(AttentionOut { output, weights })
    }
}

/// Multi-head scaled dot-product attention with optional causal and key masks.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub model_dim: usize,
}

pub struct MhaOut {
    pub output: Var,
    /// One m×n weight matrix per head.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar>(
        init: &mut ParamInit<S>,
        name: &str,
        query_dim: usize,
        kv_dim: usize,
        model_dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || model_dim % heads != 0 {
            return Err(Error::Config(format!(
                "model dim {model_dim} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(init, &format!("{name}.q"), query_dim, model_dim, true),
            k: Linear::new(init, &format!("{name}.k"), kv_dim, model_dim, true),
            v: Linear::new(init, &format!("{name}.v"), kv_dim, model_dim, true),
            o: Linear::new(init, &format!("{name}.o"), model_dim, model_dim, true),
            heads,
            model_dim,
        })
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        queries: Var,
        keys: Var,
        causal: bool,
        key_mask: Option<&[bool]>,
    ) -> Result<MhaOut> {
        let (m, n) = (tape.shape(queries).0, tape.shape(keys).0);
        if let Some(km) = key_mask {
            if km.len() != n {
                return Err(Error::shape("key mask", n, km.len()));
            }
        }
        let mask: Option<Vec<bool>> = if causal || key_mask.is_some() {
            Some(
                (0..m * n)
                    .map(|idx| {
                        let (i, j) = (idx / n, idx % n);
                        (!causal || j <= i) && key_mask.map_or(true, |km| km[j])
                    })
                    .collect(),
            )
        } else {
            None
        };
        let q = self.q.forward(tape, queries)?;
        let k = self.k.forward(tape, keys)?;
        let v = self.v.forward(tape, keys)?;
        let dh = self.model_dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let kt = tape.transpose(kh);
            let s = tape.matmul(qh, kt)?;
            let s = tape.scale(s, scale);
            let w = tape.softmax_rows_masked(s, mask.as_deref())?;
            outs.push(tape.matmul(w, vh)?);
            weights.push(w);
        }
        let cat = tape.concat_cols(&outs)?;
        let output = self.o.forward(tape, cat)?;
        Ok(MhaOut { output, weights })
    }
}

/// Same-padded 1-D convolution along the row axis with kernel size 3.
#[derive(Clone, Debug)]
pub struct DilatedConv1d {
    /// (3·in)×out, taps stacked in order offset -d, 0, +d.
    pub proj: Linear,
    pub dilation: usize,
}

impl DilatedConv1d {
    pub const KERNEL: usize = 3;

    pub fn new<S: Scalar>(init: &mut ParamInit<S>, name: &str, in_dim: usize, out_dim: usize, dilation: usize) -> Self {
        DilatedConv1d {
            proj: Linear::new(init, name, Self::KERNEL * in_dim, out_dim, true),
            dilation,
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let d = self.dilation as isize;
        let before = tape.shift_rows(x, -d);
        let after = tape.shift_rows(x, d);
        let stacked = tape.concat_cols(&[before, x, after])?;
        self.proj.forward(tape, stacked)
    }
}

/// Inverted dropout: zeroes each entry with probability `p` and rescales the
/// survivors by 1/(1-p). Identity when `p` is 0.
pub fn dropout<S: Scalar, R: rand::Rng>(tape: &mut Tape<S>, x: Var, p: f64, rng: &mut R) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.shape(x);
    let keep = S::of(1.0 / (1.0 - p));
    let mask = Tensor::from_fn(r, c, |_, _| if rng.random::<f64>() < p { S::zero() } else { keep });
    let mask = tape.constant(mask);
    tape.mul(x, mask)
}
