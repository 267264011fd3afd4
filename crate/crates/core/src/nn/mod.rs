//! Differentiable primitives, parameter storage, gradient checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layers::{
    dropout, AdditiveAttention, AttentionOut, DilatedConv1d, Embedding, GruCell, LayerNorm, Linear, LstmCell, LstmState,
    MhaOut, MultiHeadAttention,
};
pub use params::{Gradients, InitSpec, ParamId, ParamInit, ParamStore, Parameter};
pub use tape::{Tape, Var};
