//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Tape`] records one forward pass; [`Tape::backward`] returns gradients
//! for every tracked leaf. Parameters live in a [`ParamStore`] and are bound
//! to a tape with [`Tape::param`]. Evaluation is single-threaded and
//! deterministic: the same inputs always give bit-identical values and
//! gradients.

pub mod conv;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;

pub use conv::ConvGeom;
pub use nn::{Activation, Conv2d, ConvTranspose2d, GruCell, Linear, Mlp};
pub use optim::{clip_global_norm, global_norm, Adam};
pub use params::{glorot, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

/// Dense row-major matrix used for every value on the tape.
pub type Matrix = ndarray::Array2<f64>;
