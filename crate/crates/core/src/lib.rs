// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod bench;
pub mod cg;
pub mod config;
pub mod data;
pub mod distrib;
pub mod error;
pub mod experiment;
pub mod lattice;
pub mod loss;
pub mod model;
pub mod optim;
pub mod param;
pub mod synth;

pub use error::{Error, Result};
pub use param::{FrameMatrix, ParamVector, Precision};
