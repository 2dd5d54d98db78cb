//! Symbolic regression with transformers: expression trees, synthetic data
//! generation, a small autodiff tensor core, the encoder-decoder model and
//! its training loop, tree edit distance, and the evaluation protocol.

pub mod datagen;
pub mod evalbench;
pub mod expr;
pub mod model;
pub mod nn;
pub mod seed;
pub mod simplify;
pub mod train;
pub mod treedist;

pub use expr::{ExprTree, Token, TokenSequence};
