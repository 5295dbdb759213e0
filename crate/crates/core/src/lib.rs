//! Latent-equation-embedding symbolic regression: a joint symbolic/numeric
//! encoder, an expression decoder, and a differentiable evaluation decoder
//! over a shared latent space, searched by iterative re-encoding plus latent
//! gradient refinement.

pub mod bench;
pub mod constfit;
pub mod datagen;
pub mod expr;
pub mod model;
pub mod search;
pub mod train;

pub use expr::{Expr, TokenSeq};
