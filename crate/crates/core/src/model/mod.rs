//! The two-level vision transformer: tokenisation, global and local encoder
//! stacks, fusion, decoder, and patch reassembly.

mod config;
mod count;
pub mod layers;
mod params;
mod tlvit;
mod tokenize;

pub use config::{AblationRow, ModelConfig, ABLATION_ROWS};
pub use count::{parameter_count, ParameterCount, COUNTING_BOUNDARY};
pub use params::{EncoderLayer, Linear, Norm, ParamKind, Shape, TlVitParams, INIT_STD};
pub use tlvit::{forward_pass, tokenize_batch, ForwardPass, TlVit};
pub use tokenize::{patchify, patchify_batch, stitch, subpatchify, subpatchify_batch};
