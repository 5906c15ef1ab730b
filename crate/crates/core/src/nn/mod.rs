//! Layer building blocks over the autodiff tape.

mod attention;
pub mod init;
mod layers;
mod posenc;

pub use attention::{attention_weights, scaled_dot_attention, MultiHeadAttention};
pub use layers::{Conv2d, ConvSpec, ConvTranspose2d, LayerNorm, Linear, Mlp};
pub use posenc::sinusoid_2d;
