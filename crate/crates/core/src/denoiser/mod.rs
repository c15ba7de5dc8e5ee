//! The conditional U-Net noise predictor and the SRCNN baseline.
//!
//! # Parameter names
//!
//! Checkpoints address parameters by these stable paths (`i` is the
//! resolution stage, `j` the block within it):
//!
//! | path | shape |
//! |------|-------|
//! | `time_embed.{0,1}.{weight,bias}` | `(E, E, 1, 1)`, `(E, 1, 1, 1)` |
//! | `input.conv.{weight,bias}` | `(C, in, 3, 3)`, `(C, 1, 1, 1)` |
//! | `down.i.block.j.norm.{gain,shift}` | `(c_in, 1, 1, 1)` |
//! | `down.i.block.j.conv.{weight,bias}` | `(C, c_in, 3, 3)`, `(C, 1, 1, 1)` |
//! | `down.i.block.j.temb.{weight,bias}` | `(C, E, 1, 1)`, `(C, 1, 1, 1)` |
//! | `down.i.block.j.skip.{weight,bias}` | `(C, c_in, 1, 1)` (only when `c_in != C`) |
//! | `down.i.downsample.conv.{weight,bias}` | `(C, C, 3, 3)`, stride 2 |
//! | `mid.block.j.*` | as above |
//! | `up.i.block.j.*` | as above; block 0 takes the skip concatenation, `c_in = 2C` |
//! | `out.norm.{gain,shift}`, `out.conv.{weight,bias}` | `(1, C, 3, 3)` |
//! | `srcnn.conv{1,2,3}.{weight,bias}` | `9x9/64`, `5x5/32`, `5x5/1` |
//!
//! `C` is `base_channels` at every stage and `E` is `time_embed_dim`. The
//! default configuration (`C = 32`, depth 2, `E = 128`, 3 input channels)
//! has 209 889 parameters; SRCNN has 57 281.

mod embedding;
mod params;
mod srcnn;
mod unet;

pub use embedding::time_embedding;
pub use params::{ParamId, ParamStore};
pub use srcnn::{Srcnn, SrcnnTape};
pub use unet::{UNet, UNetConfig, UNetTape};
