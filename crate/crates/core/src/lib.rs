//! Deepfake image detection over a unified patch/explanation graph.
//!
//! An image is cut into an `n`x`n` grid of patches; each patch becomes a node
//! whose feature averages the embedding of the patch and of its DCT
//! spectrum. Explanation sentences that reference grid cells (`{B3,B4}: ...`)
//! become word graphs linked to the patches they mention. A three-layer,
//! two-head graph attention network classifies the combined graph as real or
//! fake.

pub mod attacks;
pub mod dct;
pub mod dualgraph;
pub mod embed;
pub mod error;
pub mod gnn;
pub mod io;
pub mod pipeline;
pub mod raster;
pub mod textgraph;

pub use error::{Error, ErrorClass, Result};
