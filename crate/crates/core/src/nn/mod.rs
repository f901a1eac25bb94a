//! Minimal feed-forward network toolkit with hand-written backward passes.

mod adam;
mod layers;
mod sequential;

pub use adam::Adam;
pub use layers::{Activation, Conv2d, ConvTranspose2d, Dense, Dims, Layer, Window};
pub use sequential::{LayerSpec, Sequential, Tape};
