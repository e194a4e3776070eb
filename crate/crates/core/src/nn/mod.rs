//! Blur decomposition network: position encoding, temporal and spatial
//! embeddings, the INR video decoder and self-recursive extraction.

mod encoding;
mod layers;
mod model;
mod params;

pub use encoding::{position_encode, PositionEncoding};
pub use model::{Bdinr, Mode, NetworkConfig};
pub use params::ParamStore;
