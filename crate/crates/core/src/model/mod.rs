//! The four-channel graph encoder, its decoders and auxiliary heads, and
//! effect prediction.

pub mod encoder;
pub mod heads;
mod layout;
mod network;
mod predict;

pub use encoder::{encode, encode_from, encode_input, sample, sample_all, GaussianPosterior, Latents, Posteriors};
pub use heads::{aux_t, aux_y, decode_t, decode_x, decode_y, outcome_mean, HeadGroup};
pub use layout::{Channel, LatentLayout, ModelConfig};
pub use network::{Bound, GraphInput, Model};
pub use predict::{PredictOptions, Prediction};
