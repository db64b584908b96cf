//! Networked observational data: features, an undirected graph, treatment,
//! outcome and (for simulated data) the noiseless potential-outcome means.

mod dataset;
mod io;
mod normalize;
mod split;

pub use dataset::{Dataset, Truth};
pub use io::{load, save};
pub use normalize::normalize_adjacency;
pub use split::{split_sizes, SplitIndex, SplitName};
