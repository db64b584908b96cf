//! Disentangled variational graph autoencoder for individual treatment
//! effect estimation on networked observational data.
//!
//! Four GCN encoder channels infer instrumental (`z_t`), confounding
//! (`z_c`), adjustment (`z_y`) and noise (`z_o`) factors from node features
//! and the graph. Decoders reconstruct features, treatment and outcome; an
//! HSIC penalty keeps the channels independent and an entropic Wasserstein
//! penalty balances `z_y` across treatment arms. Effects are predicted from
//! `z_c` and `z_y` only.

pub mod diffcore;
pub mod error;
pub mod eval;
pub mod graphdata;
pub mod model;
pub mod objectives;
pub mod seeding;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
