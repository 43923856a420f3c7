//! Dynamic embedding trajectories for temporal user–item interaction
//! networks.
//!
//! Every user and item carries a dynamic embedding that two coupled
//! recurrent cells update at each interaction. Between interactions a user
//! embedding is projected forward in time, and a prediction head maps the
//! projection to the embedding of the item the user is expected to pick
//! next. Training walks the stream in t-Batches: ordered sets of
//! interactions that share no user and no item.
//!
//! ```
//! use traj::{data::chronological_split, synth, train::{run_training, TrainConfig}};
//!
//! let ds = synth::planted_cycles(7, 8, 10, 400, 0.1);
//! let split = chronological_split(ds.len(), 80.0, 10.0)?;
//! let cfg = TrainConfig { epochs: 2, embedding_dim: 8, ..TrainConfig::default() };
//! let out = run_training(&ds, &split, &cfg, |_| {})?;
//! assert!(out.best.test.mrr > 0.0);
//! # Ok::<(), traj::Error>(())
//! ```

pub mod checkpoint;
pub mod cli;
pub mod data;
mod error;
pub mod eval;
pub mod forward;
pub mod model;
pub mod numkit;
pub mod synth;
pub mod tbatch;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    struct Intro;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/batching.md")]
    struct Batching;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
