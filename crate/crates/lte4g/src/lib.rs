//! Long-tail experts for graph node classification.
//!
//! The pipeline trains a graph-convolutional encoder on an imbalanced node
//! classification task, partitions the training nodes into four balanced
//! subsets by class size and node degree, trains one expert head per subset,
//! distills the experts into a head-class and a tail-class student under a
//! curriculum schedule, and routes test nodes to a student via class
//! prototypes in embedding space.
//!
//! Modules follow the data flow:
//!
//! * [`num`]: dense/sparse matrices, reverse-mode tape, Adam.
//! * [`graph`]: graph container, adjacency normalization, I/O, generators.
//! * [`imbalance`]: train/val/test protocols that induce class imbalance.
//! * [`partition`]: class-side and degree-side split into HH/HT/TH/TT.
//! * [`model`]: encoder, heads, and the loss zoo (focal, CE, distillation).
//! * [`training`]: the three-stage schedule plus baseline trainers.
//! * [`inference`]: prototype construction and student routing.
//! * [`eval`]: confusion-matrix metrics and subset breakdowns.
//! * [`experiment`]: seeded end-to-end runs producing on-disk artifacts.

pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod imbalance;
pub mod inference;
pub mod model;
pub mod num;
pub mod partition;
pub mod training;

pub use error::{Error, Result};
