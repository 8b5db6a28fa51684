//! The graph encoder, classifier heads, and focal weighting.
//!
//! One [`Encoder`] produces shared node embeddings with a single
//! convolution layer. Every classifier in the system is a [`Head`]: a
//! convolution layer over the shared embeddings followed by a linear map
//! onto the head's class set. The global head scores all classes; expert
//! and student heads score restricted sets and work with local column
//! indices, so label remapping lives here too.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::tape::{NodeId, Tape};
use crate::num::{DenseMat, SparseMat};
use crate::partition::Subset;

/// Default embedding width.
pub const DEFAULT_HIDDEN: usize = 64;

/// The half of the class split a student is responsible for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassSide {
    Head,
    Tail,
}

impl ClassSide {
    pub const BOTH: [ClassSide; 2] = [ClassSide::Head, ClassSide::Tail];

    pub fn name(self) -> &'static str {
        match self {
            ClassSide::Head => "head",
            ClassSide::Tail => "tail",
        }
    }

    /// The experts a student of this side distills from: the high-degree
    /// expert first, then the low-degree one.
    pub fn experts(self) -> [Subset; 2] {
        match self {
            ClassSide::Head => [Subset::Hh, Subset::Ht],
            ClassSide::Tail => [Subset::Th, Subset::Tt],
        }
    }
}

/// What a head is for, which fixes the class set it scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadScope {
    /// Scores every class; the pretraining and baseline classifier.
    Global,
    /// Scores one balanced training subset's class side.
    Expert(Subset),
    /// Scores one class side, distilled from that side's two experts.
    Student(ClassSide),
}

impl HeadScope {
    pub fn name(self) -> String {
        match self {
            HeadScope::Global => "global".into(),
            HeadScope::Expert(s) => format!("expert_{}", s.name()),
            HeadScope::Student(s) => format!("student_{}", s.name()),
        }
    }
}

/// Single-layer graph convolution encoder mapping raw features to the
/// shared embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    /// Feature-to-embedding weight, `num_features x hidden`.
    pub weight: DenseMat,
}

/// Tape nodes produced by wiring an encoder forward pass.
pub struct WiredEncoder {
    /// The trainable weight leaf.
    pub weight: NodeId,
    /// The embedding matrix, `n x hidden`.
    pub hidden: NodeId,
}

impl Encoder {
    pub fn new(num_features: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        if num_features == 0 || hidden == 0 {
            return Err(Error::contract("encoder dimensions must be positive"));
        }
        Ok(Encoder {
            weight: DenseMat::glorot_uniform(num_features, hidden, rng),
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Wires the encoder onto a tape as a trainable leaf:
    /// `relu(adj @ (x @ weight))`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: &Rc<SparseMat>,
        adj: &Rc<SparseMat>,
    ) -> Result<WiredEncoder> {
        let weight = tape.param(self.weight.clone());
        let xw = tape.spmm(x, weight)?;
        let prop = tape.spmm(adj, xw)?;
        let hidden = tape.relu(prop);
        Ok(WiredEncoder { weight, hidden })
    }

    /// Computes the embedding matrix without a tape. Matches the wired
    /// forward pass bit for bit.
    pub fn embed(&self, x: &SparseMat, adj: &SparseMat) -> Result<DenseMat> {
        Ok(adj.spmm(&x.spmm(&self.weight)?)?.map(|v| v.max(0.0)))
    }
}

/// A classifier over one class set: a convolution layer on the shared
/// embeddings followed by a linear map onto the set's classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub scope: HeadScope,
    /// Global class ids this head scores, strictly ascending. Column `j`
    /// of the logits corresponds to `class_set[j]`.
    pub class_set: Vec<usize>,
    /// Convolution weight, `hidden x hidden`.
    pub conv_weight: DenseMat,
    /// Output weight, `hidden x |class_set|`.
    pub out_weight: DenseMat,
}

/// Tape nodes produced by wiring a head forward pass.
pub struct WiredHead {
    pub conv_weight: NodeId,
    pub out_weight: NodeId,
    /// Full-graph logits, `n x |class_set|`.
    pub logits: NodeId,
}

impl Head {
    pub fn new(
        scope: HeadScope,
        class_set: Vec<usize>,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if class_set.is_empty() {
            return Err(Error::contract("head with an empty class set"));
        }
        if class_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(
                "head class set must be strictly ascending",
            ));
        }
        if hidden == 0 {
            return Err(Error::contract("head hidden width must be positive"));
        }
        let conv_weight = DenseMat::glorot_uniform(hidden, hidden, rng);
        let out_weight = DenseMat::glorot_uniform(hidden, class_set.len(), rng);
        Ok(Head {
            scope,
            class_set,
            conv_weight,
            out_weight,
        })
    }

    pub fn num_local(&self) -> usize {
        self.class_set.len()
    }

    /// Column index of a global class id, when this head scores it.
    pub fn local_of_global(&self, class: usize) -> Option<usize> {
        self.class_set.binary_search(&class).ok()
    }

    /// Global class id of a logit column.
    pub fn global_of_local(&self, local: usize) -> usize {
        self.class_set[local]
    }

    /// Remaps the given nodes' labels into this head's column space.
    /// A label outside the class set signals a head/subset mismatch.
    pub fn local_labels(&self, labels: &[usize], nodes: &[usize]) -> Result<Vec<usize>> {
        nodes
            .iter()
            .map(|&v| {
                self.local_of_global(labels[v]).ok_or_else(|| {
                    Error::contract(format!(
                        "node {v} with class {} is outside the {} head's class set",
                        labels[v],
                        self.scope.name()
                    ))
                })
            })
            .collect()
    }

    /// Wires the head onto a tape as trainable leaves:
    /// `logits = relu(adj @ (h @ conv_weight)) @ out_weight`.
    pub fn forward(&self, tape: &mut Tape, h: NodeId, adj: &Rc<SparseMat>) -> Result<WiredHead> {
        let conv_weight = tape.param(self.conv_weight.clone());
        let out_weight = tape.param(self.out_weight.clone());
        let hw = tape.matmul(h, conv_weight)?;
        let prop = tape.spmm(adj, hw)?;
        let act = tape.relu(prop);
        let logits = tape.matmul(act, out_weight)?;
        Ok(WiredHead {
            conv_weight,
            out_weight,
            logits,
        })
    }

    /// Full-graph class probabilities without a tape. Matches the wired
    /// forward pass bit for bit.
    pub fn predict(&self, h: &DenseMat, adj: &SparseMat) -> Result<DenseMat> {
        let act = adj.spmm(&h.matmul(&self.conv_weight)?)?.map(|v| v.max(0.0));
        Ok(act.matmul(&self.out_weight)?.row_softmax())
    }
}

/// Per-class focal weights: either one shared value or inverse class
/// frequency rescaled to mean one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    Uniform(f64),
    InverseFrequency,
}

/// Resolves focal weights against per-class training counts; the counts
/// are indexed the same way the target probability columns are.
pub fn resolve_alpha(mode: AlphaMode, train_counts: &[usize]) -> Result<Vec<f64>> {
    if train_counts.is_empty() {
        return Err(Error::contract("focal weights over zero classes"));
    }
    match mode {
        AlphaMode::Uniform(a) => {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::contract(format!(
                    "uniform focal weight {a} must be positive and finite"
                )));
            }
            Ok(vec![a; train_counts.len()])
        }
        AlphaMode::InverseFrequency => {
            if let Some(c) = train_counts.iter().position(|&n| n == 0) {
                return Err(Error::contract(format!(
                    "inverse-frequency weight for class column {c} with no training nodes"
                )));
            }
            if train_counts.windows(2).all(|w| w[0] == w[1]) {
                return Ok(vec![1.0; train_counts.len()]);
            }
            let raw: Vec<f64> = train_counts.iter().map(|&n| 1.0 / n as f64).collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            Ok(raw.into_iter().map(|w| w / mean).collect())
        }
    }
}

/// Focusing strength and class weighting of the focal loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub gamma: f64,
    pub alpha: AlphaMode,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig {
            gamma: 2.0,
            alpha: AlphaMode::InverseFrequency,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::contract(format!(
                "focal gamma {} must be non-negative and finite",
                self.gamma
            )));
        }
        if let AlphaMode::Uniform(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::contract(format!(
                    "uniform focal weight {a} must be positive and finite"
                )));
            }
        }
        Ok(())
    }

    /// Resolves the per-class weight vector for the given training counts.
    pub fn resolve(&self, train_counts: &[usize]) -> Result<Vec<f64>> {
        self.validate()?;
        resolve_alpha(self.alpha, train_counts)
    }
}
