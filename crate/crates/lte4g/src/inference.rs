//! Class-prototype routing and final prediction.
//!
//! After training, each class gets a prototype: the mean embedding of its
//! training nodes plus, budget permitting, confidently co-classified
//! neighbors and feature-similar nodes. A test node is routed to the
//! student whose class side contains its nearest prototype by cosine
//! similarity, and that student's argmax is the prediction.
//!
//! Everything here is read-only over frozen model state; repeated calls
//! return identical results.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{cosine_similarity, Graph};
use crate::imbalance::SplitManifest;
use crate::model::{ClassSide, Head};
use crate::num::DenseMat;
use crate::partition::SubsetPartition;

/// Default number of feature-similar nodes consulted per training node.
pub const DEFAULT_KNN_K: usize = 10;

/// How the per-class candidate budget is derived from the per-class
/// training counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    /// Mean training count over classes that have any training nodes,
    /// rounded to the nearest integer.
    Mean,
    /// Largest per-class training count.
    Max,
}

/// When an unlabeled node counts as confidently belonging to a class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceRule {
    /// The node's most probable class is the class in question.
    Argmax,
    /// The node's probability for the class is at least this threshold.
    Threshold(f64),
}

/// Settings for prototype candidate expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    pub budget_rule: BudgetRule,
    /// Neighborhood size for the feature-similarity source; clamped
    /// below the node count at use.
    pub knn_k: usize,
    pub confidence: ConfidenceRule,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            budget_rule: BudgetRule::Mean,
            knn_k: DEFAULT_KNN_K,
            confidence: ConfidenceRule::Argmax,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(Error::Config("knn size must be positive".into()));
        }
        if let ConfidenceRule::Threshold(tau) = self.confidence {
            if !(tau.is_finite() && (0.0..=1.0).contains(&tau)) {
                return Err(Error::Config(format!(
                    "confidence threshold {tau} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    fn passes(&self, probs: &DenseMat, v: usize, c: usize) -> bool {
        match self.confidence {
            ConfidenceRule::Argmax => {
                let row = probs.row(v);
                let mut best = 0;
                for (j, &p) in row.iter().enumerate().skip(1) {
                    if p > row[best] {
                        best = j;
                    }
                }
                best == c
            }
            ConfidenceRule::Threshold(tau) => probs.get(v, c) >= tau,
        }
    }
}

/// Candidate budget for every class under one rule.
pub fn class_budget(rule: BudgetRule, train_counts: &[usize]) -> Result<usize> {
    let active: Vec<usize> = train_counts.iter().copied().filter(|&n| n > 0).collect();
    if active.is_empty() {
        return Err(Error::contract("no class has any training nodes"));
    }
    Ok(match rule {
        BudgetRule::Max => active.iter().copied().max().expect("non-empty"),
        BudgetRule::Mean => {
            let mean = active.iter().sum::<usize>() as f64 / active.len() as f64;
            mean.round() as usize
        }
    })
}

/// Expands one class's prototype candidates: its training nodes always,
/// then confidently co-classified neighbors of those nodes in descending
/// class-probability order, then feature-similar nodes of those nodes
/// under the same filter and order, stopping once the budget is reached.
/// The result is ascending and always contains every training node of
/// the class, even when the budget is smaller.
pub fn expand_candidates(
    c: usize,
    manifest: &SplitManifest,
    g: &Graph,
    probs: &DenseMat,
    cfg: &ExpansionConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if c >= g.num_classes() {
        return Err(Error::contract(format!(
            "class {c} out of range for {} classes",
            g.num_classes()
        )));
    }
    if probs.rows() != g.n() || probs.cols() != g.num_classes() {
        return Err(Error::shape(format!(
            "probability matrix {}x{} for a graph with {} nodes and {} classes",
            probs.rows(),
            probs.cols(),
            g.n(),
            g.num_classes()
        )));
    }
    let mut counts = vec![0usize; g.num_classes()];
    for &v in &manifest.train {
        counts[g.label(v)] += 1;
    }
    let budget = class_budget(cfg.budget_rule, &counts)?;

    let train = manifest.train_of_class(g, c);
    let mut chosen: BTreeSet<usize> = train.iter().copied().collect();
    if chosen.len() < budget {
        let mut neighbors = BTreeSet::new();
        for &v in &train {
            neighbors.extend(g.neighbors(v)?.iter().copied());
        }
        fill_from_pool(&mut chosen, neighbors, budget, c, probs, cfg);
    }
    if chosen.len() < budget {
        let k = cfg.knn_k.min(g.n().saturating_sub(1));
        let mut similars = BTreeSet::new();
        if k > 0 {
            for &v in &train {
                similars.extend(g.knn_by_feature(v, k)?);
            }
        }
        fill_from_pool(&mut chosen, similars, budget, c, probs, cfg);
    }
    Ok(chosen.into_iter().collect())
}

/// Adds pool members that pass the confidence filter, highest class
/// probability first (ties to the lower node id), until the budget.
fn fill_from_pool(
    chosen: &mut BTreeSet<usize>,
    pool: BTreeSet<usize>,
    budget: usize,
    c: usize,
    probs: &DenseMat,
    cfg: &ExpansionConfig,
) {
    let mut ranked: Vec<usize> = pool
        .into_iter()
        .filter(|&v| !chosen.contains(&v) && cfg.passes(probs, v, c))
        .collect();
    ranked.sort_by(|&a, &b| {
        probs
            .get(b, c)
            .partial_cmp(&probs.get(a, c))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for v in ranked {
        if chosen.len() >= budget {
            break;
        }
        chosen.insert(v);
    }
}

/// Mean embedding row over each candidate set, one output row per set.
pub fn compute_prototypes(embeddings: &DenseMat, candidates: &[Vec<usize>]) -> Result<DenseMat> {
    let mut out = DenseMat::zeros(candidates.len(), embeddings.cols());
    for (c, set) in candidates.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::contract(format!("class {c} has no candidates")));
        }
        let row = out.row_mut(c);
        for &v in set {
            if v >= embeddings.rows() {
                return Err(Error::contract(format!(
                    "candidate {v} outside the {}-row embedding matrix",
                    embeddings.rows()
                )));
            }
            for (acc, &x) in row.iter_mut().zip(embeddings.row(v)) {
                *acc += x;
            }
        }
        let inv = 1.0 / set.len() as f64;
        for acc in row.iter_mut() {
            *acc *= inv;
        }
    }
    Ok(out)
}

/// One prototype per class plus the candidate sets and settings that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeTable {
    /// Class-by-dimension matrix; row `c` is class `c`'s prototype.
    pub prototypes: DenseMat,
    /// Candidate nodes per class, each ascending and containing at
    /// least the class's training nodes.
    pub candidates: Vec<Vec<usize>>,
    pub config: ExpansionConfig,
    pub budget: usize,
}

impl PrototypeTable {
    /// Expands candidates for every class and averages their embeddings.
    pub fn build(
        g: &Graph,
        manifest: &SplitManifest,
        probs: &DenseMat,
        embeddings: &DenseMat,
        cfg: &ExpansionConfig,
    ) -> Result<PrototypeTable> {
        let mut counts = vec![0usize; g.num_classes()];
        for &v in &manifest.train {
            counts[g.label(v)] += 1;
        }
        let budget = class_budget(cfg.budget_rule, &counts)?;
        let candidates: Vec<Vec<usize>> = (0..g.num_classes())
            .map(|c| expand_candidates(c, manifest, g, probs, cfg))
            .collect::<Result<_>>()?;
        let prototypes = compute_prototypes(embeddings, &candidates)?;
        Ok(PrototypeTable {
            prototypes,
            candidates,
            config: cfg.clone(),
            budget,
        })
    }
}

/// Where one node was routed and why.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub node: usize,
    /// The student responsible for the winning class.
    pub side: ClassSide,
    /// The class whose prototype is most cosine-similar to the node.
    pub c_star: usize,
    /// True when the node's embedding has zero norm, making every
    /// similarity 0 and the route a pure tie-break.
    pub degenerate: bool,
}

/// Routes one node to the student owning its most similar prototype.
/// Ties, including the zero-norm degenerate case, go to the lowest
/// class id.
pub fn route_node(
    v: usize,
    table: &PrototypeTable,
    embeddings: &DenseMat,
    partition: &SubsetPartition,
) -> Result<Route> {
    if v >= embeddings.rows() {
        return Err(Error::contract(format!(
            "node {v} outside the {}-row embedding matrix",
            embeddings.rows()
        )));
    }
    if table.prototypes.cols() != embeddings.cols() {
        return Err(Error::shape(format!(
            "prototype dimension {} vs embedding dimension {}",
            table.prototypes.cols(),
            embeddings.cols()
        )));
    }
    let row = embeddings.row(v);
    let mut c_star = 0;
    let mut best = f64::NEG_INFINITY;
    for c in 0..table.prototypes.rows() {
        let sim = cosine_similarity(row, table.prototypes.row(c));
        if sim > best {
            best = sim;
            c_star = c;
        }
    }
    let side = if partition.is_head_class(c_star) {
        ClassSide::Head
    } else {
        ClassSide::Tail
    };
    Ok(Route {
        node: v,
        side,
        c_star,
        degenerate: row.iter().all(|&x| x == 0.0),
    })
}

/// One line of the final prediction table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub node: usize,
    pub routed: ClassSide,
    pub c_star: usize,
    pub predicted: usize,
    pub truth: usize,
}

/// Routed predictions over an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutcome {
    pub rows: Vec<PredictionRow>,
    /// Fraction of nodes routed to the side their true class lives on.
    pub routing_accuracy: f64,
    /// Fraction of nodes whose predicted class is their true class.
    /// Never exceeds `routing_accuracy`: a prediction can only be right
    /// when the route already was.
    pub accuracy: f64,
    /// Degenerate-route diagnostics.
    pub warnings: Vec<String>,
}

/// Routes every node and reads the prediction off its student.
pub fn predict_all(
    g: &Graph,
    nodes: &[usize],
    table: &PrototypeTable,
    embeddings: &DenseMat,
    head_student: &Head,
    tail_student: &Head,
    partition: &SubsetPartition,
) -> Result<InferenceOutcome> {
    if nodes.is_empty() {
        return Err(Error::contract("no nodes to predict"));
    }
    let adj = g.normalized_adjacency();
    let p_head = head_student.predict(embeddings, &adj)?;
    let p_tail = tail_student.predict(embeddings, &adj)?;

    let mut rows = Vec::with_capacity(nodes.len());
    let mut warnings = Vec::new();
    let mut routed_right = 0usize;
    let mut correct = 0usize;
    for &v in nodes {
        let route = route_node(v, table, embeddings, partition)?;
        if route.degenerate {
            warnings.push(format!(
                "node {v}: zero-norm embedding, routed to class {} by tie-break",
                route.c_star
            ));
        }
        let (student, probs) = match route.side {
            ClassSide::Head => (head_student, &p_head),
            ClassSide::Tail => (tail_student, &p_tail),
        };
        let local = {
            let p = probs.row(v);
            let mut best = 0;
            for (j, &x) in p.iter().enumerate().skip(1) {
                if x > p[best] {
                    best = j;
                }
            }
            best
        };
        let predicted = student.global_of_local(local);
        let truth = g.label(v);
        let truth_side = if partition.is_head_class(truth) {
            ClassSide::Head
        } else {
            ClassSide::Tail
        };
        if route.side == truth_side {
            routed_right += 1;
        }
        if predicted == truth {
            correct += 1;
        }
        rows.push(PredictionRow {
            node: v,
            routed: route.side,
            c_star: route.c_star,
            predicted,
            truth,
        });
    }
    Ok(InferenceOutcome {
        rows,
        routing_accuracy: routed_right as f64 / nodes.len() as f64,
        accuracy: correct as f64 / nodes.len() as f64,
        warnings,
    })
}

/// Renders prediction rows as TSV with a header line.
pub fn predictions_tsv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("node_id\trouted_student\tc_star\tpredicted_class\ttrue_class\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.node,
            r.routed.name(),
            r.c_star,
            r.predicted,
            r.truth
        ));
    }
    out
}
