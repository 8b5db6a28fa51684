//! Balanced partition of training nodes by class size and node degree.
//!
//! Classes are split into a head side (largest training cardinalities) and
//! a tail side; within each side, training nodes split again into
//! high-degree and low-degree groups. The four resulting subsets HH, HT,
//! TH, TT each train one expert. A randomized mode provides the ablation
//! control that destroys the balance property while keeping every
//! downstream contract intact.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::imbalance::SplitManifest;

/// Default fraction of classes assigned to the head side.
pub const DEFAULT_HEAD_FRACTION: f64 = 0.6;
/// Default degree threshold: a node with degree at or below it is low-degree.
pub const DEFAULT_DEGREE_THRESHOLD: usize = 5;

/// One of the four training subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subset {
    /// Head classes, high degree.
    Hh,
    /// Head classes, low degree.
    Ht,
    /// Tail classes, high degree.
    Th,
    /// Tail classes, low degree.
    Tt,
}

impl Subset {
    pub const ALL: [Subset; 4] = [Subset::Hh, Subset::Ht, Subset::Th, Subset::Tt];

    /// The subset on the same class side with the other degree side.
    pub fn degree_sibling(self) -> Subset {
        match self {
            Subset::Hh => Subset::Ht,
            Subset::Ht => Subset::Hh,
            Subset::Th => Subset::Tt,
            Subset::Tt => Subset::Th,
        }
    }

    pub fn is_head_class_side(self) -> bool {
        matches!(self, Subset::Hh | Subset::Ht)
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::Hh => "HH",
            Subset::Ht => "HT",
            Subset::Th => "TH",
            Subset::Tt => "TT",
        }
    }
}

/// Which assignments the randomized ablation mode scrambles.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitMode {
    /// Keep the class-cardinality rule (true) or draw the head class set
    /// uniformly at random with the same size (false).
    pub class_by_cardinality: bool,
    /// Keep the degree-threshold rule (true) or assign degree sides at
    /// random within each class side, preserving group sizes (false).
    pub degree_by_threshold: bool,
    /// Seed for the randomized assignments; unused in fully balanced mode.
    pub seed: u64,
}

impl SplitMode {
    pub fn balanced() -> Self {
        SplitMode {
            class_by_cardinality: true,
            degree_by_threshold: true,
            seed: 0,
        }
    }

    pub fn random(seed: u64) -> Self {
        SplitMode {
            class_by_cardinality: false,
            degree_by_threshold: false,
            seed,
        }
    }
}

/// The four training subsets plus the class split that produced them.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SubsetPartition {
    /// Head-side class ids, ascending.
    pub head_classes: Vec<usize>,
    /// Tail-side class ids, ascending.
    pub tail_classes: Vec<usize>,
    /// Training nodes per subset, each ascending.
    pub hh: Vec<usize>,
    pub ht: Vec<usize>,
    pub th: Vec<usize>,
    pub tt: Vec<usize>,
    pub degree_threshold: usize,
    pub head_fraction: f64,
    pub warnings: Vec<String>,
}

impl SubsetPartition {
    pub fn subset(&self, s: Subset) -> &[usize] {
        match s {
            Subset::Hh => &self.hh,
            Subset::Ht => &self.ht,
            Subset::Th => &self.th,
            Subset::Tt => &self.tt,
        }
    }

    /// Class ids scored by experts on this subset's side, ascending.
    pub fn class_side(&self, s: Subset) -> &[usize] {
        if s.is_head_class_side() {
            &self.head_classes
        } else {
            &self.tail_classes
        }
    }

    /// True when the class is on the head side.
    pub fn is_head_class(&self, c: usize) -> bool {
        self.head_classes.binary_search(&c).is_ok()
    }

    /// All head-side training nodes (HH then HT merged, ascending).
    pub fn head_side_nodes(&self) -> Vec<usize> {
        merge_sorted(&self.hh, &self.ht)
    }

    /// All tail-side training nodes (TH then TT merged, ascending).
    pub fn tail_side_nodes(&self) -> Vec<usize> {
        merge_sorted(&self.th, &self.tt)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out
}

/// Splits class ids into head and tail sides.
///
/// Classes are ordered by training cardinality descending (ties: larger
/// full-graph cardinality first, then the lower class id) and the first
/// `ceil(head_fraction * |C|)` become the head side, clamped to `|C| - 1`
/// so the tail side is never empty.
pub fn split_classes(
    manifest: &SplitManifest,
    g: &Graph,
    head_fraction: f64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<String>)> {
    if !(head_fraction > 0.0 && head_fraction <= 1.0) {
        return Err(Error::contract(format!(
            "head fraction {head_fraction} outside (0, 1]"
        )));
    }
    let num_classes = g.num_classes();
    if num_classes < 2 {
        return Err(Error::contract("class split needs at least two classes"));
    }
    let train_counts = &manifest.protocol.per_class_train;
    if train_counts.len() != num_classes {
        return Err(Error::contract(
            "manifest class count disagrees with the graph",
        ));
    }
    let full_counts = g.class_counts();
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by_key(|&c| {
        (
            std::cmp::Reverse(train_counts[c]),
            std::cmp::Reverse(full_counts[c]),
            c,
        )
    });
    let mut warnings = Vec::new();
    let mut head_count = (head_fraction * num_classes as f64).ceil() as usize;
    if head_count >= num_classes {
        head_count = num_classes - 1;
        warnings.push(format!(
            "head fraction {head_fraction} would absorb every class; \
             clamped to {head_count} head classes"
        ));
    }
    let mut head: Vec<usize> = order[..head_count].to_vec();
    let mut tail: Vec<usize> = order[head_count..].to_vec();
    head.sort_unstable();
    tail.sort_unstable();
    Ok((head, tail, warnings))
}

/// True when the node counts as low-degree: degree at or below the
/// threshold (the threshold itself is inclusive on the low side).
pub fn is_low_degree(g: &Graph, v: usize, threshold: usize) -> Result<bool> {
    Ok(g.degree(v)? <= threshold)
}

/// Builds the four balanced training subsets.
pub fn make_subsets(
    manifest: &SplitManifest,
    g: &Graph,
    head_fraction: f64,
    degree_threshold: usize,
) -> Result<SubsetPartition> {
    make_subsets_with_mode(
        manifest,
        g,
        head_fraction,
        degree_threshold,
        SplitMode::balanced(),
    )
}

/// Builds the subsets under an explicit [`SplitMode`].
///
/// With `class_by_cardinality` off, the head class set is drawn uniformly
/// at random with the same number of classes the balanced rule would pick.
/// With `degree_by_threshold` off, nodes within each class side are
/// assigned to the high/low degree groups at random, preserving the group
/// sizes the threshold rule would produce.
pub fn make_subsets_with_mode(
    manifest: &SplitManifest,
    g: &Graph,
    head_fraction: f64,
    degree_threshold: usize,
    mode: SplitMode,
) -> Result<SubsetPartition> {
    let (rule_head, rule_tail, mut warnings) = split_classes(manifest, g, head_fraction)?;
    let mut rng = ChaCha20Rng::seed_from_u64(mode.seed);

    let (head_classes, tail_classes) = if mode.class_by_cardinality {
        (rule_head, rule_tail)
    } else {
        let mut all: Vec<usize> = (0..g.num_classes()).collect();
        all.shuffle(&mut rng);
        let mut head: Vec<usize> = all[..rule_head.len()].to_vec();
        let mut tail: Vec<usize> = all[rule_head.len()..].to_vec();
        head.sort_unstable();
        tail.sort_unstable();
        warnings.push("class sides assigned at random (ablation mode)".into());
        (head, tail)
    };

    let mut partition = SubsetPartition {
        head_classes,
        tail_classes,
        hh: Vec::new(),
        ht: Vec::new(),
        th: Vec::new(),
        tt: Vec::new(),
        degree_threshold,
        head_fraction,
        warnings,
    };

    for side_head in [true, false] {
        let side_nodes: Vec<usize> = manifest
            .train
            .iter()
            .copied()
            .filter(|&v| partition.is_head_class(g.label(v)) == side_head)
            .collect();
        let mut high = Vec::new();
        let mut low = Vec::new();
        for &v in &side_nodes {
            if is_low_degree(g, v, degree_threshold)? {
                low.push(v);
            } else {
                high.push(v);
            }
        }
        if !mode.degree_by_threshold {
            // Redraw the membership but keep the sizes the rule produced.
            let n_high = high.len();
            let mut pool = side_nodes.clone();
            pool.shuffle(&mut rng);
            high = pool[..n_high].to_vec();
            low = pool[n_high..].to_vec();
            high.sort_unstable();
            low.sort_unstable();
        }
        if side_head {
            partition.hh = high;
            partition.ht = low;
        } else {
            partition.th = high;
            partition.tt = low;
        }
    }
    if !mode.degree_by_threshold {
        partition
            .warnings
            .push("degree sides assigned at random (ablation mode)".into());
    }

    for s in Subset::ALL {
        if partition.subset(s).is_empty() {
            partition
                .warnings
                .push(format!("subset {} is empty", s.name()));
        }
    }
    Ok(partition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sbm_generate, Graph};
    use crate::imbalance::{apply_manual_with_quotas, ProtocolDescriptor};
    use crate::num::DenseMat;

    /// Hand-built manifest over a hand-built graph: 8 train nodes, 3
    /// classes, degrees arranged around the threshold.
    fn tiny_fixture() -> (Graph, SplitManifest) {
        // Node degrees: 0 is a hub (degree 7), the rest mostly low.
        let n = 10;
        let mut edges = vec![];
        for v in 1..8 {
            edges.push((0, v));
        }
        edges.push((8, 9));
        let labels = vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 0];
        let g = Graph::new(3, DenseMat::zeros(n, 2), labels, &edges).unwrap();
        let train: Vec<usize> = vec![0, 1, 2, 3, 4, 6, 8, 9];
        let mut per_class_train = vec![0usize; 3];
        for &v in &train {
            per_class_train[g.label(v)] += 1;
        }
        let manifest = SplitManifest {
            train,
            val: vec![5],
            test: vec![7],
            protocol: ProtocolDescriptor {
                kind: "manual".into(),
                imbalance_ratio: 1.0,
                num_imb_classes: 0,
                seed: 0,
                per_class_train,
                val_per_class: 1,
                test_per_class: 1,
                warnings: vec![],
            },
        };
        (g, manifest)
    }

    fn counts_manifest(counts: &[usize]) -> (Graph, SplitManifest) {
        // A graph with enough nodes per class and a manifest whose train
        // counts are exactly `counts`.
        let sizes: Vec<usize> = counts.iter().map(|&c| c + 10).collect();
        let g = sbm_generate(31, &sizes, 0.2, 0.02, 1.0).unwrap();
        let members = g.members_per_class();
        let mut train = Vec::new();
        for (c, &want) in counts.iter().enumerate() {
            train.extend(&members[c][..want]);
        }
        train.sort_unstable();
        let manifest = SplitManifest {
            train,
            val: vec![],
            test: vec![],
            protocol: ProtocolDescriptor {
                kind: "manual".into(),
                imbalance_ratio: 1.0,
                num_imb_classes: 0,
                seed: 0,
                per_class_train: counts.to_vec(),
                val_per_class: 0,
                test_per_class: 0,
                warnings: vec![],
            },
        };
        (g, manifest)
    }

    #[test]
    fn seven_classes_at_default_fraction_gives_five_head() {
        let (g, m) = counts_manifest(&[20, 20, 20, 20, 2, 2, 2]);
        let (head, tail, _) = split_classes(&m, &g, 0.6).unwrap();
        // ceil(0.6 * 7) = 5 head classes.
        assert_eq!(head.len(), 5);
        assert_eq!(tail, vec![5, 6]);
    }

    #[test]
    fn four_sevenths_fraction_puts_the_twenty_count_classes_on_the_head_side() {
        let (g, m) = counts_manifest(&[20, 20, 20, 20, 2, 2, 2]);
        let (head, tail, _) = split_classes(&m, &g, 4.0 / 7.0).unwrap();
        assert_eq!(head, vec![0, 1, 2, 3]);
        assert_eq!(tail, vec![4, 5, 6]);
    }

    #[test]
    fn fraction_near_one_keeps_a_nonempty_tail() {
        let (g, m) = counts_manifest(&[20, 20, 10]);
        let (head, tail, warnings) = split_classes(&m, &g, 0.999).unwrap();
        assert_eq!(head.len(), 2);
        assert_eq!(tail.len(), 1);
        assert!(!warnings.is_empty());
    }

    #[test]
    fn class_ties_break_by_full_cardinality_then_id() {
        // Equal train counts; class 1 has more full-graph members.
        let sizes = [30usize, 60, 30];
        let g = sbm_generate(37, &sizes, 0.2, 0.02, 1.0).unwrap();
        let members = g.members_per_class();
        let mut train: Vec<usize> = Vec::new();
        for c in 0..3 {
            train.extend(&members[c][..5]);
        }
        train.sort_unstable();
        let m = SplitManifest {
            train,
            val: vec![],
            test: vec![],
            protocol: ProtocolDescriptor {
                kind: "manual".into(),
                imbalance_ratio: 1.0,
                num_imb_classes: 0,
                seed: 0,
                per_class_train: vec![5, 5, 5],
                val_per_class: 0,
                test_per_class: 0,
                warnings: vec![],
            },
        };
        let (head, tail, _) = split_classes(&m, &g, 0.5).unwrap();
        // Two head slots: class 1 wins by cardinality, then class 0 by id.
        assert_eq!(head, vec![0, 1]);
        assert_eq!(tail, vec![2]);
    }

    #[test]
    fn degree_boundary_is_inclusive_on_the_low_side() {
        // A 7-node star: center degree 6 (high), leaves degree 1 (low).
        // Then a 6-clique member has degree 5 (low by the inclusive rule).
        let mut edges: Vec<(usize, usize)> = (1..=6).map(|v| (0, v)).collect();
        for i in 7..13 {
            for j in (i + 1)..13 {
                edges.push((i, j));
            }
        }
        let g = Graph::new(1, DenseMat::zeros(13, 2), vec![0; 13], &edges).unwrap();
        assert_eq!(g.degree(0).unwrap(), 6);
        assert_eq!(g.degree(7).unwrap(), 5);
        assert!(!is_low_degree(&g, 0, 5).unwrap());
        assert!(is_low_degree(&g, 7, 5).unwrap());
        assert!(is_low_degree(&g, 1, 5).unwrap());
    }

    #[test]
    fn threshold_zero_marks_only_isolated_nodes_low() {
        let g = Graph::new(
            1,
            DenseMat::zeros(3, 1),
            vec![0; 3],
            &[(0, 1)],
        )
        .unwrap();
        assert!(!is_low_degree(&g, 0, 0).unwrap());
        assert!(is_low_degree(&g, 2, 0).unwrap());
    }

    #[test]
    fn hand_fixture_partitions_exactly() {
        let (g, m) = tiny_fixture();
        // Train counts: class 0 -> 4, class 1 -> 2, class 2 -> 2, so with
        // fraction 0.5 the head side is {0, 1} (tie broken by id).
        let p = make_subsets(&m, &g, 0.5, 5).unwrap();
        assert_eq!(p.head_classes, vec![0, 1]);
        assert_eq!(p.tail_classes, vec![2]);
        // Node 0 has degree 7 (high); every other train node is low.
        assert_eq!(p.hh, vec![0]);
        assert_eq!(p.ht, vec![1, 2, 3, 4, 9]);
        assert_eq!(p.th, Vec::<usize>::new());
        assert_eq!(p.tt, vec![6, 8]);
        // The four subsets partition the train set exactly.
        let mut all: Vec<usize> = Subset::ALL
            .iter()
            .flat_map(|&s| p.subset(s).iter().copied())
            .collect();
        all.sort_unstable();
        assert_eq!(all, m.train);
        assert!(p.warnings.iter().any(|w| w.contains("TH")));
    }

    #[test]
    fn subsets_partition_the_train_set_on_random_inputs() {
        for seed in 0..5 {
            let g = sbm_generate(seed, &[120, 120, 120, 120], 0.05, 0.01, 1.0).unwrap();
            let m = apply_manual_with_quotas(&g, 2, 0.2, seed, 20, 10, 30).unwrap();
            let p = make_subsets(&m, &g, 0.5, 5).unwrap();
            let mut all: Vec<usize> = Subset::ALL
                .iter()
                .flat_map(|&s| p.subset(s).iter().copied())
                .collect();
            all.sort_unstable();
            assert_eq!(all, m.train);
            // Class sides are disjoint and cover all classes.
            let mut classes: Vec<usize> = p
                .head_classes
                .iter()
                .chain(&p.tail_classes)
                .copied()
                .collect();
            classes.sort_unstable();
            assert_eq!(classes, (0..4).collect::<Vec<_>>());
        }
    }

    #[test]
    fn growing_the_fraction_only_grows_the_head_side() {
        let (g, m) = counts_manifest(&[25, 20, 15, 10, 5]);
        let mut prev: Vec<usize> = vec![];
        for frac in [0.2, 0.4, 0.6, 0.8] {
            let (head, _, _) = split_classes(&m, &g, frac).unwrap();
            assert!(prev.iter().all(|c| head.contains(c)));
            prev = head;
        }
    }

    #[test]
    fn random_degree_mode_preserves_subset_sizes() {
        // Edge densities chosen so train-node degrees straddle the
        // threshold and both degree groups are populated.
        let g = sbm_generate(41, &[150, 150, 150, 150], 0.03, 0.004, 1.0).unwrap();
        let m = apply_manual_with_quotas(&g, 2, 0.2, 1, 20, 10, 30).unwrap();
        let balanced = make_subsets(&m, &g, 0.5, 5).unwrap();
        assert!(balanced.hh.len() >= 5 && balanced.ht.len() >= 5);
        let randomized = make_subsets_with_mode(
            &m,
            &g,
            0.5,
            5,
            SplitMode {
                class_by_cardinality: true,
                degree_by_threshold: false,
                seed: 7,
            },
        )
        .unwrap();
        for s in Subset::ALL {
            assert_eq!(balanced.subset(s).len(), randomized.subset(s).len());
        }
        // The membership does change.
        assert_ne!(balanced.hh, randomized.hh);
    }

    #[test]
    fn random_class_mode_keeps_the_head_class_count() {
        let g = sbm_generate(43, &[150, 150, 150, 150], 0.05, 0.01, 1.0).unwrap();
        let m = apply_manual_with_quotas(&g, 2, 0.2, 1, 20, 10, 30).unwrap();
        let balanced = make_subsets(&m, &g, 0.5, 5).unwrap();
        let randomized = make_subsets_with_mode(&m, &g, 0.5, 5, SplitMode::random(3)).unwrap();
        assert_eq!(
            balanced.head_classes.len(),
            randomized.head_classes.len()
        );
        // Still a partition of the train set.
        let mut all: Vec<usize> = Subset::ALL
            .iter()
            .flat_map(|&s| randomized.subset(s).iter().copied())
            .collect();
        all.sort_unstable();
        assert_eq!(all, m.train);
    }

    #[test]
    fn partition_json_round_trips() {
        let (g, m) = tiny_fixture();
        let p = make_subsets(&m, &g, 0.5, 5).unwrap();
        let text = p.to_json().unwrap();
        assert_eq!(SubsetPartition::from_json(&text).unwrap(), p);
        assert_eq!(p.to_json().unwrap(), text);
    }
}
