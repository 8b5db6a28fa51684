//! Train/val/test split protocols that induce class imbalance.
//!
//! Three protocols cover the evaluation settings: a manual protocol with a
//! fixed per-class training quota and a reduced quota for minority classes,
//! a long-tail protocol whose per-class training counts follow a geometric
//! profile realized by pruning low-degree candidates, and a natural
//! stratified split that keeps whatever imbalance the graph already has.
//!
//! Every protocol emits a [`SplitManifest`] whose JSON form is byte-stable:
//! node sets are sorted ascending and field order is fixed by the struct.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Default per-class training quota for majority classes.
pub const DEFAULT_HEAD_QUOTA: usize = 20;
/// Default per-class validation quota.
pub const DEFAULT_VAL_QUOTA: usize = 25;
/// Default per-class test quota.
pub const DEFAULT_TEST_QUOTA: usize = 55;

/// Everything needed to reproduce a split decision.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProtocolDescriptor {
    /// `"manual"`, `"longtail"`, or `"natural"`.
    pub kind: String,
    /// Minority-to-majority training ratio; 1.0 when not applicable.
    pub imbalance_ratio: f64,
    /// Number of minority classes under the manual protocol; 0 otherwise.
    pub num_imb_classes: usize,
    pub seed: u64,
    /// Training nodes per class, indexed by class id.
    pub per_class_train: Vec<usize>,
    /// Per-class validation quota (manual and long-tail protocols).
    pub val_per_class: usize,
    /// Per-class test quota (manual and long-tail protocols).
    pub test_per_class: usize,
    /// Non-fatal adjustments made while satisfying the protocol.
    pub warnings: Vec<String>,
}

/// Node-id sets for one split, plus the descriptor that produced them.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitManifest {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub protocol: ProtocolDescriptor,
}

impl SplitManifest {
    /// Training nodes of one class, ascending.
    pub fn train_of_class(&self, g: &Graph, c: usize) -> Vec<usize> {
        self.train
            .iter()
            .copied()
            .filter(|&v| g.label(v) == c)
            .collect()
    }

    /// Checks that the three sets are disjoint, in range, and consistent
    /// with the recorded per-class counts.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let mut seen = vec![false; g.n()];
        for (name, set) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &v in set {
                if v >= g.n() {
                    return Err(Error::Validation(format!(
                        "{name} node {v} outside 0..{}",
                        g.n()
                    )));
                }
                if seen[v] {
                    return Err(Error::Validation(format!(
                        "node {v} appears in two split sets"
                    )));
                }
                seen[v] = true;
            }
        }
        if self.protocol.per_class_train.len() != g.num_classes() {
            return Err(Error::Validation(
                "per_class_train length disagrees with the class count".into(),
            ));
        }
        let mut counts = vec![0usize; g.num_classes()];
        for &v in &self.train {
            counts[g.label(v)] += 1;
        }
        if counts != self.protocol.per_class_train {
            return Err(Error::Validation(
                "per_class_train disagrees with the train set".into(),
            ));
        }
        Ok(())
    }

    /// Serializes with sorted node sets and fixed key order, so equal
    /// manifests produce identical bytes.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Classes ordered by full-graph cardinality descending, ties toward the
/// lower class id. The last `num_imb` entries are the minority classes.
fn classes_by_cardinality(g: &Graph) -> Vec<usize> {
    let counts = g.class_counts();
    let mut order: Vec<usize> = (0..g.num_classes()).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(counts[c]), c));
    order
}

/// Manual protocol: every class trains on `head_quota` nodes except the
/// `num_imb_classes` smallest classes, which train on
/// `max(1, round(head_quota * ratio))`. Validation and test draw fixed
/// per-class quotas from the remaining nodes.
pub fn apply_manual_imbalance(
    g: &Graph,
    num_imb_classes: usize,
    ratio: f64,
    seed: u64,
) -> Result<SplitManifest> {
    apply_manual_with_quotas(
        g,
        num_imb_classes,
        ratio,
        seed,
        DEFAULT_HEAD_QUOTA,
        DEFAULT_VAL_QUOTA,
        DEFAULT_TEST_QUOTA,
    )
}

/// Manual protocol with explicit quotas.
pub fn apply_manual_with_quotas(
    g: &Graph,
    num_imb_classes: usize,
    ratio: f64,
    seed: u64,
    head_quota: usize,
    val_quota: usize,
    test_quota: usize,
) -> Result<SplitManifest> {
    if num_imb_classes > g.num_classes() {
        return Err(Error::Protocol(format!(
            "{num_imb_classes} minority classes but only {} classes",
            g.num_classes()
        )));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Protocol(format!("ratio {ratio} outside [0, 1]")));
    }
    if head_quota == 0 {
        return Err(Error::Protocol("head quota must be positive".into()));
    }
    let order = classes_by_cardinality(g);
    let minority_start = g.num_classes() - num_imb_classes;
    let mut train_quota = vec![head_quota; g.num_classes()];
    for &c in &order[minority_start..] {
        train_quota[c] = ((head_quota as f64 * ratio).round() as usize).max(1);
    }
    sample_split(g, &train_quota, val_quota, test_quota, seed, |counts| {
        ProtocolDescriptor {
            kind: "manual".into(),
            imbalance_ratio: ratio,
            num_imb_classes,
            seed,
            per_class_train: counts,
            val_per_class: val_quota,
            test_per_class: test_quota,
            warnings: Vec::new(),
        }
    })
}

/// Long-tail protocol: per-class training counts follow the geometric
/// profile `round(max_count * ratio^(i / (|C| - 1)))` over classes sorted by
/// cardinality descending, where `max_count` is the largest class's
/// cardinality minus the val/test quotas. Within each class the highest
/// degree candidates are kept (low-degree nodes are pruned first).
pub fn apply_longtail(g: &Graph, ratio: f64, seed: u64) -> Result<SplitManifest> {
    apply_longtail_with_quotas(g, ratio, seed, DEFAULT_VAL_QUOTA, DEFAULT_TEST_QUOTA)
}

/// Long-tail protocol with explicit val/test quotas.
pub fn apply_longtail_with_quotas(
    g: &Graph,
    ratio: f64,
    seed: u64,
    val_quota: usize,
    test_quota: usize,
) -> Result<SplitManifest> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Protocol(format!("ratio {ratio} outside (0, 1]")));
    }
    let order = classes_by_cardinality(g);
    let counts = g.class_counts();
    let largest = counts[order[0]];
    if largest <= val_quota + test_quota {
        return Err(Error::Protocol(format!(
            "largest class has {largest} nodes, not enough beyond the \
             val/test quotas {val_quota}+{test_quota}"
        )));
    }
    let max_count = largest - val_quota - test_quota;
    let denom = (g.num_classes().max(2) - 1) as f64;
    let mut warnings = Vec::new();
    let mut train_quota = vec![0usize; g.num_classes()];
    for (i, &c) in order.iter().enumerate() {
        let target = (max_count as f64 * ratio.powf(i as f64 / denom)).round() as usize;
        let target = target.max(1);
        let available = counts[c].saturating_sub(val_quota + test_quota).max(0);
        if available == 0 {
            return Err(Error::Protocol(format!(
                "class {c} has {} nodes, not enough beyond the val/test quotas",
                counts[c]
            )));
        }
        if target > available {
            warnings.push(format!(
                "class {c}: geometric target {target} clamped to {available} available nodes"
            ));
            train_quota[c] = available;
        } else {
            train_quota[c] = target;
        }
    }
    let mut manifest = sample_split_by_degree(g, &train_quota, val_quota, test_quota, seed)?;
    manifest.protocol = ProtocolDescriptor {
        kind: "longtail".into(),
        imbalance_ratio: ratio,
        num_imb_classes: 0,
        seed,
        per_class_train: manifest.protocol.per_class_train.clone(),
        val_per_class: val_quota,
        test_per_class: test_quota,
        warnings,
    };
    Ok(manifest)
}

/// Natural protocol: stratified 10/10/80 split per class, preserving the
/// graph's own imbalance. Every class needs at least three nodes.
pub fn split_natural(g: &Graph, seed: u64) -> Result<SplitManifest> {
    let members = g.members_per_class();
    for (c, list) in members.iter().enumerate() {
        if list.len() < 3 {
            return Err(Error::Protocol(format!(
                "class {c} has {} nodes, needs at least 3 for a stratified split",
                list.len()
            )));
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut per_class_train = vec![0usize; g.num_classes()];
    for (c, list) in members.iter().enumerate() {
        let mut pool = list.clone();
        pool.shuffle(&mut rng);
        let n_train = ((pool.len() as f64 * 0.1).round() as usize).max(1);
        let n_val = ((pool.len() as f64 * 0.1).round() as usize).max(1);
        per_class_train[c] = n_train;
        train.extend(&pool[..n_train]);
        val.extend(&pool[n_train..n_train + n_val]);
        test.extend(&pool[n_train + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitManifest {
        train,
        val,
        test,
        protocol: ProtocolDescriptor {
            kind: "natural".into(),
            imbalance_ratio: 1.0,
            num_imb_classes: 0,
            seed,
            per_class_train,
            val_per_class: 0,
            test_per_class: 0,
            warnings: Vec::new(),
        },
    })
}

/// Draws train/val/test per class with a seeded shuffle. The descriptor is
/// produced by `make_descriptor` from the realized per-class train counts.
fn sample_split(
    g: &Graph,
    train_quota: &[usize],
    val_quota: usize,
    test_quota: usize,
    seed: u64,
    make_descriptor: impl FnOnce(Vec<usize>) -> ProtocolDescriptor,
) -> Result<SplitManifest> {
    let members = g.members_per_class();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (c, list) in members.iter().enumerate() {
        let need = train_quota[c] + val_quota + test_quota;
        if list.len() < need {
            return Err(Error::Protocol(format!(
                "class {c} has {} nodes but the protocol needs {need} \
                 ({} train + {val_quota} val + {test_quota} test)",
                list.len(),
                train_quota[c]
            )));
        }
        let mut pool = list.clone();
        pool.shuffle(&mut rng);
        train.extend(&pool[..train_quota[c]]);
        val.extend(&pool[train_quota[c]..train_quota[c] + val_quota]);
        test.extend(&pool[train_quota[c] + val_quota..need]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitManifest {
        train,
        val,
        test,
        protocol: make_descriptor(train_quota.to_vec()),
    })
}

/// Like [`sample_split`] but the training pool of each class keeps its
/// highest-degree nodes (ties toward the lower id), after val/test are
/// drawn uniformly.
fn sample_split_by_degree(
    g: &Graph,
    train_quota: &[usize],
    val_quota: usize,
    test_quota: usize,
    seed: u64,
) -> Result<SplitManifest> {
    let members = g.members_per_class();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut per_class_train = vec![0usize; g.num_classes()];
    for (c, list) in members.iter().enumerate() {
        let mut pool = list.clone();
        pool.shuffle(&mut rng);
        val.extend(&pool[..val_quota]);
        test.extend(&pool[val_quota..val_quota + test_quota]);
        let mut rest: Vec<usize> = pool[val_quota + test_quota..].to_vec();
        rest.sort_by_key(|&v| (std::cmp::Reverse(g.degree(v).unwrap_or(0)), v));
        train.extend(&rest[..train_quota[c]]);
        per_class_train[c] = train_quota[c];
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitManifest {
        train,
        val,
        test,
        protocol: ProtocolDescriptor {
            kind: "longtail".into(),
            imbalance_ratio: 1.0,
            num_imb_classes: 0,
            seed,
            per_class_train,
            val_per_class: val_quota,
            test_per_class: test_quota,
            warnings: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sbm_generate;

    /// Seven classes with cardinalities shaped like a real citation graph.
    fn seven_class_graph() -> Graph {
        sbm_generate(
            5,
            &[818, 426, 418, 351, 298, 217, 180],
            0.01,
            0.001,
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn manual_quotas_follow_the_ratio() {
        let g = seven_class_graph();
        let m = apply_manual_imbalance(&g, 3, 0.1, 0).unwrap();
        m.validate(&g).unwrap();
        // Three smallest classes (4, 5, 6 by construction) get 2 = 20 * 0.1.
        assert_eq!(m.protocol.per_class_train, vec![20, 20, 20, 20, 2, 2, 2]);
        // Training proportions match the published profile within 0.2pp.
        let total: usize = m.protocol.per_class_train.iter().sum();
        let props: Vec<f64> = m
            .protocol
            .per_class_train
            .iter()
            .map(|&c| 100.0 * c as f64 / total as f64)
            .collect();
        for (got, want) in props.iter().zip([23.3, 23.3, 23.3, 23.3, 2.4, 2.4, 2.4]) {
            assert!((got - want).abs() < 0.2, "got {got}, want {want}");
        }
    }

    #[test]
    fn manual_harsh_setting_floors_minority_classes_at_one() {
        let g = seven_class_graph();
        let m = apply_manual_imbalance(&g, 5, 0.05, 0).unwrap();
        m.validate(&g).unwrap();
        assert_eq!(m.protocol.per_class_train, vec![20, 20, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn ratio_one_means_no_imbalance() {
        let g = seven_class_graph();
        let m = apply_manual_imbalance(&g, 3, 1.0, 0).unwrap();
        assert_eq!(m.protocol.per_class_train, vec![20; 7]);
    }

    #[test]
    fn insufficient_class_is_reported_by_name() {
        let g = sbm_generate(1, &[200, 30], 0.05, 0.01, 1.0).unwrap();
        // Class 1 has 30 nodes < 20 + 25 + 55.
        let err = apply_manual_imbalance(&g, 0, 1.0, 0).unwrap_err();
        match err {
            Error::Protocol(msg) => assert!(msg.contains("class 1"), "{msg}"),
            other => panic!("expected protocol error, got {other:?}"),
        }
    }

    #[test]
    fn split_sets_are_disjoint_with_fixed_val_test_quotas() {
        let g = seven_class_graph();
        let m = apply_manual_imbalance(&g, 5, 0.05, 3).unwrap();
        m.validate(&g).unwrap();
        let mut val_counts = vec![0usize; 7];
        let mut test_counts = vec![0usize; 7];
        for &v in &m.val {
            val_counts[g.label(v)] += 1;
        }
        for &v in &m.test {
            test_counts[g.label(v)] += 1;
        }
        assert_eq!(val_counts, vec![DEFAULT_VAL_QUOTA; 7]);
        assert_eq!(test_counts, vec![DEFAULT_TEST_QUOTA; 7]);
    }

    #[test]
    fn same_seed_reproduces_the_manifest() {
        let g = seven_class_graph();
        let a = apply_manual_imbalance(&g, 3, 0.1, 42).unwrap();
        let b = apply_manual_imbalance(&g, 3, 0.1, 42).unwrap();
        assert_eq!(a, b);
        let c = apply_manual_imbalance(&g, 3, 0.1, 43).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn longtail_counts_decrease_geometrically() {
        // Class sizes chosen so the largest class trains on 700 nodes and
        // the profile is clean: 700 * 0.01^(i/6).
        let g = sbm_generate(11, &[780, 420, 240, 160, 120, 100, 90], 0.01, 0.001, 2.0).unwrap();
        let m = apply_longtail(&g, 0.01, 0).unwrap();
        m.validate(&g).unwrap();
        let counts = &m.protocol.per_class_train;
        // Sorted by class cardinality the counts must be non-increasing.
        for w in counts.windows(2) {
            assert!(w[0] >= w[1], "counts not sorted: {counts:?}");
        }
        assert_eq!(counts[0], 700);
        assert_eq!(*counts.last().unwrap(), 7);
        // Head:tail ratio winds up at 100:1.
        assert_eq!(counts[0] / counts[6], 100);
        // Proportions approximate the geometric profile.
        let total: usize = counts.iter().sum();
        let want = [54.0, 25.0, 11.6, 5.4, 2.4, 1.2, 0.5];
        for (i, &c) in counts.iter().enumerate() {
            let prop = 100.0 * c as f64 / total as f64;
            assert!(
                (prop - want[i]).abs() < 0.4,
                "class {i}: {prop} vs {}",
                want[i]
            );
        }
    }

    #[test]
    fn longtail_ratio_one_trains_on_equal_counts_where_possible() {
        let g = sbm_generate(13, &[150, 150, 150], 0.05, 0.01, 1.0).unwrap();
        let m = apply_longtail(&g, 1.0, 0).unwrap();
        assert_eq!(m.protocol.per_class_train, vec![70, 70, 70]);
    }

    #[test]
    fn longtail_prunes_low_degree_nodes_first() {
        let g = sbm_generate(17, &[300, 120], 0.08, 0.01, 1.0).unwrap();
        let m = apply_longtail(&g, 0.1, 9).unwrap();
        m.validate(&g).unwrap();
        // Every pruned candidate (same class, not train/val/test) must have
        // degree at most the minimum degree kept in the train set.
        let in_any: std::collections::HashSet<usize> = m
            .train
            .iter()
            .chain(&m.val)
            .chain(&m.test)
            .copied()
            .collect();
        for c in 0..2 {
            let kept_min = m
                .train
                .iter()
                .filter(|&&v| g.label(v) == c)
                .map(|&v| g.degree(v).unwrap())
                .min()
                .unwrap();
            for v in 0..g.n() {
                if g.label(v) == c && !in_any.contains(&v) {
                    assert!(g.degree(v).unwrap() <= kept_min);
                }
            }
        }
    }

    #[test]
    fn natural_split_is_stratified_ten_percent() {
        let g = sbm_generate(19, &[200, 80, 40], 0.05, 0.01, 1.0).unwrap();
        let m = split_natural(&g, 0).unwrap();
        m.validate(&g).unwrap();
        assert_eq!(m.protocol.per_class_train, vec![20, 8, 4]);
        assert_eq!(m.train.len() + m.val.len() + m.test.len(), g.n());
        // Per-class train fraction within one node of 10%.
        for (c, &count) in m.protocol.per_class_train.iter().enumerate() {
            let want = g.class_counts()[c] as f64 * 0.1;
            assert!((count as f64 - want).abs() <= 1.0);
        }
    }

    #[test]
    fn natural_split_rejects_tiny_classes() {
        let g = sbm_generate(23, &[50, 2], 0.1, 0.01, 1.0).unwrap();
        let err = split_natural(&g, 0).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn manifest_json_round_trips_and_is_byte_stable() {
        let g = seven_class_graph();
        let m = apply_manual_imbalance(&g, 3, 0.1, 7).unwrap();
        let a = m.to_json().unwrap();
        let b = m.to_json().unwrap();
        assert_eq!(a, b);
        let back = SplitManifest::from_json(&a).unwrap();
        assert_eq!(back, m);
        // Serializing the reload gives the same bytes again.
        assert_eq!(back.to_json().unwrap(), a);
    }
}
