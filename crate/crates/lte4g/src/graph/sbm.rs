//! Stochastic block model generator for synthetic fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::num::DenseMat;

/// Generates a labeled graph whose blocks are the classes.
///
/// Each unordered node pair is joined independently with probability
/// `p_in` when the nodes share a class and `p_out` otherwise. Features are
/// standard Gaussian draws with the owning class's mean shifted by
/// `feature_shift` along its own axis (feature dimension = number of
/// classes). Identical arguments produce an identical graph.
pub fn sbm_generate(
    seed: u64,
    class_sizes: &[usize],
    p_in: f64,
    p_out: f64,
    feature_shift: f64,
) -> Result<Graph> {
    if class_sizes.is_empty() || class_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Validation(
            "every class needs at least one node".into(),
        ));
    }
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Validation(format!("{name}={p} outside [0, 1]")));
        }
    }
    let num_classes = class_sizes.len();
    let n: usize = class_sizes.iter().sum();
    let mut labels = Vec::with_capacity(n);
    for (c, &size) in class_sizes.iter().enumerate() {
        labels.extend(std::iter::repeat(c).take(size));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut features = DenseMat::zeros(n, num_classes);
    for v in 0..n {
        let row = features.row_mut(v);
        for (c, slot) in row.iter_mut().enumerate() {
            *slot = gaussian(&mut rng) + if c == labels[v] { feature_shift } else { 0.0 };
        }
    }

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if p > 0.0 && rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Graph::new(num_classes, features, labels, &edges)
}

/// One standard normal draw via the Box-Muller transform.
fn gaussian(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extreme_probabilities_give_two_disjoint_cliques() {
        let g = sbm_generate(1, &[4, 3], 1.0, 0.0, 2.0).unwrap();
        // Within-class pairs all joined: C(4,2) + C(3,2) edges.
        assert_eq!(g.num_edges(), 6 + 3);
        for &(a, b) in g.edges() {
            assert_eq!(g.label(a), g.label(b));
        }
    }

    #[test]
    fn same_seed_reproduces_the_graph() {
        let a = sbm_generate(99, &[10, 10, 5], 0.3, 0.05, 1.5).unwrap();
        let b = sbm_generate(99, &[10, 10, 5], 0.3, 0.05, 1.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a = sbm_generate(1, &[20, 20], 0.3, 0.05, 1.0).unwrap();
        let b = sbm_generate(2, &[20, 20], 0.3, 0.05, 1.0).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn within_class_edge_rate_tracks_p_in() {
        let g = sbm_generate(7, &[50, 5], 0.4, 0.0, 1.0).unwrap();
        let within_big = g
            .edges()
            .iter()
            .filter(|&&(a, b)| g.label(a) == 0 && g.label(b) == 0)
            .count();
        let pairs = 50.0 * 49.0 / 2.0;
        let rate = within_big as f64 / pairs;
        assert!((rate - 0.4).abs() < 0.1, "rate {rate}");
    }

    #[test]
    fn feature_means_separate_by_class() {
        let g = sbm_generate(3, &[40, 40], 0.2, 0.02, 3.0).unwrap();
        let mut mean0 = 0.0;
        for v in 0..40 {
            mean0 += g.features().get(v, 0);
        }
        mean0 /= 40.0;
        let mut mean0_other = 0.0;
        for v in 40..80 {
            mean0_other += g.features().get(v, 0);
        }
        mean0_other /= 40.0;
        assert!(mean0 > 2.0, "class-0 mean on its own axis was {mean0}");
        assert!(mean0_other < 1.0);
    }

    #[test]
    fn invalid_probability_is_rejected() {
        assert!(sbm_generate(1, &[3, 3], 1.5, 0.0, 1.0).is_err());
        assert!(sbm_generate(1, &[], 0.5, 0.0, 1.0).is_err());
        assert!(sbm_generate(1, &[3, 0], 0.5, 0.0, 1.0).is_err());
    }
}
