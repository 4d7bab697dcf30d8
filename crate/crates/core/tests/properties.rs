//! Property tests of structural invariants.

use std::sync::OnceLock;

use modflow::chem::{canonical_form, qm9};
use modflow::data::parse_smiles_lines;
use modflow::eval::{mmd, orbit_counts, Statistic};
use modflow::flow::{apply_shifts, invert_shifts};
use modflow::rl::{assign_rewards, ppo_term, PropertyTransform, RewardSpec};
use modflow::{Alphabet, DiscreteFlowModel, FlowConfig, LabeledGraph, TokenKind};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn small_flow() -> FlowConfig {
    FlowConfig { depth: 3, rgcn_layers: 2, embed_width: 8, mlp_hidden: 8, st_temperature: 0.1 }
}

fn molecules() -> &'static [LabeledGraph] {
    static MOLECULES: OnceLock<Vec<LabeledGraph>> = OnceLock::new();
    MOLECULES.get_or_init(|| {
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/toy100.smi")).unwrap();
        parse_smiles_lines(&text, &qm9()).unwrap()
    })
}

/// Connected when `connected`, otherwise edges are independent coin flips.
fn random_graph(seed: u64, n: usize, k: usize, c: usize, connected: bool) -> LabeledGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = LabeledGraph::with_nodes((0..n).map(|_| rng.gen_range(0..k)).collect());
    if connected {
        for i in 1..n {
            let j = rng.gen_range(0..i);
            g.add_edge(i, j, rng.gen_range(0..c)).unwrap();
        }
    }
    let density = rng.gen_range(0.1..0.6);
    for i in 0..n {
        for j in 0..i {
            if g.edge(i, j).is_none() && rng.gen_bool(density) {
                g.add_edge(i, j, rng.gen_range(0..c)).unwrap();
            }
        }
    }
    g
}

fn shuffled(seed: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Orbit labels of each template node, by brute-force matching against the
/// six connected 4-node graphlets.
fn naive_orbits(g: &LabeledGraph) -> Vec<[u64; 11]> {
    type Template = (&'static [(usize, usize)], [usize; 4]);
    const TEMPLATES: [Template; 6] = [
        (&[(0, 1), (1, 2), (2, 3)], [0, 1, 1, 0]),
        (&[(0, 1), (0, 2), (0, 3)], [3, 2, 2, 2]),
        (&[(0, 1), (1, 2), (2, 3), (3, 0)], [4, 4, 4, 4]),
        (&[(0, 1), (1, 2), (0, 2), (2, 3)], [6, 6, 7, 5]),
        (&[(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)], [8, 9, 9, 8]),
        (&[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], [10, 10, 10, 10]),
    ];
    const PERMUTATIONS: usize = 24;
    let perms: Vec<[usize; 4]> = {
        let mut out = Vec::with_capacity(PERMUTATIONS);
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        let p = [a, b, c, d];
                        if (0..4).all(|x| p.contains(&x)) {
                            out.push(p);
                        }
                    }
                }
            }
        }
        out
    };
    let n = g.num_nodes();
    let mut counts = vec![[0u64; 11]; n];
    let subsets = (0..n).flat_map(|a| (a + 1..n).flat_map(move |b| (b + 1..n).flat_map(move |c| (c + 1..n).map(move |d| [a, b, c, d]))));
    for quad in subsets {
        'templates: for (edges, labels) in TEMPLATES {
            for p in &perms {
                // template node t sits on graph node quad[p[t]]
                let matches = (0..4).all(|s| {
                    (s + 1..4).all(|t| {
                        let in_template = edges.iter().any(|&(u, v)| (u, v) == (s, t) || (u, v) == (t, s));
                        in_template == g.edge(quad[p[s]], quad[p[t]]).is_some()
                    })
                });
                if matches {
                    for t in 0..4 {
                        counts[quad[p[t]]][labels[t]] += 1;
                    }
                    break 'templates;
                }
            }
        }
    }
    counts
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn shift_stack_is_a_bijection(t in 2usize..12, z in 0usize..12, shifts in prop::collection::vec(0usize..64, 1..14)) {
        let z = z % t;
        let x = apply_shifts(z, &shifts, t);
        prop_assert!(x < t);
        prop_assert_eq!(invert_shifts(x, &shifts, t), z);
    }

    #[test]
    fn clip_is_inactive_inside_the_trust_region(frac in 0.0f64..=1.0, advantage in -5.0f64..5.0, eps in 0.01f64..0.5) {
        let ratio = 1.0 - eps + 2.0 * eps * frac;
        prop_assert_eq!(ppo_term(ratio, advantage, eps), ratio * advantage);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn canonical_form_ignores_node_order(index in 0usize..100, seed in any::<u64>()) {
        let mols = molecules();
        let g = &mols[index % mols.len()];
        let h = g.permuted(&shuffled(seed, g.num_nodes())).unwrap();
        prop_assert_eq!(canonical_form(g, &qm9()), canonical_form(&h, &qm9()));
    }

    #[test]
    fn embeddings_follow_node_permutations(seed in any::<u64>(), n in 1usize..9) {
        let model = DiscreteFlowModel::new(Alphabet::generic(3, 2).unwrap(), small_flow(), seed % 7).unwrap();
        let g = random_graph(seed, n, 3, 2, true);
        let order = shuffled(seed ^ 1, n);
        let (a, b) = (model.embed(&g).unwrap(), model.embed(&g.permuted(&order).unwrap()).unwrap());
        for (x, y) in a.graph.data().iter().zip(b.graph.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let width = a.nodes.cols();
        for (p, &old) in order.iter().enumerate() {
            for col in 0..width {
                prop_assert!((a.nodes.data()[old * width + col] - b.nodes.data()[p * width + col]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn likelihood_depends_only_on_the_bfs_sequence(seed in any::<u64>(), n in 1usize..9) {
        let model = DiscreteFlowModel::new(Alphabet::generic(2, 2).unwrap(), small_flow(), seed % 5).unwrap();
        let g = random_graph(seed, n, 2, 2, true).permuted(&shuffled(seed ^ 3, n)).unwrap();
        let canon = g.bfs_canonical().unwrap();
        prop_assert_eq!(model.log_likelihood(&g).unwrap().to_bits(), model.log_likelihood(&canon).unwrap().to_bits());
        prop_assert_eq!(canon.bfs_canonical().unwrap(), canon);
    }

    #[test]
    fn mmd_is_symmetric(seed in any::<u64>(), sizes in prop::collection::vec(1usize..10, 2..8)) {
        let graphs: Vec<LabeledGraph> = sizes.iter().enumerate().map(|(i, &n)| random_graph(seed + i as u64, n, 1, 1, false)).collect();
        let (a, b) = graphs.split_at(graphs.len() / 2);
        for stat in Statistic::ALL {
            prop_assert_eq!(mmd(a, b, stat).unwrap().to_bits(), mmd(b, a, stat).unwrap().to_bits());
        }
    }

    #[test]
    fn advantages_are_suffix_sums_of_discounted_rewards(
        violations in prop::collection::vec(any::<bool>(), 1..30),
        final_reward in -10.0f64..10.0,
        gamma in 0.05f64..=1.0,
        penalty in 0.0f64..3.0,
    ) {
        let spec = RewardSpec { transform: PropertyTransform::Identity, gamma, valency_penalty: penalty, use_penalties: false };
        let steps = assign_rewards(&violations, final_reward, &spec);
        let last = violations.len() - 1;
        let expected: Vec<f64> = violations
            .iter()
            .enumerate()
            .map(|(t, &bad)| gamma.powi((last - t) as i32) * final_reward - if bad { penalty } else { 0.0 })
            .collect();
        for t in 0..expected.len() {
            prop_assert!((steps[t].reward - expected[t]).abs() < 1e-12);
            let suffix: f64 = expected[t..].iter().sum();
            prop_assert!((steps[t].advantage - suffix).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn orbit_counts_match_template_matching(seed in any::<u64>(), n in 0usize..=12) {
        let g = random_graph(seed, n, 1, 1, seed % 2 == 0);
        prop_assert_eq!(orbit_counts(&g).unwrap(), naive_orbits(&g));
    }
}

#[test]
fn equal_logits_sample_uniformly() {
    let model = DiscreteFlowModel::new(qm9(), small_flow(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (kind, temperature) in [(TokenKind::Node, 0.35), (TokenKind::Edge, 0.23), (TokenKind::Edge, 2.0)] {
        let t = model.categories(kind);
        let mut counts = vec![0.0; t];
        let draws = 100_000;
        for _ in 0..draws {
            counts[model.sample_latent(kind, temperature, &mut rng)] += 1.0;
        }
        let expected = draws as f64 / t as f64;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new((t - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 1e-3, "{kind:?} at {temperature}: chi2 {chi2}, p {p}");
    }
}
