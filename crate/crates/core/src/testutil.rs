//! Shared fixtures for unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::LabeledGraph;
use crate::nn::{Gradients, ParamId, ParamStore};

/// Largest per-array relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
/// between backward and central differences with step 1e-4. Entries whose
/// window straddles a ReLU kink (step 1e-4 and 1e-5 estimates disagree)
/// are left out; at most 2% of entries may be.
pub fn gradcheck(store: &ParamStore, loss: impl Fn(&ParamStore) -> (f64, Gradients)) -> f64 {
    let (_, analytic) = loss(store);
    let central = |id: ParamId, k: usize, h: f64| {
        let mut plus = store.clone();
        plus.get_mut(id).data_mut()[k] += h;
        let mut minus = store.clone();
        minus.get_mut(id).data_mut()[k] -= h;
        (loss(&plus).0 - loss(&minus).0) / (2.0 * h)
    };
    let mut worst: f64 = 0.0;
    let (mut total, mut kinks) = (0usize, 0usize);
    for id in store.ids() {
        let a = analytic.get(id).unwrap();
        let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
        for k in 0..store.get(id).len() {
            total += 1;
            let numeric = central(id, k, 1e-4);
            let fine = central(id, k, 1e-5);
            if (numeric - fine).abs() > 1e-6 * (1.0 + fine.abs()) {
                kinks += 1;
                continue;
            }
            diff += (a.data()[k] - numeric).powi(2);
            norm_a += a.data()[k].powi(2);
            norm_n += numeric * numeric;
        }
        let denom = norm_a.sqrt().max(norm_n.sqrt());
        // arrays with an effectively zero gradient only need absolute agreement
        let err = if denom < 1e-7 { diff.sqrt() / 1e-2 } else { diff.sqrt() / denom };
        worst = worst.max(err);
    }
    assert!(kinks * 50 <= total, "{kinks} of {total} entries sit on kinks");
    worst
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, k: usize, c: usize) -> LabeledGraph {
    let mut g = LabeledGraph::with_nodes((0..n).map(|_| rng.gen_range(0..k)).collect());
    for i in 1..n {
        let j = rng.gen_range(0..i);
        g.add_edge(i, j, rng.gen_range(0..c)).unwrap();
    }
    for _ in 0..n {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if i != j && g.edge(i, j).is_none() {
            g.add_edge(i, j, rng.gen_range(0..c)).unwrap();
        }
    }
    g
}

