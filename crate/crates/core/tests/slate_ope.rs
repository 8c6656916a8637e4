use flowis::slate::{full_lattice_flows, ContextDependentPl, ItemSet, SetSufficientPolicy};
use flowis::slate_ope::{
    estimate_slate_value, exact_slate_value, ff_weight, log_slates, tree_weight, SlateMethod,
    SlateOptions, SlateRecord,
};
use flowis::stats::{mean, standard_error};

fn reward(x: usize, s: ItemSet) -> f64 {
    s.iter()
        .map(|i| ((i * 3 + x) % 4) as f64 * 0.25)
        .sum::<f64>()
        / s.len() as f64
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn ordering_prob<P: SetSufficientPolicy<f64>>(p: &P, x: usize, sigma: &[usize]) -> f64 {
    let mut picked = ItemSet::EMPTY;
    let mut prob = 1.0;
    for &i in sigma {
        prob *= p.next_item_dist(x, picked)[i];
        picked = picked.with(i);
    }
    prob
}

#[test]
fn behavior_average_of_tree_weight_is_ff_weight() {
    let pi = ContextDependentPl::<f64>::random(6, 2, 0.9, 1);
    let beta = ContextDependentPl::<f64>::random(6, 2, 0.9, 2);
    for x in 0..2 {
        for slate in [[0usize, 2, 5], [1, 3, 4], [0, 1, 2]] {
            let (mut num, mut den) = (0.0, 0.0);
            for sigma in permutations(&slate) {
                let b = ordering_prob(&beta, x, &sigma);
                let rec = SlateRecord {
                    context: x,
                    ordering: sigma,
                    reward: 0.0,
                };
                num += b * tree_weight(&rec, &pi, &beta).unwrap();
                den += b;
            }
            let rec = SlateRecord {
                context: x,
                ordering: slate.to_vec(),
                reward: 0.0,
            };
            let w = ff_weight(&rec, &pi, &beta).unwrap().unwrap();
            assert!((num / den - w).abs() < 1e-9, "{} vs {w}", num / den);
        }
    }
}

#[test]
fn dr_with_true_model_has_no_more_variance_than_ff_ois() {
    // Exact per-record variances with reward r(x,S) + N(0, σ²), contexts uniform.
    let (m, k, n_ctx, noise_var) = (6, 3, 3, 0.04);
    let pi = ContextDependentPl::<f64>::random(m, n_ctx, 0.7, 11);
    let beta = ContextDependentPl::<f64>::random(m, n_ctx, 0.7, 12);
    let (mut ois1, mut ois2, mut dr1, mut dr2) = (0.0, 0.0, 0.0, 0.0);
    for x in 0..n_ctx {
        let lp = full_lattice_flows(&pi, x, k, 1_000).unwrap();
        let lb = full_lattice_flows(&beta, x, k, 1_000).unwrap();
        let dm: f64 = lp.slates().map(|(s, f)| f * reward(x, s)).sum();
        for (s, fb) in lb.slates() {
            let w = lp.flow(s) / fb;
            let r = reward(x, s);
            let px = fb / n_ctx as f64;
            ois1 += px * w * r;
            ois2 += px * w * w * (r * r + noise_var);
            dr1 += px * dm;
            dr2 += px * (dm * dm + w * w * noise_var);
        }
    }
    let (v_ois, v_dr) = (ois2 - ois1 * ois1, dr2 - dr1 * dr1);
    assert!((ois1 - dr1).abs() < 1e-12);
    assert!(v_dr <= v_ois, "{v_dr} > {v_ois}");
}

#[test]
fn slate_ff_ois_is_unbiased() {
    let (m, k, n_ctx) = (5, 2, 2);
    let pi = ContextDependentPl::<f64>::random(m, n_ctx, 0.5, 31);
    let beta = ContextDependentPl::<f64>::random(m, n_ctx, 0.5, 32);
    let truth: f64 = exact_slate_value(&pi, n_ctx, k, &reward, 1_000).unwrap();
    let opts = SlateOptions::default();
    let mut ff = Vec::new();
    let mut tree = Vec::new();
    for trial in 0..500 {
        let data = log_slates(&beta, "beta", n_ctx, k, 100, 7_000 + trial, &reward, 0.1).unwrap();
        ff.push(
            estimate_slate_value(&data, SlateMethod::FfOis, &pi, &beta, None, &opts)
                .unwrap()
                .estimate,
        );
        tree.push(
            estimate_slate_value(&data, SlateMethod::TreeOis, &pi, &beta, None, &opts)
                .unwrap()
                .estimate,
        );
    }
    for (name, xs) in [("ff_ois", &ff), ("tree_ois", &tree)] {
        let (mu, se) = (mean(xs), standard_error(xs));
        assert!(
            (mu - truth).abs() < 3.0 * se,
            "{name}: mean {mu} truth {truth} se {se}"
        );
    }
}
