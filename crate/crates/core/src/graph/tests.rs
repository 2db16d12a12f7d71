use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{sigmoid, Tape};
use crate::data::NodeSpec;
use crate::testutil::{implied_cdf, ks_statistic};
use crate::units::{normal, Noise};

fn graph(nodes: Vec<NodeSpec>) -> CausalGraph {
    CausalGraph::from_spec(&GraphSpec::new(0, nodes)).unwrap()
}

fn node(name: &str, kind: UnitKind, parents: &[&str]) -> NodeSpec {
    NodeSpec::new(name, kind, parents).with_hidden(vec![8])
}

#[test]
fn chain_is_ordered() {
    let spec = GraphSpec::new(
        0,
        vec![
            node("C", UnitKind::Normal, &["B"]),
            node("A", UnitKind::Normal, &[]),
            node("B", UnitKind::Normal, &["A"]),
        ],
    );
    assert_eq!(validate_and_order(&spec).unwrap(), ["A", "B", "C"]);
}

#[test]
fn ties_follow_declaration_order() {
    let spec = GraphSpec::new(
        0,
        vec![
            node("z", UnitKind::Normal, &[]),
            node("a", UnitKind::Normal, &[]),
            node("m", UnitKind::Normal, &["z"]),
        ],
    );
    assert_eq!(validate_and_order(&spec).unwrap(), ["z", "a", "m"]);
}

#[test]
fn two_cycle_is_reported() {
    let spec = GraphSpec::new(
        0,
        vec![node("A", UnitKind::Normal, &["B"]), node("B", UnitKind::Normal, &["A"])],
    );
    match validate_and_order(&spec) {
        Err(Error::Cycle(c)) => {
            assert_eq!(c.len(), 3);
            assert_eq!(c.first(), c.last());
        }
        other => panic!("expected a cycle, got {other:?}"),
    }
}

#[test]
fn unknown_parent_is_reported() {
    let spec = GraphSpec::new(0, vec![node("A", UnitKind::Normal, &["ghost"])]);
    assert!(matches!(validate_and_order(&spec), Err(Error::UnknownNode(n)) if n == "ghost"));
}

#[test]
fn confounder_needs_exactly_two_children() {
    let spec = GraphSpec::new(
        0,
        vec![
            node("U", UnitKind::Confounder, &[]),
            node("X", UnitKind::Normal, &["U"]),
        ],
    );
    assert!(matches!(CausalGraph::from_spec(&spec), Err(Error::InvalidGraph(_))));
}

#[test]
fn random_dags_respect_every_edge() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let mut names: Vec<String> = (0..10).map(|i| format!("n{i}")).collect();
        names.shuffle(&mut rng);
        let mut edges = Vec::new();
        let mut nodes: Vec<NodeSpec> = names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let parents: Vec<&str> = (0..i).filter(|_| rng.random_bool(0.3)).map(|j| names[j].as_str()).collect();
                for p in &parents {
                    edges.push((p.to_string(), name.clone()));
                }
                node(name, UnitKind::Normal, &parents)
            })
            .collect();
        nodes.shuffle(&mut rng);
        let order = validate_and_order(&GraphSpec::new(0, nodes)).unwrap();
        let pos = |n: &str| order.iter().position(|o| o == n).unwrap();
        assert_eq!(order.len(), 10);
        for (p, c) in &edges {
            assert!(pos(p) < pos(c), "{p} -> {c} violated in {order:?}");
        }
    }
}

#[test]
fn standard_normal_root_moments() {
    let g = graph(vec![node("X", UnitKind::Normal, &[])]);
    let d = g.sample(100_000, &Intervention::new(), 1).unwrap();
    let x = d.values("X").unwrap();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "var {var}");
}

#[test]
fn intervened_column_is_constant() {
    let g = graph(vec![node("A", UnitKind::Normal, &[]), node("B", UnitKind::Normal, &["A"])]);
    let d = g.sample(50, &Intervention::new().with("A", 1.5), 0).unwrap();
    assert!(d.values("A").unwrap().iter().all(|&a| a == 1.5));
}

#[test]
fn intervened_child_follows_its_conditional() {
    let g = graph(vec![node("A", UnitKind::Normal, &[]), node("B", UnitKind::Flow, &["A"])]);
    let a = 0.7;
    let d = g.sample(100_000, &Intervention::new().with("A", a), 5).unwrap();
    let unit = g.unit("B").unwrap();
    let theta = unit.theta(g.params(), &Matrix::new(1, 1, vec![a]).unwrap()).unwrap();
    let (lo, hi) = {
        let b = d.values("B").unwrap();
        let (mn, mx) = b.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        (mn - 1.0, mx + 1.0)
    };
    let cdf = implied_cdf(unit, theta.row(0), lo, hi, 200_000);
    let ks = ks_statistic(d.values("B").unwrap().to_vec(), cdf);
    assert!(ks < 0.02, "KS {ks}");
}

#[test]
fn root_intervention_equals_conditioning() {
    let g = graph(vec![node("A", UnitKind::Bernoulli, &[]), node("B", UnitKind::Normal, &["A"])]);
    let obs = g.sample(100_000, &Intervention::new(), 2).unwrap();
    let cond: Vec<f64> = obs
        .values("A")
        .unwrap()
        .iter()
        .zip(obs.values("B").unwrap())
        .filter(|(a, _)| **a == 1.0)
        .map(|(_, b)| *b)
        .collect();
    let done = g.sample(100_000, &Intervention::new().with("A", 1.0), 3).unwrap();
    let mut x = done.values("B").unwrap().to_vec();
    x.sort_by(f64::total_cmp);
    let ecdf = move |v: f64| x.partition_point(|&s| s <= v) as f64 / x.len() as f64;
    assert!(ks_statistic(cond, ecdf) < 0.02);
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let g = graph(vec![
        node("A", UnitKind::Categorical { classes: 3 }, &[]),
        node("B", UnitKind::Flow, &["A"]),
    ]);
    let none = Intervention::new();
    assert_eq!(g.sample(100, &none, 4).unwrap(), g.sample(100, &none, 4).unwrap());
    assert_ne!(g.sample(100, &none, 4).unwrap(), g.sample(100, &none, 5).unwrap());
}

#[test]
fn independent_standard_normals_add_up() {
    let g = graph(vec![node("X", UnitKind::Normal, &[]), node("Y", UnitKind::Normal, &[])]);
    let d = g.rows_to_dataset(&[vec![0.0, 0.0]]).unwrap();
    let l = g.loglk(&d, &InferenceConfig::default()).unwrap();
    assert!((l[0] - 2.0 * -normal::HALF_LN_2PI).abs() < 1e-12);
}

fn confounded_pair() -> CausalGraph {
    graph(vec![
        node("U", UnitKind::Confounder, &[]),
        node("X", UnitKind::Normal, &["U"]),
        node("Y", UnitKind::Flow, &["U", "X"]),
        node("Z", UnitKind::Bernoulli, &["Y"]),
    ])
}

#[test]
fn single_draw_collapses_to_the_conditional() {
    let g = confounded_pair();
    let d = g.sample(20, &Intervention::new(), 1).unwrap();
    let u = 0.37;
    let draws = ConfounderDraws::PerRow {
        draws: Matrix::new(20, 1, vec![u; 20]).unwrap(),
        m: 1,
    };
    let got = g.loglk_with(&d, &draws).unwrap();
    for r in 0..20 {
        let (x, y, z) = (d.values("X").unwrap()[r], d.values("Y").unwrap()[r], d.values("Z").unwrap()[r]);
        let theta = |name: &str, inputs: Vec<f64>| {
            let unit = g.unit(name).unwrap();
            unit.theta(g.params(), &Matrix::new(1, inputs.len(), inputs).unwrap()).unwrap().row(0).to_vec()
        };
        let want = g.unit("X").unwrap().loglk(&theta("X", vec![u]), x).unwrap()
            + g.unit("Y").unwrap().loglk(&theta("Y", vec![x, u]), y).unwrap()
            + g.unit("Z").unwrap().loglk(&theta("Z", vec![y]), z).unwrap();
        assert!((got[r] - want).abs() < 1e-10, "row {r}: {} vs {want}", got[r]);
    }
}

#[test]
fn shared_and_per_row_draws_agree() {
    let g = confounded_pair();
    let d = g.sample(7, &Intervention::new(), 2).unwrap();
    let shared = g.draw_confounders(9, &mut ChaCha8Rng::seed_from_u64(0));
    let per_row = Matrix::new(63, 1, (0..7).flat_map(|_| shared.data.clone()).collect()).unwrap();
    let a = g.loglk_with(&d, &ConfounderDraws::Shared(shared)).unwrap();
    let b = g.loglk_with(&d, &ConfounderDraws::PerRow { draws: per_row, m: 9 }).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn loglk_gradient_matches_finite_differences_through_confounders() {
    let mut g = confounded_pair();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let names: Vec<String> = g.params().names().map(str::to_string).collect();
    for name in &names {
        let v: Vec<f64> = g.params().value(name).unwrap().iter().map(|_| rng.random_range(-0.5..0.5)).collect();
        g.params_mut().set(name, &v).unwrap();
    }
    let d = g.sample(6, &Intervention::new(), 3).unwrap();
    let cols = g.data_columns(&d).unwrap();
    let draws = ConfounderDraws::Shared(g.draw_confounders(5, &mut rng));
    let objective = |g: &CausalGraph| {
        let mut t = Tape::new();
        let l = g.loglk_tape(&mut t, &cols, Some(&draws)).unwrap();
        let s = t.sum(l).unwrap();
        (t.scalar(s), t.backward(s).unwrap())
    };
    let (_, grads) = objective(&g);
    let h = 1e-6;
    for name in &names {
        let base = g.params().value(name).unwrap().to_vec();
        let analytic = grads.param(name).unwrap().to_vec();
        for k in (0..base.len()).step_by(3) {
            let mut v = base.clone();
            v[k] += h;
            g.params_mut().set(name, &v).unwrap();
            let up = objective(&g).0;
            v[k] -= 2.0 * h;
            g.params_mut().set(name, &v).unwrap();
            let down = objective(&g).0;
            g.params_mut().set(name, &base).unwrap();
            let fd = (up - down) / (2.0 * h);
            let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-3);
            assert!(err < 1e-4, "{name}[{k}]: analytic {} fd {fd}", analytic[k]);
        }
    }
}

#[test]
fn more_draws_shrink_estimator_variance() {
    let g = confounded_pair();
    let d = g.sample(1, &Intervention::new(), 9).unwrap();
    let spread = |m: usize| {
        let est: Vec<f64> = (0..30)
            .map(|s| g.loglk(&d, &InferenceConfig { m, n: 1, seed: s }).unwrap()[0])
            .collect();
        let mean = est.iter().sum::<f64>() / 30.0;
        est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 29.0
    };
    let (v10, v100, v1000) = (spread(10), spread(100), spread(1000));
    assert!(v10 > v100 && v100 > v1000, "{v10} {v100} {v1000}");
}

#[test]
fn replay_reproduces_samples() {
    let g = confounded_pair();
    let none = Intervention::new();
    let (d, table) = g.sample_with_noise(200, &none, 6).unwrap();
    assert_eq!(g.replay(&table, &none).unwrap(), d);
}

fn mixed_graph() -> CausalGraph {
    graph(vec![
        node("A", UnitKind::Normal, &[]),
        node("C", UnitKind::Categorical { classes: 3 }, &["A"]),
        node("B", UnitKind::Bernoulli, &["A"]),
        node("D", UnitKind::Flow, &["A", "B", "C"]),
        node("E", UnitKind::Ald, &["D"]),
    ])
}

#[test]
fn abducted_noise_regenerates_evidence() {
    let g = mixed_graph();
    let d = g.sample(100, &Intervention::new(), 8).unwrap();
    let cols = g.data_columns(&d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for r in 0..100 {
        let ev: Vec<f64> = cols.iter().map(|c| c[r]).collect();
        let post = g.abduct_all(&ev, &[]).unwrap();
        let mut table = NoiseTable {
            rows: 1,
            noise: Default::default(),
            confounders: Default::default(),
        };
        for (name, p) in &post {
            let noise = g.unit(name).unwrap().posterior_noise(p, &mut rng).unwrap();
            table.noise.insert(name.clone(), vec![noise]);
        }
        let back = g.replay(&table, &Intervention::new()).unwrap();
        for (k, name) in g.observed_names().iter().enumerate() {
            let (x, y) = (back.values(name).unwrap()[0], ev[k]);
            if g.unit(name).unwrap().kind().is_discrete() {
                assert_eq!(x, y, "{name} row {r}");
            } else {
                assert!((x - y).abs() < 1e-6, "{name} row {r}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn bernoulli_posterior_draws_regenerate_the_class() {
    let g = mixed_graph();
    let d = g.sample(20, &Intervention::new(), 1).unwrap();
    let cols = g.data_columns(&d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let unit = g.unit("B").unwrap();
    for r in 0..20 {
        let ev: Vec<f64> = cols.iter().map(|c| c[r]).collect();
        let post = &g.abduct_all(&ev, &[]).unwrap()["B"];
        let theta = unit.theta(g.params(), &Matrix::new(1, 1, vec![ev[0]]).unwrap()).unwrap();
        for _ in 0..50 {
            let noise = unit.posterior_noise(post, &mut rng).unwrap();
            assert_eq!(unit.sample(theta.row(0), &noise).unwrap(), ev[2]);
        }
    }
}

fn continuous_graph() -> CausalGraph {
    graph(vec![
        node("A", UnitKind::Normal, &[]),
        node("B", UnitKind::Flow, &["A"]),
        node("C", UnitKind::Ald, &["A", "B"]),
        node("D", UnitKind::Normal, &["C"]),
    ])
}

#[test]
fn factual_intervention_reproduces_evidence() {
    let g = continuous_graph();
    let d = g.sample(100, &Intervention::new(), 4).unwrap();
    let cols = g.data_columns(&d).unwrap();
    let cfg = InferenceConfig { m: 1, n: 5, seed: 0 };
    for r in 0..100 {
        let ev: Vec<f64> = cols.iter().map(|c| c[r]).collect();
        let cf = g.counterfactual(&ev, &Intervention::new().with("A", ev[0]), &cfg).unwrap();
        for row in &cf.rows {
            for (x, y) in row.iter().zip(&ev) {
                assert!((x - y).abs() < 1e-6, "{row:?} vs {ev:?}");
            }
        }
        assert!(cf.weights.iter().all(|&w| w == 0.2));
    }
}

#[test]
fn counterfactual_of_counterfactual_restores_evidence() {
    let g = continuous_graph();
    let d = g.sample(20, &Intervention::new(), 5).unwrap();
    let cols = g.data_columns(&d).unwrap();
    let cfg = InferenceConfig { m: 1, n: 1, seed: 0 };
    for r in 0..20 {
        let ev: Vec<f64> = cols.iter().map(|c| c[r]).collect();
        let there = g.counterfactual(&ev, &Intervention::new().with("B", ev[1] + 1.3), &cfg).unwrap();
        let back = g
            .counterfactual(&there.rows[0], &Intervention::new().with("B", ev[1]), &cfg)
            .unwrap();
        for (x, y) in back.rows[0].iter().zip(&ev) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn linear_sem_counterfactual_matches_algebra() {
    let mut g = graph(vec![
        NodeSpec::new("A", UnitKind::Glm, &[]),
        NodeSpec::new("B", UnitKind::Glm, &["A"]),
    ]);
    g.params_mut().set("B.w0", &[2.0, 0.0]).unwrap();
    g.params_mut().set("B.b0", &[0.0, 0.0]).unwrap();
    let cfg = InferenceConfig { m: 1, n: 3, seed: 0 };
    for (a, b, a2) in [(0.5, 1.7, -1.0), (-2.0, 0.0, 3.0), (1.0, -4.0, 1.25)] {
        let post = g.abduct_all(&[a, b], &[]).unwrap();
        assert_eq!(post["B"], crate::units::NoisePosterior::Exact(b - 2.0 * a));
        let cf = g.counterfactual(&[a, b], &Intervention::new().with("A", a2), &cfg).unwrap();
        for row in &cf.rows {
            assert!((row[1] - (b + 2.0 * (a2 - a))).abs() < 1e-12);
        }
    }
}

#[test]
fn uninformative_confounder_gets_uniform_weights() {
    let mut g = graph(vec![
        NodeSpec::new("U", UnitKind::Confounder, &[]),
        NodeSpec::new("X", UnitKind::Glm, &["U"]),
        NodeSpec::new("Y", UnitKind::Glm, &["U"]),
    ]);
    for n in ["X", "Y"] {
        g.params_mut().set(&format!("{n}.w0"), &[0.0, 0.0]).unwrap();
    }
    let cfg = InferenceConfig { m: 40, n: 10, seed: 1 };
    let cf = g.counterfactual(&[0.3, -1.0], &Intervention::new().with("X", 2.0), &cfg).unwrap();
    assert_eq!(cf.confounder_weights.len(), 40);
    for w in &cf.confounder_weights {
        assert!((w - 1.0 / 40.0).abs() < 1e-12);
    }
    assert!((cf.expectation_under(|_| 1.0) - 1.0).abs() < 1e-12);
}

#[test]
fn uniform_row_weights_give_the_plain_mean() {
    let g = continuous_graph();
    let ev = g.evidence(&g.sample(1, &Intervention::new(), 0).unwrap(), 0).unwrap();
    let cf = g.counterfactual(&ev, &Intervention::new().with("A", 0.0), &InferenceConfig::default()).unwrap();
    let plain = cf.column("D").unwrap().iter().sum::<f64>() / cf.len() as f64;
    assert!((cf.mean("D").unwrap() - plain).abs() < 1e-12);
}

/// U -> X, U -> Y, X -> Y with logistic units; `do(X = 0)` given `(x, y) = (1, 0)`.
fn discrete_confounded() -> CausalGraph {
    let mut g = graph(vec![
        NodeSpec::new("U", UnitKind::Confounder, &[]),
        NodeSpec::new("X", UnitKind::Bernoulli, &["U"]).with_hidden(vec![]),
        NodeSpec::new("Y", UnitKind::Bernoulli, &["U", "X"]).with_hidden(vec![]),
    ]);
    g.params_mut().set("X.w0", &[1.5]).unwrap();
    g.params_mut().set("X.b0", &[-0.2]).unwrap();
    // Y's inputs are [X, U].
    g.params_mut().set("Y.w0", &[2.0, -1.0]).unwrap();
    g.params_mut().set("Y.b0", &[0.3]).unwrap();
    g
}

#[test]
fn confounded_counterfactual_matches_enumeration() {
    let g = discrete_confounded();
    // Oracle: quadrature over u of the posterior p(u | x=1, y=0) times the
    // probability that the abducted interval noise of Y flips under x = 0.
    let px = |u: f64| sigmoid(-0.2 + 1.5 * u);
    let py = |x: f64, u: f64| sigmoid(0.3 + 2.0 * x - u);
    let (mut num, mut den) = (0.0, 0.0);
    let h = 1e-3;
    for i in 0..=16_000 {
        let u = -8.0 + i as f64 * h;
        let prior = (-0.5 * u * u).exp();
        let like = px(u) * (1.0 - py(1.0, u));
        // Y = 1 iff eps < p; evidence y = 0 puts eps in [py(1,u), 1).
        let lo = py(1.0, u);
        let flip = ((py(0.0, u) - lo).max(0.0)) / (1.0 - lo);
        den += prior * like;
        num += prior * like * flip;
    }
    let oracle = num / den;
    let cfg = InferenceConfig { m: 20_000, n: 20_000, seed: 3 };
    let cf = g.counterfactual(&[1.0, 0.0], &Intervention::new().with("X", 0.0), &cfg).unwrap();
    let est = cf.mean("Y").unwrap();
    assert!((est - oracle).abs() < 0.01, "estimate {est} oracle {oracle}");
}

#[test]
fn batch_counterfactuals_are_reproducible() {
    let g = confounded_pair();
    let d = g.sample(5, &Intervention::new(), 1).unwrap();
    let cfg = InferenceConfig { m: 20, n: 10, seed: 4 };
    let doing = Intervention::new().with("X", 0.5);
    let a = g.counterfactual_rows(&d, &doing, &cfg).unwrap();
    assert_eq!(a, g.counterfactual_rows(&d, &doing, &cfg).unwrap());
    // Row results do not depend on which other rows are in the batch.
    let solo = g.counterfactual_rows(&d.select_rows(&[0, 1, 2]), &doing, &cfg).unwrap();
    assert_eq!(a[..3], solo[..]);
}

#[test]
fn confounder_values_never_appear_in_samples() {
    let g = confounded_pair();
    let d = g.sample(3, &Intervention::new(), 0).unwrap();
    assert_eq!(d.names(), ["X", "Y", "Z"]);
}

#[test]
fn interventions_on_confounders_are_rejected() {
    let g = confounded_pair();
    assert!(g.sample(3, &Intervention::new().with("U", 0.0), 0).is_err());
    assert!(g.sample(3, &Intervention::new().with("Z", 0.5), 0).is_err());
}

#[test]
fn noise_tables_record_intervened_nodes_as_absent() {
    let g = continuous_graph();
    let (_, t) = g.sample_with_noise(4, &Intervention::new().with("B", 1.0), 0).unwrap();
    assert!(!t.noise.contains_key("B"));
    assert!(matches!(t.noise["A"][0], Noise::Scalar(_)));
}
