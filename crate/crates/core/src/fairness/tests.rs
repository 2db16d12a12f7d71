use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::sigmoid;
use crate::data::{Column, GraphSpec, NodeSpec};
use crate::units::UnitKind;

fn glm(name: &str, kind: UnitKind, parents: &[&str]) -> NodeSpec {
    NodeSpec::new(name, kind, parents).with_hidden(vec![])
}

fn build(nodes: Vec<NodeSpec>) -> CausalGraph {
    CausalGraph::from_spec(&GraphSpec::new(0, nodes)).unwrap()
}

/// A ~ Bernoulli, B = 2A + eps.
fn binary_sem() -> CausalGraph {
    let mut g = build(vec![
        glm("A", UnitKind::Bernoulli, &[]),
        glm("B", UnitKind::Glm, &["A"]),
    ]);
    g.params_mut().set("B.w0", &[2.0, 0.0]).unwrap();
    g.params_mut().set("B.b0", &[0.0, 0.0]).unwrap();
    g
}

fn cfg(n: usize) -> InferenceConfig {
    InferenceConfig { m: 1, n, seed: 5 }
}

#[test]
fn complement_needs_a_binary_node() {
    let g = binary_sem();
    assert_eq!(InterventionPolicy::Complement.targets(&g, "A", 1.0).unwrap(), vec![0.0]);
    assert!(matches!(
        InterventionPolicy::Complement.targets(&g, "B", 1.0),
        Err(Error::Config(_))
    ));
    let values = InterventionPolicy::Values(vec![0.0, 1.0]);
    assert_eq!(values.targets(&g, "A", 0.0).unwrap(), vec![1.0]);
    assert!(InterventionPolicy::Values(vec![1.0]).targets(&g, "A", 1.0).is_err());
}

#[test]
fn protected_sink_has_zero_unfairness() {
    let mut g = build(vec![
        glm("X", UnitKind::Glm, &[]),
        glm("S", UnitKind::Bernoulli, &["X"]),
    ]);
    g.params_mut().set("S.w0", &[1.0]).unwrap();
    let data = g.sample(50, &Intervention::new(), 1).unwrap();
    let p = LinearPredictor::new(&["X"], vec![3.0], 1.0).unwrap();
    for k in [1, 2] {
        let cu = cu_k(&g, &p, "S", k, &InterventionPolicy::Complement, &data, &cfg(8)).unwrap();
        assert_eq!(cu, 0.0);
    }
}

#[test]
fn constant_shift_gives_exact_cu() {
    let g = binary_sem();
    let data = g.sample(40, &Intervention::new(), 2).unwrap();
    // Flipping A moves B by +-2, so Y = c A + B moves by +-(c + 2).
    for c in [0.0, 1.0, -5.0] {
        let p = LinearPredictor::new(&["A", "B"], vec![c, 1.0], 0.3).unwrap();
        let r = audit(&g, &p, "A", &InterventionPolicy::Complement, &data, None, &cfg(4)).unwrap();
        let shift: f64 = c + 2.0;
        assert!((r.cu_1 - shift.abs()).abs() < 1e-9, "{c}: {}", r.cu_1);
        assert!((r.cu_2 - shift * shift).abs() < 1e-9);
        assert!((r.mean_gap - shift.abs()).abs() < 1e-9);
    }
}

#[test]
fn discrete_cu_matches_enumeration() {
    let mut g = build(vec![
        glm("A", UnitKind::Bernoulli, &[]),
        glm("B", UnitKind::Bernoulli, &["A"]),
        glm("C", UnitKind::Bernoulli, &["A", "B"]),
    ]);
    g.params_mut().set("A.theta", &[0.4]).unwrap();
    g.params_mut().set("B.w0", &[1.2]).unwrap();
    g.params_mut().set("B.b0", &[-0.5]).unwrap();
    g.params_mut().set("C.w0", &[-1.0, 2.0]).unwrap();
    g.params_mut().set("C.b0", &[0.3]).unwrap();
    let pb = |a: f64| sigmoid(-0.5 + 1.2 * a);
    let pc = |a: f64, b: f64| sigmoid(0.3 - a + 2.0 * b);
    // Probability that a uniform draw on the interval regenerating `x`
    // under success probability `p` lands below `q`.
    let below = |x: f64, p: f64, q: f64| {
        let (lo, hi) = if x == 1.0 { (0.0, p) } else { (p, 1.0) };
        (q.min(hi) - lo).max(0.0) / (hi - lo)
    };
    let rows: Vec<Vec<f64>> = (0..8)
        .map(|k| vec![(k & 1) as f64, ((k >> 1) & 1) as f64, ((k >> 2) & 1) as f64])
        .collect();
    let mut oracle = 0.0;
    for r in &rows {
        let (a, b, c) = (r[0], r[1], r[2]);
        let a2 = 1.0 - a;
        let pb1 = below(b, pb(a), pb(a2));
        let mut e = 0.0;
        for b2 in [0.0, 1.0] {
            let pb2 = if b2 == 1.0 { pb1 } else { 1.0 - pb1 };
            let pc1 = below(c, pc(a, b), pc(a2, b2));
            for c2 in [0.0, 1.0] {
                let p = pb2 * if c2 == 1.0 { pc1 } else { 1.0 - pc1 };
                e += p * (b2 + 2.0 * c2 - b - 2.0 * c).abs();
            }
        }
        oracle += e / 8.0;
    }
    let data = g.rows_to_dataset(&rows).unwrap();
    let p = LinearPredictor::new(&["B", "C"], vec![1.0, 2.0], 0.0).unwrap();
    let est = cu_k(&g, &p, "A", 1, &InterventionPolicy::Complement, &data, &cfg(40_000)).unwrap();
    assert!((est - oracle).abs() < 0.02, "estimate {est} oracle {oracle}");
}

fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let tied = x.iter().filter(|&&w| w == v).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect()
}

#[test]
fn ranks_average_ties() {
    let x = [3.0, 1.0, 3.0, 2.0, 3.0, -1.0];
    assert_eq!(ranks(&x), naive_ranks(&x));
}

#[test]
fn spearman_matches_rank_difference_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a: Vec<f64> = (0..30).map(|_| rng.random()).collect();
    let b: Vec<f64> = a.iter().map(|x| x + 0.3 * rng.random::<f64>()).collect();
    let (ra, rb) = (naive_ranks(&a), naive_ranks(&b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
    let oracle = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
    assert!((spearman(&a, &b).unwrap() - oracle).abs() < 1e-12);
}

#[test]
fn spearman_extremes_and_monotone_invariance() {
    let a = [1.0, 2.0, 5.0, 9.0];
    assert_eq!(spearman(&a, &[0.1, 0.2, 0.3, 7.0]).unwrap(), 1.0);
    assert_eq!(spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
    let b = [2.0, 1.0, 4.0, 3.0];
    let cubed: Vec<f64> = b.iter().map(|v| v * v * v + 10.0).collect();
    assert_eq!(spearman(&a, &b).unwrap(), spearman(&a, &cubed).unwrap());
    assert!(spearman(&a, &[1.0; 4]).is_err());
}

#[test]
fn spearman_is_computed_within_groups() {
    let preds = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
    let target = [10.0, 20.0, 30.0, 3.0, 2.0, 1.0];
    let groups = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let by = spearman_by_group(&preds, &target, &groups).unwrap();
    assert_eq!(by[&0], 1.0);
    assert_eq!(by[&1], -1.0);
    assert!(spearman_by_group(&preds[..4], &target[..4], &groups[..4]).is_err());
}

#[test]
fn factual_intervention_explains_nothing() {
    let g = binary_sem();
    let p = LinearPredictor::new(&["A", "B"], vec![1.0, -2.0], 0.0).unwrap();
    let (e, _) = explain_sample(&g, &p, &[1.0, 2.4], &Intervention::new().with("A", 1.0), &cfg(10)).unwrap();
    assert!((e.counterfactual_prediction - e.factual_prediction).abs() < 1e-12);
    for f in &e.features {
        assert_eq!(f.changed, 0.0);
        assert!((f.counterfactual_mean - f.factual).abs() < 1e-12);
    }
}

#[test]
fn linear_sem_explanation_matches_algebra() {
    let mut g = build(vec![glm("A", UnitKind::Glm, &[]), glm("B", UnitKind::Glm, &["A"])]);
    g.params_mut().set("B.w0", &[2.0, 0.0]).unwrap();
    g.params_mut().set("B.b0", &[0.0, 0.0]).unwrap();
    let p = LinearPredictor::new(&["A", "B"], vec![1.0, 3.0], 0.5).unwrap();
    for (a, b, a2) in [(0.5, 1.7, -1.0), (2.0, 0.0, 3.0)] {
        let (e, _) = explain_sample(&g, &p, &[a, b], &Intervention::new().with("A", a2), &cfg(3)).unwrap();
        let y = 0.5 + a + 3.0 * b;
        assert!((e.factual_prediction - y).abs() < 1e-12);
        assert!((e.counterfactual_prediction - (y + 7.0 * (a2 - a))).abs() < 1e-9);
        assert_eq!(e.features[0].changed, 1.0);
        assert!((e.features[1].counterfactual_mean - (b + 2.0 * (a2 - a))).abs() < 1e-9);
    }
}

/// Binary SEM data plus a target `T = B + 1.5 A + noise`.
fn fair_data(n: usize, seed: u64) -> Dataset {
    let g = binary_sem();
    let d = g.sample(n, &Intervention::new(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let (a, b) = (d.values("A").unwrap(), d.values("B").unwrap());
    let t: Vec<f64> = (0..n).map(|i| b[i] + 1.5 * a[i] + 0.1 * (rng.random::<f64>() - 0.5)).collect();
    let mut cols = d.columns().to_vec();
    cols.push(Column::continuous("T", t));
    Dataset::new(cols).unwrap()
}

fn fair_cfg(lambda: f64) -> FairTrainConfig {
    FairTrainConfig {
        epochs: 40,
        batch_size: 50,
        learning_rate: 0.01,
        lambda,
        n_cf: 3,
        m: 1,
        seed: 7,
        clip_norm: 10.0,
    }
}

#[test]
fn zero_lambda_ignores_counterfactual_settings() {
    let g = binary_sem();
    let (train, test) = (fair_data(200, 1), fair_data(100, 2));
    let run = |n_cf: usize| {
        let mut p = MlpPredictor::new(&["A", "B"], vec![6], 3).unwrap();
        let cfg = FairTrainConfig { n_cf, ..fair_cfg(0.0) };
        let r = train_fair(&g, &mut p, &train, &test, "T", "A", &InterventionPolicy::Complement, &cfg).unwrap();
        (p.params().clone(), r.curve)
    };
    let (p1, c1) = run(1);
    let (p2, c2) = run(9);
    assert_eq!(p1, p2);
    assert_eq!(c1, c2);
    assert!(c1.last().unwrap() < &(0.2 * c1[0]));
}

#[test]
fn penalty_reduces_counterfactual_unfairness() {
    let g = binary_sem();
    let (train, test) = (fair_data(300, 3), fair_data(150, 4));
    let report = |lambda: f64| {
        let mut p = MlpPredictor::new(&["A", "B"], vec![6], 3).unwrap();
        train_fair(&g, &mut p, &train, &test, "T", "A", &InterventionPolicy::Complement, &fair_cfg(lambda))
            .unwrap()
            .holdout
    };
    let (plain, fair) = (report(0.0), report(50.0));
    assert!(fair.cu_2 < 0.1 * plain.cu_2, "plain {} fair {}", plain.cu_2, fair.cu_2);
    assert!(plain.spearman.contains_key("0") && plain.spearman.contains_key("1"));
}

#[test]
fn invalid_fair_settings_are_rejected() {
    let g = binary_sem();
    let d = fair_data(20, 1);
    let mut p = MlpPredictor::new(&["A", "B"], vec![], 0).unwrap();
    let pol = InterventionPolicy::Complement;
    assert!(train_fair(&g, &mut p, &d, &d, "T", "A", &pol, &fair_cfg(-1.0)).is_err());
    let mut q = MlpPredictor::new(&["A", "T"], vec![], 0).unwrap();
    assert!(train_fair(&g, &mut q, &d, &d, "T", "A", &pol, &fair_cfg(1.0)).is_err());
}

#[test]
fn predictor_file_roundtrips() {
    let d = fair_data(30, 1);
    let g = binary_sem();
    let mut p = MlpPredictor::new(&["A", "B"], vec![4], 9).unwrap();
    train_fair(&g, &mut p, &d, &d, "T", "A", &InterventionPolicy::Complement, &FairTrainConfig { epochs: 2, ..fair_cfg(1.0) })
        .unwrap();
    let back = MlpPredictor::from_json(&p.to_json()).unwrap();
    assert_eq!(back.to_json(), p.to_json());
    let rows = feature_rows(&p, &d).unwrap();
    assert_eq!(back.predict_rows(&rows).unwrap(), p.predict_rows(&rows).unwrap());
    let bad = p.to_json().replace(PREDICTOR_VERSION, "dcg-predictor/0");
    assert!(matches!(MlpPredictor::from_json(&bad), Err(Error::Checkpoint(_))));
}

#[test]
fn batch_protocol_matches_in_process_audit() {
    let dir = tempfile::tempdir().unwrap();
    let (inputs, outputs) = (dir.path().join("cf-inputs.csv"), dir.path().join("cf-preds.csv"));
    let g = binary_sem();
    let data = g.sample(25, &Intervention::new(), 8).unwrap();
    let pol = InterventionPolicy::Complement;
    let c = InferenceConfig { m: 1, n: 6, seed: 2 };
    let lines = write_cf_inputs(&g, "A", &pol, &data, &c, &inputs).unwrap();
    assert_eq!(lines, 25 * 7);

    // The "external" predictor: y = A + B^2.
    let mut reader = csv::Reader::from_path(&inputs).unwrap();
    let mut w = csv::Writer::from_path(&outputs).unwrap();
    w.write_record(["row_id", "cf_id", "prediction"]).unwrap();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let (a, b): (f64, f64) = (rec[0].parse().unwrap(), rec[1].parse().unwrap());
        w.write_record([&rec[2], &rec[3], &(a + b * b).to_string()]).unwrap();
    }
    w.flush().unwrap();
    drop(w);

    let preds = read_cf_predictions(&outputs).unwrap();
    let (report, rows) = audit_from_predictions(&inputs, &preds, "A", &pol).unwrap();
    assert_eq!(rows.len(), 25);

    struct Quad;
    impl Predictor for Quad {
        fn features(&self) -> &[String] {
            static F: std::sync::OnceLock<Vec<String>> = std::sync::OnceLock::new();
            F.get_or_init(|| vec!["A".into(), "B".into()])
        }
        fn predict(&self, x: &[f64]) -> Result<f64> {
            Ok(x[0] + x[1] * x[1])
        }
    }
    let direct = audit(&g, &Quad, "A", &pol, &data, None, &c).unwrap();
    assert!((report.cu_1 - direct.cu_1).abs() < 1e-9);
    assert!((report.cu_2 - direct.cu_2).abs() < 1e-9 * direct.cu_2.max(1.0));

    let missing = &preds[1..];
    assert!(matches!(
        audit_from_predictions(&inputs, missing, "A", &pol),
        Err(Error::Protocol(_))
    ));
    let mut dup = preds.clone();
    dup.push(preds[0]);
    assert!(matches!(audit_from_predictions(&inputs, &dup, "A", &pol), Err(Error::Protocol(_))));
}

#[test]
fn cu_ignores_constant_output_shifts() {
    let g = binary_sem();
    let data = g.sample(30, &Intervention::new(), 6).unwrap();
    let pol = InterventionPolicy::Complement;
    let base = LinearPredictor::new(&["B"], vec![0.7], 0.0).unwrap();
    let shifted = LinearPredictor::new(&["B"], vec![0.7], 123.0).unwrap();
    for k in [1, 2] {
        let a = cu_k(&g, &base, "A", k, &pol, &data, &cfg(5)).unwrap();
        let b = cu_k(&g, &shifted, "A", k, &pol, &data, &cfg(5)).unwrap();
        assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }
}

#[test]
fn unreachable_intervention_leaves_prediction_unchanged() {
    let mut g = build(vec![
        glm("A", UnitKind::Glm, &[]),
        glm("B", UnitKind::Glm, &["A"]),
        glm("C", UnitKind::Glm, &["A"]),
    ]);
    g.params_mut().set("B.w0", &[1.0, 0.0]).unwrap();
    g.params_mut().set("C.w0", &[-1.0, 0.0]).unwrap();
    let p = LinearPredictor::new(&["A", "B"], vec![2.0, 1.0], 0.0).unwrap();
    let (e, set) = explain_sample(&g, &p, &[0.3, 1.0, -2.0], &Intervention::new().with("C", 5.0), &cfg(20)).unwrap();
    assert!((e.counterfactual_prediction - e.factual_prediction).abs() < 1e-12);
    let k = set.column_index("C").unwrap();
    assert_eq!(e.features[k].counterfactual_mean, set.expectation_under(|r| r[k]));
}

#[test]
fn spearman_matches_rank_then_pearson() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // Integer draws force ties.
    let a: Vec<f64> = (0..20).map(|_| rng.random_range(0..6) as f64).collect();
    let b: Vec<f64> = (0..20).map(|_| rng.random_range(0..6) as f64).collect();
    let (ra, rb) = (naive_ranks(&a), naive_ranks(&b));
    let m = (a.len() as f64 + 1.0) / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - m) * (y - m)).sum();
    let va: f64 = ra.iter().map(|x| (x - m) * (x - m)).sum();
    let vb: f64 = rb.iter().map(|y| (y - m) * (y - m)).sum();
    assert!((spearman(&a, &b).unwrap() - cov / (va * vb).sqrt()).abs() < 1e-12);
}

#[test]
fn huge_lambda_beats_plain_training_across_seeds() {
    let g = binary_sem();
    let mut wins = 0;
    for seed in 0..5 {
        let (train, test) = (fair_data(150, 20 + seed), fair_data(60, 40 + seed));
        let cu = |lambda: f64| {
            let mut p = MlpPredictor::new(&["A", "B"], vec![4], seed).unwrap();
            let cfg = FairTrainConfig { epochs: 15, seed, ..fair_cfg(lambda) };
            train_fair(&g, &mut p, &train, &test, "T", "A", &InterventionPolicy::Complement, &cfg)
                .unwrap()
                .holdout
                .cu_1
        };
        if cu(1e6) < cu(0.0) {
            wins += 1;
        }
    }
    assert!(wins >= 4, "{wins}/5");
}
