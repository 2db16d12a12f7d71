use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::report::Recorder;
use super::*;
use crate::data::{complete_graph_spec, gen_salary, load_csv, salary_graph_spec, Column, Dataset, GraphSpec, SalaryGenConfig};
use crate::error::Result;
use crate::fairness::{
    audit, audit_from_predictions, explain_sample, read_cf_predictions, train_fair, write_cf_inputs, FairTrainConfig,
    FairnessReport, InterventionPolicy, MlpPredictor,
};
use crate::graph::{CausalGraph, InferenceConfig, Intervention};
use crate::training::{cross_validate, fit, load_checkpoint, warm_start, Checkpoint};

pub(super) fn dispatch(cli: &Cli, flags: Vec<String>) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::GenSalary(a) => gen_salary_cmd(a, Recorder::new("gen-salary", flags, seed), seed),
        Command::CompleteSpec(a) => complete_spec_cmd(a, Recorder::new("complete-spec", flags, seed), seed),
        Command::Fit(a) => fit_cmd(a, Recorder::new("fit", flags, seed), seed),
        Command::Eval(a) => eval_cmd(a, Recorder::new("eval", flags, seed), seed),
        Command::Sample(a) => sample_cmd(a, Recorder::new("sample", flags, seed), seed),
        Command::Intervene(a) => intervene_cmd(a, Recorder::new("intervene", flags, seed), seed),
        Command::Counterfactual(a) => counterfactual_cmd(a, Recorder::new("counterfactual", flags, seed), seed),
        Command::Fairness(FairnessCommand::Audit(a)) => audit_cmd(a, Recorder::new("fairness audit", flags, seed), seed),
        Command::Fairness(FairnessCommand::Train(a)) => {
            fair_train_cmd(a, Recorder::new("fairness train", flags, seed), seed)
        }
        Command::Sanity(a) => sanity_cmd(a, Recorder::new("sanity", flags, seed), seed),
    }
}

fn read_data(rec: &mut Recorder, path: &Path) -> Result<Dataset> {
    rec.input(path)?;
    load_csv(path)
}

fn read_graph(rec: &mut Recorder, path: &Path) -> Result<CausalGraph> {
    rec.input(path)?;
    Ok(load_checkpoint(path)?.0)
}

fn read_spec(rec: &mut Recorder, path: &Path) -> Result<GraphSpec> {
    rec.input(path)?;
    GraphSpec::load(path)
}

/// Class code of label `value` for discrete nodes; `value` itself otherwise.
fn value_code(graph: &CausalGraph, node: &str, value: f64) -> Result<f64> {
    let kind = graph.unit(node)?.kind();
    if !kind.is_discrete() {
        return Ok(value);
    }
    if value.fract() != 0.0 {
        return Err(Error::Config(format!("`{node}` is discrete; `{value}` is not a class label")));
    }
    match graph.levels(node) {
        Some(levels) => levels
            .iter()
            .position(|&l| l as f64 == value)
            .map(|k| k as f64)
            .ok_or_else(|| Error::Config(format!("`{node}` has no class {value} (classes {levels:?})"))),
        None => Ok(value),
    }
}

fn code_label(graph: &CausalGraph, node: &str, code: f64) -> f64 {
    match graph.levels(node) {
        Some(levels) => levels.get(code as usize).map_or(code, |&l| l as f64),
        None => code,
    }
}

fn observed_node(graph: &CausalGraph, node: &str) -> Result<usize> {
    graph
        .observed_names()
        .iter()
        .position(|&n| n == node)
        .ok_or_else(|| Error::Config(format!("unknown node `{node}`")))
}

pub(super) fn parse_do(graph: &CausalGraph, exprs: &[String]) -> Result<Intervention> {
    let mut doing = Intervention::new();
    for e in exprs {
        let (node, value) = e
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("do-expression `{e}` is not `node=value`")))?;
        let node = node.trim();
        observed_node(graph, node)?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("do-expression `{e}`: `{value}` is not a number")))?;
        doing.set(node, value_code(graph, node, v)?);
    }
    Ok(doing)
}

fn gen_salary_cmd(a: &GenSalaryArgs, mut rec: Recorder, seed: u64) -> Result<()> {
    if a.n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    if !(a.beta >= 0.0 && a.beta.is_finite()) {
        return Err(Error::Config(format!("--beta must be >= 0, got {}", a.beta)));
    }
    let data = gen_salary(&SalaryGenConfig { n: a.n, seed, beta: a.beta })?;
    rec.dataset(&a.out, &data)?;
    if let Some(p) = &a.spec_out {
        rec.text(p, &salary_graph_spec(seed).to_json())?;
    }
    rec.finish(&a.out)
}

fn complete_spec_cmd(a: &CompleteSpecArgs, mut rec: Recorder, seed: u64) -> Result<()> {
    let data = read_data(&mut rec, &a.data)?;
    let spec = complete_graph_spec(&data, a.kind.into(), seed)?;
    rec.text(&a.out, &spec.to_json())?;
    rec.finish(&a.out)
}

fn fit_cmd(a: &FitArgs, mut rec: Recorder, seed: u64) -> Result<()> {
    let spec = read_spec(&mut rec, &a.graph)?;
    let data = read_data(&mut rec, &a.data)?;
    let cfg = a.train.config(seed);
    let mut graph = CausalGraph::from_spec(&spec)?;
    warm_start(&mut graph, &data)?;
    let report = fit(&mut graph, &data, &cfg)?;
    rec.text(&a.out, &Checkpoint::from_graph(&graph, Some(cfg)).to_json())?;
    if let Some(p) = &a.curve {
        let rows: Vec<Vec<f64>> = report.curve.iter().enumerate().map(|(e, l)| vec![e as f64, *l]).collect();
        rec.table(p, &["epoch".into(), "train_nll".into()], &rows)?;
    }
    println!(
        "initial nll {:.6}  final nll {:.6}  steps {}",
        report.initial_nll, report.final_nll, report.steps
    );
    rec.finish(&a.out)
}

fn eval_cmd(a: &EvalArgs, mut rec: Recorder, seed: u64) -> Result<()> {
    let mut spec = read_spec(&mut rec, &a.graph)?;
    if let Some(k) = a.continuous_kind {
        spec = spec.with_continuous_kind(k.into());
    }
    let data = read_data(&mut rec, &a.data)?;
    let cv = cross_validate(&spec, &data, a.folds, &a.train.config(seed))?;
    for w in &cv.warnings {
        eprintln!("warning: {w}");
    }
    let header: Vec<String> = ["fold", "train_rows", "test_rows", "test_nll", "final_train_nll"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<f64>> = cv
        .folds
        .iter()
        .map(|f| {
            vec![
                f.fold as f64,
                f.train_rows as f64,
                f.test_rows as f64,
                f.test_nll,
                f.final_train_nll,
            ]
        })
        .collect();
    rec.table(&a.out, &header, &rows)?;
    println!("mean test nll {:.6} over {} folds", cv.mean_test_nll(), cv.folds.len());
    rec.finish(&a.out)
}

fn sample_cmd(a: &SampleArgs, mut rec: Recorder, seed: u64) -> Result<()> {
    let graph = read_graph(&mut rec, &a.checkpoint)?;
    let doing = parse_do(&graph, &a.doing)?;
    rec.dataset(&a.out, &graph.sample(a.n, &doing, seed)?)?;
    rec.finish(&a.out)
}

/// Empirical quantile with linear interpolation; discrete data take the
/// lower order statistic so the value stays a class.
fn quantile(sorted: &[f64], q: f64, discrete: bool) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    if discrete || lo + 1 >= sorted.len() {
        return sorted[lo];
    }
    sorted[lo] + (pos - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Mean and normal-approximation 95% interval.
fn mean_ci(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let half = 1.96 * (var / n).sqrt();
    (mean, mean - half, mean + half)
}

fn intervene_cmd(a: &IntervenArgs, mut rec: Recorder, seed: u64) -> Result<()> {
    let graph = read_graph(&mut rec, &a.checkpoint)?;
    let doing = parse_do(&graph, &a.doing)?;
    let Some(sweep) = &a.quantile_sweep else {
        rec.dataset(&a.out, &graph.sample(a.n, &doing, seed)?)?;
        return rec.finish(&a.out);
    };
    let node = sweep[0].as_str();
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Config(format!("sweep bound `{s}` is not a number"))) };
    let (lo, hi) = (num(&sweep[1])?, num(&sweep[2])?);
    let steps: usize = sweep[3]
        .parse()
        .map_err(|_| Error::Config(format!("sweep steps `{}` is not a count", sweep[3])))?;
    if steps == 0 || !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::Config("sweep needs 0 <= LO <= HI <= 1 and STEPS >= 1".into()));
    }
    let target = a
        .target
        .as_deref()
        .ok_or_else(|| Error::Config("--quantile-sweep needs --target".into()))?;
    let data_path = a
        .data
        .as_deref()
        .ok_or_else(|| Error::Config("--quantile-sweep needs --data".into()))?;
    let (ni, ti) = (observed_node(&graph, node)?, observed_node(&graph, target)?);
    if doing.get(node).is_some() {
        return Err(Error::Config(format!("`{node}` is both swept and fixed by --do")));
    }
    let data = read_data(&mut rec, data_path)?;
    let cols = graph.data_columns(&data)?;
    let discrete = graph.unit(node)?.kind().is_discrete();
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    order.sort_by(|&x, &y| cols[ni][x].total_cmp(&cols[ni][y]));
    let sorted: Vec<f64> = order.iter().map(|&r| cols[ni][r]).collect();
    let step = if steps > 1 { (hi - lo) / (steps - 1) as f64 } else { 0.0 };
    let half = if steps > 1 { step / 2.0 } else { 0.025 };
    let n_data = data.n_rows() as f64;
    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        let q = lo + step * k as f64;
        let v = quantile(&sorted, q, discrete);
        let mut d = doing.clone();
        d.set(node, v);
        let samples = graph.sample(a.n, &d, seed)?;
        let (m, cl, ch) = mean_ci(&graph.data_columns(&samples)?[ti]);
        // Observational curve: rows whose rank falls within the quantile bin.
        let from = (((q - half) * n_data).floor().max(0.0) as usize).min(order.len() - 1);
        let to = (((q + half) * n_data).ceil() as usize).clamp(from + 1, order.len());
        let bin: Vec<f64> = order[from..to].iter().map(|&r| cols[ti][r]).collect();
        let (om, ol, oh) = mean_ci(&bin);
        rows.push(vec![q, code_label(&graph, node, v), m, cl, ch, om, ol, oh, bin.len() as f64]);
    }
    let header: Vec<String> = [
        "level", "value", "mean", "ci_low", "ci_high", "obs_mean", "obs_ci_low", "obs_ci_high", "obs_count",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    rec.table(&a.out, &header, &rows)?;
    rec.finish(&a.out)
}

#[derive(Serialize)]
struct NodeShift {
    node: String,
    factual: f64,
    counterfactual_mean: f64,
    delta: f64,
    changed: f64,
}

#[derive(Serialize)]
struct CounterfactualSummary {
    row: usize,
    intervention: Vec<String>,
    samples: usize,
    weight_sum: f64,
    nodes: Vec<NodeShift>,
    #[serde(skip_serializing_if = "Option::is_none")]
    factual_prediction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    counterfactual_prediction: Option<f64>,
}

fn counterfactual_cmd(a: &CounterfactualArgs, mut rec: Recorder, seed: u64) -> Result<()> {
    let graph = read_graph(&mut rec, &a.checkpoint)?;
    let data = read_data(&mut rec, &a.data)?;
    let doing = parse_do(&graph, &a.doing)?;
    let evidence = graph.evidence(&data, a.row)?;
    let cfg = InferenceConfig { m: a.m, n: a.n, seed };
    let (set, predictions) = match &a.predictor {
        Some(p) => {
            rec.input(p)?;
            let predictor = MlpPredictor::load(p)?;
            let (e, set) = explain_sample(&graph, &predictor, &evidence, &doing, &cfg)?;
            (set, Some((e.factual_prediction, e.counterfactual_prediction)))
        }
        None => (graph.counterfactual(&evidence, &doing, &cfg)?, None),
    };
    let names = graph.observed_names();
    let nodes = names
        .iter()
        .enumerate()
        .map(|(k, &name)| {
            let label = |c: f64| code_label(&graph, name, c);
            let factual = label(evidence[k]);
            let mean = set.expectation_under(|r| label(r[k]));
            NodeShift {
                node: name.to_string(),
                factual,
                counterfactual_mean: mean,
                delta: mean - factual,
                changed: set.expectation_under(|r| if r[k] != evidence[k] { 1.0 } else { 0.0 }),
            }
        })
        .collect();
    let summary = CounterfactualSummary {
        row: a.row,
        intervention: a.doing.clone(),
        samples: set.len(),
        weight_sum: set.weights.iter().sum(),
        nodes,
        factual_prediction: predictions.map(|p| p.0),
        counterfactual_prediction: predictions.map(|p| p.1),
    };
    let table = graph.rows_to_dataset(&set.rows)?;
    let mut cols = table.columns().to_vec();
    cols.push(Column::continuous("weight", set.weights.clone()));
    rec.dataset(&a.out, &Dataset::new(cols)?)?;
    match &a.summary {
        Some(p) => rec.json(p, &summary)?,
        None => println!("{}", serde_json::to_string_pretty(&summary)?),
    }
    rec.finish(&a.out)
}

fn policy(graph: &CausalGraph, p: &PolicyArgs) -> Result<InterventionPolicy> {
    observed_node(graph, &p.protected)?;
    if p.values.is_empty() {
        return Ok(InterventionPolicy::Complement);
    }
    let values = p
        .values
        .iter()
        .map(|v| {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("intervention value `{v}` is not a number")))?;
            value_code(graph, &p.protected, x)
        })
        .collect::<Result<_>>()?;
    Ok(InterventionPolicy::Values(values))
}

fn emit_report(rec: &mut Recorder, out: Option<&Path>, report: &impl Serialize) -> Result<()> {
    match out {
        Some(p) => rec.json(p, report),
        None => {
            println!("{}", serde_json::to_string_pretty(report)?);
            Ok(())
        }
    }
}

fn audit_cmd(a: &AuditArgs, mut rec: Recorder, seed: u64) -> Result<()> {
    let graph = read_graph(&mut rec, &a.checkpoint)?;
    let data = read_data(&mut rec, &a.data)?;
    let pol = policy(&graph, &a.policy)?;
    let cfg = InferenceConfig {
        m: a.policy.m,
        n: a.policy.n,
        seed,
    };
    if let Some(dir) = &a.black_box_batch {
        let (inputs, preds) = (dir.join("cf-inputs.csv"), dir.join("cf-preds.csv"));
        if !preds.exists() {
            std::fs::create_dir_all(dir)?;
            let lines = write_cf_inputs(&graph, &a.policy.protected, &pol, &data, &cfg, &inputs)?;
            rec.output(&inputs);
            eprintln!(
                "wrote {lines} lines to {}; score them into {} (row_id,cf_id,prediction) and rerun",
                inputs.display(),
                preds.display()
            );
            return rec.finish(&inputs);
        }
        rec.input(&inputs)?;
        rec.input(&preds)?;
        let (report, _) = audit_from_predictions(&inputs, &read_cf_predictions(&preds)?, &a.policy.protected, &pol)?;
        emit_report(&mut rec, a.out.as_deref(), &report)?;
        return match &a.out {
            Some(p) => rec.finish(p),
            None => Ok(()),
        };
    }
    let path = a.predictor.as_deref().expect("clap requires a predictor");
    rec.input(path)?;
    let predictor = MlpPredictor::load(path)?;
    let report = audit(&graph, &predictor, &a.policy.protected, &pol, &data, a.target.as_deref(), &cfg)?;
    emit_report(&mut rec, a.out.as_deref(), &report)?;
    match &a.out {
        Some(p) => rec.finish(p),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct FairTrainSummary {
    lambda: f64,
    train_rows: usize,
    holdout_rows: usize,
    baseline: FairnessReport,
    fair: FairnessReport,
    /// 1 - CU_1(fair) / CU_1(baseline).
    cu_1_reduction: f64,
    baseline_curve: Vec<f64>,
    fair_curve: Vec<f64>,
}

/// Seeded split into (train, holdout) row indices.
pub(super) fn holdout_split(n: usize, share: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(share > 0.0 && share < 1.0) {
        return Err(Error::Config(format!("--holdout must lie in (0, 1), got {share}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = (share * n as f64).round() as usize;
    if k < 2 || n - k < 2 {
        return Err(Error::Data(format!("{n} rows are too few for a {share} holdout split")));
    }
    let mut holdout = perm[..k].to_vec();
    let mut train = perm[k..].to_vec();
    holdout.sort_unstable();
    train.sort_unstable();
    Ok((train, holdout))
}

fn fair_train_cmd(a: &FairTrainArgs, mut rec: Recorder, seed: u64) -> Result<()> {
    let graph = read_graph(&mut rec, &a.checkpoint)?;
    let data = read_data(&mut rec, &a.data)?;
    let pol = policy(&graph, &a.policy)?;
    let (train_idx, hold_idx) = holdout_split(data.n_rows(), a.holdout, seed)?;
    let (train, holdout) = (data.select_rows(&train_idx), data.select_rows(&hold_idx));
    let features: Vec<&str> = a.features.iter().map(|s| s.as_str()).collect();
    let cfg = FairTrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        lambda: a.lambda,
        n_cf: a.n_cf,
        m: a.policy.m,
        seed,
        clip_norm: 10.0,
    };
    let run = |lambda: f64| -> Result<(MlpPredictor, crate::fairness::FairTrainReport)> {
        let mut p = MlpPredictor::new(&features, a.hidden.clone(), seed)?;
        let r = train_fair(&graph, &mut p, &train, &holdout, &a.target, &a.policy.protected, &pol, &FairTrainConfig { lambda, ..cfg })?;
        Ok((p, r))
    };
    let (base_p, base) = run(0.0)?;
    let (fair_p, fair) = run(a.lambda)?;
    rec.text(&a.predictor_out, &fair_p.to_json())?;
    if let Some(p) = &a.baseline_out {
        rec.text(p, &base_p.to_json())?;
    }
    let summary = FairTrainSummary {
        lambda: a.lambda,
        train_rows: train.n_rows(),
        holdout_rows: holdout.n_rows(),
        cu_1_reduction: 1.0 - fair.holdout.cu_1 / base.holdout.cu_1,
        baseline: base.holdout,
        fair: fair.holdout,
        baseline_curve: base.curve,
        fair_curve: fair.curve,
    };
    rec.json(&a.out, &summary)?;
    println!(
        "CU_1 {:.4} -> {:.4} (reduction {:.1}%)",
        summary.baseline.cu_1,
        summary.fair.cu_1,
        100.0 * summary.cu_1_reduction
    );
    rec.finish(&a.out)
}

fn sanity_cmd(a: &SanityArgs, mut rec: Recorder, seed: u64) -> Result<()> {
    let graph = read_graph(&mut rec, &a.checkpoint)?;
    let (ni, ci) = (observed_node(&graph, &a.node)?, observed_node(&graph, &a.condition_on)?);
    if ni == ci {
        return Err(Error::Config("--node and --condition-on must differ".into()));
    }
    if a.points < 2 || a.draws == 0 {
        return Err(Error::Config("--points must be >= 2 and --draws >= 1".into()));
    }
    let cond_discrete = graph.unit(&a.condition_on)?.kind().is_discrete();
    // Intervention values as codes.
    let grid: Vec<f64> = if a.grid_quantiles.is_empty() {
        a.grid
            .iter()
            .map(|&v| value_code(&graph, &a.condition_on, v))
            .collect::<Result<_>>()?
    } else {
        let data = read_data(&mut rec, a.data.as_deref().expect("clap requires --data"))?;
        let mut col = graph.data_columns(&data)?.swap_remove(ci);
        col.sort_by(f64::total_cmp);
        a.grid_quantiles.iter().map(|&q| quantile(&col, q, cond_discrete)).collect()
    };
    let unit = graph.unit(&a.node)?;
    let xs: Vec<f64> = match unit.kind() {
        crate::units::UnitKind::Bernoulli => vec![0.0, 1.0],
        crate::units::UnitKind::Categorical { classes } => (0..classes).map(|k| k as f64).collect(),
        _ => {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in &grid {
                let s = graph.sample(2000, &Intervention::new().with(&a.condition_on, v), seed)?;
                for &x in &graph.data_columns(&s)?[ni] {
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
            let pad = 0.1 * (hi - lo).max(1e-6);
            let (lo, hi) = (lo - pad, hi + pad);
            (0..a.points)
                .map(|k| lo + (hi - lo) * k as f64 / (a.points - 1) as f64)
                .collect()
        }
    };
    let mut rows = Vec::with_capacity(grid.len() * xs.len());
    for &v in &grid {
        let doing = Intervention::new().with(&a.condition_on, v);
        let dens = graph.interventional_density(&a.node, &doing, &xs, a.draws, seed)?;
        let label = code_label(&graph, &a.condition_on, v);
        for (&x, &p) in xs.iter().zip(&dens) {
            rows.push(vec![label, code_label(&graph, &a.node, x), p]);
        }
    }
    let header = vec![a.condition_on.clone(), a.node.clone(), "density".to_string()];
    rec.table(&a.out, &header, &rows)?;
    rec.finish(&a.out)
}
