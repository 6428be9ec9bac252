use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tcheby::dataset::{read_dataset, CsvSchema};
use tcheby::evaluate::{default_reference, hypervolume, hypervolume_mc, pareto_indices, wis_many, WisForm};
use tcheby::experiment::{algorithm_fronts, run_grid, EvalRow};
use tcheby::gp::{expected_hypervolume, fit_map, FeatureMap, GpModel, HyperPriors};
use tcheby::gwg::run_trajectories;
use tcheby::policy::{mle_pretrain_with, PretrainOptions};
use tcheby::scalarize::{rho_table, scalarize_dataset, Method};
use tcheby::synth::{gen_concave_front, gen_landscape};
use tcheby::trainer::{perplexity, Checkpoint};
use tcheby::{compute_reward_stats, Algorithm, Context, PreferenceVector, RewardDataset, RunConfig, SequencePolicy, Token, Vocabulary};

use crate::args::{EvalArgs, FrontArgs, GenerateArgs, GenerateMethod, GpEhvArgs, ReportArgs, TrainArgs};
use crate::config::Resolved;
use crate::error::{runtime_err, CliError};
use crate::output::Output;

fn load_data(out: &mut Output, role: &str, path: &Path, vocab: &Vocabulary) -> Result<RewardDataset, CliError> {
    let bytes = out.read_input(role, path)?;
    read_dataset(bytes.as_slice(), &CsvSchema::default(), vocab).map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

fn load_policy(out: &mut Output, path: &Path, vocab: &Vocabulary) -> Result<SequencePolicy, CliError> {
    let bytes = out.read_input("policy", path)?;
    let text = String::from_utf8(bytes).map_err(|_| runtime_err(format!("{}: not UTF-8", path.display())))?;
    let p = SequencePolicy::from_json(&text).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
    if p.vocab().alphabet_string() != vocab.alphabet_string() {
        return Err(runtime_err(format!(
            "policy alphabet {:?} differs from dataset alphabet {:?}",
            p.vocab().alphabet_string(),
            vocab.alphabet_string()
        )));
    }
    Ok(p)
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

pub fn synth(cfg: &Resolved, out: &mut Output) -> Result<(), CliError> {
    let data = gen_landscape(&cfg.file.synth)?;
    data.train.save_csv(out.path("train.csv")?)?;
    if let Some(test) = &data.test {
        test.save_csv(out.path("test.csv")?)?;
    }
    let mut w = out.csv("wild_types.csv")?;
    w.write_record(["context_id", "sequence"])?;
    for (g, wt) in data.train.groups().iter().zip(&data.wild_types) {
        w.write_record([g.context_id.as_str(), data.train.vocab().decode(wt).as_str()])?;
    }
    w.flush()?;
    out.write_json("synth.json", &cfg.file.synth)
}

#[derive(Serialize)]
struct StatsFile<'a> {
    objectives: &'a [String],
    #[serde(flatten)]
    stats: &'a tcheby::RewardStats,
}

pub fn stats(cfg: &Resolved, out: &mut Output, data: &Path) -> Result<(), CliError> {
    let ds = load_data(out, "data", data, &cfg.vocab)?;
    let stats = compute_reward_stats(&ds, cfg.first_run().gamma)?;
    out.write_json(
        "stats.json",
        &StatsFile {
            objectives: ds.objectives(),
            stats: &stats,
        },
    )
}

#[derive(Serialize)]
struct PretrainReport<'a> {
    options: &'a PretrainOptions,
    n_params: usize,
    mean_nll: f64,
    perplexity: f64,
}

pub fn pretrain(cfg: &Resolved, out: &mut Output, data: &Path) -> Result<(), CliError> {
    let ds = load_data(out, "data", data, &cfg.vocab)?;
    let policy = mle_pretrain_with(&ds, &cfg.file.pretrain)?;
    let report = PretrainReport {
        options: &cfg.file.pretrain,
        n_params: policy.n_params(),
        mean_nll: policy.mean_nll(&ds)?,
        perplexity: perplexity(&policy, &ds)?,
    };
    policy.save(out.path("policy.json")?)?;
    out.write_json("pretrain.json", &report)
}

#[derive(Serialize, Deserialize)]
struct RunEntry {
    name: String,
    algorithm: Algorithm,
    lambda: PreferenceVector,
    config_hash: String,
    final_loss: Option<f64>,
}

pub fn train(cfg: &Resolved, out: &mut Output, args: &TrainArgs) -> Result<(), CliError> {
    let ds = load_data(out, "data", &args.data, &cfg.vocab)?;
    let policy = load_policy(out, &args.policy, &cfg.vocab)?;
    log::info!("training {} runs", cfg.runs.len());
    let runs = run_grid(&cfg.runs, &ds, &policy)?;
    let mut entries = Vec::new();
    for run in &runs {
        let name = run.name();
        let dir = out.dir().join(&name);
        run.outcome.write_run(&dir)?;
        for c in &run.outcome.checkpoints {
            out.record(&format!("{name}/{}", c.file_name()));
        }
        out.record(&format!("{name}/metrics.csv"));
        out.write_json(&format!("{name}/config.json"), &run.config)?;
        out.run_hashes.insert(name.clone(), run.config.hash());
        entries.push(RunEntry {
            name,
            algorithm: run.config.algorithm,
            lambda: run.config.lambda.clone(),
            config_hash: run.config.hash(),
            final_loss: run.outcome.metrics.last().map(|m| m.loss),
        });
    }
    out.write_json("runs.json", &entries)
}

#[derive(Serialize, Deserialize)]
struct LabelledPoint {
    label: String,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AlgorithmSummary {
    algorithm: Algorithm,
    hypervolume: f64,
    front: Vec<LabelledPoint>,
    selected: Vec<LabelledPoint>,
}

#[derive(Serialize, Deserialize)]
struct EvalSummary {
    form: WisForm,
    objectives: Vec<String>,
    reference: Vec<f64>,
    algorithms: Vec<AlgorithmSummary>,
}

fn read_json<T: for<'de> Deserialize<'de>>(out: &mut Output, role: &str, path: &Path) -> Result<T, CliError> {
    let bytes = out.read_input(role, path)?;
    serde_json::from_slice(&bytes).map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

pub fn eval(cfg: &Resolved, out: &mut Output, args: &EvalArgs, ref_point: Option<Vec<f64>>) -> Result<(), CliError> {
    let test = load_data(out, "data", &args.data, &cfg.vocab)?;
    let policy = load_policy(out, &args.policy, &cfg.vocab)?;
    let entries: Vec<RunEntry> = read_json(out, "runs", &args.runs.join("runs.json"))?;
    let mut checkpoints: Vec<(String, RunConfig, Checkpoint)> = Vec::new();
    for e in &entries {
        let config: RunConfig = read_json(out, &format!("{}/config", e.name), &args.runs.join(&e.name).join("config.json"))?;
        for &f in &config.checkpoints {
            let path = args.runs.join(&e.name).join(format!("ckpt_{f}.json"));
            let c = Checkpoint::load(&path).map_err(|err| runtime_err(format!("{}: {err}", path.display())))?;
            checkpoints.push((e.name.clone(), config.clone(), c));
        }
    }
    if checkpoints.is_empty() {
        return Err(runtime_err("no checkpoints to evaluate"));
    }
    let labelled: Vec<(String, &SequencePolicy)> = checkpoints
        .iter()
        .map(|(name, _, c)| (format!("{name}@{}", c.fraction), &c.policy))
        .collect();
    let form = cfg.file.eval.form;
    let expected = wis_many(&labelled, &policy, &test, form)?;
    let rows: Vec<EvalRow> = checkpoints
        .iter()
        .zip(expected)
        .map(|((_, config, c), expected)| EvalRow {
            algorithm: config.algorithm,
            lambda: config.lambda.clone(),
            fraction: c.fraction,
            step: c.step,
            expected,
        })
        .collect();
    let reference = ref_point.or_else(|| cfg.file.eval.ref_point.clone());
    let fronts = algorithm_fronts(&rows, reference.as_deref())?;

    let objectives = test.objectives();
    let k_lambda = rows[0].lambda.k();
    let mut w = out.csv("expected_rewards.csv")?;
    let mut header = vec!["run".to_string(), "algorithm".into()];
    header.extend((1..=k_lambda).map(|i| format!("lambda_{i}")));
    header.extend(["checkpoint".into(), "step".into()]);
    header.extend(objectives.iter().cloned());
    header.extend(["ess_min".into(), "ess_mean".into()]);
    w.write_record(&header)?;
    for ((name, _, _), row) in checkpoints.iter().zip(&rows) {
        let mut rec = vec![name.clone(), row.algorithm.to_string()];
        rec.extend(row.lambda.weights().iter().map(|v| fmt_f(*v)));
        rec.extend([fmt_f(row.fraction), row.step.to_string()]);
        rec.extend(row.expected.values.iter().map(|v| fmt_f(*v)));
        let ess = &row.expected.ess;
        let min = ess.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = ess.iter().sum::<f64>() / ess.len() as f64;
        rec.extend([fmt_f(min), fmt_f(mean)]);
        w.write_record(&rec)?;
    }
    w.flush()?;

    let point = |i: usize| LabelledPoint {
        label: rows[i].expected.label.clone(),
        values: rows[i].expected.values.clone(),
    };
    let mut w = out.csv("front.csv")?;
    let mut header = vec!["algorithm".to_string(), "label".into()];
    header.extend(objectives.iter().cloned());
    header.push("selected".into());
    w.write_record(&header)?;
    let mut summaries = Vec::new();
    for af in &fronts {
        let front_rows: Vec<usize> = af.front.front.iter().map(|&i| af.rows[i]).collect();
        let selected_rows: Vec<usize> = af.front.selected.iter().map(|&i| af.rows[i]).collect();
        for &r in &front_rows {
            let mut rec = vec![af.algorithm.to_string(), rows[r].expected.label.clone()];
            rec.extend(rows[r].expected.values.iter().map(|v| fmt_f(*v)));
            rec.push(selected_rows.contains(&r).to_string());
            w.write_record(&rec)?;
        }
        summaries.push(AlgorithmSummary {
            algorithm: af.algorithm,
            hypervolume: af.front.hypervolume,
            front: front_rows.iter().map(|&r| point(r)).collect(),
            selected: selected_rows.iter().map(|&r| point(r)).collect(),
        });
    }
    w.flush()?;
    out.write_json(
        "hypervolume.json",
        &EvalSummary {
            form,
            objectives: objectives.to_vec(),
            reference: fronts[0].front.reference.clone(),
            algorithms: summaries,
        },
    )
}

#[derive(Serialize)]
struct FrontSummary {
    method: &'static str,
    reference: Vec<f64>,
    hypervolume: f64,
    stderr: Option<f64>,
    n_points: usize,
    front_size: usize,
}

fn read_points(out: &mut Output, path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>), CliError> {
    let bytes = out.read_input("points", path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(runtime_err(format!("{}: need a label column and at least one objective", path.display())));
    }
    let mut labels = Vec::new();
    let mut points = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        labels.push(rec[0].to_string());
        let values = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| runtime_err(format!("{} row {}: non-numeric objective", path.display(), row + 1)))?;
        points.push(values);
    }
    if points.is_empty() {
        return Err(runtime_err(format!("{}: no points", path.display())));
    }
    Ok((header[1..].to_vec(), labels, points))
}

pub fn front(cfg: &Resolved, out: &mut Output, args: &FrontArgs, ref_point: Option<Vec<f64>>) -> Result<(), CliError> {
    let (objectives, labels, points) = match (&args.points, args.concave) {
        (Some(p), _) => read_points(out, p)?,
        (None, Some(n)) => {
            let pts = gen_concave_front(n)?;
            (vec!["r1".into(), "r2".into()], (0..pts.len()).map(|i| format!("p{i}")).collect(), pts)
        }
        (None, None) => unreachable!("clap requires --points or --concave"),
    };
    let reference = ref_point.or_else(|| cfg.file.eval.ref_point.clone()).unwrap_or_else(|| default_reference(&points));
    let idx = pareto_indices(&points);
    let front: Vec<Vec<f64>> = idx.iter().map(|&i| points[i].clone()).collect();
    let summary = if reference.len() <= 3 {
        FrontSummary {
            method: "exact",
            hypervolume: hypervolume(&front, &reference)?,
            stderr: None,
            reference,
            n_points: points.len(),
            front_size: idx.len(),
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.file.seed);
        let mc = hypervolume_mc(&front, &reference, cfg.file.eval.mc_samples, &mut rng)?;
        FrontSummary {
            method: "monte-carlo",
            hypervolume: mc.value,
            stderr: Some(mc.stderr),
            reference,
            n_points: points.len(),
            front_size: idx.len(),
        }
    };
    let mut w = out.csv("front.csv")?;
    let mut header = vec!["label".to_string()];
    header.extend(objectives);
    w.write_record(&header)?;
    for &i in &idx {
        let mut rec = vec![labels[i].clone()];
        rec.extend(points[i].iter().map(|v| fmt_f(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    out.write_json("hypervolume.json", &summary)
}

/// Per-position most frequent token among sequences of the most common
/// length; ties go to the smaller token.
fn consensus(ds: &RewardDataset) -> Vec<Token> {
    let mut by_len: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, _, it) in ds.items() {
        *by_len.entry(it.sequence.len()).or_default() += 1;
    }
    let len = by_len.iter().max_by_key(|(l, n)| (**n, std::cmp::Reverse(**l))).map_or(0, |(l, _)| *l);
    let letters = ds.vocab().n_letters();
    (0..len)
        .map(|pos| {
            let mut counts = vec![0usize; letters];
            for (_, _, it) in ds.items() {
                if it.sequence.len() == len {
                    counts[it.sequence[pos] as usize] += 1;
                }
            }
            let best = counts.iter().enumerate().max_by_key(|(t, c)| (**c, std::cmp::Reverse(*t))).map_or(0, |(t, _)| t);
            best as Token
        })
        .collect()
}

pub fn generate(cfg: &Resolved, out: &mut Output, args: &GenerateArgs, wild_type: Option<Vec<Token>>) -> Result<(), CliError> {
    let ds = load_data(out, "data", &args.data, &cfg.vocab)?;
    let policy = load_policy(out, &args.policy, &cfg.vocab)?;
    let contexts: Vec<Context> = ds.groups().iter().map(Context::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.file.seed);
    let mut w = out.csv("sequences.csv")?;
    match args.method {
        GenerateMethod::Gwg => {
            let wt = wild_type.unwrap_or_else(|| consensus(&ds));
            if wt.is_empty() {
                return Err(runtime_err("empty wild type"));
            }
            let samples = run_trajectories(&policy, &contexts, &wt, &cfg.file.gwg, &mut rng)?;
            w.write_record(["trajectory", "step", "sequence", "energy", "n_mutations"])?;
            for s in samples {
                w.write_record([
                    s.trajectory.to_string(),
                    s.step.to_string(),
                    cfg.vocab.decode(&s.sequence),
                    fmt_f(s.energy),
                    s.n_mutations.to_string(),
                ])?;
            }
        }
        GenerateMethod::Sample => {
            let g = &cfg.file.generate;
            w.write_record(["context_id", "index", "sequence", "log_prob"])?;
            for ctx in &contexts {
                for i in 0..g.n_per_context {
                    let seq = policy.sample(ctx, g.temperature, g.top_p, &mut rng)?;
                    let lp = policy.log_prob(ctx, &seq)?;
                    w.write_record([ctx.id.to_string(), i.to_string(), cfg.vocab.decode(&seq), fmt_f(lp)])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GpBundle {
    alphabet: String,
    objectives: Vec<String>,
    models: Vec<GpModel>,
}

pub fn gp_fit(cfg: &Resolved, out: &mut Output, data: &Path) -> Result<(), CliError> {
    let ds = load_data(out, "data", data, &cfg.vocab)?;
    let fm = FeatureMap::new(ds.vocab());
    let x: Vec<Vec<f64>> = ds.items().map(|(_, _, it)| fm.features(&it.sequence)).collect();
    let priors = HyperPriors::for_dim(fm.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.file.seed);
    let mut models = Vec::new();
    for (i, name) in ds.objectives().iter().enumerate() {
        let y: Vec<f64> = ds.items().map(|(_, _, it)| it.rewards[i]).collect();
        let m = fit_map(&x, &y, &priors, &cfg.file.gp, &mut rng)?;
        log::info!("{name}: {:?}", m.hyper);
        models.push(m);
    }
    out.write_json(
        "gp.json",
        &GpBundle {
            alphabet: cfg.vocab.alphabet_string(),
            objectives: ds.objectives().to_vec(),
            models,
        },
    )
}

pub fn gp_ehv(cfg: &Resolved, out: &mut Output, args: &GpEhvArgs, ref_point: Option<Vec<f64>>) -> Result<(), CliError> {
    let mut bundle: GpBundle = read_json(out, "model", &args.model)?;
    for m in &mut bundle.models {
        m.refactor()?;
    }
    let vocab = Vocabulary::new(bundle.alphabet.chars())?;
    let bytes = out.read_input("candidates", &args.candidates)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "sequence")
        .ok_or_else(|| runtime_err(format!("{}: no `sequence` column", args.candidates.display())))?;
    let mut seqs: Vec<Vec<Token>> = Vec::new();
    for rec in rdr.records() {
        let s = vocab.encode(&rec?[col])?;
        if !seqs.contains(&s) {
            seqs.push(s);
        }
    }
    let fm = FeatureMap::new(&vocab);
    let cands: Vec<Vec<f64>> = seqs.iter().map(|s| fm.features(s)).collect();
    let reference = ref_point.unwrap_or_else(|| {
        bundle
            .models
            .iter()
            .map(|m| m.y.iter().copied().fold(f64::INFINITY, f64::min))
            .collect()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.file.seed);
    let rows = expected_hypervolume(&bundle.models, &cands, &cfg.file.ehv, &reference, &mut rng)?;
    let mut w = out.csv("ehv.csv")?;
    w.write_record(["k", "mean", "std"])?;
    for r in rows {
        w.write_record([r.k.to_string(), fmt_f(r.mean), fmt_f(r.std)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn scalarize(cfg: &Resolved, out: &mut Output, data: &Path) -> Result<(), CliError> {
    let ds = load_data(out, "data", data, &cfg.vocab)?;
    let run = cfg.first_run();
    let stats = compute_reward_stats(&ds, run.gamma)?;
    let rho = rho_table(&ds, &stats)?;
    let mut w = out.csv("scalarized.csv")?;
    let mut header = vec!["context_id".to_string(), "sequence".into()];
    header.extend((1..=ds.k()).map(|i| format!("lambda_{i}")));
    header.extend(["linear", "stz", "hard_tcheby", "st"].map(String::from));
    header.extend(ds.objectives().iter().map(|o| format!("rho_{o}")));
    w.write_record(&header)?;
    for lambda in cfg.lambdas() {
        let tables = [Method::Linear, Method::Stz, Method::HardTcheby, Method::St]
            .into_iter()
            .map(|m| scalarize_dataset(&ds, &stats, m, &lambda, run.gamma, run.tau))
            .collect::<Result<Vec<_>, _>>()?;
        for (g, group) in ds.groups().iter().enumerate() {
            for (n, it) in group.items.iter().enumerate() {
                let mut rec = vec![group.context_id.clone(), ds.vocab().decode(&it.sequence)];
                rec.extend(lambda.weights().iter().map(|v| fmt_f(*v)));
                rec.extend(tables.iter().map(|t| fmt_f(t[g][n])));
                rec.extend(rho[g][n].iter().map(|v| fmt_f(*v)));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn report(out: &mut Output, args: &ReportArgs) -> Result<(), CliError> {
    let summary: EvalSummary = read_json(out, "hypervolume", &args.eval.join("hypervolume.json"))?;
    let mut algos: Vec<&AlgorithmSummary> = summary.algorithms.iter().collect();
    algos.sort_by(|a, b| b.hypervolume.total_cmp(&a.hypervolume).then(a.algorithm.cmp(&b.algorithm)));
    let best = algos.first().map_or(0.0, |a| a.hypervolume);
    let mut w = out.csv("report.csv")?;
    let mut header = ["rank", "algorithm", "hypervolume", "relative_to_best", "front_size", "selected"].map(String::from).to_vec();
    for s in 1..=2 {
        header.extend(summary.objectives.iter().map(|o| format!("selected_{s}_{o}")));
    }
    w.write_record(&header)?;
    for (rank, a) in algos.iter().enumerate() {
        let rel = if best > 0.0 { a.hypervolume / best } else { f64::NAN };
        let mut rec = vec![
            (rank + 1).to_string(),
            a.algorithm.to_string(),
            fmt_f(a.hypervolume),
            fmt_f(rel),
            a.front.len().to_string(),
            a.selected.iter().map(|p| p.label.as_str()).collect::<Vec<_>>().join(";"),
        ];
        for s in 0..2 {
            match a.selected.get(s) {
                Some(p) => rec.extend(p.values.iter().map(|v| fmt_f(*v))),
                None => rec.extend(summary.objectives.iter().map(|_| String::new())),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
