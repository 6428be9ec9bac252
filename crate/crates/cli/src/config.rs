use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tcheby::config::parse_lambda_grid;
use tcheby::evaluate::WisForm;
use tcheby::gp::{EhvProtocol, FitOptions};
use tcheby::gwg::GwgOptions;
use tcheby::policy::PretrainOptions;
use tcheby::synth::SyntheticSpec;
use tcheby::{Algorithm, PreferenceVector, RunConfig, Vocabulary};

use crate::args::GlobalArgs;
use crate::error::{config_err, CliError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub form: WisForm,
    /// Hypervolume reference point; defaults to the pooled per-objective minimum.
    pub ref_point: Option<Vec<f64>>,
    /// Monte Carlo samples for hypervolume with more than three objectives.
    pub mc_samples: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            form: WisForm::Printed,
            ref_point: None,
            mc_samples: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSettings {
    /// Samples per context for `--method sample`.
    pub n_per_context: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub wild_type: Option<String>,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        Self {
            n_per_context: 20,
            temperature: 1.0,
            top_p: 1.0,
            wild_type: None,
        }
    }
}

/// Config document. `run` holds [`RunConfig`] keys that override the
/// per-algorithm preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: u64,
    pub alphabet: String,
    pub algorithms: Vec<Algorithm>,
    pub lambdas: Vec<PreferenceVector>,
    pub run: Map<String, Value>,
    pub synth: SyntheticSpec,
    pub pretrain: PretrainOptions,
    pub eval: EvalSettings,
    pub generate: GenerateSettings,
    pub gwg: GwgOptions,
    pub gp: FitOptions,
    pub ehv: EhvProtocol,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            alphabet: Vocabulary::default().alphabet_string(),
            algorithms: Vec::new(),
            lambdas: Vec::new(),
            run: Map::new(),
            synth: SyntheticSpec::default(),
            pretrain: PretrainOptions::default(),
            eval: EvalSettings::default(),
            generate: GenerateSettings::default(),
            gwg: GwgOptions::default(),
            gp: FitOptions::default(),
            ehv: EhvProtocol::default(),
        }
    }
}

/// Everything a subcommand needs before touching its inputs.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub file: FileConfig,
    pub runs: Vec<RunConfig>,
    pub vocab: Vocabulary,
}

impl Resolved {
    pub fn first_run(&self) -> &RunConfig {
        &self.runs[0]
    }

    /// Distinct preference vectors across runs, in run order.
    pub fn lambdas(&self) -> Vec<PreferenceVector> {
        let mut out: Vec<PreferenceVector> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.lambda) {
                out.push(r.lambda.clone());
            }
        }
        out
    }
}

fn read_raw(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_str(&text).map_err(|e| config_err(format!("config {}: {e}", path.display())))?;
        // a manifest carries its effective config under `config`
        return Ok(match v {
            Value::Object(mut m) if m.contains_key("command") && m.contains_key("config") => m.remove("config").unwrap_or_default(),
            other => other,
        });
    }
    let table: toml::Table = toml::from_str(&text).map_err(|e| config_err(format!("config {}: {}", path.display(), one_line(&e.to_string()))))?;
    serde_json::to_value(table).map_err(|e| config_err(e.to_string()))
}

pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn section<'a>(root: &'a mut Map<String, Value>, key: &str) -> Result<&'a mut Map<String, Value>, CliError> {
    root.entry(key).or_insert_with(|| Value::Object(Map::new()))
        .as_object_mut()
        .ok_or_else(|| config_err(format!("`{key}` must be a table")))
}

fn apply_flags(raw: &mut Value, flags: &GlobalArgs) -> Result<(), CliError> {
    let root = raw.as_object_mut().ok_or_else(|| config_err("config must be a table"))?;
    if let Some(seed) = flags.seed {
        root.insert("seed".into(), seed.into());
        section(root, "run")?.insert("seed".into(), seed.into());
        section(root, "synth")?.insert("seed".into(), seed.into());
    }
    if let Some(a) = &flags.alphabet {
        root.insert("alphabet".into(), a.clone().into());
    }
    if let Some(algos) = &flags.algo {
        let list: Vec<Value> = algos.split(',').map(|s| Value::from(s.trim())).collect();
        root.insert("algorithms".into(), list.into());
    }
    if let Some(grid) = &flags.lambda {
        let grid = parse_lambda_grid(grid).map_err(|e| config_err(format!("--lambda: {e}")))?;
        if grid.is_empty() {
            return Err(config_err("--lambda: empty grid"));
        }
        root.insert("lambdas".into(), serde_json::to_value(grid).map_err(|e| config_err(e.to_string()))?);
    }
    let run = section(root, "run")?;
    for (key, v) in [
        ("tau", flags.tau),
        ("gamma", flags.gamma),
        ("alpha", flags.alpha),
        ("beta", flags.beta),
        ("delta", flags.delta),
    ] {
        if let Some(v) = v {
            let n = serde_json::Number::from_f64(v).ok_or_else(|| config_err(format!("--{key} must be finite")))?;
            run.insert(key.into(), Value::Number(n));
        }
    }
    if let Some(c) = &flags.checkpoints {
        let fr = c
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| config_err(format!("--checkpoints: cannot parse {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        run.insert("checkpoints".into(), serde_json::to_value(fr).map_err(|e| config_err(e.to_string()))?);
    }
    Ok(())
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn resolve_run(file: &FileConfig, algorithm: Algorithm, lambda: Option<&PreferenceVector>) -> Result<RunConfig, CliError> {
    let mut v = serde_json::to_value(RunConfig::preset(algorithm)).map_err(|e| config_err(e.to_string()))?;
    merge(&mut v, &Value::Object(file.run.clone()));
    v["algorithm"] = serde_json::to_value(algorithm).map_err(|e| config_err(e.to_string()))?;
    if let Some(l) = lambda {
        v["lambda"] = serde_json::to_value(l).map_err(|e| config_err(e.to_string()))?;
    }
    let cfg: RunConfig = serde_json::from_value(v).map_err(|e| config_err(format!("[run]: {e}")))?;
    cfg.validate().map_err(|e| config_err(format!("[run]: {e}")))?;
    Ok(cfg)
}

/// Reads the config (if any), applies flag overrides and validates every
/// section. Fails only with config errors.
pub fn resolve(flags: &GlobalArgs) -> Result<(Value, Resolved), CliError> {
    let mut raw = match &flags.config {
        Some(p) => read_raw(p)?,
        None => Value::Object(Map::new()),
    };
    apply_flags(&mut raw, flags)?;
    let file: FileConfig = serde_json::from_value(raw).map_err(|e| config_err(format!("config: {e}")))?;

    let vocab = Vocabulary::new(file.alphabet.chars()).map_err(|e| config_err(format!("alphabet: {e}")))?;
    let algorithms = if file.algorithms.is_empty() {
        let a = match file.run.get("algorithm") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| config_err(format!("[run].algorithm: {e}")))?,
            None => Algorithm::Stomp,
        };
        vec![a]
    } else {
        file.algorithms.clone()
    };
    let mut runs = Vec::new();
    for &a in &algorithms {
        if file.lambdas.is_empty() {
            runs.push(resolve_run(&file, a, None)?);
        }
        for l in &file.lambdas {
            runs.push(resolve_run(&file, a, Some(l))?);
        }
    }
    for (i, r) in runs.iter().enumerate() {
        if runs[..i].iter().any(|p| p.algorithm == r.algorithm && p.lambda == r.lambda) {
            return Err(config_err(format!("duplicate run {} at lambda {}", r.algorithm, r.lambda)));
        }
    }
    file.synth.validate().map_err(|e| config_err(format!("[synth]: {e}")))?;
    let g = &file.generate;
    if !(g.temperature > 0.0 && g.top_p > 0.0 && g.top_p <= 1.0) {
        return Err(config_err("[generate]: temperature must be > 0 and top_p in (0, 1]"));
    }
    if !(0.0..=1.0).contains(&file.gwg.burn_in) || file.gwg.thin == 0 || !(file.gwg.proposal_temp > 0.0) {
        return Err(config_err("[gwg]: burn_in must be in [0, 1], thin >= 1 and proposal_temp > 0"));
    }
    if file.ehv.n_repeats == 0 || file.ehv.n_qmc == 0 || file.ehv.subset_sizes.is_empty() {
        return Err(config_err("[ehv]: subset_sizes, n_qmc and n_repeats must be non-empty / positive"));
    }
    if file.eval.mc_samples == 0 {
        return Err(config_err("[eval]: mc_samples must be >= 1"));
    }
    let effective = serde_json::to_value(&file).map_err(|e| config_err(e.to_string()))?;
    Ok((effective, Resolved { file, runs, vocab }))
}

/// Comma-separated floats from a flag.
pub fn parse_point(flag: &str, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| config_err(format!("--{flag}: cannot parse {p:?}")))
        })
        .collect()
}
