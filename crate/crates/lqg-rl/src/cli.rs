//! The command-line workflows: `solve`, `filter`, `learn` and `eval`, driven
//! by a JSON run configuration, plus `compare` for result documents.
//!
//! All artifacts are written atomically (temp file + rename) into the output
//! directory, accompanied by a metadata document echoing the config, the
//! parsed model, the effective seed and the wall-clock time.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::learner::{learn, LearnConfig, LearningSchedule};
use crate::model::{
    json_get, json_matrix, json_number, matrix_to_json, model_from_json, model_to_json,
    ValidatedModel,
};
use crate::planner::{greedy_gain, riccati_backward, stationary_pi, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::sim::{evaluate_policy, ObservationMode};
use crate::{estimator, Error, Result};

/// Parsed command line for a workflow run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config_path: PathBuf,
    /// Overrides the config's output_dir.
    pub output: Option<PathBuf>,
    /// Overrides every seed in the config.
    pub seed: Option<u64>,
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workflow {
    Solve,
    Filter,
    Learn,
    Eval,
}

impl Workflow {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "solve" => Ok(Workflow::Solve),
            "filter" => Ok(Workflow::Filter),
            "learn" => Ok(Workflow::Learn),
            "eval" => Ok(Workflow::Eval),
            other => Err(Error::Config(format!(
                "unknown workflow {other:?}; expected solve, filter, learn or eval"
            ))),
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub workflow: Workflow,
    pub model_path: PathBuf,
    pub output_dir: PathBuf,
    /// Top-level seed (CLI override already applied).
    pub seed: u64,
    /// True when `--seed` was given; it then beats workflow-section seeds too.
    pub seed_overridden: bool,
    /// The raw config document, echoed into metadata.
    pub raw: Value,
}

impl RunConfig {
    /// Seed precedence: `--seed` flag, then the workflow section's seed, then
    /// the top-level seed, then 0.
    fn effective_seed(&self, section: &Value) -> Result<u64> {
        if self.seed_overridden {
            return Ok(self.seed);
        }
        Ok(opt_u64(section, "seed")?.unwrap_or(self.seed))
    }
}

fn config_err(message: impl Into<String>) -> Error {
    Error::Config(message.into())
}

fn opt_key<'a>(v: &'a Value, key: &str) -> Option<&'a Value> {
    v.as_object().and_then(|o| o.get(key))
}

fn opt_f64(v: &Value, key: &str, default: f64) -> Result<f64> {
    match opt_key(v, key) {
        None => Ok(default),
        Some(x) => x
            .as_f64()
            .ok_or_else(|| config_err(format!("{key} must be a number"))),
    }
}

fn opt_u64(v: &Value, key: &str) -> Result<Option<u64>> {
    match opt_key(v, key) {
        None => Ok(None),
        Some(x) => x
            .as_u64()
            .map(Some)
            .ok_or_else(|| config_err(format!("{key} must be a nonnegative integer"))),
    }
}

fn req_u64(v: &Value, key: &str) -> Result<u64> {
    opt_u64(v, key)?.ok_or_else(|| config_err(format!("missing key {key:?}")))
}

fn req_str<'a>(v: &'a Value, key: &str) -> Result<&'a str> {
    opt_key(v, key)
        .and_then(|x| x.as_str())
        .ok_or_else(|| config_err(format!("missing or non-string key {key:?}")))
}

/// Load and resolve the run configuration. Relative paths inside the config
/// are resolved against the config file's directory.
pub fn load_config(opts: &RunOptions) -> Result<RunConfig> {
    let text = fs::read_to_string(&opts.config_path)?;
    let raw: Value =
        serde_json::from_str(&text).map_err(|e| config_err(format!("invalid JSON: {e}")))?;
    let workflow = Workflow::parse(req_str(&raw, "workflow")?)?;
    let base = opts
        .config_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let model_path = base.join(req_str(&raw, "model")?);
    if !model_path.exists() {
        return Err(config_err(format!(
            "model file {} does not exist",
            model_path.display()
        )));
    }
    let output_dir = match &opts.output {
        Some(dir) => dir.clone(),
        None => match opt_key(&raw, "output_dir").and_then(|v| v.as_str()) {
            Some(dir) => base.join(dir),
            None => PathBuf::from("."),
        },
    };
    let seed = match opts.seed {
        Some(s) => s,
        None => opt_u64(&raw, "seed")?.unwrap_or(0),
    };
    Ok(RunConfig {
        workflow,
        model_path,
        output_dir,
        seed,
        seed_overridden: opts.seed.is_some(),
        raw,
    })
}

pub fn load_model(path: &Path) -> Result<ValidatedModel> {
    let text = fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    model_from_json(&doc)
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json(path: &Path, doc: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)
        .map_err(|e| config_err(format!("serialization failed: {e}")))?;
    text.push('\n');
    write_atomic(path, &text)
}

/// Dispatch the configured workflow and write its artifacts.
pub fn run(opts: &RunOptions) -> Result<()> {
    let started = Instant::now();
    let config = load_config(opts)?;
    let model = load_model(&config.model_path)?;
    fs::create_dir_all(&config.output_dir)?;
    let seed = match config.workflow {
        Workflow::Solve => run_solve(&config, &model, opts.quiet)?,
        Workflow::Filter => run_filter(&config, &model)?,
        Workflow::Learn => run_learn(&config, &model, opts.quiet)?,
        Workflow::Eval => run_eval(&config, &model, opts.quiet)?,
    };
    let metadata = json!({
        "artifact_version": env!("CARGO_PKG_VERSION"),
        "workflow": req_str(&config.raw, "workflow")?,
        "seed": seed,
        "config": config.raw,
        "model": model_to_json(&model),
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    write_json(&config.output_dir.join("metadata.json"), &metadata)
}

fn run_solve(config: &RunConfig, model: &ValidatedModel, quiet: bool) -> Result<u64> {
    let section = opt_key(&config.raw, "solve").cloned().unwrap_or(json!({}));
    let tol = opt_f64(&section, "tol", DEFAULT_TOL)?;
    let max_iter = opt_u64(&section, "max_iter")?.unwrap_or(DEFAULT_MAX_ITER as u64) as usize;
    let horizon = opt_u64(&section, "horizon")?;

    let sol = stationary_pi(model, tol, max_iter)?;
    let mut doc = json!({
        "seed": config.seed,
        "Pi": matrix_to_json(&sol.pi),
        "bias": sol.bias,
        "iterations": sol.iterations,
        "residual": sol.residual,
    });
    if let Some(n) = horizon {
        if n < 1 {
            return Err(config_err("solve.horizon must be at least 1"));
        }
        let ric = riccati_backward(model, n as usize);
        doc["S"] = Value::Array(ric.s.iter().map(matrix_to_json).collect());
        doc["L"] = Value::Array(ric.l.iter().map(matrix_to_json).collect());
    }
    write_json(&config.output_dir.join("result.json"), &doc)?;
    if !quiet {
        println!(
            "solve: converged in {} iterations, residual {:e}",
            sol.iterations, sol.residual
        );
    }
    Ok(config.seed)
}

fn float_cell(x: f64) -> String {
    // Shortest decimal that round-trips the exact binary value.
    format!("{x}")
}

fn run_filter(config: &RunConfig, model: &ValidatedModel) -> Result<u64> {
    let section = opt_key(&config.raw, "filter")
        .ok_or_else(|| config_err("missing \"filter\" section"))?;
    let base = config
        .model_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let input = base.join(req_str(section, "input_csv")?);
    let (n, m, k) = (model.state_dim(), model.control_dim(), model.obs_dim());

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&input)
        .map_err(csv_err(&input))?;
    let width = reader.headers().map_err(csv_err(&input))?.len();
    if width != 1 + k + m {
        return Err(Error::Parse {
            path: input.display().to_string(),
            message: format!("expected {} columns (t, y_1..y_{k}, u_1..u_{m}), got {width}", 1 + k + m),
        });
    }

    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("xhat_{i}")));
    for i in 1..=n {
        for j in 1..=n {
            header.push(format!("sigma_{i}_{j}"));
        }
    }
    out.push_str(&header.join(","));
    out.push('\n');

    let push_state = |out: &mut String, fs: &estimator::FilterState| {
        let mut row = vec![fs.t.to_string()];
        row.extend(fs.xhat.iter().map(|&x| float_cell(x)));
        for i in 0..n {
            for j in 0..n {
                row.push(float_cell(fs.sigma[(i, j)]));
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    };

    let mut fs = estimator::kalman_init(model);
    push_state(&mut out, &fs);
    for record in reader.records() {
        let record = record.map_err(csv_err(&input))?;
        let cell = |idx: usize| -> Result<f64> {
            record
                .get(idx)
                .and_then(|c| c.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    path: input.display().to_string(),
                    message: format!(
                        "line {}: column {idx} is not a number",
                        record.position().map(|p| p.line()).unwrap_or(0)
                    ),
                })
        };
        let mut y = DVector::zeros(k);
        for i in 0..k {
            y[i] = cell(1 + i)?;
        }
        let mut u = DVector::zeros(m);
        for i in 0..m {
            u[i] = cell(1 + k + i)?;
        }
        fs = estimator::kalman_step(&fs, &u, &y, model)?;
        push_state(&mut out, &fs);
    }
    write_atomic(&config.output_dir.join("filtered.csv"), &out)?;
    Ok(config.seed)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn parse_mode(s: &str) -> Result<ObservationMode> {
    match s {
        "fully-observed" => Ok(ObservationMode::FullyObserved),
        "certainty-equivalent" => Ok(ObservationMode::CertaintyEquivalent),
        other => Err(config_err(format!(
            "unknown mode {other:?}; expected fully-observed or certainty-equivalent"
        ))),
    }
}

fn run_learn(config: &RunConfig, model: &ValidatedModel, quiet: bool) -> Result<u64> {
    let section = opt_key(&config.raw, "learning")
        .ok_or_else(|| config_err("missing \"learning\" section"))?;
    let schedule = LearningSchedule {
        alpha0: json_number(
            opt_key(section, "alpha0").ok_or_else(|| config_err("missing learning.alpha0"))?,
            "learning.alpha0",
        )?,
        decay_c: json_number(
            opt_key(section, "decay_c").ok_or_else(|| config_err("missing learning.decay_c"))?,
            "learning.decay_c",
        )?,
        explore_sigma: opt_f64(section, "explore_sigma", 0.0)?,
        restart_cov: match opt_key(section, "restart_cov") {
            Some(v) => json_matrix(v, "learning.restart_cov")?,
            None => model.system().sigma1.clone(),
        },
    };
    let episodes = req_u64(section, "episodes")? as usize;
    let seed = config.effective_seed(section)?;
    let mode = parse_mode(opt_key(section, "mode").and_then(|v| v.as_str()).unwrap_or("fully-observed"))?;
    let track_bias = opt_key(section, "track_bias")
        .and_then(|v| v.as_bool())
        .unwrap_or(true);

    let mut learn_config = LearnConfig::new(schedule, mode, episodes, seed);
    learn_config.track_bias = track_bias;
    // Oracle for the pi_error column; omitted if the fixed point cannot be
    // computed for this model.
    learn_config.oracle_pi = stationary_pi(model, DEFAULT_TOL, DEFAULT_MAX_ITER)
        .ok()
        .map(|s| s.pi);

    let out = learn(model, &learn_config)?;

    let mut curve = String::from("episode,length,total_cost,pi_error\n");
    for rec in &out.curve {
        let pi_error = rec.pi_error.map(float_cell).unwrap_or_default();
        curve.push_str(&format!(
            "{},{},{},{}\n",
            rec.episode,
            rec.length,
            float_cell(rec.total_cost),
            pi_error
        ));
    }
    write_atomic(&config.output_dir.join("curve.csv"), &curve)?;

    let doc = json!({
        "seed": seed,
        "episodes": episodes,
        "Pi": matrix_to_json(out.value.pi()),
        "bias": out.value.bias(),
        "fallback_events": out.fallback_events,
    });
    write_json(&config.output_dir.join("result.json"), &doc)?;
    if !quiet {
        println!(
            "learn: {} episodes, {} fallback events",
            episodes, out.fallback_events
        );
    }
    Ok(seed)
}

fn run_eval(config: &RunConfig, model: &ValidatedModel, quiet: bool) -> Result<u64> {
    let section =
        opt_key(&config.raw, "eval").ok_or_else(|| config_err("missing \"eval\" section"))?;
    let episodes = req_u64(section, "episodes")? as usize;
    if episodes < 1 {
        return Err(config_err("eval.episodes must be at least 1"));
    }
    let seed = config.effective_seed(section)?;
    let mode = parse_mode(opt_key(section, "mode").and_then(|v| v.as_str()).unwrap_or("fully-observed"))?;
    let policy_spec = req_str(section, "policy")?;
    let per_episode_csv = opt_key(section, "per_episode_csv")
        .and_then(|v| v.as_bool())
        .unwrap_or(false);

    let gain: DMatrix<f64> = if policy_spec == "zero" {
        DMatrix::zeros(model.control_dim(), model.state_dim())
    } else if policy_spec == "greedy-oracle" {
        let sol = stationary_pi(model, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        greedy_gain(&sol.pi, model)?.gain
    } else if let Some(file) = policy_spec.strip_prefix("gain-matrix ") {
        let base = config
            .model_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf();
        let path = base.join(file.trim());
        let text = fs::read_to_string(&path)?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let l = json_matrix(json_get(&doc, "", "L")?, "L")?;
        if l.nrows() != model.control_dim() || l.ncols() != model.state_dim() {
            return Err(Error::DimensionMismatch {
                name: "L".into(),
                expected: format!("{}x{}", model.control_dim(), model.state_dim()),
                actual: format!("{}x{}", l.nrows(), l.ncols()),
            });
        }
        l
    } else {
        return Err(config_err(format!(
            "unknown policy {policy_spec:?}; expected \"greedy-oracle\", \"zero\" or \"gain-matrix <file>\""
        )));
    };

    let mut policy = |x: &DVector<f64>, _rng: &mut rand_chacha::ChaCha8Rng| Ok(-(&gain * x));
    let (summary, stats) = evaluate_policy(model, mode, episodes, seed, None, &mut policy)?;

    let doc = json!({
        "seed": seed,
        "episodes": summary.episodes,
        "policy": policy_spec,
        "mean": summary.mean,
        "stderr": summary.stderr,
    });
    write_json(&config.output_dir.join("summary.json"), &doc)?;
    if per_episode_csv {
        let mut csv_text = String::from("episode,length,total_cost\n");
        for s in &stats {
            csv_text.push_str(&format!(
                "{},{},{}\n",
                s.episode,
                s.length,
                float_cell(s.total_cost)
            ));
        }
        write_atomic(&config.output_dir.join("episodes.csv"), &csv_text)?;
    }
    if !quiet {
        println!(
            "eval: mean {} stderr {} over {} episodes",
            summary.mean, summary.stderr, summary.episodes
        );
    }
    Ok(seed)
}

/// Deviation report between the Pi matrices of two result documents.
#[derive(Debug, Clone, Copy)]
pub struct CompareReport {
    pub frobenius_error: f64,
    pub relative_error: f64,
    pub max_abs_deviation: f64,
}

fn load_pi(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    json_matrix(json_get(&doc, "", "Pi")?, "Pi")
}

/// Compare a learned result document against an oracle result document.
pub fn compare(learned: &Path, oracle: &Path) -> Result<CompareReport> {
    let a = load_pi(learned)?;
    let b = load_pi(oracle)?;
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            name: "Pi".into(),
            expected: format!("{}x{}", b.nrows(), b.ncols()),
            actual: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    let diff = &a - &b;
    let fro = diff.norm();
    Ok(CompareReport {
        frobenius_error: fro,
        relative_error: fro / b.norm().max(f64::MIN_POSITIVE),
        max_abs_deviation: diff.amax(),
    })
}
