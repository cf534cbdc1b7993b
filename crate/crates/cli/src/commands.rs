//! The simulate / fit / predict / score / diagnose workflows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use llngm::inference::diagnostics::CheckpointTrace;
use llngm::inference::quantile_sorted;
use llngm::inference::{evaluate_diagnostics, fit, to_natural, to_unconstrained, Diagnostics, FitResult};
use llngm::model::{assemble_model, simulate, Model};
use llngm::prediction::{posterior_predict, score_report, PredictiveSamples};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::data::{fmt, load_observations, write_csv, Observations, Table};
use crate::error::CliError;

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const TRUTH_PARAMS_FILE: &str = "truth_params.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const FIT_FILE: &str = "fit.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const SAMPLES_FILE: &str = "predictive_samples.csv";
pub const SCORE_FILE: &str = "score.csv";

/// Resolved configuration plus the output directory.
pub struct Run {
    pub config: RunConfig,
    /// Directory that relative paths in the configuration refer to.
    pub base: PathBuf,
    pub out: PathBuf,
}

impl Run {
    fn input(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    fn output(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create_out(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))
    }

    fn write_json(&self, name: &str, value: &Value) -> Result<(), CliError> {
        let path = self.output(name);
        let text = serde_json::to_string_pretty(value).expect("json values always serialize");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    fn model_for(&self, obs: &Observations) -> Result<Model, CliError> {
        let m = &self.config.model;
        let op = m.operator.build()?;
        let n_latent = op.ncols();
        let noise_w = m.process.spec(op.h().to_vec());
        let noise_y = m.measurement.spec(vec![1.0; obs.len()]);
        Ok(assemble_model(
            obs.design(n_latent),
            obs.x.clone(),
            self.config.beta(),
            op,
            noise_w,
            noise_y,
            &m.prior_set(),
        )?)
    }

    fn n_latent(&self) -> Result<usize, CliError> {
        let n = self.config.model.operator.build()?.ncols();
        if n == 0 {
            return Err(CliError::config("model.operator", "the operator has no latent nodes"));
        }
        Ok(n)
    }

    fn training_data(&self) -> Result<(Model, Vec<f64>), CliError> {
        let path = self.input(&self.config.data.path);
        let obs = load_observations(&path, &self.config.data, self.n_latent()?, true)?;
        if obs.is_empty() {
            return Err(CliError::schema(&path, "no complete observations"));
        }
        let model = self.model_for(&obs)?;
        let y = obs.y.clone().expect("response requested");
        Ok((model, y))
    }
}

/// Simulates one observation per latent node from the configured values.
pub fn run_simulate(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let n = run.n_latent()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let covariates: Vec<Vec<f64>> =
        cfg.data.covariates.iter().map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let p = cfg.data.n_fixed();
    let x = DMatrix::from_fn(n, p, |i, j| match (cfg.data.intercept, j) {
        (true, 0) => 1.0,
        (true, j) => covariates[j - 1][i],
        (false, j) => covariates[j][i],
    });
    let obs = Observations { index: (0..n).collect(), x, y: None, rows: (0..n).collect() };
    let model = run.model_for(&obs)?;
    let theta = model.theta0().to_vec();
    let (y, state) = simulate(&model, &theta, &mut rng)?;

    run.create_out()?;
    let mut headers = vec![cfg.data.index.clone()];
    headers.extend(cfg.data.covariates.iter().cloned());
    headers.push(cfg.data.response.clone());
    write_csv(
        &run.output(DATA_FILE),
        &headers,
        (0..n).map(|i| {
            let mut row = vec![i.to_string()];
            row.extend(covariates.iter().map(|c| fmt(c[i])));
            row.push(fmt(y[i]));
            row
        }),
    )?;
    write_csv(
        &run.output(TRUTH_FILE),
        &["index", "w", "v_w", "v_y"].map(String::from),
        (0..n).map(|i| vec![i.to_string(), fmt(state.w[i]), fmt(state.v_w[i]), fmt(state.v_y[i])]),
    )?;
    write_csv(
        &run.output(TRUTH_PARAMS_FILE),
        &["parameter", "value"].map(String::from),
        model.param_names().into_iter().zip(&theta).map(|(n, v)| vec![n, fmt(*v)]),
    )?;
    Ok(())
}

fn trace_rows(traces: &[CheckpointTrace], model: &Model) -> Result<Vec<Vec<String>>, CliError> {
    let transforms = model.transforms();
    let mut rows = Vec::new();
    for t in traces {
        for (c, (u, g)) in t.theta.iter().zip(&t.grad).enumerate() {
            let mut row = vec![t.iteration.to_string(), c.to_string(), fmt(t.step)];
            row.extend(to_natural(u, &transforms)?.into_iter().map(fmt));
            row.extend(g.iter().map(|v| fmt(*v)));
            rows.push(row);
        }
    }
    Ok(rows)
}

fn trace_headers(names: &[String]) -> Vec<String> {
    let mut h: Vec<String> = ["iteration", "chain", "step"].map(String::from).to_vec();
    h.extend(names.iter().cloned());
    h.extend(names.iter().map(|n| format!("grad:{n}")));
    h
}

fn write_trace(run: &Run, model: &Model, traces: &[CheckpointTrace]) -> Result<(), CliError> {
    write_csv(&run.output(TRACE_FILE), &trace_headers(&model.param_names()), trace_rows(traces, model)?)
}

fn diagnostics_json(names: &[String], d: &Diagnostics) -> Value {
    let by_name = |values: Vec<Value>| -> Value { Value::Object(names.iter().cloned().zip(values).collect()) };
    json!({
        "iterations": d.iterations,
        "converged": d.converged,
        "rhat": d.rhat.as_ref().map(|r| by_name(r.values.iter().map(|v| json!(v)).collect())),
        "rhat_degenerate": d.rhat.as_ref().map(|r| by_name(r.degenerate.iter().map(|v| json!(v)).collect())),
        "drift": by_name(d.drift.iter().map(|s| json!({"slope": s.slope, "rel_var": s.rel_var, "pass": s.pass})).collect()),
        "s_t": d.s_t,
        "s_t_normalized": d.s_t_normalized,
        "s_t_threshold": d.s_t_threshold,
    })
}

fn write_fit_outputs(run: &Run, model: &Model, r: &FitResult, n_obs: usize) -> Result<(), CliError> {
    let names = &r.names;
    let mean = r.posterior_mean();
    let lo = r.posterior_quantile(0.025);
    let hi = r.posterior_quantile(0.975);
    let cell = |v: &Option<Vec<f64>>, j: usize| v.as_ref().map_or("NA".to_string(), |v| fmt(v[j]));
    write_csv(
        &run.output(ESTIMATES_FILE),
        &["parameter", "map", "mean", "q0.025", "q0.975"].map(String::from),
        names
            .iter()
            .enumerate()
            .map(|(j, n)| vec![n.clone(), fmt(r.theta_map[j]), cell(&mean, j), cell(&lo, j), cell(&hi, j)]),
    )?;
    write_trace(run, model, &r.traces)?;
    let mut post_headers = vec!["sample".to_string()];
    post_headers.extend(names.iter().cloned());
    write_csv(
        &run.output(POSTERIOR_FILE),
        &post_headers,
        r.posterior.iter().enumerate().map(|(i, s)| {
            let mut row = vec![i.to_string()];
            row.extend(s.iter().map(|v| fmt(*v)));
            row
        }),
    )?;
    run.write_json(DIAGNOSTICS_FILE, &diagnostics_json(names, &r.diagnostics))?;
    run.write_json(
        FIT_FILE,
        &json!({
            "names": names,
            "theta_map": r.theta_map,
            "posterior_mean": mean,
            "n_obs": n_obs,
            "converged": r.diagnostics.converged,
            "iterations": r.diagnostics.iterations,
        }),
    )
}

/// MAP estimation followed by SGLD. Outputs are written even when the
/// optimizer does not converge.
pub fn run_fit(run: &Run) -> Result<(), CliError> {
    let (model, y) = run.training_data()?;
    let opts = run.config.inference.fit_options(run.config.seed);
    run.create_out()?;
    let result = match fit(&model, &y, &opts) {
        Ok(r) => r,
        Err(failure) => {
            write_trace(run, &model, &failure.traces)?;
            return Err(failure.error.into());
        }
    };
    write_fit_outputs(run, &model, &result, y.len())?;
    if result.diagnostics.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(result.diagnostics.iterations))
    }
}

fn read_fit(run: &Run, model: &Model) -> Result<Vec<f64>, CliError> {
    let path = run.output(FIT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::schema(&path, e))?;
    let names: Vec<String> =
        serde_json::from_value(v["names"].clone()).map_err(|e| CliError::schema(&path, format!("names: {e}")))?;
    if names != model.param_names() {
        return Err(CliError::schema(&path, "parameters do not match the configured model"));
    }
    let key = if v["posterior_mean"].is_null() { "theta_map" } else { "posterior_mean" };
    serde_json::from_value(v[key].clone()).map_err(|e| CliError::schema(&path, format!("{key}: {e}")))
}

fn target_label(row: usize) -> String {
    format!("row{row}")
}

/// Posterior-predictive draws at the configured targets.
pub fn run_predict(run: &Run) -> Result<(), CliError> {
    let cfg = &run.config;
    let (model, y) = run.training_data()?;
    let theta = read_fit(run, &model)?;
    let targets_path = run.input(
        cfg.prediction
            .targets
            .as_deref()
            .ok_or_else(|| CliError::config("prediction.targets", "no target file configured"))?,
    );
    let targets = load_observations(&targets_path, &cfg.data, model.n_latent(), false)?;
    if targets.is_empty() {
        return Err(CliError::schema(&targets_path, "no complete target rows"));
    }
    let labels: Vec<String> = targets.rows.iter().map(|&r| target_label(r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pred = posterior_predict(
        &mut rng,
        &model,
        &theta,
        &y,
        &targets.design(model.n_latent()),
        &targets.x,
        labels.clone(),
        cfg.prediction.draws,
    )?;

    run.create_out()?;
    let mut headers = ["target", "index", "mean", "sd"].map(String::from).to_vec();
    headers.extend(cfg.prediction.quantiles.iter().map(|q| format!("q{q}")));
    let mean = pred.mean();
    let sd = pred.sd();
    write_csv(
        &run.output(PREDICTIONS_FILE),
        &headers,
        (0..pred.n_targets()).map(|j| {
            let mut col = pred.column(j);
            col.sort_by(f64::total_cmp);
            let mut row = vec![labels[j].clone(), targets.index[j].to_string(), fmt(mean[j]), fmt(sd[j])];
            row.extend(cfg.prediction.quantiles.iter().map(|&q| fmt(quantile_sorted(&col, q))));
            row
        }),
    )?;
    let mut sample_headers = vec!["draw".to_string()];
    sample_headers.extend(labels);
    write_csv(
        &run.output(SAMPLES_FILE),
        &sample_headers,
        pred.eta_star.iter().enumerate().map(|(i, r)| {
            let mut row = vec![i.to_string()];
            row.extend(r.iter().map(|v| fmt(*v)));
            row
        }),
    )
}

/// Scores predictive draws against the target file's response column.
pub fn run_score(run: &Run) -> Result<Vec<(String, String)>, CliError> {
    let cfg = &run.config;
    let samples_path = run.output(SAMPLES_FILE);
    let samples = Table::read(&samples_path, &cfg.data.na)?;
    let targets_path = run.input(
        cfg.prediction
            .targets
            .as_deref()
            .ok_or_else(|| CliError::config("prediction.targets", "no target file configured"))?,
    );
    let truth = load_observations(&targets_path, &cfg.data, usize::MAX, true)?;
    let y = truth.y.clone().expect("response requested");
    let known: BTreeMap<String, f64> = truth.rows.iter().map(|&r| target_label(r)).zip(y).collect();

    let mut eta_star = vec![Vec::new(); samples.n_rows()];
    let mut targets = Vec::new();
    let mut y_true = Vec::new();
    for (name, col) in samples.headers.iter().zip(&samples.columns).skip(1) {
        let Some(&obs) = known.get(name) else { continue };
        let draws: Option<Vec<f64>> = col.iter().copied().collect();
        let draws = draws.ok_or_else(|| CliError::schema(&samples_path, format!("missing draws for `{name}`")))?;
        for (row, v) in eta_star.iter_mut().zip(draws) {
            row.push(v);
        }
        targets.push(name.clone());
        y_true.push(obs);
    }
    if targets.is_empty() {
        return Err(CliError::schema(&targets_path, "no predicted target has an observed response"));
    }
    let report = score_report(&PredictiveSamples { eta_star, targets }, &y_true)?;
    let fields = vec![
        ("mae".to_string(), fmt(report.mae)),
        ("mse".to_string(), fmt(report.mse)),
        ("neg_crps".to_string(), fmt(-report.crps)),
        ("neg_scrps".to_string(), report.scrps.map_or("NA".to_string(), |s| fmt(-s))),
    ];
    run.create_out()?;
    write_csv(
        &run.output(SCORE_FILE),
        &fields.iter().map(|f| f.0.clone()).collect::<Vec<_>>(),
        [fields.iter().map(|f| f.1.clone()).collect()],
    )?;
    Ok(fields)
}

/// Recomputes convergence diagnostics from a trace file.
pub fn run_diagnose(run: &Run) -> Result<Value, CliError> {
    let (model, _) = run.training_data()?;
    let names = model.param_names();
    let transforms = model.transforms();
    let path = run.output(TRACE_FILE);
    let table = Table::read(&path, &run.config.data.na)?;
    if table.headers != trace_headers(&names) {
        return Err(CliError::schema(&path, "columns do not match the configured model"));
    }
    let p = names.len();
    let mut traces: Vec<CheckpointTrace> = Vec::new();
    for r in 0..table.n_rows() {
        let row: Option<Vec<f64>> = table.columns.iter().map(|c| c[r]).collect();
        let row = row.ok_or_else(|| CliError::schema(&path, format!("row {} has missing values", r + 1)))?;
        let iteration = row[0] as usize;
        let u = to_unconstrained(&row[3..3 + p], &transforms)?;
        let g = row[3 + p..].to_vec();
        match traces.last_mut() {
            Some(t) if t.iteration == iteration => {
                t.theta.push(u);
                t.grad.push(g);
            }
            _ => traces.push(CheckpointTrace { iteration, theta: vec![u], grad: vec![g], step: row[2] }),
        }
    }
    if traces.is_empty() {
        return Err(CliError::schema(&path, "no checkpoints"));
    }
    let opts = run.config.inference.fit_options(run.config.seed);
    let iterations = traces.last().map_or(0, |t| t.iteration);
    let d = evaluate_diagnostics(&traces, &opts, iterations);
    let value = diagnostics_json(&names, &d);
    run.create_out()?;
    run.write_json("diagnose.json", &value)?;
    if d.converged {
        Ok(value)
    } else {
        println!("{}", serde_json::to_string_pretty(&value).expect("json values always serialize"));
        Err(CliError::NotConverged(iterations))
    }
}
