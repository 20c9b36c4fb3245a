//! Subcommands behind the `lhn` binary. Each returns the directory it wrote.
//!
//! Layout under the output directory:
//! `data/` dataset, `mle/` point estimate, `train-<variant>/` and `bbvi/`
//! reports, `<report>/eval/` metric tables, `compare.csv`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbvi::{fit_bbvi, BbviError, BbviReport, GaussianSurrogate};
use crate::config::{load_config, ConfigError, Exemplar, ExperimentConfig};
use crate::datagen::{generate_ou_dataset, generate_regression_dataset, generate_schlogl_dataset, DataError};
use crate::io::{
    load_dataset, load_params, paths_from_table, paths_table, read_toml, save_dataset, save_params, write_toml, IoError,
    Table, DATASET_META,
};
use crate::metrics::{
    dcor_matrix, ensemble_stats, kde, kde2, local_maxima, mean, scott_bandwidth, std_dev, theoretical_wb_stats,
    w1_per_time, MetricError, PairStats, WbHyper,
};
use crate::node::DataModel;
use crate::sampler::{SamplerConfig, ScoreNet};
use crate::trainer::{fit_mle, train_with_observer, EpochRecord, TrainError, TrainReport, Variant};
use crate::trajectory::{Scaling, TrajectoryEnsemble};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Invalid { .. } => CliError::Config(e.to_string()),
            DataError::Trajectory(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<BbviError> for CliError {
    fn from(e: BbviError) -> Self {
        match e {
            BbviError::Invalid(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Invalid(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Configuration after command-line overrides, validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub hash: String,
}

pub fn resolve(g: &Globals, tweak: impl FnOnce(&mut ExperimentConfig)) -> Result<Resolved, CliError> {
    let mut config = match &g.config {
        Some(p) => load_config(p)?,
        None => return Err(CliError::Config("--config is required".into())),
    };
    if let Some(s) = g.seed {
        config.seed = Some(s);
    }
    if let Some(o) = &g.out {
        config.out = Some(o.clone());
    }
    tweak(&mut config);
    config.validate()?;
    Ok(Resolved {
        seed: config.seed()?,
        out: config.out_dir(),
        hash: config.hash(),
        config,
    })
}

pub fn data_dir(r: &Resolved) -> PathBuf {
    match (&r.config.data.exemplar, &r.config.data.path) {
        (Exemplar::Dataset, Some(p)) => p.clone(),
        _ => r.out.join("data"),
    }
}

fn exemplar_name(e: Exemplar) -> &'static str {
    match e {
        Exemplar::Ou => "ou",
        Exemplar::Schlogl => "schlogl",
        Exemplar::Regression => "regression",
        Exemplar::Dataset => "dataset",
    }
}

/// Per-time mean and standard deviation of the first observed component.
pub fn describe(data: &TrajectoryEnsemble) -> Vec<(f64, f64, Option<f64>)> {
    (0..data.n_times())
        .map(|k| (data.times()[k], data.mean_at(k, 0), data.std_at(k, 0)))
        .collect()
}

pub fn gen_data(r: &Resolved) -> Result<PathBuf, CliError> {
    let d = &r.config.data;
    let data = match d.exemplar {
        Exemplar::Ou => generate_ou_dataset(&d.ou, r.seed)?,
        Exemplar::Schlogl => generate_schlogl_dataset(&d.schlogl, r.seed)?,
        Exemplar::Regression => generate_regression_dataset(&d.regression, r.seed)?,
        Exemplar::Dataset => {
            return Err(CliError::Config(
                "data.exemplar = \"dataset\" reads existing data; nothing to generate".into(),
            ))
        }
    };
    let dir = data_dir(r);
    save_dataset(&dir, &data, exemplar_name(d.exemplar), r.seed, &r.hash)?;
    println!(
        "wrote {}: N_D = {}, N_t = {}, dim = {}",
        dir.display(),
        data.n_traj(),
        data.n_times(),
        data.dim()
    );
    println!("{:>12} {:>14} {:>14}", "time", "mean", "std");
    let rows = describe(&data);
    let stride = (rows.len() / 10).max(1);
    for (i, (t, m, s)) in rows.iter().enumerate() {
        if i % stride == 0 || i + 1 == rows.len() {
            println!("{t:>12.4} {m:>14.6} {:>14.6}", s.unwrap_or(0.0));
        }
    }
    Ok(dir)
}

fn load_data(r: &Resolved) -> Result<(TrajectoryEnsemble, TrajectoryEnsemble, Scaling), CliError> {
    let dir = data_dir(r);
    if !dir.join(DATASET_META).exists() {
        return Err(CliError::Io(format!(
            "no dataset at {}; run `lhn gen-data` first",
            dir.display()
        )));
    }
    let (raw, _) = load_dataset(&dir)?;
    let scaling = r.config.data.scaling();
    let model_units = raw.to_model_units(&scaling);
    Ok((raw, model_units, scaling))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleMeta {
    pub seed: u64,
    pub config_hash: String,
    pub model: DataModel,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub epochs: usize,
}

pub fn mle_dir(r: &Resolved) -> PathBuf {
    r.out.join("mle")
}

pub fn fit_mle_cmd(r: &Resolved) -> Result<(PathBuf, Vec<f64>), CliError> {
    let (_, data, _) = load_data(r)?;
    let model = r.config.build_model(&data)?;
    let mut params: Option<Vec<f64>> = None;
    let mut initial = f64::NAN;
    let mut best = f64::NAN;
    let mut epochs = 0;
    for cfg in r.config.mle_configs(r.seed) {
        let res = fit_mle(&model, &data, &cfg, params.as_deref())?;
        if params.is_none() {
            initial = res.initial_loss;
        }
        best = res.best_loss;
        epochs += cfg.epochs;
        params = Some(res.params.into_vec());
    }
    let params = params.expect("at least one MLE stage");
    let dir = mle_dir(r);
    save_params(&dir.join("mle.params"), &params)?;
    write_toml(
        &dir.join("mle.toml"),
        &MleMeta {
            seed: r.seed,
            config_hash: r.hash.clone(),
            model,
            initial_loss: initial,
            best_loss: best,
            epochs,
        },
    )?;
    println!("MLE loss {initial:.6e} -> {best:.6e} over {epochs} epochs; wrote {}", dir.display());
    Ok((dir, params))
}

fn load_or_fit_mle(r: &Resolved, with_mle: bool) -> Result<Vec<f64>, CliError> {
    if with_mle {
        return Ok(fit_mle_cmd(r)?.1);
    }
    let path = mle_dir(r).join("mle.params");
    if !path.exists() {
        return Err(CliError::Io(format!(
            "no MLE checkpoint at {}; run `lhn fit-mle` or pass --with-mle",
            path.display()
        )));
    }
    Ok(load_params(&path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub n: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairStats>,
}

impl WeightSummary {
    pub fn of(samples: &[Vec<f64>]) -> Self {
        let d = samples.first().map_or(0, Vec::len);
        let col = |i: usize| samples.iter().map(|s| s[i]).collect::<Vec<f64>>();
        let pair = if d == 2 {
            let rows: Vec<[f64; 2]> = samples.iter().map(|s| [s[0], s[1]]).collect();
            ensemble_stats(&rows).ok()
        } else {
            None
        };
        Self {
            n: samples.len(),
            mean: (0..d).map(|i| mean(&col(i))).collect(),
            std: (0..d).map(|i| if samples.len() > 1 { std_dev(&col(i)) } else { 0.0 }).collect(),
            pair,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub epochs_run: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    /// Time-averaged W1 of the final ensemble against the data, raw units.
    pub w1_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w1_first_epoch: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w1_last_epoch: Option<f64>,
    pub weights: WeightSummary,
    /// Pooled over the training ensemble and extra sampler seeds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pooled: Option<WeightSummary>,
    /// Population statistics of `(W, b)` for the OU exemplar.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theory: Option<PairStats>,
}

/// Metadata of a training report; the tables sit next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub method: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    pub seed: u64,
    pub config_hash: String,
    pub n_params: usize,
    pub stochastic: Vec<usize>,
    pub scaling: Scaling,
    pub times: Vec<f64>,
    pub dim: usize,
    pub w_mle: Vec<f64>,
    pub w_d: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreNet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<GaussianSurrogate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<Summary>,
}

pub const REPORT_META: &str = "report.toml";

fn theory_for(r: &Resolved) -> Option<PairStats> {
    let d = &r.config.data;
    (d.exemplar == Exemplar::Ou && d.scale == 1.0 && d.offset == 0.0).then(|| {
        theoretical_wb_stats(&WbHyper::from_rate_level(
            (d.ou.rate.mean, d.ou.rate.std),
            (d.ou.level.mean, d.ou.level.std),
        ))
    })
}

fn weights_table(samples: &[Vec<f64>]) -> Table {
    let d = samples.first().map_or(0, Vec::len);
    let mut header = vec!["replica_id".to_string()];
    header.extend((0..d).map(|i| format!("w_{i}")));
    let mut t = Table::new(header, 1);
    for (j, s) in samples.iter().enumerate() {
        let mut row = vec![j as f64];
        row.extend_from_slice(s);
        t.push(row);
    }
    t
}

fn trace_table(trace: &[EpochRecord]) -> Table {
    let mut t = Table::new(
        ["epoch", "loss", "loglik", "kl", "w1"].iter().map(|s| s.to_string()).collect(),
        1,
    );
    for r in trace {
        t.push(vec![r.epoch as f64, r.loss, r.loglik, r.kl, r.w1]);
    }
    t
}

fn w1_table(times: &[f64], w1: &[f64]) -> Table {
    let mut t = Table::new(vec!["time_index".into(), "time".into(), "w1".into()], 1);
    for (k, (time, w)) in times.iter().zip(w1).enumerate() {
        t.push(vec![k as f64, *time, *w]);
    }
    t
}

fn to_raw(preds: &[Vec<f64>], s: &Scaling) -> Vec<Vec<f64>> {
    preds.iter().map(|p| p.iter().map(|v| s.to_raw(*v)).collect()).collect()
}

fn raw_rows(data: &TrajectoryEnsemble) -> Vec<Vec<f64>> {
    (0..data.n_traj()).map(|j| data.path(j).to_vec()).collect()
}

/// W1 per time slice; multi-component data are averaged over components.
fn w1_by_time(preds: &[Vec<f64>], data: &[Vec<f64>], n_times: usize, dim: usize) -> Result<Vec<f64>, MetricError> {
    let per_entry = w1_per_time(preds, data)?;
    Ok((0..n_times)
        .map(|k| per_entry[k * dim..(k + 1) * dim].iter().sum::<f64>() / dim as f64)
        .collect())
}

pub fn train_dir(r: &Resolved, variant: Variant) -> PathBuf {
    r.out.join(format!("train-{}", variant.name()))
}

pub fn train_cmd(g: &Globals, variant: Option<Variant>, epochs: Option<usize>, with_mle: bool) -> Result<PathBuf, CliError> {
    let r = resolve(g, |c| {
        if let Some(v) = variant {
            c.train.variant = v;
        }
        if let Some(e) = epochs {
            c.train.epochs = e;
        }
    })?;
    train_resolved(&r, with_mle)
}

pub fn train_resolved(r: &Resolved, with_mle: bool) -> Result<PathBuf, CliError> {
    let (raw, data, scaling) = load_data(r)?;
    let w_mle = load_or_fit_mle(r, with_mle)?;
    let model = r.config.build_model(&data)?;
    let cfg = r.config.train_config(r.seed);
    let dir = train_dir(r, cfg.variant);
    let ckpt_every = r.config.train.checkpoint_every;
    let ckpt_dir = dir.join("checkpoints");
    let mut io_failure: Option<IoError> = None;
    let mut observer = |rec: &EpochRecord, theta: &[f64], w_d: &[f64]| {
        if ckpt_every == 0 || (rec.epoch + 1) % ckpt_every != 0 || io_failure.is_some() {
            return;
        }
        let stem = format!("epoch-{:05}", rec.epoch + 1);
        let res = write_toml(&ckpt_dir.join(format!("{stem}.toml")), rec)
            .and_then(|_| save_params(&ckpt_dir.join(format!("{stem}.theta")), theta))
            .and_then(|_| save_params(&ckpt_dir.join(format!("{stem}.wd")), w_d));
        if let Err(e) = res {
            io_failure = Some(e);
        }
    };
    let outcome = train_with_observer(&model, &data, &w_mle, &cfg, &mut observer);
    if let Some(e) = io_failure {
        return Err(e.into());
    }
    let base = |report: &TrainReport, status: &str, message: Option<String>| ReportMeta {
        method: "langevin".into(),
        status: status.into(),
        message,
        variant: Some(report.variant),
        seed: r.seed,
        config_hash: r.hash.clone(),
        n_params: model.n_params(),
        stochastic: report.partition.stochastic().to_vec(),
        scaling,
        times: data.times().to_vec(),
        dim: data.dim(),
        w_mle: report.w_mle.clone(),
        w_d: report.w_d.clone(),
        sampler: Some(report.sampler.clone()),
        score: report.score.clone(),
        surrogate: None,
        summary: None,
    };
    let report = match outcome {
        Ok(rep) => rep,
        Err(TrainError::Diverged {
            epoch,
            replica,
            step,
            partial,
        }) => {
            let msg = format!("epoch {epoch}: replica {replica} diverged at sampler step {step}");
            trace_table(&partial.trace).save(&dir.join("trace.csv"))?;
            write_toml(&dir.join(REPORT_META), &base(&partial, "diverged", Some(msg.clone())))?;
            return Err(CliError::Numerical(format!("{msg}; partial trace in {}", dir.display())));
        }
        Err(e) => return Err(e.into()),
    };

    let raw_preds = to_raw(&report.predictions, &scaling);
    let data_rows = raw_rows(&raw);
    let w1 = w1_by_time(&raw_preds, &data_rows, raw.n_times(), raw.dim())?;
    let mut pooled = report.endpoints.clone();
    for k in 1..=r.config.eval.extra_seeds {
        let seed = crate::trainer::epoch_seed(r.seed ^ 0xA5A5_A5A5, k);
        pooled.extend(
            report
                .sample_posterior(seed, cfg.sampler.n_replicas)
                .map_err(|e| CliError::Numerical(e.to_string()))?,
        );
    }
    let summary = Summary {
        epochs_run: report.trace.len(),
        final_loss: report.trace.last().map(|t| t.loss),
        w1_mean: mean(&w1),
        w1_first_epoch: report.trace.first().map(|t| t.w1),
        w1_last_epoch: report.trace.last().map(|t| t.w1),
        weights: WeightSummary::of(&report.endpoints),
        pooled: (r.config.eval.extra_seeds > 0).then(|| WeightSummary::of(&pooled)),
        theory: theory_for(r),
    };
    trace_table(&report.trace).save(&dir.join("trace.csv"))?;
    weights_table(&report.endpoints).save(&dir.join("ensemble.csv"))?;
    if r.config.eval.extra_seeds > 0 {
        weights_table(&pooled).save(&dir.join("pooled.csv"))?;
    }
    paths_table(&raw_preds, raw.n_times(), raw.dim()).save(&dir.join("predictions.csv"))?;
    w1_table(raw.times(), &w1).save(&dir.join("w1.csv"))?;
    let mut meta = base(&report, "complete", None);
    meta.summary = Some(summary.clone());
    write_toml(&dir.join(REPORT_META), &meta)?;
    print_summary(&dir, &summary);
    Ok(dir)
}

fn print_summary(dir: &Path, s: &Summary) {
    println!("wrote {}", dir.display());
    if let Some(l) = s.final_loss {
        println!("epochs {}  final -ELBO {l:.6e}", s.epochs_run);
    }
    if let (Some(a), Some(b)) = (s.w1_first_epoch, s.w1_last_epoch) {
        println!("training W1 first/last epoch {a:.5} / {b:.5}");
    }
    println!("final ensemble time-averaged W1 {:.5}", s.w1_mean);
    let show = |name: &str, w: &WeightSummary| {
        if let Some(p) = w.pair {
            println!(
                "{name} (n={}): E = ({:.4}, {:.4})  V = ({:.4}, {:.4})  rho = {:.4}",
                w.n, p.mean[0], p.mean[1], p.var[0], p.var[1], p.rho
            );
        } else {
            println!("{name} (n={}): {} stochastic weights", w.n, w.mean.len());
        }
    };
    show("ensemble", &s.weights);
    if let Some(p) = &s.pooled {
        show("pooled", p);
    }
    if let Some(t) = s.theory {
        println!(
            "theory: E = ({:.4}, {:.4})  V = ({:.4}, {:.4})  rho = {:.4}",
            t.mean[0], t.mean[1], t.var[0], t.var[1], t.rho
        );
    }
}

pub fn bbvi_dir(r: &Resolved) -> PathBuf {
    r.out.join("bbvi")
}

pub fn train_bbvi_cmd(g: &Globals, epochs: Option<usize>, with_mle: bool) -> Result<PathBuf, CliError> {
    let r = resolve(g, |c| {
        if let Some(e) = epochs {
            c.bbvi.epochs = e;
        }
    })?;
    let (raw, data, scaling) = load_data(&r)?;
    let w_mle = load_or_fit_mle(&r, with_mle)?;
    let model = r.config.build_model(&data)?;
    let rep: BbviReport = fit_bbvi(&model, &data, &w_mle, &r.config.bbvi_config(r.seed))?;
    let dir = bbvi_dir(&r);
    let raw_preds = to_raw(&rep.predictions, &scaling);
    let w1 = w1_by_time(&raw_preds, &raw_rows(&raw), raw.n_times(), raw.dim())?;
    let mut t = Table::new(["epoch", "loss", "loglik", "kl"].iter().map(|s| s.to_string()).collect(), 1);
    for rec in &rep.trace {
        t.push(vec![rec.epoch as f64, rec.loss, rec.loglik, rec.kl]);
    }
    t.save(&dir.join("trace.csv"))?;
    weights_table(&rep.samples).save(&dir.join("ensemble.csv"))?;
    paths_table(&raw_preds, raw.n_times(), raw.dim()).save(&dir.join("predictions.csv"))?;
    w1_table(raw.times(), &w1).save(&dir.join("w1.csv"))?;
    let summary = Summary {
        epochs_run: rep.trace.len(),
        final_loss: rep.trace.last().map(|t| t.loss),
        w1_mean: mean(&w1),
        w1_first_epoch: None,
        w1_last_epoch: None,
        weights: WeightSummary::of(&rep.samples),
        pooled: None,
        theory: theory_for(&r),
    };
    let meta = ReportMeta {
        method: "bbvi".into(),
        status: "complete".into(),
        message: None,
        variant: None,
        seed: r.seed,
        config_hash: r.hash.clone(),
        n_params: model.n_params(),
        stochastic: rep.partition.stochastic().to_vec(),
        scaling,
        times: data.times().to_vec(),
        dim: data.dim(),
        w_mle: rep.w_mle.clone(),
        w_d: rep.w_d.clone(),
        sampler: None,
        score: None,
        surrogate: Some(rep.surrogate.clone()),
        summary: Some(summary.clone()),
    };
    write_toml(&dir.join(REPORT_META), &meta)?;
    print_summary(&dir, &summary);
    let q = &rep.surrogate;
    println!("surrogate sigma {:?}  rho {:.4}", q.sigma(), q.rho());
    Ok(dir)
}

/// Predictive paths of a report, or the dataset in a directory.
pub fn load_paths(dir: &Path) -> Result<(Vec<f64>, usize, Vec<Vec<f64>>), CliError> {
    if dir.join(REPORT_META).exists() {
        let meta: ReportMeta = read_toml(&dir.join(REPORT_META))?;
        let p = dir.join("predictions.csv");
        let (n_t, dim, paths) = paths_from_table(&Table::load(&p, 2)?, &p)?;
        if n_t != meta.times.len() || dim != meta.dim {
            return Err(CliError::Io(format!("{}: predictions disagree with report metadata", p.display())));
        }
        Ok((meta.times, dim, paths))
    } else if dir.join(DATASET_META).exists() {
        let (data, _) = load_dataset(dir)?;
        Ok((data.times().to_vec(), data.dim(), raw_rows(&data)))
    } else {
        Err(CliError::Io(format!("{} holds neither a report nor a dataset", dir.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub report: PathBuf,
    pub against: PathBuf,
    pub w1_mean: f64,
    pub w1_max: f64,
    pub final_modes_predicted: usize,
    pub final_modes_data: usize,
    pub n_stochastic: usize,
}

fn kde_grid(a: &[f64], b: &[f64], points: usize) -> Option<(Vec<f64>, f64, f64)> {
    let ha = scott_bandwidth(a);
    let hb = scott_bandwidth(b);
    if !(ha > 0.0) || !(hb > 0.0) {
        return None;
    }
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min) - 3.0 * ha.max(hb);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * ha.max(hb);
    let grid = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    Some((grid, ha, hb))
}

fn count_modes(density: &[f64]) -> usize {
    let peak = density.iter().cloned().fold(0.0, f64::max);
    local_maxima(density).into_iter().filter(|&i| density[i] > 0.05 * peak).count()
}

pub fn eval_cmd(report: &Path, against: &Path, out: Option<&Path>, kde_points: usize, kde_times: &[usize]) -> Result<PathBuf, CliError> {
    let (times, dim, preds) = load_paths(report)?;
    let (times_d, dim_d, data) = load_paths(against)?;
    if times.len() != times_d.len() || dim != dim_d || times.iter().zip(&times_d).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + a.abs())) {
        return Err(CliError::Config(format!(
            "time grids differ: {} has {} points x {dim}, {} has {} points x {dim_d}",
            report.display(),
            times.len(),
            against.display(),
            times_d.len()
        )));
    }
    let dir = out.map_or_else(|| report.join("eval"), Path::to_path_buf);
    let n_t = times.len();
    let w1 = w1_by_time(&preds, &data, n_t, dim)?;
    w1_table(&times, &w1).save(&dir.join("w1.csv"))?;

    let selected: Vec<usize> = if kde_times.is_empty() {
        let mut v = vec![0, n_t / 2, n_t - 1];
        v.dedup();
        v
    } else {
        kde_times.iter().cloned().filter(|&k| k < n_t).collect()
    };
    let mut kt = Table::new(
        ["time_index", "component", "x", "density_predicted", "density_data"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        2,
    );
    let mut final_modes = (0, 0);
    for &k in &selected {
        for c in 0..dim {
            let a: Vec<f64> = preds.iter().map(|p| p[k * dim + c]).collect();
            let b: Vec<f64> = data.iter().map(|p| p[k * dim + c]).collect();
            let Some((grid, ha, hb)) = kde_grid(&a, &b, kde_points) else {
                continue;
            };
            let da = kde(&a, &grid, ha)?;
            let db = kde(&b, &grid, hb)?;
            if k == n_t - 1 && c == 0 {
                final_modes = (count_modes(&da), count_modes(&db));
            }
            for i in 0..grid.len() {
                kt.push(vec![k as f64, c as f64, grid[i], da[i], db[i]]);
            }
        }
    }
    kt.save(&dir.join("kde.csv"))?;

    let mut n_stochastic = 0;
    let ens_path = report.join("ensemble.csv");
    if ens_path.exists() {
        let ens = Table::load(&ens_path, 1)?;
        let w: Vec<Vec<f64>> = ens.rows.iter().map(|r| r[1..].to_vec()).collect();
        n_stochastic = w.first().map_or(0, Vec::len);
        if n_stochastic > 0 {
            let m = dcor_matrix(&w)?;
            let mut t = Table::new((0..n_stochastic).map(|i| format!("w_{i}")).collect(), 0);
            for row in m {
                t.push(row);
            }
            t.save(&dir.join("dcor.csv"))?;

            let mut t1 = Table::new(vec!["weight_index".into(), "x".into(), "density".into()], 1);
            for i in 0..n_stochastic {
                let col: Vec<f64> = w.iter().map(|s| s[i]).collect();
                if let Some((grid, h, _)) = kde_grid(&col, &col, kde_points) {
                    for (x, d) in grid.iter().zip(kde(&col, &grid, h)?) {
                        t1.push(vec![i as f64, *x, d]);
                    }
                }
            }
            t1.save(&dir.join("weights_1d.csv"))?;

            if n_stochastic >= 2 {
                let c0: Vec<f64> = w.iter().map(|s| s[0]).collect();
                let c1: Vec<f64> = w.iter().map(|s| s[1]).collect();
                let side = kde_points.min(64);
                if let (Some((gx, hx, _)), Some((gy, hy, _))) = (kde_grid(&c0, &c0, side), kde_grid(&c1, &c1, side)) {
                    let pairs: Vec<[f64; 2]> = w.iter().map(|s| [s[0], s[1]]).collect();
                    let d = kde2(&pairs, &gx, &gy, [hx, hy])?;
                    let mut t2 = Table::new(vec!["x".into(), "y".into(), "density".into()], 0);
                    for (i, x) in gx.iter().enumerate() {
                        for (j, y) in gy.iter().enumerate() {
                            t2.push(vec![*x, *y, d[i * gy.len() + j]]);
                        }
                    }
                    t2.save(&dir.join("weights_2d.csv"))?;
                }
            }
        }
    }

    let summary = EvalSummary {
        report: report.to_path_buf(),
        against: against.to_path_buf(),
        w1_mean: mean(&w1),
        w1_max: w1.iter().cloned().fold(0.0, f64::max),
        final_modes_predicted: final_modes.0,
        final_modes_data: final_modes.1,
        n_stochastic,
    };
    write_toml(&dir.join("eval.toml"), &summary)?;
    println!(
        "W1 mean {:.6} max {:.6}; final-time modes predicted {} data {}; wrote {}",
        summary.w1_mean,
        summary.w1_max,
        summary.final_modes_predicted,
        summary.final_modes_data,
        dir.display()
    );
    Ok(dir)
}

pub fn compare_cmd(reports: &[PathBuf], against: &Path, out: &Path) -> Result<PathBuf, CliError> {
    if reports.is_empty() {
        return Err(CliError::Config("compare needs at least one report".into()));
    }
    let (times_d, dim_d, data) = load_paths(against)?;
    let mut lines = vec!["report,method,variant,n_stochastic,w1_mean,w1_final,mean_0,std_0,mean_1,std_1,rho".to_string()];
    println!(
        "{:<32} {:>9} {:>10} {:>6} {:>10} {:>10}",
        "report", "method", "variant", "|w_s|", "W1 mean", "W1 final"
    );
    for rep in reports {
        let meta: ReportMeta = read_toml(&rep.join(REPORT_META))?;
        let (times, dim, preds) = load_paths(rep)?;
        if times.len() != times_d.len() || dim != dim_d {
            return Err(CliError::Config(format!("{}: time grid differs from {}", rep.display(), against.display())));
        }
        let w1 = w1_by_time(&preds, &data, times.len(), dim)?;
        let ens = Table::load(&rep.join("ensemble.csv"), 1)?;
        let w: Vec<Vec<f64>> = ens.rows.iter().map(|r| r[1..].to_vec()).collect();
        let ws = WeightSummary::of(&w);
        let get = |v: &[f64], i: usize| v.get(i).map_or(String::new(), |x| crate::io::fmt_f64(*x));
        let variant = meta.variant.map_or("-", Variant::name);
        lines.push(format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            rep.display(),
            meta.method,
            variant,
            meta.stochastic.len(),
            crate::io::fmt_f64(mean(&w1)),
            crate::io::fmt_f64(*w1.last().unwrap_or(&0.0)),
            get(&ws.mean, 0),
            get(&ws.std, 0),
            get(&ws.mean, 1),
            get(&ws.std, 1),
            ws.pair.map_or(String::new(), |p| crate::io::fmt_f64(p.rho)),
        ));
        println!(
            "{:<32} {:>9} {:>10} {:>6} {:>10.5} {:>10.5}",
            rep.display().to_string(),
            meta.method,
            variant,
            meta.stochastic.len(),
            mean(&w1),
            w1.last().unwrap_or(&0.0)
        );
    }
    let path = out.join("compare.csv");
    crate::io::write_atomic(&path, (lines.join("\n") + "\n").as_bytes())?;
    Ok(path)
}
