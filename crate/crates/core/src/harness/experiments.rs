use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::cross_validate;
use super::report::{ExperimentReport, ReportRow};
use super::stats::{argmin, pearson, spearman};
use crate::categorical::{total_deviance, ObservationMatrix};
use crate::datagen::{gen_xor, Dataset, MlrGenerator};
use crate::dof::{estimate_dof_on_current_pool, measured_optimism, CrnContext, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::estimators::{DeepNetClassifier, FittedModel, FullBatchNetClassifier, MlrClassifier, ModelConfig};
use crate::net::{Head, TrainConfig};

/// Independent 64-bit seed for a named role, derived from an experiment seed.
pub fn derive_seed(seed: u64, role: u64) -> u64 {
    let mut z = seed ^ role.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const MODEL_ROLE: u64 = 1;
const PERTURBATION_ROLE: u64 = 2;
const FOLD_ROLE: u64 = 3;

/// Model and perturbation seeds shared by every model of an experiment.
pub fn shared_crn(seed: u64, replicates: usize, epsilon: f64) -> CrnContext {
    CrnContext::new(derive_seed(seed, MODEL_ROLE), derive_seed(seed, PERTURBATION_ROLE))
        .with_replicates(replicates)
        .with_epsilon(epsilon)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::Config("worker cap must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn train_deviance(model: &dyn FittedModel, obs: &ObservationMatrix) -> Result<f64> {
    total_deviance(obs, &model.train_probabilities())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrValidationConfig {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub n_test: usize,
    /// Model `i` (1-based) uses the first `i · feature_step` features.
    pub feature_step: usize,
    pub models: usize,
    pub replicates: usize,
    pub epsilon: f64,
    pub workers: usize,
    pub mlr: MlrClassifier,
}

impl Default for MlrValidationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 100,
            p: 20,
            k: 4,
            n_test: 1000,
            feature_step: 2,
            models: 5,
            replicates: 5,
            epsilon: DEFAULT_EPSILON,
            workers: 1,
            mlr: MlrClassifier::default(),
        }
    }
}

/// Nested multinomial logistic regressions on the linear-argmax design:
/// df against parameter count, and measured optimism on fresh test data.
pub fn run_mlr_validation(cfg: &MlrValidationConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    if cfg.feature_step == 0 || cfg.models == 0 || cfg.models * cfg.feature_step > cfg.p {
        return Err(Error::Config(format!(
            "{} models of {} features each do not fit in {} features",
            cfg.models, cfg.feature_step, cfg.p
        )));
    }
    let generator = MlrGenerator::new(cfg.p, cfg.k, cfg.seed)?;
    let train = generator.sample(cfg.n, 0)?;
    let test = generator.sample(cfg.n_test, 1)?;
    let (obs, obs_test) = (train.observations(), test.observations());
    let ctx = shared_crn(cfg.seed, cfg.replicates, cfg.epsilon);
    let feature_counts: Vec<usize> = (1..=cfg.models).map(|i| i * cfg.feature_step).collect();

    let rows = pool(cfg.workers)?.install(|| {
        feature_counts
            .par_iter()
            .map(|&p_used| -> Result<(ReportRow, Vec<String>)> {
                let x = train.leading_features(p_used);
                let run = estimate_dof_on_current_pool(&cfg.mlr, x, &obs, &ctx)?;
                let dev = train_deviance(run.baseline.as_ref(), &obs)?;
                let optimism = measured_optimism(run.baseline.as_ref(), test.leading_features(p_used), &obs_test, dev, cfg.n)?;
                let mut row = ReportRow::new(format!("mlr-p{p_used}"), (p_used + 1) * (cfg.k - 1), ctx.epsilon, ctx.replicates)
                    .with_estimate(&run.estimate, dev);
                row.optimism = Some(optimism);
                let warnings: Vec<String> = run.baseline.warnings().into_iter().map(|w| format!("p{p_used}: {w}")).collect();
                Ok((row, warnings))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (rows, warnings): (Vec<ReportRow>, Vec<Vec<String>>) = rows.into_iter().unzip();

    let mut report = ExperimentReport::new("validate-mlr", ctx.epsilon, ctx.replicates)
        .seed("data", cfg.seed)
        .seed("model", ctx.model_seed)
        .seed("perturbation", ctx.perturbation_seed);
    report.rows = rows;
    let df: Vec<f64> = report.rows.iter().map(|r| r.df.unwrap()).collect();
    let opt: Vec<f64> = report.rows.iter().map(|r| r.optimism.unwrap()).collect();
    let rel: Vec<f64> = report
        .rows
        .iter()
        .map(|r| (r.df.unwrap() - r.param_count as f64).abs() / r.param_count as f64)
        .collect();
    report.set_summary("max_relative_df_error", rel.iter().copied().fold(0.0, f64::max));
    report.set_summary("relative_df_errors", &rel);
    report.set_summary("optimism_df_pearson", pearson(&opt, &df).ok());
    report.set_summary("warnings", warnings.concat());
    report.flags = serde_json::to_value(cfg)?;
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XorConfig {
    pub replicas: usize,
    pub seed: u64,
    pub target_soft: f64,
    pub replicates: usize,
    pub epsilon: f64,
    pub workers: usize,
    pub fitter: FullBatchNetClassifier,
    /// Fresh initialisations tried until all four patterns are classified.
    pub max_restarts: usize,
}

impl Default for XorConfig {
    fn default() -> Self {
        Self {
            replicas: 100,
            seed: 0,
            target_soft: 0.9,
            replicates: 200,
            epsilon: DEFAULT_EPSILON,
            workers: 1,
            fitter: FullBatchNetClassifier {
                hidden: vec![2],
                head: Head::Reference,
                learning_rate: 2.0,
                max_iter: 20_000,
                grad_tol: 1e-6,
            },
            max_restarts: 10,
        }
    }
}

/// Trains the 2-2-1 sigmoid network on soft XOR targets and estimates df.
pub fn run_xor(cfg: &XorConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let data = gen_xor(cfg.replicas, cfg.target_soft)?;
    let x = &data.dataset.x;
    let obs = &data.soft_targets;
    let patterns = x.slice(ndarray::s![0..4, ..]);
    let truth = [false, true, true, false];

    let mut chosen = None;
    for attempt in 0..cfg.max_restarts.max(1) {
        let model_seed = derive_seed(cfg.seed, MODEL_ROLE + 100 * attempt as u64);
        let model = cfg.fitter.fit_model(x.view(), obs, model_seed)?;
        let class1 = model.predict(patterns)?;
        if (0..4).all(|i| (class1.data()[[i, 0]] > 0.5) == truth[i]) {
            chosen = Some((attempt, model_seed));
            break;
        }
    }
    let (attempt, model_seed) = chosen.ok_or_else(|| Error::Training {
        epoch: cfg.fitter.max_iter,
        layer: 0,
        reason: format!("no initialisation in {} tries solved XOR", cfg.max_restarts),
    })?;

    let mut ctx = shared_crn(cfg.seed, cfg.replicates, cfg.epsilon);
    ctx.model_seed = model_seed;
    let run = pool(cfg.workers)?.install(|| estimate_dof_on_current_pool(&cfg.fitter, x.view(), obs, &ctx))?;
    let dev = train_deviance(run.baseline.as_ref(), obs)?;
    let mut row = ReportRow::new(format!("xor-r{}", cfg.replicas), run.baseline.param_count(), ctx.epsilon, ctx.replicates)
        .with_estimate(&run.estimate, dev);
    row.width = 2;
    row.depth = 1;
    let fitted = run.baseline.predict(patterns)?;

    let mut report = ExperimentReport::new("xor", ctx.epsilon, ctx.replicates)
        .seed("experiment", cfg.seed)
        .seed("model", model_seed)
        .seed("perturbation", ctx.perturbation_seed);
    report.rows.push(row);
    report.set_summary("restarts", attempt);
    report.set_summary("pattern_class1_probabilities", fitted.data().column(0).to_vec());
    report.set_summary("all_patterns_correct", true);
    report.set_summary("warnings", run.baseline.warnings());
    report.flags = serde_json::to_value(cfg)?;
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub dataset: Dataset,
    pub configs: Vec<ModelConfig>,
    pub crn: CrnContext,
    pub workers: usize,
    /// Also cross-validate every model with this many folds.
    pub cv_folds: Option<usize>,
    pub fold_seed: u64,
}

impl SweepSpec {
    pub fn new(dataset: Dataset, configs: Vec<ModelConfig>, crn: CrnContext) -> Self {
        Self {
            dataset,
            configs,
            crn,
            workers: 1,
            cv_folds: None,
            fold_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        for c in &self.configs {
            c.architecture(self.dataset.p(), self.dataset.k).validate()?;
            c.train.validate()?;
        }
        self.crn.validate()
    }
}

pub fn model_id(config: &ModelConfig) -> String {
    let t = &config.train;
    format!(
        "{}-do{}-co{}-wd{:e}",
        config.label(),
        t.dropout_rate,
        t.corruption_rate,
        t.weight_decay_rate
    )
}

fn sweep_row(spec: &SweepSpec, config: &ModelConfig) -> ReportRow {
    let data = &spec.dataset;
    let obs = data.observations();
    let arch = config.architecture(data.p(), data.k);
    let mut row = ReportRow::new(model_id(config), arch.param_count(), spec.crn.epsilon, spec.crn.replicates);
    row.width = config.width();
    row.depth = config.depth();
    row.dropout = config.train.dropout_rate;
    row.corruption = config.train.corruption_rate;
    row.weight_decay = config.train.weight_decay_rate;
    let fitter = DeepNetClassifier::new(config.clone());
    let result = (|| -> Result<ReportRow> {
        let run = estimate_dof_on_current_pool(&fitter, data.x.view(), &obs, &spec.crn)?;
        let dev = train_deviance(run.baseline.as_ref(), &obs)?;
        let mut row = row.clone().with_estimate(&run.estimate, dev);
        if let Some(test) = &data.test {
            row.optimism = Some(measured_optimism(
                run.baseline.as_ref(),
                test.x.view(),
                &test.observations(),
                dev,
                data.n(),
            )?);
        }
        if let Some(folds) = spec.cv_folds {
            let cv = cross_validate(&fitter, data.x.view(), &obs, folds, spec.fold_seed, spec.crn.model_seed)?;
            row.cv_mean_deviance = Some(cv.total_deviance);
        }
        Ok(row)
    })();
    result.unwrap_or_else(|e| row.failed(e))
}

/// One df estimate per model configuration. A failing model becomes a row
/// with its error recorded; the rest of the grid still runs.
pub fn run_sweep(name: &str, spec: &SweepSpec) -> Result<ExperimentReport> {
    let start = Instant::now();
    spec.validate()?;
    let rows = pool(spec.workers)?.install(|| spec.configs.par_iter().map(|c| sweep_row(spec, c)).collect::<Vec<_>>());
    let mut report = ExperimentReport::new(name, spec.crn.epsilon, spec.crn.replicates)
        .seed("model", spec.crn.model_seed)
        .seed("perturbation", spec.crn.perturbation_seed);
    if spec.cv_folds.is_some() {
        report = report.seed("folds", spec.fold_seed);
    }
    report.rows = rows;
    report.flags = serde_json::json!({
        "n": spec.dataset.n(),
        "p": spec.dataset.p(),
        "k": spec.dataset.k,
        "configs": spec.configs,
        "cv_folds": spec.cv_folds,
        "workers": spec.workers,
        "perturbation": spec.crn.perturbation,
    });
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Desk-scale training schedule for the synthetic sweeps. Short and gentle:
/// the fit stays a smooth function of the labels, which keeps single-copy
/// divided differences stable.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.02,
        epochs: 50,
        ..TrainConfig::default()
    }
}

pub fn structure_grid(widths: &[usize], depths: &[usize], train: &TrainConfig) -> Vec<ModelConfig> {
    depths
        .iter()
        .flat_map(|&d| widths.iter().map(move |&w| ModelConfig::uniform(w, d, train.clone())))
        .collect()
}

/// A deeper model compared against a shallower depth's df curve, linearly
/// interpolated at the deeper model's parameter count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub deeper: String,
    pub deeper_depth: usize,
    pub shallower_depth: usize,
    pub param_count: usize,
    pub deeper_df: f64,
    pub shallower_df: f64,
}

impl MatchedPair {
    pub fn deeper_is_lower(&self) -> bool {
        self.deeper_df < self.shallower_df
    }
}

pub fn matched_pairs(rows: &[ReportRow]) -> Vec<MatchedPair> {
    let ok: Vec<&ReportRow> = rows.iter().filter(|r| r.is_ok() && r.df.is_some()).collect();
    let mut depths: Vec<usize> = ok.iter().map(|r| r.depth).collect();
    depths.sort_unstable();
    depths.dedup();
    let mut pairs = Vec::new();
    for &shallow in &depths {
        let mut curve: Vec<(f64, f64)> = ok
            .iter()
            .filter(|r| r.depth == shallow)
            .map(|r| (r.param_count as f64, r.df.unwrap()))
            .collect();
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        if curve.len() < 2 {
            continue;
        }
        for r in ok.iter().filter(|r| r.depth > shallow) {
            let q = r.param_count as f64;
            let Some(seg) = curve.windows(2).find(|w| w[0].0 <= q && q <= w[1].0) else {
                continue;
            };
            let (a, b) = (seg[0], seg[1]);
            let t = if b.0 > a.0 { (q - a.0) / (b.0 - a.0) } else { 0.0 };
            pairs.push(MatchedPair {
                deeper: r.model_id.clone(),
                deeper_depth: r.depth,
                shallower_depth: shallow,
                param_count: r.param_count,
                deeper_df: r.df.unwrap(),
                shallower_df: a.1 + t * (b.1 - a.1),
            });
        }
    }
    pairs
}

/// Spearman of df against width, per depth (depths with < 2 widths skipped).
pub fn width_trends(rows: &[ReportRow]) -> Vec<(usize, Option<f64>)> {
    let mut depths: Vec<usize> = rows.iter().map(|r| r.depth).collect();
    depths.sort_unstable();
    depths.dedup();
    depths
        .into_iter()
        .filter_map(|d| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.depth == d && r.is_ok())
                .filter_map(|r| r.df.map(|df| (r.width as f64, df)))
                .collect();
            if pts.len() < 2 {
                return None;
            }
            let (w, df): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            Some((d, spearman(&w, &df).ok()))
        })
        .collect()
}

pub fn run_structure_sweep(spec: &SweepSpec) -> Result<ExperimentReport> {
    let mut report = run_sweep("sweep-structure", spec)?;
    let below = report
        .ok_rows()
        .filter(|r| r.depth >= 1)
        .all(|r| r.df.is_some_and(|df| df < r.param_count as f64));
    let pairs = matched_pairs(&report.rows);
    report.set_summary("df_below_param_count", below);
    report.set_summary("width_spearman_by_depth", width_trends(&report.rows));
    report.set_summary("matched_pairs_deeper_lower", pairs.iter().filter(|p| p.deeper_is_lower()).count());
    report.set_summary("matched_pairs", pairs);
    Ok(report)
}

/// The factor a regularisation grid varies; the others stay at the base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegFactor {
    WeightDecay,
    Dropout,
    Corruption,
}

impl RegFactor {
    pub fn value(self, t: &TrainConfig) -> f64 {
        match self {
            RegFactor::WeightDecay => t.weight_decay_rate,
            RegFactor::Dropout => t.dropout_rate,
            RegFactor::Corruption => t.corruption_rate,
        }
    }

    fn set(self, t: &mut TrainConfig, v: f64) {
        match self {
            RegFactor::WeightDecay => t.weight_decay_rate = v,
            RegFactor::Dropout => t.dropout_rate = v,
            RegFactor::Corruption => t.corruption_rate = v,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegFactor::WeightDecay => "weight_decay",
            RegFactor::Dropout => "dropout",
            RegFactor::Corruption => "corruption",
        }
    }
}

/// `points` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..points)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64))
        .collect()
}

pub fn regularization_grid(base: &ModelConfig, grids: &[(RegFactor, Vec<f64>)]) -> Vec<ModelConfig> {
    grids
        .iter()
        .flat_map(|(factor, values)| {
            values.iter().map(move |&v| {
                let mut c = base.clone();
                factor.set(&mut c.train, v);
                c
            })
        })
        .collect()
}

/// df over regularisation grids, one factor at a time. Summaries give the
/// Spearman correlation and df range per factor (rows whose other factors
/// sit at the base values).
pub fn run_regularization_sweep(spec: &SweepSpec, base: &ModelConfig) -> Result<ExperimentReport> {
    let mut report = run_sweep("sweep-reg", spec)?;
    for factor in [RegFactor::WeightDecay, RegFactor::Dropout, RegFactor::Corruption] {
        let others: Vec<RegFactor> = [RegFactor::WeightDecay, RegFactor::Dropout, RegFactor::Corruption]
            .into_iter()
            .filter(|f| *f != factor)
            .collect();
        let mut pts: Vec<(f64, f64)> = report
            .ok_rows()
            .filter(|r| {
                others.iter().all(|o| {
                    let v = match o {
                        RegFactor::WeightDecay => r.weight_decay,
                        RegFactor::Dropout => r.dropout,
                        RegFactor::Corruption => r.corruption,
                    };
                    v == o.value(&base.train)
                })
            })
            .filter_map(|r| {
                let v = match factor {
                    RegFactor::WeightDecay => r.weight_decay,
                    RegFactor::Dropout => r.dropout,
                    RegFactor::Corruption => r.corruption,
                };
                r.df.map(|df| (v, df))
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        if pts.len() < 2 {
            continue;
        }
        let (v, df): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let range = df.iter().copied().fold(f64::NEG_INFINITY, f64::max) - df.iter().copied().fold(f64::INFINITY, f64::min);
        report.set_summary(&format!("{}_spearman", factor.name()), spearman(&v, &df).ok());
        report.set_summary(&format!("{}_df_range", factor.name()), range);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub dofaic_rho: f64,
    pub naive_rho: f64,
    pub dofaic_argmin: String,
    pub naive_argmin: String,
    pub cv_argmin: String,
}

/// Ranks models by DoFAIC and naive AIC against cross-validated deviance.
pub fn run_model_selection(spec: &SweepSpec) -> Result<(ExperimentReport, SelectionSummary)> {
    if spec.configs.len() < 5 {
        return Err(Error::Config(format!("model selection needs at least 5 models, got {}", spec.configs.len())));
    }
    let mut spec = spec.clone();
    spec.cv_folds.get_or_insert(5);
    let mut report = run_sweep("model-select", &spec)?;
    let ok: Vec<&ReportRow> = report.ok_rows().filter(|r| r.cv_mean_deviance.is_some()).collect();
    if ok.len() < 2 {
        return Err(Error::Estimate {
            model: "model-select".into(),
            replicate: 0,
            reason: "fewer than two models completed".into(),
        });
    }
    let cv: Vec<f64> = ok.iter().map(|r| r.cv_mean_deviance.unwrap()).collect();
    let da: Vec<f64> = ok.iter().map(|r| r.dofaic.unwrap()).collect();
    let na: Vec<f64> = ok.iter().map(|r| r.naive_aic.unwrap()).collect();
    let name = |v: &[f64]| ok[argmin(v).expect("non-empty")].model_id.clone();
    let summary = SelectionSummary {
        dofaic_rho: spearman(&da, &cv)?,
        naive_rho: spearman(&na, &cv)?,
        dofaic_argmin: name(&da),
        naive_argmin: name(&na),
        cv_argmin: name(&cv),
    };
    for (k, v) in serde_json::to_value(&summary)?.as_object().expect("struct").iter() {
        report.summary.insert(k.clone(), v.clone());
    }
    Ok((report, summary))
}

/// Per-replicate df variance with shared versus independent model seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrnComparison {
    pub shared_variance: f64,
    pub independent_variance: f64,
}

pub fn crn_comparison(dataset: &Dataset, config: &ModelConfig, seed: u64, replicates: usize, workers: usize) -> Result<CrnComparison> {
    let fitter = DeepNetClassifier::new(config.clone());
    let obs = dataset.observations();
    let shared = shared_crn(seed, replicates, DEFAULT_EPSILON);
    let mut independent = shared.clone();
    independent.shared_model_seed = false;
    let pool = pool(workers)?;
    let a = pool.install(|| estimate_dof_on_current_pool(&fitter, dataset.x.view(), &obs, &shared))?;
    let b = pool.install(|| estimate_dof_on_current_pool(&fitter, dataset.x.view(), &obs, &independent))?;
    Ok(CrnComparison {
        shared_variance: a.estimate.replicate_variance(),
        independent_variance: b.estimate.replicate_variance(),
    })
}

/// Seeds for the folds of an experiment seed.
pub fn fold_seed(seed: u64) -> u64 {
    derive_seed(seed, FOLD_ROLE)
}
