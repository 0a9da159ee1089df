use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use deepdof::categorical::total_deviance;
use deepdof::datagen::{self, Dataset, GeneratorSpec};
use deepdof::dof::{estimate_dof_with_baseline, measured_optimism, CrnContext, PerturbationKind};
use deepdof::estimators::{
    DeepNetClassifier, IdentityEstimator, MeanEstimator, MlrClassifier, ModelConfig, SoftLabelClassifier,
};
use deepdof::harness::{self, ExperimentReport, RegFactor, ReportRow, SweepSpec};
use deepdof::net::TrainConfig;
use deepdof::{Error, Result};

#[derive(Parser)]
#[command(name = "deepdof", version, about = "Degrees of freedom of multi-class classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = deepdof::dof::DEFAULT_EPSILON)]
    eps: f64,
    /// Perturbed copies per df estimate (command default if omitted).
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Perturbation::Gaussian)]
    perturbation: Perturbation,
}

impl Shared {
    fn replicates(&self, default: usize) -> usize {
        self.replicates.unwrap_or(default)
    }

    fn crn(&self, default_replicates: usize) -> CrnContext {
        let mut ctx = harness::shared_crn(self.seed, self.replicates(default_replicates), self.eps);
        ctx.perturbation = self.perturbation.into();
        ctx
    }
}

#[derive(ValueEnum, Clone, Copy)]
enum Perturbation {
    Gaussian,
    Rademacher,
}

impl From<Perturbation> for PerturbationKind {
    fn from(p: Perturbation) -> Self {
        match p {
            Perturbation::Gaussian => PerturbationKind::Gaussian,
            Perturbation::Rademacher => PerturbationKind::Rademacher,
        }
    }
}

#[derive(Args, Clone)]
struct ModelFlags {
    #[arg(long, default_value_t = 20)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    corruption: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
}

impl ModelFlags {
    fn train(&self) -> TrainConfig {
        let mut t = harness::desk_train_config();
        if let Some(v) = self.lr {
            t.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.dropout {
            t.dropout_rate = v;
        }
        if let Some(v) = self.corruption {
            t.corruption_rate = v;
        }
        if let Some(v) = self.weight_decay {
            t.weight_decay_rate = v;
        }
        if let Some(v) = self.pretrain_epochs {
            t.pretrain_epochs = v;
        }
        t
    }

    fn config(&self) -> ModelConfig {
        ModelConfig::uniform(self.width, self.depth, self.train())
    }
}

/// Where the training data comes from; synthetic deep-generator data by default.
#[derive(Args, Clone)]
struct DataFlags {
    /// Dataset CSV (`x1..xp,label`).
    #[arg(long, conflicts_with_all = ["mnist_images", "cifar"])]
    data: Option<PathBuf>,
    /// Number of classes for `--data` (default: largest label).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, requires = "mnist_labels")]
    mnist_images: Option<PathBuf>,
    #[arg(long, requires = "mnist_images")]
    mnist_labels: Option<PathBuf>,
    /// CIFAR-10 binary batch files.
    #[arg(long, num_args = 1..)]
    cifar: Vec<PathBuf>,
    /// Keep only the first N samples of a loaded dataset.
    #[arg(long)]
    limit: Option<usize>,
    /// Synthetic sample size.
    #[arg(long, default_value_t = 1000)]
    n: usize,
}

impl DataFlags {
    fn load(&self, seed: u64) -> Result<Dataset> {
        if let Some(path) = &self.data {
            let mut d = datagen::dataset_from_csv(&std::fs::read(path)?, self.k)?;
            if let Some(l) = self.limit {
                let rows: Vec<usize> = (0..l.min(d.n())).collect();
                d = d.select_rows(&rows);
            }
            return Ok(d);
        }
        if let (Some(images), Some(labels)) = (&self.mnist_images, &self.mnist_labels) {
            return datagen::load_mnist_idx(images, labels, self.limit);
        }
        if !self.cifar.is_empty() {
            return datagen::load_cifar10(&self.cifar, self.limit);
        }
        datagen::gen_deepnet(&GeneratorSpec::deepnet(self.n, seed))
    }
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum Factor {
    WeightDecay,
    Dropout,
    Corruption,
    All,
}

#[derive(ValueEnum, Clone, Copy)]
enum ModelKind {
    Deepnet,
    Mlr,
    Mean,
    Identity,
}

#[derive(Subcommand)]
enum Command {
    /// Linear-argmax dataset.
    GenMlr {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        p: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Random-network dataset with a test split of equal size.
    GenDeep {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, default_value_t = 5000)]
        n: usize,
    },
    /// XOR table with soft targets.
    GenXor {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, default_value_t = 100)]
        replicas: usize,
        #[arg(long, default_value_t = 0.9)]
        target_soft: f64,
    },
    /// Nested logistic regressions: df against parameter count and optimism.
    ValidateMlr {
        #[command(flatten)]
        shared: Shared,
    },
    /// df of the 2-2-1 XOR network.
    Xor {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, default_value_t = 100)]
        replicas: usize,
    },
    /// df over a width × depth grid.
    SweepStructure {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 30])]
        widths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
        depths: Vec<usize>,
    },
    /// df over regularisation grids, one factor at a time.
    SweepReg {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long, value_enum, default_value_t = Factor::All)]
        factor: Factor,
        /// Points on the weight-decay log grid over [1e-6, 1e-3].
        #[arg(long, default_value_t = 6)]
        points: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.3, 0.6, 0.9])]
        rates: Vec<f64>,
    },
    /// DoFAIC and naive AIC against cross-validation over a structure grid.
    ModelSelect {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 30])]
        widths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
        depths: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// df of a single model.
    Dof {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long, value_enum, default_value_t = ModelKind::Deepnet)]
        kind: ModelKind,
    },
    /// K-fold cross-validated deviance of a single model.
    Cv {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long, value_enum, default_value_t = ModelKind::Deepnet)]
        kind: ModelKind,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
}

fn fitter(kind: ModelKind, model: &ModelFlags) -> Box<dyn SoftLabelClassifier> {
    match kind {
        ModelKind::Deepnet => Box::new(DeepNetClassifier::new(model.config())),
        ModelKind::Mlr => Box::new(MlrClassifier::default()),
        ModelKind::Mean => Box::new(MeanEstimator),
        ModelKind::Identity => Box::new(IdentityEstimator),
    }
}

fn model_row(kind: ModelKind, model: &ModelFlags, param_count: usize, ctx: &CrnContext) -> ReportRow {
    let config = model.config();
    let id = match kind {
        ModelKind::Deepnet => harness::model_id(&config),
        ModelKind::Mlr => "mlr".into(),
        ModelKind::Mean => "mean".into(),
        ModelKind::Identity => "identity".into(),
    };
    let mut row = ReportRow::new(id, param_count, ctx.epsilon, ctx.replicates);
    if matches!(kind, ModelKind::Deepnet) {
        row.width = config.width();
        row.depth = config.depth();
        row.dropout = config.train.dropout_rate;
        row.corruption = config.train.corruption_rate;
        row.weight_decay = config.train.weight_decay_rate;
    }
    row
}

fn write_generated(shared: &Shared, stem: &str, data: &Dataset, spec: GeneratorSpec) -> Result<()> {
    let manifest = datagen::write_dataset(&shared.out, stem, data, stem, shared.seed, Some(spec))?;
    println!(
        "wrote {} ({} rows, hash {})",
        shared.out.join(format!("{stem}.csv")).display(),
        manifest.n,
        &manifest.generator_hash[..16]
    );
    Ok(())
}

fn finish(report: &ExperimentReport, out: &Path) -> Result<()> {
    report.write(out)?;
    println!("wrote {} ({} rows)", out.join("report.csv").display(), report.rows.len());
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenMlr { shared, n, p, k } => {
            let data = datagen::gen_mlr(n, p, k, shared.seed)?;
            write_generated(&shared, "mlr", &data, GeneratorSpec::mlr(n, p, k, shared.seed))
        }
        Command::GenDeep { shared, n } => {
            let spec = GeneratorSpec::deepnet(n, shared.seed);
            let data = datagen::gen_deepnet(&spec)?;
            write_generated(&shared, "deep", &data, spec)
        }
        Command::GenXor {
            shared,
            replicas,
            target_soft,
        } => {
            let data = datagen::gen_xor(replicas, target_soft)?;
            write_generated(&shared, "xor", &data.dataset, GeneratorSpec::xor(replicas, target_soft))
        }
        Command::ValidateMlr { shared } => {
            let defaults = harness::MlrValidationConfig::default();
            let cfg = harness::MlrValidationConfig {
                seed: shared.seed,
                replicates: shared.replicates(defaults.replicates),
                epsilon: shared.eps,
                workers: shared.workers,
                ..defaults
            };
            finish(&harness::run_mlr_validation(&cfg)?, &shared.out)
        }
        Command::Xor { shared, replicas } => {
            let defaults = harness::XorConfig::default();
            let cfg = harness::XorConfig {
                replicas,
                seed: shared.seed,
                replicates: shared.replicates(defaults.replicates),
                epsilon: shared.eps,
                workers: shared.workers,
                ..defaults
            };
            finish(&harness::run_xor(&cfg)?, &shared.out)
        }
        Command::SweepStructure {
            shared,
            model,
            data,
            widths,
            depths,
        } => {
            let dataset = data.load(shared.seed)?;
            let configs = harness::structure_grid(&widths, &depths, &model.train());
            let mut spec = SweepSpec::new(dataset, configs, shared.crn(1));
            spec.workers = shared.workers;
            finish(&harness::run_structure_sweep(&spec)?, &shared.out)
        }
        Command::SweepReg {
            shared,
            model,
            data,
            factor,
            points,
            rates,
        } => {
            let dataset = data.load(shared.seed)?;
            let base = model.config();
            let mut grids = Vec::new();
            if matches!(factor, Factor::WeightDecay | Factor::All) {
                grids.push((RegFactor::WeightDecay, harness::log_grid(1e-6, 1e-3, points)));
            }
            if matches!(factor, Factor::Dropout | Factor::All) {
                grids.push((RegFactor::Dropout, rates.clone()));
            }
            if matches!(factor, Factor::Corruption | Factor::All) {
                grids.push((RegFactor::Corruption, rates.clone()));
            }
            let configs = harness::regularization_grid(&base, &grids);
            let mut spec = SweepSpec::new(dataset, configs, shared.crn(1));
            spec.workers = shared.workers;
            finish(&harness::run_regularization_sweep(&spec, &base)?, &shared.out)
        }
        Command::ModelSelect {
            shared,
            model,
            data,
            widths,
            depths,
            folds,
        } => {
            let dataset = data.load(shared.seed)?;
            let configs = harness::structure_grid(&widths, &depths, &model.train());
            let mut spec = SweepSpec::new(dataset, configs, shared.crn(1));
            spec.workers = shared.workers;
            spec.cv_folds = Some(folds);
            spec.fold_seed = harness::fold_seed(shared.seed);
            let (report, _) = harness::run_model_selection(&spec)?;
            finish(&report, &shared.out)
        }
        Command::Dof {
            shared,
            model,
            data,
            kind,
        } => {
            let start = Instant::now();
            let dataset = data.load(shared.seed)?;
            let obs = dataset.observations();
            let ctx = shared.crn(1).with_workers(shared.workers);
            let fit = fitter(kind, &model);
            let run = estimate_dof_with_baseline(fit.as_ref(), dataset.x.view(), &obs, &ctx)?;
            let dev = total_deviance(&obs, &run.baseline.train_probabilities())?;
            let mut row = model_row(kind, &model, run.baseline.param_count(), &ctx).with_estimate(&run.estimate, dev);
            if let Some(test) = &dataset.test {
                row.optimism = Some(measured_optimism(
                    run.baseline.as_ref(),
                    test.x.view(),
                    &test.observations(),
                    dev,
                    dataset.n(),
                )?);
            }
            let mut report = ExperimentReport::new("dof", ctx.epsilon, ctx.replicates)
                .seed("data", shared.seed)
                .seed("model", ctx.model_seed)
                .seed("perturbation", ctx.perturbation_seed);
            report.rows.push(row);
            report.set_summary("per_replicate", &run.estimate.per_replicate);
            report.set_summary("warnings", run.baseline.warnings());
            report.flags = serde_json::json!({ "n": dataset.n(), "p": dataset.p(), "k": dataset.k, "model": model.config() });
            report.wall_time_secs = start.elapsed().as_secs_f64();
            finish(&report, &shared.out)
        }
        Command::Cv {
            shared,
            model,
            data,
            kind,
            folds,
        } => {
            let start = Instant::now();
            let dataset = data.load(shared.seed)?;
            let obs = dataset.observations();
            let ctx = shared.crn(1);
            let fit = fitter(kind, &model);
            let fold_seed = harness::fold_seed(shared.seed);
            let cv = harness::cross_validate(fit.as_ref(), dataset.x.view(), &obs, folds, fold_seed, ctx.model_seed)?;
            let full = fit.fit(dataset.x.view(), &obs, ctx.model_seed)?;
            let mut row = model_row(kind, &model, full.param_count(), &ctx);
            row.train_deviance = Some(total_deviance(&obs, &full.train_probabilities())?);
            row.cv_mean_deviance = Some(cv.total_deviance);
            let mut report = ExperimentReport::new("cv", ctx.epsilon, 0)
                .seed("data", shared.seed)
                .seed("model", ctx.model_seed)
                .seed("folds", fold_seed);
            report.rows.push(row);
            report.set_summary("fold_deviances", &cv.fold_deviances);
            report.set_summary("fold_sizes", &cv.fold_sizes);
            report.wall_time_secs = start.elapsed().as_secs_f64();
            finish(&report, &shared.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
