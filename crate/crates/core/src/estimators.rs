//! Fitting procedures whose degrees of freedom we measure.
//!
//! A [`SoftLabelClassifier`] maps `(X, P, seed)` to a [`FittedModel`]. The
//! degrees-of-freedom engine only ever looks at
//! [`FittedModel::fitted_sufficient`], the raw `n × (k−1)` fitted values on
//! the training rows; clamping into valid probabilities happens only when a
//! deviance is evaluated.
//!
//! Besides multinomial logistic regression and deep sigmoid networks this
//! module has three closed-form estimators with known df, used as oracles:
//! the column mean (`k−1`), the identity / saturated model (`n(k−1)`), and a
//! fixed linear smoother `S` (`(k−1)·tr S`).

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::categorical::{ObservationMatrix, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::net::{self, Architecture, DescentOutcome, Head, Network, TrainConfig};
use crate::rng::RngStream;

pub trait FittedModel: Send + Sync {
    /// `L(P)`: raw first `k−1` fitted columns on the training rows.
    fn fitted_sufficient(&self) -> &Array2<f64>;

    /// Valid probabilities on the training rows.
    fn train_probabilities(&self) -> ProbabilityMatrix {
        ProbabilityMatrix::from_raw_sufficient(self.fitted_sufficient())
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<ProbabilityMatrix>;

    fn param_count(&self) -> usize;

    /// Non-fatal fit diagnostics (e.g. hitting an iteration cap).
    fn warnings(&self) -> Vec<String> {
        Vec::new()
    }
}

pub trait SoftLabelClassifier: Send + Sync {
    fn name(&self) -> String;

    /// Must be a pure function of its arguments.
    fn fit(&self, x: ArrayView2<'_, f64>, obs: &ObservationMatrix, seed: u64) -> Result<Box<dyn FittedModel>>;
}

/// A trained network together with its training-row predictions.
#[derive(Debug, Clone)]
pub struct NetModel {
    pub net: Network,
    fitted: Array2<f64>,
    train_probs: ProbabilityMatrix,
    pub outcome: Option<DescentOutcome>,
}

impl NetModel {
    fn new(net: Network, x: ArrayView2<'_, f64>, outcome: Option<DescentOutcome>) -> Result<Self> {
        let train_probs = net.forward(x)?;
        Ok(Self {
            fitted: train_probs.sufficient(),
            train_probs,
            net,
            outcome,
        })
    }
}

impl FittedModel for NetModel {
    fn fitted_sufficient(&self) -> &Array2<f64> {
        &self.fitted
    }

    fn train_probabilities(&self) -> ProbabilityMatrix {
        self.train_probs.clone()
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<ProbabilityMatrix> {
        self.net.forward(x)
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn warnings(&self) -> Vec<String> {
        match self.outcome {
            Some(o) if !o.converged => vec![format!(
                "gradient descent stopped at the {}-iteration cap with gradient norm {:e}",
                o.iterations, o.grad_norm
            )],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MlrInit {
    Zero,
    /// Uniform fan-in init drawn from the given seed.
    Random(u64),
}

/// Multinomial logistic regression (reference-class head), fitted by
/// full-batch gradient descent with step `0.5/n` on the summed deviance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrClassifier {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub init: MlrInit,
}

impl Default for MlrClassifier {
    fn default() -> Self {
        Self {
            max_iter: 50_000,
            grad_tol: 1e-8,
            init: MlrInit::Zero,
        }
    }
}

impl MlrClassifier {
    pub fn fit_model(&self, x: ArrayView2<'_, f64>, obs: &ObservationMatrix) -> Result<NetModel> {
        let n = x.nrows();
        if n < obs.k() {
            return Err(Error::Config(format!("MLR needs n >= k, got n = {n}, k = {}", obs.k())));
        }
        if obs.n() != n {
            return Err(Error::Dimension(format!("{n} feature rows vs {} observation rows", obs.n())));
        }
        let arch = Architecture::new(x.ncols(), vec![], obs.k(), Head::Reference);
        let start = match self.init {
            MlrInit::Zero => Network::zeros(&arch)?,
            MlrInit::Random(seed) => net::init_network(&arch, &RngStream::new(seed))?,
        };
        let (fitted, outcome) =
            net::gradient_descent(&start, x, obs, 0.5 / n as f64, 0.0, self.max_iter, self.grad_tol)?;
        NetModel::new(fitted, x, Some(outcome))
    }
}

impl SoftLabelClassifier for MlrClassifier {
    fn name(&self) -> String {
        "mlr".into()
    }

    fn fit(&self, x: ArrayView2<'_, f64>, obs: &ObservationMatrix, _seed: u64) -> Result<Box<dyn FittedModel>> {
        Ok(Box::new(self.fit_model(x, obs)?))
    }
}

/// Architecture plus training hyper-parameters of a deep sigmoid network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub head: Head,
    pub train: TrainConfig,
}

impl ModelConfig {
    /// `depth` hidden layers of equal `width`.
    pub fn uniform(width: usize, depth: usize, train: TrainConfig) -> Self {
        Self {
            hidden: vec![width; depth],
            head: Head::Full,
            train,
        }
    }

    pub fn width(&self) -> usize {
        self.hidden.first().copied().unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    pub fn architecture(&self, input_dim: usize, k: usize) -> Architecture {
        Architecture::new(input_dim, self.hidden.clone(), k, self.head)
    }

    pub fn label(&self) -> String {
        if self.hidden.is_empty() {
            "depth0".into()
        } else {
            let widths: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
            format!("h{}", widths.join("x"))
        }
    }
}

/// init → SdA pre-training on `X` → SGD fine-tuning on `(X, P)`, all
/// randomness drawn from named substreams of the fit seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepNetClassifier {
    pub config: ModelConfig,
}

impl DeepNetClassifier {
    pub fn new(config: ModelConfig) -> Self {
        Self { config }
    }

    pub fn fit_model(&self, x: ArrayView2<'_, f64>, obs: &ObservationMatrix, seed: u64) -> Result<NetModel> {
        let rng = RngStream::new(seed);
        let arch = self.config.architecture(x.ncols(), obs.k());
        let mut net = net::init_network(&arch, &rng)?;
        if net.depth() > 0 && self.config.train.pretrain_epochs > 0 {
            net = net::pretrain_sda(&net, x, &self.config.train, &rng)?;
        }
        let net = net::train(&net, x, obs, &self.config.train, &rng)?;
        NetModel::new(net, x, None)
    }
}

impl SoftLabelClassifier for DeepNetClassifier {
    fn name(&self) -> String {
        format!("deepnet-{}", self.config.label())
    }

    fn fit(&self, x: ArrayView2<'_, f64>, obs: &ObservationMatrix, seed: u64) -> Result<Box<dyn FittedModel>> {
        Ok(Box::new(self.fit_model(x, obs, seed)?))
    }
}

/// Sigmoid network trained by full-batch gradient descent from a seeded
/// init; step `learning_rate / n` on the summed deviance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullBatchNetClassifier {
    pub hidden: Vec<usize>,
    pub head: Head,
    pub learning_rate: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl FullBatchNetClassifier {
    pub fn fit_model(&self, x: ArrayView2<'_, f64>, obs: &ObservationMatrix, seed: u64) -> Result<NetModel> {
        if obs.n() != x.nrows() || obs.n() == 0 {
            return Err(Error::Dimension("feature and observation rows differ".into()));
        }
        let arch = Architecture::new(x.ncols(), self.hidden.clone(), obs.k(), self.head);
        let start = net::init_network(&arch, &RngStream::new(seed))?;
        let lr = self.learning_rate / obs.n() as f64;
        let (fitted, outcome) = net::gradient_descent(&start, x, obs, lr, 0.0, self.max_iter, self.grad_tol)?;
        NetModel::new(fitted, x, Some(outcome))
    }
}

impl SoftLabelClassifier for FullBatchNetClassifier {
    fn name(&self) -> String {
        let widths: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        format!("fullbatch-h{}", widths.join("x"))
    }

    fn fit(&self, x: ArrayView2<'_, f64>, obs: &ObservationMatrix, seed: u64) -> Result<Box<dyn FittedModel>> {
        Ok(Box::new(self.fit_model(x, obs, seed)?))
    }
}

struct ConstantModel {
    fitted: Array2<f64>,
    row: Array2<f64>,
    params: usize,
}

impl FittedModel for ConstantModel {
    fn fitted_sufficient(&self) -> &Array2<f64> {
        &self.fitted
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<ProbabilityMatrix> {
        let raw = Array2::from_shape_fn((x.nrows(), self.row.ncols()), |(_, c)| self.row[[0, c]]);
        Ok(ProbabilityMatrix::from_raw_sufficient(&raw))
    }

    fn param_count(&self) -> usize {
        self.params
    }
}

/// Predicts the column mean of `P` everywhere; df = `k−1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanEstimator;

impl SoftLabelClassifier for MeanEstimator {
    fn name(&self) -> String {
        "mean".into()
    }

    fn fit(&self, x: ArrayView2<'_, f64>, obs: &ObservationMatrix, _seed: u64) -> Result<Box<dyn FittedModel>> {
        if obs.n() == 0 || obs.n() != x.nrows() {
            return Err(Error::Dimension("mean estimator needs matching, non-empty inputs".into()));
        }
        let mean = obs.data().mean_axis(Axis(0)).expect("n >= 1");
        let row = mean.insert_axis(Axis(0));
        let fitted = Array2::from_shape_fn(obs.data().dim(), |(_, c)| row[[0, c]]);
        Ok(Box::new(ConstantModel {
            fitted,
            row,
            params: obs.k() - 1,
        }))
    }
}

struct MemorizerModel {
    x: Array2<f64>,
    fitted: Array2<f64>,
}

impl FittedModel for MemorizerModel {
    fn fitted_sufficient(&self) -> &Array2<f64> {
        &self.fitted
    }

    /// New rows take the observation of their nearest training row.
    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<ProbabilityMatrix> {
        if x.ncols() != self.x.ncols() {
            return Err(Error::Dimension("feature count differs from training".into()));
        }
        let rows: Vec<usize> = x
            .rows()
            .into_iter()
            .map(|q| {
                self.x
                    .rows()
                    .into_iter()
                    .map(|r| r.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .enumerate()
                    .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best })
                    .0
            })
            .collect();
        Ok(ProbabilityMatrix::from_raw_sufficient(&self.fitted.select(Axis(0), &rows)))
    }

    fn param_count(&self) -> usize {
        self.fitted.len()
    }
}

/// Saturated model: returns the observations themselves; df = `n(k−1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEstimator;

impl SoftLabelClassifier for IdentityEstimator {
    fn name(&self) -> String {
        "identity".into()
    }

    fn fit(&self, x: ArrayView2<'_, f64>, obs: &ObservationMatrix, _seed: u64) -> Result<Box<dyn FittedModel>> {
        if obs.n() != x.nrows() {
            return Err(Error::Dimension("feature and observation rows differ".into()));
        }
        Ok(Box::new(MemorizerModel {
            x: x.to_owned(),
            fitted: obs.data().clone(),
        }))
    }
}

struct SmootherModel {
    fitted: Array2<f64>,
    params: usize,
}

impl FittedModel for SmootherModel {
    fn fitted_sufficient(&self) -> &Array2<f64> {
        &self.fitted
    }

    fn predict(&self, _x: ArrayView2<'_, f64>) -> Result<ProbabilityMatrix> {
        Err(Error::Unsupported(
            "a fixed smoother matrix has no out-of-sample prediction".into(),
        ))
    }

    fn param_count(&self) -> usize {
        self.params
    }
}

/// Fixed linear smoother `L(P) = S·P`; df = `(k−1)·tr S`.
#[derive(Debug, Clone)]
pub struct LinearEstimator {
    pub smoother: Array2<f64>,
}

impl LinearEstimator {
    pub fn new(smoother: Array2<f64>) -> Result<Self> {
        if !smoother.is_square() {
            return Err(Error::Dimension(format!("smoother must be square, got {:?}", smoother.dim())));
        }
        Ok(Self { smoother })
    }

    pub fn trace(&self) -> f64 {
        self.smoother.diag().sum()
    }
}

impl SoftLabelClassifier for LinearEstimator {
    fn name(&self) -> String {
        "linear-smoother".into()
    }

    fn fit(&self, _x: ArrayView2<'_, f64>, obs: &ObservationMatrix, _seed: u64) -> Result<Box<dyn FittedModel>> {
        if self.smoother.nrows() != obs.n() {
            return Err(Error::Dimension(format!(
                "smoother is {}x{}, observations have {} rows",
                self.smoother.nrows(),
                self.smoother.ncols(),
                obs.n()
            )));
        }
        Ok(Box::new(SmootherModel {
            fitted: self.smoother.dot(obs.data()),
            params: self.smoother.len(),
        }))
    }
}
