//! Monte-Carlo degrees of freedom and the information criteria built on it.
//!
//! For a fitting procedure `L` and observations `P`,
//!
//! ```text
//! df = Σ_i Σ_c ∂L_ic(P)/∂p_ic
//!    ≈ (1/T) Σ_t Σ_i Σ_c b_ic^(t) (L_ic(P + ε B^(t)) − L_ic(P)) / ε
//! ```
//!
//! with `B^(t)` an i.i.d. zero-mean unit-variance `n × (k−1)` matrix. Every
//! perturbed fit reuses the baseline's model seed (common random numbers):
//! same initial weights, minibatch order, dropout and corruption masks, so
//! the divided difference only sees the effect of the label perturbation.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::categorical::{total_deviance, ObservationMatrix};
use crate::error::{Error, Result};
use crate::estimators::{FittedModel, SoftLabelClassifier};
use crate::rng::{RngStream, Substream};

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    #[default]
    Gaussian,
    /// ±1 with equal probability.
    Rademacher,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationMatrix {
    b: Array2<f64>,
    seed: u64,
    replicate: u32,
}

impl PerturbationMatrix {
    /// `B^(replicate)` for a perturbation seed.
    pub fn sample(n: usize, k: usize, seed: u64, replicate: u32, kind: PerturbationKind) -> Result<Self> {
        if n == 0 || k < 2 {
            return Err(Error::Config(format!("perturbation needs n >= 1 and k >= 2, got n = {n}, k = {k}")));
        }
        let mut rng = RngStream::new(seed).substream(Substream::Perturbation, replicate);
        let b = match kind {
            PerturbationKind::Gaussian => Array2::from_shape_fn((n, k - 1), |_| rng.sample(StandardNormal)),
            PerturbationKind::Rademacher => {
                Array2::from_shape_fn((n, k - 1), |_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            }
        };
        Ok(Self { b, seed, replicate })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate(&self) -> u32 {
        self.replicate
    }
}

/// Standard-normal `B` of shape `n × (k−1)`.
pub fn sample_perturbation(n: usize, k: usize, seed: u64) -> Result<PerturbationMatrix> {
    PerturbationMatrix::sample(n, k, seed, 0, PerturbationKind::Gaussian)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrnContext {
    /// Seed of the baseline fit (and of every perturbed fit when `shared_model_seed`).
    pub model_seed: u64,
    pub perturbation_seed: u64,
    pub epsilon: f64,
    pub replicates: usize,
    pub perturbation: PerturbationKind,
    /// `false` gives each perturbed fit its own model seed, i.e. switches
    /// common random numbers off. Only useful for demonstrating why CRN matters.
    pub shared_model_seed: bool,
    pub workers: usize,
}

impl Default for CrnContext {
    fn default() -> Self {
        Self {
            model_seed: 0,
            perturbation_seed: 1,
            epsilon: DEFAULT_EPSILON,
            replicates: 1,
            perturbation: PerturbationKind::Gaussian,
            shared_model_seed: true,
            workers: 1,
        }
    }
}

impl CrnContext {
    pub fn new(model_seed: u64, perturbation_seed: u64) -> Self {
        Self {
            model_seed,
            perturbation_seed,
            ..Self::default()
        }
    }

    pub fn with_replicates(mut self, replicates: usize) -> Self {
        self.replicates = replicates;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.replicates == 0 {
            return Err(Error::Config("at least one replicate is required".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("worker count must be >= 1".into()));
        }
        Ok(())
    }

    fn replicate_model_seed(&self, t: usize) -> u64 {
        if self.shared_model_seed {
            self.model_seed
        } else {
            // splitmix64 step, so independent seeds are far apart.
            let mut z = self.model_seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(t as u64 + 1));
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofEstimate {
    pub df: f64,
    pub per_replicate: Vec<f64>,
    pub stderr: f64,
    pub epsilon: f64,
    pub replicates: usize,
    pub model_seed: u64,
    pub perturbation_seed: u64,
    pub perturbation: PerturbationKind,
}

impl DofEstimate {
    fn from_replicates(values: Vec<f64>, ctx: &CrnContext) -> Self {
        let t = values.len();
        let df = values.iter().sum::<f64>() / t as f64;
        let stderr = if t > 1 {
            let var = values.iter().map(|v| (v - df) * (v - df)).sum::<f64>() / (t - 1) as f64;
            (var / t as f64).sqrt()
        } else {
            0.0
        };
        Self {
            df,
            per_replicate: values,
            stderr,
            epsilon: ctx.epsilon,
            replicates: t,
            model_seed: ctx.model_seed,
            perturbation_seed: ctx.perturbation_seed,
            perturbation: ctx.perturbation,
        }
    }

    /// Sample variance of the per-replicate values (0 for a single replicate).
    pub fn replicate_variance(&self) -> f64 {
        let t = self.per_replicate.len();
        if t < 2 {
            return 0.0;
        }
        self.per_replicate.iter().map(|v| (v - self.df).powi(2)).sum::<f64>() / (t - 1) as f64
    }
}

/// `Σ_ic b_ic (perturbed_ic − base_ic) / ε`.
pub fn divided_difference(b: &Array2<f64>, perturbed: &Array2<f64>, base: &Array2<f64>, epsilon: f64) -> f64 {
    let mut acc = 0.0;
    ndarray::Zip::from(b)
        .and(perturbed)
        .and(base)
        .for_each(|&b, &p, &q| acc += b * (p - q));
    acc / epsilon
}

/// A baseline fit and its df estimate.
pub struct DofRun {
    pub estimate: DofEstimate,
    pub baseline: Box<dyn FittedModel>,
}

pub fn estimate_dof(
    fitter: &dyn SoftLabelClassifier,
    x: ArrayView2<'_, f64>,
    obs: &ObservationMatrix,
    ctx: &CrnContext,
) -> Result<DofEstimate> {
    Ok(estimate_dof_with_baseline(fitter, x, obs, ctx)?.estimate)
}

/// Runs the baseline fit and `T` perturbed fits (concurrently, up to
/// `ctx.workers`) and folds the replicate values in replicate order.
pub fn estimate_dof_with_baseline(
    fitter: &dyn SoftLabelClassifier,
    x: ArrayView2<'_, f64>,
    obs: &ObservationMatrix,
    ctx: &CrnContext,
) -> Result<DofRun> {
    ctx.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| estimate_dof_on_current_pool(fitter, x, obs, ctx))
}

/// As [`estimate_dof_with_baseline`], but schedules the fits on the caller's
/// rayon pool and ignores `ctx.workers`.
pub fn estimate_dof_on_current_pool(
    fitter: &dyn SoftLabelClassifier,
    x: ArrayView2<'_, f64>,
    obs: &ObservationMatrix,
    ctx: &CrnContext,
) -> Result<DofRun> {
    ctx.validate()?;
    let model = fitter.name();
    let fail = |replicate: usize, err: Error| Error::Estimate {
        model: model.clone(),
        replicate,
        reason: err.to_string(),
    };

    let (baseline, perturbed) = {
        rayon::join(
            || fitter.fit(x, obs, ctx.model_seed),
            || {
                (0..ctx.replicates)
                    .into_par_iter()
                    .map(|t| -> Result<(Array2<f64>, Array2<f64>)> {
                        let b = PerturbationMatrix::sample(obs.n(), obs.k(), ctx.perturbation_seed, t as u32, ctx.perturbation)
                            .map_err(|e| fail(t + 1, e))?;
                        let p_t = obs.perturbed(b.matrix(), ctx.epsilon).map_err(|e| fail(t + 1, e))?;
                        let fitted = fitter
                            .fit(x, &p_t, ctx.replicate_model_seed(t))
                            .map_err(|e| fail(t + 1, e))?;
                        Ok((b.b, fitted.fitted_sufficient().clone()))
                    })
                    .collect::<Vec<_>>()
            },
        )
    };
    // replicate 0 is the baseline fit.
    let baseline = baseline.map_err(|e| fail(0, e))?;
    let base = baseline.fitted_sufficient();
    let mut values = Vec::with_capacity(ctx.replicates);
    for (t, result) in perturbed.into_iter().enumerate() {
        let (b, fitted) = result?;
        if fitted.dim() != base.dim() {
            return Err(fail(t + 1, Error::Dimension("fitted shapes differ between fits".into())));
        }
        let value = divided_difference(&b, &fitted, base, ctx.epsilon);
        if !value.is_finite() {
            return Err(Error::Estimate {
                model: model.clone(),
                replicate: t + 1,
                reason: "non-finite replicate value".into(),
            });
        }
        values.push(value);
    }
    Ok(DofRun {
        estimate: DofEstimate::from_replicates(values, ctx),
        baseline,
    })
}

/// Exact divided-difference df: perturbs each of the `n(k−1)` observation
/// entries on its own and sums the diagonal sensitivities,
/// `Σ_ic (L_ic(P + ε e_ic) − L_ic(P)) / ε`. Exact for linear estimators at any
/// `ε`; costs one fit per entry, so it is meant for small problems and oracles.
pub fn coordinate_dof(
    fitter: &dyn SoftLabelClassifier,
    x: ArrayView2<'_, f64>,
    obs: &ObservationMatrix,
    epsilon: f64,
    model_seed: u64,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let model = fitter.name();
    let base = fitter
        .fit(x, obs, model_seed)
        .map_err(|e| Error::Estimate { model: model.clone(), replicate: 0, reason: e.to_string() })?;
    let base = base.fitted_sufficient();
    let (n, m) = obs.data().dim();
    let mut df = 0.0;
    for i in 0..n {
        for c in 0..m {
            let mut e = Array2::zeros((n, m));
            e[[i, c]] = 1.0;
            let fitted = fitter
                .fit(x, &obs.perturbed(&e, epsilon)?, model_seed)
                .map_err(|err| Error::Estimate { model: model.clone(), replicate: i * m + c + 1, reason: err.to_string() })?;
            df += (fitted.fitted_sufficient()[[i, c]] - base[[i, c]]) / epsilon;
        }
    }
    Ok(df)
}

/// `Σ err_i + 2·df`.
pub fn dofaic(train_total_deviance: f64, df: f64) -> f64 {
    train_total_deviance + 2.0 * df
}

/// `Σ err_i + 2·(parameter count)`.
pub fn naive_aic(train_total_deviance: f64, param_count: usize) -> f64 {
    train_total_deviance + 2.0 * param_count as f64
}

/// Mean per-sample test deviance minus mean per-sample training deviance.
pub fn measured_optimism(
    model: &dyn FittedModel,
    x_test: ArrayView2<'_, f64>,
    obs_test: &ObservationMatrix,
    train_total_deviance: f64,
    n_train: usize,
) -> Result<f64> {
    if n_train == 0 || obs_test.n() == 0 {
        return Err(Error::Dimension("optimism needs non-empty train and test sets".into()));
    }
    let test = total_deviance(obs_test, &model.predict(x_test)?)?;
    Ok(test / obs_test.n() as f64 - train_total_deviance / n_train as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::categorical::encode_observations;
    use crate::estimators::{IdentityEstimator, LinearEstimator, MeanEstimator};
    use proptest::prelude::*;

    fn labels(n: usize, k: usize) -> Vec<usize> {
        (0..n).map(|i| 1 + (i * 7 + i / 3) % k).collect()
    }

    #[test]
    fn perturbation_shape_and_determinism() {
        let a = sample_perturbation(7, 4, 3).unwrap();
        assert_eq!(a.matrix().dim(), (7, 3));
        assert_eq!(a, sample_perturbation(7, 4, 3).unwrap());
        assert_ne!(a, sample_perturbation(7, 4, 4).unwrap());
        assert!(sample_perturbation(0, 3, 1).is_err());
        assert!(sample_perturbation(3, 1, 1).is_err());
    }

    #[test]
    fn perturbation_moments() {
        let b = sample_perturbation(1000, 3, 17).unwrap();
        let m = b.matrix();
        for col in m.columns() {
            assert!(col.mean().unwrap().abs() <= 0.09);
        }
        let cnt = m.len() as f64;
        let mean = m.sum() / cnt;
        let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cnt;
        assert!(mean.abs() <= 4.0 / cnt.sqrt());
        assert!((var - 1.0).abs() <= 4.0 * (2.0 / cnt).sqrt());

        let r = PerturbationMatrix::sample(500, 2, 1, 0, PerturbationKind::Rademacher).unwrap();
        assert!(r.matrix().iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn identity_df_replicates_are_squared_norms() {
        let x = Array2::zeros((10, 1));
        let obs = encode_observations(&labels(10, 3), 3).unwrap();
        let est = estimate_dof(&IdentityEstimator, x.view(), &obs, &CrnContext::new(0, 5).with_replicates(3)).unwrap();
        for (t, v) in est.per_replicate.iter().enumerate() {
            let b = PerturbationMatrix::sample(10, 3, 5, t as u32, PerturbationKind::Gaussian).unwrap();
            let ss: f64 = b.matrix().iter().map(|v| v * v).sum();
            assert!((v - ss).abs() < 1e-6);
        }
        let ctx = CrnContext {
            perturbation: PerturbationKind::Rademacher,
            ..CrnContext::new(0, 5)
        };
        let rad = estimate_dof(&IdentityEstimator, x.view(), &obs, &ctx).unwrap();
        assert!((rad.df - 20.0).abs() < 1e-6);
    }

    #[test]
    fn coordinate_route_is_exact_for_linear_oracles() {
        let x = Array2::zeros((10, 1));
        let obs = encode_observations(&labels(10, 3), 3).unwrap();
        for eps in [1e-5, 1e-2] {
            assert!((coordinate_dof(&IdentityEstimator, x.view(), &obs, eps, 0).unwrap() - 20.0).abs() < 1e-6);
            assert!((coordinate_dof(&MeanEstimator, x.view(), &obs, eps, 0).unwrap() - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mean_estimator_df_matches_replicate_formula() {
        let n = 100;
        let x = Array2::zeros((n, 1));
        let obs = encode_observations(&labels(n, 4), 4).unwrap();
        let est = estimate_dof(&MeanEstimator, x.view(), &obs, &CrnContext::new(0, 9)).unwrap();
        // Each replicate is Σ_c (Σ_i b_ic)² / n exactly.
        let b = PerturbationMatrix::sample(n, 4, 9, 0, PerturbationKind::Gaussian).unwrap();
        let exact: f64 = b.matrix().columns().into_iter().map(|c| c.sum().powi(2) / n as f64).sum();
        assert!((est.df - exact).abs() < 1e-6);
    }

    #[test]
    fn stderr_definition() {
        let ctx = CrnContext::default();
        let e = DofEstimate::from_replicates(vec![1.0, 3.0, 5.0], &ctx);
        assert_eq!(e.df, 3.0);
        assert!((e.stderr - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(DofEstimate::from_replicates(vec![2.0], &ctx).stderr, 0.0);
    }

    #[test]
    fn invalid_context_rejected() {
        let x = Array2::zeros((3, 1));
        let obs = encode_observations(&[1, 2, 1], 2).unwrap();
        for ctx in [
            CrnContext::default().with_epsilon(0.0),
            CrnContext::default().with_replicates(0),
            CrnContext::default().with_workers(0),
        ] {
            assert!(matches!(estimate_dof(&MeanEstimator, x.view(), &obs, &ctx), Err(Error::Config(_))));
        }
    }

    #[test]
    fn fit_failure_names_replicate() {
        let x = Array2::zeros((3, 1));
        let obs = encode_observations(&[1, 2, 1], 2).unwrap();
        let wrong = LinearEstimator::new(Array2::eye(4)).unwrap();
        match estimate_dof(&wrong, x.view(), &obs, &CrnContext::default()) {
            Err(Error::Estimate { replicate, model, .. }) => {
                assert_eq!(model, "linear-smoother");
                assert!(replicate <= 1);
            }
            other => panic!("{:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn criteria_arithmetic() {
        assert_eq!(dofaic(10.0, 4.0), 18.0);
        assert_eq!(dofaic(0.0, 0.0), 0.0);
        assert_eq!(naive_aic(10.0, 9), 28.0);
    }

    #[test]
    fn optimism_on_training_set_is_zero() {
        let x = Array2::zeros((6, 1));
        let obs = encode_observations(&[1, 2, 2, 1, 1, 1], 2).unwrap();
        let m = MeanEstimator.fit(x.view(), &obs, 0).unwrap();
        let train = total_deviance(&obs, &m.train_probabilities()).unwrap();
        let o = measured_optimism(m.as_ref(), x.view(), &obs, train, 6).unwrap();
        assert!(o.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn dofaic_minus_naive(d in -1e3f64..1e3, df in -10f64..500.0, m in 0usize..5000) {
            let lhs = dofaic(d, df) - naive_aic(d, m);
            prop_assert!((lhs - 2.0 * (df - m as f64)).abs() <= 1e-9 * (1.0 + d.abs() + m as f64));
        }
    }
}
