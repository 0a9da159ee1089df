//! Categorical exponential-family algebra.
//!
//! A label `y ∈ 1..=k` is represented by its sufficient statistics
//! `p = h(y) ∈ {0,1}^{k-1}`, one-hot over the first `k-1` classes and all
//! zero for the reference class `k`. Probabilities are carried as full
//! `k`-vectors; only observations and natural parameters live in `k-1`
//! dimensions.
//!
//! With `θ_c = ln μ_c − ln μ_k` and `A(θ) = ln(1 + Σ_c e^{θ_c})` the sample
//! deviance is `−2(θᵀp − A(θ))`, which for a valid probability row equals
//! `−2(Σ_c p_c ln μ_c + (1 − Σ_c p_c) ln μ_k)`. The second form is linear in
//! `p`, so it stays well defined for perturbed observations that leave the
//! simplex.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Probabilities coming from fitted models are clamped into this range
/// before logs are taken.
pub const PROB_FLOOR: f64 = 1e-12;

const ROW_SUM_TOL: f64 = 1e-9;

/// `n × (k−1)` matrix of label observations (sufficient statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    data: Array2<f64>,
    k: usize,
}

impl ObservationMatrix {
    pub fn new(data: Array2<f64>, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("class count must be >= 2, got {k}")));
        }
        if data.ncols() != k - 1 {
            return Err(Error::Dimension(format!(
                "observation matrix has {} columns, expected k-1 = {}",
                data.ncols(),
                k - 1
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite observation".into()));
        }
        Ok(Self { data, k })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    /// `P + ε·B`.
    pub fn perturbed(&self, perturbation: &Array2<f64>, epsilon: f64) -> Result<Self> {
        if perturbation.dim() != self.data.dim() {
            return Err(Error::Dimension(format!(
                "perturbation is {:?}, observations are {:?}",
                perturbation.dim(),
                self.data.dim()
            )));
        }
        let data = &self.data + &(perturbation * epsilon);
        Ok(Self { data, k: self.k })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(0), rows),
            k: self.k,
        }
    }

    /// Rows extended with the implied reference column `1 − Σ p`.
    pub fn to_full(&self) -> Array2<f64> {
        extend_with_reference(&self.data)
    }
}

/// `n × k` matrix of class probabilities; rows lie on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    data: Array2<f64>,
}

impl ProbabilityMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.ncols() < 2 {
            return Err(Error::Dimension("probability rows need at least 2 classes".into()));
        }
        for (i, row) in data.rows().into_iter().enumerate() {
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Domain(format!("row {i} has entries outside [0,1]")));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Domain(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { data })
    }

    /// Builds valid probabilities from raw first-`k−1` columns (which may lie
    /// outside the simplex): append the implied column, clamp to `[0,1]`,
    /// renormalise. A row that clamps to all zeros becomes uniform.
    pub fn from_raw_sufficient(raw: &Array2<f64>) -> Self {
        let mut full = extend_with_reference(raw);
        let k = full.ncols() as f64;
        for mut row in full.rows_mut() {
            row.mapv_inplace(|v| v.clamp(0.0, 1.0));
            let s = row.sum();
            if s > 0.0 {
                row.mapv_inplace(|v| v / s);
            } else {
                row.fill(1.0 / k);
            }
        }
        Self { data: full }
    }

    pub(crate) fn from_trusted(data: Array2<f64>) -> Self {
        Self { data }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn k(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    /// First `k−1` columns, the quantity whose sensitivity defines df.
    pub fn sufficient(&self) -> Array2<f64> {
        self.data.slice(ndarray::s![.., ..self.k() - 1]).to_owned()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(0), rows),
        }
    }

    /// Index (0-based) of the most probable class in each row.
    pub fn argmax(&self) -> Vec<usize> {
        self.data
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
                        if v > best.1 {
                            (j, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}

/// Log-odds of each of the first `k−1` classes against class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams(Vec<f64>);

impl NaturalParams {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("natural parameters must be finite".into()));
        }
        Ok(Self(theta))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, obs: &[f64]) -> f64 {
        self.0.iter().zip(obs).map(|(t, p)| t * p).sum()
    }
}

fn extend_with_reference(raw: &Array2<f64>) -> Array2<f64> {
    let (n, km1) = raw.dim();
    let mut full = Array2::zeros((n, km1 + 1));
    for (i, row) in raw.rows().into_iter().enumerate() {
        let mut rest = 1.0;
        for (c, &v) in row.iter().enumerate() {
            full[[i, c]] = v;
            rest -= v;
        }
        full[[i, km1]] = rest;
    }
    full
}

/// One-hot-or-zero encoding `h(y)` of labels in `1..=k`.
pub fn encode_observations(labels: &[usize], k: usize) -> Result<ObservationMatrix> {
    if k < 2 {
        return Err(Error::Config(format!("class count must be >= 2, got {k}")));
    }
    let mut data = Array2::zeros((labels.len(), k - 1));
    for (index, &label) in labels.iter().enumerate() {
        if label < 1 || label > k {
            return Err(Error::Encoding { index, label, k });
        }
        if label < k {
            data[[index, label - 1]] = 1.0;
        }
    }
    ObservationMatrix::new(data, k)
}

fn check_probability_row(mu: &[f64]) -> Result<()> {
    if mu.len() < 2 {
        return Err(Error::Dimension("probability row needs at least 2 entries".into()));
    }
    if let Some(v) = mu.iter().find(|&&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::Domain(format!("log of non-positive probability {v}")));
    }
    let s: f64 = mu.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::Domain(format!("probability row sums to {s}")));
    }
    Ok(())
}

pub fn natural_params(mu: &[f64]) -> Result<NaturalParams> {
    check_probability_row(mu)?;
    let k = mu.len();
    let ln_ref = mu[k - 1].ln();
    NaturalParams::new(mu[..k - 1].iter().map(|m| m.ln() - ln_ref).collect())
}

/// `ln(1 + Σ e^{θ_c})`, max-shifted.
pub fn log_partition(theta: &NaturalParams) -> f64 {
    let shift = theta.0.iter().copied().fold(0.0_f64, f64::max);
    let s: f64 = (-shift).exp() + theta.0.iter().map(|t| (t - shift).exp()).sum::<f64>();
    shift + s.ln()
}

/// Softmax over `[θ; 0]`.
pub fn mean_from_natural(theta: &NaturalParams) -> Vec<f64> {
    let shift = theta.0.iter().copied().fold(0.0_f64, f64::max);
    let mut out: Vec<f64> = theta.0.iter().map(|t| (t - shift).exp()).collect();
    out.push((-shift).exp());
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

fn linear_deviance(obs: &[f64], mu_hat: &[f64]) -> f64 {
    let k = mu_hat.len();
    let mut ll = 0.0;
    let mut rest = 1.0;
    for (p, m) in obs.iter().zip(&mu_hat[..k - 1]) {
        ll += p * m.ln();
        rest -= p;
    }
    ll += rest * mu_hat[k - 1].ln();
    -2.0 * ll
}

/// Sample deviance `−2(θ(μ̂)ᵀp − A(μ̂))`. Rejects non-positive `μ̂`.
pub fn deviance(obs: &[f64], mu_hat: &[f64]) -> Result<f64> {
    check_probability_row(mu_hat)?;
    if obs.len() + 1 != mu_hat.len() {
        return Err(Error::Dimension(format!(
            "observation has {} entries, probabilities {}",
            obs.len(),
            mu_hat.len()
        )));
    }
    Ok(linear_deviance(obs, mu_hat))
}

/// Deviance for model outputs: probabilities are clamped to
/// `[PROB_FLOOR, 1 − PROB_FLOOR]` first, so saturated predictions stay finite.
pub fn clamped_deviance(obs: ArrayView1<'_, f64>, mu_hat: ArrayView1<'_, f64>) -> f64 {
    let k = mu_hat.len();
    let mut ll = 0.0;
    let mut rest = 1.0;
    for c in 0..k - 1 {
        ll += obs[c] * mu_hat[c].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln();
        rest -= obs[c];
    }
    ll += rest * mu_hat[k - 1].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln();
    -2.0 * ll
}

/// Expected deviance of a fresh observation drawn from `mu_true`:
/// `−2(θ(μ̂)ᵀμ_true − A(μ̂))`.
pub fn expected_deviance(mu_true: &[f64], mu_hat: &[f64]) -> Result<f64> {
    if mu_true.len() != mu_hat.len() {
        return Err(Error::Dimension("mu_true and mu_hat differ in length".into()));
    }
    if mu_true.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain("mu_true has entries outside [0,1]".into()));
    }
    let theta = natural_params(mu_hat)?;
    let k = mu_true.len();
    Ok(-2.0 * (theta.dot(&mu_true[..k - 1]) - log_partition(&theta)))
}

/// Optimism `2θ(μ̂)ᵀ(p − μ_true)` in closed form.
pub fn optimism(obs: &[f64], mu_true: &[f64], mu_hat: &[f64]) -> Result<f64> {
    let theta = natural_params(mu_hat)?;
    if obs.len() != theta.as_slice().len() || mu_true.len() != mu_hat.len() {
        return Err(Error::Dimension("optimism inputs have inconsistent lengths".into()));
    }
    Ok(2.0
        * theta
            .as_slice()
            .iter()
            .zip(obs.iter().zip(mu_true))
            .map(|(t, (p, m))| t * (p - m))
            .sum::<f64>())
}

/// `Σ_i err_i` over model outputs (clamped logs).
pub fn total_deviance(obs: &ObservationMatrix, mu_hat: &ProbabilityMatrix) -> Result<f64> {
    if obs.n() != mu_hat.n() || obs.k() != mu_hat.k() {
        return Err(Error::Dimension(format!(
            "observations {}x{} vs probabilities {}x{}",
            obs.n(),
            obs.k(),
            mu_hat.n(),
            mu_hat.k()
        )));
    }
    Ok(obs
        .data()
        .rows()
        .into_iter()
        .zip(mu_hat.data().rows())
        .map(|(p, m)| clamped_deviance(p, m))
        .sum())
}
