use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::ProbabilityMatrix;
use crate::error::{Error, Result};
use crate::rng::{RngStream, Substream};

/// Output parameterisation of the softmax head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// `k` logits, softmax over all of them.
    Full,
    /// `k−1` logits; the reference class `k` has its logit pinned at 0.
    /// With `k = 2` this is a single sigmoid output unit.
    Reference,
}

impl Head {
    pub fn outputs(self, k: usize) -> usize {
        match self {
            Head::Full => k,
            Head::Reference => k - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub k: usize,
    pub head: Head,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, k: usize, head: Head) -> Self {
        Self {
            input_dim,
            hidden,
            k,
            head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("class count must be >= 2, got {}", self.k)));
        }
        Ok(())
    }

    /// `(out, in)` shape of every layer, head last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in &self.hidden {
            shapes.push((w, fan_in));
            fan_in = w;
        }
        shapes.push((self.head.outputs(self.k), fan_in));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * (i + 1)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// `x Wᵀ + b` for a batch `x` of row vectors.
    pub(crate) fn affine(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

/// Sigmoid hidden layers followed by a softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub(crate) layers: Vec<Layer>,
    pub(crate) head: Head,
    pub(crate) k: usize,
}

impl Network {
    pub fn from_layers(layers: Vec<Layer>, head: Head, k: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least the head layer".into()));
        }
        if k < 2 {
            return Err(Error::Config(format!("class count must be >= 2, got {k}")));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Dimension(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    l + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Dimension(format!("layer {l} bias length mismatch")));
            }
        }
        let last = layers.last().unwrap().out_dim();
        if last != head.outputs(k) {
            return Err(Error::Dimension(format!(
                "head has {last} outputs, expected {} for k = {k}",
                head.outputs(k)
            )));
        }
        Ok(Self { layers, head, k })
    }

    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| Layer::zeros(o, i))
            .collect();
        Self::from_layers(layers, arch.head, arch.k)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.input_dim(),
            hidden: self.layers[..self.depth()].iter().map(Layer::out_dim).collect(),
            k: self.k,
            head: self.head,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Total weight and bias scalars.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn weight_sq_norm(&self) -> f64 {
        self.layers.iter().map(|l| l.weights.iter().map(|w| w * w).sum::<f64>()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub(crate) fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "features have {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Output of hidden layers `0..upto` (no dropout).
    pub fn hidden_representation(&self, x: ArrayView2<'_, f64>, upto: usize) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut a = x.to_owned();
        for layer in &self.layers[..upto.min(self.depth())] {
            a = layer.affine(a.view());
            a.mapv_inplace(sigmoid);
        }
        Ok(a)
    }

    /// Head logits for a batch.
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let h = self.hidden_representation(x, self.depth())?;
        Ok(self.layers[self.depth()].affine(h.view()))
    }

    /// Class probabilities; deterministic, no dropout.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<ProbabilityMatrix> {
        let z = self.logits(x)?;
        Ok(ProbabilityMatrix::from_trusted(softmax_rows(&z, self.head)))
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of head logits, returning all `k` probabilities.
pub(crate) fn softmax_rows(z: &Array2<f64>, head: Head) -> Array2<f64> {
    let (n, m) = z.dim();
    let k = match head {
        Head::Full => m,
        Head::Reference => m + 1,
    };
    let mut out = Array2::zeros((n, k));
    for (zr, mut or) in z.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let mut shift = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if head == Head::Reference {
            shift = shift.max(0.0);
        }
        let mut s = 0.0;
        for c in 0..m {
            let e = (zr[c] - shift).exp();
            or[c] = e;
            s += e;
        }
        if head == Head::Reference {
            let e = (-shift).exp();
            or[m] = e;
            s += e;
        }
        or.mapv_inplace(|v| v / s);
    }
    out
}

/// Weights uniform on `±√(6/(fan_in+fan_out))`, biases zero. All draws come
/// from the `Init` substream, layer by layer, row-major.
pub fn init_network(arch: &Architecture, rng: &RngStream) -> Result<Network> {
    arch.validate()?;
    let mut gen = rng.substream(Substream::Init, 0);
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(out_dim, in_dim)| {
            let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let weights =
                Array2::from_shape_fn((out_dim, in_dim), |_| gen.random_range(-limit..limit));
            Layer {
                weights,
                bias: Array1::zeros(out_dim),
            }
        })
        .collect();
    Network::from_layers(layers, arch.head, arch.k)
}

/// The hand-built XOR network: two hidden units with gain `f` and an output
/// unit with gain `k_gain`; class 1 is "XOR true".
pub fn xor_reference_network(f: f64, k_gain: f64) -> Network {
    let hidden = Layer {
        weights: ndarray::array![[f, -f], [-f, f]],
        bias: ndarray::array![-0.5 * f, -0.5 * f],
    };
    let head = Layer {
        weights: ndarray::array![[k_gain, k_gain]],
        bias: ndarray::array![-0.5 * k_gain],
    };
    Network::from_layers(vec![hidden, head], Head::Reference, 2).expect("static shapes")
}
