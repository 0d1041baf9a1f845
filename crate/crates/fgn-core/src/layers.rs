//! Classical and Finite Gaussian layers, dense and 1-D convolutional, and
//! network assembly with the Gaussian gate threaded through depth.

use crate::autodiff::conv1d_out_len;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Additive floor under the squared variance parameter, keeping the
/// effective sigma^2 strictly positive under unconstrained descent.
pub const SIGMA_SQ_FLOOR: f64 = 1e-12;

/// Exponent floor before `exp`; underflow towards exactly zero past this
/// point is intended (effectively finite support).
pub const EXP_CLAMP: f64 = -700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Variance parameterization for a layer of FGNs. Raw values are stored;
/// the effective variance is the square plus [`SIGMA_SQ_FLOOR`].
#[derive(Debug, Clone)]
pub enum Variance {
    /// One raw sigma per neuron.
    Spherical(Vec<f64>),
    /// Raw per-dimension values, `[out x in]`.
    Diagonal(Tensor),
    /// Per-neuron lower-triangular factor `L` with `Sigma = L L^T`,
    /// positive semi-definite by construction.
    Full(Vec<Tensor>),
}

impl Variance {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Variance::Spherical(_) => "spherical",
            Variance::Diagonal(_) => "diagonal",
            Variance::Full(_) => "full",
        }
    }

    /// Sum of effective variances: per-neuron sigma^2 for spherical, all
    /// per-dimension sigma^2 for diagonal, trace(Sigma) for full.
    pub fn total_variance(&self) -> f64 {
        match self {
            Variance::Spherical(raw) => raw.iter().map(|&s| s * s + SIGMA_SQ_FLOOR).sum(),
            Variance::Diagonal(raw) => raw.data().iter().map(|&s| s * s + SIGMA_SQ_FLOOR).sum(),
            Variance::Full(ls) => ls
                .iter()
                .map(|l| l.data().iter().map(|&v| v * v).sum::<f64>())
                .sum(),
        }
    }

    /// Effective sigma^2 values, one per neuron for spherical, flattened
    /// row-major for diagonal, diagonal of Sigma for full.
    pub fn effective_sigma_sq(&self) -> Vec<f64> {
        match self {
            Variance::Spherical(raw) => raw.iter().map(|&s| s * s + SIGMA_SQ_FLOOR).collect(),
            Variance::Diagonal(raw) => raw.data().iter().map(|&s| s * s + SIGMA_SQ_FLOOR).collect(),
            Variance::Full(ls) => {
                let mut out = Vec::new();
                for l in ls {
                    let n = l.rows();
                    for i in 0..n {
                        out.push((0..=i).map(|j| l.at(i, j) * l.at(i, j)).sum());
                    }
                }
                out
            }
        }
    }
}

/// Per-neuron view of the variance parameterization.
#[derive(Debug, Clone, Copy)]
pub enum NeuronVariance<'a> {
    /// Raw sigma; effective variance is `sigma^2 + floor`.
    Spherical(f64),
    /// Raw per-dimension values.
    Diagonal(&'a [f64]),
    /// Lower-triangular factor `L`.
    Full(&'a Tensor),
}

/// The Gaussian component `g` of one FGN: exp of the negative scaled
/// p-distance between input and center, always in `(0, 1]`.
pub fn gaussian_component(x: &[f64], c: &[f64], var: NeuronVariance, p_norm: f64) -> Result<f64> {
    if x.len() != c.len() {
        return Err(Error::Dimension {
            context: "gaussian_component".into(),
            expected: c.len(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "gaussian_component input".into(),
        });
    }
    let exponent = match var {
        NeuronVariance::Spherical(raw) => {
            let sigma_sq = raw * raw + SIGMA_SQ_FLOOR;
            let dist: f64 = x
                .iter()
                .zip(c)
                .map(|(&xi, &ci)| (xi - ci).abs().powf(p_norm))
                .sum();
            -dist / sigma_sq
        }
        NeuronVariance::Diagonal(raw) => -x
            .iter()
            .zip(c)
            .zip(raw)
            .map(|((&xi, &ci), &ri)| (xi - ci).abs().powf(p_norm) / (ri * ri + SIGMA_SQ_FLOOR))
            .sum::<f64>(),
        NeuronVariance::Full(l) => {
            // quad form (x-c)^T Sigma^-1 (x-c) with Sigma = L L^T equals
            // ||z||^2 where L z = (x - c), by forward substitution.
            let n = x.len();
            let mut z = vec![0.0; n];
            for i in 0..n {
                let mut acc = x[i] - c[i];
                for j in 0..i {
                    acc -= l.at(i, j) * z[j];
                }
                let mut d = l.at(i, i);
                if d.abs() < 1e-12 {
                    d = if d < 0.0 { -1e-12 } else { 1e-12 };
                }
                z[i] = acc / d;
            }
            -z.iter().map(|v| v * v).sum::<f64>()
        }
    };
    Ok(exponent.max(EXP_CLAMP).exp())
}

/// Gate value passed to a layer: max of the previous layer's Gaussian
/// components, or 1 for the first layer (empty input).
pub fn gate(g_prev: &[f64]) -> f64 {
    if g_prev.is_empty() {
        1.0
    } else {
        g_prev.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// `[out x in]`
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::Dimension {
                context: "DenseLayer::new".into(),
                expected: weights.rows(),
                got: bias.len(),
            });
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::Dimension {
                context: "denseForward".into(),
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        Ok((0..self.out_dim())
            .map(|j| {
                let l: f64 = self
                    .weights
                    .row(j)
                    .iter()
                    .zip(x)
                    .map(|(&w, &xi)| w * xi)
                    .sum::<f64>()
                    + self.bias[j];
                self.activation.apply(l)
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct FgnDenseLayer {
    /// `[out x in]`
    pub weights: Tensor,
    pub bias: Vec<f64>,
    /// `[out x in]`
    pub centers: Tensor,
    pub variance: Variance,
    pub p_norm: f64,
    pub activation: Activation,
}

impl FgnDenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn neuron_variance(&self, j: usize) -> NeuronVariance<'_> {
        match &self.variance {
            Variance::Spherical(raw) => NeuronVariance::Spherical(raw[j]),
            Variance::Diagonal(raw) => NeuronVariance::Diagonal(raw.row(j)),
            Variance::Full(ls) => NeuronVariance::Full(&ls[j]),
        }
    }

    /// Forward pass returning both the gated outputs and the per-neuron
    /// Gaussian components `g = gate_in * exp(...)`.
    pub fn forward(&self, x: &[f64], gate_in: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.in_dim() {
            return Err(Error::Dimension {
                context: "fgnDenseForward".into(),
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let mut y = Vec::with_capacity(self.out_dim());
        let mut g_out = Vec::with_capacity(self.out_dim());
        for j in 0..self.out_dim() {
            let g = gate_in
                * gaussian_component(x, self.centers.row(j), self.neuron_variance(j), self.p_norm)?;
            let l: f64 = self
                .weights
                .row(j)
                .iter()
                .zip(x)
                .map(|(&w, &xi)| w * xi)
                .sum::<f64>()
                + self.bias[j];
            y.push(self.activation.apply(l) * g);
            g_out.push(g);
        }
        Ok((y, g_out))
    }
}

#[derive(Debug, Clone)]
pub struct Conv1dLayer {
    /// `[channels x k]`
    pub kernels: Tensor,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub dilation: usize,
    pub activation: Activation,
}

impl Conv1dLayer {
    pub fn channels(&self) -> usize {
        self.kernels.rows()
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.cols()
    }

    pub fn out_len(&self, n: usize) -> Result<usize> {
        conv1d_out_len(n, self.kernel_size(), self.stride, self.dilation).ok_or_else(|| {
            Error::Dimension {
                context: "conv1dForward receptive field".into(),
                expected: self.dilation * (self.kernel_size() - 1) + 1,
                got: n,
            }
        })
    }

    /// One neuron per channel slid across the input; output `[ch x out_len]`.
    pub fn forward(&self, x: &[f64]) -> Result<Tensor> {
        let out_len = self.out_len(x.len())?;
        let ch = self.channels();
        let mut data = Vec::with_capacity(ch * out_len);
        for c in 0..ch {
            let kr = self.kernels.row(c);
            for i in 0..out_len {
                let l: f64 = kr
                    .iter()
                    .enumerate()
                    .map(|(j, &w)| w * x[i * self.stride + j * self.dilation])
                    .sum::<f64>()
                    + self.bias[c];
                data.push(self.activation.apply(l));
            }
        }
        Tensor::matrix(ch, out_len, data)
    }
}

#[derive(Debug, Clone)]
pub struct FgnConv1dLayer {
    /// `[channels x k]`
    pub kernels: Tensor,
    pub bias: Vec<f64>,
    /// `[channels x k]` kernel centers.
    pub centers: Tensor,
    /// One raw sigma per channel.
    pub sigma_raw: Vec<f64>,
    pub stride: usize,
    pub dilation: usize,
    pub activation: Activation,
}

impl FgnConv1dLayer {
    pub fn channels(&self) -> usize {
        self.kernels.rows()
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.cols()
    }

    pub fn out_len(&self, n: usize) -> Result<usize> {
        conv1d_out_len(n, self.kernel_size(), self.stride, self.dilation).ok_or_else(|| {
            Error::Dimension {
                context: "fgn conv1dForward receptive field".into(),
                expected: self.dilation * (self.kernel_size() - 1) + 1,
                got: n,
            }
        })
    }

    /// Output and per-position Gaussian map, both `[ch x out_len]`; the
    /// whole map is gated by `gate_in`.
    pub fn forward(&self, x: &[f64], gate_in: f64) -> Result<(Tensor, Tensor)> {
        let out_len = self.out_len(x.len())?;
        let ch = self.channels();
        let mut y = Vec::with_capacity(ch * out_len);
        let mut g_map = Vec::with_capacity(ch * out_len);
        let mut window = vec![0.0; self.kernel_size()];
        for c in 0..ch {
            let kr = self.kernels.row(c);
            let cr = self.centers.row(c);
            for i in 0..out_len {
                for (j, w) in window.iter_mut().enumerate() {
                    *w = x[i * self.stride + j * self.dilation];
                }
                let g = gate_in
                    * gaussian_component(&window, cr, NeuronVariance::Spherical(self.sigma_raw[c]), 2.0)?;
                let l: f64 = kr.iter().zip(&window).map(|(&w, &z)| w * z).sum::<f64>() + self.bias[c];
                y.push(self.activation.apply(l) * g);
                g_map.push(g);
            }
        }
        Ok((
            Tensor::matrix(ch, out_len, y)?,
            Tensor::matrix(ch, out_len, g_map)?,
        ))
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    FgnDense(FgnDenseLayer),
    Conv1d(Conv1dLayer),
    FgnConv1d(FgnConv1dLayer),
}

impl Layer {
    pub fn is_fgn(&self) -> bool {
        matches!(self, Layer::FgnDense(_) | Layer::FgnConv1d(_))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::FgnDense(_) => "fgn-dense",
            Layer::Conv1d(_) => "conv1d",
            Layer::FgnConv1d(_) => "fgn-conv1d",
        }
    }
}

/// Result of a full network forward pass.
#[derive(Debug, Clone)]
pub struct NetOutput {
    pub logits: Vec<f64>,
    /// Gate value after the last layer.
    pub final_gate: f64,
    /// Per-layer Gaussian component vectors; `None` for classical layers,
    /// which pass the gate through unchanged.
    pub layer_gates: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, Default)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn has_fgn_layers(&self) -> bool {
        self.layers.iter().any(Layer::is_fgn)
    }

    pub fn forward(&self, x: &[f64]) -> Result<NetOutput> {
        let mut activ = x.to_vec();
        let mut gate_val = 1.0;
        let mut layer_gates = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::Dense(l) => {
                    activ = l.forward(&activ)?;
                    layer_gates.push(None);
                }
                Layer::FgnDense(l) => {
                    let (y, g) = l.forward(&activ, gate_val)?;
                    gate_val = gate(&g);
                    activ = y;
                    layer_gates.push(Some(g));
                }
                Layer::Conv1d(l) => {
                    activ = l.forward(&activ)?.data().to_vec();
                    layer_gates.push(None);
                }
                Layer::FgnConv1d(l) => {
                    let (y, g_map) = l.forward(&activ, gate_val)?;
                    gate_val = gate(g_map.data());
                    activ = y.data().to_vec();
                    layer_gates.push(Some(g_map.data().to_vec()));
                }
            }
        }
        Ok(NetOutput {
            logits: activ,
            final_gate: gate_val,
            layer_gates,
        })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.logits)
    }

    /// Input dimension of the first layer, when it is dense.
    pub fn in_dim(&self) -> Option<usize> {
        match self.layers.first() {
            Some(Layer::Dense(l)) => Some(l.in_dim()),
            Some(Layer::FgnDense(l)) => Some(l.in_dim()),
            _ => None,
        }
    }

    pub fn out_dim(&self) -> Option<usize> {
        match self.layers.last() {
            Some(Layer::Dense(l)) => Some(l.out_dim()),
            Some(Layer::FgnDense(l)) => Some(l.out_dim()),
            _ => None,
        }
    }
}
