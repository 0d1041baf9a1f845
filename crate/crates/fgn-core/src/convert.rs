//! Conversion of classical networks into FGN networks that reproduce their
//! behavior on a reference input set.
//!
//! Each neuron's center is placed on its own zero line, `c = -b w /
//! ||w||^2`, so the Gaussian peaks where the neuron is most undecided. A
//! single shared sigma is then grown by doubling until the logits of the
//! converted network match the original within tolerance on the reference
//! inputs.

use crate::error::{Error, Result};
use crate::layers::{FgnConv1dLayer, FgnDenseLayer, Layer, Network, Variance};
use crate::tensor::Tensor;

/// Point on the neuron's zero line closest to the origin. Errors on a
/// zero weight vector, which has no zero line.
pub fn center_from_neuron(w: &[f64], b: f64) -> Result<Vec<f64>> {
    let norm_sq: f64 = w.iter().map(|&v| v * v).sum();
    if norm_sq == 0.0 {
        return Err(Error::InvalidArgument(
            "neuron has all-zero weights; center is undefined".into(),
        ));
    }
    Ok(w.iter().map(|&wi| -b * wi / norm_sq).collect())
}

#[derive(Debug, Clone)]
pub struct ConversionReport {
    /// The shared sigma finally applied to every converted layer.
    pub sigma: f64,
    /// Largest absolute logit deviation over the reference inputs.
    pub max_deviation: f64,
    /// Doubling probes spent in the search.
    pub search_iterations: usize,
}

/// Largest absolute logit difference between two networks over the rows of
/// `refs`.
pub fn max_logit_deviation(a: &Network, b: &Network, refs: &Tensor) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..refs.rows() {
        let x = refs.row(i);
        let ya = a.logits(x)?;
        let yb = b.logits(x)?;
        if ya.len() != yb.len() {
            return Err(Error::Dimension {
                context: "max_logit_deviation".into(),
                expected: ya.len(),
                got: yb.len(),
            });
        }
        for (va, vb) in ya.iter().zip(&yb) {
            worst = worst.max((va - vb).abs());
        }
    }
    Ok(worst)
}

fn set_shared_sigma(net: &mut Network, sigma: f64) {
    for layer in &mut net.layers {
        match layer {
            Layer::FgnDense(l) => {
                l.variance = Variance::Spherical(vec![sigma; l.out_dim()]);
            }
            Layer::FgnConv1d(l) => {
                l.sigma_raw = vec![sigma; l.channels()];
            }
            _ => {}
        }
    }
}

/// Grow one shared sigma by doubling (1, 2, 4, ...) until the converted
/// network's logits track the original within `tol` on `refs`. At most 64
/// probes; fails with the best deviation found if none suffices.
pub fn find_variance(
    fgn: &mut Network,
    original: &Network,
    refs: &Tensor,
    tol: f64,
) -> Result<(f64, f64, usize)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {} must be positive", tol)));
    }
    if refs.rows() == 0 {
        return Err(Error::InvalidArgument("no reference inputs".into()));
    }
    let mut best_dev = f64::INFINITY;
    for i in 0..64u32 {
        let sigma = (2.0f64).powi(i as i32);
        set_shared_sigma(fgn, sigma);
        let dev = max_logit_deviation(fgn, original, refs)?;
        best_dev = best_dev.min(dev);
        if dev <= tol {
            return Ok((sigma, dev, i as usize + 1));
        }
    }
    Err(Error::Tolerance(format!(
        "no sigma up to 2^63 brings logit deviation under {} (best {})",
        tol, best_dev
    )))
}

/// Convert every layer of a classical network to its FGN counterpart and
/// search for the shared sigma. Fails on networks that already contain FGN
/// layers.
pub fn convert_network(
    original: &Network,
    refs: &Tensor,
    tol: f64,
) -> Result<(Network, ConversionReport)> {
    let mut layers = Vec::with_capacity(original.layers.len());
    for (li, layer) in original.layers.iter().enumerate() {
        match layer {
            Layer::Dense(l) => {
                let out = l.out_dim();
                let dim = l.in_dim();
                let mut centers = Vec::with_capacity(out * dim);
                for j in 0..out {
                    centers.extend(center_from_neuron(l.weights.row(j), l.bias[j]).map_err(
                        |e| Error::InvalidArgument(format!("layer {} neuron {}: {}", li, j, e)),
                    )?);
                }
                layers.push(Layer::FgnDense(FgnDenseLayer {
                    weights: l.weights.clone(),
                    bias: l.bias.clone(),
                    centers: Tensor::matrix(out, dim, centers)?,
                    variance: Variance::Spherical(vec![1.0; out]),
                    p_norm: 2.0,
                    activation: l.activation,
                }));
            }
            Layer::Conv1d(l) => {
                let ch = l.channels();
                let k = l.kernel_size();
                let mut centers = Vec::with_capacity(ch * k);
                for c in 0..ch {
                    centers.extend(center_from_neuron(l.kernels.row(c), l.bias[c]).map_err(
                        |e| Error::InvalidArgument(format!("layer {} channel {}: {}", li, c, e)),
                    )?);
                }
                layers.push(Layer::FgnConv1d(FgnConv1dLayer {
                    kernels: l.kernels.clone(),
                    bias: l.bias.clone(),
                    centers: Tensor::matrix(ch, k, centers)?,
                    sigma_raw: vec![1.0; ch],
                    stride: l.stride,
                    dilation: l.dilation,
                    activation: l.activation,
                }));
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "layer {} is already {}; conversion expects a classical network",
                    li,
                    other.kind_name()
                )))
            }
        }
    }
    let mut fgn = Network::new(layers);
    let (sigma, max_deviation, search_iterations) = find_variance(&mut fgn, original, refs, tol)?;
    Ok((
        fgn,
        ConversionReport {
            sigma,
            max_deviation,
            search_iterations,
        },
    ))
}
