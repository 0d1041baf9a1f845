//! Compiles a [`Network`] into an autodiff [`Graph`] for a fixed batch
//! size, exposing the parameter leaves so training and attacks can read
//! gradients and the loss builders can add regularizers.

use std::collections::HashMap;

use crate::autodiff::{conv1d_out_len, Graph, NodeId};
use crate::error::{Error, Result};
use crate::layers::{Activation, Layer, Network, Variance, EXP_CLAMP, SIGMA_SQ_FLOOR};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weights,
    Bias,
    Centers,
    VarianceRaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef {
    pub layer: usize,
    pub kind: ParamKind,
}

#[derive(Debug)]
pub struct CompiledNet {
    pub graph: Graph,
    pub input: NodeId,
    pub logits: NodeId,
    /// Per layer: the Gaussian component node (`[batch x out]`), when FGN.
    pub gate_nodes: Vec<Option<NodeId>>,
    pub params: Vec<(ParamRef, NodeId)>,
    pub batch: usize,
    pub input_dim: usize,
}

fn apply_activation(g: &mut Graph, act: Activation, x: NodeId) -> NodeId {
    match act {
        Activation::Tanh => g.tanh(x),
        Activation::Relu => g.relu(x),
        Activation::Identity => x,
    }
}

/// Compile the forward pass for a batch of `batch` rows of `input_dim`
/// features. FGN layers must be spherical or diagonal with p = 2; the full
/// covariance and general p-norm forms are evaluated directly, not trained.
pub fn compile(net: &Network, batch: usize, input_dim: usize) -> Result<CompiledNet> {
    let mut g = Graph::new();
    let input = g.input();
    let mut x = input;
    let mut cur_dim = input_dim;
    let mut gate_col: Option<NodeId> = None;
    let mut gate_nodes = Vec::with_capacity(net.layers.len());
    let mut params = Vec::new();

    for (li, layer) in net.layers.iter().enumerate() {
        match layer {
            Layer::Dense(l) => {
                if l.in_dim() != cur_dim {
                    return Err(Error::Dimension {
                        context: format!("layer {} input", li),
                        expected: l.in_dim(),
                        got: cur_dim,
                    });
                }
                let w = g.input();
                let b = g.input();
                params.push((ParamRef { layer: li, kind: ParamKind::Weights }, w));
                params.push((ParamRef { layer: li, kind: ParamKind::Bias }, b));
                let wt = g.transpose(w);
                let xw = g.matmul(x, wt);
                let lin = g.add_row(xw, b);
                x = apply_activation(&mut g, l.activation, lin);
                cur_dim = l.out_dim();
                gate_nodes.push(None);
            }
            Layer::FgnDense(l) => {
                if l.in_dim() != cur_dim {
                    return Err(Error::Dimension {
                        context: format!("layer {} input", li),
                        expected: l.in_dim(),
                        got: cur_dim,
                    });
                }
                if (l.p_norm - 2.0).abs() > 1e-12 {
                    return Err(Error::Unsupported(format!(
                        "layer {}: graph compilation supports p = 2 only (got p = {})",
                        li, l.p_norm
                    )));
                }
                let w = g.input();
                let b = g.input();
                let c = g.input();
                params.push((ParamRef { layer: li, kind: ParamKind::Weights }, w));
                params.push((ParamRef { layer: li, kind: ParamKind::Bias }, b));
                params.push((ParamRef { layer: li, kind: ParamKind::Centers }, c));

                let wt = g.transpose(w);
                let xw = g.matmul(x, wt);
                let lin = g.add_row(xw, b);
                let phi = apply_activation(&mut g, l.activation, lin);

                // scaled squared distance, expanded so it stays in matmul form
                let scaled = match &l.variance {
                    Variance::Spherical(_) => {
                        let raw = g.input();
                        params.push((ParamRef { layer: li, kind: ParamKind::VarianceRaw }, raw));
                        let raw_sq = g.square(raw);
                        let sig_sq = g.add_scalar(raw_sq, SIGMA_SQ_FLOOR);
                        let inv = g.recip(sig_sq);
                        let x_sq = g.square(x);
                        let sx = g.row_sum(x_sq); // [batch]
                        let c_sq = g.square(c);
                        let sc = g.row_sum(c_sq); // [out]
                        let ct = g.transpose(c);
                        let xc = g.matmul(x, ct);
                        let cross = g.scale(xc, -2.0);
                        let d1 = g.add_row(cross, sc);
                        let d2 = g.add_col(d1, sx);
                        g.mul_row(d2, inv)
                    }
                    Variance::Diagonal(_) => {
                        let raw = g.input();
                        params.push((ParamRef { layer: li, kind: ParamKind::VarianceRaw }, raw));
                        let raw_sq = g.square(raw);
                        let sig_sq = g.add_scalar(raw_sq, SIGMA_SQ_FLOOR);
                        let a = g.recip(sig_sq); // [out x in]
                        let x_sq = g.square(x);
                        let at = g.transpose(a);
                        let t1 = g.matmul(x_sq, at);
                        let ca = g.mul(c, a);
                        let cat = g.transpose(ca);
                        let xca = g.matmul(x, cat);
                        let t2 = g.scale(xca, -2.0);
                        let c_sq = g.square(c);
                        let c2a = g.mul(c_sq, a);
                        let t3 = g.row_sum(c2a); // [out]
                        let t12 = g.add(t1, t2);
                        g.add_row(t12, t3)
                    }
                    Variance::Full(_) => {
                        return Err(Error::Unsupported(format!(
                            "layer {}: full covariance is not supported by graph compilation",
                            li
                        )))
                    }
                };
                let neg = g.scale(scaled, -1.0);
                let clamped = g.clamp_min(neg, EXP_CLAMP);
                let g0 = g.exp(clamped);
                let gated = match gate_col {
                    Some(gc) => g.mul_col(g0, gc),
                    None => g0,
                };
                x = g.mul(phi, gated);
                gate_col = Some(g.row_max(gated));
                cur_dim = l.out_dim();
                gate_nodes.push(Some(gated));
            }
            Layer::Conv1d(l) => {
                let out_len = conv1d_out_len(cur_dim, l.kernel_size(), l.stride, l.dilation)
                    .ok_or_else(|| Error::Dimension {
                        context: format!("layer {} receptive field", li),
                        expected: l.dilation * (l.kernel_size() - 1) + 1,
                        got: cur_dim,
                    })?;
                let k = g.input();
                let b = g.input();
                params.push((ParamRef { layer: li, kind: ParamKind::Weights }, k));
                params.push((ParamRef { layer: li, kind: ParamKind::Bias }, b));
                let conv = g.conv1d(x, k, l.stride, l.dilation);
                let brow = g.repeat_interleave(b, out_len);
                let lin = g.add_row(conv, brow);
                x = apply_activation(&mut g, l.activation, lin);
                cur_dim = l.channels() * out_len;
                gate_nodes.push(None);
            }
            Layer::FgnConv1d(l) => {
                let out_len = conv1d_out_len(cur_dim, l.kernel_size(), l.stride, l.dilation)
                    .ok_or_else(|| Error::Dimension {
                        context: format!("layer {} receptive field", li),
                        expected: l.dilation * (l.kernel_size() - 1) + 1,
                        got: cur_dim,
                    })?;
                let ch = l.channels();
                let k = g.input();
                let b = g.input();
                let c = g.input();
                let raw = g.input();
                params.push((ParamRef { layer: li, kind: ParamKind::Weights }, k));
                params.push((ParamRef { layer: li, kind: ParamKind::Bias }, b));
                params.push((ParamRef { layer: li, kind: ParamKind::Centers }, c));
                params.push((ParamRef { layer: li, kind: ParamKind::VarianceRaw }, raw));

                let conv = g.conv1d(x, k, l.stride, l.dilation);
                let brow = g.repeat_interleave(b, out_len);
                let lin = g.add_row(conv, brow);
                let phi = apply_activation(&mut g, l.activation, lin);

                // window squared norms via a ones-kernel convolution
                let ones = g.constant(Tensor::matrix(1, l.kernel_size(), vec![1.0; l.kernel_size()])?);
                let x_sq = g.square(x);
                let win_sq = g.conv1d(x_sq, ones, l.stride, l.dilation); // [batch x out_len]
                let t1 = g.tile(win_sq, ch);
                let xc = g.conv1d(x, c, l.stride, l.dilation);
                let t2 = g.scale(xc, -2.0);
                let c_sq = g.square(c);
                let sc = g.row_sum(c_sq); // [ch]
                let scr = g.repeat_interleave(sc, out_len);
                let t12 = g.add(t1, t2);
                let d2 = g.add_row(t12, scr);

                let raw_sq = g.square(raw);
                let sig_sq = g.add_scalar(raw_sq, SIGMA_SQ_FLOOR);
                let inv = g.recip(sig_sq); // [ch]
                let inv_rep = g.repeat_interleave(inv, out_len);
                let scaled = g.mul_row(d2, inv_rep);
                let neg = g.scale(scaled, -1.0);
                let clamped = g.clamp_min(neg, EXP_CLAMP);
                let g0 = g.exp(clamped);
                let gated = match gate_col {
                    Some(gc) => g.mul_col(g0, gc),
                    None => g0,
                };
                x = g.mul(phi, gated);
                gate_col = Some(g.row_max(gated));
                cur_dim = ch * out_len;
                gate_nodes.push(Some(gated));
            }
        }
    }

    Ok(CompiledNet {
        graph: g,
        input,
        logits: x,
        gate_nodes,
        params,
        batch,
        input_dim,
    })
}

impl CompiledNet {
    /// Bind parameter leaves from the network plus the batch input.
    pub fn bindings(&self, net: &Network, batch_input: Tensor) -> Result<HashMap<NodeId, Tensor>> {
        if batch_input.rows() != self.batch || batch_input.cols() != self.input_dim {
            return Err(Error::Dimension {
                context: "CompiledNet::bindings".into(),
                expected: self.batch * self.input_dim,
                got: batch_input.len(),
            });
        }
        let mut map = HashMap::new();
        map.insert(self.input, batch_input);
        for &(pref, node) in &self.params {
            map.insert(node, param_tensor(net, pref)?);
        }
        Ok(map)
    }
}

pub fn param_tensor(net: &Network, pref: ParamRef) -> Result<Tensor> {
    let layer = &net.layers[pref.layer];
    let missing = || Error::Unsupported(format!("layer {} has no {:?}", pref.layer, pref.kind));
    Ok(match (layer, pref.kind) {
        (Layer::Dense(l), ParamKind::Weights) => l.weights.clone(),
        (Layer::Dense(l), ParamKind::Bias) => Tensor::vector(l.bias.clone()),
        (Layer::FgnDense(l), ParamKind::Weights) => l.weights.clone(),
        (Layer::FgnDense(l), ParamKind::Bias) => Tensor::vector(l.bias.clone()),
        (Layer::FgnDense(l), ParamKind::Centers) => l.centers.clone(),
        (Layer::FgnDense(l), ParamKind::VarianceRaw) => match &l.variance {
            Variance::Spherical(raw) => Tensor::vector(raw.clone()),
            Variance::Diagonal(raw) => raw.clone(),
            Variance::Full(_) => return Err(missing()),
        },
        (Layer::Conv1d(l), ParamKind::Weights) => l.kernels.clone(),
        (Layer::Conv1d(l), ParamKind::Bias) => Tensor::vector(l.bias.clone()),
        (Layer::FgnConv1d(l), ParamKind::Weights) => l.kernels.clone(),
        (Layer::FgnConv1d(l), ParamKind::Bias) => Tensor::vector(l.bias.clone()),
        (Layer::FgnConv1d(l), ParamKind::Centers) => l.centers.clone(),
        (Layer::FgnConv1d(l), ParamKind::VarianceRaw) => Tensor::vector(l.sigma_raw.clone()),
        _ => return Err(missing()),
    })
}

/// Mutable view of the flat parameter buffer behind a [`ParamRef`].
pub fn param_slice_mut<'a>(net: &'a mut Network, pref: ParamRef) -> Result<&'a mut [f64]> {
    let layer = &mut net.layers[pref.layer];
    let kind = pref.kind;
    let err = Error::Unsupported(format!("layer {} has no {:?}", pref.layer, kind));
    Ok(match (layer, kind) {
        (Layer::Dense(l), ParamKind::Weights) => l.weights.data_mut(),
        (Layer::Dense(l), ParamKind::Bias) => &mut l.bias,
        (Layer::FgnDense(l), ParamKind::Weights) => l.weights.data_mut(),
        (Layer::FgnDense(l), ParamKind::Bias) => &mut l.bias,
        (Layer::FgnDense(l), ParamKind::Centers) => l.centers.data_mut(),
        (Layer::FgnDense(l), ParamKind::VarianceRaw) => match &mut l.variance {
            Variance::Spherical(raw) => raw,
            Variance::Diagonal(raw) => raw.data_mut(),
            Variance::Full(_) => return Err(err),
        },
        (Layer::Conv1d(l), ParamKind::Weights) => l.kernels.data_mut(),
        (Layer::Conv1d(l), ParamKind::Bias) => &mut l.bias,
        (Layer::FgnConv1d(l), ParamKind::Weights) => l.kernels.data_mut(),
        (Layer::FgnConv1d(l), ParamKind::Bias) => &mut l.bias,
        (Layer::FgnConv1d(l), ParamKind::Centers) => l.centers.data_mut(),
        (Layer::FgnConv1d(l), ParamKind::VarianceRaw) => &mut l.sigma_raw,
        _ => return Err(err),
    })
}

/// `baseLoss + lambda * sum(sigma^2) + l2 * sum(w^2)` over the compiled
/// parameter leaves. With `lambda == 0` and `l2 == 0` the base node is
/// returned unchanged.
pub fn regularized_loss(
    g: &mut Graph,
    compiled_params: &[(ParamRef, NodeId)],
    base: NodeId,
    lambda: f64,
    l2: f64,
) -> NodeId {
    let mut loss = base;
    if lambda > 0.0 {
        let mut total: Option<NodeId> = None;
        for &(pref, node) in compiled_params {
            if pref.kind == ParamKind::VarianceRaw {
                let sq = g.square(node);
                let eff = g.add_scalar(sq, SIGMA_SQ_FLOOR);
                let s = g.sum_all(eff);
                total = Some(match total {
                    Some(t) => g.add(t, s),
                    None => s,
                });
            }
        }
        if let Some(t) = total {
            let reg = g.scale(t, lambda);
            loss = g.add(loss, reg);
        }
    }
    if l2 > 0.0 {
        let mut total: Option<NodeId> = None;
        for &(pref, node) in compiled_params {
            if pref.kind == ParamKind::Weights {
                let sq = g.square(node);
                let s = g.sum_all(sq);
                total = Some(match total {
                    Some(t) => g.add(t, s),
                    None => s,
                });
            }
        }
        if let Some(t) = total {
            let reg = g.scale(t, l2);
            loss = g.add(loss, reg);
        }
    }
    loss
}
