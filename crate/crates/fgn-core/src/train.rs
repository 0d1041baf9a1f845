//! Mini-batch training over compiled network graphs, with the variance
//! regularizer `lambda * sum(sigma^2)` added to the base loss.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::autodiff::{backward, forward, NodeId};
use crate::data::{shuffled_indices, Dataset};
use crate::error::{Error, Result};
use crate::layers::{Layer, Network, Variance};
use crate::netgraph::{compile, param_slice_mut, regularized_loss, ParamRef};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    MeanSquaredError,
}

#[derive(Debug, Clone, Copy)]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub lambda: f64,
    pub l2_weight: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::CrossEntropy,
            lambda: 0.0,
            l2_weight: 0.0,
            optimizer: OptimizerKind::adam(1e-3),
            epochs: 10,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let lr = match self.optimizer {
            OptimizerKind::Sgd { lr } => lr,
            OptimizerKind::Adam { lr, .. } => lr,
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", lr)));
        }
        if self.lambda < 0.0 || self.l2_weight < 0.0 {
            return Err(Error::InvalidArgument("regularizer weights must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub sigma_min: f64,
    pub sigma_median: f64,
    pub sigma_max: f64,
}

pub fn history_to_csv(history: &[EpochStats]) -> String {
    let mut s = String::from("epoch,loss,accuracy,sigma_min,sigma_median,sigma_max\n");
    for h in history {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            h.epoch, h.loss, h.accuracy, h.sigma_min, h.sigma_median, h.sigma_max
        ));
    }
    s
}

fn sigma_stats(net: &Network) -> (f64, f64, f64) {
    let mut all: Vec<f64> = Vec::new();
    for layer in &net.layers {
        match layer {
            Layer::FgnDense(l) => all.extend(l.variance.effective_sigma_sq()),
            Layer::FgnConv1d(l) => all.extend(
                l.sigma_raw
                    .iter()
                    .map(|&s| s * s + crate::layers::SIGMA_SQ_FLOOR),
            ),
            _ => {}
        }
    }
    if all.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    all.sort_by(f64::total_cmp);
    (all[0], all[all.len() / 2], all[all.len() - 1])
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

/// One optimizer step over all parameters. `grads[i]` pairs with
/// `params[i]`.
fn apply_step(
    net: &mut Network,
    params: &[(ParamRef, NodeId)],
    grads: &[Vec<f64>],
    opt: OptimizerKind,
    adam: &mut Option<AdamState>,
) -> Result<()> {
    match opt {
        OptimizerKind::Sgd { lr } => {
            for ((pref, _), g) in params.iter().zip(grads) {
                let slot = param_slice_mut(net, *pref)?;
                for (p, &d) in slot.iter_mut().zip(g) {
                    *p -= lr * d;
                }
            }
        }
        OptimizerKind::Adam { lr, beta1, beta2, eps } => {
            let state = adam.get_or_insert_with(|| AdamState {
                m: grads.iter().map(|g| vec![0.0; g.len()]).collect(),
                v: grads.iter().map(|g| vec![0.0; g.len()]).collect(),
                t: 0,
            });
            state.t += 1;
            let t = state.t as f64;
            let bc1 = 1.0 - beta1.powf(t);
            let bc2 = 1.0 - beta2.powf(t);
            for (i, ((pref, _), g)) in params.iter().zip(grads).enumerate() {
                let slot = param_slice_mut(net, *pref)?;
                for (j, (p, &d)) in slot.iter_mut().zip(g).enumerate() {
                    let m = &mut state.m[i][j];
                    let v = &mut state.v[i][j];
                    *m = beta1 * *m + (1.0 - beta1) * d;
                    *v = beta2 * *v + (1.0 - beta2) * d * d;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

/// Train in place. Epoch 0 returns the network unchanged with empty
/// history. Aborts with a numeric error naming the epoch and batch if the
/// loss goes non-finite.
pub fn train(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let dim = data.dim();
    let n = data.len();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let mut adam: Option<AdamState> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(n, &mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let b = chunk.len();
            let mut xdata = Vec::with_capacity(b * dim);
            let mut labels = Vec::with_capacity(b);
            for &i in chunk {
                xdata.extend_from_slice(data.input(i));
                labels.push(data.labels[i]);
            }
            let x = Tensor::matrix(b, dim, xdata)?;

            let mut compiled = compile(net, b, dim)?;
            let base = match cfg.loss {
                LossKind::CrossEntropy => {
                    let logp = compiled.graph.log_softmax(compiled.logits);
                    compiled.graph.nll_loss(logp, labels.clone())
                }
                LossKind::MeanSquaredError => {
                    let k = net.out_dim().ok_or_else(|| {
                        Error::Unsupported("mse needs a dense output layer".into())
                    })?;
                    let mut t = vec![0.0; b * k];
                    for (i, &l) in labels.iter().enumerate() {
                        t[i * k + l] = 1.0;
                    }
                    let target = compiled.graph.constant(Tensor::matrix(b, k, t)?);
                    let diff = compiled.graph.sub(compiled.logits, target);
                    let sq = compiled.graph.square(diff);
                    let s = compiled.graph.sum_all(sq);
                    compiled.graph.scale(s, 1.0 / (b * k) as f64)
                }
            };
            let loss_node =
                regularized_loss(&mut compiled.graph, &compiled.params.clone(), base, cfg.lambda, cfg.l2_weight);

            let bindings = compiled.bindings(net, x)?;
            let eval = forward(&compiled.graph, &bindings)?;
            let loss = eval.value(loss_node).scalar_value()?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became non-finite at epoch {}, batch {}",
                    epoch, batch_idx
                )));
            }
            loss_sum += loss;
            batches += 1;

            let logits = eval.value(compiled.logits);
            for (i, &l) in labels.iter().enumerate() {
                let row = logits.row(i);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                if best == l {
                    correct += 1;
                }
            }

            let gradients = backward(&compiled.graph, &eval, loss_node)?;
            let grads: Vec<Vec<f64>> = compiled
                .params
                .iter()
                .map(|&(_, node)| gradients.grad(node, &eval).data().to_vec())
                .collect();
            apply_step(net, &compiled.params, &grads, cfg.optimizer, &mut adam)?;
        }

        let (smin, smed, smax) = sigma_stats(net);
        history.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / n as f64,
            sigma_min: smin,
            sigma_median: smed,
            sigma_max: smax,
        });
    }
    Ok(history)
}

/// Center and variance initialization schemes for an FGN dense layer.
#[derive(Debug, Clone, Copy)]
pub enum InitScheme<'a> {
    /// Centers drawn from the given training inputs, variance set so every
    /// neuron has `g >= 0.5` on at least one of them.
    FromData(&'a Dataset),
    /// Centers left as-is, one large raw sigma everywhere.
    LargeSigma(f64),
}

pub fn init_fgn_layer(net: &mut Network, layer_idx: usize, scheme: InitScheme, seed: u64) -> Result<()> {
    let l = match net.layers.get_mut(layer_idx) {
        Some(Layer::FgnDense(l)) => l,
        Some(other) => {
            return Err(Error::InvalidArgument(format!(
                "layer {} is {}, not fgn-dense",
                layer_idx,
                other.kind_name()
            )))
        }
        None => return Err(Error::InvalidArgument(format!("no layer {}", layer_idx))),
    };
    match scheme {
        InitScheme::LargeSigma(raw) => {
            if !(raw > 0.0) {
                return Err(Error::InvalidArgument("sigma must be positive".into()));
            }
            l.variance = Variance::Spherical(vec![raw; l.out_dim()]);
        }
        InitScheme::FromData(data) => {
            if data.is_empty() {
                return Err(Error::InvalidArgument("fromData needs at least one point".into()));
            }
            if data.dim() != l.in_dim() {
                return Err(Error::Dimension {
                    context: "init_fgn_layer".into(),
                    expected: l.in_dim(),
                    got: data.dim(),
                });
            }
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let out = l.out_dim();
            let dim = l.in_dim();
            let mut centers = Vec::with_capacity(out * dim);
            let mut picks = Vec::with_capacity(out);
            for _ in 0..out {
                let i = rng.gen_range(0..data.len());
                picks.push(i);
                centers.extend_from_slice(data.input(i));
            }
            l.centers = Tensor::matrix(out, dim, centers)?;
            // sigma so g >= 0.5 at the nearest training point:
            // exp(-d^2/s^2) >= 1/2  <=>  s >= d / sqrt(ln 2)
            let mut raws = Vec::with_capacity(out);
            for j in 0..out {
                let c = l.centers.row(j);
                let mut dmin = f64::INFINITY;
                for i in 0..data.len() {
                    let d: f64 = data
                        .input(i)
                        .iter()
                        .zip(c)
                        .map(|(&x, &ci)| (x - ci) * (x - ci))
                        .sum();
                    if d < dmin {
                        dmin = d;
                    }
                }
                raws.push((dmin / 2.0f64.ln()).sqrt().max(1e-3));
            }
            l.variance = Variance::Spherical(raws);
        }
    }
    Ok(())
}
