//! White-box adversarial attacks: fast gradient sign, projected gradient
//! descent, and a margin-based box-constrained attack with binary search
//! over the trade-off constant.

use std::collections::HashMap;

use crate::autodiff::{backward, forward, NodeId};
use crate::error::{Error, Result};
use crate::eval::confidence;
use crate::layers::Network;
use crate::netgraph::compile;
use crate::tensor::Tensor;

/// Attack verdict for one input.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub adversarial_input: Vec<f64>,
    pub original_class: usize,
    pub original_confidence: f64,
    pub adversarial_class: usize,
    pub adversarial_confidence: f64,
    /// Original correct, adversarial class flipped, and adversarial
    /// confidence above one half.
    pub success: bool,
    pub distortion_l2: f64,
    pub distortion_linf: f64,
}

fn sign3(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Cross-entropy loss and its gradient with respect to the input.
pub fn loss_and_input_grad(net: &Network, x: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let mut compiled = compile(net, 1, x.len())?;
    let logp = compiled.graph.log_softmax(compiled.logits);
    let loss = compiled.graph.nll_loss(logp, vec![label]);
    let bindings = compiled.bindings(net, Tensor::matrix(1, x.len(), x.to_vec())?)?;
    let eval = forward(&compiled.graph, &bindings)?;
    let l = eval.value(loss).scalar_value()?;
    let grads = backward(&compiled.graph, &eval, loss)?;
    let gx = grads.grad(compiled.input, &eval);
    if !gx.all_finite() {
        return Err(Error::NonFinite {
            context: "input gradient".into(),
        });
    }
    Ok((l, gx.data().to_vec()))
}

fn outcome_for(net: &Network, x: &[f64], adv: Vec<f64>, label: usize) -> Result<AttackOutcome> {
    let (oc, op) = confidence(&net.logits(x)?)?;
    let (ac, ap) = confidence(&net.logits(&adv)?)?;
    let mut l2 = 0.0;
    let mut linf: f64 = 0.0;
    for (&a, &b) in adv.iter().zip(x) {
        let d = a - b;
        l2 += d * d;
        linf = linf.max(d.abs());
    }
    Ok(AttackOutcome {
        adversarial_input: adv,
        original_class: oc,
        original_confidence: op,
        adversarial_class: ac,
        adversarial_confidence: ap,
        success: oc == label && ac != label && ap > 0.5,
        distortion_l2: l2.sqrt(),
        distortion_linf: linf,
    })
}

/// One signed-gradient step of size epsilon; no box clipping. A zero
/// gradient component leaves its dimension untouched.
pub fn fgsm(net: &Network, x: &[f64], label: usize, epsilon: f64) -> Result<AttackOutcome> {
    if epsilon < 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon {} must be non-negative", epsilon)));
    }
    let (_, grad) = loss_and_input_grad(net, x, label)?;
    let adv: Vec<f64> = x
        .iter()
        .zip(&grad)
        .map(|(&xi, &gi)| xi + epsilon * sign3(gi))
        .collect();
    outcome_for(net, x, adv, label)
}

/// Iterated signed-gradient ascent with per-dimension clipping to the
/// epsilon ball around `x`. Starts at `x` and returns the highest-loss
/// iterate's outcome.
pub fn pgd(
    net: &Network,
    x: &[f64],
    label: usize,
    epsilon: f64,
    alpha: f64,
    steps: usize,
) -> Result<AttackOutcome> {
    if epsilon < 0.0 || alpha < 0.0 {
        return Err(Error::InvalidArgument("epsilon and alpha must be non-negative".into()));
    }
    if alpha > epsilon {
        return Err(Error::InvalidArgument(format!(
            "step size {} exceeds ball radius {}",
            alpha, epsilon
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("pgd needs at least one step".into()));
    }
    let mut cur = x.to_vec();
    let mut best = cur.clone();
    let mut best_loss = f64::NEG_INFINITY;
    for _ in 0..steps {
        let (_, grad) = loss_and_input_grad(net, &cur, label)?;
        for ((c, &xi), &gi) in cur.iter_mut().zip(x).zip(&grad) {
            *c = (*c + alpha * sign3(gi)).clamp(xi - epsilon, xi + epsilon);
        }
        debug_assert!(cur
            .iter()
            .zip(x)
            .all(|(&c, &xi)| (c - xi).abs() <= epsilon + 1e-12));
        let (loss, _) = loss_and_input_grad(net, &cur, label)?;
        if loss > best_loss {
            best_loss = loss;
            best = cur.clone();
        }
    }
    outcome_for(net, x, best, label)
}

#[derive(Debug, Clone)]
pub struct CwConfig {
    /// Reject candidates whose l2 distortion exceeds this.
    pub eps_max: f64,
    pub c_low: f64,
    pub c_high: f64,
    pub binary_steps: usize,
    pub inner_iters: usize,
    pub inner_lr: f64,
    /// Target class; when unset, the second-most-likely original class.
    pub target: Option<usize>,
    pub box_lo: f64,
    pub box_hi: f64,
}

impl Default for CwConfig {
    fn default() -> Self {
        Self {
            eps_max: f64::INFINITY,
            c_low: 1e-3,
            c_high: 1e3,
            binary_steps: 8,
            inner_iters: 200,
            inner_lr: 0.01,
            target: None,
            box_lo: 0.0,
            box_hi: 1.0,
        }
    }
}

/// One probe of the trade-off search: the constant tried and the l2
/// distortion of its successful candidate, if any.
#[derive(Debug, Clone, Copy)]
pub struct CwProbe {
    pub c: f64,
    pub success_l2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CwResult {
    pub outcome: AttackOutcome,
    /// Constant behind the returned candidate.
    pub c_used: f64,
    pub probes: Vec<CwProbe>,
}

/// Margin-based attack in tanh box coordinates, minimizing
/// `||x' - x||^2 + c * max(max_{i != t} y_i - y_t, 0)` and binary-searching
/// `c` for the smallest-distortion success.
pub fn cw(net: &Network, x: &[f64], label: usize, cfg: &CwConfig) -> Result<CwResult> {
    if !(cfg.box_lo < cfg.box_hi) {
        return Err(Error::InvalidArgument("empty box".into()));
    }
    if !(cfg.c_low > 0.0 && cfg.c_low < cfg.c_high) {
        return Err(Error::InvalidArgument("need 0 < cLow < cHigh".into()));
    }
    if cfg.binary_steps == 0 || cfg.inner_iters == 0 || !(cfg.inner_lr > 0.0) {
        return Err(Error::InvalidArgument("degenerate search settings".into()));
    }
    let orig_logits = net.logits(x)?;
    let k = orig_logits.len();
    let target = match cfg.target {
        Some(t) => {
            if t >= k || t == label {
                return Err(Error::InvalidArgument(format!(
                    "target {} invalid for label {} over {} classes",
                    t, label, k
                )));
            }
            t
        }
        None => {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| orig_logits[b].total_cmp(&orig_logits[a]));
            *order
                .iter()
                .find(|&&c| c != label)
                .expect("at least two classes")
        }
    };

    let mut best: Option<(f64, Vec<f64>, f64)> = None; // (l2, candidate, c)
    let mut fallback: Option<(f64, Vec<f64>, f64)> = None; // (margin, candidate, c)
    let mut probes = Vec::with_capacity(cfg.binary_steps);
    let (mut lo_c, mut hi_c) = (cfg.c_low, cfg.c_high);
    for _ in 0..cfg.binary_steps {
        let c = (lo_c * hi_c).sqrt();
        let run = cw_inner(net, x, label, target, c, cfg)?;
        match run {
            CwRun::Success { candidate, l2 } => {
                probes.push(CwProbe { c, success_l2: Some(l2) });
                if best.as_ref().map_or(true, |(bl2, _, _)| l2 < *bl2) {
                    best = Some((l2, candidate, c));
                }
                hi_c = c;
            }
            CwRun::Failure { candidate, margin } => {
                probes.push(CwProbe { c, success_l2: None });
                if fallback.as_ref().map_or(true, |(bm, _, _)| margin < *bm) {
                    fallback = Some((margin, candidate, c));
                }
                lo_c = c;
            }
        }
    }

    let (candidate, c_used) = match (&best, &fallback) {
        (Some((_, cand, c)), _) => (cand.clone(), *c),
        (None, Some((_, cand, c))) => (cand.clone(), *c),
        (None, None) => (x.to_vec(), cfg.c_low),
    };
    let outcome = outcome_for(net, x, candidate, label)?;
    Ok(CwResult {
        outcome,
        c_used,
        probes,
    })
}

/// One run of the inner optimization at a fixed trade-off constant.
/// Returns the smallest-distortion success of the run, if any. Exposed so
/// the binary search over constants can be checked against a dense grid.
pub fn cw_at_constant(
    net: &Network,
    x: &[f64],
    label: usize,
    target: usize,
    c: f64,
    cfg: &CwConfig,
) -> Result<Option<(Vec<f64>, f64)>> {
    Ok(match cw_inner(net, x, label, target, c, cfg)? {
        CwRun::Success { candidate, l2 } => Some((candidate, l2)),
        CwRun::Failure { .. } => None,
    })
}

enum CwRun {
    Success { candidate: Vec<f64>, l2: f64 },
    Failure { candidate: Vec<f64>, margin: f64 },
}

/// Gradient descent in `w` space for one trade-off constant. A candidate
/// counts as a success when the full attack predicate holds and its l2
/// distortion stays within `eps_max`; the best (smallest l2) success of
/// the run is kept.
fn cw_inner(
    net: &Network,
    x: &[f64],
    label: usize,
    target: usize,
    c: f64,
    cfg: &CwConfig,
) -> Result<CwRun> {
    let n = x.len();
    let (lo, hi) = (cfg.box_lo, cfg.box_hi);
    let half = (hi - lo) / 2.0;

    // graph: candidate -> logits -> margin objective
    let mut compiled = compile(net, 1, n)?;
    let g = &mut compiled.graph;
    let k = net.logits(x)?.len();
    let mut tm = vec![0.0; k];
    tm[target] = 1.0;
    // y_t via mask-sum; max over i != t via a large negative offset on the
    // target slot
    let t_mask = g.constant(Tensor::matrix(1, k, tm)?);
    let mut off = vec![0.0; k];
    off[target] = -1e30;
    let off_node = g.constant(Tensor::matrix(1, k, off)?);
    let yt_masked = g.mul(compiled.logits, t_mask);
    let yt = g.sum_all(yt_masked);
    let others = g.add(compiled.logits, off_node);
    let ymax = g.max_all(others);
    let neg_yt = g.scale(yt, -1.0);
    let margin_node = g.add(ymax, neg_yt);
    let f_node = g.clamp_min(margin_node, 0.0);

    let mut w: Vec<f64> = x
        .iter()
        .map(|&xi| {
            let t = ((2.0 * (xi - lo) / (hi - lo)) - 1.0).clamp(-1.0 + 1e-6, 1.0 - 1e-6);
            t.atanh()
        })
        .collect();

    let mut best_success: Option<(f64, Vec<f64>)> = None;
    let mut best_fail: Option<(f64, Vec<f64>)> = None;

    for _ in 0..cfg.inner_iters {
        let cand: Vec<f64> = w.iter().map(|&wi| lo + (wi.tanh() + 1.0) * half).collect();
        let bindings: HashMap<NodeId, Tensor> =
            compiled.bindings(net, Tensor::matrix(1, n, cand.clone())?)?;
        let eval = forward(&compiled.graph, &bindings)?;
        let margin = eval.value(margin_node).scalar_value()?;
        let grads = backward(&compiled.graph, &eval, f_node)?;
        let dlogits = grads.grad(compiled.input, &eval);

        let mut l2 = 0.0;
        for (&ci, &xi) in cand.iter().zip(x) {
            l2 += (ci - xi) * (ci - xi);
        }
        let l2 = l2.sqrt();

        let out = outcome_for(net, x, cand.clone(), label)?;
        if out.success && l2 <= cfg.eps_max {
            if best_success.as_ref().map_or(true, |(bl, _)| l2 < *bl) {
                best_success = Some((l2, cand.clone()));
            }
        } else if best_fail.as_ref().map_or(true, |(bm, _)| margin < *bm) {
            best_fail = Some((margin, cand.clone()));
        }

        // d obj / d cand = 2 (cand - x) + c * d f / d cand, then chain
        // through the tanh reparameterization
        for (j, wj) in w.iter_mut().enumerate() {
            let dc = 2.0 * (cand[j] - x[j]) + c * dlogits.data()[j];
            let th = wj.tanh();
            let dw = dc * half * (1.0 - th * th);
            *wj -= cfg.inner_lr * dw;
        }
    }

    Ok(match best_success {
        Some((l2, candidate)) => CwRun::Success { candidate, l2 },
        None => {
            let (margin, candidate) = best_fail.expect("at least one iterate");
            CwRun::Failure { candidate, margin }
        }
    })
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub epsilon: f64,
    pub attempted: usize,
    pub succeeded: usize,
    pub mean_l2: f64,
    pub mean_linf: f64,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("epsilon,attempted,succeeded,mean_l2,mean_linf\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epsilon, r.attempted, r.succeeded, r.mean_l2, r.mean_linf
        ));
    }
    s
}

/// Run an epsilon sweep of an attack over every correctly classified
/// input. Epsilons must be sorted ascending.
pub fn attack_sweep(
    net: &Network,
    inputs: &[&[f64]],
    labels: &[usize],
    epsilons: &[f64],
    mut run: impl FnMut(&[f64], usize, f64) -> Result<AttackOutcome>,
) -> Result<Vec<SweepRow>> {
    if epsilons.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("epsilons must be sorted ascending".into()));
    }
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut attempted = 0usize;
        let mut succeeded = 0usize;
        let mut sum_l2 = 0.0;
        let mut sum_linf = 0.0;
        for (&x, &label) in inputs.iter().zip(labels) {
            let (oc, _) = confidence(&net.logits(x)?)?;
            if oc != label {
                continue;
            }
            attempted += 1;
            let out = run(x, label, eps)?;
            if out.success {
                succeeded += 1;
            }
            sum_l2 += out.distortion_l2;
            sum_linf += out.distortion_linf;
        }
        rows.push(SweepRow {
            epsilon: eps,
            attempted,
            succeeded,
            mean_l2: if attempted > 0 { sum_l2 / attempted as f64 } else { 0.0 },
            mean_linf: if attempted > 0 { sum_linf / attempted as f64 } else { 0.0 },
        });
    }
    Ok(rows)
}
