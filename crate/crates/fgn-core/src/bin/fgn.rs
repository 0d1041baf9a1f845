//! Command-line driver: train, convert, attack, and eval experiments
//! described by flat key=value config files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use fgn_core::attacks::{attack_sweep, cw, fgsm, pgd, sweep_to_csv, AttackOutcome, CwConfig};
use fgn_core::config::Config;
use fgn_core::convert::convert_network;
use fgn_core::data::{self, Dataset};
use fgn_core::error::{Error, Result};
use fgn_core::eval::{
    accuracy, activity_heatmap, cross_section, histogram_confidences, orthonormal_pair,
    random_orthogonal, rejection_rate, write_ppm,
};
use fgn_core::layers::{
    Activation, Conv1dLayer, DenseLayer, FgnConv1dLayer, FgnDenseLayer, Layer, Network, Variance,
};
use fgn_core::model_io::{load_model, save_model};
use fgn_core::tensor::Tensor;
use fgn_core::train::{
    history_to_csv, init_fgn_layer, train, InitScheme, LossKind, OptimizerKind, TrainConfig,
};

#[derive(Parser)]
#[command(name = "fgn", about = "Finite Gaussian Neuron network experiments", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's out_dir or ".".
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write it with its training history.
    Train(Common),
    /// Convert a classical model to an FGN model.
    Convert(Common),
    /// Run an adversarial attack sweep against a model.
    Attack(Common),
    /// Evaluate a model: histograms, rejection, heatmaps, cross-sections.
    Eval(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Train(c) => run(c, cmd_train),
        Cmd::Convert(c) => run(c, cmd_convert),
        Cmd::Attack(c) => run(c, cmd_attack),
        Cmd::Eval(c) => run(c, cmd_eval),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } | Error::Numeric(_) => 3,
        Error::Tolerance(_) => 4,
        _ => 2,
    }
}

struct Ctx {
    cfg: Config,
    seed: u64,
    out: PathBuf,
}

fn run(common: &Common, f: fn(&Ctx) -> Result<()>) -> Result<()> {
    let cfg = Config::load(&common.config)?;
    let seed = match common.seed {
        Some(s) => s,
        None => cfg.get_or("seed", 0u64)?,
    };
    let out = common
        .out
        .clone()
        .or_else(|| cfg.get("out_dir").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    f(&Ctx { cfg, seed, out })
}

const DATASET_KEYS: &[&str] = &[
    "dataset",
    "dataset.n",
    "dataset.dim",
    "dataset.lo",
    "dataset.hi",
    "dataset.side",
    "dataset.images",
    "dataset.labels",
    "dataset.normalize",
    "dataset.scale",
    "dataset.shuffle_pixels",
    "dataset.seed",
];

fn build_dataset(ctx: &Ctx) -> Result<Dataset> {
    let cfg = &ctx.cfg;
    let seed = cfg.get_or("dataset.seed", ctx.seed)?;
    let n = cfg.get_or("dataset.n", 256usize)?;
    let kind = cfg.require("dataset")?;
    let mut ds = match kind {
        "toy_linear" => data::gen_toy_linear(n, seed)?,
        "toy_rings" => data::gen_toy_rings(n, seed)?,
        "full_random" => {
            let dim = cfg.require_parsed("dataset.dim")?;
            let lo = cfg.get_or("dataset.lo", 0.0)?;
            let hi = cfg.get_or("dataset.hi", 1.0)?;
            data::gen_full_random(n, dim, lo, hi, seed)?
        }
        "white_noise" => {
            let dim = cfg.require_parsed("dataset.dim")?;
            let lo = cfg.get_or("dataset.lo", -1.0)?;
            let hi = cfg.get_or("dataset.hi", 1.0)?;
            data::gen_white_noise(n, dim, lo, hi, seed)?
        }
        "synth_digits" => {
            let side = cfg.get_or("dataset.side", 8usize)?;
            data::gen_synthetic_digits(n, side, seed)?
        }
        "idx" => {
            let images = cfg.require("dataset.images")?;
            let labels = cfg.require("dataset.labels")?;
            let normalize = cfg.get_or("dataset.normalize", false)?;
            data::load_idx(Path::new(images), Path::new(labels), normalize)?
        }
        other => {
            return Err(Error::Parse {
                location: "dataset".into(),
                detail: format!("unknown dataset kind {:?}", other),
            })
        }
    };
    if cfg.get_or("dataset.shuffle_pixels", false)? {
        ds = data::shuffle_pixels(&ds, seed.wrapping_add(1));
    }
    if let Some(scale) = cfg.get_parsed::<f64>("dataset.scale")? {
        ds = ds.scaled(scale);
    }
    Ok(ds)
}

fn parse_activation(s: &str) -> Result<Activation> {
    Ok(match s {
        "tanh" => Activation::Tanh,
        "relu" => Activation::Relu,
        "identity" => Activation::Identity,
        other => {
            return Err(Error::Parse {
                location: "model.layers".into(),
                detail: format!("unknown activation {:?}", other),
            })
        }
    })
}

/// `model.layers` entries: `dense:OUT:ACT`, `fgn_dense:OUT:ACT`,
/// `conv1d:CH:K:STRIDE:DILATION:ACT`, `fgn_conv1d:CH:K:STRIDE:DILATION:ACT`.
fn build_network(spec: &str, input_dim: usize, seed: u64) -> Result<Network> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut cur = input_dim;
    let bad = |s: &str| Error::Parse {
        location: "model.layers".into(),
        detail: format!("bad layer spec {:?}", s),
    };
    for part in spec.split(',') {
        let part = part.trim();
        let fields: Vec<&str> = part.split(':').collect();
        let parse_n = |s: &str| s.parse::<usize>().map_err(|_| bad(part));
        match fields.as_slice() {
            ["dense", out, act] | ["fgn_dense", out, act] => {
                let out = parse_n(out)?;
                let activation = parse_activation(act)?;
                let scale = 1.0 / (cur as f64).sqrt();
                let weights = Tensor::from_fn(out, cur, |_, _| rng.gen_range(-scale..scale));
                let bias = vec![0.0; out];
                if fields[0] == "dense" {
                    layers.push(Layer::Dense(DenseLayer::new(weights, bias, activation)?));
                } else {
                    layers.push(Layer::FgnDense(FgnDenseLayer {
                        weights,
                        bias,
                        centers: Tensor::zeros(&[out, cur]),
                        variance: Variance::Spherical(vec![1.0; out]),
                        p_norm: 2.0,
                        activation,
                    }));
                }
                cur = out;
            }
            ["conv1d", ch, k, stride, dilation, act]
            | ["fgn_conv1d", ch, k, stride, dilation, act] => {
                let (ch, k) = (parse_n(ch)?, parse_n(k)?);
                let (stride, dilation) = (parse_n(stride)?, parse_n(dilation)?);
                let activation = parse_activation(act)?;
                let scale = 1.0 / (k as f64).sqrt();
                let kernels = Tensor::from_fn(ch, k, |_, _| rng.gen_range(-scale..scale));
                let bias = vec![0.0; ch];
                let out_len = fgn_core::autodiff::conv1d_out_len(cur, k, stride, dilation)
                    .ok_or_else(|| bad(part))?;
                if fields[0] == "conv1d" {
                    layers.push(Layer::Conv1d(Conv1dLayer {
                        kernels,
                        bias,
                        stride,
                        dilation,
                        activation,
                    }));
                } else {
                    layers.push(Layer::FgnConv1d(FgnConv1dLayer {
                        kernels,
                        bias,
                        centers: Tensor::zeros(&[ch, k]),
                        sigma_raw: vec![1.0; ch],
                        stride,
                        dilation,
                        activation,
                    }));
                }
                cur = ch * out_len;
            }
            _ => return Err(bad(part)),
        }
    }
    if layers.is_empty() {
        return Err(Error::Parse {
            location: "model.layers".into(),
            detail: "no layers".into(),
        });
    }
    Ok(Network::new(layers))
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut allowed = vec![
        "seed", "out_dir", "model.in", "model.layers", "model.input_dim", "init", "loss",
        "lambda", "l2", "optimizer", "lr", "epochs", "batch_size",
    ];
    allowed.extend_from_slice(DATASET_KEYS);
    cfg.check_keys(&allowed)?;

    let ds = build_dataset(ctx)?;
    let mut net = match cfg.get("model.in") {
        Some(p) => load_model(Path::new(p))?,
        None => {
            let input_dim = cfg.get_or("model.input_dim", ds.dim())?;
            build_network(cfg.require("model.layers")?, input_dim, ctx.seed)?
        }
    };

    if let Some(init) = cfg.get("init") {
        let scheme = if init == "from_data" {
            InitScheme::FromData(&ds)
        } else if let Some(v) = init.strip_prefix("large_sigma:") {
            InitScheme::LargeSigma(v.parse().map_err(|_| Error::Parse {
                location: "init".into(),
                detail: format!("bad sigma {:?}", v),
            })?)
        } else {
            return Err(Error::Parse {
                location: "init".into(),
                detail: format!("unknown scheme {:?}", init),
            });
        };
        for i in 0..net.layers.len() {
            if matches!(net.layers[i], Layer::FgnDense(_)) {
                init_fgn_layer(&mut net, i, scheme, ctx.seed.wrapping_add(i as u64))?;
            }
        }
    }

    let loss = match cfg.get("loss").unwrap_or("cross_entropy") {
        "cross_entropy" => LossKind::CrossEntropy,
        "mse" => LossKind::MeanSquaredError,
        other => {
            return Err(Error::Parse {
                location: "loss".into(),
                detail: format!("unknown loss {:?}", other),
            })
        }
    };
    let lr = cfg.get_or("lr", 1e-3)?;
    let optimizer = match cfg.get("optimizer").unwrap_or("adam") {
        "adam" => OptimizerKind::adam(lr),
        "sgd" => OptimizerKind::Sgd { lr },
        other => {
            return Err(Error::Parse {
                location: "optimizer".into(),
                detail: format!("unknown optimizer {:?}", other),
            })
        }
    };
    let tc = TrainConfig {
        loss,
        lambda: cfg.get_or("lambda", 0.0)?,
        l2_weight: cfg.get_or("l2", 0.0)?,
        optimizer,
        epochs: cfg.get_or("epochs", 10usize)?,
        batch_size: cfg.get_or("batch_size", 64usize)?,
        seed: ctx.seed,
    };

    let history = train(&mut net, &ds, &tc)?;
    save_model(&net, &ctx.out.join("model.bin"))?;
    std::fs::write(ctx.out.join("history.csv"), history_to_csv(&history))?;
    if let Some(last) = history.last() {
        println!(
            "trained {} epochs: loss {:.6} accuracy {:.4}",
            history.len(),
            last.loss,
            last.accuracy
        );
    } else {
        println!("wrote initialization snapshot (0 epochs)");
    }
    Ok(())
}

fn cmd_convert(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut allowed = vec!["seed", "out_dir", "model.in", "tol"];
    allowed.extend_from_slice(DATASET_KEYS);
    cfg.check_keys(&allowed)?;

    let net = load_model(Path::new(cfg.require("model.in")?))?;
    let refs_ds = build_dataset(ctx)?;
    let tol = cfg.get_or("tol", 1e-4)?;
    let (fgn, report) = convert_network(&net, &refs_ds.inputs, tol)?;
    save_model(&fgn, &ctx.out.join("model.bin"))?;
    let csv = format!(
        "sigma,max_deviation,search_iterations\n{},{},{}\n",
        report.sigma, report.max_deviation, report.search_iterations
    );
    std::fs::write(ctx.out.join("conversion.csv"), csv)?;
    println!(
        "converted: sigma {} max deviation {:.3e} in {} probes",
        report.sigma, report.max_deviation, report.search_iterations
    );
    Ok(())
}

fn cmd_attack(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut allowed = vec![
        "seed", "out_dir", "model.in", "attack", "epsilons", "alpha", "steps", "limit",
        "cw.eps_max", "cw.c_low", "cw.c_high", "cw.binary_steps", "cw.inner_iters",
        "cw.inner_lr", "cw.target", "cw.box_lo", "cw.box_hi",
    ];
    allowed.extend_from_slice(DATASET_KEYS);
    cfg.check_keys(&allowed)?;

    let net = load_model(Path::new(cfg.require("model.in")?))?;
    let ds = build_dataset(ctx)?;
    let limit = cfg.get_or("limit", ds.len())?.min(ds.len());
    let inputs: Vec<&[f64]> = (0..limit).map(|i| ds.input(i)).collect();
    let labels = &ds.labels[..limit];
    let epsilons = cfg
        .get_list("epsilons")?
        .ok_or_else(|| Error::Parse {
            location: "epsilons".into(),
            detail: "missing required key \"epsilons\"".into(),
        })?;

    let kind = cfg.get("attack").unwrap_or("fgsm");
    let mut dump = String::from("epsilon,index,label,original_class,adversarial_class,success,l2,linf,values\n");
    let mut dump_counts: Vec<usize> = vec![0; epsilons.len()];
    let mut record = |eps_idx: usize, eps: f64, idx: usize, label: usize, out: &AttackOutcome| {
        if dump_counts[eps_idx] < 16 {
            dump_counts[eps_idx] += 1;
            let vals: Vec<String> = out.adversarial_input.iter().map(|v| v.to_string()).collect();
            dump.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                eps,
                idx,
                label,
                out.original_class,
                out.adversarial_class,
                out.success as u8,
                out.distortion_l2,
                out.distortion_linf,
                vals.join(";")
            ));
        }
    };

    let rows = match kind {
        "fgsm" => {
            let mut idx_by_eps = vec![0usize; epsilons.len()];
            attack_sweep(&net, &inputs, labels, &epsilons, |x, l, e| {
                let out = fgsm(&net, x, l, e)?;
                let ei = epsilons.iter().position(|&v| v == e).unwrap();
                record(ei, e, idx_by_eps[ei], l, &out);
                idx_by_eps[ei] += 1;
                Ok(out)
            })?
        }
        "pgd" => {
            let steps = cfg.get_or("steps", 50usize)?;
            let alpha_cfg = cfg.get_parsed::<f64>("alpha")?;
            let mut idx_by_eps = vec![0usize; epsilons.len()];
            attack_sweep(&net, &inputs, labels, &epsilons, |x, l, e| {
                let alpha = alpha_cfg.unwrap_or(e / 30.0);
                let out = if e == 0.0 {
                    fgsm(&net, x, l, 0.0)?
                } else {
                    pgd(&net, x, l, e, alpha.min(e), steps)?
                };
                let ei = epsilons.iter().position(|&v| v == e).unwrap();
                record(ei, e, idx_by_eps[ei], l, &out);
                idx_by_eps[ei] += 1;
                Ok(out)
            })?
        }
        "cw" => {
            let base = CwConfig {
                eps_max: cfg.get_or("cw.eps_max", f64::INFINITY)?,
                c_low: cfg.get_or("cw.c_low", 1e-3)?,
                c_high: cfg.get_or("cw.c_high", 1e3)?,
                binary_steps: cfg.get_or("cw.binary_steps", 8usize)?,
                inner_iters: cfg.get_or("cw.inner_iters", 200usize)?,
                inner_lr: cfg.get_or("cw.inner_lr", 0.01)?,
                target: cfg.get_parsed("cw.target")?,
                box_lo: cfg.get_or("cw.box_lo", 0.0)?,
                box_hi: cfg.get_or("cw.box_hi", 1.0)?,
            };
            let mut idx_by_eps = vec![0usize; epsilons.len()];
            attack_sweep(&net, &inputs, labels, &epsilons, |x, l, e| {
                let mut c = base.clone();
                if e > 0.0 {
                    c.eps_max = e;
                }
                let res = cw(&net, x, l, &c)?;
                let ei = epsilons.iter().position(|&v| v == e).unwrap();
                record(ei, e, idx_by_eps[ei], l, &res.outcome);
                idx_by_eps[ei] += 1;
                Ok(res.outcome)
            })?
        }
        other => {
            return Err(Error::Parse {
                location: "attack".into(),
                detail: format!("unknown attack {:?}", other),
            })
        }
    };

    std::fs::write(ctx.out.join("sweep.csv"), sweep_to_csv(&rows))?;
    std::fs::write(ctx.out.join("adversarial.csv"), dump)?;
    for r in &rows {
        println!(
            "epsilon {}: {}/{} successful",
            r.epsilon, r.succeeded, r.attempted
        );
    }
    Ok(())
}

fn parse_adversarial_row(line: &str) -> Result<(usize, Vec<f64>)> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 9 {
        return Err(Error::Parse {
            location: "direction_file".into(),
            detail: format!("expected 9 columns, got {}", fields.len()),
        });
    }
    let idx = fields[1].parse().map_err(|_| Error::Parse {
        location: "direction_file".into(),
        detail: format!("bad index {:?}", fields[1]),
    })?;
    let mut vals = Vec::new();
    for v in fields[8].split(';') {
        vals.push(v.parse().map_err(|_| Error::Parse {
            location: "direction_file".into(),
            detail: format!("bad value {:?}", v),
        })?);
    }
    Ok((idx, vals))
}

fn cmd_eval(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut allowed = vec![
        "seed", "out_dir", "model.in", "mode", "bins", "theta", "resolution",
        "x_lo", "x_hi", "y_lo", "y_hi", "half_width", "center_index",
        "direction", "direction_file", "direction_row", "image_a", "image_b",
    ];
    allowed.extend_from_slice(DATASET_KEYS);
    cfg.check_keys(&allowed)?;

    let net = load_model(Path::new(cfg.require("model.in")?))?;
    let mode = cfg.get("mode").unwrap_or("histogram");
    match mode {
        "histogram" => {
            let ds = build_dataset(ctx)?;
            let bins = cfg.get_or("bins", 10usize)?;
            let h = histogram_confidences(&net, &ds, bins)?;
            std::fs::write(ctx.out.join("histogram.csv"), h.to_csv())?;
            println!("fraction_above_0.5 {:.4}", h.fraction_above(0.5));
        }
        "rejection" => {
            let ds = build_dataset(ctx)?;
            let theta = cfg.get_or("theta", 0.5)?;
            let r = rejection_rate(&net, &ds, theta)?;
            println!("rejection_rate {:.4}", r);
        }
        "accuracy" => {
            let ds = build_dataset(ctx)?;
            println!("accuracy {:.4}", accuracy(&net, &ds)?);
        }
        "heatmap" => {
            let res = cfg.get_or("resolution", 100usize)?;
            let xr = (cfg.get_or("x_lo", -3.0)?, cfg.get_or("x_hi", 3.0)?);
            let yr = (cfg.get_or("y_lo", -3.0)?, cfg.get_or("y_hi", 3.0)?);
            let grid = activity_heatmap(&net, xr, yr, res)?;
            std::fs::write(ctx.out.join("heatmap.csv"), grid.to_csv())?;
            write_ppm(&grid, net.out_dim().unwrap_or(10), &ctx.out.join("heatmap.ppm"))?;
            println!("heatmap {}x{} written", res, res);
        }
        "cross_section" => {
            let ds = build_dataset(ctx)?;
            let res = cfg.get_or("resolution", 50usize)?;
            let half = cfg.get_or("half_width", 1.0)?;
            let ci = cfg.get_or("center_index", 0usize)?;
            if ci >= ds.len() {
                return Err(Error::InvalidArgument(format!(
                    "center_index {} out of {} samples",
                    ci,
                    ds.len()
                )));
            }
            let center = ds.input(ci).to_vec();
            let d1: Vec<f64> = match cfg.get("direction").unwrap_or("random") {
                "random" => {
                    let mut rng = Xoshiro256PlusPlus::seed_from_u64(ctx.seed);
                    (0..center.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
                }
                "adversarial" => {
                    let file = cfg.require("direction_file")?;
                    let row = cfg.get_or("direction_row", 0usize)?;
                    let text = std::fs::read_to_string(file)?;
                    let line = text.lines().nth(row + 1).ok_or_else(|| Error::Parse {
                        location: file.to_string(),
                        detail: format!("no data row {}", row),
                    })?;
                    let (idx, adv) = parse_adversarial_row(line)?;
                    if idx >= ds.len() || adv.len() != center.len() {
                        return Err(Error::InvalidArgument(
                            "direction file does not match the dataset".into(),
                        ));
                    }
                    adv.iter().zip(ds.input(idx)).map(|(&a, &o)| a - o).collect()
                }
                "image_pair" => {
                    let a = cfg.require_parsed::<usize>("image_a")?;
                    let b = cfg.require_parsed::<usize>("image_b")?;
                    ds.input(b).iter().zip(ds.input(a)).map(|(&y, &x)| y - x).collect()
                }
                other => {
                    return Err(Error::Parse {
                        location: "direction".into(),
                        detail: format!("unknown direction mode {:?}", other),
                    })
                }
            };
            let d2 = random_orthogonal(&d1, ctx.seed.wrapping_add(17))?;
            let (e1, e2) = orthonormal_pair(&d1, &d2)?;
            let grid = cross_section(&net, &center, &e1, &e2, half, res)?;
            std::fs::write(ctx.out.join("cross_section.csv"), grid.to_csv())?;
            write_ppm(&grid, net.out_dim().unwrap_or(10), &ctx.out.join("cross_section.ppm"))?;
            println!("cross section {}x{} written", res, res);
        }
        other => {
            return Err(Error::Parse {
                location: "mode".into(),
                detail: format!("unknown mode {:?}", other),
            })
        }
    }
    Ok(())
}
