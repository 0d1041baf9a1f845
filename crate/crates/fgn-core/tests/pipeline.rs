//! End-to-end runs of the `fgn` binary: train, convert, attack, eval, exit
//! codes, and determinism.

use std::path::Path;
use std::process::{Command, Output};

fn fgn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fgn"))
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    fgn()
        .arg(sub)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TRAIN_TOY: &str = "\
dataset = toy_linear
dataset.n = 400
model.layers = dense:8:tanh,dense:2:identity
epochs = 40
lr = 0.02
batch_size = 32
seed = 3
";

fn train_toy(dir: &Path) -> std::path::PathBuf {
    let cfg = write_cfg(dir, "train.cfg", TRAIN_TOY);
    let out = run("train", &cfg, dir, &[]);
    assert_ok(&out);
    dir.join("model.bin")
}

#[test]
fn train_writes_model_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(dir.path());
    assert!(model.exists());
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,loss,accuracy,sigma_min,sigma_median,sigma_max"));
    assert_eq!(history.lines().count(), 41);
    // reported accuracy from eval matches a decent fit
    let cfg = write_cfg(
        dir.path(),
        "acc.cfg",
        &format!(
            "dataset = toy_linear\ndataset.n = 400\nseed = 3\nmode = accuracy\nmodel.in = {}\n",
            model.display()
        ),
    );
    let out = run("eval", &cfg, dir.path(), &[]);
    assert_ok(&out);
    let line = stdout(&out);
    let acc: f64 = line.trim().strip_prefix("accuracy ").unwrap().parse().unwrap();
    assert!(acc >= 0.95, "accuracy {}", acc);
}

#[test]
fn zero_epoch_train_writes_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "snap.cfg",
        "dataset = toy_linear\ndataset.n = 50\nmodel.layers = dense:4:tanh,dense:2:identity\nepochs = 0\n",
    );
    let out = run("train", &cfg, dir.path(), &[]);
    assert_ok(&out);
    assert!(stdout(&out).contains("initialization snapshot"));
    assert!(dir.path().join("model.bin").exists());
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1, "header only");
}

#[test]
fn training_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "t.cfg", TRAIN_TOY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_ok(&run("train", &cfg, &a, &["--seed", "9"]));
    assert_ok(&run("train", &cfg, &b, &["--seed", "9"]));
    assert_eq!(
        std::fs::read(a.join("model.bin")).unwrap(),
        std::fs::read(b.join("model.bin")).unwrap()
    );
    let c = dir.path().join("c");
    assert_ok(&run("train", &cfg, &c, &["--seed", "10"]));
    assert_ne!(
        std::fs::read(a.join("model.bin")).unwrap(),
        std::fs::read(c.join("model.bin")).unwrap()
    );
}

#[test]
fn convert_then_attack_then_cross_section() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(dir.path());

    // convert against reference points from the same distribution
    let conv_dir = dir.path().join("conv");
    let cfg = write_cfg(
        dir.path(),
        "convert.cfg",
        &format!(
            "dataset = toy_linear\ndataset.n = 200\nseed = 3\nmodel.in = {}\ntol = 1e-4\n",
            model.display()
        ),
    );
    assert_ok(&run("convert", &cfg, &conv_dir, &[]));
    let conv_csv = std::fs::read_to_string(conv_dir.join("conversion.csv")).unwrap();
    assert!(conv_csv.starts_with("sigma,max_deviation,search_iterations"));

    // FGSM sweep on the classical model; epsilon 0 must never succeed
    let atk_dir = dir.path().join("atk");
    let cfg = write_cfg(
        dir.path(),
        "attack.cfg",
        &format!(
            "dataset = toy_linear\ndataset.n = 60\nseed = 3\nmodel.in = {}\n\
             attack = fgsm\nepsilons = 0, 0.5\nlimit = 40\n",
            model.display()
        ),
    );
    assert_ok(&run("attack", &cfg, &atk_dir, &[]));
    let sweep = std::fs::read_to_string(atk_dir.join("sweep.csv")).unwrap();
    let mut lines = sweep.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epsilon,attempted,succeeded,mean_l2,mean_linf"
    );
    let eps0: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(eps0[0], "0");
    assert_eq!(eps0[2], "0", "epsilon 0 cannot flip any prediction");
    let adv = std::fs::read_to_string(atk_dir.join("adversarial.csv")).unwrap();
    assert!(adv.lines().count() > 1);

    // reuse the dump as a cross-section direction
    let xs_dir = dir.path().join("xs");
    let adv_rows: Vec<&str> = adv.lines().skip(1).collect();
    // pick a row from the epsilon=0.5 block so the direction is nonzero
    let row = adv_rows.iter().position(|l| l.starts_with("0.5,")).unwrap();
    let cfg = write_cfg(
        dir.path(),
        "xs.cfg",
        &format!(
            "dataset = toy_linear\ndataset.n = 60\nseed = 3\nmodel.in = {}\n\
             mode = cross_section\nresolution = 12\nhalf_width = 1.5\n\
             direction = adversarial\ndirection_file = {}\ndirection_row = {}\n",
            model.display(),
            atk_dir.join("adversarial.csv").display(),
            row
        ),
    );
    assert_ok(&run("eval", &cfg, &xs_dir, &[]));
    let grid = std::fs::read_to_string(xs_dir.join("cross_section.csv")).unwrap();
    assert_eq!(grid.lines().count(), 12 * 12 + 1);
    let ppm = std::fs::read(xs_dir.join("cross_section.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n"));
}

#[test]
fn histogram_reports_fraction_above_half() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(dir.path());
    let cfg = write_cfg(
        dir.path(),
        "hist.cfg",
        &format!(
            "dataset = full_random\ndataset.n = 100\ndataset.dim = 2\n\
             dataset.lo = -3\ndataset.hi = 3\nseed = 11\nmodel.in = {}\nbins = 10\n",
            model.display()
        ),
    );
    let out = run("eval", &cfg, dir.path(), &[]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("fraction_above_0.5 "), "stdout: {}", text);
    let hist = std::fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    assert_eq!(hist.lines().count(), 11, "10 bins plus header");
}

#[test]
fn heatmap_covers_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(dir.path());
    let cfg = write_cfg(
        dir.path(),
        "hm.cfg",
        &format!(
            "model.in = {}\nmode = heatmap\nresolution = 9\n\
             x_lo = -2\nx_hi = 2\ny_lo = -2\ny_hi = 2\n",
            model.display()
        ),
    );
    assert_ok(&run("eval", &cfg, dir.path(), &[]));
    let grid = std::fs::read_to_string(dir.path().join("heatmap.csv")).unwrap();
    assert_eq!(grid.lines().count(), 9 * 9 + 1);
    assert!(dir.path().join("heatmap.ppm").exists());
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "bad.cfg",
        "dataset = toy_linear\nmodel.layers = dense:2:identity\nepoochs = 3\n",
    );
    let out = run("train", &cfg, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoochs"));
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("train", &dir.path().join("nope.cfg"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unattainable_conversion_tolerance_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(dir.path());
    let cfg = write_cfg(
        dir.path(),
        "tight.cfg",
        &format!(
            // reference points this far out keep the gate measurably below 1
            // at every sigma the doubling search can reach
            "dataset = full_random\ndataset.n = 20\ndataset.dim = 2\n\
             dataset.lo = 1e11\ndataset.hi = 1e12\nseed = 3\nmodel.in = {}\ntol = 1e-18\n",
            model.display()
        ),
    );
    let out = run("convert", &cfg, &dir.path().join("c"), &[]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn thread_cap_is_respected() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_toy(dir.path());
    let cfg = write_cfg(
        dir.path(),
        "hist.cfg",
        &format!(
            "dataset = full_random\ndataset.n = 64\ndataset.dim = 2\nseed = 5\nmodel.in = {}\n",
            model.display()
        ),
    );
    let out = fgn()
        .arg("eval")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .env("FGN_THREADS", "1")
        .output()
        .unwrap();
    assert_ok(&out);
}
