//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria whose data is absent report FAIL with the reason but do not fail
//! the process; every other FAIL does. Set
//! `LATENTCLEAN_ACCEPTANCE_SKIP_TRAINING=1` to skip the criteria that train
//! models (2 to 5), e.g. while iterating on something else.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use latentclean::autodiff::ConvGeometry;
use latentclean::baselines::{eigen_relabel, knn_relabel, select_representatives, DEFAULT_COMPONENTS, DEFAULT_K};
use latentclean::cae::{
    build_loss, init_params, project, psnr, train, CaeArchitecture, KlFormula, TrainingConfig, Widths,
    DEFAULT_LATENT_DIM,
};
use latentclean::cluster::{dbscan, ClusterAssignment, DbscanParams, Role};
use latentclean::data::{inject_noise, load_dataset_dir, IDX_IMAGES_FILE};
use latentclean::evaluation::{jaccard, label_map, psnr_accuracy_sweep, retained_accuracy, spearman, EvaluationReport};
use latentclean::linalg::{covariance, eigen_top_n, symmetric_eigen, Matrix};
use latentclean::pipeline::{detect_and_remove, DetectConfig, DetectionResult};
use latentclean::{Graph, ImageShape, LabeledDataset, NoiseLedger, ParameterSet, Slot, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NOISE_RATE: f64 = 0.15;
const SEEDS: [u64; 3] = [1, 2, 3];
const DESK_SUBSET: usize = 5000;
const DESK_EPOCHS: usize = 30;
const CIFAR_SUBSET: usize = 3000;
const SWEEP_BUDGETS: [usize; 4] = [5, 15, 30, 60];

enum Outcome {
    Pass(String),
    Fail(String),
    /// Required data is not present; reported as FAIL, not fatal.
    Unavailable(String),
    Skipped,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn data_dir() -> PathBuf {
    std::env::var_os("LATENTCLEAN_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// The dataset directory, if it holds a file whose name starts with `marker`.
fn dataset(name: &str, marker: &str) -> Option<PathBuf> {
    let dir = data_dir().join(name);
    let found = std::fs::read_dir(&dir).ok()?.flatten().any(|e| e.file_name().to_string_lossy().starts_with(marker));
    found.then_some(dir)
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_latentclean"))
        .args(args)
        .env("LATENTCLEAN_DATA", data_dir())
        .output()
        .expect("running the latentclean binary")
}

fn cli_ok(args: &[&str]) -> Result<(), String> {
    let out = cli(args);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`{}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

// ---------------------------------------------------------------- 1

fn noise_floor() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    let mut any = false;
    for (name, expected_flips) in [("mnist", Some(9000)), ("fashion-mnist", None)] {
        let Some(_) = dataset(name, IDX_IMAGES_FILE) else { continue };
        any = true;
        let tmp = tempfile::tempdir().unwrap();
        let run = tmp.path().to_str().unwrap();
        if let Err(e) = cli_ok(&["inject", "--run", run, "--dataset", name, "--rate", "0.15", "--seed", "7"]) {
            return Outcome::Fail(e);
        }
        let ledger = NoiseLedger::read(&tmp.path().join("ledger.csv")).unwrap();
        let noised = load_dataset_dir(&tmp.path().join("noised")).unwrap().with_truth_from_ledger(&ledger).unwrap();
        let n = noised.len();
        let untouched =
            DetectionResult::from_removal_csv(&noised, "sample_index,class,epsilon_used\n", DetectConfig::default())
                .unwrap();
        let acc = retained_accuracy(&noised, &untouched).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let j = jaccard(&label_map(&all, noised.true_labels()), &label_map(&all, noised.labels())).unwrap();
        let rounding = 0.5 / n as f64 + 1e-12;
        let flips_ok = expected_flips.is_none_or(|f| ledger.len() == f);
        let this = (acc - 0.85).abs() <= rounding && (j - 0.85).abs() <= rounding && flips_ok;
        ok &= this;
        details.push(format!("{name}: n={n} flips={} retained_accuracy={acc} jaccard={j}", ledger.len()));
    }
    if !any {
        return Outcome::Unavailable("no IDX dataset under the data directory".into());
    }
    verdict(ok, details.join("; "))
}

// ---------------------------------------------------------------- 2, 3, 5

struct DeskScore {
    retained_accuracy: f64,
    performance: f64,
}

fn desk_data(dir: &Path, n: usize, seed: u64) -> (LabeledDataset, NoiseLedger) {
    let data = load_dataset_dir(dir).unwrap().stratified_subset(n, seed).unwrap();
    inject_noise(&data, NOISE_RATE, seed).unwrap()
}

fn train_cfg(epochs: usize, seed: u64) -> TrainingConfig {
    TrainingConfig { epochs, rng_seed: seed, ..Default::default() }
}

fn desk_run(dir: &Path, seed: u64) -> DeskScore {
    let start = Instant::now();
    let (noised, ledger) = desk_data(dir, DESK_SUBSET, seed);
    let arch = CaeArchitecture::new(noised.shape, DEFAULT_LATENT_DIM).unwrap();
    let (params, _) = train::<f32>(noised.image_view(), &arch, &train_cfg(DESK_EPOCHS, seed), &mut |_| {}).unwrap();
    let latents = project(noised.image_view(), noised.labels(), &arch, &params).unwrap();
    let result = detect_and_remove(&noised, &latents, &DetectConfig::default()).unwrap();
    let report = EvaluationReport::build(&noised, &result, Some(&ledger), None, Vec::new()).unwrap();
    println!(
        "    seed {seed}: removed {} retained_accuracy {:.4} P {:.4} removal precision {} recall {} ({:.0?})",
        result.removed.len(),
        report.retained_accuracy,
        report.performance,
        fmt_opt(report.removal_precision),
        fmt_opt(report.removal_recall),
        start.elapsed()
    );
    DeskScore { retained_accuracy: report.retained_accuracy, performance: report.performance }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("none".into(), |v| format!("{v:.3}"))
}

fn summarize(scores: &[(u64, DeskScore)], min_acc: f64, min_p: f64) -> Outcome {
    let ok = scores.iter().all(|(_, s)| s.retained_accuracy >= min_acc && s.performance > min_p);
    let acc: Vec<f64> = scores.iter().map(|(_, s)| s.retained_accuracy).collect();
    let p: Vec<f64> = scores.iter().map(|(_, s)| s.performance).collect();
    let range = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!("{mean:.4} [{lo:.4}, {hi:.4}]")
    };
    let seeds: Vec<String> = scores.iter().map(|(s, _)| s.to_string()).collect();
    verdict(
        ok,
        format!(
            "seeds {}: retained_accuracy {} (need >= {min_acc}), P {} (need > {min_p})",
            seeds.join(","),
            range(&acc),
            range(&p)
        ),
    )
}

/// PSNR against detection accuracy over epoch budgets, MNIST seed 1; also returns the 30-epoch score, which is
/// exactly what a fresh 30-epoch run of seed 1 produces (training continues
/// deterministically between budgets).
fn sweep(dir: &Path) -> (Outcome, DeskScore) {
    let start = Instant::now();
    let seed = SEEDS[0];
    let (noised, _) = desk_data(dir, DESK_SUBSET, seed);
    let arch = CaeArchitecture::new(noised.shape, DEFAULT_LATENT_DIM).unwrap();
    let cfg = train_cfg(*SWEEP_BUDGETS.last().unwrap(), seed);
    let records =
        psnr_accuracy_sweep::<f32>(&noised, &arch, &cfg, &SWEEP_BUDGETS, &DetectConfig::default(), &mut |_| {})
            .unwrap();
    for r in &records {
        println!(
            "    {:>2} epochs: mean PSNR {:.3} dB retained_accuracy {:.4} P {:.4} removed {}",
            r.epochs, r.mean_psnr, r.retained_accuracy, r.performance, r.removed
        );
    }
    println!("    sweep took {:.0?}", start.elapsed());
    let psnr: Vec<f64> = records.iter().map(|r| r.mean_psnr).collect();
    let acc: Vec<f64> = records.iter().map(|r| r.retained_accuracy).collect();
    let increasing = psnr.windows(2).all(|w| w[1] > w[0]);
    let rho = spearman(&psnr, &acc);
    let at30 = records.iter().find(|r| r.epochs == DESK_EPOCHS).unwrap();
    let score = DeskScore { retained_accuracy: at30.retained_accuracy, performance: at30.performance };
    let rho_text = rho.as_ref().map_or_else(|e| format!("undefined ({e})"), |r| format!("{r:.3}"));
    let ok = increasing && rho.as_ref().is_ok_and(|&r| r > 0.0);
    let outcome = verdict(
        ok,
        format!(
            "budgets {:?}: PSNR {} strictly increasing={increasing}, spearman(PSNR, retained_accuracy)={rho_text} (need > 0)",
            SWEEP_BUDGETS,
            psnr.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join(" < "),
        ),
    );
    (outcome, score)
}

// ---------------------------------------------------------------- 4

fn cifar_ordering() -> Outcome {
    let Some(dir) = dataset("cifar-10", "data_batch") else {
        return Outcome::Unavailable(format!(
            "CIFAR-10 not found ({}/cifar-10/data_batch*.bin); no offline source for it in this environment",
            data_dir().display()
        ));
    };
    let seed = SEEDS[0];
    let (noised, _) = desk_data(&dir, CIFAR_SUBSET, seed);
    let arch = CaeArchitecture::new(noised.shape, DEFAULT_LATENT_DIM).unwrap();
    let (params, _) = train::<f32>(noised.image_view(), &arch, &train_cfg(DESK_EPOCHS, seed), &mut |_| {}).unwrap();
    let latents = project(noised.image_view(), noised.labels(), &arch, &params).unwrap();
    let result = detect_and_remove(&noised, &latents, &DetectConfig::default()).unwrap();
    let cae = retained_accuracy(&noised, &result).unwrap();
    let reps = select_representatives(&noised, 0.1, seed).unwrap();
    let acc = |ds: &LabeledDataset| {
        ds.labels().iter().zip(ds.true_labels()).filter(|(a, b)| a == b).count() as f64 / ds.len() as f64
    };
    let knn = acc(&knn_relabel(&noised, &reps, DEFAULT_K).unwrap());
    let eigen = acc(&eigen_relabel(&noised, &reps, DEFAULT_COMPONENTS, DEFAULT_K).unwrap());
    verdict(cae > knn && cae > eigen, format!("CAE {cae:.4} vs KNN {knn:.4}, eigen {eigen:.4}"))
}

// ---------------------------------------------------------------- 6

/// Cores by counting (self included); clusters are connected components of
/// cores numbered by their lowest core index; a border point joins the
/// lowest-numbered cluster among its core neighbours.
fn reference_dbscan(points: &[Vec<f64>], eps: f64, m: usize) -> ClusterAssignment {
    let n = points.len();
    let close = |i: usize, j: usize| {
        let d2: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        d2 <= eps * eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| close(i, j)).count() >= m).collect();
    let mut component = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || component[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        component[s] = next;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if core[j] && component[j] == usize::MAX && close(i, j) {
                    component[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    let mut clusters = vec![None; n];
    let mut roles = vec![Role::Noise; n];
    for i in 0..n {
        if core[i] {
            clusters[i] = Some(component[i]);
            roles[i] = Role::Core;
        } else if let Some(c) = (0..n).filter(|&j| core[j] && close(i, j)).map(|j| component[j]).min() {
            clusters[i] = Some(c);
            roles[i] = Role::Border;
        }
    }
    ClusterAssignment { clusters, roles }
}

fn dbscan_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut mismatches = Vec::new();
    let mut noise_total = 0;
    for inst in 0..100 {
        let n = rng.random_range(1..=200);
        let dim = rng.random_range(1..=4);
        let blobs: Vec<Vec<f64>> =
            (0..rng.random_range(1..=4)).map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    (0..dim).map(|_| rng.random_range(-15.0..15.0)).collect()
                } else {
                    let b = &blobs[rng.random_range(0..blobs.len())];
                    b.iter().map(|c| c + rng.random_range(-1.5..1.5)).collect()
                }
            })
            .collect();
        let eps = rng.random_range(0.2..3.0);
        let m = rng.random_range(1..=8);
        let got = dbscan(&points, &DbscanParams::new(eps, m).unwrap()).unwrap();
        let want = reference_dbscan(&points, eps, m);
        noise_total += want.noise_indices().len();
        if got != want {
            mismatches.push(inst);
        }
    }
    verdict(
        mismatches.is_empty(),
        format!("100 instances (<= 200 points, {noise_total} noise points in total), mismatching: {mismatches:?}"),
    )
}

// ---------------------------------------------------------------- 7

type Build = Box<dyn Fn(&mut Graph<f64>, &ParameterSet<f64>) -> Var>;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn loss_of(build: &Build, params: &ParameterSet<f64>) -> f64 {
    let mut g = Graph::new();
    let loss = build(&mut g, params);
    g.value(loss).item().unwrap()
}

fn max_rel_error(build: &Build, params: &ParameterSet<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let mut g = Graph::new();
    let loss = build(&mut g, params);
    let grads = g.backward(loss, params).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for (name, layer) in params.iter() {
        for slot in [Slot::Weight, Slot::Bias] {
            let len = match slot {
                Slot::Weight => layer.weights.len(),
                Slot::Bias => layer.biases.len(),
            };
            for _ in 0..len.min(4) {
                let i = rng.random_range(0..len);
                let bumped = |delta: f64| {
                    let mut p = params.clone();
                    let l = p.get_mut(name).unwrap();
                    let t = if slot == Slot::Weight { &mut l.weights } else { &mut l.biases };
                    t.data_mut()[i] += delta;
                    loss_of(build, &p)
                };
                let numeric = (bumped(h) - bumped(-h)) / (2.0 * h);
                let analytic = grads.tensor(name, slot).unwrap().data()[i];
                worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6));
            }
        }
    }
    worst
}

/// sum(y * r) for a fixed random r.
fn weighted(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.input(random_tensor(&mut rng, g.value(y).shape().to_vec()));
    let prod = g.mul(y, r).unwrap();
    g.sum(prod)
}

fn activation(g: &mut Graph<f64>, v: Var, which: usize) -> Var {
    match which {
        0 => g.relu(v),
        1 => g.sigmoid(v),
        2 => g.exp(v),
        3 => g.square(v),
        _ => v,
    }
}

const ACTIVATIONS: [&str; 5] = ["relu", "sigmoid", "exp", "square", "identity"];

/// One random configuration of layer kind `kind`.
fn gradient_case(kind: usize, rng: &mut ChaCha8Rng) -> (String, Build, ParameterSet<f64>) {
    let mut p = ParameterSet::new();
    let n = rng.random_range(1..=2);
    let (h, w) = (rng.random_range(3..=6), rng.random_range(3..=6));
    let cin = rng.random_range(1..=3);
    let cout = rng.random_range(1..=4);
    let act = rng.random_range(0..ACTIVATIONS.len());
    let seed = rng.random();
    match kind {
        0 | 1 => {
            let k = rng.random_range(1..=3);
            let s = rng.random_range(1..=2);
            let pad = rng.random_range(0..=(k - 1) / 2);
            let transposed = kind == 1;
            let op = if transposed { rng.random_range(0..s) } else { 0 };
            p.insert("x", random_tensor(rng, vec![n, h, w, cin]), Tensor::zeros(vec![0]));
            let wshape = if transposed { vec![cin, k, k, cout] } else { vec![k, k, cin, cout] };
            p.insert("layer", random_tensor(rng, wshape), random_tensor(rng, vec![cout]));
            let geom = ConvGeometry::new(k, s, pad).with_output_padding(op);
            let build: Build = Box::new(move |g, p| {
                let x = g.param(p, "x", Slot::Weight).unwrap();
                let wv = g.param(p, "layer", Slot::Weight).unwrap();
                let b = g.param(p, "layer", Slot::Bias).unwrap();
                let y = if transposed {
                    g.conv_transpose2d(x, wv, b, geom).unwrap()
                } else {
                    g.conv2d(x, wv, b, geom).unwrap()
                };
                let y = activation(g, y, act);
                weighted(g, y, seed)
            });
            let label = if transposed { "transposed conv" } else { "conv" };
            (format!("{label} k{k} s{s} p{pad} op{op} {}", ACTIVATIONS[act]), build, p)
        }
        2 => {
            let units = rng.random_range(1..=6);
            p.insert("x", random_tensor(rng, vec![n, h, w, cin]), Tensor::zeros(vec![0]));
            p.insert("dense", random_tensor(rng, vec![h * w * cin, units]), random_tensor(rng, vec![units]));
            let build: Build = Box::new(move |g, p| {
                let x = g.param(p, "x", Slot::Weight).unwrap();
                let flat = g.flatten(x).unwrap();
                let wv = g.param(p, "dense", Slot::Weight).unwrap();
                let b = g.param(p, "dense", Slot::Bias).unwrap();
                let y = g.dense(flat, wv, b).unwrap();
                let y = activation(g, y, act);
                let y = g.reshape(y, vec![n, units]).unwrap();
                weighted(g, y, seed)
            });
            (format!("flatten + dense {units} {}", ACTIVATIONS[act]), build, p)
        }
        3 => {
            // conv -> relu -> flatten -> dense -> sigmoid, producing one scalar.
            p.insert("x", random_tensor(rng, vec![n, h, w, cin]), Tensor::zeros(vec![0]));
            p.insert("conv", random_tensor(rng, vec![3, 3, cin, cout]), random_tensor(rng, vec![cout]));
            let flat = h.div_ceil(2) * w.div_ceil(2) * cout;
            p.insert("dense", random_tensor(rng, vec![flat, 2]), random_tensor(rng, vec![2]));
            let build: Build = Box::new(move |g, p| {
                let x = g.param(p, "x", Slot::Weight).unwrap();
                let cw = g.param(p, "conv", Slot::Weight).unwrap();
                let cb = g.param(p, "conv", Slot::Bias).unwrap();
                let y = g.conv2d(x, cw, cb, ConvGeometry::new(3, 2, 1)).unwrap();
                let y = g.relu(y);
                let y = g.flatten(y).unwrap();
                let dw = g.param(p, "dense", Slot::Weight).unwrap();
                let db = g.param(p, "dense", Slot::Bias).unwrap();
                let y = g.dense(y, dw, db).unwrap();
                let y = g.sigmoid(y);
                weighted(g, y, seed)
            });
            ("conv s2 + relu + dense + sigmoid chain".into(), build, p)
        }
        _ => {
            let side = 4 * rng.random_range(1..=2);
            let shape = ImageShape { height: side, width: side, channels: rng.random_range(1..=2) };
            let widths =
                Widths { conv: std::array::from_fn(|_| rng.random_range(1..=3)), hidden: rng.random_range(2..=5) };
            let latent = rng.random_range(1..=3);
            let arch = CaeArchitecture::with_options(shape, latent, widths, 1e-3, 1e-3).unwrap();
            let mut params = init_params::<f64>(&arch, rng);
            // Zero biases sit ReLU pre-activations on the kink.
            for (_, l) in params.iter_mut() {
                for b in l.biases.data_mut() {
                    *b = rng.random_range(0.05..0.3);
                }
            }
            let mut dims = vec![n];
            dims.extend(shape.dims());
            let batch = Tensor::from_fn(dims, |_| rng.random_range(0.0..1.0));
            let eta = random_tensor(rng, vec![n, latent]);
            let formula = if rng.random_bool(0.5) { KlFormula::Standard } else { KlFormula::Literal };
            let cfg =
                TrainingConfig { beta_kl: rng.random_range(0.01..1.0), kl_formula: formula, ..Default::default() };
            let build: Build =
                Box::new(move |g, p| build_loss(g, &arch, p, batch.clone(), eta.clone(), &cfg).unwrap().loss);
            (format!("autoencoder objective {shape} latent {latent} {}", formula.as_str()), build, params)
        }
    }
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for i in 0..20 {
        let (name, build, params) = gradient_case(i % 5, &mut rng);
        let err = max_rel_error(&build, &params, &mut rng);
        worst = worst.max(err);
        if err > 1e-4 {
            failures.push(format!("#{i} {name}: {err:.2e}"));
        }
    }
    verdict(
        failures.is_empty(),
        format!("20 configurations (conv, transposed conv, dense, chains, full objective), worst relative error {worst:.2e}, failing: {failures:?}"),
    )
}

// ---------------------------------------------------------------- 8

fn eigen_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut residual, mut ortho, mut small) = (0.0f64, 0.0f64, 0.0f64);
    for inst in 0..20 {
        let k = rng.random_range(5..=25);
        // Mostly k < x (the small-system path), some k >= x.
        let x = if inst % 4 == 3 { rng.random_range(2..=k) } else { rng.random_range(k + 1..=k + 30) };
        let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..x).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let samples = Matrix::from_rows(&rows).unwrap();
        let n = rng.random_range(1..=k.min(x));
        let basis = eigen_top_n(&samples, n).unwrap();
        let sigma = covariance(&samples).unwrap();
        for (v, &lambda) in basis.vectors.iter().zip(&basis.values) {
            let sv = sigma.mat_vec(v).unwrap();
            let r: f64 = sv.iter().zip(v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
            residual = residual.max(r);
        }
        for (i, a) in basis.vectors.iter().enumerate() {
            for (j, b) in basis.vectors.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
                ortho = ortho.max((d - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        if k < x {
            let (direct, _) = symmetric_eigen(&sigma).unwrap();
            for (a, b) in basis.values.iter().zip(&direct) {
                small = small.max((a - b).abs());
            }
        }
    }
    verdict(
        residual <= 1e-5 && ortho <= 1e-6 && small <= 1e-6,
        format!("20 instances: max residual {residual:.2e} (<= 1e-5), orthonormality {ortho:.2e} (<= 1e-6), small-system eigenvalue gap {small:.2e} (<= 1e-6)"),
    )
}

// ---------------------------------------------------------------- 9

fn psnr_anchors() -> Outcome {
    let img = Tensor::new(vec![2, 2, 1], vec![0.0, 0.25, 0.5, 1.0]).unwrap();
    let same = psnr::<f64>(&img, &img, 8).unwrap();
    let black = Tensor::new(vec![1, 1, 1], vec![0.0]).unwrap();
    let white = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
    let worst = psnr::<f64>(&black, &white, 8).unwrap();
    verdict(
        same == f64::INFINITY && worst == 0.0,
        format!("identical images -> {same}, 1x1 max-error 8-bit -> {worst} dB"),
    )
}

// ---------------------------------------------------------------- 10

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn chain(run: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let r = run.to_str().unwrap();
    let agg = run.join("summary");
    cli_ok(&["inject", "--run", r, "--dataset", "mnist", "--subset", "400", "--rate", "0.15", "--seed", "11"])?;
    cli_ok(&["train", "--run", r, "--epochs", "2", "--batch-size", "64"])?;
    cli_ok(&["detect", "--run", r])?;
    cli_ok(&["evaluate", "--run", r])?;
    cli_ok(&["baseline", "--run", r])?;
    cli_ok(&["sweep", "--run", r, "--budgets", "1,2", "--batch-size", "64"])?;
    cli_ok(&["report", "--run", agg.to_str().unwrap(), "--from", r])?;
    Ok(tree(run))
}

fn determinism() -> Outcome {
    if dataset("mnist", IDX_IMAGES_FILE).is_none() {
        return Outcome::Unavailable("MNIST not found under the data directory".into());
    }
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ta, tb) = match (chain(a.path()), chain(b.path())) {
        (Ok(ta), Ok(tb)) => (ta, tb),
        (Err(e), _) | (_, Err(e)) => return Outcome::Fail(e),
    };
    let differing: Vec<&String> = ta.keys().filter(|k| tb.get(*k) != ta.get(*k)).collect();
    let same_files = ta.keys().eq(tb.keys());
    verdict(
        same_files && differing.is_empty(),
        format!(
            "inject/train/detect/evaluate/baseline/sweep/report chain run twice: {} files, differing: {differing:?}",
            ta.len()
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let skip_training = std::env::var("LATENTCLEAN_ACCEPTANCE_SKIP_TRAINING").is_ok_and(|v| v == "1");
    let started = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Outcome::Pass(d) => ("PASS", d.clone()),
            Outcome::Fail(d) => ("FAIL", d.clone()),
            Outcome::Unavailable(d) => ("FAIL", format!("data unavailable: {d}")),
            Outcome::Skipped => ("SKIP", "training criteria skipped by request".to_string()),
        };
        println!("criterion {n:>2} [{name}]: {tag}: {detail}");
        results.push((n, name, outcome));
    };

    record(1, "noise floor", noise_floor());

    if skip_training {
        for (n, name) in
            [(2, "MNIST improvement"), (3, "Fashion-MNIST improvement"), (4, "CIFAR-10 ordering"), (5, "PSNR trend")]
        {
            record(n, name, Outcome::Skipped);
        }
    } else {
        let mnist = dataset("mnist", IDX_IMAGES_FILE);
        let (trend, seed1) = match &mnist {
            Some(dir) => {
                println!("  running the MNIST epoch sweep (seed {}) ...", SEEDS[0]);
                let (o, s) = sweep(dir);
                (o, Some(s))
            }
            None => (Outcome::Unavailable("MNIST not found".into()), None),
        };
        let c2 = match (&mnist, seed1) {
            (Some(dir), Some(s1)) => {
                println!("    seed {}: taken from the sweep's 30-epoch state", SEEDS[0]);
                println!(
                    "    seed {}: retained_accuracy {:.4} P {:.4}",
                    SEEDS[0], s1.retained_accuracy, s1.performance
                );
                let mut scores = vec![(SEEDS[0], s1)];
                for &seed in &SEEDS[1..] {
                    scores.push((seed, desk_run(dir, seed)));
                }
                summarize(&scores, 0.90, 0.03)
            }
            _ => Outcome::Unavailable("MNIST not found".into()),
        };
        record(2, "MNIST improvement", c2);
        let c3 = match dataset("fashion-mnist", IDX_IMAGES_FILE) {
            Some(dir) => {
                println!("  running Fashion-MNIST ...");
                let scores: Vec<(u64, DeskScore)> = SEEDS.iter().map(|&s| (s, desk_run(&dir, s))).collect();
                summarize(&scores, 0.88, 0.02)
            }
            None => Outcome::Unavailable("Fashion-MNIST not found".into()),
        };
        record(3, "Fashion-MNIST improvement", c3);
        record(4, "CIFAR-10 ordering", cifar_ordering());
        record(5, "PSNR trend", trend);
    }

    record(6, "DBSCAN oracle", dbscan_oracle());
    record(7, "gradient checks", gradient_checks());
    record(8, "eigen properties", eigen_properties());
    record(9, "PSNR anchors", psnr_anchors());
    record(10, "determinism", determinism());

    let fatal: Vec<usize> = results.iter().filter(|(_, _, o)| matches!(o, Outcome::Fail(_))).map(|r| r.0).collect();
    let unavailable: Vec<usize> =
        results.iter().filter(|(_, _, o)| matches!(o, Outcome::Unavailable(_))).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, failing {fatal:?}, data unavailable {unavailable:?} ({:.0?})",
        results.iter().filter(|(_, _, o)| matches!(o, Outcome::Pass(_))).count(),
        started.elapsed()
    );
    if !fatal.is_empty() {
        std::process::exit(1);
    }
}
