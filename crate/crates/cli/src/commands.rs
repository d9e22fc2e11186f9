use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use latentclean::baselines::{
    eigen_relabel, knn_relabel, relabel_csv, select_representatives, DEFAULT_COMPONENTS, DEFAULT_FRACTION, DEFAULT_K,
};
use latentclean::cae::{
    project, reconstruction_psnr, CaeArchitecture, Checkpoint, EpochStats, KlFormula, Trainer, TrainingConfig,
    DEFAULT_LATENT_DIM,
};
use latentclean::cluster::{kdist_csv, ElbowRule, DEFAULT_MIN_POINTS, DEFAULT_SMOOTHING};
use latentclean::data::{dataset_files, inject_noise, load_dataset_dir, save_dataset_dir};
use latentclean::evaluation::{psnr_accuracy_sweep, spearman, sweep_csv, EvaluationReport};
use latentclean::linalg::pca_scatter_csv;
use latentclean::pipeline::{
    detect_and_remove, write_cleaned, DetectConfig, DetectionResult, EpsilonMode, REMOVAL_MANIFEST_FILE,
};
use latentclean::{Error, LabeledDataset, NoiseLedger, Result};

use crate::args::{Cli, Command, Common, DetectArgs, TrainArgs};
use crate::config::{parse_config, Settings};
use crate::manifest::{relative, write_manifest};

pub const NOISED_DIR: &str = "noised";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const CLEANED_DIR: &str = "cleaned";
pub const PLOTS_DIR: &str = "plots";
pub const DETECTION_FILE: &str = "detection.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const BASELINE_FILE: &str = "baseline.txt";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_FILE: &str = "sweep.txt";
pub const SUMMARY_FILE: &str = "summary.txt";

const DEFAULT_RATE: f64 = 0.15;
const DEFAULT_BUDGETS: &str = "5,15,30,60";

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Inject { common, dataset, rate, subset } => cmd_inject(&cli.data_dir, &common, dataset, rate, subset),
        Command::Train { common, train } => cmd_train(&common, &train),
        Command::Detect { common, detect } => cmd_detect(&common, &detect),
        Command::Evaluate { common } => cmd_evaluate(&common),
        Command::Baseline { common, method, fraction, k, components } => {
            cmd_baseline(&common, method, fraction, k, components)
        }
        Command::Sweep { common, train, detect, budgets } => cmd_sweep(&common, &train, &detect, budgets),
        Command::Report { common, from } => cmd_report(&common, &from),
    }
}

/// One command's view of the run directory: resolved settings plus every
/// file read and written, for the manifest.
struct Run {
    dir: PathBuf,
    settings: Settings,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn open(common: &Common) -> Result<Self> {
        let settings = Settings::load(common.config.as_deref())?;
        std::fs::create_dir_all(&common.run).map_err(|e| Error::io(&common.run, e))?;
        Ok(Run { dir: common.run.clone(), settings, inputs: Vec::new(), outputs: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn input(&mut self, path: PathBuf) {
        let label = relative(&path, &self.dir);
        self.inputs.push((label, path));
    }

    /// Path of an upstream artifact, or a validation error naming it.
    fn require(&mut self, name: &str, producer: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::Argument(format!("missing {} (run `latentclean {producer}` first)", path.display())));
        }
        if path.is_file() {
            self.input(path.clone());
        }
        Ok(path)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    /// Fresh output directory: stale files from an earlier run are dropped.
    fn fresh_dir(&self, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if path.exists() {
            std::fs::remove_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        }
        std::fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// `--seed`, else the config file, else the seed the run was injected with.
    fn seed(&mut self, flag: Option<u64>) -> Result<u64> {
        if flag.is_none() {
            if let Some(s) = upstream_config(&self.dir, "inject")?.get("seed") {
                let s: u64 = s.parse().map_err(|_| Error::Format(format!("inject manifest seed {s:?}")))?;
                return self.settings.value("seed", None, s);
            }
        }
        self.settings.required("seed", flag)
    }

    fn noised(&mut self) -> Result<LabeledDataset> {
        let dir = self.require(NOISED_DIR, "inject")?;
        for f in dataset_files(&dir)?.1 {
            self.input(f);
        }
        let mut ds = load_dataset_dir(&dir)?;
        if let Some(name) = upstream_config(&self.dir, "inject")?.get("dataset") {
            ds.name = name.clone();
        }
        Ok(ds)
    }

    /// Noised dataset with its ground truth restored from the ledger.
    fn noised_with_truth(&mut self) -> Result<(LabeledDataset, NoiseLedger)> {
        let ds = self.noised()?;
        let ledger = NoiseLedger::read(&self.require(LEDGER_FILE, "inject")?)?;
        Ok((ds.with_truth_from_ledger(&ledger)?, ledger))
    }

    fn checkpoint(&mut self) -> Result<Checkpoint<f32>> {
        Checkpoint::load(&self.require(CHECKPOINT_FILE, "train")?)
    }

    fn finish(self, command: &str) -> Result<()> {
        write_manifest(&self.dir, command, &self.settings, &self.inputs, &self.outputs)?;
        Ok(())
    }
}

/// `config.*` entries of `<run>/<command>.manifest`; empty when absent.
fn upstream_config(run: &Path, command: &str) -> Result<BTreeMap<String, String>> {
    let path = run.join(format!("{command}.manifest"));
    if !path.is_file() {
        return Ok(BTreeMap::new());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(parse_config(&text)?
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k.to_string(), v)))
        .collect())
}

/// Upstream settings as `command.key` pairs, for report echoes.
fn chain_config(run: &Path, commands: &[&str]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for c in commands {
        out.extend(upstream_config(run, c)?.into_iter().map(|(k, v)| (format!("{c}.{k}"), v)));
    }
    Ok(out)
}

fn resolve_dataset(data_dir: &Path, name: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(name);
    let dir = if direct.is_dir() { direct } else { data_dir.join(name) };
    if !dir.is_dir() {
        return Err(Error::Argument(format!(
            "dataset {name:?} not found (looked for {} and {})",
            name,
            data_dir.join(name).display()
        )));
    }
    Ok(dir)
}

fn training_config(
    s: &mut Settings,
    a: &TrainArgs,
    seed: u64,
    epochs: Option<usize>,
) -> Result<(TrainingConfig, usize)> {
    let d = TrainingConfig::default();
    let epochs = match epochs {
        Some(e) => e,
        None => s.value("epochs", a.epochs, d.epochs)?,
    };
    let kl = s.value("kl-formula", a.kl_formula.clone(), d.kl_formula.as_str().to_string())?;
    let cfg = TrainingConfig {
        epochs,
        batch_size: s.value("batch-size", a.batch_size, d.batch_size)?,
        learning_rate: s.value("lr", a.lr, d.learning_rate)?,
        beta_kl: s.value("beta-kl", a.beta_kl, d.beta_kl)?,
        rng_seed: seed,
        kl_formula: KlFormula::parse(&kl)?,
    };
    cfg.validate()?;
    let latent = s.value("latent-dim", a.latent_dim, DEFAULT_LATENT_DIM)?;
    Ok((cfg, latent))
}

fn detect_config(s: &mut Settings, a: &DetectArgs) -> Result<DetectConfig> {
    let mode: EpsilonMode = match a.epsilon.as_deref() {
        Some(e) => e.parse()?,
        None => s.value("epsilon", None, EpsilonMode::PerClass)?,
    };
    s.note("epsilon", mode);
    Ok(DetectConfig {
        min_points: s.value("min-points", a.min_points, DEFAULT_MIN_POINTS)?,
        mode,
        elbow: s.value("elbow", a.elbow.as_deref().map(str::parse).transpose()?, ElbowRule::default())?,
        window: s.value("window", a.window, DEFAULT_SMOOTHING)?,
    })
}

fn progress(start: Instant) -> impl FnMut(&EpochStats) {
    move |e| {
        eprintln!(
            "epoch {:>3}  mse {:.4}  kl {:.3}  psnr {:.2} dB  ({:.0?})",
            e.epoch,
            e.loss_mse,
            e.loss_kl,
            e.mean_psnr,
            start.elapsed()
        )
    }
}

fn cmd_inject(
    data_dir: &Path,
    common: &Common,
    dataset: Option<String>,
    rate: Option<f64>,
    subset: Option<usize>,
) -> Result<()> {
    let mut run = Run::open(common)?;
    let seed = run.settings.required("seed", common.seed)?;
    let name: String = run.settings.required("dataset", dataset)?;
    let dir = resolve_dataset(data_dir, &name)?;
    let rate = run.settings.value("rate", rate, DEFAULT_RATE)?;
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Argument(format!("--rate {rate} outside [0, 1]")));
    }
    let subset = run.settings.optional("subset", subset)?;
    for f in dataset_files(&dir)?.1 {
        // Source files live outside the run; label them by file name only.
        let label = format!("source/{}", f.file_name().map(|n| n.to_string_lossy()).unwrap_or_default());
        run.inputs.push((label, f));
    }
    let full = load_dataset_dir(&dir)?;
    run.settings.note("dataset", &full.name);
    let data = match subset {
        Some(n) => full.stratified_subset(n, seed)?,
        None => full,
    };
    let (noised, ledger) = inject_noise(&data, rate, seed)?;
    let out = run.fresh_dir(NOISED_DIR)?;
    run.outputs.extend(save_dataset_dir(&noised, &out)?);
    run.write(LEDGER_FILE, ledger.to_text())?;
    eprintln!("{}: {} of {} labels flipped", noised.name, ledger.len(), noised.len());
    run.finish("inject")
}

fn cmd_train(common: &Common, args: &TrainArgs) -> Result<()> {
    let mut run = Run::open(common)?;
    let data = run.noised()?;
    let seed = run.seed(common.seed)?;
    let (cfg, latent_dim) = training_config(&mut run.settings, args, seed, None)?;
    let arch = CaeArchitecture::new(data.shape, latent_dim)?;
    let mut trainer = Trainer::<f32>::new(arch.clone(), cfg.clone())?;
    trainer.train_until(data.image_view(), cfg.epochs, &mut progress(Instant::now()))?;
    let meta = vec![
        ("seed".to_string(), seed.to_string()),
        ("epochs".to_string(), cfg.epochs.to_string()),
        ("batch_size".to_string(), cfg.batch_size.to_string()),
        ("learning_rate".to_string(), cfg.learning_rate.to_string()),
        ("beta_kl".to_string(), cfg.beta_kl.to_string()),
        ("kl_formula".to_string(), cfg.kl_formula.as_str().to_string()),
    ];
    let ckpt = Checkpoint { arch, params: trainer.params, meta };
    run.write(CHECKPOINT_FILE, ckpt.to_bytes())?;
    run.write(HISTORY_FILE, latentclean::cae::history_csv(&trainer.history))?;
    run.finish("train")
}

fn detection_summary(result: &DetectionResult) -> String {
    let mut s = String::new();
    let opt = |v: Option<f64>| v.map_or("none".to_string(), |v| v.to_string());
    let _ = writeln!(s, "epsilon_mode={}", result.config.mode);
    let _ = writeln!(s, "elbow={}", result.config.elbow);
    let _ = writeln!(s, "min_points={}", result.config.min_points);
    let _ = writeln!(s, "window={}", result.config.window);
    let _ = writeln!(s, "global_epsilon={}", opt(result.global_estimate.map(|e| e.epsilon)));
    let _ = writeln!(s, "removed={}", result.removed.len());
    let _ = writeln!(s, "retained={}", result.retained.len());
    for c in &result.classes {
        let p = format!("class.{}", c.class);
        let _ = writeln!(s, "{p}.members={}", c.members.len());
        let _ = writeln!(s, "{p}.epsilon={}", opt(c.epsilon));
        if let Some(e) = c.estimate {
            let _ = writeln!(s, "{p}.elbow_index={}", e.index);
            let _ = writeln!(s, "{p}.flat={}", e.flat);
        }
        if let Some(a) = &c.assignment {
            let _ = writeln!(s, "{p}.clusters={}", a.cluster_count());
        }
        let _ = writeln!(s, "{p}.outliers={}", c.outliers.len());
        if let Some(w) = &c.warning {
            let _ = writeln!(s, "{p}.warning={w}");
        }
    }
    s
}

fn cmd_detect(common: &Common, args: &DetectArgs) -> Result<()> {
    let mut run = Run::open(common)?;
    let ckpt = run.checkpoint()?;
    let data = run.noised()?;
    let ledger = match run.path(LEDGER_FILE).is_file() {
        true => Some(NoiseLedger::read(&run.require(LEDGER_FILE, "inject")?)?),
        false => None,
    };
    run.seed(common.seed)?;
    let cfg = detect_config(&mut run.settings, args)?;
    let latents = project(data.image_view(), data.labels(), &ckpt.arch, &ckpt.params)?;
    let result = detect_and_remove(&data, &latents, &cfg)?;
    for w in result.warnings() {
        eprintln!("warning: {w}");
    }
    let cleaned = run.fresh_dir(CLEANED_DIR)?;
    run.outputs.extend(write_cleaned(&data, &result, &cleaned, ledger.as_ref())?);
    run.fresh_dir(PLOTS_DIR)?;
    let flipped = |i: usize| ledger.as_ref().is_some_and(|l| l.is_flipped(i));
    run.write(&format!("{PLOTS_DIR}/latent_pca.csv"), pca_scatter_csv(&latents, &flipped)?)?;
    for c in &result.classes {
        if !c.kdist.is_empty() {
            run.write(&format!("{PLOTS_DIR}/kdist_class{}.csv", c.class), kdist_csv(&c.kdist))?;
        }
        if let Some(a) = &c.assignment {
            run.write(&format!("{PLOTS_DIR}/clusters_class{}.csv", c.class), a.to_csv(&c.members)?)?;
        }
    }
    run.write(DETECTION_FILE, detection_summary(&result))?;
    eprintln!("removed {} of {} samples", result.removed.len(), data.len());
    run.finish("detect")
}

fn cmd_evaluate(common: &Common) -> Result<()> {
    let mut run = Run::open(common)?;
    let (data, ledger) = run.noised_with_truth()?;
    let removal = run.require(&format!("{CLEANED_DIR}/{REMOVAL_MANIFEST_FILE}"), "detect")?;
    let ckpt = run.checkpoint()?;
    run.seed(common.seed)?;
    let text = std::fs::read_to_string(&removal).map_err(|e| Error::io(&removal, e))?;
    let result = DetectionResult::from_removal_csv(&data, &text, DetectConfig::default())?;
    let psnr = reconstruction_psnr(data.image_view(), &ckpt.arch, &ckpt.params)?;
    let config = chain_config(&run.dir, &["inject", "train", "detect"])?;
    let report = EvaluationReport::build(&data, &result, Some(&ledger), Some(psnr.mean), config)?;
    let text = report.to_text();
    print!("{text}");
    run.write(REPORT_FILE, text)?;
    run.finish("evaluate")
}

fn accuracy(labels: &[u8], truth: &[u8]) -> f64 {
    labels.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / labels.len().max(1) as f64
}

fn cmd_baseline(
    common: &Common,
    method: Option<String>,
    fraction: Option<f64>,
    k: Option<usize>,
    components: Option<usize>,
) -> Result<()> {
    let mut run = Run::open(common)?;
    let (data, _) = run.noised_with_truth()?;
    let seed = run.seed(common.seed)?;
    let s = &mut run.settings;
    let method = s.value("method", method, "both".to_string())?;
    let methods: &[&str] = match method.as_str() {
        "knn" => &["knn"],
        "eigen" => &["eigen"],
        "both" => &["knn", "eigen"],
        other => return Err(Error::Argument(format!("--method must be knn, eigen or both, got {other:?}"))),
    };
    let fraction = s.value("fraction", fraction, DEFAULT_FRACTION)?;
    let k = s.value("k", k, DEFAULT_K)?;
    let components = s.value("components", components, DEFAULT_COMPONENTS)?;
    let reps = select_representatives(&data, fraction, seed)?;
    let mut text = String::new();
    let _ = writeln!(text, "dataset={}", data.name);
    let _ = writeln!(text, "samples={}", data.len());
    let _ = writeln!(text, "representatives={}", reps.len());
    let _ = writeln!(text, "noised_accuracy={}", accuracy(data.labels(), data.true_labels()));
    for &m in methods {
        let relabeled = match m {
            "knn" => knn_relabel(&data, &reps, k)?,
            _ => eigen_relabel(&data, &reps, components, k)?,
        };
        let dir_name = format!("baseline_{m}");
        let dir = run.fresh_dir(&dir_name)?;
        run.outputs.extend(save_dataset_dir(&relabeled, &dir)?);
        run.write(&format!("{dir_name}/relabel.csv"), relabel_csv(&data, &relabeled)?)?;
        let changed = relabeled.labels().iter().zip(data.labels()).filter(|(a, b)| a != b).count();
        let _ = writeln!(text, "{m}.accuracy={}", accuracy(relabeled.labels(), data.true_labels()));
        let _ = writeln!(text, "{m}.noisy_agreement={}", accuracy(relabeled.labels(), data.labels()));
        let _ = writeln!(text, "{m}.changed={changed}");
    }
    for (k, v) in chain_config(&run.dir, &["inject"])? {
        let _ = writeln!(text, "config.{k}={v}");
    }
    for (k, v) in run.settings.echo() {
        let _ = writeln!(text, "config.baseline.{k}={v}");
    }
    print!("{text}");
    run.write(BASELINE_FILE, text)?;
    run.finish("baseline")
}

fn parse_budgets(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|b| b.trim().parse::<usize>().map_err(|_| Error::Argument(format!("bad epoch budget {b:?}"))))
        .collect()
}

fn cmd_sweep(common: &Common, targs: &TrainArgs, dargs: &DetectArgs, budgets: Option<String>) -> Result<()> {
    let mut run = Run::open(common)?;
    let (data, _) = run.noised_with_truth()?;
    let seed = run.seed(common.seed)?;
    let budgets_text = run.settings.value("budgets", budgets, DEFAULT_BUDGETS.to_string())?;
    let budgets = parse_budgets(&budgets_text)?;
    let last = budgets.last().copied();
    let (cfg, latent_dim) = training_config(&mut run.settings, targs, seed, last)?;
    let detect = detect_config(&mut run.settings, dargs)?;
    let arch = CaeArchitecture::new(data.shape, latent_dim)?;
    let records = psnr_accuracy_sweep::<f32>(&data, &arch, &cfg, &budgets, &detect, &mut progress(Instant::now()))?;
    run.write(SWEEP_CSV, sweep_csv(&records))?;
    let psnr: Vec<f64> = records.iter().map(|r| r.mean_psnr).collect();
    let acc: Vec<f64> = records.iter().map(|r| r.retained_accuracy).collect();
    let rho = match spearman(&psnr, &acc) {
        Ok(r) => r.to_string(),
        Err(Error::Degenerate(_)) => "none".to_string(),
        Err(e) => return Err(e),
    };
    let mut text = String::new();
    let _ = writeln!(text, "dataset={}", data.name);
    let _ = writeln!(text, "budgets={budgets_text}");
    let _ = writeln!(text, "psnr_strictly_increasing={}", psnr.windows(2).all(|w| w[1] > w[0]));
    let _ = writeln!(text, "spearman_psnr_accuracy={rho}");
    for (k, v) in run.settings.echo() {
        let _ = writeln!(text, "config.{k}={v}");
    }
    print!("{text}");
    run.write(SWEEP_FILE, text)?;
    run.finish("sweep")
}

fn cmd_report(common: &Common, from: &[PathBuf]) -> Result<()> {
    let mut run = Run::open(common)?;
    let mut reports = Vec::with_capacity(from.len());
    for (i, dir) in from.iter().enumerate() {
        let path = dir.join(REPORT_FILE);
        if !path.is_file() {
            return Err(Error::Argument(format!("missing {} (run `latentclean evaluate` first)", path.display())));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        reports.push(EvaluationReport::from_text(&text)?);
        run.inputs.push((format!("run{i}/{REPORT_FILE}"), path));
    }
    if reports.len() < 3 {
        eprintln!("warning: {} run(s); at least 3 seeds are recommended", reports.len());
    }
    let seeds: Vec<String> = reports
        .iter()
        .map(|r| {
            let seed = r.config.iter().find(|(k, _)| k == "inject.seed");
            seed.map_or("none".to_string(), |(_, v)| v.clone())
        })
        .collect();
    run.settings.note("runs", reports.len());
    run.settings.note("seeds", seeds.join(","));
    let mut names: Vec<&str> = reports.iter().map(|r| r.dataset.as_str()).collect();
    names.dedup();
    let mut text = String::new();
    let _ = writeln!(text, "dataset={}", if names.len() == 1 { names[0] } else { "mixed" });
    let _ = writeln!(text, "runs={}", reports.len());
    let _ = writeln!(text, "seeds={}", seeds.join(","));
    type Field = fn(&EvaluationReport) -> Option<f64>;
    let fields: [(&str, Field); 10] = [
        ("samples", |r| Some(r.samples as f64)),
        ("retained", |r| Some(r.retained as f64)),
        ("jaccard_noised", |r| Some(r.jaccard_noised)),
        ("jaccard_denoised", |r| Some(r.jaccard_denoised)),
        ("performance", |r| Some(r.performance)),
        ("retained_accuracy", |r| Some(r.retained_accuracy)),
        ("removal_precision", |r| r.removal_precision),
        ("removal_recall", |r| r.removal_recall),
        ("mean_psnr", |r| r.mean_psnr),
        ("jaccard_strict_denoised", |r| Some(r.jaccard_strict_denoised)),
    ];
    for (name, get) in fields {
        let values: Vec<f64> = reports.iter().filter_map(get).collect();
        if values.is_empty() {
            let _ = writeln!(text, "{name}.mean=none");
            continue;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(text, "{name}.mean={mean}");
        let _ = writeln!(text, "{name}.min={min}");
        let _ = writeln!(text, "{name}.max={max}");
    }
    print!("{text}");
    run.write(SUMMARY_FILE, text)?;
    run.finish("report")
}
