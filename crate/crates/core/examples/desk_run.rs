//! Subset, inject, train, detect on one dataset directory and print the
//! detection quality: `desk_run <dataset-dir> <n> <epochs> <seed> [checkpoint]`.
//! An existing checkpoint is reused instead of training.

use std::path::Path;
use std::time::Instant;

use latentclean::cae::{project, CaeArchitecture, Checkpoint, Trainer, TrainingConfig, DEFAULT_LATENT_DIM};
use latentclean::data::{inject_noise, load_dataset_dir};
use latentclean::pipeline::{detect_and_remove, DetectConfig, EpsilonMode};

fn main() -> latentclean::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let dir = Path::new(&args[1]);
    let n: usize = args[2].parse().unwrap();
    let epochs: usize = args[3].parse().unwrap();
    let seed: u64 = args[4].parse().unwrap();
    let ckpt = args.get(5).map(Path::new);

    let data = load_dataset_dir(dir)?.stratified_subset(n, seed)?;
    let (noised, ledger) = inject_noise(&data, 0.15, seed)?;
    let arch = CaeArchitecture::new(data.shape, DEFAULT_LATENT_DIM)?;
    let params = match ckpt.filter(|p| p.exists()) {
        Some(p) => Checkpoint::<f32>::load(p)?.params,
        None => {
            let cfg = TrainingConfig { epochs, rng_seed: seed, ..Default::default() };
            let mut t = Trainer::<f32>::new(arch.clone(), cfg)?;
            let start = Instant::now();
            t.train_until(noised.image_view(), epochs, &mut |s| {
                eprintln!(
                    "epoch {} mse {:.3} kl {:.2} psnr {:.2} ({:.0?})",
                    s.epoch,
                    s.loss_mse,
                    s.loss_kl,
                    s.mean_psnr,
                    start.elapsed()
                )
            })?;
            if let Some(p) = ckpt {
                Checkpoint { arch: arch.clone(), params: t.params.clone(), meta: vec![] }.save(p)?;
            }
            t.params
        }
    };
    let latents = project(noised.image_view(), noised.labels(), &arch, &params)?;
    for mode in [EpsilonMode::PerClass, EpsilonMode::Global] {
        let r = detect_and_remove(&noised, &latents, &DetectConfig { mode, ..Default::default() })?;
        let kept = &r.retained;
        let correct = kept.iter().filter(|&&i| noised.labels()[i] == noised.true_labels()[i]).count();
        let hits = r.removed.iter().filter(|&&i| ledger.is_flipped(i)).count();
        println!(
            "{mode}: removed {} retained_acc {:.4} precision {:.3} recall {:.3}",
            r.removed.len(),
            correct as f64 / kept.len() as f64,
            hits as f64 / r.removed.len().max(1) as f64,
            hits as f64 / ledger.len() as f64
        );
        for c in &r.classes {
            println!(
                "  class {} n {} eps {:?} out {}",
                c.class,
                c.members.len(),
                c.epsilon.map(|e| (e * 100.0).round() / 100.0),
                c.outliers.len()
            );
        }
    }
    Ok(())
}
