use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "latentclean", version, about = "Detect and remove mislabeled training samples")]
pub struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory holding one subdirectory per dataset.
    #[arg(long, global = true, env = "LATENTCLEAN_DATA", default_value = "data")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run directory; every output goes here.
    #[arg(long)]
    pub run: PathBuf,
    /// `key=value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta_kl: Option<f64>,
    /// `standard` or `literal`.
    #[arg(long)]
    pub kl_formula: Option<String>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct DetectArgs {
    #[arg(long)]
    pub min_points: Option<usize>,
    /// `auto-per-class`, `auto-global`, or a fixed radius.
    #[arg(long)]
    pub epsilon: Option<String>,
    /// Knee of the k-distance curve: `chord` or `second-difference`.
    #[arg(long)]
    pub elbow: Option<String>,
    /// Moving-average width of the second-difference elbow.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Copy a dataset into the run directory with symmetric label noise.
    Inject {
        #[command(flatten)]
        common: Common,
        /// Dataset name under the data directory, or a dataset directory.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        rate: Option<f64>,
        /// Seeded class-stratified subsample size.
        #[arg(long)]
        subset: Option<usize>,
    },
    /// Train the autoencoder on the noised images.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Cluster latent means per class and write the cleaned dataset.
    Detect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        detect: DetectArgs,
    },
    /// Score the detection against the injection ledger.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// KNN relabeling baselines on raw pixels and on an eigenspace.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// `knn`, `eigen` or `both`.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        components: Option<usize>,
    },
    /// Reconstruction quality against detection accuracy over epoch budgets.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        detect: DetectArgs,
        /// Comma-separated ascending epoch budgets.
        #[arg(long)]
        budgets: Option<String>,
    },
    /// Mean, min and max of evaluation reports across runs (seeds).
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directories holding a `report.txt`.
        #[arg(long = "from", required = true, num_args = 1..)]
        from: Vec<PathBuf>,
    },
}
