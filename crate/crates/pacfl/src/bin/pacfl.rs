//! Thin command-line front end over the pacfl library. Each subcommand is a
//! stage of the pipeline; `train` runs it end to end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pacfl::config::ExperimentConfig;
use pacfl::divergence;
use pacfl::error::Error;
use pacfl::federation::Mode;
use pacfl::runner;

#[derive(Parser)]
#[command(
    name = "pacfl",
    about = "Clustered federated learning from principal angles between client data subspaces",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (sectioned key = value text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Partition the dataset into client shards and write the manifest.
    Partition(CommonArgs),
    /// Compute per-client subspace signatures and write them as .pacs files.
    Signature(CommonArgs),
    /// Build the proximity matrix and cluster it at the configured beta.
    Cluster(CommonArgs),
    /// Run the full federation and write every artifact.
    Train(CommonArgs),
    /// Re-cluster and re-train across the configured list of betas.
    SweepBeta(CommonArgs),
    /// Assign held-out clients to clusters from saved state and fine-tune.
    Newcomer {
        #[command(flatten)]
        common: CommonArgs,
        /// Saved state directory (defaults to <output>/state).
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Compare angle metrics with Bhattacharyya, KL, and MMD on Gaussian pairs.
    ConsistencyReport {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of seeded repetitions.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Sample dimension.
        #[arg(long, default_value_t = 20)]
        dim: usize,
        /// Samples per distribution.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Signature rank.
        #[arg(long, default_value_t = 3)]
        p: usize,
    },
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

/// PACFL_THREADS caps worker threads; 0 or unset means automatic.
fn configure_threads() {
    if let Ok(raw) = std::env::var("PACFL_THREADS") {
        if let Ok(n) = raw.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(output) = &common.output {
        cfg.output_dir = output.clone();
    }
    Ok(cfg)
}

fn ensure_output(cfg: &ExperimentConfig) -> Result<(), Error> {
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::io(cfg.output_dir.display().to_string(), e))
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Partition(common) => {
            let cfg = load_config(&common)?;
            ensure_output(&cfg)?;
            let shards = runner::build_shards(&cfg)?;
            let path = cfg.output_dir.join("manifest.txt");
            let mut file = std::fs::File::create(&path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            pacfl::partition::write_manifest(&shards, &mut file)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            println!("partitioned {} clients -> {}", shards.len(), path.display());
            Ok(())
        }
        Command::Signature(common) => {
            let cfg = load_config(&common)?;
            ensure_output(&cfg)?;
            let shards = runner::build_shards(&cfg)?;
            let sigs = runner::signatures_for(&shards, cfg.train.p, cfg.train.normalize)?;
            let dir = cfg.output_dir.join("signatures");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
            for sig in &sigs {
                sig.save(&dir.join(format!("{}.pacs", sig.client_id())))?;
            }
            println!("wrote {} signatures -> {}", sigs.len(), dir.display());
            Ok(())
        }
        Command::Cluster(common) => {
            let cfg = load_config(&common)?;
            ensure_output(&cfg)?;
            let shards = runner::build_shards(&cfg)?;
            let mut pipeline = runner::Pipeline::new(shards, cfg.train.clone(), Mode::Pacfl);
            let proximity = pipeline.proximity()?.clone();
            let (dendrogram, state) = pacfl::clustering::hierarchical_cluster(
                &proximity,
                cfg.train.beta,
                cfg.train.linkage,
            )?;
            proximity.save_csv(&cfg.output_dir.join("proximity.csv"))?;
            state.save_csv(&cfg.output_dir.join("clusters.csv"))?;
            let dpath = cfg.output_dir.join("dendrogram.txt");
            let mut file = std::fs::File::create(&dpath)
                .map_err(|e| Error::io(dpath.display().to_string(), e))?;
            dendrogram
                .write_table(&mut file)
                .map_err(|e| Error::io(dpath.display().to_string(), e))?;
            println!(
                "clustered {} clients into {} clusters at beta = {}",
                state.client_ids().len(),
                state.z(),
                cfg.train.beta
            );
            Ok(())
        }
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            let out = runner::run_experiment(&cfg)?;
            println!(
                "trained: mode = {}, z = {}, mean final accuracy = {:.4}",
                cfg.mode.as_str(),
                out.run.state.z(),
                out.run.mean_final_accuracy()
            );
            println!("artifacts in {}", out.output_dir.display());
            Ok(())
        }
        Command::SweepBeta(common) => {
            let cfg = load_config(&common)?;
            let betas = cfg
                .beta_sweep
                .clone()
                .ok_or_else(|| Error::Config("config has no [sweep] betas list".into()))?;
            ensure_output(&cfg)?;
            let all = runner::build_shards(&cfg)?;
            let train_count = all.len() - cfg.holdout;
            let mut pipeline =
                runner::Pipeline::new(all[..train_count].to_vec(), cfg.train.clone(), cfg.mode);
            let rows = pipeline.sweep(&betas)?;
            println!("beta,z,mean_accuracy");
            for row in &rows {
                println!("{},{},{}", row.beta, row.z, row.mean_accuracy);
            }
            let path = cfg.output_dir.join("sweep.csv");
            let mut text = String::from("beta,z,mean_accuracy\n");
            for row in &rows {
                text.push_str(&format!("{},{},{}\n", row.beta, row.z, row.mean_accuracy));
            }
            std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
            Ok(())
        }
        Command::Newcomer { common, state } => {
            let cfg = load_config(&common)?;
            if cfg.holdout == 0 {
                println!("no held-out newcomers configured; nothing to do");
                return Ok(());
            }
            let state_dir = state.unwrap_or_else(|| cfg.output_dir.join("state"));
            let saved = runner::load_state(&state_dir)?;
            let all = runner::build_shards(&cfg)?;
            let newcomers = all[all.len() - cfg.holdout..].to_vec();
            let report = runner::newcomer_workflow(&saved, &newcomers, cfg.fine_tune_epochs)?;
            ensure_output(&cfg)?;
            let mut text =
                String::from("client_id,cluster_id,new_cluster,accuracy_before,accuracy_after\n");
            println!("client_id,cluster_id,new_cluster,accuracy_before,accuracy_after");
            for row in &report.rows {
                let line = format!(
                    "{},{},{},{},{}",
                    row.client_id,
                    row.cluster_id,
                    row.new_cluster,
                    row.accuracy_before,
                    row.accuracy_after
                );
                println!("{line}");
                text.push_str(&line);
                text.push('\n');
            }
            let path = cfg.output_dir.join("newcomers.csv");
            std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
            Ok(())
        }
        Command::ConsistencyReport {
            common,
            seeds,
            dim,
            samples,
            p,
        } => {
            let base_seed = common.seed.unwrap_or(0);
            let seed_list: Vec<u64> = (0..seeds as u64).map(|s| base_seed + s).collect();
            let rows = divergence::consistency_report(dim, samples, p, &seed_list)?;
            println!("seed,variant,min_angle,trace_sum,bhattacharyya,kl,mmd");
            let mut text = String::from("seed,variant,min_angle,trace_sum,bhattacharyya,kl,mmd\n");
            for row in &rows {
                let line = format!(
                    "{},{},{},{},{},{},{}",
                    row.seed,
                    row.variant,
                    row.min_angle,
                    row.trace_sum,
                    row.bhattacharyya,
                    row.kl,
                    row.mmd
                );
                println!("{line}");
                text.push_str(&line);
                text.push('\n');
            }
            // Ordering verdict per seed: a larger perturbation should read as
            // a larger distance under every measure.
            let mut mean_ok = 0usize;
            let mut cov_ok = 0usize;
            let n_seeds = seed_list.len();
            for chunk in rows.chunks(4) {
                if chunk[1].min_angle > chunk[0].min_angle
                    && chunk[1].trace_sum > chunk[0].trace_sum
                {
                    mean_ok += 1;
                }
                if chunk[3].min_angle > chunk[2].min_angle
                    && chunk[3].trace_sum > chunk[2].trace_sum
                {
                    cov_ok += 1;
                }
            }
            println!("mean-shift ordering held in {mean_ok}/{n_seeds} seeds");
            println!("covariance-scale ordering held in {cov_ok}/{n_seeds} seeds");
            if let Some(output) = &common.output {
                std::fs::create_dir_all(output)
                    .map_err(|e| Error::io(output.display().to_string(), e))?;
                let path = output.join("consistency.csv");
                std::fs::write(&path, text)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            Ok(())
        }
    }
}
