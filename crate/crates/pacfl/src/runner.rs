//! End-to-end experiment orchestration: build shards from a config, run the
//! pipeline, write every tabular artifact, save and reload server state, and
//! handle the beta-sweep and newcomer workflows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::clustering::{assign_newcomers, pme_extend, ClusterState, Linkage};
use crate::config::{DatasetConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::federation::{
    self, compute_signatures, run_federation_prepared, ArchSpec, FederationRun, Mode, TrainConfig,
};
use crate::model::{self, ModelParams};
use crate::partition::{
    dirichlet_partition, generate_conflicting_groups, generate_gaussian_dataset,
    label_skew_partition, load_csv_dataset, mix_partition, write_manifest, ClientShard,
    LabeledDataset, Scheme,
};
use crate::subspace::{
    build_proximity_matrix, make_signature, DataMatrix, MetricKind, Normalize, ProximityMatrix,
    SubspaceSignature,
};

/// Materialize the config's source datasets.
pub fn build_datasets(cfg: &ExperimentConfig) -> Result<Vec<LabeledDataset>> {
    match &cfg.dataset {
        DatasetConfig::Gaussian {
            n_classes,
            n_features,
            samples_per_class,
            class_mean_scale,
            covariance_scale,
        } => Ok(vec![generate_gaussian_dataset(
            *n_classes,
            *n_features,
            *samples_per_class,
            *class_mean_scale,
            *covariance_scale,
            crate::seed::derive(cfg.seed, "dataset"),
        )?]),
        DatasetConfig::GaussianMix {
            sources,
            n_classes,
            n_features,
            samples_per_class,
            class_mean_scale,
            covariance_scale,
        } => (0..*sources)
            .map(|s| {
                generate_gaussian_dataset(
                    *n_classes,
                    *n_features,
                    *samples_per_class,
                    *class_mean_scale,
                    *covariance_scale,
                    crate::seed::derive_indexed(cfg.seed, "dataset", s as u64),
                )
            })
            .collect(),
        DatasetConfig::Csv {
            paths,
            label_column,
        } => paths
            .iter()
            .map(|p| load_csv_dataset(p, label_column).map(|(ds, _)| ds))
            .collect(),
        DatasetConfig::ConflictingGroups { .. } => Ok(Vec::new()),
    }
}

/// Materialize every client shard the config describes (held-out newcomers
/// are the trailing `cfg.holdout` entries).
pub fn build_shards(cfg: &ExperimentConfig) -> Result<Vec<ClientShard>> {
    if let DatasetConfig::ConflictingGroups {
        clients_per_group,
        samples_per_client,
    } = cfg.dataset
    {
        return generate_conflicting_groups(
            clients_per_group,
            samples_per_client,
            cfg.partition.test_fraction,
            cfg.partition.seed,
        );
    }
    let datasets = build_datasets(cfg)?;
    match &cfg.partition.scheme {
        Scheme::LabelSkew { .. } => label_skew_partition(&datasets[0], &cfg.partition),
        Scheme::Dirichlet { .. } => dirichlet_partition(&datasets[0], &cfg.partition),
        Scheme::Mix { .. } => mix_partition(&datasets, &cfg.partition),
    }
}

/// A beta-sweep result row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub z: usize,
    pub mean_accuracy: f64,
}

/// Lazily computed pipeline over a fixed set of training shards. Signatures
/// and the proximity matrix are built at most once and reused by every
/// clustering or federation run derived from them.
pub struct Pipeline {
    shards: Vec<ClientShard>,
    train: TrainConfig,
    mode: Mode,
    signatures: Option<Vec<SubspaceSignature>>,
    proximity: Option<ProximityMatrix>,
    proximity_builds: usize,
}

impl Pipeline {
    pub fn new(shards: Vec<ClientShard>, train: TrainConfig, mode: Mode) -> Self {
        Pipeline {
            shards,
            train,
            mode,
            signatures: None,
            proximity: None,
            proximity_builds: 0,
        }
    }

    pub fn shards(&self) -> &[ClientShard] {
        &self.shards
    }

    pub fn signatures(&mut self) -> Result<&[SubspaceSignature]> {
        if self.signatures.is_none() {
            self.signatures = Some(compute_signatures(&self.shards, &self.train)?);
        }
        Ok(self.signatures.as_ref().unwrap())
    }

    pub fn proximity(&mut self) -> Result<&ProximityMatrix> {
        if self.proximity.is_none() {
            self.signatures()?;
            let sigs = self.signatures.as_ref().unwrap();
            self.proximity = Some(build_proximity_matrix(sigs, self.train.metric)?);
            self.proximity_builds += 1;
        }
        Ok(self.proximity.as_ref().unwrap())
    }

    /// How many times the proximity matrix has actually been computed.
    pub fn proximity_builds(&self) -> usize {
        self.proximity_builds
    }

    /// Run the federation at the configured beta.
    pub fn run(&mut self) -> Result<FederationRun> {
        let beta = self.train.beta;
        self.run_with_beta(beta)
    }

    /// Run the federation at a different threshold, reusing the cached
    /// signature exchange.
    pub fn run_with_beta(&mut self, beta: f64) -> Result<FederationRun> {
        self.proximity()?;
        let cfg = TrainConfig {
            beta,
            ..self.train.clone()
        };
        run_federation_prepared(
            &self.shards,
            &cfg,
            self.mode,
            self.signatures.as_ref().unwrap(),
            self.proximity.as_ref().unwrap(),
        )
    }

    /// Re-cluster and re-train per beta with the shared seed; signatures are
    /// computed exactly once for the whole sweep.
    pub fn sweep(&mut self, betas: &[f64]) -> Result<Vec<SweepRow>> {
        if betas.is_empty() {
            return Err(Error::Config("beta sweep needs at least one value".into()));
        }
        let mut rows = Vec::with_capacity(betas.len());
        for &beta in betas {
            let run = self.run_with_beta(beta)?;
            rows.push(SweepRow {
                beta,
                z: run.state.z(),
                mean_accuracy: run.mean_final_accuracy(),
            });
        }
        Ok(rows)
    }
}

/// Everything a finished experiment leaves behind.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub run: FederationRun,
    pub sweep: Option<Vec<SweepRow>>,
    pub output_dir: PathBuf,
}

const STATE_DIR: &str = "state";
const META_FILE: &str = "meta.txt";

/// Run the configured experiment and write all artifacts: proximity matrix
/// CSV, cluster assignment CSV, per-round metrics CSV, the summary file, the
/// shard manifest, and the reusable server state.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let all_shards = build_shards(cfg)?;
    if cfg.holdout >= all_shards.len() {
        return Err(Error::Config(format!(
            "holdout {} leaves no training clients of {}",
            cfg.holdout,
            all_shards.len()
        )));
    }
    let train_count = all_shards.len() - cfg.holdout;
    let train_shards = all_shards[..train_count].to_vec();

    let mut pipeline = Pipeline::new(train_shards, cfg.train.clone(), cfg.mode);
    let run = pipeline.run()?;
    let sweep = match &cfg.beta_sweep {
        Some(betas) => Some(pipeline.sweep(betas)?),
        None => None,
    };

    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    run.proximity.save_csv(&dir.join("proximity.csv"))?;
    run.state.save_csv(&dir.join("clusters.csv"))?;
    write_file(&dir.join("metrics.csv"), |w| {
        federation::write_metrics_csv(&run.metrics, w)
    })?;
    write_file(&dir.join("manifest.txt"), |w| {
        write_manifest(&all_shards, w)
    })?;
    let summary = render_summary(cfg, &run, sweep.as_deref());
    std::fs::write(dir.join("summary.txt"), summary)
        .map_err(|e| Error::io(dir.join("summary.txt").display().to_string(), e))?;

    save_state(&dir.join(STATE_DIR), &run, &cfg.train)?;

    Ok(ExperimentOutput {
        run,
        sweep,
        output_dir: dir.clone(),
    })
}

fn write_file<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut std::fs::File) -> std::io::Result<()>,
{
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    body(&mut file).map_err(|e| Error::io(path.display().to_string(), e))
}

fn render_summary(
    cfg: &ExperimentConfig,
    run: &FederationRun,
    sweep: Option<&[SweepRow]>,
) -> String {
    let (down, up) = run.total_bytes();
    let mut out = String::new();
    let _ = writeln!(out, "mode = {}", cfg.mode.as_str());
    let _ = writeln!(out, "clients = {}", run.state.client_ids().len());
    let _ = writeln!(out, "rounds = {}", cfg.train.rounds);
    let _ = writeln!(out, "beta = {}", cfg.train.beta);
    let _ = writeln!(out, "z = {}", run.state.z());
    let _ = writeln!(out, "mean_final_accuracy = {}", run.mean_final_accuracy());
    let _ = writeln!(out, "total_bytes_downlink = {down}");
    let _ = writeln!(out, "total_bytes_uplink = {up}");
    if let Some(rows) = sweep {
        let _ = writeln!(out, "sweep = beta,z,mean_accuracy");
        for row in rows {
            let _ = writeln!(
                out,
                "sweep_row = {},{},{}",
                row.beta, row.z, row.mean_accuracy
            );
        }
    }
    out
}

/// Server state reloaded from disk: enough to place newcomers and fine-tune.
#[derive(Debug)]
pub struct SavedState {
    pub proximity: ProximityMatrix,
    pub signatures: Vec<SubspaceSignature>,
    pub cluster_state: ClusterState,
    pub cluster_models: Vec<ModelParams>,
    pub train: TrainConfig,
}

/// Persist signatures, cluster assignments, per-cluster models, and the
/// clustering parameters under `dir`.
pub fn save_state(dir: &Path, run: &FederationRun, train: &TrainConfig) -> Result<()> {
    let sig_dir = dir.join("signatures");
    let model_dir = dir.join("models");
    std::fs::create_dir_all(&sig_dir).map_err(|e| Error::io(sig_dir.display().to_string(), e))?;
    std::fs::create_dir_all(&model_dir)
        .map_err(|e| Error::io(model_dir.display().to_string(), e))?;

    run.proximity.save_csv(&dir.join("proximity.csv"))?;
    run.state.save_csv(&dir.join("clusters.csv"))?;
    for sig in &run.signatures {
        sig.save(&sig_dir.join(format!("{}.pacs", sig.client_id())))?;
    }
    for (z, params) in run.cluster_models.iter().enumerate() {
        params.save(&model_dir.join(format!("cluster_{z}.pacm")))?;
    }

    let mut meta = String::new();
    let _ = writeln!(meta, "beta = {}", run.state.beta);
    let _ = writeln!(meta, "linkage = {}", run.state.linkage.as_str());
    let _ = writeln!(meta, "metric = {}", run.state.metric.as_str());
    let _ = writeln!(meta, "p = {}", train.p);
    let _ = writeln!(meta, "normalize = {}", train.normalize.as_str());
    let _ = writeln!(meta, "z = {}", run.state.z());
    let arch_name = match train.arch {
        ArchSpec::LogReg => "logreg".to_string(),
        ArchSpec::Mlp { hidden } => format!("mlp:{hidden}"),
    };
    let _ = writeln!(meta, "arch = {arch_name}");
    let _ = writeln!(meta, "learning_rate = {}", train.learning_rate);
    let _ = writeln!(meta, "momentum = {}", train.momentum);
    let _ = writeln!(meta, "batch_size = {}", train.batch_size);
    let _ = writeln!(meta, "seed = {}", train.seed);
    let _ = writeln!(meta, "bytes_per_param = {}", train.bytes_per_param);
    std::fs::write(dir.join(META_FILE), meta)
        .map_err(|e| Error::io(dir.join(META_FILE).display().to_string(), e))
}

fn meta_value<'a>(meta: &'a str, key: &str) -> Result<&'a str> {
    for line in meta.lines() {
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == key {
                return Ok(v.trim());
            }
        }
    }
    Err(Error::Parse(format!("state meta is missing '{key}'")))
}

/// Reload state written by [`save_state`].
pub fn load_state(dir: &Path) -> Result<SavedState> {
    let meta_path = dir.join(META_FILE);
    let meta = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let beta: f64 = meta_value(&meta, "beta")?
        .parse()
        .map_err(|_| Error::Parse("bad beta in state meta".into()))?;
    let linkage = Linkage::parse(meta_value(&meta, "linkage")?)?;
    let metric = MetricKind::parse(meta_value(&meta, "metric")?)?;
    let parse_num = |key: &str| -> Result<f64> {
        meta_value(&meta, key)?
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("bad {key} in state meta")))
    };
    let arch_raw = meta_value(&meta, "arch")?;
    let arch = if arch_raw == "logreg" {
        ArchSpec::LogReg
    } else if let Some(rest) = arch_raw.strip_prefix("mlp:") {
        ArchSpec::Mlp {
            hidden: rest
                .parse()
                .map_err(|_| Error::Parse("bad mlp width in state meta".into()))?,
        }
    } else {
        return Err(Error::Parse(format!(
            "unknown arch '{arch_raw}' in state meta"
        )));
    };

    let proximity = ProximityMatrix::load_csv(&dir.join("proximity.csv"))?;
    let pairs = {
        let path = dir.join("clusters.csv");
        let mut file =
            std::fs::File::open(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        ClusterState::read_csv_pairs(&mut file)?
    };
    let (ids, assignments): (Vec<String>, Vec<usize>) = pairs.into_iter().unzip();
    let cluster_state = ClusterState::new(ids.clone(), assignments, beta, linkage, metric)?;

    let mut signatures = Vec::with_capacity(ids.len());
    for id in &ids {
        let path = dir.join("signatures").join(format!("{id}.pacs"));
        signatures.push(SubspaceSignature::load(&path, id.clone())?);
    }
    let mut cluster_models = Vec::with_capacity(cluster_state.z());
    for z in 0..cluster_state.z() {
        cluster_models.push(ModelParams::load(
            &dir.join("models").join(format!("cluster_{z}.pacm")),
        )?);
    }

    let train = TrainConfig {
        beta,
        p: parse_num("p")? as usize,
        metric,
        linkage,
        arch,
        normalize: Normalize::parse(meta_value(&meta, "normalize")?)?,
        learning_rate: parse_num("learning_rate")?,
        momentum: parse_num("momentum")?,
        batch_size: parse_num("batch_size")? as usize,
        seed: parse_num("seed")? as u64,
        bytes_per_param: parse_num("bytes_per_param")? as u64,
        ..TrainConfig::default()
    };

    Ok(SavedState {
        proximity,
        signatures,
        cluster_state,
        cluster_models,
        train,
    })
}

/// One newcomer's placement and fine-tuning outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct NewcomerRow {
    pub client_id: String,
    pub cluster_id: usize,
    /// True when the newcomer founded a cluster of its own.
    pub new_cluster: bool,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
}

/// Outcome of the newcomer workflow.
#[derive(Debug)]
pub struct NewcomerReport {
    pub rows: Vec<NewcomerRow>,
    pub updated_state: ClusterState,
}

/// Place late-arriving clients: compute their signatures, extend the
/// proximity matrix, re-cut with the original threshold, then fine-tune the
/// assigned cluster model for `fine_tune_epochs` local epochs and report
/// test accuracy before and after. Newcomers that found a new cluster start
/// from the same global initialization the federation used.
pub fn newcomer_workflow(
    state: &SavedState,
    newcomers: &[ClientShard],
    fine_tune_epochs: usize,
) -> Result<NewcomerReport> {
    if newcomers.is_empty() {
        return Ok(NewcomerReport {
            rows: Vec::new(),
            updated_state: state.cluster_state.clone(),
        });
    }
    let new_signatures = compute_signatures(newcomers, &state.train)?;
    let (extended, _) = pme_extend(&state.proximity, &state.signatures, &new_signatures)?;
    let (updated_state, newcomer_clusters) =
        assign_newcomers(&state.cluster_state, &extended, state.cluster_state.beta)?;

    let fine_tune_cfg = TrainConfig {
        local_epochs: fine_tune_epochs.max(1),
        ..state.train.clone()
    };
    let old_z = state.cluster_models.len();
    let mut rows = Vec::with_capacity(newcomers.len());
    for (shard, &cluster) in newcomers.iter().zip(&newcomer_clusters) {
        let new_cluster = cluster >= old_z;
        let start = if new_cluster {
            let arch = state
                .train
                .arch
                .instantiate(shard.train.n_features(), shard.train.n_classes());
            model::init_model(arch, crate::seed::derive(state.train.seed, "global-init"))
        } else {
            state.cluster_models[cluster].clone()
        };
        let (accuracy_before, _) = model::evaluate(&start, &shard.test);
        let (accuracy_after, _) = if fine_tune_epochs == 0 {
            (accuracy_before, 0.0)
        } else {
            let (tuned, _) = federation::local_update(&start, shard, &fine_tune_cfg)?;
            model::evaluate(&tuned, &shard.test)
        };
        rows.push(NewcomerRow {
            client_id: shard.client_id.clone(),
            cluster_id: cluster,
            new_cluster,
            accuracy_before,
            accuracy_after,
        });
    }
    Ok(NewcomerReport {
        rows,
        updated_state,
    })
}

/// Signature computation for a set of shards with explicit knobs, used by
/// the CLI `signature` subcommand.
pub fn signatures_for(
    shards: &[ClientShard],
    p: usize,
    normalize: Normalize,
) -> Result<Vec<SubspaceSignature>> {
    shards
        .iter()
        .map(|shard| {
            let d = DataMatrix::from_sample_rows(&shard.train.features().view())?;
            make_signature(&d, p, normalize, shard.client_id.clone())
        })
        .collect()
}
