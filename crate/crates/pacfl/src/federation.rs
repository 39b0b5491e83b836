//! The federation loop: one-shot signature clustering, per-round client
//! sampling, local SGD, per-cluster weighted averaging, metrics, and the
//! communication-cost model.
//!
//! The same loop runs in three modes. `Pacfl` clusters by signature at the
//! first round; `FedAvgGlobal` forces a single cluster; `Solo` forces one
//! cluster per client. Everything else (sampling, streams, aggregation,
//! accounting) is identical, so the degenerate modes are byte-for-byte the
//! corresponding edge cases of the clustered run.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::clustering::{hierarchical_cluster, ClusterState, Linkage};
use crate::error::{Error, Result};
use crate::model::{self, Arch, ModelParams};
use crate::partition::ClientShard;
use crate::seed;
use crate::subspace::{
    build_proximity_matrix, make_signature, DataMatrix, MetricKind, Normalize, ProximityMatrix,
    SubspaceSignature,
};

/// Architecture selector; concrete dimensions come from the shards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchSpec {
    LogReg,
    Mlp { hidden: usize },
}

impl ArchSpec {
    pub fn instantiate(&self, n_features: usize, n_classes: usize) -> Arch {
        match *self {
            ArchSpec::LogReg => Arch::LogReg {
                n_features,
                n_classes,
            },
            ArchSpec::Mlp { hidden } => Arch::Mlp {
                n_features,
                hidden,
                n_classes,
            },
        }
    }
}

/// Federation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Cluster by signatures at round one, then per-cluster averaging.
    Pacfl,
    /// Single global cluster (classic federated averaging).
    FedAvgGlobal,
    /// One cluster per client (purely local training).
    Solo,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Pacfl => "pacfl",
            Mode::FedAvgGlobal => "fedavg",
            Mode::Solo => "solo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "pacfl" => Ok(Mode::Pacfl),
            "fedavg" => Ok(Mode::FedAvgGlobal),
            "solo" => Ok(Mode::Solo),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// All knobs of a federation run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub rounds: usize,
    pub sample_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub beta: f64,
    pub p: usize,
    pub metric: MetricKind,
    pub linkage: Linkage,
    pub arch: ArchSpec,
    pub normalize: Normalize,
    pub bytes_per_param: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 10,
            sample_rate: 1.0,
            local_epochs: 1,
            batch_size: 10,
            learning_rate: 0.05,
            momentum: 0.5,
            seed: 0,
            beta: 30.0,
            p: 3,
            metric: MetricKind::MinAngle,
            linkage: Linkage::Average,
            arch: ArchSpec::LogReg,
            normalize: Normalize::ScaleTo01,
            bytes_per_param: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::Config(format!(
                "sample_rate must be in (0,1], got {}",
                self.sample_rate
            )));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "local_epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.p == 0 || self.p > 16 {
            return Err(Error::Config(format!(
                "p must be in 1..=16, got {}",
                self.p
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if self.bytes_per_param == 0 {
            return Err(Error::Config("bytes_per_param must be >= 1".into()));
        }
        if let ArchSpec::Mlp { hidden } = self.arch {
            if hidden == 0 {
                return Err(Error::Config("mlp hidden width must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// One client's metrics for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientRoundMetric {
    pub client_id: String,
    pub cluster_id: usize,
    pub test_accuracy: f64,
    pub train_loss: f64,
}

/// Everything recorded about one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub per_client: Vec<ClientRoundMetric>,
    pub per_cluster_model_norms: Vec<f64>,
    pub bytes_downlink: u64,
    pub bytes_uplink: u64,
}

/// Output of a federation run.
#[derive(Debug, Clone)]
pub struct FederationRun {
    pub state: ClusterState,
    pub signatures: Vec<SubspaceSignature>,
    pub proximity: ProximityMatrix,
    pub metrics: Vec<RoundMetrics>,
    pub cluster_models: Vec<ModelParams>,
}

impl FederationRun {
    /// Mean over clients of the final-round test accuracy.
    pub fn mean_final_accuracy(&self) -> f64 {
        let last = self.metrics.last().expect("at least one round");
        let sum: f64 = last.per_client.iter().map(|c| c.test_accuracy).sum();
        sum / last.per_client.len() as f64
    }

    pub fn total_bytes(&self) -> (u64, u64) {
        let down = self.metrics.iter().map(|m| m.bytes_downlink).sum();
        let up = self.metrics.iter().map(|m| m.bytes_uplink).sum();
        (down, up)
    }
}

/// E epochs of seeded mini-batch SGD with momentum on one shard, starting
/// from `params` (which is not mutated). Returns the updated parameters and
/// the full-batch training loss after the last step.
pub fn local_update(
    params: &ModelParams,
    shard: &ClientShard,
    cfg: &TrainConfig,
) -> Result<(ModelParams, f64)> {
    let stream = seed::derive(cfg.seed, &format!("local-update/{}", shard.client_id));
    local_update_seeded(params, shard, cfg, stream, 0)
}

/// As [`local_update`] but with the RNG stream chosen by the caller; the
/// federation loop derives it from (seed, round, client id).
pub fn local_update_seeded(
    params: &ModelParams,
    shard: &ClientShard,
    cfg: &TrainConfig,
    stream_seed: u64,
    round: usize,
) -> Result<(ModelParams, f64)> {
    if shard.train.n_features() != params.arch().n_features() {
        return Err(Error::Dimension(format!(
            "shard '{}' has {} features, model expects {}",
            shard.client_id,
            shard.train.n_features(),
            params.arch().n_features()
        )));
    }
    let mut rng = seed::rng(stream_seed, "sgd");
    let mut updated = params.clone();
    let n = shard.train.n_samples();
    let mut velocity = vec![0.0; updated.theta().len()];
    let mut indices: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.local_epochs {
        indices.shuffle(&mut rng);
        for batch in indices.chunks(cfg.batch_size) {
            let (loss, grad) = model::loss_and_grad(
                &updated,
                &shard.train.features().view(),
                shard.train.labels(),
                batch,
            );
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    round,
                    epoch,
                    message: format!("client '{}' produced loss {loss}", shard.client_id),
                });
            }
            for ((t, v), g) in updated.theta_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *t -= cfg.learning_rate * *v;
            }
        }
    }
    let final_loss = model::full_loss(&updated, &shard.train);
    Ok((updated, final_loss))
}

/// Weighted arithmetic mean of parameter vectors. Weights are typically the
/// clients' training-set sizes.
pub fn cluster_aggregate(updates: &[(ModelParams, f64)]) -> Result<ModelParams> {
    let (first, first_weight) = updates
        .first()
        .ok_or_else(|| Error::Dimension("cannot aggregate zero updates".into()))?;
    let arch = first.arch();
    if updates.len() == 1 {
        if !(*first_weight > 0.0) {
            return Err(Error::InvalidData(format!(
                "aggregation weight must be positive, got {first_weight}"
            )));
        }
        // The weighted mean of one vector is that vector; skipping the
        // multiply-divide keeps single-member clusters bit-stable.
        return Ok(first.clone());
    }
    let mut acc = vec![0.0; first.theta().len()];
    let mut total = 0.0;
    for (params, weight) in updates {
        if params.arch() != arch {
            return Err(Error::Dimension(format!(
                "architecture mismatch in aggregation: {:?} vs {:?}",
                params.arch(),
                arch
            )));
        }
        if !(*weight > 0.0) {
            return Err(Error::InvalidData(format!(
                "aggregation weight must be positive, got {weight}"
            )));
        }
        for (a, t) in acc.iter_mut().zip(params.theta()) {
            *a += weight * t;
        }
        total += weight;
    }
    for a in &mut acc {
        *a /= total;
    }
    ModelParams::new(arch, acc)
}

/// Uniform sampling of `m` distinct client indices, returned in ascending
/// order so downstream reductions have a fixed order.
fn sample_clients(n: usize, m: usize, seed_value: u64, round: usize) -> Vec<usize> {
    let mut rng = seed::rng_indexed(seed_value, "round-sample", round as u64);
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut rng);
    let mut chosen: Vec<usize> = all.into_iter().take(m).collect();
    chosen.sort_unstable();
    chosen
}

/// The one-shot signature exchange: one signature per client, computed from
/// its training shard.
pub fn compute_signatures(
    shards: &[ClientShard],
    cfg: &TrainConfig,
) -> Result<Vec<SubspaceSignature>> {
    shards
        .iter()
        .map(|shard| {
            let d = DataMatrix::from_sample_rows(&shard.train.features().view())?;
            make_signature(&d, cfg.p, cfg.normalize, shard.client_id.clone())
        })
        .collect()
}

/// Run the federation loop over `shards`.
///
/// Signatures are collected once at round one in every mode, so mode changes
/// never alter the byte accounting or the randomness consumed. Clusters with
/// no sampled member in a round carry their model forward unchanged.
pub fn run_federation(
    shards: &[ClientShard],
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<FederationRun> {
    cfg.validate()?;
    if shards.is_empty() {
        return Err(Error::Config("no client shards".into()));
    }
    let signatures = compute_signatures(shards, cfg)?;
    let proximity = build_proximity_matrix(&signatures, cfg.metric)?;
    run_federation_prepared(shards, cfg, mode, &signatures, &proximity)
}

/// As [`run_federation`] with the signature exchange already done, so a
/// beta sweep can reuse one proximity matrix across runs. Produces results
/// identical to [`run_federation`] because signatures are a deterministic
/// function of the shards.
pub fn run_federation_prepared(
    shards: &[ClientShard],
    cfg: &TrainConfig,
    mode: Mode,
    signatures: &[SubspaceSignature],
    proximity: &ProximityMatrix,
) -> Result<FederationRun> {
    cfg.validate()?;
    if shards.is_empty() {
        return Err(Error::Config("no client shards".into()));
    }
    if signatures.len() != shards.len() || proximity.k() != shards.len() {
        return Err(Error::Dimension(format!(
            "{} shards but {} signatures and a {}-client matrix",
            shards.len(),
            signatures.len(),
            proximity.k()
        )));
    }
    if proximity.metric() != cfg.metric {
        return Err(Error::Config(format!(
            "proximity matrix was built with {} but the config says {}",
            proximity.metric().as_str(),
            cfg.metric.as_str()
        )));
    }
    let n_features = shards[0].train.n_features();
    let n_classes = shards[0].train.n_classes();
    for shard in shards {
        if shard.train.n_features() != n_features || shard.train.n_classes() != n_classes {
            return Err(Error::Dimension(format!(
                "shard '{}' disagrees on feature or class count",
                shard.client_id
            )));
        }
    }
    let arch = cfg.arch.instantiate(n_features, n_classes);
    let n = shards.len();

    let ids: Vec<String> = shards.iter().map(|s| s.client_id.clone()).collect();
    let state = match mode {
        Mode::Pacfl => hierarchical_cluster(proximity, cfg.beta, cfg.linkage)?.1,
        Mode::FedAvgGlobal => {
            ClusterState::new(ids.clone(), vec![0; n], cfg.beta, cfg.linkage, cfg.metric)?
        }
        Mode::Solo => ClusterState::new(
            ids.clone(),
            (0..n).collect(),
            cfg.beta,
            cfg.linkage,
            cfg.metric,
        )?,
    };
    let z = state.z();

    let initial = model::init_model(arch, seed::derive(cfg.seed, "global-init"));
    let mut cluster_models: Vec<ModelParams> = vec![initial; z];

    let m = ((cfg.sample_rate * n as f64).floor() as usize)
        .max(1)
        .min(n);
    let param_count = arch.param_count() as u64;
    let signature_bytes = signature_upload_bytes(
        n_features as u64,
        cfg.p as u64,
        n as u64,
        cfg.bytes_per_param,
    );

    let mut metrics = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let sampled = sample_clients(n, m, cfg.seed, round);

        // Local updates are independent; order-preserving parallel map keeps
        // the result identical to sequential execution.
        let updates: Vec<(usize, ModelParams)> = sampled
            .par_iter()
            .map(|&k| {
                let cluster = state.assignments()[k];
                let stream = seed::derive(
                    cfg.seed,
                    &format!("client-update/{round}/{}", shards[k].client_id),
                );
                let (params, _) =
                    local_update_seeded(&cluster_models[cluster], &shards[k], cfg, stream, round)?;
                Ok((k, params))
            })
            .collect::<Result<_>>()?;

        for cluster in 0..z {
            let members: Vec<(ModelParams, f64)> = updates
                .iter()
                .filter(|(k, _)| state.assignments()[*k] == cluster)
                .map(|(k, params)| (params.clone(), shards[*k].train.n_samples() as f64))
                .collect();
            if !members.is_empty() {
                cluster_models[cluster] = cluster_aggregate(&members)?;
            }
        }

        let per_client: Vec<ClientRoundMetric> = shards
            .iter()
            .enumerate()
            .map(|(k, shard)| {
                let cluster = state.assignments()[k];
                let (test_accuracy, _) = model::evaluate(&cluster_models[cluster], &shard.test);
                let train_loss = model::full_loss(&cluster_models[cluster], &shard.train);
                ClientRoundMetric {
                    client_id: shard.client_id.clone(),
                    cluster_id: cluster,
                    test_accuracy,
                    train_loss,
                }
            })
            .collect();

        let bytes_downlink = (m as u64) * param_count * cfg.bytes_per_param;
        let mut bytes_uplink = (m as u64) * param_count * cfg.bytes_per_param;
        if round == 1 {
            bytes_uplink += signature_bytes;
        }
        metrics.push(RoundMetrics {
            round,
            per_client,
            per_cluster_model_norms: cluster_models.iter().map(|m| m.l2_norm()).collect(),
            bytes_downlink,
            bytes_uplink,
        });
    }

    Ok(FederationRun {
        state,
        signatures: signatures.to_vec(),
        proximity: proximity.clone(),
        metrics,
        cluster_models,
    })
}

/// Write the per-round metrics stream: one row per client per round.
pub fn write_metrics_csv(metrics: &[RoundMetrics], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "round,client_id,cluster_id,test_accuracy,train_loss")?;
    for round in metrics {
        for c in &round.per_client {
            writeln!(
                w,
                "{},{},{},{},{}",
                round.round, c.client_id, c.cluster_id, c.test_accuracy, c.train_loss
            )?;
        }
    }
    Ok(())
}

/// Parse rows written by [`write_metrics_csv`]. Byte-count columns are not
/// serialized, so the returned rounds carry zeros there.
pub fn read_metrics_csv(r: &mut impl Read) -> Result<Vec<RoundMetrics>> {
    let mut text = String::new();
    r.read_to_string(&mut text)
        .map_err(|e| Error::Parse(format!("metrics csv: {e}")))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("round,client_id,cluster_id,test_accuracy,train_loss") => {}
        other => return Err(Error::Parse(format!("bad metrics header: {other:?}"))),
    }
    let mut rounds: Vec<RoundMetrics> = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(Error::Parse(format!("metrics row {}: '{line}'", i + 2)));
        }
        let parse_err = |what: &str| Error::Parse(format!("metrics row {}: bad {what}", i + 2));
        let round: usize = cells[0].parse().map_err(|_| parse_err("round"))?;
        let metric = ClientRoundMetric {
            client_id: cells[1].to_string(),
            cluster_id: cells[2].parse().map_err(|_| parse_err("cluster"))?,
            test_accuracy: cells[3].parse().map_err(|_| parse_err("accuracy"))?,
            train_loss: cells[4].parse().map_err(|_| parse_err("loss"))?,
        };
        match rounds.last_mut() {
            Some(last) if last.round == round => last.per_client.push(metric),
            _ => rounds.push(RoundMetrics {
                round,
                per_client: vec![metric],
                per_cluster_model_norms: Vec::new(),
                bytes_downlink: 0,
                bytes_uplink: 0,
            }),
        }
    }
    Ok(rounds)
}

/// Downlink and uplink bytes for a run of the given shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommCost {
    pub downlink_bytes: u64,
    pub uplink_bytes: u64,
}

impl CommCost {
    pub fn total(&self) -> u64 {
        self.downlink_bytes + self.uplink_bytes
    }
}

/// Model-exchange cost: every sampled client downloads
/// `n_clusters_downloaded` models per round (1 for this protocol and plain
/// federated averaging; Z for a download-all-clusters protocol) and uploads
/// one, at `bytes_per_param` bytes per parameter.
pub fn comm_cost_model_with(
    parameter_count: u64,
    rounds: u64,
    sampled_per_round: u64,
    n_clusters_downloaded: u64,
    bytes_per_param: u64,
) -> CommCost {
    let per_model = parameter_count * bytes_per_param;
    CommCost {
        downlink_bytes: rounds * sampled_per_round * n_clusters_downloaded * per_model,
        uplink_bytes: rounds * sampled_per_round * per_model,
    }
}

/// [`comm_cost_model_with`] at the default 8 bytes per parameter.
pub fn comm_cost_model(
    parameter_count: u64,
    rounds: u64,
    sampled_per_round: u64,
    n_clusters_downloaded: u64,
) -> CommCost {
    comm_cost_model_with(
        parameter_count,
        rounds,
        sampled_per_round,
        n_clusters_downloaded,
        8,
    )
}

/// One-shot signature uplink paid once by each client before federation.
pub fn signature_upload_bytes(
    feature_dim: u64,
    p: u64,
    n_clients: u64,
    bytes_per_param: u64,
) -> u64 {
    feature_dim * p * n_clients * bytes_per_param
}
