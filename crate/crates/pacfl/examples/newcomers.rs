//! Clients arriving after federation: hold one client per source group out
//! of a mixed federation, train on the rest, then place the newcomers by
//! extending the proximity matrix and fine-tune their assigned cluster
//! models locally.
//!
//! ```bash
//! cargo run --release --example newcomers
//! ```

use pacfl::federation::{run_federation, Mode, TrainConfig};
use pacfl::partition::{generate_gaussian_dataset, mix_partition, PartitionSpec, Scheme};
use pacfl::runner::{newcomer_workflow, SavedState};
use pacfl::subspace::MetricKind;

fn main() -> pacfl::Result<()> {
    let sources: Vec<_> = (0..4)
        .map(|s| generate_gaussian_dataset(3, 20, 120, 8.0, 1.0, 300 + s))
        .collect::<pacfl::Result<_>>()?;
    let spec = PartitionSpec {
        scheme: Scheme::Mix {
            dataset_client_counts: vec![5, 5, 5, 5],
            samples_per_client: 60,
        },
        n_clients: 20,
        test_fraction: 0.2,
        seed: 9,
    };
    let shards = mix_partition(&sources, &spec)?;

    // The last client of each group joins late.
    let mut training = Vec::new();
    let mut newcomers = Vec::new();
    for (i, shard) in shards.into_iter().enumerate() {
        if i % 5 == 4 {
            newcomers.push(shard);
        } else {
            training.push(shard);
        }
    }

    let cfg = TrainConfig {
        rounds: 8,
        sample_rate: 1.0,
        local_epochs: 2,
        batch_size: 10,
        learning_rate: 0.1,
        momentum: 0.5,
        seed: 21,
        beta: 40.0,
        p: 3,
        metric: MetricKind::MinAngle,
        ..TrainConfig::default()
    };
    let run = run_federation(&training, &cfg, Mode::Pacfl)?;
    println!(
        "federation: {} clients, z = {}, mean accuracy {:.4}",
        training.len(),
        run.state.z(),
        run.mean_final_accuracy()
    );

    let state = SavedState {
        proximity: run.proximity.clone(),
        signatures: run.signatures.clone(),
        cluster_state: run.state.clone(),
        cluster_models: run.cluster_models.clone(),
        train: cfg,
    };
    let report = newcomer_workflow(&state, &newcomers, 3)?;
    println!(
        "\n{:>12} {:>8} {:>12} {:>14} {:>14}",
        "newcomer", "cluster", "new cluster", "acc before", "acc after"
    );
    for row in &report.rows {
        println!(
            "{:>12} {:>8} {:>12} {:>14.4} {:>14.4}",
            row.client_id, row.cluster_id, row.new_cluster, row.accuracy_before, row.accuracy_after
        );
    }
    println!(
        "\nclusters after placement: z = {} (old clients untouched)",
        report.updated_state.z()
    );
    Ok(())
}
