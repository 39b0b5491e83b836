//! Recover the source structure of a mixed federation: twenty clients drawn
//! from four disjoint synthetic datasets, clustered purely from their
//! signatures. Prints the dendrogram, the chosen threshold, and the adjusted
//! Rand index against the hidden ground truth.
//!
//! ```bash
//! cargo run --example cluster_recovery
//! ```

use pacfl::clustering::{adjusted_rand_index, hierarchical_cluster, Linkage};
use pacfl::federation::{Mode, TrainConfig};
use pacfl::partition::{generate_gaussian_dataset, mix_partition, PartitionSpec, Scheme};
use pacfl::runner::Pipeline;
use pacfl::subspace::MetricKind;

fn main() -> pacfl::Result<()> {
    let sources: Vec<_> = (0..4)
        .map(|s| generate_gaussian_dataset(3, 20, 120, 8.0, 1.0, 100 + s))
        .collect::<pacfl::Result<_>>()?;
    let spec = PartitionSpec {
        scheme: Scheme::Mix {
            dataset_client_counts: vec![6, 5, 5, 4],
            samples_per_client: 60,
        },
        n_clients: 20,
        test_fraction: 0.2,
        seed: 42,
    };
    let shards = mix_partition(&sources, &spec)?;
    let truth: Vec<usize> = shards
        .iter()
        .map(|s| {
            sources
                .iter()
                .position(|d| d.name() == s.source_name)
                .unwrap()
        })
        .collect();

    let cfg = TrainConfig {
        p: 3,
        metric: MetricKind::MinAngle,
        ..TrainConfig::default()
    };
    let mut pipeline = Pipeline::new(shards, cfg, Mode::Pacfl);
    let proximity = pipeline.proximity()?.clone();

    // Merge heights expose the within/across gap directly.
    let (dendrogram, _) = hierarchical_cluster(&proximity, 0.0, Linkage::Average)?;
    println!("merge heights (degrees):");
    for merge in dendrogram.merges() {
        println!(
            "  nodes {:>2} + {:>2} -> {:>2} at {:>6.2}",
            merge.left, merge.right, merge.new_node, merge.height
        );
    }

    // Pick the threshold inside the biggest height jump.
    let heights: Vec<f64> = dendrogram.merges().iter().map(|m| m.height).collect();
    let mut beta = heights[heights.len() - 1] / 2.0;
    let mut best_gap = 0.0;
    for pair in heights.windows(2) {
        let gap = pair[1] - pair[0];
        if gap > best_gap {
            best_gap = gap;
            beta = 0.5 * (pair[0] + pair[1]);
        }
    }
    println!("\nlargest merge-height gap suggests beta = {beta:.2}");

    let (_, state) = hierarchical_cluster(&proximity, beta, Linkage::Average)?;
    let ari = adjusted_rand_index(state.assignments(), &truth);
    println!("clusters at beta = {beta:.2}: z = {}", state.z());
    for z in 0..state.z() {
        let members: Vec<&str> = state
            .members(z)
            .into_iter()
            .map(|i| state.client_ids()[i].as_str())
            .collect();
        println!("  cluster {z}: {}", members.join(", "));
    }
    println!("adjusted rand index vs ground truth: {ari:.3}");
    Ok(())
}
