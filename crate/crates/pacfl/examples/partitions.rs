//! The three Non-IID partitioning regimes side by side: label skew,
//! Dirichlet, and mix. Prints each client's class histogram so the shape of
//! the heterogeneity is visible at a glance.
//!
//! ```bash
//! cargo run --example partitions
//! ```

use pacfl::partition::{
    dirichlet_partition, generate_gaussian_dataset, label_skew_partition, mix_partition,
    ClientShard, PartitionSpec, Scheme,
};

fn histogram(shard: &ClientShard, n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_classes];
    for &l in shard.train.labels().iter().chain(shard.test.labels()) {
        counts[l] += 1;
    }
    counts
}

fn show(title: &str, shards: &[ClientShard], n_classes: usize) {
    println!("\n{title}");
    for shard in shards {
        let counts = histogram(shard, n_classes);
        let bars: Vec<String> = counts.iter().map(|c| format!("{c:>4}")).collect();
        println!(
            "  {} [{}] train {:>3} / test {:>2} (source {})",
            shard.client_id,
            bars.join(" "),
            shard.train.n_samples(),
            shard.test.n_samples(),
            shard.source_name
        );
    }
}

fn main() -> pacfl::Result<()> {
    let ds = generate_gaussian_dataset(6, 8, 120, 4.0, 1.0, 5)?;

    let skew = label_skew_partition(
        &ds,
        &PartitionSpec {
            scheme: Scheme::LabelSkew { rho_percent: 34.0 },
            n_clients: 6,
            test_fraction: 0.2,
            seed: 1,
        },
    )?;
    show("label skew (34% of the label space per client):", &skew, 6);

    let dirichlet = dirichlet_partition(
        &ds,
        &PartitionSpec {
            scheme: Scheme::Dirichlet { alpha: 0.3 },
            n_clients: 6,
            test_fraction: 0.2,
            seed: 2,
        },
    )?;
    show("dirichlet (alpha = 0.3, heavily skewed):", &dirichlet, 6);

    let sources: Vec<_> = (0..2)
        .map(|s| generate_gaussian_dataset(3, 8, 120, 4.0, 1.0, 50 + s))
        .collect::<pacfl::Result<_>>()?;
    let mix = mix_partition(
        &sources,
        &PartitionSpec {
            scheme: Scheme::Mix {
                dataset_client_counts: vec![3, 3],
                samples_per_client: 60,
            },
            n_clients: 6,
            test_fraction: 0.2,
            seed: 3,
        },
    )?;
    show(
        "mix (two sources on disjoint global label ranges):",
        &mix,
        6,
    );

    Ok(())
}
