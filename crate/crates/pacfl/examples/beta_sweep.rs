//! Sweep the clustering threshold over the whole personalization spectrum:
//! beta = 0 trains one model per client, beta = infinity reproduces plain
//! federated averaging, and the sweet spot sits at the true group count.
//! Signatures are computed once for the entire sweep.
//!
//! ```bash
//! cargo run --release --example beta_sweep
//! ```

use pacfl::federation::{ArchSpec, Mode, TrainConfig};
use pacfl::partition::generate_conflicting_groups;
use pacfl::runner::Pipeline;

fn main() -> pacfl::Result<()> {
    let shards = generate_conflicting_groups(10, 100, 0.2, 3)?;
    let cfg = TrainConfig {
        rounds: 15,
        sample_rate: 0.5,
        local_epochs: 2,
        batch_size: 10,
        learning_rate: 0.1,
        momentum: 0.5,
        seed: 11,
        p: 3,
        arch: ArchSpec::LogReg,
        ..TrainConfig::default()
    };
    let mut pipeline = Pipeline::new(shards, cfg, Mode::Pacfl);
    let betas = [0.0, 5.0, 15.0, 30.0, 45.0, 60.0, 75.0, f64::INFINITY];
    let rows = pipeline.sweep(&betas)?;

    println!("{:>10} {:>4} {:>16}", "beta", "z", "mean accuracy");
    for row in &rows {
        println!(
            "{:>10.1} {:>4} {:>16.4}",
            row.beta, row.z, row.mean_accuracy
        );
    }
    println!(
        "\nproximity matrix built {} time(s) across {} runs",
        pipeline.proximity_builds(),
        rows.len()
    );
    println!("two flipped-label groups: accuracy peaks once z reaches 2 and");
    println!("collapses to coin-flipping when beta forces a single cluster.");
    Ok(())
}
