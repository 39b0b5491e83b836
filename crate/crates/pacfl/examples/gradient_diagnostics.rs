//! Gradient diversity as a misclustering probe: a well-formed cluster has
//! aligned client gradients (diversity near 1/size), while mixing in a
//! client from the conflicting group blows the diversity up.
//!
//! ```bash
//! cargo run --example gradient_diagnostics
//! ```

use pacfl::divergence::gradient_diversity;
use pacfl::model::{init_model, Arch};
use pacfl::partition::generate_conflicting_groups;

fn main() -> pacfl::Result<()> {
    let shards = generate_conflicting_groups(5, 80, 0.2, 13)?;
    let (group_a, group_b) = shards.split_at(5);
    let params = init_model(
        Arch::LogReg {
            n_features: 10,
            n_classes: 2,
        },
        1,
    );

    let pure = gradient_diversity(&params, group_a)?;
    println!(
        "pure cluster (5 aligned clients): diversity {:.3} (1/size = {:.3})",
        pure.value,
        1.0 / group_a.len() as f64
    );

    for take in 1..=3usize {
        let mut mixed = group_a.to_vec();
        mixed.extend_from_slice(&group_b[..take]);
        let gd = gradient_diversity(&params, &mixed)?;
        println!(
            "with {take} conflicting client(s) mixed in: diversity {:.3}{}",
            gd.value,
            if gd.degenerate {
                " (degenerate: gradients cancel)"
            } else {
                ""
            }
        );
    }
    println!("\na pure cluster sits near 1/size; every conflicting client pushes");
    println!("the ratio up, because its gradient cancels part of the consensus.");
    Ok(())
}
