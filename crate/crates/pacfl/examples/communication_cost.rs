//! Communication accounting: the one-shot signature upload against the
//! per-round cost of a protocol whose clients must download every cluster
//! model each round.
//!
//! ```bash
//! cargo run --example communication_cost
//! ```

use pacfl::federation::{comm_cost_model, signature_upload_bytes};

fn mb(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

fn main() {
    // A 26.485M-parameter model: one transfer is 211.88 Mb at 8 bytes per
    // parameter.
    let params = 26_485_000u64;
    let one = comm_cost_model(params, 1, 1, 1);
    println!(
        "single model transfer: {:.2} Mb down, {:.2} Mb up",
        mb(one.downlink_bytes),
        mb(one.uplink_bytes)
    );

    let rounds = 50;
    let sampled = 10;
    println!(
        "\n{:>4} {:>18} {:>22} {:>8}",
        "z", "one-model down/Mb", "download-all down/Mb", "ratio"
    );
    for z in [1u64, 2, 4, 8] {
        let ours = comm_cost_model(params, rounds, sampled, 1);
        let download_all = comm_cost_model(params, rounds, sampled, z);
        println!(
            "{z:>4} {:>18.2} {:>22.2} {:>8.1}",
            mb(ours.downlink_bytes),
            mb(download_all.downlink_bytes),
            download_all.downlink_bytes as f64 / ours.downlink_bytes as f64
        );
    }

    // The signature exchange happens once, before federation.
    let clients = 100;
    let sig = signature_upload_bytes(512, 3, clients, 8);
    println!(
        "\none-shot signatures for {clients} clients at feature dim 512, p = 3: {:.3} Mb total",
        mb(sig)
    );
    println!(
        "that is {:.5}% of a single round's model downlink",
        100.0 * sig as f64 / comm_cost_model(params, 1, sampled, 1).downlink_bytes as f64
    );
}
