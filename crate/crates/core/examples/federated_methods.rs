//! All five FL methods on one embedding-based partition.
//!
//! cargo run --release --example federated_methods

use fedhet::datasets::{generate_synthetic_grouped, SyntheticConfig, TaskKind};
use fedhet::fl::{run_federated, FlConfig, Method};
use fedhet::models::Architecture;
use fedhet::numerics::RngStream;
use fedhet::partitioner::{embedding_based_partition, PartitionConfig, PartitionMode};

fn main() -> fedhet::Result<()> {
    let syn = SyntheticConfig {
        points: 3000,
        feature_noise: 0.3,
        task: TaskKind::RegressionL1,
        ..Default::default()
    };
    let ds = generate_synthetic_grouped(&syn, &mut RngStream::new(1, 0))?;
    let groups: Vec<(u64, usize)> = ds
        .ids()
        .into_iter()
        .zip(ds.latent_groups().expect("synthetic"))
        .collect();
    let arch = Architecture::desk(ds.feature_dim(), ds.output_dim());
    for alpha in [0.1, 1000.0] {
        let plan = embedding_based_partition(
            &ds,
            &groups,
            &PartitionConfig {
                num_clients: 10,
                alpha,
                mode: PartitionMode::EmbeddingBased,
                seed: 0,
            },
        )?;
        for method in Method::ALL {
            let cfg = FlConfig {
                method,
                rounds: 10,
                local_steps: 50,
                lr0: 0.5,
                seed: 0,
                ..Default::default()
            };
            let outcome = run_federated(&ds, &plan, &arch, &cfg).map_err(|f| f.error)?;
            let curve: Vec<String> = outcome
                .records
                .iter()
                .step_by(3)
                .map(|r| format!("{:.3}", r.global_val_loss))
                .collect();
            println!(
                "alpha={alpha:<6} {method:<8} final {:.4}  curve {}",
                outcome.final_val_loss().unwrap_or(f64::NAN),
                curve.join(" ")
            );
        }
    }
    Ok(())
}
