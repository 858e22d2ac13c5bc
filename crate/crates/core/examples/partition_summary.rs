//! Class-based versus embedding-based partitions of one synthetic dataset.
//!
//! cargo run --release --example partition_summary

use fedhet::datasets::{generate_synthetic_grouped, SyntheticConfig};
use fedhet::numerics::RngStream;
use fedhet::partitioner::{
    class_based_partition, embedding_based_partition, heterogeneity_summary, PartitionConfig, PartitionMode,
};

fn main() -> fedhet::Result<()> {
    let ds = generate_synthetic_grouped(
        &SyntheticConfig {
            points: 4000,
            ..Default::default()
        },
        &mut RngStream::new(1, 0),
    )?;
    // latent groups stand in for a k-means clustering of task embeddings
    let groups: Vec<(u64, usize)> = ds
        .ids()
        .into_iter()
        .zip(ds.latent_groups().expect("synthetic"))
        .collect();
    for alpha in [0.1, 10.0, 1000.0] {
        for mode in [PartitionMode::ClassBased, PartitionMode::EmbeddingBased] {
            let cfg = PartitionConfig {
                num_clients: 25,
                alpha,
                mode,
                seed: 0,
            };
            let plan = match mode {
                PartitionMode::ClassBased => class_based_partition(&ds, &cfg)?,
                PartitionMode::EmbeddingBased => embedding_based_partition(&ds, &groups, &cfg)?,
            };
            let s = heterogeneity_summary(&plan);
            println!(
                "alpha={alpha:<6} {:<9} mean top-2 mass {:.3}, client sizes {}..{}",
                mode.as_str(),
                s.mean_top2,
                s.min_size,
                s.max_size
            );
        }
    }
    Ok(())
}
