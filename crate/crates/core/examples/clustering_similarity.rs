//! ARI heatmap with permutation p-values between three labelings.
//!
//! cargo run --release --example clustering_similarity

use fedhet::analysis::{heatmap_to_string, similarity_heatmap, Clustering, TaskClusterings};
use fedhet::numerics::RngStream;

fn main() -> fedhet::Result<()> {
    let n = 600;
    let ids: Vec<u64> = (0..n as u64).collect();
    let truth: Vec<usize> = (0..n).map(|i| i % 6).collect();
    // a noisy copy of the truth: every fifth point relabeled at random
    let mut rng = RngStream::new(2, 0);
    let noisy: Vec<usize> = truth
        .iter()
        .enumerate()
        .map(|(i, &g)| if i % 5 == 0 { rng.below(6) } else { g })
        .collect();
    let unrelated: Vec<usize> = (0..n).map(|_| rng.below(6)).collect();

    let task = |name: &str, labels: Vec<usize>| -> fedhet::Result<TaskClusterings> {
        Ok(TaskClusterings {
            name: name.to_string(),
            runs: vec![Clustering::new(ids.clone(), labels)?],
        })
    };
    let tasks = vec![
        task("truth", truth)?,
        task("noisy", noisy)?,
        task("unrelated", unrelated)?,
    ];
    let cells = similarity_heatmap(&tasks, 100, 0)?;
    let names: Vec<String> = tasks.iter().map(|t| t.name.clone()).collect();
    print!("{}", heatmap_to_string(&names, &cells));
    Ok(())
}
