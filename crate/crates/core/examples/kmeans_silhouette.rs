//! K-means++ on well-separated blobs and the silhouette sweep over k.
//!
//! cargo run --release --example kmeans_silhouette

use fedhet::analysis::ari_labels;
use fedhet::embedding::{kmeans_fit, silhouette_sweep, EmbeddingMatrix};
use fedhet::numerics::{standard_normal, Matrix, RngStream};

fn main() -> fedhet::Result<()> {
    let (k_true, per, dim) = (16, 30, 6);
    let mut rng = RngStream::new(11, 0);
    let centers: Vec<Vec<f64>> = (0..k_true)
        .map(|_| (0..dim).map(|_| 20.0 * standard_normal(&mut rng)).collect())
        .collect();
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (g, c) in centers.iter().enumerate() {
        for _ in 0..per {
            rows.push(
                c.iter()
                    .map(|x| x + 0.5 * standard_normal(&mut rng))
                    .collect::<Vec<_>>(),
            );
            truth.push(g);
        }
    }
    let ids = (0..rows.len() as u64).collect();
    let emb = EmbeddingMatrix::new(ids, Matrix::from_rows(&rows).expect("rectangular"))?;

    let fit = kmeans_fit(&emb, k_true, 0, 300)?;
    println!(
        "k={k_true}: inertia {:.2} after {} iterations, ARI vs truth {:.4}",
        fit.inertia,
        fit.iterations,
        ari_labels(&truth, &fit.assignments)?
    );
    for (k, s) in silhouette_sweep(&emb, &[2, 4, 10, 16, 32], 0)? {
        println!("silhouette k={k:<3} {s:.4}");
    }
    Ok(())
}
