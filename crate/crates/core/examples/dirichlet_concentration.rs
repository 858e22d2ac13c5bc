//! How the concentration `alpha` shapes per-client group mixtures.
//!
//! cargo run --example dirichlet_concentration

use fedhet::numerics::{RngStream, Simplex};
use fedhet::partitioner::client_group_ratios;

fn main() -> fedhet::Result<()> {
    let prior = Simplex::uniform(16);
    let mut rng = RngStream::new(0, 0);
    println!("alpha       mean_top2  max_tv_to_prior");
    for alpha in [0.1, 1.0, 10.0, 1000.0, 1e6] {
        let ratios = client_group_ratios(&prior, alpha, 25, &mut rng)?;
        let rows = &ratios.rows;
        let top2 = rows.iter().map(|r| r.top2_mass()).sum::<f64>() / rows.len() as f64;
        let tv = rows
            .iter()
            .map(|r| 0.5 * r.iter().zip(prior.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        println!("{alpha:<10}  {top2:<9.4}  {tv:.4}");
    }
    Ok(())
}
