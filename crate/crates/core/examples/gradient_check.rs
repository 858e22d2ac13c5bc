//! Backpropagation against central finite differences for each loss.
//!
//! cargo run --example gradient_check

use fedhet::datasets::{DataPoint, Target};
use fedhet::models::{backward, init_params, mean_loss, Activation, Architecture, LossKind};
use fedhet::numerics::{standard_normal, RngStream};

fn main() -> fedhet::Result<()> {
    let mut rng = RngStream::new(3, 0);
    for (activation, kind) in [
        (Activation::Tanh, LossKind::Mse),
        (Activation::Tanh, LossKind::L1),
        (Activation::Relu, LossKind::CrossEntropy),
    ] {
        let arch = Architecture {
            input_dim: 5,
            hidden: vec![7, 6],
            activation,
            output_dim: 3,
        };
        let params = init_params(&arch, &mut rng)?;
        let batch: Vec<DataPoint> = (0..4)
            .map(|i| DataPoint {
                id: i,
                features: (0..5).map(|_| standard_normal(&mut rng)).collect(),
                target: match kind {
                    LossKind::CrossEntropy => Target::Class(i as usize % 3),
                    _ => Target::Values((0..3).map(|_| standard_normal(&mut rng)).collect()),
                },
                class_label: None,
                latent_group: None,
            })
            .collect();
        let refs: Vec<&DataPoint> = batch.iter().collect();
        let (grad, _) = backward(&params, &arch, &refs, kind)?;

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            let fd = (mean_loss(&plus, &arch, &batch, kind)? - mean_loss(&minus, &arch, &batch, kind)?) / (2.0 * h);
            let g = grad.values()[i];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-8));
        }
        println!(
            "{activation:?} {kind:?}: {} parameters, max relative error {worst:.2e}",
            params.len()
        );
    }
    Ok(())
}
