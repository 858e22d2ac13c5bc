use super::{FlConfig, Method};
use crate::datasets::{DataPoint, GroupedDataset};
use crate::error::{Error, Result};
use crate::models::{backward, Architecture, LossKind, ModelParams, Role};
use crate::numerics::{random_permutation, RngStream};

/// Draws mini-batches by walking a shuffled order of the training indices,
/// reshuffling whenever the order is exhausted.
pub struct BatchSampler<'a> {
    indices: &'a [usize],
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: RngStream,
}

impl<'a> BatchSampler<'a> {
    pub fn new(indices: &'a [usize], batch_size: usize, mut rng: RngStream) -> Self {
        let order = random_permutation(indices.len(), &mut rng);
        Self {
            indices,
            order,
            cursor: 0,
            batch_size: batch_size.min(indices.len()),
            rng,
        }
    }

    /// Positions into the dataset for the next batch.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size {
            if self.cursor == self.order.len() {
                self.order = random_permutation(self.indices.len(), &mut self.rng);
                self.cursor = 0;
            }
            out.push(self.indices[self.order[self.cursor]]);
            self.cursor += 1;
        }
        out
    }
}

/// Per-client state carried across rounds.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    /// Dataset positions used for local SGD.
    pub train: Vec<usize>,
    /// Dataset positions held out for validation; disjoint from `train`.
    pub validation: Vec<usize>,
    /// For FedRep and FedAmp this is the client's persistent personalized
    /// model; for the global-model methods it is the last local result.
    pub local: ModelParams,
    /// SCAFFOLD client control variate.
    pub control: Option<ModelParams>,
    /// FedAmp attentive target received from the server.
    pub attentive: Option<ModelParams>,
}

/// Result of one client's local round.
#[derive(Clone, Debug)]
pub struct LocalUpdate {
    pub params: ModelParams,
    pub mean_train_loss: f64,
    pub control: Option<ModelParams>,
}

/// Runs `config.local_steps` SGD steps for one client.
///
/// The starting point depends on the method: global-model methods copy the
/// broadcast model, FedRep takes the shared segments from the broadcast and
/// keeps its own output layer, FedAmp continues from its previous local model.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    client: &ClientState,
    dataset: &GroupedDataset,
    arch: &Architecture,
    global: &ModelParams,
    server_control: Option<&ModelParams>,
    config: &FlConfig,
    round: usize,
    loss_kind: LossKind,
) -> Result<LocalUpdate> {
    if client.train.is_empty() {
        return Err(Error::InvalidInput(format!(
            "client {} has no training data",
            client.id
        )));
    }
    let lr = config.lr_at(round);
    let mut w = match config.method {
        Method::FedAvg | Method::FedProx | Method::Scaffold => global.clone(),
        Method::FedRep => {
            let mut w = client.local.clone();
            w.copy_roles_from(global, Role::SHARED)?;
            w
        }
        Method::FedAmp => client.local.clone(),
    };
    let anchor = w.clone();
    let zero;
    let (c_local, c_server) = if config.method == Method::Scaffold {
        zero = global.zeros_like();
        (
            client.control.as_ref().unwrap_or(&zero),
            server_control.unwrap_or(&zero),
        )
    } else {
        zero = global.zeros_like();
        (&zero, &zero)
    };
    let head_steps = config.head_steps();
    let rng = RngStream::derive(config.seed, "local-batches", client.id as u64, round as u64);
    let mut sampler = BatchSampler::new(&client.train, config.batch_size, rng);
    let points = dataset.points();
    let mut loss_sum = 0.0;

    for step in 0..config.local_steps {
        let batch_idx = sampler.next_batch();
        let batch: Vec<&DataPoint> = batch_idx.iter().map(|&i| &points[i]).collect();
        let (mut g, batch_loss) = backward(&w, arch, &batch, loss_kind)?;
        if !batch_loss.is_finite() {
            return Err(Error::Diverged {
                client: client.id,
                round,
                detail: format!("non-finite loss at local step {step}"),
            });
        }
        loss_sum += batch_loss;
        match config.method {
            Method::FedAvg => {}
            Method::FedProx => g.add_scaled(&w.difference(&anchor)?, config.mu)?,
            Method::Scaffold => {
                g.add_scaled(c_local, -1.0)?;
                g.add_scaled(c_server, 1.0)?;
            }
            Method::FedRep => {
                if step < head_steps {
                    g.mask_to(Role::HEAD);
                } else {
                    g.mask_to(Role::SHARED);
                }
            }
            Method::FedAmp => {
                let target = client.attentive.as_ref().unwrap_or(&anchor);
                g.add_scaled(&w.difference(target)?, config.lambda)?;
            }
        }
        w.add_scaled(&g, -lr)?;
        if !w.is_finite() {
            return Err(Error::Diverged {
                client: client.id,
                round,
                detail: format!("non-finite parameters after local step {step}"),
            });
        }
    }

    let control = if config.method == Method::Scaffold {
        // option II: c_n <- c_n - c + (w_global - w_final) / (K * lr)
        let mut c = c_local.clone();
        c.add_scaled(c_server, -1.0)?;
        c.add_scaled(&global.difference(&w)?, 1.0 / (config.local_steps as f64 * lr))?;
        Some(c)
    } else {
        None
    };
    Ok(LocalUpdate {
        params: w,
        mean_train_loss: loss_sum / config.local_steps as f64,
        control,
    })
}

/// The FedProx add-on to a gradient: `mu * (w - w_global)`.
pub fn proximal_term(w: &ModelParams, w_global: &ModelParams, mu: f64) -> Result<ModelParams> {
    let mut d = w.difference(w_global)?;
    d.scale(mu);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Layout;
    use std::sync::Arc;

    #[test]
    fn proximal_arithmetic() {
        let l = Arc::new(Layout::new([("w".to_string(), Role::Encoder, 2, 1)]));
        let w = ModelParams::new(vec![1.0, -2.0], l.clone()).unwrap();
        let g = ModelParams::zeros(l);
        let t = proximal_term(&w, &g, 0.1).unwrap();
        assert!((t.values()[0] - 0.1).abs() < 1e-15 && (t.values()[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn sampler_covers_every_index_per_pass() {
        let idx: Vec<usize> = (100..110).collect();
        let mut s = BatchSampler::new(&idx, 5, RngStream::new(0, 0));
        let mut first: Vec<usize> = s.next_batch().into_iter().chain(s.next_batch()).collect();
        first.sort_unstable();
        assert_eq!(first, idx);
        let mut tiny = BatchSampler::new(&idx[..2], 16, RngStream::new(0, 0));
        assert_eq!(tiny.next_batch().len(), 2);
    }
}
