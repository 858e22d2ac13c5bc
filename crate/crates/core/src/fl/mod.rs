//! Round-based federated training with FedAvg, FedProx, SCAFFOLD, FedRep
//! and FedAmp.

mod aggregate;
mod local;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::GroupedDataset;
use crate::error::{Error, Result};
use crate::models::{init_params, mean_loss, Architecture, LossKind, ModelParams, Role};
use crate::numerics::{random_permutation, RngStream};
use crate::partitioner::PartitionPlan;
use crate::tabular::{fmt_f64, write_atomic, Writer};

pub use aggregate::{aggregate_weighted, attentive_models, fedamp_weights, scaffold_server_update};
pub use local::{local_train, proximal_term, BatchSampler, ClientState, LocalUpdate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    FedAvg,
    FedProx,
    Scaffold,
    FedRep,
    FedAmp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::FedAvg,
        Method::FedProx,
        Method::Scaffold,
        Method::FedRep,
        Method::FedAmp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::Scaffold => "scaffold",
            Method::FedRep => "fedrep",
            Method::FedAmp => "fedamp",
        }
    }

    /// Whether each client is evaluated with its own model rather than the
    /// shared global one.
    pub fn is_personalized(self) -> bool {
        matches!(self, Method::FedRep | Method::FedAmp)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlConfig {
    pub method: Method,
    pub rounds: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub mu: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub self_weight: f64,
    /// FedRep head-only steps per round; half of `local_steps` when unset.
    pub head_steps: Option<usize>,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            method: Method::FedAvg,
            rounds: 20,
            local_steps: 100,
            batch_size: 16,
            lr0: 1e-4,
            lr_decay: 0.99,
            mu: 0.01,
            lambda: 0.1,
            sigma: 1.0,
            self_weight: 0.5,
            head_steps: None,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.local_steps == 0 || self.batch_size == 0 {
            return bad("local_steps and batch_size must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0,1], got {}", self.lr_decay));
        }
        if !(self.mu >= 0.0) {
            return bad(format!("mu must be non-negative, got {}", self.mu));
        }
        if !(self.lambda > 0.0) || !(self.sigma > 0.0) {
            return bad("lambda and sigma must be positive".into());
        }
        if !(0.0..1.0).contains(&self.self_weight) {
            return bad(format!("self_weight must lie in [0,1), got {}", self.self_weight));
        }
        if self.head_steps.is_some_and(|h| h > self.local_steps) {
            return bad("head_steps exceeds local_steps".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must lie in [0,1), got {}",
                self.validation_fraction
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, round: usize) -> f64 {
        lr_schedule(self.lr0, self.lr_decay, round)
    }

    pub fn head_steps(&self) -> usize {
        self.head_steps.unwrap_or(self.local_steps / 2)
    }
}

/// `lr0 * gamma^t`.
pub fn lr_schedule(lr0: f64, gamma: f64, t: usize) -> f64 {
    lr0 * gamma.powi(t as i32)
}

/// Diagnostics for one global round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean over clients with validation data of their validation loss.
    pub global_val_loss: f64,
    pub mean_train_loss: f64,
    pub client_train_loss: Vec<f64>,
    pub client_val_loss: Vec<Option<f64>>,
    pub lr: f64,
    pub wall_time_secs: f64,
}

impl RoundRecord {
    pub fn min_client_val(&self) -> f64 {
        self.client_val_loss
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_client_val(&self) -> f64 {
        self.client_val_loss
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Equality ignoring wall time.
    pub fn same_losses(&self, other: &Self) -> bool {
        let strip = |r: &Self| RoundRecord {
            wall_time_secs: 0.0,
            ..r.clone()
        };
        strip(self) == strip(other)
    }
}

#[derive(Clone, Debug)]
pub struct FlOutcome {
    pub records: Vec<RoundRecord>,
    /// Size-weighted aggregate of the final client models. For FedRep only
    /// its shared segments are meaningful.
    pub global: ModelParams,
    /// Final per-client models (personalized methods) or copies of the
    /// global model.
    pub client_models: Vec<ModelParams>,
    pub server_control: Option<ModelParams>,
}

impl FlOutcome {
    pub fn final_val_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.global_val_loss)
    }
}

/// A run that stopped early; `records` holds the rounds that completed.
#[derive(Debug, thiserror::Error)]
#[error("federated run failed after {} rounds: {error}", records.len())]
pub struct RunFailure {
    pub error: Error,
    pub records: Vec<RoundRecord>,
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            records: Vec::new(),
        }
    }
}

/// Splits each client's members into training and validation positions.
///
/// The validation share is `round(fraction * n)`, capped so that at least
/// one point remains for training.
pub fn split_clients(plan: &PartitionPlan, fraction: f64, seed: u64) -> Vec<(Vec<usize>, Vec<usize>)> {
    plan.client_members()
        .into_iter()
        .enumerate()
        .map(|(c, members)| {
            let n = members.len();
            let n_val = ((fraction * n as f64).round() as usize).min(n.saturating_sub(1));
            let mut rng = RngStream::derive(seed, "validation-split", c as u64, 0);
            let order = random_permutation(n, &mut rng);
            let mut val: Vec<usize> = order[..n_val].iter().map(|&i| members[i]).collect();
            let mut train: Vec<usize> = order[n_val..].iter().map(|&i| members[i]).collect();
            val.sort_unstable();
            train.sort_unstable();
            (train, val)
        })
        .collect()
}

/// Initial model drawn from the run seed.
pub fn initial_params(arch: &Architecture, seed: u64) -> Result<ModelParams> {
    init_params(arch, &mut RngStream::derive(seed, "model-init", 0, 0))
}

/// Runs `config.rounds` rounds starting from [`initial_params`].
pub fn run_federated(
    dataset: &GroupedDataset,
    plan: &PartitionPlan,
    arch: &Architecture,
    config: &FlConfig,
) -> std::result::Result<FlOutcome, RunFailure> {
    let init = initial_params(arch, config.seed)?;
    run_federated_from(dataset, plan, arch, config, init)
}

pub fn run_federated_from(
    dataset: &GroupedDataset,
    plan: &PartitionPlan,
    arch: &Architecture,
    config: &FlConfig,
    init: ModelParams,
) -> std::result::Result<FlOutcome, RunFailure> {
    config.validate()?;
    arch.validate()?;
    if plan.client_of.len() != dataset.len() {
        return Err(Error::Shape(format!(
            "plan covers {} points but dataset has {}",
            plan.client_of.len(),
            dataset.len()
        ))
        .into());
    }
    if plan.ids != dataset.ids() {
        return Err(Error::InvalidInput("plan ids do not match dataset order".into()).into());
    }
    let loss_kind = LossKind::for_task(dataset.task_kind());
    let method = config.method;

    let mut clients: Vec<ClientState> = split_clients(plan, config.validation_fraction, config.seed)
        .into_iter()
        .enumerate()
        .map(|(id, (train, validation))| ClientState {
            id,
            train,
            validation,
            local: init.clone(),
            control: (method == Method::Scaffold).then(|| init.zeros_like()),
            attentive: None,
        })
        .collect();
    if let Some(c) = clients.iter().find(|c| c.train.is_empty()) {
        return Err(Error::InvalidInput(format!("client {} has no data", c.id)).into());
    }
    if method == Method::FedAmp && clients.len() < 2 {
        return Err(Error::InvalidParameter("FedAmp needs at least 2 clients".into()).into());
    }
    let sizes: Vec<usize> = clients.iter().map(|c| c.train.len()).collect();
    let mut global = init;
    let mut server_control = (method == Method::Scaffold).then(|| global.zeros_like());
    let mut records = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        let started = Instant::now();
        let updates: Vec<Result<LocalUpdate>> = clients
            .par_iter()
            .map(|c| {
                local_train(
                    c,
                    dataset,
                    arch,
                    &global,
                    server_control.as_ref(),
                    config,
                    round,
                    loss_kind,
                )
            })
            .collect();
        let mut ok = Vec::with_capacity(updates.len());
        for u in updates {
            match u {
                Ok(u) => ok.push(u),
                Err(error) => return Err(RunFailure { error, records }),
            }
        }
        let locals: Vec<ModelParams> = ok.iter().map(|u| u.params.clone()).collect();
        let train_losses: Vec<f64> = ok.iter().map(|u| u.mean_train_loss).collect();

        let step = (|| -> Result<()> {
            let aggregate = aggregate_weighted(&locals, &sizes)?;
            match method {
                Method::FedAvg | Method::FedProx => global = aggregate,
                Method::Scaffold => {
                    global = aggregate;
                    for (c, u) in clients.iter_mut().zip(ok.iter_mut()) {
                        c.control = u.control.take();
                    }
                    let variates: Vec<ModelParams> = clients.iter().filter_map(|c| c.control.clone()).collect();
                    server_control = Some(scaffold_server_update(&variates)?);
                }
                Method::FedRep => {
                    global.copy_roles_from(&aggregate, Role::SHARED)?;
                    for (c, w) in clients.iter_mut().zip(&locals) {
                        c.local = w.clone();
                        c.local.copy_roles_from(&global, Role::SHARED)?;
                    }
                }
                Method::FedAmp => {
                    global = aggregate;
                    let weights = fedamp_weights(&locals, config.sigma, config.self_weight)?;
                    let targets = attentive_models(&locals, &weights)?;
                    for ((c, w), u) in clients.iter_mut().zip(&locals).zip(targets) {
                        c.local = w.clone();
                        c.attentive = Some(u);
                    }
                }
            }
            Ok(())
        })();
        if let Err(error) = step {
            return Err(RunFailure { error, records });
        }

        let val: Vec<Option<f64>> = clients
            .par_iter()
            .map(|c| {
                if c.validation.is_empty() {
                    return Ok(None);
                }
                let model = if method.is_personalized() { &c.local } else { &global };
                let pts = c.validation.iter().map(|&i| &dataset.points()[i]);
                mean_loss(model, arch, pts, loss_kind).map(Some)
            })
            .collect::<Result<_>>()
            .map_err(|error| RunFailure {
                error,
                records: records.clone(),
            })?;
        let present: Vec<f64> = val.iter().flatten().copied().collect();
        let global_val_loss = if present.is_empty() {
            f64::NAN
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        if !present.is_empty() && !global_val_loss.is_finite() {
            let error = Error::Diverged {
                client: val.iter().position(|v| v.is_some_and(|x| !x.is_finite())).unwrap_or(0),
                round,
                detail: "non-finite validation loss".into(),
            };
            return Err(RunFailure { error, records });
        }
        records.push(RoundRecord {
            round,
            global_val_loss,
            mean_train_loss: train_losses.iter().sum::<f64>() / train_losses.len() as f64,
            client_train_loss: train_losses,
            client_val_loss: val,
            lr: config.lr_at(round),
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
    }

    let client_models = if method.is_personalized() {
        clients.into_iter().map(|c| c.local).collect()
    } else {
        vec![global.clone(); plan.num_clients]
    };
    Ok(FlOutcome {
        records,
        global,
        client_models,
        server_control,
    })
}

pub fn round_log_to_string(records: &[RoundRecord]) -> String {
    let mut w = Writer::new();
    w.row([
        "round",
        "global_val_loss",
        "mean_train_loss",
        "min_client_val",
        "max_client_val",
        "lr",
    ]);
    for r in records {
        w.row([
            r.round.to_string(),
            fmt_f64(r.global_val_loss),
            fmt_f64(r.mean_train_loss),
            fmt_f64(r.min_client_val()),
            fmt_f64(r.max_client_val()),
            fmt_f64(r.lr),
        ]);
    }
    w.finish()
}

pub fn save_round_log(records: &[RoundRecord], path: &Path) -> Result<()> {
    write_atomic(path, round_log_to_string(records).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic_grouped, SyntheticConfig};
    use crate::models::backward;
    use crate::partitioner::{class_based_partition, PartitionConfig, PartitionMode};

    fn setup(points: usize, clients: usize, alpha: f64) -> (GroupedDataset, PartitionPlan, Architecture) {
        let cfg = SyntheticConfig {
            groups: 4,
            feature_dim: 4,
            target_dim: 2,
            points,
            ..Default::default()
        };
        let ds = generate_synthetic_grouped(&cfg, &mut RngStream::new(3, 0)).unwrap();
        let plan = class_based_partition(
            &ds,
            &PartitionConfig {
                num_clients: clients,
                alpha,
                mode: PartitionMode::ClassBased,
                seed: 5,
            },
        )
        .unwrap();
        let arch = Architecture {
            hidden: vec![8],
            ..Architecture::desk(4, 2)
        };
        (ds, plan, arch)
    }

    fn cfg(method: Method) -> FlConfig {
        FlConfig {
            method,
            rounds: 3,
            local_steps: 6,
            batch_size: 4,
            lr0: 0.05,
            seed: 9,
            ..Default::default()
        }
    }

    fn same(a: &FlOutcome, b: &FlOutcome) -> bool {
        a.records.len() == b.records.len()
            && a.records.iter().zip(&b.records).all(|(x, y)| x.same_losses(y))
            && a.global.values() == b.global.values()
    }

    #[test]
    fn lr_schedule_points() {
        assert_eq!(lr_schedule(1e-4, 0.99, 0), 1e-4);
        assert!((lr_schedule(1e-4, 0.99, 1) / 9.9e-5 - 1.0).abs() < 1e-12);
        assert_eq!(lr_schedule(0.3, 1.0, 17), 0.3);
    }

    #[test]
    fn zero_rounds_returns_initial_model() {
        let (ds, plan, arch) = setup(200, 3, 1.0);
        let c = FlConfig {
            rounds: 0,
            ..cfg(Method::FedAvg)
        };
        let out = run_federated(&ds, &plan, &arch, &c).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.global.values(), initial_params(&arch, c.seed).unwrap().values());
    }

    #[test]
    fn validation_split_is_disjoint_and_sized() {
        let (_, plan, _) = setup(400, 4, 1.0);
        for (c, (train, val)) in split_clients(&plan, 0.1, 1).into_iter().enumerate() {
            let n = plan.client_members()[c].len();
            assert_eq!(train.len() + val.len(), n);
            assert!(val.iter().all(|v| !train.contains(v)));
            assert_eq!(val.len(), ((0.1 * n as f64).round() as usize).min(n - 1));
        }
    }

    #[test]
    fn prox_with_zero_mu_matches_fedavg() {
        let (ds, plan, arch) = setup(300, 4, 0.5);
        let a = run_federated(&ds, &plan, &arch, &cfg(Method::FedAvg)).unwrap();
        let b = run_federated(
            &ds,
            &plan,
            &arch,
            &FlConfig {
                mu: 0.0,
                ..cfg(Method::FedProx)
            },
        )
        .unwrap();
        assert!(same(&a, &b));
        let c = run_federated(&ds, &plan, &arch, &cfg(Method::FedProx)).unwrap();
        assert!(!same(&a, &c));
    }

    #[test]
    fn scaffold_single_step_single_round_matches_fedavg() {
        let (ds, plan, arch) = setup(300, 4, 0.5);
        let one = |m| FlConfig {
            rounds: 1,
            local_steps: 1,
            ..cfg(m)
        };
        let a = run_federated(&ds, &plan, &arch, &one(Method::FedAvg)).unwrap();
        let b = run_federated(&ds, &plan, &arch, &one(Method::Scaffold)).unwrap();
        assert!(same(&a, &b));
    }

    #[test]
    fn scaffold_server_variate_is_client_mean() {
        let (ds, plan, arch) = setup(300, 4, 0.5);
        let init = initial_params(&arch, 9).unwrap();
        let c = cfg(Method::Scaffold);
        // rebuild the client variates from one round by hand
        let clients: Vec<ClientState> = split_clients(&plan, c.validation_fraction, c.seed)
            .into_iter()
            .enumerate()
            .map(|(id, (train, validation))| ClientState {
                id,
                train,
                validation,
                local: init.clone(),
                control: Some(init.zeros_like()),
                attentive: None,
            })
            .collect();
        let zero = init.zeros_like();
        let variates: Vec<ModelParams> = clients
            .iter()
            .map(|cl| {
                local_train(cl, &ds, &arch, &init, Some(&zero), &c, 0, LossKind::Mse)
                    .unwrap()
                    .control
                    .unwrap()
            })
            .collect();
        let server = scaffold_server_update(&variates).unwrap();
        let one = run_federated(&ds, &plan, &arch, &FlConfig { rounds: 1, ..c }).unwrap();
        assert_eq!(one.server_control.unwrap().values(), server.values());
    }

    #[test]
    fn fedrep_heads_survive_aggregation() {
        let (ds, plan, arch) = setup(300, 4, 0.5);
        let c = cfg(Method::FedRep);
        let out = run_federated(&ds, &plan, &arch, &c).unwrap();
        let heads: Vec<Vec<f64>> = out.client_models.iter().map(|m| m.view(Role::HEAD)).collect();
        assert!(heads.windows(2).any(|w| w[0] != w[1]));
        for m in &out.client_models {
            assert_eq!(m.view(Role::SHARED), out.global.view(Role::SHARED));
        }
    }

    #[test]
    fn single_client_fedavg_is_centralized_sgd() {
        let (ds, _, arch) = setup(120, 2, 1.0);
        let plan = PartitionPlan {
            ids: ds.ids(),
            client_of: vec![0; ds.len()],
            group_of: ds.class_labels().unwrap(),
            ratios: None,
            num_clients: 1,
        };
        let c = cfg(Method::FedAvg);
        let out = run_federated(&ds, &plan, &arch, &c).unwrap();
        let (train, _) = split_clients(&plan, c.validation_fraction, c.seed).remove(0);
        let mut w = initial_params(&arch, c.seed).unwrap();
        for round in 0..c.rounds {
            let rng = RngStream::derive(c.seed, "local-batches", 0, round as u64);
            let mut s = BatchSampler::new(&train, c.batch_size, rng);
            for _ in 0..c.local_steps {
                let batch: Vec<_> = s.next_batch().into_iter().map(|i| &ds.points()[i]).collect();
                let (g, _) = backward(&w, &arch, &batch, LossKind::Mse).unwrap();
                w.add_scaled(&g, -c.lr_at(round)).unwrap();
            }
        }
        assert_eq!(out.global.values(), w.values());
    }

    #[test]
    fn runs_are_deterministic_for_every_method() {
        let (ds, plan, arch) = setup(300, 4, 0.5);
        for m in Method::ALL {
            let a = run_federated(&ds, &plan, &arch, &cfg(m)).unwrap();
            let b = run_federated(&ds, &plan, &arch, &cfg(m)).unwrap();
            assert!(same(&a, &b), "{m}");
            assert_eq!(a.records.len(), 3);
            assert!(a.records.iter().all(|r| r.global_val_loss.is_finite()));
        }
    }

    #[test]
    fn divergence_keeps_completed_rounds() {
        let (ds, plan, arch) = setup(300, 4, 0.5);
        let c = FlConfig {
            lr0: 1e6,
            rounds: 5,
            ..cfg(Method::FedAvg)
        };
        let err = run_federated(&ds, &plan, &arch, &c).unwrap_err();
        assert!(matches!(err.error, Error::Diverged { .. }), "{err}");
        assert!(err.records.len() < 5);
    }

    #[test]
    fn round_log_columns() {
        let r = RoundRecord {
            round: 0,
            global_val_loss: 1.5,
            mean_train_loss: 2.0,
            client_train_loss: vec![2.0, 2.0],
            client_val_loss: vec![Some(1.0), Some(2.0)],
            lr: 0.1,
            wall_time_secs: 0.0,
        };
        assert_eq!(
            round_log_to_string(&[r]),
            "round,global_val_loss,mean_train_loss,min_client_val,max_client_val,lr\n0,1.5,2,1,2,0.1\n"
        );
        assert!(FlConfig {
            rounds: 1,
            local_steps: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
