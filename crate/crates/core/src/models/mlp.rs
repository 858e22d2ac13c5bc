use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::loss::{loss, loss_gradient, LossKind};
use super::params::{Layout, ModelParams, Role};
use crate::datasets::DataPoint;
use crate::error::{Error, Result};
use crate::numerics::{standard_normal, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation value `a = f(z)`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected network `input -> hidden... -> output`.
///
/// The first hidden layer is the encoder, the remaining hidden layers form
/// the decoder body and the final affine map is the decoder output layer.
/// The last hidden activation is the penultimate-layer embedding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
}

impl Architecture {
    /// The default desk-scale network: two tanh layers of width 32.
    pub fn desk(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidParameter(
                "architecture needs at least one hidden layer".into(),
            ));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn penultimate_width(&self) -> usize {
        *self.hidden.last().expect("validated architecture")
    }

    fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.output_dim))
            .collect()
    }

    fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn layout(&self) -> Layout {
        let w = self.widths();
        let last = self.num_layers() - 1;
        Layout::new((0..=last).flat_map(|l| {
            let role = if l == last {
                Role::DecoderOutput
            } else if l == 0 {
                Role::Encoder
            } else {
                Role::DecoderBody
            };
            [
                (format!("l{l}.weight"), role, w[l + 1], w[l]),
                (format!("l{l}.bias"), role, w[l + 1], 1),
            ]
        }))
    }
}

/// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
pub fn init_params(arch: &Architecture, rng: &mut RngStream) -> Result<ModelParams> {
    arch.validate()?;
    let layout = Arc::new(arch.layout());
    let mut params = ModelParams::zeros(layout.clone());
    for seg in layout.segments().iter().filter(|s| !s.is_bias()) {
        let scale = 1.0 / (seg.cols as f64).sqrt();
        for v in &mut params.values_mut()[seg.range()] {
            *v = scale * standard_normal(rng);
        }
    }
    Ok(params)
}

fn check_params(params: &ModelParams, arch: &Architecture) -> Result<()> {
    if params.len() != arch.layout().len() {
        return Err(Error::Shape(format!(
            "parameter vector of {} does not fit architecture ({})",
            params.len(),
            arch.layout().len()
        )));
    }
    Ok(())
}

/// Offsets of `(weight, bias)` for layer `l` in the flat vector.
fn layer_offsets(params: &ModelParams, l: usize) -> (usize, usize) {
    let segs = params.layout().segments();
    (segs[2 * l].offset, segs[2 * l + 1].offset)
}

/// Activations of every layer; `acts[0]` is the input, the last entry is the
/// output, and `acts[len - 2]` is the penultimate activation.
fn forward_trace(params: &ModelParams, arch: &Architecture, features: &[f64]) -> Vec<Vec<f64>> {
    let widths = arch.widths();
    let v = params.values();
    let last = arch.num_layers() - 1;
    let mut acts = Vec::with_capacity(widths.len());
    acts.push(features.to_vec());
    for l in 0..=last {
        let (wo, bo) = layer_offsets(params, l);
        let (n_in, n_out) = (widths[l], widths[l + 1]);
        let input = &acts[l];
        let mut out = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let row = &v[wo + j * n_in..wo + (j + 1) * n_in];
            let z = v[bo + j] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            out.push(if l == last { z } else { arch.activation.apply(z) });
        }
        acts.push(out);
    }
    acts
}

/// Returns `(output, penultimate_activation)`.
pub fn forward(params: &ModelParams, arch: &Architecture, features: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_params(params, arch)?;
    if features.len() != arch.input_dim {
        return Err(Error::Shape(format!(
            "expected {} features, got {}",
            arch.input_dim,
            features.len()
        )));
    }
    let mut acts = forward_trace(params, arch, features);
    let output = acts.pop().expect("output layer");
    let penultimate = acts.pop().expect("penultimate layer");
    Ok((output, penultimate))
}

/// Mean loss of the model over a set of points.
pub fn mean_loss<'a>(
    params: &ModelParams,
    arch: &Architecture,
    points: impl IntoIterator<Item = &'a DataPoint>,
    kind: LossKind,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for p in points {
        let (out, _) = forward(params, arch, &p.features)?;
        total += loss(kind, &out, &p.target)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("mean loss over an empty set".into()));
    }
    Ok(total / n as f64)
}

/// Exact gradient of the mean batch loss, plus the mean loss itself.
pub fn backward(
    params: &ModelParams,
    arch: &Architecture,
    batch: &[&DataPoint],
    kind: LossKind,
) -> Result<(ModelParams, f64)> {
    check_params(params, arch)?;
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let widths = arch.widths();
    let last = arch.num_layers() - 1;
    let v = params.values();
    let mut grad = params.zeros_like();
    let mut total_loss = 0.0;
    let inv_b = 1.0 / batch.len() as f64;

    for point in batch {
        if point.features.len() != arch.input_dim {
            return Err(Error::Shape(format!(
                "point {} has {} features, expected {}",
                point.id,
                point.features.len(),
                arch.input_dim
            )));
        }
        let acts = forward_trace(params, arch, &point.features);
        let output = &acts[last + 1];
        total_loss += loss(kind, output, &point.target)?;
        // delta = dLoss/dz for the current layer
        let mut delta = loss_gradient(kind, output, &point.target)?;
        let g = grad.values_mut();
        for l in (0..=last).rev() {
            let (wo, bo) = layer_offsets(params, l);
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let input = &acts[l];
            for j in 0..n_out {
                let d = delta[j] * inv_b;
                if d == 0.0 {
                    continue;
                }
                g[bo + j] += d;
                let row = &mut g[wo + j * n_in..wo + (j + 1) * n_in];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; n_in];
            for j in 0..n_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = &v[wo + j * n_in..wo + (j + 1) * n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += dj * w;
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= arch.activation.derivative_from_output(*a);
            }
            delta = prev;
        }
    }
    Ok((grad, total_loss * inv_b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Target;

    fn point(id: u64, features: Vec<f64>, target: Target) -> DataPoint {
        DataPoint {
            id,
            features,
            target,
            class_label: None,
            latent_group: None,
        }
    }

    #[test]
    fn same_seed_same_init_and_zero_biases() {
        let arch = Architecture::desk(3, 2);
        let a = init_params(&arch, &mut RngStream::new(1, 1)).unwrap();
        let b = init_params(&arch, &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(a, b);
        for s in a.layout().segments().iter().filter(|s| s.is_bias()) {
            assert!(a.values()[s.range()].iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn init_weight_variance_is_inverse_fan_in() {
        let arch = Architecture {
            input_dim: 256,
            hidden: vec![256],
            activation: Activation::Tanh,
            output_dim: 1,
        };
        let p = init_params(&arch, &mut RngStream::new(3, 0)).unwrap();
        let seg = &p.layout().segments()[0];
        let w = &p.values()[seg.range()];
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expect = 1.0 / 256.0;
        assert!((var - expect).abs() < 0.2 * expect, "var {var}");
    }

    #[test]
    fn zero_params_give_zero_output() {
        let arch = Architecture::desk(4, 3);
        let p = ModelParams::zeros(Arc::new(arch.layout()));
        let (out, pen) = forward(&p, &arch, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
        assert_eq!(pen.len(), 32);
    }

    #[test]
    fn one_hidden_layer_affine_path() {
        // relu hidden layer carrying x through, then an affine output
        let arch = Architecture {
            input_dim: 1,
            hidden: vec![1],
            activation: Activation::Relu,
            output_dim: 1,
        };
        let p = ModelParams::new(vec![1.0, 0.0, 2.0, 0.5], Arc::new(arch.layout())).unwrap();
        for x in [0.0, 0.25, 1.0, 3.0] {
            let (out, pen) = forward(&p, &arch, &[x]).unwrap();
            assert_eq!(out, vec![2.0 * x + 0.5]);
            assert_eq!(pen, vec![x]);
        }
    }

    #[test]
    fn dimension_errors() {
        let arch = Architecture::desk(2, 1);
        let p = init_params(&arch, &mut RngStream::new(0, 0)).unwrap();
        assert!(matches!(forward(&p, &arch, &[1.0]), Err(Error::Shape(_))));
        let other = Architecture::desk(3, 1);
        assert!(matches!(forward(&p, &other, &[1.0, 2.0, 3.0]), Err(Error::Shape(_))));
        assert!(backward(&p, &arch, &[], LossKind::Mse).is_err());
    }

    #[test]
    fn roles_follow_layer_positions() {
        let arch = Architecture::desk(2, 1);
        let roles: Vec<(String, Role)> = arch
            .layout()
            .segments()
            .iter()
            .map(|s| (s.name.clone(), s.role))
            .collect();
        assert_eq!(roles[0], ("l0.weight".into(), Role::Encoder));
        assert_eq!(roles[2], ("l1.weight".into(), Role::DecoderBody));
        assert_eq!(roles[5], ("l2.bias".into(), Role::DecoderOutput));
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let arch = Architecture::desk(2, 2);
        let p = init_params(&arch, &mut RngStream::new(4, 4)).unwrap();
        let x = point(0, vec![0.3, -0.7], Target::Values(vec![1.0, 0.0]));
        let (g1, l1) = backward(&p, &arch, &[&x], LossKind::Mse).unwrap();
        let (g2, l2) = backward(&p, &arch, &[&x, &x], LossKind::Mse).unwrap();
        assert_eq!(l1, l2);
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let arch = Architecture::desk(2, 1);
        let p = init_params(&arch, &mut RngStream::new(5, 5)).unwrap();
        let feats = vec![0.1, 0.2];
        let (out, _) = forward(&p, &arch, &feats).unwrap();
        let x = point(0, feats, Target::Values(out));
        let (g, l) = backward(&p, &arch, &[&x], LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.values().iter().all(|v| *v == 0.0));
    }
}
