use crate::error::{Error, Result};
use crate::models::{ModelParams, Role};

/// `sum_n (D_n / D) * models[n]`.
pub fn aggregate_weighted(models: &[ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidInput("nothing to aggregate".into()))?;
    if models.len() != sizes.len() {
        return Err(Error::Shape(format!(
            "{} models but {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidInput("client sizes must be at least 1".into()));
    }
    let total: usize = sizes.iter().sum();
    let mut out = first.zeros_like();
    for (m, &d) in models.iter().zip(sizes) {
        out.add_scaled(m, d as f64 / total as f64)?;
    }
    Ok(out)
}

/// Unweighted mean of the client control variates.
pub fn scaffold_server_update(variates: &[ModelParams]) -> Result<ModelParams> {
    let first = variates
        .first()
        .ok_or_else(|| Error::InvalidInput("no control variates".into()))?;
    let mut sum = first.zeros_like();
    for c in variates {
        sum.add_scaled(c, 1.0)?;
    }
    let n = variates.len() as f64;
    for v in sum.values_mut() {
        *v /= n;
    }
    Ok(sum)
}

/// Row-stochastic attention matrix for attentive aggregation.
///
/// Off-diagonal weights are a softmax over `-||dec_n - dec_m||^2 / sigma`
/// (decoder body and output layer only) scaled by `1 - self_weight`; the
/// diagonal holds `self_weight`.
pub fn fedamp_weights(all_params: &[ModelParams], sigma: f64, self_weight: f64) -> Result<Vec<Vec<f64>>> {
    let n = all_params.len();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "attentive weights need at least 2 clients".into(),
        ));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if !(0.0..1.0).contains(&self_weight) {
        return Err(Error::InvalidParameter(format!(
            "self weight must lie in [0,1), got {self_weight}"
        )));
    }
    let decoders: Vec<Vec<f64>> = all_params.iter().map(|p| p.view(Role::DECODER)).collect();
    for p in &all_params[1..] {
        all_params[0].check_layout(p)?;
    }
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        let scores: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d2: f64 = decoders[i]
                    .iter()
                    .zip(&decoders[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (j, -d2 / sigma)
            })
            .collect();
        let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|(_, s)| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for ((j, _), e) in scores.iter().zip(&exps) {
            out[i][*j] = (1.0 - self_weight) * e / z;
        }
        out[i][i] = self_weight;
    }
    Ok(out)
}

/// `u_n = sum_m weights[n][m] * params[m]` over full parameter vectors.
pub fn attentive_models(params: &[ModelParams], weights: &[Vec<f64>]) -> Result<Vec<ModelParams>> {
    weights
        .iter()
        .map(|row| {
            let mut u = params[0].zeros_like();
            for (p, &w) in params.iter().zip(row) {
                u.add_scaled(p, w)?;
            }
            Ok(u)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Layout;
    use std::sync::Arc;

    fn layout() -> Arc<Layout> {
        Arc::new(Layout::new([
            ("l0.weight".to_string(), Role::Encoder, 1, 1),
            ("l1.weight".to_string(), Role::DecoderOutput, 1, 1),
        ]))
    }

    fn p(v: &[f64]) -> ModelParams {
        ModelParams::new(v.to_vec(), layout()).unwrap()
    }

    #[test]
    fn weighted_mean_cases() {
        assert_eq!(
            aggregate_weighted(&[p(&[1.0, 3.0]), p(&[3.0, 5.0])], &[2, 2])
                .unwrap()
                .values(),
            &[2.0, 4.0]
        );
        assert_eq!(
            aggregate_weighted(&[p(&[1.5, -3.0])], &[7]).unwrap().values(),
            &[1.5, -3.0]
        );
        assert_eq!(
            aggregate_weighted(&[p(&[0.0, 0.0]), p(&[4.0, 4.0])], &[1, 3])
                .unwrap()
                .values(),
            &[3.0, 3.0]
        );
        let other = ModelParams::zeros(Arc::new(Layout::new([("w".to_string(), Role::Encoder, 3, 1)])));
        assert!(aggregate_weighted(&[p(&[0.0, 0.0]), other], &[1, 1]).is_err());
    }

    #[test]
    fn scaffold_mean_cases() {
        assert_eq!(
            scaffold_server_update(&[p(&[0.0, 0.0]), p(&[0.0, 0.0])])
                .unwrap()
                .values(),
            &[0.0, 0.0]
        );
        assert_eq!(
            scaffold_server_update(&[p(&[2.0, 2.0]), p(&[4.0, 4.0])])
                .unwrap()
                .values(),
            &[3.0, 3.0]
        );
        assert_eq!(
            scaffold_server_update(&[p(&[1.25, 9.0])]).unwrap().values(),
            &[1.25, 9.0]
        );
    }

    #[test]
    fn identical_clients_get_uniform_weights() {
        let ps = vec![p(&[1.0, 2.0]); 4];
        let w = fedamp_weights(&ps, 1.0, 0.5).unwrap();
        for (i, row) in w.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                let expect = if i == j { 0.5 } else { 0.5 / 3.0 };
                assert!((x - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_ratio_and_sigma_limit() {
        // decoder distances from client 0: 0 to client 1, 10 to client 2
        let ps = vec![p(&[0.0, 0.0]), p(&[5.0, 0.0]), p(&[0.0, 10f64.sqrt()])];
        let w = fedamp_weights(&ps, 1.0, 0.0).unwrap();
        assert!((w[0][2] / w[0][1] - (-10.0f64).exp()).abs() < 1e-18);
        let flat = fedamp_weights(&ps, 1e300, 0.0).unwrap();
        assert!((flat[0][1] - 0.5).abs() < 1e-12 && (flat[0][2] - 0.5).abs() < 1e-12);
        assert!(fedamp_weights(&ps, 0.0, 0.5).is_err());
        assert!(fedamp_weights(&ps[..1], 1.0, 0.5).is_err());
    }
}
