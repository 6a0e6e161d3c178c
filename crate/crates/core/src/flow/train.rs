use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CouplingFlow, FlowSample};
use crate::numerics::{clip_global_norm, Adam, RngStream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Evaluate on the held-out set every this many epochs (0 disables).
    pub eval_every: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip (0 disables).
    pub clip_norm: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            eval_every: 10,
            learning_rate: 2e-3,
            clip_norm: 5.0,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.clip_norm < 0.0
        {
            return Err(Error::InvalidArgument(
                "training needs batch_size >= 1, learning_rate > 0 and clip_norm >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub loss: f64,
}

/// Losses are mean negative log-likelihood per position per dimension,
/// the quantity the optimizer minimizes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_loss: f64,
    /// Training loss after each epoch.
    pub epoch_loss: Vec<f64>,
    pub evals: Vec<EvalPoint>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> f64 {
        self.epoch_loss.last().copied().unwrap_or(self.initial_loss)
    }
}

fn mean_loss(flow: &CouplingFlow, data: &[FlowSample]) -> Result<f64> {
    let per: Vec<f64> = data
        .par_iter()
        .map(|x| {
            let w = 1.0 / (x.total_positions() * flow.config().dim) as f64;
            flow.log_density(x).map(|r| -r.logp * w)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / data.len() as f64)
}

/// Adam on per-dimension NLL with global gradient-norm clipping.
///
/// Each epoch visits the data in a seeded shuffled order. Per-sample
/// gradients are computed in parallel and summed in sample order, so the
/// result does not depend on the thread count.
pub fn train_flow(
    mut flow: CouplingFlow,
    data: &[FlowSample],
    cfg: &TrainConfig,
    eval: Option<&[FlowSample]>,
) -> Result<(CouplingFlow, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Insufficient("no training samples".into()));
    }
    for x in data {
        flow.check_sample(x)?;
    }
    let mut history = TrainHistory {
        initial_loss: mean_loss(&flow, data)?,
        ..TrainHistory::default()
    };
    let mut params = flow.params_flat();
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    let root = RngStream::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let dim = flow.config().dim;
    for epoch in 1..=cfg.epochs {
        root.fork(epoch as u64).shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len() as f64;
            let per: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let w = 1.0 / (b * (data[i].total_positions() * dim) as f64);
                    flow.loss_and_grad(&data[i], w)
                })
                .collect::<Result<_>>()
                .map_err(|e| Error::Divergence {
                    epoch,
                    detail: e.to_string(),
                })?;
            let mut grad = vec![0.0; params.len()];
            for (_, g) in &per {
                grad.iter_mut().zip(g).for_each(|(a, v)| *a += v);
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            clip_global_norm(&mut grad, cfg.clip_norm);
            opt.step(&mut params, &grad);
            flow.set_params_flat(&params)?;
        }
        let loss = mean_loss(&flow, data).map_err(|e| Error::Divergence {
            epoch,
            detail: e.to_string(),
        })?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("loss {loss}"),
            });
        }
        history.epoch_loss.push(loss);
        if let Some(ev) = eval {
            if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !ev.is_empty() {
                history.evals.push(EvalPoint {
                    epoch,
                    loss: mean_loss(&flow, ev)?,
                });
            }
        }
    }
    Ok((flow, history))
}

/// Copies of `data` with i.i.d. Gaussian noise of standard deviation
/// `noise_fraction` times the pooled feature standard deviation.
pub fn perturb_samples(
    data: &[FlowSample],
    noise_fraction: f64,
    rng: &mut RngStream,
) -> Vec<FlowSample> {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for x in data {
        for g in &x.scales {
            for &v in g.data() {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
    }
    let std = if n > 0 {
        let m = sum / n as f64;
        (sq / n as f64 - m * m).max(0.0).sqrt()
    } else {
        0.0
    };
    let sigma = noise_fraction * std;
    data.iter()
        .map(|x| {
            let mut y = x.clone();
            for g in &mut y.scales {
                g.data_mut()
                    .iter_mut()
                    .for_each(|v| *v += sigma * rng.normal());
            }
            y
        })
        .collect()
}

/// Background model for likelihood-ratio scoring: same architecture,
/// trained on noise-corrupted copies of the nominal data.
pub fn train_background_flow(
    flow: CouplingFlow,
    data: &[FlowSample],
    cfg: &TrainConfig,
    noise_fraction: f64,
) -> Result<(CouplingFlow, TrainHistory)> {
    let mut rng = RngStream::new(cfg.seed).fork(0xBAC6);
    let noisy = perturb_samples(data, noise_fraction, &mut rng);
    train_flow(flow, &noisy, cfg, None)
}
