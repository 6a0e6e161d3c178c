use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    synth_global, synth_local_features, AdaptorDiscriminator, SynthGlobalConfig, SynthLocalConfig,
};
use crate::features::{Mask, PositionGrid};
use crate::numerics::{clip_global_norm, sigmoid, softplus, Adam, MlpParams, RngStream};
use crate::{Error, Result};

/// One nominal training sample: a feature grid and its foreground at grid
/// resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscSample {
    pub features: PositionGrid,
    pub foreground: Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Global gradient-norm clip (0 disables).
    pub clip_norm: f64,
    pub seed: u64,
    pub local: SynthLocalConfig,
    pub global: SynthGlobalConfig,
}

impl Default for DiscTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 4,
            clip_norm: 5.0,
            seed: 0,
            local: SynthLocalConfig::default(),
            global: SynthGlobalConfig::default(),
        }
    }
}

/// Mean summed three-branch loss per sample, one entry per epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscTrainHistory {
    pub epoch_loss: Vec<f64>,
}

struct Grads {
    adaptor: MlpParams,
    disc: MlpParams,
}

/// Mean BCE over active positions; accumulates parameter gradients. When
/// `through_adaptor` is false the grid is already in adapted space.
fn branch(
    model: &AdaptorDiscriminator,
    grid: &PositionGrid,
    target: impl Fn(usize) -> f64,
    active: &[bool],
    through_adaptor: bool,
    scale: f64,
    grads: &mut Grads,
) -> Result<f64> {
    let n = active.iter().filter(|&&a| a).count();
    if n == 0 {
        return Ok(0.0);
    }
    let w = scale / n as f64;
    let mut loss = 0.0;
    for p in (0..grid.positions()).filter(|&p| active[p]) {
        let y = target(p);
        let (a_trace, x) = if through_adaptor {
            let t = model.adaptor().forward_trace(grid.at(p))?;
            let x = t.output().to_vec();
            (Some(t), x)
        } else {
            (None, grid.at(p).to_vec())
        };
        let d_trace = model.discriminator().forward_trace(&x)?;
        let l = d_trace.output()[0];
        loss += softplus(l) - y * l;
        let gx = model
            .discriminator()
            .backward(&d_trace, &[(sigmoid(l) - y) * w], &mut grads.disc);
        if let Some(t) = a_trace {
            model.adaptor().backward(&t, &gx, &mut grads.adaptor);
        }
    }
    Ok(loss / n as f64)
}

fn sample_grad(
    model: &AdaptorDiscriminator,
    s: &DiscSample,
    cfg: &DiscTrainConfig,
    rng: &mut RngStream,
    scale: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Grads {
        adaptor: model.adaptor().zeros_like(),
        disc: model.discriminator().zeros_like(),
    };
    let active: Vec<bool> = model.gated(&s.features).into_iter().map(|z| !z).collect();
    let mut loss = branch(model, &s.features, |_| 0.0, &active, true, scale, &mut g)?;

    let (aug, mask) = synth_local_features(&s.features, &s.foreground, &cfg.local, rng)?;
    let aug_active: Vec<bool> = model.gated(&aug).into_iter().map(|z| !z).collect();
    let target = |p: usize| if mask.data()[p] { 1.0 } else { 0.0 };
    loss += branch(model, &aug, target, &aug_active, true, scale, &mut g)?;

    let adapted = model.adapt(&s.features)?;
    let perturbed = synth_global(model, &adapted, Some(&active), &cfg.global, rng)?;
    loss += branch(model, &perturbed, |_| 1.0, &active, false, scale, &mut g)?;

    let mut flat = g.adaptor.flatten();
    g.disc.flatten_into(&mut flat);
    Ok((loss, flat))
}

/// Adam on the summed nominal, local and global BCE branches.
///
/// Each sample draws its synthetic anomalies from a stream keyed by epoch
/// and sample index, and batch gradients are summed in sample order, so
/// the result is identical for any thread count.
pub fn train_discriminator(
    mut model: AdaptorDiscriminator,
    data: &[DiscSample],
    cfg: &DiscTrainConfig,
) -> Result<(AdaptorDiscriminator, DiscTrainHistory)> {
    if cfg.batch_size == 0
        || cfg.learning_rate.is_nan()
        || cfg.learning_rate <= 0.0
        || cfg.clip_norm < 0.0
    {
        return Err(Error::InvalidArgument(
            "training needs batch_size >= 1, learning_rate > 0 and clip_norm >= 0".into(),
        ));
    }
    cfg.local.validate()?;
    cfg.global.validate()?;
    if data.is_empty() {
        return Err(Error::Insufficient("no training samples".into()));
    }
    for (i, s) in data.iter().enumerate() {
        if s.features.dim() != model.dim() {
            return Err(Error::Shape(format!(
                "sample {i} has {} channels, model expects {}",
                s.features.dim(),
                model.dim()
            )));
        }
        if s.foreground.width() != s.features.width()
            || s.foreground.height() != s.features.height()
        {
            return Err(Error::Shape(format!(
                "sample {i}: foreground and grid sizes differ"
            )));
        }
        if s.foreground.is_empty() {
            return Err(Error::Insufficient(format!(
                "sample {i} has an empty foreground"
            )));
        }
    }
    let mut history = DiscTrainHistory::default();
    let mut params = model.params_flat();
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    let root = RngStream::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        let erng = root.fork(epoch as u64);
        erng.fork(u64::MAX).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let per: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| sample_grad(&model, &data[i], cfg, &mut erng.fork(i as u64), scale))
                .collect::<Result<_>>()
                .map_err(|e| Error::Divergence {
                    epoch,
                    detail: e.to_string(),
                })?;
            let mut grad = vec![0.0; params.len()];
            for (l, g) in &per {
                epoch_loss += l;
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
            model.set_params_flat(&params)?;
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("loss {mean}"),
            });
        }
        history.epoch_loss.push(mean);
    }
    Ok((model, history))
}
