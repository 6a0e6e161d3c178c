//! Adaptor + discriminator detector trained on synthesized anomalies.
//!
//! A per-position adaptor perceptron re-embeds frozen features, and a
//! per-position discriminator maps adapted vectors to anomaly
//! probabilities. Training draws three branches per nominal sample: the
//! sample itself (target 0), a local anomaly blended into the foreground
//! (target = blob mask), and a global anomaly obtained by truncated noisy
//! gradient ascent in adapted-feature space (target 1).

mod global;
mod local;
mod ood;
mod train;

pub use global::{global_loss, synth_global, SynthGlobalConfig};
pub use local::{
    random_blob_mask, synth_local_features, synth_local_image, SynthLocalConfig, TextureSource,
};
pub use ood::OodCriterion;
pub use train::{train_discriminator, DiscSample, DiscTrainConfig, DiscTrainHistory};

use serde::{Deserialize, Serialize};

use crate::features::{Map2, Mask, PositionGrid};
use crate::numerics::{sigmoid, Activation, MlpParams, RngStream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    pub dim: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Report probability 0 at positions whose input vector is exactly zero.
    pub gate_zero_features: bool,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            hidden: 32,
            seed: 0,
            gate_zero_features: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorDiscriminator {
    adaptor: MlpParams,
    discriminator: MlpParams,
    gate_zero_features: bool,
}

/// Which target map a batch of predictions is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// All zeros.
    Nominal,
    /// All ones.
    Global,
    /// Ones exactly inside the synthesized anomaly mask.
    Local,
}

impl AdaptorDiscriminator {
    /// Adaptor starts as the identity plus small noise; the discriminator is
    /// a one-hidden-layer relu perceptron with zero biases.
    pub fn new(cfg: &DiscConfig) -> Result<Self> {
        if cfg.dim == 0 || cfg.hidden == 0 {
            return Err(Error::InvalidArgument(
                "discriminator needs dim and hidden > 0".into(),
            ));
        }
        let mut rng = RngStream::new(cfg.seed).fork(0xD15C);
        let mut adaptor = MlpParams::identity(cfg.dim);
        for w in &mut adaptor.layers_mut()[0].weight {
            *w += 0.01 * rng.normal();
        }
        let discriminator = MlpParams::random(
            &[cfg.dim, cfg.hidden, 1],
            Activation::Relu,
            Activation::Identity,
            1.0,
            &mut rng,
        )?;
        Self::from_parts(adaptor, discriminator, cfg.gate_zero_features)
    }

    pub fn from_parts(
        adaptor: MlpParams,
        discriminator: MlpParams,
        gate_zero_features: bool,
    ) -> Result<Self> {
        let d = adaptor.input_dim();
        if adaptor.output_dim() != d {
            return Err(Error::Shape(format!(
                "adaptor must preserve width, got {d}->{}",
                adaptor.output_dim()
            )));
        }
        if discriminator.input_dim() != d || discriminator.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "discriminator must be {d}->1, got {}->{}",
                discriminator.input_dim(),
                discriminator.output_dim()
            )));
        }
        Ok(Self {
            adaptor,
            discriminator,
            gate_zero_features,
        })
    }

    pub fn dim(&self) -> usize {
        self.adaptor.input_dim()
    }

    pub fn adaptor(&self) -> &MlpParams {
        &self.adaptor
    }

    pub fn discriminator(&self) -> &MlpParams {
        &self.discriminator
    }

    pub fn gate_zero_features(&self) -> bool {
        self.gate_zero_features
    }

    pub fn num_params(&self) -> usize {
        self.adaptor.num_params() + self.discriminator.num_params()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = self.adaptor.flatten();
        self.discriminator.flatten_into(&mut v);
        v
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(
                "discriminator parameter count mismatch".into(),
            ));
        }
        let rest = self.adaptor.load_flat(flat)?;
        self.discriminator.load_flat(rest)?;
        Ok(())
    }

    fn check(&self, grid: &PositionGrid) -> Result<()> {
        if grid.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "model expects {}-dimensional positions, got {}",
                self.dim(),
                grid.dim()
            )));
        }
        Ok(())
    }

    /// Per-position adaptor output; same layout as the input.
    pub fn adapt(&self, features: &PositionGrid) -> Result<PositionGrid> {
        self.check(features)?;
        let mut out = Vec::with_capacity(features.data().len());
        for v in features.vectors() {
            out.extend(self.adaptor.forward(v)?);
        }
        PositionGrid::new(features.height(), features.width(), features.dim(), out)
    }

    /// Discriminator logits of already adapted vectors.
    pub fn logits_adapted(&self, adapted: &PositionGrid) -> Result<Vec<f64>> {
        self.check(adapted)?;
        adapted
            .vectors()
            .map(|v| self.discriminator.forward(v).map(|o| o[0]))
            .collect()
    }

    /// Positions whose input vector is identically zero, when gating is on.
    pub fn gated(&self, features: &PositionGrid) -> Vec<bool> {
        features
            .vectors()
            .map(|v| self.gate_zero_features && v.iter().all(|&x| x == 0.0))
            .collect()
    }

    /// Anomaly probability per position (gated positions report 0).
    pub fn predict(&self, features: &PositionGrid) -> Result<Vec<f64>> {
        let logits = self.logits_adapted(&self.adapt(features)?)?;
        Ok(logits
            .iter()
            .zip(self.gated(features))
            .map(|(&l, g)| if g { 0.0 } else { sigmoid(l) })
            .collect())
    }
}

/// Image score (maximum probability) and the per-position probability map.
pub fn disc_score(model: &AdaptorDiscriminator, features: &PositionGrid) -> Result<(f64, Map2)> {
    let p = model.predict(features)?;
    let map = Map2::new(features.height(), features.width(), p)?;
    let score = map.data().iter().copied().fold(0.0, f64::max);
    Ok((score, map))
}

const BCE_EPS: f64 = 1e-12;

/// Mean binary cross-entropy of `predictions` (probabilities, position
/// order) against the branch target. `local_mask` is required for
/// [`Branch::Local`] and rejected otherwise.
pub fn three_branch_loss(
    predictions: &[f64],
    branch: Branch,
    local_mask: Option<&Mask>,
) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Insufficient("no predictions".into()));
    }
    let target = |i: usize| -> Result<f64> {
        Ok(match (branch, local_mask) {
            (Branch::Nominal, None) => 0.0,
            (Branch::Global, None) => 1.0,
            (Branch::Local, Some(m)) => {
                if m.data()[i] {
                    1.0
                } else {
                    0.0
                }
            }
            (Branch::Local, None) => {
                return Err(Error::InvalidArgument(
                    "local branch needs an anomaly mask".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "only the local branch takes a mask".into(),
                ))
            }
        })
    };
    if let Some(m) = local_mask {
        if m.data().len() != predictions.len() {
            return Err(Error::Shape(format!(
                "mask has {} positions, predictions {}",
                m.data().len(),
                predictions.len()
            )));
        }
    }
    let mut total = 0.0;
    for (i, &p) in predictions.iter().enumerate() {
        let y = target(i)?;
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Layer;

    fn model(dim: usize, bias: f64) -> AdaptorDiscriminator {
        let mut last = Layer::zeros(dim, 1, Activation::Identity);
        last.bias[0] = bias;
        AdaptorDiscriminator::from_parts(
            MlpParams::identity(dim),
            MlpParams::new(vec![last]).unwrap(),
            false,
        )
        .unwrap()
    }

    #[test]
    fn identity_adaptor_preserves_input() {
        let m = model(3, 0.0);
        let g = PositionGrid::new(1, 2, 3, vec![1.0, 2.0, 3.0, -4.0, 0.5, 0.0]).unwrap();
        assert_eq!(m.adapt(&g).unwrap(), g);
    }

    #[test]
    fn zero_adaptor_gives_bias_field() {
        let mut a = Layer::zeros(2, 2, Activation::Identity);
        a.bias = vec![0.5, -1.5];
        let m = AdaptorDiscriminator::from_parts(
            MlpParams::new(vec![a]).unwrap(),
            MlpParams::new(vec![Layer::zeros(2, 1, Activation::Identity)]).unwrap(),
            false,
        )
        .unwrap();
        let g = PositionGrid::new(2, 1, 2, vec![9.0, 3.0, -7.0, 1.0]).unwrap();
        assert_eq!(m.adapt(&g).unwrap().data(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn forced_zero_output() {
        let m = model(2, -1000.0);
        let g = PositionGrid::new(2, 2, 2, vec![0.3; 8]).unwrap();
        let (score, map) = disc_score(&m, &g).unwrap();
        assert_eq!(score, 0.0);
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_position_probability_is_score() {
        let m = model(1, (0.9f64 / 0.1).ln());
        let (score, _) = disc_score(&m, &PositionGrid::single(vec![0.0])).unwrap();
        assert!((score - 0.9).abs() < 1e-12);
    }

    #[test]
    fn zero_features_give_one_half_without_gate() {
        let m = model(4, 0.0);
        let (_, map) = disc_score(&m, &PositionGrid::zeros(2, 3, 4)).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gate_zeroes_empty_positions() {
        let m = AdaptorDiscriminator::from_parts(
            MlpParams::identity(2),
            MlpParams::new(vec![Layer::zeros(2, 1, Activation::Identity)]).unwrap(),
            true,
        )
        .unwrap();
        let g = PositionGrid::new(1, 2, 2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.predict(&g).unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn bce_at_one_half_is_ln2() {
        let p = vec![0.5; 6];
        let mask = Mask::from_fn(3, 2, |r, c| r == c);
        for (b, m) in [
            (Branch::Nominal, None),
            (Branch::Global, None),
            (Branch::Local, Some(&mask)),
        ] {
            let l = three_branch_loss(&p, b, m).unwrap();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn nominal_near_zero_loss() {
        let l = three_branch_loss(&[1e-9; 4], Branch::Nominal, None).unwrap();
        assert!(l < 1e-8);
    }

    #[test]
    fn mask_rules() {
        let m = Mask::filled(2, 1, true);
        assert!(three_branch_loss(&[0.5, 0.5], Branch::Local, None).is_err());
        assert!(three_branch_loss(&[0.5, 0.5], Branch::Nominal, Some(&m)).is_err());
        assert!(three_branch_loss(&[0.5], Branch::Local, Some(&m)).is_err());
    }
}
