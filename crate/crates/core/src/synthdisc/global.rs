use crate::features::PositionGrid;
use crate::numerics::{sigmoid, softplus, RngStream};
use crate::{Error, Result};

use super::{AdaptorDiscriminator, OodCriterion};

/// Noisy truncated gradient ascent on adapted features.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGlobalConfig {
    /// Step size η.
    pub step_size: f64,
    /// Per-step, per-element bound δ.
    pub truncation: f64,
    /// Noise std σ.
    pub noise_std: f64,
    pub steps: usize,
    /// Freeze a position once its score under this criterion exceeds 0.
    pub stop: Option<OodCriterion>,
}

impl Default for SynthGlobalConfig {
    fn default() -> Self {
        Self::for_feature_std(1.0)
    }
}

impl SynthGlobalConfig {
    pub fn for_feature_std(std: f64) -> Self {
        Self {
            step_size: 0.1,
            truncation: 0.2 * std,
            noise_std: 0.05 * std,
            steps: 5,
            stop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("step size", self.step_size),
            ("truncation", self.truncation),
            ("noise std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Summed BCE of adapted positions against the nominal target 0.
pub fn global_loss(model: &AdaptorDiscriminator, adapted: &PositionGrid) -> Result<f64> {
    Ok(model
        .logits_adapted(adapted)?
        .into_iter()
        .map(softplus)
        .sum())
}

/// Perturbs adapted features so the nominal-target loss grows:
/// `x <- x + clamp(η (g + ε), -δ, δ)` for `steps` iterations. `active`
/// restricts which positions move (all when `None`).
pub fn synth_global(
    model: &AdaptorDiscriminator,
    adapted: &PositionGrid,
    active: Option<&[bool]>,
    cfg: &SynthGlobalConfig,
    rng: &mut RngStream,
) -> Result<PositionGrid> {
    cfg.validate()?;
    if adapted.dim() != model.dim() {
        return Err(Error::Shape(format!(
            "model expects {} dims, got {}",
            model.dim(),
            adapted.dim()
        )));
    }
    let n = adapted.positions();
    if let Some(a) = active {
        if a.len() != n {
            return Err(Error::Shape(
                "active mask length differs from positions".into(),
            ));
        }
    }
    let disc = model.discriminator();
    let mut x = adapted.clone();
    let mut frozen: Vec<bool> = (0..n).map(|p| active.is_some_and(|a| !a[p])).collect();
    let mut scratch = disc.zeros_like();
    for _ in 0..cfg.steps {
        if let Some(stop) = &cfg.stop {
            for (p, f) in frozen.iter_mut().enumerate() {
                if !*f && stop.score(x.at(p))? > 0.0 {
                    *f = true;
                }
            }
        }
        for (p, &frozen) in frozen.iter().enumerate() {
            if frozen {
                continue;
            }
            let trace = disc.forward_trace(x.at(p))?;
            let l = trace.output()[0];
            let g = disc.backward(&trace, &[sigmoid(l)], &mut scratch);
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("global synthesis gradient".into()));
            }
            for (xi, gi) in x.at_mut(p).iter_mut().zip(g) {
                let eps = if cfg.noise_std > 0.0 {
                    cfg.noise_std * rng.normal()
                } else {
                    0.0
                };
                *xi += (cfg.step_size * (gi + eps)).clamp(-cfg.truncation, cfg.truncation);
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdisc::DiscConfig;

    fn setup() -> (AdaptorDiscriminator, PositionGrid) {
        let m = AdaptorDiscriminator::new(&DiscConfig {
            dim: 4,
            hidden: 8,
            seed: 5,
            gate_zero_features: false,
        })
        .unwrap();
        let mut rng = RngStream::new(2);
        let g = PositionGrid::new(3, 3, 4, (0..36).map(|_| rng.normal()).collect()).unwrap();
        (m, g)
    }

    #[test]
    fn zero_steps_identity() {
        let (m, g) = setup();
        let cfg = SynthGlobalConfig {
            steps: 0,
            ..Default::default()
        };
        assert_eq!(
            synth_global(&m, &g, None, &cfg, &mut RngStream::new(0)).unwrap(),
            g
        );
    }

    #[test]
    fn noiseless_ascent() {
        let (m, g) = setup();
        let cfg = SynthGlobalConfig {
            step_size: 1e-3,
            noise_std: 0.0,
            steps: 1,
            ..Default::default()
        };
        let mut x = g;
        for _ in 0..10 {
            let before = global_loss(&m, &x).unwrap();
            let next = synth_global(&m, &x, None, &cfg, &mut RngStream::new(0)).unwrap();
            let after = global_loss(&m, &next).unwrap();
            assert!(after >= before - 1e-9);
            assert!(after > before);
            x = next;
        }
    }

    #[test]
    fn truncation_bound() {
        let (m, g) = setup();
        let cfg = SynthGlobalConfig {
            step_size: 50.0,
            truncation: 0.01,
            noise_std: 10.0,
            steps: 7,
            stop: None,
        };
        let out = synth_global(&m, &g, None, &cfg, &mut RngStream::new(4)).unwrap();
        for (a, b) in out.data().iter().zip(g.data()) {
            assert!((a - b).abs() <= 7.0 * 0.01 + 1e-12);
        }
    }

    #[test]
    fn inactive_positions_fixed() {
        let (m, g) = setup();
        let active: Vec<bool> = (0..9).map(|p| p % 2 == 0).collect();
        let out = synth_global(
            &m,
            &g,
            Some(&active),
            &SynthGlobalConfig::default(),
            &mut RngStream::new(1),
        )
        .unwrap();
        for (p, &on) in active.iter().enumerate() {
            assert_eq!(out.at(p) == g.at(p), !on);
        }
    }

    #[test]
    fn stop_criterion_freezes_outliers() {
        let (m, g) = setup();
        let cfg = SynthGlobalConfig {
            stop: Some(OodCriterion::Hypersphere {
                center: vec![0.0; 4],
                radius: -1.0,
            }),
            ..Default::default()
        };
        assert_eq!(
            synth_global(&m, &g, None, &cfg, &mut RngStream::new(0)).unwrap(),
            g
        );
    }
}
