//! Multi-scale affine-coupling normalizing flow.
//!
//! The flow maps per-position feature vectors `x` to latents `z` through a
//! stack of [`CouplingBlock`]s. Density follows from the change of
//! variables, `log p(x) = log N(z; 0, I) + log|det dz/dx|`, summed over
//! positions. Anomaly scores are negative log-densities; localization maps
//! are per-position latent norms.

mod coupling;
mod train;

pub use coupling::{BlockGrads, BlockTrace, CouplingBlock};
pub use train::{
    perturb_samples, train_background_flow, train_flow, EvalPoint, TrainConfig, TrainHistory,
};

use serde::{Deserialize, Serialize};

use crate::features::{Map2, PositionGrid};
use crate::numerics::{Activation, Layer, MlpParams, RngStream};
use crate::{Error, Result};

/// `ln(2 pi) / 2`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Flow input: one position grid per scale, all with the same vector width.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub scales: Vec<PositionGrid>,
}

impl FlowSample {
    pub fn new(scales: Vec<PositionGrid>) -> Self {
        Self { scales }
    }

    /// Single-scale, single-position sample.
    pub fn point(v: Vec<f64>) -> Self {
        Self {
            scales: vec![PositionGrid::single(v)],
        }
    }

    pub fn total_positions(&self) -> usize {
        self.scales.iter().map(PositionGrid::positions).sum()
    }

    pub fn dim(&self) -> usize {
        self.scales.first().map_or(0, PositionGrid::dim)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            scales: self
                .scales
                .iter()
                .map(|g| PositionGrid::zeros(g.height(), g.width(), g.dim()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.scales
            .iter()
            .all(|g| g.data().iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Vector width per position (feature channels).
    pub dim: usize,
    pub num_scales: usize,
    pub num_blocks: usize,
    /// Hidden units of each conditioner.
    pub hidden: usize,
    /// Soft clamp on the log-scale, `|s| <= clamp`.
    pub clamp: f64,
    pub cross_scale: bool,
    /// Feed each position's normalized grid coordinates to the conditioners.
    pub positional: bool,
    pub seed: u64,
    /// Multiplier on the initial output-layer weights of the conditioners;
    /// small values start the flow close to the identity.
    pub init_scale: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            num_scales: 3,
            num_blocks: 4,
            hidden: 64,
            clamp: 1.9,
            cross_scale: true,
            positional: true,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Mean negative log-density per position per dimension.
    #[default]
    Mean,
    /// Largest per-position negative log-density per dimension.
    Max,
}

#[derive(Debug, Clone)]
pub struct LogDensityResult {
    /// Total log-density summed over all positions.
    pub logp: f64,
    /// Total log-determinant of the data-to-latent map.
    pub logdet: f64,
    pub latent: FlowSample,
    /// `position_logp[scale][position]`; sums to `logp`.
    pub position_logp: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingFlow {
    config: FlowConfig,
    blocks: Vec<CouplingBlock>,
}

impl CouplingFlow {
    /// Seeded initialization. Even blocks use a random channel permutation,
    /// odd blocks reverse the order, so every channel is transformed at least
    /// once in any two consecutive blocks.
    pub fn new(config: FlowConfig) -> Result<Self> {
        validate_config(&config)?;
        let root = RngStream::new(config.seed);
        let cin = CouplingBlock::conditioner_input_dim(
            config.dim,
            config.num_scales,
            config.cross_scale,
            config.positional,
        );
        let d2 = config.dim - config.dim / 2;
        let blocks = (0..config.num_blocks)
            .map(|b| {
                let mut rng = root.fork(b as u64);
                let permutation = if b % 2 == 0 {
                    let mut p: Vec<usize> = (0..config.dim).collect();
                    rng.shuffle(&mut p);
                    p
                } else {
                    (0..config.dim).rev().collect()
                };
                let dims = [cin, config.hidden, d2];
                let s = MlpParams::random(
                    &dims,
                    Activation::Tanh,
                    Activation::Identity,
                    config.init_scale,
                    &mut rng,
                )?;
                let t = MlpParams::random(
                    &dims,
                    Activation::Tanh,
                    Activation::Identity,
                    config.init_scale,
                    &mut rng,
                )?;
                CouplingBlock::new(
                    permutation,
                    s,
                    t,
                    config.clamp,
                    config.cross_scale,
                    config.positional,
                    config.num_scales,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, blocks })
    }

    /// Flow whose blocks all have zero conditioners and identity
    /// permutations: the identity map.
    pub fn identity(config: FlowConfig) -> Result<Self> {
        validate_config(&config)?;
        let cin = CouplingBlock::conditioner_input_dim(
            config.dim,
            config.num_scales,
            config.cross_scale,
            config.positional,
        );
        let d2 = config.dim - config.dim / 2;
        let zero = MlpParams::new(vec![Layer::zeros(cin, d2, Activation::Identity)])?;
        let blocks = (0..config.num_blocks)
            .map(|_| {
                CouplingBlock::new(
                    (0..config.dim).collect(),
                    zero.clone(),
                    zero.clone(),
                    config.clamp,
                    config.cross_scale,
                    config.positional,
                    config.num_scales,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, blocks })
    }

    /// Assembles a flow from explicit blocks; `config.num_blocks` is
    /// overwritten with the block count.
    pub fn from_blocks(mut config: FlowConfig, blocks: Vec<CouplingBlock>) -> Result<Self> {
        config.num_blocks = blocks.len();
        validate_config(&config)?;
        for b in &blocks {
            if b.dim() != config.dim
                || b.num_scales() != config.num_scales
                || b.cross_scale() != config.cross_scale
                || b.positional() != config.positional
            {
                return Err(Error::Shape(
                    "block layout disagrees with flow config".into(),
                ));
            }
        }
        Ok(Self { config, blocks })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[CouplingBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [CouplingBlock] {
        &mut self.blocks
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(CouplingBlock::num_params).sum()
    }

    /// All conditioner parameters, block by block, scale net before shift net.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for b in &self.blocks {
            b.cond_s().flatten_into(&mut v);
            b.cond_t().flatten_into(&mut v);
        }
        v
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flow has {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut rest = flat;
        for b in &mut self.blocks {
            rest = b.cond_s_mut().load_flat(rest)?;
            rest = b.cond_t_mut().load_flat(rest)?;
        }
        Ok(())
    }

    pub fn check_sample(&self, x: &FlowSample) -> Result<()> {
        if x.scales.len() != self.config.num_scales {
            return Err(Error::Shape(format!(
                "flow expects {} scales, sample has {}",
                self.config.num_scales,
                x.scales.len()
            )));
        }
        if let Some(g) = x.scales.iter().find(|g| g.dim() != self.config.dim) {
            return Err(Error::Shape(format!(
                "flow expects {}-dimensional positions, sample has {}",
                self.config.dim,
                g.dim()
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("flow input".into()));
        }
        Ok(())
    }

    /// Data to latent, with per-position log-determinants.
    pub fn transform(&self, x: &FlowSample) -> Result<(FlowSample, Vec<Vec<f64>>)> {
        self.check_sample(x)?;
        let mut cur = x.clone();
        let mut logdet: Vec<Vec<f64>> = x.scales.iter().map(|g| vec![0.0; g.positions()]).collect();
        for b in &self.blocks {
            let (y, ld) = b.forward(&cur)?;
            for (acc, l) in logdet.iter_mut().zip(ld) {
                acc.iter_mut().zip(l).for_each(|(a, v)| *a += v);
            }
            cur = y;
        }
        Ok((cur, logdet))
    }

    /// Latent to data.
    pub fn inverse(&self, z: &FlowSample) -> Result<FlowSample> {
        let mut cur = z.clone();
        for b in self.blocks.iter().rev() {
            cur = b.inverse(&cur)?;
        }
        Ok(cur)
    }

    pub fn log_density(&self, x: &FlowSample) -> Result<LogDensityResult> {
        let (z, ld) = self.transform(x)?;
        let d = self.config.dim as f64;
        let mut position_logp = Vec::with_capacity(z.scales.len());
        let mut logp = 0.0;
        let mut logdet = 0.0;
        for (g, l) in z.scales.iter().zip(&ld) {
            let row: Vec<f64> = g
                .vectors()
                .zip(l)
                .map(|(v, &ldp)| {
                    let q: f64 = v.iter().map(|a| a * a).sum();
                    -d * HALF_LN_2PI - 0.5 * q + ldp
                })
                .collect();
            logp += row.iter().sum::<f64>();
            logdet += l.iter().sum::<f64>();
            position_logp.push(row);
        }
        if !logp.is_finite() {
            return Err(Error::NonFinite("log-density".into()));
        }
        Ok(LogDensityResult {
            logp,
            logdet,
            latent: z,
            position_logp,
        })
    }

    /// Mean over the batch of `-log p(x)`, constant included.
    pub fn nll_loss(&self, batch: &[FlowSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Insufficient("empty batch".into()));
        }
        let mut total = 0.0;
        for x in batch {
            total -= self.log_density(x)?.logp;
        }
        Ok(total / batch.len() as f64)
    }

    /// `weight * -log p(x)` and its gradient with respect to
    /// [`params_flat`](Self::params_flat).
    pub fn loss_and_grad(&self, x: &FlowSample, weight: f64) -> Result<(f64, Vec<f64>)> {
        self.check_sample(x)?;
        let mut cur = x.clone();
        let mut traces = Vec::with_capacity(self.blocks.len());
        let mut logdet = 0.0;
        for b in &self.blocks {
            let (y, ld, tr) = b.forward_trace(&cur)?;
            logdet += ld.iter().flatten().sum::<f64>();
            traces.push(tr);
            cur = y;
        }
        let d = self.config.dim as f64;
        let n = cur.total_positions() as f64;
        let q: f64 = cur
            .scales
            .iter()
            .flat_map(|g| g.data())
            .map(|a| a * a)
            .sum();
        let loss = weight * (n * d * HALF_LN_2PI + 0.5 * q - logdet);
        if !loss.is_finite() {
            return Err(Error::NonFinite("negative log-likelihood".into()));
        }
        let mut grad = cur;
        for g in &mut grad.scales {
            g.data_mut().iter_mut().for_each(|a| *a *= weight);
        }
        let mut block_grads: Vec<BlockGrads> =
            self.blocks.iter().map(CouplingBlock::zero_grads).collect();
        for ((b, tr), bg) in self.blocks.iter().zip(&traces).zip(&mut block_grads).rev() {
            grad = b.backward(tr, &grad, -weight, bg);
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for bg in &block_grads {
            bg.s.flatten_into(&mut flat);
            bg.t.flatten_into(&mut flat);
        }
        Ok((loss, flat))
    }

    /// Per-image anomaly score from negative log-density per dimension.
    pub fn image_score(&self, x: &FlowSample, agg: Aggregation) -> Result<f64> {
        let r = self.log_density(x)?;
        Ok(aggregate(&r, self.config.dim, agg))
    }

    /// `-log p / dim` per position, one map per scale.
    pub fn position_scores(&self, x: &FlowSample) -> Result<Vec<Map2>> {
        let r = self.log_density(x)?;
        let d = self.config.dim as f64;
        Ok(x.scales
            .iter()
            .zip(&r.position_logp)
            .map(|(g, lp)| {
                Map2::new(g.height(), g.width(), lp.iter().map(|v| -v / d).collect()).expect("dims")
            })
            .collect())
    }
}

fn validate_config(c: &FlowConfig) -> Result<()> {
    if c.dim < 2 {
        return Err(Error::InvalidArgument(
            "flow dimension must be at least 2".into(),
        ));
    }
    if c.num_scales == 0 || c.num_blocks == 0 || c.hidden == 0 {
        return Err(Error::InvalidArgument(
            "flow needs scales, blocks and hidden units".into(),
        ));
    }
    if c.clamp.is_nan() || c.clamp <= 0.0 {
        return Err(Error::InvalidArgument("clamp must be positive".into()));
    }
    Ok(())
}

/// Image score of an already computed density.
pub fn aggregate(r: &LogDensityResult, dim: usize, agg: Aggregation) -> f64 {
    let d = dim as f64;
    match agg {
        Aggregation::Mean => {
            let n = r.latent.total_positions() as f64;
            -r.logp / (n * d)
        }
        Aggregation::Max => r
            .position_logp
            .iter()
            .flatten()
            .map(|lp| -lp / d)
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// L2 norm of the latent at every position, coarse scales upsampled
/// (nearest neighbor) to the first scale's grid and summed.
pub fn localization_map(latent: &FlowSample) -> Map2 {
    let Some(first) = latent.scales.first() else {
        return Map2::zeros(0, 0);
    };
    let (h, w) = (first.height(), first.width());
    let mut out = Map2::zeros(h, w);
    for g in &latent.scales {
        let norms: Vec<f64> = g.vectors().map(crate::numerics::l2_norm).collect();
        let m = Map2::new(g.height(), g.width(), norms).expect("dims");
        let up = if (g.height(), g.width()) == (h, w) {
            m
        } else {
            m.resize_nearest(h, w)
        };
        out.data_mut()
            .iter_mut()
            .zip(up.data())
            .for_each(|(a, b)| *a += b);
    }
    out
}

/// `log p_background(x) - log p_model(x)`: large when the model explains
/// `x` worse than the background model does.
pub fn likelihood_ratio_score(
    model: &CouplingFlow,
    background: &CouplingFlow,
    x: &FlowSample,
) -> Result<f64> {
    let (a, b) = (model.config(), background.config());
    if a.dim != b.dim || a.num_scales != b.num_scales {
        return Err(Error::Shape(format!(
            "model ({} dims, {} scales) and background ({} dims, {} scales) disagree",
            a.dim, a.num_scales, b.dim, b.num_scales
        )));
    }
    Ok(background.log_density(x)?.logp - model.log_density(x)?.logp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(dim: usize) -> FlowConfig {
        FlowConfig {
            dim,
            num_scales: 1,
            num_blocks: 2,
            hidden: 8,
            cross_scale: false,
            init_scale: 1.0,
            ..FlowConfig::default()
        }
    }

    #[test]
    fn identity_flow_at_origin() {
        let f = CouplingFlow::identity(toy_config(4)).unwrap();
        let r = f.log_density(&FlowSample::point(vec![0.0; 4])).unwrap();
        assert!((r.logp + 2.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert_eq!(r.logdet, 0.0);
    }

    #[test]
    fn identity_flow_quadratic_term() {
        let f = CouplingFlow::identity(toy_config(3)).unwrap();
        let x = vec![1.0, -2.0, 0.5];
        let q: f64 = x.iter().map(|v| v * v).sum();
        let r = f.log_density(&FlowSample::point(x)).unwrap();
        assert!((r.logp - (-3.0 * HALF_LN_2PI - q / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn identity_score_per_dimension() {
        let f = CouplingFlow::identity(toy_config(4)).unwrap();
        let s = f
            .image_score(&FlowSample::point(vec![0.0; 4]), Aggregation::Mean)
            .unwrap();
        assert!((s - HALF_LN_2PI).abs() < 1e-15);
        let s = f
            .image_score(&FlowSample::point(vec![0.0; 4]), Aggregation::Max)
            .unwrap();
        assert!((s - HALF_LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn identity_nll_loss() {
        let f = CouplingFlow::identity(toy_config(6)).unwrap();
        let l = f.nll_loss(&[FlowSample::point(vec![0.0; 6])]).unwrap();
        assert!((l - 6.0 * HALF_LN_2PI).abs() < 1e-12);
        assert!(f.nll_loss(&[]).is_err());
    }

    #[test]
    fn score_is_monotone_in_latent_norm() {
        let f = CouplingFlow::identity(toy_config(2)).unwrap();
        let grid = PositionGrid::new(1, 2, 2, vec![0.3, 0.1, -0.2, 0.4]).unwrap();
        let base = f
            .image_score(&FlowSample::new(vec![grid.clone()]), Aggregation::Mean)
            .unwrap();
        let mut bumped = grid;
        bumped.data_mut()[2] -= 1e-3;
        let s = f
            .image_score(&FlowSample::new(vec![bumped]), Aggregation::Mean)
            .unwrap();
        assert!(s > base);
    }

    #[test]
    fn params_roundtrip() {
        let mut f = CouplingFlow::new(toy_config(4)).unwrap();
        let p = f.params_flat();
        assert_eq!(p.len(), f.num_params());
        let g = f.clone();
        f.set_params_flat(&p).unwrap();
        assert_eq!(f, g);
        assert!(f.set_params_flat(&p[1..]).is_err());
    }

    #[test]
    fn wrong_dims_rejected() {
        let f = CouplingFlow::new(toy_config(4)).unwrap();
        assert!(matches!(
            f.log_density(&FlowSample::point(vec![0.0; 3])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            f.log_density(&FlowSample::point(vec![f64::NAN, 0.0, 0.0, 0.0])),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn localization_zero_latent() {
        let z = FlowSample::new(vec![
            PositionGrid::zeros(3, 3, 4),
            PositionGrid::zeros(1, 1, 4),
        ]);
        assert!(localization_map(&z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn localization_single_channel_value() {
        let mut g = PositionGrid::zeros(3, 3, 4);
        g.at_mut(3 + 2)[2] = -2.5;
        let m = localization_map(&FlowSample::new(vec![g]));
        assert_eq!(m.get(1, 2), 2.5);
        assert_eq!(m.sum(), 2.5);
    }

    #[test]
    fn ratio_of_flow_with_itself_is_zero() {
        let f = CouplingFlow::new(toy_config(4)).unwrap();
        let x = FlowSample::point(vec![0.1, 2.0, -1.0, 0.3]);
        assert_eq!(likelihood_ratio_score(&f, &f, &x).unwrap(), 0.0);
        let g = CouplingFlow::new(toy_config(6)).unwrap();
        assert!(likelihood_ratio_score(&f, &g, &x).is_err());
    }
}
