use super::FlowSample;
use crate::numerics::{MlpParams, MlpTrace};
use crate::{Error, Result};

/// One affine coupling block acting on every position of every scale.
///
/// Each position vector `x` is permuted to `v = x[perm]` and split into a
/// pass-through half `v1` (first `dim / 2` entries) and a transformed half
/// `v2`. With conditioner input `c = [v1, ctx, onehot(scale), pos]`:
///
/// ```text
/// s = clamp * tanh(S(c) / clamp)
/// y = [v1, v2 * exp(s) + T(c)]        log|det| = sum(s)
/// ```
///
/// When cross-scale context is enabled, `ctx` concatenates the mean of `v1`
/// over all positions of each *other* scale. Context only reads pass-through
/// halves, so the Jacobian over the whole multi-scale sample stays block
/// triangular and the log-determinant is still the plain sum of `s`.
///
/// With positional input enabled, `pos` holds the position's row and column
/// mapped into `(-1, 1)`, so the conditioners can model where in the grid
/// a vector sits.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    permutation: Vec<usize>,
    cond_s: MlpParams,
    cond_t: MlpParams,
    clamp: f64,
    cross_scale: bool,
    positional: bool,
    num_scales: usize,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub s: MlpParams,
    pub t: MlpParams,
}

#[derive(Debug)]
struct PositionTrace {
    v: Vec<f64>,
    s_trace: MlpTrace,
    t_trace: MlpTrace,
    s: Vec<f64>,
    exp_s: Vec<f64>,
}

/// Values recorded by [`CouplingBlock::forward_trace`] for the backward pass.
#[derive(Debug)]
pub struct BlockTrace {
    positions: Vec<Vec<PositionTrace>>,
}

impl CouplingBlock {
    /// Conditioner input width for the given layout.
    pub fn conditioner_input_dim(
        dim: usize,
        num_scales: usize,
        cross_scale: bool,
        positional: bool,
    ) -> usize {
        let d1 = dim / 2;
        let ctx = if cross_scale {
            (num_scales - 1) * d1
        } else {
            0
        };
        let onehot = if num_scales > 1 { num_scales } else { 0 };
        d1 + ctx + onehot + if positional { 2 } else { 0 }
    }

    pub fn new(
        permutation: Vec<usize>,
        cond_s: MlpParams,
        cond_t: MlpParams,
        clamp: f64,
        cross_scale: bool,
        positional: bool,
        num_scales: usize,
    ) -> Result<Self> {
        let dim = permutation.len();
        if dim < 2 {
            return Err(Error::InvalidArgument(
                "coupling needs dimension >= 2".into(),
            ));
        }
        if num_scales == 0 {
            return Err(Error::InvalidArgument(
                "coupling needs at least one scale".into(),
            ));
        }
        if clamp.is_nan() || clamp <= 0.0 {
            return Err(Error::InvalidArgument(
                "scale clamp must be positive".into(),
            ));
        }
        let mut seen = vec![false; dim];
        for &p in &permutation {
            if p >= dim || seen[p] {
                return Err(Error::InvalidArgument(format!(
                    "{permutation:?} is not a permutation"
                )));
            }
            seen[p] = true;
        }
        let cin = Self::conditioner_input_dim(dim, num_scales, cross_scale, positional);
        let d2 = dim - dim / 2;
        for (name, net) in [("scale", &cond_s), ("shift", &cond_t)] {
            if net.input_dim() != cin || net.output_dim() != d2 {
                return Err(Error::Shape(format!(
                    "{name} conditioner is {}->{}, block needs {cin}->{d2}",
                    net.input_dim(),
                    net.output_dim()
                )));
            }
        }
        Ok(Self {
            permutation,
            cond_s,
            cond_t,
            clamp,
            cross_scale,
            positional,
            num_scales,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> usize {
        self.dim / 2
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn clamp(&self) -> f64 {
        self.clamp
    }

    pub fn cross_scale(&self) -> bool {
        self.cross_scale
    }

    pub fn positional(&self) -> bool {
        self.positional
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    pub fn cond_s(&self) -> &MlpParams {
        &self.cond_s
    }

    pub fn cond_t(&self) -> &MlpParams {
        &self.cond_t
    }

    pub fn cond_s_mut(&mut self) -> &mut MlpParams {
        &mut self.cond_s
    }

    pub fn cond_t_mut(&mut self) -> &mut MlpParams {
        &mut self.cond_t
    }

    pub fn zero_grads(&self) -> BlockGrads {
        BlockGrads {
            s: self.cond_s.zeros_like(),
            t: self.cond_t.zeros_like(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.cond_s.num_params() + self.cond_t.num_params()
    }

    fn check(&self, x: &FlowSample) -> Result<()> {
        if x.scales.len() != self.num_scales {
            return Err(Error::Shape(format!(
                "block expects {} scales, sample has {}",
                self.num_scales,
                x.scales.len()
            )));
        }
        for g in &x.scales {
            if g.dim() != self.dim {
                return Err(Error::Shape(format!(
                    "block expects {}-vectors, sample has {}",
                    self.dim,
                    g.dim()
                )));
            }
        }
        Ok(())
    }

    /// Mean of the pass-through half over each scale. `permuted` says whether
    /// `x` is already in block (permuted) order.
    fn half_means(&self, x: &FlowSample, permuted: bool) -> Vec<Vec<f64>> {
        let d1 = self.split();
        x.scales
            .iter()
            .map(|g| {
                let mut m = vec![0.0; d1];
                for v in g.vectors() {
                    for k in 0..d1 {
                        m[k] += if permuted {
                            v[k]
                        } else {
                            v[self.permutation[k]]
                        };
                    }
                }
                let n = g.positions().max(1) as f64;
                m.iter_mut().for_each(|a| *a /= n);
                m
            })
            .collect()
    }

    fn conditioner_input(
        &self,
        v1: &[f64],
        means: &[Vec<f64>],
        scale: usize,
        at: (usize, usize, usize),
    ) -> Vec<f64> {
        let mut c = Vec::with_capacity(Self::conditioner_input_dim(
            self.dim,
            self.num_scales,
            self.cross_scale,
            self.positional,
        ));
        c.extend_from_slice(v1);
        if self.cross_scale {
            for (s, m) in means.iter().enumerate() {
                if s != scale {
                    c.extend_from_slice(m);
                }
            }
        }
        if self.num_scales > 1 {
            c.extend((0..self.num_scales).map(|s| if s == scale { 1.0 } else { 0.0 }));
        }
        if self.positional {
            let (p, h, w) = at;
            c.push((2 * (p / w) + 1) as f64 / h as f64 - 1.0);
            c.push((2 * (p % w) + 1) as f64 / w as f64 - 1.0);
        }
        c
    }

    fn clamp_scale(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .map(|r| self.clamp * (r / self.clamp).tanh())
            .collect()
    }

    /// Normalizing direction: data to latent. Returns the output sample and
    /// the per-position log-determinant, indexed `[scale][position]`.
    pub fn forward(&self, x: &FlowSample) -> Result<(FlowSample, Vec<Vec<f64>>)> {
        let (y, logdet, _) = self.forward_impl(x, false)?;
        Ok((y, logdet))
    }

    pub fn forward_trace(&self, x: &FlowSample) -> Result<(FlowSample, Vec<Vec<f64>>, BlockTrace)> {
        let (y, logdet, trace) = self.forward_impl(x, true)?;
        Ok((y, logdet, trace.expect("requested")))
    }

    fn forward_impl(
        &self,
        x: &FlowSample,
        keep: bool,
    ) -> Result<(FlowSample, Vec<Vec<f64>>, Option<BlockTrace>)> {
        self.check(x)?;
        let d1 = self.split();
        let means = if self.cross_scale {
            self.half_means(x, false)
        } else {
            Vec::new()
        };
        let mut out = x.clone();
        let mut logdet = Vec::with_capacity(self.num_scales);
        let mut traces = Vec::with_capacity(if keep { self.num_scales } else { 0 });
        for (scale, g) in x.scales.iter().enumerate() {
            let mut ld = Vec::with_capacity(g.positions());
            let mut pt = Vec::new();
            for p in 0..g.positions() {
                let xv = g.at(p);
                let v: Vec<f64> = self.permutation.iter().map(|&i| xv[i]).collect();
                let c = self.conditioner_input(&v[..d1], &means, scale, (p, g.height(), g.width()));
                let (raw, t, s_trace, t_trace) = if keep {
                    let st = self.cond_s.forward_trace(&c)?;
                    let tt = self.cond_t.forward_trace(&c)?;
                    (
                        st.output().to_vec(),
                        tt.output().to_vec(),
                        Some(st),
                        Some(tt),
                    )
                } else {
                    (
                        self.cond_s.forward(&c)?,
                        self.cond_t.forward(&c)?,
                        None,
                        None,
                    )
                };
                if raw.iter().chain(&t).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("coupling conditioner output".into()));
                }
                let s = self.clamp_scale(&raw);
                let exp_s: Vec<f64> = s.iter().map(|v| v.exp()).collect();
                let yv = out.scales[scale].at_mut(p);
                yv[..d1].copy_from_slice(&v[..d1]);
                for k in 0..s.len() {
                    yv[d1 + k] = v[d1 + k] * exp_s[k] + t[k];
                }
                ld.push(s.iter().sum());
                if keep {
                    pt.push(PositionTrace {
                        v,
                        s_trace: s_trace.unwrap(),
                        t_trace: t_trace.unwrap(),
                        s,
                        exp_s,
                    });
                }
            }
            logdet.push(ld);
            if keep {
                traces.push(pt);
            }
        }
        Ok((
            out,
            logdet,
            keep.then_some(BlockTrace { positions: traces }),
        ))
    }

    /// Generative direction: exact algebraic inverse of [`forward`](Self::forward).
    pub fn inverse(&self, y: &FlowSample) -> Result<FlowSample> {
        self.check(y)?;
        let d1 = self.split();
        let means = if self.cross_scale {
            self.half_means(y, true)
        } else {
            Vec::new()
        };
        let mut out = y.clone();
        for (scale, g) in y.scales.iter().enumerate() {
            for p in 0..g.positions() {
                let yv = g.at(p);
                let c =
                    self.conditioner_input(&yv[..d1], &means, scale, (p, g.height(), g.width()));
                let s = self.clamp_scale(&self.cond_s.forward(&c)?);
                let t = self.cond_t.forward(&c)?;
                let mut v = yv.to_vec();
                for k in 0..s.len() {
                    v[d1 + k] = (yv[d1 + k] - t[k]) * (-s[k]).exp();
                }
                if v.iter().any(|a| !a.is_finite()) {
                    return Err(Error::NonFinite("coupling inverse".into()));
                }
                let xv = out.scales[scale].at_mut(p);
                for (i, &pi) in self.permutation.iter().enumerate() {
                    xv[pi] = v[i];
                }
            }
        }
        Ok(out)
    }

    /// Backpropagates `grad_y` (gradient of a scalar loss with respect to the
    /// block output) plus `grad_logdet` times every position's
    /// log-determinant. Accumulates parameter gradients into `grads` and
    /// returns the gradient with respect to the block input.
    pub fn backward(
        &self,
        trace: &BlockTrace,
        grad_y: &FlowSample,
        grad_logdet: f64,
        grads: &mut BlockGrads,
    ) -> FlowSample {
        let d1 = self.split();
        let mut grad_v = grad_y.clone();
        let mut grad_means = vec![vec![0.0; d1]; self.num_scales];
        for (scale, pts) in trace.positions.iter().enumerate() {
            for (p, pt) in pts.iter().enumerate() {
                let gy = grad_y.scales[scale].at(p);
                let d2 = pt.s.len();
                let mut g_raw = vec![0.0; d2];
                let mut g_t = vec![0.0; d2];
                let gv = grad_v.scales[scale].at_mut(p);
                for k in 0..d2 {
                    let gy2 = gy[d1 + k];
                    let v2 = pt.v[d1 + k];
                    gv[d1 + k] = gy2 * pt.exp_s[k];
                    let g_s = gy2 * v2 * pt.exp_s[k] + grad_logdet;
                    let u = pt.s[k] / self.clamp;
                    g_raw[k] = g_s * (1.0 - u * u);
                    g_t[k] = gy2;
                }
                let gc_s = self.cond_s.backward(&pt.s_trace, &g_raw, &mut grads.s);
                let gc_t = self.cond_t.backward(&pt.t_trace, &g_t, &mut grads.t);
                for k in 0..d1 {
                    gv[k] = gy[k] + gc_s[k] + gc_t[k];
                }
                if self.cross_scale {
                    let mut off = d1;
                    for (other, gm) in grad_means.iter_mut().enumerate() {
                        if other == scale {
                            continue;
                        }
                        for k in 0..d1 {
                            gm[k] += gc_s[off + k] + gc_t[off + k];
                        }
                        off += d1;
                    }
                }
            }
        }
        let mut grad_x = grad_v.clone();
        for (scale, g) in grad_v.scales.iter().enumerate() {
            let n = g.positions().max(1) as f64;
            for p in 0..g.positions() {
                let gv = g.at(p);
                let gx = grad_x.scales[scale].at_mut(p);
                for (i, &pi) in self.permutation.iter().enumerate() {
                    let extra = if self.cross_scale && i < d1 {
                        grad_means[scale][i] / n
                    } else {
                        0.0
                    };
                    gx[pi] = gv[i] + extra;
                }
            }
        }
        grad_x
    }
}
