//! Parameter storage and the convolution / batch-norm layers the network
//! is assembled from.
//!
//! All learnable tensors live in one [`ParamSet`], registered in
//! construction order under hierarchical names ("encoder.stage2.block0.
//! conv1.weight", ...). Layers hold only ids into the set, so the same
//! layer definitions serve the `f32` training path and the `f64`
//! gradient-check path.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{BnMode, ConvCfg, Tape, Var};
use crate::scalar::{sqrt64, Scalar};
use crate::tensor::Tensor;

/// Id of a learnable tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Id of a batch-norm running-statistics buffer inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<S> {
    pub name: String,
    pub tensor: Tensor<S>,
}

/// Running mean/variance pair for one batch-norm layer.
#[derive(Debug, Clone)]
pub struct BufferEntry<S> {
    pub name: String,
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

/// Named parameters and batch-norm buffers of a model, in construction
/// order. Construction order is deterministic, so two models built from the
/// same configuration and seed hold bit-identical values.
#[derive(Debug, Clone)]
pub struct ParamSet<S> {
    params: Vec<ParamEntry<S>>,
    buffers: Vec<BufferEntry<S>>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new(), buffers: Vec::new() }
    }

    pub fn add_param(&mut self, name: String, tensor: Tensor<S>) -> ParamId {
        self.params.push(ParamEntry { name, tensor });
        ParamId(self.params.len() - 1)
    }

    /// Registers a batch-norm buffer initialized to mean 0, variance 1.
    pub fn add_buffer(&mut self, name: String, channels: usize) -> BufId {
        let mut mean = Vec::new();
        mean.resize(channels, S::zero());
        let mut var = Vec::new();
        var.resize(channels, S::one());
        self.buffers.push(BufferEntry { name, mean, var });
        BufId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &ParamEntry<S> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut ParamEntry<S> {
        &mut self.params[id.0]
    }

    pub fn buffer(&self, id: BufId) -> &BufferEntry<S> {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufId) -> &mut BufferEntry<S> {
        &mut self.buffers[id.0]
    }

    pub fn params(&self) -> &[ParamEntry<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamEntry<S>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[BufferEntry<S>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [BufferEntry<S>] {
        &mut self.buffers
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Total number of learnable scalars (buffers excluded).
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| ParamEntry { name: p.name.clone(), tensor: p.tensor.cast() })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| BufferEntry {
                    name: b.name.clone(),
                    mean: b.mean.iter().map(|v| T::from_f64(v.as_f64())).collect(),
                    var: b.var.iter().map(|v| T::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Everything a layer needs to record one forward pass.
pub struct Ctx<'a, S: Scalar> {
    pub tape: &'a mut Tape<S>,
    pub params: &'a ParamSet<S>,
    pub buffers: BufferAccess<'a, S>,
    pub train: bool,
}

/// Buffer access mode: training forwards update running statistics and need
/// mutable access, inference forwards only read them.
pub enum BufferAccess<'a, S> {
    Frozen(&'a [BufferEntry<S>]),
    Training(&'a mut [BufferEntry<S>]),
}

impl<'a, S: Scalar> Ctx<'a, S> {
    /// Pushes a parameter onto the tape as a gradient leaf.
    pub fn param_var(&mut self, id: ParamId) -> Var {
        self.tape.param_leaf(id.0, self.params.param(id).tensor.clone())
    }
}

/// Truncation-free He (fan-in) normal initialization.
pub fn he_std(fan_in: usize) -> f64 {
    sqrt64(2.0 / fan_in as f64)
}

fn he_normal<S: Scalar, R: Rng>(rng: &mut R, shape: [usize; 4], fan_in: usize) -> Tensor<S> {
    let dist = Normal::new(0.0f64, he_std(fan_in)).expect("finite std");
    Tensor::from_fn(shape, |_, _, _, _| S::from_f64(dist.sample(rng)))
}

/// 2D convolution layer.
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cfg: ConvCfg,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    /// Registers weights (He normal) and an optional zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamSet<S>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        cfg: ConvCfg,
        bias: bool,
    ) -> Self {
        let cg = in_channels / cfg.groups;
        let fan_in = cg * kernel * kernel;
        let weight = store.add_param(
            format!("{name}.weight"),
            he_normal(rng, [out_channels, cg, kernel, kernel], fan_in),
        );
        let bias = bias.then(|| store.add_param(format!("{name}.bias"), Tensor::zeros([1, out_channels, 1, 1])));
        Conv2d { weight, bias, cfg, in_channels, out_channels }
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var) -> Var {
        let w = ctx.param_var(self.weight);
        let b = self.bias.map(|id| ctx.param_var(id));
        ctx.tape.conv2d(x, w, b, self.cfg)
    }
}

/// Batch normalization layer with running statistics.
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub buf: BufId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<S: Scalar>(store: &mut ParamSet<S>, name: &str, channels: usize) -> Self {
        let gamma = store.add_param(format!("{name}.weight"), Tensor::filled([1, channels, 1, 1], S::one()));
        let beta = store.add_param(format!("{name}.bias"), Tensor::zeros([1, channels, 1, 1]));
        let buf = store.add_buffer(format!("{name}"), channels);
        BatchNorm2d { gamma, beta, buf, eps: 1e-5, momentum: 0.1 }
    }

    /// Training mode normalizes by batch statistics and folds them into the
    /// running buffers (momentum 0.1, unbiased variance); inference mode
    /// normalizes by the frozen running statistics.
    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var) -> Var {
        let gamma = ctx.param_var(self.gamma);
        let beta = ctx.param_var(self.beta);
        let eps = S::from_f64(self.eps);
        if ctx.train {
            let m = {
                let s = ctx.tape.value(x).shape();
                s[0] * s[2] * s[3]
            };
            let (y, stats) = ctx.tape.batch_norm(x, gamma, beta, eps, BnMode::Train);
            let stats = stats.expect("train mode returns batch statistics");
            match &mut ctx.buffers {
                BufferAccess::Training(buffers) => {
                    let entry = &mut buffers[self.buf.0];
                    let mom = S::from_f64(self.momentum);
                    let keep = S::one() - mom;
                    // Unbiased variance for the running estimate.
                    let bessel = if m > 1 { m as f64 / (m as f64 - 1.0) } else { 1.0 };
                    let bessel = S::from_f64(bessel);
                    for c in 0..entry.mean.len() {
                        entry.mean[c] = keep * entry.mean[c] + mom * stats.mean[c];
                        entry.var[c] = keep * entry.var[c] + mom * stats.var[c] * bessel;
                    }
                }
                BufferAccess::Frozen(_) => {
                    panic!("training forward requires mutable batch-norm buffers")
                }
            }
            y
        } else {
            let entry = match &ctx.buffers {
                BufferAccess::Frozen(buffers) => &buffers[self.buf.0],
                BufferAccess::Training(buffers) => &buffers[self.buf.0],
            };
            let mode = BnMode::Eval { mean: &entry.mean, var: &entry.var };
            let (y, _) = ctx.tape.batch_norm(x, gamma, beta, eps, mode);
            y
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn construction_is_deterministic_for_a_seed() {
        let build = || {
            let mut store = ParamSet::<f32>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let _ = Conv2d::new(&mut store, &mut rng, "a", 3, 8, 3, ConvCfg::default(), true);
            let _ = BatchNorm2d::new(&mut store, "a.bn", 8);
            let _ = Conv2d::new(&mut store, &mut rng, "b", 8, 4, 1, ConvCfg::default(), false);
            store
        };
        let s1 = build();
        let s2 = build();
        assert_eq!(s1.param_count(), s2.param_count());
        for (a, b) in s1.params().iter().zip(s2.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.data(), b.tensor.data());
        }
    }

    #[test]
    fn he_std_follows_fan_in() {
        assert!((he_std(18) - (2.0f64 / 18.0).sqrt()).abs() < 1e-15);
        assert!(he_std(9 * 64) < he_std(9));
    }

    #[test]
    fn bn_running_stats_update_only_in_train_mode() {
        let mut store = ParamSet::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2);
        let x = Tensor::from_fn([4, 2, 3, 3], |n, c, h, w| ((n * 5 + c * 3 + h + w) % 7) as f64);

        // Eval forward leaves buffers at their initial values.
        let params = store.clone();
        {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let mut ctx = Ctx {
                tape: &mut tape,
                params: &params,
                buffers: BufferAccess::Frozen(store.buffers()),
                train: false,
            };
            let _ = bn.forward(&mut ctx, xv);
        }
        assert_eq!(store.buffer(bn.buf).mean, vec![0.0, 0.0]);
        assert_eq!(store.buffer(bn.buf).var, vec![1.0, 1.0]);

        // Train forward folds batch statistics in with momentum 0.1.
        {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let mut ctx = Ctx {
                tape: &mut tape,
                params: &params,
                buffers: BufferAccess::Training(store.buffers_mut()),
                train: true,
            };
            let _ = bn.forward(&mut ctx, xv);
        }
        let entry = store.buffer(bn.buf);
        assert!(entry.mean.iter().any(|&m| m != 0.0));
        assert!(entry.var.iter().all(|&v| v != 1.0));
    }
}
