//! Dense receptive field module.
//!
//! Three multi-receptive-field units, each a bank of three parallel 3x3
//! dilated convolutions merged by summation and ReLU, are chained densely:
//! every unit sees the module input plus all earlier unit outputs. A global
//! branch pools the input to 1x1, mixes channels with a 1x1 convolution and
//! broadcasts the result back. All paths aggregate by summation, so a
//! zero-parameter module is exactly the identity.

use alloc::format;

use rand::Rng;

use crate::autodiff::{ConvCfg, Var};
use crate::nn::{Conv2d, Ctx, ParamSet};
use crate::scalar::Scalar;

/// One multi-receptive-field unit: parallel dilated convolutions at the
/// configured rates, summed and rectified.
pub struct MrfUnit {
    branches: [Conv2d; 3],
}

impl MrfUnit {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamSet<S>,
        rng: &mut R,
        name: &str,
        channels: usize,
        rates: [usize; 3],
    ) -> Self {
        let branches = rates.map(|rate| {
            let cfg = ConvCfg { pad: rate, dilation: rate, ..ConvCfg::default() };
            Conv2d::new(store, rng, &format!("{name}.rate{rate}"), channels, channels, 3, cfg, true)
        });
        MrfUnit { branches }
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var) -> Var {
        let mut sum = self.branches[0].forward(ctx, x);
        for branch in &self.branches[1..] {
            let y = branch.forward(ctx, x);
            sum = ctx.tape.add(sum, y);
        }
        ctx.tape.relu(sum)
    }
}

/// The full module: three densely connected MRF units plus the global
/// context branch.
pub struct DrfModule {
    units: [MrfUnit; 3],
    global: Conv2d,
}

/// Intermediate values of one forward pass, for inspection and tests.
pub struct DrfTrace {
    /// What each unit consumed: X, X+Y1, X+Y1+Y2.
    pub unit_inputs: [Var; 3],
    /// Y1, Y2, Y3.
    pub unit_outputs: [Var; 3],
    /// Broadcast global-context map Y4.
    pub global: Var,
    /// Y = X + Y1 + Y2 + Y3 + Y4.
    pub output: Var,
}

impl DrfModule {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamSet<S>,
        rng: &mut R,
        name: &str,
        channels: usize,
        rates: [usize; 3],
    ) -> Self {
        let mut i = 0;
        let units = [(); 3].map(|_| {
            i += 1;
            MrfUnit::new(store, rng, &format!("{name}.unit{i}"), channels, rates)
        });
        let global = Conv2d::new(store, rng, &format!("{name}.global"), channels, channels, 1, ConvCfg::default(), true);
        DrfModule { units, global }
    }

    /// Forward pass that exposes every intermediate.
    pub fn forward_traced<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var) -> DrfTrace {
        let [_, _, h, w] = ctx.tape.value(x).shape();
        let in1 = x;
        let y1 = self.units[0].forward(ctx, in1);
        let in2 = ctx.tape.add(in1, y1);
        let y2 = self.units[1].forward(ctx, in2);
        let in3 = ctx.tape.add(in2, y2);
        let y3 = self.units[2].forward(ctx, in3);

        let pooled = ctx.tape.global_avg_pool(x);
        let mixed = self.global.forward(ctx, pooled);
        let y4 = ctx.tape.resize_bilinear(mixed, h, w);

        let sum = ctx.tape.add(in3, y3);
        let output = ctx.tape.add(sum, y4);
        DrfTrace { unit_inputs: [in1, in2, in3], unit_outputs: [y1, y2, y3], global: y4, output }
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx<'_, S>, x: Var) -> Var {
        self.forward_traced(ctx, x).output
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::gradcheck::{check_params, probe_sites};
    use crate::nn::BufferAccess;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build<S: Scalar>(channels: usize, seed: u64) -> (DrfModule, ParamSet<S>) {
        let mut store = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let module = DrfModule::new(&mut store, &mut rng, "drf", channels, [1, 2, 4]);
        (module, store)
    }

    fn test_map<S: Scalar>(n: usize, c: usize, h: usize, w: usize, salt: usize) -> Tensor<S> {
        Tensor::from_fn([n, c, h, w], |ni, ci, hi, wi| {
            let v = ((ni * 97 + ci * 61 + hi * 19 + wi * 11 + salt) % 37) as f64;
            S::from_f64(v / 37.0 - 0.5)
        })
    }

    fn ctx<'a, S: Scalar>(tape: &'a mut Tape<S>, params: &'a ParamSet<S>) -> Ctx<'a, S> {
        Ctx { tape, params, buffers: BufferAccess::Frozen(params.buffers()), train: false }
    }

    fn zero_all<S: Scalar>(params: &mut ParamSet<S>) {
        for entry in params.params_mut() {
            for v in entry.tensor.data_mut() {
                *v = S::zero();
            }
        }
    }

    #[test]
    fn zero_parameters_make_the_module_an_exact_identity() {
        let (module, mut params) = build::<f32>(3, 1);
        zero_all(&mut params);
        let x_t = test_map::<f32>(2, 3, 5, 7, 0);
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let mut c = ctx(&mut tape, &params);
        let y = module.forward(&mut c, x);
        let got = tape.value(y);
        assert_eq!(got.shape(), x_t.shape());
        for (a, b) in got.data().iter().zip(x_t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_unit_outputs_zero_maps() {
        let (module, mut params) = build::<f64>(2, 2);
        zero_all(&mut params);
        let mut tape = Tape::new();
        let x = tape.constant(test_map(1, 2, 4, 4, 5));
        let mut c = ctx(&mut tape, &params);
        let y = module.units[0].forward(&mut c, x);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_wiring_feeds_unit3_with_x_plus_y1_plus_y2() {
        let (module, mut params) = build::<f64>(2, 3);
        zero_all(&mut params);
        // Unit 1 emits constant ones (single bias tap through the relu),
        // units 2 and 3 stay zero.
        for entry in params.params_mut() {
            if entry.name == "drf.unit1.rate1.bias" {
                for v in entry.tensor.data_mut() {
                    *v = 1.0;
                }
            }
        }
        let x_t = test_map::<f64>(1, 2, 4, 4, 9);
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let mut c = ctx(&mut tape, &params);
        let trace = module.forward_traced(&mut c, x);
        let y1 = tape.value(trace.unit_outputs[0]);
        assert!(y1.data().iter().all(|&v| v == 1.0));
        let in3 = tape.value(trace.unit_inputs[2]);
        for (got, x_val) in in3.data().iter().zip(x_t.data()) {
            assert_eq!(*got, x_val + 1.0);
        }
    }

    #[test]
    fn rate1_identity_kernel_reduces_a_unit_to_relu() {
        let channels = 3;
        let (module, mut params) = build::<f64>(channels, 4);
        zero_all(&mut params);
        for entry in params.params_mut() {
            if entry.name == "drf.unit1.rate1.weight" {
                for ch in 0..channels {
                    entry.tensor.set(ch, ch, 1, 1, 1.0);
                }
            }
        }
        let x_t = test_map::<f64>(1, channels, 6, 6, 13);
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let mut c = ctx(&mut tape, &params);
        let y = module.units[0].forward(&mut c, x);
        let got = tape.value(y);
        for (a, b) in got.data().iter().zip(x_t.data()) {
            assert_eq!(*a, b.max(0.0));
        }
    }

    #[test]
    fn global_branch_is_spatially_constant() {
        let (module, params) = build::<f64>(4, 5);
        let mut tape = Tape::new();
        let x = tape.constant(test_map(2, 4, 6, 9, 17));
        let mut c = ctx(&mut tape, &params);
        let trace = module.forward_traced(&mut c, x);
        let y4 = tape.value(trace.global);
        assert_eq!(y4.shape(), [2, 4, 6, 9]);
        for n in 0..2 {
            for ch in 0..4 {
                let first = y4.at(n, ch, 0, 0);
                for h in 0..6 {
                    for w in 0..9 {
                        assert_eq!(y4.at(n, ch, h, w), first);
                    }
                }
            }
        }
    }

    #[test]
    fn spatial_size_is_preserved_for_any_extent() {
        let (module, params) = build::<f32>(3, 6);
        for (h, w) in [(1, 1), (1, 5), (2, 3), (4, 4), (7, 2), (8, 8)] {
            let mut tape = Tape::new();
            let x = tape.constant(test_map(1, 3, h, w, h * 10 + w));
            let mut c = ctx(&mut tape, &params);
            let y = module.forward(&mut c, x);
            assert_eq!(tape.value(y).shape(), [1, 3, h, w]);
            assert!(tape.value(y).all_finite());
        }
    }

    #[test]
    fn full_width_shape_oracle() {
        let (module, params) = build::<f32>(512, 7);
        let mut tape = Tape::new();
        let x = tape.constant(test_map(1, 512, 4, 4, 23));
        let mut c = ctx(&mut tape, &params);
        let y = module.forward(&mut c, x);
        assert_eq!(tape.value(y).shape(), [1, 512, 4, 4]);
    }

    #[test]
    fn receptive_field_grows_along_the_dense_chain() {
        let (module, mut params) = build::<f64>(1, 8);
        // All-ones kernels, zero biases: impulse responses trace the
        // reachable support exactly.
        for entry in params.params_mut() {
            let ones = entry.name.ends_with(".weight");
            for v in entry.tensor.data_mut() {
                *v = if ones { 1.0 } else { 0.0 };
            }
        }
        let size = 27;
        let center = size / 2;
        let impulse = Tensor::from_fn([1, 1, size, size], |_, _, h, w| {
            if h == center && w == center {
                1.0
            } else {
                0.0
            }
        });
        let mut tape = Tape::new();
        let x = tape.constant(impulse);
        let mut c = ctx(&mut tape, &params);
        let trace = module.forward_traced(&mut c, x);
        let radius = |v: Var, tape: &Tape<f64>| {
            let t = tape.value(v);
            let mut r = 0isize;
            for h in 0..size {
                for w in 0..size {
                    if t.at(0, 0, h, w) != 0.0 {
                        r = r
                            .max((h as isize - center as isize).abs())
                            .max((w as isize - center as isize).abs());
                    }
                }
            }
            r
        };
        let r1 = radius(trace.unit_outputs[0], &tape);
        let r3 = radius(trace.unit_outputs[2], &tape);
        assert_eq!(r1, 4);
        assert!(r3 > r1, "unit 3 radius {r3} should exceed unit 1 radius {r1}");
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let (module, mut params) = build::<f64>(4, 9);
        let x_t = test_map::<f64>(1, 4, 8, 8, 29);

        let run = |params: &ParamSet<f64>| -> (f64, Tape<f64>, Var) {
            let mut tape = Tape::new();
            let x = tape.constant(x_t.clone());
            let y = {
                let mut c = ctx(&mut tape, params);
                module.forward(&mut c, x)
            };
            let shape = tape.value(y).shape();
            let weights = Tensor::from_fn(shape, |n, cc, hh, ww| {
                ((n * 3 + cc * 7 + hh * 5 + ww) % 11) as f64 * 0.1 - 0.5
            });
            let wv = tape.constant(weights);
            let prod = tape.mul(y, wv);
            let root = tape.sum_all(prod);
            let value = tape.value(root).data()[0];
            (value, tape, root)
        };

        let (_, tape, root) = run(&params);
        let grads = tape.backward(root, params.param_count());
        let sites = probe_sites(&params, 2 * params.param_count());
        let report = check_params(
            &mut params,
            &sites,
            1e-6,
            1e-8,
            |p| run(p).0,
            |pi, ci| grads.wrt_param(pi).map_or(0.0, |g| g.data()[ci]),
        );
        assert!(
            report.passes(1e-3),
            "max rel err {:.3e} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}
