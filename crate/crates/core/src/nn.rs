//! Trainable layers with explicit forward/backward passes.
//!
//! Every layer owns its parameters ([`Param`]) and, when run with
//! `train = true`, keeps whatever activations its backward pass needs.
//! `backward` accumulates into each parameter's `grad` and returns the
//! gradient with respect to the layer input. Layers are single-consumer:
//! one `forward(train)` must precede each `backward`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::ops::{self, ConvGeom};
use crate::tensor::{Scalar, Tensor};

/// A trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Named mutable references to every parameter of a module, in a stable
/// deterministic order. The names form the checkpoint contract.
pub type ParamRefs<'a, T> = Vec<(String, &'a mut Param<T>)>;

pub(crate) fn prefixed<'a, T>(prefix: &str, children: ParamRefs<'a, T>, out: &mut ParamRefs<'a, T>) {
    for (name, p) in children {
        out.push((format!("{prefix}.{name}"), p));
    }
}

/// Kaiming (fan-in) normal initialization; biases start at zero.
pub fn kaiming_conv_weight<T: Scalar, R: Rng>(rng: &mut R, shape: [usize; 4]) -> Tensor<T> {
    let fan_in = shape[1] * shape[2] * shape[3];
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid std");
    let len: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| T::from_f64(dist.sample(rng))).collect())
}

/// Stride-1 "same"-padded convolution layer.
pub struct Conv2d<T> {
    pub geom: ConvGeom,
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache_x: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(rng: &mut R, in_ch: usize, out_ch: usize, kernel: usize, dilation: usize) -> Self {
        let geom = ConvGeom::new(in_ch, out_ch, kernel, dilation);
        Self {
            geom,
            weight: Param::new(kaiming_conv_weight(rng, geom.weight_shape())),
            bias: Param::new(Tensor::zeros([out_ch, 1, 1, 1])),
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let out = self.geom.forward(x, &self.weight.value, &self.bias.value);
        self.cache_x = train.then(|| x.clone());
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let x = self.cache_x.take().expect("conv backward without cached forward");
        let grads = self.geom.backward(&x, &self.weight.value, grad_out);
        self.weight.grad.add_assign(&grads.dw);
        self.bias.grad.add_assign(&grads.db);
        grads.dx
    }

    pub fn params(&mut self) -> ParamRefs<'_, T> {
        vec![
            ("weight".to_string(), &mut self.weight),
            ("bias".to_string(), &mut self.bias),
        ]
    }
}

/// Instance normalization with a learned per-channel affine transform.
///
/// Statistics are computed per sample and channel over the spatial plane,
/// so the output for one sample never depends on the rest of the batch.
pub struct InstanceNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
    cache: Option<(Tensor<T>, Vec<T>)>, // (x_hat, inv_std per (b, c))
}

impl<T: Scalar> InstanceNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full([1, channels, 1, 1], T::one())),
            beta: Param::new(Tensor::zeros([1, channels, 1, 1])),
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let plane = h * w;
        let inv_plane = T::from_f64(1.0 / plane as f64);
        let mut out = Tensor::zeros(x.shape());
        let mut x_hat = Tensor::zeros(x.shape());
        let mut inv_stds = vec![T::zero(); n * c];
        for b in 0..n {
            let src = x.sample(b);
            for ch in 0..c {
                let s = &src[ch * plane..(ch + 1) * plane];
                let mean = s.iter().fold(T::zero(), |a, &v| a + v) * inv_plane;
                let var = s.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_plane;
                let inv_std = T::one() / (var + T::from_f64(self.eps)).sqrt();
                inv_stds[b * c + ch] = inv_std;
                let g = self.gamma.value.data()[ch];
                let be = self.beta.value.data()[ch];
                let xh = &mut x_hat.sample_mut(b)[ch * plane..(ch + 1) * plane];
                for (i, &v) in s.iter().enumerate() {
                    xh[i] = (v - mean) * inv_std;
                }
                let dst = &mut out.sample_mut(b)[ch * plane..(ch + 1) * plane];
                for (d, &xv) in dst.iter_mut().zip(xh.iter()) {
                    *d = g * xv + be;
                }
            }
        }
        self.cache = train.then_some((x_hat, inv_stds));
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (x_hat, inv_stds) = self.cache.take().expect("norm backward without cached forward");
        let [n, c, h, w] = grad_out.shape();
        let plane = h * w;
        let inv_plane = T::from_f64(1.0 / plane as f64);
        let mut dx = Tensor::zeros(grad_out.shape());
        for b in 0..n {
            let g = grad_out.sample(b);
            let xh = x_hat.sample(b);
            for ch in 0..c {
                let gs = &g[ch * plane..(ch + 1) * plane];
                let xs = &xh[ch * plane..(ch + 1) * plane];
                let gamma = self.gamma.value.data()[ch];
                let mut sum_g = T::zero();
                let mut sum_gx = T::zero();
                for (&gv, &xv) in gs.iter().zip(xs.iter()) {
                    sum_g += gv;
                    sum_gx += gv * xv;
                }
                self.beta.grad.data_mut()[ch] += sum_g;
                self.gamma.grad.data_mut()[ch] += sum_gx;
                let mean_g = sum_g * inv_plane;
                let mean_gx = sum_gx * inv_plane;
                let scale = gamma * inv_stds[b * c + ch];
                let ds = &mut dx.sample_mut(b)[ch * plane..(ch + 1) * plane];
                for ((d, &gv), &xv) in ds.iter_mut().zip(gs.iter()).zip(xs.iter()) {
                    *d = scale * (gv - mean_g - xv * mean_gx);
                }
            }
        }
        dx
    }

    pub fn params(&mut self) -> ParamRefs<'_, T> {
        vec![
            ("gamma".to_string(), &mut self.gamma),
            ("beta".to_string(), &mut self.beta),
        ]
    }
}

/// Convolution followed by instance norm and (optionally) ReLU.
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub norm: InstanceNorm2d<T>,
    pub relu: bool,
    mask: Option<Vec<bool>>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new<R: Rng>(rng: &mut R, in_ch: usize, out_ch: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            conv: Conv2d::new(rng, in_ch, out_ch, kernel, dilation),
            norm: InstanceNorm2d::new(out_ch),
            relu: true,
            mask: None,
        }
    }

    pub fn without_relu(mut self) -> Self {
        self.relu = false;
        self
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let mut out = self.norm.forward(&self.conv.forward(x, train), train);
        if self.relu {
            let mut mask = Vec::new();
            if train {
                mask.reserve(out.len());
            }
            for v in out.data_mut() {
                let keep = *v > T::zero();
                if !keep {
                    *v = T::zero();
                }
                if train {
                    mask.push(keep);
                }
            }
            self.mask = train.then_some(mask);
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let g = if self.relu {
            let mask = self.mask.take().expect("relu backward without cached forward");
            let mut g = grad_out.clone();
            for (v, keep) in g.data_mut().iter_mut().zip(mask) {
                if !keep {
                    *v = T::zero();
                }
            }
            g
        } else {
            grad_out.clone()
        };
        self.conv.backward(&self.norm.backward(&g))
    }

    pub fn params(&mut self) -> ParamRefs<'_, T> {
        let mut out = Vec::new();
        prefixed("conv", self.conv.params(), &mut out);
        prefixed("norm", self.norm.params(), &mut out);
        out
    }
}

/// Squeeze-and-excitation channel attention.
///
/// Global average pooling followed by a two-layer bottleneck
/// (`channels -> channels/reduction -> channels`) whose sigmoid output
/// rescales each channel of the input.
pub struct SeBlock<T> {
    pub fc1: Conv2d<T>,
    pub fc2: Conv2d<T>,
    cache: Option<SeCache<T>>,
}

struct SeCache<T> {
    x: Tensor<T>,
    hidden: Tensor<T>,
    gate: Tensor<T>,
}

impl<T: Scalar> SeBlock<T> {
    pub fn new<R: Rng>(rng: &mut R, channels: usize, reduction: usize) -> Self {
        let hidden = (channels / reduction).max(1);
        Self {
            fc1: Conv2d::new(rng, channels, hidden, 1, 1),
            fc2: Conv2d::new(rng, hidden, channels, 1, 1),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let pooled = ops::global_avg_pool(x);
        let mut hidden = self.fc1.forward(&pooled, train);
        for v in hidden.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let mut gate = self.fc2.forward(&hidden, train);
        for v in gate.data_mut() {
            *v = T::one() / (T::one() + (-*v).exp());
        }
        let plane = h * w;
        let mut out = Tensor::zeros(x.shape());
        for b in 0..n {
            let src = x.sample(b);
            let dst = out.sample_mut(b);
            for ch in 0..c {
                let g = gate.data()[b * c + ch];
                for i in ch * plane..(ch + 1) * plane {
                    dst[i] = src[i] * g;
                }
            }
        }
        self.cache = train.then_some(SeCache { x: x.clone(), hidden, gate });
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let SeCache { x, hidden, gate } = self.cache.take().expect("se backward without cached forward");
        let [n, c, h, w] = x.shape();
        let plane = h * w;

        // Path through the gate product: d_gate and the direct input term.
        let mut dx = Tensor::zeros(x.shape());
        let mut dgate = Tensor::zeros([n, c, 1, 1]);
        for b in 0..n {
            let g = grad_out.sample(b);
            let xs = x.sample(b);
            let dst = dx.sample_mut(b);
            for ch in 0..c {
                let gv = gate.data()[b * c + ch];
                let mut acc = T::zero();
                for i in ch * plane..(ch + 1) * plane {
                    acc += g[i] * xs[i];
                    dst[i] = g[i] * gv;
                }
                dgate.data_mut()[b * c + ch] = acc;
            }
        }

        // Sigmoid, fc2, ReLU, fc1, then the pooling adjoint.
        let mut dz2 = dgate;
        for (d, &g) in dz2.data_mut().iter_mut().zip(gate.data()) {
            *d = *d * g * (T::one() - g);
        }
        let mut dh = self.fc2.backward(&dz2);
        for (d, &hv) in dh.data_mut().iter_mut().zip(hidden.data()) {
            if hv <= T::zero() {
                *d = T::zero();
            }
        }
        let dpooled = self.fc1.backward(&dh);
        dx.add_assign(&ops::global_avg_pool_backward(&dpooled, h, w));
        dx
    }

    pub fn params(&mut self) -> ParamRefs<'_, T> {
        let mut out = Vec::new();
        prefixed("fc1", self.fc1.params(), &mut out);
        prefixed("fc2", self.fc2.params(), &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded_input(shape: [usize; 4], seed: f64) -> Tensor<f64> {
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|i| ((i as f64 + seed) * 0.61).sin()).collect())
    }

    /// Central-difference check of dLoss/dInput where Loss = <out, probe>.
    fn check_input_grad<F>(mut f: F, x: &Tensor<f64>, analytic: &Tensor<f64>, probe: &[f64], tol: f64)
    where
        F: FnMut(&Tensor<f64>) -> Tensor<f64>,
    {
        let h = 1e-6;
        let loss = |t: &Tensor<f64>, f: &mut F| -> f64 {
            f(t).data().iter().zip(probe).map(|(o, g)| o * g).sum()
        };
        let stride = (x.len() / 7).max(1);
        for idx in (0..x.len()).step_by(stride) {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (loss(&xp, &mut f) - loss(&xm, &mut f)) / (2.0 * h);
            let a = analytic.data()[idx];
            let denom = fd.abs().max(a.abs()).max(1e-4);
            assert!(
                ((fd - a) / denom).abs() < tol,
                "idx {idx}: finite-diff {fd} vs analytic {a}"
            );
        }
    }

    #[test]
    fn instance_norm_is_batch_independent() {
        let mut norm = InstanceNorm2d::<f64>::new(2);
        let a = seeded_input([1, 2, 4, 4], 1.0);
        let b = seeded_input([1, 2, 4, 4], 9.0);
        let out_a = norm.forward(&a, false);
        let cat = Tensor::concat_batch(&[&a, &b]);
        let out_cat = norm.forward(&cat, false);
        for i in 0..out_a.len() {
            assert!((out_a.data()[i] - out_cat.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn instance_norm_backward_matches_finite_differences() {
        let x = seeded_input([2, 3, 4, 4], 3.0);
        let probe: Vec<f64> = (0..x.len()).map(|i| ((i % 11) as f64 - 5.0) / 5.0).collect();
        let mut norm = InstanceNorm2d::<f64>::new(3);
        norm.gamma.value.data_mut().copy_from_slice(&[1.2, 0.7, -0.4]);
        norm.beta.value.data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
        norm.forward(&x, true);
        let g = Tensor::from_vec(x.shape(), probe.clone());
        let dx = norm.backward(&g);
        let gamma = norm.gamma.value.clone();
        let beta = norm.beta.value.clone();
        check_input_grad(
            |t| {
                let mut n2 = InstanceNorm2d::new(3);
                n2.gamma.value = gamma.clone();
                n2.beta.value = beta.clone();
                n2.forward(t, false)
            },
            &x,
            &dx,
            &probe,
            1e-5,
        );
    }

    #[test]
    fn conv_block_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut block = ConvBlock::<f64>::new(&mut rng, 2, 3, 3, 1);
        let x = seeded_input([1, 2, 6, 6], 0.5);
        let probe: Vec<f64> = (0..3 * 36).map(|i| ((i % 13) as f64 - 6.0) / 6.0).collect();
        block.forward(&x, true);
        let g = Tensor::from_vec([1, 3, 6, 6], probe.clone());
        let dx = block.backward(&g);
        let w = block.conv.weight.value.clone();
        let b = block.conv.bias.value.clone();
        let gm = block.norm.gamma.value.clone();
        let bt = block.norm.beta.value.clone();
        check_input_grad(
            |t| {
                let mut rng = ChaCha8Rng::seed_from_u64(7);
                let mut b2 = ConvBlock::<f64>::new(&mut rng, 2, 3, 3, 1);
                b2.conv.weight.value = w.clone();
                b2.conv.bias.value = b.clone();
                b2.norm.gamma.value = gm.clone();
                b2.norm.beta.value = bt.clone();
                b2.forward(t, false)
            },
            &x,
            &dx,
            &probe,
            1e-4,
        );
    }

    #[test]
    fn se_block_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut se = SeBlock::<f64>::new(&mut rng, 4, 2);
        let x = seeded_input([1, 4, 4, 4], 2.0);
        let probe: Vec<f64> = (0..x.len()).map(|i| ((i % 9) as f64 - 4.0) / 4.0).collect();
        se.forward(&x, true);
        let g = Tensor::from_vec(x.shape(), probe.clone());
        let dx = se.backward(&g);
        let w1 = se.fc1.weight.value.clone();
        let b1 = se.fc1.bias.value.clone();
        let w2 = se.fc2.weight.value.clone();
        let b2 = se.fc2.bias.value.clone();
        check_input_grad(
            |t| {
                let mut rng = ChaCha8Rng::seed_from_u64(11);
                let mut s2 = SeBlock::<f64>::new(&mut rng, 4, 2);
                s2.fc1.weight.value = w1.clone();
                s2.fc1.bias.value = b1.clone();
                s2.fc2.weight.value = w2.clone();
                s2.fc2.bias.value = b2.clone();
                s2.forward(t, false)
            },
            &x,
            &dx,
            &probe,
            1e-4,
        );
    }

    #[test]
    fn param_names_are_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut block = ConvBlock::<f32>::new(&mut rng, 2, 2, 3, 1);
        let names: Vec<String> = block.params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["conv.weight", "conv.bias", "norm.gamma", "norm.beta"]);
    }
}
