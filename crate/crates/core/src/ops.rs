//! Functional numerical kernels: convolution, pooling, resizing.
//!
//! Layers in [`crate::nn`] wrap these with parameters and caches. All kernels
//! are stride-1 where applicable, run single-threaded, and are deterministic:
//! the same inputs produce bitwise-identical outputs.

use crate::tensor::{Scalar, Tensor};

/// Geometry of a stride-1 "same"-padded square convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
}

pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

impl ConvGeom {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, dilation: usize) -> Self {
        assert!(kernel % 2 == 1, "only odd kernels are supported");
        Self { in_ch, out_ch, kernel, dilation }
    }

    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.kernel, self.kernel]
    }

    /// `out[b,o,y,x] = bias[o] + sum_{i,ky,kx} w[o,i,ky,kx] * x[b,i,y+(ky-c)*d,x+(kx-c)*d]`
    /// with zero padding outside the image.
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
        let [n, cin, h, wd] = x.shape();
        assert_eq!(cin, self.in_ch, "input channel mismatch");
        assert_eq!(w.shape(), self.weight_shape());
        let (k, p) = (self.kernel, self.padding());
        let plane = h * wd;
        let mut out = Tensor::zeros([n, self.out_ch, h, wd]);

        if k == 1 {
            for b in 0..n {
                for o in 0..self.out_ch {
                    out.sample_mut(b)[o * plane..(o + 1) * plane].fill(bias.data()[o]);
                }
                unsafe {
                    T::gemm(
                        self.out_ch, cin, plane,
                        T::one(),
                        w.data().as_ptr(), cin as isize, 1,
                        x.sample(b).as_ptr(), plane as isize, 1,
                        T::one(),
                        out.sample_mut(b).as_mut_ptr(), plane as isize, 1,
                    );
                }
            }
            return out;
        }

        let (ph, pw) = (h + 2 * p, wd + 2 * p);
        let mut padded = vec![T::zero(); cin * ph * pw];
        let mut shifted = vec![T::zero(); cin * plane];
        for b in 0..n {
            pad_sample(x.sample(b), cin, h, wd, p, &mut padded);
            for o in 0..self.out_ch {
                out.sample_mut(b)[o * plane..(o + 1) * plane].fill(bias.data()[o]);
            }
            for ky in 0..k {
                for kx in 0..k {
                    extract_shifted(&padded, cin, ph, pw, h, wd, ky * self.dilation, kx * self.dilation, &mut shifted);
                    let w_off = ky * k + kx;
                    unsafe {
                        T::gemm(
                            self.out_ch, cin, plane,
                            T::one(),
                            w.data().as_ptr().add(w_off), (cin * k * k) as isize, (k * k) as isize,
                            shifted.as_ptr(), plane as isize, 1,
                            T::one(),
                            out.sample_mut(b).as_mut_ptr(), plane as isize, 1,
                        );
                    }
                }
            }
        }
        out
    }

    pub fn backward<T: Scalar>(&self, x: &Tensor<T>, w: &Tensor<T>, grad_out: &Tensor<T>) -> ConvGrads<T> {
        let [n, cin, h, wd] = x.shape();
        let plane = h * wd;
        let (k, p) = (self.kernel, self.padding());
        let mut dx = Tensor::zeros(x.shape());
        let mut dw = Tensor::zeros(w.shape());
        let mut db = Tensor::zeros([self.out_ch, 1, 1, 1]);

        for b in 0..n {
            let g = grad_out.sample(b);
            for o in 0..self.out_ch {
                let s = g[o * plane..(o + 1) * plane].iter().fold(T::zero(), |a, &v| a + v);
                db.data_mut()[o] += s;
            }
        }

        if k == 1 {
            for b in 0..n {
                unsafe {
                    // dw += g * x^T
                    T::gemm(
                        self.out_ch, plane, cin,
                        T::one(),
                        grad_out.sample(b).as_ptr(), plane as isize, 1,
                        x.sample(b).as_ptr(), 1, plane as isize,
                        T::one(),
                        dw.data_mut().as_mut_ptr(), cin as isize, 1,
                    );
                    // dx = w^T * g
                    T::gemm(
                        cin, self.out_ch, plane,
                        T::one(),
                        w.data().as_ptr(), 1, cin as isize,
                        grad_out.sample(b).as_ptr(), plane as isize, 1,
                        T::one(),
                        dx.sample_mut(b).as_mut_ptr(), plane as isize, 1,
                    );
                }
            }
            return ConvGrads { dx, dw, db };
        }

        let (ph, pw) = (h + 2 * p, wd + 2 * p);
        let mut padded = vec![T::zero(); cin * ph * pw];
        let mut gpad = vec![T::zero(); cin * ph * pw];
        let mut shifted = vec![T::zero(); cin * plane];
        let mut tmp = vec![T::zero(); cin * plane];
        for b in 0..n {
            pad_sample(x.sample(b), cin, h, wd, p, &mut padded);
            gpad.fill(T::zero());
            for ky in 0..k {
                for kx in 0..k {
                    let (oy, ox) = (ky * self.dilation, kx * self.dilation);
                    extract_shifted(&padded, cin, ph, pw, h, wd, oy, ox, &mut shifted);
                    let w_off = ky * k + kx;
                    unsafe {
                        // dw[:, :, ky, kx] += g * shifted^T
                        T::gemm(
                            self.out_ch, plane, cin,
                            T::one(),
                            grad_out.sample(b).as_ptr(), plane as isize, 1,
                            shifted.as_ptr(), 1, plane as isize,
                            T::one(),
                            dw.data_mut().as_mut_ptr().add(w_off), (cin * k * k) as isize, (k * k) as isize,
                        );
                        // tmp = w[:, :, ky, kx]^T * g
                        T::gemm(
                            cin, self.out_ch, plane,
                            T::one(),
                            w.data().as_ptr().add(w_off), (k * k) as isize, (cin * k * k) as isize,
                            grad_out.sample(b).as_ptr(), plane as isize, 1,
                            T::zero(),
                            tmp.as_mut_ptr(), plane as isize, 1,
                        );
                    }
                    scatter_shifted_add(&tmp, cin, ph, pw, h, wd, oy, ox, &mut gpad);
                }
            }
            crop_sample(&gpad, cin, ph, pw, h, wd, p, dx.sample_mut(b));
        }
        ConvGrads { dx, dw, db }
    }
}

fn pad_sample<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, p: usize, out: &mut [T]) {
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    out.fill(T::zero());
    for i in 0..c {
        for y in 0..h {
            let src = &x[i * h * w + y * w..i * h * w + (y + 1) * w];
            let dst_base = i * ph * pw + (y + p) * pw + p;
            out[dst_base..dst_base + w].copy_from_slice(src);
        }
    }
}

fn extract_shifted<T: Scalar>(
    padded: &[T], c: usize, ph: usize, pw: usize, h: usize, w: usize, oy: usize, ox: usize, out: &mut [T],
) {
    for i in 0..c {
        for y in 0..h {
            let src_base = i * ph * pw + (y + oy) * pw + ox;
            let dst_base = i * h * w + y * w;
            out[dst_base..dst_base + w].copy_from_slice(&padded[src_base..src_base + w]);
        }
    }
}

fn scatter_shifted_add<T: Scalar>(
    tmp: &[T], c: usize, ph: usize, pw: usize, h: usize, w: usize, oy: usize, ox: usize, gpad: &mut [T],
) {
    for i in 0..c {
        for y in 0..h {
            let dst_base = i * ph * pw + (y + oy) * pw + ox;
            let src_base = i * h * w + y * w;
            for x in 0..w {
                gpad[dst_base + x] += tmp[src_base + x];
            }
        }
    }
}

fn crop_sample<T: Scalar>(gpad: &[T], c: usize, ph: usize, pw: usize, h: usize, w: usize, p: usize, out: &mut [T]) {
    for i in 0..c {
        for y in 0..h {
            let src_base = i * ph * pw + (y + p) * pw + p;
            let dst_base = i * h * w + y * w;
            out[dst_base..dst_base + w].copy_from_slice(&gpad[src_base..src_base + w]);
        }
    }
}

/// Max pooling over `k x k` windows with stride `k`; spatial dims must divide.
/// Returns the pooled map and the flat argmax index of every output cell.
pub fn maxpool<T: Scalar>(x: &Tensor<T>, k: usize) -> (Tensor<T>, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    assert!(h % k == 0 && w % k == 0, "pooling window {k} must divide {h}x{w}");
    let (oh, ow) = (h / k, w / k);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    let data = x.data();
    let mut oi = 0;
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0usize;
                    for dy in 0..k {
                        let row = base + (oy * k + dy) * w + ox * k;
                        for dx in 0..k {
                            let v = data[row + dx];
                            if v > best {
                                best = v;
                                best_idx = row + dx;
                            }
                        }
                    }
                    out.data_mut()[oi] = best;
                    arg[oi] = best_idx as u32;
                    oi += 1;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: [usize; 4], argmax: &[u32]) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (g, &idx) in grad_out.data().iter().zip(argmax.iter()) {
        dx.data_mut()[idx as usize] += *g;
    }
    dx
}

/// Spatial mean per `(batch, channel)`, producing an `(n, c, 1, 1)` map.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    let inv = T::from_f64(1.0 / plane as f64);
    let mut out = Tensor::zeros([n, c, 1, 1]);
    for b in 0..n {
        let src = x.sample(b);
        for ch in 0..c {
            let s = src[ch * plane..(ch + 1) * plane].iter().fold(T::zero(), |a, &v| a + v);
            out.data_mut()[b * c + ch] = s * inv;
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(grad_out: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, c, _, _] = grad_out.shape();
    let plane = h * w;
    let inv = T::from_f64(1.0 / plane as f64);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let g = grad_out.data()[b * c + ch] * inv;
            dx.sample_mut(b)[ch * plane..(ch + 1) * plane].fill(g);
        }
    }
    dx
}

/// Replicate an `(n, c, 1, 1)` map over an `h x w` grid (nearest broadcast).
pub fn broadcast_spatial<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, c, xh, xw] = x.shape();
    assert_eq!((xh, xw), (1, 1));
    let plane = h * w;
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            out.sample_mut(b)[ch * plane..(ch + 1) * plane].fill(x.data()[b * c + ch]);
        }
    }
    out
}

pub fn broadcast_spatial_backward<T: Scalar>(grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = grad_out.shape();
    let plane = h * w;
    let mut dx = Tensor::zeros([n, c, 1, 1]);
    for b in 0..n {
        let g = grad_out.sample(b);
        for ch in 0..c {
            dx.data_mut()[b * c + ch] = g[ch * plane..(ch + 1) * plane].iter().fold(T::zero(), |a, &v| a + v);
        }
    }
    dx
}

/// Per-axis source indices and interpolation weight for bilinear resizing.
fn bilinear_axis<T: Scalar>(src_len: usize, factor: usize) -> Vec<(usize, usize, T)> {
    let dst_len = src_len * factor;
    let inv = 1.0 / factor as f64;
    (0..dst_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * inv - 0.5;
            let i0f = src.floor();
            let frac = src - i0f;
            let i0 = (i0f.max(0.0) as usize).min(src_len - 1);
            let i1 = ((i0f + 1.0).max(0.0) as usize).min(src_len - 1);
            (i0, i1, T::from_f64(frac))
        })
        .collect()
}

/// Bilinear upsampling by an integer factor (half-pixel-center convention).
pub fn bilinear_upsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    assert!(factor >= 1);
    if factor == 1 {
        return x.clone();
    }
    let [n, c, h, w] = x.shape();
    let ys = bilinear_axis::<T>(h, factor);
    let xs = bilinear_axis::<T>(w, factor);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        let src = x.sample(b);
        let dst = out.sample_mut(b);
        for ch in 0..c {
            let sbase = ch * h * w;
            let dbase = ch * oh * ow;
            for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                let r0 = sbase + y0 * w;
                let r1 = sbase + y1 * w;
                let drow = dbase + oy * ow;
                for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                    let one = T::one();
                    let top = src[r0 + x0] * (one - wx) + src[r0 + x1] * wx;
                    let bot = src[r1 + x0] * (one - wx) + src[r1 + x1] * wx;
                    dst[drow + ox] = top * (one - wy) + bot * wy;
                }
            }
        }
    }
    out
}

pub fn bilinear_upsample_backward<T: Scalar>(grad_out: &Tensor<T>, factor: usize) -> Tensor<T> {
    if factor == 1 {
        return grad_out.clone();
    }
    let [n, c, oh, ow] = grad_out.shape();
    let (h, w) = (oh / factor, ow / factor);
    let ys = bilinear_axis::<T>(h, factor);
    let xs = bilinear_axis::<T>(w, factor);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        let g = grad_out.sample(b);
        let dst = dx.sample_mut(b);
        for ch in 0..c {
            let sbase = ch * h * w;
            let gbase = ch * oh * ow;
            for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
                let grow = gbase + oy * ow;
                for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                    let one = T::one();
                    let gv = g[grow + ox];
                    dst[sbase + y0 * w + x0] += gv * (one - wy) * (one - wx);
                    dst[sbase + y0 * w + x1] += gv * (one - wy) * wx;
                    dst[sbase + y1 * w + x0] += gv * wy * (one - wx);
                    dst[sbase + y1 * w + x1] += gv * wy * wx;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force dilated "same" convolution used as the oracle.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], k: usize, d: usize) -> Tensor<f64> {
        let [n, cin, h, wd] = x.shape();
        let cout = w.shape()[0];
        let p = d * (k - 1) / 2;
        let mut out = Tensor::zeros([n, cout, h, wd]);
        for b in 0..n {
            for o in 0..cout {
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = bias[o];
                        for i in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + (ky * d) as isize - p as isize;
                                    let sx = xx as isize + (kx * d) as isize - p as isize;
                                    if sy >= 0 && (sy as usize) < h && sx >= 0 && (sx as usize) < wd {
                                        acc += w.at(o, i, ky, kx) * x.at(b, i, sy as usize, sx as usize);
                                    }
                                }
                            }
                        }
                        out.set(b, o, y, xx, acc);
                    }
                }
            }
        }
        out
    }

    fn arange(shape: [usize; 4]) -> Tensor<f64> {
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|i| (i as f64 * 0.37).sin()).collect())
    }

    #[test]
    fn conv_forward_matches_oracle() {
        for &(k, d) in &[(1usize, 1usize), (3, 1), (3, 2), (3, 4)] {
            let geom = ConvGeom::new(2, 3, k, d);
            let x = arange([2, 2, 8, 8]);
            let w = arange(geom.weight_shape());
            let bias = Tensor::from_vec([3, 1, 1, 1], vec![0.1, -0.2, 0.3]);
            let got = geom.forward(&x, &w, &bias);
            let want = conv_oracle(&x, &w, bias.data(), k, d);
            for (a, b) in got.data().iter().zip(want.data().iter()) {
                assert!((a - b).abs() < 1e-12, "k={k} d={d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn single_channel_dilation2_matches_sliding_window() {
        // Hand-set dilation-2 kernel on an 8x8 single-channel input.
        let geom = ConvGeom::new(1, 1, 3, 2);
        let x = arange([1, 1, 8, 8]);
        let w = Tensor::from_vec([1, 1, 3, 3], vec![0.0, 1.0, 0.0, -1.0, 2.0, 1.5, 0.0, -0.5, 0.25]);
        let bias = Tensor::zeros([1, 1, 1, 1]);
        let got = geom.forward(&x, &w, &bias);
        let want = conv_oracle(&x, &w, bias.data(), 3, 2);
        assert_eq!(got, want);
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let geom = ConvGeom::new(2, 2, 3, 2);
        let x = arange([1, 2, 6, 6]);
        let w = arange(geom.weight_shape());
        let bias = Tensor::from_vec([2, 1, 1, 1], vec![0.05, -0.05]);
        // Loss = weighted sum of outputs to make the check direction-rich.
        let out = geom.forward(&x, &w, &bias);
        let gsel = out.map(|_| 0.0).data().len();
        let gw: Vec<f64> = (0..gsel).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let grad_out = Tensor::from_vec(out.shape(), gw.clone());
        let grads = geom.backward(&x, &w, &grad_out);

        let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            geom.forward(x, w, b)
                .data()
                .iter()
                .zip(gw.iter())
                .map(|(o, g)| o * g)
                .sum()
        };
        let h = 1e-6;
        for idx in [0usize, 5, 17, 31] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (loss(&xp, &w, &bias) - loss(&xm, &w, &bias)) / (2.0 * h);
            assert!((fd - grads.dx.data()[idx]).abs() < 1e-6, "dx[{idx}]");
        }
        for idx in [0usize, 3, 10, 35] {
            let mut wp = w.clone();
            wp.data_mut()[idx] += h;
            let mut wm = w.clone();
            wm.data_mut()[idx] -= h;
            let fd = (loss(&x, &wp, &bias) - loss(&x, &wm, &bias)) / (2.0 * h);
            assert!((fd - grads.dw.data()[idx]).abs() < 1e-6, "dw[{idx}]");
        }
        let mut bp = bias.clone();
        bp.data_mut()[1] += h;
        let mut bm = bias.clone();
        bm.data_mut()[1] -= h;
        let fd = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * h);
        assert!((fd - grads.db.data()[1]).abs() < 1e-6, "db");
    }

    #[test]
    fn maxpool_roundtrip() {
        let x = Tensor::from_vec(
            [1, 1, 4, 4],
            vec![
                1.0, 2.0, 5.0, 1.0, //
                3.0, 0.0, 1.0, 1.0, //
                9.0, 1.0, 0.0, 2.0, //
                1.0, 1.0, 1.0, 7.0,
            ],
        );
        let (out, arg) = maxpool(&x, 2);
        assert_eq!(out.data(), &[3.0, 5.0, 9.0, 7.0]);
        let g = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let dx = maxpool_backward(&g, [1, 1, 4, 4], &arg);
        assert_eq!(dx.at(0, 0, 1, 0), 1.0);
        assert_eq!(dx.at(0, 0, 0, 2), 2.0);
        assert_eq!(dx.at(0, 0, 2, 0), 3.0);
        assert_eq!(dx.at(0, 0, 3, 3), 4.0);
        assert_eq!(dx.sum(), 10.0);
    }

    #[test]
    fn bilinear_upsample_preserves_constants_and_transposes() {
        let x = Tensor::<f64>::full([1, 1, 3, 3], 2.5);
        let up = bilinear_upsample(&x, 4);
        assert!(up.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));

        // <up(x), g> == <x, up^T(g)> for the backward to be the exact adjoint.
        let x = arange([1, 2, 4, 4]);
        let g = arange([1, 2, 8, 8]);
        let lhs: f64 = bilinear_upsample(&x, 2).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = bilinear_upsample_backward(&g, 2).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn gap_and_broadcast_are_adjoint_pairs() {
        let x = arange([2, 3, 4, 4]);
        let p = global_avg_pool(&x);
        assert_eq!(p.shape(), [2, 3, 1, 1]);
        let mean0: f64 = x.sample(0)[0..16].iter().sum::<f64>() / 16.0;
        assert!((p.data()[0] - mean0).abs() < 1e-12);

        let g = arange([2, 3, 1, 1]);
        let lhs: f64 = global_avg_pool(&x).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = global_avg_pool_backward(&g, 4, 4).data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
