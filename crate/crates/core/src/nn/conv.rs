use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use super::{gaussian_init, gemm, Param, Tensor};
use crate::math;

/// Square-kernel 2D convolution without bias (always followed by batch norm).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: (usize, usize),
    pub pad: usize,
    /// `out_c x (in_c * kernel * kernel)`.
    pub weight: Param,
    /// Whether backward must produce input gradients.
    pub input_grad: bool,
    inputs: Vec<Tensor>,
}

impl Conv2d {
    pub fn new<R: RngCore + ?Sized>(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        let weight = Param::new(gaussian_init(out_c * fan_in, math::sqrt(2.0 / fan_in as f64), rng));
        Conv2d {
            in_c,
            out_c,
            kernel,
            stride,
            pad: kernel / 2,
            weight,
            input_grad: true,
            inputs: Vec::new(),
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let o = |n: usize, s: usize| (n + 2 * self.pad - self.kernel) / s + 1;
        (o(h, self.stride.0), o(w, self.stride.1))
    }

    fn im2col(&self, x: &Tensor, oh: usize, ow: usize) -> Vec<f32> {
        let k = self.kernel;
        let p = oh * ow;
        let mut col = vec![0.0f32; self.in_c * k * k * p];
        for ci in 0..self.in_c {
            let src = x.channel(ci);
            for kh in 0..k {
                for kw in 0..k {
                    let row = &mut col[((ci * k + kh) * k + kw) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride.0 + kh) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= x.h {
                            continue;
                        }
                        let src_row = &src[iy as usize * x.w..][..x.w];
                        let dst = &mut row[oy * ow..][..ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride.1 + kw) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < x.w {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Tensor {
        let k = self.kernel;
        let p = oh * ow;
        let mut x = Tensor::zeros(self.in_c, h, w);
        for ci in 0..self.in_c {
            let dst = &mut x.data[ci * h * w..][..h * w];
            for kh in 0..k {
                for kw in 0..k {
                    let row = &col[((ci * k + kh) * k + kw) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride.0 + kh) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..][..w];
                        for (ox, g) in row[oy * ow..][..ow].iter().enumerate() {
                            let ix = (ox * self.stride.1 + kw) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dst_row[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        debug_assert_eq!(x.c, self.in_c);
        let (oh, ow) = self.out_hw(x.h, x.w);
        let col = self.im2col(x, oh, ow);
        let kk = self.in_c * self.kernel * self.kernel;
        let p = oh * ow;
        let mut out = Tensor::zeros(self.out_c, oh, ow);
        gemm(self.out_c, kk, p, &self.weight.value, (kk, 1), &col, (p, 1), 0.0, &mut out.data);
        out
    }

    pub fn forward(&mut self, xs: Vec<Tensor>) -> Vec<Tensor> {
        let out = xs.iter().map(|x| self.infer(x)).collect();
        self.inputs = xs;
        out
    }

    pub fn backward(&mut self, grads: &[Tensor]) -> Vec<Tensor> {
        let kk = self.in_c * self.kernel * self.kernel;
        let inputs = core::mem::take(&mut self.inputs);
        let mut out = Vec::with_capacity(grads.len());
        for (x, g) in inputs.iter().zip(grads) {
            let (oh, ow) = (g.h, g.w);
            let p = oh * ow;
            let col = self.im2col(x, oh, ow);
            // dW += G (out_c x p) * col^T (p x kk)
            gemm(self.out_c, p, kk, &g.data, (p, 1), &col, (1, p), 1.0, &mut self.weight.grad);
            if self.input_grad {
                // dcol = W^T (kk x out_c) * G (out_c x p)
                let mut dcol = vec![0.0f32; kk * p];
                gemm(kk, self.out_c, p, &self.weight.value, (1, kk), &g.data, (p, 1), 0.0, &mut dcol);
                out.push(self.col2im(&dcol, x.h, x.w, oh, ow));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    /// Convolution evaluated straight from its definition.
    fn direct(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (oh, ow) = conv.out_hw(x.h, x.w);
        let k = conv.kernel;
        let mut out = Tensor::zeros(conv.out_c, oh, ow);
        for co in 0..conv.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ci in 0..conv.in_c {
                        for kh in 0..k {
                            for kw in 0..k {
                                let iy = (oy * conv.stride.0 + kh) as isize - conv.pad as isize;
                                let ix = (ox * conv.stride.1 + kw) as isize - conv.pad as isize;
                                if iy < 0 || ix < 0 || iy as usize >= x.h || ix as usize >= x.w {
                                    continue;
                                }
                                let wv = conv.weight.value[((co * conv.in_c + ci) * k + kh) * k + kw];
                                acc += f64::from(wv) * f64::from(x.data[(ci * x.h + iy as usize) * x.w + ix as usize]);
                            }
                        }
                    }
                    out.data[(co * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
        out
    }

    fn random_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = substream(seed, "t");
        Tensor { c, h, w, data: gaussian_init(c * h * w, 1.0, &mut rng) }
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = substream(0, "init");
        for (k, stride) in [(3, (1, 1)), (3, (2, 2)), (1, (2, 2))] {
            let conv = Conv2d::new(3, 4, k, stride, &mut rng);
            for (h, w) in [(7, 9), (8, 5), (1, 3)] {
                let x = random_tensor(3, h, w, (h * w) as u64);
                let fast = conv.infer(&x);
                let slow = direct(&conv, &x);
                assert_eq!((fast.h, fast.w), (slow.h, slow.w));
                for (a, b) in fast.data.iter().zip(&slow.data) {
                    assert!((a - b).abs() < 1e-4, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn stride_two_halves_rounding_up() {
        let conv = Conv2d::new(1, 1, 3, (2, 2), &mut substream(0, "i"));
        assert_eq!(conv.out_hw(40, 198), (20, 99));
        assert_eq!(conv.out_hw(5, 25), (3, 13));
        let proj = Conv2d::new(1, 1, 1, (2, 2), &mut substream(0, "i"));
        assert_eq!(proj.out_hw(5, 25), (3, 13));
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <G, conv(x)> is linear in both x and W, so its gradients are exact.
        let mut conv = Conv2d::new(2, 3, 3, (2, 1), &mut substream(1, "init"));
        let x = random_tensor(2, 6, 7, 5);
        let y = conv.forward(alloc::vec![x.clone()]).pop().unwrap();
        let g = random_tensor(y.c, y.h, y.w, 9);
        let dx = conv.backward(core::slice::from_ref(&g)).pop().unwrap();
        let inner = |conv: &Conv2d, x: &Tensor| -> f64 {
            conv.infer(x).data.iter().zip(&g.data).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum()
        };
        let base = inner(&conv, &x);
        for i in [0, 5, 17, 40, 83] {
            let mut xp = x.clone();
            xp.data[i] += 1.0;
            assert!(((inner(&conv, &xp) - base) - f64::from(dx.data[i])).abs() < 1e-3);
        }
        for i in [0, 7, 30, 53] {
            let mut cp = conv.clone();
            cp.weight.value[i] += 1.0;
            assert!(((inner(&cp, &x) - base) - f64::from(conv.weight.grad[i])).abs() < 1e-3);
        }
    }
}
