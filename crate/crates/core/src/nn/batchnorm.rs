use alloc::vec;
use alloc::vec::Vec;

use super::{Param, Tensor};
use crate::math;

const EPS: f32 = 1e-5;

/// Batch normalization over channels. In training mode the statistics of
/// the current batch are used and folded into running averages; inference
/// uses the running averages only.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    xhat: Vec<Tensor>,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::zeros(channels),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            xhat: Vec::new(),
            inv_std: Vec::new(),
        }
    }

    pub fn infer(&self, mut x: Tensor) -> Tensor {
        let p = x.plane();
        for c in 0..self.channels {
            let inv = 1.0 / math::sqrtf(self.running_var[c] + EPS);
            let (g, b, m) = (self.gamma.value[c], self.beta.value[c], self.running_mean[c]);
            for v in &mut x.data[c * p..(c + 1) * p] {
                *v = g * (*v - m) * inv + b;
            }
        }
        x
    }

    pub fn forward(&mut self, mut xs: Vec<Tensor>) -> Vec<Tensor> {
        let count: usize = xs.iter().map(Tensor::plane).sum();
        self.inv_std = vec![0.0; self.channels];
        for c in 0..self.channels {
            let mut sum = 0.0f64;
            for x in &xs {
                sum += x.channel(c).iter().map(|&v| f64::from(v)).sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut sq = 0.0f64;
            for x in &xs {
                sq += x.channel(c).iter().map(|&v| { let d = f64::from(v) - mean; d * d }).sum::<f64>();
            }
            let var = sq / count as f64;
            let inv = 1.0 / math::sqrt(var + f64::from(EPS));
            self.inv_std[c] = inv as f32;
            let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
            let mo = f64::from(self.momentum);
            self.running_mean[c] = ((1.0 - mo) * f64::from(self.running_mean[c]) + mo * mean) as f32;
            self.running_var[c] = ((1.0 - mo) * f64::from(self.running_var[c]) + mo * unbiased) as f32;
            for x in xs.iter_mut() {
                let p = x.plane();
                for v in &mut x.data[c * p..(c + 1) * p] {
                    *v = ((f64::from(*v) - mean) * inv) as f32;
                }
            }
        }
        self.xhat = xs.clone();
        for x in xs.iter_mut() {
            let p = x.plane();
            for c in 0..self.channels {
                let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                for v in &mut x.data[c * p..(c + 1) * p] {
                    *v = g * *v + b;
                }
            }
        }
        xs
    }

    pub fn backward(&mut self, mut grads: Vec<Tensor>) -> Vec<Tensor> {
        let xhat = core::mem::take(&mut self.xhat);
        let count: usize = grads.iter().map(Tensor::plane).sum();
        let n = count as f64;
        for c in 0..self.channels {
            let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
            for (g, xh) in grads.iter().zip(&xhat) {
                for (&gv, &xv) in g.channel(c).iter().zip(xh.channel(c)) {
                    sum_g += f64::from(gv);
                    sum_gx += f64::from(gv) * f64::from(xv);
                }
            }
            self.gamma.grad[c] += sum_gx as f32;
            self.beta.grad[c] += sum_g as f32;
            let scale = f64::from(self.gamma.value[c]) * f64::from(self.inv_std[c]) / n;
            for (g, xh) in grads.iter_mut().zip(&xhat) {
                let p = g.plane();
                for (gv, &xv) in g.data[c * p..(c + 1) * p].iter_mut().zip(xh.channel(c)) {
                    *gv = (scale * (n * f64::from(*gv) - sum_g - f64::from(xv) * sum_gx)) as f32;
                }
            }
        }
        grads
    }
}
