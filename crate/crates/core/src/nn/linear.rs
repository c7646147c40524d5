use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use super::{gaussian_init, Param};
use crate::math;

/// Affine map `y = W x + b`, `W` stored `out x in`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Vec<Vec<f32>>,
}

impl Linear {
    pub fn new<R: RngCore + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Linear {
            inputs,
            outputs,
            weight: Param::new(gaussian_init(inputs * outputs, 1.0 / math::sqrt(inputs as f64), rng)),
            bias: Param::zeros(outputs),
            cache: Vec::new(),
        }
    }

    pub fn infer(&self, x: &[f32]) -> Vec<f32> {
        self.weight
            .value
            .chunks(self.inputs)
            .zip(&self.bias.value)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + b)
            .collect()
    }

    pub fn forward(&mut self, xs: Vec<Vec<f32>>) -> Vec<Vec<f32>> {
        let out = xs.iter().map(|x| self.infer(x)).collect();
        self.cache = xs;
        out
    }

    pub fn backward(&mut self, grads: &[Vec<f32>]) -> Vec<Vec<f32>> {
        let xs = core::mem::take(&mut self.cache);
        xs.iter()
            .zip(grads)
            .map(|(x, g)| {
                let mut dx = vec![0.0f32; self.inputs];
                for (o, &go) in g.iter().enumerate() {
                    self.bias.grad[o] += go;
                    let row = &self.weight.value[o * self.inputs..][..self.inputs];
                    let grow = &mut self.weight.grad[o * self.inputs..][..self.inputs];
                    for i in 0..self.inputs {
                        grow[i] += go * x[i];
                        dx[i] += go * row[i];
                    }
                }
                dx
            })
            .collect()
    }
}
