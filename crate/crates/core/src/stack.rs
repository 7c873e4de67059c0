//! Fully connected layers and stacks with leaky-ReLU activations.
//!
//! Stacks are the only nonlinear building block of the network: an affine
//! layer per step, leaky ReLU (slope 0.2) after every hidden layer, and an
//! optionally activated output. The piecewise-linear activation keeps
//! finite-difference gradient checks clean away from the kinks.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{randn_mat, SeededRng};

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Leaky ReLU.
#[inline]
pub fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Derivative of [`leaky`] (the `x >= 0` branch is used at exactly zero).
#[inline]
pub fn leaky_deriv(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// One affine layer: `y = w * x + b` with `w` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn new(w: Mat, b: Vec<f64>) -> Result<Dense> {
        if w.rows() != b.len() {
            return Err(Error::ShapeMismatch(format!(
                "bias length {} does not match {} output rows",
                b.len(),
                w.rows()
            )));
        }
        Ok(Dense { w, b })
    }

    /// Seeded init: weights ~ N(0, 1/fan_in), zero bias.
    pub fn seeded(out_dim: usize, in_dim: usize, rng: &mut SeededRng) -> Dense {
        let scale = 1.0 / (in_dim.max(1) as f64).sqrt();
        Dense { w: randn_mat(rng, out_dim, in_dim, scale), b: vec![0.0; out_dim] }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Dense {
        Dense { w: Mat::zeros(out_dim, in_dim), b: vec![0.0; out_dim] }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w.rows() * self.w.cols() + self.b.len()
    }

    /// `w * x + b`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.mul_vec(x);
        for (v, b) in y.iter_mut().zip(self.b.iter()) {
            *v += b;
        }
        y
    }

    /// Accumulate `scale * (cot (x) input^T, cot)` into `grad` and return the
    /// input cotangent `w^T * cot`.
    pub fn backward_into(
        &self,
        input: &[f64],
        cot: &[f64],
        grad: &mut Dense,
        scale: f64,
    ) -> Vec<f64> {
        grad.w.add_outer(cot, input, scale);
        for (g, &c) in grad.b.iter_mut().zip(cot.iter()) {
            *g += scale * c;
        }
        self.w.t_mul_vec(cot)
    }
}

/// A sequence of [`Dense`] layers. Every hidden layer is followed by a leaky
/// ReLU; the output layer is activated only when `activate_output` is set
/// (used by the encoder trunk, whose output is itself a hidden feature).
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub layers: Vec<Dense>,
    pub activate_output: bool,
}

/// Per-layer values saved by [`Stack::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct StackCache {
    /// Input to each layer (`inputs[0]` is the stack input).
    pub inputs: Vec<Vec<f64>>,
    /// Preactivation of each layer.
    pub pre: Vec<Vec<f64>>,
}

impl Stack {
    /// Seeded init over the full width chain `widths[0] -> ... -> widths.last()`.
    pub fn seeded(widths: &[usize], activate_output: bool, rng: &mut SeededRng) -> Result<Stack> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument("a stack needs at least one layer".into()));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument("stack widths must be positive".into()));
        }
        let layers = widths
            .windows(2)
            .map(|w| Dense::seeded(w[1], w[0], rng))
            .collect();
        Ok(Stack { layers, activate_output })
    }

    /// A same-shape stack of zeros (gradient accumulator).
    pub fn zeros_like(&self) -> Stack {
        Stack {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            activate_output: self.activate_output,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.activate_output
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.apply(&cur);
            if self.activated(i) {
                for v in cur.iter_mut() {
                    *v = leaky(*v);
                }
            }
        }
        cur
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, StackCache) {
        let mut cache = StackCache { inputs: Vec::new(), pre: Vec::new() };
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            cache.inputs.push(cur.clone());
            let pre = layer.apply(&cur);
            cur = if self.activated(i) {
                pre.iter().map(|&v| leaky(v)).collect()
            } else {
                pre.clone()
            };
            cache.pre.push(pre);
        }
        (cur, cache)
    }

    /// Accumulate `scale *` the parameter gradients for output cotangent
    /// `cot` into `grad`, returning the cotangent of the stack input.
    pub fn backward_into(
        &self,
        cache: &StackCache,
        cot: &[f64],
        grad: &mut Stack,
        scale: f64,
    ) -> Vec<f64> {
        let mut g = cot.to_vec();
        for i in (0..self.layers.len()).rev() {
            if self.activated(i) {
                for (gv, &p) in g.iter_mut().zip(cache.pre[i].iter()) {
                    *gv *= leaky_deriv(p);
                }
            }
            g = self.layers[i].backward_into(&cache.inputs[i], &g, &mut grad.layers[i], scale);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn numeric_input_grad(stack: &Stack, x: &[f64], cot: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                let fp: f64 = stack.forward(&xp).iter().zip(cot).map(|(y, c)| y * c).sum();
                let fm: f64 = stack.forward(&xm).iter().zip(cot).map(|(y, c)| y * c).sum();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn zero_weights_map_to_zero() {
        let stack = Stack {
            layers: vec![Dense::zeros(4, 3), Dense::zeros(2, 4)],
            activate_output: false,
        };
        assert_eq!(stack.forward(&[1.0, -2.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn leaky_negative_branch() {
        let mut stack = Stack { layers: vec![Dense::zeros(1, 1)], activate_output: true };
        stack.layers[0].w[(0, 0)] = 1.0;
        assert_eq!(stack.forward(&[-2.0]), vec![-0.4]);
        assert_eq!(stack.forward(&[2.0]), vec![2.0]);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = rng_for(11, 0);
        let stack = Stack::seeded(&[3, 5, 2], false, &mut rng).unwrap();
        let x = [0.3, -0.7, 1.2];
        let cot = [1.0, -2.0];
        let (_, cache) = stack.forward_cached(&x);
        let mut grad = stack.zeros_like();
        let gin = stack.backward_into(&cache, &cot, &mut grad, 1.0);
        let num = numeric_input_grad(&stack, &x, &cot);
        for (a, n) in gin.iter().zip(num.iter()) {
            assert!((a - n).abs() / a.abs().max(1.0) < 1e-6, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut rng = rng_for(12, 0);
        let stack = Stack::seeded(&[2, 4, 3], true, &mut rng).unwrap();
        let x = [0.9, -0.4];
        let cot = [0.5, 1.5, -1.0];
        let (_, cache) = stack.forward_cached(&x);
        let mut grad = stack.zeros_like();
        stack.backward_into(&cache, &cot, &mut grad, 1.0);
        let h = 1e-6;
        for layer in 0..2 {
            for r in 0..grad.layers[layer].w.rows() {
                for c in 0..grad.layers[layer].w.cols() {
                    let mut sp = stack.clone();
                    let mut sm = stack.clone();
                    sp.layers[layer].w[(r, c)] += h;
                    sm.layers[layer].w[(r, c)] -= h;
                    let fp: f64 = sp.forward(&x).iter().zip(&cot).map(|(y, co)| y * co).sum();
                    let fm: f64 = sm.forward(&x).iter().zip(&cot).map(|(y, co)| y * co).sum();
                    let num = (fp - fm) / (2.0 * h);
                    let ana = grad.layers[layer].w[(r, c)];
                    assert!((ana - num).abs() / ana.abs().max(1.0) < 1e-6);
                }
            }
        }
    }
}
