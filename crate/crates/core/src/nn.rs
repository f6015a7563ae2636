//! Minimal differentiable function approximation.
//!
//! A [`MlpSpec`] describes a fully connected network; its parameters live in
//! a caller-provided slice so that several networks can share one flat
//! [`ParamVector`]. Gradients are computed by hand-written reverse mode and
//! checked against central finite differences by [`gradcheck`].
//!
//! Weight matrices are stored input-major (`w[j * out + i]` connects input
//! `j` to output `i`), which lets the forward pass skip zero inputs. Sparse
//! one-hot observations are the common case.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Shape of a fully connected network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
    /// Apply the activation to the output layer as well (used for trunks).
    pub activate_output: bool,
}

/// Intermediate values of one forward pass, consumed by [`MlpSpec::backward`].
#[derive(Clone, Debug)]
pub struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each activated layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl MlpSpec {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: Vec::new(),
            activation: Activation::Tanh,
            output_dim,
            activate_output: false,
        }
    }

    pub fn new(input_dim: usize, hidden: Vec<usize>, activation: Activation, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            activation,
            output_dim,
            activate_output: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::validation(format!("all layer sizes must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in self.hidden.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, h));
            prev = h;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }

    fn is_activated(&self, layer: usize, n_layers: usize) -> bool {
        layer + 1 < n_layers || self.activate_output
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut [f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut offset = 0;
        for (fan_in, fan_out) in self.layer_dims() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[offset..offset + fan_in * fan_out + fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
    }

    fn check_lengths(&self, params: &[f64], input: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::validation(format!(
                "parameter length {} does not match spec ({})",
                params.len(),
                self.param_count()
            )));
        }
        if input.len() != self.input_dim {
            return Err(Error::validation(format!(
                "input length {} does not match input_dim {}",
                input.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check_lengths(params, input)?;
        let dims = self.layer_dims();
        let n = dims.len();
        let mut x = input.to_vec();
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let mut z = affine(&params[offset..offset + fan_in * fan_out + fan_out], fan_in, fan_out, &x);
            offset += fan_in * fan_out + fan_out;
            if self.is_activated(l, n) {
                for v in &mut z {
                    *v = self.activation.apply(*v);
                }
            }
            x = z;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, params: &[f64], input: &[f64]) -> Result<Trace> {
        self.check_lengths(params, input)?;
        let dims = self.layer_dims();
        let n = dims.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut x = input.to_vec();
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let mut z = affine(&params[offset..offset + fan_in * fan_out + fan_out], fan_in, fan_out, &x);
            offset += fan_in * fan_out + fan_out;
            inputs.push(x);
            if self.is_activated(l, n) {
                let a: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(std::mem::replace(&mut z, a));
            }
            x = z;
        }
        Ok(Trace { inputs, pre, output: x })
    }

    /// Accumulates `d(cotangent . output)/d(params)` into `grad` and returns the
    /// input cotangent when `want_input_grad` is set (empty otherwise).
    pub fn backward(
        &self,
        params: &[f64],
        trace: &Trace,
        cotangent: &[f64],
        grad: &mut [f64],
        want_input_grad: bool,
    ) -> Result<Vec<f64>> {
        if cotangent.len() != self.output_dim {
            return Err(Error::validation(format!(
                "cotangent length {} does not match output_dim {}",
                cotangent.len(),
                self.output_dim
            )));
        }
        if grad.len() != params.len() || params.len() != self.param_count() {
            return Err(Error::validation("gradient buffer not congruent with parameters"));
        }
        let dims = self.layer_dims();
        let n = dims.len();
        let mut offsets = Vec::with_capacity(n);
        let mut acc = 0;
        for &(i, o) in &dims {
            offsets.push(acc);
            acc += i * o + o;
        }
        let mut delta = cotangent.to_vec();
        let mut pre_idx = trace.pre.len();
        // Output of the last layer is trace.output; hidden outputs are inputs[l + 1].
        for l in (0..n).rev() {
            let (fan_in, fan_out) = dims[l];
            if self.is_activated(l, n) {
                pre_idx -= 1;
                let z = &trace.pre[pre_idx];
                let a = if l + 1 < n { &trace.inputs[l + 1] } else { &trace.output };
                for i in 0..fan_out {
                    delta[i] *= self.activation.derivative(z[i], a[i]);
                }
            }
            let off = offsets[l];
            let x = &trace.inputs[l];
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    let row = &mut gw[j * fan_out..(j + 1) * fan_out];
                    for (g, d) in row.iter_mut().zip(&delta) {
                        *g += xj * d;
                    }
                }
            }
            for (g, d) in gb.iter_mut().zip(&delta) {
                *g += d;
            }
            if l == 0 && !want_input_grad {
                return Ok(Vec::new());
            }
            let w = &params[off..off + fan_in * fan_out];
            let mut dx = vec![0.0; fan_in];
            for (j, v) in dx.iter_mut().enumerate() {
                let row = &w[j * fan_out..(j + 1) * fan_out];
                *v = row.iter().zip(&delta).map(|(a, b)| a * b).sum();
            }
            delta = dx;
        }
        Ok(delta)
    }
}

fn affine(layer: &[f64], fan_in: usize, fan_out: usize, x: &[f64]) -> Vec<f64> {
    let (w, b) = layer.split_at(fan_in * fan_out);
    let mut z = b.to_vec();
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            let row = &w[j * fan_out..(j + 1) * fan_out];
            for (zi, wij) in z.iter_mut().zip(row) {
                *zi += xj * wij;
            }
        }
    }
    z
}

/// A named slice of a flat parameter array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Contiguous, non-overlapping named blocks covering a flat array.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Layout {
    blocks: Vec<Block>,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, len: usize) -> Range<usize> {
        let offset = self.total_len();
        assert!(self.block(name).is_none(), "duplicate block {name}");
        self.blocks.push(Block {
            name: name.to_string(),
            offset,
            len,
        });
        offset..offset + len
    }

    pub fn total_len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len)
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn range(&self, name: &str) -> Range<usize> {
        self.block(name)
            .unwrap_or_else(|| panic!("no parameter block named {name}"))
            .range()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }
}

/// Flat parameters plus their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::validation(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total_len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn block(&self, name: &str) -> &[f64] {
        &self.values[self.layout.range(name)]
    }

    pub fn block_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.layout.range(name);
        &mut self.values[r]
    }

    pub fn zero_grad(&self) -> GradBuffer {
        GradBuffer {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }
}

/// Gradient array congruent with a [`ParamVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    pub values: Vec<f64>,
    layout: Layout,
}

impl GradBuffer {
    pub fn block(&self, name: &str) -> &[f64] {
        &self.values[self.layout.range(name)]
    }

    pub fn block_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.layout.range(name);
        &mut self.values[r]
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// True when every entry of the named block is exactly zero.
    pub fn block_is_zero(&self, name: &str) -> bool {
        self.block(name).iter().all(|&g| g == 0.0)
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.values {
            *g *= s;
        }
    }
}

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update restricted to `ranges`; everything else is left untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, ranges: &[Range<usize>]) -> Result<()> {
        let groups: Vec<(Range<usize>, f64)> = ranges.iter().map(|r| (r.clone(), lr)).collect();
        self.step_groups(params, grads, &groups)
    }

    /// One update with a separate step size per range.
    pub fn step_groups(&mut self, params: &mut [f64], grads: &[f64], groups: &[(Range<usize>, f64)]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::validation("optimizer state not congruent with parameters"));
        }
        for (r, _) in groups {
            if let Some(i) = grads[r.clone()].iter().position(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!("non-finite gradient at index {}", r.start + i)));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (r, lr) in groups {
            let lr = *lr;
            for i in r.clone() {
                let g = grads[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

/// Relative error floor: below this magnitude errors are effectively absolute.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// `coords` selects which coordinates to probe (all when `None`). The
/// relative error of a coordinate is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradcheck<F>(loss: F, params: &[f64], analytic: &[f64], coords: Option<&[usize]>, h: f64) -> GradCheck
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len());
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let mut p = params.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: None,
        checked: coords.len(),
    };
    for &i in coords {
        let orig = p[i];
        p[i] = orig + h;
        let plus = loss(&p);
        p[i] = orig - h;
        let minus = loss(&p);
        p[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if worst.worst_index.is_none() || rel > worst.max_rel_error {
            worst.max_rel_error = rel;
            worst.worst_index = Some(i);
        }
    }
    worst
}

/// Picks `count` distinct coordinates out of `0..len`, or all of them when `count >= len`.
pub fn random_coords<R: Rng + ?Sized>(rng: &mut R, len: usize, count: usize) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    let mut v = rand::seq::index::sample(rng, len, count).into_vec();
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    /// Straight-line evaluator for a spec with any number of layers, written
    /// without the input-major storage trick.
    fn reference_forward(spec: &MlpSpec, params: &[f64], input: &[f64]) -> Vec<f64> {
        let dims = spec.layer_dims();
        let mut x = input.to_vec();
        let mut off = 0;
        for (l, &(fi, fo)) in dims.iter().enumerate() {
            let mut out = vec![0.0; fo];
            for (i, o) in out.iter_mut().enumerate() {
                let mut s = params[off + fi * fo + i];
                for j in 0..fi {
                    s += params[off + j * fo + i] * x[j];
                }
                let act = l + 1 < dims.len() || spec.activate_output;
                *o = if act {
                    match spec.activation {
                        Activation::Tanh => s.tanh(),
                        Activation::Relu => s.max(0.0),
                    }
                } else {
                    s
                };
            }
            off += fi * fo + fo;
            x = out;
        }
        x
    }

    #[test]
    fn identity_linear_spec_returns_input() {
        let spec = MlpSpec::linear(3, 3);
        let mut p = vec![0.0; spec.param_count()];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let x = [0.5, -2.0, 3.25];
        assert_eq!(spec.forward(&p, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::new(4, vec![5], Activation::Tanh, 2);
        let p = vec![0.0; spec.param_count()];
        assert_eq!(spec.forward(&p, &[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_matches_reference_evaluator() {
        let mut rng = stream(11, 0);
        for spec in [
            MlpSpec::new(5, vec![7], Activation::Tanh, 3),
            MlpSpec::new(5, vec![6, 4], Activation::Relu, 2),
            MlpSpec {
                activate_output: true,
                ..MlpSpec::new(3, vec![4], Activation::Tanh, 4)
            },
        ] {
            let mut p = vec![0.0; spec.param_count()];
            spec.init(&mut rng, &mut p);
            let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = spec.forward(&p, &x).unwrap();
            let b = reference_forward(&spec, &p, &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
            assert_eq!(spec.forward_trace(&p, &x).unwrap().output(), &a[..]);
        }
    }

    #[test]
    fn forward_rejects_bad_input_length() {
        let spec = MlpSpec::linear(3, 2);
        let p = vec![0.0; spec.param_count()];
        assert!(matches!(spec.forward(&p, &[1.0]), Err(Error::Validation(_))));
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let spec = MlpSpec::linear(3, 2);
        let mut rng = stream(3, 0);
        let mut p = vec![0.0; spec.param_count()];
        spec.init(&mut rng, &mut p);
        let x = [0.3, -1.2, 2.0];
        let tr = spec.forward_trace(&p, &x).unwrap();
        for i in 0..2 {
            let mut cot = vec![0.0; 2];
            cot[i] = 1.0;
            let mut g = vec![0.0; p.len()];
            spec.backward(&p, &tr, &cot, &mut g, false).unwrap();
            for j in 0..3 {
                assert_eq!(g[j * 2 + i], x[j]);
                assert_eq!(g[j * 2 + (1 - i)], 0.0);
            }
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let spec = MlpSpec::new(3, vec![4], Activation::Tanh, 2);
        let mut rng = stream(4, 0);
        let mut p = vec![0.0; spec.param_count()];
        spec.init(&mut rng, &mut p);
        let tr = spec.forward_trace(&p, &[1.0, 2.0, 3.0]).unwrap();
        let mut g = vec![0.0; p.len()];
        let dx = spec.backward(&p, &tr, &[0.0, 0.0], &mut g, true).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream(5, 0);
        for spec in [
            MlpSpec::new(4, vec![6], Activation::Tanh, 3),
            MlpSpec::new(3, vec![5, 4], Activation::Tanh, 2),
            MlpSpec {
                activate_output: true,
                ..MlpSpec::new(3, vec![3], Activation::Tanh, 3)
            },
        ] {
            let mut p = vec![0.0; spec.param_count()];
            spec.init(&mut rng, &mut p);
            let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cot: Vec<f64> = (0..spec.output_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tr = spec.forward_trace(&p, &x).unwrap();
            let mut g = vec![0.0; p.len()];
            let dx = spec.backward(&p, &tr, &cot, &mut g, true).unwrap();
            let f = |q: &[f64]| -> f64 {
                spec.forward(q, &x).unwrap().iter().zip(&cot).map(|(a, b)| a * b).sum()
            };
            let check = gradcheck(f, &p, &g, None, 1e-5);
            assert!(check.max_rel_error < 1e-4, "{check:?}");
            let fx = |q: &[f64]| -> f64 {
                spec.forward(&p, q).unwrap().iter().zip(&cot).map(|(a, b)| a * b).sum()
            };
            let check = gradcheck(fx, &x, &dx, None, 1e-5);
            assert!(check.max_rel_error < 1e-4, "{check:?}");
        }
    }

    #[test]
    fn gradcheck_zero_and_linear_losses() {
        let p = [0.3, -0.7, 1.1];
        let zero = gradcheck(|_| 0.0, &p, &[0.0; 3], None, 1e-5);
        assert_eq!(zero.max_rel_error, 0.0);
        let c = [2.0, -3.0, 0.5];
        let lin = gradcheck(|q| q.iter().zip(&c).map(|(a, b)| a * b).sum(), &p, &c, None, 1e-5);
        assert!(lin.max_rel_error < 1e-9, "{lin:?}");
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut adam = Adam::new(3);
        let mut p = vec![1.0, -2.0, 3.0];
        adam.step(&mut p, &[0.0; 3], 1e-2, &[0..3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_moves_against_constant_gradient() {
        let mut adam = Adam::new(2);
        let mut p = vec![0.0, 0.0];
        for _ in 0..50 {
            adam.step(&mut p, &[1.5, -0.2], 1e-2, &[0..2]).unwrap();
        }
        assert!(p[0] < 0.0 && p[1] > 0.0);
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let mut adam = Adam::new(1);
        let mut x = vec![1.0];
        for _ in 0..2000 {
            let g = [2.0 * x[0]];
            adam.step(&mut x, &g, 1e-2, &[0..1]).unwrap();
        }
        assert!(x[0].abs() < 1e-3, "x = {}", x[0]);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut adam = Adam::new(2);
        let mut p = vec![0.0, 0.0];
        assert!(matches!(
            adam.step(&mut p, &[f64::NAN, 0.0], 1e-2, &[0..2]),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn adam_respects_ranges() {
        let mut adam = Adam::new(4);
        let mut p = vec![1.0; 4];
        adam.step(&mut p, &[1.0; 4], 0.1, &[1..3]).unwrap();
        assert_eq!(p[0], 1.0);
        assert_eq!(p[3], 1.0);
        assert!(p[1] < 1.0 && p[2] < 1.0);
    }

    #[test]
    fn layout_blocks_are_contiguous() {
        let mut l = Layout::new();
        assert_eq!(l.push("a", 3), 0..3);
        assert_eq!(l.push("b", 0), 3..3);
        assert_eq!(l.push("c", 2), 3..5);
        assert_eq!(l.total_len(), 5);
        let pv = ParamVector::zeros(l);
        assert_eq!(pv.block("c").len(), 2);
    }
}

#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn layout_blocks_tile_the_array(lens in prop::collection::vec(0usize..20, 0..8)) {
            let mut layout = Layout::new();
            for (i, &len) in lens.iter().enumerate() {
                layout.push(&format!("b{i}"), len);
            }
            prop_assert_eq!(layout.total_len(), lens.iter().sum::<usize>());
            let mut covered = vec![0u8; layout.total_len()];
            for b in layout.blocks() {
                for i in b.range() {
                    covered[i] += 1;
                }
            }
            prop_assert!(covered.iter().all(|&c| c == 1));
        }

        #[test]
        fn mlp_forward_is_pure_and_matches_its_trace(
            hidden in prop::collection::vec(1usize..6, 0..3),
            input in prop::collection::vec(-2.0f64..2.0, 3),
            seed in 0u64..1000,
        ) {
            let spec = MlpSpec::new(3, hidden, Activation::Tanh, 2);
            let mut params = vec![0.0; spec.param_count()];
            spec.init(&mut crate::rng::stream(seed, 0), &mut params);
            let a = spec.forward(&params, &input).unwrap();
            prop_assert_eq!(&a, &spec.forward(&params, &input).unwrap());
            let trace = spec.forward_trace(&params, &input).unwrap();
            prop_assert_eq!(a.as_slice(), trace.output());
        }
    }
}
