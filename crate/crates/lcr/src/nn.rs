//! Network building blocks on top of the tape.
//!
//! Layers own their parameters as plain [`Tensor`]s. For a forward pass a
//! layer is `bind`-ed onto a [`Tape`], which clones its parameters in as
//! leaves and returns a bound handle used to run ops. Binding appends the
//! parameter vars to a recorder in the same order as `collect`/`collect_mut`
//! report the tensors, so gradients, optimizer slots, and checkpoint records
//! always line up.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::init::kaiming_uniform;
use crate::tensor::{Shape, Tape, Tensor, Var};

/// 2-D convolution layer with square kernels.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Kaiming-uniform weights, zero bias.
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        Conv2d {
            weight: kaiming_uniform(Shape::new(cout, cin, kernel, kernel), fan_in, rng),
            bias: Tensor::zeros(Shape::new(1, cout, 1, 1)),
            stride,
            padding,
        }
    }

    /// All-zero weights and bias; used for branch outputs that must start as
    /// identity contributions.
    pub fn zeroed(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d {
            weight: Tensor::zeros(Shape::new(cout, cin, kernel, kernel)),
            bias: Tensor::zeros(Shape::new(1, cout, 1, 1)),
            stride,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn bind(&self, tape: &mut Tape, rec: &mut Vec<Var>, trainable: bool) -> BoundConv {
        let weight = tape.leaf(self.weight.clone(), trainable);
        let bias = tape.leaf(self.bias.clone(), trainable);
        rec.push(weight);
        rec.push(bias);
        BoundConv {
            weight,
            bias,
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn collect<'a>(&'a self, name: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{name}.weight"), &self.weight));
        out.push((format!("{name}.bias"), &self.bias));
    }

    pub fn collect_mut<'a>(&'a mut self, name: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{name}.weight"), &mut self.weight));
        out.push((format!("{name}.bias"), &mut self.bias));
    }
}

/// A [`Conv2d`] bound onto a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundConv {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl BoundConv {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.conv2d(x, self.weight, self.bias, self.stride, self.padding)
    }

    /// Nearest-neighbor upsample by `factor`, then this convolution.
    pub fn upsample_forward(&self, tape: &mut Tape, x: Var, factor: usize) -> Result<Var> {
        tape.upsample_conv2d(x, self.weight, self.bias, factor, self.padding)
    }
}

/// Learned matrix parameter stored as a (1, 1, R, C) tensor.
#[derive(Debug, Clone)]
pub struct MatParam {
    pub value: Tensor,
}

impl MatParam {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatParam {
            value: Tensor::zeros(Shape::new(1, 1, rows, cols)),
        }
    }

    pub fn kaiming(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        MatParam {
            value: kaiming_uniform(Shape::new(1, 1, rows, cols), rows, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape, rec: &mut Vec<Var>, trainable: bool) -> Var {
        let v = tape.leaf(self.value.clone(), trainable);
        rec.push(v);
        v
    }

    pub fn collect<'a>(&'a self, name: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((name.to_string(), &self.value));
    }

    pub fn collect_mut<'a>(&'a mut self, name: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((name.to_string(), &mut self.value));
    }
}

/// Pulls gradients for bound parameter vars in binding order, substituting
/// zeros where a parameter did not participate in the loss.
pub fn grads_for(tape: &Tape, vars: &[Var]) -> Vec<Vec<f32>> {
    vars.iter()
        .map(|v| match tape.grad(*v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.value(*v).numel()],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init::seeded_rng;

    #[test]
    fn bind_order_matches_collect_order() {
        let mut rng = seeded_rng(3);
        let conv = Conv2d::new(2, 4, 3, 1, 1, &mut rng);
        let mut named = Vec::new();
        conv.collect("stem", &mut named);
        assert_eq!(named[0].0, "stem.weight");
        assert_eq!(named[1].0, "stem.bias");

        let mut tape = Tape::new();
        let mut rec = Vec::new();
        conv.bind(&mut tape, &mut rec, true);
        assert_eq!(rec.len(), 2);
        assert_eq!(tape.value(rec[0]).data(), named[0].1.data());
        assert_eq!(tape.value(rec[1]).data(), named[1].1.data());
    }

    #[test]
    fn gradient_through_conv_layer() {
        let mut rng = seeded_rng(11);
        let conv = Conv2d::new(1, 1, 3, 1, 1, &mut rng);
        let mut tape = Tape::new();
        let mut rec = Vec::new();
        let bound = conv.bind(&mut tape, &mut rec, true);
        let x = tape.leaf(Tensor::full(Shape::new(1, 1, 4, 4), 0.5), false);
        let y = bound.forward(&mut tape, x).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss).unwrap();
        let grads = grads_for(&tape, &rec);
        assert_eq!(grads.len(), 2);
        assert!(grads[0].iter().any(|g| *g != 0.0));
        // every output sums the bias once
        assert_eq!(grads[1], vec![16.0]);
    }
}
