//! Reverse-mode autodiff tape.
//!
//! A [`Tape`] records every forward op as a node; nodes refer to earlier
//! nodes by [`Var`] index, so the list is topologically ordered by
//! construction. [`Tape::backward`] walks the list once in reverse and
//! accumulates gradients into every node that requires them.
//!
//! The tape also counts multiply-accumulates as ops execute: convolutions
//! contribute N*Cout*Cin*k^2*Hout*Wout, matrix multiplies R*K*C per batch
//! entry, and everything else (elementwise, resampling, reductions) counts
//! zero. Compute reports are therefore exact for the graph that actually ran.

use crate::error::{Error, Result};
use crate::tensor::data::{Shape, Tensor};
use crate::tensor::kernels;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    UpsampleNearest {
        input: Var,
        factor: usize,
    },
    UpsampleBilinear {
        input: Var,
    },
    AvgPool2 {
        input: Var,
    },
    Relu {
        input: Var,
    },
    Clamp01 {
        input: Var,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Sub {
        lhs: Var,
        rhs: Var,
    },
    Matmul {
        lhs: Var,
        rhs: Var,
    },
    TransposeHw {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    Mse {
        lhs: Var,
        rhs: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<u8>,
        ignore: u8,
        counted: usize,
    },
    SumAll {
        input: Var,
    },
    /// Records externally computed values with an identity backward rule
    /// (straight-through estimation).
    Passthrough {
        input: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

/// Recorded forward graph with gradient storage.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
    macs: u64,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Inserts an input node. Gradients are accumulated for it only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` w.r.t. node `v`, if tracked.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Multiply-accumulate count of all ops recorded so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- forward ops -----------------------------------------------------

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let bshape = b.shape();
        if (bshape.n, bshape.h, bshape.w) != (1, 1, 1) || bshape.c != w.shape().n {
            return Err(Error::Shape(format!(
                "conv bias must be (1,{},1,1), got {bshape}",
                w.shape().n
            )));
        }
        x.check_finite("conv2d input")?;
        let out = kernels::conv2d_forward(x, w, b.data(), stride, padding)?;
        let os = out.shape();
        let ws = w.shape();
        self.macs += (os.n * os.c * os.h * os.w * ws.c * ws.h * ws.w) as u64;
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Nearest-neighbor upsample then conv2d. With a size-preserving padding
    /// (odd kernel, padding = (k-1)/2) the output is exactly `factor` times
    /// the input resolution.
    pub fn upsample_conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        factor: usize,
        padding: usize,
    ) -> Result<Var> {
        if factor != 2 && factor != 4 {
            return Err(Error::Config(format!(
                "upsample factor must be 2 or 4, got {factor}"
            )));
        }
        let up = self.upsample_nearest(input, factor)?;
        self.conv2d(up, weight, bias, 1, padding)
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Config("upsample factor must be positive".into()));
        }
        let out = kernels::upsample_nearest_forward(self.value(input), factor);
        let rg = self.needs(input);
        Ok(self.push(out, Op::UpsampleNearest { input, factor }, rg))
    }

    pub fn upsample_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::Config("bilinear target size must be positive".into()));
        }
        let out = kernels::upsample_bilinear_forward(self.value(input), out_h, out_w);
        let rg = self.needs(input);
        Ok(self.push(out, Op::UpsampleBilinear { input }, rg))
    }

    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let out = kernels::avg_pool2_forward(self.value(input))?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::AvgPool2 { input }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor::from_vec(
            x.shape(),
            x.data().iter().map(|v| v.max(0.0)).collect(),
        )
        .expect("relu preserves finiteness");
        let rg = self.needs(input);
        self.push(out, Op::Relu { input }, rg)
    }

    pub fn clamp01(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor::from_vec(
            x.shape(),
            x.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
        .expect("clamp preserves finiteness");
        let rg = self.needs(input);
        self.push(out, Op::Clamp01 { input }, rg)
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "add operands differ: {} vs {}",
                a.shape(),
                b.shape()
            )));
        }
        let out = Tensor::from_vec(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
        )?;
        let rg = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(out, Op::Add { lhs, rhs }, rg))
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!(
                "sub operands differ: {} vs {}",
                a.shape(),
                b.shape()
            )));
        }
        let out = Tensor::from_vec(
            a.shape(),
            a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect(),
        )?;
        let rg = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(out, Op::Sub { lhs, rhs }, rg))
    }

    pub fn matmul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let out = kernels::matmul_forward(self.value(lhs), self.value(rhs))?;
        let sa = self.value(lhs).shape();
        let sb = self.value(rhs).shape();
        self.macs += (sa.n * sa.h * sa.w * sb.w) as u64;
        let rg = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(out, Op::Matmul { lhs, rhs }, rg))
    }

    pub fn transpose_hw(&mut self, input: Var) -> Var {
        let out = kernels::transpose_hw_forward(self.value(input));
        let rg = self.needs(input);
        self.push(out, Op::TransposeHw { input }, rg)
    }

    pub fn reshape(&mut self, input: Var, shape: Shape) -> Result<Var> {
        let out = self.value(input).reshaped(shape)?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::Reshape { input }, rg))
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let out = kernels::softmax_forward(self.value(input), axis)?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::Softmax { input, axis }, rg))
    }

    pub fn mse_loss(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let loss = kernels::mse_forward(self.value(lhs), self.value(rhs))?;
        let out = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![loss])?;
        let rg = self.needs(lhs) || self.needs(rhs);
        Ok(self.push(out, Op::Mse { lhs, rhs }, rg))
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: &[u8], ignore: u8) -> Result<Var> {
        let (loss, counted) = kernels::cross_entropy_forward(self.value(logits), targets, ignore)?;
        let out = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![loss])?;
        let rg = self.needs(logits);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                counted,
            },
            rg,
        ))
    }

    pub fn sum_all(&mut self, input: Var) -> Var {
        let total: f64 = self.value(input).data().iter().map(|v| *v as f64).sum();
        let out = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![total as f32])
            .expect("sum of finite values fits f32 at this scale");
        let rg = self.needs(input);
        self.push(out, Op::SumAll { input }, rg)
    }

    /// Replaces the forward value while keeping an identity backward rule.
    /// `values` must match the input shape.
    pub fn passthrough(&mut self, input: Var, values: Tensor) -> Result<Var> {
        if values.shape() != self.value(input).shape() {
            return Err(Error::Shape(format!(
                "passthrough values {} do not match input {}",
                values.shape(),
                self.value(input).shape()
            )));
        }
        let rg = self.needs(input);
        Ok(self.push(values, Op::Passthrough { input }, rg))
    }

    // ---- backward --------------------------------------------------------

    /// Accumulates d(loss)/d(node) into every node with `requires_grad`.
    /// `loss` must be scalar; calling twice without [`Tape::zero_grad`] is an
    /// error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar, got {}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this tape; call zero_grad first".into(),
            ));
        }
        self.backward_done = true;
        self.set_grad(loss, vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let grad = self.nodes[i].grad.clone().expect("checked above");
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let (input, weight, bias, stride, padding) =
                        (*input, *weight, *bias, *stride, *padding);
                    let gshape = self.nodes[i].value.shape();
                    let gout = Tensor::from_vec(gshape, grad)?;
                    let (dx, dw, db) = kernels::conv2d_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[weight.0].value,
                        stride,
                        padding,
                        &gout,
                    );
                    if self.needs(input) {
                        self.accumulate(input, &dx);
                    }
                    if self.needs(weight) {
                        self.accumulate(weight, &dw);
                    }
                    if self.needs(bias) {
                        self.accumulate(bias, &db);
                    }
                }
                Op::UpsampleNearest { input, factor } => {
                    let (input, factor) = (*input, *factor);
                    let gout = Tensor::from_vec(self.nodes[i].value.shape(), grad)?;
                    let dx = kernels::upsample_nearest_backward(
                        self.nodes[input.0].value.shape(),
                        factor,
                        &gout,
                    );
                    self.accumulate(input, &dx);
                }
                Op::UpsampleBilinear { input } => {
                    let input = *input;
                    let gout = Tensor::from_vec(self.nodes[i].value.shape(), grad)?;
                    let dx = kernels::upsample_bilinear_backward(
                        self.nodes[input.0].value.shape(),
                        &gout,
                    );
                    self.accumulate(input, &dx);
                }
                Op::AvgPool2 { input } => {
                    let input = *input;
                    let gout = Tensor::from_vec(self.nodes[i].value.shape(), grad)?;
                    let dx =
                        kernels::avg_pool2_backward(self.nodes[input.0].value.shape(), &gout);
                    self.accumulate(input, &dx);
                }
                Op::Relu { input } => {
                    let input = *input;
                    let dx: Vec<f32> = self.nodes[input.0]
                        .value
                        .data()
                        .iter()
                        .zip(&grad)
                        .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(input, &dx);
                }
                Op::Clamp01 { input } => {
                    let input = *input;
                    let dx: Vec<f32> = self.nodes[input.0]
                        .value
                        .data()
                        .iter()
                        .zip(&grad)
                        .map(|(x, g)| if (0.0..=1.0).contains(x) { *g } else { 0.0 })
                        .collect();
                    self.accumulate(input, &dx);
                }
                Op::Add { lhs, rhs } => {
                    let (lhs, rhs) = (*lhs, *rhs);
                    if self.needs(lhs) {
                        self.accumulate(lhs, &grad);
                    }
                    if self.needs(rhs) {
                        self.accumulate(rhs, &grad);
                    }
                }
                Op::Sub { lhs, rhs } => {
                    let (lhs, rhs) = (*lhs, *rhs);
                    if self.needs(lhs) {
                        self.accumulate(lhs, &grad);
                    }
                    if self.needs(rhs) {
                        let neg: Vec<f32> = grad.iter().map(|g| -g).collect();
                        self.accumulate(rhs, &neg);
                    }
                }
                Op::Matmul { lhs, rhs } => {
                    let (lhs, rhs) = (*lhs, *rhs);
                    let gout = Tensor::from_vec(self.nodes[i].value.shape(), grad)?;
                    let (da, db) = kernels::matmul_backward(
                        &self.nodes[lhs.0].value,
                        &self.nodes[rhs.0].value,
                        &gout,
                    );
                    if self.needs(lhs) {
                        self.accumulate(lhs, &da);
                    }
                    if self.needs(rhs) {
                        self.accumulate(rhs, &db);
                    }
                }
                Op::TransposeHw { input } => {
                    let input = *input;
                    let gout = Tensor::from_vec(self.nodes[i].value.shape(), grad)?;
                    let dx = kernels::transpose_hw_forward(&gout);
                    self.accumulate(input, dx.data());
                }
                Op::Reshape { input } => {
                    let input = *input;
                    self.accumulate(input, &grad);
                }
                Op::Softmax { input, axis } => {
                    let (input, axis) = (*input, *axis);
                    let gout = Tensor::from_vec(self.nodes[i].value.shape(), grad)?;
                    let dx = kernels::softmax_backward(&self.nodes[i].value, axis, &gout);
                    self.accumulate(input, &dx);
                }
                Op::Mse { lhs, rhs } => {
                    let (lhs, rhs) = (*lhs, *rhs);
                    let g = grad[0];
                    let n = self.nodes[lhs.0].value.numel() as f32;
                    let da: Vec<f32> = self.nodes[lhs.0]
                        .value
                        .data()
                        .iter()
                        .zip(self.nodes[rhs.0].value.data())
                        .map(|(a, b)| g * 2.0 * (a - b) / n)
                        .collect();
                    if self.needs(lhs) {
                        self.accumulate(lhs, &da);
                    }
                    if self.needs(rhs) {
                        let db: Vec<f32> = da.iter().map(|v| -v).collect();
                        self.accumulate(rhs, &db);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    ignore,
                    counted,
                } => {
                    let logits = *logits;
                    let dx = kernels::cross_entropy_backward(
                        &self.nodes[logits.0].value,
                        targets,
                        *ignore,
                        *counted,
                        grad[0],
                    );
                    self.accumulate(logits, &dx);
                }
                Op::SumAll { input } => {
                    let input = *input;
                    let dx = vec![grad[0]; self.nodes[input.0].value.numel()];
                    self.accumulate(input, &dx);
                }
                Op::Passthrough { input } => {
                    let input = *input;
                    self.accumulate(input, &grad);
                }
            }
        }
        Ok(())
    }

    /// Clears all gradients, allowing another backward pass.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    fn set_grad(&mut self, v: Var, g: Vec<f32>) {
        self.nodes[v.0].grad = Some(g);
    }

    fn accumulate(&mut self, v: Var, delta: &[f32]) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => node.grad = Some(delta.to_vec()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: (usize, usize, usize, usize), data: Vec<f32>) -> Tensor {
        Tensor::from_vec(Shape::new(shape.0, shape.1, shape.2, shape.3), data).unwrap()
    }

    #[test]
    fn sum_backward_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t((1, 2, 2, 1), vec![1.0, -2.0, 3.0, 4.0]), true);
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn scalar_mse_gradient_matches_hand_rule() {
        // loss = mse(w*x, y) with scalar w: d/dw = 2*x*(w*x - y)
        let (w0, x0, y0) = (1.5f32, 2.0f32, 1.0f32);
        let mut tape = Tape::new();
        let w = tape.leaf(t((1, 1, 1, 1), vec![w0]), true);
        let x = tape.leaf(t((1, 1, 1, 1), vec![x0]), false);
        // w*x via 1x1 matmul
        let wx = tape.matmul(w, x).unwrap();
        let y = tape.leaf(t((1, 1, 1, 1), vec![y0]), false);
        let loss = tape.mse_loss(wx, y).unwrap();
        tape.backward(loss).unwrap();
        let expect = 2.0 * x0 * (w0 * x0 - y0);
        assert!((tape.grad(w).unwrap()[0] - expect).abs() < 1e-6);
    }

    #[test]
    fn backward_twice_errors_until_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(t((1, 1, 1, 1), vec![2.0]), true);
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::State(_))));
        tape.zero_grad();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t((1, 1, 1, 2), vec![1.0, 2.0]), true);
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn upsample_conv_constant_replication() {
        let mut tape = Tape::new();
        let x = tape.leaf(t((1, 1, 1, 1), vec![3.0]), false);
        let w = tape.leaf(t((1, 1, 1, 1), vec![1.0]), false);
        let b = tape.leaf(t((1, 1, 1, 1), vec![0.0]), false);
        let y = tape.upsample_conv2d(x, w, b, 2, 0).unwrap();
        assert_eq!(tape.value(y).shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(tape.value(y).data(), &[3.0; 4]);
        assert!(matches!(
            tape.upsample_conv2d(x, w, b, 3, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conv_macs_counted() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 3, 66, 66)), false);
        let w = tape.leaf(Tensor::zeros(Shape::new(16, 3, 3, 3)), false);
        let b = tape.leaf(Tensor::zeros(Shape::new(1, 16, 1, 1)), false);
        tape.conv2d(x, w, b, 1, 0).unwrap();
        // 16*3*9*64*64
        assert_eq!(tape.macs(), 1_769_472);
    }
}
