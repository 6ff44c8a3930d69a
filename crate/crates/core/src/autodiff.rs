//! Reverse-mode derivative rules for the primitive ops.
//!
//! Each rule maps the op's inputs and the upstream gradient (same shape as the
//! op's output) to one gradient per input. Layer backward passes in
//! [`crate::network`] are compositions of these rules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OpId {
    Matmul,
    Conv2d { stride: usize, padding: usize },
    SoftmaxRows { scale: f64 },
    Relu,
    AddBias,
}

impl FromStr for OpId {
    type Err = Error;

    /// Parses the bare op name; conv and softmax take their default
    /// hyper-parameters (stride 1, padding 0, scale 1).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matmul" => Ok(OpId::Matmul),
            "conv2d" => Ok(OpId::Conv2d {
                stride: 1,
                padding: 0,
            }),
            "softmax_rows" => Ok(OpId::SoftmaxRows { scale: 1.0 }),
            "relu" => Ok(OpId::Relu),
            "add_bias" | "add-bias" => Ok(OpId::AddBias),
            other => Err(Error::UnknownOp(other.to_string())),
        }
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpId::Matmul => write!(f, "matmul"),
            OpId::Conv2d { .. } => write!(f, "conv2d"),
            OpId::SoftmaxRows { .. } => write!(f, "softmax_rows"),
            OpId::Relu => write!(f, "relu"),
            OpId::AddBias => write!(f, "add_bias"),
        }
    }
}

/// Gradient of a named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub param: ParamId,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    pub layer: usize,
    pub name: String,
}

fn arity(op: &OpId, inputs: &[&Tensor], want: usize) -> Result<()> {
    if inputs.len() != want {
        return Err(shape_err(
            "vjp",
            format!("{op} expects {want} inputs, got {}", inputs.len()),
        ));
    }
    Ok(())
}

/// Applies the derivative rule for `op`.
///
/// Inputs per op: `matmul [a, b]`, `conv2d [input, kernel, bias]`,
/// `softmax_rows [m]`, `relu [z]`, `add_bias [x, bias]`.
pub fn vjp(op: &OpId, inputs: &[&Tensor], upstream: &Tensor) -> Result<Vec<Tensor>> {
    match *op {
        OpId::Matmul => {
            arity(op, inputs, 2)?;
            let (ga, gb) = matmul_vjp(inputs[0], inputs[1], upstream)?;
            Ok(vec![ga, gb])
        }
        OpId::Conv2d { stride, padding } => {
            arity(op, inputs, 3)?;
            let (gi, gk, gb) = conv2d_vjp(inputs[0], inputs[1], stride, padding, upstream)?;
            Ok(vec![gi, gk, gb])
        }
        OpId::SoftmaxRows { scale } => {
            arity(op, inputs, 1)?;
            let y = tensor::softmax_rows(inputs[0], scale)?;
            Ok(vec![softmax_rows_vjp(&y, scale, upstream)?])
        }
        OpId::Relu => {
            arity(op, inputs, 1)?;
            Ok(vec![relu_vjp(inputs[0], upstream)?])
        }
        OpId::AddBias => {
            arity(op, inputs, 2)?;
            let (gx, gb) = add_bias_vjp(inputs[1], upstream)?;
            Ok(vec![gx, gb])
        }
    }
}

pub fn matmul_vjp(a: &Tensor, b: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    let ga = tensor::matmul(upstream, &b.transpose()?)?;
    let gb = tensor::matmul(&a.transpose()?, upstream)?;
    Ok((ga, gb))
}

pub fn conv2d_vjp(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if input.rank() != 3 || kernel.rank() != 4 || upstream.rank() != 3 {
        return Err(shape_err("conv2d_vjp", "expected [H,W,C] input and [k,k,Ci,Co] kernel"));
    }
    let k = kernel.shape()[0];
    let ho = tensor::conv_output_extent(input.shape()[0], k, stride, padding)?;
    let wo = tensor::conv_output_extent(input.shape()[1], k, stride, padding)?;
    if upstream.shape() != [ho, wo, kernel.shape()[3]] {
        return Err(shape_err(
            "conv2d_vjp",
            format!("upstream {:?} does not match output [{ho}, {wo}, {}]", upstream.shape(), kernel.shape()[3]),
        ));
    }
    let gi = tensor::conv_input_grad(kernel, upstream, input.shape(), stride, padding);
    let gk = tensor::conv_kernel_grad(input, upstream, k, stride, padding);
    let gb = tensor::sum_leading(upstream);
    Ok((gi, gk, gb))
}

/// Gradient through `y = softmax(scale * m)` given the forward output `y`.
pub fn softmax_rows_vjp(y: &Tensor, scale: f64, upstream: &Tensor) -> Result<Tensor> {
    if y.shape() != upstream.shape() {
        return Err(shape_err("softmax_rows_vjp", "upstream shape differs from output"));
    }
    let cols = y.shape()[1];
    let mut out = vec![0.0; y.len()];
    for ((o, yr), gr) in out
        .chunks_mut(cols)
        .zip(y.data().chunks(cols))
        .zip(upstream.data().chunks(cols))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((ov, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *ov = scale * yv * (gv - dot);
        }
    }
    Tensor::new(y.shape().to_vec(), out)
}

/// Subgradient at exactly zero is taken as 0.
pub fn relu_vjp(z: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    if z.shape() != upstream.shape() {
        return Err(shape_err("relu_vjp", "upstream shape differs from input"));
    }
    Tensor::new(
        z.shape().to_vec(),
        z.data()
            .iter()
            .zip(upstream.data())
            .map(|(&zv, &g)| if zv > 0.0 { g } else { 0.0 })
            .collect(),
    )
}

pub fn add_bias_vjp(bias: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    if upstream.shape().last() != Some(&bias.len()) {
        return Err(shape_err("add_bias_vjp", "bias length differs from trailing extent"));
    }
    Ok((upstream.clone(), tensor::sum_leading(upstream)))
}
