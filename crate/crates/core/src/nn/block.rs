//! The composite unit `F(x) = Conv3x3(ReLU(BN(x)))`.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::activation::{relu, relu_op};
use crate::nn::conv::{conv2d, conv2d_op, ConvVars, ConvWeights};
use crate::nn::norm::{batch_norm, batch_norm_op, BatchNormState, BatchStats, BnVars, NormStats};
use crate::tensor::{Real, Tensor4};

/// BN, then ReLU, then a 3x3 convolution, in exactly that order.
pub fn conv_block<T: Real>(x: &Tensor4<T>, bn: &mut BatchNormState<T>, conv: &ConvWeights<T>) -> Result<Tensor4<T>> {
    if conv.k() != 3 {
        return Err(Error::KernelSize(conv.k()));
    }
    let normed = batch_norm(x, bn)?;
    conv2d(&relu(&normed), conv)
}

#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub bn: BnVars,
    pub conv: ConvVars,
}

pub fn conv_block_op<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: BlockVars,
    stats: NormStats<'_, T>,
) -> Result<(Var, Option<BatchStats<T>>)> {
    let k = tape.value(p.conv.weight).shape().h;
    if k != 3 {
        return Err(Error::KernelSize(k));
    }
    let (normed, batch) = batch_norm_op(tape, x, p.bn, stats)?;
    let act = relu_op(tape, normed);
    Ok((conv2d_op(tape, act, p.conv)?, batch))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_affine_gives_bias() {
        let x = Tensor4::<f64>::randn((2, 2, 4, 4), 1, 1.0);
        let mut bn = BatchNormState::new(2);
        bn.gamma = Tensor4::zeros((1, 2, 1, 1));
        let mut conv = ConvWeights::init(3, 2, 3, 2).unwrap();
        conv.bias = Tensor4::from_f64s((1, 3, 1, 1), &[0.5, -1.0, 2.0]).unwrap();
        let y = conv_block(&x, &mut bn, &conv).unwrap();
        for n in 0..2 {
            for (c, b) in [0.5, -1.0, 2.0].into_iter().enumerate() {
                assert!(y.plane(n, c).iter().all(|&v| v == b));
            }
        }
    }

    #[test]
    fn delta_kernel_with_shifted_bn() {
        // Zero-mean input [-1, 1; 1, -1]: BN (gamma 1) gives x / sqrt(1 + eps),
        // beta 10 keeps it positive through ReLU, delta kernel passes it on.
        let x = Tensor4::<f64>::from_f64s((1, 1, 2, 2), &[-1.0, 1.0, 1.0, -1.0]).unwrap();
        let mut bn = BatchNormState::new(1);
        bn.beta = Tensor4::full((1, 1, 1, 1), 10.0);
        let mut kernel = Tensor4::zeros((1, 1, 3, 3));
        kernel[4] = 1.0;
        let conv = ConvWeights::new(kernel, Tensor4::zeros((1, 1, 1, 1))).unwrap();
        let y = conv_block(&x, &mut bn, &conv).unwrap();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (o, &i) in y.data().iter().zip(x.data()) {
            assert!((o - (i * s + 10.0)).abs() < 1e-12);
            assert!((o - (i + 10.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_1x1_kernel() {
        let x = Tensor4::<f64>::zeros((1, 1, 2, 2));
        let mut bn = BatchNormState::new(1);
        assert!(conv_block(&x, &mut bn, &ConvWeights::identity(1)).is_err());
    }

    #[test]
    fn preserves_spatial_extent() {
        let x = Tensor4::<f64>::randn((1, 3, 5, 7), 3, 1.0);
        let mut bn = BatchNormState::new(3);
        let conv = ConvWeights::init(6, 3, 3, 4).unwrap();
        let y = conv_block(&x, &mut bn, &conv).unwrap();
        assert_eq!((y.shape().h, y.shape().w, y.shape().c), (5, 7, 6));
    }
}
