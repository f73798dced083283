use crate::autograd::{Backward, Tape, Var};
use crate::tensor::{Real, Tensor4};

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| v.max(T::zero()))
}

/// Upstream masked to positions where `x > 0`; the derivative at exactly 0 is 0.
pub fn relu_backward<T: Real>(x: &Tensor4<T>, upstream: &Tensor4<T>) -> Tensor4<T> {
    x.zip_map(upstream, "relu_backward", |v, g| if v > T::zero() { g } else { T::zero() })
        .expect("upstream matches input shape")
}

struct ReluRule;

impl<T: Real> Backward<T> for ReluRule {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[&Tensor4<T>], _: &Tensor4<T>, up: &Tensor4<T>, _: &[bool]) -> Vec<Option<Tensor4<T>>> {
        vec![Some(relu_backward(inputs[0], up))]
    }
}

pub fn relu_op<T: Real>(tape: &mut Tape<T>, x: Var) -> Var {
    let xv = tape.value(x);
    let out = relu(xv);
    if tape.verifying() {
        let margin = xv.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs().as_f64()));
        let mask: Vec<u64> = xv
            .data()
            .chunks(64)
            .map(|c| c.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | (((v > T::zero()) as u64) << i)))
            .collect();
        tape.note_margin(margin);
        tape.note_decisions(mask);
    }
    tape.record(out, &[x], ReluRule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_and_backward() {
        let x = Tensor4::<f64>::from_f64s((1, 1, 1, 3), &[-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let up = Tensor4::ones((1, 1, 1, 3));
        assert_eq!(relu_backward(&x, &up).data(), &[0.0, 0.0, 1.0]);

        let pos = Tensor4::<f64>::from_f64s((1, 1, 1, 3), &[0.0, 0.5, 9.0]).unwrap();
        assert_eq!(relu(&pos), pos);

        let x = Tensor4::<f64>::from_f64s((1, 1, 1, 2), &[-1.0, 2.0]).unwrap();
        assert_eq!(relu_backward(&x, &Tensor4::ones((1, 1, 1, 2))).data(), &[0.0, 1.0]);
    }

    #[test]
    fn verification_tape_tracks_kink_distance() {
        let mut tape = Tape::<f64>::for_verification();
        let x = tape.param(Tensor4::from_f64s((1, 1, 1, 3), &[-0.5, 0.02, 3.0]).unwrap());
        relu_op(&mut tape, x);
        assert!((tape.kink_margin() - 0.02).abs() < 1e-15);
    }
}
