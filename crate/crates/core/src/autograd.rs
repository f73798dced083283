//! Reverse-mode differentiation over a linear tape.
//!
//! Every differentiable kernel records one node holding its output value, the
//! variables it consumed and a [`Backward`] rule. [`Tape::backward`] walks the
//! nodes in reverse recording order and sums gradients for variables used more
//! than once, so accumulation order is fixed by the forward program.

use crate::tensor::{Real, Tensor4};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of one recorded operation.
pub trait Backward<T: Real> {
    fn name(&self) -> &'static str;

    /// Maps the upstream gradient to one gradient per input (same shape as that
    /// input). `wanted[i]` is false when input `i` needs no gradient; rules may
    /// return `None` there to skip work.
    fn backward(
        &self,
        inputs: &[&Tensor4<T>],
        output: &Tensor4<T>,
        upstream: &Tensor4<T>,
        wanted: &[bool],
    ) -> Vec<Option<Tensor4<T>>>;
}

struct Node<T: Real> {
    value: Tensor4<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
}

pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    verify: bool,
    kink_margin: f64,
    signature: u64,
    fault: Option<String>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            verify: false,
            kink_margin: f64::INFINITY,
            signature: FNV_OFFSET,
            fault: None,
        }
    }

    /// A tape that additionally tracks distance to non-differentiable points and
    /// a signature of every discrete choice (ReLU masks, max selections).
    pub fn for_verification() -> Self {
        Self {
            verify: true,
            ..Self::new()
        }
    }

    /// Corrupts the backward rule named `op` (negative control for gradient checks).
    pub fn inject_fault(&mut self, op: impl Into<String>) {
        self.fault = Some(op.into());
    }

    pub fn verifying(&self) -> bool {
        self.verify
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient (parameters, inputs under test).
    pub fn param(&mut self, value: Tensor4<T>) -> Var {
        self.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            requires_grad: true,
        })
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor4<T>) -> Var {
        self.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            requires_grad: false,
        })
    }

    pub fn record(&mut self, value: Tensor4<T>, inputs: &[Var], rule: impl Backward<T> + 'static) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Node {
            value,
            inputs: inputs.to_vec(),
            rule: Some(Box::new(rule)),
            requires_grad,
        })
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    pub fn values(&self, vs: &[Var]) -> Vec<&Tensor4<T>> {
        vs.iter().map(|&v| self.value(v)).collect()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records the distance of some input to a kink (verification tapes only).
    pub fn note_margin(&mut self, margin: f64) {
        if self.verify && margin < self.kink_margin {
            self.kink_margin = margin;
        }
    }

    /// Folds discrete decisions into the signature (verification tapes only).
    pub fn note_decisions(&mut self, decisions: impl IntoIterator<Item = u64>) {
        if !self.verify {
            return;
        }
        let mut h = self.signature;
        for d in decisions {
            h = (h ^ d).wrapping_mul(FNV_PRIME);
        }
        self.signature = h;
    }

    /// Smallest recorded distance to a non-differentiable point.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    pub fn decision_signature(&self) -> u64 {
        self.signature
    }

    /// Gradients of `sum(root)` with respect to every leaf.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let seed = Tensor4::ones(self.value(root).shape());
        self.backward_with(root, seed)
    }

    pub fn backward_with(&self, root: Var, seed: Tensor4<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.value(root).shape(), "seed gradient shape");
        let mut grads: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Some(rule) = &node.rule else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else { continue };
            let wanted: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let inputs = self.values(&node.inputs);
            let mut local = rule.backward(&inputs, &node.value, &upstream, &wanted);
            debug_assert_eq!(local.len(), node.inputs.len(), "{}: one gradient per input", rule.name());
            if self.fault.as_deref() == Some(rule.name()) {
                for g in local.iter_mut().flatten() {
                    let corrupted = g.map(|v| v * T::of(1.5) + T::of(1e-3));
                    *g = corrupted;
                }
            }
            for (input, g) in node.inputs.iter().zip(local) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(
                    g.shape(),
                    self.nodes[input.0].value.shape(),
                    "{}: gradient shape must match input",
                    rule.name()
                );
                match &mut grads[input.0] {
                    Some(acc) => acc.accumulate(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Gradients { grads }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor4<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor4<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor4<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Gradient of `v`, or zeros of `shape` if `v` did not influence the root.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor4<T>) -> Tensor4<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor4::zeros(like.shape()))
    }
}

/// Elementwise sum.
struct AddRule;

impl<T: Real> Backward<T> for AddRule {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, inputs: &[&Tensor4<T>], _: &Tensor4<T>, up: &Tensor4<T>, wanted: &[bool]) -> Vec<Option<Tensor4<T>>> {
        inputs
            .iter()
            .zip(wanted)
            .map(|(_, &w)| w.then(|| up.clone()))
            .collect()
    }
}

/// `a + b` with identical extents.
pub fn add<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> crate::Result<Var> {
    let out = tape.value(a).add(tape.value(b))?;
    Ok(tape.record(out, &[a, b], AddRule))
}

/// Sum of any number of same-shaped tensors, recorded as a single node.
pub fn add_many<T: Real>(tape: &mut Tape<T>, terms: &[Var]) -> crate::Result<Var> {
    let (&first, rest) = terms
        .split_first()
        .ok_or_else(|| crate::Error::Config("add_many of zero terms".into()))?;
    if rest.is_empty() {
        return Ok(first);
    }
    let mut out = tape.value(first).clone();
    for &t in rest {
        let v = tape.value(t);
        out.expect_shape(v, "add")?;
        out.accumulate(v);
    }
    Ok(tape.record(out, terms, AddRule))
}

struct WeightedSumRule<T> {
    weights: Tensor4<T>,
}

impl<T: Real> Backward<T> for WeightedSumRule<T> {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(&self, _: &[&Tensor4<T>], _: &Tensor4<T>, up: &Tensor4<T>, _: &[bool]) -> Vec<Option<Tensor4<T>>> {
        let g = up[0];
        vec![Some(self.weights.map(|w| w * g))]
    }
}

/// Scalar `sum(weights * x)` as a `1x1x1x1` tensor.
pub fn weighted_sum<T: Real>(tape: &mut Tape<T>, x: Var, weights: Tensor4<T>) -> crate::Result<Var> {
    let xv = tape.value(x);
    xv.expect_shape(&weights, "weighted_sum")?;
    let s = xv.data().iter().zip(weights.data()).fold(T::zero(), |acc, (&a, &w)| acc + a * w);
    let out = Tensor4::full((1, 1, 1, 1), s);
    Ok(tape.record(out, &[x], WeightedSumRule { weights }))
}

/// Scalar sum of all elements.
pub fn sum<T: Real>(tape: &mut Tape<T>, x: Var) -> crate::Result<Var> {
    let ones = Tensor4::ones(tape.value(x).shape());
    weighted_sum(tape, x, ones)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_backward_passes_upstream_to_both() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor4::zeros((1, 1, 2, 2)));
        let b = tape.param(Tensor4::from_f64s((1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = add(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(c), tape.value(b));
        let g = tape.backward(c);
        assert_eq!(g.get(a).unwrap(), &Tensor4::ones((1, 1, 2, 2)));
        assert_eq!(g.get(b).unwrap(), &Tensor4::ones((1, 1, 2, 2)));
    }

    #[test]
    fn reuse_accumulates_by_summation() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor4::ones((1, 1, 1, 3)));
        let b = add(&mut tape, a, a).unwrap();
        let c = add_many(&mut tape, &[b, a, a]).unwrap();
        let g = tape.backward(c);
        assert_eq!(g.get(a).unwrap().data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor4::ones((1, 1, 1, 1)));
        let b = tape.param(Tensor4::ones((1, 1, 1, 1)));
        let c = add(&mut tape, a, b).unwrap();
        let g = tape.backward(c);
        assert!(g.get(a).is_none());
        assert!(g.get(b).is_some());
    }

    #[test]
    fn weighted_sum_gradient_is_weights() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor4::from_f64s((1, 1, 1, 2), &[1.0, 2.0]).unwrap());
        let w = Tensor4::from_f64s((1, 1, 1, 2), &[3.0, -1.0]).unwrap();
        let s = weighted_sum(&mut tape, x, w.clone()).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0]);
        assert_eq!(tape.backward(s).get(x).unwrap(), &w);
    }
}
