//! Named parameter storage shared by the LIM and the detector.
//!
//! Learnable tensors and non-learnable buffers (batch-norm running statistics)
//! live in one ordered store. Typed parameter groups keep [`ParamId`]s into it;
//! [`ParamStore::bind`] copies every entry onto a tape for one forward pass.

use std::collections::HashMap;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNormState, BatchStats, BlockVars, BnVars, ConvVars, ConvWeights};
use crate::tensor::{Real, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Learnable,
    /// State carried alongside, never differentiated.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor4<T>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor4<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, kind, value });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor4<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor4<T> {
        &mut self.entries[id.0].value
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor4<T>) -> Result<()> {
        self.entries[id.0].value.expect_shape(&value, "param set")?;
        self.entries[id.0].value = value;
        Ok(())
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn learnable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Learnable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Records every entry as a tape leaf: learnables as parameters, buffers as constants.
    pub fn bind(&self, tape: &mut Tape<T>) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|e| match e.kind {
                ParamKind::Learnable => tape.param(e.value.clone()),
                ParamKind::Buffer => tape.constant(e.value.clone()),
            })
            .collect();
        Binding { vars }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    value: e.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Tape variables of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Convolution weights registered in a store.
#[derive(Clone, Copy, Debug)]
pub struct ConvParam {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvParam {
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, w: ConvWeights<T>) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{prefix}.weight"), ParamKind::Learnable, w.weight)?,
            bias: store.add(format!("{prefix}.bias"), ParamKind::Learnable, w.bias)?,
        })
    }

    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        out_channels: usize,
        in_channels: usize,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::register(store, prefix, ConvWeights::init(out_channels, in_channels, k, seed)?)
    }

    pub fn vars(&self, b: &Binding) -> ConvVars {
        ConvVars {
            weight: b.var(self.weight),
            bias: b.var(self.bias),
        }
    }

    pub fn weights<T: Real>(&self, store: &ParamStore<T>) -> ConvWeights<T> {
        ConvWeights {
            weight: store.get(self.weight).clone(),
            bias: store.get(self.bias).clone(),
        }
    }

    pub fn set<T: Real>(&self, store: &mut ParamStore<T>, w: ConvWeights<T>) -> Result<()> {
        store.set(self.weight, w.weight)?;
        store.set(self.bias, w.bias)
    }
}

/// Batch-norm affine parameters and running statistics registered in a store.
#[derive(Clone, Copy, Debug)]
pub struct BnParam {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BnParam {
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<Self> {
        let s = BatchNormState::<T>::new(channels);
        Ok(Self {
            gamma: store.add(format!("{prefix}.gamma"), ParamKind::Learnable, s.gamma)?,
            beta: store.add(format!("{prefix}.beta"), ParamKind::Learnable, s.beta)?,
            running_mean: store.add(format!("{prefix}.running_mean"), ParamKind::Buffer, s.running_mean)?,
            running_var: store.add(format!("{prefix}.running_var"), ParamKind::Buffer, s.running_var)?,
        })
    }

    pub fn vars(&self, b: &Binding) -> BnVars {
        BnVars {
            gamma: b.var(self.gamma),
            beta: b.var(self.beta),
        }
    }

    /// Folds batch statistics into the stored running estimates (momentum 0.1).
    pub fn update_running<T: Real>(&self, store: &mut ParamStore<T>, stats: &BatchStats<T>) {
        let m = T::of(crate::nn::norm::BN_MOMENTUM);
        let keep = T::one() - m;
        for (r, &b) in store.get_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in store.get_mut(self.running_var).data_mut().iter_mut().zip(&stats.unbiased_var) {
            *r = keep * *r + m * b;
        }
    }
}

/// A `BN -> ReLU -> Conv3x3` unit registered in a store.
#[derive(Clone, Copy, Debug)]
pub struct BlockParam {
    pub bn: BnParam,
    pub conv: ConvParam,
}

impl BlockParam {
    pub fn init<T: Real>(store: &mut ParamStore<T>, prefix: &str, out_c: usize, in_c: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            bn: BnParam::register(store, &format!("{prefix}.bn"), in_c)?,
            conv: ConvParam::init(store, &format!("{prefix}.conv"), out_c, in_c, 3, seed)?,
        })
    }

    pub fn vars(&self, b: &Binding) -> BlockVars {
        BlockVars {
            bn: self.bn.vars(b),
            conv: self.conv.vars(b),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_bind_in_order() {
        let mut store = ParamStore::<f64>::new();
        let c = ConvParam::init(&mut store, "a", 2, 3, 1, 0).unwrap();
        let bn = BnParam::register(&mut store, "b", 2).unwrap();
        assert!(store.add("a.weight", ParamKind::Learnable, Tensor4::zeros((1, 1, 1, 1))).is_err());
        assert_eq!(store.id("b.running_var"), Some(bn.running_var));
        assert_eq!(store.learnable_count(), 6 + 2 + 2 + 2);

        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        assert!(tape.requires_grad(c.vars(&b).weight));
        assert!(!tape.requires_grad(b.var(bn.running_mean)));
        assert_eq!(tape.value(b.var(c.weight)), store.get(c.weight));
    }

    #[test]
    fn running_update_matches_state_update() {
        let mut store = ParamStore::<f64>::new();
        let bn = BnParam::register(&mut store, "bn", 2).unwrap();
        let stats = BatchStats {
            mean: vec![1.0, -2.0],
            var: vec![0.5, 0.25],
            unbiased_var: vec![1.0, 0.5],
        };
        bn.update_running(&mut store, &stats);
        let mut state = BatchNormState::<f64>::new(2);
        state.update_running(&stats);
        assert_eq!(store.get(bn.running_mean), &state.running_mean);
        assert_eq!(store.get(bn.running_var), &state.running_var);
    }
}
