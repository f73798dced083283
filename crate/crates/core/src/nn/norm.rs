//! Per-channel batch normalization.

use crate::autograd::{Backward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Affine parameters and running statistics, all stored `(1, c, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor4<T>,
    pub beta: Tensor4<T>,
    pub running_mean: Tensor4<T>,
    pub running_var: Tensor4<T>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: NormMode,
    stats_ready: bool,
}

impl<T: Real> BatchNormState<T> {
    /// gamma = 1, beta = 0, running statistics not yet initialized.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor4::ones((1, channels, 1, 1)),
            beta: Tensor4::zeros((1, channels, 1, 1)),
            running_mean: Tensor4::zeros((1, channels, 1, 1)),
            running_var: Tensor4::ones((1, channels, 1, 1)),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            mode: NormMode::Train,
            stats_ready: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Installs explicit running statistics, allowing eval mode immediately.
    pub fn with_running_stats(mut self, mean: Tensor4<T>, var: Tensor4<T>) -> Result<Self> {
        self.running_mean.expect_shape(&mean, "running mean")?;
        self.running_var.expect_shape(&var, "running var")?;
        if var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::Config("running variance must be non-negative".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        self.stats_ready = true;
        Ok(self)
    }

    pub fn stats_ready(&self) -> bool {
        self.stats_ready
    }

    /// Folds one batch's statistics into the running estimates.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let m = T::of(self.momentum);
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.unbiased_var) {
            *r = keep * *r + m * b;
        }
        self.stats_ready = true;
    }
}

/// Statistics of one training batch.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<T>,
    /// Bessel-corrected variance folded into the running estimate.
    pub unbiased_var: Vec<T>,
}

fn channel_stats<T: Real>(x: &Tensor4<T>) -> Result<BatchStats<T>> {
    let s = x.shape();
    let count = s.n * s.plane();
    if count < 2 {
        return Err(Error::BatchTooSmall(count));
    }
    let inv = T::one() / T::of(count as f64);
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut acc = T::zero();
        for n in 0..s.n {
            acc = x.plane(n, c).iter().fold(acc, |a, &v| a + v);
        }
        let mu = acc * inv;
        let mut sq = T::zero();
        for n in 0..s.n {
            sq = x.plane(n, c).iter().fold(sq, |a, &v| a + (v - mu) * (v - mu));
        }
        mean[c] = mu;
        var[c] = sq * inv;
    }
    let bessel = T::of(count as f64 / (count as f64 - 1.0));
    let unbiased_var = var.iter().map(|&v| v * bessel).collect();
    Ok(BatchStats { mean, var, unbiased_var })
}

fn normalize<T: Real>(x: &Tensor4<T>, mean: &[T], inv_std: &[T], gamma: &[T], beta: &[T]) -> Tensor4<T> {
    let s = x.shape();
    let mut out = Tensor4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let (mu, is, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            for (o, &v) in out.plane_mut(n, c).iter_mut().zip(x.plane(n, c)) {
                *o = (v - mu) * is * g + b;
            }
        }
    }
    out
}

fn inv_std<T: Real>(var: &[T], eps: f64) -> Vec<T> {
    var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect()
}

fn check_params<T: Real>(x: &Tensor4<T>, gamma: &Tensor4<T>, beta: &Tensor4<T>) -> Result<()> {
    let c = x.shape().c;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::ChannelMismatch {
            op: "batch_norm",
            expected: gamma.len(),
            actual: c,
        });
    }
    Ok(())
}

/// Applies batch normalization; in train mode also updates the running statistics.
pub fn batch_norm<T: Real>(x: &Tensor4<T>, state: &mut BatchNormState<T>) -> Result<Tensor4<T>> {
    check_params(x, &state.gamma, &state.beta)?;
    match state.mode {
        NormMode::Train => {
            let stats = channel_stats(x)?;
            let is = inv_std(&stats.var, state.epsilon);
            let y = normalize(x, &stats.mean, &is, state.gamma.data(), state.beta.data());
            state.update_running(&stats);
            Ok(y)
        }
        NormMode::Eval => {
            if !state.stats_ready {
                return Err(Error::StatsUninitialized);
            }
            let is = inv_std(state.running_var.data(), state.epsilon);
            Ok(normalize(x, state.running_mean.data(), &is, state.gamma.data(), state.beta.data()))
        }
    }
}

struct BatchNormRule<T> {
    mean: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

impl<T: Real> Backward<T> for BatchNormRule<T> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(&self, inputs: &[&Tensor4<T>], _: &Tensor4<T>, up: &Tensor4<T>, wanted: &[bool]) -> Vec<Option<Tensor4<T>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let s = x.shape();
        let count = T::of((s.n * s.plane()) as f64);
        let mut dgamma = Tensor4::zeros(gamma.shape());
        let mut dbeta = Tensor4::zeros(gamma.shape());
        for c in 0..s.c {
            let (mu, is) = (self.mean[c], self.inv_std[c]);
            let (mut sdy, mut sdy_xhat) = (T::zero(), T::zero());
            for n in 0..s.n {
                for (&v, &g) in x.plane(n, c).iter().zip(up.plane(n, c)) {
                    sdy += g;
                    sdy_xhat += g * (v - mu) * is;
                }
            }
            dgamma[c] = sdy_xhat;
            dbeta[c] = sdy;
        }
        let dx = wanted[0].then(|| {
            let mut dx = Tensor4::zeros(s);
            for c in 0..s.c {
                let (mu, is, g) = (self.mean[c], self.inv_std[c], gamma[c]);
                if self.batch_stats {
                    let (sdy, sdy_xhat) = (dbeta[c], dgamma[c]);
                    let k = g * is / count;
                    for n in 0..s.n {
                        let xs = x.plane(n, c);
                        let ups = up.plane(n, c);
                        for ((d, &v), &u) in dx.plane_mut(n, c).iter_mut().zip(xs).zip(ups) {
                            *d = k * (count * u - sdy - (v - mu) * is * sdy_xhat);
                        }
                    }
                } else {
                    for n in 0..s.n {
                        for (d, &u) in dx.plane_mut(n, c).iter_mut().zip(up.plane(n, c)) {
                            *d = u * g * is;
                        }
                    }
                }
            }
            dx
        });
        vec![dx, wanted[1].then_some(dgamma), wanted[2].then_some(dbeta)]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BnVars {
    pub gamma: Var,
    pub beta: Var,
}

impl BnVars {
    pub fn bind<T: Real>(tape: &mut Tape<T>, s: &BatchNormState<T>) -> Self {
        Self {
            gamma: tape.param(s.gamma.clone()),
            beta: tape.param(s.beta.clone()),
        }
    }
}

/// Normalization source for [`batch_norm_op`].
pub enum NormStats<'a, T> {
    /// Normalize with this batch's statistics (returned to the caller).
    Batch,
    /// Normalize with fixed running statistics.
    Running { mean: &'a [T], var: &'a [T] },
}

/// Records batch normalization on the tape. In batch mode the batch statistics
/// are returned so the caller can update its running estimates.
pub fn batch_norm_op<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: BnVars,
    stats: NormStats<'_, T>,
) -> Result<(Var, Option<BatchStats<T>>)> {
    let xv = tape.value(x);
    let (gamma, beta) = (tape.value(p.gamma), tape.value(p.beta));
    check_params(xv, gamma, beta)?;
    let (mean, is, batch) = match stats {
        NormStats::Batch => {
            let st = channel_stats(xv)?;
            let is = inv_std(&st.var, BN_EPSILON);
            (st.mean.clone(), is, Some(st))
        }
        NormStats::Running { mean, var } => (mean.to_vec(), inv_std(var, BN_EPSILON), None),
    };
    let y = normalize(xv, &mean, &is, gamma.data(), beta.data());
    let rule = BatchNormRule {
        mean,
        inv_std: is,
        batch_stats: batch.is_some(),
    };
    let out = tape.record(y, &[x, p.gamma, p.beta], rule);
    Ok((out, batch))
}
