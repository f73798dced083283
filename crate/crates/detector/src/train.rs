use std::time::Instant;

use lim_core::autograd::Tape;
use lim_core::ParamStore;
use lim_eval::{evaluate, Evaluation};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::decode::decode_and_nms;
use crate::error::{Error, Result};
use crate::loss::{detection_loss_op, LossBreakdown};
use crate::model::{Detector, Phase};
use crate::optim::Sgd;
use crate::targets::assign_targets;

/// Held-out mAP after a given number of steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPoint {
    pub step: usize,
    pub map: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    pub seconds: f64,
}

/// Steps averaged at each end of the trace when comparing start and finish.
pub const LOSS_WINDOW: usize = 10;

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        mean(&self.losses[..LOSS_WINDOW.min(self.losses.len())])
    }

    pub fn final_loss(&self) -> f64 {
        mean(&self.losses[self.losses.len().saturating_sub(LOSS_WINDOW)..])
    }

    pub fn final_map(&self) -> f64 {
        self.evals.last().map_or(0.0, |e| e.map)
    }

    pub fn best_map(&self) -> f64 {
        self.evals.iter().map(|e| e.map).fold(0.0, f64::max)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Endless stream of batches drawn from per-epoch shuffles of the training set.
pub struct BatchStream {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    pub fn new(len: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
            pos: len,
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// One SGD step on a batch; returns the loss before the update.
pub fn train_step(
    model: &Detector,
    store: &mut ParamStore<f32>,
    sgd: &mut Sgd<f32>,
    data: &Dataset<f32>,
    indices: &[usize],
) -> Result<LossBreakdown> {
    let x = data.batch(indices);
    let targets = assign_targets(&data.batch_boxes(indices), &model.cfg);
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let xv = tape.constant(x);
    let f = model.forward_op(&mut tape, store, &b, xv, Phase::Train)?;
    let (loss, parts) = detection_loss_op(&mut tape, &f.heads, &targets, model.cfg.classes)?;
    if !parts.total.is_finite() {
        return Err(Error::Diverged {
            step: 0,
            value: parts.total,
        });
    }
    let mut grads = tape.backward(loss);
    sgd.step(store, &mut |id| grads.take(b.var(id)))?;
    for (bn, stats) in &f.bn_updates {
        bn.update_running(store, stats);
    }
    Ok(parts)
}

/// Trains for `tc.steps` steps, measuring held-out mAP every `tc.eval_every`
/// steps and after the last one. `progress` sees each step's loss.
pub fn train(
    model: &Detector,
    store: &mut ParamStore<f32>,
    train_set: &Dataset<f32>,
    test_set: &Dataset<f32>,
    tc: &TrainConfig,
    progress: &mut dyn FnMut(usize, &LossBreakdown),
) -> Result<TrainReport> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let start = Instant::now();
    let mut sgd = Sgd::new(store, tc.clone());
    let mut stream = BatchStream::new(train_set.len(), tc.seed);
    let mut losses = Vec::with_capacity(tc.steps);
    let mut evals = Vec::new();
    for step in 1..=tc.steps {
        let idx = stream.next_batch(tc.batch_size);
        let parts = train_step(model, store, &mut sgd, train_set, &idx).map_err(|e| match e {
            Error::Diverged { value, .. } => Error::Diverged { step, value },
            other => other,
        })?;
        losses.push(parts.total);
        progress(step, &parts);
        if (step % tc.eval_every == 0 || step == tc.steps) && !test_set.is_empty() {
            let e = evaluate_model(model, store, test_set, tc)?;
            evals.push(EvalPoint { step, map: e.map });
        }
    }
    Ok(TrainReport {
        losses,
        evals,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Detections for every image of `data`, in eval mode.
pub fn detect(
    model: &Detector,
    store: &ParamStore<f32>,
    data: &Dataset<f32>,
    tc: &TrainConfig,
) -> Result<Vec<lim_eval::Detection>> {
    let strides = model.cfg.strides();
    let mut out = Vec::new();
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(tc.batch_size.max(1)) {
        let heads = model.predict(store, &data.batch(chunk), Phase::Eval)?;
        let dets = decode_and_nms(
            &heads,
            &strides,
            model.cfg.classes,
            data.size() as f64,
            tc.score_threshold,
            tc.nms_iou,
        );
        for (&i, image_dets) in chunk.iter().zip(dets) {
            for d in image_dets {
                out.push(lim_eval::Detection::new(
                    data.names[i].clone(),
                    data.labels[d.class].clone(),
                    d.score.clamp(0.0, 1.0),
                    d.bbox,
                )?);
            }
        }
    }
    Ok(out)
}

/// mAP at IoU 0.5 over the dataset's label set.
pub fn evaluate_model(model: &Detector, store: &ParamStore<f32>, data: &Dataset<f32>, tc: &TrainConfig) -> Result<Evaluation> {
    let dets = detect(model, store, data, tc)?;
    Ok(evaluate(&dets, &data.all_annotations(), &data.labels, 0.5)?)
}
