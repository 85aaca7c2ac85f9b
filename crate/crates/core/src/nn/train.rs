use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::DetectionModel;
use super::network::InputGrad;
use super::NnError;
use crate::embed::{EmbeddingMatrix, PaddedVectorSequence};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the batch gradient to this global L2 norm when it is
    /// larger; 0 disables clipping.
    pub clip_norm: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch: 16,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

/// Summary handed to the per-epoch callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the training set after the epoch's updates.
    pub loss: f64,
    pub accuracy: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], c: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= c.lr * mh / (vh.sqrt() + c.eps);
        }
    }
}

/// Mean loss and accuracy of `model` over `data`.
pub fn evaluate(model: &DetectionModel, data: &[(PaddedVectorSequence, Label)]) -> (f64, f64) {
    evaluate_with(model, data, None)
}

fn evaluate_with(
    model: &DetectionModel,
    data: &[(PaddedVectorSequence, Label)],
    emb: Option<&EmbeddingMatrix>,
) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, y) in data {
        let tape = match emb {
            Some(e) => model.run(&x.with_embedding(e)),
            None => model.run(x),
        };
        loss += DetectionModel::loss_of(&tape, y.class_index());
        if super::decide(&tape.trace.p) == *y {
            correct += 1;
        }
    }
    let n = data.len().max(1) as f64;
    (loss / n, correct as f64 / n)
}

/// Mini-batch Adam on cross-entropy.
///
/// The sample order is reshuffled every epoch from `config.seed`; batch
/// gradients are summed in batch order, so a run is fully determined by
/// the model, the data and the config. Returns the per-epoch loss history.
pub fn train<F>(
    model: &mut DetectionModel,
    data: &[(PaddedVectorSequence, Label)],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<f64>, NnError>
where
    F: FnMut(&EpochStats, &DetectionModel),
{
    fit(model, None, data, config, |s, m, _| on_epoch(s, m))
}

/// [`train`] that also updates the embedding rows the inputs were read
/// from. Inputs are re-read from the current embedding for every forward
/// pass (their stored rows are ignored); the embedding gets its own Adam
/// state and shares the learning rate and the gradient-norm clip.
pub fn train_joint<F>(
    model: &mut DetectionModel,
    embedding: &mut EmbeddingMatrix,
    data: &[(PaddedVectorSequence, Label)],
    config: &TrainConfig,
    on_epoch: F,
) -> Result<Vec<f64>, NnError>
where
    F: FnMut(&EpochStats, &DetectionModel, &EmbeddingMatrix),
{
    fit(model, Some(embedding), data, config, on_epoch)
}

fn fit<F>(
    model: &mut DetectionModel,
    mut embedding: Option<&mut EmbeddingMatrix>,
    data: &[(PaddedVectorSequence, Label)],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<f64>, NnError>
where
    F: FnMut(&EpochStats, &DetectionModel, &EmbeddingMatrix),
{
    let has = |l: Label| data.iter().any(|(_, y)| *y == l);
    if !has(Label::Malicious) || !has(Label::Benign) {
        return Err(NnError::SingleClassDataset);
    }
    for (x, _) in data {
        model.check_input(x)?;
    }
    let batch = config.batch.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = Adam::new(model.params.len());
    let mut grad = vec![0.0; model.params.len()];
    let emb_len = embedding.as_ref().map_or(0, |e| e.as_slice().len());
    let mut emb_adam = Adam::new(emb_len);
    let mut emb_grad = vec![0.0; emb_len];
    let no_embedding = EmbeddingMatrix::zeros(0, model.v());
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grad.fill(0.0);
            emb_grad.fill(0.0);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let (x, y) = &data[i];
                match embedding.as_deref() {
                    None => {
                        let tape = model.run(x);
                        batch_loss += model.backward(x, &tape, y.class_index(), &mut grad, None);
                    }
                    Some(e) => {
                        batch_loss += joint_step(model, e, x, y.class_index(), &mut grad, &mut emb_grad);
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch });
            }
            let scale = 1.0 / chunk.len() as f64;
            grad.iter_mut().chain(emb_grad.iter_mut()).for_each(|g| *g *= scale);
            if config.clip_norm > 0.0 {
                let norm = grad.iter().chain(&emb_grad).map(|g| g * g).sum::<f64>().sqrt();
                if norm > config.clip_norm {
                    let s = config.clip_norm / norm;
                    grad.iter_mut().chain(emb_grad.iter_mut()).for_each(|g| *g *= s);
                }
            }
            adam.update(&mut model.params, &grad, config);
            if let Some(e) = embedding.as_deref_mut() {
                emb_adam.update(e.as_mut_slice(), &emb_grad, config);
            }
        }
        let (loss, accuracy) = evaluate_with(model, data, embedding.as_deref());
        let emb_finite = embedding.as_deref().is_none_or(|e| e.as_slice().iter().all(|v| v.is_finite()));
        if !loss.is_finite() || !model.is_finite() || !emb_finite {
            return Err(NnError::NonFiniteLoss { epoch });
        }
        history.push(loss);
        on_epoch(
            &EpochStats {
                epoch: epoch + 1,
                loss,
                accuracy,
            },
            model,
            embedding.as_deref().unwrap_or(&no_embedding),
        );
    }
    Ok(history)
}

/// One sample of joint training: parameter gradient into `grad`, token-row
/// gradient scattered into `emb_grad`. Returns the loss.
fn joint_step(
    model: &DetectionModel,
    emb: &EmbeddingMatrix,
    x: &PaddedVectorSequence,
    target: usize,
    grad: &mut [f64],
    emb_grad: &mut [f64],
) -> f64 {
    let x = x.with_embedding(emb);
    let v = model.v();
    // local slot per distinct token keeps the input-gradient work small
    let mut local: Vec<u32> = Vec::new();
    let slot: Vec<Option<usize>> = x
        .tokens()
        .iter()
        .map(|t| {
            t.map(|k| match local.iter().position(|&l| l == k) {
                Some(i) => i,
                None => {
                    local.push(k);
                    local.len() - 1
                }
            })
        })
        .collect();
    let mut dx = vec![0.0; local.len() * v];
    let tape = model.run(&x);
    let loss = model.backward(&x, &tape, target, grad, Some(InputGrad { slot: &slot, dx: &mut dx }));
    for (i, &k) in local.iter().enumerate() {
        let row = k as usize * v;
        emb_grad[row..row + v].iter_mut().zip(&dx[i * v..(i + 1) * v]).for_each(|(g, d)| *g += d);
    }
    loss
}
