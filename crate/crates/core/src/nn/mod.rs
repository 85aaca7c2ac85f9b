//! Bidirectional LSTM classifier with attention over sequence positions.

mod model;
mod network;
mod train;

use thiserror::Error;

pub use model::{read_model, write_model, DetectionModel, Direction, Layout, ParamGroup};
pub use network::AttentionTrace;
pub use train::{evaluate, train, train_joint, EpochStats, TrainConfig};

use crate::embed::PaddedVectorSequence;
use crate::Label;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input is {got:?} (L, v), model expects {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("training data holds a single class")]
    SingleClassDataset,
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

pub fn forward_pass(model: &DetectionModel, x: &PaddedVectorSequence) -> Result<AttentionTrace, NnError> {
    model.check_input(x)?;
    Ok(model.run(x).trace)
}

/// Malicious only when its probability is strictly greater.
pub(crate) fn decide(p: &[f64; 2]) -> Label {
    if p[0] > p[1] {
        Label::Malicious
    } else {
        Label::Benign
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub p: [f64; 2],
    pub trace: AttentionTrace,
}

pub fn predict(model: &DetectionModel, x: &PaddedVectorSequence) -> Result<Prediction, NnError> {
    let trace = forward_pass(model, x)?;
    Ok(Prediction {
        label: decide(&trace.p),
        p: trace.p,
        trace,
    })
}

/// Cross-entropy loss of one sample and its gradient, in parameter layout.
pub fn loss_and_gradient(
    model: &DetectionModel,
    x: &PaddedVectorSequence,
    label: Label,
) -> Result<(f64, Vec<f64>), NnError> {
    model.check_input(x)?;
    let tape = model.run(x);
    let mut grad = vec![0.0; model.params.len()];
    let loss = model.backward(x, &tape, label.class_index(), &mut grad, None);
    Ok((loss, grad))
}

/// Gradient of the loss with respect to each valid input row,
/// `valid_len x v` row-major.
pub fn input_gradient(model: &DetectionModel, x: &PaddedVectorSequence, label: Label) -> Result<Vec<f64>, NnError> {
    model.check_input(x)?;
    let tape = model.run(x);
    let mut grad = vec![0.0; model.params.len()];
    let slot: Vec<Option<usize>> = (0..x.valid_len()).map(Some).collect();
    let mut dx = vec![0.0; x.valid_len() * model.v()];
    model.backward(
        x,
        &tape,
        label.class_index(),
        &mut grad,
        Some(network::InputGrad { slot: &slot, dx: &mut dx }),
    );
    Ok(dx)
}

/// Per-group outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub groups: Vec<(ParamGroup, f64)>,
}

/// Denominator floor of the relative error, so parameters whose true
/// gradient is (numerically) zero compare on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Compare the analytic gradient with central differences
/// `(L(w + e) - L(w - e)) / 2e` for every parameter.
///
/// The relative error of one parameter is
/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn gradient_check(
    model: &DetectionModel,
    x: &PaddedVectorSequence,
    label: Label,
    epsilon: f64,
) -> Result<GradientCheck, NnError> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let (_, analytic) = loss_and_gradient(model, x, label)?;
    let target = label.class_index();
    let mut probe = model.clone();
    let mut groups = Vec::new();
    for g in ParamGroup::ALL {
        let mut worst: f64 = 0.0;
        for i in g.range(&model.layout) {
            let w = probe.params[i];
            probe.params[i] = w + epsilon;
            let plus = DetectionModel::loss_of(&probe.run(x), target);
            probe.params[i] = w - epsilon;
            let minus = DetectionModel::loss_of(&probe.run(x), target);
            probe.params[i] = w;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[i];
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
        groups.push((g, worst));
    }
    Ok(GradientCheck {
        max_relative_error: groups.iter().map(|(_, e)| *e).fold(0.0, f64::max),
        groups,
    })
}
