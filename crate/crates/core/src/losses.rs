//! Training losses as plain numeric kernels.
//!
//! Every loss accumulates in `f64` in plane-major order, so results are
//! reproducible run to run.

use crate::error::{Error, Result};
use crate::gradient::{grad_x, grad_y};
use crate::tensor_io::{FieldTensor, InstanceMap};

/// Predictions are clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]` before the log.
pub const LOG_CLAMP: f64 = 1e-7;

/// Smoothing term of the Dice loss.
pub const DICE_EPSILON: f64 = 1e-6;

fn same_shape(pred: &FieldTensor, target: &FieldTensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

fn mean_of(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    values.sum::<f64>() / n as f64
}

/// `-(1/N) * sum(target * ln(clamp(pred)))`.
pub fn ce_loss(pred: &FieldTensor, target: &FieldTensor) -> Result<f64> {
    same_shape(pred, target)?;
    let terms = pred.data().iter().zip(target.data()).map(|(&p, &t)| {
        let p = (p as f64).clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
        -(t as f64) * p.ln()
    });
    Ok(mean_of(terms, pred.data().len()))
}

/// `1 - (2 * sum(t * p) + eps) / (sum(t) + sum(p) + eps)`.
pub fn dice_loss(pred: &FieldTensor, target: &FieldTensor, epsilon: f64) -> Result<f64> {
    same_shape(pred, target)?;
    let (mut overlap, mut sum_t, mut sum_p) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        overlap += t as f64 * p as f64;
        sum_t += t as f64;
        sum_p += p as f64;
    }
    Ok(1.0 - (2.0 * overlap + epsilon) / (sum_t + sum_p + epsilon))
}

/// Mean absolute error.
pub fn mae_loss(pred: &FieldTensor, target: &FieldTensor) -> Result<f64> {
    same_shape(pred, target)?;
    let terms = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (t as f64 - p as f64).abs());
    Ok(mean_of(terms, pred.data().len()))
}

/// Mean squared error.
pub fn mse_loss(pred: &FieldTensor, target: &FieldTensor) -> Result<f64> {
    same_shape(pred, target)?;
    let terms = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p as f64 - t as f64).powi(2));
    Ok(mean_of(terms, pred.data().len()))
}

/// Mean squared gradient error over the foreground pixels of `nuclei`:
/// the horizontal-derivative error of plane 0 plus the vertical-derivative
/// error of plane 1, each averaged over the `m` foreground pixels.
/// Zero when the mask has no foreground.
pub fn msge_loss(pred_hv: &FieldTensor, target_hv: &FieldTensor, nuclei: &InstanceMap) -> Result<f64> {
    same_shape(pred_hv, target_hv)?;
    let (planes, h, w) = pred_hv.shape();
    if planes != 2 {
        return Err(Error::ShapeMismatch(format!("MSGE needs 2 HV planes, got {planes}")));
    }
    if (nuclei.height(), nuclei.width()) != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "mask is {}x{}, fields are {h}x{w}",
            nuclei.height(),
            nuclei.width()
        )));
    }
    let m = nuclei.labels().iter().filter(|&&l| l > 0).count();
    if m == 0 {
        return Ok(0.0);
    }
    let term = |pred: Vec<f64>, target: Vec<f64>| -> f64 {
        pred.iter()
            .zip(&target)
            .zip(nuclei.labels())
            .filter(|(_, &l)| l > 0)
            .map(|((p, t), _)| (p - t).powi(2))
            .sum::<f64>()
            / m as f64
    };
    let x = term(grad_x(pred_hv.plane(0), h, w), grad_x(target_hv.plane(0), h, w));
    let y = term(grad_y(pred_hv.plane(1), h, w), grad_y(target_hv.plane(1), h, w));
    Ok(x + y)
}

/// Weights of the star-polygon model's loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StardistWeights {
    pub ce: f64,
    pub dice: f64,
    pub mae: f64,
}

impl Default for StardistWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            dice: 1.0,
            mae: 0.3,
        }
    }
}

/// Weights of the HV model's loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoverWeights {
    pub ce: f64,
    pub dice: f64,
    pub mse: f64,
    pub msge: f64,
}

impl Default for HoverWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            dice: 1.0,
            mse: 1.0,
            msge: 1.0,
        }
    }
}

pub fn stardist_total(ce: f64, dice: f64, mae: f64, weights: &StardistWeights) -> f64 {
    weights.ce * ce + weights.dice * dice + weights.mae * mae
}

pub fn hover_total(ce: f64, dice: f64, mse: f64, msge: f64, weights: &HoverWeights) -> f64 {
    weights.ce * ce + weights.dice * dice + weights.mse * mse + weights.msge * msge
}

/// Individual terms and the weighted total for a pair of stacked radial
/// fields (`[prob, dist_0..dist_R]`): CE on the probability plane, Dice and
/// MAE on the distance planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StardistLoss {
    pub ce: f64,
    pub dice: f64,
    pub mae: f64,
    pub total: f64,
}

pub fn stardist_loss(pred: &FieldTensor, target: &FieldTensor, weights: &StardistWeights) -> Result<StardistLoss> {
    same_shape(pred, target)?;
    let planes = pred.planes();
    if planes < 2 {
        return Err(Error::ShapeMismatch(format!(
            "a radial field stack needs a probability and distance planes, got {planes} planes"
        )));
    }
    let ce = ce_loss(&pred.slice_planes(0, 1), &target.slice_planes(0, 1))?;
    let (pd, td) = (pred.slice_planes(1, planes), target.slice_planes(1, planes));
    let dice = dice_loss(&pd, &td, DICE_EPSILON)?;
    let mae = mae_loss(&pd, &td)?;
    Ok(StardistLoss {
        ce,
        dice,
        mae,
        total: stardist_total(ce, dice, mae, weights),
    })
}

/// Individual terms and the weighted total for a pair of stacked hover
/// fields (`[cp_bg, cp_fg, h, v]`): CE and Dice on the CP planes, MSE and
/// MSGE on the HV planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoverLoss {
    pub ce: f64,
    pub dice: f64,
    pub mse: f64,
    pub msge: f64,
    pub total: f64,
}

pub fn hover_loss(pred: &FieldTensor, target: &FieldTensor, nuclei: &InstanceMap, weights: &HoverWeights) -> Result<HoverLoss> {
    same_shape(pred, target)?;
    if pred.planes() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "a hover field stack has 4 planes, got {}",
            pred.planes()
        )));
    }
    let (pc, tc) = (pred.slice_planes(0, 2), target.slice_planes(0, 2));
    let (ph, th) = (pred.slice_planes(2, 4), target.slice_planes(2, 4));
    let ce = ce_loss(&pc, &tc)?;
    let dice = dice_loss(&pc, &tc, DICE_EPSILON)?;
    let mse = mse_loss(&ph, &th)?;
    let msge = msge_loss(&ph, &th, nuclei)?;
    Ok(HoverLoss {
        ce,
        dice,
        mse,
        msge,
        total: hover_total(ce, dice, mse, msge, weights),
    })
}
