//! Losses over per-pixel foreground probabilities and the IoU metric.
//!
//! Everything here works in `f64`. Each loss comes with its analytic
//! gradient with respect to the probabilities; the trainer chains it through
//! the sigmoid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::BinaryMask;

/// Clamp applied to probabilities inside the cross-entropy logarithms.
pub const CROSS_ENTROPY_EPS: f64 = 1e-7;

/// Post-sigmoid foreground probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl PredictionMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} probabilities for a {width}x{height} map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::Validation(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_logits(width: usize, height: usize, logits: &[f32]) -> Result<Self> {
        Self::new(width, height, logits.iter().map(|&z| sigmoid(z as f64)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Ground-truth labels, exactly 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl TargetMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} targets for a {width}x{height} map",
                values.len()
            )));
        }
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Validation("targets must be exactly 0 or 1".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            width: mask.width(),
            height: mask.height(),
            values: mask.values().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check(x: &PredictionMap, t: &TargetMap) -> Result<()> {
    if x.width != t.width || x.height != t.height {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs target {}x{}",
            x.width, x.height, t.width, t.height
        )));
    }
    Ok(())
}

/// `1 - 2 sum(x t) / (sum(x^2) + sum(t^2))`, with 0 when both sums vanish.
pub fn soft_dice_loss(x: &PredictionMap, t: &TargetMap) -> Result<f64> {
    check(x, t)?;
    let (xt, denom) = dice_sums(x, t);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 - 2.0 * xt / denom)
}

fn dice_sums(x: &PredictionMap, t: &TargetMap) -> (f64, f64) {
    let mut xt = 0.0;
    let mut denom = 0.0;
    for (&a, &b) in x.values.iter().zip(&t.values) {
        xt += a * b;
        denom += a * a + b * b;
    }
    (xt, denom)
}

pub fn soft_dice_gradient(x: &PredictionMap, t: &TargetMap) -> Result<Vec<f64>> {
    check(x, t)?;
    let (xt, denom) = dice_sums(x, t);
    if denom == 0.0 {
        return Ok(vec![0.0; x.values.len()]);
    }
    let d2 = denom * denom;
    Ok(x.values
        .iter()
        .zip(&t.values)
        .map(|(&a, &b)| (4.0 * xt * a - 2.0 * b * denom) / d2)
        .collect())
}

/// Pixel-wise binary cross entropy, summed over pixels.
pub fn cross_entropy_loss(x: &PredictionMap, t: &TargetMap) -> Result<f64> {
    check(x, t)?;
    Ok(x.values
        .iter()
        .zip(&t.values)
        .map(|(&a, &b)| {
            let a = a.clamp(CROSS_ENTROPY_EPS, 1.0 - CROSS_ENTROPY_EPS);
            -b * a.ln() - (1.0 - b) * (1.0 - a).ln()
        })
        .sum())
}

pub fn cross_entropy_gradient(x: &PredictionMap, t: &TargetMap) -> Result<Vec<f64>> {
    check(x, t)?;
    Ok(x.values
        .iter()
        .zip(&t.values)
        .map(|(&a, &b)| {
            if a < CROSS_ENTROPY_EPS || a > 1.0 - CROSS_ENTROPY_EPS {
                0.0
            } else {
                -b / a + (1.0 - b) / (1.0 - a)
            }
        })
        .collect())
}

/// `sum |x - t|^p` for `p >= 1`.
pub fn lp_loss(x: &PredictionMap, t: &TargetMap, p: f64) -> Result<f64> {
    check(x, t)?;
    check_p(p)?;
    Ok(x.values
        .iter()
        .zip(&t.values)
        .map(|(&a, &b)| (a - b).abs().powf(p))
        .sum())
}

pub fn lp_gradient(x: &PredictionMap, t: &TargetMap, p: f64) -> Result<Vec<f64>> {
    check(x, t)?;
    check_p(p)?;
    Ok(x.values
        .iter()
        .zip(&t.values)
        .map(|(&a, &b)| {
            let d = a - b;
            if d == 0.0 {
                0.0
            } else {
                p * d.abs().powf(p - 1.0) * d.signum()
            }
        })
        .collect())
}

fn check_p(p: f64) -> Result<()> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("l_p exponent must be >= 1, got {p}")))
    }
}

/// Training objective selector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    SoftDice,
    CrossEntropy,
    Lp(f64),
}

impl Objective {
    pub fn value(&self, x: &PredictionMap, t: &TargetMap) -> Result<f64> {
        match *self {
            Objective::SoftDice => soft_dice_loss(x, t),
            Objective::CrossEntropy => cross_entropy_loss(x, t),
            Objective::Lp(p) => lp_loss(x, t, p),
        }
    }

    pub fn gradient(&self, x: &PredictionMap, t: &TargetMap) -> Result<Vec<f64>> {
        match *self {
            Objective::SoftDice => soft_dice_gradient(x, t),
            Objective::CrossEntropy => cross_entropy_gradient(x, t),
            Objective::Lp(p) => lp_gradient(x, t, p),
        }
    }
}

/// Intersection over union; two empty masks count as perfect agreement.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "mask {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.values().iter().zip(b.values()) {
        inter += (p & q) as usize;
        union += (p | q) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}
