//! OPS response scale: affine min-max scaling followed by the
//! variance-stabilizing arcsine-square-root transform.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self {
            scale_min: 0.0,
            scale_max: 1.6,
        }
    }
}

impl TransformSpec {
    pub fn new(scale_min: f64, scale_max: f64) -> Result<Self> {
        let spec = Self { scale_min, scale_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min.is_finite() && self.scale_max.is_finite()) {
            return Err(Error::NonFinite("transform bounds".into()));
        }
        if self.scale_min >= self.scale_max {
            return Err(Error::InvalidArgument(format!(
                "scale_min {} must be below scale_max {}",
                self.scale_min, self.scale_max
            )));
        }
        Ok(())
    }

    fn width(&self) -> f64 {
        self.scale_max - self.scale_min
    }

    /// d(OPS)/dy at transformed value `y`, for delta-method standard errors.
    pub fn ops_slope(&self, y: f64) -> f64 {
        self.width() * (2.0 * y).sin()
    }
}

/// `arcsin(sqrt((ops - min) / (max - min)))`, with `ops` clamped to the scale range.
pub fn transform_ops(ops: f64, spec: &TransformSpec) -> Result<f64> {
    if !ops.is_finite() {
        return Err(Error::NonFinite(format!("OPS {ops}")));
    }
    let clamped = ops.clamp(spec.scale_min, spec.scale_max);
    let scaled = ((clamped - spec.scale_min) / spec.width()).clamp(0.0, 1.0);
    Ok(scaled.sqrt().asin())
}

pub fn inverse_transform_ops(y: f64, spec: &TransformSpec) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite(format!("transformed value {y}")));
    }
    if !(-RANGE_SLACK..=FRAC_PI_2 + RANGE_SLACK).contains(&y) {
        return Err(Error::OutOfRange { value: y });
    }
    let s = y.clamp(0.0, FRAC_PI_2).sin();
    Ok(spec.scale_min + spec.width() * s * s)
}
