//! Parametric motion models.
//!
//! Convention used everywhere in the crate: a [`MotionParams`] describes the
//! map `T_p` from a pixel `u = (x, y) = (col, row)` of frame `k` to the point
//! of the reference image that frame `k` observes there, so that
//! `frame_k(u) ~ reference(T_p(u))`. Rotation and scaling act about the pixel
//! origin `(0, 0)`. Translations are in pixels of the grid the motion acts on;
//! [`MotionParams::scaled`] converts between grids whose origins coincide
//! (HR pixel `s * u` sits on LR pixel `u`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionModel {
    /// `(tx, ty)`
    Translation,
    /// `(tx, ty, theta)` with `theta` in radians.
    #[default]
    Euclidean,
    /// `(tx, ty, a, b, c, d)`: `x' = (1+a) x + b y + tx`, `y' = c x + (1+d) y + ty`.
    Affine,
}

impl MotionModel {
    pub const fn param_count(self) -> usize {
        match self {
            MotionModel::Translation => 2,
            MotionModel::Euclidean => 3,
            MotionModel::Affine => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MotionModel::Translation => "translation",
            MotionModel::Euclidean => "euclidean",
            MotionModel::Affine => "affine",
        }
    }
}

impl fmt::Display for MotionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MotionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "translation" => Ok(MotionModel::Translation),
            "euclidean" => Ok(MotionModel::Euclidean),
            "affine" => Ok(MotionModel::Affine),
            other => Err(Error::param(format!("unknown motion model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub model: MotionModel,
    pub params: Vec<f64>,
}

impl MotionParams {
    pub fn identity(model: MotionModel) -> Self {
        Self { model, params: vec![0.0; model.param_count()] }
    }

    pub fn new(model: MotionModel, params: Vec<f64>) -> Result<Self> {
        if params.len() != model.param_count() {
            return Err(Error::param(format!("{model} motion needs {} parameters, got {}", model.param_count(), params.len())));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("motion parameters must be finite"));
        }
        Ok(Self { model, params })
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { model: MotionModel::Translation, params: vec![tx, ty] }
    }

    pub fn euclidean(tx: f64, ty: f64, theta: f64) -> Self {
        Self { model: MotionModel::Euclidean, params: vec![tx, ty, theta] }
    }

    /// Euclidean motion rotating by `theta` about `pivot` and then shifting by `shift`.
    pub fn euclidean_about(pivot: (f64, f64), shift: (f64, f64), theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let (px, py) = pivot;
        let tx = px - (c * px - s * py) + shift.0;
        let ty = py - (s * px + c * py) + shift.1;
        Self::euclidean(tx, ty, theta)
    }

    pub fn is_identity(&self) -> bool {
        self.params.iter().all(|&v| v == 0.0)
    }

    pub fn tx(&self) -> f64 {
        self.params[0]
    }

    pub fn ty(&self) -> f64 {
        self.params[1]
    }

    /// Rotation angle in radians (zero for translations; the rotational part for affine).
    pub fn theta(&self) -> f64 {
        match self.model {
            MotionModel::Translation => 0.0,
            MotionModel::Euclidean => self.params[2],
            MotionModel::Affine => {
                let p = &self.params;
                (p[4] - p[3]).atan2(2.0 + p[2] + p[5])
            }
        }
    }

    /// Linear part `[[m00, m01], [m10, m11]]` of the transform.
    pub fn linear(&self) -> [[f64; 2]; 2] {
        match self.model {
            MotionModel::Translation => [[1.0, 0.0], [0.0, 1.0]],
            MotionModel::Euclidean => {
                let (s, c) = self.params[2].sin_cos();
                [[c, -s], [s, c]]
            }
            MotionModel::Affine => {
                let p = &self.params;
                [[1.0 + p[2], p[3]], [p[4], 1.0 + p[5]]]
            }
        }
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        match self.model {
            MotionModel::Translation => (x + self.params[0], y + self.params[1]),
            _ => {
                let m = self.linear();
                (m[0][0] * x + m[0][1] * y + self.params[0], m[1][0] * x + m[1][1] * y + self.params[1])
            }
        }
    }

    /// Derivatives of `T_p(x, y)` with respect to each parameter, as `(dx, dy)` pairs.
    pub fn coord_jacobian(&self, x: f64, y: f64, out: &mut [(f64, f64)]) {
        match self.model {
            MotionModel::Translation => {
                out[0] = (1.0, 0.0);
                out[1] = (0.0, 1.0);
            }
            MotionModel::Euclidean => {
                let (s, c) = self.params[2].sin_cos();
                out[0] = (1.0, 0.0);
                out[1] = (0.0, 1.0);
                out[2] = (-s * x - c * y, c * x - s * y);
            }
            MotionModel::Affine => {
                out[0] = (1.0, 0.0);
                out[1] = (0.0, 1.0);
                out[2] = (x, 0.0);
                out[3] = (y, 0.0);
                out[4] = (0.0, x);
                out[5] = (0.0, y);
            }
        }
    }

    /// Displacement `T_p(u) - u` at a point.
    pub fn displacement_at(&self, x: f64, y: f64) -> (f64, f64) {
        let (xx, yy) = self.apply(x, y);
        (xx - x, yy - y)
    }

    /// Same motion expressed on a grid `factor` times finer (or coarser if < 1).
    pub fn scaled(&self, factor: f64) -> MotionParams {
        let mut p = self.params.clone();
        p[0] *= factor;
        p[1] *= factor;
        MotionParams { model: self.model, params: p }
    }

    /// Re-expresses the motion in coordinates shifted by `offset`:
    /// `T'(v) = offset + T(v - offset)`.
    pub fn conjugated(&self, offset: (f64, f64)) -> MotionParams {
        let (ox, oy) = offset;
        let (mx, my) = self.apply(-ox, -oy);
        let mut p = self.params.clone();
        p[0] = mx + ox;
        p[1] = my + oy;
        MotionParams { model: self.model, params: p }
    }

    /// Inverse transform, within the same model.
    pub fn inverse(&self) -> MotionParams {
        match self.model {
            MotionModel::Translation => MotionParams::translation(-self.params[0], -self.params[1]),
            MotionModel::Euclidean => {
                let th = self.params[2];
                let (s, c) = th.sin_cos();
                let (tx, ty) = (self.params[0], self.params[1]);
                MotionParams::euclidean(-(c * tx + s * ty), -(-s * tx + c * ty), -th)
            }
            MotionModel::Affine => {
                let m = self.linear();
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
                let (tx, ty) = (self.params[0], self.params[1]);
                let itx = -(inv[0][0] * tx + inv[0][1] * ty);
                let ity = -(inv[1][0] * tx + inv[1][1] * ty);
                MotionParams { model: MotionModel::Affine, params: vec![itx, ity, inv[0][0] - 1.0, inv[0][1], inv[1][0], inv[1][1] - 1.0] }
            }
        }
    }

    /// Lifts the motion into a richer model (translation -> euclidean -> affine).
    pub fn promoted(&self, model: MotionModel) -> Result<MotionParams> {
        use MotionModel::*;
        match (self.model, model) {
            (a, b) if a == b => Ok(self.clone()),
            (Translation, Euclidean) => Ok(MotionParams::euclidean(self.params[0], self.params[1], 0.0)),
            (Translation | Euclidean, Affine) => {
                let m = self.linear();
                Ok(MotionParams {
                    model: Affine,
                    params: vec![self.params[0], self.params[1], m[0][0] - 1.0, m[0][1], m[1][0], m[1][1] - 1.0],
                })
            }
            (from, to) => Err(Error::param(format!("cannot convert {from} motion to {to}"))),
        }
    }
}
