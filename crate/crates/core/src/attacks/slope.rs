//! Slope measures of a forecast path and the slope attack loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeKind {
    /// Endpoints only.
    General,
    LeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeMeasure {
    pub kind: SlopeKind,
    pub m: f64,
}

impl SlopeMeasure {
    pub fn of(kind: SlopeKind, y: &[f64]) -> Result<Self> {
        let m = match kind {
            SlopeKind::General => general_slope(y)?,
            SlopeKind::LeastSquares => ls_slope(y)?,
        };
        Ok(Self { kind, m })
    }
}

fn check_len(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Contract(format!("slope needs at least 2 points, got {n}")));
    }
    Ok(())
}

/// `(y[N-1] - y[0]) / (N - 1)`.
pub fn general_slope(y: &[f64]) -> Result<f64> {
    check_len(y.len())?;
    Ok((y[y.len() - 1] - y[0]) / (y.len() - 1) as f64)
}

/// Least-squares slope against `x = 0..N-1`.
pub fn ls_slope(y: &[f64]) -> Result<f64> {
    check_len(y.len())?;
    let n = y.len() as f64;
    let xbar = (n - 1.0) / 2.0;
    let ybar = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxy += dx * (v - ybar);
        sxx += dx * dx;
    }
    Ok(sxy / sxx)
}

/// `w_i = (i - x̄) / Σ(j - x̄)²`, so the slope is `Σ w_i y_i`.
pub fn ls_weights(n: usize) -> Vec<f64> {
    let xbar = (n - 1) as f64 / 2.0;
    let sxx: f64 = (0..n).map(|i| (i as f64 - xbar).powi(2)).sum();
    (0..n).map(|i| (i as f64 - xbar) / sxx).collect()
}

/// `c·exp(-t·d·m)` for `t = ±1`, `c·m²` for `t = 0`.
pub fn slope_loss(m: f64, t: i8, c: f64, d: f64) -> f64 {
    if t == 0 {
        c * m * m
    } else {
        c * (-(t as f64) * d * m).exp()
    }
}

fn check_path(y: &Var<'_>) -> Result<usize> {
    let shape = y.shape();
    if shape.len() != 1 {
        return Err(Error::dim("slope", format!("expected [N], got {shape:?}")));
    }
    check_len(shape[0])?;
    Ok(shape[0])
}

/// Graph version of [`general_slope`]; scalar output.
pub fn general_slope_var<'g>(y: Var<'g>) -> Result<Var<'g>> {
    let n = check_path(&y)?;
    let run = y.graph().scalar((n - 1) as f64);
    Ok(y.slice(0, n - 1, 1)?.sub(y.slice(0, 0, 1)?)?.div(run)?.sum())
}

/// Graph version of [`ls_slope`]; scalar output.
pub fn ls_slope_var<'g>(y: Var<'g>) -> Result<Var<'g>> {
    let n = check_path(&y)?;
    let w = y.graph().constant(Tensor::vector(ls_weights(n)));
    Ok(y.mul(w)?.sum())
}

pub fn slope_var<'g>(kind: SlopeKind, y: Var<'g>) -> Result<Var<'g>> {
    match kind {
        SlopeKind::General => general_slope_var(y),
        SlopeKind::LeastSquares => ls_slope_var(y),
    }
}

pub fn slope_loss_var<'g>(m: Var<'g>, t: i8, c: f64, d: f64) -> Var<'g> {
    if t == 0 {
        m.powf(2.0).scale(c)
    } else {
        m.scale(-(t as f64) * d).exp().scale(c)
    }
}
