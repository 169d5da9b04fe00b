//! First-order optimality residuals of a [`SparseNlp`].
//!
//! Sign convention: the Lagrangian is
//! `f(x) + yᵀc(x) − z_lᵀ(x − l) − z_uᵀ(u − x)`, so a positive row
//! multiplier belongs to an active upper row bound and a negative one to an
//! active lower bound. Bound multipliers are non-negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nlp::SparseNlp;

/// Scaled ∞-norms of the three KKT blocks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility).max(self.complementarity)
    }
}

/// Evaluates the KKT residual of `(x, y, z_l, z_u)`. Fixed variables
/// (`lb == ub`) are parameters and do not enter stationarity. Stationarity
/// and complementarity are divided by `max(1, mean |multiplier| / 100)`.
pub fn kkt_residual(nlp: &SparseNlp, x: &[f64], y: &[f64], z_l: &[f64], z_u: &[f64]) -> Result<KktResidual> {
    let n = nlp.n();
    let m = nlp.m();
    for (len, expected) in [(x.len(), n), (z_l.len(), n), (z_u.len(), n), (y.len(), m)] {
        if len != expected {
            return Err(Error::Dimension { expected, got: len });
        }
    }
    let mut g = nlp.gradient(x);
    for (i, j, v) in nlp.jacobian(x) {
        g[j] += y[i] * v;
    }
    let c = nlp.constraints(x);
    let mut stat: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let mut feas: f64 = 0.0;
    let mut sum = 0.0;
    let mut cnt = 0usize;
    for j in 0..n {
        let (l, u) = (nlp.x_lb[j], nlp.x_ub[j]);
        feas = feas.max(l - x[j]).max(x[j] - u);
        if l == u {
            continue;
        }
        stat = stat.max((g[j] - z_l[j] + z_u[j]).abs());
        for (z, gap) in [(z_l[j], x[j] - l), (z_u[j], u - x[j])] {
            if z == 0.0 {
                continue;
            }
            sum += z.abs();
            cnt += 1;
            comp = comp.max(if z < 0.0 || !gap.is_finite() { z.abs() } else { (z * gap).abs() });
        }
    }
    for i in 0..m {
        let r = &nlp.rows[i];
        feas = feas.max(r.lb - c[i]).max(c[i] - r.ub);
        sum += y[i].abs();
        cnt += 1;
        if r.is_equality() || y[i] == 0.0 {
            continue;
        }
        let gap = if y[i] > 0.0 { r.ub - c[i] } else { c[i] - r.lb };
        comp = comp.max(if gap.is_finite() { (y[i] * gap).abs() } else { y[i].abs() });
    }
    let scale = (sum / cnt.max(1) as f64).max(100.0) / 100.0;
    Ok(KktResidual { stationarity: stat / scale, feasibility: feas.max(0.0), complementarity: comp / scale })
}
