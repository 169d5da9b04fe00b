//! Sparse nonlinear program assembled from analytic term elements.
//!
//! Every objective and constraint row is a sum of [`Term`]s. A term knows
//! the variables it touches and supplies its value, gradient and dense local
//! Hessian, so the Jacobian and Hessian sparsity patterns follow directly
//! from the term list.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

/// Distance argument of a capacity term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Chi {
    Var(usize),
    Const(f64),
}

/// One transmitter inside a capacity term: contributes
/// `gain · x[power] · χ^{-α}` to the SNR sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapUser {
    pub power: usize,
    pub chi: Chi,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    /// `Σ c_i x_i`
    Linear(Vec<(usize, f64)>),
    /// `coef · x_a · x_b`, `a` may equal `b`.
    Bilinear { a: usize, b: usize, coef: f64 },
    /// `coef · (Σ c_i x_i + constant)²`
    Square { lin: Vec<(usize, f64)>, constant: f64, coef: f64 },
    /// `Σ c_k x^{e_k}` of a single positive variable.
    Powers { var: usize, terms: Vec<(f64, f64)> },
    /// `coef · log₂(1 + Σ_u gain_u p_u χ_u^{-α})`
    Capacity { users: Vec<CapUser>, alpha: f64, coef: f64 },
    /// `x_by · inner`
    Scaled { by: usize, inner: Box<Term> },
}

/// Local evaluation buffer: variables, gradient and row-major dense Hessian.
#[derive(Debug, Default, Clone)]
pub struct Local {
    pub vars: Vec<usize>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl Local {
    fn reset(&mut self) {
        self.vars.clear();
        self.grad.clear();
        self.hess.clear();
        self.value = 0.0;
    }

    fn slot(&mut self, var: usize) -> usize {
        if let Some(k) = self.vars.iter().position(|&v| v == var) {
            return k;
        }
        self.vars.push(var);
        self.vars.len() - 1
    }

    fn size(&mut self, hess: bool) {
        let n = self.vars.len();
        self.grad.resize(n, 0.0);
        if hess {
            self.hess.resize(n * n, 0.0);
        }
    }

    #[inline]
    fn add_h(&mut self, i: usize, j: usize, v: f64) {
        let n = self.vars.len();
        self.hess[i * n + j] += v;
        if i != j {
            self.hess[j * n + i] += v;
        }
    }
}

impl Term {
    /// Variables touched by the term, without duplicates.
    pub fn vars(&self) -> Vec<usize> {
        let mut v = Vec::new();
        self.collect_vars(&mut v);
        v.sort_unstable();
        v.dedup();
        v
    }

    fn collect_vars(&self, out: &mut Vec<usize>) {
        match self {
            Term::Linear(l) => out.extend(l.iter().map(|e| e.0)),
            Term::Bilinear { a, b, .. } => out.extend([*a, *b]),
            Term::Square { lin, .. } => out.extend(lin.iter().map(|e| e.0)),
            Term::Powers { var, .. } => out.push(*var),
            Term::Capacity { users, .. } => {
                for u in users {
                    out.push(u.power);
                    if let Chi::Var(c) = u.chi {
                        out.push(c);
                    }
                }
            }
            Term::Scaled { by, inner } => {
                out.push(*by);
                inner.collect_vars(out);
            }
        }
    }

    /// Structurally nonzero Hessian pairs `(i, j)` (either orientation).
    pub fn hessian_pairs(&self, out: &mut Vec<(usize, usize)>) {
        let all = |vars: &[usize], out: &mut Vec<(usize, usize)>| {
            for a in 0..vars.len() {
                for b in 0..=a {
                    out.push((vars[a], vars[b]));
                }
            }
        };
        match self {
            Term::Linear(_) => {}
            Term::Bilinear { a, b, .. } => out.push((*a, *b)),
            Term::Square { .. } | Term::Capacity { .. } => all(&self.vars(), out),
            Term::Powers { var, .. } => out.push((*var, *var)),
            Term::Scaled { by, inner } => {
                for v in inner.vars() {
                    out.push((*by, v));
                }
                inner.hessian_pairs(out);
            }
        }
    }

    /// Value only.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Term::Linear(l) => l.iter().map(|&(i, c)| c * x[i]).sum(),
            Term::Bilinear { a, b, coef } => coef * x[*a] * x[*b],
            Term::Square { lin, constant, coef } => {
                let z: f64 = lin.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + constant;
                coef * z * z
            }
            Term::Powers { var, terms } => {
                let v = x[*var];
                terms.iter().map(|&(c, e)| c * v.powf(e)).sum()
            }
            Term::Capacity { users, alpha, coef } => {
                let mut snr = 0.0;
                for u in users {
                    let chi = match u.chi {
                        Chi::Var(c) => x[c],
                        Chi::Const(c) => c,
                    };
                    snr += u.gain * x[u.power] * chi.powf(-alpha);
                }
                coef * snr.ln_1p() / LN2
            }
            Term::Scaled { by, inner } => x[*by] * inner.value(x),
        }
    }

    /// Value, gradient and (optionally) Hessian into `out`.
    pub fn eval(&self, x: &[f64], hess: bool, out: &mut Local) {
        out.reset();
        self.eval_into(x, hess, out);
    }

    fn eval_into(&self, x: &[f64], hess: bool, out: &mut Local) {
        match self {
            Term::Linear(l) => {
                for &(i, _) in l {
                    out.slot(i);
                }
                out.size(hess);
                for &(i, c) in l {
                    let k = out.slot(i);
                    out.grad[k] += c;
                    out.value += c * x[i];
                }
            }
            Term::Bilinear { a, b, coef } => {
                let ka = out.slot(*a);
                let kb = out.slot(*b);
                out.size(hess);
                out.value = coef * x[*a] * x[*b];
                out.grad[ka] += coef * x[*b];
                out.grad[kb] += coef * x[*a];
                if hess {
                    if ka == kb {
                        out.add_h(ka, ka, 2.0 * coef);
                    } else {
                        out.add_h(ka, kb, *coef);
                    }
                }
            }
            Term::Square { lin, constant, coef } => {
                for &(i, _) in lin {
                    out.slot(i);
                }
                out.size(hess);
                let z: f64 = lin.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + constant;
                out.value = coef * z * z;
                let ks: Vec<(usize, f64)> = lin.iter().map(|&(i, c)| (out.slot(i), c)).collect();
                for &(k, c) in &ks {
                    out.grad[k] += 2.0 * coef * z * c;
                }
                if hess {
                    let n = out.vars.len();
                    for &(ki, ci) in &ks {
                        for &(kj, cj) in &ks {
                            out.hess[ki * n + kj] += 2.0 * coef * ci * cj;
                        }
                    }
                }
            }
            Term::Powers { var, terms } => {
                let k = out.slot(*var);
                out.size(hess);
                let v = x[*var];
                for &(c, e) in terms {
                    out.value += c * v.powf(e);
                    out.grad[k] += c * e * v.powf(e - 1.0);
                    if hess {
                        out.hess[0] += c * e * (e - 1.0) * v.powf(e - 2.0);
                    }
                }
            }
            Term::Capacity { users, alpha, coef } => {
                // S = 1 + Σ g p χ^{-α}; value = coef·ln S / ln 2
                let slots: Vec<(usize, Option<usize>)> = users
                    .iter()
                    .map(|u| {
                        let kp = out.slot(u.power);
                        let kc = match u.chi {
                            Chi::Var(c) => Some(out.slot(c)),
                            Chi::Const(_) => None,
                        };
                        (kp, kc)
                    })
                    .collect();
                out.size(hess);
                let n = out.vars.len();
                let mut s = 1.0;
                let mut ds = vec![0.0; n];
                let mut d2s = if hess { vec![0.0; n * n] } else { Vec::new() };
                for (u, &(kp, kc)) in users.iter().zip(&slots) {
                    let chi = match u.chi {
                        Chi::Var(c) => x[c],
                        Chi::Const(c) => c,
                    };
                    let p = x[u.power];
                    let ca = chi.powf(-alpha);
                    s += u.gain * p * ca;
                    ds[kp] += u.gain * ca;
                    if let Some(kc) = kc {
                        let dca = -alpha * ca / chi;
                        ds[kc] += u.gain * p * dca;
                        if hess {
                            let d2ca = alpha * (alpha + 1.0) * ca / (chi * chi);
                            d2s[kp * n + kc] += u.gain * dca;
                            d2s[kc * n + kp] += u.gain * dca;
                            d2s[kc * n + kc] += u.gain * p * d2ca;
                        }
                    }
                }
                let scale = coef / LN2;
                out.value = scale * s.ln();
                for k in 0..n {
                    out.grad[k] += scale * ds[k] / s;
                }
                if hess {
                    for i in 0..n {
                        for j in 0..n {
                            out.hess[i * n + j] += scale * (d2s[i * n + j] / s - ds[i] * ds[j] / (s * s));
                        }
                    }
                }
            }
            Term::Scaled { by, inner } => {
                let mut sub = Local::default();
                inner.eval(x, hess, &mut sub);
                let kb = out.slot(*by);
                let ks: Vec<usize> = sub.vars.iter().map(|&v| out.slot(v)).collect();
                debug_assert!(!sub.vars.contains(by), "scaling variable inside scaled term");
                out.size(hess);
                let t = x[*by];
                out.value = t * sub.value;
                out.grad[kb] += sub.value;
                let m = sub.vars.len();
                for a in 0..m {
                    out.grad[ks[a]] += t * sub.grad[a];
                    if hess {
                        out.add_h(kb, ks[a], sub.grad[a]);
                        for b in 0..m {
                            let n = out.vars.len();
                            out.hess[ks[a] * n + ks[b]] += t * sub.hess[a * m + b];
                        }
                    }
                }
            }
        }
    }
}

/// Constraint row `lb ≤ Σ terms + offset ≤ ub`; equality when `lb == ub`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub terms: Vec<Term>,
    pub offset: f64,
    pub lb: f64,
    pub ub: f64,
    /// Human-readable label, e.g. `capacity ap {a1,a2} k=17`.
    pub tag: String,
}

impl Row {
    pub fn is_equality(&self) -> bool {
        self.lb == self.ub
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.offset + self.terms.iter().map(|t| t.value(x)).sum::<f64>()
    }

    pub fn vars(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.terms.iter().flat_map(|t| t.vars()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Variable that does not belong to a mesh stage (e.g. a horizon scale).
pub const GLOBAL_STAGE: usize = usize::MAX;

/// Finite-dimensional program `min f(x)` s.t. row bounds and simple bounds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SparseNlp {
    pub x_lb: Vec<f64>,
    pub x_ub: Vec<f64>,
    /// Initial guess.
    pub x0: Vec<f64>,
    pub var_names: Vec<String>,
    /// Mesh stage of each variable, [`GLOBAL_STAGE`] for global ones. Used
    /// to order the KKT system into a narrow band.
    pub var_stage: Vec<usize>,
    pub objective: Vec<Term>,
    pub rows: Vec<Row>,
}

impl SparseNlp {
    pub fn n(&self) -> usize {
        self.x_lb.len()
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    /// Appends a variable and returns its index.
    pub fn add_var(&mut self, name: impl Into<String>, lb: f64, ub: f64, x0: f64, stage: usize) -> usize {
        self.x_lb.push(lb);
        self.x_ub.push(ub);
        self.x0.push(x0);
        self.var_names.push(name.into());
        self.var_stage.push(stage);
        self.x_lb.len() - 1
    }

    pub fn add_row(&mut self, row: Row) -> usize {
        self.rows.push(row);
        self.rows.len() - 1
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|t| t.value(x)).sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n()];
        let mut loc = Local::default();
        for t in &self.objective {
            t.eval(x, false, &mut loc);
            for (k, &v) in loc.vars.iter().enumerate() {
                g[v] += loc.grad[k];
            }
        }
        g
    }

    pub fn constraints(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.value(x)).collect()
    }

    /// Jacobian as `(row, col, value)` triplets, merged per row and sorted by
    /// column; structurally nonzero entries are kept even when zero.
    pub fn jacobian(&self, x: &[f64]) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        let mut loc = Local::default();
        for (i, r) in self.rows.iter().enumerate() {
            let vars = r.vars();
            let mut vals = vec![0.0; vars.len()];
            for t in &r.terms {
                t.eval(x, false, &mut loc);
                for (k, &v) in loc.vars.iter().enumerate() {
                    let pos = vars.binary_search(&v).expect("term var in row pattern");
                    vals[pos] += loc.grad[k];
                }
            }
            out.extend(vars.into_iter().zip(vals).map(|(j, v)| (i, j, v)));
        }
        out
    }

    /// Largest violation of row and variable bounds.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for (r, c) in self.rows.iter().zip(self.constraints(x)) {
            v = v.max(r.lb - c).max(c - r.ub);
        }
        for i in 0..self.n() {
            v = v.max(self.x_lb[i] - x[i]).max(x[i] - self.x_ub[i]);
        }
        v
    }

    /// Tag of the row with the largest violation.
    pub fn worst_row(&self, x: &[f64]) -> Option<(String, f64)> {
        self.rows
            .iter()
            .zip(self.constraints(x))
            .map(|(r, c)| (r.tag.clone(), (r.lb - c).max(c - r.ub).max(0.0)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Checks dimensions and term indices.
    pub fn check(&self) -> Result<()> {
        let n = self.n();
        for len in [self.x_ub.len(), self.x0.len(), self.var_names.len(), self.var_stage.len()] {
            if len != n {
                return Err(Error::Dimension { expected: n, got: len });
            }
        }
        let terms = self.objective.iter().chain(self.rows.iter().flat_map(|r| r.terms.iter()));
        for t in terms {
            if let Some(&v) = t.vars().iter().find(|&&v| v >= n) {
                return Err(Error::Dimension { expected: n, got: v + 1 });
            }
        }
        for (i, (l, u)) in self.x_lb.iter().zip(&self.x_ub).enumerate() {
            if !(l <= u) {
                return Err(Error::Infeasible(format!("variable {} has empty bounds [{l}, {u}]", self.var_names[i])));
            }
        }
        Ok(())
    }

    /// Writes the program in sparse triplet text form:
    ///
    /// ```text
    /// nlp <n> <m> <nnz>
    /// var <index> <lb> <ub> <x0> <name>
    /// row <index> <lb> <ub> <tag>
    /// jac <row> <col> <value>
    /// ```
    ///
    /// Jacobian values are taken at `x`.
    pub fn write_triplets<W: Write>(&self, x: &[f64], w: &mut W) -> Result<()> {
        let jac = self.jacobian(x);
        writeln!(w, "nlp {} {} {}", self.n(), self.m(), jac.len())?;
        for i in 0..self.n() {
            writeln!(w, "var {i} {:e} {:e} {:e} {}", self.x_lb[i], self.x_ub[i], self.x0[i], self.var_names[i])?;
        }
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(w, "row {i} {:e} {:e} {}", r.lb - r.offset, r.ub - r.offset, r.tag)?;
        }
        for (i, j, v) in jac {
            writeln!(w, "jac {i} {j} {v:e}")?;
        }
        Ok(())
    }
}

/// Worst relative mismatch between the analytic Jacobian and central
/// differences with step `h`, as `(row tag, column, analytic, numeric)`.
pub fn jacobian_fd_mismatch(nlp: &SparseNlp, x: &[f64], h: f64, rtol: f64) -> Vec<(String, usize, f64, f64)> {
    let jac = nlp.jacobian(x);
    let mut bad = Vec::new();
    let mut xp = x.to_vec();
    for (i, j, a) in jac {
        let row = &nlp.rows[i];
        let step = h * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        let fp = row.value(&xp);
        xp[j] = x[j] - step;
        let fm = row.value(&xp);
        xp[j] = x[j];
        let num = (fp - fm) / (2.0 * step);
        let scale = a.abs().max(num.abs()).max(1.0);
        if (a - num).abs() > rtol * scale {
            bad.push((row.tag.clone(), j, a, num));
        }
    }
    bad
}
