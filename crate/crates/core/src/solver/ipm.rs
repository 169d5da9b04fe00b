//! Primal-dual interior point method with a filter line search.
//!
//! Inequality rows get slack variables that are condensed out of the Newton
//! system, fixed variables (`lb == ub`) are removed, and the remaining
//! quasi-definite KKT matrix is ordered by mesh stage and factorized with
//! the envelope LDLᵀ. Wrong inertia is repaired by a primal diagonal shift.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::envelope::Envelope;
use super::kkt::{kkt_residual, KktResidual};
use crate::error::{Error, Result};
use crate::nlp::{Local, SparseNlp, GLOBAL_STAGE};

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Scaled KKT tolerance.
    pub tol: f64,
    pub mu_init: f64,
    /// Relative distance an initial point is pushed away from its bounds.
    pub bound_push: f64,
    /// Restoration iterations allowed per call.
    pub max_restoration: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iter: 3000, tol: 1e-6, mu_init: 0.1, bound_push: 1e-2, max_restoration: 200 }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Options("tolerance must be positive".into()));
        }
        if !(self.mu_init > 0.0) || !(self.bound_push > 0.0 && self.bound_push < 0.5) {
            return Err(Error::Options("barrier parameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    /// Restoration converged to a point of nonzero constraint violation.
    Infeasible,
    RestorationFailed,
    NumericalFailure,
}

/// One line of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub inf_pr: f64,
    pub inf_du: f64,
    pub mu: f64,
    pub alpha_pr: f64,
    pub alpha_du: f64,
    pub step_norm: f64,
    pub reg: f64,
    pub restoration: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NlpResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// Row multipliers; positive when the upper row bound is active.
    pub y: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt: KktResidual,
    pub max_violation: f64,
    /// Tag of the worst violated row, if any row is violated.
    pub worst_row: Option<String>,
    pub log: Vec<IterRecord>,
}

impl NlpResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// Writes the iteration log as line-delimited JSON.
    pub fn write_log<W: Write>(&self, w: &mut W) -> Result<()> {
        for rec in &self.log {
            let line = serde_json::to_string(rec).map_err(|e| Error::Solver(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

struct Layout {
    free: Vec<usize>,
    fpos: Vec<usize>,
    row_vars: Vec<Vec<usize>>,
    ineq: Vec<bool>,
    kv: Vec<usize>,
    kr: Vec<usize>,
    env: Envelope,
}

impl Layout {
    fn new(nlp: &SparseNlp) -> Self {
        let n = nlp.n();
        let m = nlp.m();
        let mut free = Vec::new();
        let mut fpos = vec![NONE; n];
        for i in 0..n {
            if nlp.x_lb[i] != nlp.x_ub[i] {
                fpos[i] = free.len();
                free.push(i);
            }
        }
        let row_vars: Vec<Vec<usize>> = nlp.rows.iter().map(|r| r.vars()).collect();
        let ineq: Vec<bool> = nlp.rows.iter().map(|r| !r.is_equality()).collect();

        // order: by stage, variables before rows of the same stage
        let mut keys: Vec<(usize, u8, usize, bool)> = Vec::with_capacity(free.len() + m);
        for (p, &v) in free.iter().enumerate() {
            keys.push((nlp.var_stage[v], 0, p, true));
        }
        for (i, vars) in row_vars.iter().enumerate() {
            let mut stage = 0;
            let mut any_local = false;
            let mut any_global = false;
            for &v in vars {
                if fpos[v] == NONE {
                    continue;
                }
                let st = nlp.var_stage[v];
                if st == GLOBAL_STAGE {
                    any_global = true;
                } else {
                    any_local = true;
                    stage = stage.max(st);
                }
            }
            if !any_local && any_global {
                stage = GLOBAL_STAGE;
            }
            keys.push((stage, 1, i, false));
        }
        keys.sort_by_key(|k| (k.0, k.1, k.2));
        let mut kv = vec![0; free.len()];
        let mut kr = vec![0; m];
        for (k, key) in keys.iter().enumerate() {
            if key.3 {
                kv[key.2] = k;
            } else {
                kr[key.2] = k;
            }
        }

        let dim = free.len() + m;
        let mut entries = Vec::new();
        let mut pairs = Vec::new();
        for t in &nlp.objective {
            t.hessian_pairs(&mut pairs);
        }
        for r in &nlp.rows {
            for t in &r.terms {
                t.hessian_pairs(&mut pairs);
            }
        }
        for (a, b) in pairs {
            if fpos[a] != NONE && fpos[b] != NONE {
                entries.push((kv[fpos[a]], kv[fpos[b]]));
            }
        }
        for (i, vars) in row_vars.iter().enumerate() {
            for &v in vars {
                if fpos[v] != NONE {
                    entries.push((kr[i], kv[fpos[v]]));
                }
            }
        }
        let env = Envelope::from_pattern(dim, entries);
        Self { free, fpos, row_vars, ineq, kv, kr, env }
    }
}

struct Eval {
    f: f64,
    g: Vec<f64>,
    c: Vec<f64>,
    jac: Vec<Vec<f64>>,
}

fn evaluate(nlp: &SparseNlp, lay: &Layout, x: &[f64], loc: &mut Local) -> Eval {
    let f = nlp.objective(x);
    let g = nlp.gradient(x);
    let mut c = Vec::with_capacity(nlp.m());
    let mut jac = Vec::with_capacity(nlp.m());
    for (i, r) in nlp.rows.iter().enumerate() {
        let vars = &lay.row_vars[i];
        let mut vals = vec![0.0; vars.len()];
        let mut val = r.offset;
        for t in &r.terms {
            t.eval(x, false, loc);
            val += loc.value;
            for (k, &v) in loc.vars.iter().enumerate() {
                let pos = vars.binary_search(&v).expect("row pattern");
                vals[pos] += loc.grad[k];
            }
        }
        c.push(val);
        jac.push(vals);
    }
    Eval { f, g, c, jac }
}

/// Interior point iterate.
#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    s: Vec<f64>,
    y: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    vl: Vec<f64>,
    vu: Vec<f64>,
}

struct Bounds {
    l: Vec<f64>,
    u: Vec<f64>,
    cl: Vec<f64>,
    cu: Vec<f64>,
    hl: Vec<bool>,
    hu: Vec<bool>,
    hsl: Vec<bool>,
    hsu: Vec<bool>,
}

struct Solver<'a> {
    nlp: &'a SparseNlp,
    opts: SolveOptions,
    lay: Layout,
    b: Bounds,
    loc: Local,
    mu: f64,
    tau: f64,
    reg_last: f64,
    filter: Vec<(f64, f64)>,
    theta_max: f64,
    theta_min: f64,
    log: Vec<IterRecord>,
}

struct Step {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dy: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
    dvl: Vec<f64>,
    dvu: Vec<f64>,
}

/// Factorized Newton matrix together with the data needed for refinement.
struct Factor {
    env: Envelope,
    orig: Envelope,
    dc: f64,
    reg: f64,
    sig_s: Vec<f64>,
}

const KAPPA_EPS: f64 = 10.0;
const KAPPA_SIGMA: f64 = 1e10;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const ETA_PHI: f64 = 1e-4;
const S_PHI: f64 = 2.3;
const S_THETA: f64 = 1.1;
const DELTA_SWITCH: f64 = 1.0;
const DC_BASE: f64 = 1e-11;

impl<'a> Solver<'a> {
    fn slack_l(&self, p: &Point, i: usize) -> f64 {
        p.x[i] - self.b.l[i]
    }

    fn slack_u(&self, p: &Point, i: usize) -> f64 {
        self.b.u[i] - p.x[i]
    }

    fn hat_c(&self, c: &[f64], s: &[f64]) -> Vec<f64> {
        c.iter()
            .enumerate()
            .map(|(i, &ci)| if self.lay.ineq[i] { ci - s[i] } else { ci - self.b.cl[i] })
            .collect()
    }

    fn theta(&self, c: &[f64], s: &[f64]) -> f64 {
        self.hat_c(c, s).iter().map(|v| v.abs()).sum()
    }

    fn barrier(&self, f: f64, x: &[f64], s: &[f64]) -> f64 {
        let b = &self.b;
        let mut phi = f;
        for &i in &self.lay.free {
            if b.hl[i] {
                phi -= self.mu * (x[i] - b.l[i]).ln();
            }
            if b.hu[i] {
                phi -= self.mu * (b.u[i] - x[i]).ln();
            }
        }
        for i in 0..s.len() {
            if b.hsl[i] {
                phi -= self.mu * (s[i] - b.cl[i]).ln();
            }
            if b.hsu[i] {
                phi -= self.mu * (b.cu[i] - s[i]).ln();
            }
        }
        phi
    }

    /// Scaled optimality error for barrier parameter `mu`.
    fn error(&self, p: &Point, ev: &Eval, mu: f64) -> (f64, f64, f64) {
        let b = &self.b;
        let gl = self.lagrangian_grad(p, ev);
        let mut inf_du: f64 = 0.0;
        for &i in &self.lay.free {
            inf_du = inf_du.max((gl[i] - p.zl[i] + p.zu[i]).abs());
        }
        let mut sum_mult = 0.0;
        let mut cnt = 0usize;
        let mut sum_z = 0.0;
        let mut cnt_z = 0usize;
        let mut comp: f64 = 0.0;
        for i in 0..p.y.len() {
            sum_mult += p.y[i].abs();
            cnt += 1;
            if self.lay.ineq[i] {
                inf_du = inf_du.max((-p.y[i] - p.vl[i] + p.vu[i]).abs());
                if b.hsl[i] {
                    comp = comp.max(((p.s[i] - b.cl[i]) * p.vl[i] - mu).abs());
                    sum_z += p.vl[i];
                    cnt_z += 1;
                }
                if b.hsu[i] {
                    comp = comp.max(((b.cu[i] - p.s[i]) * p.vu[i] - mu).abs());
                    sum_z += p.vu[i];
                    cnt_z += 1;
                }
            }
        }
        for &i in &self.lay.free {
            if b.hl[i] {
                comp = comp.max((self.slack_l(p, i) * p.zl[i] - mu).abs());
                sum_z += p.zl[i];
                cnt_z += 1;
            }
            if b.hu[i] {
                comp = comp.max((self.slack_u(p, i) * p.zu[i] - mu).abs());
                sum_z += p.zu[i];
                cnt_z += 1;
            }
        }
        let smax = 100.0;
        let sd = ((sum_mult + sum_z) / ((cnt + cnt_z).max(1) as f64)).max(smax) / smax;
        let sc = (sum_z / (cnt_z.max(1) as f64)).max(smax) / smax;
        let inf_pr = self.hat_c(&ev.c, &p.s).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (inf_du / sd, inf_pr, comp / sc)
    }

    /// ∇f + Jᵀy over all variables.
    fn lagrangian_grad(&self, p: &Point, ev: &Eval) -> Vec<f64> {
        let mut g = ev.g.clone();
        for (i, vars) in self.lay.row_vars.iter().enumerate() {
            if p.y[i] == 0.0 {
                continue;
            }
            for (k, &v) in vars.iter().enumerate() {
                g[v] += p.y[i] * ev.jac[i][k];
            }
        }
        g
    }

    fn sigma(&self, p: &Point) -> (Vec<f64>, Vec<f64>) {
        let b = &self.b;
        let mut sx = vec![0.0; self.lay.free.len()];
        for (k, &i) in self.lay.free.iter().enumerate() {
            if b.hl[i] {
                sx[k] += p.zl[i] / self.slack_l(p, i);
            }
            if b.hu[i] {
                sx[k] += p.zu[i] / self.slack_u(p, i);
            }
        }
        let m = p.s.len();
        let mut ss = vec![0.0; m];
        for i in 0..m {
            if !self.lay.ineq[i] {
                continue;
            }
            if b.hsl[i] {
                ss[i] += p.vl[i] / (p.s[i] - b.cl[i]);
            }
            if b.hsu[i] {
                ss[i] += p.vu[i] / (b.cu[i] - p.s[i]);
            }
        }
        (sx, ss)
    }

    /// Assembles `[W + Σx + δw, Jᵀ; J, −D]`.
    fn assemble(&mut self, p: &Point, ev: &Eval, hess: bool, sx: &[f64], ss: &[f64], reg: f64, dc: f64) -> Envelope {
        let mut env = self.lay.env.clone();
        env.clear();
        let lay = &self.lay;
        for (k, &s) in sx.iter().enumerate() {
            env.add(lay.kv[k], lay.kv[k], s + reg);
        }
        if hess {
            let add_term = |t: &crate::nlp::Term, w: f64, env: &mut Envelope, loc: &mut Local| {
                t.eval(&p.x, true, loc);
                let n = loc.vars.len();
                for a in 0..n {
                    let fa = lay.fpos[loc.vars[a]];
                    if fa == NONE {
                        continue;
                    }
                    for bb in 0..=a {
                        let fb = lay.fpos[loc.vars[bb]];
                        if fb == NONE {
                            continue;
                        }
                        let h = loc.hess[a * n + bb];
                        if h != 0.0 {
                            env.add(lay.kv[fa], lay.kv[fb], w * h);
                        }
                    }
                }
            };
            for t in &self.nlp.objective {
                if matches!(t, crate::nlp::Term::Linear(_)) {
                    continue;
                }
                add_term(t, 1.0, &mut env, &mut self.loc);
            }
            for (i, r) in self.nlp.rows.iter().enumerate() {
                if p.y[i] == 0.0 {
                    continue;
                }
                for t in &r.terms {
                    if matches!(t, crate::nlp::Term::Linear(_)) {
                        continue;
                    }
                    add_term(t, p.y[i], &mut env, &mut self.loc);
                }
            }
        }
        for (i, vars) in lay.row_vars.iter().enumerate() {
            for (k, &v) in vars.iter().enumerate() {
                let f = lay.fpos[v];
                if f != NONE {
                    env.add(lay.kr[i], lay.kv[f], ev.jac[i][k]);
                }
            }
            let d = if lay.ineq[i] { 1.0 / (ss[i] + reg) + dc } else { dc };
            env.add(lay.kr[i], lay.kr[i], -d);
        }
        env
    }

    /// Factorizes with inertia correction.
    fn factorize(&mut self, p: &Point, ev: &Eval, sx: &[f64], ss: &[f64]) -> Option<Factor> {
        let nf = self.lay.free.len();
        let mut reg = 0.0;
        let mut dc = DC_BASE;
        let mut tries = 0;
        loop {
            let orig = self.assemble(p, ev, true, sx, ss, reg, dc);
            let mut env = orig.clone();
            match env.factor() {
                Some(inr) if inr.positive == nf => {
                    if reg > 0.0 {
                        self.reg_last = reg;
                    }
                    return Some(Factor { env, orig, dc, reg, sig_s: ss.to_vec() });
                }
                Some(_) => {}
                None => dc = dc.max(1e-8 * self.mu.powf(0.25)),
            }
            tries += 1;
            if tries > 60 {
                return None;
            }
            reg = if reg == 0.0 {
                if self.reg_last == 0.0 {
                    1e-4
                } else {
                    (self.reg_last / 3.0).max(1e-20)
                }
            } else if self.reg_last == 0.0 {
                reg * 100.0
            } else {
                reg * 8.0
            };
            if reg > 1e40 {
                return None;
            }
        }
    }

    /// Solves `K [dx; dy] = rhs` with iterative refinement against the
    /// matrix without the dual regularization of equality rows.
    fn kkt_solve(&self, fac: &Factor, rhs: &[f64]) -> Vec<f64> {
        let dim = rhs.len();
        let mut sol = rhs.to_vec();
        fac.env.solve(&mut sol);
        let mut r = vec![0.0; dim];
        let norm_rhs = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        for _ in 0..5 {
            fac.orig.mul(&sol, &mut r);
            for i in 0..self.lay.kr.len() {
                if !self.lay.ineq[i] {
                    let k = self.lay.kr[i];
                    r[k] += fac.dc * sol[k];
                }
            }
            let mut worst: f64 = 0.0;
            for i in 0..dim {
                r[i] = rhs[i] - r[i];
                worst = worst.max(r[i].abs());
            }
            if worst <= 1e-14 * norm_rhs {
                break;
            }
            fac.env.solve(&mut r);
            for i in 0..dim {
                sol[i] += r[i];
            }
        }
        sol
    }

    /// Newton direction for the barrier problem. With `feasibility_only`
    /// the objective and barrier gradients are dropped (restoration).
    fn direction(&self, p: &Point, ev: &Eval, fac: &Factor, cvec: &[f64], feasibility_only: bool) -> Step {
        let lay = &self.lay;
        let b = &self.b;
        let nf = lay.free.len();
        let m = p.y.len();
        let mu = self.mu;
        let gl = if feasibility_only { vec![0.0; self.nlp.n()] } else { self.lagrangian_grad(p, ev) };
        let mut rhs = vec![0.0; nf + m];
        for (k, &i) in lay.free.iter().enumerate() {
            let mut r = gl[i];
            if !feasibility_only {
                if b.hl[i] {
                    r -= mu / self.slack_l(p, i);
                }
                if b.hu[i] {
                    r += mu / self.slack_u(p, i);
                }
            }
            rhs[lay.kv[k]] = -r;
        }
        let mut rs = vec![0.0; m];
        let sig_s: Vec<f64> = fac.sig_s.iter().map(|s| s + fac.reg).collect();
        for i in 0..m {
            let mut ci = cvec[i];
            if lay.ineq[i] {
                if !feasibility_only {
                    let mut r = -p.y[i];
                    if b.hsl[i] {
                        r -= mu / (p.s[i] - b.cl[i]);
                    }
                    if b.hsu[i] {
                        r += mu / (b.cu[i] - p.s[i]);
                    }
                    rs[i] = r;
                }
                ci += rs[i] / sig_s[i];
            }
            rhs[lay.kr[i]] = -ci;
        }
        let sol = self.kkt_solve(fac, &rhs);
        let mut dx = vec![0.0; self.nlp.n()];
        for (k, &i) in lay.free.iter().enumerate() {
            dx[i] = sol[lay.kv[k]];
        }
        let mut dy = vec![0.0; m];
        let mut ds = vec![0.0; m];
        for i in 0..m {
            dy[i] = sol[lay.kr[i]];
            if lay.ineq[i] {
                ds[i] = (dy[i] - rs[i]) / sig_s[i];
            }
        }
        let mut dzl = vec![0.0; dx.len()];
        let mut dzu = vec![0.0; dx.len()];
        for &i in &lay.free {
            if b.hl[i] {
                let sl = self.slack_l(p, i);
                dzl[i] = mu / sl - p.zl[i] - p.zl[i] / sl * dx[i];
            }
            if b.hu[i] {
                let su = self.slack_u(p, i);
                dzu[i] = mu / su - p.zu[i] + p.zu[i] / su * dx[i];
            }
        }
        let mut dvl = vec![0.0; m];
        let mut dvu = vec![0.0; m];
        for i in 0..m {
            if b.hsl[i] {
                let sl = p.s[i] - b.cl[i];
                dvl[i] = mu / sl - p.vl[i] - p.vl[i] / sl * ds[i];
            }
            if b.hsu[i] {
                let su = b.cu[i] - p.s[i];
                dvu[i] = mu / su - p.vu[i] + p.vu[i] / su * ds[i];
            }
        }
        Step { dx, ds, dy, dzl, dzu, dvl, dvu }
    }

    fn max_primal_step(&self, p: &Point, d: &Step) -> f64 {
        let b = &self.b;
        let mut a: f64 = 1.0;
        for &i in &self.lay.free {
            if b.hl[i] && d.dx[i] < 0.0 {
                a = a.min(-self.tau * self.slack_l(p, i) / d.dx[i]);
            }
            if b.hu[i] && d.dx[i] > 0.0 {
                a = a.min(self.tau * self.slack_u(p, i) / d.dx[i]);
            }
        }
        for i in 0..p.s.len() {
            if b.hsl[i] && d.ds[i] < 0.0 {
                a = a.min(-self.tau * (p.s[i] - b.cl[i]) / d.ds[i]);
            }
            if b.hsu[i] && d.ds[i] > 0.0 {
                a = a.min(self.tau * (b.cu[i] - p.s[i]) / d.ds[i]);
            }
        }
        a
    }

    fn max_dual_step(&self, p: &Point, d: &Step) -> f64 {
        let mut a: f64 = 1.0;
        let mut chk = |z: &[f64], dz: &[f64]| {
            for i in 0..z.len() {
                if dz[i] < 0.0 && z[i] > 0.0 {
                    a = a.min(-self.tau * z[i] / dz[i]);
                }
            }
        };
        chk(&p.zl, &d.dzl);
        chk(&p.zu, &d.dzu);
        chk(&p.vl, &d.dvl);
        chk(&p.vu, &d.dvu);
        a
    }

    fn trial(&self, p: &Point, d: &Step, alpha: f64) -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = p.x.iter().zip(&d.dx).map(|(a, b)| a + alpha * b).collect();
        let s: Vec<f64> = p.s.iter().zip(&d.ds).map(|(a, b)| a + alpha * b).collect();
        (x, s)
    }

    fn barrier_slope(&self, p: &Point, ev: &Eval, d: &Step) -> f64 {
        let b = &self.b;
        let mu = self.mu;
        let mut g = 0.0;
        for &i in &self.lay.free {
            let mut gi = ev.g[i];
            if b.hl[i] {
                gi -= mu / self.slack_l(p, i);
            }
            if b.hu[i] {
                gi += mu / self.slack_u(p, i);
            }
            g += gi * d.dx[i];
        }
        for i in 0..p.s.len() {
            let mut gi = 0.0;
            if b.hsl[i] {
                gi -= mu / (p.s[i] - b.cl[i]);
            }
            if b.hsu[i] {
                gi += mu / (b.cu[i] - p.s[i]);
            }
            g += gi * d.ds[i];
        }
        g
    }

    fn filter_accepts(&self, theta: f64, phi: f64) -> bool {
        self.filter.iter().all(|&(t, f)| theta < t || phi < f)
    }

    /// Keeps bound multipliers within a factor of their primal-dual values.
    fn reset_duals(&self, p: &mut Point) {
        let b = &self.b;
        let mu = self.mu;
        let clamp = |z: f64, sl: f64| z.max(mu / (KAPPA_SIGMA * sl)).min(KAPPA_SIGMA * mu / sl);
        for &i in &self.lay.free {
            if b.hl[i] {
                p.zl[i] = clamp(p.zl[i], p.x[i] - b.l[i]);
            }
            if b.hu[i] {
                p.zu[i] = clamp(p.zu[i], b.u[i] - p.x[i]);
            }
        }
        for i in 0..p.s.len() {
            if b.hsl[i] {
                p.vl[i] = clamp(p.vl[i], p.s[i] - b.cl[i]);
            }
            if b.hsu[i] {
                p.vu[i] = clamp(p.vu[i], b.cu[i] - p.s[i]);
            }
        }
    }

    /// Gauss–Newton steps on the constraint violation inside the barrier
    /// interior. Returns the status on failure.
    fn restore(&mut self, p: &mut Point, iter: &mut usize) -> std::result::Result<(), SolveStatus> {
        let mut ev = evaluate(self.nlp, &self.lay, &p.x, &mut self.loc);
        let theta0 = self.theta(&ev.c, &p.s);
        let mut stalls = 0;
        for _ in 0..self.opts.max_restoration {
            *iter += 1;
            let theta = self.theta(&ev.c, &p.s);
            let (sx, ss) = self.sigma(p);
            let prox = 1e-4 * theta.min(1.0).max(1e-8);
            let zeros = vec![0.0; p.y.len()];
            let y_keep = std::mem::replace(&mut p.y, zeros);
            let orig = self.assemble(p, &ev, false, &sx, &ss, prox, DC_BASE);
            p.y = y_keep;
            let mut env = orig.clone();
            if env.factor().is_none() {
                return Err(SolveStatus::NumericalFailure);
            }
            let fac = Factor { env, orig, dc: DC_BASE, reg: prox, sig_s: ss.clone() };
            let chat = self.hat_c(&ev.c, &p.s);
            let d = self.direction(p, &ev, &fac, &chat, true);
            let amax = self.max_primal_step(p, &d);
            let mut alpha = amax;
            let mut accepted = None;
            while alpha > 1e-12 {
                let (xt, st) = self.trial(p, &d, alpha);
                let et = evaluate(self.nlp, &self.lay, &xt, &mut self.loc);
                let tt = self.theta(&et.c, &st);
                if tt <= (1.0 - 1e-4 * alpha) * theta {
                    accepted = Some((xt, st, et, tt));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((xt, st, et, tt)) = accepted else {
                return Err(SolveStatus::Infeasible);
            };
            self.log.push(IterRecord {
                iter: *iter,
                objective: et.f,
                inf_pr: self.hat_c(&et.c, &st).iter().fold(0.0f64, |a, v| a.max(v.abs())),
                inf_du: f64::NAN,
                mu: self.mu,
                alpha_pr: alpha,
                alpha_du: 0.0,
                step_norm: d.dx.iter().fold(0.0f64, |a, v| a.max(v.abs())) * alpha,
                reg: prox,
                restoration: true,
            });
            p.x = xt;
            p.s = st;
            ev = et;
            self.reset_duals(p);
            let phi = self.barrier(ev.f, &p.x, &p.s);
            if tt <= 0.9 * theta0 && self.filter_accepts(tt, phi) {
                p.y.iter_mut().for_each(|v| *v = 0.0);
                return Ok(());
            }
            if tt > (1.0 - 1e-6) * theta {
                stalls += 1;
                if stalls >= 5 {
                    return Err(SolveStatus::Infeasible);
                }
            } else {
                stalls = 0;
            }
            if tt < 1e-3 * self.opts.tol && self.filter.is_empty() {
                return Ok(());
            }
        }
        Err(SolveStatus::RestorationFailed)
    }
}

/// Solves the program from its stored initial guess.
pub fn solve(nlp: &SparseNlp, opts: &SolveOptions) -> Result<NlpResult> {
    solve_from(nlp, &nlp.x0, opts)
}

/// Solves the program from the primal point `x0`.
pub fn solve_from(nlp: &SparseNlp, x0: &[f64], opts: &SolveOptions) -> Result<NlpResult> {
    nlp.check()?;
    opts.validate()?;
    if x0.len() != nlp.n() {
        return Err(Error::Dimension { expected: nlp.n(), got: x0.len() });
    }
    let n = nlp.n();
    let m = nlp.m();
    let lay = Layout::new(nlp);
    let mut hl = vec![false; n];
    let mut hu = vec![false; n];
    for &i in &lay.free {
        hl[i] = nlp.x_lb[i].is_finite();
        hu[i] = nlp.x_ub[i].is_finite();
    }
    let cl: Vec<f64> = nlp.rows.iter().map(|r| r.lb).collect();
    let cu: Vec<f64> = nlp.rows.iter().map(|r| r.ub).collect();
    let hsl: Vec<bool> = (0..m).map(|i| lay.ineq[i] && cl[i].is_finite()).collect();
    let hsu: Vec<bool> = (0..m).map(|i| lay.ineq[i] && cu[i].is_finite()).collect();
    let b = Bounds { l: nlp.x_lb.clone(), u: nlp.x_ub.clone(), cl, cu, hl, hu, hsl, hsu };

    let push = |v: f64, lo: f64, hi: f64, has_lo: bool, has_hi: bool| -> f64 {
        let k = opts.bound_push;
        let mut v = v;
        if has_lo && has_hi {
            let pl = (k * lo.abs().max(1.0)).min(k * (hi - lo));
            let pu = (k * hi.abs().max(1.0)).min(k * (hi - lo));
            v = v.max(lo + pl).min(hi - pu);
        } else if has_lo {
            v = v.max(lo + k * lo.abs().max(1.0));
        } else if has_hi {
            v = v.min(hi - k * hi.abs().max(1.0));
        }
        v
    };
    let mut x = x0.to_vec();
    for i in 0..n {
        if nlp.x_lb[i] == nlp.x_ub[i] {
            x[i] = nlp.x_lb[i];
        } else {
            x[i] = push(x[i], b.l[i], b.u[i], b.hl[i], b.hu[i]);
        }
    }
    let c0 = nlp.constraints(&x);
    let s: Vec<f64> = (0..m)
        .map(|i| if lay.ineq[i] { push(c0[i], b.cl[i], b.cu[i], b.hsl[i], b.hsu[i]) } else { 0.0 })
        .collect();
    let ones = |mask: &[bool]| mask.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let mut p = Point {
        x,
        s,
        y: vec![0.0; m],
        zl: ones(&b.hl),
        zu: ones(&b.hu),
        vl: ones(&b.hsl),
        vu: ones(&b.hsu),
    };

    let mut sv = Solver {
        nlp,
        opts: *opts,
        lay,
        b,
        loc: Local::default(),
        mu: opts.mu_init,
        tau: 0.99f64.max(1.0 - opts.mu_init),
        reg_last: 0.0,
        filter: Vec::new(),
        theta_max: 0.0,
        theta_min: 0.0,
        log: Vec::new(),
    };

    let mut ev = evaluate(nlp, &sv.lay, &p.x, &mut sv.loc);
    // least-squares multiplier estimate
    {
        let nf = sv.lay.free.len();
        let sx = vec![1.0; nf];
        let ss = vec![1.0; m];
        let orig = sv.assemble(&p, &ev, false, &sx, &ss, 0.0, 1e-8);
        let mut env = orig.clone();
        if env.factor().map(|i| i.positive == nf).unwrap_or(false) {
            let mut rhs = vec![0.0; nf + m];
            for (k, &i) in sv.lay.free.iter().enumerate() {
                rhs[sv.lay.kv[k]] = -(ev.g[i] - p.zl[i] + p.zu[i]);
            }
            env.solve(&mut rhs);
            let y: Vec<f64> = (0..m).map(|i| rhs[sv.lay.kr[i]]).collect();
            if y.iter().all(|v| v.abs() <= 1e3) {
                p.y = y;
            }
        }
    }

    let theta0 = sv.theta(&ev.c, &p.s);
    sv.theta_max = 1e4 * theta0.max(1.0);
    sv.theta_min = 1e-4 * theta0.max(1.0);

    let mut status = SolveStatus::MaxIterations;
    let mut iter = 0;
    let mut alpha_pr = 0.0;
    let mut alpha_du = 0.0;
    let mut step_norm = 0.0;
    let mut reg = 0.0;
    let mut bad_steps = 0;
    while iter <= opts.max_iter {
        let (du, pr, co) = sv.error(&p, &ev, 0.0);
        sv.log.push(IterRecord {
            iter,
            objective: ev.f,
            inf_pr: pr,
            inf_du: du,
            mu: sv.mu,
            alpha_pr,
            alpha_du,
            step_norm,
            reg,
            restoration: false,
        });
        if du.max(pr).max(co) <= opts.tol {
            status = SolveStatus::Converged;
            break;
        }
        if iter == opts.max_iter {
            break;
        }
        // barrier parameter update
        loop {
            let (du, pr, co) = sv.error(&p, &ev, sv.mu);
            let mu_min = opts.tol / 10.0;
            if du.max(pr).max(co) > KAPPA_EPS * sv.mu || sv.mu <= mu_min {
                break;
            }
            sv.mu = mu_min.max((0.2 * sv.mu).min(sv.mu.powf(1.5)));
            sv.tau = 0.99f64.max(1.0 - sv.mu);
            sv.filter.clear();
        }

        iter += 1;
        let (sx, ss) = sv.sigma(&p);
        let Some(fac) = sv.factorize(&p, &ev, &sx, &ss) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        reg = fac.reg;
        let chat = sv.hat_c(&ev.c, &p.s);
        let d = sv.direction(&p, &ev, &fac, &chat, false);
        let amax = sv.max_primal_step(&p, &d);

        let theta = chat.iter().map(|v| v.abs()).sum::<f64>();
        let phi = sv.barrier(ev.f, &p.x, &p.s);
        let slope = sv.barrier_slope(&p, &ev, &d);
        let xnorm = p.x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let dnorm = d.dx.iter().chain(&d.ds).fold(0.0f64, |a, v| a.max(v.abs()));
        let tiny = dnorm <= 10.0 * f64::EPSILON * (1.0 + xnorm);

        let switching = |alpha: f64| slope < 0.0 && alpha * (-slope).powf(S_PHI) > DELTA_SWITCH * theta.powf(S_THETA);
        let alpha_min = if slope < 0.0 {
            0.05 * GAMMA_THETA
                .min(GAMMA_PHI * theta / -slope)
                .min(DELTA_SWITCH * theta.powf(S_THETA) / (-slope).powf(S_PHI))
        } else {
            0.05 * GAMMA_THETA
        };

        let mut alpha = amax;
        let mut accepted: Option<(Vec<f64>, Vec<f64>, Eval, bool, Option<Step>)> = None;
        let mut first = true;
        loop {
            if tiny {
                let (xt, st) = sv.trial(&p, &d, alpha);
                let et = evaluate(nlp, &sv.lay, &xt, &mut sv.loc);
                accepted = Some((xt, st, et, true, None));
                break;
            }
            let (xt, st) = sv.trial(&p, &d, alpha);
            let et = evaluate(nlp, &sv.lay, &xt, &mut sv.loc);
            let tt = sv.theta(&et.c, &st);
            let ft = sv.barrier(et.f, &xt, &st);
            let check = |tt: f64, ft: f64, alpha: f64, sv: &Solver| -> Option<bool> {
                if !(tt.is_finite() && ft.is_finite()) || tt > sv.theta_max || !sv.filter_accepts(tt, ft) {
                    return None;
                }
                if switching(alpha) && theta <= sv.theta_min {
                    (ft <= phi + ETA_PHI * alpha * slope).then_some(true)
                } else if tt <= (1.0 - GAMMA_THETA) * theta || ft <= phi - GAMMA_PHI * theta {
                    Some(false)
                } else {
                    None
                }
            };
            if let Some(ftype) = check(tt, ft, alpha, &sv) {
                accepted = Some((xt, st, et, ftype, None));
                break;
            }
            if first && tt >= theta && tt.is_finite() {
                // second-order correction
                let cs: Vec<f64> = sv.hat_c(&et.c, &st).iter().zip(&chat).map(|(a, b)| a + alpha * b).collect();
                let dsoc = sv.direction(&p, &ev, &fac, &cs, false);
                let asoc = sv.max_primal_step(&p, &dsoc);
                let (xs, ss2) = sv.trial(&p, &dsoc, asoc);
                let es = evaluate(nlp, &sv.lay, &xs, &mut sv.loc);
                let ts = sv.theta(&es.c, &ss2);
                let fs = sv.barrier(es.f, &xs, &ss2);
                if let Some(ftype) = check(ts, fs, alpha, &sv) {
                    alpha = asoc;
                    accepted = Some((xs, ss2, es, ftype, Some(dsoc)));
                    break;
                }
            }
            first = false;
            alpha *= 0.5;
            if alpha < alpha_min {
                break;
            }
        }

        match accepted {
            Some((xt, st, et, ftype, soc)) => {
                bad_steps = 0;
                if !ftype {
                    sv.filter.push(((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta));
                }
                let d = soc.unwrap_or(d);
                let adual = sv.max_dual_step(&p, &d);
                for i in 0..m {
                    p.y[i] += alpha * d.dy[i];
                    p.vl[i] += adual * d.dvl[i];
                    p.vu[i] += adual * d.dvu[i];
                }
                for i in 0..n {
                    p.zl[i] += adual * d.dzl[i];
                    p.zu[i] += adual * d.dzu[i];
                }
                step_norm = alpha * d.dx.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                p.x = xt;
                p.s = st;
                ev = et;
                sv.reset_duals(&mut p);
                alpha_pr = alpha;
                alpha_du = adual;
            }
            None => {
                bad_steps += 1;
                sv.filter.push(((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta));
                match sv.restore(&mut p, &mut iter) {
                    Ok(()) => {
                        ev = evaluate(nlp, &sv.lay, &p.x, &mut sv.loc);
                        alpha_pr = 0.0;
                        alpha_du = 0.0;
                    }
                    Err(st) => {
                        ev = evaluate(nlp, &sv.lay, &p.x, &mut sv.loc);
                        status = st;
                        break;
                    }
                }
                if bad_steps > 10 {
                    status = SolveStatus::RestorationFailed;
                    break;
                }
            }
        }
    }

    let kkt = kkt_residual(nlp, &p.x, &p.y, &p.zl, &p.zu)?;
    let max_violation = nlp.max_violation(&p.x);
    let worst_row = nlp.worst_row(&p.x).filter(|w| w.1 > 0.0).map(|w| w.0);
    log::debug!("ipm finished: {status:?} after {iter} iterations, f = {}", ev.f);
    Ok(NlpResult {
        status,
        objective: ev.f,
        x: p.x,
        y: p.y,
        z_lower: p.zl,
        z_upper: p.zu,
        iterations: iter,
        kkt,
        max_violation,
        worst_row,
        log: sv.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{Row, Term};

    fn row(terms: Vec<Term>, lb: f64, ub: f64) -> Row {
        Row { terms, offset: 0.0, lb, ub, tag: "r".into() }
    }

    #[test]
    fn box_qp_exact() {
        // min Σ (x_i - t_i)² on [0, 1]: optimum is the clamp of t
        let t = [-0.5, 0.3, 0.8, 1.7];
        let mut nlp = SparseNlp::default();
        for (i, &ti) in t.iter().enumerate() {
            let v = nlp.add_var(format!("x{i}"), 0.0, 1.0, 0.5, i);
            nlp.objective.push(Term::Square { lin: vec![(v, 1.0)], constant: -ti, coef: 1.0 });
        }
        let res = solve(&nlp, &SolveOptions::with_tol(1e-10)).unwrap();
        assert!(res.converged(), "{:?}", res.status);
        for (x, ti) in res.x.iter().zip(t) {
            assert!((x - ti.clamp(0.0, 1.0)).abs() < 1e-8, "{x} vs {ti}");
        }
    }

    #[test]
    fn hs071() {
        // min x0 x3 (x0 + x1 + x2) + x2
        // s.t. x0 x1 x2 x3 ≥ 25, Σ x² = 40, 1 ≤ x ≤ 5
        // products are written through log-free bilinear substitutes
        let mut nlp = SparseNlp::default();
        let x0 = [1.0, 5.0, 5.0, 1.0];
        let v: Vec<usize> = (0..4).map(|i| nlp.add_var(format!("x{i}"), 1.0, 5.0, x0[i], 0)).collect();
        // auxiliaries a = x0 x3, b = x1 x2
        let a = nlp.add_var("a", f64::NEG_INFINITY, f64::INFINITY, 1.0, 0);
        let b = nlp.add_var("b", f64::NEG_INFINITY, f64::INFINITY, 25.0, 0);
        nlp.add_row(row(vec![Term::Linear(vec![(a, 1.0)]), Term::Bilinear { a: v[0], b: v[3], coef: -1.0 }], 0.0, 0.0));
        nlp.add_row(row(vec![Term::Linear(vec![(b, 1.0)]), Term::Bilinear { a: v[1], b: v[2], coef: -1.0 }], 0.0, 0.0));
        nlp.objective.push(Term::Bilinear { a, b: v[0], coef: 1.0 });
        nlp.objective.push(Term::Bilinear { a, b: v[1], coef: 1.0 });
        nlp.objective.push(Term::Bilinear { a, b: v[2], coef: 1.0 });
        nlp.objective.push(Term::Linear(vec![(v[2], 1.0)]));
        nlp.add_row(row(vec![Term::Bilinear { a, b, coef: 1.0 }], 25.0, f64::INFINITY));
        let sq: Vec<Term> = v.iter().map(|&i| Term::Bilinear { a: i, b: i, coef: 1.0 }).collect();
        nlp.add_row(row(sq, 40.0, 40.0));
        let res = solve(&nlp, &SolveOptions::with_tol(1e-9)).unwrap();
        assert!(res.converged(), "{:?}", res.status);
        let want = [1.0, 4.742_999_64, 3.821_149_98, 1.379_408_29];
        for i in 0..4 {
            assert!((res.x[i] - want[i]).abs() < 1e-6, "{:?}", &res.x[..4]);
        }
        assert!((res.objective - 17.014_017_29).abs() < 1e-6);
        assert!(res.kkt.max() < 1e-7, "{:?}", res.kkt);
    }

    #[test]
    fn infeasible_declared() {
        // x0 + x1 = 3 with x ∈ [0, 1]²
        let mut nlp = SparseNlp::default();
        let a = nlp.add_var("a", 0.0, 1.0, 0.5, 0);
        let b = nlp.add_var("b", 0.0, 1.0, 0.5, 0);
        nlp.objective.push(Term::Linear(vec![(a, 1.0)]));
        nlp.add_row(row(vec![Term::Linear(vec![(a, 1.0), (b, 1.0)])], 3.0, 3.0));
        let res = solve(&nlp, &SolveOptions::default()).unwrap();
        assert!(!res.converged());
        assert!(res.max_violation > 0.5, "{}", res.max_violation);
        assert!(res.worst_row.is_some());
    }

    #[test]
    fn deterministic_log() {
        let mut nlp = SparseNlp::default();
        let a = nlp.add_var("a", -2.0, 2.0, 1.0, 0);
        let b = nlp.add_var("b", -2.0, 2.0, 1.0, 1);
        nlp.objective.push(Term::Powers { var: a, terms: vec![(1.0, 4.0)] });
        nlp.objective.push(Term::Square { lin: vec![(a, 1.0), (b, -1.0)], constant: 0.5, coef: 3.0 });
        nlp.add_row(row(vec![Term::Bilinear { a, b, coef: 1.0 }], f64::NEG_INFINITY, 0.2));
        let r1 = solve(&nlp, &SolveOptions::default()).unwrap();
        let r2 = solve(&nlp, &SolveOptions::default()).unwrap();
        let mut l1 = Vec::new();
        let mut l2 = Vec::new();
        r1.write_log(&mut l1).unwrap();
        r2.write_log(&mut l2).unwrap();
        assert_eq!(l1, l2);
        assert!(r1.converged());
    }
}
