//! Direct collocation of an [`OcpProblem`] onto a time mesh.
//!
//! Decision variables are nondimensionalized: powers by `P_max`, rates by
//! `B`, squared distances by 1 km², positions by 1 km, speeds by 10 m/s,
//! thrust by 10 N, buffers by `B·T` and the objective by `P_max·T`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nlp::{CapUser, Chi, Row, SparseNlp, Term, GLOBAL_STAGE};
use crate::ocp::{Objective, OcpProblem};
use crate::solver::{solve_from, NlpResult, SolveOptions, SolveStatus, KktResidual};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Trapezoidal,
    HermiteSimpson,
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trapezoidal" | "trap" => Ok(Scheme::Trapezoidal),
            "hermite_simpson" | "hermite-simpson" | "hs" => Ok(Scheme::HermiteSimpson),
            _ => Err(Error::Options(format!("unsupported scheme `{s}`"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(match self {
            Scheme::Trapezoidal => "trapezoidal",
            Scheme::HermiteSimpson => "hermite_simpson",
        })
    }
}

/// Grid times relative to the problem start, `0 = t₀ < … < t_K = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub times: Vec<f64>,
}

impl Mesh {
    pub fn uniform(horizon: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 || !(horizon > 0.0) {
            return Err(Error::Domain("mesh needs a positive horizon and at least one interval".into()));
        }
        let h = horizon / intervals as f64;
        let mut times: Vec<f64> = (0..=intervals).map(|k| k as f64 * h).collect();
        times[intervals] = horizon;
        Ok(Self { times })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("mesh times must start at 0 and increase strictly".into()));
        }
        Ok(Self { times })
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("nonempty mesh")
    }

    /// Halves every interval.
    pub fn refine(&self) -> Self {
        let mut times = Vec::with_capacity(2 * self.times.len() - 1);
        for w in self.times.windows(2) {
            times.push(w[0]);
            times.push(0.5 * (w[0] + w[1]));
        }
        times.push(self.horizon());
        Self { times }
    }

    /// Whether `t` lies on the grid within `tol`.
    pub fn contains(&self, t: f64, tol: f64) -> bool {
        self.times.iter().any(|&g| (g - t).abs() <= tol)
    }
}

/// Reference values of the nondimensionalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub power: f64,
    pub rate: f64,
    pub chi: f64,
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
    pub thrust: f64,
    pub data: f64,
    pub energy: f64,
}

impl Scales {
    fn for_problem(ocp: &OcpProblem) -> Self {
        Self {
            power: ocp.power_max,
            rate: ocp.bandwidth,
            chi: 1e7,
            position: 1e3,
            speed: 10.0,
            accel: 1.0,
            thrust: 10.0,
            data: ocp.bandwidth * ocp.horizon,
            energy: ocp.power_max * ocp.horizon,
        }
    }
}

/// Variable indices of a node, one entry per collocation point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeVars {
    pub q: Vec<usize>,
    pub v: Vec<usize>,
    pub a: Vec<usize>,
    pub thrust: Vec<usize>,
    pub buffer: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkVars {
    pub p: Vec<usize>,
    pub r: Vec<usize>,
    pub chi: Vec<usize>,
}

/// A transcribed problem together with its variable map.
#[derive(Debug, Clone)]
pub struct Transcription {
    pub nlp: SparseNlp,
    pub ocp: OcpProblem,
    pub scheme: Scheme,
    pub mesh: Mesh,
    /// Collocation point times relative to the start, before horizon scaling.
    pub times: Vec<f64>,
    /// Quadrature weights on the collocation points.
    pub weights: Vec<f64>,
    pub nodes: Vec<NodeVars>,
    pub links: Vec<LinkVars>,
    /// Horizon scale variable, when the terminal time is free.
    pub tau: Option<usize>,
    pub scales: Scales,
}

struct Builder {
    nlp: SparseNlp,
    times: Vec<f64>,
    tau: Option<usize>,
    nodes: Vec<NodeVars>,
    links: Vec<LinkVars>,
}

/// Linear expression `Σ c x + constant`.
#[derive(Clone, Default)]
struct Expr {
    lin: Vec<(usize, f64)>,
    constant: f64,
}

impl Expr {
    fn scaled(&self, s: f64) -> Expr {
        Expr { lin: self.lin.iter().map(|&(i, c)| (i, c * s)).collect(), constant: self.constant * s }
    }

    fn add(mut self, o: &Expr) -> Expr {
        self.lin.extend_from_slice(&o.lin);
        self.constant += o.constant;
        self
    }
}

impl Builder {
    fn npoints(&self) -> usize {
        self.times.len()
    }

    /// Terms and offset of `time_expr` multiplied by the horizon scale.
    fn timed(&self, e: Expr) -> (Vec<Term>, f64) {
        match self.tau {
            Some(t) => {
                let mut terms = vec![];
                if !e.lin.is_empty() {
                    terms.push(Term::Scaled { by: t, inner: Box::new(Term::Linear(e.lin)) });
                }
                if e.constant != 0.0 {
                    terms.push(Term::Linear(vec![(t, e.constant)]));
                }
                (terms, 0.0)
            }
            None => (vec![Term::Linear(e.lin)], e.constant),
        }
    }

    fn timed_term(&self, t: Term) -> Term {
        match self.tau {
            Some(by) => Term::Scaled { by, inner: Box::new(t) },
            None => t,
        }
    }

    fn equality(&mut self, mut terms: Vec<Term>, offset: f64, tag: String) {
        terms.retain(|t| !matches!(t, Term::Linear(l) if l.is_empty()));
        self.nlp.add_row(Row { terms, offset, lb: 0.0, ub: 0.0, tag });
    }

    /// Defect rows of a state with values `x[j]` and rates `f[j]`.
    fn defects(&mut self, scheme: Scheme, x: &[usize], f: &[Expr], name: &str) {
        match scheme {
            Scheme::Trapezoidal => {
                for k in 0..self.npoints() - 1 {
                    let h = self.times[k + 1] - self.times[k];
                    let rate = f[k].clone().add(&f[k + 1]).scaled(-0.5 * h);
                    let (mut terms, off) = self.timed(rate);
                    terms.push(Term::Linear(vec![(x[k + 1], 1.0), (x[k], -1.0)]));
                    self.equality(terms, off, format!("{name} k={k}"));
                }
            }
            Scheme::HermiteSimpson => {
                for k in 0..(self.npoints() - 1) / 2 {
                    let (i, m, e) = (2 * k, 2 * k + 1, 2 * k + 2);
                    let h = self.times[e] - self.times[i];
                    let diff = f[i].clone().add(&f[e].scaled(-1.0)).scaled(-h / 8.0);
                    let (mut terms, off) = self.timed(diff);
                    terms.push(Term::Linear(vec![(x[m], 1.0), (x[i], -0.5), (x[e], -0.5)]));
                    self.equality(terms, off, format!("{name} midpoint k={k}"));
                    let simpson = f[i].clone().add(&f[m].scaled(4.0)).add(&f[e]).scaled(-h / 6.0);
                    let (mut terms, off) = self.timed(simpson);
                    terms.push(Term::Linear(vec![(x[e], 1.0), (x[i], -1.0)]));
                    self.equality(terms, off, format!("{name} k={k}"));
                }
            }
        }
    }
}

fn quadrature(times: &[f64], scheme: Scheme) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    match scheme {
        Scheme::Trapezoidal => {
            for k in 0..n - 1 {
                let h = times[k + 1] - times[k];
                w[k] += 0.5 * h;
                w[k + 1] += 0.5 * h;
            }
        }
        Scheme::HermiteSimpson => {
            for k in 0..(n - 1) / 2 {
                let h = times[2 * k + 2] - times[2 * k];
                w[2 * k] += h / 6.0;
                w[2 * k + 1] += 4.0 * h / 6.0;
                w[2 * k + 2] += h / 6.0;
            }
        }
    }
    w
}

fn collocation_times(mesh: &Mesh, scheme: Scheme) -> Vec<f64> {
    match scheme {
        Scheme::Trapezoidal => mesh.times.clone(),
        Scheme::HermiteSimpson => {
            let mut t = Vec::with_capacity(2 * mesh.times.len() - 1);
            for w in mesh.times.windows(2) {
                t.push(w[0]);
                t.push(0.5 * (w[0] + w[1]));
            }
            t.push(mesh.horizon());
            t
        }
    }
}

/// Data each link has to carry over the horizon, from the boundary data.
fn nominal_link_data(ocp: &OcpProblem) -> Vec<f64> {
    let nl = ocp.links.len();
    let mut need = vec![0.0; nl];
    for _ in 0..=ocp.nodes.len() {
        for (n, node) in ocp.nodes.iter().enumerate() {
            let out = ocp.outgoing(n);
            if out.is_empty() {
                continue;
            }
            let inflow: f64 = ocp.incoming(n).iter().map(|&l| need[l]).sum();
            let keep = node.spec.data_final.finite().unwrap_or(f64::INFINITY);
            let send = (node.spec.data_init + inflow - keep).max(0.0);
            let send = if send.is_finite() { send } else { 0.0 };
            for &l in &out {
                need[l] = send / out.len() as f64;
            }
        }
    }
    need
}

/// Discretizes `ocp` on `mesh`.
pub fn transcribe(ocp: &OcpProblem, mesh: &Mesh, scheme: Scheme) -> Result<Transcription> {
    if (mesh.horizon() - ocp.horizon).abs() > 1e-9 * ocp.horizon {
        return Err(Error::Dimension { expected: ocp.horizon as usize, got: mesh.horizon() as usize });
    }
    let sc = Scales::for_problem(ocp);
    let times = collocation_times(mesh, scheme);
    let weights = quadrature(&times, scheme);
    let np = times.len();
    let mut b = Builder {
        nlp: SparseNlp::default(),
        times: times.clone(),
        tau: None,
        nodes: vec![NodeVars::default(); ocp.nodes.len()],
        links: vec![LinkVars::default(); ocp.links.len()],
    };
    let maxthr = ocp.options.objective == Objective::MaxThroughput;
    let substitute = ocp.options.convex_cost_substitution;

    // ---- initial trajectory guesses (physical units)
    let pos0: Vec<Vec<f64>> = ocp
        .nodes
        .iter()
        .enumerate()
        .map(|(n, node)| {
            if node.mobile {
                let s = &node.spec;
                times.iter().map(|&t| s.q_init + (s.q_final - s.q_init) * t / ocp.horizon).collect()
            } else {
                times.iter().map(|&t| ocp.known_position(n, t)).collect()
            }
        })
        .collect();
    let chi_at = |l: usize, j: usize| {
        let dq = pos0[ocp.links[l].from][j] - pos0[ocp.links[l].to][j];
        dq * dq + ocp.chi_offset(l)
    };
    let need = nominal_link_data(ocp);
    let mut rate0 = vec![vec![0.0; np]; ocp.links.len()];
    let mut power0 = vec![vec![0.0; np]; ocp.links.len()];
    for l in 0..ocp.links.len() {
        let band = &ocp.bands[ocp.links[l].band];
        let g = ocp.snr_gain(l);
        let cap: Vec<f64> = (0..np)
            .map(|j| band.bandwidth * (1.0 + g * ocp.power_max * chi_at(l, j).powf(-ocp.alpha)).log2())
            .collect();
        let total: f64 = cap.iter().zip(&weights).map(|(c, w)| c * w).sum();
        for j in 0..np {
            let r = if maxthr { 0.9 * cap[j] } else { need[l] * cap[j] / total.max(1e-300) };
            let r = r.max(ocp.options.min_rate);
            let snr = 2f64.powf(r / band.bandwidth) - 1.0;
            rate0[l][j] = r;
            power0[l][j] = if maxthr { ocp.power_max } else { (snr * chi_at(l, j).powf(ocp.alpha) / g).min(ocp.power_max) };
        }
    }

    // ---- variables, stage by stage
    for j in 0..np {
        for (n, node) in ocp.nodes.iter().enumerate() {
            let s = &node.spec;
            let id = &s.id;
            if node.mobile {
                let last = j == np - 1;
                let (qlb, qub) = if j == 0 {
                    (s.q_init / sc.position, s.q_init / sc.position)
                } else if last && ocp.options.free_horizon.is_some() {
                    // overtime: the node may fly past its destination
                    let qf = s.q_final / sc.position;
                    if node.direction > 0.0 {
                        (qf, f64::INFINITY)
                    } else {
                        (f64::NEG_INFINITY, qf)
                    }
                } else if last {
                    (s.q_final / sc.position, s.q_final / sc.position)
                } else {
                    (f64::NEG_INFINITY, f64::INFINITY)
                };
                let q = b.nlp.add_var(format!("q[{id}]@{j}"), qlb, qub, pos0[n][j] / sc.position, j);
                let fixed_v = if j == 0 { s.v_init } else if last { s.v_final } else { None };
                let vavg = (s.path_length() / ocp.horizon + node.direction * ocp.wind_estimate).clamp(s.speed_min, s.speed_max);
                let (vlb, vub) = match fixed_v {
                    Some(v) => (v / sc.speed, v / sc.speed),
                    None => (s.speed_min / sc.speed, s.speed_max / sc.speed),
                };
                let v = b.nlp.add_var(format!("v[{id}]@{j}"), vlb, vub, vavg / sc.speed, j);
                let a = b.nlp.add_var(format!("a[{id}]@{j}"), f64::NEG_INFINITY, f64::INFINITY, 0.0, j);
                let nv = &mut b.nodes[n];
                nv.q.push(q);
                nv.v.push(v);
                nv.a.push(a);
                if !substitute {
                    let d = s.drag.c_d1 * vavg * vavg + s.drag.c_d2 / (vavg * vavg);
                    let f = b.nlp.add_var(
                        format!("F[{id}]@{j}"),
                        s.thrust_min.value() / sc.thrust,
                        s.thrust_max.value() / sc.thrust,
                        d / sc.thrust,
                        j,
                    );
                    b.nodes[n].thrust.push(f);
                }
            }
            if node.buffered {
                let mem = s.memory.value() / sc.data;
                let (lb, ub) = if j == 0 {
                    (s.data_init / sc.data, s.data_init / sc.data)
                } else if j == np - 1 {
                    (0.0, mem.min(s.data_final.value() / sc.data))
                } else {
                    (0.0, mem)
                };
                // overwritten below once the rate guess is known
                let sv = b.nlp.add_var(format!("s[{id}]@{j}"), lb, ub, s.data_init / sc.data, j);
                b.nodes[n].buffer.push(sv);
            }
        }
        for l in 0..ocp.links.len() {
            let lab = ocp.link_label(l);
            let (plb, pub_) = if maxthr { (1.0, 1.0) } else { (0.0, 1.0) };
            let p = b.nlp.add_var(format!("p[{lab}]@{j}"), plb, pub_, power0[l][j] / sc.power, j);
            let r = b.nlp.add_var(
                format!("r[{lab}]@{j}"),
                ocp.options.min_rate / sc.rate,
                f64::INFINITY,
                rate0[l][j] / sc.rate,
                j,
            );
            b.links[l].p.push(p);
            b.links[l].r.push(r);
            if ocp.chi_varies(l) {
                let lb = (ocp.chi_offset(l) / sc.chi).max(1e-6);
                let c = b.nlp.add_var(format!("chi[{lab}]@{j}"), lb, f64::INFINITY, chi_at(l, j) / sc.chi, j);
                b.links[l].chi.push(c);
            }
        }
    }
    if let Some(fh) = ocp.options.free_horizon {
        b.tau = Some(b.nlp.add_var("tau", fh.min_scale, fh.max_scale, 1.0, GLOBAL_STAGE));
    }

    // consistent buffer guesses: integrate the rate guess
    for (n, node) in ocp.nodes.iter().enumerate() {
        if !node.buffered {
            continue;
        }
        let mut s = node.spec.data_init;
        let cap = node.spec.memory.value();
        let net = |j: usize| -> f64 {
            ocp.incoming(n).iter().map(|&l| rate0[l][j]).sum::<f64>() - ocp.outgoing(n).iter().map(|&l| rate0[l][j]).sum::<f64>()
        };
        for j in 0..np {
            if j > 0 {
                s += 0.5 * (times[j] - times[j - 1]) * (net(j - 1) + net(j));
            }
            b.nlp.x0[b.nodes[n].buffer[j]] = s.clamp(0.0, cap) / sc.data;
        }
    }

    // ---- dynamics
    for (n, node) in ocp.nodes.iter().enumerate() {
        let id = node.spec.id.clone();
        if node.buffered {
            let f: Vec<Expr> = (0..np)
                .map(|j| {
                    let mut lin = vec![];
                    for l in ocp.incoming(n) {
                        lin.push((b.links[l].r[j], sc.rate / sc.data));
                    }
                    for l in ocp.outgoing(n) {
                        lin.push((b.links[l].r[j], -sc.rate / sc.data));
                    }
                    Expr { lin, constant: 0.0 }
                })
                .collect();
            let x = b.nodes[n].buffer.clone();
            b.defects(scheme, &x, &f, &format!("buffer {id}"));
        }
        if node.mobile {
            let nv = b.nodes[n].clone();
            let fq: Vec<Expr> = (0..np)
                .map(|j| Expr {
                    lin: vec![(nv.v[j], node.direction * sc.speed / sc.position)],
                    constant: -ocp.wind_estimate / sc.position,
                })
                .collect();
            b.defects(scheme, &nv.q, &fq, &format!("position {id}"));
            match scheme {
                Scheme::Trapezoidal => {
                    for k in 0..np - 1 {
                        let h = times[k + 1] - times[k];
                        let e = Expr { lin: vec![(nv.a[k], -h * sc.accel / sc.speed)], constant: 0.0 };
                        let (mut terms, off) = b.timed(e);
                        terms.push(Term::Linear(vec![(nv.v[k + 1], 1.0), (nv.v[k], -1.0)]));
                        b.equality(terms, off, format!("speed {id} k={k}"));
                    }
                    b.equality(
                        vec![Term::Linear(vec![(nv.a[np - 1], 1.0), (nv.a[np - 2], -1.0)])],
                        0.0,
                        format!("accel closure {id}"),
                    );
                }
                Scheme::HermiteSimpson => {
                    let fv: Vec<Expr> =
                        (0..np).map(|j| Expr { lin: vec![(nv.a[j], sc.accel / sc.speed)], constant: 0.0 }).collect();
                    b.defects(scheme, &nv.v, &fv, &format!("speed {id}"));
                }
            }
            // thrust: force balance, or its bounds when eliminated
            let s = &node.spec;
            let drag = |v: usize, sign: f64| Term::Powers {
                var: v,
                terms: vec![
                    (sign * s.drag.c_d1 * sc.speed * sc.speed / sc.thrust, 2.0),
                    (sign * s.drag.c_d2 / (sc.speed * sc.speed * sc.thrust), -2.0),
                ],
            };
            for j in 0..np {
                let inertial = s.mass * sc.accel / sc.thrust;
                if substitute {
                    let lb = s.thrust_min.value() / sc.thrust;
                    let ub = s.thrust_max.value() / sc.thrust;
                    if lb.is_finite() || ub.is_finite() {
                        b.nlp.add_row(Row {
                            terms: vec![drag(nv.v[j], 1.0), Term::Linear(vec![(nv.a[j], inertial)])],
                            offset: 0.0,
                            lb,
                            ub,
                            tag: format!("thrust {id} k={j}"),
                        });
                    }
                } else {
                    let f = nv.thrust[j];
                    b.equality(
                        vec![Term::Linear(vec![(f, 1.0), (nv.a[j], -inertial)]), drag(nv.v[j], -1.0)],
                        0.0,
                        format!("force {id} k={j}"),
                    );
                }
            }
        }
    }

    // ---- path constraints
    for j in 0..np {
        for l in 0..ocp.links.len() {
            if !ocp.chi_varies(l) {
                continue;
            }
            let (from, to) = (ocp.links[l].from, ocp.links[l].to);
            let mut lin = vec![];
            let mut constant = 0.0;
            for (node, sign) in [(from, 1.0), (to, -1.0)] {
                if ocp.nodes[node].mobile {
                    lin.push((b.nodes[node].q[j], sign));
                } else {
                    constant += sign * ocp.known_position(node, times[j]) / sc.position;
                }
            }
            let (lb, ub) = if ocp.options.distance_relaxation { (0.0, f64::INFINITY) } else { (0.0, 0.0) };
            b.nlp.add_row(Row {
                terms: vec![
                    Term::Linear(vec![(b.links[l].chi[j], 1.0)]),
                    Term::Square { lin, constant, coef: -sc.position * sc.position / sc.chi },
                ],
                offset: -ocp.chi_offset(l) / sc.chi,
                lb,
                ub,
                tag: format!("distance {} k={j}", ocp.link_label(l)),
            });
        }
        for band in &ocp.bands {
            for subset in &band.subsets {
                let mut users = vec![];
                let mut lin = vec![];
                for &l in subset {
                    let chi = if ocp.chi_varies(l) {
                        Chi::Var(b.links[l].chi[j])
                    } else {
                        Chi::Const(ocp.known_chi(l, times[j]) / sc.chi)
                    };
                    let gain = ocp.h_eff * ocp.antenna_gain * sc.power * sc.chi.powf(-ocp.alpha) / band.noise;
                    users.push(CapUser { power: b.links[l].p[j], chi, gain });
                    lin.push((b.links[l].r[j], sc.rate / band.bandwidth));
                }
                let names: Vec<&str> = subset.iter().map(|&l| ocp.nodes[ocp.links[l].from].spec.id.as_str()).collect();
                b.nlp.add_row(Row {
                    terms: vec![Term::Linear(lin), Term::Capacity { users, alpha: ocp.alpha, coef: -1.0 }],
                    offset: 0.0,
                    lb: f64::NEG_INFINITY,
                    ub: 0.0,
                    tag: format!("capacity {} {{{}}} k={j}", ocp.nodes[band.receiver].spec.id, names.join(",")),
                });
            }
        }
    }

    // ---- objective
    let e = sc.energy;
    let mut obj = vec![];
    match ocp.options.objective {
        Objective::MinEnergy => {
            let mut lin = vec![];
            for lv in &b.links {
                for j in 0..np {
                    lin.push((lv.p[j], weights[j] * sc.power / e));
                }
            }
            obj.push(b.timed_term(Term::Linear(lin)));
            for (n, node) in ocp.nodes.iter().enumerate() {
                if !node.mobile {
                    continue;
                }
                let s = &node.spec;
                let nv = &b.nodes[n];
                if substitute {
                    for j in 0..np {
                        let w = weights[j];
                        obj.push(b.timed_term(Term::Powers {
                            var: nv.v[j],
                            terms: vec![
                                (w * s.drag.c_d1 * sc.speed.powi(3) / e, 3.0),
                                (w * s.drag.c_d2 / (sc.speed * e), -1.0),
                            ],
                        }));
                    }
                    let k = 0.5 * s.mass * sc.speed * sc.speed / e;
                    obj.push(Term::Square { lin: vec![(nv.v[np - 1], 1.0)], constant: 0.0, coef: k });
                    obj.push(Term::Square { lin: vec![(nv.v[0], 1.0)], constant: 0.0, coef: -k });
                } else {
                    // ∫ v F with the inertial part ∫ m a v taken exactly along
                    // the speed interpolant; quadrature of m a v alone is
                    // not exact and can be gamed by chattering accelerations
                    for j in 0..np {
                        let w = weights[j] * sc.speed / e;
                        obj.push(b.timed_term(Term::Bilinear { a: nv.thrust[j], b: nv.v[j], coef: w * sc.thrust }));
                        obj.push(b.timed_term(Term::Bilinear { a: nv.a[j], b: nv.v[j], coef: -w * s.mass * sc.accel }));
                    }
                    let k = 0.5 * s.mass * sc.speed * sc.speed / e;
                    obj.push(Term::Square { lin: vec![(nv.v[np - 1], 1.0)], constant: 0.0, coef: k });
                    obj.push(Term::Square { lin: vec![(nv.v[0], 1.0)], constant: 0.0, coef: -k });
                }
            }
            if let (Some(t), Some(fh)) = (b.tau, ocp.options.free_horizon) {
                obj.push(Term::Linear(vec![(t, fh.overtime_weight * ocp.horizon / e)]));
            }
        }
        Objective::MaxThroughput => {
            let mut lin = vec![];
            for lv in &b.links {
                for j in 0..np {
                    lin.push((lv.r[j], -weights[j] / ocp.horizon));
                }
            }
            obj.push(b.timed_term(Term::Linear(lin)));
        }
    }
    b.nlp.objective = obj;
    b.nlp.check()?;
    Ok(Transcription {
        nlp: b.nlp,
        ocp: ocp.clone(),
        scheme,
        mesh: mesh.clone(),
        times,
        weights,
        nodes: b.nodes,
        links: b.links,
        tau: b.tau,
        scales: sc,
    })
}

/// Time series of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSeries {
    pub id: String,
    pub position: Vec<f64>,
    pub speed: Vec<f64>,
    pub accel: Vec<f64>,
    /// Thrust `D(v) + m a`, or the thrust variable when kept.
    pub thrust: Vec<f64>,
    pub buffer: Option<Vec<f64>>,
    /// ε_T: energy spent on outgoing links [J].
    pub transmission_energy: f64,
    /// ε_P [J].
    pub propulsion_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSeries {
    pub from: String,
    pub to: String,
    pub power: Vec<f64>,
    pub rate: Vec<f64>,
    /// Squared-distance variable (or the known value).
    pub chi: Vec<f64>,
    /// Squared distance recomputed from the positions.
    pub chi_geometric: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt: KktResidual,
    pub max_violation: f64,
    pub worst_row: Option<String>,
}

/// Time-gridded plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub scenario: String,
    pub scheme: Scheme,
    /// Absolute clock times of the collocation points [s].
    pub times: Vec<f64>,
    pub horizon_scale: f64,
    pub nodes: Vec<NodeSeries>,
    pub links: Vec<LinkSeries>,
    /// Objective in joules (negative bits for throughput runs).
    pub objective: f64,
    pub diagnostics: Option<Diagnostics>,
}

/// Rebuilds physical time series from an NLP point.
pub fn extract_solution(tr: &Transcription, x: &[f64]) -> Result<Solution> {
    if x.len() != tr.nlp.n() {
        return Err(Error::Dimension { expected: tr.nlp.n(), got: x.len() });
    }
    let ocp = &tr.ocp;
    let sc = tr.scales;
    let tau = tr.tau.map(|t| x[t]).unwrap_or(1.0);
    let np = tr.times.len();
    let times: Vec<f64> = tr.times.iter().map(|&t| ocp.start_time + tau * t).collect();
    let w: Vec<f64> = tr.weights.iter().map(|&w| tau * w).collect();
    let pick = |idx: &[usize], s: f64| -> Vec<f64> { idx.iter().map(|&i| x[i] * s).collect() };

    let mut positions = vec![];
    let mut nodes = vec![];
    for (n, node) in ocp.nodes.iter().enumerate() {
        let s = &node.spec;
        let nv = &tr.nodes[n];
        let (position, speed, accel) = if node.mobile {
            (pick(&nv.q, sc.position), pick(&nv.v, sc.speed), pick(&nv.a, sc.accel))
        } else {
            let v = if s.is_mobile() { node.cruise_speed } else { 0.0 };
            (tr.times.iter().map(|&t| ocp.known_position(n, t)).collect(), vec![v; np], vec![0.0; np])
        };
        let drag = |v: f64| if v > 0.0 { s.drag.c_d1 * v * v + s.drag.c_d2 / (v * v) } else { 0.0 };
        let thrust: Vec<f64> = if !nv.thrust.is_empty() {
            pick(&nv.thrust, sc.thrust)
        } else {
            (0..np).map(|j| if speed[j] > 0.0 { drag(speed[j]) + s.mass * accel[j] } else { 0.0 }).collect()
        };
        let propulsion_energy = if !s.is_mobile() {
            0.0
        } else if !nv.thrust.is_empty() {
            let net: f64 = (0..np).map(|j| w[j] * speed[j] * (thrust[j] - s.mass * accel[j])).sum();
            net + 0.5 * s.mass * (speed[np - 1].powi(2) - speed[0].powi(2))
        } else {
            let cruise: f64 = (0..np).map(|j| w[j] * speed[j] * drag(speed[j])).sum();
            cruise + 0.5 * s.mass * (speed[np - 1].powi(2) - speed[0].powi(2))
        };
        let transmission_energy = ocp
            .outgoing(n)
            .iter()
            .map(|&l| (0..np).map(|j| w[j] * x[tr.links[l].p[j]] * sc.power).sum::<f64>())
            .sum::<f64>()
            + 0.0; // an empty sum is -0.0
        nodes.push(NodeSeries {
            id: s.id.clone(),
            buffer: if node.buffered { Some(pick(&nv.buffer, sc.data)) } else { None },
            position: position.clone(),
            speed,
            accel,
            thrust,
            transmission_energy,
            propulsion_energy,
        });
        positions.push(position);
    }
    let mut links = vec![];
    for (l, lk) in ocp.links.iter().enumerate() {
        let lv = &tr.links[l];
        let chi_geometric: Vec<f64> = (0..np)
            .map(|j| {
                let dq = positions[lk.from][j] - positions[lk.to][j];
                dq * dq + ocp.chi_offset(l)
            })
            .collect();
        let chi = if lv.chi.is_empty() { chi_geometric.clone() } else { pick(&lv.chi, sc.chi) };
        links.push(LinkSeries {
            from: ocp.nodes[lk.from].spec.id.clone(),
            to: ocp.nodes[lk.to].spec.id.clone(),
            power: pick(&lv.p, sc.power),
            rate: pick(&lv.r, sc.rate),
            chi,
            chi_geometric,
        });
    }
    let objective = match ocp.options.objective {
        Objective::MinEnergy => {
            let e: f64 = nodes.iter().map(|n| n.transmission_energy).sum::<f64>()
                + ocp.nodes.iter().zip(&nodes).filter(|(o, _)| o.mobile).map(|(_, n)| n.propulsion_energy).sum::<f64>();
            let over = ocp.options.free_horizon.map(|fh| fh.overtime_weight * (tau - 1.0) * ocp.horizon).unwrap_or(0.0);
            e + over
        }
        Objective::MaxThroughput => -links.iter().map(|lk| (0..np).map(|j| w[j] * lk.rate[j]).sum::<f64>()).sum::<f64>(),
    };
    Ok(Solution {
        scenario: ocp.name.clone(),
        scheme: tr.scheme,
        times,
        horizon_scale: tau,
        nodes,
        links,
        objective,
        diagnostics: None,
    })
}

impl Solution {
    pub fn node(&self, id: &str) -> Option<&NodeSeries> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn link(&self, from: &str, to: &str) -> Option<&LinkSeries> {
        self.links.iter().find(|l| l.from == from && l.to == to)
    }

    pub fn total_transmission_energy(&self) -> f64 {
        self.nodes.iter().map(|n| n.transmission_energy).sum()
    }

    pub fn total_propulsion_energy(&self) -> f64 {
        self.nodes.iter().map(|n| n.propulsion_energy).sum()
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("nonempty solution")
    }

    /// Linear interpolation of `series` at clock time `t`, clamped to the
    /// plan's time span.
    pub fn sample(&self, series: &[f64], t: f64) -> f64 {
        interpolate(&self.times, series, t)
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.as_ref().map(|d| d.status == SolveStatus::Converged).unwrap_or(false)
    }

    /// Writes one CSV row per collocation point.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = vec!["t_s".to_string()];
        for n in &self.nodes {
            for col in ["q_m", "v_mps", "a_mps2", "thrust_n"] {
                header.push(format!("{}.{col}", n.id));
            }
            if n.buffer.is_some() {
                header.push(format!("{}.buffer_bits", n.id));
            }
        }
        for l in &self.links {
            for col in ["power_w", "rate_bps", "chi_m2"] {
                header.push(format!("{}->{}.{col}", l.from, l.to));
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for j in 0..self.times.len() {
            let mut row = vec![format!("{}", self.times[j])];
            for n in &self.nodes {
                for s in [&n.position, &n.speed, &n.accel, &n.thrust] {
                    row.push(format!("{}", s[j]));
                }
                if let Some(b) = &n.buffer {
                    row.push(format!("{}", b[j]));
                }
            }
            for l in &self.links {
                for s in [&l.power, &l.rate, &l.chi] {
                    row.push(format!("{}", s[j]));
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Piecewise-linear interpolation, clamped at the ends.
pub fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let n = times.len();
    if t <= times[0] {
        return values[0];
    }
    if t >= times[n - 1] {
        return values[n - 1];
    }
    let k = times.partition_point(|&x| x <= t).min(n - 1);
    let (t0, t1) = (times[k - 1], times[k]);
    let s = (t - t0) / (t1 - t0);
    values[k - 1] + s * (values[k] - values[k - 1])
}

impl Transcription {
    /// NLP point sampled from an earlier plan, for warm starts. Fixed
    /// variables keep their bound value.
    pub fn warm_start(&self, prev: &Solution) -> Vec<f64> {
        let mut x = self.nlp.x0.clone();
        let sc = self.scales;
        let ocp = &self.ocp;
        let set = |i: usize, v: f64, x: &mut Vec<f64>| {
            x[i] = if self.nlp.x_lb[i] == self.nlp.x_ub[i] { self.nlp.x_lb[i] } else { v };
        };
        for (j, &t) in self.times.iter().enumerate() {
            let ta = ocp.start_time + t;
            for (n, node) in ocp.nodes.iter().enumerate() {
                let Some(ps) = prev.node(&node.spec.id) else { continue };
                let nv = &self.nodes[n];
                if node.mobile {
                    set(nv.q[j], prev.sample(&ps.position, ta) / sc.position, &mut x);
                    set(nv.v[j], prev.sample(&ps.speed, ta) / sc.speed, &mut x);
                    set(nv.a[j], prev.sample(&ps.accel, ta) / sc.accel, &mut x);
                    if !nv.thrust.is_empty() {
                        set(nv.thrust[j], prev.sample(&ps.thrust, ta) / sc.thrust, &mut x);
                    }
                }
                if let (true, Some(buf)) = (node.buffered, &ps.buffer) {
                    set(nv.buffer[j], prev.sample(buf, ta) / sc.data, &mut x);
                }
            }
            for (l, lk) in ocp.links.iter().enumerate() {
                let from = &ocp.nodes[lk.from].spec.id;
                let to = &ocp.nodes[lk.to].spec.id;
                let Some(pl) = prev.link(from, to) else { continue };
                let lv = &self.links[l];
                set(lv.p[j], prev.sample(&pl.power, ta) / sc.power, &mut x);
                set(lv.r[j], prev.sample(&pl.rate, ta) / sc.rate, &mut x);
                if !lv.chi.is_empty() {
                    set(lv.chi[j], prev.sample(&pl.chi, ta) / sc.chi, &mut x);
                }
            }
        }
        x
    }

    /// Solves from `x0` (or the built-in guess) and extracts the plan.
    pub fn solve(&self, x0: Option<&[f64]>, opts: &SolveOptions) -> Result<(Solution, NlpResult)> {
        let start = x0.map(|x| x.to_vec()).unwrap_or_else(|| self.nlp.x0.clone());
        let res = solve_from(&self.nlp, &start, opts)?;
        let mut sol = extract_solution(self, &res.x)?;
        sol.diagnostics = Some(Diagnostics {
            status: res.status,
            iterations: res.iterations,
            kkt: res.kkt,
            max_violation: res.max_violation,
            worst_row: res.worst_row.clone(),
        });
        Ok((sol, res))
    }
}

/// Builds, transcribes and solves in one call; solver failures become errors.
pub fn solve_ocp(ocp: &OcpProblem, mesh: &Mesh, scheme: Scheme, opts: &SolveOptions) -> Result<Solution> {
    let tr = transcribe(ocp, mesh, scheme)?;
    let (sol, res) = tr.solve(None, opts)?;
    match res.status {
        SolveStatus::Converged => Ok(sol),
        SolveStatus::Infeasible => Err(Error::Infeasible(format!(
            "no feasible plan; largest violation {:.3e} at {}",
            res.max_violation,
            res.worst_row.unwrap_or_default()
        ))),
        other => Err(Error::Solver(format!(
            "{other:?} after {} iterations, KKT {:.3e}",
            res.iterations,
            res.kkt.max()
        ))),
    }
}
