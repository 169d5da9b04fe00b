//! Closed-loop receding-horizon simulation with slow fading, ARQ and wind.
//!
//! Every computation interval the plan is rebuilt from the measured state
//! over the shrinking window `[t, T]`. Between replans the plan is executed
//! packet by packet: each link draws a fading realisation, the receiver
//! decides which transmitters it can decode, and only decoded bits move
//! between buffers. Bits are integers, so the totals are conserved exactly.
//!
//! When the fixed-horizon problem keeps failing near `T` the loop switches
//! to a free terminal time with an overtime penalty.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::{decode_check, effective_gain, link_rng, received_power, sample_fading, ChannelMode, LinkGeometry};
use crate::error::{Error, Result};
use crate::model::ScenarioConfig;
use crate::ocp::{build_ocp, FreeHorizon, OcpOptions, OcpProblem};
use crate::solver::ipm::{SolveOptions, SolveStatus};
use crate::transcribe::{interpolate, transcribe, Mesh, Scheme, Solution};

const EPS_T: f64 = 1e-9;

/// Knobs of the closed loop that are not part of the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Target mesh spacing of each replan [s].
    pub mesh_interval: f64,
    pub scheme: Scheme,
    pub tol: f64,
    /// Hard stop at `T (1 + max_overtime_fraction)`.
    pub max_overtime_fraction: f64,
    /// Consecutive fixed-horizon failures before the free horizon kicks in.
    pub fallback_after: usize,
    /// Overtime weight as a multiple of the mean planned power.
    pub overtime_weight_factor: f64,
    pub ocp: OcpOptions,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            mesh_interval: 10.0,
            scheme: Scheme::Trapezoidal,
            tol: 1e-6,
            max_overtime_fraction: 0.25,
            fallback_after: 2,
            overtime_weight_factor: 10.0,
            ocp: OcpOptions::default(),
        }
    }
}

/// One computation interval of wind bookkeeping: mean signed airspeed
/// `Υ v` and measured ground speed `q̇`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindSample {
    pub commanded: f64,
    pub measured: f64,
}

/// Moving average of `Υ v − q̇` over the last `window` samples (all of them
/// while fewer are available). Zero without samples.
pub fn wind_estimate(history: &[WindSample], window: usize) -> f64 {
    let w = window.max(1).min(history.len());
    if w == 0 {
        return 0.0;
    }
    let tail = &history[history.len() - w..];
    tail.iter().map(|s| s.commanded - s.measured).sum::<f64>() / w as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonMode {
    Fixed,
    Variable,
}

/// A solved plan and the problem it came from.
#[derive(Debug, Clone)]
pub struct Plan {
    pub ocp: OcpProblem,
    pub solution: Solution,
    pub mode: HorizonMode,
    pub iterations: usize,
    pub warm: bool,
}

impl Plan {
    pub fn start(&self) -> f64 {
        self.solution.times[0]
    }

    pub fn end(&self) -> f64 {
        self.solution.end_time()
    }

    pub fn covers(&self, t0: f64, t1: f64) -> bool {
        t0 >= self.start() - EPS_T && t1 <= self.end() + EPS_T
    }

    /// Bits the plan moves on link `l` during `[t0, t1]`.
    pub fn planned_bits(&self, l: usize, t0: f64, t1: f64) -> f64 {
        integrate_linear(&self.solution.times, &self.solution.links[l].rate, t0, t1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: String,
    pub mobile: bool,
    pub direction: f64,
    pub position: f64,
    pub speed: f64,
    /// `None` for pure sinks.
    pub buffer: Option<u64>,
    /// Integer memory cap; `None` when unbounded.
    pub memory: Option<u64>,
    /// Bits allowed to stay at the end.
    pub keep: Option<u64>,
    /// True minus planned position since the last replan.
    pub deviation: f64,
    pub transmission_energy: f64,
    pub propulsion_energy: f64,
}

/// Everything the loop knows at a packet boundary.
#[derive(Debug, Clone, Serialize)]
pub struct SimState {
    pub time: f64,
    /// Index of the next packet interval.
    pub packet: u64,
    pub seed: u64,
    pub nodes: Vec<NodeState>,
    /// Bits absorbed by pure sinks.
    pub delivered: u64,
    pub initial_bits: u64,
    /// True wind along +q [m/s].
    pub wind: f64,
    /// δ̂ currently used by the planner.
    pub wind_estimate: f64,
    pub wind_history: Vec<WindSample>,
    /// Signed fractional bit credit per link, in `[-0.5, 0.5)`.
    pub carry: Vec<f64>,
    pub mode: HorizonMode,
    pub consecutive_failures: usize,
    #[serde(skip)]
    pub plan: Option<Plan>,
}

impl SimState {
    pub fn new(cfg: &ScenarioConfig, seed: u64) -> Self {
        let nodes = cfg
            .nodes
            .iter()
            .map(|n| {
                let sink = !n.memory.is_finite() && !n.data_final.is_finite();
                NodeState {
                    id: n.id.clone(),
                    mobile: n.is_mobile(),
                    direction: n.direction(),
                    position: n.q_init,
                    speed: n.v_init.unwrap_or(0.0),
                    buffer: if sink { None } else { Some(n.data_init.max(0.0).floor() as u64) },
                    memory: n.memory.finite().map(|m| m.max(0.0).floor() as u64),
                    keep: n.data_final.finite().map(|d| d.max(0.0).floor() as u64),
                    deviation: 0.0,
                    transmission_energy: 0.0,
                    propulsion_energy: 0.0,
                }
            })
            .collect::<Vec<_>>();
        let initial_bits = nodes.iter().filter_map(|n| n.buffer).sum();
        Self {
            time: 0.0,
            packet: 0,
            seed,
            nodes,
            delivered: 0,
            initial_bits,
            wind: cfg.sim.wind,
            wind_estimate: 0.0,
            wind_history: Vec::new(),
            carry: vec![0.0; cfg.links.len()],
            mode: HorizonMode::Fixed,
            consecutive_failures: 0,
            plan: None,
        }
    }

    pub fn buffered_bits(&self) -> u64 {
        self.nodes.iter().filter_map(|n| n.buffer).sum()
    }

    /// Bits still above their terminal allowance.
    pub fn residual_bits(&self) -> u64 {
        self.nodes
            .iter()
            .map(|n| match (n.buffer, n.keep) {
                (Some(b), Some(k)) => b.saturating_sub(k),
                _ => 0,
            })
            .sum()
    }

    pub fn data_done(&self) -> bool {
        self.residual_bits() == 0
    }

    pub fn conserved(&self) -> bool {
        self.buffered_bits() + self.delivered == self.initial_bits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub packet: u64,
    pub time: f64,
    pub link: String,
    /// Mean planned rate over the packet [bit/s].
    pub rate: f64,
    /// Planned received SNR `G h_eff p χ^{-α} / σ²`.
    pub beta: f64,
    /// Realised received SNR `G h̃ p χ̃^{-α} / σ²`.
    pub beta_realized: f64,
    pub fading: f64,
    pub decoded: bool,
    /// Decoded but refused for lack of receiver memory.
    pub refused: bool,
    pub bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanRecord {
    pub time: f64,
    pub mode: HorizonMode,
    pub success: bool,
    pub warm: bool,
    pub iterations: usize,
    pub objective: f64,
    pub horizon_scale: f64,
    pub wind_estimate: f64,
    /// Per link: bits the outgoing plan had left from this time on.
    pub bits_before: Vec<f64>,
    /// Per link: bits the new plan schedules.
    pub bits_after: Vec<f64>,
    pub message: Option<String>,
}

/// State at a packet boundary, plot-ready.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    pub position: Vec<f64>,
    pub speed: Vec<f64>,
    pub thrust: Vec<f64>,
    pub buffer: Vec<Option<u64>>,
    pub delivered: u64,
    pub power: Vec<f64>,
    pub rate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEnergy {
    pub id: String,
    pub transmission_j: f64,
    pub propulsion_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub scenario: String,
    pub seed: u64,
    pub complete: bool,
    /// Time the last bit reached its sink.
    pub completion_time: Option<f64>,
    pub overtime_s: f64,
    pub residual_bits_at_horizon: u64,
    pub initial_bits: u64,
    pub delivered_bits: u64,
    pub conservation_held: bool,
    pub energies: Vec<NodeEnergy>,
    pub total_transmission_j: f64,
    pub total_propulsion_j: f64,
    pub packets: usize,
    pub naks: usize,
    pub replans: usize,
    pub failed_replans: usize,
    pub fallback_time: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimLog {
    pub config: serde_json::Value,
    pub options: SimOptions,
    pub summary: SimSummary,
    pub links: Vec<String>,
    pub node_ids: Vec<String>,
    pub packets: Vec<PacketRecord>,
    pub replans: Vec<ReplanRecord>,
    pub trace: Vec<TraceRow>,
}

impl SimLog {
    pub fn write_packets_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "packet,t_s,link,rate_bps,beta,beta_realized,fading,decoded,refused,bits")?;
        for p in &self.packets {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                p.packet,
                p.time,
                p.link,
                p.rate,
                p.beta,
                p.beta_realized,
                p.fading,
                u8::from(p.decoded),
                u8::from(p.refused),
                p.bits
            )?;
        }
        Ok(())
    }

    /// One row per packet boundary with positions, speeds, thrusts,
    /// buffers and planned link powers and rates.
    pub fn write_trace_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = vec!["t_s".to_string()];
        for id in &self.node_ids {
            for c in ["q_m", "v_mps", "thrust_n", "buffer_bits"] {
                header.push(format!("{id}.{c}"));
            }
        }
        header.push("delivered_bits".into());
        for l in &self.links {
            header.push(format!("{l}.power_w"));
            header.push(format!("{l}.rate_bps"));
        }
        writeln!(w, "{}", header.join(","))?;
        for r in &self.trace {
            let mut row = vec![r.time.to_string()];
            for n in 0..self.node_ids.len() {
                row.push(r.position[n].to_string());
                row.push(r.speed[n].to_string());
                row.push(r.thrust[n].to_string());
                row.push(r.buffer[n].map(|b| b.to_string()).unwrap_or_default());
            }
            row.push(r.delivered.to_string());
            for l in 0..self.links.len() {
                row.push(r.power[l].to_string());
                row.push(r.rate[l].to_string());
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Exact integral of the piecewise-linear interpolant (clamped outside
/// the grid) over `[t0, t1]`.
pub fn integrate_linear(times: &[f64], vals: &[f64], t0: f64, t1: f64) -> f64 {
    integrate_with(times, vals, t0, t1, |v| v, false)
}

// Simpson on every piece between breakpoints; exact for linear `f`.
fn integrate_with(times: &[f64], vals: &[f64], t0: f64, t1: f64, f: impl Fn(f64) -> f64, simpson: bool) -> f64 {
    if !(t1 > t0) {
        return 0.0;
    }
    let mut pts = vec![t0];
    pts.extend(times.iter().copied().filter(|&t| t > t0 && t < t1));
    pts.push(t1);
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let fa = f(interpolate(times, vals, a));
        let fb = f(interpolate(times, vals, b));
        acc += if simpson {
            let fm = f(interpolate(times, vals, 0.5 * (a + b)));
            (b - a) / 6.0 * (fa + 4.0 * fm + fb)
        } else {
            0.5 * (b - a) * (fa + fb)
        };
    }
    acc
}

fn chi_between(cfg: &ScenarioConfig, a: usize, b: usize, qa: f64, qb: f64) -> f64 {
    let (na, nb) = (&cfg.nodes[a], &cfg.nodes[b]);
    LinkGeometry::new(qa - qb, na.lateral_offset - nb.lateral_offset, na.altitude - nb.altitude).squared_distance()
}

/// Rebuilds the planning problem from the measured state and solves it,
/// warm-started from the current plan when there is one.
pub fn nmpc_step(state: &SimState, cfg: &ScenarioConfig, opts: &SimOptions, mode: HorizonMode) -> Result<Plan> {
    let t = state.time;
    let horizon = cfg.horizon.duration;
    let tc = cfg.sim.computation_interval;
    let limit = horizon * (1.0 + opts.max_overtime_fraction);
    let mut c = cfg.clone();
    let mut options = opts.ocp;
    let base = match mode {
        HorizonMode::Fixed => horizon - t,
        HorizonMode::Variable => (horizon - t).max(tc),
    };
    if !(base > EPS_T) {
        return Err(Error::Infeasible(format!("no horizon left at t = {t}")));
    }
    if mode == HorizonMode::Variable {
        let max_scale = ((limit - t) / base).max(1.0);
        let mean_power = state
            .plan
            .as_ref()
            .map(|p| p.solution.objective / (p.end() - p.start()).max(EPS_T))
            .unwrap_or(0.0)
            .max(0.0);
        // past T a plan may be as short as one packet
        let min_scale = if t >= horizon - EPS_T { (cfg.channel.packet_interval / base).min(1.0) } else { 1.0 };
        options.free_horizon = Some(FreeHorizon {
            min_scale,
            max_scale,
            overtime_weight: opts.overtime_weight_factor * mean_power,
        });
    }
    c.horizon.duration = base;
    for (spec, st) in c.nodes.iter_mut().zip(&state.nodes) {
        if st.mobile {
            spec.q_init = st.position;
            // before the first plan flies the speed is whatever the scenario says
            if state.plan.is_some() {
                spec.v_init = Some(st.speed);
            }
            if st.direction * (spec.q_final - st.position) < 0.0 {
                spec.q_final = st.position;
            }
        }
        if let Some(b) = st.buffer {
            spec.data_init = b as f64;
        }
    }
    let mut ocp = build_ocp(&c, options)?;
    for (n, st) in ocp.nodes.iter_mut().zip(&state.nodes) {
        n.direction = st.direction;
    }
    ocp.start_time = t;
    ocp.wind_estimate = state.wind_estimate;

    let k = match mode {
        HorizonMode::Fixed => (base / opts.mesh_interval).round().max(1.0) as usize,
        HorizonMode::Variable => (base / opts.mesh_interval).ceil().max(4.0) as usize,
    };
    let tr = transcribe(&ocp, &Mesh::uniform(base, k)?, opts.scheme)?;
    let cold = SolveOptions::with_tol(opts.tol);
    let mut warm = false;
    let mut attempt = None;
    if let Some(prev) = &state.plan {
        let x0 = tr.warm_start(&prev.solution);
        let wo = SolveOptions { mu_init: 1e-3, bound_push: 1e-4, ..cold };
        let (sol, res) = tr.solve(Some(&x0), &wo)?;
        if res.status == SolveStatus::Converged {
            warm = true;
            attempt = Some((sol, res));
        }
    }
    let (sol, res) = match attempt {
        Some(a) => a,
        None => tr.solve(None, &cold)?,
    };
    match res.status {
        SolveStatus::Converged => Ok(Plan { ocp: tr.ocp.clone(), solution: sol, mode, iterations: res.iterations, warm }),
        SolveStatus::Infeasible | SolveStatus::RestorationFailed => Err(Error::Infeasible(format!(
            "replan at t = {t}: violation {:.3e} at {}",
            res.max_violation,
            res.worst_row.unwrap_or_default()
        ))),
        other => Err(Error::Solver(format!("replan at t = {t}: {other:?} after {} iterations", res.iterations))),
    }
}

/// One packet interval with fading drawn from the per-link streams.
pub fn packet_round(state: &mut SimState, plan: &Plan, cfg: &ScenarioConfig) -> Result<Vec<PacketRecord>> {
    let kappa = match cfg.channel.mode {
        ChannelMode::Awgn => f64::INFINITY,
        ChannelMode::SlowFading => cfg.channel.rice_k,
    };
    let fading: Vec<f64> = (0..plan.ocp.links.len())
        .map(|l| {
            if kappa.is_finite() {
                sample_fading(kappa, &mut link_rng(state.seed, l as u64, state.packet))
            } else {
                1.0
            }
        })
        .collect();
    packet_round_with(state, plan, cfg, &fading)
}

/// [`packet_round`] with the fading realisations given.
pub fn packet_round_with(state: &mut SimState, plan: &Plan, cfg: &ScenarioConfig, fading: &[f64]) -> Result<Vec<PacketRecord>> {
    let ocp = &plan.ocp;
    let sol = &plan.solution;
    let nl = ocp.links.len();
    if fading.len() != nl {
        return Err(Error::Dimension { expected: nl, got: fading.len() });
    }
    let tp = cfg.channel.packet_interval;
    let t0 = state.time;
    let t1 = t0 + tp;
    let tm = 0.5 * (t0 + t1);
    let g = cfg.comm.antenna_gain;

    // planned and true positions at the packet midpoint
    let drift = state.wind + plan.ocp.wind_estimate;
    let planned_q: Vec<f64> = sol.nodes.iter().map(|n| sol.sample(&n.position, tm)).collect();
    let true_q: Vec<f64> = state
        .nodes
        .iter()
        .zip(&planned_q)
        .map(|(n, &q)| if n.mobile { q + n.deviation + drift * 0.5 * tp } else { q })
        .collect();

    let mut power = vec![0.0; nl];
    let mut beta = vec![0.0; nl];
    let mut beta_r = vec![0.0; nl];
    for (l, lk) in ocp.links.iter().enumerate() {
        power[l] = integrate_linear(&sol.times, &sol.links[l].power, t0, t1) / tp;
        let chi_p = chi_between(cfg, lk.from, lk.to, planned_q[lk.from], planned_q[lk.to]);
        let chi_r = chi_between(cfg, lk.from, lk.to, true_q[lk.from], true_q[lk.to]);
        beta[l] = received_power(power[l], chi_p, ocp.h_eff, g, ocp.alpha)?;
        beta_r[l] = received_power(power[l], chi_r, fading[l], g, ocp.alpha)?;
        state.nodes[lk.from].transmission_energy += power[l] * tp;
    }

    let mut decoded = vec![false; nl];
    let mut noise_of = vec![0.0; nl];
    for band in &ocp.bands {
        let planned: Vec<f64> = band.links.iter().map(|&l| beta[l]).collect();
        let realized: Vec<f64> = band.links.iter().map(|&l| beta_r[l]).collect();
        let mask = decode_check(&planned, &realized, band.noise)?;
        for (j, &l) in band.links.iter().enumerate() {
            decoded[l] = mask[j];
            noise_of[l] = band.noise;
        }
    }

    let credit: Vec<f64> = (0..nl).map(|l| plan.planned_bits(l, t0, t1).max(0.0) + state.carry[l]).collect();
    let mut moved = vec![0u64; nl];
    // receivers with room to spare are served first, then the rest in
    // link order against memory freed by already-accepted departures
    let mut order: Vec<usize> = (0..nl).collect();
    order.sort_by_key(|&l| state.nodes[ocp.links[l].to].memory.is_some() as u8);
    let mut sent = vec![0u64; state.nodes.len()];
    let mut received = vec![0u64; state.nodes.len()];
    let mut accepted = vec![false; nl];
    let mut refused = vec![false; nl];
    for &l in &order {
        if !decoded[l] {
            continue;
        }
        let (from, to) = (ocp.links[l].from, ocp.links[l].to);
        // capped by what the sender held at the start of the packet
        let bits = credit[l].round().max(0.0) as u64;
        let want = match state.nodes[from].buffer {
            Some(b) => bits.min(b - sent[from]),
            None => bits,
        };
        let rx = &state.nodes[to];
        let fits = match (rx.buffer, rx.memory) {
            (Some(b), Some(m)) => b + received[to] + want <= m + sent[to],
            _ => true,
        };
        if fits {
            accepted[l] = true;
            moved[l] = want;
            sent[from] += want;
            received[to] += want;
        } else {
            refused[l] = true;
        }
    }
    for (n, node) in state.nodes.iter_mut().enumerate() {
        if let Some(b) = node.buffer.as_mut() {
            *b = *b + received[n] - sent[n];
        } else {
            state.delivered += received[n];
        }
    }

    let mut out = Vec::with_capacity(nl);
    for l in 0..nl {
        let bits = moved[l];
        if accepted[l] {
            let capped = (credit[l].round().max(0.0) as u64) > bits;
            state.carry[l] = if capped { 0.0 } else { credit[l] - bits as f64 };
        }
        let noise = noise_of[l];
        out.push(PacketRecord {
            packet: state.packet,
            time: t0,
            link: ocp.link_label(l),
            rate: plan.planned_bits(l, t0, t1) / tp,
            beta: beta[l] / noise,
            beta_realized: beta_r[l] / noise,
            fading: fading[l],
            decoded: decoded[l],
            refused: refused[l],
            bits,
        });
    }
    Ok(out)
}

/// Advances clocks, kinematics and propulsion energy over one packet.
fn advance(state: &mut SimState, plan: &Plan, cfg: &ScenarioConfig) {
    let tp = cfg.channel.packet_interval;
    let t0 = state.time;
    let t1 = t0 + tp;
    let sol = &plan.solution;
    let drift = state.wind + plan.ocp.wind_estimate;
    for (n, st) in state.nodes.iter_mut().enumerate() {
        if !st.mobile {
            continue;
        }
        let spec = &cfg.nodes[n];
        let ps = &sol.nodes[n];
        let d = spec.drag;
        let v0 = sol.sample(&ps.speed, t0);
        let v1 = sol.sample(&ps.speed, t1);
        let drag_power = integrate_with(&sol.times, &ps.speed, t0, t1, |v| d.c_d1 * v * v * v + d.c_d2 / v, true);
        st.propulsion_energy += drag_power + 0.5 * spec.mass * (v1 * v1 - v0 * v0);
        st.deviation += drift * tp;
        st.position = sol.sample(&ps.position, t1) + st.deviation;
        st.speed = v1;
    }
    state.packet += 1;
    state.time = state.packet as f64 * tp;
}

fn trace_row(state: &SimState, plan: &Plan) -> TraceRow {
    let sol = &plan.solution;
    let t = state.time;
    TraceRow {
        time: t,
        position: state.nodes.iter().map(|n| n.position).collect(),
        speed: state.nodes.iter().map(|n| n.speed).collect(),
        thrust: sol.nodes.iter().zip(&state.nodes).map(|(s, n)| if n.mobile { sol.sample(&s.thrust, t) } else { 0.0 }).collect(),
        buffer: state.nodes.iter().map(|n| n.buffer).collect(),
        delivered: state.delivered,
        power: sol.links.iter().map(|l| sol.sample(&l.power, t)).collect(),
        rate: sol.links.iter().map(|l| sol.sample(&l.rate, t)).collect(),
    }
}

fn snapshot_error(state: &SimState, err: Error) -> Error {
    let snapshot = serde_json::to_string(state).unwrap_or_default();
    Error::Simulation { time: state.time, message: err.to_string(), snapshot }
}

/// [`run_closed_loop_with`] using default [`SimOptions`].
pub fn run_closed_loop(cfg: &ScenarioConfig, seed: u64) -> Result<SimLog> {
    run_closed_loop_with(cfg, seed, &SimOptions::default())
}

pub fn run_closed_loop_with(cfg: &ScenarioConfig, seed: u64, opts: &SimOptions) -> Result<SimLog> {
    let tp = cfg.channel.packet_interval;
    let tc = cfg.sim.computation_interval;
    if !(tp > 0.0 && tc > 0.0) {
        return Err(Error::Options("packet and computation intervals must be positive".into()));
    }
    let per_round = (tc / tp).round();
    if per_round < 1.0 || (per_round * tp - tc).abs() > 1e-9 * tc {
        return Err(Error::Options(format!("packet interval {tp} s does not divide computation interval {tc} s")));
    }
    let per_round = per_round as u64;
    effective_gain(&cfg.channel)?;
    let horizon = cfg.horizon.duration;
    let limit = horizon * (1.0 + opts.max_overtime_fraction);

    let mut state = SimState::new(cfg, seed);
    let mut packets = Vec::new();
    let mut replans = Vec::new();
    let mut trace = Vec::new();
    let mut residual_at_horizon = None;
    let mut completion = None;
    let mut conservation_held = state.conserved();
    let mut fallback_time = None;

    loop {
        if state.time >= horizon - EPS_T && state.data_done() {
            break;
        }
        if state.time >= limit - EPS_T {
            break;
        }

        // replan
        let bits_before: Vec<f64> = match &state.plan {
            Some(p) => (0..cfg.links.len()).map(|l| p.planned_bits(l, state.time, p.end())).collect(),
            None => vec![0.0; cfg.links.len()],
        };
        let mut record = |state: &SimState, res: &Result<Plan>| {
            let (success, warm, iterations, objective, scale, after, message) = match res {
                Ok(p) => (
                    true,
                    p.warm,
                    p.iterations,
                    p.solution.objective,
                    p.solution.horizon_scale,
                    (0..cfg.links.len()).map(|l| p.planned_bits(l, state.time, p.end())).collect(),
                    None,
                ),
                Err(e) => (false, false, 0, f64::NAN, f64::NAN, vec![], Some(e.to_string())),
            };
            replans.push(ReplanRecord {
                time: state.time,
                mode: state.mode,
                success,
                warm,
                iterations,
                objective,
                horizon_scale: scale,
                wind_estimate: state.wind_estimate,
                bits_before: bits_before.clone(),
                bits_after: after,
                message,
            });
        };
        let mut fresh = false;
        if state.mode == HorizonMode::Fixed && horizon - state.time > EPS_T {
            let res = nmpc_step(&state, cfg, opts, HorizonMode::Fixed);
            record(&state, &res);
            match res {
                Ok(p) => {
                    state.consecutive_failures = 0;
                    state.plan = Some(p);
                    fresh = true;
                }
                Err(Error::Infeasible(_) | Error::Solver(_)) => {
                    state.consecutive_failures += 1;
                    let covered = state.plan.as_ref().map(|p| p.covers(state.time, state.time + tp)).unwrap_or(false);
                    if state.consecutive_failures >= opts.fallback_after || !covered {
                        state.mode = HorizonMode::Variable;
                    }
                }
                Err(e) => return Err(snapshot_error(&state, e)),
            }
        } else {
            state.mode = HorizonMode::Variable;
        }
        if state.mode == HorizonMode::Variable {
            fallback_time.get_or_insert(state.time);
            let res = nmpc_step(&state, cfg, opts, HorizonMode::Variable);
            record(&state, &res);
            match res {
                Ok(p) => {
                    state.plan = Some(p);
                    fresh = true;
                }
                Err(e) => return Err(snapshot_error(&state, e)),
            }
        }
        let plan = state.plan.take().expect("a plan exists after replanning");
        if fresh {
            for st in state.nodes.iter_mut() {
                st.deviation = 0.0;
            }
        }

        // execute until the next replan
        let t_start = state.time;
        let q_start: Vec<f64> = state.nodes.iter().map(|n| n.position).collect();
        let mut airspeed_dist = vec![0.0; state.nodes.len()];
        let mut done = false;
        for _ in 0..per_round {
            if !plan.covers(state.time, state.time + tp) {
                break;
            }
            let recs = packet_round(&mut state, &plan, cfg).map_err(|e| snapshot_error(&state, e))?;
            packets.extend(recs);
            for (n, st) in state.nodes.iter().enumerate() {
                if st.mobile {
                    let ps = &plan.solution.nodes[n];
                    airspeed_dist[n] += st.direction * integrate_linear(&plan.solution.times, &ps.speed, state.time, state.time + tp);
                }
            }
            advance(&mut state, &plan, cfg);
            conservation_held &= state.conserved();
            trace.push(trace_row(&state, &plan));
            if residual_at_horizon.is_none() && state.time >= horizon - EPS_T {
                residual_at_horizon = Some(state.residual_bits());
            }
            if state.data_done() {
                completion.get_or_insert(state.time);
            } else {
                completion = None;
            }
            if state.time >= horizon - EPS_T && state.data_done() {
                done = true;
                break;
            }
            if state.time >= limit - EPS_T {
                break;
            }
        }
        let dt = state.time - t_start;
        if dt > 0.0 {
            let mobile: Vec<usize> = (0..state.nodes.len()).filter(|&n| state.nodes[n].mobile).collect();
            if !mobile.is_empty() {
                let m = mobile.len() as f64;
                let commanded = mobile.iter().map(|&n| airspeed_dist[n] / dt).sum::<f64>() / m;
                let measured = mobile.iter().map(|&n| (state.nodes[n].position - q_start[n]) / dt).sum::<f64>() / m;
                state.wind_history.push(WindSample { commanded, measured });
            }
        }
        state.wind_estimate = wind_estimate(&state.wind_history, cfg.sim.wind_window);
        state.plan = Some(plan);
        if done {
            break;
        }
    }

    let complete = state.data_done();
    let completion_time = if complete { completion } else { None };
    let overtime_s = completion_time.map(|t| (t - horizon).max(0.0)).unwrap_or(state.time - horizon).max(0.0);
    let energies: Vec<NodeEnergy> = state
        .nodes
        .iter()
        .map(|n| NodeEnergy { id: n.id.clone(), transmission_j: n.transmission_energy, propulsion_j: n.propulsion_energy })
        .collect();
    let summary = SimSummary {
        scenario: cfg.name.clone(),
        seed,
        complete,
        completion_time,
        overtime_s,
        residual_bits_at_horizon: residual_at_horizon.unwrap_or_else(|| state.residual_bits()),
        initial_bits: state.initial_bits,
        delivered_bits: state.delivered,
        conservation_held,
        total_transmission_j: energies.iter().map(|e| e.transmission_j).sum(),
        total_propulsion_j: energies.iter().map(|e| e.propulsion_j).sum(),
        energies,
        packets: packets.len(),
        naks: packets.iter().filter(|p| p.beta > 0.0 && !p.decoded).count(),
        replans: replans.len(),
        failed_replans: replans.iter().filter(|r| !r.success).count(),
        fallback_time,
    };
    let links = state.plan.as_ref().map(|p| (0..p.ocp.links.len()).map(|l| p.ocp.link_label(l)).collect()).unwrap_or_default();
    Ok(SimLog {
        config: serde_json::from_str(&cfg.to_json()).map_err(|e| Error::Parse(e.to_string()))?,
        options: *opts,
        summary,
        links,
        node_ids: state.nodes.iter().map(|n| n.id.clone()).collect(),
        packets,
        replans,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wind_window_average() {
        let h: Vec<WindSample> = [1.0, 2.0, 3.0, 4.0].iter().map(|&m| WindSample { commanded: 20.0, measured: 20.0 - m }).collect();
        assert_eq!(wind_estimate(&h, 3), 3.0);
        assert_eq!(wind_estimate(&h[..1], 3), 1.0);
        assert_eq!(wind_estimate(&[], 3), 0.0);
    }

    #[test]
    fn linear_integral_is_exact() {
        let t = [0.0, 1.0, 3.0];
        let v = [0.0, 2.0, 0.0];
        assert!((integrate_linear(&t, &v, 0.0, 3.0) - 3.0).abs() < 1e-15);
        assert!((integrate_linear(&t, &v, 0.5, 2.0) - (0.75 + 1.5)).abs() < 1e-15);
        // clamped beyond the grid
        assert!((integrate_linear(&t, &v, 3.0, 5.0)).abs() < 1e-15);
    }
}
