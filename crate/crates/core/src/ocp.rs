//! Continuous-time optimal control problem: node and link variables, MAC
//! capacity constraints per receiver band, buffer and flight dynamics,
//! boundary conditions, cost and the available reformulations.

use serde::{Deserialize, Serialize};

use crate::channel::{effective_gain, MAX_BAND_USERS};
use crate::error::{Error, Result};
use crate::model::{NodeSpec, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Transmission plus propulsion energy.
    #[default]
    MinEnergy,
    /// Transmit at full power and maximize delivered bits; buffers ignored.
    MaxThroughput,
}

/// Free terminal time: the remaining horizon is multiplied by a decision
/// variable `τ ∈ [min_scale, max_scale]` and each second beyond the nominal
/// horizon costs `overtime_weight` joules. Mobile nodes may end beyond
/// their destination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeHorizon {
    #[serde(default = "one")]
    pub min_scale: f64,
    pub max_scale: f64,
    pub overtime_weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpOptions {
    /// `χ ≥ ‖X‖²` instead of equality.
    pub distance_relaxation: bool,
    /// Eliminate thrust: cost `∫vD(v) + m/2 (v(T)² − v(0)²)`.
    pub convex_cost_substitution: bool,
    /// Freeze every aerial node on its constant-speed path.
    pub fixed_trajectory: bool,
    /// Keep only links between consecutive nodes, each on its own band.
    pub single_hop_chain: bool,
    /// Drop single-user bounds that are provably inactive.
    pub sic_pruning: bool,
    /// Split each receiver's bandwidth equally among its transmitters.
    pub separate_bandwidth: bool,
    pub objective: Objective,
    /// Lower rate bound on every link [bit/s].
    pub min_rate: f64,
    pub free_horizon: Option<FreeHorizon>,
}

impl Default for OcpOptions {
    fn default() -> Self {
        Self {
            distance_relaxation: true,
            convex_cost_substitution: true,
            fixed_trajectory: false,
            single_hop_chain: false,
            sic_pruning: false,
            separate_bandwidth: false,
            objective: Objective::MinEnergy,
            min_rate: 0.0,
            free_horizon: None,
        }
    }
}

impl OcpOptions {
    pub fn fixed() -> Self {
        Self { fixed_trajectory: true, ..Self::default() }
    }

    /// Applies a toggle such as `fixed_trajectory` or `no_distance_relaxation`.
    pub fn apply_flag(&mut self, flag: &str) -> Result<()> {
        let (on, name) = match flag.strip_prefix("no_") {
            Some(rest) => (false, rest),
            None => (true, flag),
        };
        match name {
            "distance_relaxation" => self.distance_relaxation = on,
            "convex_cost_substitution" => self.convex_cost_substitution = on,
            "fixed_trajectory" => self.fixed_trajectory = on,
            "single_hop_chain" => self.single_hop_chain = on,
            "sic_pruning" => self.sic_pruning = on,
            "separate_bandwidth" => self.separate_bandwidth = on,
            "max_throughput" => {
                self.objective = if on { Objective::MaxThroughput } else { Objective::MinEnergy }
            }
            _ => return Err(Error::Options(format!("unknown option `{flag}`"))),
        }
        Ok(())
    }

    /// Parses a comma-separated flag list.
    pub fn parse_flags(list: &str) -> Result<Self> {
        let mut o = Self::default();
        for f in list.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            o.apply_flag(f)?;
        }
        Ok(o)
    }
}

/// Node as seen by the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpNode {
    pub spec: NodeSpec,
    /// Carries position, speed and acceleration decision variables.
    pub mobile: bool,
    /// Υ, ±1.
    pub direction: f64,
    /// Carries a buffer state.
    pub buffered: bool,
    /// Speed of the frozen constant-speed path (fixed trajectory only).
    pub cruise_speed: f64,
}

impl OcpNode {
    /// Position on the frozen path, `t` measured from the problem start.
    pub fn frozen_position(&self, t: f64) -> f64 {
        self.spec.q_init + self.direction * self.cruise_speed * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpLink {
    pub from: usize,
    pub to: usize,
    pub band: usize,
}

/// Transmitters sharing one receiver's bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub receiver: usize,
    /// Link indices.
    pub links: Vec<usize>,
    pub bandwidth: f64,
    pub noise: f64,
    /// Constrained subsets (link indices).
    pub subsets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpProblem {
    pub name: String,
    pub options: OcpOptions,
    pub nodes: Vec<OcpNode>,
    pub links: Vec<OcpLink>,
    pub bands: Vec<Band>,
    /// Nominal horizon length [s].
    pub horizon: f64,
    /// Clock time of the problem start [s].
    pub start_time: f64,
    /// Full scenario bandwidth, used as the rate scale [Hz].
    pub bandwidth: f64,
    pub noise: f64,
    pub power_max: f64,
    pub alpha: f64,
    pub antenna_gain: f64,
    /// Channel gain used for planning (1 for AWGN, the outage quantile
    /// otherwise).
    pub h_eff: f64,
    /// Wind estimate δ̂ in `q̇ = Υv − δ̂` [m/s].
    pub wind_estimate: f64,
}

/// All nonempty subsets of `items`, ordered by size and then
/// lexicographically by position.
pub fn enumerate_mac_subsets<T: Clone>(items: &[T]) -> Result<Vec<Vec<T>>> {
    let n = items.len();
    if n > MAX_BAND_USERS {
        return Err(Error::SubsetCap { count: n, cap: MAX_BAND_USERS });
    }
    let mut masks: Vec<u32> = (1..(1u32 << n)).collect();
    masks.sort_by_key(|&m| {
        // lexicographic on the sorted index lists of equal size
        let idx: Vec<usize> = (0..n).filter(|i| m & (1 << i) != 0).collect();
        (m.count_ones(), idx)
    });
    Ok(masks
        .into_iter()
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).map(|i| items[i].clone()).collect())
        .collect())
}

/// Builds the problem for `cfg`.
pub fn build_ocp(cfg: &ScenarioConfig, options: OcpOptions) -> Result<OcpProblem> {
    let horizon = cfg.horizon.duration;
    if !(horizon > 0.0) {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    if let Some(fh) = options.free_horizon {
        if !(fh.min_scale > 0.0 && fh.min_scale <= 1.0 && fh.max_scale >= 1.0 && fh.overtime_weight >= 0.0) {
            return Err(Error::Options("free horizon needs 0 < min_scale ≤ 1 ≤ max_scale and a non-negative weight".into()));
        }
        if options.fixed_trajectory {
            return Err(Error::Options("free horizon is meaningless on a frozen trajectory".into()));
        }
    }
    if options.min_rate < 0.0 {
        return Err(Error::Options("min_rate must be non-negative".into()));
    }

    let pairs: Vec<(usize, usize)> = if options.single_hop_chain {
        (0..cfg.nodes.len().saturating_sub(1)).map(|i| (i, i + 1)).collect()
    } else {
        cfg.links
            .iter()
            .map(|l| {
                let from = cfg.node_index(&l.from).ok_or_else(|| Error::Schema(format!("unknown node `{}`", l.from)))?;
                let to = cfg.node_index(&l.to).ok_or_else(|| Error::Schema(format!("unknown node `{}`", l.to)))?;
                if from == to {
                    return Err(Error::Schema(format!("self-link on `{}`", l.from)));
                }
                Ok((from, to))
            })
            .collect::<Result<_>>()?
    };

    let mut nodes: Vec<OcpNode> = cfg
        .nodes
        .iter()
        .map(|n| {
            let mobile = n.is_mobile() && !options.fixed_trajectory;
            OcpNode {
                spec: n.clone(),
                mobile,
                direction: n.direction(),
                buffered: false,
                cruise_speed: if n.is_aerial() { n.path_length() / horizon } else { 0.0 },
            }
        })
        .collect();
    if options.objective == Objective::MinEnergy {
        for &(f, t) in &pairs {
            nodes[f].buffered = true;
            let rx = &cfg.nodes[t];
            // pure sinks need no buffer
            if rx.memory.is_finite() || rx.data_final.is_finite() {
                nodes[t].buffered = true;
            }
        }
    }

    let mut links = Vec::with_capacity(pairs.len());
    let mut bands: Vec<Band> = Vec::new();
    let mut rx_order: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    rx_order.dedup();
    let mut seen = Vec::new();
    for &rx in &rx_order {
        if seen.contains(&rx) {
            continue;
        }
        seen.push(rx);
        let members: Vec<usize> = (0..pairs.len()).filter(|&l| pairs[l].1 == rx).collect();
        let separate = options.separate_bandwidth || options.single_hop_chain;
        if separate {
            let share = members.len() as f64;
            for &l in &members {
                bands.push(Band {
                    receiver: rx,
                    links: vec![l],
                    bandwidth: cfg.comm.bandwidth / share,
                    noise: cfg.comm.noise / share,
                    subsets: vec![vec![l]],
                });
            }
        } else {
            bands.push(Band {
                receiver: rx,
                subsets: enumerate_mac_subsets(&members)?,
                links: members,
                bandwidth: cfg.comm.bandwidth,
                noise: cfg.comm.noise,
            });
        }
    }
    for (l, &(from, to)) in pairs.iter().enumerate() {
        let band = bands.iter().position(|b| b.links.contains(&l)).expect("every link has a band");
        links.push(OcpLink { from, to, band });
    }

    let h_eff = effective_gain(&cfg.channel)?;
    let mut ocp = OcpProblem {
        name: cfg.name.clone(),
        options,
        nodes,
        links,
        bands,
        horizon,
        start_time: 0.0,
        bandwidth: cfg.comm.bandwidth,
        noise: cfg.comm.noise,
        power_max: cfg.comm.power_max,
        alpha: cfg.comm.path_loss_exponent,
        antenna_gain: cfg.comm.antenna_gain,
        h_eff,
        wind_estimate: 0.0,
    };
    if options.sic_pruning {
        ocp = prune_sic(ocp);
    }
    Ok(ocp)
}

impl OcpProblem {
    pub fn link_label(&self, l: usize) -> String {
        let k = &self.links[l];
        format!("{}->{}", self.nodes[k.from].spec.id, self.nodes[k.to].spec.id)
    }

    /// Static squared-distance part `δ² + a²` of link `l`.
    pub fn chi_offset(&self, l: usize) -> f64 {
        let a = &self.nodes[self.links[l].from].spec;
        let b = &self.nodes[self.links[l].to].spec;
        let dl = a.lateral_offset - b.lateral_offset;
        let da = a.altitude - b.altitude;
        dl * dl + da * da
    }

    /// Whether the link's distance is a decision variable.
    pub fn chi_varies(&self, l: usize) -> bool {
        self.nodes[self.links[l].from].mobile || self.nodes[self.links[l].to].mobile
    }

    /// Position of a node that is not mobile at time `t` from the start.
    pub fn known_position(&self, n: usize, t: f64) -> f64 {
        let node = &self.nodes[n];
        if node.spec.is_mobile() && !node.mobile {
            node.frozen_position(t)
        } else {
            node.spec.q_init
        }
    }

    /// Squared distance of link `l` at `t` when both ends are known.
    pub fn known_chi(&self, l: usize, t: f64) -> f64 {
        let dq = self.known_position(self.links[l].from, t) - self.known_position(self.links[l].to, t);
        dq * dq + self.chi_offset(l)
    }

    /// Gain multiplying `p` in the SNR of link `l` on its band:
    /// `h G / σ_b²`, so the SNR is `gain · p · χ^{-α}`.
    pub fn snr_gain(&self, l: usize) -> f64 {
        let band = &self.bands[self.links[l].band];
        self.h_eff * self.antenna_gain / band.noise
    }

    pub fn outgoing(&self, n: usize) -> Vec<usize> {
        (0..self.links.len()).filter(|&l| self.links[l].from == n).collect()
    }

    pub fn incoming(&self, n: usize) -> Vec<usize> {
        (0..self.links.len()).filter(|&l| self.links[l].to == n).collect()
    }

    /// Total number of capacity constraints per time point.
    pub fn capacity_rows(&self) -> usize {
        self.bands.iter().map(|b| b.subsets.len()).sum()
    }

    /// One line per constraint family with a descriptive tag.
    pub fn describe(&self) -> Vec<String> {
        let mut out = Vec::new();
        let id = |n: usize| self.nodes[n].spec.id.as_str();
        let cost = match self.options.objective {
            Objective::MinEnergy if self.options.fixed_trajectory => "minimize Σ∫p dt".to_string(),
            Objective::MinEnergy if self.options.convex_cost_substitution => {
                "minimize Σ∫p dt + Σ[∫vD(v) dt + m/2 (v(T)² − v(0)²)]".to_string()
            }
            Objective::MinEnergy => "minimize Σ∫p dt + Σ∫F v dt".to_string(),
            Objective::MaxThroughput => "maximize Σ∫r dt at p = P_max".to_string(),
        };
        out.push(format!("[cost] {cost}"));
        if let Some(fh) = self.options.free_horizon {
            out.push(format!(
                "[cost] + {} J/s · overtime, horizon scale τ ∈ [{}, {}]",
                fh.overtime_weight, fh.min_scale, fh.max_scale
            ));
        }
        for b in &self.bands {
            for s in &b.subsets {
                let users: Vec<String> = s.iter().map(|&l| id(self.links[l].from).to_string()).collect();
                out.push(format!(
                    "[capacity {}] Σ r{{{}}} ≤ {} log2(1 + Σ h G p χ^-{} / {})",
                    id(b.receiver),
                    users.join(","),
                    b.bandwidth,
                    self.alpha,
                    b.noise
                ));
            }
        }
        for l in 0..self.links.len() {
            if self.chi_varies(l) {
                let rel = if self.options.distance_relaxation { "≥" } else { "=" };
                out.push(format!(
                    "[distance {}] χ {rel} (q_{} − q_{})² + {}",
                    self.link_label(l),
                    id(self.links[l].from),
                    id(self.links[l].to),
                    self.chi_offset(l)
                ));
            }
        }
        for (n, node) in self.nodes.iter().enumerate() {
            let s = &node.spec;
            if node.buffered {
                let inn: Vec<String> = self.incoming(n).iter().map(|&l| format!("r_{}", self.link_label(l))).collect();
                let out_: Vec<String> = self.outgoing(n).iter().map(|&l| format!("r_{}", self.link_label(l))).collect();
                out.push(format!(
                    "[buffer {}] ds/dt = [{}] − [{}], s(0) = {}, s(T) ≤ {:?}, 0 ≤ s ≤ {:?}",
                    s.id,
                    inn.join(" + "),
                    out_.join(" + "),
                    s.data_init,
                    s.data_final,
                    s.memory
                ));
            }
            if node.mobile {
                out.push(format!(
                    "[kinematics {}] dq/dt = {}·v − {}, dv/dt = a, q(0) = {}, q(T) = {}",
                    s.id, node.direction, self.wind_estimate, s.q_init, s.q_final
                ));
                out.push(format!("[speed {}] {} ≤ v ≤ {}", s.id, s.speed_min, s.speed_max));
                out.push(format!("[thrust {}] {:?} ≤ D(v) + m a ≤ {:?}", s.id, s.thrust_min, s.thrust_max));
            } else if s.is_mobile() {
                out.push(format!("[frozen {}] v ≡ {}", s.id, node.cruise_speed));
            }
        }
        if self.options.min_rate > 0.0 {
            out.push(format!("[rate] r ≥ {} on every link", self.options.min_rate));
        }
        out
    }
}

/// Drops the single-user bound of the nearer user on every two-user band
/// whose distance ordering is strict over the whole horizon. Only frozen
/// trajectories are analysed; anything else is returned unchanged.
pub fn prune_sic(mut ocp: OcpProblem) -> OcpProblem {
    if !ocp.options.fixed_trajectory {
        return ocp;
    }
    const SAMPLES: usize = 2000;
    for b in 0..ocp.bands.len() {
        let band = &ocp.bands[b];
        if band.links.len() != 2 {
            continue;
        }
        let (l0, l1) = (band.links[0], band.links[1]);
        let (mut first_nearer, mut second_nearer) = (true, true);
        for i in 0..=SAMPLES {
            let t = ocp.horizon * i as f64 / SAMPLES as f64;
            let (c0, c1) = (ocp.known_chi(l0, t), ocp.known_chi(l1, t));
            first_nearer &= c0 < c1;
            second_nearer &= c1 < c0;
        }
        let drop = if first_nearer {
            l0
        } else if second_nearer {
            l1
        } else {
            continue;
        };
        ocp.bands[b].subsets.retain(|s| s != &vec![drop]);
    }
    ocp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{presets, MEGABYTE};

    #[test]
    fn subsets_in_documented_order() {
        assert_eq!(enumerate_mac_subsets(&[1]).unwrap(), vec![vec![1]]);
        assert_eq!(enumerate_mac_subsets(&[1, 2]).unwrap(), vec![vec![1], vec![2], vec![1, 2]]);
        let three = enumerate_mac_subsets(&[1, 2, 3]).unwrap();
        assert_eq!(
            three,
            vec![vec![1], vec![2], vec![3], vec![1, 2], vec![1, 3], vec![2, 3], vec![1, 2, 3]]
        );
        let many: Vec<usize> = (0..17).collect();
        assert!(matches!(enumerate_mac_subsets(&many), Err(Error::SubsetCap { count: 17, .. })));
    }

    #[test]
    fn mac_constraint_counts() {
        let cfg = presets::two_uav(MEGABYTE, MEGABYTE);
        let ocp = build_ocp(&cfg, OcpOptions::default()).unwrap();
        assert_eq!(ocp.capacity_rows(), 3);
        let sep = build_ocp(&cfg, OcpOptions { separate_bandwidth: true, ..Default::default() }).unwrap();
        assert_eq!(sep.bands.len(), 2);
        assert_eq!(sep.bands[0].bandwidth, 5e4);
    }

    #[test]
    fn sic_prunes_nearer_user() {
        let cfg = presets::two_uav(MEGABYTE, MEGABYTE);
        let ocp = build_ocp(&cfg, OcpOptions { sic_pruning: true, ..OcpOptions::fixed() }).unwrap();
        // a1 flies directly over the access point, a2 is offset
        assert_eq!(ocp.bands[0].subsets, vec![vec![1], vec![0, 1]]);
        let single = build_ocp(&presets::single_uav(MEGABYTE), OcpOptions { sic_pruning: true, ..OcpOptions::fixed() }).unwrap();
        assert_eq!(single.bands[0].subsets, vec![vec![0]]);
    }

    #[test]
    fn flags_parse() {
        let o = OcpOptions::parse_flags("fixed_trajectory, no_distance_relaxation,sic_pruning").unwrap();
        assert!(o.fixed_trajectory && !o.distance_relaxation && o.sic_pruning);
        assert!(OcpOptions::parse_flags("warp_drive").is_err());
    }
}
