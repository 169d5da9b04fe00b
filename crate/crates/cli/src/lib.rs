//! Pieces of the `uavnet` command line that are worth testing on their own:
//! scenario lookup, exit codes and the four-protocol comparison.

use std::fmt;
use std::path::Path;

use serde::Serialize;
use uavnet::model::{load_scenario, presets, ScenarioConfig};
use uavnet::ocp::{build_ocp, OcpOptions};
use uavnet::solver::{SolveOptions, SolveStatus};
use uavnet::transcribe::{transcribe, Mesh, Scheme};
use uavnet::{Error, Result};

pub const EXIT_PARSE: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;

/// Exit status for a library error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        Error::Solver(_) | Error::NoConvergence(_) | Error::Simulation { .. } => EXIT_SOLVER,
        _ => EXIT_PARSE,
    }
}

/// Loads `arg` as a file, or as the name of a built-in scenario when no
/// such file exists.
pub fn resolve_scenario(arg: &str) -> Result<ScenarioConfig> {
    if Path::new(arg).exists() {
        return load_scenario(arg);
    }
    presets::all()
        .into_iter()
        .find(|(name, _)| *name == arg)
        .map(|(_, cfg)| cfg)
        .ok_or_else(|| {
            let names: Vec<&str> = presets::all().iter().map(|(n, _)| *n).collect();
            Error::Parse(format!("no file `{arg}` and no built-in scenario of that name (have: {})", names.join(", ")))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Each receiver's band split equally among its transmitters.
    Separate,
    SharedMac,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mobility {
    /// Aerial nodes cruise at their average speed.
    FixedVAvg,
    JointlyOptimized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProtocolVariant {
    pub bandwidth: Bandwidth,
    pub mobility: Mobility,
}

impl ProtocolVariant {
    /// Table order: worst case first.
    pub const ALL: [ProtocolVariant; 4] = [
        ProtocolVariant { bandwidth: Bandwidth::Separate, mobility: Mobility::FixedVAvg },
        ProtocolVariant { bandwidth: Bandwidth::Separate, mobility: Mobility::JointlyOptimized },
        ProtocolVariant { bandwidth: Bandwidth::SharedMac, mobility: Mobility::FixedVAvg },
        ProtocolVariant { bandwidth: Bandwidth::SharedMac, mobility: Mobility::JointlyOptimized },
    ];

    pub fn options(&self, base: OcpOptions) -> OcpOptions {
        OcpOptions {
            separate_bandwidth: self.bandwidth == Bandwidth::Separate,
            fixed_trajectory: self.mobility == Mobility::FixedVAvg,
            ..base
        }
    }
}

impl fmt::Display for ProtocolVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = match self.bandwidth {
            Bandwidth::Separate => "separate",
            Bandwidth::SharedMac => "shared_mac",
        };
        let m = match self.mobility {
            Mobility::FixedVAvg => "fixed_v_avg",
            Mobility::JointlyOptimized => "joint",
        };
        write!(f, "{b}/{m}")
    }
}

/// Energy of one node under one protocol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellEnergy {
    pub id: String,
    pub transmission_j: f64,
    pub propulsion_j: f64,
}

impl CellEnergy {
    pub fn total(&self) -> f64 {
        self.transmission_j + self.propulsion_j
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantResult {
    pub variant: ProtocolVariant,
    pub label: String,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Empty when infeasible.
    pub energies: Vec<CellEnergy>,
    pub message: Option<String>,
}

impl VariantResult {
    pub fn feasible(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn total(&self) -> Option<f64> {
        self.feasible().then(|| self.energies.iter().map(CellEnergy::total).sum())
    }

    pub fn node_total(&self, id: &str) -> Option<f64> {
        self.energies.iter().find(|e| e.id == id).map(CellEnergy::total)
    }
}

/// All four protocols, energies normalized by the worst feasible one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareTable {
    pub scenario: String,
    pub mesh_intervals: usize,
    pub scheme: Scheme,
    pub node_ids: Vec<String>,
    pub results: Vec<VariantResult>,
    /// Index into `results` of the worst feasible variant.
    pub reference: usize,
}

impl CompareTable {
    pub fn get(&self, v: ProtocolVariant) -> &VariantResult {
        self.results.iter().find(|r| r.variant == v).expect("every variant is solved")
    }

    /// Node energy relative to the reference variant; `None` for NA cells.
    pub fn ratio(&self, v: ProtocolVariant, id: &str) -> Option<f64> {
        let r = self.get(v);
        if !r.feasible() {
            return None;
        }
        let den = self.results[self.reference].node_total(id)?;
        let num = r.node_total(id)?;
        Some(if den > 0.0 { num / den } else { f64::NAN })
    }

    pub fn total_ratio(&self, v: ProtocolVariant) -> Option<f64> {
        Some(self.get(v).total()? / self.results[self.reference].total()?)
    }

    /// Fixed-width text table: one row per node plus the total.
    pub fn render(&self) -> String {
        let cell = |x: Option<f64>| x.map(|x| format!("{x:.3}")).unwrap_or_else(|| "NA".into());
        let mut out = format!("{:<10}", "energy");
        for r in &self.results {
            out += &format!("{:>24}", r.label);
        }
        out.push('\n');
        for id in &self.node_ids {
            out += &format!("{:<10}", format!("e_{id}"));
            for r in &self.results {
                out += &format!("{:>24}", cell(self.ratio(r.variant, id)));
            }
            out.push('\n');
        }
        out += &format!("{:<10}", "total");
        for r in &self.results {
            out += &format!("{:>24}", cell(self.total_ratio(r.variant)));
        }
        out.push('\n');
        out += &format!("{:<10}", "total [J]");
        for r in &self.results {
            out += &format!("{:>24}", r.total().map(|x| format!("{x:.1}")).unwrap_or_else(|| "NA".into()));
        }
        out.push('\n');
        out
    }
}

fn solve_variant(
    cfg: &ScenarioConfig,
    v: ProtocolVariant,
    base: OcpOptions,
    mesh: &Mesh,
    scheme: Scheme,
    opts: &SolveOptions,
) -> Result<VariantResult> {
    let ocp = build_ocp(cfg, v.options(base))?;
    let tr = transcribe(&ocp, mesh, scheme)?;
    let (sol, res) = tr.solve(None, opts)?;
    let label = v.to_string();
    match res.status {
        SolveStatus::Converged => Ok(VariantResult {
            variant: v,
            label,
            status: res.status,
            iterations: res.iterations,
            energies: sol
                .nodes
                .iter()
                .map(|n| CellEnergy {
                    id: n.id.clone(),
                    transmission_j: n.transmission_energy,
                    propulsion_j: n.propulsion_energy,
                })
                .collect(),
            message: None,
        }),
        SolveStatus::Infeasible | SolveStatus::RestorationFailed => Ok(VariantResult {
            variant: v,
            label,
            status: res.status,
            iterations: res.iterations,
            energies: Vec::new(),
            message: Some(format!(
                "largest violation {:.3e} at {}",
                res.max_violation,
                res.worst_row.unwrap_or_default()
            )),
        }),
        other => Err(Error::Solver(format!("{label}: {other:?} after {} iterations", res.iterations))),
    }
}

/// Solves the four protocols in parallel. Fails when none is feasible.
pub fn compare(
    cfg: &ScenarioConfig,
    base: OcpOptions,
    mesh_intervals: usize,
    scheme: Scheme,
    opts: &SolveOptions,
) -> Result<CompareTable> {
    let mesh = Mesh::uniform(cfg.horizon.duration, mesh_intervals)?;
    let results: Vec<Result<VariantResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = ProtocolVariant::ALL
            .iter()
            .map(|&v| {
                let mesh = &mesh;
                s.spawn(move || solve_variant(cfg, v, base, mesh, scheme, opts))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Solver("solver thread panicked".into()))))
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let reference = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.total().map(|t| (i, t)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Infeasible("every protocol variant is infeasible".into()))?;
    Ok(CompareTable {
        scenario: cfg.name.clone(),
        mesh_intervals,
        scheme,
        node_ids: cfg.nodes.iter().map(|n| n.id.clone()).collect(),
        results,
        reference,
    })
}
