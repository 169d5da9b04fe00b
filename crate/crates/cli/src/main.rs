use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use uavnet::model::{validate_scenario, ScenarioConfig};
use uavnet::ocp::{build_ocp, OcpOptions};
use uavnet::simloop::{run_closed_loop_with, SimOptions};
use uavnet::solver::oracles::{bangbang_speed, sic_order, waterfill, SicChannel};
use uavnet::solver::{SolveOptions, SolveStatus};
use uavnet::transcribe::{transcribe, Mesh, Scheme};
use uavnet::Error;
use uavnet_cli::{compare, exit_code, resolve_scenario, EXIT_INFEASIBLE, EXIT_PARSE, EXIT_SOLVER};

#[derive(Parser)]
#[command(name = "uavnet", version, about = "Energy-optimal transmission and trajectory planning for UAV networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file, or the name of a built-in scenario.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value = "trapezoidal")]
    scheme: Scheme,
    /// Comma-separated toggles, e.g. `fixed_trajectory,no_distance_relaxation`.
    #[arg(long, default_value = "")]
    options: String,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario against the schema and the physical rules.
    Validate {
        #[arg(long)]
        scenario: String,
        /// Print the fully resolved scenario.
        #[arg(long)]
        resolved: bool,
    },
    /// Open-loop solve.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        mesh_k: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Closed-loop simulation over fading channels.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Defaults to the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Mesh spacing of each replan [s].
        #[arg(long, default_value_t = 10.0)]
        mesh_interval: f64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Energy of the four bandwidth/mobility protocols.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 201)]
        mesh_k: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Analytic special cases.
    Oracle {
        #[command(subcommand)]
        kind: Oracle,
    },
}

#[derive(Subcommand)]
enum Oracle {
    /// Minimum-energy power profile on a fixed trajectory.
    Waterfill {
        /// Uses the first link's constant-speed geometry.
        #[arg(long, default_value = "single_fixed_45mb")]
        scenario: String,
        #[arg(long, default_value_t = 200)]
        mesh_k: usize,
        /// Replace the geometry by a constant squared distance [m²].
        #[arg(long)]
        constant_chi: Option<f64>,
        /// Data to deliver [bits]; defaults to the transmitter's buffer.
        #[arg(long)]
        data: Option<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Throughput-maximizing speed profile.
    Bangbang {
        #[arg(long, default_value_t = 0.0)]
        q_init: f64,
        #[arg(long, default_value_t = 24_000.0)]
        q_final: f64,
        #[arg(long, default_value_t = 12.0)]
        v_min: f64,
        #[arg(long, default_value_t = 28.0)]
        v_max: f64,
        #[arg(long, default_value_t = 1200.0)]
        horizon: f64,
    },
    /// Decoding order of a two-user MAC.
    Sic {
        #[arg(long)]
        chi1: f64,
        #[arg(long)]
        chi2: f64,
        #[arg(long, default_value_t = 1e5)]
        rate1: f64,
        #[arg(long, default_value_t = 1e5)]
        rate2: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map(exit_code).unwrap_or(1);
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<u8> {
    match cmd {
        Command::Validate { scenario, resolved } => cmd_validate(&scenario, resolved),
        Command::Solve { common, mesh_k, out_dir } => cmd_solve(&common, mesh_k, &out_dir),
        Command::Simulate { common, seed, mesh_interval, out_dir } => cmd_simulate(&common, seed, mesh_interval, &out_dir),
        Command::Compare { common, mesh_k, out_dir } => cmd_compare(&common, mesh_k, out_dir.as_deref()),
        Command::Oracle { kind } => cmd_oracle(kind),
    }
}

fn load(arg: &str) -> anyhow::Result<ScenarioConfig> {
    let cfg = resolve_scenario(arg)?;
    let violations = validate_scenario(&cfg);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Schema(format!("invalid scenario: {}", list.join("; "))).into());
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn config_value(cfg: &ScenarioConfig) -> anyhow::Result<serde_json::Value> {
    Ok(serde_json::from_str(&cfg.to_json())?)
}

fn cmd_validate(arg: &str, resolved: bool) -> anyhow::Result<u8> {
    let cfg = resolve_scenario(arg)?;
    let violations = validate_scenario(&cfg);
    if resolved {
        println!("{}", cfg.to_json());
    }
    if violations.is_empty() {
        println!("ok: {} nodes, {} links", cfg.nodes.len(), cfg.links.len());
        return Ok(0);
    }
    for v in &violations {
        println!("violation: {v}");
    }
    Ok(EXIT_PARSE)
}

fn cmd_solve(c: &Common, mesh_k: usize, out: &Path) -> anyhow::Result<u8> {
    let cfg = load(&c.scenario)?;
    let options = OcpOptions::parse_flags(&c.options)?;
    let ocp = build_ocp(&cfg, options)?;
    let mesh = Mesh::uniform(cfg.horizon.duration, mesh_k)?;
    let tr = transcribe(&ocp, &mesh, c.scheme)?;
    let solve_opts = SolveOptions::with_tol(c.tol);
    log::info!("{} variables, {} constraints", tr.nlp.n(), tr.nlp.m());
    let (sol, res) = tr.solve(None, &solve_opts)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    sol.write_csv(&mut create(out, "solution.csv")?)?;
    res.write_log(&mut create(out, "iterations.jsonl")?)?;
    let nodes: Vec<_> = sol
        .nodes
        .iter()
        .map(|n| {
            json!({
                "id": n.id,
                "transmission_energy_j": n.transmission_energy,
                "propulsion_energy_j": n.propulsion_energy,
            })
        })
        .collect();
    let summary = json!({
        "config": config_value(&cfg)?,
        "options": options,
        "mesh_intervals": mesh_k,
        "scheme": c.scheme,
        "solve_options": solve_opts,
        "status": res.status,
        "iterations": res.iterations,
        "objective": sol.objective,
        "kkt": res.kkt,
        "max_violation": res.max_violation,
        "worst_row": res.worst_row,
        "end_time_s": sol.end_time(),
        "nodes": nodes,
        "total_transmission_energy_j": sol.total_transmission_energy(),
        "total_propulsion_energy_j": sol.total_propulsion_energy(),
    });
    write_json(out, "summary.json", &summary)?;

    println!("status {:?} after {} iterations", res.status, res.iterations);
    println!("{:<8}{:>16}{:>16}", "node", "e_T [kJ]", "e_P [kJ]");
    for n in &sol.nodes {
        println!("{:<8}{:>16.3}{:>16.3}", n.id, n.transmission_energy / 1e3, n.propulsion_energy / 1e3);
    }
    Ok(match res.status {
        SolveStatus::Converged => 0,
        SolveStatus::Infeasible | SolveStatus::RestorationFailed => {
            eprintln!("infeasible: largest violation {:.3e} at {}", res.max_violation, res.worst_row.unwrap_or_default());
            EXIT_INFEASIBLE
        }
        _ => EXIT_SOLVER,
    })
}

fn cmd_simulate(c: &Common, seed: Option<u64>, mesh_interval: f64, out: &Path) -> anyhow::Result<u8> {
    let cfg = load(&c.scenario)?;
    let opts = SimOptions {
        mesh_interval,
        scheme: c.scheme,
        tol: c.tol.max(1e-6),
        ocp: OcpOptions::parse_flags(&c.options)?,
        ..SimOptions::default()
    };
    let seed = seed.unwrap_or(cfg.sim.seed);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let log = match run_closed_loop_with(&cfg, seed, &opts) {
        Ok(log) => log,
        Err(Error::Simulation { time, message, snapshot }) => {
            let snap: serde_json::Value = serde_json::from_str(&snapshot).unwrap_or(serde_json::Value::String(snapshot));
            write_json(out, "failure.json", &json!({ "time": time, "message": message, "state": snap }))?;
            return Err(Error::Simulation { time, message, snapshot: String::new() }.into());
        }
        Err(e) => return Err(e.into()),
    };
    log.write_packets_csv(&mut create(out, "packets.csv")?)?;
    log.write_trace_csv(&mut create(out, "trace.csv")?)?;
    let summary = json!({
        "config": log.config,
        "options": log.options,
        "summary": log.summary,
        "links": log.links,
        "replans": log.replans,
    });
    write_json(out, "summary.json", &summary)?;

    let s = &log.summary;
    println!("seed {} complete {} at {:?} s, overtime {:.1} s", s.seed, s.complete, s.completion_time, s.overtime_s);
    println!("residual at T: {} bits, conservation held: {}", s.residual_bits_at_horizon, s.conservation_held);
    println!("packets {} NAKs {} replans {} failed {}", s.packets, s.naks, s.replans, s.failed_replans);
    println!("e_T {:.1} kJ, e_P {:.1} kJ", s.total_transmission_j / 1e3, s.total_propulsion_j / 1e3);
    Ok(0)
}

fn cmd_compare(c: &Common, mesh_k: usize, out: Option<&Path>) -> anyhow::Result<u8> {
    let cfg = load(&c.scenario)?;
    let base = OcpOptions::parse_flags(&c.options)?;
    if base.fixed_trajectory || base.separate_bandwidth {
        bail!(Error::Options("compare sets the bandwidth and mobility toggles itself".into()));
    }
    let table = compare(&cfg, base, mesh_k, c.scheme, &SolveOptions::with_tol(c.tol))?;
    print!("{}", table.render());
    if let Some(out) = out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut value = serde_json::to_value(&table)?;
        value["config"] = config_value(&cfg)?;
        write_json(out, "compare.json", &value)?;
    }
    Ok(0)
}

fn cmd_oracle(kind: Oracle) -> anyhow::Result<u8> {
    match kind {
        Oracle::Waterfill { scenario, mesh_k, constant_chi, data, out_dir } => {
            let cfg = load(&scenario)?;
            let ocp = build_ocp(&cfg, OcpOptions::fixed())?;
            let link = ocp.links.first().ok_or_else(|| Error::Schema("scenario has no links".into()))?;
            let data = data.unwrap_or(ocp.nodes[link.from].spec.data_init);
            let mesh = Mesh::uniform(cfg.horizon.duration, mesh_k)?;
            let times = mesh.times.clone();
            let alpha = cfg.comm.path_loss_exponent;
            let gain = ocp.h_eff * ocp.antenna_gain;
            let eta: Vec<f64> = times
                .iter()
                .map(|&t| gain * constant_chi.unwrap_or_else(|| ocp.known_chi(0, t)).powf(-alpha))
                .collect();
            let band = &ocp.bands[link.band];
            let wf = waterfill(&times, &eta, data, band.bandwidth, band.noise, cfg.comm.power_max)?;
            let pmin = wf.power.iter().cloned().fold(f64::INFINITY, f64::min);
            let pmax = wf.power.iter().cloned().fold(0.0, f64::max);
            println!("water level zeta = {:.6} W", wf.zeta);
            println!("energy = {:.3} J for {:.0} bits", wf.energy, wf.data);
            println!("power range [{pmin:.6}, {pmax:.6}] W");
            if let Some(out) = out_dir {
                fs::create_dir_all(&out)?;
                let mut w = create(&out, "waterfill.csv")?;
                writeln!(w, "t_s,eta,power_w")?;
                for k in 0..times.len() {
                    writeln!(w, "{},{},{}", times[k], eta[k], wf.power[k])?;
                }
            }
        }
        Oracle::Bangbang { q_init, q_final, v_min, v_max, horizon } => {
            let p = bangbang_speed(q_init, q_final, v_min, v_max, horizon)?;
            println!("t1 = {:.6} s", p.t1);
            if let Some(t2) = p.t2 {
                println!("t2 = {t2:.6} s");
            }
            for (a, b, v) in &p.arcs {
                println!("[{a:9.3}, {b:9.3}) s at {v} m/s");
            }
        }
        Oracle::Sic { chi1, chi2, rate1, rate2 } => {
            let ch = SicChannel {
                chi: [chi1, chi2],
                alpha: uavnet::model::defaults::PATH_LOSS_EXPONENT,
                gain: uavnet::model::defaults::ANTENNA_GAIN,
                noise: uavnet::model::defaults::NOISE_W,
                bandwidth: uavnet::model::defaults::BANDWIDTH_HZ,
                p_max: uavnet::model::defaults::POWER_MAX_W,
            };
            let r = sic_order(&ch, [rate1, rate2])?;
            let first = r.order[0] + 1;
            let nearer = if chi1 == chi2 { "equal distances" } else { "nearer" };
            println!("decode user {first} first ({nearer}), phi = {}", r.phi);
            println!("powers [{:.6}, {:.6}] W, sum {:.6} W", r.power[0], r.power[1], r.sum_power);
        }
    }
    Ok(0)
}
