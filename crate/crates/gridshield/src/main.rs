//! Command-line front end: observability inspection, attack synthesis,
//! defense planning, plan verification, case generation and MPS export.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use gridshield::attack_synth::{bridging_attack, min_cut_attack_with_typing};
use gridshield::dc_core::{build_jacobian, default_tau};
use gridshield::defense::{
    build_masa_milp, mixed_defense_for_case, steiner_cti, AugmentedPlacement, DefensePlan,
    MappedProtection, MasaInstance,
};
use gridshield::error::GridError;
use gridshield::grid_model::{
    generate_placement, load_case, parse_label, save_case, synth_cost_model, BusId, Case, Dollars,
    LineId, MeterId, PlacementProfile, Pmu, PROFILE_118, PROFILE_14, PROFILE_57,
};
use gridshield::milp::{export_mps, SolveLimits};
use gridshield::observability::{
    bridging_edges, find_emst, measured_graph, vertex_types,
};
use gridshield::tph::tph_run;
use gridshield::verify::{simulate_undetectability, verify_plan};

#[derive(Parser)]
#[command(name = "gridshield", version, about = "DC state-estimation attack and defense planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DefendMode {
    Cti,
    Mixed,
    Tph,
}

#[derive(Subcommand)]
enum Command {
    /// Report observability, bridging edges, vertex types and one EMST
    Inspect {
        case: PathBuf,
        /// Print the measurement Jacobian as CSV instead of the report
        #[arg(long)]
        dump_jacobian: bool,
    },
    /// Build a minimum-knowledge undetectable attack plan
    Attack {
        case: PathBuf,
        /// Target buses, e.g. v10,v12
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<String>,
        /// Error magnitude applied to the sink side
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan a defense for the given targets
    Defend {
        case: PathBuf,
        #[arg(long, value_enum)]
        mode: DefendMode,
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<String>,
        /// Extra PMU buses (cost 1.0 each) on top of the case file's
        #[arg(long, value_delimiter = ',')]
        pmus: Vec<String>,
        /// Arborescence samples per pruning round (tph mode)
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify a plan file; exit 0 only if every check passes
    Verify {
        #[arg(long)]
        plan: PathBuf,
        /// Case path override (defaults to the path stored in the plan)
        #[arg(long)]
        case: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Detection threshold override for attack-plan simulation
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Generate a synthetic observable case
    GenCase {
        /// Table profile: 14, 57 or 118 buses
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        buses: Option<usize>,
        #[arg(long)]
        lines: Option<usize>,
        #[arg(long)]
        injections: Option<usize>,
        #[arg(long)]
        flows: Option<usize>,
        #[arg(long)]
        unmeasured: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fraction of measured lines offered as covert candidates
        #[arg(long, default_value_t = 0.0)]
        covert_frac: f64,
        #[arg(long, default_value_t = 0.1)]
        covert_cost: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the defense MILP in MPS format
    ExportMps {
        case: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<String>,
        /// cti fixes all injection mappings to zero
        #[arg(long, value_enum, default_value = "mixed")]
        mode: DefendMode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gridshield: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &GridError) -> u8 {
    match e {
        GridError::NotAttackable
        | GridError::Undefendable
        | GridError::P2NotCtiProtectable(_)
        | GridError::Unobservable { .. }
        | GridError::Theorem1Violation(_)
        | GridError::NotP2Type(_) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<ExitCode, GridError> {
    match cli.command {
        Command::Inspect { case, dump_jacobian } => cmd_inspect(&case, dump_jacobian),
        Command::Attack { case, targets, beta, out } => cmd_attack(&case, &targets, beta, out),
        Command::Defend { case, mode, targets, pmus, k, seed, out } => {
            cmd_defend(&case, mode, &targets, &pmus, k, seed, out)
        }
        Command::Verify { plan, case, trials, seed, tau } => {
            cmd_verify(&plan, case, trials, seed, tau)
        }
        Command::GenCase {
            profile,
            buses,
            lines,
            injections,
            flows,
            unmeasured,
            seed,
            covert_frac,
            covert_cost,
            out,
        } => cmd_gen_case(
            profile,
            buses,
            lines,
            injections,
            flows,
            unmeasured,
            seed,
            covert_frac,
            covert_cost,
            out,
        ),
        Command::ExportMps { case, targets, mode, out } => cmd_export_mps(&case, &targets, mode, out),
    }
}

fn read_case(path: &Path) -> Result<Case, GridError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GridError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    load_case(&text)
}

fn parse_buses(labels: &[String], case: &Case) -> Result<BTreeSet<BusId>, GridError> {
    let mut out = BTreeSet::new();
    for label in labels {
        let idx = parse_label(label, 'v')
            .ok_or_else(|| GridError::Invalid(format!("bad bus label {label:?}")))?;
        if idx >= case.network.bus_count {
            return Err(GridError::Invalid(format!("{label} is not a bus of the case")));
        }
        out.insert(BusId(idx));
    }
    Ok(out)
}

fn emit(out: Option<PathBuf>, text: &str) -> Result<(), GridError> {
    match out {
        Some(path) => std::fs::write(&path, text)
            .map_err(|e| GridError::Invalid(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_inspect(path: &Path, dump_jacobian: bool) -> Result<ExitCode, GridError> {
    let case = read_case(path)?;
    if dump_jacobian {
        let jac = build_jacobian(&case.network, &case.placement);
        print!("{}", jac.full.to_csv());
        return Ok(ExitCode::SUCCESS);
    }
    let mg = measured_graph(&case.network, &case.placement);
    let emst = find_emst(&mg);
    let report = match &emst {
        None => json!({
            "case": path.to_string_lossy(),
            "observable": false,
        }),
        Some(witness) => {
            let bridging = bridging_edges(&mg)?;
            let typing = vertex_types(&mg)?;
            json!({
                "case": path.to_string_lossy(),
                "observable": true,
                "bridging_edges": bridging.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
                "p2_vertices": typing.p2_vertices.iter().map(|b| b.to_string()).collect::<Vec<_>>(),
                "emst": witness
                    .mapping
                    .iter()
                    .map(|(l, m)| json!({"line": l.to_string(), "meter": m.to_string()}))
                    .collect::<Vec<_>>(),
            })
        }
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report json"));
    Ok(ExitCode::SUCCESS)
}

fn cmd_attack(
    path: &Path,
    target_labels: &[String],
    beta: f64,
    out: Option<PathBuf>,
) -> Result<ExitCode, GridError> {
    let case = read_case(path)?;
    let targets = parse_buses(target_labels, &case)?;
    let mg = measured_graph(&case.network, &case.placement);
    let typing = vertex_types(&mg)?;
    let p1: BTreeSet<BusId> =
        targets.iter().copied().filter(|d| !typing.p2_vertices.contains(d)).collect();
    let p2: BTreeSet<BusId> =
        targets.iter().copied().filter(|d| typing.p2_vertices.contains(d)).collect();

    let mut total = vec![0.0; case.placement.len()];
    let mut cut_lines: BTreeSet<LineId> = BTreeSet::new();
    let mut knowledge_cost = Dollars::ZERO;
    let mut sink_side: BTreeSet<BusId> = BTreeSet::new();
    if !p1.is_empty() {
        let plan = min_cut_attack_with_typing(
            &case.network,
            &case.placement,
            &mg,
            &typing,
            &p1,
            &case.cost_model,
            beta,
        )?;
        for (t, a) in total.iter_mut().zip(&plan.attack.a) {
            *t += a;
        }
        cut_lines = plan.knowledge_lines;
        knowledge_cost = plan.cost;
        sink_side = plan.sink_side;
    }
    for d in &p2 {
        let attack = bridging_attack(&case.network, &case.placement, &typing, *d)?;
        for (t, a) in total.iter_mut().zip(&attack.a) {
            *t += a;
        }
    }
    let kind = match (p1.is_empty(), p2.is_empty()) {
        (false, true) => "min-cut",
        (true, false) => "topology-free",
        _ => "mixed",
    };
    let injections: Vec<serde_json::Value> = total
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 1e-12)
        .map(|(i, v)| json!({"meter": MeterId(i).to_string(), "value": v}))
        .collect();
    let plan_json = json!({
        "kind": "attack",
        "case": path.to_string_lossy(),
        "targets": targets.iter().map(|b| b.to_string()).collect::<Vec<_>>(),
        "attack_kind": kind,
        "beta": beta,
        "cut_lines": cut_lines.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
        "knowledge_cost": knowledge_cost.as_f64(),
        "sink_side": sink_side.iter().map(|b| b.to_string()).collect::<Vec<_>>(),
        "injections": injections,
    });
    emit(out, &serde_json::to_string_pretty(&plan_json).expect("plan json"))?;
    Ok(ExitCode::SUCCESS)
}

fn mapped_label(m: &MappedProtection) -> String {
    match m {
        MappedProtection::FlowMeter(id) | MappedProtection::InjectionMeter(id) => id.to_string(),
        MappedProtection::CovertLine(l) => format!("cti:{l}"),
        MappedProtection::Pmu(b) => format!("pmu:{b}"),
    }
}

fn plan_to_json(path: &Path, mode: &str, targets: &BTreeSet<BusId>, plan: &DefensePlan) -> String {
    let value = json!({
        "kind": "defense",
        "case": path.to_string_lossy(),
        "mode": mode,
        "targets": targets.iter().map(|b| b.to_string()).collect::<Vec<_>>(),
        "covert_lines": plan.covert_lines.iter().map(|l| l.to_string()).collect::<Vec<_>>(),
        "secured_meters": plan.secured_meters.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
        "secured_pmus": plan.secured_pmus.iter().map(|b| b.to_string()).collect::<Vec<_>>(),
        "total_cost": plan.total_cost.as_f64(),
        "witness_arcs": plan
            .witness
            .iter()
            .map(|w| {
                json!({
                    "from": w.from.to_string(),
                    "to": w.to.to_string(),
                    "line": if w.pseudo { format!("pseudo:{}", w.line) } else { w.line.to_string() },
                    "via": mapped_label(&w.mapped),
                })
            })
            .collect::<Vec<_>>(),
        "milp_nodes": plan.milp_nodes,
        "milp_iterations": plan.milp_iterations,
    });
    serde_json::to_string_pretty(&value).expect("plan json")
}

fn cmd_defend(
    path: &Path,
    mode: DefendMode,
    target_labels: &[String],
    pmu_labels: &[String],
    k: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<ExitCode, GridError> {
    let mut case = read_case(path)?;
    let targets = parse_buses(target_labels, &case)?;
    for label in pmu_labels {
        let idx = parse_label(label, 'v')
            .ok_or_else(|| GridError::Invalid(format!("bad bus label {label:?}")))?;
        case.pmus.push(Pmu { bus: BusId(idx), secure_cost: Dollars::from_f64(1.0).unwrap() });
    }
    let limits = SolveLimits::default();
    let (mode_name, plan) = match mode {
        DefendMode::Cti => (
            "cti",
            steiner_cti(&case.network, &case.placement, &case.cost_model, &targets, limits)?,
        ),
        DefendMode::Mixed => ("mixed", mixed_defense_for_case(&case, &targets, limits)?),
        DefendMode::Tph => (
            "tph",
            tph_run(
                &case.network,
                &case.placement,
                &case.cost_model,
                &targets,
                &case.pmus,
                k,
                seed,
            )?,
        ),
    };
    emit(out, &plan_to_json(path, mode_name, &targets, &plan))?;
    Ok(ExitCode::SUCCESS)
}

fn labels_to_set<T>(values: &[serde_json::Value], prefix: char, build: fn(usize) -> T) -> Result<BTreeSet<T>, GridError>
where
    T: Ord,
{
    let mut out = BTreeSet::new();
    for v in values {
        let s = v.as_str().ok_or_else(|| GridError::Invalid("bad label in plan".into()))?;
        let idx = parse_label(s, prefix)
            .ok_or_else(|| GridError::Invalid(format!("bad label {s:?} in plan")))?;
        out.insert(build(idx));
    }
    Ok(out)
}

fn cmd_verify(
    plan_path: &Path,
    case_override: Option<PathBuf>,
    trials: usize,
    seed: u64,
    tau: Option<f64>,
) -> Result<ExitCode, GridError> {
    let text = std::fs::read_to_string(plan_path)
        .map_err(|e| GridError::Invalid(format!("cannot read {}: {e}", plan_path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| GridError::Invalid(format!("bad plan json: {e}")))?;
    let case_path = match case_override {
        Some(p) => p,
        None => {
            let stored = value["case"]
                .as_str()
                .ok_or_else(|| GridError::Invalid("plan carries no case path".into()))?;
            let direct = PathBuf::from(stored);
            if direct.exists() {
                direct
            } else {
                plan_path.parent().unwrap_or(Path::new(".")).join(stored)
            }
        }
    };
    let case = read_case(&case_path)?;
    let target_values = value["targets"]
        .as_array()
        .cloned()
        .unwrap_or_default();
    let targets: BTreeSet<BusId> = labels_to_set(&target_values, 'v', BusId)?;

    match value["kind"].as_str() {
        Some("defense") => {
            let plan = DefensePlan {
                covert_lines: labels_to_set(
                    &value["covert_lines"].as_array().cloned().unwrap_or_default(),
                    'e',
                    LineId,
                )?,
                secured_meters: labels_to_set(
                    &value["secured_meters"].as_array().cloned().unwrap_or_default(),
                    'r',
                    MeterId,
                )?,
                secured_pmus: labels_to_set(
                    &value["secured_pmus"].as_array().cloned().unwrap_or_default(),
                    'v',
                    BusId,
                )?,
                total_cost: Dollars::ZERO,
                witness: vec![],
                milp_iterations: 0,
                milp_nodes: 0,
            };
            let report = verify_plan(&case, &plan, &targets)?;
            let out = json!({
                "kind": "defense-verification",
                "rank_ok": report.rank_ok,
                "subspace_ok": report.subspace_ok,
                "min_protected_elements_any_cut": report.simulated_detection_delta,
                "targets": report
                    .details
                    .iter()
                    .map(|(k, v)| {
                        json!({
                            "target": k,
                            "defended": v.defended,
                            "cut_cost": v.cut_cost.map(|d| json!(d.as_f64())).unwrap_or(json!("inf")),
                            "min_violations": v.min_violations,
                        })
                    })
                    .collect::<Vec<_>>(),
                "pass": report.all_ok(),
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("report json"));
            Ok(if report.all_ok() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Some("attack") => {
            let mut a = vec![0.0; case.placement.len()];
            for inj in value["injections"].as_array().cloned().unwrap_or_default() {
                let meter = inj["meter"]
                    .as_str()
                    .and_then(|s| parse_label(s, 'r'))
                    .ok_or_else(|| GridError::Invalid("bad injection meter".into()))?;
                let v = inj["value"]
                    .as_f64()
                    .ok_or_else(|| GridError::Invalid("bad injection value".into()))?;
                if meter >= a.len() {
                    return Err(GridError::Invalid("injection meter out of range".into()));
                }
                a[meter] = v;
            }
            let attack = gridshield::dc_core::AttackVector { a, c: None };
            let delta =
                simulate_undetectability(&case.network, &case.placement, &attack, trials, seed)?;
            let m = case.placement.len();
            let n = case.network.bus_count - 1;
            let tau = tau.unwrap_or_else(|| default_tau(m, n));
            let pass = delta <= 1e-9;
            let out = json!({
                "kind": "attack-verification",
                "trials": trials,
                "max_residual_delta": delta,
                "tau": tau,
                "pass": pass,
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("report json"));
            Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        other => Err(GridError::Invalid(format!("unknown plan kind {other:?}"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_case(
    profile: Option<String>,
    buses: Option<usize>,
    lines: Option<usize>,
    injections: Option<usize>,
    flows: Option<usize>,
    unmeasured: Option<usize>,
    seed: u64,
    covert_frac: f64,
    covert_cost: f64,
    out: Option<PathBuf>,
) -> Result<ExitCode, GridError> {
    let (n, prof) = match profile.as_deref() {
        Some("14") => PROFILE_14,
        Some("57") => PROFILE_57,
        Some("118") => PROFILE_118,
        Some(other) => {
            return Err(GridError::Invalid(format!(
                "unknown profile {other:?}; use 14, 57 or 118, or pass explicit counts"
            )))
        }
        None => {
            let n = buses.ok_or_else(|| GridError::Invalid("--buses required".into()))?;
            let profile = PlacementProfile {
                lines: lines.ok_or_else(|| GridError::Invalid("--lines required".into()))?,
                injections: injections
                    .ok_or_else(|| GridError::Invalid("--injections required".into()))?,
                flows: flows.ok_or_else(|| GridError::Invalid("--flows required".into()))?,
                unmeasured: unmeasured.unwrap_or(0),
            };
            (n, profile)
        }
    };
    let (network, placement) = generate_placement(n, seed, prof)?;
    let cost_model = if covert_frac > 0.0 {
        synth_cost_model(
            &network,
            &placement,
            covert_frac,
            Dollars::from_f64(covert_cost)?,
            seed,
        )
    } else {
        Default::default()
    };
    let case = Case { network, placement, cost_model, pmus: vec![] };
    let text = save_case(&case);
    match out {
        Some(path) => std::fs::write(&path, text)
            .map_err(|e| GridError::Invalid(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_export_mps(
    path: &Path,
    target_labels: &[String],
    mode: DefendMode,
    out: Option<PathBuf>,
) -> Result<ExitCode, GridError> {
    let case = read_case(path)?;
    let targets = parse_buses(target_labels, &case)?;
    let mg = measured_graph(&case.network, &case.placement);
    let typing = vertex_types(&mg)?;
    let aug = AugmentedPlacement::build(
        &case.network,
        &case.placement,
        &case.cost_model,
        &typing,
        &case.pmus,
    )?;
    let instance = match mode {
        DefendMode::Cti => MasaInstance::pure_cti(&aug, &targets)?,
        _ => MasaInstance::mixed(&aug, &targets)?,
    };
    let (model, _) = build_masa_milp(&instance)?;
    emit(out, export_mps(&model).trim_end_matches('\n'))?;
    Ok(ExitCode::SUCCESS)
}
