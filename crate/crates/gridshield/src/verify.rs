//! Independent certification of attacks and defense plans: the rank
//! condition over the virtual-augmented Jacobian, an attack-subspace null
//! check, an exhaustive enumeration oracle, and Monte-Carlo
//! undetectability simulation.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attack_synth::{canonical_cut, LineWeight};
use crate::dc_core::{apply_attack, build_jacobian, default_q, wls_estimate, AttackVector, JacobianSet};
use crate::defense::{AugmentedPlacement, DefensePlan};
use crate::error::{GridError, Result};
use crate::grid_model::{
    Acquisition, BusId, Case, Dollars, LineId, MeterId, MeterKind, PowerNetwork,
};
use crate::linalg::Mat;
use crate::observability::{measured_graph, vertex_types, MeasuredGraph};

#[derive(Debug, Clone)]
pub struct TargetStatus {
    /// Cheapest knowledge cost of any attack on this target against the
    /// protected instance; None means no attack exists.
    pub cut_cost: Option<Dollars>,
    /// Protected elements any separating cut must defeat (the minimum
    /// feasibility-condition violation an attacker would incur).
    pub min_violations: u64,
    pub defended: bool,
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub rank_ok: bool,
    pub subspace_ok: bool,
    pub simulated_detection_delta: f64,
    pub details: BTreeMap<String, TargetStatus>,
}

impl VerificationReport {
    pub fn all_ok(&self) -> bool {
        self.rank_ok && self.subspace_ok && self.details.values().all(|t| t.defended)
    }
}

/// Jacobian over the augmented network and meter set (base, virtual,
/// pseudo), in augmented meter order. Injection rows are built against the
/// real lines only; physical injections never see pseudo lines.
pub fn augmented_jacobian(aug: &AugmentedPlacement) -> JacobianSet {
    let base_net = PowerNetwork::new(
        aug.network.bus_count,
        aug.network.reference,
        aug.network
            .lines
            .iter()
            .filter(|l| !aug.pseudo_lines.contains(&l.id))
            .copied()
            .collect(),
    );
    let all = aug.all_meters();
    match base_net {
        // pseudo lines always sit at the tail of the id range, so the
        // filtered network keeps dense ids and this cannot fail
        Ok(base_net) => {
            let rows: Vec<Vec<f64>> = all
                .meters
                .iter()
                .map(|m| match m.kind {
                    MeterKind::PseudoFlow { .. } => {
                        crate::dc_core::single_meter_row(&aug.network, m)
                    }
                    _ => crate::dc_core::single_meter_row(&base_net, m),
                })
                .collect();
            let full = Mat::from_rows(&rows);
            let state_buses = aug.network.state_buses();
            let keep: Vec<usize> = state_buses.iter().map(|b| b.0).collect();
            let reduced = full.select_cols(&keep);
            JacobianSet {
                full,
                reduced,
                row_meters: all.meters.iter().map(|m| m.id).collect(),
                state_buses,
                reference: aug.network.reference,
            }
        }
        Err(_) => build_jacobian(&aug.network, &all),
    }
}

/// Row indices of the augmented Jacobian protected by a plan: secured
/// meters, virtual meters of covert lines, pseudo meters of secured PMUs.
pub fn plan_rows(aug: &AugmentedPlacement, plan: &DefensePlan) -> BTreeSet<usize> {
    let mut rows: BTreeSet<usize> = plan.secured_meters.iter().map(|m| m.0).collect();
    for m in &aug.virtual_meters {
        if let MeterKind::VirtualFlow { line } = m.kind {
            if plan.covert_lines.contains(&line) {
                rows.insert(m.id.0);
            }
        }
    }
    for (meter, bus) in &aug.pseudo_pmu {
        if plan.secured_pmus.contains(bus) {
            rows.insert(meter.0);
        }
    }
    rows
}

fn submatrix(jac: &JacobianSet, rows: &BTreeSet<usize>) -> Mat {
    let keep: Vec<usize> = rows.iter().copied().collect();
    jac.reduced.select_rows(&keep)
}

/// Protection criterion: rank(H_P,*) = rank(H_P,I\D) + |D| over the
/// augmented Jacobian.
pub fn rank_condition(jac: &JacobianSet, secured_rows: &BTreeSet<usize>, targets: &BTreeSet<BusId>) -> bool {
    let sub = submatrix(jac, secured_rows);
    let keep_cols: Vec<usize> = jac
        .state_buses
        .iter()
        .enumerate()
        .filter(|(_, b)| !targets.contains(b))
        .map(|(i, _)| i)
        .collect();
    let full_rank = sub.rank();
    let rest_rank = sub.select_cols(&keep_cols).rank();
    full_rank == rest_rank + targets.len()
}

/// Equivalent null-space criterion: every undetectable error vector that
/// keeps the protected rows silent must vanish on the targets.
pub fn attack_subspace_check(
    jac: &JacobianSet,
    secured_rows: &BTreeSet<usize>,
    targets: &BTreeSet<BusId>,
) -> bool {
    let sub = submatrix(jac, secured_rows);
    let basis = sub.null_space();
    for v in basis {
        for (i, b) in jac.state_buses.iter().enumerate() {
            if targets.contains(b) && v[i].abs() > 1e-8 {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Clone)]
pub struct EnumOutcome {
    pub cost: Dollars,
    pub meters: BTreeSet<MeterId>,
    /// Number of candidate subsets evaluated against the rank condition.
    pub evaluated: u64,
}

/// Exhaustive oracle: the exact minimum protection cost over all meter
/// subsets (virtual and pseudo meters included), enumerated in increasing
/// total cost so the first passing subset is optimal.
pub fn enum_min_defense(
    aug: &AugmentedPlacement,
    targets: &BTreeSet<BusId>,
    cap: Dollars,
) -> Result<EnumOutcome> {
    let placement = aug.all_meters();
    let m = placement.len();
    if m > 25 {
        return Err(GridError::SizeGuard(format!(
            "enumeration oracle limited to 25 meters, got {m}"
        )));
    }
    let jac = augmented_jacobian(aug);
    // meters sorted by effective cost, cheapest first
    let mut order: Vec<(i64, usize)> = (0..m)
        .map(|i| (aug.meter_cost(MeterId(i)).micro(), i))
        .collect();
    order.sort_unstable();

    #[derive(PartialEq, Eq)]
    struct Entry {
        cost: i64,
        subset: Vec<usize>, // sorted positions into `order`
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            // BinaryHeap is a max-heap: reverse for increasing-cost pops
            other.cost.cmp(&self.cost).then_with(|| other.subset.cmp(&self.subset))
        }
    }
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }

    let mut heap = BinaryHeap::new();
    if m > 0 {
        heap.push(Entry { cost: order[0].0, subset: vec![0] });
    }
    let mut evaluated: u64 = 0;
    let budget: u64 = 20_000_000;
    while let Some(Entry { cost, subset }) = heap.pop() {
        if cost > cap.micro() {
            break;
        }
        evaluated += 1;
        if evaluated > budget {
            return Err(GridError::SizeGuard("enumeration budget exhausted".into()));
        }
        let rows: BTreeSet<usize> = subset.iter().map(|p| order[*p].1).collect();
        if rank_condition(&jac, &rows, targets) {
            return Ok(EnumOutcome {
                cost: Dollars(cost),
                meters: rows.into_iter().map(MeterId).collect(),
                evaluated,
            });
        }
        // successors in the cost-ordered subset lattice
        let last = *subset.last().expect("nonempty subsets only");
        if last + 1 < m {
            let mut grown = subset.clone();
            grown.push(last + 1);
            heap.push(Entry { cost: cost + order[last + 1].0, subset: grown });
            let mut shifted = subset.clone();
            shifted.pop();
            shifted.push(last + 1);
            heap.push(Entry {
                cost: cost - order[last].0 + order[last + 1].0,
                subset: shifted,
            });
        }
    }
    Err(GridError::Undefendable)
}

/// Max |residual(z+a) - residual(z)| over seeded noise draws.
pub fn simulate_undetectability(
    network: &PowerNetwork,
    placement: &crate::grid_model::MeasurementPlacement,
    attack: &AttackVector,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let jac = build_jacobian(network, placement);
    let m = placement.len();
    let n = jac.reduced.cols;
    let q = default_q(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x51A7E);
    let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let base = jac.reduced.matvec(&theta);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let z: Vec<f64> = base
            .iter()
            .map(|v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + 0.01 * e
            })
            .collect();
        let zt = apply_attack(&z, attack)?;
        let clean = wls_estimate(&jac, &q, &z)?;
        let hit = wls_estimate(&jac, &q, &zt)?;
        worst = worst.max((clean.residual_norm - hit.residual_norm).abs());
    }
    Ok(worst)
}

/// Attack-side weights on the protected instance: lines measured by any
/// secured element cannot be crossed, unsecured bridging edges cost
/// nothing (the topology-free pattern), covert lines cannot be learned,
/// everything else costs its acquisition weight.
fn protected_weight(
    line: LineId,
    mg: &MeasuredGraph,
    case: &Case,
    aug: &AugmentedPlacement,
    plan: &DefensePlan,
    bridging: &BTreeSet<LineId>,
) -> LineWeight {
    let (u, v) = mg.edges[&line];
    // pseudo line of a secured PMU: never crossable
    if aug.pseudo_lines.contains(&line) {
        return LineWeight::Infinite;
    }
    for m in &plan.secured_meters {
        match case.placement.meter(*m).kind {
            MeterKind::Flow { line: l, .. } if l == line => return LineWeight::Infinite,
            MeterKind::Injection { bus } if bus == u || bus == v => return LineWeight::Infinite,
            _ => {}
        }
    }
    if bridging.contains(&line) {
        return LineWeight::Finite(0);
    }
    if plan.covert_lines.contains(&line) {
        return LineWeight::Infinite;
    }
    match case.cost_model.acquisition_of(line) {
        Acquisition::Finite(d) => LineWeight::Finite(d.micro() as u64),
        Acquisition::Infinite => LineWeight::Infinite,
    }
}

/// Cheapest attack knowledge cost against a protected instance, or None
/// when every separating cut is blocked.
pub fn protected_cut_cost(
    case: &Case,
    aug: &AugmentedPlacement,
    plan: &DefensePlan,
    target: BusId,
) -> Result<Option<Dollars>> {
    let mut mg = measured_graph(&case.network, &case.placement);
    // pseudo lines of secured PMUs enter the attack graph as uncrossable
    // edges pinning the PMU bus to the reference
    for (meter, bus) in &aug.pseudo_pmu {
        if !plan.secured_pmus.contains(bus) {
            continue;
        }
        for m in &aug.pseudo_meters {
            if m.id == *meter {
                if let MeterKind::PseudoFlow { line } = m.kind {
                    let l = aug.network.line(line);
                    mg.edges.insert(line, (l.tail, l.head));
                    mg.measurable.entry(line).or_default().insert(*meter);
                    mg.vertices.insert(l.tail);
                    mg.vertices.insert(l.head);
                }
            }
        }
    }
    let base_mg = measured_graph(&case.network, &case.placement);
    let bridging = crate::observability::bridging_edges(&base_mg)?;
    let targets: BTreeSet<BusId> = [target].into_iter().collect();
    let weight =
        |l: LineId| protected_weight(l, &mg, case, aug, plan, &bridging);
    let outcome = canonical_cut(&mg, case.network.reference, &targets, &weight)?;
    Ok(outcome.cost)
}

/// Protected elements any cut separating the target must defeat.
fn min_violation_count(
    case: &Case,
    aug: &AugmentedPlacement,
    plan: &DefensePlan,
    target: BusId,
    bridging: &BTreeSet<LineId>,
) -> Result<u64> {
    let mut mg = measured_graph(&case.network, &case.placement);
    for (meter, bus) in &aug.pseudo_pmu {
        if !plan.secured_pmus.contains(bus) {
            continue;
        }
        for m in &aug.pseudo_meters {
            if m.id == *meter {
                if let MeterKind::PseudoFlow { line } = m.kind {
                    let l = aug.network.line(line);
                    mg.edges.insert(line, (l.tail, l.head));
                    mg.measurable.entry(line).or_default().insert(*meter);
                    mg.vertices.insert(l.tail);
                    mg.vertices.insert(l.head);
                }
            }
        }
    }
    let targets: BTreeSet<BusId> = [target].into_iter().collect();
    let weight = |l: LineId| {
        match protected_weight(l, &mg, case, aug, plan, bridging) {
            LineWeight::Infinite => LineWeight::Finite(1_000_000),
            LineWeight::Finite(_) => LineWeight::Finite(0),
        }
    };
    let outcome = canonical_cut(&mg, case.network.reference, &targets, &weight)?;
    Ok(outcome.cost.map(|d| d.micro() as u64 / 1_000_000).unwrap_or(0))
}

/// Full plan verification: rank condition, subspace check, and per-target
/// attack feasibility on the protected instance.
pub fn verify_plan(case: &Case, plan: &DefensePlan, targets: &BTreeSet<BusId>) -> Result<VerificationReport> {
    let mg = measured_graph(&case.network, &case.placement);
    let typing = vertex_types(&mg)?;
    let aug = AugmentedPlacement::build(
        &case.network,
        &case.placement,
        &case.cost_model,
        &typing,
        &case.pmus,
    )?;
    let jac = augmented_jacobian(&aug);
    let rows = plan_rows(&aug, plan);
    let rank_ok = rank_condition(&jac, &rows, targets);
    let subspace_ok = attack_subspace_check(&jac, &rows, targets);
    debug_assert_eq!(rank_ok, subspace_ok, "the two criteria are equivalent");

    let mut details = BTreeMap::new();
    let mut min_violation = u64::MAX;
    for d in targets {
        let cut_cost = protected_cut_cost(case, &aug, plan, *d)?;
        let violations = min_violation_count(case, &aug, plan, *d, &typing.bridging)?;
        min_violation = min_violation.min(violations);
        details.insert(
            d.to_string(),
            TargetStatus { cut_cost, min_violations: violations, defended: cut_cost.is_none() },
        );
    }
    Ok(VerificationReport {
        rank_ok,
        subspace_ok,
        simulated_detection_delta: if targets.is_empty() {
            0.0
        } else {
            min_violation as f64
        },
        details,
    })
}
