//! Partial-knowledge attack synthesis: minimum-cost cut attacks on P1-type
//! targets, topology-free attacks across bridging edges, and the
//! per-line feasibility condition for undetectable injections.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::dc_core::{build_jacobian, AttackVector};
use crate::error::{GridError, Result};
use crate::grid_model::{
    BusId, CostModel, Dollars, LineId, MeasurementPlacement, PowerNetwork,
};
use crate::observability::{
    measured_graph, residual_graph, vertex_types, MeasuredGraph, VertexTyping,
};

/// Max-flow / min-cut on undirected graphs with integer weights.
pub mod flow {
    use std::collections::VecDeque;

    pub const FORCE: u64 = u64::MAX / 4;

    pub struct FlowNet {
        to: Vec<usize>,
        cap: Vec<u64>,
        adj: Vec<Vec<usize>>,
        level: Vec<i32>,
        iter: Vec<usize>,
    }

    impl FlowNet {
        pub fn new(n: usize) -> Self {
            FlowNet { to: vec![], cap: vec![], adj: vec![Vec::new(); n], level: vec![], iter: vec![] }
        }

        /// Directed arc with zero-capacity reverse.
        pub fn add_arc(&mut self, u: usize, v: usize, cap: u64) {
            let id = self.to.len();
            self.to.push(v);
            self.cap.push(cap);
            self.adj[u].push(id);
            self.to.push(u);
            self.cap.push(0);
            self.adj[v].push(id + 1);
        }

        /// Undirected edge: full capacity both ways, sharing residuals.
        pub fn add_undirected(&mut self, u: usize, v: usize, cap: u64) {
            let id = self.to.len();
            self.to.push(v);
            self.cap.push(cap);
            self.adj[u].push(id);
            self.to.push(u);
            self.cap.push(cap);
            self.adj[v].push(id + 1);
        }

        fn bfs(&mut self, s: usize, t: usize) -> bool {
            self.level = vec![-1; self.adj.len()];
            let mut q = VecDeque::new();
            self.level[s] = 0;
            q.push_back(s);
            while let Some(u) = q.pop_front() {
                for &e in &self.adj[u] {
                    let v = self.to[e];
                    if self.cap[e] > 0 && self.level[v] < 0 {
                        self.level[v] = self.level[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            self.level[t] >= 0
        }

        fn dfs(&mut self, u: usize, t: usize, limit: u64) -> u64 {
            if u == t {
                return limit;
            }
            while self.iter[u] < self.adj[u].len() {
                let e = self.adj[u][self.iter[u]];
                let v = self.to[e];
                if self.cap[e] > 0 && self.level[v] == self.level[u] + 1 {
                    let pushed = self.dfs(v, t, limit.min(self.cap[e]));
                    if pushed > 0 {
                        self.cap[e] -= pushed;
                        self.cap[e ^ 1] += pushed;
                        return pushed;
                    }
                }
                self.iter[u] += 1;
            }
            0
        }

        /// Dinic max flow; also the min-cut value.
        pub fn max_flow(&mut self, s: usize, t: usize) -> u64 {
            assert_ne!(s, t, "source and sink must differ");
            let mut total: u64 = 0;
            while self.bfs(s, t) {
                self.iter = vec![0; self.adj.len()];
                loop {
                    let pushed = self.dfs(s, t, u64::MAX);
                    if pushed == 0 {
                        break;
                    }
                    total = total.saturating_add(pushed);
                }
            }
            total
        }

        /// Vertices reachable from `s` in the residual network.
        pub fn source_side(&self, s: usize) -> Vec<bool> {
            let mut seen = vec![false; self.adj.len()];
            let mut q = VecDeque::new();
            seen[s] = true;
            q.push_back(s);
            while let Some(u) = q.pop_front() {
                for &e in &self.adj[u] {
                    let v = self.to[e];
                    if self.cap[e] > 0 && !seen[v] {
                        seen[v] = true;
                        q.push_back(v);
                    }
                }
            }
            seen
        }
    }
}

/// Crossing weight of one measured line, in micro-dollars.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineWeight {
    Finite(u64),
    Infinite,
}

/// Canonical minimum cut separating the targets from the source.
#[derive(Debug, Clone)]
pub struct CutOutcome {
    /// None when every separating cut crosses an unknowable line.
    pub cost: Option<Dollars>,
    pub sink_side: BTreeSet<BusId>,
    pub crossing: BTreeSet<LineId>,
}

struct CutProblem<'a> {
    mg: &'a MeasuredGraph,
    source: BusId,
    targets: &'a BTreeSet<BusId>,
    /// (line, u, v, weight) with sentinel already substituted.
    edges: Vec<(LineId, usize, usize, u64)>,
    sentinel: u64,
    supersink: usize,
}

impl<'a> CutProblem<'a> {
    fn new(
        mg: &'a MeasuredGraph,
        source: BusId,
        targets: &'a BTreeSet<BusId>,
        weight: &dyn Fn(LineId) -> LineWeight,
    ) -> Self {
        let mut finite_sum: u64 = 0;
        let mut raw = Vec::new();
        for (l, (u, v)) in &mg.edges {
            let w = weight(*l);
            if let LineWeight::Finite(c) = w {
                finite_sum = finite_sum.saturating_add(c);
            }
            raw.push((*l, u.0, v.0, w));
        }
        let sentinel = finite_sum + 1;
        let edges = raw
            .into_iter()
            .map(|(l, u, v, w)| match w {
                LineWeight::Finite(c) => (l, u, v, c),
                LineWeight::Infinite => (l, u, v, sentinel),
            })
            .collect();
        CutProblem { mg, source, targets, edges, sentinel, supersink: mg.id_space }
    }

    /// Min-cut value with side constraints; forced vertices are tied to the
    /// source or the supersink with non-cuttable arcs.
    fn value(&self, forced_sink: &BTreeSet<usize>, forced_source: &BTreeSet<usize>) -> u64 {
        let mut net = flow::FlowNet::new(self.mg.id_space + 1);
        for (_, u, v, w) in &self.edges {
            if *w > 0 {
                net.add_undirected(*u, *v, *w);
            }
        }
        for d in self.targets {
            net.add_arc(d.0, self.supersink, self.sentinel.max(flow::FORCE));
        }
        for v in forced_sink {
            net.add_arc(*v, self.supersink, flow::FORCE);
        }
        for v in forced_source {
            net.add_arc(self.source.0, *v, flow::FORCE);
        }
        net.max_flow(self.source.0, self.supersink)
    }
}

/// Minimum cut separating `targets` from `source` over the measured graph,
/// canonicalized: among all minimum cuts, the sink side whose ascending
/// vertex list is lexicographically smallest is returned.
pub fn canonical_cut(
    mg: &MeasuredGraph,
    source: BusId,
    targets: &BTreeSet<BusId>,
    weight: &dyn Fn(LineId) -> LineWeight,
) -> Result<CutOutcome> {
    if targets.is_empty() {
        return Err(GridError::Invalid("no targets given".into()));
    }
    if targets.contains(&source) {
        return Err(GridError::Invalid("the reference bus cannot be a target".into()));
    }
    for d in targets {
        if !mg.vertices.contains(d) {
            return Err(GridError::Invalid(format!("target {d} not in the measured graph")));
        }
    }
    let problem = CutProblem::new(mg, source, targets, weight);
    let base = problem.value(&BTreeSet::new(), &BTreeSet::new());
    if base >= problem.sentinel {
        return Ok(CutOutcome { cost: None, sink_side: BTreeSet::new(), crossing: BTreeSet::new() });
    }

    // build the lexicographically smallest sink side, one vertex at a time
    let candidates: Vec<usize> = mg
        .vertices
        .iter()
        .map(|b| b.0)
        .filter(|v| *v != source.0)
        .collect();
    let target_ids: BTreeSet<usize> = targets.iter().map(|b| b.0).collect();
    let mut sink: BTreeSet<usize> = BTreeSet::new();
    let mut cursor = 0usize;
    loop {
        // stopping is preferred (a prefix precedes its extensions)
        if target_ids.iter().all(|d| sink.contains(d)) {
            let forced_source: BTreeSet<usize> =
                candidates.iter().copied().filter(|v| !sink.contains(v)).collect();
            if problem.value(&sink, &forced_source) == base {
                break;
            }
        }
        let mut advanced = false;
        while cursor < candidates.len() {
            let u = candidates[cursor];
            cursor += 1;
            if sink.contains(&u) {
                continue;
            }
            let mut try_sink = sink.clone();
            try_sink.insert(u);
            try_sink.extend(target_ids.iter().copied());
            let forced_source: BTreeSet<usize> = candidates
                .iter()
                .copied()
                .filter(|v| *v < u && !try_sink.contains(v))
                .collect();
            if forced_source.iter().any(|v| target_ids.contains(v)) {
                continue;
            }
            if problem.value(&try_sink, &forced_source) == base {
                sink.insert(u);
                advanced = true;
                break;
            }
        }
        if !advanced {
            // no extension matched; the remaining targets plus current sink
            // must already be a witness
            sink.extend(target_ids.iter().copied());
            break;
        }
    }

    let sink_side: BTreeSet<BusId> = sink.iter().map(|v| BusId(*v)).collect();
    let crossing: BTreeSet<LineId> = problem
        .edges
        .iter()
        .filter(|(_, u, v, _)| sink.contains(u) != sink.contains(v))
        .map(|(l, _, _, _)| *l)
        .collect();
    let cost: u64 = problem
        .edges
        .iter()
        .filter(|(_, u, v, _)| sink.contains(u) != sink.contains(v))
        .map(|(_, _, _, w)| *w)
        .sum();
    debug_assert_eq!(cost, base, "crossing weight must equal the max-flow value");
    Ok(CutOutcome {
        cost: Some(Dollars(cost as i64)),
        sink_side,
        crossing,
    })
}

/// Attack plan produced by the min-cut construction.
#[derive(Debug, Clone)]
pub struct AttackPlan {
    pub source_side: BTreeSet<BusId>,
    pub sink_side: BTreeSet<BusId>,
    pub knowledge_lines: BTreeSet<LineId>,
    pub cost: Dollars,
    pub beta: f64,
    pub attack: AttackVector,
}

/// Subnetwork labels: 0 for the reference side, i for subnetwork S_i.
#[derive(Debug, Clone, Default)]
pub struct PartitionAssignment {
    pub labels: BTreeMap<BusId, i64>,
}

/// Extend labels across bridging edges: each P2 component inherits the
/// label of the vertex its bridging edge anchors to.
fn lift_labels(
    mg: &MeasuredGraph,
    typing: &VertexTyping,
    labels: &BTreeMap<BusId, i64>,
) -> BTreeMap<BusId, i64> {
    let mut lifted = labels.clone();
    let mut queue: VecDeque<BusId> = lifted.keys().copied().collect();
    while let Some(u) = queue.pop_front() {
        let lu = lifted[&u];
        for (l, v) in mg.neighbors(u) {
            if typing.bridging.contains(&l) && !lifted.contains_key(&v) {
                lifted.insert(v, lu);
                queue.push_back(v);
            }
        }
    }
    // P2-to-P2 edges inside a component carry the anchor label onward
    let mut changed = true;
    while changed {
        changed = false;
        for (l, (u, v)) in &mg.edges {
            if typing.bridging.contains(l) {
                continue;
            }
            match (lifted.get(u).copied(), lifted.get(v).copied()) {
                (Some(x), None) => {
                    if typing.p2_vertices.contains(v) {
                        lifted.insert(*v, x);
                        changed = true;
                    }
                }
                (None, Some(x)) => {
                    if typing.p2_vertices.contains(u) {
                        lifted.insert(*u, x);
                        changed = true;
                    }
                }
                _ => {}
            }
        }
    }
    lifted
}

/// Per-line undetectability condition: every measured line needs exact
/// knowledge or an equal error at both endpoints. Returns the offending
/// lines.
pub fn theorem1_feasible(
    c: &BTreeMap<BusId, f64>,
    known_lines: &BTreeSet<LineId>,
    mg: &MeasuredGraph,
) -> (bool, Vec<LineId>) {
    let mut violations = Vec::new();
    for (l, (u, v)) in &mg.edges {
        if known_lines.contains(l) {
            continue;
        }
        let cu = c.get(u).copied().unwrap_or(0.0);
        let cv = c.get(v).copied().unwrap_or(0.0);
        if (cu - cv).abs() > 1e-9 {
            violations.push(*l);
        }
    }
    (violations.is_empty(), violations)
}

/// a = H~ c for a labeled partition: label times beta at each bus, zero on
/// the reference side. Every measured line crossing distinct labels must
/// carry exact knowledge.
pub fn attack_vector_from_partition(
    network: &PowerNetwork,
    placement: &MeasurementPlacement,
    assignment: &PartitionAssignment,
    known_lines: &BTreeSet<LineId>,
    beta: f64,
) -> Result<AttackVector> {
    let mg = measured_graph(network, placement);
    for (l, (u, v)) in &mg.edges {
        let lu = assignment.labels.get(u).copied().unwrap_or(0);
        let lv = assignment.labels.get(v).copied().unwrap_or(0);
        if lu != lv && !known_lines.contains(l) {
            return Err(GridError::Theorem1Violation(l.to_string()));
        }
    }
    let jac = build_jacobian(network, placement);
    let c: Vec<f64> = jac
        .state_buses
        .iter()
        .map(|b| assignment.labels.get(b).copied().unwrap_or(0) as f64 * beta)
        .collect();
    if let Some(rl) = assignment.labels.get(&network.reference) {
        if *rl != 0 {
            return Err(GridError::Invalid("the reference bus must carry label 0".into()));
        }
    }
    let a = jac.reduced.matvec(&c);
    Ok(AttackVector { a, c: Some(c) })
}

/// Algorithm: remove bridging edges and P2-type vertices, find the
/// canonical minimum-weight cut separating the targets from the reference,
/// learn the crossing lines exactly, and inject a = H~ c with c = beta on
/// the sink side.
pub fn min_cut_attack(
    network: &PowerNetwork,
    placement: &MeasurementPlacement,
    targets: &BTreeSet<BusId>,
    weights: &CostModel,
    beta: f64,
) -> Result<AttackPlan> {
    let mg = measured_graph(network, placement);
    let typing = vertex_types(&mg)?;
    min_cut_attack_with_typing(network, placement, &mg, &typing, targets, weights, beta)
}

pub fn min_cut_attack_with_typing(
    network: &PowerNetwork,
    placement: &MeasurementPlacement,
    mg: &MeasuredGraph,
    typing: &VertexTyping,
    targets: &BTreeSet<BusId>,
    weights: &CostModel,
    beta: f64,
) -> Result<AttackPlan> {
    if targets.is_empty() {
        return Err(GridError::Invalid("no targets given".into()));
    }
    if targets.contains(&network.reference) {
        return Err(GridError::Invalid("the reference bus cannot be a target".into()));
    }
    for d in targets {
        if typing.p2_vertices.contains(d) {
            return Err(GridError::NotP2Type(format!(
                "{d} is P2-type; the bridging attack applies"
            )));
        }
    }
    let residual = residual_graph(mg, typing);
    let weight_of = |l: LineId| match weights.acquisition_of(l) {
        crate::grid_model::Acquisition::Finite(d) => LineWeight::Finite(d.micro() as u64),
        crate::grid_model::Acquisition::Infinite => LineWeight::Infinite,
    };
    let outcome = canonical_cut(&residual, network.reference, targets, &weight_of)?;
    let Some(cost) = outcome.cost else {
        return Err(GridError::NotAttackable);
    };

    let mut labels: BTreeMap<BusId, i64> = BTreeMap::new();
    for v in &residual.vertices {
        labels.insert(*v, i64::from(outcome.sink_side.contains(v)));
    }
    labels.insert(network.reference, 0);
    let lifted = lift_labels(mg, typing, &labels);

    // final feasibility audit over the full measured graph
    let c_map: BTreeMap<BusId, f64> =
        lifted.iter().map(|(b, l)| (*b, *l as f64 * beta)).collect();
    let (ok, violations) = theorem1_feasible(&c_map, &outcome.crossing, mg);
    if !ok {
        return Err(GridError::Theorem1Violation(
            violations.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","),
        ));
    }

    let assignment = PartitionAssignment { labels: lifted };
    let attack =
        attack_vector_from_partition(network, placement, &assignment, &outcome.crossing, beta)?;
    let source_side = residual
        .vertices
        .iter()
        .copied()
        .filter(|v| !outcome.sink_side.contains(v))
        .collect();
    Ok(AttackPlan {
        source_side,
        sink_side: outcome.sink_side,
        knowledge_lines: outcome.crossing,
        cost,
        beta,
        attack,
    })
}

/// Topology-free attack on a P2-type vertex: the +-1 pattern on the meters
/// around the separating bridging edge. The induced bias is a decrease of
/// 1/y on the whole P2 side; its magnitude is unknown to the attacker.
pub fn bridging_attack(
    network: &PowerNetwork,
    placement: &MeasurementPlacement,
    typing: &VertexTyping,
    target: BusId,
) -> Result<AttackVector> {
    if !typing.p2_vertices.contains(&target) {
        return Err(GridError::Invalid(format!(
            "{target} is P1-type; use the min-cut attack"
        )));
    }
    let mg = measured_graph(network, placement);
    // component of the target once bridging edges are removed
    let mut component = BTreeSet::new();
    component.insert(target);
    let mut queue = VecDeque::from([target]);
    while let Some(u) = queue.pop_front() {
        for (l, v) in mg.neighbors(u) {
            if typing.bridging.contains(&l) {
                continue;
            }
            if component.insert(v) {
                queue.push_back(v);
            }
        }
    }
    // the single bridging edge anchoring this component
    let mut anchors: Vec<LineId> = mg
        .edges
        .iter()
        .filter(|(l, (u, v))| {
            typing.bridging.contains(l) && (component.contains(u) != component.contains(v))
        })
        .map(|(l, _)| *l)
        .collect();
    anchors.sort();
    let Some(bridge) = anchors.first().copied() else {
        return Err(GridError::Invalid(format!("no bridging edge separates {target}")));
    };
    let y = network.line(bridge).admittance();

    let jac = build_jacobian(network, placement);
    let c: Vec<f64> = jac
        .state_buses
        .iter()
        .map(|b| if component.contains(b) { -1.0 / y } else { 0.0 })
        .collect();
    let a = jac.reduced.matvec(&c);
    // the pattern must be confined to the meters measuring the bridge
    let allowed = &mg.measurable[&bridge];
    for (row, meter) in jac.row_meters.iter().enumerate() {
        if a[row].abs() > 1e-9 && !allowed.contains(meter) {
            return Err(GridError::Invalid(format!(
                "bridging pattern leaks onto meter {meter}; topology-free attack unavailable"
            )));
        }
    }
    Ok(AttackVector { a, c: Some(c) })
}
