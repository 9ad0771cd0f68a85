//! Graph-side observability: the measured graph, edge-measured spanning
//! trees (EMSTs), bridging edges, and vertex typing.
//!
//! EMST search runs matroid intersection between the graphic matroid on
//! measured edges and the transversal matroid induced by the edge-to-meter
//! measurability relation. An edge is eligible for any meter that measures
//! it: a flow meter placed on it, or an injection meter at either endpoint.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{GridError, Result};
use crate::grid_model::{BusId, LineId, MeasurementPlacement, MeterId, MeterKind, PowerNetwork};

#[derive(Debug, Clone)]
pub struct MeasuredGraph {
    /// Bus ids live in 0..id_space (the underlying network's bus count,
    /// preserved by induced subgraphs so ids stay stable).
    pub id_space: usize,
    /// How many vertices a spanning structure must cover.
    pub spanning_count: usize,
    pub reference: BusId,
    /// Buses incident to at least one measured edge.
    pub vertices: BTreeSet<BusId>,
    /// Measured line -> endpoints.
    pub edges: BTreeMap<LineId, (BusId, BusId)>,
    /// Measured line -> meters that measure it.
    pub measurable: BTreeMap<LineId, BTreeSet<MeterId>>,
}

impl MeasuredGraph {
    pub fn neighbors(&self, bus: BusId) -> impl Iterator<Item = (LineId, BusId)> + '_ {
        self.edges.iter().filter_map(move |(l, (u, v))| {
            if *u == bus {
                Some((*l, *v))
            } else if *v == bus {
                Some((*l, *u))
            } else {
                None
            }
        })
    }

    /// Restrict to a vertex subset: keeps edges with both endpoints inside.
    pub fn induced(&self, keep: &BTreeSet<BusId>) -> MeasuredGraph {
        let edges: BTreeMap<LineId, (BusId, BusId)> = self
            .edges
            .iter()
            .filter(|(_, (u, v))| keep.contains(u) && keep.contains(v))
            .map(|(l, uv)| (*l, *uv))
            .collect();
        let measurable = self
            .measurable
            .iter()
            .filter(|(l, _)| edges.contains_key(l))
            .map(|(l, ms)| (*l, ms.clone()))
            .collect();
        let vertices: BTreeSet<BusId> =
            edges.values().flat_map(|(u, v)| [*u, *v]).collect();
        MeasuredGraph {
            id_space: self.id_space,
            spanning_count: keep.len(),
            reference: self.reference,
            vertices,
            edges,
            measurable,
        }
    }
}

/// Edge-measured spanning tree witness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emst {
    pub tree_edges: BTreeSet<LineId>,
    pub mapping: BTreeMap<LineId, MeterId>,
}

#[derive(Debug, Clone)]
pub struct VertexTyping {
    pub bridging: BTreeSet<LineId>,
    pub p2_vertices: BTreeSet<BusId>,
}

/// Discard unmeasured elements and record which meters measure each line.
pub fn measured_graph(network: &PowerNetwork, placement: &MeasurementPlacement) -> MeasuredGraph {
    let mut measurable: BTreeMap<LineId, BTreeSet<MeterId>> = BTreeMap::new();
    for meter in &placement.meters {
        match meter.kind {
            MeterKind::Flow { line, .. }
            | MeterKind::VirtualFlow { line }
            | MeterKind::PseudoFlow { line } => {
                measurable.entry(line).or_default().insert(meter.id);
            }
            MeterKind::Injection { bus } => {
                for l in network.lines_at(bus) {
                    measurable.entry(l.id).or_default().insert(meter.id);
                }
            }
        }
    }
    let edges: BTreeMap<LineId, (BusId, BusId)> = measurable
        .keys()
        .map(|l| {
            let line = network.line(*l);
            (*l, (line.tail, line.head))
        })
        .collect();
    let vertices = edges.values().flat_map(|(u, v)| [*u, *v]).collect();
    MeasuredGraph {
        id_space: network.bus_count,
        spanning_count: network.bus_count,
        reference: network.reference,
        vertices,
        edges,
        measurable,
    }
}

// ---------------------------------------------------------------------------
// Matroid intersection (graphic x transversal)

struct Intersection<'a> {
    mg: &'a MeasuredGraph,
    elements: Vec<LineId>,
    /// Eligible meters per element, in preference order.
    eligible: Vec<Vec<MeterId>>,
}

impl<'a> Intersection<'a> {
    fn new(mg: &'a MeasuredGraph, exclude: Option<LineId>) -> Self {
        let elements: Vec<LineId> =
            mg.edges.keys().copied().filter(|l| Some(*l) != exclude).collect();
        let eligible = elements
            .iter()
            .map(|l| mg.measurable[l].iter().copied().collect())
            .collect();
        Intersection { mg, elements, eligible }
    }

    fn endpoints(&self, idx: usize) -> (usize, usize) {
        let (u, v) = self.mg.edges[&self.elements[idx]];
        (u.0, v.0)
    }

    /// Forest check on the element subset.
    fn graphic_independent(&self, subset: &[usize]) -> bool {
        let mut dsu = Dsu::new(self.mg.id_space);
        for &e in subset {
            let (u, v) = self.endpoints(e);
            if !dsu.union(u, v) {
                return false;
            }
        }
        true
    }

    /// Matchability check: can the subset be matched to distinct meters?
    fn transversal_independent(&self, subset: &[usize]) -> bool {
        self.try_match(subset).is_some()
    }

    fn try_match(&self, subset: &[usize]) -> Option<BTreeMap<usize, MeterId>> {
        let mut meter_of: BTreeMap<usize, MeterId> = BTreeMap::new();
        let mut owner: BTreeMap<MeterId, usize> = BTreeMap::new();
        for &e in subset {
            let mut seen = BTreeSet::new();
            if !augment(e, &self.eligible, &mut owner, &mut seen) {
                return None;
            }
        }
        for (m, e) in &owner {
            meter_of.insert(*e, *m);
        }
        Some(meter_of)
    }

    /// Maximum common independent set via exchange-graph augmentation,
    /// starting from the given independent set.
    fn maximize(&self, start: Vec<usize>) -> Vec<usize> {
        let mut current: BTreeSet<usize> = start.into_iter().collect();
        loop {
            if !self.augment_once(&mut current) {
                break;
            }
        }
        current.into_iter().collect()
    }

    fn augment_once(&self, current: &mut BTreeSet<usize>) -> bool {
        let n = self.elements.len();
        let cur: Vec<usize> = current.iter().copied().collect();
        let in_set: Vec<bool> = (0..n).map(|e| current.contains(&e)).collect();

        // sources: y not in I with I+y independent in the graphic matroid
        // sinks:   y not in I with I+y independent in the transversal matroid
        let mut sources = Vec::new();
        let mut sinks = BTreeSet::new();
        for y in 0..n {
            if in_set[y] {
                continue;
            }
            let mut with = cur.clone();
            with.push(y);
            if self.graphic_independent(&with) {
                sources.push(y);
            }
            if self.transversal_independent(&with) {
                sinks.insert(y);
            }
        }
        if sources.is_empty() {
            return false;
        }
        // arcs x->y (x in I, y not): I - x + y independent in graphic
        // arcs y->x: I - x + y independent in transversal
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &x in &cur {
            let without: Vec<usize> = cur.iter().copied().filter(|e| *e != x).collect();
            for y in 0..n {
                if in_set[y] {
                    continue;
                }
                let mut swapped = without.clone();
                swapped.push(y);
                if self.graphic_independent(&swapped) {
                    adj[x].push(y);
                }
                if self.transversal_independent(&swapped) {
                    adj[y].push(x);
                }
            }
        }
        // shortest path from sources to sinks (BFS, deterministic order)
        let mut prev: Vec<Option<usize>> = vec![None; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        for &s in &sources {
            if sinks.contains(&s) {
                // single-element augmenting path
                current.insert(s);
                return true;
            }
            seen[s] = true;
            queue.push_back(s);
        }
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if seen[w] {
                    continue;
                }
                seen[w] = true;
                prev[w] = Some(u);
                if !in_set[w] && sinks.contains(&w) {
                    // symmetric-difference augment along the path
                    let mut node = w;
                    loop {
                        if in_set[node] {
                            current.remove(&node);
                        } else {
                            current.insert(node);
                        }
                        match prev[node] {
                            Some(p) => node = p,
                            None => break,
                        }
                    }
                    return true;
                }
                queue.push_back(w);
            }
        }
        false
    }
}

fn augment(
    edge: usize,
    eligible: &[Vec<MeterId>],
    owner: &mut BTreeMap<MeterId, usize>,
    seen: &mut BTreeSet<MeterId>,
) -> bool {
    for &m in &eligible[edge] {
        if seen.contains(&m) {
            continue;
        }
        seen.insert(m);
        let prior = owner.get(&m).copied();
        match prior {
            None => {
                owner.insert(m, edge);
                return true;
            }
            Some(e2) => {
                if augment(e2, eligible, owner, seen) {
                    owner.insert(m, edge);
                    return true;
                }
            }
        }
    }
    false
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

fn emst_with_exclusion(mg: &MeasuredGraph, exclude: Option<LineId>) -> Option<Emst> {
    if mg.spanning_count <= 1 {
        return Some(Emst { tree_edges: BTreeSet::new(), mapping: BTreeMap::new() });
    }
    // every spanned bus must be touched by a measured edge
    if mg.vertices.len() < mg.spanning_count {
        return None;
    }
    let inter = Intersection::new(mg, exclude);
    let best = inter.maximize(Vec::new());
    if best.len() != mg.spanning_count - 1 {
        return None;
    }
    let mapping_raw = inter.try_match(&best).expect("certified independent set must match");
    let tree_edges: BTreeSet<LineId> = best.iter().map(|&e| inter.elements[e]).collect();
    let mapping =
        mapping_raw.into_iter().map(|(e, m)| (inter.elements[e], m)).collect();
    Some(Emst { tree_edges, mapping })
}

/// One EMST witness, or None iff the system is unobservable.
pub fn find_emst(mg: &MeasuredGraph) -> Option<Emst> {
    emst_with_exclusion(mg, None)
}

/// Validate the three mapping rules against the measured graph.
pub fn validate_emst(mg: &MeasuredGraph, emst: &Emst) -> bool {
    if mg.spanning_count == 0 {
        return emst.tree_edges.is_empty();
    }
    if emst.tree_edges.len() != mg.spanning_count - 1 {
        return false;
    }
    let mut dsu = Dsu::new(mg.id_space);
    for l in &emst.tree_edges {
        let Some((u, v)) = mg.edges.get(l).copied() else { return false };
        if !dsu.union(u.0, v.0) {
            return false;
        }
    }
    let mut used = BTreeSet::new();
    for l in &emst.tree_edges {
        let Some(m) = emst.mapping.get(l) else { return false };
        if !mg.measurable[l].contains(m) {
            return false;
        }
        if !used.insert(*m) {
            return false;
        }
    }
    true
}

/// All distinct (tree, mapping) witnesses up to `cap`, in lexicographic
/// order by sorted edge ids and then by the meters assigned to them.
pub fn enumerate_emsts(mg: &MeasuredGraph, cap: usize) -> Result<Vec<Emst>> {
    if mg.spanning_count > 12 {
        return Err(GridError::SizeGuard(format!(
            "EMST enumeration limited to 12 buses, got {}",
            mg.spanning_count
        )));
    }
    if mg.vertices.len() < mg.spanning_count {
        return Ok(Vec::new());
    }
    let edges: Vec<LineId> = mg.edges.keys().copied().collect();
    let want = mg.spanning_count.saturating_sub(1);
    let mut trees = Vec::new();
    let mut combo = Vec::new();
    collect_trees(mg, &edges, 0, want, &mut combo, &mut trees);

    let mut witnesses = Vec::new();
    for tree in trees {
        let mut assignment = BTreeMap::new();
        let mut used = BTreeSet::new();
        enumerate_mappings(mg, &tree, 0, &mut assignment, &mut used, &mut witnesses);
    }
    witnesses.sort_by(|a, b| {
        let ae: Vec<LineId> = a.tree_edges.iter().copied().collect();
        let be: Vec<LineId> = b.tree_edges.iter().copied().collect();
        ae.cmp(&be).then_with(|| {
            let am: Vec<MeterId> = a.mapping.values().copied().collect();
            let bm: Vec<MeterId> = b.mapping.values().copied().collect();
            am.cmp(&bm)
        })
    });
    witnesses.truncate(cap);
    Ok(witnesses)
}

fn collect_trees(
    mg: &MeasuredGraph,
    edges: &[LineId],
    from: usize,
    want: usize,
    combo: &mut Vec<LineId>,
    out: &mut Vec<Vec<LineId>>,
) {
    if combo.len() == want {
        let mut dsu = Dsu::new(mg.id_space);
        let mut ok = true;
        for l in combo.iter() {
            let (u, v) = mg.edges[l];
            if !dsu.union(u.0, v.0) {
                ok = false;
                break;
            }
        }
        if ok {
            out.push(combo.clone());
        }
        return;
    }
    if edges.len() - from < want - combo.len() {
        return;
    }
    for i in from..edges.len() {
        combo.push(edges[i]);
        collect_trees(mg, edges, i + 1, want, combo, out);
        combo.pop();
    }
}

fn enumerate_mappings(
    mg: &MeasuredGraph,
    tree: &[LineId],
    pos: usize,
    assignment: &mut BTreeMap<LineId, MeterId>,
    used: &mut BTreeSet<MeterId>,
    out: &mut Vec<Emst>,
) {
    if pos == tree.len() {
        out.push(Emst {
            tree_edges: tree.iter().copied().collect(),
            mapping: assignment.clone(),
        });
        return;
    }
    let line = tree[pos];
    for &m in &mg.measurable[&line] {
        if used.contains(&m) {
            continue;
        }
        used.insert(m);
        assignment.insert(line, m);
        enumerate_mappings(mg, tree, pos + 1, assignment, used, out);
        assignment.remove(&line);
        used.remove(&m);
    }
}

/// Edges contained in every EMST: no witness exists once the edge is barred
/// from the tree (meters unchanged).
pub fn bridging_edges(mg: &MeasuredGraph) -> Result<BTreeSet<LineId>> {
    let base = find_emst(mg).ok_or(GridError::Unobservable {
        rank: 0,
        need: mg.spanning_count.saturating_sub(1),
    })?;
    let mut bridging = BTreeSet::new();
    for l in mg.edges.keys() {
        // only edges in some EMST can be bridging; skip cheap negatives
        if !base.tree_edges.contains(l) {
            continue;
        }
        if emst_with_exclusion(mg, Some(*l)).is_none() {
            bridging.insert(*l);
        }
    }
    Ok(bridging)
}

/// Bridging edges plus the vertices separated from the reference once they
/// are removed from an EMST.
pub fn vertex_types(mg: &MeasuredGraph) -> Result<VertexTyping> {
    let emst = find_emst(mg).ok_or(GridError::Unobservable {
        rank: 0,
        need: mg.spanning_count.saturating_sub(1),
    })?;
    let bridging = bridging_edges(mg)?;
    // components of the EMST minus bridging edges
    let mut dsu = Dsu::new(mg.id_space);
    for l in &emst.tree_edges {
        if bridging.contains(l) {
            continue;
        }
        let (u, v) = mg.edges[l];
        dsu.union(u.0, v.0);
    }
    let ref_root = dsu.find(mg.reference.0);
    let p2_vertices = (0..mg.id_space)
        .map(BusId)
        .filter(|b| dsu.find(b.0) != ref_root)
        .collect();
    Ok(VertexTyping { bridging, p2_vertices })
}

/// Measured graph with bridging edges and P2-type vertices removed; the
/// arena for partial-knowledge attacks on P1-type targets.
pub fn residual_graph(mg: &MeasuredGraph, typing: &VertexTyping) -> MeasuredGraph {
    let keep: BTreeSet<BusId> = (0..mg.id_space)
        .map(BusId)
        .filter(|b| !typing.p2_vertices.contains(b))
        .collect();
    let mut g = mg.induced(&keep);
    for l in &typing.bridging {
        g.edges.remove(l);
        g.measurable.remove(l);
    }
    g.vertices = g.edges.values().flat_map(|(u, v)| [*u, *v]).collect();
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc_core::build_jacobian;
    use crate::fixtures;
    use crate::grid_model::{generate_placement, PlacementProfile};

    #[test]
    fn fig1_measurability_sets() {
        let case = fixtures::fig1_case();
        let mg = measured_graph(&case.network, &case.placement);
        // r5 (injection at v3) measures e2 and e4
        assert_eq!(
            mg.measurable[&LineId(1)],
            [MeterId(1 - 1), MeterId(4)].iter().skip(1).copied().collect::<BTreeSet<_>>()
        );
        assert!(mg.measurable[&LineId(3)].contains(&MeterId(4)));
        // r4 measures e5
        assert!(mg.measurable[&LineId(4)].contains(&MeterId(3)));
        assert_eq!(mg.edges.len(), 5);
    }

    #[test]
    fn empty_placement_gives_empty_graph() {
        let case = fixtures::fig1_case();
        let placement = crate::grid_model::MeasurementPlacement::default();
        let mg = measured_graph(&case.network, &placement);
        assert!(mg.edges.is_empty());
        assert!(find_emst(&mg).is_none());
    }

    #[test]
    fn generated_case_drops_exactly_one_line() {
        let (net, placement) =
            generate_placement(14, 1, crate::grid_model::PROFILE_14.1).unwrap();
        let mg = measured_graph(&net, &placement);
        assert_eq!(net.lines.len() - mg.edges.len(), 1);
    }

    #[test]
    fn fig1_emst_exists_and_validates() {
        let case = fixtures::fig1_case();
        let mg = measured_graph(&case.network, &case.placement);
        let emst = find_emst(&mg).expect("observable");
        assert!(validate_emst(&mg, &emst));
        assert_eq!(emst.tree_edges.len(), 4);
    }

    #[test]
    fn unmetered_two_bus_case_has_no_emst() {
        let text = r#"{"buses":[1,2],"reference":2,
            "lines":[{"id":1,"from":1,"to":2,"reactance":1.0}],
            "meters":[]}"#;
        let case = crate::grid_model::load_case(text).unwrap();
        let mg = measured_graph(&case.network, &case.placement);
        assert!(find_emst(&mg).is_none());
    }

    #[test]
    fn fig1_enumeration_contains_both_published_witnesses() {
        let case = fixtures::fig1_case();
        let mg = measured_graph(&case.network, &case.placement);
        let all = enumerate_emsts(&mg, 64).unwrap();
        assert!(!all.is_empty());
        for w in &all {
            assert!(validate_emst(&mg, w));
        }
        let want1: BTreeMap<LineId, MeterId> = [
            (LineId(0), MeterId(0)),
            (LineId(1), MeterId(4)),
            (LineId(3), MeterId(2)),
            (LineId(4), MeterId(3)),
        ]
        .into_iter()
        .collect();
        let want2: BTreeMap<LineId, MeterId> = [
            (LineId(0), MeterId(0)),
            (LineId(1), MeterId(4)),
            (LineId(2), MeterId(5)),
            (LineId(3), MeterId(2)),
        ]
        .into_iter()
        .collect();
        assert!(all.iter().any(|w| w.mapping == want1), "missing witness 1");
        assert!(all.iter().any(|w| w.mapping == want2), "missing witness 2");
    }

    #[test]
    fn enumeration_of_unobservable_case_is_empty() {
        let text = r#"{"buses":[1,2,3],"reference":3,
            "lines":[{"id":1,"from":1,"to":2,"reactance":1.0},
                     {"id":2,"from":2,"to":3,"reactance":1.0}],
            "meters":[{"id":1,"kind":"flow","line":2,"direction":"+","secure_cost":1.0}]}"#;
        let case = crate::grid_model::load_case(text).unwrap();
        let mg = measured_graph(&case.network, &case.placement);
        assert!(enumerate_emsts(&mg, 10).unwrap().is_empty());
        assert!(find_emst(&mg).is_none());
    }

    #[test]
    fn fig1_bridging_and_typing() {
        let case = fixtures::fig1_case();
        let mg = measured_graph(&case.network, &case.placement);
        let bridging = bridging_edges(&mg).unwrap();
        assert_eq!(bridging, [LineId(0)].into_iter().collect());
        let typing = vertex_types(&mg).unwrap();
        assert_eq!(typing.p2_vertices, [BusId(0)].into_iter().collect());
    }

    #[test]
    fn metered_triangle_has_no_bridges() {
        let text = r#"{"buses":[1,2,3],"reference":1,
            "lines":[{"id":1,"from":1,"to":2,"reactance":1.0},
                     {"id":2,"from":2,"to":3,"reactance":1.0},
                     {"id":3,"from":3,"to":1,"reactance":1.0}],
            "meters":[{"id":1,"kind":"flow","line":1,"direction":"+","secure_cost":1.0},
                      {"id":2,"kind":"flow","line":2,"direction":"+","secure_cost":1.0},
                      {"id":3,"kind":"flow","line":3,"direction":"+","secure_cost":1.0}]}"#;
        let case = crate::grid_model::load_case(text).unwrap();
        let mg = measured_graph(&case.network, &case.placement);
        assert!(bridging_edges(&mg).unwrap().is_empty());
        assert!(vertex_types(&mg).unwrap().p2_vertices.is_empty());
    }

    /// Raw random case with no observability guarantee, for equivalence
    /// sweeps over a fair mix of observable and unobservable systems.
    fn raw_random_case(
        seed: u64,
    ) -> (crate::grid_model::PowerNetwork, crate::grid_model::MeasurementPlacement) {
        use crate::grid_model::*;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(4..=8);
        let mut pairs = std::collections::BTreeSet::new();
        for b in 1..n {
            if rng.gen_bool(0.85) {
                let parent = rng.gen_range(0..b);
                pairs.insert((parent, b));
            }
        }
        for _ in 0..rng.gen_range(1..=4) {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u != v {
                pairs.insert((u.min(v), u.max(v)));
            }
        }
        let lines: Vec<Line> = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (u, v))| Line {
                id: LineId(i),
                tail: BusId(u),
                head: BusId(v),
                reactance: rng.gen_range(0.5..2.0),
            })
            .collect();
        let line_count = lines.len();
        let net = PowerNetwork::new(n, BusId(0), lines).unwrap();
        let mut meters = Vec::new();
        for l in 0..line_count {
            if rng.gen_bool(0.4) {
                meters.push(Meter {
                    id: MeterId(meters.len()),
                    kind: MeterKind::Flow {
                        line: LineId(l),
                        direction: if rng.gen_bool(0.5) {
                            FlowDirection::Positive
                        } else {
                            FlowDirection::Negative
                        },
                    },
                    secure_cost: Dollars::ZERO,
                });
            }
        }
        for b in 0..n {
            if rng.gen_bool(0.3) {
                meters.push(Meter {
                    id: MeterId(meters.len()),
                    kind: MeterKind::Injection { bus: BusId(b) },
                    secure_cost: Dollars::ZERO,
                });
            }
        }
        (net, MeasurementPlacement::new(meters).unwrap())
    }

    #[test]
    fn emst_existence_matches_algebraic_observability() {
        let mut observable = 0;
        let mut unobservable = 0;
        for seed in 0..200 {
            let (net, placement) = raw_random_case(seed);
            let mg = measured_graph(&net, &placement);
            let jac = build_jacobian(&net, &placement);
            let algebraic = jac.reduced.rank() == net.bus_count - 1;
            assert_eq!(find_emst(&mg).is_some(), algebraic, "seed {seed}");
            if algebraic {
                observable += 1;
            } else {
                unobservable += 1;
            }
        }
        assert!(observable >= 20, "want both outcomes, got {observable} observable");
        assert!(unobservable >= 20, "want both outcomes, got {unobservable} unobservable");
    }

    #[test]
    fn brute_force_agreement_on_small_cases() {
        for seed in 0..40 {
            let profile = PlacementProfile {
                lines: 10,
                injections: (seed % 3) as usize,
                flows: 5 + (seed % 3) as usize,
                unmeasured: 0,
            };
            let Ok((net, placement)) = generate_placement(8, seed, profile) else {
                continue;
            };
            let drop = (seed % 4) as usize;
            let meters: Vec<_> = placement
                .meters
                .iter()
                .skip(drop)
                .enumerate()
                .map(|(i, m)| crate::grid_model::Meter { id: MeterId(i), ..*m })
                .collect();
            let degraded = crate::grid_model::MeasurementPlacement::new(meters).unwrap();
            let mg = measured_graph(&net, &degraded);
            let brute = enumerate_emsts(&mg, usize::MAX).unwrap();
            assert_eq!(find_emst(&mg).is_some(), !brute.is_empty(), "seed {seed}");
            if let Some(w) = find_emst(&mg) {
                assert!(validate_emst(&mg, &w));
            }
        }
    }

    #[test]
    fn bridging_edges_appear_in_every_witness() {
        for seed in 0..20 {
            let profile = PlacementProfile { lines: 8, injections: 2, flows: 4, unmeasured: 0 };
            let Ok((net, placement)) = generate_placement(7, seed, profile) else { continue };
            let mg = measured_graph(&net, &placement);
            let Ok(bridging) = bridging_edges(&mg) else { continue };
            let all = enumerate_emsts(&mg, usize::MAX).unwrap();
            assert!(!all.is_empty());
            for b in &bridging {
                assert!(all.iter().all(|w| w.tree_edges.contains(b)));
            }
            for l in mg.edges.keys() {
                if !bridging.contains(l) {
                    assert!(
                        all.iter().any(|w| !w.tree_edges.contains(l)),
                        "non-bridging {l} in every EMST (seed {seed})"
                    );
                }
            }
        }
    }

    #[test]
    fn typing_audit_across_all_witnesses() {
        // cross-EMST consistency audit: the partition is the same for every
        // witness on the vast majority of placements; rare meter-starved
        // placements can disagree, in which case the implementation's typing
        // must still come from one of the witnesses
        let mut agreements = 0;
        let mut anomalies = 0;
        for seed in 0..30 {
            let profile = PlacementProfile { lines: 9, injections: 2, flows: 5, unmeasured: 1 };
            let Ok((net, placement)) = generate_placement(8, seed, profile) else { continue };
            let mg = measured_graph(&net, &placement);
            let Ok(typing) = vertex_types(&mg) else { continue };
            let all = enumerate_emsts(&mg, usize::MAX).unwrap();
            let mut per_witness: BTreeSet<Vec<BusId>> = BTreeSet::new();
            for w in &all {
                let mut dsu = Dsu::new(mg.id_space);
                for l in &w.tree_edges {
                    if typing.bridging.contains(l) {
                        continue;
                    }
                    let (u, v) = mg.edges[l];
                    dsu.union(u.0, v.0);
                }
                let ref_root = dsu.find(mg.reference.0);
                let p2: Vec<BusId> = (0..mg.id_space)
                    .map(BusId)
                    .filter(|b| dsu.find(b.0) != ref_root)
                    .collect();
                per_witness.insert(p2);
            }
            let ours: Vec<BusId> = typing.p2_vertices.iter().copied().collect();
            assert!(per_witness.contains(&ours), "seed {seed}: typing not witnessed");
            if per_witness.len() == 1 {
                agreements += 1;
            } else {
                anomalies += 1;
            }
        }
        assert!(agreements >= 10, "only {agreements} clean agreements");
        assert!(anomalies <= agreements, "{anomalies} anomalies vs {agreements}");
    }
}
