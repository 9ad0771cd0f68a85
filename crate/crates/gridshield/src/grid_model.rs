//! Network, measurement and cost modeling plus case-file I/O.
//!
//! Bus, line and meter ids are 1-based in case files (`v_1`, `e_1`, `r_1`)
//! and 0-based internally. Dollar amounts are stored as integer
//! micro-dollars so that cut weights and enumeration orders are exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BusId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LineId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MeterId(pub usize);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0 + 1)
    }
}

impl fmt::Display for LineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0 + 1)
    }
}

impl fmt::Display for MeterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0 + 1)
    }
}

/// Parse `v3` / `e4` / `r5` labels (also bare 1-based numbers).
pub fn parse_label(text: &str, prefix: char) -> Option<usize> {
    let digits = text.strip_prefix(prefix).unwrap_or(text);
    let n: usize = digits.parse().ok()?;
    if n == 0 {
        return None;
    }
    Some(n - 1)
}

/// Money in integer micro-dollars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Dollars(pub i64);

impl Dollars {
    pub const ZERO: Dollars = Dollars(0);

    pub fn from_f64(v: f64) -> Result<Dollars> {
        if !v.is_finite() || v < 0.0 {
            return Err(GridError::Invalid(format!("invalid dollar amount {v}")));
        }
        Ok(Dollars((v * 1e6).round() as i64))
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn micro(self) -> i64 {
        self.0
    }
}

impl std::ops::Add for Dollars {
    type Output = Dollars;
    fn add(self, rhs: Dollars) -> Dollars {
        Dollars(self.0 + rhs.0)
    }
}

impl std::iter::Sum for Dollars {
    fn sum<I: Iterator<Item = Dollars>>(iter: I) -> Dollars {
        Dollars(iter.map(|d| d.0).sum())
    }
}

/// Attacker-side difficulty of learning a line's exact reactance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Acquisition {
    Finite(Dollars),
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlowDirection {
    Positive,
    Negative,
}

impl FlowDirection {
    pub fn sign(self) -> f64 {
        match self {
            FlowDirection::Positive => 1.0,
            FlowDirection::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub id: LineId,
    pub tail: BusId,
    pub head: BusId,
    pub reactance: f64,
}

impl Line {
    pub fn admittance(&self) -> f64 {
        1.0 / self.reactance
    }

    pub fn touches(&self, bus: BusId) -> bool {
        self.tail == bus || self.head == bus
    }

    pub fn other_end(&self, bus: BusId) -> BusId {
        if self.tail == bus {
            self.head
        } else {
            self.tail
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeterKind {
    Flow { line: LineId, direction: FlowDirection },
    Injection { bus: BusId },
    /// Analysis stand-in for a covert line (never read from case files).
    VirtualFlow { line: LineId },
    /// Analysis stand-in for a PMU (never read from case files).
    PseudoFlow { line: LineId },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Meter {
    pub id: MeterId,
    pub kind: MeterKind,
    pub secure_cost: Dollars,
}

impl Meter {
    pub fn is_injection(&self) -> bool {
        matches!(self.kind, MeterKind::Injection { .. })
    }
}

#[derive(Debug, Clone)]
pub struct PowerNetwork {
    pub bus_count: usize,
    pub reference: BusId,
    pub lines: Vec<Line>,
}

impl PowerNetwork {
    pub fn new(bus_count: usize, reference: BusId, lines: Vec<Line>) -> Result<Self> {
        let net = PowerNetwork { bus_count, reference, lines };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        if self.reference.0 >= self.bus_count {
            return Err(GridError::Invalid(format!(
                "reference {} outside bus range",
                self.reference
            )));
        }
        for (i, line) in self.lines.iter().enumerate() {
            if line.id.0 != i {
                return Err(GridError::Invalid(format!(
                    "line ids must be dense: slot {i} holds {}",
                    line.id
                )));
            }
            if line.tail == line.head {
                return Err(GridError::Invalid(format!("line {} is a self-loop", line.id)));
            }
            if line.tail.0 >= self.bus_count || line.head.0 >= self.bus_count {
                return Err(GridError::Invalid(format!(
                    "line {} references a nonexistent bus",
                    line.id
                )));
            }
            if line.reactance <= 0.0 || !line.reactance.is_finite() {
                return Err(GridError::Invalid(format!(
                    "nonpositive reactance on line {}",
                    line.id
                )));
            }
        }
        Ok(())
    }

    pub fn line(&self, id: LineId) -> &Line {
        &self.lines[id.0]
    }

    pub fn lines_at(&self, bus: BusId) -> impl Iterator<Item = &Line> {
        self.lines.iter().filter(move |l| l.touches(bus))
    }

    /// Non-reference buses in ascending order; these index the state vector.
    pub fn state_buses(&self) -> Vec<BusId> {
        (0..self.bus_count)
            .map(BusId)
            .filter(|b| *b != self.reference)
            .collect()
    }
}

/// t x (n+1) incidence matrix: +1 at the tail, -1 at the head of each line.
pub fn build_incidence(network: &PowerNetwork) -> Mat {
    let mut a = Mat::zeros(network.lines.len(), network.bus_count);
    for line in &network.lines {
        a[(line.id.0, line.tail.0)] = 1.0;
        a[(line.id.0, line.head.0)] = -1.0;
    }
    a
}

#[derive(Debug, Clone, Default)]
pub struct MeasurementPlacement {
    pub meters: Vec<Meter>,
}

impl MeasurementPlacement {
    pub fn new(meters: Vec<Meter>) -> Result<Self> {
        let p = MeasurementPlacement { meters };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let mut seen_flow = BTreeSet::new();
        for (i, m) in self.meters.iter().enumerate() {
            if m.id.0 != i {
                return Err(GridError::Invalid(format!(
                    "meter ids must be dense: slot {i} holds {}",
                    m.id
                )));
            }
            if let MeterKind::Flow { line, direction } = m.kind {
                if !seen_flow.insert((line, direction)) {
                    return Err(GridError::Invalid(format!(
                        "duplicate meter on line {} direction {:?}",
                        line, direction
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn meter(&self, id: MeterId) -> &Meter {
        &self.meters[id.0]
    }

    pub fn len(&self) -> usize {
        self.meters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meters.is_empty()
    }

    pub fn flow_count(&self) -> usize {
        self.meters
            .iter()
            .filter(|m| matches!(m.kind, MeterKind::Flow { .. }))
            .count()
    }

    pub fn injection_count(&self) -> usize {
        self.meters.iter().filter(|m| m.is_injection()).count()
    }

    /// Lines carrying no measurement at all: no flow meter on the line and
    /// no injection meter at either endpoint.
    pub fn unmeasured_lines(&self, network: &PowerNetwork) -> BTreeSet<LineId> {
        let mut measured = BTreeSet::new();
        for m in &self.meters {
            match m.kind {
                MeterKind::Flow { line, .. }
                | MeterKind::VirtualFlow { line }
                | MeterKind::PseudoFlow { line } => {
                    measured.insert(line);
                }
                MeterKind::Injection { bus } => {
                    for l in network.lines_at(bus) {
                        measured.insert(l.id);
                    }
                }
            }
        }
        network
            .lines
            .iter()
            .map(|l| l.id)
            .filter(|id| !measured.contains(id))
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct CostModel {
    /// Lines whose reactance the operator can keep covert, with the cost.
    pub covert_candidates: BTreeMap<LineId, Dollars>,
    /// Attacker's cost of learning each line's exact reactance.
    pub acquisition: BTreeMap<LineId, Acquisition>,
}

impl CostModel {
    /// Acquisition weight with the documented default of 1 dollar.
    pub fn acquisition_of(&self, line: LineId) -> Acquisition {
        self.acquisition
            .get(&line)
            .copied()
            .unwrap_or(Acquisition::Finite(Dollars::from_f64(1.0).unwrap()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pmu {
    pub bus: BusId,
    pub secure_cost: Dollars,
}

#[derive(Debug, Clone)]
pub struct Case {
    pub network: PowerNetwork,
    pub placement: MeasurementPlacement,
    pub cost_model: CostModel,
    pub pmus: Vec<Pmu>,
}

// ---------------------------------------------------------------------------
// Case file schema

#[derive(Serialize, Deserialize)]
struct CaseFile {
    buses: Vec<u64>,
    reference: u64,
    lines: Vec<LineFile>,
    meters: Vec<MeterFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    covert_candidates: Vec<CovertFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    acquisition: Vec<AcquisitionFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pmus: Vec<PmuFile>,
}

#[derive(Serialize, Deserialize)]
struct LineFile {
    id: u64,
    from: u64,
    to: u64,
    reactance: f64,
}

#[derive(Serialize, Deserialize)]
struct MeterFile {
    id: u64,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    line: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    direction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bus: Option<u64>,
    secure_cost: f64,
}

#[derive(Serialize, Deserialize)]
struct CovertFile {
    line: u64,
    covert_cost: f64,
}

#[derive(Serialize, Deserialize)]
struct AcquisitionFile {
    line: u64,
    cost: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct PmuFile {
    bus: u64,
    secure_cost: f64,
}

fn schema_err(path: &str, message: impl Into<String>) -> GridError {
    GridError::Schema { path: path.to_string(), message: message.into() }
}

/// Parse a case file. Ids are converted from the 1-based file encoding.
pub fn load_case(text: &str) -> Result<Case> {
    let file: CaseFile = serde_json::from_str(text)
        .map_err(|e| schema_err("$", format!("{e}")))?;

    let n = file.buses.len();
    for (i, b) in file.buses.iter().enumerate() {
        if *b as usize != i + 1 {
            return Err(schema_err(
                &format!("buses[{i}]"),
                format!("buses must be 1..{n} in order, found {b}"),
            ));
        }
    }
    if file.reference == 0 || file.reference as usize > n {
        return Err(schema_err("reference", "dangling id"));
    }
    let reference = BusId(file.reference as usize - 1);

    let mut lines = Vec::new();
    for (i, lf) in file.lines.iter().enumerate() {
        let path = format!("lines[{i}]");
        if lf.id as usize != i + 1 {
            return Err(schema_err(&format!("{path}.id"), "line ids must be dense and 1-based"));
        }
        let check_bus = |b: u64, field: &str| -> Result<BusId> {
            if b == 0 || b as usize > n {
                Err(schema_err(&format!("{path}.{field}"), "dangling id"))
            } else {
                Ok(BusId(b as usize - 1))
            }
        };
        let tail = check_bus(lf.from, "from")?;
        let head = check_bus(lf.to, "to")?;
        if tail == head {
            return Err(schema_err(&path, "self-loop"));
        }
        if lf.reactance <= 0.0 || !lf.reactance.is_finite() {
            return Err(schema_err(&format!("{path}.reactance"), "nonpositive reactance"));
        }
        lines.push(Line { id: LineId(i), tail, head, reactance: lf.reactance });
    }
    let t = lines.len();
    let network = PowerNetwork::new(n, reference, lines)?;

    let mut meters = Vec::new();
    for (i, mf) in file.meters.iter().enumerate() {
        let path = format!("meters[{i}]");
        if mf.id as usize != i + 1 {
            return Err(schema_err(&format!("{path}.id"), "meter ids must be dense and 1-based"));
        }
        let kind = match mf.kind.as_str() {
            "flow" => {
                let line = mf.line.ok_or_else(|| schema_err(&format!("{path}.line"), "missing"))?;
                if line == 0 || line as usize > t {
                    return Err(schema_err(&format!("{path}.line"), "dangling id"));
                }
                let dir = match mf.direction.as_deref() {
                    Some("+") => FlowDirection::Positive,
                    Some("-") => FlowDirection::Negative,
                    other => {
                        return Err(schema_err(
                            &format!("{path}.direction"),
                            format!("expected \"+\" or \"-\", found {other:?}"),
                        ))
                    }
                };
                MeterKind::Flow { line: LineId(line as usize - 1), direction: dir }
            }
            "injection" => {
                let bus = mf.bus.ok_or_else(|| schema_err(&format!("{path}.bus"), "missing"))?;
                if bus == 0 || bus as usize > n {
                    return Err(schema_err(&format!("{path}.bus"), "dangling id"));
                }
                MeterKind::Injection { bus: BusId(bus as usize - 1) }
            }
            other => {
                return Err(schema_err(
                    &format!("{path}.kind"),
                    format!("unknown meter kind {other:?} (virtual/pseudo meters are never read from files)"),
                ))
            }
        };
        if mf.secure_cost < 0.0 || !mf.secure_cost.is_finite() {
            return Err(schema_err(&format!("{path}.secure_cost"), "cost must be nonnegative"));
        }
        meters.push(Meter {
            id: MeterId(i),
            kind,
            secure_cost: Dollars::from_f64(mf.secure_cost)
                .map_err(|e| schema_err(&format!("{path}.secure_cost"), e.to_string()))?,
        });
    }
    let placement = MeasurementPlacement::new(meters)
        .map_err(|e| schema_err("meters", e.to_string()))?;

    let unmeasured = placement.unmeasured_lines(&network);
    let mut covert_candidates = BTreeMap::new();
    for (i, cf) in file.covert_candidates.iter().enumerate() {
        let path = format!("covert_candidates[{i}]");
        if cf.line == 0 || cf.line as usize > t {
            return Err(schema_err(&format!("{path}.line"), "dangling id"));
        }
        let line = LineId(cf.line as usize - 1);
        if unmeasured.contains(&line) {
            return Err(schema_err(
                &format!("{path}.line"),
                format!("{line} is unmeasured; covert candidates must be measured lines"),
            ));
        }
        if cf.covert_cost < 0.0 || !cf.covert_cost.is_finite() {
            return Err(schema_err(&format!("{path}.covert_cost"), "cost must be nonnegative"));
        }
        covert_candidates.insert(line, Dollars::from_f64(cf.covert_cost).unwrap());
    }

    let mut acquisition = BTreeMap::new();
    for (i, af) in file.acquisition.iter().enumerate() {
        let path = format!("acquisition[{i}]");
        if af.line == 0 || af.line as usize > t {
            return Err(schema_err(&format!("{path}.line"), "dangling id"));
        }
        let line = LineId(af.line as usize - 1);
        let value = match &af.cost {
            serde_json::Value::String(s) if s == "inf" => Acquisition::Infinite,
            serde_json::Value::Number(num) => {
                let v = num.as_f64().unwrap_or(-1.0);
                if v < 0.0 {
                    return Err(schema_err(&format!("{path}.cost"), "cost must be nonnegative"));
                }
                Acquisition::Finite(Dollars::from_f64(v).unwrap())
            }
            _ => {
                return Err(schema_err(&format!("{path}.cost"), "expected number or \"inf\""))
            }
        };
        acquisition.insert(line, value);
    }

    let mut pmus = Vec::new();
    for (i, pf) in file.pmus.iter().enumerate() {
        let path = format!("pmus[{i}]");
        if pf.bus == 0 || pf.bus as usize > n {
            return Err(schema_err(&format!("{path}.bus"), "dangling id"));
        }
        if pf.secure_cost < 0.0 || !pf.secure_cost.is_finite() {
            return Err(schema_err(&format!("{path}.secure_cost"), "cost must be nonnegative"));
        }
        pmus.push(Pmu {
            bus: BusId(pf.bus as usize - 1),
            secure_cost: Dollars::from_f64(pf.secure_cost).unwrap(),
        });
    }

    Ok(Case { network, placement, cost_model: CostModel { covert_candidates, acquisition }, pmus })
}

/// Serialize a case in canonical form (pretty JSON, 1-based ids).
pub fn save_case(case: &Case) -> String {
    let file = CaseFile {
        buses: (1..=case.network.bus_count as u64).collect(),
        reference: case.network.reference.0 as u64 + 1,
        lines: case
            .network
            .lines
            .iter()
            .map(|l| LineFile {
                id: l.id.0 as u64 + 1,
                from: l.tail.0 as u64 + 1,
                to: l.head.0 as u64 + 1,
                reactance: l.reactance,
            })
            .collect(),
        meters: case
            .placement
            .meters
            .iter()
            .map(|m| match m.kind {
                MeterKind::Flow { line, direction } => MeterFile {
                    id: m.id.0 as u64 + 1,
                    kind: "flow".into(),
                    line: Some(line.0 as u64 + 1),
                    direction: Some(
                        match direction {
                            FlowDirection::Positive => "+",
                            FlowDirection::Negative => "-",
                        }
                        .into(),
                    ),
                    bus: None,
                    secure_cost: m.secure_cost.as_f64(),
                },
                MeterKind::Injection { bus } => MeterFile {
                    id: m.id.0 as u64 + 1,
                    kind: "injection".into(),
                    line: None,
                    direction: None,
                    bus: Some(bus.0 as u64 + 1),
                    secure_cost: m.secure_cost.as_f64(),
                },
                MeterKind::VirtualFlow { .. } | MeterKind::PseudoFlow { .. } => {
                    unreachable!("virtual/pseudo meters are never written to case files")
                }
            })
            .collect(),
        covert_candidates: case
            .cost_model
            .covert_candidates
            .iter()
            .map(|(l, c)| CovertFile { line: l.0 as u64 + 1, covert_cost: c.as_f64() })
            .collect(),
        acquisition: case
            .cost_model
            .acquisition
            .iter()
            .map(|(l, a)| AcquisitionFile {
                line: l.0 as u64 + 1,
                cost: match a {
                    Acquisition::Finite(d) => serde_json::json!(d.as_f64()),
                    Acquisition::Infinite => serde_json::json!("inf"),
                },
            })
            .collect(),
        pmus: case
            .pmus
            .iter()
            .map(|p| PmuFile { bus: p.bus.0 as u64 + 1, secure_cost: p.secure_cost.as_f64() })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("case serialization");
    out.push('\n');
    out
}

// ---------------------------------------------------------------------------
// Seeded placement generation

/// Target counts for a generated placement (Table-style statistics).
#[derive(Debug, Clone, Copy)]
pub struct PlacementProfile {
    pub lines: usize,
    pub injections: usize,
    pub flows: usize,
    pub unmeasured: usize,
}

pub const PROFILE_14: (usize, PlacementProfile) =
    (14, PlacementProfile { lines: 20, injections: 8, flows: 12, unmeasured: 1 });
pub const PROFILE_57: (usize, PlacementProfile) =
    (57, PlacementProfile { lines: 80, injections: 30, flows: 50, unmeasured: 2 });
pub const PROFILE_118: (usize, PlacementProfile) =
    (118, PlacementProfile { lines: 186, injections: 70, flows: 110, unmeasured: 7 });

const GENERATION_RETRY_CAP: usize = 1000;

/// Generate a random connected network with an observable placement matching
/// the profile exactly. Deterministic for a fixed seed: sub-seeds are retried
/// (bounded) until the observability check passes.
pub fn generate_placement(
    n_buses: usize,
    seed: u64,
    profile: PlacementProfile,
) -> Result<(PowerNetwork, MeasurementPlacement)> {
    if n_buses < 2 {
        return Err(GridError::InfeasibleProfile("need at least 2 buses".into()));
    }
    if profile.lines < n_buses - 1 {
        return Err(GridError::InfeasibleProfile(format!(
            "{} lines cannot connect {} buses",
            profile.lines, n_buses
        )));
    }
    if profile.lines > n_buses * (n_buses - 1) / 2 {
        return Err(GridError::InfeasibleProfile("more lines than simple-graph capacity".into()));
    }
    if profile.flows > profile.lines {
        return Err(GridError::InfeasibleProfile("more flow meters than lines".into()));
    }
    if profile.injections > n_buses {
        return Err(GridError::InfeasibleProfile("more injection meters than buses".into()));
    }
    if profile.unmeasured > profile.lines {
        return Err(GridError::InfeasibleProfile("more unmeasured lines than lines".into()));
    }

    let mut last_reason = String::from("no attempt succeeded");
    for attempt in 0..GENERATION_RETRY_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        match try_generate(n_buses, profile, &mut rng) {
            Ok(Some(result)) => return Ok(result),
            Ok(None) => last_reason = "placement constraints unsatisfied".into(),
            Err(reason) => last_reason = reason,
        }
    }
    Err(GridError::GenerationExhausted { attempts: GENERATION_RETRY_CAP, reason: last_reason })
}

fn try_generate(
    n_buses: usize,
    profile: PlacementProfile,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<Option<(PowerNetwork, MeasurementPlacement)>, String> {
    // random spanning tree, then extra edges up to the line count
    let mut pairs = BTreeSet::new();
    let mut lines = Vec::new();
    for b in 1..n_buses {
        let parent = rng.gen_range(0..b);
        let (u, v) = if rng.gen_bool(0.5) { (parent, b) } else { (b, parent) };
        pairs.insert((u.min(v), u.max(v)));
        lines.push((u, v));
    }
    let mut guard = 0;
    while lines.len() < profile.lines {
        let u = rng.gen_range(0..n_buses);
        let v = rng.gen_range(0..n_buses);
        guard += 1;
        if guard > 200 * profile.lines {
            return Err("could not place extra lines".into());
        }
        if u == v || pairs.contains(&(u.min(v), u.max(v))) {
            continue;
        }
        pairs.insert((u.min(v), u.max(v)));
        lines.push((u, v));
    }
    let lines: Vec<Line> = lines
        .into_iter()
        .enumerate()
        .map(|(i, (u, v))| Line {
            id: LineId(i),
            tail: BusId(u),
            head: BusId(v),
            reactance: rng.gen_range(0.5..2.0),
        })
        .collect();
    let network = PowerNetwork::new(n_buses, BusId(0), lines).map_err(|e| e.to_string())?;

    // pick the unmeasured lines, then keep meters away from them
    let mut all_line_ids: Vec<usize> = (0..profile.lines).collect();
    all_line_ids.shuffle(rng);
    let unmeasured: BTreeSet<usize> = all_line_ids[..profile.unmeasured].iter().copied().collect();
    let mut blocked_buses = BTreeSet::new();
    for &l in &unmeasured {
        blocked_buses.insert(network.lines[l].tail.0);
        blocked_buses.insert(network.lines[l].head.0);
    }

    let mut eligible_buses: Vec<usize> =
        (0..n_buses).filter(|b| !blocked_buses.contains(b)).collect();
    if eligible_buses.len() < profile.injections {
        return Ok(None);
    }
    eligible_buses.shuffle(rng);
    let injection_buses: BTreeSet<usize> =
        eligible_buses[..profile.injections].iter().copied().collect();

    // lines already covered by an injection endpoint
    let covered: BTreeSet<usize> = network
        .lines
        .iter()
        .filter(|l| {
            injection_buses.contains(&l.tail.0) || injection_buses.contains(&l.head.0)
        })
        .map(|l| l.id.0)
        .collect();
    let mut must_flow: Vec<usize> = (0..profile.lines)
        .filter(|l| !unmeasured.contains(l) && !covered.contains(l))
        .collect();
    if must_flow.len() > profile.flows {
        return Ok(None);
    }
    let mut optional: Vec<usize> = (0..profile.lines)
        .filter(|l| !unmeasured.contains(l) && !must_flow.contains(l))
        .collect();
    optional.shuffle(rng);
    let extra = profile.flows - must_flow.len();
    if optional.len() < extra {
        return Ok(None);
    }
    must_flow.extend(optional[..extra].iter().copied());
    must_flow.sort_unstable();

    let unit = Dollars::from_f64(1.0).unwrap();
    let mut meters = Vec::new();
    for &l in &must_flow {
        let direction =
            if rng.gen_bool(0.5) { FlowDirection::Positive } else { FlowDirection::Negative };
        meters.push(Meter {
            id: MeterId(meters.len()),
            kind: MeterKind::Flow { line: LineId(l), direction },
            secure_cost: unit,
        });
    }
    for &b in &injection_buses {
        meters.push(Meter {
            id: MeterId(meters.len()),
            kind: MeterKind::Injection { bus: BusId(b) },
            secure_cost: unit,
        });
    }
    let placement = MeasurementPlacement::new(meters).map_err(|e| e.to_string())?;

    if placement.unmeasured_lines(&network).len() != profile.unmeasured {
        return Ok(None);
    }
    let jac = crate::dc_core::build_jacobian(&network, &placement);
    if jac.reduced.rank() != n_buses - 1 {
        return Ok(None);
    }
    Ok(Some((network, placement)))
}

/// Deterministic synthetic cost model: a seeded fraction of measured lines
/// become covert candidates at `covert_cost`; acquisition defaults apply.
pub fn synth_cost_model(
    network: &PowerNetwork,
    placement: &MeasurementPlacement,
    covert_fraction: f64,
    covert_cost: Dollars,
    seed: u64,
) -> CostModel {
    let unmeasured = placement.unmeasured_lines(network);
    let measured: Vec<LineId> = network
        .lines
        .iter()
        .map(|l| l.id)
        .filter(|id| !unmeasured.contains(id))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xC0157);
    let mut shuffled = measured.clone();
    shuffled.shuffle(&mut rng);
    let count = ((measured.len() as f64) * covert_fraction).ceil() as usize;
    let covert_candidates: BTreeMap<LineId, Dollars> =
        shuffled.into_iter().take(count).map(|l| (l, covert_cost)).collect();
    CostModel { covert_candidates, acquisition: BTreeMap::new() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fig1_counts() {
        let case = fixtures::fig1_case();
        assert_eq!(case.network.lines.len(), 5);
        assert_eq!(case.network.bus_count, 5);
        assert_eq!(case.placement.len(), 6);
        assert_eq!(case.network.reference, BusId(4));
    }

    #[test]
    fn fig1_incidence_matches_printed_matrix() {
        let case = fixtures::fig1_case();
        let a = build_incidence(&case.network);
        let expected = [
            [1.0, -1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, -1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, -1.0],
            [0.0, 0.0, 0.0, 1.0, -1.0],
        ];
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(a[(i, j)], expected[i][j], "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn single_line_incidence() {
        let net = PowerNetwork::new(
            2,
            BusId(1),
            vec![Line { id: LineId(0), tail: BusId(0), head: BusId(1), reactance: 1.0 }],
        )
        .unwrap();
        let a = build_incidence(&net);
        assert_eq!(a[(0, 0)], 1.0);
        assert_eq!(a[(0, 1)], -1.0);
    }

    #[test]
    fn incidence_rows_sum_to_zero_on_seeded_networks() {
        for seed in 0..100 {
            let (net, _) = generate_placement(
                8,
                seed,
                PlacementProfile { lines: 11, injections: 3, flows: 7, unmeasured: 0 },
            )
            .unwrap();
            let a = build_incidence(&net);
            for i in 0..a.rows {
                let sum: f64 = a.row(i).iter().sum();
                assert_eq!(sum, 0.0);
            }
        }
    }

    #[test]
    fn nonpositive_reactance_is_rejected_with_path() {
        let text = r#"{"buses":[1,2],"reference":2,
            "lines":[{"id":1,"from":1,"to":2,"reactance":0.0}],
            "meters":[]}"#;
        let err = load_case(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nonpositive reactance"), "{msg}");
        assert!(msg.contains("lines[0]"), "{msg}");
    }

    #[test]
    fn empty_meter_list_loads() {
        let text = r#"{"buses":[1,2],"reference":2,
            "lines":[{"id":1,"from":1,"to":2,"reactance":1.0}],
            "meters":[]}"#;
        let case = load_case(text).unwrap();
        assert!(case.placement.is_empty());
        let jac = crate::dc_core::build_jacobian(&case.network, &case.placement);
        assert!(jac.reduced.rank() < case.network.bus_count - 1);
    }

    #[test]
    fn duplicate_flow_meter_rejected() {
        let text = r#"{"buses":[1,2],"reference":2,
            "lines":[{"id":1,"from":1,"to":2,"reactance":1.0}],
            "meters":[
              {"id":1,"kind":"flow","line":1,"direction":"+","secure_cost":1.0},
              {"id":2,"kind":"flow","line":1,"direction":"+","secure_cost":1.0}]}"#;
        assert!(load_case(text).is_err());
    }

    #[test]
    fn save_load_round_trip_is_canonical() {
        for seed in 0..20 {
            let (net, placement) = generate_placement(
                10,
                seed,
                PlacementProfile { lines: 14, injections: 4, flows: 9, unmeasured: 1 },
            )
            .unwrap();
            let cm = synth_cost_model(&net, &placement, 0.2, Dollars::from_f64(0.1).unwrap(), seed);
            let case = Case { network: net, placement, cost_model: cm, pmus: vec![] };
            let saved = save_case(&case);
            let reloaded = load_case(&saved).unwrap();
            assert_eq!(save_case(&reloaded), saved);
        }
    }

    #[test]
    fn generator_is_reproducible() {
        let (n1, p1) = generate_placement(14, 1, PROFILE_14.1).unwrap();
        let (n2, p2) = generate_placement(14, 1, PROFILE_14.1).unwrap();
        let case1 = Case {
            network: n1,
            placement: p1,
            cost_model: CostModel::default(),
            pmus: vec![],
        };
        let case2 = Case {
            network: n2,
            placement: p2,
            cost_model: CostModel::default(),
            pmus: vec![],
        };
        assert_eq!(save_case(&case1), save_case(&case2));
    }

    #[test]
    fn table_counts_match_for_14_and_57() {
        let (net, placement) = generate_placement(14, 1, PROFILE_14.1).unwrap();
        assert_eq!(net.lines.len(), 20);
        assert_eq!(placement.len(), 20);
        assert_eq!(placement.injection_count(), 8);
        assert_eq!(placement.flow_count(), 12);
        assert_eq!(placement.unmeasured_lines(&net).len(), 1);

        let (net, placement) = generate_placement(57, 7, PROFILE_57.1).unwrap();
        assert_eq!(net.lines.len(), 80);
        assert_eq!(placement.injection_count(), 30);
        assert_eq!(placement.flow_count(), 50);
        assert_eq!(placement.unmeasured_lines(&net).len(), 2);
        let jac = crate::dc_core::build_jacobian(&net, &placement);
        assert_eq!(jac.reduced.rank(), 56);
    }

    #[test]
    fn two_bus_minimal_profile() {
        let (net, placement) = generate_placement(
            2,
            0,
            PlacementProfile { lines: 1, injections: 0, flows: 1, unmeasured: 0 },
        )
        .unwrap();
        assert_eq!(net.lines.len(), 1);
        assert_eq!(placement.len(), 1);
    }

    #[test]
    fn infeasible_profile_is_reported() {
        let err = generate_placement(
            5,
            0,
            PlacementProfile { lines: 4, injections: 0, flows: 6, unmeasured: 0 },
        )
        .unwrap_err();
        assert!(matches!(err, GridError::InfeasibleProfile(_)));
    }
}
