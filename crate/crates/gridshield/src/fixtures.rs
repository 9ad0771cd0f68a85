//! Small hand-built cases used throughout the test suites and docs.

use std::collections::BTreeMap;

use crate::grid_model::{
    BusId, Case, CostModel, Dollars, FlowDirection, Line, LineId, MeasurementPlacement, Meter,
    MeterId, MeterKind, Pmu, PowerNetwork,
};

/// Five-bus network: lines e1..e5, flow meters r1..r4, injection meters
/// r5 (v3) and r6 (v4), reference v5, unit reactances.
pub fn fig1_case() -> Case {
    let lines = vec![
        Line { id: LineId(0), tail: BusId(0), head: BusId(1), reactance: 1.0 },
        Line { id: LineId(1), tail: BusId(1), head: BusId(2), reactance: 1.0 },
        Line { id: LineId(2), tail: BusId(1), head: BusId(3), reactance: 1.0 },
        Line { id: LineId(3), tail: BusId(2), head: BusId(4), reactance: 1.0 },
        Line { id: LineId(4), tail: BusId(3), head: BusId(4), reactance: 1.0 },
    ];
    let network = PowerNetwork::new(5, BusId(4), lines).unwrap();
    let unit = Dollars::from_f64(1.0).unwrap();
    let meters = vec![
        Meter {
            id: MeterId(0),
            kind: MeterKind::Flow { line: LineId(0), direction: FlowDirection::Positive },
            secure_cost: unit,
        },
        Meter {
            id: MeterId(1),
            kind: MeterKind::Flow { line: LineId(2), direction: FlowDirection::Positive },
            secure_cost: unit,
        },
        Meter {
            id: MeterId(2),
            kind: MeterKind::Flow { line: LineId(3), direction: FlowDirection::Negative },
            secure_cost: unit,
        },
        Meter {
            id: MeterId(3),
            kind: MeterKind::Flow { line: LineId(4), direction: FlowDirection::Positive },
            secure_cost: unit,
        },
        Meter { id: MeterId(4), kind: MeterKind::Injection { bus: BusId(2) }, secure_cost: unit },
        Meter { id: MeterId(5), kind: MeterKind::Injection { bus: BusId(3) }, secure_cost: unit },
    ];
    let placement = MeasurementPlacement::new(meters).unwrap();
    Case { network, placement, cost_model: CostModel::default(), pmus: vec![] }
}

/// Fig.1 case with every line a covert candidate at the given cost.
pub fn fig1_case_with_covert(covert_cost: f64) -> Case {
    let mut case = fig1_case();
    let cost = Dollars::from_f64(covert_cost).unwrap();
    case.cost_model.covert_candidates =
        case.network.lines.iter().map(|l| (l.id, cost)).collect();
    case
}

/// Seven-bus chain with a spur: PMUs at the reference v1 and at v5, no line
/// between v1 and v5. Flow meters everywhere; the meter on line (v5,v7) is
/// cheap, the rest are expensive, so defending v7 hinges on the PMU.
pub fn pmu7_case() -> Case {
    let lines = vec![
        Line { id: LineId(0), tail: BusId(0), head: BusId(1), reactance: 1.0 },
        Line { id: LineId(1), tail: BusId(1), head: BusId(2), reactance: 1.0 },
        Line { id: LineId(2), tail: BusId(2), head: BusId(3), reactance: 1.0 },
        Line { id: LineId(3), tail: BusId(3), head: BusId(4), reactance: 1.0 },
        Line { id: LineId(4), tail: BusId(4), head: BusId(5), reactance: 1.0 },
        Line { id: LineId(5), tail: BusId(5), head: BusId(6), reactance: 1.0 },
        Line { id: LineId(6), tail: BusId(4), head: BusId(6), reactance: 1.0 },
    ];
    let network = PowerNetwork::new(7, BusId(0), lines).unwrap();
    let expensive = Dollars::from_f64(10.0).unwrap();
    let cheap = Dollars::from_f64(1.0).unwrap();
    let meters = (0..7)
        .map(|i| Meter {
            id: MeterId(i),
            kind: MeterKind::Flow { line: LineId(i), direction: FlowDirection::Positive },
            secure_cost: if i == 6 { cheap } else { expensive },
        })
        .collect();
    let placement = MeasurementPlacement::new(meters).unwrap();
    let pmus = vec![
        Pmu { bus: BusId(0), secure_cost: cheap },
        Pmu { bus: BusId(4), secure_cost: cheap },
    ];
    Case {
        network,
        placement,
        cost_model: CostModel { covert_candidates: BTreeMap::new(), acquisition: BTreeMap::new() },
        pmus,
    }
}
