//! DC measurement model: Jacobians, weighted least-squares estimation,
//! residual-based bad-data detection, and attack application.

use std::collections::BTreeMap;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{GridError, Result};
use crate::grid_model::{
    BusId, LineId, MeasurementPlacement, Meter, MeterId, MeterKind, PowerNetwork,
};
use crate::linalg::{norm2, Mat};

/// Measurement Jacobian pair: full (all buses) and reduced (reference
/// column removed). Row i corresponds to `row_meters[i]`.
#[derive(Debug, Clone)]
pub struct JacobianSet {
    pub full: Mat,
    pub reduced: Mat,
    pub row_meters: Vec<MeterId>,
    /// Non-reference buses in ascending order; column j of `reduced` is the
    /// phase angle of `state_buses[j]`.
    pub state_buses: Vec<BusId>,
    pub reference: BusId,
}

impl JacobianSet {
    pub fn state_index(&self, bus: BusId) -> Option<usize> {
        self.state_buses.iter().position(|b| *b == bus)
    }
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub theta_hat: Vec<f64>,
    pub residual_norm: f64,
    pub gain_inverse_rank: usize,
}

#[derive(Debug, Clone)]
pub struct AttackVector {
    pub a: Vec<f64>,
    /// Target error vector over the state buses, when the attack was built
    /// from one.
    pub c: Option<Vec<f64>>,
}

/// Attacker-side perturbation of line admittances; zero means the line's
/// reactance is exactly known.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeError {
    pub epsilon: BTreeMap<LineId, f64>,
}

impl KnowledgeError {
    pub fn exact() -> Self {
        KnowledgeError::default()
    }

    pub fn of(&self, line: LineId) -> f64 {
        self.epsilon.get(&line).copied().unwrap_or(0.0)
    }
}

pub(crate) fn single_meter_row(network: &PowerNetwork, meter: &Meter) -> Vec<f64> {
    meter_row(network, meter, &|l| network.line(l).admittance())
}

fn meter_row(network: &PowerNetwork, meter: &Meter, admittance: &dyn Fn(LineId) -> f64) -> Vec<f64> {
    let n = network.bus_count;
    let mut row = vec![0.0; n];
    match meter.kind {
        MeterKind::Flow { line, direction } => {
            let l = network.line(line);
            let y = admittance(line);
            row[l.tail.0] += direction.sign() * y;
            row[l.head.0] -= direction.sign() * y;
        }
        MeterKind::VirtualFlow { line } | MeterKind::PseudoFlow { line } => {
            let l = network.line(line);
            let y = admittance(line);
            row[l.tail.0] += y;
            row[l.head.0] -= y;
        }
        MeterKind::Injection { bus } => {
            for l in network.lines_at(bus) {
                let y = admittance(l.id);
                row[bus.0] += y;
                row[l.other_end(bus).0] -= y;
            }
        }
    }
    row
}

fn jacobian_with(
    network: &PowerNetwork,
    placement: &MeasurementPlacement,
    admittance: &dyn Fn(LineId) -> f64,
) -> JacobianSet {
    let rows: Vec<Vec<f64>> =
        placement.meters.iter().map(|m| meter_row(network, m, admittance)).collect();
    let full = Mat::from_rows(&rows);
    let state_buses = network.state_buses();
    let keep: Vec<usize> = state_buses.iter().map(|b| b.0).collect();
    let reduced = full.select_cols(&keep);
    JacobianSet {
        full,
        reduced,
        row_meters: placement.meters.iter().map(|m| m.id).collect(),
        state_buses,
        reference: network.reference,
    }
}

/// Measurement Jacobian H (and its reduced form) in placement meter order:
/// flow rows are `direction * y_l * A[l,:]`, injection rows are rows of
/// `A^T Y A`.
pub fn build_jacobian(network: &PowerNetwork, placement: &MeasurementPlacement) -> JacobianSet {
    jacobian_with(network, placement, &|l| network.line(l).admittance())
}

/// Selection matrices L_F (flow meters x lines, entries +-1 by measured
/// direction) and L_I (injection meters x buses), rows in placement order
/// within each kind.
pub fn selection_matrices(network: &PowerNetwork, placement: &MeasurementPlacement) -> (Mat, Mat) {
    let t = network.lines.len();
    let n1 = network.bus_count;
    let mut flow_rows = Vec::new();
    let mut injection_rows = Vec::new();
    for m in &placement.meters {
        match m.kind {
            MeterKind::Flow { line, direction } => {
                let mut row = vec![0.0; t];
                row[line.0] = direction.sign();
                flow_rows.push(row);
            }
            MeterKind::VirtualFlow { line } | MeterKind::PseudoFlow { line } => {
                let mut row = vec![0.0; t];
                row[line.0] = 1.0;
                flow_rows.push(row);
            }
            MeterKind::Injection { bus } => {
                let mut row = vec![0.0; n1];
                row[bus.0] = 1.0;
                injection_rows.push(row);
            }
        }
    }
    let lf = if flow_rows.is_empty() { Mat::zeros(0, t) } else { Mat::from_rows(&flow_rows) };
    let li =
        if injection_rows.is_empty() { Mat::zeros(0, n1) } else { Mat::from_rows(&injection_rows) };
    (lf, li)
}

/// The Jacobian as seen by an attacker whose admittance knowledge carries
/// the given per-line error.
pub fn attacker_jacobian(
    network: &PowerNetwork,
    placement: &MeasurementPlacement,
    eps: &KnowledgeError,
) -> Result<JacobianSet> {
    for line in &network.lines {
        let y = line.admittance() + eps.of(line.id);
        if y <= 0.0 {
            return Err(GridError::NonpositiveAdmittance {
                line: line.id.to_string(),
                value: y,
            });
        }
    }
    Ok(jacobian_with(network, placement, &|l| {
        network.line(l).admittance() + eps.of(l)
    }))
}

/// Weighted least-squares state estimate with the unweighted residual norm
/// of the paper's detection test.
pub fn wls_estimate(jac: &JacobianSet, q_diag: &[f64], z: &[f64]) -> Result<EstimationResult> {
    let m = jac.reduced.rows;
    let n = jac.reduced.cols;
    if z.len() != m {
        return Err(GridError::LengthMismatch { expected: m, got: z.len() });
    }
    if q_diag.len() != m {
        return Err(GridError::LengthMismatch { expected: m, got: q_diag.len() });
    }
    if q_diag.iter().any(|v| *v <= 0.0) {
        return Err(GridError::Invalid("noise covariance must be positive".into()));
    }
    if n == 0 {
        return Ok(EstimationResult {
            theta_hat: vec![],
            residual_norm: norm2(z),
            gain_inverse_rank: 0,
        });
    }
    let rank = jac.reduced.rank();
    if rank < n {
        return Err(GridError::Unobservable { rank, need: n });
    }
    // gain = H̄ᵀ Q⁻¹ H̄, rhs = H̄ᵀ Q⁻¹ z
    let mut gain = Mat::zeros(n, n);
    let mut rhs = vec![0.0; n];
    for r in 0..m {
        let w = 1.0 / q_diag[r];
        let row = jac.reduced.row(r);
        for i in 0..n {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in 0..n {
                gain[(i, j)] += w * ri * row[j];
            }
            rhs[i] += w * ri * z[r];
        }
    }
    let theta_hat = gain
        .solve(&rhs)
        .ok_or(GridError::Unobservable { rank, need: n })?;
    let predicted = jac.reduced.matvec(&theta_hat);
    let residual: Vec<f64> = z.iter().zip(&predicted).map(|(a, b)| a - b).collect();
    Ok(EstimationResult { theta_hat, residual_norm: norm2(&residual), gain_inverse_rank: rank })
}

/// Unit-covariance default.
pub fn default_q(m: usize) -> Vec<f64> {
    vec![1.0; m]
}

/// Default detection threshold: sqrt of the chi-square 0.975 quantile with
/// m - n degrees of freedom (zero when there is no redundancy).
pub fn default_tau(m: usize, n: usize) -> f64 {
    if m <= n {
        return 0.0;
    }
    let dist = ChiSquared::new((m - n) as f64).expect("positive dof");
    dist.inverse_cdf(0.975).sqrt()
}

/// Residual test: flag bad data iff the residual norm exceeds tau.
pub fn bdd_detect(result: &EstimationResult, tau: f64) -> bool {
    result.residual_norm > tau
}

/// Elementwise sum of measurements and injections.
pub fn apply_attack(z: &[f64], attack: &AttackVector) -> Result<Vec<f64>> {
    if z.len() != attack.a.len() {
        return Err(GridError::LengthMismatch { expected: z.len(), got: attack.a.len() });
    }
    Ok(z.iter().zip(&attack.a).map(|(a, b)| a + b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid_model::{generate_placement, PlacementProfile};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const EQ4: [[f64; 5]; 6] = [
        [1.0, -1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, -1.0, 0.0],
        [0.0, 0.0, -1.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 1.0, -1.0],
        [0.0, -1.0, 2.0, 0.0, -1.0],
        [0.0, -1.0, 0.0, 2.0, -1.0],
    ];

    #[test]
    fn fig1_jacobian_matches_printed_matrix() {
        let case = fixtures::fig1_case();
        let jac = build_jacobian(&case.network, &case.placement);
        for i in 0..6 {
            for j in 0..5 {
                assert_eq!(jac.full[(i, j)], EQ4[i][j], "entry ({i},{j})");
            }
        }
        // reduced drops the v5 column
        for i in 0..6 {
            for j in 0..4 {
                assert_eq!(jac.reduced[(i, j)], EQ4[i][j]);
            }
        }
    }

    #[test]
    fn single_line_flow_row() {
        use crate::grid_model::*;
        let net = PowerNetwork::new(
            2,
            BusId(1),
            vec![Line { id: LineId(0), tail: BusId(0), head: BusId(1), reactance: 0.5 }],
        )
        .unwrap();
        let placement = MeasurementPlacement::new(vec![Meter {
            id: MeterId(0),
            kind: MeterKind::Flow { line: LineId(0), direction: FlowDirection::Positive },
            secure_cost: Dollars::ZERO,
        }])
        .unwrap();
        let jac = build_jacobian(&net, &placement);
        assert_eq!(jac.full.row(0), &[2.0, -2.0]);
    }

    #[test]
    fn jacobian_rows_sum_to_zero() {
        for seed in 0..20 {
            let (net, placement) = generate_placement(
                10,
                seed,
                PlacementProfile { lines: 14, injections: 4, flows: 9, unmeasured: 1 },
            )
            .unwrap();
            let jac = build_jacobian(&net, &placement);
            for i in 0..jac.full.rows {
                let s: f64 = jac.full.row(i).iter().sum();
                assert!(s.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_estimate_recovers_state() {
        let case = fixtures::fig1_case();
        let jac = build_jacobian(&case.network, &case.placement);
        let theta = vec![0.1, 0.2, 0.3, 0.4];
        let z = jac.reduced.matvec(&theta);
        let est = wls_estimate(&jac, &default_q(6), &z).unwrap();
        for (a, b) in est.theta_hat.iter().zip(&theta) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(est.residual_norm <= 1e-10);

        let est0 = wls_estimate(&jac, &default_q(6), &[0.0; 6]).unwrap();
        assert!(est0.theta_hat.iter().all(|v| v.abs() < 1e-12));
        assert!(est0.residual_norm < 1e-12);
    }

    #[test]
    fn unobservable_reports_rank() {
        let case = fixtures::fig1_case();
        // drop r1: v1 becomes unobservable
        let meters: Vec<_> = case
            .placement
            .meters
            .iter()
            .skip(1)
            .enumerate()
            .map(|(i, m)| Meter { id: MeterId(i), ..*m })
            .collect();
        let placement = MeasurementPlacement::new(meters).unwrap();
        let jac = build_jacobian(&case.network, &placement);
        match wls_estimate(&jac, &default_q(5), &[0.0; 5]) {
            Err(GridError::Unobservable { rank, need }) => {
                assert_eq!(rank, 3);
                assert_eq!(need, 4);
            }
            other => panic!("expected unobservable, got {other:?}"),
        }
    }

    #[test]
    fn bdd_thresholding() {
        let mk = |r| EstimationResult { theta_hat: vec![], residual_norm: r, gain_inverse_rank: 0 };
        assert!(!bdd_detect(&mk(0.0), 1.0));
        assert!(bdd_detect(&mk(5.0), 3.0));
    }

    #[test]
    fn structured_attack_leaves_detection_unchanged() {
        let case = fixtures::fig1_case();
        let jac = build_jacobian(&case.network, &case.placement);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tau = default_tau(6, 4);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let noise: Vec<f64> =
                (0..6).map(|_| 0.01 * {let s: f64 = StandardNormal.sample(&mut rng); s}).collect();
            let mut z = jac.reduced.matvec(&theta);
            for (zi, e) in z.iter_mut().zip(&noise) {
                *zi += e;
            }
            let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = jac.reduced.matvec(&c);
            let zt = apply_attack(&z, &AttackVector { a, c: Some(c.clone()) }).unwrap();
            let clean = wls_estimate(&jac, &default_q(6), &z).unwrap();
            let hit = wls_estimate(&jac, &default_q(6), &zt).unwrap();
            assert!((clean.residual_norm - hit.residual_norm).abs() <= 1e-9);
            assert_eq!(bdd_detect(&clean, tau), bdd_detect(&hit, tau));
            for i in 0..4 {
                assert!((hit.theta_hat[i] - clean.theta_hat[i] - c[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn attacker_jacobian_zero_eps_is_exact() {
        let case = fixtures::fig1_case();
        let base = build_jacobian(&case.network, &case.placement);
        let tilde =
            attacker_jacobian(&case.network, &case.placement, &KnowledgeError::exact()).unwrap();
        assert_eq!(base.full, tilde.full);
    }

    #[test]
    fn attacker_jacobian_perturbs_only_touching_rows() {
        let case = fixtures::fig1_case();
        let base = build_jacobian(&case.network, &case.placement);
        let mut eps = KnowledgeError::default();
        eps.epsilon.insert(LineId(0), 0.5);
        let tilde = attacker_jacobian(&case.network, &case.placement, &eps).unwrap();
        // only r1 measures e1
        for i in 0..6 {
            for j in 0..5 {
                let delta = tilde.full[(i, j)] - base.full[(i, j)];
                if i == 0 {
                    continue;
                }
                assert_eq!(delta, 0.0, "row {i} should be untouched");
            }
        }
        assert_eq!(tilde.full[(0, 0)] - base.full[(0, 0)], 0.5);
    }

    #[test]
    fn attacker_jacobian_delta_sparsity_on_random_case() {
        let (net, placement) = generate_placement(
            10,
            3,
            PlacementProfile { lines: 14, injections: 4, flows: 9, unmeasured: 0 },
        )
        .unwrap();
        let base = build_jacobian(&net, &placement);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut eps = KnowledgeError::default();
        for l in net.lines.iter().take(4) {
            eps.epsilon.insert(l.id, rng.gen_range(-0.2..0.2));
        }
        let tilde = attacker_jacobian(&net, &placement, &eps).unwrap();
        for (r, meter) in placement.meters.iter().enumerate() {
            let touched: bool = match meter.kind {
                MeterKind::Flow { line, .. } => eps.of(line) != 0.0,
                MeterKind::Injection { bus } => {
                    net.lines_at(bus).any(|l| eps.of(l.id) != 0.0)
                }
                _ => false,
            };
            let row_delta: f64 = (0..net.bus_count)
                .map(|j| (tilde.full[(r, j)] - base.full[(r, j)]).abs())
                .sum();
            if !touched {
                assert!(row_delta < 1e-12, "meter row {r} must not change");
            }
        }
    }

    #[test]
    fn nonpositive_perturbed_admittance_rejected() {
        let case = fixtures::fig1_case();
        let mut eps = KnowledgeError::default();
        eps.epsilon.insert(LineId(0), -1.0);
        assert!(attacker_jacobian(&case.network, &case.placement, &eps).is_err());
    }

    #[test]
    fn apply_attack_additivity() {
        let z = vec![1.0, 2.0, 3.0];
        let a = AttackVector { a: vec![0.5, -0.5, 0.0], c: None };
        let neg = AttackVector { a: vec![-0.5, 0.5, 0.0], c: None };
        let z1 = apply_attack(&z, &a).unwrap();
        let z2 = apply_attack(&z1, &neg).unwrap();
        assert_eq!(z, z2);
        let zero = AttackVector { a: vec![0.0; 3], c: None };
        assert_eq!(apply_attack(&z, &zero).unwrap(), z);
        assert!(apply_attack(&z, &AttackVector { a: vec![1.0], c: None }).is_err());
    }

    #[test]
    fn residual_square_stays_below_chi_square_quantile() {
        let (net, placement) = generate_placement(
            10,
            42,
            PlacementProfile { lines: 14, injections: 4, flows: 9, unmeasured: 0 },
        )
        .unwrap();
        let jac = build_jacobian(&net, &placement);
        let m = placement.len();
        let n = net.bus_count - 1;
        let dist = ChiSquared::new((m - n) as f64).unwrap();
        let q999 = dist.inverse_cdf(0.999);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let base = jac.reduced.matvec(&theta);
        let mut below = 0;
        let trials = 1000;
        for _ in 0..trials {
            let z: Vec<f64> = base
                .iter()
                .map(|v| v + {let s: f64 = StandardNormal.sample(&mut rng); s})
                .collect();
            let est = wls_estimate(&jac, &default_q(m), &z).unwrap();
            if est.residual_norm.powi(2) <= q999 {
                below += 1;
            }
        }
        assert!(below as f64 >= 0.99 * trials as f64, "only {below}/{trials} below quantile");
    }
}
