//! Shared helpers for the integration suites.

use std::collections::BTreeSet;

use gridshield::defense::AugmentedPlacement;
use gridshield::grid_model::{
    generate_placement, synth_cost_model, BusId, Case, Dollars, PlacementProfile,
};
use gridshield::observability::{measured_graph, vertex_types};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dollars(v: f64) -> Dollars {
    Dollars::from_f64(v).unwrap()
}

/// Generated case with the experiment cost structure: a fifth of the
/// measured lines become covert candidates at 0.1 dollars, meters at 1.0.
pub fn experiment_case(buses: usize, profile: PlacementProfile, seed: u64) -> Case {
    let (network, placement) = generate_placement(buses, seed, profile).expect("profile feasible");
    let cost_model = synth_cost_model(&network, &placement, 0.2, dollars(0.1), seed);
    Case { network, placement, cost_model, pmus: vec![] }
}

/// Random target set of the requested size, excluding the reference.
pub fn random_targets(case: &Case, size: usize, seed: u64) -> BTreeSet<BusId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xD);
    let mut targets = BTreeSet::new();
    while targets.len() < size {
        let b = BusId(rng.gen_range(0..case.network.bus_count));
        if b != case.network.reference {
            targets.insert(b);
        }
    }
    targets
}

pub fn augment(case: &Case) -> AugmentedPlacement {
    let mg = measured_graph(&case.network, &case.placement);
    let typing = vertex_types(&mg).expect("observable");
    AugmentedPlacement::build(&case.network, &case.placement, &case.cost_model, &typing, &case.pmus)
        .expect("augmentation")
}
