use std::collections::BTreeSet;
use std::time::Instant;
use gridshield::grid_model::*;
use gridshield::defense::*;
use gridshield::observability::*;
use gridshield::milp::SolveLimits;
use gridshield::tph::tph_run;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut total = std::time::Duration::ZERO;
    for seed in 0..6u64 {
        let (net, placement) = generate_placement(57, seed, PROFILE_57.1).unwrap();
        let cm = synth_cost_model(&net, &placement, 0.2, Dollars::from_f64(0.1).unwrap(), seed);
        let mg = measured_graph(&net, &placement);
        let typing = vertex_types(&mg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let mut targets = BTreeSet::new();
        while targets.len() < 4 {
            let b = BusId(rng.gen_range(0..57));
            if b != net.reference { targets.insert(b); }
        }
        let aug = AugmentedPlacement::build(&net, &placement, &cm, &typing, &[]).unwrap();
        let instance = MasaInstance::mixed(&aug, &targets).unwrap();
        let t1 = Instant::now();
        match solve_masa(&instance, &aug, SolveLimits::default()) {
            Ok(plan) => {
                let dt = t1.elapsed();
                total += dt;
                let t2 = Instant::now();
                let tplan = tph_run(&net, &placement, &cm, &targets, &[], 1, seed).unwrap();
                println!("seed {seed}: milp {dt:?} cost {} nodes {} | tph {:?} cost {} ratio {:.3}",
                    plan.total_cost.as_f64(), plan.milp_nodes, t2.elapsed(), tplan.total_cost.as_f64(),
                    tplan.total_cost.as_f64() / plan.total_cost.as_f64());
            }
            Err(e) => println!("seed {seed}: ERR {e}"),
        }
    }
    println!("total milp {total:?}");
}
