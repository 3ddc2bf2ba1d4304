//! How often a pair labelled by one objective is also preferred by the
//! other, as the objectives become more opposed.

use rcslab::curation::{dataset_rc_stats, ConsistencyMask};
use rcslab::dataset::build_vanilla_dataset;
use rcslab::reward::ObjectiveSet;
use rcslab::world::{generate_world, WorldConfig};

fn main() -> rcslab::Result<()> {
    println!("{:>6}  {:>10}  {:>10}", "rho", "consistent", "theory");
    for rho in [-0.9, -0.5, -0.2, 0.0, 0.3, 0.7] {
        let world = generate_world(&WorldConfig {
            num_prompts: 1000,
            conflict_rho: rho,
            seed: 7,
            ..WorldConfig::default()
        })?;
        let (data, _) = build_vanilla_dataset(&world, 2, 2, 7)?;
        let stats = dataset_rc_stats(&data, &world, &ObjectiveSet::from_tables(&world), &ConsistencyMask::up_to(2))?;
        // For jointly Gaussian reward differences with correlation rho.
        let theory = 0.5 + rho.asin() / std::f64::consts::PI;
        println!("{rho:>+6.1}  {:>10.3}  {theory:>10.3}", stats.consistent_fraction);
    }
    Ok(())
}
