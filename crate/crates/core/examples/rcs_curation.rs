//! Curate a vanilla dataset with every strategy and inspect what changed.

use rcslab::curation::{curate, dataset_rc_stats, ConsistencyMask, CurationConfig, Strategy};
use rcslab::dataset::build_vanilla_dataset;
use rcslab::policy::LogLinearPolicy;
use rcslab::reward::ObjectiveSet;
use rcslab::world::{generate_world, WorldConfig};

fn main() -> rcslab::Result<()> {
    let world = generate_world(&WorldConfig::default())?;
    let objectives = ObjectiveSet::from_tables(&world);
    let sampler = LogLinearPolicy::zeros(world.feature_dim, "sampler");
    let (d1, _) = build_vanilla_dataset(&world, 1, 1, 1)?;
    let (d2, _) = build_vanilla_dataset(&world, 2, 1, 2)?;
    let mask = ConsistencyMask::up_to(2);

    println!("{:<8} {:>6} {:>7} {:>11}", "strategy", "kept", "failed", "consistent");
    for strategy in Strategy::ALL {
        let config = CurationConfig::new(strategy, 2).with_seed(11);
        let (out, report) = curate(&d2, &[&d1], &sampler, &world, &objectives, &config)?;
        let consistent = dataset_rc_stats(&out, &world, &objectives, &mask)?.consistent_fraction;
        println!(
            "{:<8} {:>6} {:>7} {:>11.3}",
            strategy.name(),
            report.emitted_count,
            report.failure_count,
            consistent
        );
    }

    let (_, report) = curate(&d2, &[], &sampler, &world, &objectives, &CurationConfig::new(Strategy::Rcs, 2))?;
    for (before, rec) in d2.samples.iter().zip(&report.records).take(3) {
        println!(
            "{}: {} > {}  became  {:?} > {:?}",
            rec.prompt_id, before.chosen_id, before.rejected_id, rec.chosen_id, rec.rejected_id
        );
    }
    Ok(())
}
