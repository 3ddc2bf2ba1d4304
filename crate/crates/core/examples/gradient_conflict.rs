//! Split each sample's MODPO gradient into the current-objective part and
//! the margin's contribution, and count how often they point the same way.

use rcslab::align::{train, MarginSpec, TrainConfig};
use rcslab::analysis::{batch_gradient_cosine, classify_dataset};
use rcslab::curation::{curate, CurationConfig, Strategy};
use rcslab::dataset::build_vanilla_dataset;
use rcslab::policy::LogLinearPolicy;
use rcslab::reward::ObjectiveSet;
use rcslab::world::{generate_world, WorldConfig};

fn main() -> rcslab::Result<()> {
    let world = generate_world(&WorldConfig::default())?;
    let objectives = ObjectiveSet::from_tables(&world);
    let init = LogLinearPolicy::zeros(world.feature_dim, "init");
    let (d1, _) = build_vanilla_dataset(&world, 1, 1, 1)?;
    let (d2, _) = build_vanilla_dataset(&world, 2, 1, 2)?;
    let pi1 = train(&d1, &init, &init, &TrainConfig::default(), None, &world)?.final_policy;
    let margin = MarginSpec::even_split(&objectives, 0.9, &[1])?;

    let (rcs, _) = curate(&d2, &[], &pi1, &world, &objectives, &CurationConfig::new(Strategy::Rcs, 2))?;
    for (name, data) in [("vanilla", &d2), ("rcs", &rcs)] {
        let c = classify_dataset(data, &pi1, &init, 0.1, &margin, &world)?;
        println!(
            "{name:<8} aligned {:>4}  conflicting {:>4}  neutral {:>3}  (sign matches margin on {:.0}%)",
            c.counts.aligned,
            c.counts.conflicting,
            c.counts.neutral,
            100.0 * c.margin_agreement
        );
    }

    let cos = batch_gradient_cosine(&d1, &d2, &pi1, &init, 0.1, &world)?;
    println!("cosine between the two objectives' mean DPO gradients at pi1: {cos:+.3}");
    Ok(())
}
