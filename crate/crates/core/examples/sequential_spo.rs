//! Sequential training where each SPO stage is anchored to the previous
//! stage's policy, compared with MODPO anchored to the initial policy.

use rcslab::align::{evaluate, train_sequential, MarginSpec, Method, Stage, TrainConfig};
use rcslab::dataset::build_vanilla_dataset;
use rcslab::policy::LogLinearPolicy;
use rcslab::reward::ObjectiveSet;
use rcslab::world::{generate_world, WorldConfig};

fn main() -> rcslab::Result<()> {
    let world = generate_world(&WorldConfig::default())?;
    let objectives = ObjectiveSet::from_tables(&world);
    let prompts: Vec<String> = world.candidate_sets().iter().map(|s| s.prompt.id.clone()).collect();
    let init = LogLinearPolicy::zeros(world.feature_dim, "init");
    let (d1, _) = build_vanilla_dataset(&world, 1, 1, 1)?;
    let (d2, _) = build_vanilla_dataset(&world, 2, 1, 2)?;

    for method in [Method::Spo, Method::Modpo] {
        let stages = vec![
            Stage {
                dataset: d1.clone(),
                method: Method::Dpo,
                margin: None,
            },
            Stage {
                dataset: d2.clone(),
                method,
                margin: Some(MarginSpec::even_split(&objectives, 0.9, &[1])?),
            },
        ];
        let runs = train_sequential(&stages, &init, &TrainConfig::default(), &world)?;
        let anchored_to_stage1 = runs[1].reference.theta == runs[0].final_policy.theta;
        let m = evaluate(&runs[1].final_policy, &init, &world, &objectives, &prompts)?;
        println!(
            "{method:?}: reference is stage-1 policy: {anchored_to_stage1}; win rates vs init {:.3} / {:.3}",
            m.win_rate[0], m.win_rate[1]
        );
    }
    Ok(())
}
