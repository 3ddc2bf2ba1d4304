//! DPO on the first objective, then MODPO on the second with a margin from
//! the first.

use rcslab::align::{evaluate, train, MarginSpec, Method, TrainConfig};
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

    let stage1 = train(&d1, &init, &init, &TrainConfig::default(), None, &world)?;
    let pi1 = stage1.final_policy;
    println!("stage 1 losses: {:.4} -> {:.4}", stage1.losses[0], stage1.losses.last().unwrap());

    let margin = MarginSpec::even_split(&objectives, 0.9, &[1])?;
    for method in [Method::Dpo, Method::Modpo] {
        let config = TrainConfig {
            method,
            ..TrainConfig::default()
        };
        let run = train(&d2, &pi1, &init, &config, Some(&margin), &world)?;
        let m = evaluate(&run.final_policy, &init, &world, &objectives, &prompts)?;
        println!(
            "{method:?} on objective 2: expected rewards {:+.4} / {:+.4}, win rates vs init {:.3} / {:.3}",
            m.expected_reward[0], m.expected_reward[1], m.win_rate[0], m.win_rate[1]
        );
    }
    Ok(())
}
