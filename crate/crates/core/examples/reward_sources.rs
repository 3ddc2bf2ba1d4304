//! Curate with exact reward tables or with implicit rewards read off
//! DPO-trained policies, and compare the resulting RCS models.

use rcslab::experiment::{strategy_comparison, ExperimentSpec, RewardSource};

fn main() -> rcslab::Result<()> {
    for source in [RewardSource::Table, RewardSource::Implicit] {
        let spec = ExperimentSpec {
            reward_source: source,
            ..ExperimentSpec::default()
        };
        let mut sum = [0.0; 2];
        for &seed in &spec.seeds {
            let table = strategy_comparison(&spec, seed)?;
            let rcs = table.row("RCS").unwrap();
            sum[0] += rcs.win_rates[0];
            sum[1] += rcs.win_rates[1];
        }
        let n = spec.seeds.len() as f64;
        println!("{source:?}: mean RCS win rates {:.3} / {:.3}", sum[0] / n, sum[1] / n);
    }
    Ok(())
}
