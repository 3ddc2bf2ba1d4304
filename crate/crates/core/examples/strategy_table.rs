//! Train the second objective on Vanilla, Mixed, RSDPO-W and RCS data and
//! print one report per seed.

use rcslab::experiment::{strategy_comparison, ExperimentSpec};

fn main() -> rcslab::Result<()> {
    let spec = ExperimentSpec::default();
    let mut wins = 0;
    for &seed in &spec.seeds {
        let table = strategy_comparison(&spec, seed)?;
        println!("{}", table.to_text());
        let rcs = table.row("RCS").unwrap().average_score;
        wins += table.rows.iter().all(|r| rcs >= r.average_score) as usize;
    }
    println!("RCS has the best average score on {wins} of {} seeds", spec.seeds.len());
    Ok(())
}
