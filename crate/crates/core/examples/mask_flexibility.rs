//! Three objectives: drop the second from the consistency mask when training
//! the third, trading the second's win rate for the first's.

use rcslab::experiment::{mask_flexibility, three_objective_spec};

fn main() -> rcslab::Result<()> {
    let spec = three_objective_spec(-0.4);
    for &seed in &spec.seeds[..3] {
        print!("{}", mask_flexibility(&spec, seed, 2)?.to_text());
        println!();
    }
    Ok(())
}
