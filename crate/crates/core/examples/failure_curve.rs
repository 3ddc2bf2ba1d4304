//! How many input pairs RCS cannot repair as the number of sampled responses
//! grows.

use rcslab::experiment::{failure_counts, ExperimentSpec};

fn main() -> rcslab::Result<()> {
    let spec = ExperimentSpec::default();
    let n_values = [0, 1, 2, 4, 8, 16, 32];
    print!("{:>6}", "seed");
    for n in n_values {
        print!("{n:>6}");
    }
    println!();
    for &seed in &spec.seeds {
        print!("{seed:>6}");
        for p in failure_counts(&spec, seed, &n_values)? {
            print!("{:>6}", p.failure_count);
        }
        println!();
    }
    Ok(())
}
