//! RCS against unfiltered max-gap selection (NRCS) and random consistent
//! selection (ORCS).

use rcslab::experiment::{ablation, ExperimentSpec};

fn main() -> rcslab::Result<()> {
    let spec = ExperimentSpec::default();
    for &seed in &spec.seeds[..2] {
        print!("{}", ablation(&spec, seed)?.to_text());
        println!();
    }
    Ok(())
}
