//! Generate a synthetic world, check the reward correlation it was asked for,
//! and write it to disk.

use rcslab::world::{generate_world, load_world, save_world, WorldConfig};

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn main() -> rcslab::Result<()> {
    for rho in [-0.9, -0.5, 0.0, 0.5] {
        let world = generate_world(&WorldConfig {
            conflict_rho: rho,
            seed: 1,
            ..WorldConfig::default()
        })?;
        let (mut r1, mut r2) = (Vec::new(), Vec::new());
        for p in 0..world.num_prompts() {
            for r in 0..world.candidates(p).len() {
                r1.push(world.reward(1, p, r).unwrap());
                r2.push(world.reward(2, p, r).unwrap());
            }
        }
        println!("rho {rho:+.1}: empirical correlation {:+.3} over {} responses", pearson(&r1, &r2), r1.len());
    }

    let world = generate_world(&WorldConfig::default())?;
    let path = std::env::temp_dir().join("rcslab-example-world.jsonl");
    save_world(&world, &path)?;
    let back = load_world(&path)?;
    assert_eq!(back.num_prompts(), world.num_prompts());
    println!("wrote {}", path.display());
    Ok(())
}
