//! Analytic policy and loss gradients against central differences.

use rcslab::align::{dpo_sample_loss_grad, modpo_sample_loss_grad, MarginSpec};
use rcslab::dataset::build_vanilla_dataset;
use rcslab::policy::{check_gradients, LogLinearPolicy};
use rcslab::reward::ObjectiveSet;
use rcslab::world::{generate_world, WorldConfig};

fn main() -> rcslab::Result<()> {
    let world = generate_world(&WorldConfig::default())?;
    let policy = LogLinearPolicy::new((0..8).map(|i| 0.1 * i as f64 - 0.3).collect(), "pi")?;
    let report = check_gradients(&policy, &world, 200, 1e-5, 3)?;
    println!("log-prob gradient: worst relative error {:.2e} over {} trials", report.max_rel_error, report.trials);

    let reference = LogLinearPolicy::zeros(8, "ref");
    let margin = MarginSpec::for_stage(&ObjectiveSet::from_tables(&world), 2, 0.7)?;
    let (data, _) = build_vanilla_dataset(&world, 2, 1, 0)?;
    let sample = &data.samples[0];
    let analytic = modpo_sample_loss_grad(sample, &policy, &reference, 0.1, &margin, &world)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..policy.dim() {
        let mut plus = policy.clone();
        let mut minus = policy.clone();
        plus.theta[i] += h;
        minus.theta[i] -= h;
        let lp = modpo_sample_loss_grad(sample, &plus, &reference, 0.1, &margin, &world)?.loss;
        let lm = modpo_sample_loss_grad(sample, &minus, &reference, 0.1, &margin, &world)?.loss;
        worst = worst.max((analytic.grad[i] - (lp - lm) / (2.0 * h)).abs());
    }
    println!("MODPO loss gradient: worst absolute error {worst:.2e}");

    let dpo = dpo_sample_loss_grad(sample, &policy, &reference, 0.1, &world)?;
    let plain = modpo_sample_loss_grad(sample, &policy, &reference, 0.1, &MarginSpec::none(), &world)?;
    assert_eq!(dpo, plain);
    println!("DPO equals MODPO with w_k = 1 and no margin: loss {:.6}", dpo.loss);
    Ok(())
}
