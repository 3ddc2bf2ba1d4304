use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::dataset::{build_vanilla_dataset, PreferenceDataset, PreferenceSample, Provenance};
use crate::linalg::{norm, sigmoid};
use crate::policy::LogLinearPolicy;
use crate::reward::{explicit_reward, ObjectiveSet, RewardModel};
use crate::world::{generate_world, CandidateSet, Prompt, Response, World, WorldConfig};

fn world(seed: u64) -> World {
    generate_world(&WorldConfig {
        num_prompts: 40,
        seed,
        ..WorldConfig::default()
    })
    .unwrap()
}

fn random_theta(d: usize, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect::<Vec<f64>>()
}

fn policy(theta: Vec<f64>) -> LogLinearPolicy {
    LogLinearPolicy::new(theta, "pi").unwrap()
}

fn table_margin(current_weight: f64) -> MarginSpec {
    MarginSpec::new(
        current_weight,
        vec![MarginEntry {
            objective_id: 1,
            weight: 1.0 - current_weight,
            model: RewardModel::Table,
        }],
    )
    .unwrap()
}

/// Full MODPO loss recomputed from raw log-probabilities and reward lookups,
/// independent of the prepared-sample path.
fn oracle_loss(
    sample: &PreferenceSample,
    theta: &[f64],
    reference: &LogLinearPolicy,
    beta: f64,
    margin: &MarginSpec,
    w: &World,
) -> f64 {
    let pi = policy(theta.to_vec());
    let lr = |id: &str| pi.log_prob(w, &sample.prompt_id, id).unwrap() - reference.log_prob(w, &sample.prompt_id, id).unwrap();
    let mut margin_sum = 0.0;
    for e in &margin.entries {
        let rw = explicit_reward(&e.model, w, e.objective_id, &sample.prompt_id, &sample.chosen_id).unwrap();
        let rl = explicit_reward(&e.model, w, e.objective_id, &sample.prompt_id, &sample.rejected_id).unwrap();
        margin_sum += e.weight * (rw - rl);
    }
    let wk = margin.current_weight;
    let z = beta / wk * (lr(&sample.chosen_id) - lr(&sample.rejected_id)) - margin_sum / wk;
    (1.0 + (-z).exp()).ln()
}

fn sample_at(w: &World, p: usize, a: usize, b: usize) -> PreferenceSample {
    let set = w.candidates(p);
    PreferenceSample::new(&set.prompt.id, &set.responses[a].id, &set.responses[b].id, Provenance::Original)
}

#[test]
fn equal_policies_and_zero_margin_give_ln2() {
    let w = world(1);
    let pi = policy(vec![0.3; 8]);
    let s = sample_at(&w, 3, 0, 5);
    let zero_margin = MarginSpec::new(
        0.9,
        vec![MarginEntry {
            objective_id: 1,
            weight: 0.1,
            model: RewardModel::Linear { weights: vec![0.0; 8] },
        }],
    )
    .unwrap();
    let out = modpo_sample_loss_grad(&s, &pi, &pi, 0.1, &zero_margin, &w).unwrap();
    assert_eq!(out.z, 0.0);
    assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
    let d = pair_grad_diff(&pi, &w, &s.resolve(&w).unwrap());
    for (g, di) in out.grad.iter().zip(&d) {
        assert!((g - (-(0.1 / 0.9) * 0.5 * di)).abs() < 1e-15);
    }
}

#[test]
fn large_margin_saturates_the_weight() {
    let w = world(2);
    let pi = policy(vec![0.0; 8]);
    let s = sample_at(&w, 0, 1, 2);
    let d = pair_grad_diff(&pi, &w, &s.resolve(&w).unwrap());
    // u is chosen so that the margin reward gap equals +50.
    let mut u = crate::linalg::sub(w.features(0, 1), w.features(0, 2));
    let n2 = crate::linalg::dot(&u, &u);
    u.iter_mut().for_each(|v| *v *= 50.0 / n2);
    let margin = MarginSpec::new(
        0.9,
        vec![MarginEntry {
            objective_id: 1,
            weight: 0.1,
            model: RewardModel::Linear { weights: u },
        }],
    )
    .unwrap();
    let out = modpo_sample_loss_grad(&s, &pi, &pi, 0.1, &margin, &w).unwrap();
    assert!(sigmoid(out.z) < 1e-2);
    assert!(out.loss > 5.0);
    let expect = 0.1 / 0.9 * norm(&d);
    assert!((norm(&out.grad) - expect).abs() / expect < 1e-2);
}

#[test]
fn analytic_gradient_matches_finite_differences_of_full_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for instance in 0..100 {
        let w = world(100 + instance % 5);
        let theta = random_theta(8, &mut rng, 0.7);
        let reference = policy(random_theta(8, &mut rng, 0.3));
        let p = rng.random_range(0..w.num_prompts());
        let a = rng.random_range(0..8);
        let b = (a + rng.random_range(1..8)) % 8;
        let s = sample_at(&w, p, a, b);
        let margin = table_margin(0.9);
        let out = modpo_sample_loss_grad(&s, &policy(theta.clone()), &reference, 0.1, &margin, &w).unwrap();
        let base = oracle_loss(&s, &theta, &reference, 0.1, &margin, &w);
        assert!((base - out.loss).abs() < 1e-12);
        let h = 1e-5;
        for i in 0..8 {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (oracle_loss(&s, &plus, &reference, 0.1, &margin, &w)
                - oracle_loss(&s, &minus, &reference, 0.1, &margin, &w))
                / (2.0 * h);
            worst = worst.max((out.grad[i] - fd).abs() / out.grad[i].abs().max(1.0));
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn dpo_is_modpo_without_margin() {
    let w = world(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let pi = policy(random_theta(8, &mut rng, 1.0));
        let reference = policy(random_theta(8, &mut rng, 1.0));
        let s = sample_at(&w, rng.random_range(0..40), 0, 3);
        let a = dpo_sample_loss_grad(&s, &pi, &reference, 0.1, &w).unwrap();
        let b = modpo_sample_loss_grad(&s, &pi, &reference, 0.1, &MarginSpec::new(1.0, vec![]).unwrap(), &w).unwrap();
        assert_eq!(a, b);
    }
    let pi = policy(vec![0.2; 8]);
    let out = dpo_sample_loss_grad(&sample_at(&w, 0, 0, 1), &pi, &pi, 0.1, &w).unwrap();
    assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn margin_gap_increase_strictly_raises_gradient_weight() {
    let w = world(4);
    let pi = policy(vec![0.1; 8]);
    let reference = policy(vec![0.0; 8]);
    let s = sample_at(&w, 7, 2, 6);
    let r = s.resolve(&w).unwrap();
    let d = crate::linalg::sub(w.features(7, 2), w.features(7, 6));
    let n2 = crate::linalg::dot(&d, &d);
    let mut last_z = f64::INFINITY;
    let mut last_weight = 0.0;
    for gap in [-1.0, 0.0, 0.5, 2.0] {
        // A linear reward whose gap on this pair is exactly `gap`.
        let u: Vec<f64> = d.iter().map(|v| v * gap / n2).collect();
        let margin = MarginSpec::new(
            0.9,
            vec![MarginEntry {
                objective_id: 1,
                weight: 0.1,
                model: RewardModel::Linear { weights: u },
            }],
        )
        .unwrap();
        let out = modpo_sample_loss_grad(&s, &pi, &reference, 0.1, &margin, &w).unwrap();
        let weight = 1.0 - sigmoid(out.z);
        assert!(out.z < last_z);
        assert!(weight > last_weight);
        let dd = pair_grad_diff(&pi, &w, &r);
        assert!((norm(&out.grad) - 0.1 / 0.9 * weight * norm(&dd)).abs() < 1e-12);
        last_z = out.z;
        last_weight = weight;
    }
}

fn small_dataset(w: &World, n: usize) -> PreferenceDataset {
    let (d, _) = build_vanilla_dataset(w, 2, 1, 8).unwrap();
    PreferenceDataset::new(2, "small", d.samples[..n].to_vec())
}

#[test]
fn batch_mean_properties() {
    let w = world(5);
    let pi = policy(vec![0.4; 8]);
    let reference = policy(vec![0.0; 8]);
    let margin = table_margin(0.9);
    let data = small_dataset(&w, 20);

    let one = PreferenceDataset::new(2, "one", vec![data.samples[0].clone()]);
    let b = batch_loss_grad(&one, &pi, &reference, 0.1, Some(&margin), &w).unwrap();
    let s = modpo_sample_loss_grad(&data.samples[0], &pi, &reference, 0.1, &margin, &w).unwrap();
    assert_eq!(b.mean_loss, s.loss);
    assert_eq!(b.mean_grad, s.grad);

    let base = batch_loss_grad(&data, &pi, &reference, 0.1, Some(&margin), &w).unwrap();
    let doubled: Vec<_> = data.samples.iter().flat_map(|s| [s.clone(), s.clone()]).collect();
    let dup = batch_loss_grad(&PreferenceDataset::new(2, "dup", doubled), &pi, &reference, 0.1, Some(&margin), &w).unwrap();
    assert!((dup.mean_loss - base.mean_loss).abs() < 1e-12);

    let mut permuted = data.samples.clone();
    permuted.reverse();
    permuted.swap(0, 7);
    let perm = batch_loss_grad(&PreferenceDataset::new(2, "perm", permuted), &pi, &reference, 0.1, Some(&margin), &w).unwrap();
    assert!((perm.mean_loss - base.mean_loss).abs() < 1e-12);
    for (a, b) in perm.mean_grad.iter().zip(&base.mean_grad) {
        assert!((a - b).abs() < 1e-12);
    }

    let empty = PreferenceDataset::new(2, "empty", vec![]);
    assert!(matches!(
        batch_loss_grad(&empty, &pi, &reference, 0.1, None, &w),
        Err(crate::Error::EmptyDataset(_))
    ));
}

#[test]
fn single_pair_training_raises_z_monotonically() {
    let w = world(6);
    let s = sample_at(&w, 2, 1, 4);
    let reference = policy(vec![0.0; 8]);
    let mut pi = reference.clone();
    let mut last = f64::NEG_INFINITY;
    for _ in 0..50 {
        let out = dpo_sample_loss_grad(&s, &pi, &reference, 0.1, &w).unwrap();
        assert!(out.z >= last);
        last = out.z;
        crate::linalg::axpy(-0.5, &out.grad, &mut pi.theta);
    }
    assert!(last > 0.0);
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let w = world(7);
    let init = policy(vec![0.25; 8]);
    let config = TrainConfig {
        learning_rate: 0.0,
        epochs: 5,
        ..TrainConfig::default()
    };
    let run = train(&small_dataset(&w, 10), &init, &init, &config, None, &w).unwrap();
    assert_eq!(run.final_policy.theta, init.theta);
    assert_eq!(run.losses.len(), 5);
}

#[test]
fn full_batch_default_training_descends() {
    let w = world(8);
    let init = policy(vec![0.0; 8]);
    let run = train(&small_dataset(&w, 10), &init, &init, &TrainConfig::default(), None, &w).unwrap();
    assert_eq!(run.losses.len(), TrainConfig::default().epochs);
    for pair in run.losses.windows(2) {
        assert!(pair[1] <= pair[0], "{} -> {}", pair[0], pair[1]);
    }
    assert!(run.losses.last().unwrap() < &run.losses[0]);
}

#[test]
fn minibatch_training_is_seed_deterministic() {
    let w = world(9);
    let init = policy(vec![0.0; 8]);
    let config = TrainConfig {
        batch_size: 4,
        shuffle: true,
        epochs: 20,
        seed: 77,
        ..TrainConfig::default()
    };
    let data = small_dataset(&w, 30);
    let a = train(&data, &init, &init, &config, None, &w).unwrap();
    let b = train(&data, &init, &init, &config, None, &w).unwrap();
    assert_eq!(a.final_policy.theta, b.final_policy.theta);
    let c = train(&data, &init, &init, &TrainConfig { seed: 78, ..config }, None, &w).unwrap();
    assert_ne!(a.final_policy.theta, c.final_policy.theta);
}

#[test]
fn divergence_guard_trips() {
    let w = world(10);
    let init = policy(vec![0.0; 8]);
    let config = TrainConfig {
        learning_rate: 1e12,
        epochs: 5,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let err = train(&small_dataset(&w, 10), &init, &init, &config, None, &w).unwrap_err();
    assert!(matches!(err, crate::Error::Divergence { .. }));
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn sequential_reference_rules() {
    let w = world(11);
    let init = policy(vec![0.0; 8]);
    let config = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let d1 = small_dataset(&w, 15);
    let (d2, _) = build_vanilla_dataset(&w, 1, 1, 3).unwrap();
    let margin = table_margin(0.9);

    let single = train_sequential(
        &[Stage {
            dataset: d1.clone(),
            method: Method::Dpo,
            margin: None,
        }],
        &init,
        &config,
        &w,
    )
    .unwrap();
    let direct = train(&d1, &init, &init, &config, None, &w).unwrap();
    assert_eq!(single[0].final_policy.theta, direct.final_policy.theta);
    assert_eq!(single[0].losses, direct.losses);

    let spo = train_sequential(
        &[
            Stage {
                dataset: d1.clone(),
                method: Method::Spo,
                margin: None,
            },
            Stage {
                dataset: d2.clone(),
                method: Method::Spo,
                margin: Some(margin.clone()),
            },
        ],
        &init,
        &config,
        &w,
    )
    .unwrap();
    assert_eq!(spo[1].reference.theta, spo[0].final_policy.theta);
    assert_eq!(spo[1].initial.theta, spo[0].final_policy.theta);

    let modpo = train_sequential(
        &[
            Stage {
                dataset: d1,
                method: Method::Modpo,
                margin: None,
            },
            Stage {
                dataset: d2,
                method: Method::Modpo,
                margin: Some(margin),
            },
        ],
        &init,
        &config,
        &w,
    )
    .unwrap();
    assert_eq!(modpo[0].reference.theta, init.theta);
    assert_eq!(modpo[1].reference.theta, init.theta);
    assert_eq!(modpo[1].initial.theta, modpo[0].final_policy.theta);

    let err = train_sequential(
        &[
            Stage {
                dataset: small_dataset(&w, 5),
                method: Method::Dpo,
                margin: None,
            },
            Stage {
                dataset: PreferenceDataset::new(1, "empty", vec![]),
                method: Method::Dpo,
                margin: None,
            },
        ],
        &init,
        &config,
        &w,
    )
    .unwrap_err();
    assert!(matches!(err, crate::Error::Stage { index: 1, .. }));
}

fn prompt_ids(w: &World) -> Vec<String> {
    w.candidate_sets().iter().map(|s| s.prompt.id.clone()).collect()
}

#[test]
fn evaluate_calibration_points() {
    let w = world(12);
    let objectives = ObjectiveSet::from_tables(&w);
    let ids = prompt_ids(&w);
    let pi = policy(vec![0.5; 8]);
    let m = evaluate(&pi, &pi, &w, &objectives, &ids).unwrap();
    assert_eq!(m.win_rate, vec![0.5, 0.5]);
    assert_eq!(m.average_score, 0.5);

    let uniform = policy(vec![0.0; 8]);
    let m = evaluate(&uniform, &pi, &w, &objectives, &ids).unwrap();
    for o in 1..=2 {
        let mut total = 0.0;
        for p in 0..w.num_prompts() {
            let rs: Vec<f64> = (0..8).map(|r| w.reward(o, p, r).unwrap()).collect();
            total += rs.iter().sum::<f64>() / 8.0;
        }
        assert!((m.expected_reward_of(o) - total / w.num_prompts() as f64).abs() < 1e-12);
    }
}

#[test]
fn evaluate_ignores_prompt_order() {
    let w = world(13);
    let objectives = ObjectiveSet::from_tables(&w);
    let mut ids = prompt_ids(&w);
    let pi = policy(vec![0.3, -0.2, 0.1, 0.0, 0.5, -0.4, 0.2, 0.1]);
    let reference = policy(vec![0.0; 8]);
    let a = evaluate(&pi, &reference, &w, &objectives, &ids).unwrap();
    ids.reverse();
    ids.swap(3, 11);
    let b = evaluate(&pi, &reference, &w, &objectives, &ids).unwrap();
    assert_eq!(a, b);
}

#[test]
fn argmax_policy_wins_every_prompt() {
    // Features carry objective 1's reward, so a steep policy concentrates on
    // each prompt's r1-argmax.
    let base = world(14);
    let sets: Vec<CandidateSet> = base
        .candidate_sets()
        .iter()
        .enumerate()
        .map(|(p, s)| CandidateSet {
            prompt: Prompt {
                id: s.prompt.id.clone(),
                index: p,
            },
            responses: (0..s.len())
                .map(|r| Response {
                    id: s.responses[r].id.clone(),
                    features: vec![base.reward(1, p, r).unwrap()],
                    text: None,
                })
                .collect(),
        })
        .collect();
    let rewards = (0..base.num_prompts())
        .map(|p| (0..8).map(|r| vec![base.reward(1, p, r).unwrap(), base.reward(2, p, r).unwrap()]).collect())
        .collect();
    let w = World::from_parts(0, 1, 2, -0.5, 0.0, sets, rewards).unwrap();
    let steep = policy(vec![1e4]);
    let uniform = policy(vec![0.0]);
    for p in 0..w.num_prompts() {
        let probs = steep.probs(&w, p);
        let best = (0..8)
            .max_by(|&a, &b| w.reward(1, p, a).unwrap().total_cmp(&w.reward(1, p, b).unwrap()))
            .unwrap();
        assert!(probs[best] > 1.0 - 1e-12);
        let mean = (0..8).map(|r| w.reward(1, p, r).unwrap()).sum::<f64>() / 8.0;
        assert!(w.reward(1, p, best).unwrap() > mean);
    }
    let m = evaluate(&steep, &uniform, &w, &ObjectiveSet::from_tables(&w), &prompt_ids(&w)).unwrap();
    assert_eq!(m.win_rate_of(1), 1.0);
}

#[test]
fn metrics_serialize_flat() {
    let w = world(15);
    let pi = policy(vec![0.1; 8]);
    let m = evaluate(&pi, &policy(vec![0.0; 8]), &w, &ObjectiveSet::from_tables(&w), &prompt_ids(&w)).unwrap();
    let rec = m.to_record();
    assert!(rec.contains_key("win_rate_2") && rec.contains_key("average_score"));
    let mut buf = Vec::new();
    m.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("expected_reward_1,expected_reward_2,win_rate_1,win_rate_2,average_score"));
    assert_eq!(EvalMetrics::from_record(&rec).unwrap(), m);
    let mut partial = rec.clone();
    partial.remove("expected_reward_1");
    assert!(EvalMetrics::from_record(&partial).is_err());
}

#[test]
fn even_split_margin_covers_only_listed_objectives() {
    let w = world(3);
    let objectives = ObjectiveSet::from_tables(&w);
    assert_eq!(MarginSpec::even_split(&objectives, 0.9, &[]).unwrap(), MarginSpec::none());
    let m = MarginSpec::even_split(&objectives, 0.9, &[1]).unwrap();
    assert_eq!(m.entries.len(), 1);
    assert!((m.entries[0].weight - 0.1).abs() < 1e-15);
    assert!(MarginSpec::even_split(&objectives, 0.9, &[7]).is_err());
}
