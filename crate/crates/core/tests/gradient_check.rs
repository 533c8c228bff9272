//! Finite-difference oracles for the analytic gradients: per-record
//! log-probability gradients and the full group objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tandem_core::*;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Random small world + policy + trajectory for probing.
fn random_setup(seed: u64) -> (World, Policy, Trajectory) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_attributes = rng.random_range(1..=3);
    let block = rng.random_range(1..=3);
    let values = rng.random_range(2..=4);
    let config = WorldConfig {
        num_concepts: 2,
        num_attributes,
        values_per_attribute: values,
        text_len: rng.random_range(1..=3),
        grid_positions: num_attributes * block,
        codebook_size: rng.random_range(2..=5),
        text_vocab: values + rng.random_range(1..=3),
        human_fraction: 0.5,
        candidates_per_task: 2,
        seed: seed ^ 0xabcdef,
    };
    let world = World::new(config).unwrap();
    let dims = PolicyDims::from_world(world.config());
    let policy = Policy::init(dims, 0.2 + rng.random::<f64>() * 0.8, &mut rng).unwrap();
    let pathway =
        if rng.random::<bool>() { Pathway::VisualInstruct } else { Pathway::TextualAttribute };
    let task = world.make_task(world.concept(rng.random_range(0..2)), pathway, &mut rng);
    let schedule = cosine_schedule(rng.random_range(1..=4), world.config().grid_positions);
    let child = ChaCha8Rng::seed_from_u64(rng.random());
    let traj = rollout(&policy, &task, &schedule, RatioCoverage::AllPositions, child);
    (world, policy, traj)
}

#[test]
fn record_logprob_gradients_match_central_differences() {
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for probe in 0..120u64 {
        let (_, policy, traj) = random_setup(probe);
        let mut rng = ChaCha8Rng::seed_from_u64(probe ^ 0x5151);
        let index = rng.random_range(0..traj.record_count());

        let mut acc = GradAccumulator::zeros_like(&policy);
        accumulate_logprob_grad(&policy, &traj, index, 1.0, &mut acc).unwrap();

        let dims = policy.dims();
        let cols = if traj.is_text_record(index) {
            dims.text_vocab as usize
        } else {
            dims.codebook_size as usize
        };
        for col in 0..cols {
            let fd = {
                let mut plus = policy.clone();
                let mut minus = policy.clone();
                perturb(&mut plus, &traj, index, col, eps);
                perturb(&mut minus, &traj, index, col, -eps);
                let lp_plus = tandem_core::rollout::record_logprob(&plus, &traj, index).unwrap();
                let lp_minus = tandem_core::rollout::record_logprob(&minus, &traj, index).unwrap();
                (lp_plus - lp_minus) / (2.0 * eps)
            };
            let analytic = row_entry(&acc, &policy, &traj, index, col);
            let err = rel_err(analytic, fd);
            worst = worst.max(err);
            assert!(
                err < 1e-5,
                "probe {probe} record {index} col {col}: analytic {analytic} vs fd {fd} (rel {err:.2e})"
            );
        }
    }
    eprintln!("worst relative error over probes: {worst:.3e}");
}

fn perturb(policy: &mut Policy, traj: &Trajectory, index: usize, col: usize, delta: f64) {
    if traj.is_text_record(index) {
        policy.text_logits_mut(traj.queried_attribute, index)[col] += delta;
    } else {
        let dims = policy.dims();
        let rec = &traj.step_records[index - traj.ir_tokens.len()];
        let block = rec.position / dims.block_size();
        let asserted = traj.compound_prompt.asserted[block];
        policy.grid_logits_mut(asserted, rec.position % dims.block_size())[col] += delta;
    }
}

fn row_entry(acc: &GradAccumulator, policy: &Policy, traj: &Trajectory, index: usize, col: usize) -> f64 {
    if traj.is_text_record(index) {
        acc.text_row(traj.queried_attribute, index)[col]
    } else {
        let dims = policy.dims();
        let rec = &traj.step_records[index - traj.ir_tokens.len()];
        let block = rec.position / dims.block_size();
        let asserted = traj.compound_prompt.asserted[block];
        acc.grid_row(asserted, rec.position % dims.block_size())[col]
    }
}

#[test]
fn objective_gradient_matches_central_differences_on_tiny_instance() {
    // G=2, text_len=2, 4 grid positions, 2 denoising steps; β > 0 so the KL
    // path is exercised; θ is nudged off θ_old so ratios differ from 1 while
    // staying inside the trust region (no kinks near the probe).
    let config = WorldConfig {
        num_concepts: 1,
        num_attributes: 2,
        values_per_attribute: 2,
        text_len: 2,
        grid_positions: 4,
        codebook_size: 4,
        text_vocab: 4,
        human_fraction: 1.0,
        candidates_per_task: 2,
        seed: 5,
    };
    let world = World::new(config).unwrap();
    let dims = PolicyDims::from_world(world.config());
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let policy_old = Policy::init(dims, 0.5, &mut rng).unwrap();
    let hyper = GrpoHyper { group_size: 2, t_total: 2, kl_coef: 0.01, ..GrpoHyper::default() };
    let task = world.make_task(world.concept(0), Pathway::VisualInstruct, &mut rng);
    let schedule = cosine_schedule(2, 4);
    let batch = sample_group(
        &policy_old,
        &world,
        &task,
        &hyper,
        &schedule,
        &RewardConfig::default(),
        &mut rng,
    )
    .unwrap();

    let mut policy = policy_old.clone();
    let noise = Normal::new(0.0, 0.02).unwrap();
    for qa in 0..2 {
        for pos in 0..2 {
            for x in policy.text_logits_mut(qa, pos) {
                *x += noise.sample(&mut rng);
            }
        }
    }
    for bucket in [Some(0), Some(1), None] {
        for offset in 0..2 {
            for x in policy.grid_logits_mut(bucket, offset) {
                *x += noise.sample(&mut rng);
            }
        }
    }
    let policy_ref = Policy::init(dims, 0.3, &mut ChaCha8Rng::seed_from_u64(23)).unwrap();

    let (_, grad) = objective_and_grad(&policy, &policy_ref, &batch, &hyper).unwrap();
    let objective_at = |p: &Policy| objective_and_grad(p, &policy_ref, &batch, &hyper).unwrap().0;

    let eps = 1e-5;
    let mut checked = 0;
    for qa in 0..2usize {
        for pos in 0..2usize {
            for col in 0..4usize {
                let mut plus = policy.clone();
                plus.text_logits_mut(qa, pos)[col] += eps;
                let mut minus = policy.clone();
                minus.text_logits_mut(qa, pos)[col] -= eps;
                let fd = (objective_at(&plus) - objective_at(&minus)) / (2.0 * eps);
                let analytic = grad.text_row(qa, pos)[col];
                assert!(
                    rel_err(analytic, fd) < 1e-4,
                    "text ({qa},{pos},{col}): {analytic} vs {fd}"
                );
                checked += 1;
            }
        }
    }
    for bucket in [Some(0), Some(1), None] {
        for offset in 0..2usize {
            for col in 0..4usize {
                let mut plus = policy.clone();
                plus.grid_logits_mut(bucket, offset)[col] += eps;
                let mut minus = policy.clone();
                minus.grid_logits_mut(bucket, offset)[col] -= eps;
                let fd = (objective_at(&plus) - objective_at(&minus)) / (2.0 * eps);
                let analytic = grad.grid_row(bucket, offset)[col];
                assert!(
                    rel_err(analytic, fd) < 1e-4,
                    "grid ({bucket:?},{offset},{col}): {analytic} vs {fd}"
                );
                checked += 1;
            }
        }
    }
    assert_eq!(checked, policy.param_count());
}
