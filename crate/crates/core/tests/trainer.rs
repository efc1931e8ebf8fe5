use shm_core::calibration::{CalibrationVariant, VariantParams};
use shm_core::envs::{make_supervised_dataset, DelayedRecallConfig, DelayedRecallEnv, Env};
use shm_core::episode::{run_sequence, EvalMode};
use shm_core::rng::rng_from_seed;
use shm_core::trainer::checkpoint;
use shm_core::trainer::config::{Mode, TaskKind, TrainConfig};
use shm_core::trainer::optim::Adam;
use shm_core::trainer::*;
use shm_core::autograd::{GradReport, NamedGrad};
use shm_core::{Error, Mat, Real};

fn tiny_supervised() -> TrainConfig {
    TrainConfig {
        mode: Mode::Supervised,
        h: 6,
        l: 16,
        length: 8,
        dataset_size: 64,
        test_size: 32,
        batch: 16,
        epochs: 3,
        eval_every: 1,
        lr: 3e-3,
        ..Default::default()
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = tiny_supervised();
    let agent = Agent::init(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.bin");
    checkpoint::save(&agent, &path).unwrap();
    let back = checkpoint::load(&path, Some((cfg.dims().unwrap(), cfg.variant))).unwrap();
    assert_eq!(checkpoint::encode(&back), checkpoint::encode(&agent));
    assert_eq!(back, agent);
}

#[test]
fn checkpoint_rejects_truncation_mismatch_and_bad_magic() {
    let cfg = TrainConfig { h: 16, ..tiny_supervised() };
    let bytes = checkpoint::encode(&Agent::init(&cfg).unwrap());
    assert!(matches!(checkpoint::decode(&bytes[..bytes.len() - 3], None), Err(Error::Checkpoint(_))));
    assert!(matches!(checkpoint::decode(&bytes[..10], None), Err(Error::Checkpoint(_))));

    let wide = TrainConfig { h: 32, ..cfg.clone() };
    match checkpoint::decode(&bytes, Some((wide.dims().unwrap(), wide.variant))) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("H=16") && msg.contains("H=32"), "{msg}"),
        other => panic!("expected a dimension mismatch, got {other:?}"),
    }
    let other = TrainConfig { variant: CalibrationVariant::AllOnes, ..cfg.clone() };
    assert!(matches!(checkpoint::decode(&bytes, Some((other.dims().unwrap(), other.variant))), Err(Error::Checkpoint(_))));

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(matches!(checkpoint::decode(&bad, None), Err(Error::Checkpoint(_))));
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let cfg = tiny_supervised();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train_supervised(&cfg).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.report.to_csv(), b.report.to_csv());
    assert_eq!(checkpoint::encode(&a.agent), checkpoint::encode(&b.agent));
    let c = train_supervised(&TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.report.to_csv(), c.report.to_csv());
}

#[test]
fn learns_the_identity_task() {
    let cfg = TrainConfig {
        task: TaskKind::RepeatPrev,
        alphabet: 4,
        lag: 0,
        length: 1,
        h: 8,
        l: 16,
        lr: 1e-2,
        epochs: 200,
        eval_every: 5,
        dataset_size: 256,
        test_size: 256,
        target: Some(0.99),
        ..tiny_supervised()
    };
    let out = train_supervised(&cfg).unwrap();
    assert!(out.aborted.is_none());
    let acc = out.report.last("accuracy").unwrap();
    assert!(acc >= 0.99, "identity accuracy {acc}");
}

fn softmax_xent(w: &Mat, b: &[Real], feats: &[(Vec<Real>, usize)]) -> (Real, Vec<Real>, Vec<Real>) {
    let (k, h) = (w.rows(), w.cols());
    let mut gw = vec![0.0; k * h];
    let mut gb = vec![0.0; k];
    let mut loss = 0.0;
    for (x, y) in feats {
        let z: Vec<Real> = (0..k).map(|i| b[i] + (0..h).map(|j| w[(i, j)] * x[j]).sum::<Real>()).collect();
        let p = softmax(&z);
        loss -= p[*y].ln();
        for i in 0..k {
            let d = p[i] - if i == *y { 1.0 } else { 0.0 };
            gb[i] += d;
            for j in 0..h {
                gw[i * h + j] += d * x[j];
            }
        }
    }
    let n = feats.len() as Real;
    (loss / n, gw.iter().map(|g| g / n).collect(), gb.iter().map(|g| g / n).collect())
}

/// With the memory frozen, the head objective is convex; small-step Adam on
/// the full batch decreases it monotonically.
#[test]
fn frozen_memory_head_loss_is_monotone() {
    let cfg = tiny_supervised();
    let agent = Agent::init(&cfg).unwrap();
    let ds = make_supervised_dataset(cfg.supervised_task(), 128, 9).unwrap();
    let feats: Vec<(Vec<Real>, usize)> = ds
        .sequences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let tr = run_sequence(&agent.params, &s.xs, EvalMode::Sequential, &mut rng_from_seed(i as u64)).unwrap();
            (tr.reads.last().unwrap().clone(), s.targets.last().unwrap().unwrap())
        })
        .collect();
    let mut w = agent.heads.policy.weight.clone();
    let mut b = agent.heads.policy.bias.clone();
    let mut opt = Adam::new(1e-3);
    let mut prev = Real::INFINITY;
    for _ in 0..300 {
        let (loss, gw, gb) = softmax_xent(&w, &b, &feats);
        assert!(loss <= prev + 1e-12, "loss rose from {prev} to {loss}");
        prev = loss;
        let grads = GradReport {
            tensors: vec![NamedGrad { name: "w".into(), values: gw }, NamedGrad { name: "b".into(), values: gb }],
            ..Default::default()
        };
        opt.step(vec![("w", w.as_mut_slice()), ("b", &mut b)], &grads).unwrap();
    }
    let (first, _, _) = softmax_xent(&agent.heads.policy.weight, &agent.heads.policy.bias, &feats);
    assert!(prev < first);
}

#[test]
fn exploding_fixed_calibration_stays_finite_under_clipping() {
    let cfg = TrainConfig {
        variant: CalibrationVariant::FixedC,
        h: 4,
        length: 200,
        dataset_size: 32,
        test_size: 16,
        epochs: 2,
        clip: Some(1.0),
        ..tiny_supervised()
    };
    let tree = shm_core::rng::SeedTree::new(cfg.seed);
    let train = make_supervised_dataset(cfg.supervised_task(), cfg.dataset_size, tree.seed("dataset", 0)).unwrap();
    let test = make_supervised_dataset(cfg.supervised_task(), cfg.test_size, tree.seed("dataset", 1)).unwrap();
    let mut agent = Agent::init(&cfg).unwrap();
    agent.params.extra = VariantParams::FixedC(Mat::filled(4, 4, 1.1));
    let out = train_supervised_on(&cfg, &mut agent, &train, &test).unwrap();
    assert!(out.agent.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite())));
    assert!(out.report.rows.iter().all(|r| r.value.is_finite()));
    if out.aborted.is_none() {
        assert!(out.report.clip_events > 0);
    }
}

#[test]
fn random_policy_matches_chance() {
    let cfg = TrainConfig { mode: Mode::Rl, ..Default::default() };
    let r = evaluate(&cfg, Policy::Random, 4000, 11).unwrap();
    // A uniform action opens the right door with 1/6, a wrong one with 1/2,
    // and otherwise waits; the query phase has five steps.
    let p = (1.0 / 6.0) * (1.0 - (1.0 / 3.0 as Real).powi(5)) / (2.0 / 3.0);
    let se = (p * (1.0 - p) / 4000.0).sqrt();
    assert!((r.success_rate - p).abs() <= 3.0 * se, "{} vs {p}", r.success_rate);
}

/// Exact expected success and return of the uniform policy, enumerated over
/// every action sequence for each (code, apple) configuration.
#[test]
fn evaluation_is_unbiased() {
    let env_cfg = DelayedRecallConfig { n_codes: 2, phases: (1, 1, 1), apple_prob: 0.5, door_reward: 10.0 };
    let mut env = DelayedRecallEnv::new(env_cfg).unwrap();
    let n_actions = env.num_actions();
    let mut exact: std::collections::HashMap<(usize, usize), (Real, Real)> = Default::default();
    for seed in 0..64 {
        env.reset(seed);
        let key = (env.code(), env.apples());
        if exact.contains_key(&key) {
            continue;
        }
        let (mut succ, mut ret) = (0.0, 0.0);
        for seq in 0..n_actions.pow(3) {
            let acts = [seq % n_actions, seq / n_actions % n_actions, seq / n_actions / n_actions];
            env.reset(seed);
            let mut g = 0.0;
            for a in acts {
                let tr = env.step(a).unwrap();
                g += tr.reward;
                if tr.done {
                    break;
                }
            }
            // Actions after the episode ends are ignored, so every full
            // sequence carries the same weight.
            let w = 1.0 / n_actions.pow(3) as Real;
            succ += w * Real::from(u8::from(env.success()));
            ret += w * g;
        }
        exact.insert(key, (succ, ret));
    }
    assert_eq!(exact.len(), 4, "every code and apple combination is reached");
    let (mut p, mut mean) = (0.0, 0.0);
    // Two equiprobable codes, one apple slot with probability 0.5.
    for (s, g) in exact.values() {
        p += 0.25 * s;
        mean += 0.25 * g;
    }
    let cfg = TrainConfig { mode: Mode::Rl, n_codes: 2, phases: (1, 1, 1), ..Default::default() };
    let n = 20_000;
    let r = evaluate(&cfg, Policy::Random, n, 5).unwrap();
    let se = (p * (1.0 - p) / n as Real).sqrt();
    assert!((r.success_rate - p).abs() <= 4.0 * se, "{} vs {p}", r.success_rate);
    let se_g = r.std_return / (n as Real).sqrt();
    assert!((r.mean_return - mean).abs() <= 4.0 * se_g, "{} vs {mean}", r.mean_return);
}

#[test]
fn clairvoyant_policy_is_optimal() {
    let cfg = TrainConfig { mode: Mode::Rl, phases: (2, 10, 2), ..Default::default() };
    let r = evaluate(&cfg, Policy::Clairvoyant, 100, 0).unwrap();
    assert_eq!(r.success_rate, 1.0);
    assert!(r.mean_return >= 10.0);
}
