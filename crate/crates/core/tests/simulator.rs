use objective_lab::loss_catalog::LossId;
use objective_lab::objective_dsl::Objective;
use objective_lab::preference_sim::{
    analytic_optimum, expected_reward, frontier_sweep, kl_divergence, make_task,
    sample_preference_dataset, train_policy, write_frontier_csv, Optimizer, SimRng, Split,
    TrainConfig, TrainError,
};
use serde::Deserialize;

#[derive(Deserialize)]
struct Golden {
    seed: u64,
    n_contexts: usize,
    n_completions: usize,
    reward_scale: f64,
    reward_bits: Vec<String>,
    logit_bits: Vec<String>,
}

fn from_bits(hex: &[String]) -> Vec<u64> {
    hex.iter().map(|h| u64::from_str_radix(h, 16).unwrap()).collect()
}

#[test]
fn task_matches_independent_generator_bit_for_bit() {
    let g: Golden = serde_json::from_str(include_str!("golden/task_seed0_8x16.json")).unwrap();
    let t = make_task(g.seed, g.n_contexts, g.n_completions, g.reward_scale).unwrap();
    let rewards: Vec<u64> = t.reward_table.iter().map(|v| v.to_bits()).collect();
    let logits: Vec<u64> = t.reference.logits().iter().map(|v| v.to_bits()).collect();
    assert_eq!(rewards, from_bits(&g.reward_bits));
    assert_eq!(logits, from_bits(&g.logit_bits));
}

#[test]
fn expected_reward_and_kl_match_monte_carlo() {
    let t = make_task(3, 5, 7, 5.0).unwrap();
    let policy = analytic_optimum(&t, 0.5).unwrap();
    let mut rng = SimRng::new(99);
    let n = 200_000;
    let (mut sum_r, mut sum_r2, mut sum_kl) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let x = rng.index(t.n_contexts);
        let y = rng.categorical(&policy.probs(x));
        let r = t.reward(x, y);
        sum_r += r;
        sum_r2 += r * r;
        sum_kl += policy.log_probs(x)[y] - t.reference.log_probs(x)[y];
    }
    let mean = sum_r / n as f64;
    let sd = (sum_r2 / n as f64 - mean * mean).sqrt();
    let exact = expected_reward(&policy, &t).unwrap();
    assert!((mean - exact).abs() < 4.0 * sd / (n as f64).sqrt(), "{mean} vs {exact}");
    let kl = kl_divergence(&policy, &t).unwrap();
    assert!((sum_kl / n as f64 - kl).abs() < 0.02, "{} vs {kl}", sum_kl / n as f64);
}

#[test]
fn dataset_is_deterministic_and_split() {
    let t = make_task(0, 8, 16, 5.0).unwrap();
    let a = sample_preference_dataset(&t, 1000, 4).unwrap();
    let b = sample_preference_dataset(&t, 1000, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.split(Split::Train).len(), 900);
    assert_eq!(a.split(Split::Heldout).len(), 100);
    assert!(a.records.iter().all(|r| r.chosen != r.rejected));
    assert_ne!(a, sample_preference_dataset(&t, 1000, 5).unwrap());
}

#[test]
fn zero_epochs_returns_reference() {
    let t = make_task(0, 8, 16, 5.0).unwrap();
    let d = sample_preference_dataset(&t, 512, 0).unwrap();
    let cfg = TrainConfig { epochs: 0, ..Default::default() };
    let (p, trace) = train_policy(&t, &d, &Objective::catalog(LossId::Dpo), &cfg).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(p.logits()), bits(t.reference.logits()));
    assert_eq!(trace.steps, 0);
}

#[test]
fn training_is_reproducible() {
    let t = make_task(1, 4, 6, 5.0).unwrap();
    let d = sample_preference_dataset(&t, 400, 1).unwrap();
    let cfg = TrainConfig { epochs: 5, batch_size: 64, ..Default::default() };
    let o = Objective::catalog(LossId::Lrml);
    let (a, ta) = train_policy(&t, &d, &o, &cfg).unwrap();
    let (b, tb) = train_policy(&t, &d, &o, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
}

#[test]
fn analytic_frontier_is_monotone() {
    for seed in 0..5 {
        let t = make_task(seed, 8, 16, 5.0).unwrap();
        let pts: Vec<(f64, f64)> = [0.05, 0.1, 0.5, 1.0]
            .iter()
            .map(|&b| {
                let p = analytic_optimum(&t, b).unwrap();
                (kl_divergence(&p, &t).unwrap(), expected_reward(&p, &t).unwrap())
            })
            .collect();
        for w in pts.windows(2) {
            assert!(w[1].0 < w[0].0, "seed {seed}: KL {pts:?}");
            assert!(w[1].1 <= w[0].1, "seed {seed}: reward {pts:?}");
        }
    }
}

#[test]
fn sgd_blowup_is_a_divergence_error() {
    let t = make_task(0, 3, 4, 5.0).unwrap();
    let d = sample_preference_dataset(&t, 200, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 32,
        optimizer: Optimizer::Sgd,
        learning_rate: 1e308,
        ..Default::default()
    };
    match train_policy(&t, &d, &Objective::catalog(LossId::Exp), &cfg) {
        Err(TrainError::Divergence(e)) => assert_eq!(e.epoch, 0),
        other => panic!("{other:?}"),
    }
}

#[test]
fn frontier_csv_round_trips_through_a_reader() {
    let t = make_task(0, 3, 4, 5.0).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 32, ..Default::default() };
    let pts = frontier_sweep(&t, &Objective::catalog(LossId::Slic), &[0.1, 1.0], &[0, 1], 100, &cfg).unwrap();
    let mut buf = Vec::new();
    write_frontier_csv(&mut buf, &pts).unwrap();
    let mut r = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["objective", "variant", "beta", "seed", "expected_reward", "kl", "diverged"]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|row| &row[0] == "slic" && &row[6] == "false"));
}
