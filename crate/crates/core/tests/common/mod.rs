#![allow(dead_code)]

use objective_lab::loss_catalog::PreferenceBatch;
use objective_lab::preference_sim::SimRng;

/// Log-probabilities drawn uniformly from `[-8, -0.1)`.
pub fn random_batch(seed: u64, n: usize) -> PreferenceBatch {
    let mut rng = SimRng::new(seed);
    let col = |rng: &mut SimRng| (0..n).map(|_| -0.1 - 7.9 * rng.uniform()).collect::<Vec<_>>();
    let pcl = col(&mut rng);
    let prl = col(&mut rng);
    let rcl = col(&mut rng);
    let rrl = col(&mut rng);
    PreferenceBatch::new(pcl, prl, rcl, rrl).expect("finite batch")
}

pub fn with_policy_chosen(batch: &PreferenceBatch, pcl: Vec<f64>) -> PreferenceBatch {
    PreferenceBatch::new(
        pcl,
        batch.policy_rejected().as_slice().to_vec(),
        batch.reference_chosen().as_slice().to_vec(),
        batch.reference_rejected().as_slice().to_vec(),
    )
    .expect("finite batch")
}

pub fn with_policy_rejected(batch: &PreferenceBatch, prl: Vec<f64>) -> PreferenceBatch {
    PreferenceBatch::new(
        batch.policy_chosen().as_slice().to_vec(),
        prl,
        batch.reference_chosen().as_slice().to_vec(),
        batch.reference_rejected().as_slice().to_vec(),
    )
    .expect("finite batch")
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
