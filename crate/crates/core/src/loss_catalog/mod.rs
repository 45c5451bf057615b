//! Baseline and discovered offline preference-optimization losses.
//!
//! Every loss is built on a [`CompGraph`], so values and gradients come
//! from the same tape. Two variants exist for each loss:
//!
//! * [`Variant::AsDiscovered`] reproduces the generated listings literally,
//!   including their habit of feeding raw log-ratio differences into
//!   intermediate sigmoids and batch statistics.
//! * [`Variant::BetaCorrected`] (the default) feeds `beta * rho / TAU`
//!   into those intermediate computations instead, so the loss shape does
//!   not change with `beta`. At `beta == TAU` the two variants coincide.

pub mod analysis;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch_math::{reduce, BatchVector, CompGraph, MathError, NodeId, StatKind};

/// The internal scaling constant the discovered losses were tuned at.
pub const TAU: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("loss `{0}` depends on batch statistics and has no pointwise form")]
    NotPointwise(LossId),
    #[error("loss `{loss}` produced a non-finite value {value} at element {index}")]
    FiniteViolation { loss: String, index: usize, value: f64 },
    #[error("pfl needs the policy chosen/rejected log-probabilities")]
    MissingPolicyLogps,
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("invalid preference batch: {0}")]
    InvalidBatch(String),
    #[error("unknown loss `{0}`")]
    UnknownLoss(String),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error(transparent)]
    Math(#[from] MathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossId {
    Dpo,
    Slic,
    Exp,
    Ipo,
    KtoPair,
    Dbaql,
    Aql,
    Padll,
    Aqfl,
    Cell,
    Lrml,
    Pfl,
}

impl LossId {
    pub const ALL: [LossId; 12] = [
        LossId::Dpo,
        LossId::Slic,
        LossId::Exp,
        LossId::Ipo,
        LossId::KtoPair,
        LossId::Dbaql,
        LossId::Aql,
        LossId::Padll,
        LossId::Aqfl,
        LossId::Cell,
        LossId::Lrml,
        LossId::Pfl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossId::Dpo => "dpo",
            LossId::Slic => "slic",
            LossId::Exp => "exp",
            LossId::Ipo => "ipo",
            LossId::KtoPair => "kto_pair",
            LossId::Dbaql => "dbaql",
            LossId::Aql => "aql",
            LossId::Padll => "padll",
            LossId::Aqfl => "aqfl",
            LossId::Cell => "cell",
            LossId::Lrml => "lrml",
            LossId::Pfl => "pfl",
        }
    }

    /// Losses whose value depends only on the example's own log-ratio
    /// difference (and, for pfl, the sign of the policy preference).
    pub fn is_pointwise(self) -> bool {
        !matches!(
            self,
            LossId::KtoPair | LossId::Dbaql | LossId::Aql | LossId::Aqfl
        )
    }

    /// Output length as a multiple of the batch size.
    pub fn output_multiple(self) -> usize {
        if self == LossId::KtoPair {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for LossId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossId {
    type Err = LossError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LossId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| LossError::UnknownLoss(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    AsDiscovered,
    #[default]
    BetaCorrected,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::AsDiscovered => "as_discovered",
            Variant::BetaCorrected => "beta_corrected",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = LossError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "as_discovered" => Ok(Variant::AsDiscovered),
            "beta_corrected" => Ok(Variant::BetaCorrected),
            other => Err(LossError::UnknownVariant(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    beta: f64,
    pub variant: Variant,
}

impl LossParams {
    pub fn new(beta: f64, variant: Variant) -> Result<Self, LossError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(LossError::InvalidBeta(beta));
        }
        Ok(Self { beta, variant })
    }

    /// Beta-corrected parameters.
    pub fn with_beta(beta: f64) -> Result<Self, LossError> {
        Self::new(beta, Variant::default())
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// A catalog entry: the loss identifier and the constants its listing fixes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub id: LossId,
    pub constants: &'static [(&'static str, f64)],
}

impl LossSpec {
    pub fn of(id: LossId) -> Self {
        let constants: &'static [(&'static str, f64)] = match id {
            LossId::Dpo | LossId::Slic | LossId::Exp | LossId::Ipo | LossId::KtoPair => &[],
            LossId::Dbaql => &[
                ("tau", TAU),
                ("temperature", 0.9),
                ("dynamic_blend_rate", 1.0),
            ],
            LossId::Aql => &[
                ("tau", TAU),
                ("percentile", 0.5),
                ("moving_quantile_weight", 0.01),
            ],
            LossId::Padll => &[("base_decay", 0.9), ("mismatch_penalty", 0.5)],
            LossId::Aqfl => &[
                ("tau", TAU),
                ("quantile_update_rate", 0.05),
                ("distance_scale", 0.1),
            ],
            LossId::Cell => &[("alpha", 0.5)],
            LossId::Lrml => &[("tau", TAU)],
            LossId::Pfl => &[("tau", TAU), ("focus_scale", 2.0)],
        };
        Self { id, constants }
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
    }

    fn c(&self, name: &str) -> f64 {
        self.constant(name)
            .unwrap_or_else(|| panic!("{} has no constant `{name}`", self.id))
    }
}

/// Per-example log-probabilities of chosen and rejected completions under
/// the policy and the reference model.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceBatch {
    policy_chosen: BatchVector,
    policy_rejected: BatchVector,
    reference_chosen: BatchVector,
    reference_rejected: BatchVector,
}

impl PreferenceBatch {
    pub fn new(
        policy_chosen: Vec<f64>,
        policy_rejected: Vec<f64>,
        reference_chosen: Vec<f64>,
        reference_rejected: Vec<f64>,
    ) -> Result<Self, LossError> {
        let n = policy_chosen.len();
        if [&policy_rejected, &reference_chosen, &reference_rejected]
            .iter()
            .any(|v| v.len() != n)
        {
            return Err(LossError::InvalidBatch("unequal lengths".into()));
        }
        let all = [
            &policy_chosen,
            &policy_rejected,
            &reference_chosen,
            &reference_rejected,
        ];
        if all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(LossError::InvalidBatch("non-finite log-probability".into()));
        }
        Ok(Self {
            policy_chosen: BatchVector::new(policy_chosen)?,
            policy_rejected: BatchVector::new(policy_rejected)?,
            reference_chosen: BatchVector::new(reference_chosen)?,
            reference_rejected: BatchVector::new(reference_rejected)?,
        })
    }

    /// A batch whose log-ratio differences equal `rho` exactly
    /// (policy chosen = rho, everything else zero).
    pub fn from_rho(rho: &[f64]) -> Result<Self, LossError> {
        let z = vec![0.0; rho.len()];
        Self::new(rho.to_vec(), z.clone(), z.clone(), z)
    }

    pub fn len(&self) -> usize {
        self.policy_chosen.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn policy_chosen(&self) -> &BatchVector {
        &self.policy_chosen
    }
    pub fn policy_rejected(&self) -> &BatchVector {
        &self.policy_rejected
    }
    pub fn reference_chosen(&self) -> &BatchVector {
        &self.reference_chosen
    }
    pub fn reference_rejected(&self) -> &BatchVector {
        &self.reference_rejected
    }

    /// Registers the four inputs as leaves `pcl`, `prl`, `rcl`, `rrl`.
    pub fn add_leaves(&self, g: &mut CompGraph) -> BatchLeaves {
        BatchLeaves {
            pcl: g.leaf("pcl", self.policy_chosen.clone()),
            prl: g.leaf("prl", self.policy_rejected.clone()),
            rcl: g.leaf("rcl", self.reference_chosen.clone()),
            rrl: g.leaf("rrl", self.reference_rejected.clone()),
        }
    }
}

/// Leaf handles of a [`PreferenceBatch`] inside a graph.
#[derive(Debug, Clone, Copy)]
pub struct BatchLeaves {
    pub pcl: NodeId,
    pub prl: NodeId,
    pub rcl: NodeId,
    pub rrl: NodeId,
}

/// `rho_i = (pcl_i - prl_i) - (rcl_i - rrl_i)`.
pub fn compute_rho(batch: &PreferenceBatch) -> BatchVector {
    let v = (0..batch.len())
        .map(|i| {
            (batch.policy_chosen[i] - batch.policy_rejected[i])
                - (batch.reference_chosen[i] - batch.reference_rejected[i])
        })
        .collect();
    BatchVector::new(v).expect("batch is non-empty")
}

/// Batch statistics of the intermediate argument: `beta * rho / TAU` for the
/// corrected variant, raw `rho` for the as-discovered one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub mean_z: f64,
    pub var_z: f64,
    pub std_z: f64,
}

pub fn batch_stats(params: &LossParams, batch: &PreferenceBatch) -> BatchStats {
    let rho = compute_rho(batch);
    let z = match params.variant {
        Variant::AsDiscovered => rho,
        Variant::BetaCorrected => BatchVector::new(
            rho.iter().map(|r| params.beta * r / TAU).collect(),
        )
        .expect("batch is non-empty"),
    };
    BatchStats {
        mean_z: reduce(StatKind::Mean, &z).value,
        var_z: reduce(StatKind::Variance, &z).value,
        std_z: reduce(StatKind::Std, &z).value,
    }
}

/// What a loss body sees: the log-ratio difference and, when available, the
/// raw inputs.
struct LossInputs {
    rho: NodeId,
    leaves: Option<BatchLeaves>,
    /// 1 where the policy prefers the chosen completion (pfl only).
    policy_correct: Option<NodeId>,
}

fn rho_node(g: &mut CompGraph, l: &BatchLeaves) -> Result<NodeId, MathError> {
    let pi = g.sub(l.pcl, l.prl)?;
    let rf = g.sub(l.rcl, l.rrl)?;
    g.sub(pi, rf)
}

/// Builds the per-example loss vector for a batch already registered in `g`.
pub fn build_batch_loss(
    g: &mut CompGraph,
    id: LossId,
    params: &LossParams,
    leaves: &BatchLeaves,
) -> Result<NodeId, MathError> {
    let rho = rho_node(g, leaves)?;
    let policy_correct = if id == LossId::Pfl {
        Some(g.indicator_gt(leaves.pcl, leaves.prl)?)
    } else {
        None
    };
    let inputs = LossInputs {
        rho,
        leaves: Some(*leaves),
        policy_correct,
    };
    build_loss(g, LossSpec::of(id), params, &inputs)
}

/// `-logsigmoid(scale * x)` where `scale` is a node.
fn logistic(g: &mut CompGraph, scale: NodeId, x: NodeId) -> Result<NodeId, MathError> {
    let t = g.mul(scale, x)?;
    let ls = g.logsigmoid(t)?;
    g.neg(ls)
}

/// `relu(1 - scale * x)`.
fn hinge(g: &mut CompGraph, scale: NodeId, x: NodeId) -> Result<NodeId, MathError> {
    let one = g.scalar(1.0);
    let t = g.mul(scale, x)?;
    let d = g.sub(one, t)?;
    g.relu(d)
}

/// `w * a + (1 - w) * b`.
fn blend(g: &mut CompGraph, w: NodeId, a: NodeId, b: NodeId) -> Result<NodeId, MathError> {
    let one = g.scalar(1.0);
    let wa = g.mul(w, a)?;
    let rest = g.sub(one, w)?;
    let rb = g.mul(rest, b)?;
    g.add(wa, rb)
}

fn build_loss(
    g: &mut CompGraph,
    spec: LossSpec,
    params: &LossParams,
    inputs: &LossInputs,
) -> Result<NodeId, MathError> {
    let beta = g.scalar(params.beta);
    let rho = inputs.rho;
    // argument of intermediate sigmoids and batch statistics
    let inner = match params.variant {
        Variant::AsDiscovered => rho,
        Variant::BetaCorrected => {
            let tau = g.scalar(TAU);
            let b = g.mul(beta, rho)?;
            g.div(b, tau)?
        }
    };

    match spec.id {
        LossId::Dpo => logistic(g, beta, rho),
        LossId::Slic => hinge(g, beta, rho),
        LossId::Exp => {
            let nb = g.neg(beta)?;
            let t = g.mul(nb, rho)?;
            g.exp(t)
        }
        LossId::Ipo => {
            let one = g.scalar(1.0);
            let two = g.scalar(2.0);
            let tb = g.mul(two, beta)?;
            let target = g.div(one, tb)?;
            let d = g.sub(rho, target)?;
            g.pow(d, 2.0)
        }
        LossId::KtoPair => {
            let l = inputs
                .leaves
                .expect("kto_pair is only built from full batches");
            let zero = g.scalar(0.0);
            let chosen_lr = g.sub(l.pcl, l.rcl)?;
            let rejected_lr = g.sub(l.prl, l.rrl)?;
            let cm = g.mean(chosen_lr)?;
            let chosen_kl = g.clamp_min(cm, zero)?;
            let rm = g.mean(rejected_lr)?;
            let rejected_kl = g.clamp_min(rm, zero)?;

            let one = g.scalar(1.0);
            let a = g.sub(chosen_lr, rejected_kl)?;
            let a = g.mul(beta, a)?;
            let a = g.sigmoid(a)?;
            let first = g.sub(one, a)?;
            let b = g.sub(chosen_kl, rejected_lr)?;
            let b = g.mul(beta, b)?;
            let b = g.sigmoid(b)?;
            let second = g.sub(one, b)?;
            g.concat(first, second)
        }
        LossId::Cell => {
            let alpha = g.scalar(spec.c("alpha"));
            let nb = g.neg(beta)?;
            let t = g.mul(nb, rho)?;
            let exp_losses = g.exp(t)?;
            let log_losses = logistic(g, beta, rho)?;
            blend(g, alpha, exp_losses, log_losses)
        }
        LossId::Lrml => {
            let modulation = g.sigmoid(inner)?;
            let logistic_component = logistic(g, beta, rho)?;
            let nb = g.neg(beta)?;
            let t = g.mul(nb, rho)?;
            let exp_component = g.exp(t)?;
            blend(g, modulation, exp_component, logistic_component)
        }
        LossId::Padll => {
            let zero = g.scalar(0.0);
            let one = g.scalar(1.0);
            let base = g.scalar(spec.c("base_decay"));
            let penalty = g.scalar(spec.c("mismatch_penalty"));
            let mismatches = g.indicator_lt(inner, zero)?;
            let p = g.mul(mismatches, penalty)?;
            let keep = g.sub(one, p)?;
            let decay = g.mul(base, keep)?;
            let l = logistic(g, beta, rho)?;
            g.mul(decay, l)
        }
        LossId::Pfl => {
            let correct = inputs
                .policy_correct
                .expect("pfl needs the policy preference indicator");
            let focus = g.scalar(spec.c("focus_scale"));
            let one = g.scalar(1.0);
            let ls = g.logsigmoid(inner)?;
            let logistic_losses = g.neg(ls)?;
            let d = g.sub(one, inner)?;
            let hinge_losses = g.relu(d)?;
            let de = g.div(logistic_losses, focus)?;
            let em = g.mul(hinge_losses, focus)?;
            g.select(correct, de, em)
        }
        LossId::Dbaql => {
            let temperature = g.scalar(spec.c("temperature"));
            let rate = g.scalar(spec.c("dynamic_blend_rate"));
            let variability = g.var(inner)?;
            let s = g.sigmoid(variability)?;
            let coeff = g.mul(s, rate)?;
            let br = g.mul(beta, rho)?;
            let scaled = g.div(br, temperature)?;
            let ls = g.logsigmoid(scaled)?;
            let logistic_loss = g.neg(ls)?;
            let nb = g.neg(beta)?;
            let t = g.mul(nb, rho)?;
            let t = g.mul(t, temperature)?;
            let exp_loss = g.exp(t)?;
            blend(g, coeff, logistic_loss, exp_loss)
        }
        LossId::Aql => {
            let percentile = g.scalar(spec.c("percentile"));
            let weight = g.scalar(spec.c("moving_quantile_weight"));
            let m = g.mean(inner)?;
            let s = g.sigmoid(m)?;
            let d = g.sub(s, percentile)?;
            let d = g.mul(weight, d)?;
            let moving_quantile = g.add(percentile, d)?;
            let q_arg = match params.variant {
                Variant::AsDiscovered => {
                    let nb = g.neg(beta)?;
                    let shifted = g.sub(rho, moving_quantile)?;
                    g.mul(nb, shifted)?
                }
                Variant::BetaCorrected => {
                    let tau = g.scalar(TAU);
                    let tm = g.mul(tau, moving_quantile)?;
                    let br = g.mul(beta, rho)?;
                    g.sub(tm, br)?
                }
            };
            let quantile_weights = g.sigmoid(q_arg)?;
            let logistic_losses = logistic(g, beta, rho)?;
            let hinge_losses = hinge(g, beta, rho)?;
            blend(g, quantile_weights, logistic_losses, hinge_losses)
        }
        LossId::Aqfl => {
            let rate = g.scalar(spec.c("quantile_update_rate"));
            let scale = g.scalar(spec.c("distance_scale"));
            let spread = g.std(inner)?;
            let neg_inner = g.neg(inner)?;
            let sn = g.sigmoid(neg_inner)?;
            let msn = g.mean(sn)?;
            let base_quantile = g.mul(spread, msn)?;
            let m = g.mean(inner)?;
            let sm = g.sigmoid(m)?;
            let d = g.sub(sm, base_quantile)?;
            let d = g.mul(rate, d)?;
            let adaptive_quantile = g.add(base_quantile, d)?;
            let dist = g.sub(inner, adaptive_quantile)?;
            let dist = g.abs(dist)?;
            let sd = g.mul(scale, dist)?;
            let blend_rate = g.sigmoid(sd)?;
            let logistic_losses = logistic(g, beta, rho)?;
            let hinge_losses = hinge(g, beta, rho)?;
            blend(g, blend_rate, logistic_losses, hinge_losses)
        }
    }
}

fn check_finite(id: &str, v: BatchVector) -> Result<BatchVector, LossError> {
    match v.first_non_finite() {
        Some(index) => Err(LossError::FiniteViolation {
            loss: id.to_owned(),
            index,
            value: v[index],
        }),
        None => Ok(v),
    }
}

/// Per-example losses (length `2N` for kto_pair, `N` otherwise).
pub fn eval_loss_batch(
    spec: &LossSpec,
    params: &LossParams,
    batch: &PreferenceBatch,
) -> Result<BatchVector, LossError> {
    let mut g = CompGraph::new();
    let leaves = batch.add_leaves(&mut g);
    let out = build_batch_loss(&mut g, spec.id, params, &leaves)?;
    let v = g
        .value(out)
        .as_vector()
        .cloned()
        .expect("catalog losses are vector-valued");
    check_finite(spec.id.as_str(), v)
}

/// Gradients of the mean loss with respect to the policy log-probabilities.
pub fn loss_batch_gradient(
    spec: &LossSpec,
    params: &LossParams,
    batch: &PreferenceBatch,
) -> Result<(BatchVector, BatchVector), LossError> {
    let mut g = CompGraph::new();
    let leaves = batch.add_leaves(&mut g);
    let out = build_batch_loss(&mut g, spec.id, params, &leaves)?;
    let mean = g.mean(out)?;
    let mut grads = g.gradient(mean, &["pcl", "prl"])?;
    Ok((
        grads.remove("pcl").expect("requested leaf"),
        grads.remove("prl").expect("requested leaf"),
    ))
}

/// Derivative of a pointwise loss with respect to `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoDerivative {
    pub value: f64,
    /// Set when `rho` sits exactly on a jump of the loss; `value` is then
    /// the right-limit derivative.
    pub at_discontinuity: bool,
}

/// A batch-independent loss as a scalar function of `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointwiseLoss {
    spec: LossSpec,
    params: LossParams,
    policy_split: Option<PolicySplit>,
}

/// How a pointwise pfl evaluation decides whether the policy prefers the
/// chosen completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PolicySplit {
    Fixed(bool),
    /// Reference log-probabilities are equal, so the policy is correct
    /// exactly when `rho > 0`.
    IndifferentReference,
}

impl PointwiseLoss {
    pub fn new(id: LossId, params: LossParams) -> Result<Self, LossError> {
        if !id.is_pointwise() {
            return Err(LossError::NotPointwise(id));
        }
        Ok(Self {
            spec: LossSpec::of(id),
            params,
            policy_split: None,
        })
    }

    /// Supplies the policy log-probabilities pfl uses for its correctness
    /// split (`chosen > rejected`, strict).
    pub fn with_policy_logps(mut self, chosen: f64, rejected: f64) -> Self {
        self.policy_split = Some(PolicySplit::Fixed(chosen > rejected));
        self
    }

    /// Treats the reference log-probabilities as equal, so pfl's policy
    /// preference follows the sign of `rho`. No effect on other losses.
    pub fn with_indifferent_reference(mut self) -> Self {
        self.policy_split = Some(PolicySplit::IndifferentReference);
        self
    }

    pub fn id(&self) -> LossId {
        self.spec.id
    }

    pub fn params(&self) -> &LossParams {
        &self.params
    }

    fn graph(&self, rho: f64) -> Result<(CompGraph, NodeId), LossError> {
        let mut g = CompGraph::new();
        let leaf = g.leaf("rho", BatchVector::new(vec![rho])?);
        let policy_correct = match (self.spec.id, self.policy_split) {
            (LossId::Pfl, None) => return Err(LossError::MissingPolicyLogps),
            (LossId::Pfl, Some(PolicySplit::Fixed(c))) => {
                Some(g.scalar(if c { 1.0 } else { 0.0 }))
            }
            (LossId::Pfl, Some(PolicySplit::IndifferentReference)) => {
                Some(g.scalar(if rho > 0.0 { 1.0 } else { 0.0 }))
            }
            _ => None,
        };
        let inputs = LossInputs {
            rho: leaf,
            leaves: None,
            policy_correct,
        };
        let out = build_loss(&mut g, self.spec, &self.params, &inputs)?;
        Ok((g, out))
    }

    pub fn value(&self, rho: f64) -> Result<f64, LossError> {
        let (g, out) = self.graph(rho)?;
        let v = g.value(out).as_vector().expect("vector output")[0];
        if !v.is_finite() {
            return Err(LossError::FiniteViolation {
                loss: self.spec.id.to_string(),
                index: 0,
                value: v,
            });
        }
        Ok(v)
    }

    pub fn derivative(&self, rho: f64) -> Result<RhoDerivative, LossError> {
        let (g, out) = self.graph(rho)?;
        let d = g.gradient(out, &["rho"])?["rho"][0];
        Ok(RhoDerivative {
            value: d,
            at_discontinuity: self.spec.id == LossId::Padll && rho == 0.0,
        })
    }
}

/// `f(beta * rho)` for a pointwise loss. pfl additionally needs
/// `policy_logps = (chosen, rejected)`.
pub fn eval_loss_pointwise(
    id: LossId,
    rho: f64,
    params: &LossParams,
    policy_logps: Option<(f64, f64)>,
) -> Result<f64, LossError> {
    pointwise(id, params, policy_logps)?.value(rho)
}

/// `df/drho` by reverse-mode differentiation of the singleton graph.
pub fn loss_gradient_rho(
    id: LossId,
    rho: f64,
    params: &LossParams,
    policy_logps: Option<(f64, f64)>,
) -> Result<RhoDerivative, LossError> {
    pointwise(id, params, policy_logps)?.derivative(rho)
}

fn pointwise(
    id: LossId,
    params: &LossParams,
    policy_logps: Option<(f64, f64)>,
) -> Result<PointwiseLoss, LossError> {
    let p = PointwiseLoss::new(id, *params)?;
    Ok(match policy_logps {
        Some((c, r)) => p.with_policy_logps(c, r),
        None => p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn params(beta: f64) -> LossParams {
        LossParams::with_beta(beta).unwrap()
    }

    #[test]
    fn rho_examples() {
        let b = PreferenceBatch::new(vec![-1.0; 3], vec![-1.0; 3], vec![-1.0; 3], vec![-1.0; 3]).unwrap();
        assert!(compute_rho(&b).iter().all(|r| *r == 0.0));
        let b = PreferenceBatch::new(vec![-1.0], vec![-2.0], vec![-1.5], vec![-1.5]).unwrap();
        assert_eq!(compute_rho(&b)[0], 1.0);
        let b = PreferenceBatch::new(vec![-3.0, -0.2], vec![-1.0, -7.5], vec![-3.0, -0.2], vec![-1.0, -7.5]).unwrap();
        assert!(compute_rho(&b).iter().all(|r| *r == 0.0));
    }

    #[test]
    fn batch_validation() {
        assert!(matches!(
            PreferenceBatch::new(vec![0.0], vec![0.0, 1.0], vec![0.0], vec![0.0]),
            Err(LossError::InvalidBatch(_))
        ));
        assert!(matches!(
            PreferenceBatch::new(vec![f64::NAN], vec![0.0], vec![0.0], vec![0.0]),
            Err(LossError::InvalidBatch(_))
        ));
        assert!(PreferenceBatch::new(vec![], vec![], vec![], vec![]).is_err());
        assert_eq!(LossParams::with_beta(0.0), Err(LossError::InvalidBeta(0.0)));
    }

    #[test]
    fn batch_examples() {
        let zero = PreferenceBatch::from_rho(&[0.0]).unwrap();
        for beta in [0.01, 0.05, 1.0] {
            let d = eval_loss_batch(&LossSpec::of(LossId::Dpo), &params(beta), &zero).unwrap();
            assert!((d[0] - LN_2).abs() < 1e-15);
            let c = eval_loss_batch(&LossSpec::of(LossId::Cell), &params(beta), &zero).unwrap();
            assert!((c[0] - (0.5 * LN_2 + 0.5)).abs() < 1e-15);
        }
        let b = PreferenceBatch::from_rho(&[-2.3714]).unwrap();
        let l = eval_loss_batch(&LossSpec::of(LossId::Lrml), &params(0.05), &b).unwrap();
        assert!((l[0] - 0.785929).abs() < 1e-4);
        // 0.45 * ln(1 + e^0.05), high-precision reference value
        let b = PreferenceBatch::from_rho(&[-1.0]).unwrap();
        let p = eval_loss_batch(&LossSpec::of(LossId::Padll), &params(0.05), &b).unwrap();
        assert!((p[0] - 0.323_306_841_605_978_8).abs() < 1e-12);
    }

    #[test]
    fn output_lengths() {
        let b = PreferenceBatch::from_rho(&[0.1, -0.4, 2.0]).unwrap();
        for id in LossId::ALL {
            let v = eval_loss_batch(&LossSpec::of(id), &params(0.05), &b).unwrap();
            assert_eq!(v.len(), 3 * id.output_multiple(), "{id}");
        }
    }

    #[test]
    fn pointwise_examples() {
        let p = params(0.05);
        let v = eval_loss_pointwise(LossId::Lrml, 1.44012, &p, None).unwrap();
        assert!((v - 0.87829).abs() < 1e-4);
        assert_eq!(eval_loss_pointwise(LossId::Slic, 40.0, &p, None).unwrap(), 0.0);
        assert_eq!(eval_loss_pointwise(LossId::Exp, 0.0, &p, None).unwrap(), 1.0);
        assert_eq!(
            eval_loss_pointwise(LossId::Aql, 0.0, &p, None),
            Err(LossError::NotPointwise(LossId::Aql))
        );
        assert_eq!(
            eval_loss_pointwise(LossId::Pfl, 0.0, &p, None),
            Err(LossError::MissingPolicyLogps)
        );
    }

    #[test]
    fn gradient_examples() {
        let p = params(0.05);
        let d = loss_gradient_rho(LossId::Dpo, 0.0, &p, None).unwrap();
        assert!((d.value + 0.025).abs() < 1e-15);
        assert!(!d.at_discontinuity);
        let d = loss_gradient_rho(LossId::Exp, 0.0, &p, None).unwrap();
        assert!((d.value + 0.05).abs() < 1e-15);
        let d = loss_gradient_rho(LossId::Lrml, -2.3714, &p, None).unwrap();
        assert!(d.value.abs() < 1e-4);
    }

    #[test]
    fn padll_one_sided_limits_at_zero() {
        let p = PointwiseLoss::new(LossId::Padll, params(0.05)).unwrap();
        let left = p.value(-1e-12).unwrap();
        let right = p.value(0.0).unwrap();
        assert!((left - 0.45 * LN_2).abs() < 1e-12);
        assert!((right - 0.9 * LN_2).abs() < 1e-15);
        let d = p.derivative(0.0).unwrap();
        assert!(d.at_discontinuity);
        // right branch: 0.9 * d/drho log(1 + exp(-beta rho)) at 0
        assert!((d.value + 0.9 * 0.025).abs() < 1e-15);
    }

    #[test]
    fn pfl_uses_policy_preference() {
        let p = params(0.05);
        let correct = eval_loss_pointwise(LossId::Pfl, 0.0, &p, Some((-1.0, -2.0))).unwrap();
        let wrong = eval_loss_pointwise(LossId::Pfl, 0.0, &p, Some((-2.0, -2.0))).unwrap();
        assert!((correct - LN_2 / 2.0).abs() < 1e-15);
        assert_eq!(wrong, 2.0);
    }

    #[test]
    fn kto_pair_clamps_batch_means() {
        // chosen log-ratios are negative on average, so the chosen KL term is 0
        let b = PreferenceBatch::new(vec![-2.0, -3.0], vec![-1.0, -1.0], vec![-1.0, -1.0], vec![-1.0, -1.0]).unwrap();
        let v = eval_loss_batch(&LossSpec::of(LossId::KtoPair), &params(0.5), &b).unwrap();
        let s = crate::batch_math::sigmoid;
        assert!((v[0] - (1.0 - s(-0.5))).abs() < 1e-15);
        assert!((v[1] - (1.0 - s(0.5 * -2.0))).abs() < 1e-15);
        assert!((v[2] - (1.0 - s(0.0))).abs() < 1e-15);
    }

    #[test]
    fn non_finite_output_is_reported() {
        // exp(-beta * rho) overflows far beyond the supported range
        let b = PreferenceBatch::from_rho(&[0.0, -1e5]).unwrap();
        let err = eval_loss_batch(&LossSpec::of(LossId::Exp), &params(0.05), &b).unwrap_err();
        assert!(matches!(err, LossError::FiniteViolation { index: 1, .. }));
    }

    #[test]
    fn constants_match_listings() {
        assert_eq!(LossSpec::of(LossId::Padll).constant("base_decay"), Some(0.9));
        assert_eq!(LossSpec::of(LossId::Padll).constant("mismatch_penalty"), Some(0.5));
        assert_eq!(LossSpec::of(LossId::Dbaql).constant("temperature"), Some(0.9));
        assert_eq!(LossSpec::of(LossId::Aql).constant("moving_quantile_weight"), Some(0.01));
        assert_eq!(LossSpec::of(LossId::Aqfl).constant("quantile_update_rate"), Some(0.05));
        assert_eq!(LossSpec::of(LossId::Aqfl).constant("distance_scale"), Some(0.1));
        assert_eq!(LossSpec::of(LossId::Cell).constant("alpha"), Some(0.5));
        assert_eq!(LossSpec::of(LossId::Pfl).constant("focus_scale"), Some(2.0));
        assert_eq!(LossSpec::of(LossId::Lrml).constant("tau"), Some(0.05));
    }

    #[test]
    fn ids_round_trip_through_strings() {
        for id in LossId::ALL {
            assert_eq!(id.as_str().parse::<LossId>().unwrap(), id);
        }
        assert!("dpo2".parse::<LossId>().is_err());
        assert_eq!("as_discovered".parse::<Variant>().unwrap(), Variant::AsDiscovered);
    }
}
