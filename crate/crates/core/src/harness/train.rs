//! The semi-supervised training loop.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, DatasetSplit, HarnessError};
use crate::losses::{contrastive_loss, generalized_dice_loss, joint_loss, JointLossConfig};
use crate::mesh_io::TriangleMesh;
use crate::model::{
    backward, forward_cached, update, AdamConfig, Dims, ModelParams, OptimState, DEFAULT_EMBED,
    DEFAULT_HIDDEN,
};
use crate::preprocess::{augment, extract_features, AugmentRanges, FaceFeatures, FEATURE_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub hidden: usize,
    pub embed: usize,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub augment_seed: u64,
    pub schedule: Schedule,
    pub augment: bool,
    pub augment_ranges: AugmentRanges,
    pub loss: JointLossConfig,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            hidden: DEFAULT_HIDDEN,
            embed: DEFAULT_EMBED,
            init_seed: 1,
            shuffle_seed: 2,
            augment_seed: 3,
            schedule: Schedule::Alternate,
            augment: true,
            augment_ranges: AugmentRanges::default(),
            loss: JointLossConfig::default(),
            optimizer: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.epochs == 0 {
            return Err(HarnessError::InvalidConfig(
                "epochs must be at least 1".into(),
            ));
        }
        if self.hidden == 0 || self.embed == 0 {
            return Err(HarnessError::InvalidConfig(
                "hidden and embed widths must be positive".into(),
            ));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0)
            || !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
            || !(o.eps > 0.0)
        {
            return Err(HarnessError::InvalidConfig(format!(
                "bad optimizer settings {o:?}"
            )));
        }
        self.loss.validate()?;
        self.augment_ranges.validate()?;
        Ok(())
    }

    pub fn dims(&self, classes: usize) -> Dims {
        Dims {
            features: FEATURE_DIM,
            hidden: self.hidden,
            classes,
            embed: self.embed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Labeled,
    Unlabeled,
}

/// One training step. `sup` and `self_sup` are the unweighted parts; a
/// step with `applied == false` changed nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub pool: Pool,
    pub mesh: usize,
    pub sup: Option<f64>,
    pub self_sup: Option<f64>,
    pub total: f64,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub sup: Option<f64>,
    pub self_sup: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub optim: OptimState,
    pub history: Vec<StepRecord>,
}

fn opt_field(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl TrainOutput {
    /// Per-step losses: `step,epoch,pool,mesh,l_sup,l_self,l`.
    pub fn losses_csv(&self) -> String {
        let mut out = String::from("step,epoch,pool,mesh,l_sup,l_self,l\n");
        for r in &self.history {
            let pool = match r.pool {
                Pool::Labeled => "labeled",
                Pool::Unlabeled => "unlabeled",
            };
            out += &format!(
                "{},{},{pool},{},{},{},{}\n",
                r.step,
                r.epoch,
                r.mesh,
                opt_field(r.sup),
                opt_field(r.self_sup),
                r.total
            );
        }
        out
    }

    /// Mean of each part over the steps of every epoch.
    pub fn epoch_losses(&self) -> Vec<EpochLoss> {
        let epochs = self.history.last().map_or(0, |r| r.epoch + 1);
        (0..epochs)
            .map(|e| {
                let rows = || self.history.iter().filter(move |r| r.epoch == e);
                EpochLoss {
                    epoch: e,
                    sup: mean(rows().filter_map(|r| r.sup)),
                    self_sup: mean(rows().filter_map(|r| r.self_sup)),
                    total: mean(rows().map(|r| r.total)).unwrap_or(0.0),
                }
            })
            .collect()
    }

    pub fn epoch_csv(&self) -> String {
        let mut out = String::from("epoch,l_sup,l_self,l\n");
        for e in self.epoch_losses() {
            out += &format!(
                "{},{},{},{}\n",
                e.epoch,
                opt_field(e.sup),
                opt_field(e.self_sup),
                e.total
            );
        }
        out
    }
}

/// How the labeled and unlabeled pools share an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Strict alternation, unlabeled then labeled, for `max(l, u)` rounds;
    /// the smaller pool is cycled, reshuffled on each pass.
    Alternate,
    /// Each mesh once per epoch, spread in proportion to pool size.
    Interleave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PlannedStep {
    pool: Pool,
    mesh: usize,
    /// Pass over the pool within the epoch; only a cycled pool exceeds 0.
    pass: usize,
}

/// Seed tags for one step. The first pass keeps the short form so a run
/// without unlabeled data matches the supervised-only run exactly.
fn step_tags(epoch: usize, s: &PlannedStep) -> Vec<u64> {
    let mut tags = vec![epoch as u64, s.pool as u64, s.mesh as u64];
    if s.pass > 0 {
        tags.push(s.pass as u64);
    }
    tags
}

/// Step order within one epoch. Each epoch ends on a labeled step when
/// labeled data exists, and the labeled order never depends on `u`.
fn epoch_plan(
    schedule: Schedule,
    l: usize,
    u: usize,
    shuffle_seed: u64,
    epoch: usize,
) -> Vec<PlannedStep> {
    let order = |n: usize, pool: Pool, pass: usize| {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut tags = vec![epoch as u64, pool as u64];
        if pass > 0 {
            tags.push(pass as u64);
        }
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            shuffle_seed,
            &tags,
        )));
        idx.into_iter()
            .map(move |mesh| PlannedStep { pool, mesh, pass })
    };
    if l == 0 || u == 0 {
        return order(l, Pool::Labeled, 0)
            .chain(order(u, Pool::Unlabeled, 0))
            .collect();
    }
    match schedule {
        Schedule::Alternate => {
            let rounds = l.max(u);
            let cycled = |n: usize, pool: Pool| -> Vec<PlannedStep> {
                (0..rounds.div_ceil(n))
                    .flat_map(|pass| order(n, pool, pass))
                    .take(rounds)
                    .collect()
            };
            let (lab, unl) = (cycled(l, Pool::Labeled), cycled(u, Pool::Unlabeled));
            unl.into_iter().zip(lab).flat_map(|(a, b)| [a, b]).collect()
        }
        Schedule::Interleave => {
            // unlabeled step k sits at (k + 1) / (u + 1), labeled step j at (j + 1) / l
            let lab: Vec<_> = order(l, Pool::Labeled, 0).collect();
            let unl: Vec<_> = order(u, Pool::Unlabeled, 0).collect();
            let mut plan = Vec::with_capacity(l + u);
            let (mut j, mut k) = (0, 0);
            while j < l || k < u {
                if k < u && (j == l || (k + 1) * l <= (j + 1) * (u + 1)) {
                    plan.push(unl[k]);
                    k += 1;
                } else {
                    plan.push(lab[j]);
                    j += 1;
                }
            }
            plan
        }
    }
}

fn step_features(
    mesh: &TriangleMesh,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FaceFeatures, HarnessError> {
    if !cfg.augment {
        return Ok(extract_features(mesh));
    }
    let params = cfg.augment_ranges.sample(seed);
    Ok(extract_features(&augment(mesh, &params)?))
}

/// Trains one mesh per step. Labeled steps minimize the dice loss;
/// unlabeled steps minimize `lambda` times the contrastive loss on the
/// embedding head. With `lambda == 0` unlabeled steps leave parameters and
/// optimizer state untouched.
pub fn train(split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutput, HarnessError> {
    cfg.validate()?;
    let classes = split.num_classes().ok_or_else(|| {
        HarnessError::InvalidDataset("no labeled or test arches, class count unknown".into())
    })?;
    if split.labeled.is_empty() && split.unlabeled.is_empty() {
        return Err(HarnessError::InvalidDataset(
            "both training pools are empty".into(),
        ));
    }
    let dims = cfg.dims(classes as usize);
    let mut params = ModelParams::init(dims, cfg.init_seed);
    let mut optim = OptimState::new(cfg.optimizer.clone(), dims);
    let mut history = Vec::new();
    let lambda = cfg.loss.lambda;
    let (l, u) = (split.labeled.len(), split.unlabeled.len());

    for epoch in 0..cfg.epochs {
        for planned in epoch_plan(cfg.schedule, l, u, cfg.shuffle_seed, epoch) {
            let PlannedStep { pool, mesh, .. } = planned;
            let step = history.len();
            let tags = step_tags(epoch, &planned);
            let aug_seed = derive_seed(cfg.augment_seed, &tags);
            let record = |sup, self_sup, total, applied| StepRecord {
                step,
                epoch,
                pool,
                mesh,
                sup,
                self_sup,
                total,
                applied,
            };
            match pool {
                Pool::Labeled => {
                    let arch = &split.labeled[mesh];
                    let feats = step_features(&arch.mesh, cfg, aug_seed)?;
                    let (pred, cache) = forward_cached(&params, feats.view())?;
                    let dice = generalized_dice_loss(
                        pred.probs.view(),
                        arch.labels.labels(),
                        cfg.loss.dice_epsilon,
                    )?;
                    let total = joint_loss(Some(dice.value), None, lambda)?;
                    if !total.is_finite() {
                        return Err(HarnessError::NonFiniteLoss {
                            step,
                            epoch,
                            seed: aug_seed,
                        });
                    }
                    let d_embed = Array2::zeros(pred.embed.dim());
                    let grads = backward(&params, &cache, dice.grad.view(), d_embed.view())?;
                    update(&mut params, &grads, &mut optim)?;
                    history.push(record(Some(dice.value), None, total, true));
                }
                Pool::Unlabeled => {
                    let arch = &split.unlabeled[mesh];
                    let feats = step_features(&arch.mesh, cfg, aug_seed)?;
                    let (pred, cache) = forward_cached(&params, feats.view())?;
                    let pair_seed = derive_seed(cfg.loss.seed, &tags);
                    let loss_cfg = JointLossConfig {
                        seed: pair_seed,
                        ..cfg.loss.clone()
                    };
                    let con = contrastive_loss(pred.embed.view(), &arch.components, &loss_cfg)?;
                    let total = joint_loss(None, Some(con.value), lambda)?;
                    if !total.is_finite() {
                        return Err(HarnessError::NonFiniteLoss {
                            step,
                            epoch,
                            seed: pair_seed,
                        });
                    }
                    let applied = lambda != 0.0;
                    if applied {
                        let d_probs = Array2::zeros(pred.probs.dim());
                        let d_embed = con.grad * lambda;
                        let grads = backward(&params, &cache, d_probs.view(), d_embed.view())?;
                        update(&mut params, &grads, &mut optim)?;
                    }
                    history.push(record(None, Some(con.value), total, applied));
                }
            }
        }
    }
    Ok(TrainOutput {
        params,
        optim,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pools(plan: &[PlannedStep]) -> Vec<Pool> {
        plan.iter().map(|p| p.pool).collect()
    }

    fn meshes(plan: &[PlannedStep], pool: Pool) -> Vec<usize> {
        plan.iter()
            .filter(|p| p.pool == pool)
            .map(|p| p.mesh)
            .collect()
    }

    #[test]
    fn alternate_cycles_the_smaller_pool() {
        use Pool::*;
        let plan = epoch_plan(Schedule::Alternate, 2, 5, 0, 0);
        assert_eq!(plan.len(), 10);
        assert_eq!(pools(&plan), [Unlabeled, Labeled].repeat(5));
        let mut unl = meshes(&plan, Unlabeled);
        unl.sort();
        assert_eq!(unl, vec![0, 1, 2, 3, 4]);
        let lab: Vec<_> = plan.iter().filter(|p| p.pool == Labeled).collect();
        assert_eq!(
            lab.iter().map(|p| p.pass).collect::<Vec<_>>(),
            vec![0, 0, 1, 1, 2]
        );
        // every full pass visits each labeled mesh once
        let mut first = meshes(&plan, Labeled)[..2].to_vec();
        first.sort();
        assert_eq!(first, vec![0, 1]);
    }

    #[test]
    fn interleave_spreads_and_ends_labeled() {
        use Pool::*;
        let plan = epoch_plan(Schedule::Interleave, 2, 8, 0, 0);
        assert_eq!(
            pools(&plan),
            vec![
                Unlabeled, Unlabeled, Unlabeled, Unlabeled, Labeled, Unlabeled, Unlabeled,
                Unlabeled, Unlabeled, Labeled
            ]
        );
        let mut seen = meshes(&plan, Unlabeled);
        seen.sort();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
        assert!(plan.iter().all(|p| p.pass == 0));
    }

    #[test]
    fn first_labeled_pass_independent_of_unlabeled_count() {
        for schedule in [Schedule::Alternate, Schedule::Interleave] {
            let alone = meshes(&epoch_plan(schedule, 5, 0, 9, 3), Pool::Labeled);
            for u in [1, 3, 7, 12] {
                let mixed = meshes(&epoch_plan(schedule, 5, u, 9, 3), Pool::Labeled);
                assert_eq!(mixed[..5], alone[..], "{schedule:?} u={u}");
            }
        }
    }

    #[test]
    fn single_pools() {
        for schedule in [Schedule::Alternate, Schedule::Interleave] {
            assert!(epoch_plan(schedule, 0, 3, 0, 0)
                .iter()
                .all(|p| p.pool == Pool::Unlabeled));
            assert_eq!(epoch_plan(schedule, 3, 0, 0, 0).len(), 3);
            assert!(epoch_plan(schedule, 0, 0, 0, 0).is_empty());
        }
    }

    #[test]
    fn schedule_parses_lowercase() {
        let cfg: TrainConfig = toml::from_str("schedule = \"interleave\"").unwrap();
        assert_eq!(cfg.schedule, Schedule::Interleave);
        assert!(toml::from_str::<TrainConfig>("schedule = \"random\"").is_err());
    }

    #[test]
    fn config_rejects_zero_epochs() {
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
