//! Hinge-loss training with batch-hard negatives, and checkpoints.

pub mod checkpoint;

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{config_hash, load_checkpoint, read_manifest, save_checkpoint, CheckpointManifest, CHECKPOINT_VERSION};

use crate::data::{Prepared, SessionBatch};
use crate::encoders::{apply_updates, AugmentParams, Mode};
use crate::error::{Error, Result};
use crate::eval::{recall_at_k, score_sessions, ScoreSet};
use crate::nn::{Adam, Graph, Mat};
use crate::scoring::{Model, ScoreInputs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    /// Image augmentation for training batches; `None` disables it.
    pub augment: Option<AugmentParams>,
    /// Re-estimate batch-norm statistics over the training images before
    /// each validation pass.
    pub recalibrate_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: 1e-4,
            margin: 0.2,
            batch_size: 32,
            seed: 0,
            grad_clip: None,
            augment: Some(AugmentParams::default()),
            recalibrate_norm: true,
        }
    }
}

impl TrainConfig {
    // negated comparisons so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !(self.learning_rate > 0.0) || self.batch_size < 2 || self.epochs == 0 {
            return Err(Error::Parameter(format!(
                "training needs margin > 0, lr > 0, batch ≥ 2, epochs ≥ 1; got {self:?}"
            )));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// `max(0, margin + s_neg − s_pos)`.
pub fn triplet_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (margin + s_neg - s_pos).max(0.0)
}

/// Hardest negative column per anchor: the highest score among columns
/// whose target image differs from the anchor's (earliest on ties).
/// `None` when every other column shares the anchor's target.
pub fn hardest_negatives(scores: &Mat, targets: &[usize]) -> Vec<Option<usize>> {
    (0..scores.nrows())
        .map(|i| {
            let mut best: Option<usize> = None;
            for j in 0..scores.ncols() {
                if j == i || targets[j] == targets[i] {
                    continue;
                }
                if best.is_none_or(|b| scores[[i, j]] > scores[[i, b]]) {
                    best = Some(j);
                }
            }
            best
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinedBatch {
    /// `(anchor, negative column, loss)` for anchors with a valid negative.
    pub triplets: Vec<(usize, usize, f64)>,
    pub skipped: Vec<usize>,
    pub mean_loss: f64,
}

/// Batch-hard hinge loss. `scores[i][j]` scores anchor `i` against the
/// target of session `j`, so column `i` is anchor `i`'s positive.
pub fn batch_hard_mine(scores: &Mat, targets: &[usize], margin: f64) -> Result<MinedBatch> {
    let b = scores.nrows();
    if b < 2 || scores.ncols() != b || targets.len() != b {
        return Err(Error::Dimension(format!(
            "batch-hard mining needs a square B×B matrix with B ≥ 2 and B targets, got {:?} and {}",
            scores.dim(),
            targets.len()
        )));
    }
    let mut triplets = Vec::new();
    let mut skipped = Vec::new();
    for (i, neg) in hardest_negatives(scores, targets).into_iter().enumerate() {
        match neg {
            Some(j) => triplets.push((i, j, triplet_loss(scores[[i, i]], scores[[i, j]], margin))),
            None => skipped.push(i),
        }
    }
    if !skipped.is_empty() {
        log::warn!("{} anchors have no negative with a different target; skipped", skipped.len());
    }
    let mean_loss = if triplets.is_empty() {
        0.0
    } else {
        triplets.iter().map(|t| t.2).sum::<f64>() / triplets.len() as f64
    };
    Ok(MinedBatch {
        triplets,
        skipped,
        mean_loss,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_r5: Option<f64>,
    pub skipped_anchors: usize,
}

pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the last epoch without validation).
    pub model: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    /// Validation scores of the kept parameters.
    pub val_scores: Option<ScoreSet>,
}

impl TrainOutcome {
    pub fn best_val_r5(&self) -> Option<f64> {
        self.history.iter().find(|e| e.epoch == self.best_epoch).and_then(|e| e.val_r5)
    }
}

/// One optimization step on a batch; returns the mean hinge loss and the
/// number of skipped anchors, or `None` if no anchor had a negative.
fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    prepared: &Prepared,
    batch_ids: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(f64, usize)>> {
    let sessions: Vec<_> = batch_ids.iter().map(|&i| &prepared.sessions[i]).collect();
    let targets = sessions.iter().map(|s| s.target()).collect::<Result<Vec<_>>>()?;
    let batch = SessionBatch::new(&sessions)?;
    let mut g = Graph::new();
    let mut updates = Vec::new();
    let images = if model.needs_images() {
        let mut ids = batch.turn_images.clone();
        ids.extend(&targets);
        let augment = cfg.augment.as_ref().map(|a| (a, &mut *rng));
        model.image_rows(&mut g, prepared, &ids, Mode::Train, augment, &mut updates)?
    } else {
        None
    };
    let inputs = ScoreInputs {
        batch: &batch,
        candidates: &targets,
        images,
        attributes: &prepared.attributes,
    };
    let scores = model.score(&mut g, &inputs)?;
    let negatives = hardest_negatives(g.value(scores), &targets);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (i, n) in negatives.iter().enumerate() {
        if let Some(j) = n {
            pos.push((i, i));
            neg.push((i, *j));
        }
    }
    let skipped = targets.len() - pos.len();
    if skipped > 0 {
        log::warn!("{skipped} anchors share their target with the whole batch; skipped");
    }
    if pos.is_empty() {
        return Ok(None);
    }
    let sp = g.pick_entries(scores, Rc::new(pos));
    let sn = g.pick_entries(scores, Rc::new(neg));
    let diff = g.sub(sn, sp);
    let hinge = g.affine(diff, 1.0, cfg.margin);
    let hinge = g.relu(hinge);
    let loss = g.mean_all(hinge);
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Diverged(format!(
            "{} loss became {value}; lower the learning rate or check the data",
            model.id
        )));
    }
    let grads = g.backward(loss).param_grads(&model.params);
    opt.step(&mut model.params, &grads);
    apply_updates(&mut model.params, updates);
    Ok(Some((value, skipped)))
}

/// Trains `model` on the `train` sessions, keeping the parameters with the
/// best validation R@5 over per-category pools.
pub fn train_module(mut model: Model, prepared: &Prepared, train: &[usize], val: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Empty("training split needs at least two sessions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate).with_clip(cfg.grad_clip);
    let mut order = train.to_vec();
    let mut norm_images: Vec<usize> = Vec::new();
    for &i in train {
        let s = &prepared.sessions[i];
        norm_images.extend(&s.turn_images);
        norm_images.extend(s.target);
    }
    norm_images.sort_unstable();
    norm_images.dedup();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model, ScoreSet)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut steps, mut skipped) = (0.0, 0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            if let Some((loss, sk)) = train_step(&mut model, &mut opt, prepared, chunk, cfg, &mut rng)? {
                total += loss;
                steps += 1;
                skipped += sk;
            }
        }
        let train_loss = if steps > 0 { total / steps as f64 } else { 0.0 };
        let val_r5 = if val.is_empty() {
            None
        } else {
            if cfg.recalibrate_norm {
                model.recalibrate_norm(prepared, &norm_images)?;
            }
            let scores = score_sessions(&model, prepared, val, None)?;
            let r5 = recall_at_k(&scores.ranks(), 5);
            if best.as_ref().is_none_or(|b| r5 > b.0) {
                best = Some((r5, epoch, model.clone(), scores));
            }
            Some(r5)
        };
        log::info!(
            "{} epoch {epoch}/{}: loss {train_loss:.4}{}",
            model.id,
            cfg.epochs,
            val_r5.map(|r| format!(", val R@5 {:.2}%", 100.0 * r)).unwrap_or_default()
        );
        history.push(EpochStats {
            epoch,
            train_loss,
            val_r5,
            skipped_anchors: skipped,
        });
    }
    Ok(match best {
        Some((_, best_epoch, model, scores)) => TrainOutcome {
            model,
            best_epoch,
            history,
            val_scores: Some(scores),
        },
        None => TrainOutcome {
            model,
            best_epoch: cfg.epochs,
            history,
            val_scores: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn triplet_loss_examples() {
        assert_eq!(triplet_loss(0.9, 0.1, 0.2), 0.0);
        assert!((triplet_loss(0.1, 0.3, 0.2) - 0.4).abs() < 1e-12);
        assert_eq!(triplet_loss(0.5, 0.25, 0.25), 0.0);
    }

    #[test]
    fn two_by_two_mining() {
        let m = Mat::from_shape_vec((2, 2), vec![0.5, 0.9, 0.2, 0.4]).unwrap();
        let mined = batch_hard_mine(&m, &[10, 11], 0.2).unwrap();
        assert!((mined.triplets[0].2 - 0.6).abs() < 1e-12);
        assert_eq!(mined.triplets[1].2, 0.0);
        assert!((mined.mean_loss - 0.3).abs() < 1e-12);
    }

    #[test]
    fn dominant_diagonal_has_zero_loss() {
        let mined = batch_hard_mine(&Mat::eye(5), &[0, 1, 2, 3, 4], 0.2).unwrap();
        assert_eq!(mined.mean_loss, 0.0);
    }

    #[test]
    fn shared_targets_are_skipped() {
        let m = Mat::from_elem((3, 3), 0.3);
        let mined = batch_hard_mine(&m, &[4, 4, 4], 0.2).unwrap();
        assert_eq!(mined.skipped, vec![0, 1, 2]);
        assert!(mined.triplets.is_empty());
        assert!(batch_hard_mine(&Mat::zeros((1, 1)), &[0], 0.2).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            margin: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative_and_one_lipschitz(p in -2.0f64..2.0, n in -2.0f64..2.0, m in 0.01f64..1.0, h in 1e-6f64..1e-3) {
            let l = triplet_loss(p, n, m);
            prop_assert!(l >= 0.0);
            prop_assert!((triplet_loss(p + h, n, m) - l).abs() / h <= 1.0 + 1e-9);
            prop_assert!((triplet_loss(p, n + h, m) - l).abs() / h <= 1.0 + 1e-9);
        }

        #[test]
        fn perfect_scorer_has_zero_loss(b in 2usize..8, gap in 0.01f64..1.0) {
            let m = Mat::from_shape_fn((b, b), |(i, j)| if i == j { 1.0 } else { 1.0 - gap });
            let targets: Vec<usize> = (0..b).collect();
            prop_assert_eq!(batch_hard_mine(&m, &targets, gap * 0.5).unwrap().mean_loss, 0.0);
        }
    }
}
