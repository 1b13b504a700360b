use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{mrr, recall_at_k, ScoreMatrix, ScoreSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    #[default]
    #[serde(rename = "r@5")]
    R5,
    #[serde(rename = "r@8")]
    R8,
    #[serde(rename = "mrr")]
    Mrr,
    /// R@5 + R@8 + MRR.
    #[serde(rename = "sum")]
    Sum,
}

impl Objective {
    pub fn evaluate(self, ranks: &[usize]) -> f64 {
        match self {
            Objective::R5 => recall_at_k(ranks, 5),
            Objective::R8 => recall_at_k(ranks, 8),
            Objective::Mrr => mrr(ranks),
            Objective::Sum => recall_at_k(ranks, 5) + recall_at_k(ranks, 8) + mrr(ranks),
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r@5" | "r5" => Ok(Objective::R5),
            "r@8" | "r8" => Ok(Objective::R8),
            "mrr" => Ok(Objective::Mrr),
            "sum" => Ok(Objective::Sum),
            other => Err(Error::Parameter(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub objective: Objective,
    /// Objective evaluations per search round.
    pub budget: usize,
    pub seed: u64,
    /// Runs one extra round where the first fused matrix joins the three
    /// module matrices as a fourth stream.
    pub iterative: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            objective: Objective::R5,
            budget: 200,
            seed: 0,
            iterative: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub w: [f64; 3],
}

impl FusionWeights {
    pub fn new(w: [f64; 3]) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite()) || w.iter().all(|&v| v == 0.0) {
            return Err(Error::Parameter(format!("fusion weights {w:?} need a nonzero finite entry")));
        }
        Ok(Self { w })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub weights: FusionWeights,
    pub objective: Objective,
    pub value: f64,
    pub evaluations: usize,
}

/// Weighted entrywise sum of score sets with identical layouts.
pub fn fuse(sets: &[&ScoreSet], w: &[f64]) -> Result<ScoreSet> {
    if sets.is_empty() || sets.len() != w.len() {
        return Err(Error::Parameter(format!("{} score sets for {} weights", sets.len(), w.len())));
    }
    if let Some(bad) = sets.iter().find(|s| !s.same_layout(sets[0])) {
        return Err(Error::Parameter(format!(
            "{} and {} cover different sessions or candidates",
            sets[0].source, bad.source
        )));
    }
    let matrices = (0..sets[0].matrices.len())
        .map(|i| {
            let base = &sets[0].matrices[i];
            let mut values = &base.values * w[0];
            for (s, &wk) in sets.iter().zip(w).skip(1) {
                values.scaled_add(wk, &s.matrices[i].values);
            }
            ScoreMatrix { values, ..base.clone() }
        })
        .collect();
    Ok(ScoreSet {
        source: "fused".into(),
        matrices,
    })
}

fn objective_of(sets: &[&ScoreSet], w: &[f64], objective: Objective) -> Result<f64> {
    Ok(objective.evaluate(&fuse(sets, w)?.ranks()))
}

/// Seeded black-box search over `[0, 1]^k`: cube corners and centre first,
/// then alternating uniform samples and Gaussian steps around the incumbent.
/// Ties keep the earliest trial.
fn search(sets: &[&ScoreSet], objective: Objective, budget: usize, seed: u64) -> Result<(Vec<f64>, f64, usize)> {
    let budget = budget.max(1);
    let k = sets.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials: Vec<Vec<f64>> = (1..1usize << k)
        .map(|mask| (0..k).map(|i| if mask >> i & 1 == 1 { 1.0 } else { 0.0 }).collect())
        .collect();
    trials.push(vec![0.5; k]);

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluations = 0;
    let mut t = 0;
    while t < budget {
        let w: Vec<f64> = if t < trials.len() {
            trials[t].clone()
        } else if t % 2 == 0 {
            (0..k).map(|_| rng.gen::<f64>()).collect()
        } else {
            let sigma = 0.25 * (1.0 - t as f64 / budget as f64) + 0.02;
            let noise = Normal::new(0.0, sigma).expect("positive sigma");
            let (inc, _) = best.as_ref().expect("corners evaluated first");
            inc.iter().map(|&x| (x + noise.sample(&mut rng)).clamp(0.0, 1.0)).collect()
        };
        t += 1;
        if w.iter().all(|&x| x == 0.0) {
            continue;
        }
        let v = objective_of(sets, &w, objective)?;
        evaluations += 1;
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((w, v));
        }
    }
    let (w, v) = best.expect("budget is at least one");
    Ok((w, v, evaluations))
}

/// Finds fusion weights maximizing `config.objective` on the given score sets.
pub fn search_fusion_weights(sets: [&ScoreSet; 3], config: &FusionConfig) -> Result<FusionResult> {
    if sets[0].sessions() == 0 {
        return Err(Error::Empty("validation score matrices".into()));
    }
    let (w, mut value, mut evaluations) = search(&sets, config.objective, config.budget, config.seed)?;
    let mut weights = [w[0], w[1], w[2]];
    if config.iterative {
        let first = fuse(&sets, &weights)?;
        let streams = [sets[0], sets[1], sets[2], &first];
        let (w4, v4, n) = search(&streams, config.objective, config.budget, config.seed.wrapping_add(1))?;
        evaluations += n;
        if v4 > value {
            // w4[3]·(Σ w_i S_i) + Σ w4_i S_i collapses to three weights
            weights = [0, 1, 2].map(|i| w4[i] + w4[3] * weights[i]);
            value = v4;
        }
    }
    Ok(FusionResult {
        weights: FusionWeights::new(weights)?,
        objective: config.objective,
        value,
        evaluations,
    })
}
