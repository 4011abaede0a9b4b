//! Out-of-fold training.
//!
//! Features are extracted once, before any split. Each example's raw score
//! comes from the one fold model whose training rows exclude it; a single
//! calibrator is then fitted on all (raw score, label) pairs, and a final
//! model is refitted on every row for deployment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationMethod, Calibrator};
use crate::corpus::FeatureMatrix;
use crate::models::{self, ClassifierKind, LinearModel, DEFAULT_C};
use crate::{Error, Result};

pub const DEFAULT_FOLDS: usize = 5;

/// Fold index per example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

fn check_folds(n: usize, k: usize) -> Result<()> {
    if k < 2 || n < k {
        return Err(Error::InvalidArgument(format!(
            "K-fold needs n >= k >= 2 (n = {n}, k = {k})"
        )));
    }
    Ok(())
}

/// Shuffled, unstratified K-fold: a seeded permutation cut into contiguous
/// runs, the first `n mod k` runs one element longer.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    check_folds(n, k)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut fold_of = vec![0; n];
    let (base, extra) = (n / k, n % k);
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &perm[pos..pos + size] {
            fold_of[i] = fold;
        }
        pos += size;
    }
    Ok(FoldAssignment {
        k,
        seed,
        stratified: false,
        fold_of,
    })
}

/// Stratified variant: each class is shuffled separately, the classes are
/// concatenated and dealt round-robin, so every fold gets its share of both.
pub fn stratified_kfold_split(labels: &[bool], k: usize, seed: u64) -> Result<FoldAssignment> {
    check_folds(labels.len(), k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = Vec::with_capacity(labels.len());
    for class in [false, true] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut fold_of = vec![0; labels.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment {
        k,
        seed,
        stratified: true,
        fold_of,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofConfig {
    pub classifier: ClassifierKind,
    pub calibration: CalibrationMethod,
    pub k: usize,
    pub split_seed: u64,
    pub model_seed: u64,
    pub c: f64,
    pub stratified: bool,
}

impl OofConfig {
    pub fn new(classifier: ClassifierKind, calibration: CalibrationMethod) -> Self {
        Self {
            classifier,
            calibration,
            k: DEFAULT_FOLDS,
            split_seed: 0,
            model_seed: 0,
            c: DEFAULT_C,
            stratified: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldModel {
    pub fold: usize,
    /// Rows this model was trained on, ascending.
    pub train_indices: Vec<usize>,
    pub model: LinearModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OofResult {
    pub assignment: FoldAssignment,
    pub raw_scores: Vec<f64>,
    pub calibrated: Vec<f64>,
    pub calibrator: Calibrator,
    pub fold_models: Vec<FoldModel>,
    pub final_model: LinearModel,
}

impl OofResult {
    /// The model that produced example `i`'s raw score.
    pub fn scoring_model(&self, i: usize) -> &FoldModel {
        &self.fold_models[self.assignment.fold_of[i]]
    }
}

pub fn run_oof(features: &FeatureMatrix, config: &OofConfig) -> Result<OofResult> {
    features.validate()?;
    let n = features.len();
    let assignment = if config.stratified {
        stratified_kfold_split(&features.labels, config.k, config.split_seed)?
    } else {
        kfold_split(n, config.k, config.split_seed)?
    };

    let mut train_sets = Vec::with_capacity(config.k);
    for fold in 0..config.k {
        let train: Vec<usize> = (0..n).filter(|&i| assignment.fold_of[i] != fold).collect();
        let positives = train.iter().filter(|&&i| features.labels[i]).count();
        if positives == 0 || positives == train.len() {
            return Err(Error::Stratification { fold });
        }
        train_sets.push(train);
    }

    // Folds are independent; collect() keeps them in fold order.
    let fold_models = train_sets
        .into_par_iter()
        .enumerate()
        .map(|(fold, train)| {
            let rows: Vec<Vec<f64>> = train.iter().map(|&i| features.rows[i].clone()).collect();
            let labels: Vec<bool> = train.iter().map(|&i| features.labels[i]).collect();
            let model = models::fit(
                config.classifier,
                &rows,
                &labels,
                config.c,
                config.model_seed,
            )?;
            Ok(FoldModel {
                fold,
                train_indices: train,
                model,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let raw_scores = (0..n)
        .map(|i| {
            fold_models[assignment.fold_of[i]]
                .model
                .decision_score(&features.rows[i])
        })
        .collect::<Result<Vec<_>>>()?;

    let calibrator = Calibrator::fit(config.calibration, &raw_scores, &features.labels)?;
    let calibrated = raw_scores.iter().map(|&s| calibrator.apply(s)).collect();

    let final_model = models::fit(
        config.classifier,
        &features.rows,
        &features.labels,
        config.c,
        config.model_seed,
    )?;

    Ok(OofResult {
        assignment,
        raw_scores,
        calibrated,
        calibrator,
        fold_models,
        final_model,
    })
}
