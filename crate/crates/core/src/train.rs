//! Optimization loop and evaluation metrics.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::MolGraph;
use crate::encoder::{LATENT_DIM, POOL_DIM};
use crate::numkernel::{KernelError, ParamStore, Scalar, Tensor};
use crate::vaemodel::{self, LossBreakdown, LossWeights, ModelError, ModelParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("molecule {index} has {atoms} atoms, limit is {max}")]
    MoleculeTooLarge {
        index: usize,
        atoms: usize,
        max: usize,
    },
    #[error("non-finite value in epoch {epoch} at molecule {index} ({smiles}): {source}")]
    NonFinite {
        epoch: usize,
        index: usize,
        smiles: String,
        source: KernelError,
    },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} molecules, got {found}")]
    TooFewMolecules { needed: usize, found: usize },
    #[error("labels ({labels}) and molecules ({molecules}) differ in count")]
    LabelCount { labels: usize, molecules: usize },
    #[error("probe system is singular")]
    SingularSystem,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub max_atoms: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            beta: 1e-3,
            lambda: 1.0,
            seed: 0,
            max_atoms: 20,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.beta.is_finite()
            && self.beta >= 0.0
            && self.lambda.is_finite()
            && self.lambda >= 0.0)
        {
            return bad("loss weights must be finite and non-negative");
        }
        if self.max_atoms == 0 {
            return bad("max atoms must be positive");
        }
        if !self.threshold.is_finite() {
            return bad("threshold must be finite");
        }
        Ok(())
    }
}

/// One molecule with its training target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub smiles: String,
    pub mol: MolGraph,
    pub label: f64,
}

/// Adam moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One Adam update (0.9, 0.999, 1e-8, bias-corrected) of every parameter.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut AdamState<T>,
    lr: T,
) -> Result<(), KernelError> {
    params.ensure_same_layout(grads)?;
    params.ensure_same_layout(&state.m)?;
    let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
    state.step += 1;
    let t = state.step as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let p = p.data_mut();
        let (m, v) = (m.data_mut(), v.data_mut());
        for (k, &gk) in g.data().iter().enumerate() {
            m[k] = b1 * m[k] + (T::one() - b1) * gk;
            v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] = p[k] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput<T> {
    pub params: ModelParams<T>,
    /// Per-epoch means of the loss terms, evaluated before each update.
    pub history: Vec<LossBreakdown<T>>,
}

/// Minibatch Adam on the joint loss.
///
/// Every random draw comes from one generator seeded with `config.seed`:
/// weight initialization, then per epoch a shuffle followed by the noise of
/// each molecule in visiting order. Batch gradients are computed in
/// parallel and summed in batch order, so results do not depend on the
/// thread count.
pub fn train<T: Scalar>(
    samples: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutput<T>, TrainError> {
    train_with(samples, config, |_, _| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Scalar>(
    samples: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &LossBreakdown<T>),
) -> Result<TrainOutput<T>, TrainError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for (index, s) in samples.iter().enumerate() {
        let atoms = s.mol.atom_count();
        if atoms > config.max_atoms {
            return Err(TrainError::MoleculeTooLarge {
                index,
                atoms,
                max: config.max_atoms,
            });
        }
        if atoms == 0 {
            return Err(ModelError::EmptyMolecule.into());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::<T>::init(rng.random());
    let mut adam = AdamState::new(params.store());
    let weights = LossWeights {
        beta: T::lit(config.beta),
        lambda: T::lit(config.lambda),
    };
    let lr = T::lit(config.learning_rate);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [T::zero(); 4];
        for batch in order.chunks(config.batch_size) {
            let noise: Vec<Tensor<T>> = batch
                .iter()
                .map(|&i| {
                    Tensor::from_fn(samples[i].mol.atom_count(), LATENT_DIM, |_, _| {
                        T::lit(rng.sample::<f64, _>(StandardNormal))
                    })
                })
                .collect();
            let results: Vec<_> = batch
                .par_iter()
                .zip(noise.par_iter())
                .map(|(&i, eps)| {
                    let s = &samples[i];
                    vaemodel::loss_and_gradient(&s.mol, T::lit(s.label), &params, eps, weights)
                        .map_err(|e| attach(e, epoch, i, s))
                })
                .collect();
            let mut grad = params.store().zeros_like();
            for result in results {
                let (loss, g) = result?;
                sums[0] = sums[0] + loss.recon;
                sums[1] = sums[1] + loss.kl;
                sums[2] = sums[2] + loss.side_mse;
                sums[3] = sums[3] + loss.total;
                grad.add_scaled(&g, T::one())?;
            }
            let inv = T::one() / T::lit(batch.len() as f64);
            for (_, t) in grad.iter_mut() {
                t.data_mut().iter_mut().for_each(|v| *v = *v * inv);
            }
            adam_step(params.store_mut(), &grad, &mut adam, lr)?;
        }
        let n = T::lit(samples.len() as f64);
        let mean = LossBreakdown {
            recon: sums[0] / n,
            kl: sums[1] / n,
            side_mse: sums[2] / n,
            total: sums[3] / n,
        };
        on_epoch(epoch, &mean);
        history.push(mean);
    }
    Ok(TrainOutput { params, history })
}

fn attach(e: ModelError, epoch: usize, index: usize, s: &Sample) -> TrainError {
    match e {
        ModelError::Kernel(source @ KernelError::NonFinite { .. }) => TrainError::NonFinite {
            epoch,
            index,
            smiles: s.smiles.clone(),
            source,
        },
        other => other.into(),
    }
}

/// Fraction of molecules whose mean-latent reconstruction passes the
/// valence check. An empty set gives 0.
pub fn evaluate_validity<T: Scalar>(
    params: &ModelParams<T>,
    mols: &[&MolGraph],
    threshold: T,
) -> Result<f64, ModelError> {
    if mols.is_empty() {
        return Ok(0.0);
    }
    let valid: Vec<bool> = mols
        .par_iter()
        .map(|m| vaemodel::reconstruct(m, params, threshold).map(|(_, r)| r.valid))
        .collect::<Result<_, _>>()?;
    Ok(valid.iter().filter(|&&v| v).count() as f64 / mols.len() as f64)
}

/// ROC area of edge probabilities against bonds over all pairs `i < j`.
pub fn evaluate_edge_auc<T: Scalar>(
    params: &ModelParams<T>,
    mols: &[&MolGraph],
) -> Result<f64, ModelError> {
    let per_mol: Vec<Vec<(f64, bool)>> = mols
        .par_iter()
        .map(|m| {
            let p = vaemodel::edge_probabilities(m, params)?;
            let n = m.atom_count();
            let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
            for i in 0..n {
                for j in i + 1..n {
                    out.push((p.get(i, j).as_f64(), m.bond_between(i, j).is_some()));
                }
            }
            Ok(out)
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(roc_auc(&per_mol.concat()))
}

/// Mann-Whitney ROC area with midranks for ties. Returns 0.5 when either
/// class is empty.
pub fn roc_auc(scored: &[(f64, bool)]) -> f64 {
    let positives = scored.iter().filter(|s| s.1).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return 0.5;
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start;
        while end < sorted.len() && sorted[end].0 == sorted[start].0 {
            end += 1;
        }
        // ranks start..end (1-based start+1..=end) share their mean
        let mid = (start + 1 + end) as f64 / 2.0;
        rank_sum += mid * sorted[start..end].iter().filter(|s| s.1).count() as f64;
        start = end;
    }
    let p = positives as f64;
    (rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64)
}

/// Linear read-out of a property from pooled vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Coefficient of determination on the held-out fifth.
    pub r2: f64,
    pub train_r2: f64,
    pub train_size: usize,
    pub test_size: usize,
}

impl ProbeFit {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.intercept
            + self
                .weights
                .iter()
                .zip(features)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    }
}

pub const PROBE_RIDGE: f64 = 1e-6;

/// Ridge regression with intercept from pooled vectors to `targets`, fit on
/// a seeded 80% split and scored on the rest.
pub fn fit_probe<T: Scalar>(
    params: &ModelParams<T>,
    mols: &[&MolGraph],
    targets: &[f64],
    seed: u64,
) -> Result<ProbeFit, TrainError> {
    if targets.len() != mols.len() {
        return Err(TrainError::LabelCount {
            labels: targets.len(),
            molecules: mols.len(),
        });
    }
    if mols.len() < 2 {
        return Err(TrainError::TooFewMolecules {
            needed: 2,
            found: mols.len(),
        });
    }
    let features: Vec<Vec<f64>> = mols
        .par_iter()
        .map(|m| {
            Ok(vaemodel::embed(m, params)?
                .data()
                .iter()
                .map(|v| v.as_f64())
                .collect())
        })
        .collect::<Result<_, ModelError>>()?;
    let mut order: Vec<usize> = (0..mols.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_size = ((mols.len() as f64 * 0.2).round() as usize).clamp(1, mols.len() - 1);
    let (test, train) = order.split_at(test_size);
    let fit = ridge(&features, targets, train)?;
    let r2 = |rows: &[usize]| {
        let mean = rows.iter().map(|&i| targets[i]).sum::<f64>() / rows.len() as f64;
        let ss_tot: f64 = rows.iter().map(|&i| (targets[i] - mean).powi(2)).sum();
        let ss_res: f64 = rows
            .iter()
            .map(|&i| (targets[i] - fit.predict(&features[i])).powi(2))
            .sum();
        if ss_tot == 0.0 {
            1.0
        } else {
            1.0 - ss_res / ss_tot
        }
    };
    Ok(ProbeFit {
        r2: r2(test),
        train_r2: r2(train),
        train_size: train.len(),
        test_size,
        ..fit
    })
}

fn ridge(features: &[Vec<f64>], targets: &[f64], rows: &[usize]) -> Result<ProbeFit, TrainError> {
    let n = rows.len() as f64;
    let mut x_mean = vec![0.0; POOL_DIM];
    for &i in rows {
        x_mean
            .iter_mut()
            .zip(&features[i])
            .for_each(|(m, x)| *m += x / n);
    }
    let y_mean = rows.iter().map(|&i| targets[i]).sum::<f64>() / n;
    let x = DMatrix::from_fn(rows.len(), POOL_DIM, |r, c| {
        features[rows[r]][c] - x_mean[c]
    });
    let y = DVector::from_fn(rows.len(), |r, _| targets[rows[r]] - y_mean);
    let gram = x.tr_mul(&x) + DMatrix::identity(POOL_DIM, POOL_DIM) * PROBE_RIDGE;
    let w = gram
        .cholesky()
        .ok_or(TrainError::SingularSystem)?
        .solve(&x.tr_mul(&y));
    let weights: Vec<f64> = w.iter().copied().collect();
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(ProbeFit {
        weights,
        intercept,
        r2: 0.0,
        train_r2: 0.0,
        train_size: rows.len(),
        test_size: 0,
    })
}

/// Summary of a model on one set of molecules.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub molecules: usize,
    pub validity_fraction: f64,
    pub edge_auc: f64,
    /// Side-predictor error against the sample labels.
    pub property_mse: f64,
    pub property_r2: f64,
}

pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    samples: &[Sample],
    threshold: T,
) -> Result<EvalReport, ModelError> {
    let mols: Vec<&MolGraph> = samples.iter().map(|s| &s.mol).collect();
    let predictions: Vec<f64> = mols
        .par_iter()
        .map(|m| vaemodel::predict(m, params).map(|v| v.as_f64()))
        .collect::<Result<_, _>>()?;
    let n = samples.len().max(1) as f64;
    let mean = samples.iter().map(|s| s.label).sum::<f64>() / n;
    let ss_res: f64 = samples
        .iter()
        .zip(&predictions)
        .map(|(s, p)| (s.label - p).powi(2))
        .sum();
    let ss_tot: f64 = samples.iter().map(|s| (s.label - mean).powi(2)).sum();
    Ok(EvalReport {
        molecules: samples.len(),
        validity_fraction: evaluate_validity(params, &mols, threshold)?,
        edge_auc: evaluate_edge_auc(params, &mols)?,
        property_mse: ss_res / n,
        property_r2: if ss_tot == 0.0 {
            1.0
        } else {
            1.0 - ss_res / ss_tot
        },
    })
}
