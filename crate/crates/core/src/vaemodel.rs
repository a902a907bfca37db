//! Latent sampling, the inner-product decoder, the property head and the
//! joint loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chem::{
    adjacency_tensor, check_valence, lowest_feasible_h, node_features, AdjacencyTensor, BondType,
    BuildError, MolGraph, ValidityReport, FEATURE_WIDTH, NUM_RELATIONS,
};
use crate::encoder::{self, EncoderWeights, RelationOperators, HIDDEN_DIM, LATENT_DIM, POOL_DIM};
use crate::numkernel::{KernelError, ParamStore, Scalar, Tape, Tensor, Var};

pub const SIDE_HIDDEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("molecule has no atoms")]
    EmptyMolecule,
    #[error("parameter `{0}` is missing")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unexpected parameter `{0}`")]
    UnexpectedParam(String),
}

/// Name and `(rows, cols)` of every learnable tensor, in name order.
pub fn param_layout() -> Vec<(String, usize, usize)> {
    let mut layout = Vec::new();
    for (l, prefix) in encoder::LAYER_PREFIXES.iter().enumerate() {
        let (rows, cols) = if l < 2 {
            (HIDDEN_DIM, HIDDEN_DIM)
        } else {
            (HIDDEN_DIM, LATENT_DIM)
        };
        for r in (0..NUM_RELATIONS).map(Some).chain([None]) {
            layout.push((encoder::weight_name(prefix, r), rows, cols));
        }
    }
    layout.push((encoder::POOL_WEIGHT.to_string(), LATENT_DIM, POOL_DIM));
    layout.push((SIDE_M1.to_string(), POOL_DIM, SIDE_HIDDEN));
    layout.push((SIDE_B1.to_string(), 1, SIDE_HIDDEN));
    layout.push((SIDE_M2.to_string(), SIDE_HIDDEN, 1));
    layout.push((SIDE_B2.to_string(), 1, 1));
    layout.sort();
    layout
}

const SIDE_M1: &str = "side.m1";
const SIDE_B1: &str = "side.b1";
const SIDE_M2: &str = "side.m2";
const SIDE_B2: &str = "side.b2";

/// Encoder, pooling and property-head weights. The decoder has none.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    store: ParamStore<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform weights and zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, rows, cols) in param_layout() {
            let tensor = if name.starts_with("side.b") {
                Tensor::zeros(rows, cols)
            } else {
                let s = (6.0 / (rows + cols) as f64).sqrt();
                Tensor::from_fn(rows, cols, |_, _| T::lit(rng.random_range(-s..s)))
            };
            store
                .insert(&name, tensor)
                .expect("layout names are unique");
        }
        ModelParams { store }
    }

    pub fn zeros() -> Self {
        let mut store = ParamStore::new();
        for (name, rows, cols) in param_layout() {
            store
                .insert(&name, Tensor::zeros(rows, cols))
                .expect("layout names are unique");
        }
        ModelParams { store }
    }

    /// Wraps a store after checking it holds exactly the model layout.
    pub fn from_store(store: ParamStore<T>) -> Result<Self, ModelError> {
        let layout = param_layout();
        for (name, rows, cols) in &layout {
            let t = store
                .get(name)
                .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != [*rows, *cols] {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: vec![*rows, *cols],
                    found: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = store
            .names()
            .find(|n| !layout.iter().any(|(l, _, _)| l == n))
        {
            return Err(ModelError::UnexpectedParam(extra.to_string()));
        }
        Ok(ModelParams { store })
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    /// Mutable access to the values; names and shapes must be left intact.
    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore<T> {
        self.store
    }
}

/// Weights of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub beta: T,
    pub lambda: T,
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights {
            beta: T::one(),
            lambda: T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub recon: T,
    pub kl: T,
    pub side_mse: T,
    pub total: T,
}

/// `Z = Mu + exp(LogStd) * noise`.
pub fn sample_latent<'t, T: Scalar>(
    mu: Var<'t, T>,
    log_std: Var<'t, T>,
    noise: Var<'t, T>,
) -> Result<Var<'t, T>, KernelError> {
    mu.add(log_std.exp()?.hadamard(noise)?)
}

/// Edge probabilities `logistic(z_i . z_j)`, `N x N`.
pub fn decode_adjacency<'t, T: Scalar>(z: Var<'t, T>) -> Result<Var<'t, T>, KernelError> {
    edge_logits(z)?.logistic()
}

/// Pre-activation scores `z_i . z_j`.
pub fn edge_logits<'t, T: Scalar>(z: Var<'t, T>) -> Result<Var<'t, T>, KernelError> {
    z.matmul(z.transpose()?)
}

/// KL divergence of the diagonal Gaussian posterior from the standard normal.
pub fn kl_term<'t, T: Scalar>(
    mu: Var<'t, T>,
    log_std: Var<'t, T>,
) -> Result<Var<'t, T>, KernelError> {
    let two_s = log_std.scale(T::lit(2.0))?;
    mu.hadamard(mu)?
        .add(two_s.exp()?)?
        .sub(two_s)?
        .offset(-T::one())?
        .scale(T::lit(0.5))?
        .sum()
}

/// 0/1 bond indicator, bond types collapsed.
pub fn edge_target<T: Scalar>(adjacency: &AdjacencyTensor) -> Tensor<T> {
    let n = adjacency.size();
    Tensor::from_fn(n, n, |i, j| {
        if adjacency.bonded(i, j) {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Mean binary cross-entropy over the pairs `i < j`.
pub fn recon_bce<'t, T: Scalar>(
    probs: Var<'t, T>,
    target: &Tensor<T>,
) -> Result<Var<'t, T>, KernelError> {
    probs.pair_bce(target)
}

/// [`recon_bce`] of `logistic(logits)`, evaluated on the logits.
pub fn recon_bce_logits<'t, T: Scalar>(
    logits: Var<'t, T>,
    target: &Tensor<T>,
) -> Result<Var<'t, T>, KernelError> {
    logits.pair_bce_logits(target)
}

/// The property head bound on a tape.
pub struct SideWeights<'t, T> {
    pub m1: Var<'t, T>,
    pub b1: Var<'t, T>,
    pub m2: Var<'t, T>,
    pub b2: Var<'t, T>,
}

impl<'t, T: Scalar> SideWeights<'t, T> {
    pub fn bind(tape: &'t Tape<T>, store: &ParamStore<T>) -> Result<Self, KernelError> {
        Ok(SideWeights {
            m1: tape.bind(store, SIDE_M1)?,
            b1: tape.bind(store, SIDE_B1)?,
            m2: tape.bind(store, SIDE_M2)?,
            b2: tape.bind(store, SIDE_B2)?,
        })
    }
}

/// `elu(g M1 + b1) M2 + b2` as a `1 x 1` value.
pub fn side_predict<'t, T: Scalar>(
    g: Var<'t, T>,
    side: &SideWeights<'t, T>,
) -> Result<Var<'t, T>, KernelError> {
    g.matmul(side.m1)?
        .add(side.b1)?
        .elu()?
        .matmul(side.m2)?
        .add(side.b2)
}

/// Every intermediate of one molecule's forward pass.
pub struct Forward<'t, T> {
    pub mu: Var<'t, T>,
    pub log_std: Var<'t, T>,
    pub z: Var<'t, T>,
    pub logits: Var<'t, T>,
    pub probs: Var<'t, T>,
    pub pooled: Var<'t, T>,
    pub prediction: Var<'t, T>,
    pub target: Tensor<T>,
}

/// Runs the model on `tape`. Without `noise` the latent is the mean.
pub fn forward<'t, T: Scalar>(
    tape: &'t Tape<T>,
    mol: &MolGraph,
    store: &ParamStore<T>,
    noise: Option<&Tensor<T>>,
) -> Result<Forward<'t, T>, ModelError> {
    let n = mol.atom_count();
    if n == 0 {
        return Err(ModelError::EmptyMolecule);
    }
    let adjacency = adjacency_tensor(mol);
    let features = node_features(mol);
    let h0 = tape.constant(Tensor::matrix(
        n,
        FEATURE_WIDTH,
        features.as_slice().iter().map(|&v| T::lit(v)).collect(),
    )?)?;
    let graph = RelationOperators::new(tape, &adjacency)?;
    let weights = EncoderWeights::bind(tape, store)?;
    let (mu, log_std) = encoder::encode(h0, &graph, &weights)?;
    let z = match noise {
        Some(eps) => sample_latent(mu, log_std, tape.constant(eps.clone())?)?,
        None => mu,
    };
    let logits = edge_logits(z)?;
    let probs = logits.logistic()?;
    let pooled = encoder::pool(mu, tape.bind(store, encoder::POOL_WEIGHT)?)?;
    let prediction = side_predict(pooled, &SideWeights::bind(tape, store)?)?;
    Ok(Forward {
        mu,
        log_std,
        z,
        logits,
        probs,
        pooled,
        prediction,
        target: edge_target(&adjacency),
    })
}

/// Builds the joint loss on `tape`; returns the scalar total and the
/// unweighted terms.
pub fn loss_on_tape<'t, T: Scalar>(
    tape: &'t Tape<T>,
    mol: &MolGraph,
    label: T,
    store: &ParamStore<T>,
    noise: &Tensor<T>,
    weights: LossWeights<T>,
) -> Result<(Var<'t, T>, LossBreakdown<T>), ModelError> {
    let f = forward(tape, mol, store, Some(noise))?;
    let recon = recon_bce_logits(f.logits, &f.target)?;
    let kl = kl_term(f.mu, f.log_std)?;
    let err = f.prediction.offset(-label)?;
    let side = err.hadamard(err)?.sum()?;
    let total = recon
        .add(kl.scale(weights.beta)?)?
        .add(side.scale(weights.lambda)?)?;
    let breakdown = LossBreakdown {
        recon: recon.item()?,
        kl: kl.item()?,
        side_mse: side.item()?,
        total: total.item()?,
    };
    Ok((total, breakdown))
}

pub fn joint_loss<T: Scalar>(
    mol: &MolGraph,
    label: T,
    params: &ModelParams<T>,
    noise: &Tensor<T>,
    weights: LossWeights<T>,
) -> Result<LossBreakdown<T>, ModelError> {
    let tape = Tape::new();
    Ok(loss_on_tape(&tape, mol, label, params.store(), noise, weights)?.1)
}

/// Joint loss together with its gradient for every parameter.
pub fn loss_and_gradient<T: Scalar>(
    mol: &MolGraph,
    label: T,
    params: &ModelParams<T>,
    noise: &Tensor<T>,
    weights: LossWeights<T>,
) -> Result<(LossBreakdown<T>, ParamStore<T>), ModelError> {
    let tape = Tape::new();
    let (total, breakdown) = loss_on_tape(&tape, mol, label, params.store(), noise, weights)?;
    let grads = tape.backward(total, params.store())?;
    Ok((breakdown, grads))
}

/// Mean latent and log-std per atom.
pub fn encode_molecule<T: Scalar>(
    mol: &MolGraph,
    params: &ModelParams<T>,
) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
    let tape = Tape::new();
    let f = forward(&tape, mol, params.store(), None)?;
    Ok((f.mu.value(), f.log_std.value()))
}

/// Pooled `1 x 64` molecule vector.
pub fn embed<T: Scalar>(mol: &MolGraph, params: &ModelParams<T>) -> Result<Tensor<T>, ModelError> {
    let tape = Tape::new();
    Ok(forward(&tape, mol, params.store(), None)?.pooled.value())
}

/// Property prediction from the mean latent.
pub fn predict<T: Scalar>(mol: &MolGraph, params: &ModelParams<T>) -> Result<T, ModelError> {
    let tape = Tape::new();
    Ok(forward(&tape, mol, params.store(), None)?
        .prediction
        .item()?)
}

/// Edge probabilities from the mean latent.
pub fn edge_probabilities<T: Scalar>(
    mol: &MolGraph,
    params: &ModelParams<T>,
) -> Result<Tensor<T>, ModelError> {
    let tape = Tape::new();
    Ok(forward(&tape, mol, params.store(), None)?.probs.value())
}

/// Decodes the mean latent back into a graph over the same atoms.
///
/// Pairs with probability above `threshold` become bonds, keeping the input
/// bond type where one existed and single otherwise. Hydrogen counts are
/// recomputed as the lowest valid count; atoms with none are reported.
pub fn reconstruct<T: Scalar>(
    mol: &MolGraph,
    params: &ModelParams<T>,
    threshold: T,
) -> Result<(MolGraph, ValidityReport), ModelError> {
    let probs = edge_probabilities(mol, params)?;
    let n = mol.atom_count();
    let mut bonds = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if probs.get(i, j) > threshold {
                bonds.push((i, j, mol.bond_between(i, j).unwrap_or(BondType::Single)));
            }
        }
    }
    let skeleton = MolGraph::build(mol.atoms().to_vec(), &bonds)?;
    let mut offending = Vec::new();
    let counts: Vec<u8> = (0..n)
        .map(|i| {
            lowest_feasible_h(&skeleton, i).unwrap_or_else(|| {
                offending.push(i);
                0
            })
        })
        .collect();
    let rebuilt = skeleton.with_implicit_h(&counts)?;
    let report = if offending.is_empty() {
        check_valence(&rebuilt)
    } else {
        ValidityReport {
            valid: false,
            offending,
        }
    };
    Ok((rebuilt, report))
}
