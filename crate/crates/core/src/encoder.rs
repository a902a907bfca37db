//! Relational graph-convolution encoder and softmax pooling.
//!
//! Each layer computes, per node `i`,
//! `h_i' = W_0 h_i + sum_r mean_{j in N_r(i)} W_r h_j`, with ELU on the two
//! shared layers and linear third layers for the mean and log-std heads.

use crate::chem::{AdjacencyTensor, NUM_RELATIONS};
use crate::numkernel::{Axis, KernelError, ParamStore, Scalar, Tape, Tensor, Var};

/// Width of node features and hidden layers.
pub const HIDDEN_DIM: usize = 32;
/// Latent width per node.
pub const LATENT_DIM: usize = 16;
/// Width of the pooled molecule vector.
pub const POOL_DIM: usize = 64;

/// Parameter-name prefixes of the four graph-convolution weight groups.
pub const LAYER_PREFIXES: [&str; 4] = ["enc.l1", "enc.l2", "enc.mu", "enc.sigma"];
pub const POOL_WEIGHT: &str = "pool.w";

/// Name of the relation-`r` weight in a layer, or of the self weight when `r` is `None`.
pub fn weight_name(prefix: &str, relation: Option<usize>) -> String {
    match relation {
        Some(r) => format!("{prefix}.rel{r}"),
        None => format!("{prefix}.self"),
    }
}

/// Row-normalized per-relation adjacency operators of one molecule.
///
/// Relations without any bond in the molecule are `None` and contribute
/// nothing to the aggregation.
pub struct RelationOperators<'t, T> {
    operators: [Option<Var<'t, T>>; NUM_RELATIONS],
}

impl<'t, T: Scalar> RelationOperators<'t, T> {
    pub fn new(tape: &'t Tape<T>, adjacency: &AdjacencyTensor) -> Result<Self, KernelError> {
        let n = adjacency.size();
        let mut operators = [None, None, None, None];
        for (r, slot) in operators.iter_mut().enumerate() {
            let degrees: Vec<usize> = (0..n).map(|i| adjacency.relation_degree(i, r)).collect();
            if degrees.iter().all(|&d| d == 0) {
                continue;
            }
            let op = Tensor::from_fn(n, n, |i, j| {
                if adjacency.get(i, j, r) != 0.0 {
                    T::one() / T::from_usize(degrees[i]).unwrap_or_else(T::one)
                } else {
                    T::zero()
                }
            });
            *slot = Some(tape.constant(op)?);
        }
        Ok(RelationOperators { operators })
    }
}

/// One graph-convolution layer bound on a tape.
pub struct RgcnWeights<'t, T> {
    pub relations: [Var<'t, T>; NUM_RELATIONS],
    pub self_weight: Var<'t, T>,
}

impl<'t, T: Scalar> RgcnWeights<'t, T> {
    pub fn bind(
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        prefix: &str,
    ) -> Result<Self, KernelError> {
        let rel = |r| tape.bind(store, &weight_name(prefix, Some(r)));
        Ok(RgcnWeights {
            relations: [rel(0)?, rel(1)?, rel(2)?, rel(3)?],
            self_weight: tape.bind(store, &weight_name(prefix, None))?,
        })
    }
}

pub fn rgcn_layer<'t, T: Scalar>(
    h: Var<'t, T>,
    graph: &RelationOperators<'t, T>,
    weights: &RgcnWeights<'t, T>,
    activate: bool,
) -> Result<Var<'t, T>, KernelError> {
    let mut out = h.matmul(weights.self_weight)?;
    for (op, w) in graph.operators.iter().zip(&weights.relations) {
        if let Some(op) = op {
            out = out.add(op.matmul(h)?.matmul(*w)?)?;
        }
    }
    if activate {
        out.elu()
    } else {
        Ok(out)
    }
}

/// The four encoder layers bound on a tape; the first two are shared by
/// both heads.
pub struct EncoderWeights<'t, T> {
    pub layer1: RgcnWeights<'t, T>,
    pub layer2: RgcnWeights<'t, T>,
    pub mu_head: RgcnWeights<'t, T>,
    pub sigma_head: RgcnWeights<'t, T>,
}

impl<'t, T: Scalar> EncoderWeights<'t, T> {
    pub fn bind(tape: &'t Tape<T>, store: &ParamStore<T>) -> Result<Self, KernelError> {
        Ok(EncoderWeights {
            layer1: RgcnWeights::bind(tape, store, LAYER_PREFIXES[0])?,
            layer2: RgcnWeights::bind(tape, store, LAYER_PREFIXES[1])?,
            mu_head: RgcnWeights::bind(tape, store, LAYER_PREFIXES[2])?,
            sigma_head: RgcnWeights::bind(tape, store, LAYER_PREFIXES[3])?,
        })
    }
}

/// Per-node latent mean and log standard deviation, each `N x 16`.
pub fn encode<'t, T: Scalar>(
    features: Var<'t, T>,
    graph: &RelationOperators<'t, T>,
    weights: &EncoderWeights<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>), KernelError> {
    let h1 = rgcn_layer(features, graph, &weights.layer1, true)?;
    let h2 = rgcn_layer(h1, graph, &weights.layer2, true)?;
    let mu = rgcn_layer(h2, graph, &weights.mu_head, false)?;
    let log_std = rgcn_layer(h2, graph, &weights.sigma_head, false)?;
    Ok((mu, log_std))
}

/// `sum_i softmax(h_i W_p)` as a `1 x 64` row. Its entries sum to `N`.
pub fn pool<'t, T: Scalar>(
    h: Var<'t, T>,
    pool_weight: Var<'t, T>,
) -> Result<Var<'t, T>, KernelError> {
    h.matmul(pool_weight)?.row_softmax()?.sum_axis(Axis::Rows)
}
