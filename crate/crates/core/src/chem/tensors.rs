use super::{Element, MolGraph, NUM_RELATIONS};

/// Width of a node-feature row.
pub const FEATURE_WIDTH: usize = 32;

const CHARGE_OFFSET: usize = 10;
const HYDROGEN_OFFSET: usize = 13;
const DEGREE_OFFSET: usize = 18;

/// Dense `N x N x 4` one-hot bond tensor, indexed `[i][j][r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyTensor {
    n: usize,
    data: Vec<f64>,
}

impl AdjacencyTensor {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, r: usize) -> f64 {
        self.data[(i * self.n + j) * NUM_RELATIONS + r]
    }

    /// 1 if any bond joins `i` and `j`.
    pub fn bonded(&self, i: usize, j: usize) -> bool {
        (0..NUM_RELATIONS).any(|r| self.get(i, j, r) != 0.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Number of `r`-typed neighbors of node `i`.
    pub fn relation_degree(&self, i: usize, r: usize) -> usize {
        (0..self.n).filter(|&j| self.get(i, j, r) != 0.0).count()
    }
}

pub fn adjacency_tensor(mol: &MolGraph) -> AdjacencyTensor {
    let n = mol.atom_count();
    let mut data = vec![0.0; n * n * NUM_RELATIONS];
    for bond in mol.bonds() {
        let r = bond.kind.index();
        data[(bond.i * n + bond.j) * NUM_RELATIONS + r] = 1.0;
        data[(bond.j * n + bond.i) * NUM_RELATIONS + r] = 1.0;
    }
    AdjacencyTensor { n, data }
}

/// Row-major `N x 32` node features.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureMatrix {
    n: usize,
    data: Vec<f64>,
}

impl NodeFeatureMatrix {
    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * FEATURE_WIDTH..(i + 1) * FEATURE_WIDTH]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// One-hot element (10), charge clamped to {-1,0,+1} (3), implicit H 0..=4
/// (5) and heavy degree clamped to 0..=4 (5), zero padded to 32 columns.
pub fn node_features(mol: &MolGraph) -> NodeFeatureMatrix {
    let n = mol.atom_count();
    let mut data = vec![0.0; n * FEATURE_WIDTH];
    for (i, atom) in mol.atoms().iter().enumerate() {
        let row = &mut data[i * FEATURE_WIDTH..(i + 1) * FEATURE_WIDTH];
        row[atom.element.index()] = 1.0;
        row[CHARGE_OFFSET + (atom.formal_charge.clamp(-1, 1) + 1) as usize] = 1.0;
        row[HYDROGEN_OFFSET + atom.implicit_h.min(4) as usize] = 1.0;
        row[DEGREE_OFFSET + mol.heavy_degree(i).min(4)] = 1.0;
    }
    debug_assert!(Element::ALL.len() == CHARGE_OFFSET);
    NodeFeatureMatrix { n, data }
}
