//! Molecular graph data model.
//!
//! A molecule is an undirected graph whose nodes are heavy (or explicit
//! hydrogen) atoms and whose edges carry one of four bond types. Node order
//! is fixed at construction and never permuted afterwards.

mod generate;
mod isomorphism;
mod tensors;
mod valence;

use std::fmt;

use thiserror::Error;

pub use generate::random_molecule;
pub use isomorphism::is_isomorphic;
pub use tensors::{
    adjacency_tensor, node_features, AdjacencyTensor, NodeFeatureMatrix, FEATURE_WIDTH,
};
pub use valence::{check_valence, lowest_feasible_h, ValidityReport};
pub(crate) use valence::{default_implicit_h, organic_implicit_h};

/// Number of bond relations in the adjacency tensor.
pub const NUM_RELATIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("bond ({0}, {1}) is listed more than once")]
    DuplicateBond(usize, usize),
    #[error("atom {0} is bonded to itself")]
    SelfLoop(usize),
    #[error("bond ({i}, {j}) references an atom outside 0..{n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
    #[error("unknown element symbol {0:?}")]
    UnknownElement(String),
    #[error("formal charge {charge} on atom {atom} outside [-2, 2]")]
    ChargeOutOfRange { atom: usize, charge: i8 },
    #[error("atom {atom} carries {count} hydrogens (at most 4 supported)")]
    TooManyHydrogens { atom: usize, count: u8 },
}

/// The closed element vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    H,
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 10] = [
        Element::H,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(symbol: &str) -> Result<Self, BuildError> {
        Element::ALL
            .iter()
            .copied()
            .find(|e| e.symbol() == symbol)
            .ok_or_else(|| BuildError::UnknownElement(symbol.to_string()))
    }

    /// Position in the one-hot element block of the node features.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Neutral-atom valences, ascending.
    pub fn normal_valences(self) -> &'static [u8] {
        match self {
            Element::H | Element::F | Element::Cl | Element::Br | Element::I => &[1],
            Element::C => &[4],
            Element::N => &[3],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
        }
    }

    /// Whether the element may be written as an aromatic (lower-case) SMILES atom.
    pub fn can_be_aromatic(self) -> bool {
        matches!(
            self,
            Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    pub implicit_h: u8,
}

impl Atom {
    pub fn new(element: Element, formal_charge: i8, implicit_h: u8) -> Self {
        Atom {
            element,
            formal_charge,
            implicit_h,
        }
    }

    pub fn neutral(element: Element, implicit_h: u8) -> Self {
        Atom::new(element, 0, implicit_h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondType {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondType {
    pub const ALL: [BondType; NUM_RELATIONS] = [
        BondType::Single,
        BondType::Double,
        BondType::Triple,
        BondType::Aromatic,
    ];

    /// Relation index `r` in the adjacency tensor.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(r: usize) -> Option<Self> {
        BondType::ALL.get(r).copied()
    }

    pub fn valence_weight(self) -> f64 {
        match self {
            BondType::Single => 1.0,
            BondType::Double => 2.0,
            BondType::Triple => 3.0,
            BondType::Aromatic => 1.5,
        }
    }

    /// SMILES bond character.
    pub fn symbol(self) -> char {
        match self {
            BondType::Single => '-',
            BondType::Double => '=',
            BondType::Triple => '#',
            BondType::Aromatic => ':',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub kind: BondType,
}

impl Bond {
    /// The endpoint opposite `atom`.
    pub fn other(&self, atom: usize) -> usize {
        if self.i == atom {
            self.j
        } else {
            self.i
        }
    }
}

/// An undirected molecular graph with typed bonds.
///
/// Bonds are stored with `i < j`, sorted by `(i, j)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    // neighbor lists as (atom, bond index), in bond order
    neighbors: Vec<Vec<(usize, usize)>>,
}

impl MolGraph {
    pub fn build(atoms: Vec<Atom>, bonds: &[(usize, usize, BondType)]) -> Result<Self, BuildError> {
        for (idx, atom) in atoms.iter().enumerate() {
            if !(-2..=2).contains(&atom.formal_charge) {
                return Err(BuildError::ChargeOutOfRange {
                    atom: idx,
                    charge: atom.formal_charge,
                });
            }
            if atom.implicit_h > 4 {
                return Err(BuildError::TooManyHydrogens {
                    atom: idx,
                    count: atom.implicit_h,
                });
            }
        }
        let n = atoms.len();
        let mut canonical = Vec::with_capacity(bonds.len());
        for &(a, b, kind) in bonds {
            if a >= n || b >= n {
                return Err(BuildError::IndexOutOfRange { i: a, j: b, n });
            }
            if a == b {
                return Err(BuildError::SelfLoop(a));
            }
            canonical.push(Bond {
                i: a.min(b),
                j: a.max(b),
                kind,
            });
        }
        canonical.sort_by_key(|b| (b.i, b.j));
        if let Some(w) = canonical
            .windows(2)
            .find(|w| (w[0].i, w[0].j) == (w[1].i, w[1].j))
        {
            return Err(BuildError::DuplicateBond(w[0].i, w[0].j));
        }
        let mut neighbors = vec![Vec::new(); n];
        for (k, bond) in canonical.iter().enumerate() {
            neighbors[bond.i].push((bond.j, k));
            neighbors[bond.j].push((bond.i, k));
        }
        Ok(MolGraph {
            atoms,
            bonds: canonical,
            neighbors,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// `(neighbor, bond index)` pairs of `atom`.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.neighbors[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.neighbors[atom].len()
    }

    /// Neighbors that are not hydrogen atoms.
    pub fn heavy_degree(&self, atom: usize) -> usize {
        self.neighbors[atom]
            .iter()
            .filter(|(nb, _)| self.atoms[*nb].element != Element::H)
            .count()
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms
            .iter()
            .filter(|a| a.element != Element::H)
            .count()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<BondType> {
        self.neighbors[a]
            .iter()
            .find(|(nb, _)| *nb == b)
            .map(|&(_, k)| self.bonds[k].kind)
    }

    /// An atom is aromatic when it takes part in at least one aromatic bond.
    pub fn is_aromatic_atom(&self, atom: usize) -> bool {
        self.neighbors[atom]
            .iter()
            .any(|&(_, k)| self.bonds[k].kind == BondType::Aromatic)
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    /// Connected components, each listed in ascending atom order.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(a) = stack.pop() {
                comp.push(a);
                for &(nb, _) in &self.neighbors[a] {
                    if !seen[nb] {
                        seen[nb] = true;
                        stack.push(nb);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Relabels atoms so that old atom `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = self.atoms.clone();
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old];
        }
        let bonds: Vec<_> = self
            .bonds
            .iter()
            .map(|b| (perm[b.i], perm[b.j], b.kind))
            .collect();
        MolGraph::build(atoms, &bonds).expect("permutation of a valid graph is valid")
    }

    /// Same atoms with the implicit hydrogen counts replaced.
    pub fn with_implicit_h(&self, counts: &[u8]) -> Result<MolGraph, BuildError> {
        let atoms = self
            .atoms
            .iter()
            .zip(counts)
            .map(|(a, &h)| Atom {
                implicit_h: h,
                ..*a
            })
            .collect();
        let bonds: Vec<_> = self.bonds.iter().map(|b| (b.i, b.j, b.kind)).collect();
        MolGraph::build(atoms, &bonds)
    }
}
