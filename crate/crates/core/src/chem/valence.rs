use super::{BondType, Element, MolGraph};

/// Outcome of a valence check. `offending` lists failing node ids ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityReport {
    pub valid: bool,
    pub offending: Vec<usize>,
}

/// Allowed total valences for an element in a given charge state.
///
/// Charge shifts the neutral set for N and O only; other charged atoms have
/// no allowed valence.
pub(crate) fn allowed_valences(element: Element, charge: i8) -> Vec<i32> {
    let normal = element.normal_valences().iter().map(|&v| v as i32);
    match (element, charge) {
        (_, 0) => normal.collect(),
        (Element::N | Element::O, c) => normal.map(|v| v + c as i32).filter(|&v| v >= 0).collect(),
        _ => Vec::new(),
    }
}

/// Integer bond-order sum over non-aromatic bonds, and the aromatic bond count.
fn bond_orders(mol: &MolGraph, atom: usize) -> (i32, i32) {
    let mut explicit = 0;
    let mut aromatic = 0;
    for &(_, k) in mol.neighbors(atom) {
        match mol.bonds()[k].kind {
            BondType::Single => explicit += 1,
            BondType::Double => explicit += 2,
            BondType::Triple => explicit += 3,
            BondType::Aromatic => aromatic += 1,
        }
    }
    (explicit, aromatic)
}

/// Heavy-bond valence totals an atom may realize.
///
/// Aromatic bonds weigh 1.5 with the half-integral sum rounded up. An atom
/// with `k` aromatic bonds may also realize `k` or `k + 1` (a localized
/// structure with zero or one double bond), which keeps pyrrole-type N, furan
/// O and fused-ring junction carbons valid.
fn candidate_sums(explicit: i32, aromatic: i32) -> Vec<i32> {
    if aromatic == 0 {
        return vec![explicit];
    }
    let rounded = (3 * aromatic + 1) / 2;
    let mut sums = vec![
        explicit + aromatic,
        explicit + aromatic + 1,
        explicit + rounded,
    ];
    sums.sort_unstable();
    sums.dedup();
    sums
}

fn atom_is_valid(mol: &MolGraph, atom: usize, h: i32) -> bool {
    let a = mol.atoms()[atom];
    let allowed = allowed_valences(a.element, a.formal_charge);
    let (explicit, aromatic) = bond_orders(mol, atom);
    candidate_sums(explicit, aromatic)
        .into_iter()
        .any(|s| allowed.contains(&(s + h)))
}

pub fn check_valence(mol: &MolGraph) -> ValidityReport {
    let offending: Vec<usize> = (0..mol.atom_count())
        .filter(|&i| !atom_is_valid(mol, i, mol.atoms()[i].implicit_h as i32))
        .collect();
    ValidityReport {
        valid: offending.is_empty(),
        offending,
    }
}

/// Smallest hydrogen count in `0..=4` that makes `atom` valence-valid.
pub fn lowest_feasible_h(mol: &MolGraph, atom: usize) -> Option<u8> {
    (0..=4u8).find(|&h| atom_is_valid(mol, atom, h as i32))
}

/// Implicit hydrogens an unbracketed SMILES atom receives.
///
/// Aliphatic atoms fill to the lowest normal valence that accommodates their
/// bonds. Aromatic atoms count each aromatic bond once plus one for the
/// delocalized double bond when it fits under the lowest normal valence.
pub(crate) fn organic_implicit_h(element: Element, explicit: i32, aromatic: i32) -> u8 {
    let normal = element.normal_valences();
    let h = if aromatic == 0 {
        normal
            .iter()
            .map(|&v| v as i32)
            .find(|&v| v >= explicit)
            .map_or(0, |v| v - explicit)
    } else {
        let lowest = normal[0] as i32;
        let base = explicit + aromatic;
        if base < lowest {
            lowest - base - 1
        } else {
            0
        }
    };
    h.clamp(0, 4) as u8
}

/// Implicit H an organic-subset atom at `atom` would receive from its bonds.
pub(crate) fn default_implicit_h(mol: &MolGraph, atom: usize) -> u8 {
    let (explicit, aromatic) = bond_orders(mol, atom);
    organic_implicit_h(mol.atoms()[atom].element, explicit, aromatic)
}
