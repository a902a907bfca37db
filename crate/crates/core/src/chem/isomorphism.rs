use std::collections::HashMap;

use super::{Atom, BondType, MolGraph};

type Label = (Atom, usize);

fn label(mol: &MolGraph, i: usize) -> Label {
    (mol.atoms()[i], mol.degree(i))
}

/// Label-preserving isomorphism test.
///
/// Labels are element, charge, implicit hydrogens and bond type. The search
/// maps atoms of `a` in a connectivity-first order and prunes candidates by
/// label and degree, checking every already-mapped pair for bond agreement.
pub fn is_isomorphic(a: &MolGraph, b: &MolGraph) -> bool {
    if a.atom_count() != b.atom_count() || a.bond_count() != b.bond_count() {
        return false;
    }
    let mut histogram: HashMap<Label, isize> = HashMap::new();
    for i in 0..a.atom_count() {
        *histogram.entry(label(a, i)).or_default() += 1;
        *histogram.entry(label(b, i)).or_default() -= 1;
    }
    if histogram.values().any(|&c| c != 0) {
        return false;
    }
    let mut bond_types: HashMap<BondType, isize> = HashMap::new();
    for (x, y) in a.bonds().iter().zip(b.bonds()) {
        *bond_types.entry(x.kind).or_default() += 1;
        *bond_types.entry(y.kind).or_default() -= 1;
    }
    if bond_types.values().any(|&c| c != 0) {
        return false;
    }

    let order = search_order(a);
    let mut state = Search {
        a,
        b,
        order: &order,
        mapping: vec![usize::MAX; a.atom_count()],
        used: vec![false; b.atom_count()],
    };
    state.extend(0)
}

/// Visits each component breadth-first so most atoms have a mapped neighbor
/// when their turn comes.
fn search_order(mol: &MolGraph) -> Vec<usize> {
    let n = mol.atom_count();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut starts: Vec<usize> = (0..n).collect();
    // most connected atoms first
    starts.sort_by_key(|&i| std::cmp::Reverse(mol.degree(i)));
    for start in starts {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let v = order[head];
            head += 1;
            for &(nb, _) in mol.neighbors(v) {
                if !seen[nb] {
                    seen[nb] = true;
                    order.push(nb);
                }
            }
        }
    }
    order
}

struct Search<'a> {
    a: &'a MolGraph,
    b: &'a MolGraph,
    order: &'a [usize],
    mapping: Vec<usize>,
    used: Vec<bool>,
}

impl Search<'_> {
    fn extend(&mut self, depth: usize) -> bool {
        let Some(&v) = self.order.get(depth) else {
            return true;
        };
        let want = label(self.a, v);
        // a mapped neighbor pins the candidate to that image's neighborhood
        let anchor = self
            .a
            .neighbors(v)
            .iter()
            .find(|(nb, _)| self.mapping[*nb] != usize::MAX);
        let candidates: Vec<usize> = match anchor {
            Some(&(nb, _)) => self
                .b
                .neighbors(self.mapping[nb])
                .iter()
                .map(|&(w, _)| w)
                .collect(),
            None => (0..self.b.atom_count()).collect(),
        };
        for w in candidates {
            if self.used[w] || label(self.b, w) != want || !self.consistent(v, w, depth) {
                continue;
            }
            self.mapping[v] = w;
            self.used[w] = true;
            if self.extend(depth + 1) {
                return true;
            }
            self.mapping[v] = usize::MAX;
            self.used[w] = false;
        }
        false
    }

    fn consistent(&self, v: usize, w: usize, depth: usize) -> bool {
        self.order[..depth]
            .iter()
            .all(|&u| self.a.bond_between(v, u) == self.b.bond_between(w, self.mapping[u]))
    }
}
