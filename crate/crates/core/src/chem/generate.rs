use rand::Rng;

use super::valence::organic_implicit_h;
use super::{Atom, BondType, Element, MolGraph};

const SUBSTITUENTS: [(Element, f64); 7] = [
    (Element::C, 0.55),
    (Element::N, 0.15),
    (Element::O, 0.15),
    (Element::F, 0.05),
    (Element::S, 0.04),
    (Element::Cl, 0.04),
    (Element::Br, 0.02),
];

struct Draft {
    elements: Vec<Element>,
    aromatic: Vec<bool>,
    bonds: Vec<(usize, usize, BondType)>,
    // remaining bond order each atom can accept
    free: Vec<u8>,
}

impl Draft {
    fn add_atom(&mut self, element: Element, aromatic: bool, free: u8) -> usize {
        self.elements.push(element);
        self.aromatic.push(aromatic);
        self.free.push(free);
        self.elements.len() - 1
    }

    fn add_ring(&mut self, ring: &[Element]) {
        let start = self.elements.len();
        for &e in ring {
            // an aromatic C keeps one site for a substituent; heteroatoms none
            let free = if e == Element::C { 1 } else { 0 };
            self.add_atom(e, true, free);
        }
        for k in 0..ring.len() {
            self.bonds
                .push((start + k, start + (k + 1) % ring.len(), BondType::Aromatic));
        }
    }

    fn distance(&self, from: usize, to: usize) -> Option<usize> {
        let n = self.elements.len();
        let mut dist = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::from([from]);
        dist[from] = 0;
        while let Some(v) = queue.pop_front() {
            for &(a, b, _) in &self.bonds {
                let next = if a == v {
                    b
                } else if b == v {
                    a
                } else {
                    continue;
                };
                if dist[next] == usize::MAX {
                    dist[next] = dist[v] + 1;
                    queue.push_back(next);
                }
            }
        }
        (dist[to] != usize::MAX).then_some(dist[to])
    }
}

fn pick_element<R: Rng + ?Sized>(rng: &mut R) -> Element {
    let mut roll: f64 = rng.random();
    for (e, w) in SUBSTITUENTS {
        if roll < w {
            return e;
        }
        roll -= w;
    }
    Element::C
}

/// Draws a connected, valence-valid neutral molecule with up to
/// `heavy_atoms` atoms (fewer when no open valence remains).
///
/// Molecules may contain one benzene, pyridine, furan or thiophene ring,
/// single, double and triple bonds, and one aliphatic ring closure.
pub fn random_molecule<R: Rng + ?Sized>(rng: &mut R, heavy_atoms: usize) -> MolGraph {
    assert!(heavy_atoms >= 1, "a molecule needs at least one atom");
    let mut draft = Draft {
        elements: Vec::new(),
        aromatic: Vec::new(),
        bonds: Vec::new(),
        free: Vec::new(),
    };
    let roll: f64 = rng.random();
    if heavy_atoms >= 6 && roll < 0.35 {
        let mut ring = [Element::C; 6];
        if rng.random_bool(0.3) {
            ring[rng.random_range(0..6)] = Element::N;
        }
        draft.add_ring(&ring);
    } else if heavy_atoms >= 5 && roll < 0.45 {
        let hetero = if rng.random_bool(0.6) {
            Element::O
        } else {
            Element::S
        };
        draft.add_ring(&[hetero, Element::C, Element::C, Element::C, Element::C]);
    } else {
        let e = pick_element(rng);
        draft.add_atom(e, false, e.normal_valences()[0]);
    }

    while draft.elements.len() < heavy_atoms {
        let open: Vec<usize> = (0..draft.elements.len())
            .filter(|&i| draft.free[i] > 0)
            .collect();
        if open.is_empty() {
            break;
        }
        let anchor = open[rng.random_range(0..open.len())];
        let element = pick_element(rng);
        let capacity = element.normal_valences()[0];
        let max_order = draft.free[anchor].min(capacity).min(3);
        let mut order = match rng.random::<f64>() {
            r if r < 0.8 => 1,
            r if r < 0.95 => 2,
            _ => 3,
        };
        if draft.aromatic[anchor] {
            order = 1;
        }
        order = order.min(max_order);
        let atom = draft.add_atom(element, false, capacity - order);
        draft.free[anchor] -= order;
        let kind = match order {
            1 => BondType::Single,
            2 => BondType::Double,
            _ => BondType::Triple,
        };
        draft.bonds.push((anchor, atom, kind));
    }

    if rng.random_bool(0.3) {
        let candidates: Vec<(usize, usize)> = (0..draft.elements.len())
            .flat_map(|i| (i + 1..draft.elements.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| {
                !draft.aromatic[i] && !draft.aromatic[j] && draft.free[i] > 0 && draft.free[j] > 0
            })
            .filter(|&(i, j)| matches!(draft.distance(i, j), Some(d) if (2..=5).contains(&d)))
            .collect();
        if !candidates.is_empty() {
            let (i, j) = candidates[rng.random_range(0..candidates.len())];
            draft.free[i] -= 1;
            draft.free[j] -= 1;
            draft.bonds.push((i, j, BondType::Single));
        }
    }

    let n = draft.elements.len();
    let mut explicit = vec![0i32; n];
    let mut aromatic = vec![0i32; n];
    for &(i, j, kind) in &draft.bonds {
        for end in [i, j] {
            match kind {
                BondType::Aromatic => aromatic[end] += 1,
                other => explicit[end] += other.valence_weight() as i32,
            }
        }
    }
    let atoms = (0..n)
        .map(|i| {
            Atom::neutral(
                draft.elements[i],
                organic_implicit_h(draft.elements[i], explicit[i], aromatic[i]),
            )
        })
        .collect();
    MolGraph::build(atoms, &draft.bonds).expect("generated bonds are well formed")
}
