//! SMILES reading and writing for the organic subset.
//!
//! The reader accepts unbracketed `C N O F P S Cl Br I`, aromatic
//! `c n o s p`, bracket atoms with charge and hydrogen count, the bonds
//! `- = # :`, branches and ring closures (`1`-`9`, `%nn`). Stereo marks and
//! isotopes are dropped and counted. Dot-separated fragments are rejected.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::chem::{self, Atom, BondType, BuildError, Element, MolGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES string")]
    EmptyInput,
    #[error("unbalanced parenthesis at position {position}")]
    UnbalancedParenthesis { position: usize },
    #[error("ring closure {label} is never closed")]
    UnclosedRing { label: u32 },
    #[error("unknown symbol {symbol:?} at position {position}")]
    UnknownSymbol { position: usize, symbol: String },
    #[error("disconnected input ('.') at position {position}")]
    DisconnectedInput { position: usize },
    #[error("unexpected {found:?} at position {position}")]
    UnexpectedToken { position: usize, found: String },
    #[error("ring closure {label} specifies two different bond types")]
    ConflictingRingBond { label: u32 },
    #[error(transparent)]
    Build(#[from] BuildError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WriteError {
    #[error("molecule is disconnected")]
    Disconnected,
    #[error("molecule has no atoms")]
    Empty,
}

/// Stereo and isotope annotations discarded while reading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseWarnings {
    pub stripped_stereo: usize,
    pub stripped_isotopes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    OrganicAtom {
        element: Element,
        aromatic: bool,
    },
    BracketAtom {
        element: Element,
        aromatic: bool,
        hydrogens: u8,
        charge: i8,
    },
    /// `None` for a directional (`/`, `\`) bond, read as single.
    Bond(Option<BondType>),
    RingClosure(u32),
    BranchOpen,
    BranchClose,
    Dot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmilesToken {
    pub kind: TokenKind,
    /// Character offset of the token's first character.
    pub position: usize,
}

struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    warnings: &'a mut ParseWarnings,
}

impl Lexer<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn unknown(&self, start: usize) -> SmilesError {
        let end = (self.pos + 1)
            .min(self.chars.len())
            .max(start + 1)
            .min(self.chars.len());
        SmilesError::UnknownSymbol {
            position: start,
            symbol: self.chars[start..end].iter().collect(),
        }
    }

    fn number(&mut self, max_digits: usize) -> Option<u32> {
        let mut value = None;
        for _ in 0..max_digits {
            match self.peek().and_then(|c| c.to_digit(10)) {
                Some(d) => {
                    value = Some(value.unwrap_or(0) * 10 + d);
                    self.pos += 1;
                }
                None => break,
            }
        }
        value
    }

    fn organic(&mut self, start: usize, c: char) -> Result<TokenKind, SmilesError> {
        let (symbol, aromatic) = match c {
            'C' if self.peek() == Some('l') => {
                self.pos += 1;
                ("Cl", false)
            }
            'B' if self.peek() == Some('r') => {
                self.pos += 1;
                ("Br", false)
            }
            'C' => ("C", false),
            'N' => ("N", false),
            'O' => ("O", false),
            'F' => ("F", false),
            'P' => ("P", false),
            'S' => ("S", false),
            'I' => ("I", false),
            'c' => ("C", true),
            'n' => ("N", true),
            'o' => ("O", true),
            's' => ("S", true),
            'p' => ("P", true),
            _ => return Err(self.unknown(start)),
        };
        let element = Element::from_symbol(symbol).map_err(|_| self.unknown(start))?;
        Ok(TokenKind::OrganicAtom { element, aromatic })
    }

    fn bracket(&mut self, start: usize) -> Result<TokenKind, SmilesError> {
        if self.number(3).is_some() {
            self.warnings.stripped_isotopes += 1;
        }
        let symbol_start = self.pos;
        let first = self.bump().ok_or(SmilesError::UnexpectedToken {
            position: start,
            found: "[".into(),
        })?;
        let (symbol, aromatic) = if first.is_ascii_lowercase() {
            (first.to_ascii_uppercase().to_string(), true)
        } else if first.is_ascii_uppercase() {
            let mut s = first.to_string();
            if let Some(next) = self.peek().filter(|c| c.is_ascii_lowercase()) {
                s.push(next);
                self.pos += 1;
            }
            (s, false)
        } else {
            return Err(self.unknown(symbol_start));
        };
        let element = Element::from_symbol(&symbol).map_err(|_| SmilesError::UnknownSymbol {
            position: symbol_start,
            symbol: symbol.clone(),
        })?;
        if aromatic && !element.can_be_aromatic() {
            return Err(SmilesError::UnknownSymbol {
                position: symbol_start,
                symbol: symbol.to_ascii_lowercase(),
            });
        }
        if self.peek() == Some('@') {
            while self.peek() == Some('@') {
                self.pos += 1;
            }
            while self
                .peek()
                .is_some_and(|c| c.is_ascii_uppercase() && c != 'H')
            {
                self.pos += 1;
            }
            self.number(2);
            self.warnings.stripped_stereo += 1;
        }
        let mut hydrogens = 0u8;
        if self.peek() == Some('H') {
            self.pos += 1;
            hydrogens = self.number(1).unwrap_or(1) as u8;
        }
        let mut charge = 0i32;
        if let Some(sign @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let unit = if sign == '+' { 1 } else { -1 };
            charge = unit;
            if let Some(n) = self.number(2) {
                charge = unit * n as i32;
            } else {
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
        }
        if self.peek() == Some(':') {
            self.pos += 1;
            self.number(4);
        }
        match self.bump() {
            Some(']') => {}
            Some(other) => {
                return Err(SmilesError::UnexpectedToken {
                    position: self.pos - 1,
                    found: other.to_string(),
                })
            }
            None => {
                return Err(SmilesError::UnexpectedToken {
                    position: start,
                    found: "[".into(),
                })
            }
        }
        let charge = charge.clamp(i8::MIN as i32, i8::MAX as i32) as i8;
        Ok(TokenKind::BracketAtom {
            element,
            aromatic,
            hydrogens,
            charge,
        })
    }

    fn next_token(&mut self) -> Result<Option<SmilesToken>, SmilesError> {
        let start = self.pos;
        let Some(c) = self.bump() else {
            return Ok(None);
        };
        let kind = match c {
            '(' => TokenKind::BranchOpen,
            ')' => TokenKind::BranchClose,
            '.' => TokenKind::Dot,
            '-' => TokenKind::Bond(Some(BondType::Single)),
            '=' => TokenKind::Bond(Some(BondType::Double)),
            '#' => TokenKind::Bond(Some(BondType::Triple)),
            ':' => TokenKind::Bond(Some(BondType::Aromatic)),
            '/' | '\\' => {
                self.warnings.stripped_stereo += 1;
                TokenKind::Bond(None)
            }
            '%' => match (
                self.bump().and_then(|c| c.to_digit(10)),
                self.bump().and_then(|c| c.to_digit(10)),
            ) {
                (Some(a), Some(b)) => TokenKind::RingClosure(a * 10 + b),
                _ => return Err(self.unknown(start)),
            },
            d if d.is_ascii_digit() => TokenKind::RingClosure(d.to_digit(10).unwrap_or(0)),
            '[' => self.bracket(start)?,
            other => self.organic(start, other)?,
        };
        Ok(Some(SmilesToken {
            kind,
            position: start,
        }))
    }
}

/// Splits `text` into tokens, counting stripped annotations in `warnings`.
pub fn tokenize(text: &str, warnings: &mut ParseWarnings) -> Result<Vec<SmilesToken>, SmilesError> {
    let mut lexer = Lexer {
        chars: text.chars().collect(),
        pos: 0,
        warnings,
    };
    let mut tokens = Vec::new();
    while let Some(token) = lexer.next_token()? {
        tokens.push(token);
    }
    Ok(tokens)
}

struct PendingAtom {
    element: Element,
    aromatic: bool,
    charge: i8,
    hydrogens: Option<u8>,
}

pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    parse_smiles_with_warnings(text).map(|(mol, _)| mol)
}

pub fn parse_smiles_with_warnings(text: &str) -> Result<(MolGraph, ParseWarnings), SmilesError> {
    let mut warnings = ParseWarnings::default();
    let tokens = tokenize(text, &mut warnings)?;
    if tokens.is_empty() {
        return Err(SmilesError::EmptyInput);
    }

    let mut atoms: Vec<PendingAtom> = Vec::new();
    let mut bonds: Vec<(usize, usize, Option<BondType>)> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut branches: Vec<(usize, usize)> = Vec::new();
    let mut pending: Option<(Option<BondType>, usize)> = None;
    let mut rings: BTreeMap<u32, (usize, Option<BondType>)> = BTreeMap::new();

    let unexpected = |token: &SmilesToken, found: &str| SmilesError::UnexpectedToken {
        position: token.position,
        found: found.to_string(),
    };

    for token in &tokens {
        match &token.kind {
            TokenKind::OrganicAtom { .. } | TokenKind::BracketAtom { .. } => {
                let atom = match token.kind {
                    TokenKind::OrganicAtom { element, aromatic } => PendingAtom {
                        element,
                        aromatic,
                        charge: 0,
                        hydrogens: None,
                    },
                    TokenKind::BracketAtom {
                        element,
                        aromatic,
                        hydrogens,
                        charge,
                    } => PendingAtom {
                        element,
                        aromatic,
                        charge,
                        hydrogens: Some(hydrogens),
                    },
                    _ => unreachable!(),
                };
                atoms.push(atom);
                let idx = atoms.len() - 1;
                if let Some(p) = prev {
                    let kind = pending.take().and_then(|(k, _)| k);
                    bonds.push((p, idx, kind));
                } else if let Some((_, pos)) = pending {
                    return Err(SmilesError::UnexpectedToken {
                        position: pos,
                        found: "bond".into(),
                    });
                }
                prev = Some(idx);
            }
            TokenKind::Bond(kind) => {
                if pending.is_some() || prev.is_none() {
                    return Err(unexpected(token, "bond"));
                }
                // directional bonds are plain single bonds once stereo is dropped
                pending = Some((Some(kind.unwrap_or(BondType::Single)), token.position));
            }
            TokenKind::RingClosure(label) => {
                let Some(here) = prev else {
                    return Err(unexpected(token, "ring closure"));
                };
                let bond = pending.take().and_then(|(k, _)| k);
                match rings.remove(label) {
                    Some((open, open_bond)) => {
                        let kind = match (open_bond, bond) {
                            (Some(a), Some(b)) if a != b => {
                                return Err(SmilesError::ConflictingRingBond { label: *label })
                            }
                            (a, b) => a.or(b),
                        };
                        bonds.push((open, here, kind));
                    }
                    None => {
                        rings.insert(*label, (here, bond));
                    }
                }
            }
            TokenKind::BranchOpen => {
                let Some(p) = prev else {
                    return Err(SmilesError::UnbalancedParenthesis {
                        position: token.position,
                    });
                };
                if pending.is_some() {
                    return Err(unexpected(token, "("));
                }
                branches.push((p, token.position));
            }
            TokenKind::BranchClose => {
                if pending.is_some() {
                    return Err(unexpected(token, ")"));
                }
                let (p, _) = branches.pop().ok_or(SmilesError::UnbalancedParenthesis {
                    position: token.position,
                })?;
                prev = Some(p);
            }
            TokenKind::Dot => {
                return Err(SmilesError::DisconnectedInput {
                    position: token.position,
                });
            }
        }
    }
    if let Some((_, position)) = branches.first() {
        return Err(SmilesError::UnbalancedParenthesis {
            position: *position,
        });
    }
    if let Some((_, position)) = pending {
        return Err(SmilesError::UnexpectedToken {
            position,
            found: "bond".into(),
        });
    }
    if let Some(label) = rings.keys().next() {
        return Err(SmilesError::UnclosedRing { label: *label });
    }

    let resolved: Vec<(usize, usize, BondType)> = bonds
        .iter()
        .map(|&(i, j, kind)| {
            let default = if atoms[i].aromatic && atoms[j].aromatic {
                BondType::Aromatic
            } else {
                BondType::Single
            };
            (i, j, kind.unwrap_or(default))
        })
        .collect();

    let mut explicit = vec![0i32; atoms.len()];
    let mut aromatic = vec![0i32; atoms.len()];
    for &(i, j, kind) in &resolved {
        for end in [i, j] {
            match kind {
                BondType::Aromatic => aromatic[end] += 1,
                other => explicit[end] += other.valence_weight() as i32,
            }
        }
    }
    let graph_atoms = atoms
        .iter()
        .enumerate()
        .map(|(idx, a)| {
            let h = a.hydrogens.unwrap_or_else(|| {
                chem::organic_implicit_h(a.element, explicit[idx], aromatic[idx])
            });
            Atom::new(a.element, a.charge, h)
        })
        .collect();
    let mol = MolGraph::build(graph_atoms, &resolved)?;
    Ok((mol, warnings))
}

fn is_organic_subset(element: Element) -> bool {
    element != Element::H
}

fn write_atom(mol: &MolGraph, atom: usize, aromatic: bool, out: &mut String) {
    let a = mol.atoms()[atom];
    let symbol = if aromatic {
        a.element.symbol().to_ascii_lowercase()
    } else {
        a.element.symbol().to_string()
    };
    let organic = a.formal_charge == 0
        && is_organic_subset(a.element)
        && a.implicit_h == chem::default_implicit_h(mol, atom);
    if organic {
        out.push_str(&symbol);
        return;
    }
    out.push('[');
    out.push_str(&symbol);
    match a.implicit_h {
        0 => {}
        1 => out.push('H'),
        h => {
            out.push('H');
            out.push_str(&h.to_string());
        }
    }
    match a.formal_charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => out.push_str(&format!("+{c}")),
        c => out.push_str(&format!("-{}", -c)),
    }
    out.push(']');
}

fn ring_label(label: u32) -> String {
    if label < 10 {
        label.to_string()
    } else {
        format!("%{label:02}")
    }
}

struct Writer<'a> {
    mol: &'a MolGraph,
    aromatic: Vec<bool>,
    visited: Vec<bool>,
    // ring bonds (by bond index) still waiting to be closed, with their label
    open_rings: BTreeMap<usize, u32>,
    ring_bonds: Vec<bool>,
    out: String,
}

impl Writer<'_> {
    fn bond_text(&self, a: usize, b: usize, kind: BondType) -> Option<char> {
        let default = if self.aromatic[a] && self.aromatic[b] {
            BondType::Aromatic
        } else {
            BondType::Single
        };
        (kind != default).then_some(kind.symbol())
    }

    /// First pass: depth-first spanning tree; non-tree bonds become ring bonds.
    fn find_ring_bonds(&mut self, atom: usize, parent_bond: Option<usize>) {
        self.visited[atom] = true;
        for &(nb, k) in self.mol.neighbors(atom) {
            if Some(k) == parent_bond || self.ring_bonds[k] {
                continue;
            }
            if self.visited[nb] {
                self.ring_bonds[k] = true;
            } else {
                self.find_ring_bonds(nb, Some(k));
            }
        }
    }

    fn lowest_free_label(&self) -> u32 {
        (1..)
            .find(|l| !self.open_rings.values().any(|v| v == l))
            .unwrap_or(1)
    }

    fn emit(&mut self, atom: usize, parent_bond: Option<usize>) {
        self.visited[atom] = true;
        write_atom(self.mol, atom, self.aromatic[atom], &mut self.out);
        let mut children = Vec::new();
        for &(nb, k) in self.mol.neighbors(atom) {
            if Some(k) == parent_bond {
                continue;
            }
            if self.ring_bonds[k] {
                let kind = self.mol.bonds()[k].kind;
                if let Some(label) = self.open_rings.remove(&k) {
                    self.out.push_str(&ring_label(label));
                } else {
                    let label = self.lowest_free_label();
                    if let Some(c) = self.bond_text(atom, nb, kind) {
                        self.out.push(c);
                    }
                    self.out.push_str(&ring_label(label));
                    self.open_rings.insert(k, label);
                }
            } else if !self.visited[nb] {
                children.push((nb, k));
            }
        }
        let last = children.len().saturating_sub(1);
        for (idx, (nb, k)) in children.into_iter().enumerate() {
            let branch = idx != last;
            if branch {
                self.out.push('(');
            }
            if let Some(c) = self.bond_text(atom, nb, self.mol.bonds()[k].kind) {
                self.out.push(c);
            }
            self.emit(nb, Some(k));
            if branch {
                self.out.push(')');
            }
        }
    }
}

/// Depth-first SMILES starting at atom 0. Not canonical.
pub fn write_smiles(mol: &MolGraph) -> Result<String, WriteError> {
    if mol.atom_count() == 0 {
        return Err(WriteError::Empty);
    }
    if !mol.is_connected() {
        return Err(WriteError::Disconnected);
    }
    let n = mol.atom_count();
    let aromatic = (0..n)
        .map(|i| mol.is_aromatic_atom(i) && mol.atoms()[i].element.can_be_aromatic())
        .collect();
    let mut writer = Writer {
        mol,
        aromatic,
        visited: vec![false; n],
        open_rings: BTreeMap::new(),
        ring_bonds: vec![false; mol.bond_count()],
        out: String::new(),
    };
    writer.find_ring_bonds(0, None);
    writer.visited.fill(false);
    writer.emit(0, None);
    Ok(writer.out)
}

/// Writes each connected component and joins them with `.`; for display only,
/// since the reader rejects multi-fragment input.
pub fn write_fragments(mol: &MolGraph) -> Result<String, WriteError> {
    if mol.atom_count() == 0 {
        return Err(WriteError::Empty);
    }
    let mut parts = Vec::new();
    for component in mol.components() {
        let mut index = vec![usize::MAX; mol.atom_count()];
        for (new, &old) in component.iter().enumerate() {
            index[old] = new;
        }
        let atoms = component.iter().map(|&i| mol.atoms()[i]).collect();
        let bonds: Vec<_> = mol
            .bonds()
            .iter()
            .filter(|b| index[b.i] != usize::MAX)
            .map(|b| (index[b.i], index[b.j], b.kind))
            .collect();
        let sub = MolGraph::build(atoms, &bonds).expect("induced subgraph of a valid graph");
        parts.push(write_smiles(&sub)?);
    }
    Ok(parts.join("."))
}
