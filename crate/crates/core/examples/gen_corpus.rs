//! Regenerates `data/corpus.csv`: 495 distinct random molecules with 2 to 12
//! heavy atoms followed by five reference drugs.
//!
//!     cargo run -p molgvae --example gen_corpus > crates/core/data/corpus.csv

use molgvae::chem::{is_isomorphic, random_molecule, Element, MolGraph};
use molgvae::smiles::{parse_smiles, write_smiles};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GENERATED: usize = 495;

const DRUGS: [&str; 5] = [
    "CC(=O)Oc1ccccc1C(=O)O",
    "CC(N)Cc1ccccc1",
    "CC(NC)Cc1ccc2OCOc2c1",
    "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
    "CN1CCCC1c1cccnc1",
];

fn row(smiles: &str, mol: &MolGraph) -> String {
    let hetero = mol
        .atoms()
        .iter()
        .filter(|a| !matches!(a.element, Element::C | Element::H))
        .count();
    format!("{smiles},{},{hetero}", mol.heavy_atom_count())
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    let mut kept: Vec<MolGraph> = Vec::new();
    println!("smiles,heavy_atoms,hetero_atoms");
    while kept.len() < GENERATED {
        let size = rng.random_range(2..=12);
        let mol = random_molecule(&mut rng, size);
        if kept.iter().any(|k| is_isomorphic(k, &mol)) {
            continue;
        }
        let smiles = write_smiles(&mol).expect("generated molecules are connected");
        let back = parse_smiles(&smiles).expect("written SMILES parses");
        assert!(is_isomorphic(&back, &mol), "round trip failed for {smiles}");
        println!("{}", row(&smiles, &mol));
        kept.push(mol);
    }
    for smiles in DRUGS {
        println!(
            "{}",
            row(smiles, &parse_smiles(smiles).expect("drug SMILES parses"))
        );
    }
}
