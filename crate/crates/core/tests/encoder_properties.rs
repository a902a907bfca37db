use molgvae::chem::{
    adjacency_tensor, node_features, random_molecule, MolGraph, FEATURE_WIDTH, NUM_RELATIONS,
};
use molgvae::encoder::{
    encode, weight_name, EncoderWeights, RelationOperators, RgcnWeights, LATENT_DIM,
    LAYER_PREFIXES, POOL_DIM, POOL_WEIGHT,
};
use molgvae::numkernel::{grad_check, ParamStore, Tape, Tensor};
use molgvae::smiles::parse_smiles;
use molgvae::vaemodel::{embed, encode_molecule};
use molgvae::ModelParams;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn molecule(seed: u64, atoms: usize) -> MolGraph {
    random_molecule(&mut ChaCha8Rng::seed_from_u64(seed), atoms)
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

fn features(mol: &MolGraph) -> Tensor<f64> {
    Tensor::matrix(
        mol.atom_count(),
        FEATURE_WIDTH,
        node_features(mol).as_slice().to_vec(),
    )
    .unwrap()
}

fn first_layer(mol: &MolGraph, store: &ParamStore<f64>) -> Tensor<f64> {
    let tape = Tape::new();
    let graph = RelationOperators::new(&tape, &adjacency_tensor(mol)).unwrap();
    let weights = RgcnWeights::bind(&tape, store, LAYER_PREFIXES[0]).unwrap();
    let h = tape.constant(features(mol)).unwrap();
    molgvae::encoder::rgcn_layer(h, &graph, &weights, true)
        .unwrap()
        .value()
}

type Matrix = Vec<Vec<f64>>;

fn as_matrix(t: &Tensor<f64>) -> Matrix {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn mat_mul(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp() - 1.0
    }
}

/// Loop-level reference encoder: self term plus the neighbour mean per bond type.
fn reference_layer(
    mol: &MolGraph,
    h: &Matrix,
    store: &ParamStore<f64>,
    prefix: &str,
    activate: bool,
) -> Matrix {
    let adjacency = adjacency_tensor(mol);
    let n = mol.atom_count();
    let mut out = mat_mul(
        h,
        &as_matrix(store.get(&weight_name(prefix, None)).unwrap()),
    );
    for r in 0..NUM_RELATIONS {
        let projected = mat_mul(
            h,
            &as_matrix(store.get(&weight_name(prefix, Some(r))).unwrap()),
        );
        for (i, row) in out.iter_mut().enumerate() {
            let nbrs: Vec<usize> = (0..n).filter(|&j| adjacency.get(i, j, r) == 1.0).collect();
            for &j in &nbrs {
                for (o, p) in row.iter_mut().zip(&projected[j]) {
                    *o += p / nbrs.len() as f64;
                }
            }
        }
    }
    if activate {
        out.iter_mut().flatten().for_each(|v| *v = elu(*v));
    }
    out
}

fn reference_encode(mol: &MolGraph, store: &ParamStore<f64>) -> (Matrix, Matrix, Vec<f64>) {
    let x = as_matrix(&features(mol));
    let h1 = reference_layer(mol, &x, store, "enc.l1", true);
    let h2 = reference_layer(mol, &h1, store, "enc.l2", true);
    let mu = reference_layer(mol, &h2, store, "enc.mu", false);
    let log_std = reference_layer(mol, &h2, store, "enc.sigma", false);
    let scores = mat_mul(&mu, &as_matrix(store.get(POOL_WEIGHT).unwrap()));
    let mut pooled = vec![0.0; POOL_DIM];
    for row in scores {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for (p, v) in pooled.iter_mut().zip(&row) {
            *p += (v - max).exp() / total;
        }
    }
    (mu, log_std, pooled)
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn matches_loop_reference_on_drugs() {
    let params = ModelParams::init(11);
    for s in [
        "CC(=O)Oc1ccccc1C(=O)O",
        "CC(N)Cc1ccccc1",
        "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
        "C#CC=CN",
        "[NH4+]",
    ] {
        let mol = parse_smiles(s).unwrap();
        let (mu, log_std) = encode_molecule(&mol, &params).unwrap();
        let (ref_mu, ref_ls, ref_pooled) = reference_encode(&mol, params.store());
        assert_eq!(mu.shape(), [mol.atom_count(), LATENT_DIM]);
        assert!(max_gap(mu.data(), &ref_mu.concat()) < 1e-12, "{s}");
        assert!(max_gap(log_std.data(), &ref_ls.concat()) < 1e-12, "{s}");
        let pooled = embed(&mol, &params).unwrap();
        assert_eq!(pooled.shape(), [1, POOL_DIM]);
        assert!(max_gap(pooled.data(), &ref_pooled) < 1e-12, "{s}");
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let mol = parse_smiles("OC(=O)c1ccncc1C#N").unwrap();
    let params = ModelParams::init(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = mol.atom_count();
    let w_mu = Tensor::from_fn(n, LATENT_DIM, |_, _| rng.random_range(-1.0..1.0));
    let w_ls = Tensor::from_fn(n, LATENT_DIM, |_, _| rng.random_range(-1.0..1.0));
    let report = grad_check(
        |tape, store| {
            let graph = RelationOperators::new(tape, &adjacency_tensor(&mol))?;
            let weights = EncoderWeights::bind(tape, store)?;
            let (mu, log_std) = encode(tape.constant(features(&mol))?, &graph, &weights)?;
            let a = mu.hadamard(tape.constant(w_mu.clone())?)?.sum()?;
            let b = log_std.hadamard(tape.constant(w_ls.clone())?)?.sum()?;
            a.add(b)
        },
        params.store(),
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

fn perturbed(params: &ModelParams, name: &str, delta: f64) -> ModelParams {
    let mut p = params.clone();
    p.store_mut()
        .get_mut(name)
        .unwrap()
        .data_mut()
        .iter_mut()
        .for_each(|v| *v += delta);
    p
}

#[test]
fn first_layers_feed_both_heads() {
    let mol = parse_smiles("CCOC(=O)N").unwrap();
    let params = ModelParams::init(5);
    let (mu, ls) = encode_molecule(&mol, &params).unwrap();

    let (mu1, ls1) = encode_molecule(&mol, &perturbed(&params, "enc.l1.self", 1e-3)).unwrap();
    assert!(max_gap(mu.data(), mu1.data()) > 1e-9);
    assert!(max_gap(ls.data(), ls1.data()) > 1e-9);

    let (mu2, ls2) = encode_molecule(&mol, &perturbed(&params, "enc.mu.self", 1e-3)).unwrap();
    assert!(max_gap(mu.data(), mu2.data()) > 1e-9);
    assert_eq!(ls.data(), ls2.data());

    let (mu3, ls3) = encode_molecule(&mol, &perturbed(&params, "enc.sigma.self", 1e-3)).unwrap();
    assert_eq!(mu.data(), mu3.data());
    assert!(max_gap(ls.data(), ls3.data()) > 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layer_is_permutation_equivariant(seed in any::<u64>(), atoms in 1usize..=12, p in any::<u64>(), w in any::<u64>()) {
        let mol = molecule(seed, atoms);
        let perm = shuffled(mol.atom_count(), p);
        let params = ModelParams::init(w);
        let h = first_layer(&mol, params.store());
        let hp = first_layer(&mol.permuted(&perm), params.store());
        for (i, &pi) in perm.iter().enumerate() {
            prop_assert!(max_gap(h.row(i), hp.row(pi)) < 1e-12);
        }
    }

    #[test]
    fn pooled_vector_is_permutation_invariant_and_sums_to_atom_count(
        seed in any::<u64>(),
        atoms in 1usize..=12,
        p in any::<u64>(),
        w in any::<u64>(),
    ) {
        let mol = molecule(seed, atoms);
        let params = ModelParams::init(w);
        let g = embed(&mol, &params).unwrap();
        let gp = embed(&mol.permuted(&shuffled(mol.atom_count(), p)), &params).unwrap();
        prop_assert!(max_gap(g.data(), gp.data()) < 1e-12);
        prop_assert!((g.data().iter().sum::<f64>() - mol.atom_count() as f64).abs() < 1e-10);
        prop_assert!(g.data().iter().all(|&v| v > 0.0));
    }
}
