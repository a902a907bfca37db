//! `molgvae`: train the molecular graph VAE and query it from the shell.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O or parse failure, 3 domain error
//! (invalid or oversized molecule, unknown property), 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use molgvae::chem::{check_valence, random_molecule, MolGraph};
use molgvae::dataio::{self, DataError, Dataset};
use molgvae::encoder::LATENT_DIM;
use molgvae::fingerprint::{self, FpConfig};
use molgvae::numkernel::{grad_check_with, GradCheckOptions, KernelError};
use molgvae::smiles::{parse_smiles, write_fragments};
use molgvae::train::{self, TrainConfig, TrainError};
use molgvae::vaemodel::{self, LossWeights, ModelError};
use molgvae::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(
    name = "molgvae",
    version,
    about = "Graph variational autoencoder for small molecules"
)]
struct Cli {
    /// Print one JSON document per invocation instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a CSV (`smiles,<prop>...`) and write a checkpoint plus history CSV.
    Train(TrainArgs),
    /// Print the pooled 64-entry molecule vector.
    Encode(ModelQuery),
    /// Decode the mean latent back into a graph and check its valences.
    Reconstruct {
        #[command(flatten)]
        query: ModelQuery,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Print the side-predictor output.
    Predict(ModelQuery),
    /// Similarity between two molecules.
    Similar {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Give exactly twice.
        #[arg(long = "smiles", num_args = 1, required = true)]
        smiles: Vec<String>,
        #[arg(long, value_enum, default_value_t = Metric::Latent)]
        metric: Metric,
    },
    /// Hashed path fingerprint as hex.
    Fingerprint {
        #[arg(long)]
        smiles: String,
        #[arg(long, default_value_t = 2048)]
        nbits: usize,
        #[arg(long, default_value_t = 1)]
        min_path: usize,
        #[arg(long, default_value_t = 7)]
        max_path: usize,
        #[arg(long, default_value_t = 2)]
        bits_per_hash: usize,
    },
    /// Exit 0 if every atom has a valid valence, 3 otherwise.
    Validate {
        #[arg(long)]
        smiles: String,
    },
    /// Compare model gradients with central differences on a random molecule.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        /// Approximate number of parameter coordinates probed.
        #[arg(long, default_value_t = 512)]
        coordinates: usize,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Training CSV; the bundled corpus when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Column used as the side-prediction target.
    #[arg(long)]
    property: Option<String>,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// History CSV path; defaults to the checkpoint path with `.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().beta)]
    beta: f64,
    #[arg(long, default_value_t = TrainConfig::default().lambda)]
    lambda: f64,
    #[arg(long, default_value_t = TrainConfig::default().max_atoms)]
    max_atoms: usize,
}

#[derive(clap::Args)]
struct ModelQuery {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    smiles: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Latent,
    Tanimoto,
    Dice,
    Cosine,
}

/// An error together with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const USAGE: u8 = 1;
const IO: u8 = 2;
const DOMAIN: u8 = 3;
const NUMERIC: u8 = 4;

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code,
        error: error.into(),
    }
}

fn data_failure(e: DataError) -> Failure {
    let code = match e {
        DataError::EmptyAfterFiltering { .. } | DataError::UnknownProperty { .. } => DOMAIN,
        _ => IO,
    };
    fail(code, e)
}

fn kernel_failure(e: KernelError) -> Failure {
    let code = match e {
        KernelError::NonFinite { .. } => NUMERIC,
        _ => DOMAIN,
    };
    fail(code, e)
}

fn model_failure(e: ModelError) -> Failure {
    match e {
        ModelError::Kernel(k) => kernel_failure(k),
        other => fail(DOMAIN, other),
    }
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::NonFinite { .. } => fail(NUMERIC, e),
        TrainError::Model(m) => model_failure(m),
        TrainError::Kernel(k) => kernel_failure(k),
        other => fail(DOMAIN, other),
    }
}

/// Text and JSON renderings of a successful run, plus the exit code.
struct Report {
    text: String,
    json: Value,
    code: u8,
}

impl Report {
    fn ok(text: String, json: Value) -> Self {
        Report {
            text,
            json,
            code: 0,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if std::env::args().any(|a| a == "--json") {
                let message = e.kind().to_string();
                println!("{}", json!({"error": {"code": USAGE, "message": message}}));
            } else {
                let _ = e.print();
            }
            return ExitCode::from(USAGE);
        }
    };
    match run(cli.command) {
        Ok(report) => {
            if cli.json {
                println!("{}", report.json);
            } else {
                print!("{}", report.text);
            }
            ExitCode::from(report.code)
        }
        Err(failure) => {
            if cli.json {
                println!(
                    "{}",
                    json!({"error": {"code": failure.code, "message": format!("{:#}", failure.error)}})
                );
            } else {
                eprintln!("error: {:#}", failure.error);
            }
            ExitCode::from(failure.code)
        }
    }
}

fn run(command: Command) -> Result<Report, Failure> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Encode(q) => cmd_encode(q),
        Command::Reconstruct { query, threshold } => cmd_reconstruct(query, threshold),
        Command::Predict(q) => cmd_predict(q),
        Command::Similar {
            ckpt,
            smiles,
            metric,
        } => cmd_similar(ckpt, smiles, metric),
        Command::Fingerprint {
            smiles,
            nbits,
            min_path,
            max_path,
            bits_per_hash,
        } => {
            let cfg = FpConfig {
                min_path,
                max_path,
                bits_per_hash,
                nbits,
                ..FpConfig::default()
            };
            cmd_fingerprint(&smiles, cfg)
        }
        Command::Validate { smiles } => cmd_validate(&smiles),
        Command::Gradcheck {
            seed,
            eps,
            coordinates,
        } => cmd_gradcheck(seed, eps, coordinates),
    }
}

fn molecule(smiles: &str) -> Result<MolGraph, Failure> {
    parse_smiles(smiles)
        .map_err(|e| fail(IO, anyhow!(e).context(format!("cannot parse `{smiles}`"))))
}

fn load_model(path: &Path) -> Result<(ModelParams, TrainConfig), Failure> {
    dataio::load_checkpoint(path).map_err(data_failure)
}

fn model_molecule(q: &ModelQuery) -> Result<(ModelParams, TrainConfig, MolGraph), Failure> {
    let (params, config) = load_model(&q.ckpt)?;
    let mol = molecule(&q.smiles)?;
    if mol.atom_count() > config.max_atoms {
        return Err(fail(
            DOMAIN,
            anyhow!(
                "`{}` has {} atoms, the model accepts at most {}",
                q.smiles,
                mol.atom_count(),
                config.max_atoms
            ),
        ));
    }
    Ok((params, config, mol))
}

fn cmd_train(args: TrainArgs) -> Result<Report, Failure> {
    let dataset: Dataset = match &args.data {
        Some(path) => dataio::load_csv(path, args.max_atoms).map_err(data_failure)?,
        None => dataio::bundled_corpus(),
    };
    let samples = match &args.property {
        Some(name) => dataset.samples(name).map_err(data_failure)?,
        None if args.lambda == 0.0 => dataset.unlabelled_samples(),
        None => {
            return Err(fail(
                USAGE,
                anyhow!("--property is required unless --lambda 0"),
            ))
        }
    };
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        beta: args.beta,
        lambda: args.lambda,
        seed: args.seed,
        max_atoms: args.max_atoms,
        ..TrainConfig::default()
    };
    let out = train::train::<f64>(&samples, &config).map_err(train_failure)?;

    let history_path = args
        .history
        .unwrap_or_else(|| args.out.with_extension("history.csv"));
    let mut history = String::from("epoch,recon,kl,side,total\n");
    for (epoch, h) in out.history.iter().enumerate() {
        history.push_str(&format!(
            "{},{},{},{},{}\n",
            epoch + 1,
            h.recon,
            h.kl,
            h.side_mse,
            h.total
        ));
    }
    std::fs::write(&history_path, history)
        .with_context(|| format!("writing {}", history_path.display()))
        .map_err(|e| fail(IO, e))?;
    dataio::save_checkpoint(&out.params, &config, &args.out).map_err(data_failure)?;

    let last = out.history.last();
    let mut text = format!(
        "trained on {} molecules from {} for {} epochs ({} skipped)\n",
        samples.len(),
        dataset.source,
        config.epochs,
        dataset.skipped.total()
    );
    if let Some(h) = last {
        text.push_str(&format!(
            "final recon {:.6} kl {:.6} side {:.6} total {:.6}\n",
            h.recon, h.kl, h.side_mse, h.total
        ));
    }
    text.push_str(&format!(
        "checkpoint {}\nhistory {}\n",
        args.out.display(),
        history_path.display()
    ));
    let json = json!({
        "command": "train",
        "checkpoint": args.out.display().to_string(),
        "history": history_path.display().to_string(),
        "molecules": samples.len(),
        "skipped": dataset.skipped,
        "epochs": config.epochs,
        "final": last.map(|h| json!({"recon": h.recon, "kl": h.kl, "side": h.side_mse, "total": h.total})),
    });
    Ok(Report::ok(text, json))
}

fn cmd_encode(q: ModelQuery) -> Result<Report, Failure> {
    let (params, _, mol) = model_molecule(&q)?;
    let g = vaemodel::embed(&mol, &params).map_err(model_failure)?;
    let text: String = g.data().iter().map(|v| format!("{v:.16e}\n")).collect();
    Ok(Report::ok(
        text,
        json!({"command": "encode", "smiles": q.smiles, "pooled": g.data()}),
    ))
}

fn cmd_reconstruct(q: ModelQuery, threshold: f64) -> Result<Report, Failure> {
    let (params, _, mol) = model_molecule(&q)?;
    let probs = vaemodel::edge_probabilities(&mol, &params).map_err(model_failure)?;
    let (rebuilt, report) =
        vaemodel::reconstruct(&mol, &params, threshold).map_err(model_failure)?;
    let smiles = write_fragments(&rebuilt).map_err(|e| fail(DOMAIN, e))?;

    let n = mol.atom_count();
    let mut text = format!(
        "{smiles}\n{}\n",
        if report.valid { "valid" } else { "invalid" }
    );
    if !report.offending.is_empty() {
        text.push_str(&format!("offending atoms: {:?}\n", report.offending));
    }
    text.push_str("i\tj\tbonded\tp\n");
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = probs.get(i, j);
            let bonded = mol.bond_between(i, j).is_some();
            text.push_str(&format!("{i}\t{j}\t{}\t{p:.6}\n", bonded as u8));
            edges.push(json!({"i": i, "j": j, "bonded": bonded, "p": p}));
        }
    }
    let json = json!({
        "command": "reconstruct",
        "smiles": q.smiles,
        "threshold": threshold,
        "reconstructed": smiles,
        "valid": report.valid,
        "offending": report.offending,
        "edges": edges,
    });
    Ok(Report::ok(text, json))
}

fn cmd_predict(q: ModelQuery) -> Result<Report, Failure> {
    let (params, _, mol) = model_molecule(&q)?;
    let y = vaemodel::predict(&mol, &params).map_err(model_failure)?;
    Ok(Report::ok(
        format!("{y}\n"),
        json!({"command": "predict", "smiles": q.smiles, "prediction": y}),
    ))
}

fn cmd_similar(
    ckpt: Option<PathBuf>,
    smiles: Vec<String>,
    metric: Metric,
) -> Result<Report, Failure> {
    let [a, b] = smiles.as_slice() else {
        return Err(fail(
            USAGE,
            anyhow!("--smiles must be given exactly twice, got {}", smiles.len()),
        ));
    };
    let (ma, mb) = (molecule(a)?, molecule(b)?);
    let (name, value) = match metric {
        Metric::Latent => {
            let path = ckpt.ok_or_else(|| fail(USAGE, anyhow!("--metric latent needs --ckpt")))?;
            let (params, _) = load_model(&path)?;
            let s = fingerprint::latent_similarity(&ma, &mb, &params).map_err(|e| match e {
                fingerprint::FingerprintError::Model(m) => model_failure(m),
                other => fail(NUMERIC, other),
            })?;
            ("latent", s)
        }
        bits => {
            let cfg = FpConfig::default();
            let fa = fingerprint::path_fingerprint(&ma, &cfg).map_err(|e| fail(USAGE, e))?;
            let fb = fingerprint::path_fingerprint(&mb, &cfg).map_err(|e| fail(USAGE, e))?;
            let (name, f): (_, fn(_, _) -> _) = match bits {
                Metric::Tanimoto => ("tanimoto", fingerprint::tanimoto),
                Metric::Dice => ("dice", fingerprint::dice),
                _ => ("cosine", fingerprint::cosine),
            };
            (name, f(&fa, &fb).map_err(|e| fail(DOMAIN, e))?)
        }
    };
    let json = json!({"command": "similar", "metric": name, "smiles": [a, b], "similarity": value});
    Ok(Report::ok(format!("{value}\n"), json))
}

fn cmd_fingerprint(smiles: &str, cfg: FpConfig) -> Result<Report, Failure> {
    let mol = molecule(smiles)?;
    let fp = fingerprint::path_fingerprint(&mol, &cfg).map_err(|e| fail(USAGE, e))?;
    let hex = fp.to_hex();
    let text = format!(
        "{hex}\non_bits {} of {} density {:.6}\n",
        fp.on_count(),
        fp.nbits(),
        fp.density()
    );
    let json = json!({
        "command": "fingerprint",
        "smiles": smiles,
        "hex": hex,
        "nbits": fp.nbits(),
        "on_bits": fp.on_count(),
        "density": fp.density(),
        "target_density": cfg.target_density,
    });
    Ok(Report::ok(text, json))
}

fn cmd_validate(smiles: &str) -> Result<Report, Failure> {
    let mol = molecule(smiles)?;
    let report = check_valence(&mol);
    let offending: Vec<Value> = report
        .offending
        .iter()
        .map(|&i| json!({"index": i, "element": mol.atoms()[i].element.symbol()}))
        .collect();
    let text = if report.valid {
        "valid\n".to_string()
    } else {
        let atoms: Vec<String> = report
            .offending
            .iter()
            .map(|&i| format!("{}{}", mol.atoms()[i].element.symbol(), i))
            .collect();
        format!("invalid: {}\n", atoms.join(" "))
    };
    Ok(Report {
        text,
        json: json!({"command": "validate", "smiles": smiles, "valid": report.valid, "offending": offending}),
        code: if report.valid { 0 } else { DOMAIN },
    })
}

fn cmd_gradcheck(seed: u64, eps: f64, coordinates: usize) -> Result<Report, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = rng.random_range(4..=10);
    let mol = random_molecule(&mut rng, atoms);
    let params = ModelParams::init(rng.random());
    let noise = molgvae::Tensor::from_fn(mol.atom_count(), LATENT_DIM, |_, _| {
        rng.sample(StandardNormal)
    });
    let label: f64 = rng.random_range(0.0..1.0);
    let config = TrainConfig::default();
    let weights = LossWeights {
        beta: config.beta,
        lambda: config.lambda,
    };
    let options = GradCheckOptions { coordinates, seed };
    let report = grad_check_with(
        |tape, store| {
            vaemodel::loss_on_tape(tape, &mol, label, store, &noise, weights)
                .map(|(total, _)| total)
                .map_err(|e| match e {
                    ModelError::Kernel(k) => k,
                    other => KernelError::InvalidArgument(other.to_string()),
                })
        },
        params.store(),
        eps,
        options,
    )
    .map_err(kernel_failure)?;
    let smiles = write_fragments(&mol).unwrap_or_default();
    let passed = report.max_rel_error < 1e-5;
    let worst = report
        .worst
        .as_ref()
        .map(|(n, i)| format!("{n}[{i}]"))
        .unwrap_or_default();
    let text = format!(
        "molecule {smiles} ({} atoms)\nmax relative error {:e} over {} coordinates (worst {worst})\n{}\n",
        mol.atom_count(),
        report.max_rel_error,
        report.coordinates_checked,
        if passed { "pass" } else { "fail" }
    );
    let json = json!({
        "command": "gradcheck",
        "seed": seed,
        "smiles": smiles,
        "atoms": mol.atom_count(),
        "max_rel_error": report.max_rel_error,
        "coordinates": report.coordinates_checked,
        "worst": worst,
        "passed": passed,
    });
    Ok(Report {
        text,
        json,
        code: if passed { 0 } else { NUMERIC },
    })
}
