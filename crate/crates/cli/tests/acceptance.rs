//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::panic;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use molgvae::chem::is_isomorphic;
use molgvae::dataio::{bundled_corpus, bundled_corpus_csv};
use molgvae::fingerprint::{
    cosine, dice, latent_similarity, path_fingerprint, tanimoto, Fingerprint, FingerprintError,
    FpConfig,
};
use molgvae::numkernel::{Tape, Tensor};
use molgvae::smiles::{parse_smiles, write_smiles};
use molgvae::train::{evaluate_edge_auc, evaluate_validity, fit_probe, train, TrainConfig};
use molgvae::vaemodel::kl_term;
use molgvae::ModelParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_molgvae");

const ASPIRIN: &str = "CC(=O)Oc1ccccc1C(=O)O";

/// Comparison drugs with reference Tanimoto, Dice, Cosine and latent-metric values.
const DRUGS: [(&str, &str, [f64; 4]); 4] = [
    (
        "Amphetamine",
        "CC(N)Cc1ccccc1",
        [0.398, 0.569, 0.607, 0.363],
    ),
    ("MDMA", "CC(NC)Cc1ccc2OCOc2c1", [0.324, 0.490, 0.490, 0.199]),
    (
        "Caffeine",
        "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
        [0.258, 0.410, 0.434, 0.176],
    ),
    ("Nicotine", "CN1CCCC1c1cccnc1", [0.229, 0.373, 0.374, 0.147]),
];

const FINGERPRINT_TOLERANCE: f64 = 0.15;

type BitMetric = fn(&Fingerprint, &Fingerprint) -> Result<f64, FingerprintError>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn run_cli(args: &[&str]) -> (i32, Value) {
    let out = Command::new(BIN)
        .arg("--json")
        .args(args)
        .output()
        .expect("binary runs");
    let stdout = String::from_utf8_lossy(&out.stdout);
    let json = serde_json::from_str(stdout.trim()).unwrap_or(Value::Null);
    (out.status.code().unwrap_or(-1), json)
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..10u64 {
        let (code, json) = run_cli(&["gradcheck", "--seed", &seed.to_string()]);
        let err = json["max_rel_error"].as_f64().unwrap_or(f64::INFINITY);
        let atoms = json["atoms"].as_u64().unwrap_or(0);
        worst = worst.max(err);
        if code != 0 || err.is_nan() || err >= 1e-5 || !(4..=10).contains(&atoms) {
            failures.push(format!(
                "seed {seed}: exit {code} err {err:e} atoms {atoms}"
            ));
        }
    }
    let elapsed = start.elapsed();
    let fast = within(elapsed, Duration::from_secs(30));
    outcome(
        failures.is_empty() && fast,
        format!(
            "10 seeds, worst relative error {worst:.3e} (< 1e-5), {:.1}s (< 30s){}",
            elapsed.as_secs_f64(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    )
}

fn closed_forms() -> Outcome {
    let kl = |mu: f64, log_std: f64| {
        let tape = Tape::new();
        let m = tape.constant(Tensor::scalar(mu)).unwrap();
        let s = tape.constant(Tensor::scalar(log_std)).unwrap();
        kl_term(m, s).unwrap().item().unwrap()
    };
    let bce = {
        let tape = Tape::new();
        let p = tape.constant(Tensor::full(3, 3, 0.5)).unwrap();
        let target = Tensor::from_fn(3, 3, |i, j| if i + j == 1 { 1.0 } else { 0.0 });
        p.pair_bce(&target).unwrap().item().unwrap()
    };
    let cases = [
        ("kl(0,0)", kl(0.0, 0.0), 0.0),
        ("kl(1,0)", kl(1.0, 0.0), 0.5),
        ("kl(0,ln2)", kl(0.0, 2f64.ln()), 1.5 - 2f64.ln()),
        ("bce(p=0.5)", bce, 2f64.ln()),
    ];
    let worst = cases.iter().map(|c| (c.1 - c.2).abs()).fold(0.0, f64::max);
    let listing: Vec<String> = cases
        .iter()
        .map(|c| format!("{} = {:.15}", c.0, c.1))
        .collect();
    outcome(
        worst <= 1e-12,
        format!("{}; max gap {worst:.1e} (<= 1e-12)", listing.join(", ")),
    )
}

/// Trains on 80% of the bundled corpus and returns the model for the latent check.
fn desk_training() -> (Outcome, ModelParams) {
    let start = Instant::now();
    let corpus = bundled_corpus();
    let (train_set, test_set) = corpus.split(0.2, 0);
    let samples = train_set.samples("heavy_atoms").unwrap();
    let config = TrainConfig {
        epochs: 200,
        seed: 0,
        ..TrainConfig::default()
    };
    let out = train::<f64>(&samples, &config).unwrap();
    let first = out.history.first().unwrap().total;
    let last = out.history.last().unwrap().total;
    let ratio = last / first;
    let train_auc = evaluate_edge_auc(&out.params, &train_set.mols()).unwrap();
    let validity = evaluate_validity(&out.params, &test_set.mols(), config.threshold).unwrap();
    let mols = corpus.mols();
    let probe = fit_probe(
        &out.params,
        &mols,
        &corpus.property("heavy_atoms").unwrap(),
        0,
    )
    .unwrap();
    let elapsed = start.elapsed();

    let checks = [
        (
            "a",
            ratio <= 0.4,
            format!("loss ratio {ratio:.4} (<= 0.40)"),
        ),
        (
            "b",
            train_auc >= 0.9,
            format!("train edge AUC {train_auc:.4} (>= 0.90)"),
        ),
        (
            "c",
            validity >= 0.5,
            format!("held-out validity {validity:.4} (>= 0.50)"),
        ),
        (
            "d",
            probe.r2 >= 0.5,
            format!("heavy-atom probe R2 {:.4} (>= 0.50)", probe.r2),
        ),
        (
            "t",
            within(elapsed, Duration::from_secs(600)),
            format!("{:.1}s (<= 600s)", elapsed.as_secs_f64()),
        ),
    ];
    let detail: Vec<String> = checks
        .iter()
        .map(|(tag, ok, text)| format!("({tag}) {} {text}", if *ok { "ok" } else { "FAIL" }))
        .collect();
    let passed = checks.iter().all(|c| c.1);
    (
        outcome(
            passed,
            format!(
                "{} train / {} held-out molecules, {}",
                train_set.len(),
                test_set.len(),
                detail.join(", ")
            ),
        ),
        out.params,
    )
}

fn strictly_descending(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] > w[1])
}

fn classical_metrics() -> Outcome {
    let start = Instant::now();
    let cfg = FpConfig::default();
    let fp = |s: &str| path_fingerprint(&parse_smiles(s).unwrap(), &cfg).unwrap();
    let reference = fp(ASPIRIN);
    let metrics: [(&str, BitMetric); 3] =
        [("tanimoto", tanimoto), ("dice", dice), ("cosine", cosine)];
    let mut ranks_ok = true;
    let mut lines = Vec::new();
    let mut deviations = Vec::new();
    for (m, (name, f)) in metrics.iter().enumerate() {
        let values: Vec<f64> = DRUGS
            .iter()
            .map(|d| f(&reference, &fp(d.1)).unwrap())
            .collect();
        // reference order: Amphetamine > MDMA > Caffeine > Nicotine
        let ranked = strictly_descending(&values);
        ranks_ok &= ranked;
        let mut parts = Vec::new();
        for (d, v) in DRUGS.iter().zip(&values) {
            let expected = d.2[m];
            let gap = v - expected;
            if gap.abs() > FINGERPRINT_TOLERANCE {
                deviations.push(format!(
                    "{name}/{}: {v:.3} vs {expected:.3} ({gap:+.3})",
                    d.0
                ));
            }
            parts.push(format!("{} {v:.3}", d.0));
        }
        lines.push(format!(
            "{name} [{}] order {}",
            parts.join(" "),
            if ranked { "ok" } else { "FAIL" }
        ));
    }

    let (code, json) = run_cli(&[
        "similar", "--metric", "tanimoto", "--smiles", ASPIRIN, "--smiles", DRUGS[0].1,
    ]);
    let cli_value = json["similarity"].as_f64().unwrap_or(f64::NAN);
    let cli_ok = code == 0 && cli_value == tanimoto(&reference, &fp(DRUGS[0].1)).unwrap();
    lines.push(format!(
        "cli tanimoto Aspirin/Amphetamine {cli_value:.3} vs 0.398"
    ));
    let elapsed = start.elapsed();
    let fast = within(elapsed, Duration::from_secs(5));
    if deviations.is_empty() {
        lines.push(format!(
            "all values within {FINGERPRINT_TOLERANCE} of reference"
        ));
    } else {
        lines.push(format!("deviation report: {}", deviations.join("; ")));
    }
    lines.push(format!("{:.2}s (< 5s)", elapsed.as_secs_f64()));
    outcome(ranks_ok && cli_ok && fast, lines.join("; "))
}

fn latent_metric(params: &ModelParams) -> Outcome {
    let aspirin = parse_smiles(ASPIRIN).unwrap();
    let drugs: Vec<_> = DRUGS.iter().map(|d| parse_smiles(d.1).unwrap()).collect();
    let self_sim = latent_similarity(&aspirin, &aspirin, params).unwrap();
    let mut symmetric = true;
    let mut values = Vec::new();
    for d in &drugs {
        let ab = latent_similarity(&aspirin, d, params).unwrap();
        let ba = latent_similarity(d, &aspirin, params).unwrap();
        symmetric &= ab == ba;
        values.push(ab);
    }
    let nearest = (0..4)
        .max_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    let farthest = (0..4)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    let agrees = nearest == 0 && farthest == 3;
    let listing: Vec<String> = DRUGS
        .iter()
        .zip(&values)
        .map(|(d, v)| format!("{} {v:.3} (reference {:.3})", d.0, d.2[3]))
        .collect();
    outcome(
        self_sim == 1.0 && symmetric,
        format!(
            "self {self_sim}, symmetric {symmetric}; {}; nearest {}; rank agreement (informative): {}",
            listing.join(", "),
            DRUGS[nearest].0,
            if agrees { "yes" } else { "no" }
        ),
    )
}

fn smiles_round_trip() -> Outcome {
    let mut total = 0;
    let mut failures = Vec::new();
    for line in bundled_corpus_csv().lines().skip(1) {
        let s = line.split(',').next().unwrap();
        total += 1;
        let ok = parse_smiles(s)
            .ok()
            .and_then(|m| write_smiles(&m).ok().map(|w| (m, w)))
            .and_then(|(m, w)| parse_smiles(&w).ok().map(|again| is_isomorphic(&m, &again)))
            .unwrap_or(false);
        if !ok {
            failures.push(s.to_string());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let alphabet = b"CNOSPFIBrlcnosp()[]=#:-+@/\\.%0123456789H";
    let mut crashes = 0;
    let mut typed_errors = 0;
    let hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    for round in 0..10_000 {
        let len = rng.random_range(0..32);
        let bytes: Vec<u8> = if round % 2 == 0 {
            (0..len).map(|_| rng.random()).collect()
        } else {
            (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect()
        };
        let text = String::from_utf8_lossy(&bytes).into_owned();
        match panic::catch_unwind(|| parse_smiles(&text).is_err()) {
            Ok(true) => typed_errors += 1,
            Ok(false) => {}
            Err(_) => crashes += 1,
        }
    }
    panic::set_hook(hook);
    outcome(
        failures.is_empty() && crashes == 0,
        format!(
            "{}/{total} corpus entries round-trip; fuzz 10000 inputs, {crashes} crashes, {typed_errors} typed errors{}",
            total - failures.len(),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(" ")) }
        ),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let run = |name: &str| {
        let ckpt = dir.join(format!("{name}.json"));
        let status = Command::new(BIN)
            .args([
                "train",
                "--property",
                "heavy_atoms",
                "--epochs",
                "3",
                "--seed",
                "7",
                "--out",
            ])
            .arg(&ckpt)
            .output()
            .expect("binary runs")
            .status;
        let history = std::fs::read(ckpt.with_extension("history.csv")).unwrap_or_default();
        (
            status.success(),
            std::fs::read(&ckpt).unwrap_or_default(),
            history,
        )
    };
    let (ok_a, ckpt_a, hist_a) = run("a");
    let (ok_b, ckpt_b, hist_b) = run("b");
    let same = ok_a && ok_b && !ckpt_a.is_empty() && ckpt_a == ckpt_b && hist_a == hist_b;
    outcome(
        same,
        format!(
            "two `train` runs (3 epochs, seed 7): checkpoints {} bytes, identical {}",
            ckpt_a.len(),
            same
        ),
    )
}

fn metric_axioms() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    let nbits = 2048;
    for _ in 0..10_000 {
        let density_a: f64 = rng.random_range(0.0..0.5);
        let density_b: f64 = rng.random_range(0.0..0.5);
        let a = Fingerprint::from_bits(
            nbits,
            (0..nbits)
                .filter(|_| rng.random_bool(density_a))
                .collect::<Vec<_>>(),
        );
        let b = Fingerprint::from_bits(
            nbits,
            (0..nbits)
                .filter(|_| rng.random_bool(density_b))
                .collect::<Vec<_>>(),
        );
        let (t, d, c) = (
            tanimoto(&a, &b).unwrap(),
            dice(&a, &b).unwrap(),
            cosine(&a, &b).unwrap(),
        );
        let symmetric = t == tanimoto(&b, &a).unwrap()
            && d == dice(&b, &a).unwrap()
            && c == cosine(&b, &a).unwrap();
        let bounded = [t, d, c].iter().all(|v| (0.0..=1.0).contains(v));
        let ordered = t <= c && t <= d;
        let identity = a.on_count() == 0
            || (tanimoto(&a, &a).unwrap() == 1.0
                && dice(&a, &a).unwrap() == 1.0
                && (cosine(&a, &a).unwrap() - 1.0).abs() <= 1e-15);
        if !(symmetric && bounded && ordered && identity) {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("10000 random pairs, {violations} violations"),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!(
            "criterion {name}: {} | {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((name, o));
    };
    report("1 gradient check", gradient_check());
    report("2 closed forms", closed_forms());
    let (training, params) = desk_training();
    report("3 desk-scale training", training);
    report("4 fingerprint similarity ranking", classical_metrics());
    report("5 latent similarity", latent_metric(&params));
    report("6 SMILES round trip", smiles_round_trip());
    report("7 determinism", determinism(dir.path()));
    report("8 metric axioms", metric_axioms());

    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.1.passed)
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({})", failed.join(", "))
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
