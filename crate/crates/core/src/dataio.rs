//! Dataset ingestion, checkpoints and the bundled corpus.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::MolGraph;
use crate::numkernel::{ParamStore, Scalar, Tensor};
use crate::smiles::parse_smiles;
use crate::train::{Sample, TrainConfig};
use crate::vaemodel::ModelParams;

pub const CHECKPOINT_VERSION: u32 = 1;

const BUNDLED_CSV: &str = include_str!("../data/corpus.csv");

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("no usable molecules in {source_name} ({skipped} skipped)")]
    EmptyAfterFiltering { source_name: String, skipped: usize },
    #[error("unknown property `{name}`; available: {available:?}")]
    UnknownProperty {
        name: String,
        available: Vec<String>,
    },
    #[error("checkpoint version {found} is not supported (expected version {expected})")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptTensor(String),
}

/// Why ingestion dropped rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SkipCounts {
    pub parse_error: usize,
    pub oversize: usize,
    pub bad_value: usize,
}

impl SkipCounts {
    pub fn total(&self) -> usize {
        self.parse_error + self.oversize + self.bad_value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub smiles: String,
    pub mol: MolGraph,
    /// Same order as [`Dataset::property_names`].
    pub properties: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub property_names: Vec<String>,
    pub skipped: SkipCounts,
    pub source: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mols(&self) -> Vec<&MolGraph> {
        self.records.iter().map(|r| &r.mol).collect()
    }

    fn property_index(&self, name: &str) -> Result<usize, DataError> {
        self.property_names
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| DataError::UnknownProperty {
                name: name.to_string(),
                available: self.property_names.clone(),
            })
    }

    pub fn property(&self, name: &str) -> Result<Vec<f64>, DataError> {
        let k = self.property_index(name)?;
        Ok(self.records.iter().map(|r| r.properties[k]).collect())
    }

    /// Training samples labelled with the named column.
    pub fn samples(&self, name: &str) -> Result<Vec<Sample>, DataError> {
        let k = self.property_index(name)?;
        Ok(self
            .records
            .iter()
            .map(|r| Sample {
                smiles: r.smiles.clone(),
                mol: r.mol.clone(),
                label: r.properties[k],
            })
            .collect())
    }

    /// Samples with a zero label, for property-free training.
    pub fn unlabelled_samples(&self) -> Vec<Sample> {
        self.records
            .iter()
            .map(|r| Sample {
                smiles: r.smiles.clone(),
                mol: r.mol.clone(),
                label: 0.0,
            })
            .collect()
    }

    /// Seeded shuffle into `(train, test)`, the test part holding
    /// `round(test_fraction * len)` records, each part keeping file order.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test_len =
            ((self.len() as f64 * test_fraction.clamp(0.0, 1.0)).round() as usize).min(self.len());
        let mut test: Vec<usize> = order[..test_len].to_vec();
        let mut train: Vec<usize> = order[test_len..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        let part = |idx: &[usize], tag: &str| Dataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            property_names: self.property_names.clone(),
            skipped: SkipCounts::default(),
            source: format!("{} ({tag})", self.source),
        };
        (part(&train, "train"), part(&test, "test"))
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => DataError::FileNotFound(path.to_path_buf()),
        _ => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
    })
}

/// Loads `smiles,<prop>...` rows, skipping unparsable, oversized or
/// ill-valued rows.
pub fn load_csv(path: impl AsRef<Path>, max_atoms: usize) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    parse_csv(&read(path)?, max_atoms, &path.display().to_string())
}

pub fn parse_csv(text: &str, max_atoms: usize, source: &str) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| DataError::BadHeader(e.to_string()))?
        .clone();
    match header.get(0) {
        Some(first) if first.eq_ignore_ascii_case("smiles") => {}
        other => {
            return Err(DataError::BadHeader(format!(
                "first column must be `smiles`, found `{}`",
                other.unwrap_or("")
            )))
        }
    }
    let property_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut records = Vec::new();
    let mut skipped = SkipCounts::default();
    for row in reader.records() {
        let Ok(row) = row else {
            skipped.bad_value += 1;
            continue;
        };
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != header.len() {
            skipped.bad_value += 1;
            continue;
        }
        let values: Option<Vec<f64>> = row
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect();
        let Some(properties) = values else {
            skipped.bad_value += 1;
            continue;
        };
        if let Some(mol) = admit(&row[0], max_atoms, &mut skipped) {
            records.push(Record {
                smiles: row[0].to_string(),
                mol,
                properties,
            });
        }
    }
    finish(records, property_names, skipped, source)
}

/// Loads one SMILES per line with an optional name after whitespace.
pub fn load_smi(path: impl AsRef<Path>, max_atoms: usize) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    parse_smi(&read(path)?, max_atoms, &path.display().to_string())
}

pub fn parse_smi(text: &str, max_atoms: usize, source: &str) -> Result<Dataset, DataError> {
    let mut records = Vec::new();
    let mut skipped = SkipCounts::default();
    for line in text.lines() {
        let Some(smiles) = line.split_whitespace().next() else {
            continue;
        };
        if let Some(mol) = admit(smiles, max_atoms, &mut skipped) {
            records.push(Record {
                smiles: smiles.to_string(),
                mol,
                properties: Vec::new(),
            });
        }
    }
    finish(records, Vec::new(), skipped, source)
}

fn admit(smiles: &str, max_atoms: usize, skipped: &mut SkipCounts) -> Option<MolGraph> {
    match parse_smiles(smiles) {
        Err(_) => {
            skipped.parse_error += 1;
            None
        }
        Ok(mol) if mol.atom_count() > max_atoms => {
            skipped.oversize += 1;
            None
        }
        Ok(mol) => Some(mol),
    }
}

fn finish(
    records: Vec<Record>,
    property_names: Vec<String>,
    skipped: SkipCounts,
    source: &str,
) -> Result<Dataset, DataError> {
    if records.is_empty() {
        return Err(DataError::EmptyAfterFiltering {
            source_name: source.to_string(),
            skipped: skipped.total(),
        });
    }
    Ok(Dataset {
        records,
        property_names,
        skipped,
        source: source.to_string(),
    })
}

/// The corpus shipped with the crate: small generated molecules plus five
/// reference drugs, with `heavy_atoms` and `hetero_atoms` columns.
pub fn bundled_corpus() -> Dataset {
    parse_csv(BUNDLED_CSV, usize::MAX, "bundled corpus").expect("bundled corpus parses")
}

/// Raw text of the bundled corpus.
pub fn bundled_corpus_csv() -> &'static str {
    BUNDLED_CSV
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    config: TrainConfig,
    tensors: BTreeMap<String, TensorRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    shape: Vec<usize>,
    data: String,
}

/// JSON text of a checkpoint; values are stored as little-endian `f64`.
pub fn checkpoint_to_string<T: Scalar>(params: &ModelParams<T>, config: &TrainConfig) -> String {
    let tensors = params
        .store()
        .iter()
        .map(|(name, t)| {
            let bytes: Vec<u8> = t
                .data()
                .iter()
                .flat_map(|v| v.as_f64().to_le_bytes())
                .collect();
            let record = TensorRecord {
                shape: t.shape().to_vec(),
                data: BASE64.encode(bytes),
            };
            (name.to_string(), record)
        })
        .collect();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config: *config,
        tensors,
    };
    serde_json::to_string_pretty(&file).expect("checkpoint serializes")
}

pub fn checkpoint_from_str<T: Scalar>(
    text: &str,
) -> Result<(ModelParams<T>, TrainConfig), DataError> {
    let corrupt = |m: String| DataError::CorruptTensor(m);
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    let found = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing version".into()))?;
    if found != CHECKPOINT_VERSION as u64 {
        return Err(DataError::VersionMismatch {
            found,
            expected: CHECKPOINT_VERSION,
        });
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    let mut store = ParamStore::new();
    for (name, record) in file.tensors {
        let bytes = BASE64
            .decode(record.data.as_bytes())
            .map_err(|e| corrupt(format!("{name}: {e}")))?;
        let expected: usize = record.shape.iter().product();
        if bytes.len() != expected * 8 {
            return Err(corrupt(format!(
                "{name}: {} bytes for shape {:?}",
                bytes.len(),
                record.shape
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("chunks of 8"))))
            .collect();
        let tensor =
            Tensor::new(record.shape, data).map_err(|e| corrupt(format!("{name}: {e}")))?;
        store
            .insert(&name, tensor)
            .map_err(|e| corrupt(e.to_string()))?;
    }
    let params = ModelParams::from_store(store).map_err(|e| corrupt(e.to_string()))?;
    Ok((params, file.config))
}

pub fn save_checkpoint<T: Scalar>(
    params: &ModelParams<T>,
    config: &TrainConfig,
    path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, checkpoint_to_string(params, config)).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(ModelParams<T>, TrainConfig), DataError> {
    checkpoint_from_str(&read(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_and_skips() {
        let d = parse_csv("smiles,logp\nCCO,0.5\nc1ccccc1,2.1\n", 20, "t").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.skipped.total(), 0);
        assert_eq!(d.property("logp").unwrap(), vec![0.5, 2.1]);

        let d = parse_csv("smiles,p\nC(,1\nCC,2\n", 20, "t").unwrap();
        assert_eq!(d.skipped.parse_error, 1);
        assert_eq!(d.len(), 1);

        let long = "C".repeat(25);
        let d = parse_csv(&format!("smiles,p\n{long},1\nCC,2\n"), 20, "t").unwrap();
        assert_eq!(d.skipped.oversize, 1);

        let d = parse_csv("smiles,p\nCC,abc\nCC,1,2\nCO,3\n", 20, "t").unwrap();
        assert_eq!(d.skipped.bad_value, 2);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            parse_csv("name,p\nCC,1\n", 20, "t"),
            Err(DataError::BadHeader(_))
        ));
        assert!(matches!(
            parse_csv("smiles,p\nC(,1\n", 20, "t"),
            Err(DataError::EmptyAfterFiltering { skipped: 1, .. })
        ));
        assert!(matches!(
            load_csv("/nonexistent/file.csv", 20),
            Err(DataError::FileNotFound(_))
        ));
        let d = parse_csv("smiles,p\nCC,1\n", 20, "t").unwrap();
        assert!(matches!(
            d.samples("q"),
            Err(DataError::UnknownProperty { .. })
        ));
    }

    #[test]
    fn smi_lines() {
        let d = parse_smi("CCO ethanol\n\nc1ccccc1\tbenzene\nC(\n", 20, "t").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.skipped.parse_error, 1);
        assert_eq!(d.records[1].smiles, "c1ccccc1");
    }

    #[test]
    fn split_partitions() {
        let d = bundled_corpus();
        let (train, test) = d.split(0.2, 7);
        assert_eq!(train.len() + test.len(), d.len());
        assert_eq!(test.len(), (d.len() as f64 * 0.2).round() as usize);
        let (again, _) = d.split(0.2, 7);
        assert_eq!(train, again);
    }

    #[test]
    fn bundled_corpus_shape() {
        let d = bundled_corpus();
        assert_eq!(d.len(), 500);
        assert_eq!(d.skipped.total(), 0);
        assert_eq!(d.property_names, vec!["heavy_atoms", "hetero_atoms"]);
        for r in &d.records {
            assert_eq!(r.properties[0], r.mol.heavy_atom_count() as f64);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let params = ModelParams::<f64>::init(5);
        let config = TrainConfig {
            seed: 9,
            ..TrainConfig::default()
        };
        let text = checkpoint_to_string(&params, &config);
        let (back, cfg) = checkpoint_from_str::<f64>(&text).unwrap();
        assert_eq!(back, params);
        assert_eq!(cfg, config);
        assert_eq!(checkpoint_to_string(&back, &cfg), text);
    }

    #[test]
    fn checkpoint_failures() {
        let text = checkpoint_to_string(&ModelParams::<f64>::init(1), &TrainConfig::default());
        let truncated = &text[..text.len() / 2];
        assert!(matches!(
            checkpoint_from_str::<f64>(truncated),
            Err(DataError::CorruptTensor(_))
        ));

        let old = text.replacen("\"version\": 1", "\"version\": 0", 1);
        let err = checkpoint_from_str::<f64>(&old).unwrap_err();
        assert!(matches!(
            err,
            DataError::VersionMismatch {
                found: 0,
                expected: 1
            }
        ));
        let msg = err.to_string();
        assert!(msg.contains('0') && msg.contains('1'), "{msg}");

        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["tensors"]["side.b2"]["shape"] = serde_json::json!([1, 2]);
        let reshaped = serde_json::to_string(&value).unwrap();
        assert!(matches!(
            checkpoint_from_str::<f64>(&reshaped),
            Err(DataError::CorruptTensor(_))
        ));
    }
}
