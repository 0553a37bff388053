//! Dataset directory ingestion and validation.
//!
//! A dataset directory holds `train.txt`, `valid.txt`, `test.txt` (one
//! `head<TAB>relation<TAB>tail` triple per line) and `entity2concept.txt`
//! (`entity<TAB>concept`, repeated for multi-concept entities). A
//! `manifest.txt` with `key=path` lines may override the four paths; relative
//! paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{KnowledgeGraph, RawConcept, RawDataset, RawTriple};

pub const TRAIN_FILE: &str = "train.txt";
pub const VALID_FILE: &str = "valid.txt";
pub const TEST_FILE: &str = "test.txt";
pub const CONCEPT_FILE: &str = "entity2concept.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: file is not valid UTF-8")]
    Utf8 { path: PathBuf },
    #[error("{path}:{line}: expected {expected} non-empty tab-separated fields, found {found}")]
    Malformed {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Record counts observed while loading.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FileCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub concept_lines: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub entity2concept: PathBuf,
    /// Filled by [`load_dataset`].
    pub counts: Option<FileCounts>,
    /// Hex SHA-256 per file key, filled by [`load_dataset`].
    pub checksums: BTreeMap<String, String>,
}

impl DatasetManifest {
    /// Standard file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetManifest {
            train: dir.join(TRAIN_FILE),
            valid: dir.join(VALID_FILE),
            test: dir.join(TEST_FILE),
            entity2concept: dir.join(CONCEPT_FILE),
            counts: None,
            checksums: BTreeMap::new(),
        }
    }

    /// Resolves a dataset location: a `manifest.txt` file, a directory
    /// containing one, or a directory using the standard names.
    pub fn locate(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        if path.is_file() {
            return Self::from_manifest(path);
        }
        let manifest = path.join(MANIFEST_FILE);
        if manifest.is_file() {
            Self::from_manifest(&manifest)
        } else {
            Ok(Self::in_dir(path))
        }
    }

    /// Parses `key=path` lines. Keys: `train`, `valid`, `test`,
    /// `entity2concept`. Missing keys default to the standard names.
    pub fn from_manifest(path: &Path) -> Result<Self, DatasetError> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut m = Self::in_dir(base);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| DatasetError::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=path, got {line:?}")))?;
            let value = base.join(value.trim());
            match key.trim() {
                "train" => m.train = value,
                "valid" => m.valid = value,
                "test" => m.test = value,
                "entity2concept" => m.entity2concept = value,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        Ok(m)
    }

    pub fn to_manifest_text(&self) -> String {
        format!(
            "train={}\nvalid={}\ntest={}\nentity2concept={}\n",
            self.train.display(),
            self.valid.display(),
            self.test.display(),
            self.entity2concept.display()
        )
    }
}

/// Reads all four files. Blank lines are skipped; a UTF-8 BOM and CRLF line
/// endings are tolerated. Any other line must have exactly the expected
/// number of non-empty tab-separated fields.
pub fn load_dataset(manifest: &mut DatasetManifest) -> Result<RawDataset, DatasetError> {
    let mut checksums = BTreeMap::new();
    let mut read = |key: &str, path: &Path| -> Result<String, DatasetError> {
        let bytes = fs::read(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        checksums.insert(key.to_string(), hex::encode(Sha256::digest(&bytes)));
        String::from_utf8(bytes).map_err(|_| DatasetError::Utf8 {
            path: path.to_path_buf(),
        })
    };
    let train = parse_triples(&read("train", &manifest.train)?, &manifest.train)?;
    let valid = parse_triples(&read("valid", &manifest.valid)?, &manifest.valid)?;
    let test = parse_triples(&read("test", &manifest.test)?, &manifest.test)?;
    let concepts = parse_concepts(
        &read("entity2concept", &manifest.entity2concept)?,
        &manifest.entity2concept,
    )?;
    manifest.counts = Some(FileCounts {
        train: train.len(),
        valid: valid.len(),
        test: test.len(),
        concept_lines: concepts.len(),
    });
    manifest.checksums = checksums;
    Ok(RawDataset {
        train,
        valid,
        test,
        concepts,
    })
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    let bytes = fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    String::from_utf8(bytes).map_err(|_| DatasetError::Utf8 {
        path: path.to_path_buf(),
    })
}

fn records<'a>(
    text: &'a str,
    path: &'a Path,
    expected: usize,
) -> impl Iterator<Item = Result<(usize, Vec<&'a str>), DatasetError>> + 'a {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    text.lines().enumerate().filter_map(move |(i, line)| {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            return None;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != expected || fields.iter().any(|f| f.is_empty()) {
            return Some(Err(DatasetError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                expected,
                found: fields.iter().filter(|f| !f.is_empty()).count(),
            }));
        }
        Some(Ok((i + 1, fields)))
    })
}

pub fn parse_triples(text: &str, path: &Path) -> Result<Vec<RawTriple>, DatasetError> {
    records(text, path, 3)
        .map(|r| {
            r.map(|(line, f)| RawTriple {
                head: f[0].to_string(),
                relation: f[1].to_string(),
                tail: f[2].to_string(),
                line,
            })
        })
        .collect()
}

pub fn parse_concepts(text: &str, path: &Path) -> Result<Vec<RawConcept>, DatasetError> {
    records(text, path, 2)
        .map(|r| {
            r.map(|(line, f)| RawConcept {
                entity: f[0].to_string(),
                concept: f[1].to_string(),
                line,
            })
        })
        .collect()
}

/// Writes a graph back out in the dataset layout.
pub fn write_dataset(raw: &RawDataset, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let triples = |ts: &[RawTriple]| {
        let mut s = String::new();
        for t in ts {
            let _ = writeln!(s, "{}\t{}\t{}", t.head, t.relation, t.tail);
        }
        s
    };
    fs::write(dir.join(TRAIN_FILE), triples(&raw.train))?;
    fs::write(dir.join(VALID_FILE), triples(&raw.valid))?;
    fs::write(dir.join(TEST_FILE), triples(&raw.test))?;
    let mut s = String::new();
    for c in &raw.concepts {
        let _ = writeln!(s, "{}\t{}", c.entity, c.concept);
    }
    fs::write(dir.join(CONCEPT_FILE), s)
}

/// Size statistics in the layout of the published dataset table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetStats {
    pub relations: usize,
    pub entities: usize,
    pub concepts: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl DatasetStats {
    pub fn of(kg: &KnowledgeGraph) -> Self {
        DatasetStats {
            relations: kg.num_relations(),
            entities: kg.num_entities(),
            concepts: kg.num_concepts(),
            train: kg.train().len(),
            valid: kg.valid().len(),
            test: kg.test().len(),
        }
    }
}

/// Published sizes of the four benchmark datasets.
pub const PUBLISHED_STATS: [(&str, DatasetStats); 4] = [
    (
        "FB15K",
        DatasetStats {
            relations: 1_345,
            entities: 14_951,
            concepts: 89,
            train: 483_142,
            valid: 50_000,
            test: 59_071,
        },
    ),
    (
        "FB15K237",
        DatasetStats {
            relations: 237,
            entities: 14_505,
            concepts: 89,
            train: 272_115,
            valid: 17_535,
            test: 20_466,
        },
    ),
    (
        "NELL-995",
        DatasetStats {
            relations: 200,
            entities: 75_492,
            concepts: 270,
            train: 123_370,
            valid: 15_000,
            test: 15_838,
        },
    ),
    (
        "DBpedia-242",
        DatasetStats {
            relations: 298,
            entities: 99_744,
            concepts: 242,
            train: 592_654,
            valid: 35_851,
            test: 30_000,
        },
    ),
];

pub fn published_stats(name: &str) -> Option<DatasetStats> {
    PUBLISHED_STATS
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|&(_, s)| s)
}

/// Data-quality findings for a loaded dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationReport {
    pub stats: DatasetStats,
    pub sentinel_entities: usize,
    /// Labels of relations used in the test split but never in train.
    pub test_relations_missing_from_train: Vec<String>,
    pub duplicate_train: usize,
    pub duplicate_valid: usize,
    pub duplicate_test: usize,
}

impl ValidationReport {
    pub fn issue_count(&self) -> usize {
        self.sentinel_entities
            + self.test_relations_missing_from_train.len()
            + self.duplicate_train
            + self.duplicate_valid
            + self.duplicate_test
    }

    pub fn is_clean(&self) -> bool {
        self.issue_count() == 0
    }

    pub fn to_text(&self) -> String {
        let s = &self.stats;
        let mut out = String::new();
        for (k, v) in [
            ("relations", s.relations),
            ("entities", s.entities),
            ("concepts", s.concepts),
            ("train_triples", s.train),
            ("valid_triples", s.valid),
            ("test_triples", s.test),
            ("sentinel_entities", self.sentinel_entities),
            (
                "test_relations_missing_from_train",
                self.test_relations_missing_from_train.len(),
            ),
            ("duplicate_train_triples", self.duplicate_train),
            ("duplicate_valid_triples", self.duplicate_valid),
            ("duplicate_test_triples", self.duplicate_test),
        ] {
            let _ = writeln!(out, "{k}\t{v}");
        }
        for r in &self.test_relations_missing_from_train {
            let _ = writeln!(out, "missing_relation\t{r}");
        }
        out
    }
}

fn duplicates(ts: &[RawTriple]) -> usize {
    let mut seen = HashSet::with_capacity(ts.len());
    ts.iter()
        .filter(|t| !seen.insert((&t.head, &t.relation, &t.tail)))
        .count()
}

pub fn validate(raw: &RawDataset, kg: &KnowledgeGraph) -> ValidationReport {
    let train_rel: HashSet<&str> = raw.train.iter().map(|t| t.relation.as_str()).collect();
    let missing: BTreeSet<String> = raw
        .test
        .iter()
        .filter(|t| !train_rel.contains(t.relation.as_str()))
        .map(|t| t.relation.clone())
        .collect();
    ValidationReport {
        stats: DatasetStats::of(kg),
        sentinel_entities: kg.sentinel_entities(),
        test_relations_missing_from_train: missing.into_iter().collect(),
        duplicate_train: duplicates(&raw.train),
        duplicate_valid: duplicates(&raw.valid),
        duplicate_test: duplicates(&raw.test),
    }
}
