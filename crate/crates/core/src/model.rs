//! Embedding tables and score functions.
//!
//! All three models use an energy convention: lower scores mean more
//! plausible triples.
//!
//! | kind     | entity row        | relation row      | energy                      |
//! |----------|-------------------|-------------------|-----------------------------|
//! | TransE   | `d` reals         | `d` reals         | `Σ |h + r − t|`             |
//! | RotatE   | `d` re, then `d` im | `d` phases      | `Σ |h·e^{iθ} − t|` (complex modulus) |
//! | DistMult | `d` reals         | `d` diagonal      | `−Σ h·r·t`                  |
//!
//! # Checkpoint layout
//!
//! All integers and floats little-endian:
//!
//! ```text
//! 0   8 bytes  magic "KGCCKPT\x01"
//! 8   u32      kind (0 = TransE, 1 = RotatE, 2 = DistMult)
//! 12  u32      reserved, 0
//! 16  u64      number of entities
//! 24  u64      number of relations
//! 32  u64      dim
//! 40  f64      gamma
//! 48  u64      seed
//! 56  f64[]    entity table, row-major, entity_width = dim (2·dim for RotatE)
//! ..  f64[]    relation table, row-major, dim columns
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityId, RelationId, Side, Triple};

/// Added to gamma when sizing the initialization range.
pub const INIT_EPSILON: f64 = 2.0;

const MAGIC: &[u8; 8] = b"KGCCKPT\x01";
const HEADER_LEN: usize = 56;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    TransE,
    RotatE,
    DistMult,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::TransE, ModelKind::RotatE, ModelKind::DistMult];

    fn code(self) -> u32 {
        match self {
            ModelKind::TransE => 0,
            ModelKind::RotatE => 1,
            ModelKind::DistMult => 2,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => ModelKind::TransE,
            1 => ModelKind::RotatE,
            2 => ModelKind::DistMult,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TransE => "TransE",
            ModelKind::RotatE => "RotatE",
            ModelKind::DistMult => "DistMult",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<String> for ModelKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.name().to_string()
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown model kind {s:?} (expected TransE, RotatE or DistMult)"))
    }
}

/// Relation row prepared for repeated scoring.
pub enum RelationView<'a> {
    Translation(&'a [f64]),
    Rotation { cos: Vec<f64>, sin: Vec<f64> },
    Diagonal(&'a [f64]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    kind: ModelKind,
    dim: usize,
    gamma: f64,
    seed: u64,
    num_entities: usize,
    num_relations: usize,
    entities: Vec<f64>,
    relations: Vec<f64>,
}

/// Per-row partial derivatives of one triple's energy.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGradients {
    pub head: Vec<f64>,
    pub relation: Vec<f64>,
    pub tail: Vec<f64>,
}

/// Uniform initialization in `±(gamma + INIT_EPSILON) / dim`; RotatE
/// phases uniform in `[−π, π)`.
pub fn init_params(
    kind: ModelKind,
    num_entities: usize,
    num_relations: usize,
    dim: usize,
    gamma: f64,
    seed: u64,
) -> ModelParams {
    assert!(dim >= 1, "embedding dimension must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range = init_range(gamma, dim);
    let entity_width = entity_width(kind, dim);
    let entities = (0..num_entities * entity_width)
        .map(|_| rng.gen_range(-range..range))
        .collect();
    let relations = (0..num_relations * dim)
        .map(|_| match kind {
            ModelKind::RotatE => rng.gen_range(-PI..PI),
            _ => rng.gen_range(-range..range),
        })
        .collect();
    ModelParams {
        kind,
        dim,
        gamma,
        seed,
        num_entities,
        num_relations,
        entities,
        relations,
    }
}

pub fn init_range(gamma: f64, dim: usize) -> f64 {
    (gamma + INIT_EPSILON) / dim as f64
}

fn entity_width(kind: ModelKind, dim: usize) -> usize {
    match kind {
        ModelKind::RotatE => 2 * dim,
        _ => dim,
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn entity_width(&self) -> usize {
        entity_width(self.kind, self.dim)
    }

    pub fn relation_width(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn entity(&self, e: EntityId) -> &[f64] {
        let w = self.entity_width();
        &self.entities[e.index() * w..(e.index() + 1) * w]
    }

    #[inline]
    pub fn relation(&self, r: RelationId) -> &[f64] {
        let w = self.dim;
        &self.relations[r.index() * w..(r.index() + 1) * w]
    }

    pub fn entity_mut(&mut self, e: EntityId) -> &mut [f64] {
        let w = self.entity_width();
        &mut self.entities[e.index() * w..(e.index() + 1) * w]
    }

    pub fn relation_mut(&mut self, r: RelationId) -> &mut [f64] {
        let w = self.dim;
        &mut self.relations[r.index() * w..(r.index() + 1) * w]
    }

    pub fn entity_table(&self) -> &[f64] {
        &self.entities
    }

    pub fn relation_table(&self) -> &[f64] {
        &self.relations
    }

    pub fn entity_table_mut(&mut self) -> &mut [f64] {
        &mut self.entities
    }

    pub fn relation_table_mut(&mut self) -> &mut [f64] {
        &mut self.relations
    }

    pub fn is_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|x| x.is_finite())
    }

    pub fn relation_view(&self, r: RelationId) -> RelationView<'_> {
        let row = self.relation(r);
        match self.kind {
            ModelKind::TransE => RelationView::Translation(row),
            ModelKind::DistMult => RelationView::Diagonal(row),
            ModelKind::RotatE => {
                let (sin, cos) = row.iter().map(|p| p.sin_cos()).unzip();
                RelationView::Rotation { cos, sin }
            }
        }
    }

    /// Energy of a triple given raw rows. Every scoring path goes through
    /// here, so ranks computed in bulk agree bit-for-bit with [`Self::score`].
    #[inline]
    pub fn energy(&self, head: &[f64], relation: &RelationView<'_>, tail: &[f64]) -> f64 {
        let d = self.dim;
        match relation {
            RelationView::Translation(r) => {
                let mut sum = 0.0;
                for i in 0..d {
                    sum += (head[i] + r[i] - tail[i]).abs();
                }
                sum
            }
            RelationView::Diagonal(r) => {
                let mut sum = 0.0;
                for i in 0..d {
                    sum += head[i] * r[i] * tail[i];
                }
                -sum
            }
            RelationView::Rotation { cos, sin } => {
                let (h_re, h_im) = head.split_at(d);
                let (t_re, t_im) = tail.split_at(d);
                let mut sum = 0.0;
                for i in 0..d {
                    let re = h_re[i] * cos[i] - h_im[i] * sin[i] - t_re[i];
                    let im = h_re[i] * sin[i] + h_im[i] * cos[i] - t_im[i];
                    sum += (re * re + im * im).sqrt();
                }
                sum
            }
        }
    }

    pub fn score(&self, t: Triple) -> f64 {
        let view = self.relation_view(t.relation);
        self.energy(self.entity(t.head), &view, self.entity(t.tail))
    }

    /// Energies of `(anchor, relation, e)` (or `(e, relation, anchor)` when
    /// `missing` is [`Side::Head`]) for every entity `e`, indexed by id.
    pub fn energies(&self, anchor: EntityId, relation: RelationId, missing: Side) -> Vec<f64> {
        let view = self.relation_view(relation);
        let a = self.entity(anchor);
        (0..self.num_entities as u32)
            .map(|e| {
                let row = self.entity(EntityId(e));
                match missing {
                    Side::Tail => self.energy(a, &view, row),
                    Side::Head => self.energy(row, &view, a),
                }
            })
            .collect()
    }

    /// Adds `scale · ∂E/∂row` into the three row buffers. At L1 kinks (and at
    /// zero complex modulus for RotatE) the subgradient 0 is used.
    pub fn add_score_gradients(
        &self,
        t: Triple,
        scale: f64,
        grad_head: &mut [f64],
        grad_relation: &mut [f64],
        grad_tail: &mut [f64],
    ) {
        let d = self.dim;
        let h = self.entity(t.head);
        let r = self.relation(t.relation);
        let tl = self.entity(t.tail);
        match self.kind {
            ModelKind::TransE => {
                for i in 0..d {
                    let s = scale * sign(h[i] + r[i] - tl[i]);
                    grad_head[i] += s;
                    grad_relation[i] += s;
                    grad_tail[i] -= s;
                }
            }
            ModelKind::DistMult => {
                for i in 0..d {
                    grad_head[i] -= scale * r[i] * tl[i];
                    grad_relation[i] -= scale * h[i] * tl[i];
                    grad_tail[i] -= scale * h[i] * r[i];
                }
            }
            ModelKind::RotatE => {
                let (h_re, h_im) = h.split_at(d);
                let (t_re, t_im) = tl.split_at(d);
                for i in 0..d {
                    let (s, c) = r[i].sin_cos();
                    let a = h_re[i] * c - h_im[i] * s - t_re[i];
                    let b = h_re[i] * s + h_im[i] * c - t_im[i];
                    let m = (a * a + b * b).sqrt();
                    if m == 0.0 {
                        continue;
                    }
                    let k = scale / m;
                    grad_head[i] += k * (a * c + b * s);
                    grad_head[d + i] += k * (b * c - a * s);
                    grad_tail[i] -= k * a;
                    grad_tail[d + i] -= k * b;
                    grad_relation[i] +=
                        k * (a * (-h_re[i] * s - h_im[i] * c) + b * (h_re[i] * c - h_im[i] * s));
                }
            }
        }
    }

    pub fn score_gradients(&self, t: Triple) -> ScoreGradients {
        let mut g = ScoreGradients {
            head: vec![0.0; self.entity_width()],
            relation: vec![0.0; self.relation_width()],
            tail: vec![0.0; self.entity_width()],
        };
        self.add_score_gradients(t, 1.0, &mut g.head, &mut g.relation, &mut g.tail);
        g
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(HEADER_LEN + 8 * (self.entities.len() + self.relations.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&(self.num_entities as u64).to_le_bytes());
        out.extend_from_slice(&(self.num_relations as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&self.gamma.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for x in self.entities.iter().chain(&self.relations) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < HEADER_LEN {
            return Err(CheckpointError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let code = u32_at(8);
        let kind = ModelKind::from_code(code).ok_or(CheckpointError::UnknownKind(code))?;
        let num_entities = u64_at(16) as usize;
        let num_relations = u64_at(24) as usize;
        let dim = u64_at(32) as usize;
        let gamma = f64::from_bits(u64_at(40));
        let seed = u64_at(48);
        let n_ent = num_entities * entity_width(kind, dim);
        let n_rel = num_relations * dim;
        let expected = HEADER_LEN + 8 * (n_ent + n_rel);
        if bytes.len() != expected {
            return Err(CheckpointError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        let mut floats = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let entities: Vec<f64> = floats.by_ref().take(n_ent).collect();
        let relations: Vec<f64> = floats.collect();
        Ok(ModelParams {
            kind,
            dim,
            gamma,
            seed,
            num_entities,
            num_relations,
            entities,
            relations,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(CheckpointError::Io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path).map_err(CheckpointError::Io)?)
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[source] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unknown model kind code {0}")]
    UnknownKind(u32),
    #[error("checkpoint size mismatch: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}
