//! Domain types shared by every module: ID spaces, embedding tables, and
//! engagement events.
//!
//! Tables store rows as contiguous row-major `f32`; all arithmetic on them
//! happens in `f64` and is cast back on write, which keeps checkpoints
//! compact while leaving gradient checks meaningful.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::{stream_rng, Stream};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IdKind {
    User,
    Item,
}

impl IdKind {
    pub fn name(self) -> &'static str {
        match self {
            IdKind::User => "user",
            IdKind::Item => "item",
        }
    }
}

/// A dense integer ID vocabulary: valid IDs are exactly `[0, cardinality)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdSpace {
    pub kind: IdKind,
    pub cardinality: u32,
}

impl IdSpace {
    pub fn new(kind: IdKind, cardinality: u32) -> Result<Self> {
        if cardinality == 0 {
            return Err(Error::invalid("id space cardinality must be >= 1"));
        }
        Ok(IdSpace { kind, cardinality })
    }

    pub fn check(&self, id: u32) -> Result<()> {
        if id >= self.cardinality {
            return Err(Error::IndexOutOfRange {
                id,
                kind: self.kind.name(),
                cardinality: self.cardinality,
            });
        }
        Ok(())
    }
}

/// One trainable vector per ID, plus a freeze flag enforced on every write.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub id_space: IdSpace,
    pub dim: usize,
    rows: Vec<f32>,
    frozen: bool,
}

impl EmbeddingTable {
    /// Entries drawn i.i.d. uniform in `[-init_scale/sqrt(dim), +init_scale/sqrt(dim)]`.
    pub fn new(id_space: IdSpace, dim: usize, init_scale: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dim must be >= 1"));
        }
        if init_scale < 0.0 {
            return Err(Error::invalid("init_scale must be >= 0"));
        }
        let bound = init_scale / (dim as f64).sqrt();
        let stream_id = match id_space.kind {
            IdKind::User => 0,
            IdKind::Item => 1,
        };
        let mut rng = stream_rng(seed, Stream::TableInit(stream_id));
        let n = id_space.cardinality as usize * dim;
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let v: f64 = if bound == 0.0 {
                0.0
            } else {
                rng.gen_range(-bound..=bound)
            };
            rows.push(v as f32);
        }
        Ok(EmbeddingTable {
            id_space,
            dim,
            rows,
            frozen: false,
        })
    }

    pub fn from_rows(id_space: IdSpace, dim: usize, rows: Vec<f32>) -> Result<Self> {
        if rows.len() != id_space.cardinality as usize * dim {
            return Err(Error::Contract(format!(
                "row buffer has {} entries, expected {}",
                rows.len(),
                id_space.cardinality as usize * dim
            )));
        }
        Ok(EmbeddingTable {
            id_space,
            dim,
            rows,
            frozen: false,
        })
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn n_rows(&self) -> usize {
        self.id_space.cardinality as usize
    }

    /// Raw row storage; used by checkpointing and byte-level comparisons.
    pub fn raw(&self) -> &[f32] {
        &self.rows
    }

    #[inline]
    pub fn row(&self, id: u32) -> &[f32] {
        let i = id as usize * self.dim;
        &self.rows[i..i + self.dim]
    }

    /// Copy the row for `id` into `out` as f64.
    #[inline]
    pub fn read_row_into(&self, id: u32, out: &mut [f64]) {
        let r = self.row(id);
        for (o, &v) in out.iter_mut().zip(r) {
            *o = v as f64;
        }
    }

    /// Gather rows for `ids` into a `(len(ids), dim)` matrix.
    pub fn lookup(&self, ids: &[u32]) -> Result<Mat> {
        let mut out = Mat::zeros(ids.len(), self.dim);
        for (i, &id) in ids.iter().enumerate() {
            self.id_space.check(id)?;
            self.read_row_into(id, out.row_mut(i));
        }
        Ok(out)
    }

    /// `row[id] += delta`; every other row is untouched.
    pub fn apply_row_delta(&mut self, id: u32, delta: &[f64]) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenViolation);
        }
        self.id_space.check(id)?;
        if delta.len() != self.dim {
            return Err(Error::Contract(format!(
                "delta has {} entries, table dim is {}",
                delta.len(),
                self.dim
            )));
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite row delta".into()));
        }
        let i = id as usize * self.dim;
        for (slot, &d) in self.rows[i..i + self.dim].iter_mut().zip(delta) {
            *slot = (*slot as f64 + d) as f32;
        }
        Ok(())
    }

    /// Overwrite a row with f64 values (used by optimizer steps).
    pub(crate) fn write_row(&mut self, id: u32, values: &[f64]) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenViolation);
        }
        self.id_space.check(id)?;
        let i = id as usize * self.dim;
        for (slot, &v) in self.rows[i..i + self.dim].iter_mut().zip(values) {
            if !v.is_finite() {
                return Err(Error::Numeric("non-finite row value".into()));
            }
            *slot = v as f32;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Surface {
    Homefeed,
    RelatedPins,
    Other,
}

impl Surface {
    pub const ALL: [Surface; 3] = [Surface::Homefeed, Surface::RelatedPins, Surface::Other];

    pub fn as_u8(self) -> u8 {
        match self {
            Surface::Homefeed => 0,
            Surface::RelatedPins => 1,
            Surface::Other => 2,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Surface::Homefeed),
            1 => Ok(Surface::RelatedPins),
            2 => Ok(Surface::Other),
            _ => Err(Error::CorruptDataset(format!("unknown surface code {v}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Surface::Homefeed => "homefeed",
            Surface::RelatedPins => "related_pins",
            Surface::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionEvent {
    pub user_id: u32,
    pub item_id: u32,
    pub surface: Surface,
    /// 1 = positive engagement, 0 = sampled negative. Generated corpora hold
    /// positives only; negatives are drawn at batch-assembly time.
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Holdout,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Holdout => "holdout",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub events: Vec<InteractionEvent>,
    pub split: Split,
    pub surfaces: Vec<Surface>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}
