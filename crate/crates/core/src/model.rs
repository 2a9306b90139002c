//! Domain types shared by every stage of the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Which side of the cross-view pairing an instance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    /// Query texts: `text_dim`-dimensional tokens and one CLS vector.
    Query,
    /// Database items: `dim`-dimensional tokens and one AGG vector per expert.
    Item,
}

impl View {
    pub fn other(self) -> View {
        match self {
            View::Query => View::Item,
            View::Item => View::Query,
        }
    }
}

/// A representation level: the coarse global embedding or one fine cluster level
/// (1-based, matching the non-ghost cluster index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Coarse,
    Fine(usize),
}

impl Level {
    /// Position in the `[Coarse, Fine(1), ..., Fine(L)]` ordering.
    pub fn index(self) -> usize {
        match self {
            Level::Coarse => 0,
            Level::Fine(l) => l,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Level::Coarse
        } else {
            Level::Fine(i)
        }
    }

    pub fn all(num_clusters: usize) -> impl Iterator<Item = Level> {
        (0..=num_clusters).map(Level::from_index)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Coarse => f.write_str("coarse"),
            Level::Fine(l) => write!(f, "fine{l}"),
        }
    }
}

/// Token embeddings for one instance of one view, plus its condensed tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBag {
    view: View,
    tokens: Matrix,
    condensed: Matrix,
}

impl TokenBag {
    /// Builds a bag, checking that every vector is finite and that all tokens
    /// share one dimension. Query bags must carry exactly one condensed (CLS) vector.
    pub fn new(view: View, tokens: Matrix, condensed: Matrix) -> Result<Self> {
        if tokens.rows() == 0 {
            return Err(Error::Empty("token bag has no tokens"));
        }
        if condensed.rows() == 0 {
            return Err(Error::Empty("token bag has no condensed tokens"));
        }
        if condensed.cols() != tokens.cols() {
            return Err(Error::DimensionMismatch {
                what: "condensed token",
                expected: tokens.cols(),
                got: condensed.cols(),
            });
        }
        if view == View::Query && condensed.rows() != 1 {
            return Err(Error::DimensionMismatch {
                what: "query CLS count",
                expected: 1,
                got: condensed.rows(),
            });
        }
        if !tokens.is_finite() || !condensed.is_finite() {
            return Err(Error::NonFinite("token bag"));
        }
        Ok(Self {
            view,
            tokens,
            condensed,
        })
    }

    pub fn query(cls: Vec<f64>, tokens: Matrix) -> Result<Self> {
        let dim = cls.len();
        Self::new(View::Query, tokens, Matrix::from_vec(1, dim, cls))
    }

    pub fn item(agg: Matrix, tokens: Matrix) -> Result<Self> {
        Self::new(View::Item, tokens, agg)
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    /// CLS (one row) for queries, per-expert AGG vectors for items.
    pub fn condensed(&self) -> &Matrix {
        &self.condensed
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }
}

/// One dense vector at a named level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelEmbedding {
    pub level: Level,
    pub vector: Vec<f64>,
}

/// All `L + 1` level embeddings of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridEmbedding {
    pub coarse: Vec<f64>,
    pub fine: Vec<Vec<f64>>,
}

impl HybridEmbedding {
    pub fn num_levels(&self) -> usize {
        self.fine.len() + 1
    }

    pub fn level(&self, level: Level) -> &[f64] {
        match level {
            Level::Coarse => &self.coarse,
            Level::Fine(l) => &self.fine[l - 1],
        }
    }

    /// Level by position in `[Coarse, Fine(1), ..., Fine(L)]`.
    pub fn level_by_index(&self, i: usize) -> &[f64] {
        self.level(Level::from_index(i))
    }

    /// Levels in `[Coarse, Fine(1), ..., Fine(L)]` order.
    pub fn levels(&self) -> impl Iterator<Item = &[f64]> + '_ {
        std::iter::once(self.coarse.as_slice()).chain(self.fine.iter().map(Vec::as_slice))
    }
}

/// Per-level codeword indices of one item, level-major: `codes[level * M + m]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HardCode {
    pub num_subspaces: usize,
    pub indices: Vec<u16>,
}

impl HardCode {
    pub fn level(&self, level: usize) -> &[u16] {
        &self.indices[level * self.num_subspaces..(level + 1) * self.num_subspaces]
    }

    pub fn num_levels(&self) -> usize {
        self.indices.len() / self.num_subspaces
    }
}

/// Fuses per-level scores into the hybrid similarity: coarse plus the mean of
/// the fine levels, with the fine levels summed in ascending order.
#[inline]
pub fn fuse_levels(coarse: f64, fine: &[f64]) -> f64 {
    if fine.is_empty() {
        return coarse;
    }
    let mut sum = 0.0;
    for &s in fine {
        sum += s;
    }
    coarse + sum / fine.len() as f64
}
