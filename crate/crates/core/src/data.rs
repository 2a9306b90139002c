//! Paired query/item datasets.

use crate::error::{Error, Result};
use crate::model::{TokenBag, View};

/// Matched pairs: `queries[i]` describes `items[i]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairedDataset {
    queries: Vec<TokenBag>,
    items: Vec<TokenBag>,
}

impl PairedDataset {
    pub fn new(queries: Vec<TokenBag>, items: Vec<TokenBag>) -> Result<Self> {
        if queries.len() != items.len() {
            return Err(Error::DimensionMismatch {
                what: "paired dataset",
                expected: queries.len(),
                got: items.len(),
            });
        }
        if queries.iter().any(|b| b.view() != View::Query) {
            return Err(Error::format("dataset", "query side holds a non-query bag"));
        }
        if items.iter().any(|b| b.view() != View::Item) {
            return Err(Error::format("dataset", "item side holds a non-item bag"));
        }
        Ok(Self { queries, items })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn queries(&self) -> &[TokenBag] {
        &self.queries
    }

    pub fn items(&self) -> &[TokenBag] {
        &self.items
    }

    pub fn pair(&self, i: usize) -> (&TokenBag, &TokenBag) {
        (&self.queries[i], &self.items[i])
    }

    /// Splits off the last `n` pairs as a held-out set.
    pub fn split_off(&mut self, n: usize) -> Self {
        let at = self.len().saturating_sub(n);
        Self {
            queries: self.queries.split_off(at),
            items: self.items.split_off(at),
        }
    }

    /// Reference views of the pairs at `indices`.
    pub fn batch(&self, indices: &[usize]) -> (Vec<&TokenBag>, Vec<&TokenBag>) {
        indices.iter().map(|&i| self.pair(i)).unzip()
    }
}
