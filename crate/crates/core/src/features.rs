//! Binary feature files holding the token bags of one view.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "HYBQFEAT" | version u32 | view u8 (0 query, 1 item) | reserved [u8; 3]
//! dim u32 | condensed_per_instance u32 | count u64
//! per instance: condensed f32 * (condensed_per_instance * dim)
//!               token_count u32 | tokens f32 * (token_count * dim)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{write_f32s, Reader};
use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{TokenBag, View};

pub const FEATURE_MAGIC: &[u8; 8] = b"HYBQFEAT";
pub const FEATURE_VERSION: u32 = 1;
const KIND: &str = "feature file";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub view: View,
    pub dim: usize,
    /// 1 for queries (CLS), the expert count for items (AGG).
    pub condensed_per_instance: usize,
    pub bags: Vec<TokenBag>,
}

impl FeatureFile {
    /// Wraps bags of one view, checking that they share one shape.
    pub fn new(view: View, bags: Vec<TokenBag>) -> Result<Self> {
        let first = bags
            .first()
            .ok_or(Error::Empty("feature file has no instances"))?;
        let (dim, nc) = (first.dim(), first.condensed().rows());
        for b in &bags {
            if b.view() != view {
                return Err(Error::format(KIND, "bags of mixed views"));
            }
            if b.dim() != dim {
                return Err(Error::DimensionMismatch {
                    what: "feature dimension",
                    expected: dim,
                    got: b.dim(),
                });
            }
            if b.condensed().rows() != nc {
                return Err(Error::DimensionMismatch {
                    what: "condensed tokens per instance",
                    expected: nc,
                    got: b.condensed().rows(),
                });
            }
        }
        Ok(Self {
            view,
            dim,
            condensed_per_instance: nc,
            bags,
        })
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&FEATURE_VERSION.to_le_bytes())?;
        let tag = match self.view {
            View::Query => 0u8,
            View::Item => 1u8,
        };
        w.write_all(&[tag, 0, 0, 0])?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.condensed_per_instance as u32).to_le_bytes())?;
        w.write_all(&(self.bags.len() as u64).to_le_bytes())?;
        for b in &self.bags {
            write_f32s(&mut w, b.condensed().as_slice())?;
            w.write_all(&(b.len() as u32).to_le_bytes())?;
            write_f32s(&mut w, b.tokens().as_slice())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader::new(r, KIND);
        r.expect_magic(FEATURE_MAGIC)?;
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(r.fail(format!("unsupported version {version}")));
        }
        let [tag, ..] = r.array::<4>()?;
        let view = match tag {
            0 => View::Query,
            1 => View::Item,
            t => return Err(r.fail(format!("unknown view tag {t}"))),
        };
        let dim = r.u32()? as usize;
        let nc = r.u32()? as usize;
        let count = r.u64()? as usize;
        if dim == 0 || nc == 0 {
            return Err(r.fail("zero dimension or condensed count"));
        }
        if view == View::Query && nc != 1 {
            return Err(r.fail(format!("query files carry one CLS, header says {nc}")));
        }
        let mut bags = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let condensed = Matrix::from_vec(nc, dim, r.f32s(nc * dim)?);
            let n = r.u32()? as usize;
            let tokens = Matrix::from_vec(n, dim, r.f32s(n * dim)?);
            bags.push(TokenBag::new(view, tokens, condensed)?);
        }
        r.expect_end()?;
        if bags.is_empty() {
            return Err(Error::Empty("feature file has no instances"));
        }
        Ok(Self {
            view,
            dim,
            condensed_per_instance: nc,
            bags,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::Io(e).with_path(path))?;
        self.write_to(BufWriter::new(f))
            .map_err(|e| e.with_path(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::Io(e).with_path(path))?;
        Self::read_from(BufReader::new(f)).map_err(|e| e.with_path(path))
    }

    /// Loads a file and checks it holds the expected view.
    pub fn load_view(path: impl AsRef<Path>, view: View) -> Result<Self> {
        let f = Self::load(path.as_ref())?;
        if f.view != view {
            return Err(Error::format(
                KIND,
                format!("expected {view:?} features, found {:?}", f.view),
            )
            .with_path(path.as_ref()));
        }
        Ok(f)
    }
}

/// Splits a dataset into its query and item feature files.
pub fn dataset_to_files(data: &PairedDataset) -> Result<(FeatureFile, FeatureFile)> {
    Ok((
        FeatureFile::new(View::Query, data.queries().to_vec())?,
        FeatureFile::new(View::Item, data.items().to_vec())?,
    ))
}

/// Pairs a query file with an item file; instance `i` of each forms pair `i`.
pub fn files_to_dataset(queries: FeatureFile, items: FeatureFile) -> Result<PairedDataset> {
    PairedDataset::new(queries.bags, items.bags)
}
