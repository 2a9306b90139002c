//! Compact-code database, per-query lookup tables, and top-k hybrid search.
//!
//! Every item is stored as `(L + 1) · M` codeword indices. A query builds one
//! `M × K` table per level holding the inner products of its raw segments with
//! every normalized codeword; an item's level score is the sum of the `M` table
//! entries its code selects, and the hybrid score is the coarse score plus the
//! mean of the fine scores.
//!
//! Summation order is fixed (sub-spaces `m = 1..M`, then levels coarse, fine
//! `1..L`), so the table scan and [`brute_force_search`] agree bit for bit.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::encoder::{embed_item, embed_query};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::{fuse_levels, HardCode, HybridEmbedding, TokenBag};
use crate::params::ParameterSet;
use crate::quantizer::NormalizedCodebook;

/// Normalized codebooks of every level, frozen at encoding time.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSnapshot {
    levels: Vec<NormalizedCodebook>,
    fingerprint: u64,
}

impl CodebookSnapshot {
    pub fn from_params(params: &ParameterSet) -> Self {
        let cfg = &params.config;
        Self {
            levels: params
                .trainable
                .codebooks
                .iter()
                .map(|cb| NormalizedCodebook::new(cb, cfg.num_subspaces, cfg.num_codewords))
                .collect(),
            fingerprint: params.codebook_fingerprint(),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn num_subspaces(&self) -> usize {
        self.levels[0].num_subspaces()
    }

    pub fn num_codewords(&self) -> usize {
        self.levels[0].num_codewords()
    }

    pub fn level(&self, lv: usize) -> &NormalizedCodebook {
        &self.levels[lv]
    }

    /// Hard-quantizes every level of `emb`.
    pub fn encode(&self, emb: &HybridEmbedding) -> Result<HardCode> {
        if emb.num_levels() != self.levels.len() {
            return Err(Error::DimensionMismatch {
                what: "embedding levels",
                expected: self.levels.len(),
                got: emb.num_levels(),
            });
        }
        let mut indices = Vec::with_capacity(self.levels.len() * self.num_subspaces());
        for (cb, x) in self.levels.iter().zip(emb.levels()) {
            indices.extend(cb.hard(x)?.0);
        }
        Ok(HardCode {
            num_subspaces: self.num_subspaces(),
            indices,
        })
    }
}

/// Per-level `M × K` tables of segment–codeword inner products for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    /// `tables[level][m * K + k]`
    tables: Vec<Vec<f64>>,
    num_subspaces: usize,
    num_codewords: usize,
    fingerprint: u64,
}

impl LookupTable {
    /// Query segments are used as-is; only the codewords are normalized.
    pub fn from_embedding(emb: &HybridEmbedding, snapshot: &CodebookSnapshot) -> Result<Self> {
        if emb.num_levels() != snapshot.num_levels() {
            return Err(Error::DimensionMismatch {
                what: "embedding levels",
                expected: snapshot.num_levels(),
                got: emb.num_levels(),
            });
        }
        let m_count = snapshot.num_subspaces();
        let k_count = snapshot.num_codewords();
        let mut tables = Vec::with_capacity(snapshot.num_levels());
        for (lv, x) in emb.levels().enumerate() {
            let cb = snapshot.level(lv);
            if x.len() != cb.dim() {
                return Err(Error::DimensionMismatch {
                    what: "query level embedding",
                    expected: cb.dim(),
                    got: x.len(),
                });
            }
            let d = cb.sub_dim();
            let mut t = Vec::with_capacity(m_count * k_count);
            for m in 0..m_count {
                let seg = &x[m * d..(m + 1) * d];
                for k in 0..k_count {
                    t.push(dot(seg, cb.codeword(m, k)));
                }
            }
            tables.push(t);
        }
        Ok(Self {
            tables,
            num_subspaces: m_count,
            num_codewords: k_count,
            fingerprint: snapshot.fingerprint(),
        })
    }

    pub fn num_levels(&self) -> usize {
        self.tables.len()
    }

    pub fn level(&self, lv: usize) -> &[f64] {
        &self.tables[lv]
    }

    pub fn entry(&self, lv: usize, m: usize, k: usize) -> f64 {
        self.tables[lv][m * self.num_codewords + k]
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Asymmetric quantized similarity of one level's code.
    pub fn aqs(&self, lv: usize, code: &[u16]) -> Result<f64> {
        if code.len() != self.num_subspaces {
            return Err(Error::DimensionMismatch {
                what: "hard code length",
                expected: self.num_subspaces,
                got: code.len(),
            });
        }
        if let Some(&bad) = code.iter().find(|&&c| c as usize >= self.num_codewords) {
            return Err(Error::IndexOutOfRange {
                index: bad as usize,
                bound: self.num_codewords,
            });
        }
        Ok(level_score(&self.tables[lv], code, self.num_codewords))
    }

    /// Hybrid score of a full code (all levels).
    pub fn score(&self, code: &HardCode) -> Result<f64> {
        let mut fine = Vec::with_capacity(self.tables.len() - 1);
        let coarse = self.aqs(0, code.level(0))?;
        for lv in 1..self.tables.len() {
            fine.push(self.aqs(lv, code.level(lv))?);
        }
        Ok(fuse_levels(coarse, &fine))
    }
}

#[inline]
fn level_score<T: Copy + Into<usize>>(table: &[f64], code: &[T], k: usize) -> f64 {
    let mut s = 0.0;
    for (m, &c) in code.iter().enumerate() {
        s += table[m * k + c.into()];
    }
    s
}

/// Aqs of a single level: `Σ_m table[m][code_m]`.
pub fn aqs(table: &LookupTable, level: usize, code: &[u16]) -> Result<f64> {
    table.aqs(level, code)
}

/// Flat code storage, item-major.
#[derive(Debug, Clone, PartialEq, Eq)]
enum CodeStore {
    Narrow(Vec<u8>),
    Wide(Vec<u16>),
}

impl CodeStore {
    fn with_capacity(k: usize, n: usize) -> Self {
        if k <= 256 {
            CodeStore::Narrow(Vec::with_capacity(n))
        } else {
            CodeStore::Wide(Vec::with_capacity(n))
        }
    }

    fn push(&mut self, c: u16) {
        match self {
            CodeStore::Narrow(v) => v.push(c as u8),
            CodeStore::Wide(v) => v.push(c),
        }
    }

    fn get(&self, i: usize) -> u16 {
        match self {
            CodeStore::Narrow(v) => v[i] as u16,
            CodeStore::Wide(v) => v[i],
        }
    }

    fn len(&self) -> usize {
        match self {
            CodeStore::Narrow(v) => v.len(),
            CodeStore::Wide(v) => v.len(),
        }
    }
}

/// One search result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub id: u64,
    pub score: f64,
}

/// Descending score, ascending id on ties.
pub fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Keeps the best `k` hits in rank order.
pub fn top_k(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, hit_order);
        hits.truncate(k);
    }
    hits.sort_by(hit_order);
    hits
}

/// Encoded database: item ids, their hard codes, and the codebooks used.
#[derive(Debug, Clone)]
pub struct CodeIndex {
    ids: Vec<u64>,
    codes: CodeStore,
    snapshot: Arc<CodebookSnapshot>,
}

impl PartialEq for CodeIndex {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids
            && self.codes == other.codes
            && self.snapshot.fingerprint() == other.snapshot.fingerprint()
    }
}

impl CodeIndex {
    pub fn new(snapshot: Arc<CodebookSnapshot>) -> Self {
        let k = snapshot.num_codewords();
        Self {
            ids: Vec::new(),
            codes: CodeStore::with_capacity(k, 0),
            snapshot,
        }
    }

    /// Appends one item; every index must be below `K`.
    pub fn push(&mut self, id: u64, code: &HardCode) -> Result<()> {
        let expected = self.code_len();
        if code.indices.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "hard code length",
                expected,
                got: code.indices.len(),
            });
        }
        let k = self.num_codewords();
        if let Some(&bad) = code.indices.iter().find(|&&c| c as usize >= k) {
            return Err(Error::IndexOutOfRange {
                index: bad as usize,
                bound: k,
            });
        }
        self.ids.push(id);
        for &c in &code.indices {
            self.codes.push(c);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn snapshot(&self) -> &Arc<CodebookSnapshot> {
        &self.snapshot
    }

    pub fn fingerprint(&self) -> u64 {
        self.snapshot.fingerprint()
    }

    pub fn num_levels(&self) -> usize {
        self.snapshot.num_levels()
    }

    pub fn num_subspaces(&self) -> usize {
        self.snapshot.num_subspaces()
    }

    pub fn num_codewords(&self) -> usize {
        self.snapshot.num_codewords()
    }

    /// Indices per item, `(L + 1) · M`.
    pub fn code_len(&self) -> usize {
        self.num_levels() * self.num_subspaces()
    }

    pub fn bits_per_index(&self) -> u32 {
        self.num_codewords().trailing_zeros()
    }

    /// Serialized bytes per item.
    pub fn bytes_per_item(&self) -> usize {
        (self.code_len() * self.bits_per_index() as usize).div_ceil(8)
    }

    pub fn code(&self, pos: usize) -> HardCode {
        let n = self.code_len();
        HardCode {
            num_subspaces: self.num_subspaces(),
            indices: (pos * n..(pos + 1) * n)
                .map(|i| self.codes.get(i))
                .collect(),
        }
    }

    /// Repeats the database `factor` times, assigning fresh sequential ids.
    pub fn duplicated(&self, factor: usize) -> Self {
        let mut codes = CodeStore::with_capacity(self.num_codewords(), self.codes.len() * factor);
        for _ in 0..factor {
            for i in 0..self.codes.len() {
                codes.push(self.codes.get(i));
            }
        }
        Self {
            ids: (0..(self.len() * factor) as u64).collect(),
            codes,
            snapshot: self.snapshot.clone(),
        }
    }

    fn scan_range<T: Copy + Into<usize>>(
        &self,
        table: &LookupTable,
        codes: &[T],
        range: std::ops::Range<usize>,
        k: usize,
    ) -> Vec<Hit> {
        let n = self.code_len();
        let m_count = self.num_subspaces();
        let kc = self.num_codewords();
        let levels = self.num_levels();
        let mut fine = vec![0.0; levels - 1];
        let mut hits = Vec::with_capacity(range.len());
        for pos in range {
            let code = &codes[pos * n..(pos + 1) * n];
            let coarse = level_score(&table.tables[0], &code[..m_count], kc);
            for lv in 1..levels {
                fine[lv - 1] = level_score(
                    &table.tables[lv],
                    &code[lv * m_count..(lv + 1) * m_count],
                    kc,
                );
            }
            hits.push(Hit {
                id: self.ids[pos],
                score: fuse_levels(coarse, &fine),
            });
        }
        top_k(hits, k)
    }

    fn scan<T: Copy + Into<usize> + Sync>(
        &self,
        table: &LookupTable,
        codes: &[T],
        k: usize,
        threads: usize,
    ) -> Vec<Hit> {
        let n = self.len();
        let threads = threads.clamp(1, n.max(1));
        if threads == 1 {
            return self.scan_range(table, codes, 0..n, k);
        }
        let chunk = n.div_ceil(threads);
        let partial: Vec<Vec<Hit>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let range = (t * chunk).min(n)..((t + 1) * chunk).min(n);
                    s.spawn(move || self.scan_range(table, codes, range, k))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scan worker panicked"))
                .collect()
        });
        top_k(partial.into_iter().flatten().collect(), k)
    }

    /// Top-`k` items by hybrid table score.
    pub fn search(&self, table: &LookupTable, k: usize, threads: usize) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.is_empty() {
            return Err(Error::Empty("index has no items"));
        }
        if table.fingerprint() != self.fingerprint() {
            return Err(Error::StaleCodebooks {
                expected: self.fingerprint(),
                found: table.fingerprint(),
            });
        }
        Ok(match &self.codes {
            CodeStore::Narrow(c) => self.scan(table, c, k, threads),
            CodeStore::Wide(c) => self.scan(table, c, k, threads),
        })
    }

    /// Scores every item (in storage order) without ranking.
    pub fn score_all(&self, table: &LookupTable) -> Result<Vec<f64>> {
        if table.fingerprint() != self.fingerprint() {
            return Err(Error::StaleCodebooks {
                expected: self.fingerprint(),
                found: table.fingerprint(),
            });
        }
        (0..self.len())
            .map(|i| table.score(&self.code(i)))
            .collect()
    }
}

/// Hard-codes item embeddings under sequential ids `0..n`.
pub fn encode_embeddings(
    snapshot: Arc<CodebookSnapshot>,
    embeddings: &[HybridEmbedding],
) -> Result<CodeIndex> {
    let mut index = CodeIndex::new(snapshot);
    for (i, e) in embeddings.iter().enumerate() {
        let code = index.snapshot.encode(e)?;
        index.push(i as u64, &code)?;
    }
    Ok(index)
}

/// Embeds and hard-codes items; item `i` receives id `ids[i]`.
pub fn encode_database_with_ids(
    params: &ParameterSet,
    ids: &[u64],
    items: &[TokenBag],
) -> Result<CodeIndex> {
    if ids.len() != items.len() {
        return Err(Error::DimensionMismatch {
            what: "item ids",
            expected: items.len(),
            got: ids.len(),
        });
    }
    let snapshot = Arc::new(CodebookSnapshot::from_params(params));
    let mut index = CodeIndex::new(snapshot);
    for (&id, bag) in ids.iter().zip(items) {
        let emb = embed_item(params, bag).map_err(|e| match e {
            Error::DegenerateItem { .. } => Error::DegenerateItem { id: Some(id) },
            other => other,
        })?;
        let code = index.snapshot.encode(&emb)?;
        index.push(id, &code)?;
    }
    Ok(index)
}

/// Embeds and hard-codes items under sequential ids `0..n`.
pub fn encode_database(params: &ParameterSet, items: &[TokenBag]) -> Result<CodeIndex> {
    let ids: Vec<u64> = (0..items.len() as u64).collect();
    encode_database_with_ids(params, &ids, items)
}

pub fn build_lookup(params: &ParameterSet, query: &TokenBag) -> Result<LookupTable> {
    let emb = embed_query(params, query)?;
    LookupTable::from_embedding(&emb, &CodebookSnapshot::from_params(params))
}

/// Embeds the query and returns the top-`k` items of `index`.
pub fn hybrid_search(
    params: &ParameterSet,
    query: &TokenBag,
    index: &CodeIndex,
    k: usize,
) -> Result<Vec<Hit>> {
    let emb = embed_query(params, query)?;
    let table = LookupTable::from_embedding(&emb, index.snapshot())?;
    if params.codebook_fingerprint() != index.fingerprint() {
        return Err(Error::StaleCodebooks {
            expected: index.fingerprint(),
            found: params.codebook_fingerprint(),
        });
    }
    index.search(&table, k, 1)
}

/// How the brute-force oracle reconstructs database embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reconstruction {
    /// Concatenated normalized codewords of the hard code.
    Hard,
    /// The raw embedding itself (no quantization).
    Bypass,
}

/// Segment-wise inner product summed over `m = 1..M`, matching the table path.
fn segmented_dot(query: &[f64], recon: &[f64], d: usize) -> f64 {
    let mut s = 0.0;
    for (q, r) in query.chunks_exact(d).zip(recon.chunks_exact(d)) {
        s += dot(q, r);
    }
    s
}

/// Hybrid scores of a query embedding against explicit reconstructions of item
/// embeddings (in input order).
pub fn brute_force_scores(
    query: &HybridEmbedding,
    items: &[HybridEmbedding],
    snapshot: &CodebookSnapshot,
    mode: Reconstruction,
) -> Result<Vec<f64>> {
    let d = snapshot.level(0).sub_dim();
    items
        .iter()
        .map(|item| {
            let mut level_scores = Vec::with_capacity(item.num_levels());
            for (lv, x) in item.levels().enumerate() {
                let recon = match mode {
                    Reconstruction::Hard => snapshot.level(lv).hard(x)?.1,
                    Reconstruction::Bypass => x.to_vec(),
                };
                level_scores.push(segmented_dot(query.level_by_index(lv), &recon, d));
            }
            Ok(fuse_levels(level_scores[0], &level_scores[1..]))
        })
        .collect()
}

/// Exhaustive oracle: embeds every item, reconstructs it explicitly, and ranks
/// with the same fused score as [`hybrid_search`]. Item `i` has id `i`.
pub fn brute_force_search(
    params: &ParameterSet,
    query: &TokenBag,
    items: &[TokenBag],
    k: usize,
    mode: Reconstruction,
) -> Result<Vec<Hit>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if items.is_empty() {
        return Err(Error::Empty("no items to search"));
    }
    let q = embed_query(params, query)?;
    let embs = items
        .iter()
        .map(|b| embed_item(params, b))
        .collect::<Result<Vec<_>>>()?;
    let snapshot = CodebookSnapshot::from_params(params);
    let scores = brute_force_scores(&q, &embs, &snapshot, mode)?;
    let hits = scores
        .into_iter()
        .enumerate()
        .map(|(i, score)| Hit {
            id: i as u64,
            score,
        })
        .collect();
    Ok(top_k(hits, k))
}

// ---- code file ----

pub const CODE_MAGIC: &[u8; 8] = b"HYBQCODE";
pub const CODE_VERSION: u32 = 1;
/// Fixed header length of a code file.
pub const CODE_HEADER_LEN: usize = 48;

const IDS_DENSE: u8 = 0;
const IDS_EXPLICIT: u8 = 1;

impl CodeIndex {
    fn ids_dense(&self) -> bool {
        self.ids.iter().enumerate().all(|(i, &id)| id == i as u64)
    }

    /// Writes the little-endian code file.
    ///
    /// Layout: magic, version, `M`, `K`, `L`, item count, codebook fingerprint,
    /// id mode, 7 reserved bytes; an id table (8 bytes per item) only when ids
    /// are not `0..n`; then each item's indices bit-packed LSB-first at
    /// `log2 K` bits and padded to a whole byte per item.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let dense = self.ids_dense();
        w.write_all(CODE_MAGIC)?;
        w.write_all(&CODE_VERSION.to_le_bytes())?;
        w.write_all(&(self.num_subspaces() as u32).to_le_bytes())?;
        w.write_all(&(self.num_codewords() as u32).to_le_bytes())?;
        w.write_all(&((self.num_levels() - 1) as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&self.fingerprint().to_le_bytes())?;
        w.write_all(&[if dense { IDS_DENSE } else { IDS_EXPLICIT }])?;
        w.write_all(&[0u8; 7])?;
        if !dense {
            for id in &self.ids {
                w.write_all(&id.to_le_bytes())?;
            }
        }
        let bits = self.bits_per_index();
        let per_item = self.bytes_per_item();
        let n = self.code_len();
        let mut buf = vec![0u8; per_item];
        for pos in 0..self.len() {
            buf.iter_mut().for_each(|b| *b = 0);
            if bits == 8 {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = self.codes.get(pos * n + j) as u8;
                }
            } else {
                let mut bit = 0usize;
                for j in 0..n {
                    let c = self.codes.get(pos * n + j) as u32;
                    for b in 0..bits {
                        if (c >> b) & 1 == 1 {
                            buf[bit / 8] |= 1 << (bit % 8);
                        }
                        bit += 1;
                    }
                }
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a code file; `snapshot` must carry the fingerprint recorded in it.
    pub fn read_from<R: Read>(mut r: R, snapshot: Arc<CodebookSnapshot>) -> Result<Self> {
        let fmt = |reason: String| Error::format("code", reason);
        let mut header = [0u8; CODE_HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|_| fmt("truncated header".into()))?;
        if &header[..8] != CODE_MAGIC {
            return Err(fmt("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != CODE_VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let (m, k, l) = (
            u32_at(12) as usize,
            u32_at(16) as usize,
            u32_at(20) as usize,
        );
        let count = u64_at(24) as usize;
        let fingerprint = u64_at(32);
        let id_mode = header[40];
        if m != snapshot.num_subspaces()
            || k != snapshot.num_codewords()
            || l + 1 != snapshot.num_levels()
        {
            return Err(fmt(format!(
                "shape (M={m}, K={k}, L={l}) does not match the checkpoint (M={}, K={}, L={})",
                snapshot.num_subspaces(),
                snapshot.num_codewords(),
                snapshot.num_levels() - 1
            )));
        }
        if fingerprint != snapshot.fingerprint() {
            return Err(Error::StaleCodebooks {
                expected: fingerprint,
                found: snapshot.fingerprint(),
            });
        }
        let ids: Vec<u64> = match id_mode {
            IDS_DENSE => (0..count as u64).collect(),
            IDS_EXPLICIT => {
                let mut raw = vec![0u8; count * 8];
                r.read_exact(&mut raw)
                    .map_err(|_| fmt("truncated id table".into()))?;
                raw.chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            }
            other => return Err(fmt(format!("unknown id mode {other}"))),
        };
        let mut index = CodeIndex::new(snapshot);
        let per_item = index.bytes_per_item();
        let bits = index.bits_per_index();
        let n = index.code_len();
        let mut payload = vec![0u8; per_item * count];
        r.read_exact(&mut payload)
            .map_err(|_| fmt("truncated code payload".into()))?;
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(fmt("trailing bytes after code payload".into()));
        }
        let mut indices = vec![0u16; n];
        for (pos, rec) in payload
            .chunks_exact(per_item.max(1))
            .enumerate()
            .take(count)
        {
            let mut bit = 0usize;
            for slot in indices.iter_mut() {
                let mut c = 0u32;
                for b in 0..bits {
                    if rec[bit / 8] >> (bit % 8) & 1 == 1 {
                        c |= 1 << b;
                    }
                    bit += 1;
                }
                *slot = c as u16;
            }
            index.push(
                ids[pos],
                &HardCode {
                    num_subspaces: m,
                    indices: indices.clone(),
                },
            )?;
        }
        Ok(index)
    }

    /// Serialized size: header, optional id table, packed codes.
    pub fn file_size(&self) -> usize {
        let ids = if self.ids_dense() { 0 } else { 8 * self.len() };
        CODE_HEADER_LEN + ids + self.len() * self.bytes_per_item()
    }
}
