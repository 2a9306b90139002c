//! Retrieval quality (R@N, median rank) and efficiency (query latency, storage).

use std::fmt::{self, Write as _};
use std::sync::Arc;
use std::time::Instant;

use crate::data::PairedDataset;
use crate::encoder::{embed_item, embed_query};
use crate::error::{Error, Result};
use crate::index::{
    brute_force_scores, encode_embeddings, CodeIndex, CodebookSnapshot, LookupTable, Reconstruction,
};
use crate::model::{HybridEmbedding, TokenBag};
use crate::params::ParameterSet;

/// Percentage of ground-truth ranks within the top `n`.
pub fn recall_at(ranks: &[usize], n: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let hits = ranks.iter().filter(|&&r| r <= n).count();
    100.0 * hits as f64 / ranks.len() as f64
}

/// Median of 1-based ranks; the mean of the two middle values for even counts.
pub fn median_rank(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return f64::NAN;
    }
    let mut s = ranks.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
    }
}

/// 1-based rank of `ids[truth]` among `scores`, ranking higher scores first and
/// breaking ties by ascending id.
pub fn rank_of(scores: &[f64], ids: &[u64], truth: usize) -> usize {
    let (st, it) = (scores[truth], ids[truth]);
    1 + scores
        .iter()
        .zip(ids)
        .filter(|&(&s, &id)| s > st || (s == st && id < it))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    QueryToItem,
    ItemToQuery,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::QueryToItem => "query_to_item",
            Direction::ItemToQuery => "item_to_query",
        })
    }
}

/// How database-side scores are produced during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scoring {
    /// Hard codes scored through per-query lookup tables.
    Tables,
    /// Explicit reconstructions scored by the brute-force oracle.
    Oracle(Reconstruction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub direction: Direction,
    pub queries: usize,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub r50: f64,
    pub median_rank: f64,
    /// Mean wall-clock seconds per query (embedding, table build and scan).
    pub mean_query_seconds: f64,
    pub bytes_per_item: usize,
}

impl EvalReport {
    fn from_ranks(
        direction: Direction,
        ranks: &[usize],
        seconds: f64,
        bytes_per_item: usize,
    ) -> Self {
        Self {
            direction,
            queries: ranks.len(),
            r1: recall_at(ranks, 1),
            r5: recall_at(ranks, 5),
            r10: recall_at(ranks, 10),
            r50: recall_at(ranks, 50),
            median_rank: median_rank(ranks),
            mean_query_seconds: if ranks.is_empty() {
                0.0
            } else {
                seconds / ranks.len() as f64
            },
            bytes_per_item,
        }
    }

    /// Machine-readable `key=value` lines, prefixed by direction.
    pub fn kv_lines(&self) -> String {
        let d = self.direction;
        let mut s = String::new();
        let _ = writeln!(s, "{d}.queries={}", self.queries);
        let _ = writeln!(s, "{d}.r1={:.4}", self.r1);
        let _ = writeln!(s, "{d}.r5={:.4}", self.r5);
        let _ = writeln!(s, "{d}.r10={:.4}", self.r10);
        let _ = writeln!(s, "{d}.r50={:.4}", self.r50);
        let _ = writeln!(s, "{d}.mdr={}", self.median_rank);
        let _ = writeln!(s, "{d}.mean_query_seconds={:.6e}", self.mean_query_seconds);
        let _ = writeln!(s, "{d}.bytes_per_item={}", self.bytes_per_item);
        s
    }
}

/// Human-readable table over several reports.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>12} {:>8}",
        "direction", "n", "R@1", "R@5", "R@10", "R@50", "MdR", "query (s)", "bytes"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<14} {:>7} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7.1} {:>12.3e} {:>8}",
            r.direction.to_string(),
            r.queries,
            r.r1,
            r.r5,
            r.r10,
            r.r50,
            r.median_rank,
            r.mean_query_seconds,
            r.bytes_per_item
        );
    }
    s
}

fn ranks_by_tables(
    query_embs: &[HybridEmbedding],
    index: &CodeIndex,
    truth_ids: &[u64],
) -> Result<Vec<usize>> {
    let ids = index.ids();
    let pos_of = |id: u64| ids.iter().position(|&x| x == id);
    query_embs
        .iter()
        .zip(truth_ids)
        .map(|(q, &tid)| {
            let t = LookupTable::from_embedding(q, index.snapshot())?;
            let scores = index.score_all(&t)?;
            let pos = pos_of(tid).ok_or(Error::IndexOutOfRange {
                index: tid as usize,
                bound: ids.len(),
            })?;
            Ok(rank_of(&scores, ids, pos))
        })
        .collect()
}

fn ranks_by_oracle(
    query_embs: &[HybridEmbedding],
    db_embs: &[HybridEmbedding],
    snapshot: &CodebookSnapshot,
    mode: Reconstruction,
) -> Result<Vec<usize>> {
    let ids: Vec<u64> = (0..db_embs.len() as u64).collect();
    query_embs
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let scores = brute_force_scores(q, db_embs, snapshot, mode)?;
            Ok(rank_of(&scores, &ids, i))
        })
        .collect()
}

fn embed_all(
    params: &ParameterSet,
    bags: &[TokenBag],
    f: fn(&ParameterSet, &TokenBag) -> Result<HybridEmbedding>,
) -> Result<Vec<HybridEmbedding>> {
    bags.iter().map(|b| f(params, b)).collect()
}

/// Query→item ranks of the true counterpart; pair `i` is item id `i`.
pub fn query_to_item_ranks(
    params: &ParameterSet,
    data: &PairedDataset,
    item_index: Option<&CodeIndex>,
    scoring: Scoring,
) -> Result<Vec<usize>> {
    let q = embed_all(params, data.queries(), embed_query)?;
    let truth: Vec<u64> = (0..data.len() as u64).collect();
    match scoring {
        Scoring::Tables => match item_index {
            Some(idx) => ranks_by_tables(&q, idx, &truth),
            None => {
                let v = embed_all(params, data.items(), embed_item)?;
                let idx = encode_embeddings(Arc::new(CodebookSnapshot::from_params(params)), &v)?;
                ranks_by_tables(&q, &idx, &truth)
            }
        },
        Scoring::Oracle(mode) => {
            let v = embed_all(params, data.items(), embed_item)?;
            ranks_by_oracle(&q, &v, &CodebookSnapshot::from_params(params), mode)
        }
    }
}

/// Evaluates both retrieval directions over a paired dataset.
///
/// Item codes come from `item_index` when given (ids must be `0..n` matching the
/// pairing), otherwise they are encoded on the fly. Query codes for the reverse
/// direction are always encoded on the fly.
pub fn evaluate(
    params: &ParameterSet,
    data: &PairedDataset,
    item_index: Option<&CodeIndex>,
    scoring: Scoring,
) -> Result<[EvalReport; 2]> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set has no pairs"));
    }
    let snapshot = Arc::new(CodebookSnapshot::from_params(params));
    if let Some(idx) = item_index {
        if idx.fingerprint() != snapshot.fingerprint() {
            return Err(Error::StaleCodebooks {
                expected: idx.fingerprint(),
                found: snapshot.fingerprint(),
            });
        }
    }
    let cfg = &params.config;
    let bytes = match scoring {
        Scoring::Oracle(Reconstruction::Bypass) => cfg.num_levels() * cfg.dim * 4,
        _ => cfg.code_bytes_per_item(),
    };
    let truth: Vec<u64> = (0..data.len() as u64).collect();

    // query -> item
    let start = Instant::now();
    let q = embed_all(params, data.queries(), embed_query)?;
    let v = embed_all(params, data.items(), embed_item)?;
    let embed_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let q2i = match scoring {
        Scoring::Tables => match item_index {
            Some(idx) => ranks_by_tables(&q, idx, &truth)?,
            None => ranks_by_tables(&q, &encode_embeddings(snapshot.clone(), &v)?, &truth)?,
        },
        Scoring::Oracle(mode) => ranks_by_oracle(&q, &v, &snapshot, mode)?,
    };
    let q2i_secs = start.elapsed().as_secs_f64() + embed_secs / 2.0;

    // item -> query
    let start = Instant::now();
    let i2q = match scoring {
        Scoring::Tables => ranks_by_tables(&v, &encode_embeddings(snapshot.clone(), &q)?, &truth)?,
        Scoring::Oracle(mode) => ranks_by_oracle(&v, &q, &snapshot, mode)?,
    };
    let i2q_secs = start.elapsed().as_secs_f64() + embed_secs / 2.0;

    Ok([
        EvalReport::from_ranks(Direction::QueryToItem, &q2i, q2i_secs, bytes),
        EvalReport::from_ranks(Direction::ItemToQuery, &i2q, i2q_secs, bytes),
    ])
}

/// Latency and storage figures for one benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub queries: usize,
    pub repetitions: usize,
    pub database_items: usize,
    pub threads: usize,
    pub k: usize,
    /// Mean seconds per query for embedding and table construction.
    pub mean_encode_seconds: f64,
    /// Mean seconds per query for the table scan and top-k selection.
    pub mean_scan_seconds: f64,
    pub mean_total_seconds: f64,
    pub bytes_per_item: usize,
    pub storage_bytes: usize,
}

impl BenchReport {
    pub fn kv_lines(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "bench.queries={}", self.queries);
        let _ = writeln!(s, "bench.repetitions={}", self.repetitions);
        let _ = writeln!(s, "bench.database_items={}", self.database_items);
        let _ = writeln!(s, "bench.threads={}", self.threads);
        let _ = writeln!(s, "bench.k={}", self.k);
        let _ = writeln!(
            s,
            "bench.mean_encode_seconds={:.6e}",
            self.mean_encode_seconds
        );
        let _ = writeln!(s, "bench.mean_scan_seconds={:.6e}", self.mean_scan_seconds);
        let _ = writeln!(
            s,
            "bench.mean_total_seconds={:.6e}",
            self.mean_total_seconds
        );
        let _ = writeln!(s, "bench.bytes_per_item={}", self.bytes_per_item);
        let _ = writeln!(s, "bench.storage_bytes={}", self.storage_bytes);
        s
    }

    pub fn table(&self) -> String {
        format!(
            "items {:>10}  threads {:>3}  encode {:>10.3e}s  scan {:>10.3e}s  total {:>10.3e}s  storage {} B ({} B/item)\n",
            self.database_items,
            self.threads,
            self.mean_encode_seconds,
            self.mean_scan_seconds,
            self.mean_total_seconds,
            self.storage_bytes,
            self.bytes_per_item
        )
    }
}

/// Mean per-query latency over `repetitions` passes after one warm-up pass.
pub fn bench_query_time(
    params: &ParameterSet,
    index: &CodeIndex,
    queries: &[TokenBag],
    repetitions: usize,
    threads: usize,
    k: usize,
) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::InvalidConfig(
            "repetitions must be at least 1".into(),
        ));
    }
    if queries.is_empty() {
        return Err(Error::Empty("no benchmark queries"));
    }
    let run = |encode: &mut f64, scan: &mut f64| -> Result<()> {
        for q in queries {
            let t0 = Instant::now();
            let emb = embed_query(params, q)?;
            let table = LookupTable::from_embedding(&emb, index.snapshot())?;
            let t1 = Instant::now();
            std::hint::black_box(index.search(&table, k, threads)?);
            let t2 = Instant::now();
            *encode += (t1 - t0).as_secs_f64();
            *scan += (t2 - t1).as_secs_f64();
        }
        Ok(())
    };
    let (mut e, mut s) = (0.0, 0.0);
    run(&mut e, &mut s)?;
    let (mut encode, mut scan) = (0.0, 0.0);
    for _ in 0..repetitions {
        run(&mut encode, &mut scan)?;
    }
    let n = (repetitions * queries.len()) as f64;
    Ok(BenchReport {
        queries: queries.len(),
        repetitions,
        database_items: index.len(),
        threads,
        k,
        mean_encode_seconds: encode / n,
        mean_scan_seconds: scan / n,
        mean_total_seconds: (encode + scan) / n,
        bytes_per_item: index.bytes_per_item(),
        storage_bytes: index.len() * index.bytes_per_item(),
    })
}

/// Mean scan-only seconds per table over `repetitions` passes (after one warm-up).
pub fn bench_scan(
    index: &CodeIndex,
    tables: &[LookupTable],
    repetitions: usize,
    threads: usize,
    k: usize,
) -> Result<f64> {
    if repetitions == 0 {
        return Err(Error::InvalidConfig(
            "repetitions must be at least 1".into(),
        ));
    }
    for t in tables {
        std::hint::black_box(index.search(t, k, threads)?);
    }
    let start = Instant::now();
    for _ in 0..repetitions {
        for t in tables {
            std::hint::black_box(index.search(t, k, threads)?);
        }
    }
    Ok(start.elapsed().as_secs_f64() / (repetitions * tables.len().max(1)) as f64)
}
