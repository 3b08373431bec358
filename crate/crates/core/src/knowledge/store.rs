use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::bm25::Bm25Index;
use super::entry::{export_jsonl, validate_entries, KnowledgeEntry, Label};
use crate::gateway::{cosine_slices, ChatRequest, EmbeddingVector, Gateway};
use crate::reply::parse_json;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Coarse,
    Closure,
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub entry: KnowledgeEntry,
    pub lexical_score: f64,
    pub semantic_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<f64>,
    pub phase: Phase,
    pub rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<RetrievalHit>,
    /// Degradation markers such as `rerank_skipped`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FineOptions {
    /// Ask the chat model to drop column entries irrelevant to SQL generation.
    pub column_filter: bool,
}

#[derive(Debug, Default)]
struct Snapshot {
    entries: Vec<KnowledgeEntry>,
    by_key: HashMap<(Label, String), usize>,
    lexical: Bm25Index,
    embeddings: Vec<EmbeddingVector>,
}

impl Snapshot {
    fn build(entries: Vec<KnowledgeEntry>, embeddings: Vec<EmbeddingVector>) -> Self {
        let mut lexical = Bm25Index::new();
        let mut by_key = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            lexical.add(&e.lexical_text());
            by_key.insert((e.label, e.name.clone()), i);
        }
        Self { entries, by_key, lexical, embeddings }
    }

    /// Ancestors of `seed` in traversal order, plus the number of link
    /// lookups performed.
    fn closure(&self, seed: &KnowledgeEntry) -> (Vec<usize>, usize) {
        let mut visited: HashSet<(Label, &str)> = HashSet::new();
        visited.insert((seed.label, seed.name.as_str()));
        let mut out = Vec::new();
        let mut lookups = 0;
        let mut link = seed.ancestor();
        while let Some((label, name)) = link {
            lookups += 1;
            let Some(&idx) = self.by_key.get(&(label, name.to_string())) else { break };
            let e = &self.entries[idx];
            if !visited.insert((e.label, e.name.as_str())) {
                break;
            }
            out.push(idx);
            link = e.ancestor();
        }
        (out, lookups)
    }

    fn hit(&self, idx: usize, lexical: &HashMap<usize, f64>, query_vec: &[f64], phase: Phase) -> RetrievalHit {
        RetrievalHit {
            entry: self.entries[idx].clone(),
            lexical_score: lexical.get(&idx).copied().unwrap_or(0.0),
            semantic_score: cosine_slices(query_vec, &self.embeddings[idx].values).max(0.0),
            rerank_score: None,
            phase,
            rank: 0,
        }
    }
}

/// Knowledge base with a lexical and an embedding index.
///
/// Readers work on an immutable snapshot; `ingest` builds a new snapshot and
/// swaps it in, so a reader sees either the old or the new index.
pub struct KnowledgeStore {
    gateway: Arc<Gateway>,
    current: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
}

impl KnowledgeStore {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self { gateway, current: RwLock::new(Arc::new(Snapshot::default())), writer: Mutex::new(()) }
    }

    fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().expect("knowledge lock poisoned").clone()
    }

    /// Upserts `entries`. An entry replaces any stored entry with the same id
    /// or the same `(label, name)`. The batch is validated as a whole.
    pub fn ingest(&self, entries: Vec<KnowledgeEntry>) -> Result<usize> {
        validate_entries(&entries)?;
        if entries.is_empty() {
            return Ok(0);
        }
        let _w = self.writer.lock().expect("knowledge writer lock poisoned");
        let old = self.snapshot();

        // last occurrence within the batch wins
        let mut batch: Vec<KnowledgeEntry> = Vec::with_capacity(entries.len());
        for e in entries {
            batch.retain(|b| b.id != e.id && (b.label, &b.name) != (e.label, &e.name));
            batch.push(e);
        }
        let ids: HashSet<&str> = batch.iter().map(|e| e.id.as_str()).collect();
        let keys: HashSet<(Label, &str)> = batch.iter().map(|e| (e.label, e.name.as_str())).collect();

        let names: Vec<String> = batch.iter().map(|e| e.name.clone()).collect();
        let fresh = self.gateway.embed(&names)?;

        let mut entries = Vec::with_capacity(old.entries.len() + batch.len());
        let mut embeddings = Vec::with_capacity(entries.capacity());
        for (e, v) in old.entries.iter().zip(&old.embeddings) {
            if !ids.contains(e.id.as_str()) && !keys.contains(&(e.label, e.name.as_str())) {
                entries.push(e.clone());
                embeddings.push(v.clone());
            }
        }
        let count = batch.len();
        entries.extend(batch);
        embeddings.extend(fresh);

        let next = Arc::new(Snapshot::build(entries, embeddings));
        *self.current.write().expect("knowledge lock poisoned") = next;
        Ok(count)
    }

    pub fn len(&self) -> usize {
        self.snapshot().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, label: Label, name: &str) -> Option<KnowledgeEntry> {
        let s = self.snapshot();
        s.by_key.get(&(label, name.to_string())).map(|&i| s.entries[i].clone())
    }

    pub fn entries(&self) -> Vec<KnowledgeEntry> {
        self.snapshot().entries.clone()
    }

    pub fn export_jsonl(&self) -> String {
        export_jsonl(&self.snapshot().entries)
    }

    /// Hybrid recall: top-`k` BM25 hits unioned with top-`k` embedding hits
    /// over entry names. Ordered by reciprocal-rank fusion of both lists.
    pub fn coarse_retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievalHit>> {
        if query.trim().is_empty() {
            return Err(Error::Validation("coarse_retrieve: empty query".into()));
        }
        if k == 0 {
            return Err(Error::Validation("coarse_retrieve: k must be >= 1".into()));
        }
        let snap = self.snapshot();
        if snap.entries.is_empty() {
            return Ok(Vec::new());
        }
        Ok(coarse(&snap, &self.gateway, query, k)?.0)
    }

    /// Ancestors of `seed`, nearest first, excluding the seed itself.
    pub fn ancestor_closure(&self, seed: &KnowledgeEntry) -> Vec<KnowledgeEntry> {
        let snap = self.snapshot();
        snap.closure(seed).0.into_iter().map(|i| snap.entries[i].clone()).collect()
    }

    /// Like [`Self::ancestor_closure`] but also reports link lookups made.
    pub fn ancestor_closure_counted(&self, seed: &KnowledgeEntry) -> (Vec<KnowledgeEntry>, usize) {
        let snap = self.snapshot();
        let (idx, lookups) = snap.closure(seed);
        (idx.into_iter().map(|i| snap.entries[i].clone()).collect(), lookups)
    }

    /// Re-ranks `coarse` against `query` and keeps the top `n`.
    ///
    /// On re-ranker failure the input order is kept and `rerank_skipped` is
    /// flagged. With `column_filter`, column entries the chat model names as
    /// irrelevant are dropped before truncation.
    pub fn fine_retrieve(
        &self,
        query: &str,
        coarse: Vec<RetrievalHit>,
        n: usize,
        opts: FineOptions,
    ) -> Result<RetrievalResult> {
        if n == 0 {
            return Err(Error::Validation("fine_retrieve: n must be >= 1".into()));
        }
        let mut flags = Vec::new();
        let mut hits = coarse;
        if !hits.is_empty() {
            let texts: Vec<String> = hits.iter().map(|h| h.entry.render()).collect();
            match self.gateway.rerank(query, &texts) {
                Ok(order) => {
                    let mut slots: Vec<Option<RetrievalHit>> = hits.into_iter().map(Some).collect();
                    hits = order
                        .into_iter()
                        .filter_map(|(i, s)| {
                            let mut h = slots.get_mut(i)?.take()?;
                            h.rerank_score = Some(s);
                            Some(h)
                        })
                        .collect();
                    // anything the provider left out keeps its relative order at the end
                    hits.extend(slots.into_iter().flatten());
                }
                Err(e) => {
                    tracing::warn!(error = %e, "rerank failed; keeping coarse order");
                    flags.push("rerank_skipped".to_string());
                }
            }
        }
        if opts.column_filter && hits.iter().any(|h| h.entry.label == Label::Column) {
            match self.irrelevant_columns(query, &hits) {
                Ok(drop) => hits.retain(|h| h.entry.label != Label::Column || !drop.contains(&h.entry.name)),
                Err(e) => {
                    tracing::warn!(error = %e, "column filter failed");
                    flags.push("column_filter_skipped".to_string());
                }
            }
        }
        hits.truncate(n);
        for (i, h) in hits.iter_mut().enumerate() {
            h.rank = i + 1;
            if h.phase == Phase::Coarse {
                h.phase = Phase::Fine;
            }
        }
        Ok(RetrievalResult { hits, flags })
    }

    fn irrelevant_columns(&self, query: &str, hits: &[RetrievalHit]) -> Result<HashSet<String>> {
        #[derive(Deserialize)]
        struct Reply {
            irrelevant: Vec<String>,
        }
        let listing: Vec<String> = hits
            .iter()
            .filter(|h| h.entry.label == Label::Column)
            .map(|h| format!("- {}: {}", h.entry.name, h.entry.description))
            .collect();
        let req = ChatRequest::new("column_filter")
            .system(format!("{}\nCandidate columns:\n{}", crate::prompts::COLUMN_FILTER, listing.join("\n")))
            .user(query);
        let raw = self.gateway.chat_text(&req)?;
        let r: Reply = parse_json(&raw).ok_or_else(|| Error::reply_parse("column filter", raw.clone()))?;
        Ok(r.irrelevant.into_iter().collect())
    }

    /// Coarse retrieval, ancestor expansion of every hit, then fine retrieval.
    pub fn retrieve(&self, query: &str, k: usize, n: usize, opts: FineOptions) -> Result<RetrievalResult> {
        if k == 0 || n == 0 {
            return Err(Error::Validation(format!("retrieve: k and n must be >= 1 (k={k}, n={n})")));
        }
        if query.trim().is_empty() {
            return Err(Error::Validation("retrieve: empty query".into()));
        }
        let snap = self.snapshot();
        if snap.entries.is_empty() {
            return Ok(RetrievalResult::default());
        }
        let (mut hits, lexical, qv) = coarse(&snap, &self.gateway, query, k)?;
        let mut seen: HashSet<String> = hits.iter().map(|h| h.entry.id.clone()).collect();
        let mut added = Vec::new();
        for h in &hits {
            for idx in snap.closure(&h.entry).0 {
                if seen.insert(snap.entries[idx].id.clone()) {
                    added.push(snap.hit(idx, &lexical, &qv, Phase::Closure));
                }
            }
        }
        hits.extend(added);
        for (i, h) in hits.iter_mut().enumerate() {
            h.rank = i + 1;
        }
        self.fine_retrieve(query, hits, n, opts)
    }
}

type CoarseOutput = (Vec<RetrievalHit>, HashMap<usize, f64>, Vec<f64>);

fn coarse(snap: &Snapshot, gateway: &Gateway, query: &str, k: usize) -> Result<CoarseOutput> {
    const RRF_K: f64 = 60.0;
    let lexical = snap.lexical.scores(query);
    let mut lex_ranked: Vec<(usize, f64)> = lexical.iter().filter(|(_, s)| **s > 0.0).map(|(d, s)| (*d, *s)).collect();
    lex_ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    lex_ranked.truncate(k);

    let qv = gateway.embed_one(query)?.values;
    let mut sem_ranked: Vec<(usize, f64)> = snap
        .embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| (i, cosine_slices(&qv, &e.values)))
        .filter(|(_, s)| *s > 0.0)
        .collect();
    sem_ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sem_ranked.truncate(k);

    let mut fused: HashMap<usize, f64> = HashMap::new();
    for list in [&lex_ranked, &sem_ranked] {
        for (rank, (doc, _)) in list.iter().enumerate() {
            *fused.entry(*doc).or_default() += 1.0 / (RRF_K + rank as f64 + 1.0);
        }
    }
    let mut order: Vec<(usize, f64)> = fused.into_iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| snap.entries[a.0].id.cmp(&snap.entries[b.0].id)));
    let hits = order
        .into_iter()
        .enumerate()
        .map(|(i, (doc, _))| {
            let mut h = snap.hit(doc, &lexical, &qv, Phase::Coarse);
            h.rank = i + 1;
            h
        })
        .collect();
    Ok((hits, lexical, qv))
}
