//! In-process inverted index with Okapi BM25 scoring.

use std::collections::HashMap;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Lowercases, splits on non-alphanumerics and, for words containing
/// non-ASCII characters (CJK text has no spaces), also emits the word's
/// character trigrams so unsegmented queries still match.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        out.push(word.to_string());
        if !word.is_ascii() {
            let chars: Vec<char> = word.chars().collect();
            if chars.len() > 3 {
                out.extend(chars.windows(3).map(|w| w.iter().collect::<String>()));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    k1: f64,
    b: f64,
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_len: Vec<u32>,
    total_len: u64,
}

impl Bm25Index {
    pub fn new() -> Self {
        Self::with_params(DEFAULT_K1, DEFAULT_B)
    }

    pub fn with_params(k1: f64, b: f64) -> Self {
        Self { k1, b, ..Default::default() }
    }

    /// Adds a document; ids are assigned sequentially from 0.
    pub fn add(&mut self, text: &str) -> usize {
        let doc = self.doc_len.len();
        let tokens = tokenize(text);
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_default() += 1;
        }
        for (term, n) in tf {
            self.postings.entry(term).or_default().push((doc, n));
        }
        self.doc_len.push(tokens.len() as u32);
        self.total_len += tokens.len() as u64;
        doc
    }

    pub fn len(&self) -> usize {
        self.doc_len.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_len.is_empty()
    }

    fn avgdl(&self) -> f64 {
        if self.doc_len.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.doc_len.len() as f64
        }
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_len.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn unique_query_terms(query: &str) -> Vec<String> {
        let mut terms = tokenize(query);
        let mut seen = std::collections::HashSet::new();
        terms.retain(|t| seen.insert(t.clone()));
        terms
    }

    /// Scores every document with at least one query term.
    pub fn scores(&self, query: &str) -> HashMap<usize, f64> {
        let avgdl = self.avgdl();
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for term in Self::unique_query_terms(query) {
            let Some(list) = self.postings.get(&term) else { continue };
            let idf = self.idf(list.len());
            for &(doc, tf) in list {
                let tf = f64::from(tf);
                let norm = 1.0 - self.b + self.b * f64::from(self.doc_len[doc]) / avgdl;
                *acc.entry(doc).or_default() += idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm);
            }
        }
        acc
    }

    /// Top `k` documents with positive score, ties broken by document id.
    pub fn search(&self, query: &str, k: usize) -> Vec<(usize, f64)> {
        let mut hits: Vec<(usize, f64)> = self.scores(query).into_iter().filter(|(_, s)| *s > 0.0).collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        hits
    }
}
