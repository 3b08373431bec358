//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Every check runs offline against stub providers and the bundled
//! fixtures; oracles below are written independently of the library code.

// `!(x <= tol)` is deliberate: a NaN must fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chatbi_core::db::{Cell, Database, ResultTable};
use chatbi_core::dialogue::ReplyKind;
use chatbi_core::engine::{Engine, EngineConfig};
use chatbi_core::eval::{
    execution_accuracy, load_dataset, run_eval, AnswerEngine, EvalItem, EvalOptions, Metric, MetricReport, Timing,
};
use chatbi_core::gateway::{EmbeddingVector, Gateway, StubScript};
use chatbi_core::insight::attribute;
use chatbi_core::knowledge::{FineOptions, KnowledgeEntry, KnowledgeStore, Label};
use chatbi_core::pipeline::{run_pipeline, PairSource, PipelineConfig, PipelineInputs, SqlLogEntry};
use chatbi_core::sqlgen::{
    domain_similarity, select_strategy, validate_sql, DomainProfile, Strategy, StrategyThresholds,
};
use chatbi_core::tables::{rerank_score, ColumnSpec, SchemaSource, ScoringParams, TableIndex, TableProfile, TableSpec};
use chatbi_core::{Error, Result};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn engine(sessions: &TempDir, extra: &[(&str, &str)]) -> Result<Engine> {
    let dir = fixtures();
    let text = std::fs::read_to_string(dir.join("config.toml"))?;
    let mut vars = vec![("ENGINE_SESSIONS_DIR".to_string(), sessions.path().display().to_string())];
    vars.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
    Engine::from_config(EngineConfig::parse_with_env(&text, &dir, vars)?)
}

const ABLATED: &[(&str, &str)] =
    &[("ENGINE_FEATURES__HISTORY_COMPLETION", "false"), ("ENGINE_FEATURES__CLARIFICATION", "false")];

fn e2s(e: Error) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Oracles

/// Character trigrams with start/end sentinels over the lowercased text.
fn oracle_trigrams(s: &str) -> Vec<String> {
    if s.is_empty() {
        return vec![];
    }
    let mut cs = vec!['\u{2}'];
    for c in s.chars() {
        cs.extend(c.to_lowercase());
    }
    cs.push('\u{3}');
    (0..cs.len() - 2).map(|i| cs[i..i + 3].iter().collect()).collect()
}

/// TF-IDF trigram cosine, smoothed idf over the column name/comment corpus.
struct OracleTfIdf {
    df: HashMap<String, f64>,
    n: f64,
}

impl OracleTfIdf {
    fn new(docs: &[String]) -> Self {
        let mut df = HashMap::new();
        for d in docs {
            let set: HashSet<String> = oracle_trigrams(d).into_iter().collect();
            for g in set {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        Self { df, n: docs.len() as f64 }
    }

    fn weights(&self, s: &str) -> HashMap<String, f64> {
        let mut w: HashMap<String, f64> = HashMap::new();
        for g in oracle_trigrams(s) {
            *w.entry(g).or_insert(0.0) += 1.0;
        }
        for (g, x) in w.iter_mut() {
            let df = self.df.get(g).copied().unwrap_or(0.0);
            *x *= ((1.0 + self.n) / (1.0 + df)).ln() + 1.0;
        }
        w
    }

    fn sim(&self, a: &str, b: &str) -> f64 {
        let (wa, wb) = (self.weights(a), self.weights(b));
        let mut dot = 0.0;
        for (g, x) in &wa {
            if let Some(y) = wb.get(g) {
                dot += x * y;
            }
        }
        let na = wa.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb = wb.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            (dot / (na * nb)).clamp(0.0, 1.0)
        }
    }
}

/// Sum over keywords of the best similarity over every column name and comment.
fn oracle_token_similarity(tf: &OracleTfIdf, keywords: &[String], columns: &[ColumnSpec]) -> f64 {
    let mut total = 0.0;
    for k in keywords {
        let mut best = 0.0f64;
        for c in columns {
            best = best.max(tf.sim(k, &c.name));
            if let Some(cm) = &c.comment {
                best = best.max(tf.sim(k, cm));
            }
        }
        total += best;
    }
    total
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn oracle_strategy(n: u64, s: f64) -> Strategy {
    // two-step whenever either condition falls short
    if n < 500 || s < 0.7 {
        Strategy::TwoStep
    } else {
        Strategy::OneStep
    }
}

/// Follows ancestor links by name until a link is missing or revisits a node.
fn oracle_closure(entries: &[KnowledgeEntry], seed: usize) -> Vec<String> {
    let index: HashMap<(Label, &str), usize> =
        entries.iter().enumerate().map(|(i, e)| ((e.label, e.name.as_str()), i)).collect();
    let mut seen = vec![false; entries.len()];
    seen[seed] = true;
    let mut out = vec![];
    let mut cur = seed;
    loop {
        let e = &entries[cur];
        let (Some(l), Some(n)) = (e.anc_label, e.anc_name.as_deref()) else { break };
        let Some(&next) = index.get(&(l, n)) else { break };
        if seen[next] {
            break;
        }
        seen[next] = true;
        out.push(entries[next].id.clone());
        cur = next;
    }
    out
}

// ---------------------------------------------------------------------------
// Shared generators

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tas", "vo", "quin", "dar", "bel", "sor", "pu", "nex", "hal", "ti", "gro", "wen", "zu",
    "fa", "mor", "el", "ost", "yu", "cri", "ban",
];

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

fn column(name: String, comment: Option<String>) -> ColumnSpec {
    ColumnSpec { name, column_type: "TEXT".into(), comment }
}

fn embed(gw: &Gateway, text: &str) -> Result<EmbeddingVector> {
    gw.embed_one(text)
}

// ---------------------------------------------------------------------------
// Criteria

fn rerank_oracle() -> Check {
    let gw = Gateway::stub(StubScript::new());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for instance in 0..100 {
        let n_tables = rng.random_range(2..=12);
        let specs: Vec<TableSpec> = (0..n_tables)
            .map(|t| TableSpec {
                name: format!("t{instance}_{t}_{}", word(&mut rng, 2)),
                heat: Some(rng.random_range(0.0..100.0)),
                columns: (0..rng.random_range(1..=8))
                    .map(|_| {
                        let len = rng.random_range(1..=3);
                        let n = word(&mut rng, len);
                        let c = rng.random_bool(0.5).then(|| format!("{} {}", word(&mut rng, 2), word(&mut rng, 3)));
                        column(n, c)
                    })
                    .collect(),
                tags: vec![],
            })
            .collect();
        let schema = SchemaSource { tables: specs };
        let index = TableIndex::build(&schema, &gw).map_err(e2s)?;
        let keywords: Vec<String> = (0..rng.random_range(1..=5))
            .map(|_| {
                let len = rng.random_range(1..=3);
                word(&mut rng, len)
            })
            .collect();
        let params = ScoringParams {
            rerank_alpha: rng.random_range(0.0..2.0),
            rerank_beta: rng.random_range(0.0..2.0),
            coarse_cap: 100,
            size_budget_k: 1_000_000,
            candidate_n: 100,
        };
        let kw_vecs: Vec<EmbeddingVector> =
            keywords.iter().map(|k| embed(&gw, k)).collect::<Result<_>>().map_err(e2s)?;
        let coarse = index.coarse_rank(&kw_vecs, &params, &[]).map_err(e2s)?;
        ensure!(coarse.len() == n_tables, "instance {instance}: coarse kept {} of {n_tables}", coarse.len());
        let scored = index.rerank(&keywords, &coarse, &params);

        let docs: Vec<String> = schema
            .tables
            .iter()
            .flat_map(|t| t.columns.iter().flat_map(|c| std::iter::once(c.name.clone()).chain(c.comment.clone())))
            .collect();
        let tf = OracleTfIdf::new(&docs);
        let raw: Vec<f64> = schema.tables.iter().map(|t| t.heat.unwrap()).collect();
        let (lo, hi) = raw.iter().fold((f64::MAX, f64::MIN), |(l, h), x| (l.min(*x), h.max(*x)));
        for s in &scored {
            let pos = schema.tables.iter().position(|t| t.name == s.table_name).unwrap();
            let spec = &schema.tables[pos];
            let sim = oracle_token_similarity(&tf, &keywords, &spec.columns);
            let t_vec = embed(&gw, &chatbi_core::tables::render_table(spec)).map_err(e2s)?;
            let emb = kw_vecs.iter().map(|k| oracle_cosine(&k.values, &t_vec.values)).fold(f64::MIN, f64::max);
            let heat = if hi > lo { (raw[pos] - lo) / (hi - lo) } else { 0.5 };
            let score = sim + params.rerank_alpha * emb + params.rerank_beta * heat;
            let err = (s.sim - sim).abs().max((s.score - score).abs()).max((s.embed - emb).abs());
            worst = worst.max(err);
            ensure!(
                err <= 1e-9,
                "instance {instance} table {}: sim {} vs {sim}, score {} vs {score}",
                s.table_name,
                s.sim,
                s.score
            );
            let zero = ScoringParams { rerank_alpha: 0.0, rerank_beta: 0.0, ..params };
            ensure!(rerank_score(s.sim, s.embed, s.heat, &zero) == s.sim, "alpha=beta=0 does not reduce to Sim");
        }
    }
    let fixed =
        rerank_score(0.5, 0.8, 0.3, &ScoringParams { rerank_alpha: 0.5, rerank_beta: 0.2, ..Default::default() });
    ensure!((fixed - 0.96).abs() <= 1e-12, "worked example gave {fixed}");
    Ok(format!("100 instances, max deviation {worst:.1e}"))
}

fn strategy_rule() -> Check {
    let t = StrategyThresholds::default();
    ensure!(t.n_threshold == 500 && t.s_threshold == 0.7, "default thresholds {t:?}");
    let mut grid = 0;
    for n in [499u64, 500, 501] {
        for s in [0.69, 0.7, 0.71] {
            let got = select_strategy(n, s, &t);
            ensure!(got == oracle_strategy(n, s), "grid ({n}, {s}) gave {got:?}");
            grid += 1;
        }
    }
    ensure!(select_strategy(500, 0.7, &t) == Strategy::OneStep, "inclusive boundary not one-step");
    ensure!(select_strategy(600, 0.8, &t) == Strategy::OneStep, "(600, 0.8)");
    ensure!(select_strategy(600, 0.6, &t) == Strategy::TwoStep, "(600, 0.6)");
    ensure!(select_strategy(100, 0.9, &t) == Strategy::TwoStep, "(100, 0.9)");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10_000 {
        let n = rng.random_range(0..1000u64);
        let s = rng.random_range(-1.0..=1.0);
        ensure!(select_strategy(n, s, &t) == oracle_strategy(n, s), "random ({n}, {s}) mismatched");
    }
    Ok(format!("{grid} grid points and 10000 random pairs, 0 mismatches"))
}

fn domain_similarity_props() -> Check {
    let gw = Gateway::stub(StubScript::new());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dp = |name: &str, kw: Vec<String>| DomainProfile { name: name.into(), keywords: kw };
    let (mut self_err, mut sym_err, mut dup_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let a: Vec<String> = (0..rng.random_range(1..8)).map(|_| word(&mut rng, 3)).collect();
        let b: Vec<String> = (0..rng.random_range(1..8)).map(|_| word(&mut rng, 3)).collect();
        let s_aa = domain_similarity(&dp("t", a.clone()), &dp("s", a.clone()), &gw).map_err(e2s)?;
        self_err = self_err.max((s_aa - 1.0).abs());
        let ab = domain_similarity(&dp("t", a.clone()), &dp("s", b.clone()), &gw).map_err(e2s)?;
        let ba = domain_similarity(&dp("t", b.clone()), &dp("s", a.clone()), &gw).map_err(e2s)?;
        sym_err = sym_err.max((ab - ba).abs());
        let doubled: Vec<String> = a.iter().chain(a.iter()).cloned().collect();
        let dd = domain_similarity(&dp("t", doubled), &dp("s", b.clone()), &gw).map_err(e2s)?;
        dup_err = dup_err.max((dd - ab).abs());
    }
    ensure!(self_err <= 1e-9, "identical sets off by {self_err}");
    ensure!(sym_err <= 1e-12, "asymmetry {sym_err}");
    ensure!(dup_err <= 1e-12, "duplicating keywords moved the score by {dup_err}");
    Ok(format!("self {self_err:.1e}, symmetry {sym_err:.1e}, duplicates {dup_err:.1e}"))
}

fn ancestor_closure() -> Check {
    let labels = [Label::Table, Label::Column, Label::Term, Label::Alias, Label::Udf];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for structure in 0..50 {
        let n = rng.random_range(1..=200);
        let names: Vec<(Label, String)> =
            (0..n).map(|i| (*labels.choose(&mut rng).unwrap(), format!("n{i}"))).collect();
        let entries: Vec<KnowledgeEntry> = (0..n)
            .map(|i| {
                let e = KnowledgeEntry::new(&format!("e{structure}_{i}"), names[i].0, &names[i].1, "synthetic entry");
                match rng.random_range(0..10) {
                    0..=5 => {
                        let (l, nm) = &names[rng.random_range(0..n)];
                        e.with_ancestor(*l, nm)
                    }
                    6 => e.with_ancestor(Label::Table, "absent"),
                    _ => e,
                }
            })
            .collect();
        let store = KnowledgeStore::new(Arc::new(Gateway::stub(StubScript::new())));
        store.ingest(entries.clone()).map_err(e2s)?;
        for (i, e) in entries.iter().enumerate() {
            let got: Vec<String> = store.ancestor_closure(e).into_iter().map(|x| x.id).collect();
            let want = oracle_closure(&entries, i);
            ensure!(got == want, "structure {structure} seed {}: {got:?} vs {want:?}", e.id);
        }
    }

    let chain = vec![
        KnowledgeEntry::new("k1", Label::Term, "Campus Hiring", "hiring of new graduates on campus")
            .with_ancestor(Label::Term, "Campus Recruitment"),
        KnowledgeEntry::new("k2", Label::Term, "Campus Recruitment", "recruitment at universities")
            .with_ancestor(Label::Column, "Recruitment Channels"),
        KnowledgeEntry::new(
            "k3",
            Label::Column,
            "Recruitment Channels",
            "channel through which a person was recruited",
        )
        .with_ancestor(Label::Table, "Personnel Table"),
        KnowledgeEntry::new("k4", Label::Table, "Personnel Table", "one row per employee")
            .with_ancestor(Label::Table, "Company HR Database"),
    ];
    let store = KnowledgeStore::new(Arc::new(Gateway::stub(StubScript::new())));
    store.ingest(chain.clone()).map_err(e2s)?;
    let got: Vec<String> = store.ancestor_closure(&chain[0]).into_iter().map(|e| e.name).collect();
    ensure!(got == ["Campus Recruitment", "Recruitment Channels", "Personnel Table"], "chain gave {got:?}");

    let store = KnowledgeStore::new(Arc::new(Gateway::stub(StubScript::new())));
    let cyc = vec![
        KnowledgeEntry::new("c1", Label::Term, "A", "a").with_ancestor(Label::Term, "B"),
        KnowledgeEntry::new("c2", Label::Term, "B", "b").with_ancestor(Label::Term, "C"),
        KnowledgeEntry::new("c3", Label::Term, "C", "c").with_ancestor(Label::Term, "A"),
    ];
    store.ingest(cyc.clone()).map_err(e2s)?;
    let (out, lookups) = store.ancestor_closure_counted(&cyc[0]);
    ensure!(out.len() == 2 && lookups <= 3, "cycle gave {} entries after {lookups} lookups", out.len());
    Ok("50 random structures match the oracle; chain stops before the absent database; cycle terminates".into())
}

fn retrieval_floors() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vocab: Vec<String> = {
        let mut seen = HashSet::new();
        let mut v = vec![];
        while v.len() < 400 {
            let w = word(&mut rng, 3);
            if seen.insert(w.clone()) {
                v.push(w);
            }
        }
        v
    };
    let labels = [Label::Term, Label::Column, Label::Table, Label::Alias, Label::Value];
    let mut names = HashSet::new();
    let mut entries = vec![];
    while entries.len() < 1000 {
        let name = format!("{} {}", vocab.choose(&mut rng).unwrap(), vocab.choose(&mut rng).unwrap());
        if !names.insert(name.clone()) {
            continue;
        }
        let desc: Vec<&String> = vocab.choose_multiple(&mut rng, 6).collect();
        let desc = desc.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ");
        let i = entries.len();
        let mut e = KnowledgeEntry::new(&format!("r{i:04}"), *labels.choose(&mut rng).unwrap(), &name, &desc);
        if i > 0 && rng.random_bool(0.3) {
            let anc: &KnowledgeEntry = &entries[rng.random_range(0..i)];
            e = e.with_ancestor(anc.label, &anc.name.clone());
        }
        entries.push(e);
    }
    let store = KnowledgeStore::new(Arc::new(Gateway::stub(StubScript::new())));
    store.ingest(entries.clone()).map_err(e2s)?;

    let mut coarse_hits = 0;
    for e in &entries {
        let top = store.coarse_retrieve(&e.name, 50).map_err(e2s)?;
        if top.iter().take(50).any(|h| h.entry.id == e.id) {
            coarse_hits += 1;
        }
    }
    let coarse_recall = coarse_hits as f64 / entries.len() as f64;

    let (k, n) = (20, 5);
    let mut fine_hits = 0;
    let golds: Vec<&KnowledgeEntry> = entries.choose_multiple(&mut rng, 100).collect();
    for gold in &golds {
        // three words of the gold description, in shuffled order
        let mut words: Vec<&str> = gold.description.split(' ').collect();
        words.shuffle(&mut rng);
        let query = format!("entry about {} {} {}", words[0], words[1], words[2]);
        let fine = store.retrieve(&query, k, n, FineOptions::default()).map_err(e2s)?;
        if fine.hits.iter().any(|h| h.entry.id == gold.id) {
            fine_hits += 1;
        }
        let coarse = store.coarse_retrieve(&query, k).map_err(e2s)?;
        let mut allowed: HashSet<String> = coarse.iter().map(|h| h.entry.id.clone()).collect();
        for h in &coarse {
            allowed.extend(store.ancestor_closure(&h.entry).into_iter().map(|e| e.id));
        }
        for h in &fine.hits {
            ensure!(
                allowed.contains(&h.entry.id),
                "fine hit {} is outside coarse and closure for {query:?}",
                h.entry.id
            );
        }
    }
    let fine_recall = fine_hits as f64 / golds.len() as f64;
    ensure!(coarse_recall == 1.0, "coarse Recall@50 {:.2}%", coarse_recall * 100.0);
    ensure!(fine_recall >= 0.9, "fine Recall@5 {:.2}%", fine_recall * 100.0);
    Ok(format!(
        "coarse Recall@50 {:.1}%, fine Recall@5 {:.1}%, subset holds",
        coarse_recall * 100.0,
        fine_recall * 100.0
    ))
}

fn round_ex(report: &MetricReport, item_id: &str) -> Vec<bool> {
    report
        .per_item
        .iter()
        .find(|i| i.item_id == item_id)
        .map(|i| i.rounds.iter().map(|r| r.ex).collect())
        .unwrap_or_default()
}

fn eval_opts(metrics: Vec<Metric>, timing: Timing) -> EvalOptions {
    EvalOptions { db_dir: fixtures().join("db"), metrics, timing }
}

fn mrd_ablation() -> Check {
    let items = load_dataset(&fixtures().join("eval/mrd_toy.json")).map_err(e2s)?;
    ensure!(items.len() == 10, "fixture has {} dialogues", items.len());
    let (ta, tb) = (TempDir::new().map_err(|e| e.to_string())?, TempDir::new().map_err(|e| e.to_string())?);
    let full = engine(&ta, &[]).map_err(e2s)?;
    let abl = engine(&tb, ABLATED).map_err(e2s)?;
    let opts = eval_opts(vec![Metric::Ex], Timing::default());
    let r_full = run_eval(&items, &full, &opts, full.gateway()).map_err(e2s)?;
    let r_abl = run_eval(&items, &abl, &opts, abl.gateway()).map_err(e2s)?;
    let count = |r: &MetricReport| r.per_item.iter().flat_map(|i| &i.rounds).filter(|r| r.ex).count();
    let (cf, ca) = (count(&r_full), count(&r_abl));
    ensure!(cf > ca, "full engine {cf} correct rounds, ablated {ca}");

    let elliptic = items
        .iter()
        .find(|i| i.rounds[0].question.starts_with("What were the total sales in New York in 2023"))
        .ok_or("elliptic follow-up dialogue missing from fixture")?;
    let (f, a) = (round_ex(&r_full, &elliptic.item_id), round_ex(&r_abl, &elliptic.item_id));
    ensure!(f.len() == 3 && f.iter().all(|x| *x), "full engine rounds {f:?}");
    ensure!(a.len() == 3 && a[0] && !a[1] && !a[2], "ablated rounds {a:?}");
    let total: usize = items.iter().map(|i| i.rounds.len()).sum();
    Ok(format!(
        "correct rounds {cf}/{total} full vs {ca}/{total} ablated; elliptic follow-up rounds 2-3 need completion"
    ))
}

fn popular_corpus(rng: &mut ChaCha8Rng, vocab: &[String]) -> SchemaSource {
    let tables = (0..60)
        .map(|i| {
            let popular = i % 6 == 0;
            TableSpec {
                name: format!("tbl_{i:02}"),
                heat: Some(if popular { rng.random_range(80.0..100.0) } else { rng.random_range(0.0..40.0) }),
                columns: vocab.choose_multiple(rng, 5).map(|c| column(c.clone(), None)).collect(),
                tags: vec![],
            }
        })
        .collect();
    SchemaSource { tables }
}

fn table_selection() -> Check {
    let gw = Gateway::stub(StubScript::new());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // a small column vocabulary so that many tables share every keyword
    let vocab: Vec<String> = (0..14).map(|_| word(&mut rng, 2)).collect();
    let (mut hit_beta, mut hit_zero, mut queries) = (0, 0, 0);
    for _ in 0..5 {
        let schema = popular_corpus(&mut rng, &vocab);
        let index = TableIndex::build(&schema, &gw).map_err(e2s)?;
        for gold in schema.tables.iter().filter(|t| t.heat.unwrap() >= 80.0) {
            let keywords: Vec<String> = gold.columns.choose_multiple(&mut rng, 2).map(|c| c.name.clone()).collect();
            let kw = chatbi_core::tables::KeywordSet::new(keywords);
            for (beta, hits) in [(0.3, &mut hit_beta), (0.0, &mut hit_zero)] {
                let p = ScoringParams {
                    rerank_alpha: 0.5,
                    rerank_beta: beta,
                    coarse_cap: 100,
                    size_budget_k: 1_000_000,
                    candidate_n: 5,
                };
                let sel = index.select_with_keywords(kw.clone(), &p, &gw, &[]).map_err(e2s)?;
                if sel.table_names().contains(&gold.name) {
                    *hits += 1;
                }
            }
            queries += 1;
        }
    }
    let (rb, rz) = (hit_beta as f64 / queries as f64, hit_zero as f64 / queries as f64);
    ensure!(rb > rz, "Recall@5 with heat {rb:.3} does not exceed {rz:.3} without");

    // raising the gold heat never worsens its rank
    let params = ScoringParams {
        rerank_alpha: 0.5,
        rerank_beta: 0.2,
        coarse_cap: 100,
        size_budget_k: 1_000_000,
        candidate_n: 100,
    };
    for trial in 0..1000 {
        let n = rng.random_range(2..=15);
        let mut profiles: Vec<TableProfile> = (0..n)
            .map(|i| {
                let width = rng.random_range(1..=4);
                let columns: Vec<ColumnSpec> =
                    vocab.choose_multiple(&mut rng, width).map(|c| column(c.clone(), None)).collect();
                let text = format!("t{i} | {}", columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(" "));
                Ok(TableProfile {
                    table_name: format!("t{i:02}"),
                    columns,
                    embedding: embed(&gw, &text)?,
                    heat: rng.random_range(0.0..1.0),
                    tags: vec![],
                })
            })
            .collect::<Result<_>>()
            .map_err(e2s)?;
        let gold = rng.random_range(0..n);
        let keywords: Vec<String> = vocab.choose_multiple(&mut rng, 2).cloned().collect();
        let kv: Vec<EmbeddingVector> = keywords.iter().map(|k| embed(&gw, k)).collect::<Result<_>>().map_err(e2s)?;
        let mut rank_at = |h: f64| -> std::result::Result<usize, String> {
            profiles[gold].heat = h;
            let index = TableIndex::new(profiles.clone());
            let coarse = index.coarse_rank(&kv, &params, &[]).map_err(e2s)?;
            let scored = index.rerank(&keywords, &coarse, &params);
            scored.iter().position(|s| s.table_name == format!("t{gold:02}")).ok_or_else(|| "gold dropped".to_string())
        };
        let (cold, hot) = (rank_at(0.0)?, rank_at(1.0)?);
        ensure!(hot <= cold, "trial {trial}: rank {cold} at heat 0 became {hot} at heat 1");
    }
    Ok(format!(
        "Recall@5 {:.1}% with beta>0 vs {:.1}% with beta=0 over {queries} queries; 1000 monotonicity trials",
        rb * 100.0,
        rz * 100.0
    ))
}

struct GoldEngine(HashMap<String, String>);

impl AnswerEngine for GoldEngine {
    fn open_session(&self, _db_id: &str) -> Result<String> {
        Ok("gold".into())
    }
    fn answer(&self, _session_id: &str, question: &str) -> Result<Option<String>> {
        Ok(self.0.get(question).cloned())
    }
}

fn gold_engine(items: &[EvalItem]) -> GoldEngine {
    GoldEngine(items.iter().flat_map(|i| &i.rounds).map(|r| (r.question.clone(), r.gold_sql.clone())).collect())
}

fn eval_metrics() -> Check {
    let srd = load_dataset(&fixtures().join("eval/srd_toy.json")).map_err(e2s)?;
    let mrd = load_dataset(&fixtures().join("eval/mrd_toy.json")).map_err(e2s)?;
    ensure!(srd.len() == 10, "srd fixture has {} items", srd.len());
    let db = Database::open_id(&fixtures().join("db"), "bizdata").map_err(e2s)?;
    for item in &srd {
        let g = &item.rounds[0].gold_sql;
        ensure!(execution_accuracy(g, g, &db).map_err(e2s)?, "EX(g, g) false for {}", item.item_id);
    }

    let stub = Gateway::stub(StubScript::load(&fixtures().join("stub/engine.json")).map_err(e2s)?);
    let gold = gold_engine(&srd);
    let measured =
        run_eval(&srd, &gold, &eval_opts(vec![Metric::Ex, Metric::Ves], Timing::default()), &stub).map_err(e2s)?;
    ensure!((measured.ves - 1.0).abs() <= 0.15, "measured VES {}", measured.ves);
    let recorded: HashMap<String, f64> = srd.iter().map(|i| (i.rounds[0].gold_sql.clone(), 0.004)).collect();
    let exact = run_eval(&srd, &gold, &eval_opts(vec![Metric::Ex, Metric::Ves], Timing::Recorded(recorded)), &stub)
        .map_err(e2s)?;
    ensure!(exact.ves == 1.0, "recorded VES {}", exact.ves);

    // UEX >= EX on every run, per item and overall
    let mut runs = 0;
    let (ta, tb) = (TempDir::new().map_err(|e| e.to_string())?, TempDir::new().map_err(|e| e.to_string())?);
    let full = engine(&ta, &[]).map_err(e2s)?;
    let abl = engine(&tb, ABLATED).map_err(e2s)?;
    let with_uex = eval_opts(vec![Metric::Ex, Metric::Uex], Timing::default());
    for (e, items) in [(&full, &srd), (&full, &mrd), (&abl, &srd), (&abl, &mrd)] {
        let r = run_eval(items, e, &with_uex, e.gateway()).map_err(e2s)?;
        ensure!(r.uex.unwrap_or(-1.0) >= r.ex, "UEX {:?} below EX {}", r.uex, r.ex);
        for i in &r.per_item {
            ensure!(i.uex.unwrap_or(false) || !i.ex, "item {} has EX without UEX", i.item_id);
        }
        runs += 1;
    }

    let replay = |dir: &TempDir| -> std::result::Result<String, String> {
        let e = engine(dir, &[]).map_err(e2s)?;
        let r = run_eval(&mrd, &e, &eval_opts(vec![Metric::Ex], Timing::default()), e.gateway()).map_err(e2s)?;
        let trace: Vec<_> =
            r.per_item.iter().flat_map(|i| i.rounds.iter().map(|r| (r.pred_sql.clone(), r.ex))).collect();
        Ok(format!("{trace:?}"))
    };
    let (tc, td) = (TempDir::new().map_err(|e| e.to_string())?, TempDir::new().map_err(|e| e.to_string())?);
    ensure!(replay(&tc)? == replay(&td)?, "MRD replay differs between runs");
    Ok(format!(
        "EX(g,g)=1 on 10 items; VES measured {:.3}, recorded {}; UEX>=EX on {runs} runs; MRD replay stable",
        measured.ves, exact.ves
    ))
}

fn data_pipeline() -> Check {
    let schema = SchemaSource::load(&fixtures().join("schema.json")).map_err(e2s)?;
    let cities = ["New York", "Los Angeles", "Chicago", "Houston", "Seattle"];
    let sql_log: Vec<SqlLogEntry> = (0..95)
        .map(|i| SqlLogEntry {
            sql: format!("SELECT SUM(amount) FROM sales WHERE city = '{}' AND units > {i}", cities[i % cities.len()]),
            ts: None,
        })
        .collect();
    let gw = Gateway::stub(
        StubScript::new()
            .rule("reverse_engineer", None, "What is the total amount for: {{input}}")
            .rule("quality_judge", None, "0.9")
            .rule("augment", None, "[]"),
    );
    let inputs = PipelineInputs { sql_log, schema: schema.clone(), ..Default::default() };
    let cfg = PipelineConfig { negative_ratio: 0.05, seed: 17, ..Default::default() };
    let a = run_pipeline(&cfg, &inputs, &gw).map_err(e2s)?;
    let b = run_pipeline(&cfg, &inputs, &gw).map_err(e2s)?;
    let negatives = a.pairs.iter().filter(|p| p.source == PairSource::Negative).count();
    let positives = a.pairs.len() - negatives;
    ensure!(positives == 95, "{positives} positives");
    ensure!(negatives == 5, "{negatives} negatives");
    let (da, db) = (TempDir::new().map_err(|e| e.to_string())?, TempDir::new().map_err(|e| e.to_string())?);
    a.write(da.path()).map_err(e2s)?;
    b.write(db.path()).map_err(e2s)?;
    for f in ["dataset.jsonl", "report.json"] {
        let read = |d: &Path| std::fs::read(d.join(f)).map_err(|e| e.to_string());
        ensure!(read(da.path())? == read(db.path())?, "{f} differs between seeded reruns");
    }
    for p in a.pairs.iter().filter(|p| p.source != PairSource::Negative) {
        let check = validate_sql(&p.sql, &schema);
        ensure!(check.is_ok(), "pair {} fails validation: {:?}", p.id, check.violations);
    }
    Ok(format!(
        "95 positives + {negatives} negatives ({:.1}%), reruns byte-identical, positives validate",
        100.0 * negatives as f64 / a.pairs.len() as f64
    ))
}

fn attribution() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let table = |rows: Vec<(String, f64)>| ResultTable {
        columns: vec!["dim".into(), "metric".into()],
        rows: rows.into_iter().map(|(d, m)| vec![Cell::Text(d), Cell::Real(m)]).collect(),
    };
    let (mut worst_delta, mut worst_share, mut checked) = (0.0f64, 0.0f64, 0);
    while checked < 1000 {
        let values = rng.random_range(1..=12);
        let side = |rng: &mut ChaCha8Rng| {
            (0..rng.random_range(0..40))
                .map(|_| (format!("v{}", rng.random_range(0..values)), rng.random_range(-5000.0..5000.0)))
                .collect::<Vec<_>>()
        };
        let (b, a) = (side(&mut rng), side(&mut rng));
        let oracle_before: f64 = b.iter().map(|r| r.1).sum();
        let oracle_after: f64 = a.iter().map(|r| r.1).sum();
        if (oracle_after - oracle_before).abs() < 1e-3 {
            continue;
        }
        let r = attribute(&table(b), &table(a), "dim", "metric").map_err(e2s)?;
        let deltas: f64 = r.contributions.iter().map(|c| c.delta).sum();
        let shares: f64 = r.contributions.iter().map(|c| c.contribution_share).sum();
        worst_delta = worst_delta.max((deltas - r.total_delta()).abs());
        worst_share = worst_share.max((shares - 1.0).abs());
        ensure!(
            (r.total_delta() - (oracle_after - oracle_before)).abs() <= 1e-6,
            "total delta disagrees with a plain sum"
        );
        checked += 1;
    }
    ensure!(worst_delta <= 1e-9, "sum of deltas off by {worst_delta}");
    ensure!(worst_share <= 1e-9, "sum of shares off by {worst_share}");
    let same = table(vec![("x".into(), 3.0), ("y".into(), 4.0)]);
    let swapped = table(vec![("x".into(), 4.0), ("y".into(), 3.0)]);
    match attribute(&same, &swapped, "dim", "metric") {
        Err(Error::UndefinedShare { deltas }) => ensure!(deltas.len() == 2, "zero-delta error lists {deltas:?}"),
        other => return Err(format!("zero total delta gave {other:?}")),
    }
    Ok(format!(
        "1000 tables, delta error {worst_delta:.1e}, share error {worst_share:.1e}; zero delta raises UndefinedShare"
    ))
}

const CASE_Q: &str = "What is the income of the Company A in 2024?";
const CASE_SQL: &str =
    "SELECT SUM(shouldincome_after) AS total_income FROM revenue_by_quarter WHERE YEAR(ftime) = 2024 AND cname = 'Company A'";

fn case_study() -> Check {
    let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let e = engine(&tmp, &[]).map_err(e2s)?;
    let sid = e.create_session().map_err(e2s)?;
    let r = e.handle_message(&sid, CASE_Q, false).map_err(e2s)?;
    ensure!(r.kind == ReplyKind::Clarify, "first reply is {:?}", r.kind);
    let options = r.options.ok_or("clarify reply without options")?;
    let labels: Vec<&str> = options.iter().map(|o| o.label.as_str()).collect();
    ensure!(labels == ["shouldincome", "shouldincome_after"], "options {labels:?}");
    let pick = &options.iter().find(|o| o.label == "shouldincome_after").unwrap().option_id;
    let r = e.handle_message(&sid, pick, false).map_err(e2s)?;
    ensure!(r.kind == ReplyKind::Answer, "second reply is {:?}: {}", r.kind, r.message);
    let sql = r.sql.ok_or("answer without SQL")?;
    ensure!(squash(&sql) == squash(CASE_SQL), "emitted {sql}");
    let check = validate_sql(&sql, e.schema());
    ensure!(check.is_ok(), "SQL fails validation: {:?}", check.violations);
    let rows = e.query(&sql).map_err(e2s)?;
    ensure!(r.rows.as_ref() == Some(&rows.rows) && rows.rows.len() == 1, "rows {:?}", r.rows);
    Ok(format!("clarify offered {labels:?}; answer SQL matches and returns {:?}", rows.rows[0]))
}

fn main() {
    let criteria: &[Criterion] = &[
        ("rerank and token similarity oracles", rerank_oracle),
        ("strategy decision rule", strategy_rule),
        ("domain similarity properties", domain_similarity_props),
        ("ancestor closure", ancestor_closure),
        ("retrieval floors on 1000 entries", retrieval_floors),
        ("dialogue completion ablation", mrd_ablation),
        ("table selection heat ablation", table_selection),
        ("evaluation metrics", eval_metrics),
        ("data pipeline negatives and determinism", data_pipeline),
        ("attribution conservation", attribution),
        ("income case replay", case_study),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} ({secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} ({secs:.1}s)");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
