//! Entry points shared by the fuzz targets and the seed-corpus tests.
//!
//! Each function takes raw bytes, must never panic, and asserts the
//! invariants its parser promises on success.

use std::path::Path;

use crate::engine::EngineConfig;
use crate::eval::parse_dataset;
use crate::gateway::{ChatRequest, Gateway, StubScript};
use crate::insight::parse_plan;
use crate::knowledge::{export_jsonl, parse_jsonl, validate_entries};
use crate::pipeline::{parse_demonstrations, parse_sql_log, parse_veto};
use crate::reply::{json_payload, parse_json, strip_fence};
use crate::sqlgen::{parse_single_query, validate_sql};
use crate::tables::{profile_tables, ColumnSpec, SchemaSource, TableSpec};

pub type EntryPoint = fn(&[u8]);

/// Every target with its entry point, keyed by corpus directory name.
pub const TARGETS: &[(&str, EntryPoint)] = &[
    ("sql_validate", sql_validate),
    ("knowledge_jsonl", knowledge_jsonl),
    ("stub_script", stub_script),
    ("eval_dataset", eval_dataset),
    ("transcript", transcript),
    ("insight_plan", insight_plan),
    ("engine_config", engine_config),
    ("pipeline_inputs", pipeline_inputs),
    ("schema", schema),
    ("model_reply", model_reply),
];

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

fn small_schema() -> SchemaSource {
    let col = |n: &str| ColumnSpec { name: n.into(), column_type: "TEXT".into(), comment: None };
    SchemaSource {
        tables: vec![
            TableSpec {
                name: "sales".into(),
                heat: None,
                columns: vec![col("city"), col("amount"), col("order_date")],
                tags: vec![],
            },
            TableSpec { name: "staff".into(), heat: None, columns: vec![col("dept"), col("salary")], tags: vec![] },
        ],
    }
}

pub fn sql_validate(data: &[u8]) {
    let Some(sql) = text(data) else { return };
    let check = validate_sql(sql, &small_schema());
    if check.is_ok() {
        assert!(parse_single_query(sql).is_ok(), "accepted SQL must parse as one query");
    }
}

pub fn knowledge_jsonl(data: &[u8]) {
    let Some(t) = text(data) else { return };
    let Ok(entries) = parse_jsonl(t) else { return };
    let _ = validate_entries(&entries);
    let once = export_jsonl(&entries);
    let again = parse_jsonl(&once).expect("exported JSONL parses");
    assert_eq!(export_jsonl(&again), once, "export is a fixed point");
}

pub fn stub_script(data: &[u8]) {
    let Some(t) = text(data) else { return };
    let Ok(script) = StubScript::parse(t) else { return };
    let gw = Gateway::stub(script);
    for tag in ["intent_classify", "sql_generate", "sir_build"] {
        let _ = gw.chat_text(&ChatRequest::new(tag).user(t));
    }
}

pub fn eval_dataset(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(items) = parse_dataset(t) {
        assert!(items.iter().all(|i| i.validate().is_ok()));
    }
}

pub fn transcript(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(turns) = crate::dialogue::parse_transcript(t) {
        let lines: Vec<String> = turns.iter().map(|x| serde_json::to_string(x).expect("turn serializes")).collect();
        let back = crate::dialogue::parse_transcript(&lines.join("\n")).expect("serialized transcript parses");
        assert_eq!(back.len(), turns.len());
    }
}

pub fn insight_plan(data: &[u8]) {
    let Some(t) = text(data) else { return };
    let _ = parse_plan(t);
}

pub fn engine_config(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(cfg) = EngineConfig::parse_with_env(t, Path::new("/nonexistent"), Vec::new()) {
        let _ = cfg.problems();
    }
}

pub fn pipeline_inputs(data: &[u8]) {
    let Some(t) = text(data) else { return };
    if let Ok(log) = parse_sql_log(t) {
        assert!(log.iter().all(|e| !e.sql.trim().is_empty()));
    }
    let veto = parse_veto(t);
    assert!(veto.iter().all(|v| !v.is_empty() && !v.starts_with('#')));
    let _ = parse_demonstrations(t);
}

pub fn schema(data: &[u8]) {
    let Some(t) = text(data) else { return };
    let Ok(s) = SchemaSource::parse(t) else { return };
    let _ = s.render();
    if let Ok(profiles) = profile_tables(&s, &Gateway::stub(StubScript::new())) {
        assert_eq!(profiles.len(), s.tables.len());
        assert!(profiles.iter().all(|p| (0.0..=1.0).contains(&p.heat)));
    }
}

pub fn model_reply(data: &[u8]) {
    let Some(t) = text(data) else { return };
    let stripped = strip_fence(t);
    assert!(t.contains(stripped));
    if let Some(p) = json_payload(t) {
        assert!(stripped.contains(p));
    }
    let _ = parse_json::<serde_json::Value>(t);
}
