use super::*;
use crate::gateway::StubScript;
use crate::tables::{ColumnSpec, TableSpec};

fn schema() -> SchemaSource {
    let t = |name: &str, cols: &[&str]| TableSpec {
        name: name.into(),
        heat: None,
        columns: cols
            .iter()
            .map(|c| ColumnSpec { name: c.to_string(), column_type: "TEXT".into(), comment: None })
            .collect(),
        tags: vec![],
    };
    SchemaSource { tables: vec![t("sales", &["region", "amount", "ftime"]), t("staff", &["name", "dept"])] }
}

fn positives(n: usize) -> Vec<QuerySqlPair> {
    (0..n)
        .map(|i| QuerySqlPair {
            id: format!("p-{i:03}"),
            question: format!("sales above {i}"),
            sql: format!("SELECT region, SUM(amount) FROM sales WHERE amount > {i} GROUP BY region"),
            source: PairSource::ReverseEngineered,
            quality: Some(1.0),
            error_category: None,
        })
        .collect()
}

fn oracle_round(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor() as usize
}

#[test]
fn negative_count_fixed_point() {
    assert_eq!(negative_count(95, 0.05), 5);
    assert_eq!(negative_count(10, 0.0), 0);
    assert_eq!(negative_count(0, 0.05), 0);
    for p in 19..9500 {
        let n = negative_count(p, 0.05);
        let total = (p + n) as f64;
        assert_eq!(n, oracle_round(0.05 * total), "p={p}");
        assert!((n as f64 - 0.05 * total).abs() <= 1.0);
    }
}

#[test]
fn ninety_five_positives_get_five_negatives() {
    let cfg = PipelineConfig { seed: 11, ..Default::default() };
    let mut report = PipelineReport::default();
    let out = inject_negatives(positives(95), &cfg, &schema(), &mut report).unwrap();
    assert_eq!(out.len(), 100);
    let negs: Vec<&QuerySqlPair> = out.iter().filter(|p| p.source == PairSource::Negative).collect();
    assert_eq!(negs.len(), 5);
    for n in &negs {
        let cat = n.error_category.as_deref().unwrap();
        assert!(ErrorCategory::parse(cat).is_some());
        let sibling = out.iter().find(|p| p.source != PairSource::Negative && p.question == n.question).unwrap();
        assert_ne!(sibling.sql, n.sql);
    }
    let again = inject_negatives(positives(95), &cfg, &schema(), &mut PipelineReport::default()).unwrap();
    assert_eq!(out, again);
}

#[test]
fn ratio_bounds() {
    let zero = PipelineConfig { negative_ratio: 0.0, ..Default::default() };
    let out = inject_negatives(positives(10), &zero, &schema(), &mut PipelineReport::default()).unwrap();
    assert_eq!(out, positives(10));
    let bad = PipelineConfig { negative_ratio: 0.6, ..Default::default() };
    assert!(matches!(
        inject_negatives(positives(10), &bad, &schema(), &mut PipelineReport::default()),
        Err(Error::Config(_))
    ));
    let unknown = PipelineConfig { error_categories: vec!["typo".into()], ..Default::default() };
    assert!(unknown.validate().is_err());
}

fn inputs(log: &[&str]) -> PipelineInputs {
    PipelineInputs {
        sql_log: log.iter().map(|s| SqlLogEntry { sql: s.to_string(), ts: None }).collect(),
        schema: schema(),
        ..Default::default()
    }
}

#[test]
fn reverse_engineering() {
    let g = Gateway::stub(StubScript::new().rule("reverse_engineer", None, "What is total sales by region?"));
    let mut r = PipelineReport::default();
    assert!(reverse_engineer(&inputs(&[]), &g, &mut r).is_empty());
    let out = reverse_engineer(
        &inputs(&["SELECT region, SUM(amount) FROM sales GROUP BY region", "SELECT bogus FROM sales"]),
        &g,
        &mut r,
    );
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].question, "What is total sales by region?");
    assert_eq!(out[0].source, PairSource::ReverseEngineered);
    assert_eq!(r.skipped.len(), 1);
    assert_eq!(r.skipped[0].item, "log:2");
}

#[test]
fn schema_generation() {
    let sir = serde_json::json!({"Key Components": {"metric": "amount"}, "Rewritten Query": "REWRITE"}).to_string();
    let g = Gateway::stub(
        StubScript::new()
            .rule("question_generate", None, r#"["total amount", "amount by region", "staff per dept", "broken one"]"#)
            .rule("sir_*", Some("broken"), &sir.replace("REWRITE", "broken amount"))
            .rule("sir_*", None, &sir.replace("REWRITE", "amount please"))
            .rule("sql_*", Some("broken"), "SELECT missing FROM sales")
            .rule("sql_*", None, "SELECT SUM(amount) FROM sales"),
    );
    let mut r = PipelineReport::default();
    let out = generate_from_schema(&inputs(&[]), &g, &mut r).unwrap();
    assert_eq!(out.len(), 3);
    assert!(out.iter().all(|p| p.source == PairSource::SchemaGenerated && validate_sql(&p.sql, &schema()).is_ok()));
    assert_eq!(r.skipped[0].item, "broken one");
    let empty = PipelineInputs::default();
    assert!(matches!(generate_from_schema(&empty, &g, &mut r), Err(Error::Validation(_))));
}

#[test]
fn quality_filtering() {
    let g = Gateway::stub(
        StubScript::new()
            .rule("quality_judge", Some("above 0\n"), "0.9")
            .rule("quality_judge", Some("above 1\n"), "0.1")
            .rule("quality_judge", Some("above 2\n"), "0.9")
            .rule("quality_judge", Some("above 3\n"), "0.1")
            .rule("quality_judge", None, "excellent"),
    );
    let pairs = positives(5);
    let mut r = PipelineReport::default();
    assert_eq!(quality_filter(pairs.clone(), &g, 0.0, &HashSet::new(), &mut r).len(), 5);
    let mut r = PipelineReport::default();
    let kept = quality_filter(pairs.clone(), &g, 0.5, &HashSet::new(), &mut r);
    let ids: Vec<&str> = kept.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, vec!["p-000", "p-002", "p-004"]);
    assert_eq!(r.flagged, vec!["p-004"]);
    assert_eq!(kept[2].quality, None);
    let veto: HashSet<String> = ["p-000".to_string()].into();
    let kept = quality_filter(pairs, &g, 0.0, &veto, &mut PipelineReport::default());
    assert!(kept.iter().all(|p| p.id != "p-000"));
}

#[test]
fn augmentation() {
    let g = Gateway::stub(StubScript::new().rule(
        "augment",
        None,
        r#"[{"question":"avg amount","sql":"SELECT AVG(amount) FROM sales"},
            {"question":"bad","sql":"SELECT x FROM nowhere"},
            {"question":"max amount","sql":"SELECT MAX(amount) FROM sales"}]"#,
    ));
    let seeds = positives(2);
    let mut r = PipelineReport::default();
    assert!(augment(&seeds, 0, &schema(), &g, &mut r).is_empty());
    let out = augment(&seeds, 2, &schema(), &g, &mut r);
    assert!(out.len() <= 4);
    assert_eq!(out.len(), 2);
    assert!(out.iter().all(|p| p.source == PairSource::Augmented && validate_sql(&p.sql, &schema()).is_ok()));
    assert_eq!(r.skipped.len(), 2);
}

fn end_to_end_gateway() -> Gateway {
    Gateway::stub(
        StubScript::new().rule("reverse_engineer", None, "what is it").rule("quality_judge", None, "0.8").rule(
            "augment",
            None,
            r#"[{"question":"min amount","sql":"SELECT MIN(amount) FROM sales WHERE region = 'east'"}]"#,
        ),
    )
}

#[test]
fn pipeline_end_to_end() {
    let log: Vec<String> = (0..20).map(|i| format!("SELECT SUM(amount) FROM sales WHERE amount > {i}")).collect();
    let log: Vec<&str> = log.iter().map(String::as_str).collect();
    let cfg = PipelineConfig { seed: 5, augment_factor: 1, ..Default::default() };
    let g = end_to_end_gateway();
    let a = run_pipeline(&cfg, &inputs(&log), &g).unwrap();
    let c = &a.report.stage_counts;
    assert_eq!(c["reverse_engineered"], 20);
    assert_eq!(c["quality_kept"], 20);
    assert_eq!(c["augmented"], 20);
    assert_eq!(c["total"], c["quality_kept"] + c["augmented_kept"] + c["negatives"]);
    assert_eq!(c["negatives"], 2);
    for p in a.pairs.iter().filter(|p| p.source != PairSource::Negative) {
        assert!(validate_sql(&p.sql, &schema()).is_ok());
    }
    let b = run_pipeline(&cfg, &inputs(&log), &g).unwrap();
    assert_eq!(a.dataset_jsonl(), b.dataset_jsonl());

    let dir = tempfile::tempdir().unwrap();
    a.write(dir.path()).unwrap();
    assert!(dir.path().join("report.json").is_file());
}

#[test]
fn pipeline_edge_cases() {
    let g = end_to_end_gateway();
    let empty = run_pipeline(&PipelineConfig::default(), &inputs(&[]), &g).unwrap();
    assert!(empty.pairs.is_empty());
    assert!(empty.report.stage_counts.values().all(|&v| v == 0));
    let bad = PipelineConfig { quality_floor: 1.01, ..Default::default() };
    assert!(matches!(run_pipeline(&bad, &inputs(&[]), &g), Err(Error::Config(_))));
}

#[test]
fn input_file_formats() {
    let log = parse_sql_log("SELECT 1\n\n{\"sql\": \"SELECT 2\", \"ts\": \"2024-01-01\"}\n").unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log[1].ts.as_deref(), Some("2024-01-01"));
    assert!(parse_sql_log("{broken").is_err());
    assert_eq!(parse_veto("a\n# note\n\nb\n").len(), 2);
    assert_eq!(parse_demonstrations("{\"question\":\"q\",\"sql\":\"SELECT 1\"}\n").unwrap().len(), 1);
}
