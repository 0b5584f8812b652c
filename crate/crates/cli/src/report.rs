//! Comparison tables and the coverage/similarity scatter file.

use axcode::axial_clustering::SweepReport;
use axcode::evaluation::{Level, LevelScores, MetricReport};

pub const INTRINSIC_COLUMNS: [&str; 8] = ["Method (params)", "Type", "Cov", "#Cats", "Brev", "Coh", "Nov", "Div"];
pub const LEVEL_COLUMNS: [&str; 5] = ["R1", "R2", "RL", "Cos", "BERT"];
pub const SCATTER_COLUMNS: [&str; 5] = ["method", "type", "level", "coverage", "cosine"];

fn kind(r: &MetricReport) -> &'static str {
    match r.kind() {
        "cluster" => "Clustering",
        "llm" => "LLM",
        _ => "Other",
    }
}

fn num(x: f64) -> String {
    format!("{x:.4}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn to_csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

fn intrinsic_rows(reports: &[MetricReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            let i = &r.intrinsic;
            vec![
                r.system.clone(),
                kind(r).into(),
                num(i.coverage),
                i.n_categories.to_string(),
                num(i.brevity),
                num(i.coherence),
                num(i.novelty),
                opt(i.divergence),
            ]
        })
        .collect()
}

fn level_cells(s: Option<&LevelScores>) -> Vec<String> {
    match s {
        Some(s) => vec![num(s.rouge1), num(s.rouge2), num(s.rouge_l), num(s.cosine), opt(s.bertscore_f1)],
        None => vec![String::new(); LEVEL_COLUMNS.len()],
    }
}

fn extrinsic_header() -> Vec<String> {
    let mut h = vec!["Method (params)".to_string(), "Type".to_string()];
    for level in ["Domain", "Subtopic"] {
        h.extend(LEVEL_COLUMNS.iter().map(|c| format!("{level} {c}")));
    }
    h
}

fn extrinsic_rows(reports: &[MetricReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            let mut row = vec![r.system.clone(), kind(r).into()];
            row.extend(level_cells(r.extrinsic.domain.as_ref()));
            row.extend(level_cells(r.extrinsic.subtopic.as_ref()));
            row
        })
        .collect()
}

pub fn intrinsic_csv(reports: &[MetricReport]) -> String {
    let header: Vec<String> = INTRINSIC_COLUMNS.iter().map(|s| s.to_string()).collect();
    to_csv(&header, &intrinsic_rows(reports))
}

pub fn extrinsic_csv(reports: &[MetricReport]) -> String {
    to_csv(&extrinsic_header(), &extrinsic_rows(reports))
}

/// One (coverage, cosine) point per system that has scores at `level`.
pub fn scatter_csv(reports: &[MetricReport], level: Level) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .filter_map(|r| {
            let s = r.extrinsic.get(level)?;
            Some(vec![r.system.clone(), kind(r).into(), level.name().into(), num(r.intrinsic.coverage), num(s.cosine)])
        })
        .collect();
    let header: Vec<String> = SCATTER_COLUMNS.iter().map(|s| s.to_string()).collect();
    to_csv(&header, &rows)
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let header: Vec<String> = ["embedding", "reduction", "algo", "params", "silhouette", "dbi", "chi", "clusters", "noise_rate"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = report
        .table()
        .into_iter()
        .map(|r| {
            vec![
                r.embedding,
                r.reduction,
                r.algo,
                r.params,
                opt(r.silhouette),
                opt(r.dbi),
                opt(r.chi),
                r.clusters.to_string(),
                num(r.noise_rate),
            ]
        })
        .collect();
    to_csv(&header, &rows)
}

fn md_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cell = |s: &str| if s.is_empty() { "-".to_string() } else { s.replace('|', "\\|") };
    let mut out = format!("| {} |\n|{}|\n", header.join(" | "), vec!["---"; header.len()].join("|"));
    for r in rows {
        out.push_str(&format!("| {} |\n", r.iter().map(|c| cell(c)).collect::<Vec<_>>().join(" | ")));
    }
    out
}

pub fn markdown(reports: &[MetricReport]) -> String {
    let header: Vec<String> = INTRINSIC_COLUMNS.iter().map(|s| s.to_string()).collect();
    format!(
        "# Category systems\n\n## Intrinsic\n\n{}\n## Alignment with gold labels\n\n{}",
        md_table(&header, &intrinsic_rows(reports)),
        md_table(&extrinsic_header(), &extrinsic_rows(reports))
    )
}
