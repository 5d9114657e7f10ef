//! Table rendering for evaluation reports: machine-readable CSV and a
//! human-readable Markdown mirror of the same numbers.

use gsdtta::adapt::AblationTable;

/// One row per corruption, one column per variant, plus a mean row.
pub fn table_csv(table: &AblationTable) -> String {
    let mut out = String::from("corruption");
    for row in &table.rows {
        out.push(',');
        out.push_str(&row.variant);
    }
    out.push('\n');
    let kinds: Vec<&str> = table.rows[0]
        .per_corruption
        .iter()
        .map(|c| c.corruption.as_str())
        .collect();
    for (k, kind) in kinds.iter().enumerate() {
        out.push_str(kind);
        for row in &table.rows {
            out.push_str(&format!(",{:.6}", row.per_corruption[k].accuracy));
        }
        out.push('\n');
    }
    out.push_str("mean");
    for row in &table.rows {
        out.push_str(&format!(",{:.6}", row.mean_accuracy));
    }
    out.push('\n');
    out
}

pub fn table_markdown(table: &AblationTable) -> String {
    let mut out = String::from("| corruption |");
    for row in &table.rows {
        out.push_str(&format!(" {} |", row.variant));
    }
    out.push_str("\n|---|");
    for _ in &table.rows {
        out.push_str("---|");
    }
    out.push('\n');
    let kinds: Vec<&str> = table.rows[0]
        .per_corruption
        .iter()
        .map(|c| c.corruption.as_str())
        .collect();
    for (k, kind) in kinds.iter().enumerate() {
        out.push_str(&format!("| {kind} |"));
        for row in &table.rows {
            out.push_str(&format!(" {:.4} |", row.per_corruption[k].accuracy));
        }
        out.push('\n');
    }
    out.push_str("| **mean** |");
    for row in &table.rows {
        out.push_str(&format!(" **{:.4}** |", row.mean_accuracy));
    }
    out.push('\n');
    out
}
