//! Result files: CSV with a commented config header, or a JSON document.

use serde::Serialize;

use crate::config::{ExperimentConfig, OutputFormat};
use crate::runner::{ResultRow, COLUMNS};

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        String::new()
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Drops wall times unless the config asks to keep them, so reruns are
/// byte-identical by default.
pub fn finalize_rows(rows: &[ResultRow], timing: bool) -> Vec<ResultRow> {
    rows.iter()
        .cloned()
        .map(|mut r| {
            if !timing {
                r.wall_time_ms = None;
            }
            r
        })
        .collect()
}

pub fn render_csv(config: &ExperimentConfig, provenance: &str, rows: &[ResultRow]) -> String {
    let mut out = String::new();
    let cfg_json = serde_json::to_string(config).expect("config serializes");
    out.push_str(&format!("# config: {cfg_json}\n"));
    out.push_str(&format!("# data: {provenance}\n"));
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for r in rows {
        let fields = [
            r.experiment.clone(),
            r.sketch.clone(),
            r.debiased.to_string(),
            opt(r.m),
            opt(r.m_c),
            opt(r.m_r),
            num(r.bias),
            num(r.variance),
            num(r.bias_rel),
            num(r.variance_rel),
            opt_num(r.bias_stderr),
            opt_num(r.variance_stderr),
            r.accepted.to_string(),
            r.rejected.to_string(),
            opt_num(r.predicted),
            opt(r.wall_time_ms),
            r.seed.to_string(),
        ];
        let quoted: Vec<String> = fields
            .iter()
            .map(|f| if f.contains(',') || f.contains('"') { format!("\"{}\"", f.replace('"', "\"\"")) } else { f.clone() })
            .collect();
        out.push_str(&quoted.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct JsonDoc<'a> {
    config: &'a ExperimentConfig,
    data: &'a str,
    rows: &'a [ResultRow],
}

pub fn render_json(config: &ExperimentConfig, provenance: &str, rows: &[ResultRow]) -> String {
    let mut s = serde_json::to_string_pretty(&JsonDoc { config, data: provenance, rows })
        .expect("results serialize");
    s.push('\n');
    s
}

pub fn render(
    format: OutputFormat,
    config: &ExperimentConfig,
    provenance: &str,
    rows: &[ResultRow],
) -> String {
    match format {
        OutputFormat::Csv => render_csv(config, provenance, rows),
        OutputFormat::Json => render_json(config, provenance, rows),
    }
}

/// Fixed-width summary for the terminal.
pub fn summary_table(rows: &[ResultRow]) -> String {
    let mut out = format!(
        "{:<18} {:>5} {:>11} {:>12} {:>12} {:>12} {:>9} {:>9} {:>8}\n",
        "sketch", "deb", "m", "bias_rel", "var_rel", "predicted", "accepted", "rejected", "ms"
    );
    for r in rows {
        let p = r.predicted.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
        out.push_str(&format!(
            "{:<18} {:>5} {:>11} {:>12.4e} {:>12.4e} {:>12} {:>9} {:>9} {:>8}\n",
            r.sketch,
            r.debiased,
            r.size_label(),
            r.bias_rel,
            r.variance_rel,
            p,
            r.accepted,
            r.rejected,
            opt(r.wall_time_ms)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn row() -> ResultRow {
        ResultRow {
            experiment: "t".into(),
            sketch: "shrinkage(0.5)".into(),
            debiased: true,
            m: Some(8),
            m_c: None,
            m_r: None,
            bias: 0.25,
            variance: 1.5,
            bias_rel: f64::NAN,
            variance_rel: 3.0,
            bias_stderr: None,
            variance_stderr: Some(0.125),
            accepted: 10,
            rejected: 0,
            predicted: None,
            wall_time_ms: Some(5),
            seed: 7,
        }
    }

    #[test]
    fn csv_columns_in_order() {
        let cfg = parse_config(
            "experiment = \"ols\"\nm_grid = [8]\n[data]\nsource = \"synthetic\"\nkind = \"gaussian\"\nn = 8\np = 2\n",
        )
        .unwrap();
        let rows = finalize_rows(&[row()], false);
        let csv = render_csv(&cfg, "d", &rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# config: {"));
        assert_eq!(lines[2], COLUMNS.join(","));
        assert_eq!(lines[3], "t,shrinkage(0.5),true,8,,,2.5e-1,1.5e0,,3e0,,1.25e-1,10,0,,,7");
        let json = render_json(&cfg, "d", &rows);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let keys: Vec<&String> = v["rows"][0].as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), COLUMNS.len());
        assert!(v["rows"][0]["bias_rel"].is_null());
    }
}
