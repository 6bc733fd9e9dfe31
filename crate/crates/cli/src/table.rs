//! Plain-text tables for metric reports.

use serde_json::Value;
use vigtext::pipeline::MetricsReport;
use vigtext::{Error, Result};

pub struct Row {
    pub name: String,
    pub metrics: MetricsReport,
    pub pass: Option<bool>,
}

pub fn render(rows: &[Row]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(8);
    let with_pass = rows.iter().any(|r| r.pass.is_some());
    let mut out = format!("{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}", "", "Accuracy", "Precision", "Recall", "F1");
    if with_pass {
        out.push_str("  Pass");
    }
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}",
            r.name, m.accuracy, m.precision, m.recall, m.f1
        ));
        match r.pass {
            Some(p) => out.push_str(if p { "  yes" } else { "  no" }),
            None if with_pass => out.push_str("  -"),
            None => {}
        }
        out.push('\n');
    }
    out
}

fn metrics_of(v: &Value) -> Result<MetricsReport> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Schema(format!("metrics: {e}")))
}

/// Rows from any report this tool writes: a bare metrics object, or an
/// array of `{spec|split, metrics, pass_tau_r|pass_tau_g}`.
pub fn rows_from_json(v: &Value) -> Result<Vec<Row>> {
    match v {
        Value::Array(items) => items
            .iter()
            .map(|item| {
                let name = item
                    .get("spec")
                    .or_else(|| item.get("split"))
                    .and_then(Value::as_str)
                    .ok_or_else(|| Error::Schema("report row needs a spec or split".into()))?;
                let metrics = metrics_of(item.get("metrics").ok_or_else(|| Error::Schema("report row needs metrics".into()))?)?;
                let pass = item.get("pass_tau_r").or_else(|| item.get("pass_tau_g")).and_then(Value::as_bool);
                Ok(Row { name: name.to_string(), metrics, pass })
            })
            .collect(),
        Value::Object(_) => Ok(vec![Row { name: "all".into(), metrics: metrics_of(v)?, pass: None }]),
        _ => Err(Error::Schema("report must be an object or an array".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_row_is_four_ones() {
        let rows = [Row { name: "test".into(), metrics: MetricsReport::from_counts(3, 0, 4, 0), pass: None }];
        let table = render(&rows);
        let line = table.lines().nth(1).unwrap();
        assert_eq!(line.matches("1.0000").count(), 4, "{table}");
    }

    #[test]
    fn reads_both_report_shapes() {
        let m = serde_json::to_value(MetricsReport::from_counts(1, 1, 1, 1)).unwrap();
        let arr = serde_json::json!([{"spec": "clean", "metrics": m, "pass_tau_r": false}]);
        let rows = rows_from_json(&arr).unwrap();
        assert_eq!((rows[0].name.as_str(), rows[0].pass), ("clean", Some(false)));
        assert_eq!(rows_from_json(&m).unwrap()[0].metrics.accuracy, 0.5);
        assert!(rows_from_json(&serde_json::json!(3)).is_err());
        assert!(render(&rows).contains("  no"));
    }
}
