//! Merges evaluation runs into one table: a row per method, a column per
//! dataset/setting/metric, cells as `mean(std)` in percent.

use std::collections::BTreeMap;

use crate::eval::EvalRun;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<String>>)>,
}

fn column_key(run: &EvalRun, metric: &str) -> String {
    [run.dataset.as_str(), run.setting.as_str(), metric]
        .iter()
        .filter(|s| !s.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

fn cell(run: &EvalRun, metric: &str) -> String {
    let m = run.mean[metric] * 100.0;
    if run.seeds.len() > 1 {
        format!("{m:.2}({:.2})", run.std[metric] * 100.0)
    } else {
        format!("{m:.2}")
    }
}

impl Table {
    /// Columns keep first-seen order; a later run with the same row and
    /// column replaces the earlier cell.
    pub fn from_runs(runs: &[EvalRun]) -> Self {
        let mut columns: Vec<String> = Vec::new();
        let mut row_order: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(String, String), String> = BTreeMap::new();
        for run in runs {
            let row = if run.name.is_empty() {
                "-".to_string()
            } else {
                run.name.clone()
            };
            if !row_order.contains(&row) {
                row_order.push(row.clone());
            }
            for metric in run.mean.keys() {
                let col = column_key(run, metric);
                if !columns.contains(&col) {
                    columns.push(col.clone());
                }
                cells.insert((row.clone(), col), cell(run, metric));
            }
        }
        let rows = row_order
            .into_iter()
            .map(|r| {
                let vals = columns
                    .iter()
                    .map(|c| cells.get(&(r.clone(), c.clone())).cloned())
                    .collect();
                (r, vals)
            })
            .collect();
        Table { columns, rows }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| method |");
        for c in &self.columns {
            out.push_str(&format!(" {c} |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.columns.len()));
        out.push('\n');
        for (name, vals) in &self.rows {
            out.push_str(&format!("| {name} |"));
            for v in vals {
                out.push_str(&format!(" {} |", v.as_deref().unwrap_or("-")));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::from("method");
        for c in &self.columns {
            out.push(',');
            out.push_str(&quote(c));
        }
        out.push('\n');
        for (name, vals) in &self.rows {
            out.push_str(&quote(name));
            for v in vals {
                out.push(',');
                out.push_str(&quote(v.as_deref().unwrap_or("")));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Protocol;

    fn run(protocol: Protocol, setting: &str, metrics: &[(&str, Vec<f64>)]) -> EvalRun {
        let n = metrics[0].1.len();
        let per_run = metrics.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let mut r = EvalRun::new(protocol, serde_json::json!({}), (0..n as u64).collect(), per_run).unwrap();
        r.name = "ctxd".into();
        r.dataset = "bbc".into();
        r.setting = setting.into();
        r
    }

    #[test]
    fn three_protocols_merge_into_one_table() {
        let runs = vec![
            run(Protocol::Full, "full", &[("accuracy", vec![0.99, 1.0])]),
            run(Protocol::Fewshot, "5-shot", &[("accuracy", vec![0.9, 0.8])]),
            run(Protocol::Sts, "sts", &[("pearson_avg", vec![0.722])]),
        ];
        let t = Table::from_runs(&runs);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(
            t.columns,
            vec!["bbc full accuracy", "bbc 5-shot accuracy", "bbc sts pearson_avg"]
        );
        assert_eq!(t.rows[0].1[0].as_deref(), Some("99.50(0.71)"));
        assert_eq!(t.rows[0].1[2].as_deref(), Some("72.20"));
        let md = t.to_markdown();
        assert_eq!(md.lines().count(), 3);
        assert!(md.contains("85.00(7.07)"));
        assert_eq!(t.to_csv().lines().count(), 2);
    }
}
