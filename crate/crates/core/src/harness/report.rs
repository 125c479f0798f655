//! CSV and Markdown tables from moment logs and retention records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, MomentLog};
use crate::perturb::PerturbationKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionRecord {
    pub method: String,
    pub order_id: String,
    pub seed: u64,
    pub domain: PerturbationKind,
    pub moment_then: usize,
    pub moment_now: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Report {
    /// Mean averaged accuracy per moment (rows) and method (columns).
    pub moments_csv: String,
    pub moments_md: String,
    /// Final-moment mean and spread per method.
    pub methods_csv: String,
    pub methods_md: String,
    /// Mean retention of the domain learned at one moment, at later moments.
    pub retention_csv: String,
    pub retention_md: String,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn methods_in_order<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in names {
        if !out.iter().any(|m| m == n) {
            out.push(n.to_string());
        }
    }
    out
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn md_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| {} |", header.join(" | "));
    let _ = writeln!(s, "|{}", header.iter().map(|_| "---|").collect::<String>());
    for r in rows {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    s
}

fn csv_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

/// Builds all tables. Accuracies are reported in percent.
pub fn build(logs: &[MomentLog], retention: &[RetentionRecord]) -> Report {
    let methods = methods_in_order(logs.iter().map(|l| l.method.as_str()));
    let max_moment = logs.iter().map(|l| l.moment).max().unwrap_or(0);

    let mut header = vec!["moment".to_string()];
    header.extend(methods.iter().cloned());
    let mut rows = Vec::new();
    for t in 1..=max_moment {
        let mut row = vec![format!("T{t}")];
        for m in &methods {
            let v: Vec<f64> = logs.iter().filter(|l| &l.method == m && l.moment == t).map(|l| l.average).collect();
            row.push(if v.is_empty() { String::new() } else { pct(mean_std(&v).0) });
        }
        rows.push(row);
    }
    let moments_csv = csv_table(&header, &rows);
    let moments_md = md_table(&header, &rows);

    let finals: Vec<(String, f64, f64, usize)> = methods
        .iter()
        .map(|m| {
            let last = logs.iter().filter(|l| &l.method == m).map(|l| l.moment).max().unwrap_or(0);
            let v: Vec<f64> = logs.iter().filter(|l| &l.method == m && l.moment == last).map(|l| l.average).collect();
            let (mean, std) = mean_std(&v);
            (m.clone(), mean, std, v.len())
        })
        .collect();
    let full = finals.iter().find(|f| f.0 == "full").map(|f| f.1);
    let header: Vec<String> = ["method", "final_mean", "final_std", "runs", "delta_vs_full"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = finals
        .iter()
        .map(|(m, mean, std, n)| {
            vec![
                m.clone(),
                pct(*mean),
                pct(*std),
                n.to_string(),
                full.map(|f| format!("{:+.2}", 100.0 * (mean - f))).unwrap_or_default(),
            ]
        })
        .collect();
    let methods_csv = csv_table(&header, &rows);
    let methods_md = md_table(&header, &rows);

    let mut grouped: BTreeMap<(String, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in retention {
        grouped
            .entry((r.method.clone(), r.moment_then, r.moment_now))
            .or_default()
            .push(r.rate);
    }
    let header: Vec<String> = ["method", "moment_then", "moment_now", "mean_rate", "runs"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = grouped
        .iter()
        .map(|((m, a, b), v)| vec![m.clone(), a.to_string(), b.to_string(), format!("{:.4}", mean_std(v).0), v.len().to_string()])
        .collect();
    let retention_csv = csv_table(&header, &rows);
    let mut retention_md = String::new();
    for m in methods_in_order(retention.iter().map(|r| r.method.as_str())) {
        let last = retention.iter().filter(|r| r.method == m).map(|r| r.moment_now).max().unwrap_or(0);
        let mut header = vec![format!("{m}: learned at")];
        header.extend((1..=last).map(|t| format!("T{t}")));
        let rows: Vec<Vec<String>> = (1..=last)
            .map(|then| {
                let mut row = vec![format!("T{then}")];
                for now in 1..=last {
                    row.push(
                        grouped
                            .get(&(m.clone(), then, now))
                            .map(|v| format!("{:.2}", mean_std(v).0))
                            .unwrap_or_default(),
                    );
                }
                row
            })
            .collect();
        retention_md.push_str(&md_table(&header, &rows));
        retention_md.push('\n');
    }

    Report {
        moments_csv,
        moments_md,
        methods_csv,
        methods_md,
        retention_csv,
        retention_md,
    }
}

impl Report {
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        for (name, body) in [
            ("moments.csv", &self.moments_csv),
            ("moments.md", &self.moments_md),
            ("methods.csv", &self.methods_csv),
            ("methods.md", &self.methods_md),
            ("retention.csv", &self.retention_csv),
            ("retention.md", &self.retention_md),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| HarnessError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Components;

    fn log(method: &str, order: &str, moment: usize, average: f64) -> MomentLog {
        MomentLog {
            method: method.into(),
            order_id: order.into(),
            seed: 0,
            moment,
            trained_on: PerturbationKind::Insert,
            accuracies: vec![(PerturbationKind::Insert, average)],
            average,
            components: Components::FULL,
            epochs: 1,
            best_epoch: 1,
            wall_clock_secs: 0.0,
        }
    }

    #[test]
    fn tables_average_over_orders() {
        let logs = vec![
            log("full", "a", 1, 0.8),
            log("full", "a", 2, 0.7),
            log("full", "b", 1, 0.6),
            log("full", "b", 2, 0.9),
            log("stream", "a", 1, 0.5),
            log("stream", "a", 2, 0.4),
        ];
        let r = build(&logs, &[]);
        assert_eq!(r.moments_csv, "moment,full,stream\nT1,70.00,50.00\nT2,80.00,40.00\n");
        assert!(r.methods_csv.contains("stream,40.00,0.00,1,-40.00"));
        assert!(r.moments_md.starts_with("| moment | full | stream |\n|---|---|---|\n"));
    }

    #[test]
    fn retention_matrix() {
        let rec = |now, rate| RetentionRecord {
            method: "full".into(),
            order_id: "a".into(),
            seed: 0,
            domain: PerturbationKind::Swap,
            moment_then: 1,
            moment_now: now,
            rate,
        };
        let r = build(&[], &[rec(1, 1.0), rec(2, 0.5)]);
        assert!(r.retention_csv.contains("full,1,2,0.5000,1"));
        assert!(r.retention_md.contains("| T1 | 1.00 | 0.50 |"));
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        build(&[log("full", "a", 1, 0.5)], &[]).write(dir.path()).unwrap();
        assert!(dir.path().join("moments.md").exists());
        assert!(dir.path().join("retention.csv").exists());
    }
}
