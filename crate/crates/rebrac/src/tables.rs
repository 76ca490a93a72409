//! CSV tables written and read by the experiment commands.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rebrac_core::evalstats;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row per critic update; actor columns are empty on critic-only steps
/// and `eval_return` only on evaluation steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub q_mean: f64,
    pub bc_mse: Option<f64>,
    pub eval_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub algorithm: String,
    pub dataset: String,
    pub run: String,
    pub score: f64,
}

/// One evaluated policy: a checkpoint path or a scripted policy name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub source: String,
    pub env: String,
    pub episodes: usize,
    pub raw_return: f64,
    pub normalized_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub mean_score: f64,
    pub std_score: f64,
    /// Signed percentage change against the base row; 0 for the base.
    pub delta_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    /// `actor`, `critic` or `both`.
    pub network: String,
    pub depth: usize,
    pub seed: u64,
    pub score: f64,
}

/// Expected online performance at budget `k`; `None` when `k` exceeds the
/// number of runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EopRow {
    pub dataset: String,
    pub algorithm: String,
    pub k: usize,
    pub value: Option<(f64, f64)>,
}

pub fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Score table keyed by `(algorithm, dataset, run)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    entries: BTreeMap<(String, String, String), f64>,
}

impl ScoreTable {
    pub fn insert(&mut self, algorithm: &str, dataset: &str, run: &str, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::Config(format!("non-finite score for {algorithm}/{dataset}/{run}")));
        }
        let key = (algorithm.to_owned(), dataset.to_owned(), run.to_owned());
        if self.entries.insert(key, score).is_some() {
            return Err(Error::Config(format!("duplicate score for {algorithm}/{dataset}/{run}")));
        }
        Ok(())
    }

    pub fn from_rows(rows: &[ScoreRow]) -> Result<Self> {
        let mut t = ScoreTable::default();
        for r in rows {
            t.insert(&r.algorithm, &r.dataset, &r.run, r.score)?;
        }
        Ok(t)
    }

    pub fn rows(&self) -> Vec<ScoreRow> {
        self.entries
            .iter()
            .map(|((a, d, r), &score)| ScoreRow {
                algorithm: a.clone(),
                dataset: d.clone(),
                run: r.clone(),
                score,
            })
            .collect()
    }

    /// Scores grouped by `(dataset, algorithm)`, runs in key order.
    pub fn groups(&self) -> BTreeMap<(String, String), Vec<f64>> {
        let mut g: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
        for ((a, d, _), &s) in &self.entries {
            g.entry((d.clone(), a.clone())).or_default().push(s);
        }
        g
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// EOP rows for every `(dataset, algorithm)` group and budget.
pub fn eop_rows(table: &ScoreTable, budgets: &[usize]) -> Result<Vec<EopRow>> {
    let mut rows = Vec::new();
    for ((dataset, algorithm), scores) in table.groups() {
        for (k, value) in evalstats::eop_curve(&scores, budgets)? {
            rows.push(EopRow {
                dataset: dataset.clone(),
                algorithm: algorithm.clone(),
                k,
                value,
            });
        }
    }
    Ok(rows)
}

pub fn write_eop(path: &Path, rows: &[EopRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "algorithm", "k", "mean", "std"])?;
    for r in rows {
        let (m, s) = match r.value {
            Some((m, s)) => (m.to_string(), s.to_string()),
            None => ("-".to_owned(), "-".to_owned()),
        };
        w.write_record([r.dataset.as_str(), r.algorithm.as_str(), &r.k.to_string(), &m, &s])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_eop(path: &Path) -> Result<Vec<EopRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Format(format!("EOP row has {} fields", rec.len())));
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?}")));
        let k = field(2)?.parse().map_err(|_| Error::Format("bad budget".into()))?;
        let value = match (field(3)?, field(4)?) {
            ("-", "-") => None,
            (m, s) => Some((num(m)?, num(s)?)),
        };
        rows.push(EopRow {
            dataset: field(0)?.to_owned(),
            algorithm: field(1)?.to_owned(),
            k,
            value,
        });
    }
    Ok(rows)
}

/// `mean ± std` with one decimal, or `-`.
pub fn format_cell(value: Option<(f64, f64)>) -> String {
    match value {
        Some((m, s)) => format!("{m:.1} ± {s:.1}"),
        None => "-".to_owned(),
    }
}

/// Plain-text EOP table, one line per group and one column per budget.
pub fn render_eop(rows: &[EopRow], out: &mut impl Write) -> std::io::Result<()> {
    let mut budgets: Vec<usize> = rows.iter().map(|r| r.k).collect();
    budgets.sort_unstable();
    budgets.dedup();
    let mut groups: BTreeMap<(&str, &str), BTreeMap<usize, Option<(f64, f64)>>> = BTreeMap::new();
    for r in rows {
        groups.entry((&r.dataset, &r.algorithm)).or_default().insert(r.k, r.value);
    }
    write!(out, "{:<24}", "dataset / algorithm")?;
    for k in &budgets {
        let label = if *k == 1 { "1 policy".to_owned() } else { format!("{k} policies") };
        write!(out, " {label:>14}")?;
    }
    writeln!(out)?;
    for ((d, a), cells) in groups {
        write!(out, "{:<24}", format!("{d} / {a}"))?;
        for k in &budgets {
            write!(out, " {:>14}", format_cell(cells.get(k).copied().flatten()))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_table_rejects_duplicates_and_nan() {
        let mut t = ScoreTable::default();
        t.insert("rebrac", "maze", "0", 1.0).unwrap();
        assert!(t.insert("rebrac", "maze", "0", 2.0).is_err());
        assert!(t.insert("rebrac", "maze", "1", f64::NAN).is_err());
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let scores = vec![
            ScoreRow {
                algorithm: "rebrac".into(),
                dataset: "reach-expert".into(),
                run: "b1=0.01,b2=0.1,seed=0".into(),
                score: 0.1 + 0.2,
            },
            ScoreRow {
                algorithm: "td3bc".into(),
                dataset: "reach-expert".into(),
                run: "0".into(),
                score: -3.25e-7,
            },
        ];
        let p = dir.path().join("scores.csv");
        write_rows(&p, &scores).unwrap();
        assert_eq!(read_rows::<ScoreRow>(&p).unwrap(), scores);

        let metrics = vec![
            MetricsRow {
                step: 1,
                critic_loss: 2.5,
                actor_loss: None,
                q_mean: -0.125,
                bc_mse: None,
                eval_return: None,
            },
            MetricsRow {
                step: 2,
                critic_loss: 1.0 / 3.0,
                actor_loss: Some(-1.0),
                q_mean: 0.0,
                bc_mse: Some(0.5),
                eval_return: Some(-12.75),
            },
        ];
        let p = dir.path().join("metrics.csv");
        write_rows(&p, &metrics).unwrap();
        assert_eq!(read_rows::<MetricsRow>(&p).unwrap(), metrics);

        let table = ScoreTable::from_rows(&[
            ScoreRow {
                algorithm: "a".into(),
                dataset: "d".into(),
                run: "0".into(),
                score: 0.0,
            },
            ScoreRow {
                algorithm: "a".into(),
                dataset: "d".into(),
                run: "1".into(),
                score: 3.0,
            },
        ])
        .unwrap();
        let rows = eop_rows(&table, &[1, 2, 3]).unwrap();
        assert_eq!(rows[2].value, None);
        let p = dir.path().join("eop.csv");
        write_eop(&p, &rows).unwrap();
        assert_eq!(read_eop(&p).unwrap(), rows);
        assert!(fs::read_to_string(&p).unwrap().contains("d,a,3,-,-"));
    }

    #[test]
    fn table_rendering_uses_dashes() {
        let rows = vec![
            EopRow {
                dataset: "maze".into(),
                algorithm: "rebrac".into(),
                k: 1,
                value: Some((62.04, 17.13)),
            },
            EopRow {
                dataset: "maze".into(),
                algorithm: "rebrac".into(),
                k: 20,
                value: None,
            },
        ];
        let mut out = Vec::new();
        render_eop(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("62.0 ± 17.1"), "{text}");
        assert!(text.contains("20 policies"));
        assert!(text.lines().nth(1).unwrap().trim_end().ends_with('-'));
    }
}
