use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights for accuracy, FPS, recall and specificity, in that order.
/// They sum to 1.05.
pub const PRACTICALITY_WEIGHTS: [f64; 4] = [0.15, 0.40, 0.35, 0.15];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub accuracy: f64,
    pub fps: f64,
    pub recall: f64,
    pub specificity: f64,
}

impl MetricRow {
    fn columns(&self) -> [f64; 4] {
        [self.accuracy, self.fps, self.recall, self.specificity]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PracticalityTable {
    pub rows: Vec<MetricRow>,
    pub weights: [f64; 4],
}

impl PracticalityTable {
    pub fn new(rows: Vec<MetricRow>) -> Self {
        PracticalityTable {
            rows,
            weights: PRACTICALITY_WEIGHTS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredRow {
    pub name: String,
    pub score: f64,
    /// 1 is best; ties share the better rank.
    pub rank: usize,
    /// Min-max normalised accuracy, FPS, recall, specificity.
    pub normalized: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PracticalityResult {
    /// Same order as the input rows.
    pub rows: Vec<ScoredRow>,
    pub warnings: Vec<String>,
}

const COLUMN_NAMES: [&str; 4] = ["accuracy", "fps", "recall", "specificity"];

/// Min-max normalises each column over the table and takes the weighted
/// sum. A constant column contributes 0 to every row.
pub fn practicality_score(table: &PracticalityTable) -> Result<PracticalityResult> {
    if table.rows.len() < 2 {
        return Err(Error::arg("practicality score needs at least two rows"));
    }
    let mut warnings = Vec::new();
    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    for r in &table.rows {
        for (j, v) in r.columns().into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::arg(format!("{} of {:?} is not finite", COLUMN_NAMES[j], r.name)));
            }
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    for j in 0..4 {
        if hi[j] == lo[j] {
            let w = format!("column {} is constant; its normalised value is 0 for every row", COLUMN_NAMES[j]);
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    let mut rows: Vec<ScoredRow> = table
        .rows
        .iter()
        .map(|r| {
            let mut normalized = [0.0; 4];
            for (j, v) in r.columns().into_iter().enumerate() {
                if hi[j] > lo[j] {
                    normalized[j] = (v - lo[j]) / (hi[j] - lo[j]);
                }
            }
            let score = normalized.iter().zip(&table.weights).map(|(n, w)| n * w).sum();
            ScoredRow {
                name: r.name.clone(),
                score,
                rank: 0,
                normalized,
            }
        })
        .collect();
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    for r in rows.iter_mut() {
        r.rank = 1 + scores.iter().filter(|&&s| s > r.score).count();
    }
    Ok(PracticalityResult { rows, warnings })
}

/// Parses CSV with header `name,accuracy,fps,recall,specificity`; extra
/// columns are ignored.
pub fn read_practicality_csv<R: std::io::Read>(reader: R) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    for want in ["name", "accuracy", "fps", "recall", "specificity"] {
        if !headers.iter().any(|h| h.trim() == want) {
            return Err(Error::Parse(format!("missing column {want:?}")));
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<MetricRow>() {
        rows.push(rec.map_err(|e| Error::Parse(e.to_string()))?);
    }
    Ok(rows)
}

pub fn read_practicality_file(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_practicality_csv(f)
}

/// Rows sorted by rank: `rank,name,accuracy,fps,recall,specificity,score`.
pub fn ranked_csv(table: &PracticalityTable, result: &PracticalityResult) -> String {
    let mut order: Vec<usize> = (0..table.rows.len()).collect();
    order.sort_by_key(|&i| (result.rows[i].rank, i));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "name", "accuracy", "fps", "recall", "specificity", "score"])
        .expect("in-memory write");
    for i in order {
        let r = &table.rows[i];
        let s = &result.rows[i];
        w.write_record([
            s.rank.to_string(),
            r.name.clone(),
            r.accuracy.to_string(),
            r.fps.to_string(),
            r.recall.to_string(),
            r.specificity.to_string(),
            format!("{:.4}", s.score),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(name: &str, a: f64, f: f64, r: f64, s: f64) -> MetricRow {
        MetricRow {
            name: name.into(),
            accuracy: a,
            fps: f,
            recall: r,
            specificity: s,
        }
    }

    #[test]
    fn extremes_and_single_row() {
        let t = PracticalityTable::new(vec![row("lo", 0.1, 1.0, 0.1, 0.1), row("hi", 0.9, 9.0, 0.9, 0.9)]);
        let r = practicality_score(&t).unwrap();
        assert_eq!(r.rows[0].score, 0.0);
        assert!((r.rows[1].score - 1.05).abs() < 1e-12);
        assert_eq!((r.rows[0].rank, r.rows[1].rank), (2, 1));
        assert!(practicality_score(&PracticalityTable::new(vec![row("x", 1.0, 1.0, 1.0, 1.0)])).is_err());
    }

    #[test]
    fn constant_column_warns() {
        let t = PracticalityTable::new(vec![row("a", 0.5, 10.0, 0.2, 0.3), row("b", 0.5, 20.0, 0.4, 0.1)]);
        let r = practicality_score(&t).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.rows[0].normalized[0], 0.0);
        assert_eq!(r.rows[1].normalized[0], 0.0);
    }

    #[test]
    fn csv_round_trip_and_ranking() {
        let src = "name,accuracy,fps,recall,specificity,extra\na,0.9,10,0.9,0.9,x\nb,1.0,100,1.0,1.0,y\n";
        let rows = read_practicality_csv(src.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        let t = PracticalityTable::new(rows);
        let out = ranked_csv(&t, &practicality_score(&t).unwrap());
        assert!(out.lines().nth(1).unwrap().starts_with("1,b,"));
        assert!(read_practicality_csv("name,accuracy\nx,1\n".as_bytes()).is_err());
    }
}
