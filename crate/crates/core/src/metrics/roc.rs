use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ROC points from `(0,0)` to `(1,1)`, one per distinct threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn auc(&self) -> f64 {
        self.fpr
            .windows(2)
            .zip(self.tpr.windows(2))
            .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
            .sum()
    }
}

/// Sweeps thresholds from the highest observed score down; samples with
/// equal scores switch together. `None` when one side is empty.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Option<RocCurve> {
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut curve = RocCurve {
        fpr: vec![0.0],
        tpr: vec![0.0],
        thresholds: vec![f64::INFINITY],
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.fpr.push(fp as f64 / neg as f64);
        curve.tpr.push(tp as f64 / pos as f64);
        curve.thresholds.push(t);
    }
    Some(curve)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// `None` for classes with no positive (or no negative) sample.
    pub per_class: Vec<Option<f64>>,
    pub macro_auc: f64,
    pub micro_auc: f64,
    /// Indices of classes left out of the macro average.
    pub excluded: Vec<usize>,
    pub curves: Vec<Option<RocCurve>>,
    pub micro_curve: RocCurve,
}

/// One-vs-rest ROC per class, macro (mean of class AUCs) and micro
/// (pooled score/indicator pairs).
pub fn roc_auc(scores: &[Vec<f64>], labels: &[usize]) -> Result<AucReport> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::arg("need one score row per label and at least one sample"));
    }
    let k = scores[0].len();
    for (i, row) in scores.iter().enumerate() {
        if row.len() != k {
            return Err(Error::arg(format!("score row {i} has {} entries, expected {k}", row.len())));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-4 {
            return Err(Error::arg(format!("score row {i} sums to {s}, not 1")));
        }
        if labels[i] >= k {
            return Err(Error::arg(format!("label {} out of range for K = {k}", labels[i])));
        }
    }
    let mut curves = Vec::with_capacity(k);
    let mut per_class = Vec::with_capacity(k);
    let mut excluded = Vec::new();
    for c in 0..k {
        let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let p: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let curve = roc_curve(&s, &p);
        if curve.is_none() {
            log::warn!("class {c} has no positive or no negative sample; AUC undefined");
            excluded.push(c);
        }
        per_class.push(curve.as_ref().map(RocCurve::auc));
        curves.push(curve);
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_auc = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let pooled: Vec<f64> = scores.iter().flatten().copied().collect();
    let indicators: Vec<bool> = labels.iter().flat_map(|&l| (0..k).map(move |c| c == l)).collect();
    let micro_curve = roc_curve(&pooled, &indicators).ok_or_else(|| Error::arg("micro ROC needs K ≥ 2"))?;
    Ok(AucReport {
        per_class,
        macro_auc,
        micro_auc: micro_curve.auc(),
        excluded,
        curves,
        micro_curve,
    })
}

impl AucReport {
    /// `curve,fpr,tpr,threshold` rows: one block per class, then `micro`.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("curve,fpr,tpr,threshold\n");
        let mut emit = |name: &str, c: &RocCurve| {
            for i in 0..c.fpr.len() {
                out.push_str(&format!("{name},{},{},{}\n", c.fpr[i], c.tpr[i], c.thresholds[i]));
            }
        };
        for (i, c) in self.curves.iter().enumerate() {
            if let Some(c) = c {
                emit(&format!("class{i}"), c);
            }
        }
        emit("micro", &self.micro_curve);
        out
    }
}
