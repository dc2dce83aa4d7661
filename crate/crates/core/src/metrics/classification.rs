use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[true][pred]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub classes: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::arg("confusion matrix must be square and non-empty"));
        }
        let classes = (0..k).map(|i| format!("class{i}")).collect();
        Ok(ConfusionMatrix { counts, classes })
    }

    pub fn with_classes(mut self, classes: Vec<String>) -> Result<Self> {
        if classes.len() != self.k() {
            return Err(Error::arg(format!("{} names for {} classes", classes.len(), self.k())));
        }
        self.classes = classes;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    /// One-vs-rest `(tp, fp, fn, tn)` for `class`.
    pub fn one_vs_rest(&self, class: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[class][class];
        let fp: u64 = (0..self.k()).map(|t| self.counts[t][class]).sum::<u64>() - tp;
        let fneg: u64 = self.counts[class].iter().sum::<u64>() - tp;
        let tn = self.total() - tp - fp - fneg;
        (tp, fp, fneg, tn)
    }
}

/// Counts `(label, prediction)` pairs.
pub fn confusion(predictions: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= k || t >= k {
            return Err(Error::arg(format!("class index out of range for K = {k}: label {t}, prediction {p}")));
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fneg: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    /// Metrics whose denominator was zero and were reported as 0.
    pub degenerate: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_specificity: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One-vs-rest precision, recall, specificity and F1 per class plus
/// overall accuracy. Zero denominators give 0 and a flag.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let k = cm.k();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let (tp, fp, fneg, tn) = cm.one_vs_rest(c);
        let mut flags = Vec::new();
        let precision = ratio(tp, tp + fp, "precision", &mut flags);
        let recall = ratio(tp, tp + fneg, "recall", &mut flags);
        let specificity = ratio(tn, tn + fp, "specificity", &mut flags);
        let f1 = if precision + recall == 0.0 {
            flags.push("f1".into());
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            class: cm.classes[c].clone(),
            tp,
            fp,
            fneg,
            tn,
            precision,
            recall,
            specificity,
            f1,
            degenerate: flags,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let total = cm.total();
    MetricsReport {
        accuracy: if total == 0 { 0.0 } else { cm.trace() as f64 / total as f64 },
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_specificity: mean(|m| m.specificity),
        macro_f1: mean(|m| m.f1),
        per_class,
        confusion: cm.clone(),
    }
}

impl MetricsReport {
    /// `class,precision,recall,specificity,f1,tp,fp,fn,tn` rows plus a
    /// `macro` row and an `accuracy` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "precision", "recall", "specificity", "f1", "tp", "fp", "fn", "tn"])
            .expect("in-memory write");
        for m in &self.per_class {
            w.write_record([
                m.class.clone(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.specificity.to_string(),
                m.f1.to_string(),
                m.tp.to_string(),
                m.fp.to_string(),
                m.fneg.to_string(),
                m.tn.to_string(),
            ])
            .expect("in-memory write");
        }
        w.write_record([
            "macro".to_string(),
            self.macro_precision.to_string(),
            self.macro_recall.to_string(),
            self.macro_specificity.to_string(),
            self.macro_f1.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])
        .expect("in-memory write");
        w.write_record(["accuracy".to_string(), self.accuracy.to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new()])
            .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Confusion matrix as CSV with a `true\pred` header row.
    pub fn confusion_csv(&self) -> String {
        let cm = &self.confusion;
        let mut out = String::from("true\\pred");
        for c in &cm.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (name, row) in cm.classes.iter().zip(&cm.counts) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
