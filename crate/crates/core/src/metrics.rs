//! Confusion-matrix metrics for imbalanced multiclass evaluation.

use std::fmt;

use crate::data::{majority_class, minority_class};
use crate::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    classes: usize,
    /// Training counts per class; decides which class is majority/minority.
    class_order: Vec<usize>,
}

/// Count `(true, predicted)` pairs. Without a class order, class 0 is
/// treated as the majority and class `C-1` as the minority.
pub fn confusion(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Contract(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut counts = vec![0u64; classes * classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for label in [t, p] {
            if label >= classes {
                return Err(Error::Domain { label, classes });
            }
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        classes,
        class_order: (0..classes).rev().map(|c| c + 1).collect(),
    })
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let classes = counts.len();
        if counts.iter().any(|r| r.len() != classes) {
            return Err(Error::Contract("confusion matrix must be square".into()));
        }
        Ok(Self {
            counts: counts.into_iter().flatten().collect(),
            classes,
            class_order: (0..classes).rev().map(|c| c + 1).collect(),
        })
    }

    /// Attach training counts (one per class).
    pub fn with_class_order(mut self, training_counts: &[usize]) -> Result<Self> {
        if training_counts.len() != self.classes {
            return Err(Error::Contract(format!(
                "{} training counts for {} classes",
                training_counts.len(),
                self.classes
            )));
        }
        self.class_order = training_counts.to_vec();
        Ok(self)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn class_order(&self) -> &[usize] {
        &self.class_order
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    pub fn majority(&self) -> usize {
        majority_class(&self.class_order)
    }

    pub fn minority(&self) -> usize {
        minority_class(&self.class_order)
    }

    /// Recall of class `c`; 0 when the class has no samples.
    pub fn recall(&self, c: usize) -> f64 {
        match self.row_sum(c) {
            0 => 0.0,
            n => self.get(c, c) as f64 / n as f64,
        }
    }

    /// Precision of class `c`; 0 when the class is never predicted.
    pub fn precision(&self, c: usize) -> f64 {
        match self.col_sum(c) {
            0 => 0.0,
            n => self.get(c, c) as f64 / n as f64,
        }
    }

    fn require_rows(&self, metric: &'static str) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::Contract("empty confusion matrix".into()));
        }
        match (0..self.classes).find(|&c| self.row_sum(c) == 0) {
            Some(class) => Err(Error::UndefinedMetric { metric, class }),
            None => Ok(()),
        }
    }
}

/// Average class-specific accuracy: mean per-class recall.
pub fn acsa(cm: &ConfusionMatrix) -> Result<f64> {
    cm.require_rows("acsa")?;
    Ok((0..cm.classes).map(|c| cm.recall(c)).sum::<f64>() / cm.classes as f64)
}

/// Recall of the class with the fewest training samples.
pub fn r_min(cm: &ConfusionMatrix) -> Result<f64> {
    let m = cm.minority();
    if cm.row_sum(m) == 0 {
        return Err(Error::UndefinedMetric { metric: "r_min", class: m });
    }
    Ok(cm.recall(m))
}

/// Precision of the class with the most training samples (0 if never predicted).
pub fn p_maj(cm: &ConfusionMatrix) -> f64 {
    cm.precision(cm.majority())
}

/// Mean of per-class F1; a class with `p + r = 0` contributes 0.
pub fn f_macro(cm: &ConfusionMatrix) -> f64 {
    if cm.classes == 0 {
        return 0.0;
    }
    let f1 = |c: usize| {
        let (p, r) = (cm.precision(c), cm.recall(c));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    };
    (0..cm.classes).map(f1).sum::<f64>() / cm.classes as f64
}

/// Geometric mean of per-class recalls.
pub fn g_macro(cm: &ConfusionMatrix) -> f64 {
    if cm.classes == 0 {
        return 0.0;
    }
    let recalls: Vec<f64> = (0..cm.classes).map(|c| cm.recall(c)).collect();
    if recalls.contains(&0.0) {
        return 0.0;
    }
    (recalls.iter().map(|r| r.ln()).sum::<f64>() / cm.classes as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub acsa: f64,
    pub f_macro: f64,
    pub g_macro: f64,
    pub p_maj: f64,
    pub r_min: f64,
}

impl MetricsReport {
    pub const CSV_COLUMNS: &'static str = "acsa,f_macro,g_macro,r_min,p_maj";

    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            acsa: acsa(cm)?,
            f_macro: f_macro(cm),
            g_macro: g_macro(cm),
            p_maj: p_maj(cm),
            r_min: r_min(cm)?,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.acsa, self.f_macro, self.g_macro, self.r_min, self.p_maj
        )
    }

    /// Element-wise mean, min and max over several reports.
    pub fn aggregate(reports: &[Self]) -> Option<[Self; 3]> {
        let first = *reports.first()?;
        let fold = |f: fn(f64, f64) -> f64| {
            reports.iter().skip(1).fold(first, |a, r| Self {
                acsa: f(a.acsa, r.acsa),
                f_macro: f(a.f_macro, r.f_macro),
                g_macro: f(a.g_macro, r.g_macro),
                p_maj: f(a.p_maj, r.p_maj),
                r_min: f(a.r_min, r.r_min),
            })
        };
        let sum = fold(|a, b| a + b);
        let n = reports.len() as f64;
        let mean = Self {
            acsa: sum.acsa / n,
            f_macro: sum.f_macro / n,
            g_macro: sum.g_macro / n,
            p_maj: sum.p_maj / n,
            r_min: sum.r_min / n,
        };
        Some([mean, fold(f64::min), fold(f64::max)])
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ACSA {:.4} | F_macro {:.4} | G_macro {:.4} | R_min {:.4} | P_maj {:.4}",
            self.acsa, self.f_macro, self.g_macro, self.r_min, self.p_maj
        )
    }
}

/// Fixed-width text table with Table II/III column names.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = format!(
        "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "run", "ACSA", "F_macro", "G_macro", "R_min", "P_maj"
    );
    for (label, r) in rows {
        out.push_str(&format!(
            "{:<24} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            label, r.acsa, r.f_macro, r.g_macro, r.r_min, r.p_maj
        ));
    }
    out
}
