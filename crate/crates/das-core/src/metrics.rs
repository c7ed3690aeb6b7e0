//! Confusion-matrix accumulation and the three summary criteria: overall
//! accuracy, average (per-class) accuracy, and the chance-corrected kappa
//! coefficient.

use crate::error::{DasError, Result};

/// counts[i * classes + j] = samples of true class i predicted as class j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub per_class: Vec<f64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(DasError::Argument("confusion matrix needs a class".into()));
        }
        Ok(Self {
            classes,
            counts: vec![0; classes * classes],
        })
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if classes == 0 || counts.len() != classes * classes {
            return Err(DasError::Argument(format!(
                "{} counts for {classes} classes",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(DasError::Argument(format!(
                "label pair ({truth}, {pred}) out of range for {} classes",
                self.classes
            )));
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    /// Elementwise addition, for merging per-thread matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(DasError::Argument(format!(
                "merging {} classes into {}",
                other.classes, self.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn compute(&self) -> Result<Metrics> {
        let c = self.classes;
        let n: u64 = self.total();
        if n == 0 {
            return Err(DasError::Argument("empty confusion matrix".into()));
        }
        let row_sum: Vec<u64> = (0..c)
            .map(|i| self.counts[i * c..(i + 1) * c].iter().sum())
            .collect();
        let col_sum: Vec<u64> = (0..c)
            .map(|j| (0..c).map(|i| self.counts[i * c + j]).sum())
            .collect();
        for (i, &r) in row_sum.iter().enumerate() {
            if r == 0 {
                return Err(DasError::UndefinedMetric(format!(
                    "class {i} has no samples, average accuracy undefined"
                )));
            }
        }
        let nf = n as f64;
        let diag: u64 = (0..c).map(|i| self.counts[i * c + i]).sum();
        let oa = diag as f64 / nf;
        let per_class: Vec<f64> = (0..c)
            .map(|i| self.counts[i * c + i] as f64 / row_sum[i] as f64)
            .collect();
        let aa = per_class.iter().sum::<f64>() / c as f64;
        let chance: f64 = row_sum
            .iter()
            .zip(&col_sum)
            .map(|(&r, &s)| r as f64 * s as f64)
            .sum::<f64>()
            / (nf * nf);
        let kappa = if chance == 1.0 {
            if oa == 1.0 {
                1.0
            } else {
                return Err(DasError::UndefinedMetric(
                    "chance agreement is 1 with imperfect accuracy".into(),
                ));
            }
        } else {
            (oa - chance) / (1.0 - chance)
        };
        Ok(Metrics {
            oa,
            aa,
            kappa,
            per_class,
        })
    }
}

impl Metrics {
    /// Line-oriented report: the three criteria, then one accuracy line per
    /// class (1-based, matching label-map numbering).
    pub fn report(&self) -> String {
        let mut out = format!(
            "OA={:.4} AA={:.4} Kappa={:.4}\n",
            self.oa, self.aa, self.kappa
        );
        for (i, a) in self.per_class.iter().enumerate() {
            out.push_str(&format!("class{}={:.4}\n", i + 1, a));
        }
        out
    }
}
