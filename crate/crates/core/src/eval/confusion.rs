use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square count matrix; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Self {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_counts<S: Into<String>>(
        labels: impl IntoIterator<Item = S>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let n = labels.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Validation(format!(
                "confusion counts must be {n}×{n} for {n} labels"
            )));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// Diagonal over total; `None` when empty.
    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.correct(), self.total())
    }

    /// Diagonal over row sum (recall).
    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        ratio(self.counts[class][class], self.row_sum(class))
    }

    pub fn class_miss(&self, class: usize) -> Option<f64> {
        self.class_accuracy(class).map(|a| 1.0 - a)
    }

    /// Diagonal over column sum.
    pub fn precision(&self, class: usize) -> Option<f64> {
        ratio(self.counts[class][class], self.col_sum(class))
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Element-wise sum; labels must match.
    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        if self.labels != other.labels {
            return Err(Error::Validation(format!(
                "cannot merge matrices over {:?} and {:?}",
                self.labels, other.labels
            )));
        }
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(ConfusionMatrix {
            labels: self.labels.clone(),
            counts,
        })
    }

    /// The rows and columns at `classes`, in that order.
    pub fn submatrix(&self, classes: &[usize]) -> ConfusionMatrix {
        ConfusionMatrix {
            labels: classes.iter().map(|&c| self.labels[c].clone()).collect(),
            counts: classes
                .iter()
                .map(|&r| classes.iter().map(|&c| self.counts[r][c]).collect())
                .collect(),
        }
    }

    /// Reorders classes so that class `order[i]` becomes class `i`.
    pub fn reordered(&self, order: &[&str]) -> Result<ConfusionMatrix> {
        let idx = order
            .iter()
            .map(|l| {
                self.index_of(l)
                    .ok_or_else(|| Error::Validation(format!("no class '{l}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        if idx.len() != self.n_classes() {
            return Err(Error::Validation("reordering must list every class".into()));
        }
        Ok(self.submatrix(&idx))
    }

    /// Count table with per-class accuracy and miss columns, then a
    /// precision row.
    pub fn to_text(&self) -> String {
        let w = self
            .labels
            .iter()
            .map(String::len)
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(1)
            .max(6)
            + 2;
        let mut s = String::new();
        let _ = write!(s, "{:<w$}", "true\\pred");
        for l in &self.labels {
            let _ = write!(s, "{l:>w$}");
        }
        let _ = writeln!(s, "{:>10}{:>10}", "acc", "miss");
        for (i, l) in self.labels.iter().enumerate() {
            let _ = write!(s, "{l:<w$}");
            for c in &self.counts[i] {
                let _ = write!(s, "{c:>w$}");
            }
            let _ = writeln!(
                s,
                "{:>10}{:>10}",
                pct(self.class_accuracy(i)),
                pct(self.class_miss(i))
            );
        }
        let _ = write!(s, "{:<w$}", "precision");
        for i in 0..self.n_classes() {
            let _ = write!(s, "{:>w$}", pct(self.precision(i)));
        }
        s.push('\n');
        s
    }

    /// `true,<labels…>,accuracy,miss` header, one row per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push_str(",accuracy,miss\n");
        for (i, l) in self.labels.iter().enumerate() {
            s.push_str(l);
            for c in &self.counts[i] {
                let _ = write!(s, ",{c}");
            }
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
            let _ = writeln!(
                s,
                ",{},{}",
                opt(self.class_accuracy(i)),
                opt(self.class_miss(i))
            );
        }
        s
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// One-decimal percentage, `-` when undefined.
pub fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{:.1}%", 100.0 * v))
}
