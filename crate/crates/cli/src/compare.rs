//! Side-by-side table of two evaluation reports.

use pairfeat::eval::EvaluationReport;

pub struct Comparison {
    pub labels: [String; 2],
    /// `[metric][report]`, metrics are classifier then clustering.
    pub values: [[f64; 2]; 2],
}

impl Comparison {
    pub fn new(a: &EvaluationReport, b: &EvaluationReport, labels: [String; 2]) -> anyhow::Result<Self> {
        if a.categories != b.categories {
            anyhow::bail!(
                "reports cover different categories: {:?} vs {:?}",
                a.categories,
                b.categories
            );
        }
        Ok(Self {
            labels,
            values: [
                [a.classifier_accuracy, b.classifier_accuracy],
                [a.clustering_accuracy, b.clustering_accuracy],
            ],
        })
    }

    pub fn deltas(&self) -> [f64; 2] {
        [self.values[0][1] - self.values[0][0], self.values[1][1] - self.values[1][0]]
    }

    pub fn to_text(&self) -> String {
        let w = self.labels.iter().map(String::len).max().unwrap_or(0).max(6);
        let mut s = format!("{:<w$}  {:>10}  {:>10}\n", "", "classifier", "clustering");
        for (i, label) in self.labels.iter().enumerate() {
            s += &format!(
                "{label:<w$}  {:>9.2}%  {:>9.2}%\n",
                100.0 * self.values[0][i],
                100.0 * self.values[1][i]
            );
        }
        let d = self.deltas();
        s += &format!("{:<w$}  {:>+9.2}%  {:>+9.2}%\n", "delta", 100.0 * d[0], 100.0 * d[1]);
        s
    }

    pub fn to_csv(&self) -> String {
        let d = self.deltas();
        format!(
            "metric,{a},{b},delta\nclassifier,{},{},{}\nclustering,{},{},{}\n",
            self.values[0][0],
            self.values[0][1],
            d[0],
            self.values[1][0],
            self.values[1][1],
            d[1],
            a = self.labels[0],
            b = self.labels[1],
        )
    }
}
