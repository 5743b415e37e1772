use std::fmt::Write as _;

use super::Scores;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Visit,
    Patient,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Visit => "visit",
            Level::Patient => "patient",
        }
    }
}

/// Precision@k per model over repeated runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub ks: Vec<usize>,
    /// `(model, scores of each repeat)`, in insertion order.
    pub models: Vec<(String, Vec<Scores>)>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

impl MetricReport {
    pub fn new(ks: &[usize]) -> Self {
        MetricReport {
            ks: ks.to_vec(),
            models: Vec::new(),
        }
    }

    pub fn add(&mut self, model: &str, scores: Scores) {
        match self.models.iter_mut().find(|(m, _)| m == model) {
            Some((_, v)) => v.push(scores),
            None => self.models.push((model.to_string(), vec![scores])),
        }
    }

    /// Mean and sample standard deviation across repeats.
    pub fn summary(&self, model: &str, level: Level, k: usize) -> Option<(f64, f64)> {
        let (_, runs) = self.models.iter().find(|(m, _)| m == model)?;
        let ki = self.ks.iter().position(|&x| x == k)?;
        let vals: Vec<f64> = runs
            .iter()
            .map(|s| match level {
                Level::Visit => s.visit[ki],
                Level::Patient => s.patient[ki],
            })
            .collect();
        Some(mean_std(&vals))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,level,k,mean,std,repeats\n");
        for (model, runs) in &self.models {
            for level in [Level::Visit, Level::Patient] {
                for &k in &self.ks {
                    let (m, s) = self.summary(model, level, k).expect("known model and k");
                    let _ = writeln!(
                        out,
                        "{model},{},{k},{m:.6},{s:.6},{}",
                        level.as_str(),
                        runs.len()
                    );
                }
            }
        }
        out
    }

    /// One row per model, visit-level columns then patient-level columns.
    pub fn to_table(&self) -> String {
        let mut header = vec!["model".to_string()];
        for level in [Level::Visit, Level::Patient] {
            for &k in &self.ks {
                header.push(format!("{}@{k}", level.as_str()));
            }
        }
        let mut rows = vec![header];
        for (model, _) in &self.models {
            let mut row = vec![model.clone()];
            for level in [Level::Visit, Level::Patient] {
                for &k in &self.ks {
                    let (m, s) = self.summary(model, level, k).expect("known model and k");
                    row.push(format!("{m:.4}±{s:.4}"));
                }
            }
            rows.push(row);
        }
        let ncol = rows[0].len();
        let widths: Vec<usize> = (0..ncol)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (ri, r) in rows.iter().enumerate() {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    let pad = widths[c] - cell.chars().count();
                    if c == 0 {
                        format!("{cell}{}", " ".repeat(pad))
                    } else {
                        format!("{}{cell}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if ri == 0 {
                let total: usize = widths.iter().sum::<usize>() + 2 * (ncol - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }
}
