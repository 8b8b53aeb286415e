//! Accuracy matrix and the Transfer / Average / Last reductions.
//!
//! `a[k][j]` is the accuracy on task `k` after training task `j`, both
//! 1-based. Column `j` is written once, right after task `j` is learned.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{LadaError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    task_ids: Vec<u32>,
    /// `columns[j - 1][k - 1]`
    columns: Vec<Option<Vec<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(task_ids: Vec<u32>) -> Result<Self> {
        if task_ids.is_empty() {
            return Err(LadaError::EmptyInput("accuracy matrix needs at least one task".into()));
        }
        let k = task_ids.len();
        Ok(AccuracyMatrix {
            task_ids,
            columns: vec![None; k],
        })
    }

    /// Matrix with task ids `1..=K` and every column filled from `rows[k][j]`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = AccuracyMatrix::new((1..=rows.len() as u32).collect())?;
        for j in 1..=rows.len() {
            let col = rows
                .iter()
                .map(|r| {
                    r.get(j - 1).copied().ok_or(LadaError::Shape {
                        expected: rows.len(),
                        actual: r.len(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            m.set_column(j, col)?;
        }
        Ok(m)
    }

    pub fn num_tasks(&self) -> usize {
        self.task_ids.len()
    }

    pub fn task_ids(&self) -> &[u32] {
        &self.task_ids
    }

    /// Number of leading columns already written.
    pub fn columns_written(&self) -> usize {
        self.columns.iter().take_while(|c| c.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.columns_written() == self.num_tasks()
    }

    /// Writes column `j` (accuracy of every task after training task `j`).
    pub fn set_column(&mut self, j: usize, values: Vec<f64>) -> Result<()> {
        let k = self.num_tasks();
        if j == 0 || j > k {
            return Err(LadaError::Parameter(format!("column {j} outside 1..={k}")));
        }
        if self.columns[j - 1].is_some() {
            return Err(LadaError::State(format!("column {j} was already written")));
        }
        if j != self.columns_written() + 1 {
            return Err(LadaError::State(format!(
                "column {j} written before column {}",
                self.columns_written() + 1
            )));
        }
        if values.len() != k {
            return Err(LadaError::Shape {
                expected: k,
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(LadaError::Parameter(format!("accuracy {v} outside [0, 1]")));
        }
        self.columns[j - 1] = Some(values);
        Ok(())
    }

    pub fn get(&self, k: usize, j: usize) -> Option<f64> {
        if k == 0 || j == 0 {
            return None;
        }
        self.columns.get(j - 1)?.as_ref()?.get(k - 1).copied()
    }

    fn check_row(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.num_tasks() {
            return Err(LadaError::Parameter(format!("task {k} outside 1..={}", self.num_tasks())));
        }
        Ok(())
    }

    fn require(&self, k: usize, j: usize) -> Result<f64> {
        self.get(k, j)
            .ok_or_else(|| LadaError::State(format!("column {j} has not been written")))
    }

    /// Mean of `a[k][j]` over `j < k`.
    pub fn transfer(&self, k: usize) -> Result<f64> {
        self.check_row(k)?;
        if k == 1 {
            return Err(LadaError::UndefinedMetric("transfer is undefined for the first task".into()));
        }
        let mut sum = 0.0;
        for j in 1..k {
            sum += self.require(k, j)?;
        }
        Ok(sum / (k - 1) as f64)
    }

    /// Mean of `a[k][j]` over all `j`.
    pub fn average(&self, k: usize) -> Result<f64> {
        self.check_row(k)?;
        let n = self.num_tasks();
        let mut sum = 0.0;
        for j in 1..=n {
            sum += self.require(k, j)?;
        }
        Ok(sum / n as f64)
    }

    /// `a[k][K]`.
    pub fn last(&self, k: usize) -> Result<f64> {
        self.check_row(k)?;
        self.require(k, self.num_tasks())
    }

    pub fn summary(&self) -> Result<Summary> {
        if !self.is_complete() {
            return Err(LadaError::State(format!(
                "{} of {} columns written",
                self.columns_written(),
                self.num_tasks()
            )));
        }
        let n = self.num_tasks();
        let transfer: Vec<Option<f64>> = (1..=n)
            .map(|k| if k == 1 { Ok(None) } else { self.transfer(k).map(Some) })
            .collect::<Result<_>>()?;
        let average: Vec<f64> = (1..=n).map(|k| self.average(k)).collect::<Result<_>>()?;
        let last: Vec<f64> = (1..=n).map(|k| self.last(k)).collect::<Result<_>>()?;
        let defined: Vec<f64> = transfer.iter().flatten().copied().collect();
        Ok(Summary {
            transfer: TransferSeries {
                mean: mean(&defined),
                per_task: transfer,
            },
            average: Series {
                mean: mean(&average).expect("non-empty"),
                per_task: average,
            },
            last: Series {
                mean: mean(&last).expect("non-empty"),
                per_task: last,
            },
        })
    }

    /// `task,after_1,…,after_K`, one row per task, empty cells for unwritten columns.
    pub fn to_csv(&self) -> String {
        let n = self.num_tasks();
        let mut out = String::from("task");
        for j in 1..=n {
            write!(out, ",after_{j}").unwrap();
        }
        out.push('\n');
        for (k, id) in self.task_ids.iter().enumerate() {
            write!(out, "{id}").unwrap();
            for j in 1..=n {
                out.push(',');
                if let Some(v) = self.get(k + 1, j) {
                    write!(out, "{v}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub per_task: Vec<f64>,
    pub mean: f64,
}

/// The first task has no transfer value; the mean covers tasks 2..K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSeries {
    pub per_task: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub transfer: TransferSeries,
    pub average: Series,
    pub last: Series,
}

impl Summary {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}
