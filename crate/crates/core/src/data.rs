//! Synthetic classification datasets and CSV ingestion.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Builtin generator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DatasetKind {
    GaussianBlobs,
    ConcentricRings,
    Spiral,
}

impl DatasetKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gaussian-blobs" => Ok(DatasetKind::GaussianBlobs),
            "concentric-rings" => Ok(DatasetKind::ConcentricRings),
            "spiral" => Ok(DatasetKind::Spiral),
            other => Err(Error::Config(format!("unknown dataset generator '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::GaussianBlobs => "gaussian-blobs",
            DatasetKind::ConcentricRings => "concentric-rings",
            DatasetKind::Spiral => "spiral",
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub kind: DatasetKind,
    pub classes: usize,
    pub dim: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub noise: f64,
    pub seed: u64,
}

/// A labeled dataset; rows of `x` are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Row subset in the given order.
    pub fn select(&self, idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (
            self.x.select(Axis(0), idx),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Deterministic synthetic dataset, split into train/test.
///
/// Class assignment is round-robin, so class counts are balanced within one
/// sample. Requires `dim ≥ 2`; extra dimensions carry pure noise.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<SplitData> {
    if spec.classes < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {}",
            spec.classes
        )));
    }
    if spec.dim < 2 {
        return Err(Error::Config(format!(
            "synthetic generators need dim ≥ 2, got {}",
            spec.dim
        )));
    }
    if spec.noise < 0.0 {
        return Err(Error::Config(format!("noise must be ≥ 0, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = synthesize(spec, spec.train_samples, &mut rng);
    let test = synthesize(spec, spec.test_samples, &mut rng);
    Ok(SplitData { train, test })
}

fn synthesize(spec: &SyntheticSpec, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let mut x = Array2::zeros((n, spec.dim));
    let mut y = Vec::with_capacity(n);
    let k = spec.classes;
    for i in 0..n {
        let class = i % k;
        y.push(class);
        let mut row = x.row_mut(i);
        match spec.kind {
            DatasetKind::GaussianBlobs => {
                // Centers on a circle of radius 3 in the first two coords.
                let angle = std::f64::consts::TAU * class as f64 / k as f64;
                row[0] = 3.0 * angle.cos();
                row[1] = 3.0 * angle.sin();
                for j in 0..spec.dim {
                    let noise: f64 = StandardNormal.sample(rng);
                    row[j] += spec.noise * noise;
                }
            }
            DatasetKind::ConcentricRings => {
                let radius = 1.0 + class as f64;
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                row[0] = radius * theta.cos();
                row[1] = radius * theta.sin();
                for j in 0..spec.dim {
                    let noise: f64 = StandardNormal.sample(rng);
                    row[j] += spec.noise * noise;
                }
            }
            DatasetKind::Spiral => {
                let t: f64 = rng.gen_range(0.0..1.0);
                let radius = 0.3 + 2.7 * t;
                let angle = 1.75 * std::f64::consts::TAU * t
                    + std::f64::consts::TAU * class as f64 / k as f64;
                row[0] = radius * angle.cos();
                row[1] = radius * angle.sin();
                for j in 0..spec.dim {
                    let noise: f64 = StandardNormal.sample(rng);
                    row[j] += spec.noise * noise;
                }
            }
        }
    }
    Dataset {
        x,
        y,
        num_classes: k,
    }
}

/// Loads a numeric CSV with a header row, standardizes features using the
/// train split's statistics, and splits 80/20 with a seeded shuffle.
pub fn load_csv_dataset(path: &Path, label_column: &str, seed: u64) -> Result<SplitData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::CsvParse {
        path: path.into(),
        line: 1,
        message: "empty file".into(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = columns
        .iter()
        .position(|c| *c == label_column)
        .ok_or_else(|| Error::CsvParse {
            path: path.into(),
            line: 1,
            message: format!("label column '{label_column}' not found in header"),
        })?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Error::CsvParse {
                path: path.into(),
                line: lineno + 1,
                message: format!("expected {} fields, got {}", columns.len(), fields.len()),
            });
        }
        let mut row = Vec::with_capacity(columns.len() - 1);
        for (j, field) in fields.iter().enumerate() {
            if j == label_idx {
                raw_labels.push((*field).to_owned());
            } else {
                let v: f64 = field.parse().map_err(|_| Error::CsvParse {
                    path: path.into(),
                    line: lineno + 1,
                    message: format!("non-numeric value '{}' in column '{}'", field, columns[j]),
                })?;
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::CsvParse {
            path: path.into(),
            line: 2,
            message: "no data rows".into(),
        });
    }

    // Map label strings to contiguous class ids in first-seen order.
    let mut class_names: Vec<String> = Vec::new();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|name| {
            if let Some(pos) = class_names.iter().position(|c| c == name) {
                pos
            } else {
                class_names.push(name.clone());
                class_names.len() - 1
            }
        })
        .collect();

    let n = rows.len();
    let dim = rows[0].len();
    let mut x = Array2::zeros((n, dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            x[[i, j]] = v;
        }
    }

    // Seeded 80/20 split.
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = (n * 8) / 10;
    let train_idx = &order[..n_train];
    let test_idx = &order[n_train..];

    let mut train_x = x.select(Axis(0), train_idx);
    let mut test_x = x.select(Axis(0), test_idx);

    // Standardize with train statistics only.
    for j in 0..dim {
        let col = train_x.column(j);
        let mean = col.sum() / n_train as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_train as f64;
        let std = var.sqrt().max(1e-12);
        train_x
            .column_mut(j)
            .mapv_inplace(|v| (v - mean) / std);
        test_x.column_mut(j).mapv_inplace(|v| (v - mean) / std);
    }

    let num_classes = class_names.len();
    Ok(SplitData {
        train: Dataset {
            x: train_x,
            y: train_idx.iter().map(|&i| labels[i]).collect(),
            num_classes,
        },
        test: Dataset {
            x: test_x,
            y: test_idx.iter().map(|&i| labels[i]).collect(),
            num_classes,
        },
    })
}

/// Mean features of the train split, for standardization checks.
pub fn feature_means(data: &Dataset) -> Array1<f64> {
    data.x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(0))
}
