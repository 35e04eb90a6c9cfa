//! CSV datasets, deterministic splits and synthetic sets.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::config("features and labels differ in length"));
        }
        if let Some(f) = features.first() {
            if features.iter().any(|r| r.len() != f.len()) {
                return Err(Error::config("ragged feature rows"));
            }
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Dataset {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }

    /// Reads a CSV with a header. The label column is `label` when present,
    /// otherwise the last column.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let file = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader(r: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 {
            return Err(Error::Parse("dataset needs feature columns and a label column".into()));
        }
        let label_col = headers
            .iter()
            .position(|h| h.trim() == "label")
            .unwrap_or(headers.len() - 1);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut row = Vec::with_capacity(rec.len() - 1);
            for (j, v) in rec.iter().enumerate() {
                let v = v.trim();
                if j == label_col {
                    let y: f64 = v
                        .parse()
                        .map_err(|_| Error::Parse(format!("row {}: bad label {v:?}", i + 1)))?;
                    if y < 0.0 || y.fract() != 0.0 {
                        return Err(Error::Parse(format!("row {}: label {v} is not a class index", i + 1)));
                    }
                    labels.push(y as usize);
                } else {
                    row.push(
                        v.parse()
                            .map_err(|_| Error::Parse(format!("row {}: bad value {v:?}", i + 1)))?,
                    );
                }
            }
            features.push(row);
        }
        Self::new(features, labels)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        for j in 0..self.n_features() {
            s.push_str(&format!("f{j},"));
        }
        s.push_str("label\n");
        for (f, y) in self.features.iter().zip(&self.labels) {
            for v in f {
                s.push_str(&format!("{v},"));
            }
            s.push_str(&format!("{y}\n"));
        }
        s
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub calib: Dataset,
    pub test: Dataset,
}

/// Shuffles with a seed, then takes `calib` and `test` samples; the rest trains.
pub fn split(ds: &Dataset, n_calib: usize, n_test: usize, seed: u64) -> Result<Split> {
    if n_calib + n_test >= ds.len() {
        return Err(Error::config(format!(
            "cannot hold out {} of {} samples",
            n_calib + n_test,
            ds.len()
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Dataset, &[0]));
    let n_train = ds.len() - n_calib - n_test;
    Ok(Split {
        train: ds.subset(&idx[..n_train]),
        calib: ds.subset(&idx[n_train..n_train + n_calib]),
        test: ds.subset(&idx[n_train + n_calib..]),
    })
}

/// Two interleaved half circles with Gaussian jitter.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, Stream::Dataset, &[1]);
    let jitter = Normal::new(0.0, noise.max(0.0)).expect("finite std");
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let t = std::f64::consts::PI * rng.random::<f64>();
        let (x0, x1) = if y == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        features.push(vec![x0 + jitter.sample(&mut rng), x1 + jitter.sample(&mut rng)]);
        labels.push(y);
    }
    Dataset {
        features,
        labels,
        n_classes: 2,
    }
}

/// Out-of-distribution copies: every input's features independently permuted.
pub fn scramble_pixels(ds: &Dataset, seed: u64) -> Dataset {
    let features = ds
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut g = f.clone();
            g.shuffle(&mut stream_rng(seed, Stream::Dataset, &[2, i as u64]));
            g
        })
        .collect();
    Dataset {
        features,
        labels: ds.labels.clone(),
        n_classes: ds.n_classes,
    }
}
