//! LIBSVM ingestion, row normalization, node partitioning and synthetic data.

use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::SparseVec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: SparseVec,
    pub label: f64,
    /// 1-based source line, or the generation index for synthetic data.
    pub line: usize,
}

/// Parses LIBSVM text (`label idx:val ...`, 1-based indices). Returns the
/// samples with 0-based indices and `d = max index + 1`.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<(Vec<Sample>, usize)> {
    let mut raw: Vec<(usize, f64, Vec<usize>, Vec<f64>)> = Vec::new();
    let mut dim = 0usize;
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap();
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("non-numeric label {label_tok:?}"),
        })?;
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for tok in tokens {
            let (i, v) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected idx:val, got {tok:?}"),
            })?;
            let i: usize = i.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad index {i:?}"),
            })?;
            if i < 1 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "feature indices are 1-based".into(),
                });
            }
            let v: f64 = v.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad value {v:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-finite value {v}"),
                });
            }
            if idx.last().is_some_and(|&last| i - 1 <= last) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("index {i} is not increasing"),
                });
            }
            idx.push(i - 1);
            val.push(v);
            dim = dim.max(i);
        }
        raw.push((lineno, label, idx, val));
    }
    let samples = raw
        .into_iter()
        .map(|(line, label, idx, val)| Sample {
            features: SparseVec::new(dim, idx, val),
            label,
            line,
        })
        .collect();
    Ok((samples, dim))
}

/// Scales every sample to unit l2 norm and drops explicit zeros.
pub fn normalize_rows(samples: &mut [Sample]) -> Result<()> {
    for s in samples.iter_mut() {
        s.features.prune_zeros();
        let norm = s.features.norm();
        if norm == 0.0 {
            return Err(Error::ZeroSample(s.line));
        }
        s.features.scale(1.0 / norm);
    }
    Ok(())
}

/// Samples distributed across nodes plus global statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Shards {
    pub per_node: Vec<Vec<Sample>>,
    pub dim: usize,
    pub q_min: usize,
    /// Fraction of samples with a positive label.
    pub p: f64,
    pub total: usize,
    /// Largest per-sample density `nnz / d`.
    pub rho: f64,
}

impl Shards {
    pub fn n_nodes(&self) -> usize {
        self.per_node.len()
    }

    pub fn all_samples(&self) -> impl Iterator<Item = &Sample> {
        self.per_node.iter().flatten()
    }

    /// Audit record: source line numbers per node.
    pub fn manifest(&self) -> ShardManifest {
        ShardManifest {
            dim: self.dim,
            total: self.total,
            p: self.p,
            rho: self.rho,
            q_min: self.q_min,
            default_lambda: default_lambda(self).ok(),
            nodes: self
                .per_node
                .iter()
                .map(|s| s.iter().map(|x| x.line).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardManifest {
    pub dim: usize,
    pub total: usize,
    pub p: f64,
    pub rho: f64,
    pub q_min: usize,
    pub default_lambda: Option<f64>,
    pub nodes: Vec<Vec<usize>>,
}

/// Seeded shuffle followed by round-robin assignment; remainders go to the
/// low-index nodes.
pub fn partition(samples: Vec<Sample>, dim: usize, n_nodes: usize, seed: u64) -> Result<Shards> {
    if n_nodes == 0 || samples.len() < n_nodes {
        return Err(Error::TooFewSamples {
            samples: samples.len(),
            nodes: n_nodes,
        });
    }
    let total = samples.len();
    let positives = samples.iter().filter(|s| s.label > 0.0).count();
    let rho = samples
        .iter()
        .map(|s| s.features.nnz() as f64 / dim as f64)
        .fold(0.0, f64::max);

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut per_node = vec![Vec::with_capacity(total / n_nodes + 1); n_nodes];
    for (k, &src) in order.iter().enumerate() {
        per_node[k % n_nodes].push(slots[src].take().unwrap());
    }
    let q_min = per_node.iter().map(Vec::len).min().unwrap();
    Ok(Shards {
        per_node,
        dim,
        q_min,
        p: positives as f64 / total as f64,
        total,
        rho,
    })
}

/// `1 / (10 Q)` with `Q` the total sample count.
pub fn default_lambda(shards: &Shards) -> Result<f64> {
    if shards.total == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(1.0 / (10.0 * shards.total as f64))
}

/// Synthetic generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_samples: usize,
    pub dim: usize,
    /// Target fraction of nonzero features per sample.
    pub density: f64,
    /// Response noise for regression, label flip probability for classification.
    #[serde(default)]
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    /// Planted linear model with Gaussian response noise.
    Regression,
    /// Labels are the sign of a planted linear score.
    Classification,
}

/// Gaussian features sparsified to `density` (at least one nonzero per row),
/// unit-normalized, labeled by a planted model. Line numbers are 1-based
/// generation indices.
pub fn synthetic(spec: &SyntheticSpec) -> Result<(Vec<Sample>, usize)> {
    if spec.dim == 0 || spec.n_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density must be in (0, 1], got {}",
            spec.density
        )));
    }
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let planted: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let nnz = ((spec.density * d as f64).round() as usize).clamp(1, d);
    let all: Vec<usize> = (0..d).collect();
    let mut samples = Vec::with_capacity(spec.n_samples);
    for k in 0..spec.n_samples {
        let mut idx: Vec<usize> = all.choose_multiple(&mut rng, nnz).copied().collect();
        idx.sort_unstable();
        let val: Vec<f64> = idx.iter().map(|_| rng.sample(StandardNormal)).collect();
        let mut features = SparseVec::new(d, idx, val);
        features.prune_zeros();
        let norm = features.norm();
        features.scale(1.0 / norm);
        let score = features.dot_dense(&planted);
        let label = match spec.kind {
            SyntheticKind::Regression => {
                score + spec.noise * rng.sample::<f64, _>(StandardNormal)
            }
            SyntheticKind::Classification => {
                let mut y = if score >= 0.0 { 1.0 } else { -1.0 };
                if spec.noise > 0.0 && rng.gen::<f64>() < spec.noise {
                    y = -y;
                }
                y
            }
        };
        samples.push(Sample {
            features,
            label,
            line: k + 1,
        });
    }
    Ok((samples, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn parse(text: &str) -> Result<(Vec<Sample>, usize)> {
        parse_libsvm(text.as_bytes())
    }

    fn dummy(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|k| Sample {
                features: SparseVec::new(3, vec![k % 3], vec![1.0]),
                label: if k % 2 == 0 { 1.0 } else { -1.0 },
                line: k + 1,
            })
            .collect()
    }

    #[test]
    fn parses_one_based_indices() {
        let (s, d) = parse("+1 3:0.5 7:1.0\n\n-1 1:1.0\n").unwrap();
        assert_eq!(d, 7);
        assert_eq!(s[0].label, 1.0);
        assert_eq!(s[0].features.indices(), &[2, 6]);
        assert_eq!(s[0].features.values(), &[0.5, 1.0]);
        assert_eq!(s[1].label, -1.0);
        assert_eq!(s[1].features.indices(), &[0]);
        assert_eq!(s[1].line, 3);
    }

    #[test]
    fn explicit_zero_kept_at_parse_dropped_at_normalize() {
        let (mut s, _) = parse("+1 2:0.0 3:2.0\n").unwrap();
        assert_eq!(s[0].features.nnz(), 2);
        normalize_rows(&mut s).unwrap();
        assert_eq!(s[0].features.indices(), &[2]);
        assert_eq!(s[0].features.values(), &[1.0]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse("abc 1:1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("1 3:1 2:1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("1 2:1 2:1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("1 0:1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("1\n1 x:1\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn normalize_examples() {
        let mut s = vec![
            Sample {
                features: SparseVec::new(2, vec![0, 1], vec![3.0, 4.0]),
                label: 1.0,
                line: 1,
            },
            Sample {
                features: SparseVec::new(6, vec![5], vec![1.0]),
                label: 1.0,
                line: 2,
            },
        ];
        normalize_rows(&mut s).unwrap();
        assert_abs_diff_eq!(s[0].features.values()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0].features.values()[1], 0.8, epsilon = 1e-15);
        assert_eq!(s[1].features.values(), &[1.0]);

        let mut empty = vec![Sample {
            features: SparseVec::zeros(4),
            label: 1.0,
            line: 9,
        }];
        assert!(matches!(normalize_rows(&mut empty), Err(Error::ZeroSample(9))));
    }

    #[test]
    fn partition_sizes() {
        let sh = partition(dummy(10), 3, 2, 0).unwrap();
        assert_eq!(sh.per_node[0].len(), 5);
        assert_eq!(sh.per_node[1].len(), 5);
        let sh = partition(dummy(11), 3, 2, 0).unwrap();
        assert_eq!((sh.per_node[0].len(), sh.per_node[1].len()), (6, 5));
        assert_eq!(sh.q_min, 5);
        assert!(matches!(
            partition(dummy(2), 3, 3, 0),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn partition_deterministic_and_stats() {
        let a = partition(dummy(17), 3, 4, 42).unwrap();
        let b = partition(dummy(17), 3, 4, 42).unwrap();
        assert_eq!(a, b);
        assert_abs_diff_eq!(a.p, 9.0 / 17.0);
        assert_eq!(a.total, 17);
        assert!(a.rho * a.dim as f64 >= 1.0);
    }

    #[test]
    fn lambda_examples() {
        let mut sh = partition(dummy(100), 3, 2, 0).unwrap();
        assert_abs_diff_eq!(default_lambda(&sh).unwrap(), 0.001, epsilon = 1e-18);
        sh.total = 1;
        assert_abs_diff_eq!(default_lambda(&sh).unwrap(), 0.1, epsilon = 1e-18);
        sh.total = 500;
        assert_abs_diff_eq!(default_lambda(&sh).unwrap(), 0.0002, epsilon = 1e-18);
        sh.total = 0;
        assert!(default_lambda(&sh).is_err());
    }

    #[test]
    fn synthetic_rows_are_unit_and_sparse() {
        let spec = SyntheticSpec {
            kind: SyntheticKind::Classification,
            n_samples: 50,
            dim: 40,
            density: 0.1,
            noise: 0.0,
            seed: 3,
        };
        let (s, d) = synthetic(&spec).unwrap();
        assert_eq!(d, 40);
        for x in &s {
            assert_eq!(x.features.nnz(), 4);
            assert_abs_diff_eq!(x.features.norm(), 1.0, epsilon = 1e-12);
            assert!(x.label == 1.0 || x.label == -1.0);
        }
        assert_eq!(s, synthetic(&spec).unwrap().0);
    }
}
