//! Pairwise semantic relevance over all samples and the graph operator
//! `L = diag(1^T S) - S` used by the cross-modal penalty.
//!
//! Samples are indexed globally in modality-major order: sample `i` of
//! modality `j` sits at `offsets[j] + i`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Above this many samples, triple-built matrices are stored sparsely.
pub const DENSE_LIMIT: usize = 5_000;

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(DMatrix<f64>),
    /// Symmetric adjacency lists, sorted by column.
    Sparse(Vec<Vec<(usize, f64)>>),
    /// Same class => +1, different class => -1 (or 0 when `negative` is off).
    Classes {
        class_of: Vec<usize>,
        class_sizes: Vec<usize>,
        negative: bool,
    },
}

/// Symmetric `theta x theta` matrix over {-1, 0, +1} with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMatrix {
    size: usize,
    storage: Storage,
    offsets: Vec<usize>,
}

impl RelevanceMatrix {
    /// Relevance from class ids: `+1` for distinct samples of the same class,
    /// `-1` otherwise. Each entry is `(modality, class)` in global order.
    pub fn from_labels(tags: &[(usize, i64)]) -> Self {
        let size = tags.len();
        let mut remap: BTreeMap<i64, usize> = BTreeMap::new();
        let class_of: Vec<usize> = tags
            .iter()
            .map(|&(_, c)| {
                let next = remap.len();
                *remap.entry(c).or_insert(next)
            })
            .collect();
        let mut class_sizes = vec![0; remap.len()];
        for &c in &class_of {
            class_sizes[c] += 1;
        }
        let offsets = offsets_from_modalities(tags.iter().map(|t| t.0));
        let storage = if size <= DENSE_LIMIT {
            Storage::Dense(DMatrix::from_fn(size, size, |a, b| {
                if a == b {
                    0.0
                } else if class_of[a] == class_of[b] {
                    1.0
                } else {
                    -1.0
                }
            }))
        } else {
            Storage::Classes {
                class_of,
                class_sizes,
                negative: true,
            }
        };
        RelevanceMatrix {
            size,
            storage,
            offsets,
        }
    }

    /// Relevance from explicit `(a, b, value)` triples with zero-based indices.
    /// Unlisted pairs are unknown (0). Self-pairs are ignored.
    pub fn from_triples(triples: &[(usize, usize, i8)], size: usize) -> Result<Self> {
        let mut pairs: BTreeMap<(usize, usize), i8> = BTreeMap::new();
        for &(a, b, value) in triples {
            if a >= size || b >= size {
                return Err(Error::invalid(format!(
                    "triple ({a}, {b}) out of range for {size} samples"
                )));
            }
            if value != 1 && value != -1 {
                return Err(Error::invalid(format!(
                    "relevance value must be +1 or -1, got {value} for ({a}, {b})"
                )));
            }
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            match pairs.insert(key, value) {
                Some(prev) if prev != value => {
                    return Err(Error::InconsistentRelevance { a: key.0, b: key.1 })
                }
                _ => {}
            }
        }
        let storage = if size <= DENSE_LIMIT {
            let mut m = DMatrix::zeros(size, size);
            for (&(a, b), &v) in &pairs {
                m[(a, b)] = f64::from(v);
                m[(b, a)] = f64::from(v);
            }
            Storage::Dense(m)
        } else {
            let mut rows = vec![Vec::new(); size];
            for (&(a, b), &v) in &pairs {
                rows[a].push((b, f64::from(v)));
                rows[b].push((a, f64::from(v)));
            }
            for r in &mut rows {
                r.sort_by_key(|e| e.0);
            }
            Storage::Sparse(rows)
        };
        Ok(RelevanceMatrix {
            size,
            storage,
            offsets: vec![0],
        })
    }

    /// Wraps an explicit matrix after validating symmetry, entries and diagonal.
    pub fn from_dense(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid("relevance matrix must be square"));
        }
        let n = m.nrows();
        for a in 0..n {
            if m[(a, a)] != 0.0 {
                return Err(Error::invalid(format!("diagonal entry {a} is non-zero")));
            }
            for b in 0..n {
                let v = m[(a, b)];
                if v != 0.0 && v != 1.0 && v != -1.0 {
                    return Err(Error::invalid(format!(
                        "entry ({a}, {b}) = {v} not in {{-1,0,1}}"
                    )));
                }
                if v != m[(b, a)] {
                    return Err(Error::invalid(format!(
                        "relevance is asymmetric at ({a}, {b})"
                    )));
                }
            }
        }
        Ok(RelevanceMatrix {
            size: n,
            storage: Storage::Dense(m),
            offsets: vec![0],
        })
    }

    /// Records per-modality start offsets (sizes in modality order).
    pub fn with_modality_sizes(mut self, sizes: &[usize]) -> Result<Self> {
        if sizes.iter().sum::<usize>() != self.size {
            return Err(Error::invalid(
                "modality sizes do not add up to the matrix size",
            ));
        }
        let mut acc = 0;
        self.offsets = sizes
            .iter()
            .map(|s| {
                let o = acc;
                acc += s;
                o
            })
            .collect();
        Ok(self)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn global_index(&self, modality: usize, i: usize) -> usize {
        self.offsets[modality] + i
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        match &self.storage {
            Storage::Dense(m) => m[(a, b)],
            Storage::Sparse(rows) => rows[a]
                .binary_search_by_key(&b, |e| e.0)
                .map_or(0.0, |i| rows[a][i].1),
            Storage::Classes {
                class_of, negative, ..
            } => {
                if a == b {
                    0.0
                } else if class_of[a] == class_of[b] {
                    1.0
                } else if *negative {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            _ => DMatrix::from_fn(self.size, self.size, |a, b| self.get(a, b)),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match &self.storage {
            Storage::Dense(m) => (0..self.size).all(|a| (0..a).all(|b| m[(a, b)] == m[(b, a)])),
            Storage::Sparse(rows) => rows
                .iter()
                .enumerate()
                .all(|(a, r)| r.iter().all(|&(b, v)| self.get(b, a) == v)),
            Storage::Classes { .. } => true,
        }
    }

    /// Copy with every `-1` entry replaced by `0`.
    pub fn clamp_negative(&self) -> Self {
        let storage = match &self.storage {
            Storage::Dense(m) => Storage::Dense(m.map(|v| v.max(0.0))),
            Storage::Sparse(rows) => Storage::Sparse(
                rows.iter()
                    .map(|r| r.iter().copied().filter(|e| e.1 > 0.0).collect())
                    .collect(),
            ),
            Storage::Classes {
                class_of,
                class_sizes,
                ..
            } => Storage::Classes {
                class_of: class_of.clone(),
                class_sizes: class_sizes.clone(),
                negative: false,
            },
        };
        RelevanceMatrix {
            size: self.size,
            storage,
            offsets: self.offsets.clone(),
        }
    }

    /// Column sums `1^T S`.
    pub fn column_sums(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(m) => m.row_sum().iter().copied().collect(),
            Storage::Sparse(rows) => rows.iter().map(|r| r.iter().map(|e| e.1).sum()).collect(),
            Storage::Classes {
                class_of,
                class_sizes,
                negative,
            } => class_of
                .iter()
                .map(|&c| {
                    let same = class_sizes[c] as f64 - 1.0;
                    let other = (self.size - class_sizes[c]) as f64;
                    if *negative {
                        same - other
                    } else {
                        same
                    }
                })
                .collect(),
        }
    }

    /// `Z * S` for a `u x theta` matrix `Z`.
    pub fn right_mul(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.storage {
            Storage::Dense(m) => z * m,
            Storage::Sparse(rows) => {
                let mut out = DMatrix::zeros(z.nrows(), self.size);
                for (b, row) in rows.iter().enumerate() {
                    let mut col = out.column_mut(b);
                    for &(a, v) in row {
                        col.axpy(v, &z.column(a), 1.0);
                    }
                }
                out
            }
            Storage::Classes {
                class_of,
                class_sizes,
                negative,
            } => {
                let u = z.nrows();
                let mut sums = DMatrix::zeros(u, class_sizes.len());
                for (a, &c) in class_of.iter().enumerate() {
                    let mut s = sums.column_mut(c);
                    s += z.column(a);
                }
                let total = z.column_sum();
                let mut out = DMatrix::zeros(u, self.size);
                for (b, &c) in class_of.iter().enumerate() {
                    let mut col = sums.column(c) - z.column(b);
                    if *negative {
                        col -= &total - sums.column(c);
                    }
                    out.set_column(b, &col);
                }
                out
            }
        }
    }
}

fn offsets_from_modalities(modalities: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut offsets = vec![0];
    let mut current = None;
    for (idx, m) in modalities.enumerate() {
        match current {
            None => current = Some(m),
            Some(c) if c != m => {
                offsets.push(idx);
                current = Some(m);
            }
            _ => {}
        }
    }
    offsets
}

/// `L = diag(1^T S) - S`, applied implicitly.
#[derive(Debug, Clone)]
pub struct GraphOperator {
    relevance: RelevanceMatrix,
    degree: Vec<f64>,
}

impl GraphOperator {
    pub fn size(&self) -> usize {
        self.relevance.size
    }

    pub fn relevance(&self) -> &RelevanceMatrix {
        &self.relevance
    }

    /// `Z * L` for a `u x theta` matrix `Z`.
    pub fn right_mul(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut zs = self.relevance.right_mul(z);
        for (b, &d) in self.degree.iter().enumerate() {
            let mut col = zs.column_mut(b);
            col *= -1.0;
            col.axpy(d, &z.column(b), 1.0);
        }
        zs
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut l = -self.relevance.to_dense();
        for (i, &d) in self.degree.iter().enumerate() {
            l[(i, i)] += d;
        }
        l
    }
}

pub fn laplacian(s: &RelevanceMatrix) -> Result<GraphOperator> {
    if !s.is_symmetric() {
        return Err(Error::invalid("relevance matrix must be symmetric"));
    }
    Ok(GraphOperator {
        degree: s.column_sums(),
        relevance: s.clone(),
    })
}

/// `sum_{a,b} S[a,b] * |z_a - z_b|^2`, evaluated as `2 Tr(Z L Z^T)`.
pub fn penalty_value(z: &DMatrix<f64>, l: &GraphOperator) -> Result<f64> {
    if z.ncols() != l.size() {
        return Err(Error::invalid(format!(
            "embedding matrix has {} columns, relevance covers {} samples",
            z.ncols(),
            l.size()
        )));
    }
    Ok(2.0 * z.dot(&l.right_mul(z)))
}

/// Parses whitespace-separated `a b value` lines with 1-based indices.
/// Lines starting with `#` and blank lines are skipped.
pub fn parse_triples(text: &str, origin: &Path) -> Result<Vec<(usize, usize, i8)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let index = |s: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(i) if i >= 1 => Ok(i - 1),
                _ => Err(err(format!("bad sample index `{s}` (1-based)"))),
            }
        };
        let a = index(fields[0])?;
        let b = index(fields[1])?;
        let value = match fields[2] {
            "1" | "+1" => 1,
            "-1" => -1,
            other => {
                return Err(err(format!(
                    "relevance value must be 1 or -1, got `{other}`"
                )))
            }
        };
        out.push((a, b, value));
    }
    Ok(out)
}

pub fn read_triples(path: &Path, size: usize) -> Result<RelevanceMatrix> {
    let text = std::fs::read_to_string(path)?;
    RelevanceMatrix::from_triples(&parse_triples(&text, path)?, size)
}
