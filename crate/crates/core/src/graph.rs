//! Sparse graphs: the user-item bipartite adjacency and the top-k cosine
//! neighbor graphs, plus the propagation matrices derived from them.
//!
//! Everything here is deterministic by construction. CSR rows keep their
//! column indices ascending, so every sparse-dense product sums in a fixed
//! order no matter how many threads run; neighbor selection breaks
//! similarity ties by lower index.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::dense::{cosine, DenseMatrix};
use crate::error::{Error, Result};

/// Row-major CSR sparse matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// Row count below which spmm stays single-threaded; the rayon dispatch
/// overhead dwarfs the work on tiny test graphs.
const PAR_ROW_THRESHOLD: usize = 512;

impl CsrMatrix {
    /// Build from (row, col, value) triplets. Duplicate coordinates are
    /// summed. Sorting makes the result independent of triplet order.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::IndexOutOfRange(format!(
                    "triplet ({r},{c}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut rows: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut col_idx: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if rows.last() == Some(&r) && col_idx.last() == Some(&c) {
                *values.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                col_idx.push(c);
                values.push(v);
            }
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[s..e], &self.values[s..e])
    }

    /// Sum of values in one row (the degree, for a 0/1 adjacency).
    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).1.iter().sum()
    }

    /// Transposed copy, rebuilt via counting sort so columns stay ascending.
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0f64; self.nnz()];
        let mut cursor = counts;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = cursor[c];
                col_idx[slot] = r;
                values[slot] = v;
                cursor[c] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Sparse-dense product. Each output row is an independent fixed-order
    /// sum over ascending column indices, so results do not depend on the
    /// thread count.
    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if self.n_cols != x.rows() {
            return Err(Error::DimMismatch(format!(
                "spmm: {}x{} sparse times {}x{} dense",
                self.n_rows,
                self.n_cols,
                x.rows(),
                x.cols()
            )));
        }
        let d = x.cols();
        let mut out = DenseMatrix::zeros(self.n_rows, d);
        let compute_row = |r: usize, out_row: &mut [f64]| {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let src = x.row(c);
                for (o, s) in out_row.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        };
        if self.n_rows >= PAR_ROW_THRESHOLD {
            out.as_mut_slice()
                .par_chunks_mut(d)
                .enumerate()
                .for_each(|(r, row)| compute_row(r, row));
        } else {
            for r in 0..self.n_rows {
                compute_row(r, out.row_mut(r));
            }
        }
        Ok(out)
    }

    /// Debug dump as `row \t col \t value` triplets. The default float
    /// formatting round-trips f64 exactly.
    pub fn dump_tsv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(w, "{r}\t{c}\t{v}")?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Symmetric bipartite adjacency over n_users + n_items nodes: weight 1 at
/// (u, n_users+i) and its mirror for every train pair, nothing inside the
/// user block or the item block.
pub fn build_adjacency(n_users: usize, n_items: usize, pairs: &[(usize, usize)]) -> Result<CsrMatrix> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no interaction pairs".into()));
    }
    let n = n_users + n_items;
    let mut triplets = Vec::with_capacity(2 * pairs.len());
    for &(u, i) in pairs {
        triplets.push((u, n_users + i, 1.0));
        triplets.push((n_users + i, u, 1.0));
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

/// D^{-1/2} A D^{-1/2} for a 0/1 adjacency: each entry (a,b) becomes
/// 1/sqrt(deg(a) * deg(b)). Zero-degree rows have no entries and stay empty.
pub fn normalize_sym(a: &CsrMatrix) -> CsrMatrix {
    let deg: Vec<f64> = (0..a.n_rows).map(|r| a.row_sum(r)).collect();
    let mut out = a.clone();
    for r in 0..a.n_rows {
        let (s, e) = (a.row_ptr[r], a.row_ptr[r + 1]);
        for k in s..e {
            let c = a.col_idx[k];
            out.values[k] = 1.0 / (deg[r] * deg[c]).sqrt();
        }
    }
    out
}

/// Top-k cosine neighbor graph. `neighbors[r]` holds up to k
/// (index, similarity) pairs sorted by index ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    pub n: usize,
    pub k: usize,
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

/// Exact O(n^2 d) top-k cosine neighbors for every row of `x`.
///
/// Self-similarity is excluded, zero-norm rows score 0 against everything,
/// and equal similarities are resolved in favor of the lower index. If
/// k >= n the value is clamped to n-1 with a warning.
pub fn topk_knn(x: &DenseMatrix, k: usize) -> Result<KnnGraph> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::Config(format!("kNN needs at least 2 rows, got {n}")));
    }
    if k == 0 {
        return Err(Error::Config("kNN needs k >= 1".into()));
    }
    let k = if k >= n {
        log::warn!("k={k} >= n={n}; clamping to {}", n - 1);
        n - 1
    } else {
        k
    };
    let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sims: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, cosine(x.row(i), x.row(j))))
                .collect();
            sims.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            sims.truncate(k);
            sims.sort_unstable_by_key(|&(j, _)| j);
            sims
        })
        .collect();
    Ok(KnnGraph { n, k, neighbors })
}

impl KnnGraph {
    /// Serialize as `row \t neighbor \t similarity` lines; the default f64
    /// formatting is shortest-round-trip, so reload is bit-exact.
    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# n={} k={}", self.n, self.k)?;
        for (r, neigh) in self.neighbors.iter().enumerate() {
            for &(j, s) in neigh {
                writeln!(w, "{r}\t{j}\t{s}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_tsv(path: &Path) -> Result<KnnGraph> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::EmptyInput(path.display().to_string()))?;
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.display().to_string(),
            line,
            reason,
        };
        let mut n = None;
        let mut k = None;
        for tok in header.trim_start_matches('#').split_whitespace() {
            if let Some(v) = tok.strip_prefix("n=") {
                n = v.parse().ok();
            } else if let Some(v) = tok.strip_prefix("k=") {
                k = v.parse().ok();
            }
        }
        let (Some(n), Some(k)) = (n, k) else {
            return Err(parse_err(1, "expected header `# n=.. k=..`".into()));
        };
        let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (lineno, line) in lines.enumerate() {
            let mut f = line.split('\t');
            let (Some(r), Some(j), Some(s)) = (f.next(), f.next(), f.next()) else {
                return Err(parse_err(lineno + 2, "expected 3 tab-separated fields".into()));
            };
            let r: usize = r.parse().map_err(|_| parse_err(lineno + 2, format!("bad row {r:?}")))?;
            let j: usize = j.parse().map_err(|_| parse_err(lineno + 2, format!("bad col {j:?}")))?;
            let s: f64 = s.parse().map_err(|_| parse_err(lineno + 2, format!("bad sim {s:?}")))?;
            if r >= n || j >= n {
                return Err(parse_err(lineno + 2, format!("index ({r},{j}) outside n={n}")));
            }
            neighbors[r].push((j, s));
        }
        Ok(KnnGraph { n, k, neighbors })
    }

    /// Propagation matrix for the user graph: each row is a softmax over the
    /// retained neighbor similarities. The residual self term is added by the
    /// caller, not encoded here.
    pub fn user_propagation(&self) -> CsrMatrix {
        let mut triplets = Vec::new();
        for (u, neigh) in self.neighbors.iter().enumerate() {
            if neigh.is_empty() {
                continue;
            }
            let m = neigh.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = neigh.iter().map(|&(_, s)| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (&(j, _), e) in neigh.iter().zip(&exps) {
                triplets.push((u, j, e / z));
            }
        }
        CsrMatrix::from_triplets(self.n, self.n, triplets).expect("indices bounded by n")
    }

    /// Propagation matrix for the item graph: raw cosine weights, no
    /// residual. With `row_normalize` each row is divided by the sum of
    /// absolute weights (sign-preserving, total even with negative cosines).
    pub fn item_propagation(&self, row_normalize: bool) -> CsrMatrix {
        let mut triplets = Vec::new();
        for (i, neigh) in self.neighbors.iter().enumerate() {
            let denom = if row_normalize {
                let s: f64 = neigh.iter().map(|&(_, s)| s.abs()).sum();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            } else {
                1.0
            };
            for &(j, s) in neigh {
                triplets.push((i, j, s / denom));
            }
        }
        CsrMatrix::from_triplets(self.n, self.n, triplets).expect("indices bounded by n")
    }
}
