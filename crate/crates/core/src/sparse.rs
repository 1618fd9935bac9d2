//! Thin helpers over faer's compressed-column matrices.

use std::collections::HashMap;
use std::sync::Mutex;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, SymbolicSparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

pub type Csc = SparseColMat<usize, f64>;

pub fn from_triplets(nrows: usize, ncols: usize, entries: &[Triplet<usize, usize, f64>]) -> Csc {
    SparseColMat::try_new_from_triplets(nrows, ncols, entries).expect("triplet indices in range")
}

/// Builds a matrix from columns whose row indices are strictly increasing.
pub fn from_sorted_columns<'a>(nrows: usize, columns: impl IntoIterator<Item = (&'a [usize], &'a [f64])>) -> Csc {
    let mut col_ptr = vec![0];
    let mut row_idx = Vec::new();
    let mut val = Vec::new();
    for (rows, vals) in columns {
        row_idx.extend_from_slice(rows);
        val.extend_from_slice(vals);
        col_ptr.push(row_idx.len());
    }
    let ncols = col_ptr.len() - 1;
    SparseColMat::new(
        SymbolicSparseColMat::new_checked(nrows, ncols, col_ptr, None, row_idx),
        val,
    )
}

/// Sparse product `a · b`.
pub fn matmul(a: &Csc, b: &Csc) -> Csc {
    assert_eq!(a.ncols(), b.nrows());
    let n = a.nrows();
    let mut work = vec![0.0; n];
    let mut mark = vec![usize::MAX; n];
    let mut col_ptr = vec![0];
    let mut row_idx = Vec::new();
    let mut val = Vec::new();
    let mut pattern = Vec::new();
    for j in 0..b.ncols() {
        pattern.clear();
        let (bk, bv) = column(b, j);
        for (&k, &x) in bk.iter().zip(bv) {
            let (ai, av) = column(a, k);
            for (&i, &y) in ai.iter().zip(av) {
                if mark[i] != j {
                    mark[i] = j;
                    work[i] = 0.0;
                    pattern.push(i);
                }
                work[i] += x * y;
            }
        }
        pattern.sort_unstable();
        for &i in &pattern {
            row_idx.push(i);
            val.push(work[i]);
        }
        col_ptr.push(row_idx.len());
    }
    SparseColMat::new(
        SymbolicSparseColMat::new_checked(n, b.ncols(), col_ptr, None, row_idx),
        val,
    )
}

/// Row indices and values of column `j`.
pub fn column(a: &Csc, j: usize) -> (&[usize], &[f64]) {
    let range = a.symbolic().col_range(j);
    (&a.symbolic().row_idx()[range.clone()], &a.val()[range])
}

pub fn matvec(a: &Csc, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut y = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let (rows, vals) = column(a, j);
        for (&i, &v) in rows.iter().zip(vals) {
            y[i] += v * xj;
        }
    }
    y
}

/// `x · (A y)`.
pub fn bilinear(a: &Csc, x: &[f64], y: &[f64]) -> f64 {
    dot(x, &matvec(a, y))
}

pub fn transpose(a: &Csc) -> Csc {
    a.as_ref().transpose().to_col_major().expect("transpose allocation")
}

pub fn to_dense(a: &Csc) -> Mat<f64> {
    a.as_ref().to_dense()
}

/// Submatrix on sorted global index lists.
pub fn submatrix(a: &Csc, rows: &[usize], cols: &[usize]) -> Csc {
    let lookup = index_lookup(a.nrows(), rows);
    let mut trip = Vec::with_capacity(cols.len() * 9);
    for (lc, &gc) in cols.iter().enumerate() {
        let (ri, vals) = column(a, gc);
        for (&r, &v) in ri.iter().zip(vals) {
            let lr = lookup[r];
            if lr != usize::MAX {
                trip.push(Triplet::new(lr, lc, v));
            }
        }
    }
    from_triplets(rows.len(), cols.len(), &trip)
}

pub(crate) fn index_lookup(n: usize, indices: &[usize]) -> Vec<usize> {
    let mut lookup = vec![usize::MAX; n];
    for (l, &g) in indices.iter().enumerate() {
        lookup[g] = l;
    }
    lookup
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn max_abs_asymmetry(a: &Csc) -> f64 {
    let at = transpose(a);
    let mut worst: f64 = 0.0;
    for j in 0..a.ncols() {
        let (r1, v1) = column(a, j);
        let (r2, v2) = column(&at, j);
        let mut m: HashMap<usize, f64> = r1.iter().copied().zip(v1.iter().copied()).collect();
        for (&r, &v) in r2.iter().zip(v2) {
            *m.entry(r).or_insert(0.0) -= v;
        }
        worst = m.values().fold(worst, |acc, d| acc.max(d.abs()));
    }
    worst
}

pub fn max_abs(a: &Csc) -> f64 {
    a.val().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Sparse LU factor that can solve many right-hand sides.
pub struct SparseLu {
    lu: Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn new(a: &Csc, context: &str) -> Result<Self> {
        let symbolic = SymbolicLu::try_new(a.symbolic()).map_err(|e| Error::Factorization {
            context: context.into(),
            detail: format!("{e:?}"),
        })?;
        Self::with_symbolic(symbolic, a, context)
    }

    pub fn with_symbolic(symbolic: SymbolicLu<usize>, a: &Csc, context: &str) -> Result<Self> {
        let lu = Lu::try_new_with_symbolic(symbolic, a.as_ref()).map_err(|e| Error::Factorization {
            context: context.into(),
            detail: format!("{e:?} (n = {}, nnz = {})", a.nrows(), a.compute_nnz()),
        })?;
        Ok(Self { lu, n: a.nrows() })
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Vec<f64> {
        let mut m = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        self.lu.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }

    pub fn solve_mat(&self, rhs: &Mat<f64>) -> Mat<f64> {
        self.lu.solve(rhs)
    }
}

/// Hash of the sparsity pattern (dimensions, column pointers, row indices).
pub fn pattern_fingerprint(a: &Csc) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    a.nrows().hash(&mut h);
    a.ncols().hash(&mut h);
    a.symbolic().col_ptr().hash(&mut h);
    a.symbolic().row_idx().hash(&mut h);
    h.finish()
}

/// Symbolic LU analyses keyed by a caller label plus the pattern fingerprint.
/// Patches of equal shape usually share a pattern, so analysis runs about
/// once per shape.
#[derive(Default)]
pub struct SymbolicCache<K> {
    inner: Mutex<HashMap<(K, u64), SymbolicLu<usize>>>,
}

impl<K: std::hash::Hash + Eq + Clone> SymbolicCache<K> {
    pub fn new() -> Self {
        Self {
            inner: Mutex::new(HashMap::new()),
        }
    }

    pub fn factor(&self, key: K, a: &Csc, context: &str) -> Result<SparseLu> {
        let key = (key, pattern_fingerprint(a));
        let cached = self.inner.lock().expect("cache poisoned").get(&key).cloned();
        let symbolic = match cached {
            Some(s) => s,
            None => {
                let s = SymbolicLu::try_new(a.symbolic()).map_err(|e| Error::Factorization {
                    context: context.into(),
                    detail: format!("{e:?}"),
                })?;
                self.inner.lock().expect("cache poisoned").insert(key, s.clone());
                s
            }
        };
        SparseLu::with_symbolic(symbolic, a, context)
    }
}

/// Writes `row col value` lines (zero-based) for external inspection.
pub fn write_coordinate<W: std::io::Write>(a: &Csc, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{} {} {}", a.nrows(), a.ncols(), a.compute_nnz())?;
    for j in 0..a.ncols() {
        let (rows, vals) = column(a, j);
        for (&i, &v) in rows.iter().zip(vals) {
            writeln!(out, "{i} {j} {v:.17e}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Csc {
        from_triplets(
            3,
            3,
            &[
                Triplet::new(0, 0, 4.0),
                Triplet::new(1, 0, 1.0),
                Triplet::new(0, 1, -2.0),
                Triplet::new(1, 1, 5.0),
                Triplet::new(2, 2, 3.0),
                Triplet::new(2, 1, 0.5),
                Triplet::new(2, 2, 1.0),
            ],
        )
    }

    #[test]
    fn duplicates_are_summed() {
        let a = to_dense(&sample());
        assert_eq!(a[(2, 2)], 4.0);
    }

    #[test]
    fn submatrix_commutes_with_transpose() {
        let a = sample();
        let idx = [0, 2];
        let lhs = to_dense(&transpose(&submatrix(&a, &idx, &idx)));
        let rhs = to_dense(&submatrix(&transpose(&a), &idx, &idx));
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn lu_solves() {
        let a = sample();
        let lu = SparseLu::new(&a, "test").unwrap();
        let x = lu.solve_vec(&[1.0, 2.0, 3.0]);
        let r = matvec(&a, &x);
        for (ri, bi) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((ri - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn product_matches_dense() {
        let a = sample();
        let b = transpose(&a);
        let p = to_dense(&matmul(&a, &b));
        let q = to_dense(&a) * to_dense(&b);
        assert_eq!(p, q);
    }

    #[test]
    fn sorted_columns_roundtrip() {
        let a = sample();
        let cols: Vec<_> = (0..3).map(|j| column(&a, j)).collect();
        let b = from_sorted_columns(3, cols);
        assert_eq!(to_dense(&a), to_dense(&b));
    }

    #[test]
    fn coordinate_export() {
        let mut buf = Vec::new();
        write_coordinate(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("3 3 6\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
