//! First-order difference operators with zero boundary condition and the
//! scale-mixture prior precision matrix `Λ = Lᵀ W L`.
//!
//! In 1D, `L = D` is lower bidiagonal (+1 diagonal, -1 first subdiagonal).
//! In 2D the rows are stacked as `[D1; D2]` with `D1 = I_N ⊗ D` (horizontal
//! differences, weight indices `0..d`) and `D2 = D ⊗ I_N` (vertical
//! differences, indices `d..2d`), for row-major vectorized `N x N` images.
//! With the zero boundary row, `DᵀD` is full rank, unlike the rank `d-1`
//! precision of an intrinsic first-order field.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discretization geometry: a line of `N` nodes (`d = N`) or an `N x N`
/// grid (`d = N^2`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "n", rename_all = "snake_case")]
pub enum Geometry {
    Line(usize),
    Grid(usize),
}

impl Geometry {
    pub fn dim(&self) -> usize {
        match *self {
            Geometry::Line(n) => n,
            Geometry::Grid(n) => n * n,
        }
    }

    /// Number of difference rows: `d` in 1D, `2d` in 2D.
    pub fn difference_count(&self) -> usize {
        match *self {
            Geometry::Line(n) => n,
            Geometry::Grid(n) => 2 * n * n,
        }
    }
}

/// Sparse first-order difference operator `L` (zero boundary condition).
#[derive(Clone, Debug)]
pub struct DifferenceOperator {
    geometry: Geometry,
    d: usize,
    k: usize,
}

pub fn build_difference_operator(geometry: Geometry) -> DifferenceOperator {
    DifferenceOperator {
        geometry,
        d: geometry.dim(),
        k: geometry.difference_count(),
    }
}

impl DifferenceOperator {
    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// Number of columns (unknowns).
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of rows (differences).
    pub fn k(&self) -> usize {
        self.k
    }

    /// `u = L x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.d);
        assert_eq!(out.len(), self.k);
        match self.geometry {
            Geometry::Line(n) => {
                out[0] = x[0];
                for i in 1..n {
                    out[i] = x[i] - x[i - 1];
                }
            }
            Geometry::Grid(n) => {
                let d = self.d;
                for r in 0..n {
                    for c in 0..n {
                        let p = r * n + c;
                        out[p] = x[p] - if c > 0 { x[p - 1] } else { 0.0 };
                        out[d + p] = x[p] - if r > 0 { x[p - n] } else { 0.0 };
                    }
                }
            }
        }
    }

    /// `v = Lᵀ u`.
    pub fn apply_transpose(&self, u: &[f64], out: &mut [f64]) {
        assert_eq!(u.len(), self.k);
        assert_eq!(out.len(), self.d);
        match self.geometry {
            Geometry::Line(n) => {
                // (Dᵀu)_j = u_j - u_{j+1}, with u_n = 0.
                for j in 0..n {
                    out[j] = u[j] - if j + 1 < n { u[j + 1] } else { 0.0 };
                }
            }
            Geometry::Grid(n) => {
                let d = self.d;
                let (uh, uv) = u.split_at(d);
                for r in 0..n {
                    for c in 0..n {
                        let p = r * n + c;
                        let mut v = uh[p] + uv[p];
                        if c + 1 < n {
                            v -= uh[p + 1];
                        }
                        if r + 1 < n {
                            v -= uv[p + n];
                        }
                        out[p] = v;
                    }
                }
            }
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        self.apply(x, &mut out);
        out
    }

    pub fn apply_transpose_vec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.apply_transpose(u, &mut out);
        out
    }

    /// Nonzero entries of row `i` as `(column, value)`, at most two per row.
    pub fn row(&self, i: usize) -> [(usize, f64); 2] {
        assert!(i < self.k);
        match self.geometry {
            Geometry::Line(_) => {
                if i == 0 {
                    [(0, 1.0), (0, 0.0)]
                } else {
                    [(i, 1.0), (i - 1, -1.0)]
                }
            }
            Geometry::Grid(n) => {
                let d = self.d;
                if i < d {
                    let c = i % n;
                    if c == 0 {
                        [(i, 1.0), (i, 0.0)]
                    } else {
                        [(i, 1.0), (i - 1, -1.0)]
                    }
                } else {
                    let p = i - d;
                    let r = p / n;
                    if r == 0 {
                        [(p, 1.0), (p, 0.0)]
                    } else {
                        [(p, 1.0), (p - n, -1.0)]
                    }
                }
            }
        }
    }

    /// Dense representation, for small-scale oracle checks.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.k, self.d);
        for i in 0..self.k {
            for (j, v) in self.row(i) {
                if v != 0.0 {
                    m[(i, j)] = v;
                }
            }
        }
        m
    }
}

/// Symmetric sparse matrix in compressed row form.
#[derive(Clone, Debug)]
pub struct SparseSym {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSym {
    fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        SparseSym {
            dim,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `r` as `(column, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// All stored entries in coordinate `(row, col, value)` form.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(out.len(), self.dim);
        for r in 0..self.dim {
            out[r] = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|r| {
                self.row(r)
                    .find(|&(c, _)| c == r)
                    .map(|(_, v)| v)
                    .unwrap_or(0.0)
            })
            .collect()
    }

    /// Adds `self` (scaled) into a dense matrix.
    pub fn add_into_dense(&self, dense: &mut DMatrix<f64>, scale: f64) {
        for (r, c, v) in self.triplets() {
            dense[(r, c)] += scale * v;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        self.add_into_dense(&mut m, 1.0);
        m
    }
}

/// Prior precision `Λ = Lᵀ W L` with `W = diag(1/(τ² w²_i))`.
#[derive(Clone, Debug)]
pub struct PrecisionMatrix {
    pub lambda: SparseSym,
    pub tau2: f64,
    pub w2: Vec<f64>,
}

/// Assembles `Λ = Lᵀ W L` sparsely, without a dense intermediate.
pub fn assemble_precision(
    l: &DifferenceOperator,
    tau2: f64,
    w2: &[f64],
) -> Result<PrecisionMatrix> {
    let weights = precision_weights(tau2, w2, l.k())?;
    let mut triplets = Vec::with_capacity(4 * l.k());
    for i in 0..l.k() {
        let row = l.row(i);
        let wi = weights[i];
        for &(a, va) in row.iter().filter(|&&(_, v)| v != 0.0) {
            for &(b, vb) in row.iter().filter(|&&(_, v)| v != 0.0) {
                triplets.push((a, b, wi * va * vb));
            }
        }
    }
    Ok(PrecisionMatrix {
        lambda: SparseSym::from_triplets(l.dim(), triplets),
        tau2,
        w2: w2.to_vec(),
    })
}

/// The diagonal `W = 1/(τ² w²_i)` as a vector; errors on nonpositive scales.
pub fn precision_weights(tau2: f64, w2: &[f64], k: usize) -> Result<Vec<f64>> {
    if !(tau2 > 0.0) {
        return Err(Error::invalid(format!("tau2 must be > 0, got {tau2}")));
    }
    if w2.len() != k {
        return Err(Error::dims(format!("w2 has length {}, expected {k}", w2.len())));
    }
    if let Some(bad) = w2.iter().find(|&&w| !(w > 0.0)) {
        return Err(Error::invalid(format!("w2 components must be > 0, got {bad}")));
    }
    Ok(w2.iter().map(|&w| 1.0 / (tau2 * w)).collect())
}

/// Diagonal of `Λ = Lᵀ W L` without assembling the matrix.
pub fn precision_diagonal(l: &DifferenceOperator, weights: &[f64]) -> Vec<f64> {
    let mut diag = vec![0.0; l.dim()];
    for i in 0..l.k() {
        for (j, v) in l.row(i) {
            diag[j] += weights[i] * v * v;
        }
    }
    diag
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn line_constant_vector_hits_boundary_row_only() {
        let l = build_difference_operator(Geometry::Line(4));
        assert_eq!(l.apply_vec(&[1.0, 1.0, 1.0, 1.0]), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn line_direct_differences() {
        let l = build_difference_operator(Geometry::Line(3));
        assert_eq!(l.apply_vec(&[0.0, 2.0, 5.0]), vec![0.0, 2.0, 3.0]);
    }

    #[test]
    fn grid_matches_index_loop_oracle() {
        let n = 3;
        let l = build_difference_operator(Geometry::Grid(n));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let u = l.apply_vec(&x);
        // Index-level loop over the 3x3 image: horizontal then vertical diffs.
        let at = |r: usize, c: usize| x[r * n + c];
        let mut expect = Vec::new();
        for r in 0..n {
            for c in 0..n {
                expect.push(at(r, c) - if c > 0 { at(r, c - 1) } else { 0.0 });
            }
        }
        for r in 0..n {
            for c in 0..n {
                expect.push(at(r, c) - if r > 0 { at(r - 1, c) } else { 0.0 });
            }
        }
        assert_eq!(u, expect);
    }

    #[test]
    fn grid_constant_vector_nonzero_only_on_boundary_rows() {
        let n = 4;
        let l = build_difference_operator(Geometry::Grid(n));
        let u = l.apply_vec(&vec![1.0; n * n]);
        for (i, &v) in u.iter().enumerate() {
            let is_boundary = if i < n * n { i % n == 0 } else { (i - n * n) / n == 0 };
            if is_boundary {
                assert_eq!(v, 1.0, "row {i}");
            } else {
                assert_eq!(v, 0.0, "row {i}");
            }
        }
    }

    #[test]
    fn transpose_agrees_with_dense() {
        for geometry in [Geometry::Line(5), Geometry::Grid(3)] {
            let l = build_difference_operator(geometry);
            let dense = l.to_dense();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let u: Vec<f64> = (0..l.k()).map(|_| rng.random::<f64>() - 0.5).collect();
            let got = l.apply_transpose_vec(&u);
            let expect = dense.transpose() * DVector::from_column_slice(&u);
            for j in 0..l.dim() {
                assert!((got[j] - expect[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn precision_line3_identity_weights() {
        let l = build_difference_operator(Geometry::Line(3));
        let p = assemble_precision(&l, 1.0, &[1.0, 1.0, 1.0]).unwrap();
        let dense = p.lambda.to_dense();
        let expect = [[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        for r in 0..3 {
            for c in 0..3 {
                assert!((dense[(r, c)] - expect[r][c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn precision_scales_inversely_with_tau2() {
        let l = build_difference_operator(Geometry::Line(6));
        let w2: Vec<f64> = (1..=6).map(|i| 0.3 * i as f64).collect();
        let p1 = assemble_precision(&l, 1.0, &w2).unwrap();
        let pc = assemble_precision(&l, 4.0, &w2).unwrap();
        for ((_, _, a), (_, _, b)) in p1.lambda.triplets().zip(pc.lambda.triplets()) {
            assert!((a / 4.0 - b).abs() < 1e-15);
        }
    }

    #[test]
    fn precision_matches_dense_oracle_on_grid() {
        let l = build_difference_operator(Geometry::Grid(3));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w2: Vec<f64> = (0..l.k()).map(|_| 0.2 + rng.random::<f64>()).collect();
        let tau2 = 0.7;
        let p = assemble_precision(&l, tau2, &w2).unwrap();
        // Dense oracle: form Lᵀ W L with dense matrices.
        let ld = l.to_dense();
        let w = DMatrix::from_diagonal(&DVector::from_iterator(
            l.k(),
            w2.iter().map(|&w| 1.0 / (tau2 * w)),
        ));
        let expect = ld.transpose() * w * ld;
        let got = p.lambda.to_dense();
        let err = (&got - &expect).abs().max();
        assert!(err < 1e-12, "max abs deviation {err}");
    }

    #[test]
    fn quadratic_form_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for geometry in [Geometry::Line(8), Geometry::Grid(4)] {
            let l = build_difference_operator(geometry);
            let w2: Vec<f64> = (0..l.k()).map(|_| 0.1 + rng.random::<f64>()).collect();
            let tau2 = 1.3;
            let p = assemble_precision(&l, tau2, &w2).unwrap();
            for _ in 0..5 {
                let x: Vec<f64> = (0..l.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
                let mut lx = vec![0.0; l.k()];
                l.apply(&x, &mut lx);
                let direct: f64 = lx
                    .iter()
                    .zip(&w2)
                    .map(|(&u, &w)| u * u / (tau2 * w))
                    .sum();
                let mut mx = vec![0.0; l.dim()];
                p.lambda.matvec(&x, &mut mx);
                let through: f64 = x.iter().zip(&mx).map(|(a, b)| a * b).sum();
                assert!(
                    (direct - through).abs() < 1e-12 * direct.abs().max(1.0),
                    "{direct} vs {through}"
                );
            }
        }
    }

    #[test]
    fn zero_boundary_precision_is_full_rank() {
        for d in [4usize, 16, 32] {
            let l = build_difference_operator(Geometry::Line(d));
            let p = assemble_precision(&l, 1.0, &vec![1.0; d]).unwrap();
            let eig = p.lambda.to_dense().symmetric_eigen();
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min > 0.0, "d={d} min eigenvalue {min}");
        }
    }

    #[test]
    fn sparsity_bounds() {
        let l1 = build_difference_operator(Geometry::Line(30));
        let p1 = assemble_precision(&l1, 1.0, &vec![1.0; 30]).unwrap();
        assert!(p1.lambda.nnz() <= 3 * 30);

        let l2 = build_difference_operator(Geometry::Grid(6));
        let p2 = assemble_precision(&l2, 1.0, &vec![1.0; l2.k()]).unwrap();
        assert!(p2.lambda.nnz() <= 5 * 36);
    }

    #[test]
    fn rejects_nonpositive_scales() {
        let l = build_difference_operator(Geometry::Line(3));
        assert!(assemble_precision(&l, 0.0, &[1.0, 1.0, 1.0]).is_err());
        assert!(assemble_precision(&l, 1.0, &[1.0, -1.0, 1.0]).is_err());
        assert!(assemble_precision(&l, 1.0, &[1.0, 1.0]).is_err());
    }
}
