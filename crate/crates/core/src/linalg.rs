//! Dense symmetric linear-algebra kernel.
//!
//! Everything here works on small dense `f64` matrices (dimension up to a few
//! thousand). The generalized eigensolver reduces a symmetric-definite pencil
//! to a standard symmetric problem through the Cholesky factor of the
//! right-hand matrix and then back-transforms.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry allowed when constructing a [`SymMatrix`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative pivot floor used by [`check_spd`].
pub const SPD_PIVOT_TOL: f64 = 1e-12;
/// Relative gap below which adjacent eigenvalues share an eigenspace.
pub const EIGENSPACE_TOL: f64 = 1e-9;
/// Components smaller than this are skipped by the sign convention.
const SIGN_TOL: f64 = 1e-9;

/// A real symmetric matrix, stored symmetrized as `(X + Xᵀ)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates squareness and symmetry (relative to the largest entry) and
    /// stores the symmetrized matrix.
    pub fn new(name: &'static str, m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimMismatch(format!(
                "`{name}` is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = max_abs(&m);
        let asymmetry = max_abs(&(&m - m.transpose()));
        if asymmetry > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric { name, asymmetry });
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrizes without checking. For matrices that are symmetric by
    /// construction up to rounding.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetrized() needs a square matrix");
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Quadratic form `hᵀ·self·h`.
    pub fn quad(&self, h: &DVector<f64>) -> f64 {
        h.dot(&(&self.0 * h))
    }

    /// Principal submatrix on `idx` (rows and columns).
    pub fn select(&self, idx: &[usize]) -> Self {
        Self(self.0.select_rows(idx).select_columns(idx))
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Lower Cholesky factor, or `None` when a pivot falls below
/// `SPD_PIVOT_TOL · max diagonal`.
pub fn cholesky_lower(m: &SymMatrix) -> Option<DMatrix<f64>> {
    let n = m.dim();
    let max_diag = (0..n).map(|i| m[(i, i)]).fold(0.0_f64, f64::max);
    if n == 0 {
        return Some(DMatrix::zeros(0, 0));
    }
    if max_diag <= 0.0 {
        return None;
    }
    let floor = SPD_PIVOT_TOL * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > floor) {
            return None;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// True iff a Cholesky factorization succeeds with every pivot above
/// `1e-12 · max diagonal entry`.
pub fn check_spd(m: &SymMatrix) -> bool {
    cholesky_lower(m).is_some()
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn sym_eigenvalues(m: &SymMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.as_matrix().clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// PSD check relative to the spectral scale: `min eig ≥ −rel_tol · max |eig|`.
pub fn is_psd(m: &SymMatrix, rel_tol: f64) -> bool {
    let ev = sym_eigenvalues(m);
    let scale = ev.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    ev.last().is_none_or(|&min| min >= -rel_tol * scale)
}

/// Solution of a symmetric-definite pencil `lhs·X = rhs·X·diag(resolutions)`.
#[derive(Debug, Clone)]
pub struct GeneralizedEigen {
    /// Columns are eigenvectors.
    pub directions: DMatrix<f64>,
    /// Descending eigenvalues; equal within each eigenspace.
    pub resolutions: DVector<f64>,
    /// Partition of column indices into groups of equal eigenvalues.
    pub eigenspaces: Vec<Vec<usize>>,
}

impl GeneralizedEigen {
    pub fn dim(&self) -> usize {
        self.resolutions.len()
    }

    /// Eigenspace projectors `P_k = Σ_{j∈k} x_j x_jᵀ · metric`, where `metric`
    /// is the matrix under which the directions are orthonormal. These do not
    /// depend on the basis chosen inside a degenerate eigenspace.
    pub fn projectors(&self, metric: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        self.eigenspaces
            .iter()
            .map(|space| {
                let cols = self.directions.select_columns(space);
                &cols * cols.transpose() * metric
            })
            .collect()
    }

    /// The eigenspace that column `j` belongs to.
    pub fn eigenspace_of(&self, j: usize) -> usize {
        self.eigenspaces
            .iter()
            .position(|s| s.contains(&j))
            .expect("every column belongs to an eigenspace")
    }
}

/// Solves `lhs·X = rhs·X·Λ` for symmetric `lhs` and SPD `rhs`, with columns
/// normalized so that `Xᵀ·rhs·X = I`. Eigenvalues are returned descending.
///
/// This is the form used for canonical analysis where `rhs` is a prior
/// variance: each direction then has unit prior variance and `lhs` may be
/// singular.
pub fn gen_eig_rhs_normalized(lhs: &SymMatrix, rhs: &SymMatrix) -> Result<GeneralizedEigen> {
    if lhs.dim() != rhs.dim() {
        return Err(Error::DimMismatch(format!(
            "pencil sides are {} and {}",
            lhs.dim(),
            rhs.dim()
        )));
    }
    let l = cholesky_lower(rhs).ok_or(Error::NotSpd("rhs"))?;
    let n = lhs.dim();

    // reduced = L⁻¹ · lhs · L⁻ᵀ
    let left = l
        .solve_lower_triangular(lhs.as_matrix())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let reduced = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let reduced = SymMatrix::symmetrized(reduced);

    let eig = SymmetricEigen::new(reduced.into_matrix());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let y = eig.eigenvectors.select_columns(&order);
    let lt = l.transpose();
    let mut x = lt
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Numerical("back-transform failed".into()))?;

    let eigenspaces = merge_eigenspaces(&mut values);
    apply_sign_convention(&mut x);
    Ok(GeneralizedEigen {
        directions: x,
        resolutions: values,
        eigenspaces,
    })
}

/// Solves `lhs·X = rhs·X·Λ` for an SPD pencil, normalized so that
/// `Xᵀ·lhs·X = I` (hence `Xᵀ·rhs·X·Λ = I`). Eigenvalues descending; the sign of
/// each column is fixed so its first component above `1e-9` in magnitude is
/// positive.
pub fn gen_eig(lhs: &SymMatrix, rhs: &SymMatrix) -> Result<GeneralizedEigen> {
    if lhs.dim() != rhs.dim() {
        return Err(Error::DimMismatch(format!(
            "pencil sides are {} and {}",
            lhs.dim(),
            rhs.dim()
        )));
    }
    if !check_spd(lhs) {
        return Err(Error::NotSpd("lhs"));
    }
    let mut eig = gen_eig_rhs_normalized(lhs, rhs)?;
    for (j, &lambda) in eig.resolutions.iter().enumerate() {
        if !(lambda > 0.0) {
            return Err(Error::Numerical(format!(
                "non-positive eigenvalue {lambda:e} of an SPD pencil"
            )));
        }
        let scale = lambda.sqrt().recip();
        eig.directions.column_mut(j).scale_mut(scale);
    }
    Ok(eig)
}

/// Groups adjacent (sorted, descending) eigenvalues whose gap is within
/// `EIGENSPACE_TOL` of the spectral scale, replacing each group by its mean.
fn merge_eigenspaces(values: &mut DVector<f64>) -> Vec<Vec<usize>> {
    let n = values.len();
    let scale = values.iter().fold(0.0_f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
    let mut spaces: Vec<Vec<usize>> = Vec::new();
    for j in 0..n {
        match spaces.last_mut() {
            Some(space) if (values[space[space.len() - 1]] - values[j]).abs() <= EIGENSPACE_TOL * scale => {
                space.push(j)
            }
            _ => spaces.push(vec![j]),
        }
    }
    for space in &spaces {
        let mean = space.iter().map(|&j| values[j]).sum::<f64>() / space.len() as f64;
        for &j in space {
            values[j] = mean;
        }
    }
    spaces
}

fn apply_sign_convention(x: &mut DMatrix<f64>) {
    for mut col in x.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|v| v.abs() > SIGN_TOL) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Moore–Penrose pseudoinverse through the symmetric eigendecomposition.
/// Eigenvalues with `|σ| ≤ dim · ε · max|σ|` are treated as zero.
pub fn pinv(m: &SymMatrix) -> SymMatrix {
    let n = m.dim();
    if n == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    let smax = eig.eigenvalues.amax();
    let cutoff = n as f64 * f64::EPSILON * smax;
    let inv = eig
        .eigenvalues
        .map(|s| if s.abs() > cutoff { s.recip() } else { 0.0 });
    let q = &eig.eigenvectors;
    SymMatrix::symmetrized(q * DMatrix::from_diagonal(&inv) * q.transpose())
}

/// Kronecker product; block `(g, h)` of the result is `a[(g, h)] · b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[(i, j)];
            if aij != 0.0 {
                out.view_mut((i * rb, j * cb), (rb, cb)).copy_from(&(b * aij));
            }
        }
    }
    out
}

/// Block-diagonal direct sum of the given matrices.
pub fn direct_sum(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Orthonormal Helmert matrix of order `p`: constant first row, then row
/// `t + 1` proportional to `x_{t+1} − mean(x_1, …, x_t)`.
pub fn helmert(p: usize) -> DMatrix<f64> {
    assert!(p >= 1, "helmert order must be positive");
    let mut h = DMatrix::zeros(p, p);
    let c0 = (p as f64).sqrt().recip();
    for j in 0..p {
        h[(0, j)] = c0;
    }
    for t in 1..p {
        let tf = t as f64;
        let norm = ((tf + 1.0) / tf).sqrt();
        for j in 0..t {
            h[(t, j)] = -1.0 / tf / norm;
        }
        h[(t, t)] = 1.0 / norm;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrized(g.transpose() * &g + DMatrix::identity(n, n) * 0.5)
    }

    fn frob(m: &DMatrix<f64>) -> f64 {
        m.norm()
    }

    #[test]
    fn spd_checks() {
        assert!(check_spd(&SymMatrix::identity(3)));
        assert!(!check_spd(&SymMatrix::from_diagonal(&[1.0, -1.0])));
        assert!(!check_spd(&SymMatrix::from_diagonal(&[1.0, 0.0])));
    }

    #[test]
    fn rejects_asymmetric_input() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(SymMatrix::new("m", m), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn diagonal_pencil() {
        let lhs = SymMatrix::from_diagonal(&[1.0, 0.2]);
        let rhs = SymMatrix::from_diagonal(&[2.0, 1.0]);
        let eig = gen_eig(&lhs, &rhs).unwrap();
        assert_relative_eq!(eig.resolutions[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(eig.resolutions[1], 0.2, epsilon = 1e-14);
        let xtlx = eig.directions.transpose() * lhs.as_matrix() * &eig.directions;
        assert!(frob(&(xtlx - DMatrix::identity(2, 2))) < 1e-12);
    }

    #[test]
    fn pencil_residual_and_normalization_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..8 {
            let l = random_spd(&mut rng, n);
            let r = random_spd(&mut rng, n);
            let eig = gen_eig(&l, &r).unwrap();
            let x = &eig.directions;
            let lam = DMatrix::from_diagonal(&eig.resolutions);
            let resid = frob(&(l.as_matrix() * x - r.as_matrix() * x * lam)) / frob(l.as_matrix());
            assert!(resid < 1e-8, "residual {resid}");
            let xtlx = x.transpose() * l.as_matrix() * x;
            assert!(frob(&(xtlx - DMatrix::identity(n, n))) < 1e-8);
            for w in eig.resolutions.as_slice().windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn degenerate_eigenvalues_are_merged() {
        let d = SymMatrix::identity(4);
        let c = SymMatrix::symmetrized(DMatrix::identity(4, 4) * 0.5);
        let eig = gen_eig(&c, &d).unwrap();
        assert_eq!(eig.eigenspaces, vec![vec![0, 1, 2, 3]]);
        for v in eig.resolutions.iter() {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn projectors_are_invariant_under_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5;
        // lhs with a repeated eigenvalue relative to rhs
        let r = random_spd(&mut rng, n);
        let q = helmert(n);
        let spectrum = DMatrix::from_diagonal(&DVector::from_vec(vec![0.9, 0.9, 0.5, 0.2, 0.2]));
        let chol = cholesky_lower(&r).unwrap();
        let l = SymMatrix::symmetrized(&chol * q.transpose() * spectrum * &q * chol.transpose());
        let eig = gen_eig(&l, &r).unwrap();
        assert_eq!(eig.eigenspaces.len(), 3);

        let perm = [3usize, 0, 4, 1, 2];
        let p = DMatrix::from_fn(n, n, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
        let lp = SymMatrix::symmetrized(&p * l.as_matrix() * p.transpose());
        let rp = SymMatrix::symmetrized(&p * r.as_matrix() * p.transpose());
        let eigp = gen_eig(&lp, &rp).unwrap();
        let a = eig.projectors(l.as_matrix());
        let b = eigp.projectors(lp.as_matrix());
        for (pa, pb) in a.iter().zip(&b) {
            let back = p.transpose() * pb * &p;
            assert!(frob(&(pa - back)) < 1e-8);
        }
    }

    #[test]
    fn pinv_simple_cases() {
        let i4 = SymMatrix::identity(4);
        assert!(frob(&(pinv(&i4).as_matrix() - i4.as_matrix())) < 1e-14);
        let d = pinv(&SymMatrix::from_diagonal(&[2.0, 0.0]));
        assert_relative_eq!(d[(0, 0)], 0.5, epsilon = 1e-14);
        assert_eq!(d[(1, 1)], 0.0);
    }

    fn penrose_residual(m: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
        let scale = frob(m).max(frob(p)).max(1.0);
        let r1 = frob(&(m * p * m - m)) / frob(m).max(1e-300);
        let r2 = frob(&(p * m * p - p)) / frob(p).max(1e-300);
        let r3 = frob(&((m * p).transpose() - m * p));
        let r4 = frob(&((p * m).transpose() - p * m));
        r1.max(r2).max(r3 / scale).max(r4 / scale)
    }

    #[test]
    fn pinv_penrose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..100 {
            let n = 2 + case % 5;
            let m = if case % 2 == 0 {
                random_spd(&mut rng, n)
            } else {
                let rank = 1 + case % (n - 1);
                let g = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
                SymMatrix::symmetrized(&g * g.transpose())
            };
            let p = pinv(&m);
            let r = penrose_residual(m.as_matrix(), p.as_matrix());
            assert!(r < 1e-10, "case {case}: residual {r}");
        }
        let g = random_spd(&mut rng, 5);
        let prod = pinv(&g).as_matrix() * g.as_matrix();
        assert!(frob(&(prod - DMatrix::identity(5, 5))) < 1e-10);
    }

    #[test]
    fn kron_cases() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kron(&DMatrix::identity(2, 2), &b);
        assert_eq!(k, direct_sum(&[b.clone(), b.clone()]));
        let k2 = kron(
            &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])),
            &DMatrix::identity(2, 2),
        );
        assert_eq!(k2, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0, 3.0, 3.0])));
    }

    #[test]
    fn kron_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut r = |rows, cols| DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let (a, b, c, d) = (r(2, 3), r(3, 2), r(3, 4), r(2, 2));
        let lhs = kron(&a, &b) * kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        assert!(frob(&(&lhs - &rhs)) <= 1e-10 * frob(&rhs));
    }

    #[test]
    fn helmert_rows() {
        let h2 = helmert(2);
        assert_relative_eq!(h2[(1, 0)], -h2[(1, 1)], epsilon = 1e-15);
        assert!(h2[(1, 1)] > 0.0);
        let h3 = helmert(3);
        assert_relative_eq!(h3[(2, 0)] / h3[(2, 2)], -0.5, epsilon = 1e-15);
        assert_relative_eq!(h3[(2, 1)] / h3[(2, 2)], -0.5, epsilon = 1e-15);
        let h5 = helmert(5);
        assert!(frob(&(&h5 * h5.transpose() - DMatrix::identity(5, 5))) < 1e-14);
        for t in 1..5 {
            for j in (t + 1)..5 {
                assert_eq!(h5[(t, j)], 0.0);
            }
        }
    }
}
