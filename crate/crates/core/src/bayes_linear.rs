//! Generic Bayes linear adjustment of a collection `B` by observed data `D`.
//!
//! Adjusted expectation and variance use the Moore–Penrose inverse of
//! `Var(D)`. Canonical directions are obtained from the symmetric pencil
//! `Cov(B,D)·Var†(D)·Cov(D,B) · h = λ · Var(B) · h`, which has the same
//! spectrum and eigenvectors as the (non-symmetric) resolution transform
//! `Var⁻¹(B)·Cov(B,D)·Var†(D)·Cov(D,B)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{gen_eig_rhs_normalized, is_psd, pinv, SymMatrix};

/// Resolutions may stray this far outside `[0, 1]` before being treated as a
/// numerical failure rather than rounding.
pub const RESOLUTION_TOL: f64 = 1e-8;

/// Prior means, variances and covariances over `B ∪ D`.
#[derive(Debug, Clone)]
pub struct SecondOrderBeliefs {
    pub mean_b: DVector<f64>,
    pub mean_d: DVector<f64>,
    pub var_b: SymMatrix,
    pub var_d: SymMatrix,
    pub cov_bd: DMatrix<f64>,
}

/// Canonical directions (columns, coefficient vectors over `B`, unit prior
/// variance) and their resolutions, descending.
#[derive(Debug, Clone)]
pub struct CanonicalStructure {
    pub directions: DMatrix<f64>,
    pub resolutions: DVector<f64>,
    pub eigenspaces: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct AdjustedBeliefs {
    pub adjusted_mean: DVector<f64>,
    pub adjusted_var: SymMatrix,
    pub resolution_transform: DMatrix<f64>,
    pub canonical: CanonicalStructure,
}

/// One term of a resolution partition: `Corr²(Y, Y_j)` and `λ_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionTerm {
    pub weight: f64,
    pub resolution: f64,
}

impl SecondOrderBeliefs {
    pub fn new(
        mean_b: DVector<f64>,
        mean_d: DVector<f64>,
        var_b: SymMatrix,
        var_d: SymMatrix,
        cov_bd: DMatrix<f64>,
    ) -> Result<Self> {
        let (r, s) = (mean_b.len(), mean_d.len());
        if var_b.dim() != r || var_d.dim() != s || cov_bd.shape() != (r, s) {
            return Err(Error::DimMismatch(format!(
                "B has {r} means and {}x{} variance, D has {s} means and {}x{} variance, Cov(B,D) is {}x{}",
                var_b.dim(),
                var_b.dim(),
                var_d.dim(),
                var_d.dim(),
                cov_bd.nrows(),
                cov_bd.ncols()
            )));
        }
        Ok(Self {
            mean_b,
            mean_d,
            var_b,
            var_d,
            cov_bd,
        })
    }

    pub fn dim_b(&self) -> usize {
        self.mean_b.len()
    }

    pub fn dim_d(&self) -> usize {
        self.mean_d.len()
    }

    /// The stacked `(r+s)×(r+s)` covariance of `(B, D)`.
    pub fn joint_covariance(&self) -> SymMatrix {
        let (r, s) = (self.dim_b(), self.dim_d());
        let mut j = DMatrix::zeros(r + s, r + s);
        j.view_mut((0, 0), (r, r)).copy_from(self.var_b.as_matrix());
        j.view_mut((r, r), (s, s)).copy_from(self.var_d.as_matrix());
        j.view_mut((0, r), (r, s)).copy_from(&self.cov_bd);
        j.view_mut((r, 0), (s, r)).copy_from(&self.cov_bd.transpose());
        SymMatrix::symmetrized(j)
    }

    /// Joint covariance PSD to `1e-8` of its spectral scale.
    pub fn is_coherent(&self) -> bool {
        is_psd(&self.joint_covariance(), 1e-8)
    }

    /// `Cov(B,D)·Var†(D)·Cov(D,B)`: the variance explained by `D`.
    pub fn explained_variance(&self) -> SymMatrix {
        let gain = &self.cov_bd * pinv(&self.var_d).as_matrix();
        SymMatrix::symmetrized(&gain * self.cov_bd.transpose())
    }

    pub fn adjusted_mean(&self, observed_d: &DVector<f64>) -> Result<DVector<f64>> {
        if observed_d.len() != self.dim_d() {
            return Err(Error::DimMismatch(format!(
                "observed data has length {}, expected {}",
                observed_d.len(),
                self.dim_d()
            )));
        }
        let gain = &self.cov_bd * pinv(&self.var_d).as_matrix();
        Ok(&self.mean_b + gain * (observed_d - &self.mean_d))
    }

    pub fn adjusted_variance(&self) -> SymMatrix {
        SymMatrix::symmetrized(self.var_b.as_matrix() - self.explained_variance().as_matrix())
    }

    /// `Var⁻¹(B)·Cov(B,D)·Var†(D)·Cov(D,B)`, with `Var⁻¹(B)` taken as the
    /// pseudoinverse.
    pub fn resolution_transform(&self) -> DMatrix<f64> {
        pinv(&self.var_b).as_matrix() * self.explained_variance().as_matrix()
    }

    /// Canonical directions and resolutions. Requires `Var(B)` positive
    /// definite.
    pub fn canonical(&self) -> Result<CanonicalStructure> {
        let eig = gen_eig_rhs_normalized(&self.explained_variance(), &self.var_b)
            .map_err(|e| match e {
                Error::NotSpd(_) => Error::NotSpd("Var(B)"),
                other => other,
            })?;
        let resolutions = eig
            .resolutions
            .iter()
            .map(|&l| clamp_resolution(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(CanonicalStructure {
            directions: eig.directions,
            resolutions: DVector::from_vec(resolutions),
            eigenspaces: eig.eigenspaces,
        })
    }

    /// Full adjustment: adjusted mean and variance, resolution transform and
    /// canonical structure.
    pub fn adjust(&self, observed_d: &DVector<f64>) -> Result<AdjustedBeliefs> {
        Ok(AdjustedBeliefs {
            adjusted_mean: self.adjusted_mean(observed_d)?,
            adjusted_var: self.adjusted_variance(),
            resolution_transform: self.resolution_transform(),
            canonical: self.canonical()?,
        })
    }

    fn prior_variance_of(&self, functional: &DVector<f64>) -> Result<f64> {
        if functional.len() != self.dim_b() {
            return Err(Error::DimMismatch(format!(
                "functional has length {}, expected {}",
                functional.len(),
                self.dim_b()
            )));
        }
        let v = self.var_b.quad(functional);
        if !(v > 0.0) || v <= 1e-14 * self.var_b.amax() * functional.norm_squared() {
            return Err(Error::ZeroPriorVariance);
        }
        Ok(v)
    }

    /// `1 − Var_D(hᵀB)/Var(hᵀB)`.
    pub fn resolution_of(&self, functional: &DVector<f64>) -> Result<f64> {
        let prior = self.prior_variance_of(functional)?;
        let explained = self.explained_variance().quad(functional);
        clamp_resolution(explained / prior)
    }

    /// `Corr²(Y, Y_j)` against each canonical direction, paired with `λ_j`.
    pub fn resolution_partition(&self, functional: &DVector<f64>) -> Result<Vec<PartitionTerm>> {
        let prior = self.prior_variance_of(functional)?;
        let canon = self.canonical()?;
        let cov = canon.directions.transpose() * (self.var_b.as_matrix() * functional);
        Ok(cov
            .iter()
            .zip(canon.resolutions.iter())
            .map(|(&c, &resolution)| PartitionTerm {
                weight: c * c / prior,
                resolution,
            })
            .collect())
    }

    /// Trace of the resolution transform.
    pub fn resolved_uncertainty(&self) -> f64 {
        self.resolution_transform().trace()
    }
}

fn clamp_resolution(l: f64) -> Result<f64> {
    if !(-RESOLUTION_TOL..=1.0 + RESOLUTION_TOL).contains(&l) {
        return Err(Error::Numerical(format!("resolution {l} outside [0, 1]")));
    }
    Ok(l.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        g.transpose() * &g + DMatrix::identity(n, n) * 0.3
    }

    fn split(joint: &DMatrix<f64>, r: usize, rng: &mut ChaCha8Rng) -> SecondOrderBeliefs {
        let n = joint.nrows();
        let s = n - r;
        SecondOrderBeliefs::new(
            DVector::from_fn(r, |_, _| rng.random_range(-2.0..2.0)),
            DVector::from_fn(s, |_, _| rng.random_range(-2.0..2.0)),
            SymMatrix::symmetrized(joint.view((0, 0), (r, r)).into_owned()),
            SymMatrix::symmetrized(joint.view((r, r), (s, s)).into_owned()),
            joint.view((0, r), (r, s)).into_owned(),
        )
        .unwrap()
    }

    #[test]
    fn uncorrelated_data_changes_nothing() {
        let b = SecondOrderBeliefs::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![0.0]),
            SymMatrix::from_diagonal(&[2.0, 3.0]),
            SymMatrix::from_diagonal(&[1.0]),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        let adj = b.adjust(&DVector::from_vec(vec![5.0])).unwrap();
        assert_eq!(adj.adjusted_mean, b.mean_b);
        assert_eq!(adj.adjusted_var, b.var_b);
        assert!(adj.canonical.resolutions.iter().all(|&l| l == 0.0));
        assert_eq!(b.resolution_of(&DVector::from_vec(vec![1.0, -1.0])).unwrap(), 0.0);
        assert_eq!(b.resolved_uncertainty(), 0.0);
    }

    #[test]
    fn self_adjustment_resolves_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_spd(&mut rng, 3);
        let b = SecondOrderBeliefs::new(
            DVector::zeros(3),
            DVector::zeros(3),
            SymMatrix::symmetrized(v.clone()),
            SymMatrix::symmetrized(v.clone()),
            v,
        )
        .unwrap();
        let adj = b.adjust(&DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(adj.adjusted_var.amax() < 1e-10);
        for &l in adj.canonical.resolutions.iter() {
            assert_relative_eq!(l, 1.0, epsilon = 1e-10);
        }
        assert_relative_eq!(b.resolved_uncertainty(), 3.0, epsilon = 1e-10);
        assert!((&adj.adjusted_mean - DVector::from_vec(vec![1.0, 2.0, 3.0])).amax() < 1e-10);
    }

    #[test]
    fn matches_straight_line_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let joint = random_spd(&mut rng, 4);
        let b = split(&joint, 2, &mut rng);
        let d = DVector::from_vec(vec![0.7, -1.3]);
        let adj = b.adjust(&d).unwrap();

        // direct 2x2 inverse by cofactors
        let vd = b.var_d.as_matrix();
        let det = vd[(0, 0)] * vd[(1, 1)] - vd[(0, 1)] * vd[(1, 0)];
        let inv = DMatrix::from_row_slice(2, 2, &[vd[(1, 1)] / det, -vd[(0, 1)] / det, -vd[(1, 0)] / det, vd[(0, 0)] / det]);
        let mean = &b.mean_b + &b.cov_bd * &inv * (&d - &b.mean_d);
        let var = b.var_b.as_matrix() - &b.cov_bd * &inv * b.cov_bd.transpose();
        assert!((adj.adjusted_mean - mean).amax() < 1e-12);
        assert!((adj.adjusted_var.as_matrix() - var).amax() < 1e-12);
    }

    #[test]
    fn canonical_properties_and_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for case in 0..100 {
            let r = 1 + case % 4;
            let s = 1 + (case / 4) % 4;
            let joint = random_spd(&mut rng, r + s);
            let b = split(&joint, r, &mut rng);
            let canon = b.canonical().unwrap();
            let h = &canon.directions;
            let prior = h.transpose() * b.var_b.as_matrix() * h;
            let post = h.transpose() * b.adjusted_variance().as_matrix() * h;
            for i in 0..r {
                for j in 0..r {
                    if i != j {
                        assert!(prior[(i, j)].abs() < 1e-8);
                        assert!(post[(i, j)].abs() < 1e-8);
                    }
                }
            }
            assert_relative_eq!(b.resolved_uncertainty(), canon.resolutions.sum(), epsilon = 1e-8);

            let f = DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
            let parts = b.resolution_partition(&f).unwrap();
            let wsum: f64 = parts.iter().map(|p| p.weight).sum();
            assert!((wsum - 1.0).abs() < 1e-8);
            let res: f64 = parts.iter().map(|p| p.weight * p.resolution).sum();
            let direct = b.resolution_of(&f).unwrap();
            assert!((res - direct).abs() < 1e-8);
            let adj_var = b.adjusted_variance().quad(&f);
            assert!((adj_var - b.var_b.quad(&f) * (1.0 - direct)).abs() < 1e-8 * b.var_b.quad(&f));

            // aligned with a canonical direction
            let hj = canon.directions.column(0).into_owned();
            assert!((b.resolution_of(&hj).unwrap() - canon.resolutions[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn more_data_never_hurts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let joint = random_spd(&mut rng, 6);
            let full = split(&joint, 2, &mut rng);
            let partial = SecondOrderBeliefs::new(
                full.mean_b.clone(),
                full.mean_d.rows(0, 2).into_owned(),
                full.var_b.clone(),
                full.var_d.select(&[0, 1]),
                full.cov_bd.columns(0, 2).into_owned(),
            )
            .unwrap();
            let f = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            assert!(full.resolution_of(&f).unwrap() >= partial.resolution_of(&f).unwrap() - 1e-8);
        }
    }

    #[test]
    fn zero_prior_variance_is_an_error() {
        let b = SecondOrderBeliefs::new(
            DVector::zeros(2),
            DVector::zeros(1),
            SymMatrix::from_diagonal(&[1.0, 1.0]),
            SymMatrix::from_diagonal(&[1.0]),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        assert!(matches!(b.resolution_of(&DVector::zeros(2)), Err(Error::ZeroPriorVariance)));
        assert!(matches!(b.adjusted_mean(&DVector::zeros(3)), Err(Error::DimMismatch(_))));
    }
}
