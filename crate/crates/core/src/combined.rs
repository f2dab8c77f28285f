//! The full canonical grid over `(s, t)` and linear functionals of the mean
//! vectors expanded in it.
//!
//! Grid direction `(s, t)` has coefficient vector `V_st ⊗ U_t` over the
//! group-major mean vector. The directions are prior-uncorrelated with unit
//! prior variance, so any functional `Y = fᵀM` decomposes as
//! `Y − E(Y) = Σ_j Cov(Y, Z_j)(Z_j − E(Z_j))`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::groups::{group_structure, update_groups, GroupCanonicalStructure};
use crate::linalg::{kron, SymMatrix};
use crate::model::{Design, Kind, ModelSpec, ObservedSample};
use crate::variables::{canonical_variables, CanonicalVariableStructure};

#[derive(Debug, Clone)]
pub struct GridEntry {
    pub s: usize,
    pub t: usize,
    /// `V_st ⊗ U_t` in group-major order.
    pub coefficients: DVector<f64>,
    pub resolution: f64,
}

#[derive(Debug, Clone)]
pub struct CanonicalGrid {
    pub kind: Kind,
    pub design: Design,
    pub variables: CanonicalVariableStructure,
    pub groups: Vec<GroupCanonicalStructure>,
    /// Sorted by descending resolution; ties keep `(s, t)` order.
    pub entries: Vec<GridEntry>,
    pub prior_mean: DVector<f64>,
    /// Prior variance of the mean vector of the grid's kind.
    pub prior_var: SymMatrix,
}

pub fn build_grid(spec: &ModelSpec, design: &Design, kind: Kind) -> Result<CanonicalGrid> {
    let variables = canonical_variables(spec)?;
    let groups = (0..spec.v0())
        .map(|t| group_structure(spec, &variables, design, t, kind))
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::with_capacity(spec.g0() * spec.v0());
    for s in 0..spec.g0() {
        for (t, gs) in groups.iter().enumerate() {
            entries.push(GridEntry {
                s,
                t,
                coefficients: kron(&gs.v.columns(s, 1).into_owned(), &variables.u.columns(t, 1).into_owned())
                    .column(0)
                    .into_owned(),
                resolution: gs.lambda[s],
            });
        }
    }
    entries.sort_by(|a, b| b.resolution.total_cmp(&a.resolution));
    let ms = spec.mean_structure(kind)?;
    Ok(CanonicalGrid {
        kind,
        design: design.clone(),
        variables,
        groups,
        entries,
        prior_mean: ms.mean,
        prior_var: ms.var,
    })
}

/// Prior and adjusted expectations of every grid direction.
#[derive(Debug, Clone)]
pub struct GridAdjustment {
    /// Indexed like `CanonicalGrid::entries`.
    pub prior: Vec<f64>,
    pub posterior: Vec<f64>,
}

impl CanonicalGrid {
    pub fn resolutions(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.resolution).collect()
    }

    /// Number of distinct resolutions, up to `tol`.
    pub fn distinct_resolutions(&self, tol: f64) -> usize {
        let r = self.resolutions();
        1 + r.windows(2).filter(|w| (w[0] - w[1]).abs() > tol).count()
    }

    /// `Cov(fᵀM, Z_j)` for every grid entry.
    pub fn covariances(&self, functional: &DVector<f64>) -> Vec<f64> {
        let vf = self.prior_var.as_matrix() * functional;
        self.entries.iter().map(|e| e.coefficients.dot(&vf)).collect()
    }

    /// Adjusts every grid direction by the observed sample means.
    pub fn adjust(&self, spec: &ModelSpec, observed: &ObservedSample) -> Result<GridAdjustment> {
        observed.check(spec, &self.design)?;
        let updates = (0..spec.v0())
            .map(|t| update_groups(spec, &self.variables, &self.design, t, self.kind, observed))
            .collect::<Result<Vec<_>>>()?;
        let (prior, posterior) = self
            .entries
            .iter()
            .map(|e| {
                let term = &updates[e.t].terms[e.s];
                (term.prior_mean, term.posterior_mean)
            })
            .unzip();
        Ok(GridAdjustment { prior, posterior })
    }

    /// Adjusted expectation of the whole mean vector, assembled from the grid.
    pub fn adjusted_mean(&self, adjustment: &GridAdjustment) -> DVector<f64> {
        let mut out = self.prior_mean.clone();
        for (j, e) in self.entries.iter().enumerate() {
            let c = self.prior_var.as_matrix() * &e.coefficients;
            out += c * (adjustment.posterior[j] - adjustment.prior[j]);
        }
        out
    }

    /// Adjusted variance of the whole mean vector: `Σ_j (1 − λ_j) c_j c_jᵀ`
    /// with `c_j = Var(M)·z_j`.
    pub fn adjusted_variance(&self) -> SymMatrix {
        let dim = self.prior_mean.len();
        let mut out = DMatrix::zeros(dim, dim);
        for e in &self.entries {
            let c = self.prior_var.as_matrix() * &e.coefficients;
            out += &c * c.transpose() * (1.0 - e.resolution);
        }
        SymMatrix::symmetrized(out)
    }
}

/// Weight of one grid direction in a functional's resolution partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridWeight {
    pub s: usize,
    pub t: usize,
    pub weight: f64,
    pub resolution: f64,
}

#[derive(Debug, Clone)]
pub struct FunctionalReport {
    pub label: String,
    pub coefficients: DVector<f64>,
    pub prior_mean: f64,
    pub prior_variance: f64,
    pub resolution: f64,
    /// In grid order (descending resolution).
    pub partition: Vec<GridWeight>,
    pub adjusted_mean: Option<f64>,
    pub adjusted_variance: Option<f64>,
}

impl FunctionalReport {
    /// Partition terms by decreasing weight.
    pub fn top_weights(&self, k: usize) -> Vec<GridWeight> {
        let mut w = self.partition.clone();
        w.sort_by(|a, b| b.weight.total_cmp(&a.weight));
        w.truncate(k);
        w
    }
}

/// Resolution, partition and (with data) adjusted beliefs for `fᵀM`.
pub fn analyze_functional(
    grid: &CanonicalGrid,
    label: &str,
    functional: &DVector<f64>,
    adjustment: Option<&GridAdjustment>,
) -> Result<FunctionalReport> {
    if functional.len() != grid.prior_mean.len() {
        return Err(Error::DimMismatch(format!(
            "functional has {} coefficients, model has {}",
            functional.len(),
            grid.prior_mean.len()
        )));
    }
    let prior_variance = grid.prior_var.quad(functional);
    if !(prior_variance > 1e-14 * grid.prior_var.amax() * functional.norm_squared()) {
        return Err(Error::ZeroPriorVariance);
    }
    let cov = grid.covariances(functional);
    let partition: Vec<GridWeight> = grid
        .entries
        .iter()
        .zip(&cov)
        .map(|(e, c)| GridWeight {
            s: e.s,
            t: e.t,
            weight: c * c / prior_variance,
            resolution: e.resolution,
        })
        .collect();
    let resolution = partition.iter().map(|w| w.weight * w.resolution).sum::<f64>();
    let prior_mean = functional.dot(&grid.prior_mean);
    let adjusted_mean = adjustment.map(|adj| {
        prior_mean + cov.iter().enumerate().map(|(j, c)| c * (adj.posterior[j] - adj.prior[j])).sum::<f64>()
    });
    let adjusted_variance = adjustment.map(|_| {
        cov.iter()
            .zip(&grid.entries)
            .map(|(c, e)| c * c * (1.0 - e.resolution))
            .sum::<f64>()
    });
    Ok(FunctionalReport {
        label: label.to_string(),
        coefficients: functional.clone(),
        prior_mean,
        prior_variance,
        resolution,
        partition,
        adjusted_mean,
        adjusted_variance,
    })
}

/// Coefficients of a quantity `fᵀM̃` (typically an infinite-model canonical
/// direction) in the finite grid basis: `Cov(fᵀM̃, M̃(Z_j))`, in grid order.
pub fn expand_in_finite_basis(grid: &CanonicalGrid, direction: &DVector<f64>) -> Result<Vec<GridWeight>> {
    if grid.kind != Kind::Finite {
        return Err(Error::NotApplicable("expansion needs a finite grid".into()));
    }
    if direction.len() != grid.prior_mean.len() {
        return Err(Error::DimMismatch("direction length differs from the mean vector".into()));
    }
    Ok(grid
        .entries
        .iter()
        .zip(grid.covariances(direction))
        .map(|(e, c)| GridWeight {
            s: e.s,
            t: e.t,
            weight: c,
            resolution: e.resolution,
        })
        .collect())
}

/// Functional picking out `Σ_v x_v M(g, v)` for one group.
pub fn group_functional(spec: &ModelSpec, g: usize, x: &DVector<f64>) -> DVector<f64> {
    let v0 = spec.v0();
    let mut f = DVector::zeros(spec.g0() * v0);
    f.rows_mut(g * v0, v0).copy_from(x);
    f
}
