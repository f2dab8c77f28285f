//! The variable problem: canonical variable directions shared by every
//! group, and the per-group scalar updates along each of them.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::gen_eig;
use crate::model::{Design, Kind, ModelSpec, ObservedSample, PopulationSize};

/// Tolerance below which two resolutions are reported as tied.
pub const TIE_TOL: f64 = 1e-12;

/// Solution of `C·U = D·U·Φ` with `UᵀCU = I`.
#[derive(Debug, Clone)]
pub struct CanonicalVariableStructure {
    pub u: DMatrix<f64>,
    pub phi: Vec<f64>,
    pub eigenspaces: Vec<Vec<usize>>,
}

impl CanonicalVariableStructure {
    pub fn v0(&self) -> usize {
        self.phi.len()
    }

    pub fn direction(&self, t: usize) -> DVector<f64> {
        self.u.column(t).into_owned()
    }

    /// Coordinates `Uᵀx` of a variable vector in the canonical basis.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.u.tr_mul(x)
    }
}

/// Canonical variable structure of a valid model. It does not depend on
/// groups, sample sizes or population sizes.
pub fn canonical_variables(spec: &ModelSpec) -> Result<CanonicalVariableStructure> {
    spec.ensure_valid()?;
    let eig = gen_eig(&spec.c, &spec.d)?;
    Ok(CanonicalVariableStructure {
        u: eig.directions,
        phi: eig.resolutions.iter().copied().collect(),
        eigenspaces: eig.eigenspaces,
    })
}

/// `λ = nαφ / ((n−1)αφ + γ)`; zero when nothing is sampled.
pub fn infinite_resolution(alpha: f64, gamma: f64, phi: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    n * alpha * phi / ((n - 1.0) * alpha * phi + gamma)
}

/// `λ̃ = λ + (n/m)(1 − λ)`.
pub fn finite_resolution(alpha: f64, gamma: f64, phi: f64, n: usize, m: u64) -> f64 {
    let lambda = infinite_resolution(alpha, gamma, phi, n);
    let f = n as f64 / m as f64;
    lambda + f * (1.0 - lambda)
}

/// Finite population correction `a(m, n) = (1 − (n−1)/(m−1))⁻¹`, for
/// `1 ≤ n < m`.
pub fn fpc(m: u64, n: u64) -> Result<f64> {
    if m < 2 || n < 1 || n >= m {
        return Err(Error::Domain(format!("fpc needs m >= 2 and 1 <= n < m, got m = {m}, n = {n}")));
    }
    Ok(1.0 / (1.0 - (n - 1) as f64 / (m - 1) as f64))
}

fn population(spec: &ModelSpec, g: usize, kind: Kind) -> Result<Option<u64>> {
    match (kind, spec.pop_sizes[g]) {
        (Kind::Infinite, _) => Ok(None),
        (Kind::Finite, PopulationSize::Finite(m)) => Ok(Some(m)),
        (Kind::Finite, PopulationSize::Infinite) => Err(Error::InfinitePopulation(spec.group_labels[g].clone())),
    }
}

fn check_sample(spec: &ModelSpec, g: usize, n: usize, m: Option<u64>) -> Result<()> {
    if g >= spec.g0() {
        return Err(Error::IndexOutOfRange(format!("group {g} of {}", spec.g0())));
    }
    if let Some(m) = m.or(spec.pop_sizes[g].finite()) {
        if n as u64 > m {
            return Err(Error::InvalidDesign(format!(
                "group `{}`: sample size {n} exceeds population size {m}",
                spec.group_labels[g]
            )));
        }
    }
    Ok(())
}

/// Resolution of `M(W_gt)` (or `M̃(W_gt)`) given `n` sampled individuals.
pub fn variable_resolution(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    g: usize,
    n: usize,
    t: usize,
    kind: Kind,
) -> Result<f64> {
    if t >= vars.v0() {
        return Err(Error::IndexOutOfRange(format!("direction {t} of {}", vars.v0())));
    }
    check_sample(spec, g, n, None)?;
    let (alpha, gamma, phi) = (spec.alpha_gg(g), spec.gamma[g], vars.phi[t]);
    Ok(match population(spec, g, kind)? {
        None => infinite_resolution(alpha, gamma, phi, n),
        Some(m) => finite_resolution(alpha, gamma, phi, n, m),
    })
}

/// The scalar update along one canonical variable direction.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableTerm {
    pub t: usize,
    pub phi: f64,
    /// `W̄_gt`, absent when the group is unsampled.
    pub w_bar: Option<f64>,
    pub prior_mean: f64,
    pub prior_precision: f64,
    /// `n·r` (infinite) or `a(m, n)·n·r̃` (finite); infinite at a census.
    pub data_precision: f64,
    pub posterior_mean: f64,
    pub posterior_precision: f64,
    pub resolution: f64,
}

impl VariableTerm {
    pub fn prior_variance(&self) -> f64 {
        1.0 / self.prior_precision
    }

    pub fn posterior_variance(&self) -> f64 {
        if self.posterior_precision.is_infinite() {
            0.0
        } else {
            1.0 / self.posterior_precision
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariableUpdate {
    pub group: usize,
    pub kind: Kind,
    pub n: usize,
    pub terms: Vec<VariableTerm>,
}

/// Updates every `M(W_gt)` (or `M̃(W_gt)`) of group `g` from its sample mean.
pub fn update_variable(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    g: usize,
    design: &Design,
    observed: &ObservedSample,
    kind: Kind,
) -> Result<VariableUpdate> {
    design.validate_for(spec)?;
    let n = design.sample_sizes[g];
    let m = population(spec, g, kind)?;
    let w_bar = if n > 0 {
        let mean = observed.mean(g).ok_or_else(|| Error::MissingData(spec.group_labels[g].clone()))?;
        if mean.len() != spec.v0() {
            return Err(Error::DimMismatch(format!("group `{}` mean has {} variables", spec.group_labels[g], mean.len())));
        }
        Some(vars.project(&mean))
    } else {
        None
    };
    let prior = vars.project(&spec.mu.row(g).transpose());
    let (alpha, gamma) = (spec.alpha_gg(g), spec.gamma[g]);

    let terms = (0..vars.v0())
        .map(|t| {
            let phi = vars.phi[t];
            // variance of an individual's direction-t residual about M(W_gt)
            let resid = gamma / phi - alpha;
            let prior_mean = prior[t];
            let w = w_bar.as_ref().map(|w| w[t]);
            let (prior_precision, unit_precision, scale) = match m {
                None => (1.0 / alpha, 1.0 / resid, 1.0),
                Some(m) => {
                    let inv_m = 1.0 / m as f64;
                    let scale = if n > 0 && (n as u64) < m { fpc(m, n as u64)? } else { 1.0 };
                    (1.0 / (alpha + inv_m * resid), 1.0 / ((1.0 - inv_m) * resid), scale)
                }
            };
            let census = m.is_some_and(|m| n as u64 == m);
            let term = match w {
                None => VariableTerm {
                    t,
                    phi,
                    w_bar: None,
                    prior_mean,
                    prior_precision,
                    data_precision: 0.0,
                    posterior_mean: prior_mean,
                    posterior_precision: prior_precision,
                    resolution: 0.0,
                },
                Some(w) if census => VariableTerm {
                    t,
                    phi,
                    w_bar: Some(w),
                    prior_mean,
                    prior_precision,
                    data_precision: f64::INFINITY,
                    posterior_mean: w,
                    posterior_precision: f64::INFINITY,
                    resolution: 1.0,
                },
                Some(w) => {
                    let data_precision = scale * n as f64 * unit_precision;
                    let posterior_precision = prior_precision + data_precision;
                    VariableTerm {
                        t,
                        phi,
                        w_bar: Some(w),
                        prior_mean,
                        prior_precision,
                        data_precision,
                        posterior_mean: (prior_precision * prior_mean + data_precision * w) / posterior_precision,
                        posterior_precision,
                        resolution: data_precision / posterior_precision,
                    }
                }
            };
            Ok(term)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VariableUpdate { group: g, kind, n, terms })
}

/// Which of two groups learns more about direction `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupComparison {
    /// Ordering of `λ_g` relative to `λ_h`.
    pub ordering: Ordering,
    /// `λ_g − λ_h`.
    pub difference: f64,
    /// A quantity with the sign of `λ_g − λ_h` computed from the model
    /// parameters directly rather than from the two resolutions.
    pub criterion: f64,
}

/// Compares the resolutions of `M(W_gt)` and `M(W_ht)` under `design`.
pub fn compare_groups(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    design: &Design,
    t: usize,
    g: usize,
    h: usize,
    kind: Kind,
) -> Result<GroupComparison> {
    design.validate_for(spec)?;
    let (ng, nh) = (design.sample_sizes[g], design.sample_sizes[h]);
    if ng == 0 || nh == 0 {
        return Err(Error::InvalidDesign("both compared groups must be sampled".into()));
    }
    let lg = variable_resolution(spec, vars, g, ng, t, kind)?;
    let lh = variable_resolution(spec, vars, h, nh, t, kind)?;
    let phi = vars.phi[t];
    let term = |k: usize, n: usize| spec.gamma[k] / (n as f64 * spec.alpha_gg(k));
    let infinite_criterion = (term(h, nh) - term(g, ng)) / phi - (1.0 / nh as f64 - 1.0 / ng as f64);
    let criterion = match kind {
        Kind::Infinite => infinite_criterion,
        Kind::Finite => {
            let fg = ng as f64 / population(spec, g, kind)?.unwrap() as f64;
            let fh = nh as f64 / population(spec, h, kind)?.unwrap() as f64;
            let ig = infinite_resolution(spec.alpha_gg(g), spec.gamma[g], phi, ng);
            let ih = infinite_resolution(spec.alpha_gg(h), spec.gamma[h], phi, nh);
            (1.0 - fg) * ig - (1.0 - fh) * ih + (fg - fh)
        }
    };
    let difference = lg - lh;
    let ordering = if difference.abs() <= TIE_TOL {
        Ordering::Equal
    } else if difference > 0.0 {
        Ordering::Greater
    } else {
        Ordering::Less
    };
    Ok(GroupComparison {
        ordering,
        difference,
        criterion,
    })
}
