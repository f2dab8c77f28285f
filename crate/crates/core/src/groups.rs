//! The group problem for one canonical variable direction `t`: how the
//! `g0` group means `M(W_t)` (or `M̃(W_t)`) are resolved by the sample means
//! `W̄_t`.
//!
//! With `G(K) = A + φ_t⁻¹K⁻¹B − K⁻¹Â`, the canonical group directions solve
//!
//! ```text
//! infinite:  A·V = G(N)·V·Λ,      VᵀAV = I
//! finite:    G(M)·Ṽ = G(N)·Ṽ·Λ̃,   ṼᵀG(M)Ṽ = I
//! ```
//!
//! Several special designs allow cheaper or n-free solutions; they all agree
//! with the direct pencil.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::bayes_linear::SecondOrderBeliefs;
use crate::error::{Error, Result};
use crate::linalg::{gen_eig, GeneralizedEigen, SymMatrix};
use crate::model::{Design, Kind, ModelSpec, ObservedSample, PopulationSize};
use crate::variables::{fpc, CanonicalVariableStructure};

/// Relative tolerance for recognising constant ratios `α_gg/γ_g` and
/// sampling fractions `n_g/m_g`.
pub const RATIO_TOL: f64 = 1e-12;

/// Which route produced a group structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shortcut {
    /// The defining pencil, solved directly.
    None,
    /// `α_gg/γ_g` constant: one pencil shared by every `t`.
    Separable,
    /// `N = nI`: an n-free pencil per `t`.
    Balanced,
    /// `N = θM`: infinite directions rescaled.
    EqualFraction,
    /// Both separable and balanced: one n-free pencil for everything.
    SeparableBalanced,
    /// Some group is unsampled; the generic engine on the sampled groups.
    Engine,
}

impl fmt::Display for Shortcut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shortcut::None => "none",
            Shortcut::Separable => "separable",
            Shortcut::Balanced => "balanced",
            Shortcut::EqualFraction => "equal_fraction",
            Shortcut::SeparableBalanced => "separable_balanced",
            Shortcut::Engine => "engine",
        })
    }
}

/// Canonical group directions and resolutions for one `t`.
#[derive(Debug, Clone)]
pub struct GroupCanonicalStructure {
    pub t: usize,
    pub phi: f64,
    pub kind: Kind,
    /// Columns are the coefficient vectors `V_st` (or `Ṽ_st`) over groups.
    pub v: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub eigenspaces: Vec<Vec<usize>>,
    pub shortcut: Shortcut,
    /// n-free eigenvalues `ψ_st` when a balanced route was used.
    pub psi: Option<Vec<f64>>,
    /// For the equal-fraction route, `sqrt(λ_st / (λ_st + θ(1 − λ_st)))`:
    /// the factor taking the infinite direction `V_st` to `Ṽ_st`.
    pub scaling: Option<Vec<f64>>,
}

impl GroupCanonicalStructure {
    pub fn g0(&self) -> usize {
        self.lambda.len()
    }

    pub fn direction(&self, s: usize) -> DVector<f64> {
        self.v.column(s).into_owned()
    }

    /// Resolved uncertainty: the sum of the resolutions.
    pub fn resolved_uncertainty(&self) -> f64 {
        self.lambda.iter().sum()
    }

    fn from_eig(t: usize, phi: f64, kind: Kind, eig: GeneralizedEigen, shortcut: Shortcut) -> Self {
        Self {
            t,
            phi,
            kind,
            v: eig.directions,
            lambda: eig.resolutions.iter().copied().collect(),
            eigenspaces: eig.eigenspaces,
            shortcut,
            psi: None,
            scaling: None,
        }
    }
}

fn sym(m: DMatrix<f64>) -> SymMatrix {
    SymMatrix::symmetrized(m)
}

fn check_t(vars: &CanonicalVariableStructure, t: usize) -> Result<f64> {
    vars.phi
        .get(t)
        .copied()
        .ok_or_else(|| Error::IndexOutOfRange(format!("direction {t} of {}", vars.v0())))
}

/// Constant `α_gg/γ_g`, if there is one.
pub fn separable_ratio(spec: &ModelSpec) -> Option<f64> {
    let a = spec.alpha_gg(0) / spec.gamma[0];
    (0..spec.g0())
        .all(|g| (spec.alpha_gg(g) / spec.gamma[g] - a).abs() <= RATIO_TOL * a.abs())
        .then_some(a)
}

/// Constant sampling fraction `n_g/m_g`, if every population is finite and
/// there is one.
pub fn equal_fraction(spec: &ModelSpec, design: &Design) -> Option<f64> {
    let fractions: Option<Vec<f64>> = design
        .sample_sizes
        .iter()
        .zip(&spec.pop_sizes)
        .map(|(&n, p)| p.finite().map(|m| n as f64 / m as f64))
        .collect();
    let fractions = fractions?;
    let theta = fractions[0];
    fractions.iter().all(|f| (f - theta).abs() <= RATIO_TOL * theta.abs().max(f64::MIN_POSITIVE)).then_some(theta)
}

/// Solves the defining pencil for `t` directly. Every group must be sampled.
pub fn direct_structure(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    design: &Design,
    t: usize,
    kind: Kind,
) -> Result<GroupCanonicalStructure> {
    design.validate_for(spec)?;
    let phi = check_t(vars, t)?;
    if !design.all_sampled() {
        return Err(Error::NotApplicable("the direct pencil needs every group sampled".into()));
    }
    let g_n = spec.group_sample_matrix(design, phi);
    let lhs = spec.group_mean_matrix(kind, phi)?;
    let eig = gen_eig(&lhs, &g_n)?;
    Ok(GroupCanonicalStructure::from_eig(t, phi, kind, eig, Shortcut::None))
}

/// Canonical analysis of `M(W_t)` (or `M̃(W_t)`) given `W̄_t` by the generic
/// engine. Handles unsampled groups, whose directions get resolution 0.
pub fn engine_structure(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    design: &Design,
    t: usize,
    kind: Kind,
) -> Result<GroupCanonicalStructure> {
    let beliefs = group_beliefs(spec, vars, design, t, kind)?;
    let canon = beliefs.canonical()?;
    let phi = vars.phi[t];
    Ok(GroupCanonicalStructure {
        t,
        phi,
        kind,
        v: canon.directions,
        lambda: canon.resolutions.iter().copied().collect(),
        eigenspaces: canon.eigenspaces,
        shortcut: Shortcut::Engine,
        psi: None,
        scaling: None,
    })
}

/// Second-order beliefs of `(M(W_t) or M̃(W_t); W̄_t over sampled groups)`.
pub fn group_beliefs(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    design: &Design,
    t: usize,
    kind: Kind,
) -> Result<SecondOrderBeliefs> {
    design.validate_for(spec)?;
    let phi = check_t(vars, t)?;
    let sampled = design.sampled_groups();
    let var_b = spec.group_mean_matrix(kind, phi)?;
    let cov_bd = var_b.select_columns(&sampled);
    let mean_b = prior_group_means(spec, vars, t);
    let mean_d = mean_b.select_rows(&sampled);
    SecondOrderBeliefs::new(mean_b, mean_d, var_b, spec.group_sample_matrix(design, phi), cov_bd)
}

/// `(U_tᵀμ_1, …, U_tᵀμ_g0)`.
pub fn prior_group_means(spec: &ModelSpec, vars: &CanonicalVariableStructure, t: usize) -> DVector<f64> {
    &spec.mu * vars.u.column(t)
}

/// `(U_tᵀC̄_g)` over the sampled groups.
pub fn sample_group_means(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    design: &Design,
    observed: &ObservedSample,
    t: usize,
) -> Result<DVector<f64>> {
    let sampled = design.sampled_groups();
    let mut out = DVector::zeros(sampled.len());
    for (k, &g) in sampled.iter().enumerate() {
        let mean = observed.mean(g).ok_or_else(|| Error::MissingData(spec.group_labels[g].clone()))?;
        if mean.len() != spec.v0() {
            return Err(Error::DimMismatch(format!("group `{}` mean has {} variables", spec.group_labels[g], mean.len())));
        }
        out[k] = vars.u.column(t).dot(&mean);
    }
    Ok(out)
}

/// A shortcut shared across every `t` when `α_gg/γ_g = a` for all groups:
/// `A·V = (A + N⁻¹B)·V·Ψ`.
#[derive(Debug, Clone)]
pub struct SeparableStructure {
    pub a: f64,
    pub v: DMatrix<f64>,
    pub psi: Vec<f64>,
    pub eigenspaces: Vec<Vec<usize>>,
}

impl SeparableStructure {
    /// `λ_st = ψ_sφ_t / (ψ_sφ_t + (1 − ψ_s)(1 − aφ_t))`.
    pub fn lambda(&self, phi: f64) -> Vec<f64> {
        self.psi
            .iter()
            .map(|&psi| psi * phi / (psi * phi + (1.0 - psi) * (1.0 - self.a * phi)))
            .collect()
    }

    fn structure(&self, t: usize, phi: f64, shortcut: Shortcut) -> GroupCanonicalStructure {
        GroupCanonicalStructure {
            t,
            phi,
            kind: Kind::Infinite,
            v: self.v.clone(),
            lambda: self.lambda(phi),
            eigenspaces: self.eigenspaces.clone(),
            shortcut,
            psi: Some(self.psi.clone()),
            scaling: None,
        }
    }
}

/// Shortcut for `α_gg/γ_g` constant across groups (infinite populations).
pub fn separable_shortcut(spec: &ModelSpec, design: &Design) -> Result<SeparableStructure> {
    design.validate_for(spec)?;
    let a = separable_ratio(spec).ok_or_else(|| Error::NotApplicable("alpha_gg / gamma_g varies across groups".into()))?;
    if !design.all_sampled() {
        return Err(Error::NotApplicable("every group must be sampled".into()));
    }
    let mut rhs = spec.alpha.as_matrix().clone();
    for g in 0..spec.g0() {
        rhs[(g, g)] += spec.gamma[g] / design.sample_sizes[g] as f64;
    }
    let eig = gen_eig(&spec.alpha, &sym(rhs))?;
    Ok(SeparableStructure {
        a,
        v: eig.directions,
        psi: eig.resolutions.iter().copied().collect(),
        eigenspaces: eig.eigenspaces,
    })
}

/// `λ = nψ / ((n − 1)ψ + 1)`.
pub fn balanced_resolution(psi: f64, n: usize) -> f64 {
    let n = n as f64;
    n * psi / ((n - 1.0) * psi + 1.0)
}

/// The n-free pencil `A·V = (A + φ_t⁻¹B − Â)·V·Ψ_t`.
fn balanced_pencil(spec: &ModelSpec, phi: f64) -> Result<GeneralizedEigen> {
    let mut rhs = spec.alpha.as_matrix().clone();
    for g in 0..spec.g0() {
        rhs[(g, g)] += spec.gamma[g] / phi - spec.alpha_gg(g);
    }
    gen_eig(&spec.alpha, &sym(rhs))
}

/// Shortcut for `N = nI` (infinite populations): directions do not depend
/// on `n`.
pub fn balanced_shortcut(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    n: usize,
    t: usize,
) -> Result<GroupCanonicalStructure> {
    let phi = check_t(vars, t)?;
    if n == 0 {
        return Err(Error::NotApplicable("balanced designs need n >= 1".into()));
    }
    Design::balanced(spec.g0(), n).validate_for(spec)?;
    let eig = balanced_pencil(spec, phi)?;
    let psi: Vec<f64> = eig.resolutions.iter().copied().collect();
    let mut out = GroupCanonicalStructure::from_eig(t, phi, Kind::Infinite, eig, Shortcut::Balanced);
    out.lambda = psi.iter().map(|&p| balanced_resolution(p, n)).collect();
    out.psi = Some(psi);
    Ok(out)
}

/// Separable and balanced together: `A·V = (A + B)·V·Ψ₍₁₎`, then
/// `ψ_s = nψ₍₁₎s / ((n − 1)ψ₍₁₎s + 1)` feeds the separable resolution formula.
pub fn separable_balanced_shortcut(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    n: usize,
    t: usize,
) -> Result<GroupCanonicalStructure> {
    let phi = check_t(vars, t)?;
    let a = separable_ratio(spec).ok_or_else(|| Error::NotApplicable("alpha_gg / gamma_g varies across groups".into()))?;
    if n == 0 {
        return Err(Error::NotApplicable("balanced designs need n >= 1".into()));
    }
    Design::balanced(spec.g0(), n).validate_for(spec)?;
    let eig = gen_eig(&spec.alpha, &sym(spec.alpha.as_matrix() + spec.b()))?;
    let sep = SeparableStructure {
        a,
        v: eig.directions,
        psi: eig.resolutions.iter().map(|&p| balanced_resolution(p, n)).collect(),
        eigenspaces: eig.eigenspaces,
    };
    Ok(sep.structure(t, phi, Shortcut::SeparableBalanced))
}

/// Shortcut for `N = θM` (finite populations): reuses the infinite
/// directions, with `λ̃ = λ + θ(1 − λ)` and `Ṽ_st = sqrt(λ/(λ + θ(1 − λ)))·V_st`.
pub fn equal_fraction_shortcut(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    design: &Design,
    t: usize,
) -> Result<GroupCanonicalStructure> {
    design.validate_for(spec)?;
    let theta = equal_fraction(spec, design)
        .ok_or_else(|| Error::NotApplicable("sampling fractions n_g / m_g differ".into()))?;
    let inf = infinite_structure(spec, vars, design, t)?;
    let lambda: Vec<f64> = inf.lambda.iter().map(|&l| l + theta * (1.0 - l)).collect();
    let scaling: Vec<f64> = inf.lambda.iter().zip(&lambda).map(|(&l, &lt)| (l / lt).sqrt()).collect();
    let mut v = inf.v.clone();
    for (s, &k) in scaling.iter().enumerate() {
        v.column_mut(s).scale_mut(k);
    }
    Ok(GroupCanonicalStructure {
        t,
        phi: inf.phi,
        kind: Kind::Finite,
        v,
        lambda,
        eigenspaces: inf.eigenspaces,
        shortcut: Shortcut::EqualFraction,
        psi: inf.psi,
        scaling: Some(scaling),
    })
}

fn infinite_structure(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    design: &Design,
    t: usize,
) -> Result<GroupCanonicalStructure> {
    let balanced = design.common_size().filter(|&n| n > 0);
    let separable = separable_ratio(spec).is_some();
    match balanced {
        Some(n) if separable => separable_balanced_shortcut(spec, vars, n, t),
        Some(n) => balanced_shortcut(spec, vars, n, t),
        None if separable => {
            let phi = check_t(vars, t)?;
            Ok(separable_shortcut(spec, design)?.structure(t, phi, Shortcut::Separable))
        }
        None => direct_structure(spec, vars, design, t, Kind::Infinite),
    }
}

/// Canonical group structure for direction `t`, through the cheapest
/// applicable route: separable_balanced, equal_fraction, balanced,
/// separable, then the direct pencil. Designs leaving a group unsampled go
/// to the generic engine.
pub fn group_structure(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    design: &Design,
    t: usize,
    kind: Kind,
) -> Result<GroupCanonicalStructure> {
    design.validate_for(spec)?;
    check_t(vars, t)?;
    if kind == Kind::Finite {
        spec.inverse_population(kind)?;
    }
    if !design.all_sampled() {
        return engine_structure(spec, vars, design, t, kind);
    }
    match kind {
        Kind::Infinite => infinite_structure(spec, vars, design, t),
        Kind::Finite if equal_fraction(spec, design).is_some() => equal_fraction_shortcut(spec, vars, design, t),
        Kind::Finite => direct_structure(spec, vars, design, t, kind),
    }
}

/// Update of one canonical group quantity `M(Y_st)` (or `M̃(Z_st)`).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTerm {
    pub s: usize,
    /// `Ȳ_st = Σ_g V_gst·W̄_gt`; absent on the engine route.
    pub y_bar: Option<f64>,
    pub prior_mean: f64,
    /// Always 1 under the unit prior variance normalization.
    pub prior_precision: f64,
    /// `λ/(1 − λ)`; infinite when `λ = 1`.
    pub data_precision: f64,
    pub posterior_mean: f64,
    pub posterior_precision: f64,
    pub resolution: f64,
}

impl GroupTerm {
    pub fn posterior_variance(&self) -> f64 {
        if self.posterior_precision.is_infinite() {
            0.0
        } else {
            1.0 / self.posterior_precision
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupUpdate {
    pub structure: GroupCanonicalStructure,
    pub terms: Vec<GroupTerm>,
}

fn precision_of(lambda: f64) -> f64 {
    if lambda >= 1.0 {
        f64::INFINITY
    } else {
        lambda / (1.0 - lambda)
    }
}

/// Adjusts every canonical group quantity for direction `t` by the observed
/// sample means.
pub fn update_groups(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    design: &Design,
    t: usize,
    kind: Kind,
    observed: &ObservedSample,
) -> Result<GroupUpdate> {
    let structure = group_structure(spec, vars, design, t, kind)?;
    let prior = prior_group_means(spec, vars, t);
    let w_bar = sample_group_means(spec, vars, design, observed, t)?;

    // On the engine route the posterior comes from the engine itself.
    let engine_mean = if structure.shortcut == Shortcut::Engine {
        Some(group_beliefs(spec, vars, design, t, kind)?.adjusted_mean(&w_bar)?)
    } else {
        None
    };

    let terms = (0..structure.g0())
        .map(|s| {
            let v = structure.v.column(s);
            let prior_mean = v.dot(&prior);
            let lambda = structure.lambda[s];
            let data_precision = precision_of(lambda);
            let (y_bar, posterior_mean) = match &engine_mean {
                Some(m) => (None, v.dot(m)),
                None => {
                    let y = v.dot(&w_bar);
                    let post = if data_precision.is_infinite() {
                        y
                    } else {
                        (prior_mean + data_precision * y) / (1.0 + data_precision)
                    };
                    (Some(y), post)
                }
            };
            GroupTerm {
                s,
                y_bar,
                prior_mean,
                prior_precision: 1.0,
                data_precision,
                posterior_mean,
                posterior_precision: 1.0 + data_precision,
                resolution: lambda,
            }
        })
        .collect();
    Ok(GroupUpdate { structure, terms })
}

/// Precision-form quantities of a balanced finite design `N = nI`, `M = mI`
/// for one canonical group direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancedFiniteTerm {
    /// n-free eigenvalue `ψ_st`.
    pub psi: f64,
    /// Infinite resolution `λ_st`.
    pub lambda: f64,
    /// `λ_st + (n/m)(1 − λ_st)`.
    pub lambda_tilde: f64,
    /// `r̃₀ = 1/(1 + κ/m)` with `κ = 1/ψ − 1`.
    pub prior_precision: f64,
    /// `q̃ = 1/((1 − 1/m)κ)`.
    pub unit_precision: f64,
    /// `a(m, n)`; 1 at a census, where it is not used.
    pub fpc: f64,
    /// `r̃₀ + a(m, n)·n·q̃`; infinite at a census.
    pub posterior_precision: f64,
}

impl BalancedFiniteTerm {
    /// Posterior mean from the precision form, given the prior mean and the
    /// observed `Ȳ_st` in the infinite direction's scale.
    pub fn posterior_mean(&self, prior_mean: f64, y_bar: f64, n: usize) -> f64 {
        if self.posterior_precision.is_infinite() {
            return y_bar;
        }
        let data = self.fpc * n as f64 * self.unit_precision;
        (self.prior_precision * prior_mean + data * y_bar) / self.posterior_precision
    }

    /// Resolution implied by the precision form.
    pub fn resolution(&self) -> f64 {
        if self.posterior_precision.is_infinite() {
            1.0
        } else {
            1.0 - self.prior_precision / self.posterior_precision
        }
    }
}

/// Balanced finite shortcut: directions from the n-free pencil, precisions
/// in finite-population-corrected form.
pub fn balanced_finite_shortcut(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    n: usize,
    m: u64,
    t: usize,
) -> Result<(GroupCanonicalStructure, Vec<BalancedFiniteTerm>)> {
    if spec.pop_sizes.iter().any(|p| *p != PopulationSize::Finite(m)) {
        return Err(Error::NotApplicable(format!("every population size must equal {m}")));
    }
    if n == 0 || n as u64 > m {
        return Err(Error::NotApplicable(format!("need 1 <= n <= {m}, got {n}")));
    }
    let structure = balanced_shortcut(spec, vars, n, t)?;
    let psi = structure.psi.clone().expect("balanced route records psi");
    let mf = m as f64;
    let census = n as u64 == m;
    let a = if census { 1.0 } else { fpc(m, n as u64)? };
    let terms = psi
        .iter()
        .zip(&structure.lambda)
        .map(|(&psi, &lambda)| {
            let kappa = 1.0 / psi - 1.0;
            let prior_precision = 1.0 / (1.0 + kappa / mf);
            let unit_precision = 1.0 / ((1.0 - 1.0 / mf) * kappa);
            let posterior_precision = if census {
                f64::INFINITY
            } else {
                prior_precision + a * n as f64 * unit_precision
            };
            BalancedFiniteTerm {
                psi,
                lambda,
                lambda_tilde: lambda + (n as f64 / mf) * (1.0 - lambda),
                prior_precision,
                unit_precision,
                fpc: a,
                posterior_precision,
            }
        })
        .collect();
    Ok((structure, terms))
}

/// Resolved uncertainty for direction `t`, with the average-sampling-fraction
/// form when it applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedUncertainty {
    /// `Σ_s λ_st` (or `Σ_s λ̃_st`).
    pub total: f64,
    /// For finite kind with `N = nI`:
    /// `Σ_s λ_st + ((1/g0)Σ_g n/m_g)·Σ_s(1 − λ_st)`. Exact when `A` is
    /// exchangeable across groups and `B`, `Â` are scalar.
    pub average_fraction_form: Option<f64>,
}

pub fn resolved_uncertainty_t(
    spec: &ModelSpec,
    vars: &CanonicalVariableStructure,
    design: &Design,
    t: usize,
    kind: Kind,
) -> Result<ResolvedUncertainty> {
    let structure = group_structure(spec, vars, design, t, kind)?;
    let average_fraction_form = match (kind, design.common_size()) {
        (Kind::Finite, Some(n)) if n > 0 => {
            let inf = group_structure(spec, vars, design, t, Kind::Infinite)?;
            let inv_m = spec.inverse_population(Kind::Finite)?;
            let avg = n as f64 * inv_m.iter().sum::<f64>() / spec.g0() as f64;
            let sum: f64 = inf.lambda.iter().sum();
            let rest: f64 = inf.lambda.iter().map(|l| 1.0 - l).sum();
            Some(sum + avg * rest)
        }
        _ => None,
    };
    Ok(ResolvedUncertainty {
        total: structure.resolved_uncertainty(),
        average_fraction_form,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::exam_model;
    use crate::linalg::max_abs;
    use crate::model::GroupData;
    use crate::variables::{canonical_variables, infinite_resolution};
    use approx::assert_abs_diff_eq;

    fn exam() -> (ModelSpec, CanonicalVariableStructure) {
        let spec = exam_model();
        let vars = canonical_variables(&spec).unwrap();
        (spec, vars)
    }

    #[test]
    fn single_group_reduces_to_variable_resolution() {
        let spec = crate::fixtures::single_group(1.5, 4.0, PopulationSize::Infinite);
        let vars = canonical_variables(&spec).unwrap();
        for n in [1, 3, 20] {
            for t in 0..2 {
                let s = direct_structure(&spec, &vars, &Design::new(vec![n]), t, Kind::Infinite).unwrap();
                assert_abs_diff_eq!(s.lambda[0], infinite_resolution(1.5, 4.0, vars.phi[t], n), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn exam_finite_fixture() {
        let (spec, vars) = exam();
        let design = Design::balanced(3, 10);
        let s = group_structure(&spec, &vars, &design, 0, Kind::Finite).unwrap();
        assert_eq!(s.shortcut, Shortcut::None);
        for (l, e) in s.lambda.iter().zip([0.9919, 0.8797, 0.8674]) {
            assert_abs_diff_eq!(*l, e, epsilon = 1e-4);
        }
        let s = group_structure(&spec, &vars, &design, 6, Kind::Finite).unwrap();
        for (l, e) in s.lambda.iter().zip([0.8625, 0.3515, 0.2856]) {
            assert_abs_diff_eq!(*l, e, epsilon = 1e-4);
        }
        for (x, e) in s.direction(0).iter().zip([0.3894, 0.3370, 0.3153]) {
            assert_abs_diff_eq!(*x, e, epsilon = 2e-4);
        }
    }

    #[test]
    fn normalization_and_pencil_residual() {
        let (spec, vars) = exam();
        let design = Design::new(vec![10, 3, 25]);
        for kind in [Kind::Infinite, Kind::Finite] {
            for t in 0..8 {
                let s = group_structure(&spec, &vars, &design, t, kind).unwrap();
                let g_m = spec.group_mean_matrix(kind, s.phi).unwrap();
                let g_n = spec.group_sample_matrix(&design, s.phi);
                let gram = s.v.transpose() * g_m.as_matrix() * &s.v;
                assert!(max_abs(&(gram - DMatrix::identity(3, 3))) < 1e-8);
                let resid = g_m.as_matrix() * &s.v - g_n.as_matrix() * &s.v * DMatrix::from_diagonal(&DVector::from_vec(s.lambda.clone()));
                assert!(max_abs(&resid) < 1e-8);
                assert!(s.lambda.iter().all(|&l| l > 0.0 && l < 1.0));
            }
        }
    }

    #[test]
    fn separable_closed_form() {
        let (mut spec, vars) = exam();
        spec.pop_sizes = vec![PopulationSize::Infinite; 3];
        let sb = gen_eig(&spec.alpha, &sym(spec.alpha.as_matrix() + spec.b())).unwrap();
        assert_abs_diff_eq!(sb.resolutions[0], 27.0 / 37.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sb.resolutions[1], 3.0 / 23.0, epsilon = 1e-10);
        for n in [1usize, 10, 100] {
            let nf = n as f64;
            for t in 0..8 {
                let phi = vars.phi[t];
                let s = separable_balanced_shortcut(&spec, &vars, n, t).unwrap();
                assert_abs_diff_eq!(s.lambda[0], 27.0 * phi * nf / (27.0 * phi * nf + 10.0 * (1.0 - phi)), epsilon = 1e-10);
                assert_abs_diff_eq!(s.lambda[1], 3.0 * phi * nf / (3.0 * phi * nf + 20.0 * (1.0 - phi)), epsilon = 1e-10);
                let direct = direct_structure(&spec, &vars, &Design::balanced(3, n), t, Kind::Infinite).unwrap();
                let sep = separable_shortcut(&spec, &Design::balanced(3, n)).unwrap().lambda(phi);
                let bal = balanced_shortcut(&spec, &vars, n, t).unwrap();
                for s_ in 0..3 {
                    assert_abs_diff_eq!(s.lambda[s_], direct.lambda[s_], epsilon = 1e-10);
                    assert_abs_diff_eq!(sep[s_], direct.lambda[s_], epsilon = 1e-10);
                    assert_abs_diff_eq!(bal.lambda[s_], direct.lambda[s_], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn separable_needs_constant_ratio() {
        let (mut spec, _) = exam();
        spec.gamma = vec![1.0, 2.0, 3.0];
        assert!(matches!(separable_shortcut(&spec, &Design::balanced(3, 2)), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn balanced_directions_do_not_depend_on_n() {
        let (mut spec, _) = exam();
        spec.gamma = vec![1.0, 1.4, 2.2];
        let vars = canonical_variables(&spec).unwrap();
        for t in [0, 6, 7] {
            let one = balanced_shortcut(&spec, &vars, 1, t).unwrap();
            let fifty = balanced_shortcut(&spec, &vars, 50, t).unwrap();
            assert_eq!(one.lambda, one.psi.clone().unwrap());
            let d50 = direct_structure(&spec, &vars, &Design::balanced(3, 50), t, Kind::Infinite).unwrap();
            assert!(max_abs(&(&fifty.v - &d50.v)) < 1e-8);
            assert!(max_abs(&(&one.v - &d50.v)) < 1e-8);
        }
    }

    #[test]
    fn equal_fraction_limits() {
        let (mut spec, vars) = exam();
        spec.pop_sizes = vec![PopulationSize::Finite(20); 3];
        let census = group_structure(&spec, &vars, &Design::balanced(3, 20), 6, Kind::Finite).unwrap();
        assert_eq!(census.shortcut, Shortcut::EqualFraction);
        assert!(census.lambda.iter().all(|&l| (l - 1.0).abs() < 1e-12));

        spec.pop_sizes = vec![PopulationSize::Finite(4_000_000); 3];
        let d = Design::balanced(3, 4);
        let fin = group_structure(&spec, &vars, &d, 6, Kind::Finite).unwrap();
        let inf = group_structure(&spec, &vars, &d, 6, Kind::Infinite).unwrap();
        for (a, b) in fin.lambda.iter().zip(&inf.lambda) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-5);
        }
    }

    #[test]
    fn resolved_uncertainty_fixture() {
        let (spec, vars) = exam();
        let ru = resolved_uncertainty_t(&spec, &vars, &Design::balanced(3, 10), 0, Kind::Finite).unwrap();
        assert_abs_diff_eq!(ru.total, 2.7390, epsilon = 1e-3);
        assert_abs_diff_eq!(ru.total, ru.average_fraction_form.unwrap(), epsilon = 1e-8);
        let big = resolved_uncertainty_t(&spec, &vars, &Design::balanced(3, 50), 0, Kind::Infinite).unwrap();
        assert!(big.total > 2.9);
    }

    #[test]
    fn update_fixed_point_and_engine_agreement() {
        let (spec, vars) = exam();
        let design = Design::new(vec![4, 9, 2]);
        let prior_obs = ObservedSample::new((0..3).map(|g| GroupData::Means(spec.mu.row(g).transpose())).collect());
        let data = ObservedSample::new(
            (0..3).map(|g| GroupData::Means(DVector::from_fn(8, |v, _| 5.0 + ((v + 2 * g) % 3) as f64))).collect(),
        );
        for kind in [Kind::Infinite, Kind::Finite] {
            for t in 0..8 {
                let up = update_groups(&spec, &vars, &design, t, kind, &prior_obs).unwrap();
                for term in &up.terms {
                    assert_abs_diff_eq!(term.posterior_mean, term.prior_mean, epsilon = 1e-10);
                }
                let up = update_groups(&spec, &vars, &design, t, kind, &data).unwrap();
                let beliefs = group_beliefs(&spec, &vars, &design, t, kind).unwrap();
                let w = sample_group_means(&spec, &vars, &design, &data, t).unwrap();
                let adj = beliefs.adjust(&w).unwrap();
                for term in &up.terms {
                    let v = up.structure.direction(term.s);
                    assert_abs_diff_eq!(term.posterior_mean, v.dot(&adj.adjusted_mean), epsilon = 1e-9);
                    assert_abs_diff_eq!(term.posterior_variance(), adj.adjusted_var.quad(&v), epsilon = 1e-9);
                }
                let engine = engine_structure(&spec, &vars, &design, t, kind).unwrap();
                for (a, b) in engine.lambda.iter().zip(&up.structure.lambda) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn unsampled_group_goes_to_engine() {
        let (spec, vars) = exam();
        let design = Design::new(vec![5, 0, 5]);
        let s = group_structure(&spec, &vars, &design, 6, Kind::Finite).unwrap();
        assert_eq!(s.shortcut, Shortcut::Engine);
        assert!(s.lambda[2].abs() < 1e-10);
        let data = ObservedSample::new(vec![
            GroupData::Means(DVector::from_element(8, 1.0)),
            GroupData::Missing,
            GroupData::Means(DVector::from_element(8, 2.0)),
        ]);
        let up = update_groups(&spec, &vars, &design, 6, Kind::Finite, &data).unwrap();
        assert!(up.terms.iter().all(|t| t.y_bar.is_none()));
    }
}
