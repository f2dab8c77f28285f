//! The co-exchangeable separable model.
//!
//! Individuals `C_gi` (group `g`, individual `i`) measure the same `v0`
//! variables. Second-order beliefs are
//!
//! ```text
//! E(C_gi) = μ_g
//! Cov(C_gi, C_hj) = γ_g·D    if (g, i) = (h, j)
//!                 = α_gh·C   otherwise
//! ```
//!
//! Every vector over `(group, variable)` pairs uses group-major ordering:
//! component `(g, v)` sits at index `g·v0 + v`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::bayes_linear::SecondOrderBeliefs;
use crate::error::{Error, Result};
use crate::linalg::{check_spd, gen_eig_rhs_normalized, kron, SymMatrix};

/// Default bound on `(Σ n_g)·v0` for brute-force joint assembly.
pub const DEFAULT_JOINT_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopulationSize {
    Finite(u64),
    Infinite,
}

impl PopulationSize {
    pub fn finite(self) -> Option<u64> {
        match self {
            PopulationSize::Finite(m) => Some(m),
            PopulationSize::Infinite => None,
        }
    }
}

impl fmt::Display for PopulationSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PopulationSize::Finite(m) => write!(f, "{m}"),
            PopulationSize::Infinite => f.write_str("inf"),
        }
    }
}

/// Whether the adjusted collection is the infinite-population mean `M(C)` or
/// the finite-population mean `M̃(C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Infinite,
    Finite,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Infinite => "infinite",
            Kind::Finite => "finite",
        })
    }
}

/// A violated model invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub field: String,
    pub message: String,
}

impl Finding {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Full prior specification of the model.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub group_labels: Vec<String>,
    pub variable_labels: Vec<String>,
    pub d: SymMatrix,
    pub c: SymMatrix,
    pub alpha: SymMatrix,
    pub gamma: Vec<f64>,
    /// `g0 × v0`, row `g` is `μ_g`.
    pub mu: DMatrix<f64>,
    pub pop_sizes: Vec<PopulationSize>,
    /// Named subsets of variables (e.g. exam sections), by variable index.
    pub sections: Vec<(String, Vec<usize>)>,
}

impl ModelSpec {
    /// Checks only shapes; call [`ModelSpec::validate`] for the model
    /// invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        group_labels: Vec<String>,
        variable_labels: Vec<String>,
        d: SymMatrix,
        c: SymMatrix,
        alpha: SymMatrix,
        gamma: Vec<f64>,
        mu: DMatrix<f64>,
        pop_sizes: Vec<PopulationSize>,
    ) -> Result<Self> {
        let g0 = group_labels.len();
        let v0 = variable_labels.len();
        let shape_err = |what: &str| Err(Error::DimMismatch(what.to_string()));
        if g0 == 0 || v0 == 0 {
            return shape_err("model needs at least one group and one variable");
        }
        if d.dim() != v0 || c.dim() != v0 {
            return shape_err("D and C must be v0 x v0");
        }
        if alpha.dim() != g0 {
            return shape_err("alpha must be g0 x g0");
        }
        if gamma.len() != g0 || pop_sizes.len() != g0 {
            return shape_err("one gamma and one population size per group");
        }
        if mu.shape() != (g0, v0) {
            return shape_err("mu must be g0 x v0");
        }
        Ok(Self {
            group_labels,
            variable_labels,
            d,
            c,
            alpha,
            gamma,
            mu,
            pop_sizes,
            sections: Vec::new(),
        })
    }

    pub fn with_sections(mut self, sections: Vec<(String, Vec<usize>)>) -> Self {
        self.sections = sections;
        self
    }

    pub fn g0(&self) -> usize {
        self.group_labels.len()
    }

    pub fn v0(&self) -> usize {
        self.variable_labels.len()
    }

    pub fn alpha_gg(&self, g: usize) -> f64 {
        self.alpha[(g, g)]
    }

    /// `Â = diag(α_11, …, α_g0g0)`.
    pub fn alpha_hat(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.alpha.diagonal())
    }

    /// `B = diag(γ)`.
    pub fn b(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.gamma))
    }

    /// Prior mean vector `vec(μ)` in group-major order.
    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.g0() * self.v0(),
            (0..self.g0()).flat_map(|g| (0..self.v0()).map(move |v| (g, v))).map(|(g, v)| self.mu[(g, v)]),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.pop_sizes.iter().all(|p| p.finite().is_some())
    }

    /// Largest eigenvalue of the pencil `C·u = φ·D·u`.
    pub fn top_variable_resolution(&self) -> Result<f64> {
        let eig = gen_eig_rhs_normalized(&self.c, &self.d)?;
        Ok(eig.resolutions[0])
    }

    /// `1/m_g` for the finite kind, `0` for the infinite kind.
    pub fn inverse_population(&self, kind: Kind) -> Result<Vec<f64>> {
        match kind {
            Kind::Infinite => Ok(vec![0.0; self.g0()]),
            Kind::Finite => self
                .pop_sizes
                .iter()
                .enumerate()
                .map(|(g, p)| match p {
                    PopulationSize::Finite(m) => Ok(1.0 / *m as f64),
                    PopulationSize::Infinite => Err(Error::InfinitePopulation(self.group_labels[g].clone())),
                })
                .collect(),
        }
    }

    /// Every violated invariant; empty iff the specification is valid.
    pub fn validate(&self) -> Vec<Finding> {
        let mut findings = Vec::new();
        let d_ok = check_spd(&self.d);
        let c_ok = check_spd(&self.c);
        if !d_ok {
            findings.push(Finding::new("D", "must be positive definite"));
        }
        if !c_ok {
            findings.push(Finding::new("C", "must be positive definite"));
        }
        if !check_spd(&self.alpha) {
            findings.push(Finding::new("alpha", "must be positive definite"));
        }
        for (g, &gamma) in self.gamma.iter().enumerate() {
            if !(gamma > 0.0) {
                findings.push(Finding::new(
                    format!("groups[{}].gamma", self.group_labels[g]),
                    "gamma must be positive",
                ));
            }
        }
        for (g, p) in self.pop_sizes.iter().enumerate() {
            if let PopulationSize::Finite(m) = p {
                if *m < 2 {
                    findings.push(Finding::new(
                        format!("groups[{}].population_size", self.group_labels[g]),
                        "population size must be at least 2",
                    ));
                }
            }
        }
        if self.mu.iter().any(|x| !x.is_finite()) {
            findings.push(Finding::new("mu", "prior means must be finite"));
        }
        if d_ok && c_ok {
            if let Ok(phi1) = self.top_variable_resolution() {
                for g in 0..self.g0() {
                    let gamma = self.gamma[g];
                    let margin = gamma - self.alpha_gg(g) * phi1;
                    if gamma > 0.0 && !(margin > 1e-10 * gamma) {
                        findings.push(Finding::new(
                            format!("groups[{}]", self.group_labels[g]),
                            "residual variance not positive definite (gamma_g * D - alpha_gg * C)",
                        ));
                    }
                }
            }
        }
        findings
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let findings = self.validate();
        if findings.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(findings))
        }
    }

    fn check_group(&self, g: usize) -> Result<()> {
        if g >= self.g0() {
            return Err(Error::IndexOutOfRange(format!("group {g} of {}", self.g0())));
        }
        Ok(())
    }

    /// `Cov(C_gi, C_hj)`: `γ_g·D` for the same individual, `α_gh·C` otherwise.
    pub fn pairwise_cov(&self, g: usize, i: usize, h: usize, j: usize) -> Result<DMatrix<f64>> {
        self.check_group(g)?;
        self.check_group(h)?;
        for (grp, idx) in [(g, i), (h, j)] {
            if let PopulationSize::Finite(m) = self.pop_sizes[grp] {
                if idx as u64 >= m {
                    return Err(Error::IndexOutOfRange(format!(
                        "individual {idx} in group `{}` of size {m}",
                        self.group_labels[grp]
                    )));
                }
            }
        }
        Ok(if g == h && i == j {
            self.d.as_matrix() * self.gamma[g]
        } else {
            self.c.as_matrix() * self.alpha[(g, h)]
        })
    }

    /// `γ_g·D − α_gg·C`: variance of an individual residual about the
    /// infinite-population mean.
    pub fn residual_cov(&self, g: usize) -> DMatrix<f64> {
        self.d.as_matrix() * self.gamma[g] - self.c.as_matrix() * self.alpha_gg(g)
    }

    /// Prior mean and variance of the mean vectors. Infinite:
    /// `A ⊗ C`; finite: `A ⊗ C + M⁻¹B ⊗ D − M⁻¹Â ⊗ C`.
    pub fn mean_structure(&self, kind: Kind) -> Result<MeanStructure> {
        let inv_m = DMatrix::from_diagonal(&DVector::from_vec(self.inverse_population(kind)?));
        let var = kron(self.alpha.as_matrix(), self.c.as_matrix()) + kron(&(&inv_m * self.b()), self.d.as_matrix())
            - kron(&(&inv_m * self.alpha_hat()), self.c.as_matrix());
        Ok(MeanStructure {
            kind,
            mean: self.mean_vector(),
            var: SymMatrix::symmetrized(var),
        })
    }

    /// Joint beliefs of (mean vectors of `kind`; group sample means `C̄(N)`).
    /// The data collection lists only groups with `n_g ≥ 1`, in group order.
    pub fn sample_mean_structure(&self, design: &Design, kind: Kind) -> Result<SecondOrderBeliefs> {
        design.validate_for(self)?;
        let mean_part = self.mean_structure(kind)?;
        let sampled = design.sampled_groups();
        let v0 = self.v0();
        let inv_n: Vec<f64> = design.sample_sizes.iter().map(|&n| if n > 0 { 1.0 / n as f64 } else { 0.0 }).collect();

        let mut var_d = DMatrix::zeros(sampled.len() * v0, sampled.len() * v0);
        for (a, &g) in sampled.iter().enumerate() {
            for (b, &h) in sampled.iter().enumerate() {
                let mut block = self.c.as_matrix() * self.alpha[(g, h)];
                if g == h {
                    block += self.residual_cov(g) * inv_n[g];
                }
                var_d.view_mut((a * v0, b * v0), (v0, v0)).copy_from(&block);
            }
        }
        // Cov(mean vector, C̄_h) = Var(mean vector) restricted to columns of h
        let cols: Vec<usize> = sampled.iter().flat_map(|&h| (h * v0)..((h + 1) * v0)).collect();
        let cov_bd = mean_part.var.select_columns(&cols);
        let mean_d = mean_part.mean.select_rows(&cols);
        SecondOrderBeliefs::new(mean_part.mean, mean_d, mean_part.var, SymMatrix::symmetrized(var_d), cov_bd)
    }

    /// Joint beliefs of (mean vectors of `kind`; every sampled individual),
    /// with individuals ordered group, then individual, then variable.
    pub fn assemble_joint(&self, design: &Design, kind: Kind, cap: usize) -> Result<SecondOrderBeliefs> {
        design.validate_for(self)?;
        let v0 = self.v0();
        let total: usize = design.sample_sizes.iter().sum();
        let dim = total * v0;
        if dim > cap {
            return Err(Error::CapExceeded { dim, cap });
        }
        let mean_part = self.mean_structure(kind)?;
        let inv_m = self.inverse_population(kind)?;
        let individuals: Vec<(usize, usize)> = design
            .sample_sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &n)| (0..n).map(move |i| (g, i)))
            .collect();

        let mut var_d = DMatrix::zeros(dim, dim);
        for (a, &(g, i)) in individuals.iter().enumerate() {
            for (b, &(h, j)) in individuals.iter().enumerate().skip(a) {
                let block = self.pairwise_cov(g, i, h, j)?;
                var_d.view_mut((a * v0, b * v0), (v0, v0)).copy_from(&block);
                if a != b {
                    var_d.view_mut((b * v0, a * v0), (v0, v0)).copy_from(&block.transpose());
                }
            }
        }

        let g0 = self.g0();
        let mut cov_bd = DMatrix::zeros(g0 * v0, dim);
        for g in 0..g0 {
            for (b, &(h, _)) in individuals.iter().enumerate() {
                let mut block = self.c.as_matrix() * self.alpha[(g, h)];
                if g == h {
                    block += self.residual_cov(g) * inv_m[g];
                }
                cov_bd.view_mut((g * v0, b * v0), (v0, v0)).copy_from(&block);
            }
        }
        let mean_d = DVector::from_iterator(
            dim,
            individuals.iter().flat_map(|&(g, _)| (0..v0).map(move |v| (g, v))).map(|(g, v)| self.mu[(g, v)]),
        );
        SecondOrderBeliefs::new(mean_part.mean, mean_d, mean_part.var, SymMatrix::symmetrized(var_d), cov_bd)
    }

    /// Prior variance of `(M(W_1t), …, M(W_g0t))` for a canonical variable
    /// direction with resolution `phi`: `A + φ⁻¹M⁻¹B − M⁻¹Â` (finite) or `A`.
    pub fn group_mean_matrix(&self, kind: Kind, phi: f64) -> Result<SymMatrix> {
        let inv_m = self.inverse_population(kind)?;
        let mut g = self.alpha.as_matrix().clone();
        for (k, &w) in inv_m.iter().enumerate() {
            g[(k, k)] += w * (self.gamma[k] / phi - self.alpha_gg(k));
        }
        Ok(SymMatrix::symmetrized(g))
    }

    /// Prior variance of `(W̄_1t, …, W̄_g0t)`: `A + φ⁻¹N⁻¹B − N⁻¹Â`, over the
    /// sampled groups only.
    pub fn group_sample_matrix(&self, design: &Design, phi: f64) -> SymMatrix {
        let sampled = design.sampled_groups();
        let mut g = self.alpha.select(&sampled).into_matrix();
        for (k, &grp) in sampled.iter().enumerate() {
            let n = design.sample_sizes[grp] as f64;
            g[(k, k)] += (self.gamma[grp] / phi - self.alpha_gg(grp)) / n;
        }
        SymMatrix::symmetrized(g)
    }
}

/// Prior mean and variance of the `g0·v0` mean vector.
#[derive(Debug, Clone)]
pub struct MeanStructure {
    pub kind: Kind,
    pub mean: DVector<f64>,
    pub var: SymMatrix,
}

/// Per-group sample sizes `N = diag(n_1, …, n_g0)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Design {
    pub sample_sizes: Vec<usize>,
}

impl Design {
    pub fn new(sample_sizes: Vec<usize>) -> Self {
        Self { sample_sizes }
    }

    pub fn balanced(g0: usize, n: usize) -> Self {
        Self::new(vec![n; g0])
    }

    pub fn sampled_groups(&self) -> Vec<usize> {
        (0..self.sample_sizes.len()).filter(|&g| self.sample_sizes[g] > 0).collect()
    }

    pub fn all_sampled(&self) -> bool {
        self.sample_sizes.iter().all(|&n| n > 0)
    }

    /// `Some(n)` when every group has the same sample size.
    pub fn common_size(&self) -> Option<usize> {
        let first = *self.sample_sizes.first()?;
        self.sample_sizes.iter().all(|&n| n == first).then_some(first)
    }

    pub fn validate_for(&self, spec: &ModelSpec) -> Result<()> {
        if self.sample_sizes.len() != spec.g0() {
            return Err(Error::InvalidDesign(format!(
                "{} sample sizes for {} groups",
                self.sample_sizes.len(),
                spec.g0()
            )));
        }
        if self.sample_sizes.iter().all(|&n| n == 0) {
            return Err(Error::InvalidDesign("at least one group must be sampled".into()));
        }
        for (g, (&n, p)) in self.sample_sizes.iter().zip(&spec.pop_sizes).enumerate() {
            if let PopulationSize::Finite(m) = p {
                if n as u64 > *m {
                    return Err(Error::InvalidDesign(format!(
                        "group `{}`: sample size {n} exceeds population size {m}",
                        spec.group_labels[g]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Observations for one group.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupData {
    /// `n_g × v0`, one row per sampled individual.
    Raw(DMatrix<f64>),
    /// The sample mean `C̄_g`.
    Means(DVector<f64>),
    Missing,
}

/// Observed sample `C(N)` (or its sufficient summary `C̄(N)`).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    pub groups: Vec<GroupData>,
}

impl ObservedSample {
    pub fn new(groups: Vec<GroupData>) -> Self {
        Self { groups }
    }

    /// Sample mean of group `g`; raw rows are averaged.
    pub fn mean(&self, g: usize) -> Option<DVector<f64>> {
        match self.groups.get(g)? {
            GroupData::Raw(rows) if rows.nrows() > 0 => Some(rows.row_mean().transpose()),
            GroupData::Means(m) => Some(m.clone()),
            _ => None,
        }
    }

    /// Checks consistency with a design: every sampled group has data of the
    /// right width, and raw row counts equal `n_g`.
    pub fn check(&self, spec: &ModelSpec, design: &Design) -> Result<()> {
        if self.groups.len() != spec.g0() {
            return Err(Error::DimMismatch(format!("data for {} groups, model has {}", self.groups.len(), spec.g0())));
        }
        for (g, &n) in design.sample_sizes.iter().enumerate() {
            let label = &spec.group_labels[g];
            match &self.groups[g] {
                GroupData::Raw(rows) => {
                    if rows.nrows() != n {
                        return Err(Error::InvalidDesign(format!(
                            "group `{label}` has {} raw rows but the design samples {n}",
                            rows.nrows()
                        )));
                    }
                    if rows.ncols() != spec.v0() {
                        return Err(Error::DimMismatch(format!("group `{label}` rows have {} variables", rows.ncols())));
                    }
                }
                GroupData::Means(m) => {
                    if m.len() != spec.v0() {
                        return Err(Error::DimMismatch(format!("group `{label}` mean has {} variables", m.len())));
                    }
                }
                GroupData::Missing if n > 0 => return Err(Error::MissingData(label.clone())),
                GroupData::Missing => {}
            }
        }
        Ok(())
    }

    /// Stacked sample means of the sampled groups, matching the data order of
    /// [`ModelSpec::sample_mean_structure`].
    pub fn means_vector(&self, spec: &ModelSpec, design: &Design) -> Result<DVector<f64>> {
        let mut out = Vec::new();
        for g in design.sampled_groups() {
            let m = self.mean(g).ok_or_else(|| Error::MissingData(spec.group_labels[g].clone()))?;
            out.extend(m.iter());
        }
        Ok(DVector::from_vec(out))
    }

    /// Stacked raw rows, matching the data order of
    /// [`ModelSpec::assemble_joint`].
    pub fn raw_vector(&self, spec: &ModelSpec, design: &Design) -> Result<DVector<f64>> {
        let mut out = Vec::new();
        for g in design.sampled_groups() {
            match &self.groups[g] {
                GroupData::Raw(rows) => {
                    for r in rows.row_iter() {
                        out.extend(r.iter());
                    }
                }
                _ => return Err(Error::MissingData(format!("{} (raw rows required)", spec.group_labels[g]))),
            }
        }
        Ok(DVector::from_vec(out))
    }
}
