//! Brute-force verification.
//!
//! [`direct_adjust`] adjusts the mean vector by every raw observation through
//! the generic engine on the full joint covariance, with no decomposition and
//! no reduction to sample means. [`check_sufficiency`] evaluates, as matrix
//! identities, the factorizations `Cov(B, D) = Cov(B, S)·Var⁻¹(S)·Cov(S, D)`
//! that make each reduction exact.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bayes_linear::{AdjustedBeliefs, SecondOrderBeliefs};
use crate::combined::build_grid;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, direct_sum, gen_eig, kron, max_abs, SymMatrix};
use crate::model::{Design, GroupData, Kind, ModelSpec, ObservedSample, PopulationSize, DEFAULT_JOINT_CAP};
use crate::variables::canonical_variables;

/// Pass threshold for relative residuals and route differences.
pub const ORACLE_TOL: f64 = 1e-8;

/// Adjusts the mean vector of `kind` by all raw observations directly.
pub fn direct_adjust(
    spec: &ModelSpec,
    design: &Design,
    kind: Kind,
    observed: &ObservedSample,
    cap: usize,
) -> Result<AdjustedBeliefs> {
    observed.check(spec, design)?;
    let joint = spec.assemble_joint(design, kind, cap)?;
    joint.adjust(&observed.raw_vector(spec, design)?)
}

/// `‖Cov(B,D) − Cov(B,S)·Var⁻¹(S)·Cov(S,D)‖_max`, relative to the largest
/// entry of the matrices involved.
pub fn sufficiency_residual(
    cov_b_d: &DMatrix<f64>,
    cov_b_s: &DMatrix<f64>,
    var_s: &DMatrix<f64>,
    cov_s_d: &DMatrix<f64>,
) -> Result<f64> {
    let chol = var_s
        .clone()
        .cholesky()
        .ok_or(Error::NotSpd("Var(S)"))?;
    let through = cov_b_s * chol.solve(cov_s_d);
    let scale = [max_abs(cov_b_d), max_abs(cov_b_s), max_abs(var_s), max_abs(cov_s_d), max_abs(&through)]
        .into_iter()
        .fold(f64::MIN_POSITIVE, f64::max);
    Ok(max_abs(&(cov_b_d - through)) / scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaResidual {
    pub name: &'static str,
    pub kind: Kind,
    pub description: &'static str,
    pub residual: f64,
}

impl LemmaResidual {
    pub fn passed(&self) -> bool {
        self.residual <= ORACLE_TOL
    }
}

/// Raw-to-means averaging operator: rows are `C̄_g` over sampled groups,
/// columns are raw individuals in the order of `assemble_joint`.
fn averaging_operator(spec: &ModelSpec, design: &Design) -> DMatrix<f64> {
    let v0 = spec.v0();
    let sampled = design.sampled_groups();
    let total: usize = design.sample_sizes.iter().sum();
    let mut p = DMatrix::zeros(sampled.len() * v0, total * v0);
    let mut col = 0;
    for (k, &g) in sampled.iter().enumerate() {
        let n = design.sample_sizes[g];
        for _ in 0..n {
            for v in 0..v0 {
                p[(k * v0 + v, col * v0 + v)] = 1.0 / n as f64;
            }
            col += 1;
        }
    }
    p
}

fn lemma_residuals(
    spec: &ModelSpec,
    design: &Design,
    kind: Kind,
    cap: usize,
    names: [&'static str; 3],
) -> Result<Vec<LemmaResidual>> {
    let vars = canonical_variables(spec)?;
    let v0 = spec.v0();
    let g0 = spec.g0();
    let sampled = design.sampled_groups();
    let joint = spec.assemble_joint(design, kind, cap)?;
    let means = spec.sample_mean_structure(design, kind)?;
    let p = averaging_operator(spec, design);

    // mean vector given raw data, through the sample means
    let cov_sbar_raw = &p * joint.var_d.as_matrix();
    let first = sufficiency_residual(&joint.cov_bd, &means.cov_bd, means.var_d.as_matrix(), &cov_sbar_raw)?;

    // M(W_t) given all sample means, through W̄_t
    let mut second = 0.0_f64;
    let mut blocks = Vec::with_capacity(v0);
    let mut ops = Vec::with_capacity(v0);
    for t in 0..v0 {
        let u_t = vars.u.columns(t, 1).into_owned();
        let on_means = kron(&DMatrix::identity(g0, g0), &u_t.transpose());
        let on_sample = kron(&DMatrix::identity(sampled.len(), sampled.len()), &u_t.transpose());
        let cov_b_d = &on_means * &means.cov_bd;
        let cov_b_s = &cov_b_d * on_sample.transpose();
        let var_s = &on_sample * means.var_d.as_matrix() * on_sample.transpose();
        let cov_s_d = &on_sample * means.var_d.as_matrix();
        second = second.max(sufficiency_residual(&cov_b_d, &cov_b_s, &var_s, &cov_s_d)?);
        let explained = &cov_b_s * var_s.clone().cholesky().ok_or(Error::NotSpd("Var(W̄_t)"))?.solve(&cov_b_s.transpose());
        blocks.push(explained);
        ops.push(on_means);
    }

    // M(W) given all sample means decomposes over t: the explained variance
    // is the direct sum of the per-t explained variances, so adjusted
    // covariances across different t vanish
    let to_w = DMatrix::from_fn(g0 * v0, g0 * v0, |r, c| {
        let (t, g) = (r / g0, r % g0);
        ops[t][(g, c)]
    });
    let cov_w_sbar = &to_w * &means.cov_bd;
    let full = &cov_w_sbar
        * means
            .var_d
            .as_matrix()
            .clone()
            .cholesky()
            .ok_or(Error::NotSpd("Var(C̄)"))?
            .solve(&cov_w_sbar.transpose());
    let summed = direct_sum(&blocks);
    let third = max_abs(&(&full - &summed)) / max_abs(&full).max(max_abs(&summed)).max(f64::MIN_POSITIVE);

    Ok(vec![
        LemmaResidual {
            name: names[0],
            kind,
            description: "sample means suffice for raw data",
            residual: first,
        },
        LemmaResidual {
            name: names[1],
            kind,
            description: "W̄_t suffices for all sample means when adjusting M(W_t)",
            residual: second,
        },
        LemmaResidual {
            name: names[2],
            kind,
            description: "adjustment of M(W) is the direct sum over t",
            residual: third,
        },
    ])
}

/// Residuals of the six sufficiency identities: three for the infinite
/// mean vector and, when every population is finite, three for the finite
/// one. Groups with `n_g = 0` are left out of the data.
pub fn check_sufficiency(spec: &ModelSpec, design: &Design, cap: usize) -> Result<Vec<LemmaResidual>> {
    let mut out = lemma_residuals(spec, design, Kind::Infinite, cap, ["L1", "L2", "L3"])?;
    if spec.all_finite() {
        out.extend(lemma_residuals(spec, design, Kind::Finite, cap, ["L4", "L5", "L6"])?);
    }
    Ok(out)
}

/// Size limits for random cases.
#[derive(Debug, Clone, Copy)]
pub struct CaseLimits {
    pub max_groups: usize,
    pub max_variables: usize,
    pub max_sample: usize,
    pub max_population: u64,
}

impl Default for CaseLimits {
    fn default() -> Self {
        Self {
            max_groups: 3,
            max_variables: 4,
            max_sample: 6,
            max_population: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomCase {
    pub spec: ModelSpec,
    pub design: Design,
    pub observed: ObservedSample,
}

fn random_spd<R: Rng>(rng: &mut R, dim: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let m = g.transpose() * g + DMatrix::identity(dim, dim) * dim as f64;
    let scale = m.diagonal().max();
    m / scale
}

/// A random valid model with finite populations, a design within them, and
/// synthetic raw data.
pub fn random_case<R: Rng>(rng: &mut R, limits: CaseLimits) -> Result<RandomCase> {
    let g0 = rng.random_range(1..=limits.max_groups);
    let v0 = rng.random_range(1..=limits.max_variables);
    let d = SymMatrix::symmetrized(random_spd(rng, v0));
    let c_raw = SymMatrix::symmetrized(random_spd(rng, v0));
    // rescale C so the top variable resolution lies in (0.2, 0.95)
    let phi_raw = gen_eig(&c_raw, &d)?.resolutions[0];
    let target = rng.random_range(0.2..0.95);
    let c = SymMatrix::symmetrized(c_raw.as_matrix() * (target / phi_raw));
    let alpha = SymMatrix::symmetrized(random_spd(rng, g0) * rng.random_range(0.5..2.0));
    let bound = (0..g0).map(|g| alpha[(g, g)] * target).fold(0.0, f64::max);
    let gamma: Vec<f64> = (0..g0).map(|_| rng.random_range(1.05 * bound..3.0 * bound)).collect();
    let mu = DMatrix::from_fn(g0, v0, |_, _| rng.random_range(-2.0..2.0));

    let mut sizes: Vec<usize> = (0..g0)
        .map(|_| if g0 > 1 && rng.random_bool(0.1) { 0 } else { rng.random_range(1..=limits.max_sample) })
        .collect();
    if sizes.iter().all(|&n| n == 0) {
        sizes[0] = 1;
    }
    let pops: Vec<PopulationSize> = sizes
        .iter()
        .map(|&n| {
            let lo = (n as u64).max(2);
            PopulationSize::Finite(rng.random_range(lo..=limits.max_population.max(lo)))
        })
        .collect();

    let spec = ModelSpec::new(
        (1..=g0).map(|g| format!("g{g}")).collect(),
        (1..=v0).map(|v| format!("x{v}")).collect(),
        d,
        c,
        alpha,
        gamma,
        mu,
        pops,
    )?;
    spec.ensure_valid()?;
    let design = Design::new(sizes);
    let observed = synthetic_data(rng, &spec, &design)?;
    Ok(RandomCase { spec, design, observed })
}

/// A random design for `spec` with at least one sampled group and no more
/// than `max_sample` individuals, or the population size, per group.
pub fn random_design<R: Rng>(rng: &mut R, spec: &ModelSpec, max_sample: usize) -> Design {
    let mut sizes: Vec<usize> = spec
        .pop_sizes
        .iter()
        .map(|p| {
            let cap = p.finite().map_or(max_sample, |m| max_sample.min(m as usize));
            if spec.g0() > 1 && rng.random_bool(0.1) {
                0
            } else {
                rng.random_range(1..=cap.max(1))
            }
        })
        .collect();
    if sizes.iter().all(|&n| n == 0) {
        sizes[0] = 1;
    }
    Design::new(sizes)
}

/// `cases` reproducible random designs with synthetic data for a fixed model.
pub fn model_cases(spec: &ModelSpec, cases: usize, seed: u64, max_sample: usize) -> Result<Vec<(Design, ObservedSample)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|_| {
            let design = random_design(&mut rng, spec, max_sample);
            let observed = synthetic_data(&mut rng, spec, &design)?;
            Ok((design, observed))
        })
        .collect()
}

/// Raw observations `prior mean + L·z` with `L·Lᵀ` the prior variance of the
/// sampled individuals. The adjustment identities hold for any data vector,
/// so only the scale of the draws matters.
pub fn synthetic_data<R: Rng>(rng: &mut R, spec: &ModelSpec, design: &Design) -> Result<ObservedSample> {
    let joint = spec.assemble_joint(design, Kind::Infinite, DEFAULT_JOINT_CAP)?;
    let l = cholesky_lower(&joint.var_d).ok_or(Error::NotSpd("Var(C(N))"))?;
    let z = DVector::from_fn(joint.dim_d(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = &joint.mean_d + l * z;
    let v0 = spec.v0();
    let mut offset = 0;
    let groups = design
        .sample_sizes
        .iter()
        .map(|&n| {
            if n == 0 {
                return GroupData::Missing;
            }
            let rows = DMatrix::from_fn(n, v0, |i, v| x[offset + i * v0 + v]);
            offset += n * v0;
            GroupData::Raw(rows)
        })
        .collect();
    Ok(ObservedSample::new(groups))
}

/// Largest disagreements between the decomposed route and the direct one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteComparison {
    /// Adjusted means, each scaled by its prior standard deviation.
    pub mean: f64,
    /// Adjusted variances, relative to the largest prior variance.
    pub variance: f64,
    /// Sorted canonical resolutions.
    pub resolutions: f64,
    /// Raw-data adjustment against sample-mean adjustment, both through the
    /// generic engine.
    pub raw_vs_means: f64,
}

impl RouteComparison {
    pub fn worst(&self) -> f64 {
        self.mean.max(self.variance).max(self.resolutions).max(self.raw_vs_means)
    }

    pub fn passed(&self) -> bool {
        self.worst() <= ORACLE_TOL
    }
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn compare_adjustments(prior: &SecondOrderBeliefs, a: &DVector<f64>, av: &SymMatrix, b: &DVector<f64>, bv: &SymMatrix) -> (f64, f64) {
    let sd = prior.var_b.diagonal().map(f64::sqrt);
    let mean = (a - b).component_div(&sd).amax();
    let variance = max_abs(&(av.as_matrix() - bv.as_matrix())) / prior.var_b.amax();
    (mean, variance)
}

/// Decomposed analysis (variable, group and grid routes) against the direct
/// adjustment on raw data.
pub fn compare_routes(spec: &ModelSpec, design: &Design, kind: Kind, observed: &ObservedSample) -> Result<RouteComparison> {
    let direct = direct_adjust(spec, design, kind, observed, DEFAULT_JOINT_CAP)?;
    let joint = spec.assemble_joint(design, kind, DEFAULT_JOINT_CAP)?;
    let grid = build_grid(spec, design, kind)?;
    let adjustment = grid.adjust(spec, observed)?;
    let (mean, variance) = compare_adjustments(
        &joint,
        &grid.adjusted_mean(&adjustment),
        &grid.adjusted_variance(),
        &direct.adjusted_mean,
        &direct.adjusted_var,
    );
    let grid_res = sorted(grid.resolutions());
    let direct_res = sorted(direct.canonical.resolutions.iter().copied().collect());
    let resolutions = grid_res
        .iter()
        .zip(&direct_res)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let means = spec.sample_mean_structure(design, kind)?;
    let by_means = means.adjust(&observed.means_vector(spec, design)?)?;
    let (m2, v2) = compare_adjustments(
        &joint,
        &by_means.adjusted_mean,
        &by_means.adjusted_var,
        &direct.adjusted_mean,
        &direct.adjusted_var,
    );
    Ok(RouteComparison {
        mean,
        variance,
        resolutions,
        raw_vs_means: m2.max(v2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::single_group;
    use crate::variables::{finite_resolution, infinite_resolution};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_spec(alpha: f64, gamma: f64, m: u64) -> ModelSpec {
        ModelSpec::new(
            vec!["g".into()],
            vec!["x".into()],
            SymMatrix::from_diagonal(&[1.0]),
            SymMatrix::from_diagonal(&[0.6]),
            SymMatrix::from_diagonal(&[alpha]),
            vec![gamma],
            DMatrix::from_element(1, 1, 0.5),
            vec![PopulationSize::Finite(m)],
        )
        .unwrap()
    }

    #[test]
    fn univariate_resolution() {
        let spec = scalar_spec(1.2, 2.0, 9);
        let design = Design::new(vec![4]);
        let obs = ObservedSample::new(vec![GroupData::Raw(DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 2.0, -1.0]))]);
        let inf = direct_adjust(&spec, &design, Kind::Infinite, &obs, DEFAULT_JOINT_CAP).unwrap();
        assert_abs_diff_eq!(inf.canonical.resolutions[0], infinite_resolution(1.2, 2.0, 0.6, 4), epsilon = 1e-12);
        let fin = direct_adjust(&spec, &design, Kind::Finite, &obs, DEFAULT_JOINT_CAP).unwrap();
        assert_abs_diff_eq!(fin.canonical.resolutions[0], finite_resolution(1.2, 2.0, 0.6, 4, 9), epsilon = 1e-12);
    }

    #[test]
    fn census_recovers_population_mean() {
        let spec = single_group(1.0, 2.5, PopulationSize::Finite(3));
        let rows = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.0]);
        let obs = ObservedSample::new(vec![GroupData::Raw(rows.clone())]);
        let adj = direct_adjust(&spec, &Design::new(vec![3]), Kind::Finite, &obs, DEFAULT_JOINT_CAP).unwrap();
        assert!((adj.adjusted_mean - rows.row_mean().transpose()).amax() < 1e-10);
        assert!(adj.adjusted_var.amax() < 1e-10);
    }

    #[test]
    fn sufficiency_holds_and_detects_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let case = random_case(&mut rng, CaseLimits::default()).unwrap();
        let report = check_sufficiency(&case.spec, &case.design, DEFAULT_JOINT_CAP).unwrap();
        assert_eq!(report.len(), 6);
        assert!(report.iter().all(LemmaResidual::passed), "{report:?}");

        let joint = case.spec.assemble_joint(&case.design, Kind::Infinite, DEFAULT_JOINT_CAP).unwrap();
        let means = case.spec.sample_mean_structure(&case.design, Kind::Infinite).unwrap();
        let p = averaging_operator(&case.spec, &case.design);
        let cov_s_d = &p * joint.var_d.as_matrix();
        let mut broken = joint.cov_bd.clone();
        let v0 = case.spec.v0();
        broken.view_mut((0, 0), (v0, v0)).add_scalar_mut(0.01);
        let r = sufficiency_residual(&broken, &means.cov_bd, means.var_d.as_matrix(), &cov_s_d).unwrap();
        assert!(r > 1e-3, "{r}");
    }

    #[test]
    fn scalar_sufficiency_is_exact() {
        let spec = scalar_spec(1.0, 2.0, 5);
        let report = check_sufficiency(&spec, &Design::new(vec![3]), DEFAULT_JOINT_CAP).unwrap();
        assert!(report.iter().all(|r| r.residual < 1e-14), "{report:?}");
    }

    #[test]
    fn random_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let case = random_case(&mut rng, CaseLimits::default()).unwrap();
            for kind in [Kind::Infinite, Kind::Finite] {
                let cmp = compare_routes(&case.spec, &case.design, kind, &case.observed).unwrap();
                assert!(cmp.passed(), "{cmp:?} {:?}", case.design);
            }
        }
    }
}
