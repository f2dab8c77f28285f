//! Small reference models used in tests and examples.

use nalgebra::DMatrix;

use crate::linalg::SymMatrix;
use crate::model::{ModelSpec, PopulationSize};

fn block(p: usize, q: usize, diag: f64, fill: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, q, |i, j| if i == j { diag + fill } else { fill })
}

fn two_section(a: (f64, f64), b: (f64, f64), cross: f64) -> SymMatrix {
    let mut m = DMatrix::zeros(8, 8);
    m.view_mut((0, 0), (5, 5)).copy_from(&block(5, 5, a.0, a.1));
    m.view_mut((5, 5), (3, 3)).copy_from(&block(3, 3, b.0, b.1));
    m.view_mut((0, 5), (5, 3)).fill(cross);
    m.view_mut((5, 0), (3, 5)).fill(cross);
    SymMatrix::symmetrized(m)
}

/// Three exam classes sitting an eight-question paper with two sections
/// (questions 1-5 and 6-8), class sizes 51, 101 and 203.
pub fn exam_model() -> ModelSpec {
    let d = two_section((1.0, 2.0), (4.5, 9.5), 2.75);
    let c = two_section((0.8, 0.2), (2.15, 0.85), 0.5);
    let alpha = SymMatrix::symmetrized(block(3, 3, 0.15, 0.85));
    let mut mu = DMatrix::from_element(3, 8, 4.0);
    mu.columns_mut(5, 3).fill(7.5);
    ModelSpec::new(
        vec!["class1".into(), "class2".into(), "class3".into()],
        (1..=8).map(|q| format!("q{q}")).collect(),
        d,
        c,
        alpha,
        vec![1.0; 3],
        mu,
        vec![PopulationSize::Finite(51), PopulationSize::Finite(101), PopulationSize::Finite(203)],
    )
    .expect("exam model shapes are consistent")
    .with_sections(vec![("A".into(), (0..5).collect()), ("B".into(), (5..8).collect())])
}

/// One group of two variables with `D = diag(2, 1)` and `C = diag(1, 0.25)`.
pub fn single_group(alpha: f64, gamma: f64, pop: PopulationSize) -> ModelSpec {
    ModelSpec::new(
        vec!["g".into()],
        vec!["x".into(), "y".into()],
        SymMatrix::from_diagonal(&[2.0, 1.0]),
        SymMatrix::from_diagonal(&[1.0, 0.25]),
        SymMatrix::from_diagonal(&[alpha]),
        vec![gamma],
        DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        vec![pop],
    )
    .expect("single group shapes are consistent")
}
