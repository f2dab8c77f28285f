use std::path::Path;

use coex_core::fixtures::exam_model;
use coex_core::io::load_model;
use coex_core::linalg::max_abs;

#[test]
fn shipped_exam_model_matches_fixture() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/exam.json");
    let loaded = load_model(&path).unwrap();
    let fixture = exam_model();
    assert!(loaded.validate().is_empty());
    assert_eq!(loaded.group_labels, fixture.group_labels);
    assert_eq!(loaded.variable_labels, fixture.variable_labels);
    assert_eq!(loaded.pop_sizes, fixture.pop_sizes);
    assert_eq!(loaded.gamma, fixture.gamma);
    assert_eq!(loaded.sections, fixture.sections);
    assert!(max_abs(&(loaded.d.as_matrix() - fixture.d.as_matrix())) < 1e-12);
    assert!(max_abs(&(loaded.c.as_matrix() - fixture.c.as_matrix())) < 1e-12);
    assert!(max_abs(&(loaded.alpha.as_matrix() - fixture.alpha.as_matrix())) < 1e-12);
    assert!(max_abs(&(&loaded.mu - &fixture.mu)) < 1e-12);
}
