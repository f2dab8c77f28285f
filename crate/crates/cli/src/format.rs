//! Deterministic number and table formatting.

/// `x` to 6 significant digits (ties to even), in plain notation for
/// moderate magnitudes and scientific otherwise.
pub fn fmt6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if !(-5..6).contains(&exp) {
        return sci;
    }
    let decimals = (5 - exp) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.');
        if trimmed == "-0" { "0".into() } else { trimmed.into() }
    } else {
        s
    }
}

/// Formats a coefficient vector, printing entries below `1e-12` of its
/// largest magnitude as 0 so round-off does not show up in reports.
pub fn fmt_coefficients<'a>(v: impl IntoIterator<Item = &'a f64>) -> Vec<String> {
    let v: Vec<f64> = v.into_iter().copied().collect();
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    v.iter().map(|&x| fmt6(if x.abs() <= 1e-12 * scale { 0.0 } else { x })).collect()
}

/// Whitespace-aligned text table; the first column is left-aligned.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|j| {
                std::iter::once(&self.header)
                    .chain(&self.rows)
                    .map(|r| r[j].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, &w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            out += cells.join("  ").trim_end();
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(0.862512345), "0.862512");
        assert_eq!(fmt6(2.73895964), "2.73896");
        assert_eq!(fmt6(-0.35), "-0.35");
        assert_eq!(fmt6(123456.7), "123457");
        assert_eq!(fmt6(9.9999996), "10");
        assert_eq!(fmt6(1.0e-7), "1.00000e-7");
        assert_eq!(fmt6(-1.0e-13), "-1.00000e-13");
        assert_eq!(fmt6(4.0), "4");
        assert_eq!(fmt6(f64::INFINITY), "inf");
    }

    #[test]
    fn ties_round_to_even() {
        // 0.5 steps are exact in binary
        assert_eq!(fmt6(100000.5), "100000");
        assert_eq!(fmt6(100001.5), "100002");
    }

    #[test]
    fn coefficient_round_off_is_zeroed() {
        assert_eq!(fmt_coefficients(&[0.5, -1.3e-16, 2e-9]), ["0.5", "0", "2.00000e-9"]);
    }

    #[test]
    fn aligns_columns() {
        let mut t = Table::new(vec!["a".into(), "bb".into()]);
        t.push(vec!["long".into(), "1".into()]);
        assert_eq!(t.render(), "a     bb\nlong   1\n");
    }
}
