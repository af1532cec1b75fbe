//! Plain CSV text helpers shared by every exporter: header row, `,`
//! separator, `.` decimal point, LF endings, 9 significant digits.

use std::fmt::Write as _;

/// Format with 9 significant digits. Plain notation for magnitudes in
/// `[1e-5, 1e9)`, scientific otherwise; trailing zeros are trimmed.
pub fn sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_zeros(s)
    } else {
        let s = format!("{x:.8e}");
        match s.split_once('e') {
            Some((mant, e)) => format!("{}e{e}", trim_zeros(mant.to_string())),
            None => s,
        }
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        if t == "-0" {
            "0".to_string()
        } else {
            t.to_string()
        }
    } else {
        s
    }
}

/// Accumulates CSV text with a fixed header.
#[derive(Clone, Debug)]
pub struct CsvTable {
    columns: usize,
    text: String,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut text = String::new();
        let names: Vec<&str> = header.iter().map(|s| s.as_ref()).collect();
        let _ = writeln!(text, "{}", names.join(","));
        Self {
            columns: header.len(),
            text,
        }
    }

    pub fn push<S: AsRef<str>>(&mut self, fields: &[S]) {
        debug_assert_eq!(fields.len(), self.columns, "CSV row width");
        let cells: Vec<&str> = fields.iter().map(|s| s.as_ref()).collect();
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(2.0 / 3.0 * 100.0), "66.6666667");
        assert_eq!(sig9(0.25), "0.25");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(-1.5), "-1.5");
        assert_eq!(sig9(1234567891234.0), "1.23456789e12");
        assert_eq!(sig9(1.23456789e-7), "1.23456789e-7");
    }

    #[test]
    fn reparses_to_nine_digits() {
        for &x in &[std::f64::consts::PI, 1e-3 / 7.0, 123456.789012, 0.1 + 0.2] {
            let back: f64 = sig9(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-8);
        }
    }

    #[test]
    fn table_has_header_and_lf() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(&["1", "2"]);
        assert_eq!(t.as_str(), "a,b\n1,2\n");
    }
}
