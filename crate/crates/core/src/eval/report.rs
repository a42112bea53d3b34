//! Benchmark report rows, means and the CSV format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{percent_drop, percent_increase, Methodology};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "image,method,methodology,baseline_ss,perturbed_ss,drop_pct,baseline_exai,perturbed_exai,increase_pct";

/// One (image, method, methodology) measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub image: String,
    pub method: String,
    pub methodology: Methodology,
    pub baseline_ss: f64,
    pub perturbed_ss: f64,
    pub drop_pct: f64,
    /// Mean entropy over the target set.
    pub baseline_exai: f64,
    pub perturbed_exai: f64,
    pub increase_pct: f64,
    /// Entropy summed over the target set.
    pub baseline_exai_sum: f64,
    pub perturbed_exai_sum: f64,
}

impl ReportRow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        image: String,
        method: String,
        methodology: Methodology,
        baseline_ss: f64,
        perturbed_ss: f64,
        baseline_exai: (f64, f64),
        perturbed_exai: (f64, f64),
    ) -> Result<Self> {
        Ok(ReportRow {
            image,
            method,
            methodology,
            baseline_ss,
            perturbed_ss,
            drop_pct: percent_drop(baseline_ss, perturbed_ss)?,
            baseline_exai: baseline_exai.0,
            perturbed_exai: perturbed_exai.0,
            increase_pct: percent_increase(baseline_exai.0, perturbed_exai.0)?,
            baseline_exai_sum: baseline_exai.1,
            perturbed_exai_sum: perturbed_exai.1,
        })
    }
}

/// Dataset mean of one (method, methodology) cell. Percentages are computed
/// from the mean raw scores.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanRow {
    pub method: String,
    pub methodology: Methodology,
    pub count: usize,
    pub baseline_ss: f64,
    pub perturbed_ss: f64,
    pub drop_pct: f64,
    pub baseline_exai: f64,
    pub perturbed_exai: f64,
    pub increase_pct: f64,
    pub baseline_exai_sum: f64,
    pub perturbed_exai_sum: f64,
}

/// A measurement that failed and was left out of the means.
#[derive(Clone, Debug, PartialEq)]
pub struct RowError {
    pub image: String,
    pub method: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub means: Vec<MeanRow>,
    pub errors: Vec<RowError>,
}

impl EvalReport {
    /// Builds the report and its means block from rows in dataset order.
    pub fn from_rows(rows: Vec<ReportRow>, errors: Vec<RowError>) -> Result<Self> {
        let mut cells: Vec<(String, Methodology)> = Vec::new();
        for r in &rows {
            if !cells.iter().any(|(m, p)| m == &r.method && *p == r.methodology) {
                cells.push((r.method.clone(), r.methodology));
            }
        }
        let means = cells
            .into_iter()
            .map(|(method, methodology)| {
                let members: Vec<&ReportRow> =
                    rows.iter().filter(|r| r.method == method && r.methodology == methodology).collect();
                let n = members.len() as f64;
                let mean = |f: fn(&ReportRow) -> f64| members.iter().fold(0.0, |acc, r| acc + f(r)) / n;
                let (baseline_ss, perturbed_ss) = (mean(|r| r.baseline_ss), mean(|r| r.perturbed_ss));
                let (baseline_exai, perturbed_exai) = (mean(|r| r.baseline_exai), mean(|r| r.perturbed_exai));
                Ok(MeanRow {
                    count: members.len(),
                    baseline_ss,
                    perturbed_ss,
                    drop_pct: percent_drop(baseline_ss, perturbed_ss)?,
                    baseline_exai,
                    perturbed_exai,
                    increase_pct: percent_increase(baseline_exai, perturbed_exai)?,
                    baseline_exai_sum: mean(|r| r.baseline_exai_sum),
                    perturbed_exai_sum: mean(|r| r.perturbed_exai_sum),
                    method,
                    methodology,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvalReport { rows, means, errors })
    }

    pub fn mean(&self, method: &str, methodology: Methodology) -> Option<&MeanRow> {
        self.means.iter().find(|m| m.method == method && m.methodology == methodology)
    }

    /// Header, one line per row, then the means block with image `mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_HEADER);
        out.push('\n');
        let mut line = |image: &str, method: &str, m: Methodology, v: [f64; 6]| {
            let _ = write!(out, "{image},{method},{m}");
            for x in v {
                out.push(',');
                out.push_str(&format_sig6(x));
            }
            out.push('\n');
        };
        for r in &self.rows {
            line(
                &r.image,
                &r.method,
                r.methodology,
                [r.baseline_ss, r.perturbed_ss, r.drop_pct, r.baseline_exai, r.perturbed_exai, r.increase_pct],
            );
        }
        for r in &self.means {
            line(
                "mean",
                &r.method,
                r.methodology,
                [r.baseline_ss, r.perturbed_ss, r.drop_pct, r.baseline_exai, r.perturbed_exai, r.increase_pct],
            );
        }
        out
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Method-by-metric summary: SS drop under M1 and M2, E_XAI increase
    /// (mean and sum forms) under M3.
    pub fn summary_table(&self) -> String {
        let mut methods: Vec<&str> = Vec::new();
        for m in &self.means {
            if !methods.contains(&m.method.as_str()) {
                methods.push(&m.method);
            }
        }
        let mut out = String::new();
        let _ = write!(out, "{:<34}", "metric / methodology");
        for m in &methods {
            let _ = write!(out, " {m:>17}");
        }
        out.push('\n');
        let rows: [(&str, Methodology, fn(&MeanRow) -> f64); 4] = [
            ("(%) drop in SS / M1", Methodology::BackgroundOnly, |r| r.drop_pct),
            ("(%) drop in SS / M2", Methodology::HighlightedOnly, |r| r.drop_pct),
            ("(%) increase in E_XAI / M3", Methodology::HighlightedPlusTarget, |r| r.increase_pct),
            ("(%) increase in sum E_XAI / M3", Methodology::HighlightedPlusTarget, |r| {
                100.0 * (r.perturbed_exai_sum - r.baseline_exai_sum) / r.baseline_exai_sum
            }),
        ];
        for (label, methodology, value) in rows {
            if !self.means.iter().any(|m| m.methodology == methodology) {
                continue;
            }
            let _ = write!(out, "{label:<34}");
            for m in &methods {
                match self.mean(m, methodology) {
                    Some(r) => {
                        let _ = write!(out, " {:>16.2}%", value(r));
                    }
                    None => {
                        let _ = write!(out, " {:>17}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Formats like C's `%.6g`.
pub fn format_sig6(value: f64) -> String {
    const PRECISION: i32 = 6;
    if value == 0.0 {
        return if value.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !value.is_finite() {
        return format!("{value}");
    }
    // exponent after rounding to 6 significant digits
    let sci = format!("{:.*e}", (PRECISION - 1) as usize, value);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= PRECISION {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (PRECISION - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{value:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A CSV line parsed back into values.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedRow {
    pub image: String,
    pub method: String,
    pub methodology: Methodology,
    pub values: [f64; 6],
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ParsedRow>> {
    let mut lines = text.split('\n');
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::format("CSV", "missing or wrong header"));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::format("CSV", format!("line {}: {} fields", n + 2, fields.len())));
        }
        let mut values = [0.0; 6];
        for (v, f) in values.iter_mut().zip(&fields[3..]) {
            *v = f.parse().map_err(|_| Error::format("CSV", format!("line {}: bad number `{f}`", n + 2)))?;
        }
        rows.push(ParsedRow {
            image: fields[0].to_string(),
            method: fields[1].to_string(),
            methodology: fields[2].parse()?,
            values,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(image: &str, ss: (f64, f64), ex: (f64, f64)) -> ReportRow {
        ReportRow::new(image.into(), "seg-grad-cam".into(), Methodology::BackgroundOnly, ss.0, ss.1, (ex.0, ex.0 * 10.0), (ex.1, ex.1 * 10.0))
            .unwrap()
    }

    #[test]
    fn sig6_matches_printf() {
        let cases = [
            (0.891100, "0.8911"),
            (13.04, "13.04"),
            (100.0, "100"),
            (123456789.0, "1.23457e+08"),
            (0.000123456789, "0.000123457"),
            (0.0000123456, "1.23456e-05"),
            (-4.5, "-4.5"),
            (0.0, "0"),
            (999999.5, "1e+06"),
            (1.0 / 3.0, "0.333333"),
        ];
        for (v, s) in cases {
            assert_eq!(format_sig6(v), s, "{v}");
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = EvalReport::default();
        assert_eq!(r.to_csv(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn single_row_means_equal_the_row() {
        let r = EvalReport::from_rows(vec![row("img_0000", (0.8, 0.6), (0.1, 0.15))], vec![]).unwrap();
        let m = &r.means[0];
        assert_eq!((m.baseline_ss, m.perturbed_ss, m.drop_pct), (0.8, 0.6, r.rows[0].drop_pct));
        assert_eq!(m.increase_pct, r.rows[0].increase_pct);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.ends_with('\n') && !csv.contains('\r'));
    }

    #[test]
    fn percent_figures_recompute_from_raw_scores() {
        let r = EvalReport::from_rows(
            vec![row("a", (0.8, 0.6), (0.1, 0.15)), row("b", (0.7, 0.65), (0.2, 0.21))],
            vec![],
        )
        .unwrap();
        for x in &r.rows {
            assert!((x.drop_pct - 100.0 * (x.baseline_ss - x.perturbed_ss) / x.baseline_ss).abs() < 1e-9);
        }
        let m = &r.means[0];
        assert!((m.drop_pct - 100.0 * (m.baseline_ss - m.perturbed_ss) / m.baseline_ss).abs() < 1e-9);
        assert!((m.increase_pct - 100.0 * (m.perturbed_exai - m.baseline_exai) / m.baseline_exai).abs() < 1e-9);
    }

    #[test]
    fn csv_parses_back_to_six_digits() {
        let r = EvalReport::from_rows(vec![row("a", (0.812345678, 0.6), (0.0123456789, 0.15))], vec![]).unwrap();
        let parsed = parse_report_csv(&r.to_csv()).unwrap();
        assert_eq!(parsed.len(), 2);
        let x = &r.rows[0];
        let expected = [x.baseline_ss, x.perturbed_ss, x.drop_pct, x.baseline_exai, x.perturbed_exai, x.increase_pct];
        for (got, want) in parsed[0].values.iter().zip(expected) {
            assert!(((got - want) / want).abs() < 5e-6, "{got} vs {want}");
        }
        assert!(parse_report_csv("nope\n").is_err());
    }
}
