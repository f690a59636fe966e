use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MetricValue {
    Value(f64),
    /// PSNR of identical images.
    Infinite,
    /// The inputs needed for this metric were not supplied.
    NotAvailable,
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Value(v) => write!(f, "{v:.6}"),
            MetricValue::Infinite => f.write_str("inf"),
            MetricValue::NotAvailable => f.write_str("n/a"),
        }
    }
}

impl From<f64> for MetricValue {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            MetricValue::Infinite
        } else {
            MetricValue::Value(v)
        }
    }
}

/// Ordered `name = value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<(String, MetricValue)>,
}

impl MetricReport {
    pub fn push(&mut self, name: &str, value: impl Into<MetricValue>) {
        self.entries.push((name.to_string(), value.into()));
    }

    pub fn get(&self, name: &str) -> Option<MetricValue> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, value) in &self.entries {
            writeln!(f, "{name} = {value}")?;
        }
        Ok(())
    }
}

pub fn parse_report(text: &str) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("report line {}: expected `name = value`", i + 1)))?;
        let value = match value.trim() {
            "inf" => MetricValue::Infinite,
            "n/a" => MetricValue::NotAvailable,
            v => MetricValue::Value(
                v.parse()
                    .map_err(|_| Error::Invalid(format!("report line {}: bad value `{v}`", i + 1)))?,
            ),
        };
        report.entries.push((name.trim().to_string(), value));
    }
    Ok(report)
}

/// Per-metric mean over reports, in first-seen key order. Finite values are
/// averaged; a metric that was only ever infinite stays infinite, one never
/// measured is `n/a`.
pub fn aggregate_reports(reports: &[MetricReport]) -> MetricReport {
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        for (n, _) in &r.entries {
            if !names.contains(&n.as_str()) {
                names.push(n);
            }
        }
    }
    let mut out = MetricReport::default();
    for name in names {
        let values: Vec<MetricValue> = reports.iter().filter_map(|r| r.get(name)).collect();
        let finite: Vec<f64> = values
            .iter()
            .filter_map(|v| match v {
                MetricValue::Value(x) => Some(*x),
                _ => None,
            })
            .collect();
        let value = if !finite.is_empty() {
            MetricValue::Value(finite.iter().sum::<f64>() / finite.len() as f64)
        } else if values.contains(&MetricValue::Infinite) {
            MetricValue::Infinite
        } else {
            MetricValue::NotAvailable
        };
        out.entries.push((name.to_string(), value));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_six_decimals() {
        let mut r = MetricReport::default();
        r.push("psnr", f64::INFINITY);
        r.push("ssim", 0.12345678);
        r.push("fid", MetricValue::NotAvailable);
        let text = r.to_string();
        assert_eq!(text, "psnr = inf\nssim = 0.123457\nfid = n/a\n");
        let back = parse_report(&text).unwrap();
        assert_eq!(back.get("ssim"), Some(MetricValue::Value(0.123457)));
        assert_eq!(back.get("psnr"), Some(MetricValue::Infinite));
        assert!(parse_report("no equals sign").is_err());
    }

    #[test]
    fn aggregation_rules() {
        let a = parse_report("x = 1\ny = inf\nz = n/a\nw = inf\n").unwrap();
        let b = parse_report("x = 3\ny = 10\nz = n/a\nw = inf\n").unwrap();
        let agg = aggregate_reports(&[a, b]);
        assert_eq!(agg.get("x"), Some(MetricValue::Value(2.0)));
        assert_eq!(agg.get("y"), Some(MetricValue::Value(10.0)));
        assert_eq!(agg.get("z"), Some(MetricValue::NotAvailable));
        assert_eq!(agg.get("w"), Some(MetricValue::Infinite));
    }
}
