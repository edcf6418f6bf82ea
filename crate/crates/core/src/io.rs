//! `time,value` CSV files: plain decimal, 17 significant digits, LF endings.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "time,value";

/// Formats `x` in positional decimal with exactly 17 significant digits,
/// which is enough for any `f64` to survive a text round trip.
pub fn format_f64(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let n = digits.len() as i32;
    let body = if x == 0.0 {
        format!("0.{}", &digits[1..])
    } else if exp < 0 {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    } else if exp >= n - 1 {
        format!("{}{}", digits, "0".repeat((exp - (n - 1)) as usize))
    } else {
        let split = (exp + 1) as usize;
        format!("{}.{}", &digits[..split], &digits[split..])
    };
    format!("{sign}{body}")
}

pub fn write_series_csv(rows: impl IntoIterator<Item = (f64, f64)>) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (t, v) in rows {
        let _ = writeln!(out, "{},{}", format_f64(t), format_f64(v));
    }
    out
}

/// Parses a `time,value` CSV. Line numbers in errors are 1-based.
pub fn read_series_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r').trim() == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `{CSV_HEADER}`, found `{header}`"),
            })
        }
        None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        let parse = |field: Option<&str>, what: &str| -> Result<f64> {
            let f = field.ok_or_else(|| Error::Parse { line: i + 1, message: format!("missing {what}") })?;
            f.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("invalid {what} `{}`", f.trim()),
            })
        };
        let mut fields = line.split(',');
        let t = parse(fields.next(), "time")?;
        let v = parse(fields.next(), "value")?;
        if fields.next().is_some() {
            return Err(Error::Parse { line: i + 1, message: "expected two fields".into() });
        }
        rows.push((t, v));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formats() {
        assert_eq!(format_f64(1.0), "1.0000000000000000");
        assert_eq!(format_f64(0.0), "0.0000000000000000");
        assert_eq!(format_f64(-2.5), "-2.5000000000000000");
        assert_eq!(format_f64(0.001), "0.0010000000000000000");
        assert_eq!(format_f64(1e20), "100000000000000000000");
        assert_eq!(format_f64(0.1), "0.10000000000000001");
        assert_eq!(format_f64(123.456), "123.45600000000000");
    }

    #[test]
    fn header_errors_name_the_line() {
        let err = read_series_csv("t,v\n0,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = read_series_csv("time,value\n0,1\n1,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        assert!(read_series_csv("").is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_is_lossless(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = format_f64(x);
            prop_assert!(!s.contains('e'));
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![(0.0, 1.5), (0.01, -3.25e-7)];
        let text = write_series_csv(rows.clone());
        assert!(text.starts_with("time,value\n"));
        assert_eq!(read_series_csv(&text).unwrap(), rows);
    }
}
