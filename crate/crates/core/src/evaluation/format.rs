//! Number formatting and file writing shared by all reports.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::{EvalError, Result};

/// Significant digits for every float written to a report.
pub const SIG_DIGITS: usize = 9;

/// C `%.9g`.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= SIG_DIGITS as i32 {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (SIG_DIGITS as i32 - 1 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `x` rounded to nine significant digits.
pub fn round9(x: f64) -> f64 {
    if x.is_finite() {
        fmt_g9(x).parse().expect("formatted float parses")
    } else {
        x
    }
}

/// Serializes `value` with every float rounded to nine significant digits.
pub fn to_json_rounded<T: Serialize>(value: &T) -> Value {
    fn walk(v: &mut Value) {
        match v {
            Value::Number(n) if n.is_f64() => {
                if let Some(r) = n.as_f64().map(round9).and_then(serde_json::Number::from_f64) {
                    *n = r;
                }
            }
            Value::Array(items) => items.iter_mut().for_each(walk),
            Value::Object(map) => map.values_mut().for_each(walk),
            _ => {}
        }
    }
    let mut v = serde_json::to_value(value).expect("report serializes");
    walk(&mut v);
    v
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&to_json_rounded(value)).expect("json value serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| EvalError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

/// `# key=value` lines that open every CSV report.
pub fn csv_preamble(meta: &[(&str, String)]) -> String {
    meta.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        let cases = [
            (1.0, "1"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-2.5, "-2.5"),
            (99.99999999999, "100"),
            (1e100, "1e+100"),
            (0.0, "0"),
        ];
        for (x, s) in cases {
            assert_eq!(fmt_g9(x), s, "{x}");
        }
    }

    #[test]
    fn rounding_in_json() {
        let v = to_json_rounded(&serde_json::json!({"a": [1.0 / 3.0], "b": 2}));
        assert_eq!(v.to_string(), r#"{"a":[0.333333333],"b":2}"#);
    }
}
