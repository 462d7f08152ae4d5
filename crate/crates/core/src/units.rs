//! Parsing of numeric command-line values.

use crate::error::{Error, Result};

/// Parses an element or byte count.
///
/// Accepts plain integers (`4096`), scientific notation (`1e9`, `2.5e6`) and
/// binary suffixes (`64Ki`, `32Mi`, `1.5Gi`, `1Ti`). The result must be a
/// non-negative integer.
pub fn parse_count(text: &str) -> Result<u64> {
    let t = text.trim().replace('_', "");
    let (number, scale) = [
        ("Ki", 1u64 << 10),
        ("Mi", 1 << 20),
        ("Gi", 1 << 30),
        ("Ti", 1 << 40),
    ]
    .into_iter()
    .find_map(|(suffix, scale)| t.strip_suffix(suffix).map(|n| (n.to_string(), scale)))
    .unwrap_or((t.clone(), 1));

    if let Ok(v) = number.parse::<u64>() {
        return v
            .checked_mul(scale)
            .ok_or_else(|| Error::InvalidArgument(format!("`{text}` overflows")));
    }
    let v: f64 = number
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("`{text}` is not a count")))?;
    let scaled = v * scale as f64;
    if !scaled.is_finite() || scaled < 0.0 || scaled.fract() != 0.0 || scaled > u64::MAX as f64 {
        return Err(Error::InvalidArgument(format!(
            "`{text}` is not a non-negative integer count"
        )));
    }
    Ok(scaled as u64)
}

/// Comma-separated list of counts.
pub fn parse_count_list(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse_count)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forms() {
        assert_eq!(parse_count("4096").unwrap(), 4096);
        assert_eq!(parse_count("1e9").unwrap(), 1_000_000_000);
        assert_eq!(parse_count("2.5e6").unwrap(), 2_500_000);
        assert_eq!(parse_count("64Mi").unwrap(), 64 << 20);
        assert_eq!(parse_count("1.5Ki").unwrap(), 1536);
        assert_eq!(parse_count("1_000").unwrap(), 1000);
        assert_eq!(
            parse_count_list("32Mi, 64Mi,128Mi").unwrap(),
            vec![32 << 20, 64 << 20, 128 << 20]
        );
    }

    #[test]
    fn rejects() {
        for bad in ["", "-1", "1.5", "abc", "1e400", "3Xi"] {
            assert!(parse_count(bad).is_err(), "{bad}");
        }
    }
}
