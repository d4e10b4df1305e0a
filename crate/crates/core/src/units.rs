//! Parsing of time quantities with unit suffixes (`15ms`, `0.2s`, `200us`).

use crate::error::{domain, Result};

/// Parses a duration into seconds. A bare number is taken as seconds.
pub fn parse_seconds(text: &str) -> Result<f64> {
    let t = text.trim();
    let split = t.find(|c: char| c.is_ascii_alphabetic() || c == 'µ').unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| crate::BlinkError::Domain(format!("cannot parse duration `{text}`")))?;
    let scale = match unit.trim() {
        "" | "s" => 1.0,
        "ms" => 1e-3,
        "us" | "µs" => 1e-6,
        "ns" => 1e-9,
        "min" => 60.0,
        other => return domain(format!("unknown time unit `{other}` in `{text}`")),
    };
    let secs = value * scale;
    if !secs.is_finite() {
        return domain(format!("duration `{text}` is not finite"));
    }
    Ok(secs)
}
