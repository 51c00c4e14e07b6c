//! Exact hexadecimal text encoding of `f64` (`0x1.8p+1` style).

use crate::error::{Error, Result};

/// Formats a finite double so that [`parse`] recovers the identical bits.
pub fn format(v: f64) -> String {
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let frac = format!("{mant:013x}");
    let frac = frac.trim_end_matches('0');
    let esign = if e >= 0 { "+" } else { "-" };
    if frac.is_empty() {
        format!("{sign}0x{lead}p{esign}{}", e.abs())
    } else {
        format!("{sign}0x{lead}.{frac}p{esign}{}", e.abs())
    }
}

/// Parses the output of [`format`]. Accepts at most 53 significant bits.
pub fn parse(s: &str) -> Result<f64> {
    let bad = |detail: &str| Error::format("hex float", format!("{s:?}: {detail}"));
    let (neg, rest) = match s.as_bytes().first() {
        Some(b'-') => (true, &s[1..]),
        Some(b'+') => (false, &s[1..]),
        _ => (false, s),
    };
    let rest = rest
        .strip_prefix("0x")
        .or_else(|| rest.strip_prefix("0X"))
        .ok_or_else(|| bad("missing 0x prefix"))?;
    let (digits, exp) = rest
        .split_once(['p', 'P'])
        .ok_or_else(|| bad("missing exponent"))?;
    let exp: i64 = exp.parse().map_err(|_| bad("bad exponent"))?;
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() {
        return Err(bad("missing leading digit"));
    }
    let mut mant: u64 = 0;
    let mut bits_used = 0u32;
    for c in int_part.chars().chain(frac_part.chars()) {
        let d = c.to_digit(16).ok_or_else(|| bad("invalid digit"))? as u64;
        if mant != 0 || d != 0 {
            bits_used += 4;
        }
        if bits_used > 56 {
            return Err(bad("too many digits"));
        }
        mant = (mant << 4) | d;
    }
    if mant >= 1u64 << 53 {
        return Err(bad("too many significant bits"));
    }
    let scale = exp - 4 * frac_part.len() as i64;
    let v = ldexp(mant as f64, scale);
    if !v.is_finite() {
        return Err(bad("out of range"));
    }
    Ok(if neg { -v } else { v })
}

fn ldexp(mut x: f64, mut e: i64) -> f64 {
    while e > 1023 {
        x *= 2f64.powi(1023);
        e -= 1023;
    }
    while e < -1022 {
        x *= 2f64.powi(-1022);
        e += 1022;
    }
    x * 2f64.powi(e as i32)
}
