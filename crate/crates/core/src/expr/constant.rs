//! 9-token constant blocks: `[sign, d1, '.', d2, d3, 'e', sign', e1, e2]`.
//!
//! Values are carried at 3 significant figures in normalized scientific
//! notation (mantissa in [1, 10)); zero is the special all-zero encoding.
//! Magnitudes outside [1e-99, 9.99e99] are clamped so encoding stays total
//! on finite inputs.

use super::parse::{ParseError, ParseErrorKind};
use super::token::Token;
use super::ExprError;

/// Decompose |v| into a 3-digit mantissa `n3 in [100, 999]` and a decimal
/// exponent so that v ~= sign * (n3/100) * 10^exp.
fn sig3_parts(v: f64) -> (bool, u32, i32) {
    debug_assert!(v.is_finite());
    if v == 0.0 {
        return (false, 0, 0);
    }
    let neg = v < 0.0;
    let a = v.abs();
    let mut exp = a.log10().floor() as i32;
    let mut m = a / 10f64.powi(exp);
    if m < 1.0 {
        exp -= 1;
        m *= 10.0;
    } else if m >= 10.0 {
        exp += 1;
        m /= 10.0;
    }
    let mut n3 = (m * 100.0).round() as u32;
    if n3 >= 1000 {
        n3 = 100;
        exp += 1;
    }
    // clamp to the representable exponent window
    if exp > 99 {
        return (neg, 999, 99);
    }
    if exp < -99 {
        return (neg, 100, -99);
    }
    (neg, n3, exp)
}

fn assemble(neg: bool, n3: u32, exp: i32) -> f64 {
    if n3 == 0 {
        return 0.0;
    }
    // exact when the value is an integer or a short decimal
    let mag = if exp >= 2 {
        n3 as f64 * 10f64.powi(exp - 2)
    } else {
        n3 as f64 / 10f64.powi(2 - exp)
    };
    if neg {
        -mag
    } else {
        mag
    }
}

/// Round to 3 significant figures (the value a constant token block carries).
pub fn round_to_3_sig(v: f64) -> f64 {
    let (neg, n3, exp) = sig3_parts(v);
    assemble(neg, n3, exp)
}

/// Encode a finite real as a 9-token block.
pub fn encode_constant(v: f64) -> Result<[Token; 9], ExprError> {
    if !v.is_finite() {
        return Err(ExprError::NonFiniteConstant(v));
    }
    let (neg, n3, exp) = sig3_parts(v);
    let sign = if neg { Token::SignMinus } else { Token::SignPlus };
    let esign = if exp < 0 { Token::SignMinus } else { Token::SignPlus };
    let ea = exp.unsigned_abs();
    Ok([
        sign,
        Token::Digit((n3 / 100) as u8),
        Token::Dot,
        Token::Digit((n3 / 10 % 10) as u8),
        Token::Digit((n3 % 10) as u8),
        Token::EMark,
        esign,
        Token::Digit((ea / 10) as u8),
        Token::Digit((ea % 10) as u8),
    ])
}

fn sign_at(tokens: &[Token], pos: usize, base: usize) -> Result<bool, ParseError> {
    match tokens[pos] {
        Token::SignPlus => Ok(false),
        Token::SignMinus => Ok(true),
        _ => Err(ParseError { kind: ParseErrorKind::BadConstant, position: base + pos }),
    }
}

fn digit_at(tokens: &[Token], pos: usize, base: usize) -> Result<u32, ParseError> {
    match tokens[pos] {
        Token::Digit(d) => Ok(d as u32),
        _ => Err(ParseError { kind: ParseErrorKind::BadConstant, position: base + pos }),
    }
}

/// Decode a 9-token block. `base` is the block's offset in the surrounding
/// sequence, used only for error positions.
pub(crate) fn decode_constant_at(tokens: &[Token], base: usize) -> Result<f64, ParseError> {
    if tokens.len() != 9 {
        return Err(ParseError { kind: ParseErrorKind::BadConstant, position: base + tokens.len() });
    }
    let neg = sign_at(tokens, 0, base)?;
    let d1 = digit_at(tokens, 1, base)?;
    if tokens[2] != Token::Dot {
        return Err(ParseError { kind: ParseErrorKind::BadConstant, position: base + 2 });
    }
    let d2 = digit_at(tokens, 3, base)?;
    let d3 = digit_at(tokens, 4, base)?;
    if tokens[5] != Token::EMark {
        return Err(ParseError { kind: ParseErrorKind::BadConstant, position: base + 5 });
    }
    let eneg = sign_at(tokens, 6, base)?;
    let e1 = digit_at(tokens, 7, base)?;
    let e2 = digit_at(tokens, 8, base)?;
    let n3 = d1 * 100 + d2 * 10 + d3;
    let mut exp = (e1 * 10 + e2) as i32;
    if eneg {
        exp = -exp;
    }
    Ok(assemble(neg, n3, exp))
}

/// Decode a standalone 9-token block.
pub fn decode_constant(tokens: &[Token]) -> Result<f64, ParseError> {
    decode_constant_at(tokens, 0)
}
