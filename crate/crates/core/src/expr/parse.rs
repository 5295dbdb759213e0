//! Prefix (Polish) serialization and parsing.

use super::constant::{decode_constant_at, encode_constant};
use super::token::{OpToken, Token, TokenSeq};
use super::{BinaryOp, Expr, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    /// An operator ran out of operands.
    ArityUnderflow,
    /// The expression ended but tokens remain.
    TrailingTokens,
    /// Malformed 9-token constant block.
    BadConstant,
    /// PAD/UNK/SEP/CMARK or a stray constant symbol where an operand was expected.
    UnexpectedToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub position: usize,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let what = match self.kind {
            ParseErrorKind::ArityUnderflow => "operator is missing an operand",
            ParseErrorKind::TrailingTokens => "trailing tokens after a complete expression",
            ParseErrorKind::BadConstant => "malformed constant block",
            ParseErrorKind::UnexpectedToken => "unexpected token",
        };
        write!(f, "{what} at position {}", self.position)
    }
}

impl std::error::Error for ParseError {}

fn op_of(tok: OpToken) -> Result<BinaryOp, UnaryOp> {
    match tok {
        OpToken::Add => Ok(BinaryOp::Add),
        OpToken::Sub => Ok(BinaryOp::Sub),
        OpToken::Mul => Ok(BinaryOp::Mul),
        OpToken::Div => Ok(BinaryOp::Div),
        OpToken::Sin => Err(UnaryOp::Sin),
        OpToken::Cos => Err(UnaryOp::Cos),
        OpToken::Tan => Err(UnaryOp::Tan),
        OpToken::Tanh => Err(UnaryOp::Tanh),
        OpToken::Exp => Err(UnaryOp::Exp),
        OpToken::Log => Err(UnaryOp::Log),
        OpToken::Sqrt => Err(UnaryOp::Sqrt),
        OpToken::Sq => Err(UnaryOp::Sq),
        OpToken::Cube => Err(UnaryOp::Cube),
        OpToken::Abs => Err(UnaryOp::Abs),
        OpToken::Neg => Err(UnaryOp::Neg),
    }
}

/// Serialize to prefix notation, BOS/EOS framed. Total on valid expressions;
/// constants round to 3 significant figures.
pub fn tokenize(expr: &Expr) -> TokenSeq {
    let mut out = vec![Token::Bos];
    emit(expr, &mut out);
    out.push(Token::Eos);
    TokenSeq(out)
}

fn emit(expr: &Expr, out: &mut Vec<Token>) {
    match expr {
        Expr::Var(i) => out.push(Token::Var(*i)),
        Expr::Const(v) => {
            // tokenize is only called on valid expressions (finite constants)
            let block = encode_constant(*v).expect("finite constant");
            out.extend_from_slice(&block);
        }
        Expr::Unary(op, a) => {
            out.push(Token::Op(op.token()));
            emit(a, out);
        }
        Expr::Binary(op, a, b) => {
            out.push(Token::Op(op.token()));
            emit(a, out);
            emit(b, out);
        }
    }
}

/// Parse a prefix token sequence into the unique expression it encodes,
/// consuming the whole sequence. BOS/EOS framing is optional.
pub fn parse(seq: &TokenSeq) -> Result<Expr, ParseError> {
    let tokens = &seq.0;
    let mut pos = 0usize;
    if tokens.first() == Some(&Token::Bos) {
        pos = 1;
    }
    let end = if tokens.last() == Some(&Token::Eos) && tokens.len() > pos {
        tokens.len() - 1
    } else {
        tokens.len()
    };
    let expr = parse_at(tokens, &mut pos, end)?;
    if pos != end {
        return Err(ParseError { kind: ParseErrorKind::TrailingTokens, position: pos });
    }
    Ok(expr)
}

fn parse_at(tokens: &[Token], pos: &mut usize, end: usize) -> Result<Expr, ParseError> {
    if *pos >= end {
        return Err(ParseError { kind: ParseErrorKind::ArityUnderflow, position: *pos });
    }
    let here = *pos;
    match tokens[here] {
        Token::Var(i) => {
            *pos += 1;
            Ok(Expr::Var(i))
        }
        Token::SignPlus | Token::SignMinus => {
            if here + 9 > end {
                return Err(ParseError { kind: ParseErrorKind::BadConstant, position: end });
            }
            let v = decode_constant_at(&tokens[here..here + 9], here)?;
            *pos += 9;
            Ok(Expr::Const(v))
        }
        Token::Op(op) => {
            *pos += 1;
            match op_of(op) {
                Ok(bin) => {
                    let a = parse_at(tokens, pos, end)?;
                    let b = parse_at(tokens, pos, end)?;
                    Ok(Expr::binary(bin, a, b))
                }
                Err(un) => {
                    let a = parse_at(tokens, pos, end)?;
                    Ok(Expr::unary(un, a))
                }
            }
        }
        _ => Err(ParseError { kind: ParseErrorKind::UnexpectedToken, position: here }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::round_to_3_sig;

    #[test]
    fn tokenize_add_with_constant() {
        let e = Expr::add(Expr::var(0), Expr::con(1.0));
        let seq = tokenize(&e);
        assert_eq!(seq.to_text(), "add x0 C+ 1 . 0 0 e C+ 0 0");
        assert_eq!(seq.0.first(), Some(&Token::Bos));
        assert_eq!(seq.0.last(), Some(&Token::Eos));
    }

    #[test]
    fn tokenize_single_leaf() {
        let e = Expr::var(3);
        let seq = tokenize(&e);
        assert_eq!(seq.0, vec![Token::Bos, Token::Var(3), Token::Eos]);
    }

    #[test]
    fn prefix_order_for_nested_ops() {
        let e = Expr::unary(UnaryOp::Sin, Expr::mul(Expr::var(0), Expr::var(1)));
        assert_eq!(tokenize(&e).to_text(), "sin mul x0 x1");
    }

    #[test]
    fn parse_inverts_tokenize() {
        let e = Expr::sub(
            Expr::unary(UnaryOp::Sqrt, Expr::var(2)),
            Expr::mul(Expr::con(-2.5), Expr::unary(UnaryOp::Tanh, Expr::var(0))),
        );
        assert_eq!(parse(&tokenize(&e)).unwrap(), e);
    }

    #[test]
    fn parse_constant_rounding() {
        let e = Expr::con(1.23456);
        let back = parse(&tokenize(&e)).unwrap();
        assert_eq!(back, Expr::Const(round_to_3_sig(1.23456)));
    }

    #[test]
    fn arity_underflow_reported() {
        let seq = TokenSeq(vec![Token::Bos, Token::Op(OpToken::Add), Token::Var(0), Token::Eos]);
        let err = parse(&seq).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::ArityUnderflow);
    }

    #[test]
    fn trailing_tokens_reported() {
        let seq = TokenSeq(vec![Token::Bos, Token::Var(0), Token::Var(1), Token::Eos]);
        let err = parse(&seq).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::TrailingTokens);
        assert_eq!(err.position, 2);
    }

    #[test]
    fn unk_and_pad_rejected_with_position() {
        let seq = TokenSeq(vec![Token::Bos, Token::Op(OpToken::Sin), Token::Unk, Token::Eos]);
        let err = parse(&seq).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnexpectedToken);
        assert_eq!(err.position, 2);
        let seq = TokenSeq(vec![Token::Pad]);
        assert!(parse(&seq).is_err());
    }

    #[test]
    fn text_round_trip() {
        let e = Expr::div(Expr::unary(UnaryOp::Abs, Expr::var(1)), Expr::con(3.0));
        let text = tokenize(&e).to_text();
        let seq = TokenSeq::from_text(&text).unwrap();
        assert_eq!(parse(&seq).unwrap(), e);
    }
}
