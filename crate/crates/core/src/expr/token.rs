//! The 40-token vocabulary and token sequences.
//!
//! Layout: 4 special tokens (PAD/BOS/EOS/UNK), 2 structural tokens
//! (SEP/CMARK, reserved), 5 variable slots, 15 operators, and 14
//! constant-encoding symbols (C+/C-, ten digits, '.', 'e'). Constants are
//! serialized as fixed 9-token blocks `[sign d1 . d2 d3 e sign' e1 e2]`,
//! with the C+/C- pair used at both sign positions.

use std::fmt;

use super::ExprError;

/// Number of variable slots carried by the vocabulary.
pub const MAX_VARS: usize = 5;
/// Total vocabulary size.
pub const VOCAB_SIZE: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpToken {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Tan,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Sq,
    Cube,
    Abs,
    Neg,
}

pub const ALL_OPS: [OpToken; 15] = [
    OpToken::Add,
    OpToken::Sub,
    OpToken::Mul,
    OpToken::Div,
    OpToken::Sin,
    OpToken::Cos,
    OpToken::Tan,
    OpToken::Tanh,
    OpToken::Exp,
    OpToken::Log,
    OpToken::Sqrt,
    OpToken::Sq,
    OpToken::Cube,
    OpToken::Abs,
    OpToken::Neg,
];

impl OpToken {
    pub fn name(&self) -> &'static str {
        match self {
            OpToken::Add => "add",
            OpToken::Sub => "sub",
            OpToken::Mul => "mul",
            OpToken::Div => "div",
            OpToken::Sin => "sin",
            OpToken::Cos => "cos",
            OpToken::Tan => "tan",
            OpToken::Tanh => "tanh",
            OpToken::Exp => "exp",
            OpToken::Log => "log",
            OpToken::Sqrt => "sqrt",
            OpToken::Sq => "sq",
            OpToken::Cube => "cube",
            OpToken::Abs => "abs",
            OpToken::Neg => "neg",
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, OpToken::Add | OpToken::Sub | OpToken::Mul | OpToken::Div)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Pad,
    Bos,
    Eos,
    Unk,
    /// Reserved structural token.
    Sep,
    /// Reserved structural token.
    CMark,
    /// Variable slot `x{0..4}`.
    Var(u8),
    Op(OpToken),
    /// Constant-block sign `C+`.
    SignPlus,
    /// Constant-block sign `C-`.
    SignMinus,
    Digit(u8),
    Dot,
    EMark,
}

impl Token {
    pub fn id(&self) -> u32 {
        match self {
            Token::Pad => 0,
            Token::Bos => 1,
            Token::Eos => 2,
            Token::Unk => 3,
            Token::Sep => 4,
            Token::CMark => 5,
            Token::Var(i) => 6 + *i as u32,
            Token::Op(op) => 11 + ALL_OPS.iter().position(|o| o == op).unwrap() as u32,
            Token::SignPlus => 26,
            Token::SignMinus => 27,
            Token::Digit(d) => 28 + *d as u32,
            Token::Dot => 38,
            Token::EMark => 39,
        }
    }

    pub fn from_id(id: u32) -> Result<Token, ExprError> {
        Ok(match id {
            0 => Token::Pad,
            1 => Token::Bos,
            2 => Token::Eos,
            3 => Token::Unk,
            4 => Token::Sep,
            5 => Token::CMark,
            6..=10 => Token::Var((id - 6) as u8),
            11..=25 => Token::Op(ALL_OPS[(id - 11) as usize]),
            26 => Token::SignPlus,
            27 => Token::SignMinus,
            28..=37 => Token::Digit((id - 28) as u8),
            38 => Token::Dot,
            39 => Token::EMark,
            _ => return Err(ExprError::BadTokenId(id)),
        })
    }

    pub fn name(&self) -> String {
        match self {
            Token::Pad => "PAD".into(),
            Token::Bos => "BOS".into(),
            Token::Eos => "EOS".into(),
            Token::Unk => "UNK".into(),
            Token::Sep => "SEP".into(),
            Token::CMark => "CMARK".into(),
            Token::Var(i) => format!("x{i}"),
            Token::Op(op) => op.name().into(),
            Token::SignPlus => "C+".into(),
            Token::SignMinus => "C-".into(),
            Token::Digit(d) => format!("{d}"),
            Token::Dot => ".".into(),
            Token::EMark => "e".into(),
        }
    }

    pub fn from_name(name: &str) -> Result<Token, ExprError> {
        let tok = match name {
            "PAD" => Token::Pad,
            "BOS" => Token::Bos,
            "EOS" => Token::Eos,
            "UNK" => Token::Unk,
            "SEP" => Token::Sep,
            "CMARK" => Token::CMark,
            "C+" => Token::SignPlus,
            "C-" => Token::SignMinus,
            "." => Token::Dot,
            "e" => Token::EMark,
            _ => {
                if let Some(rest) = name.strip_prefix('x') {
                    if let Ok(i) = rest.parse::<u8>() {
                        if (i as usize) < MAX_VARS {
                            return Ok(Token::Var(i));
                        }
                    }
                }
                if name.len() == 1 {
                    if let Some(d) = name.chars().next().unwrap().to_digit(10) {
                        return Ok(Token::Digit(d as u8));
                    }
                }
                if let Some(op) = ALL_OPS.iter().find(|o| o.name() == name) {
                    return Ok(Token::Op(*op));
                }
                return Err(ExprError::BadTokenName(name.to_string()));
            }
        };
        Ok(tok)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Ordered token sequence, optionally BOS/EOS framed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(pub Vec<Token>);

impl TokenSeq {
    pub fn new(tokens: Vec<Token>) -> Self {
        TokenSeq(tokens)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.0.iter().map(|t| t.id()).collect()
    }

    pub fn from_ids(ids: &[u32]) -> Result<Self, ExprError> {
        Ok(TokenSeq(ids.iter().map(|&i| Token::from_id(i)).collect::<Result<_, _>>()?))
    }

    /// Tokens without any leading BOS / trailing EOS framing.
    pub fn interior(&self) -> &[Token] {
        let mut s = &self.0[..];
        if s.first() == Some(&Token::Bos) {
            s = &s[1..];
        }
        if s.last() == Some(&Token::Eos) {
            s = &s[..s.len() - 1];
        }
        s
    }

    /// Canonical textual form: space-separated token names, framing omitted.
    pub fn to_text(&self) -> String {
        self.interior()
            .iter()
            .map(|t| t.name())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Parse canonical text back into a BOS/EOS-framed sequence.
    pub fn from_text(text: &str) -> Result<Self, ExprError> {
        let mut tokens = vec![Token::Bos];
        for name in text.split_whitespace() {
            tokens.push(Token::from_name(name)?);
        }
        tokens.push(Token::Eos);
        Ok(TokenSeq(tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_exactly_40_tokens() {
        let mut seen = std::collections::HashSet::new();
        for id in 0..VOCAB_SIZE as u32 {
            let t = Token::from_id(id).unwrap();
            assert_eq!(t.id(), id);
            assert!(seen.insert(t.name()), "duplicate name for id {id}");
        }
        assert_eq!(seen.len(), VOCAB_SIZE);
        assert!(Token::from_id(VOCAB_SIZE as u32).is_err());
    }

    #[test]
    fn names_round_trip() {
        for id in 0..VOCAB_SIZE as u32 {
            let t = Token::from_id(id).unwrap();
            assert_eq!(Token::from_name(&t.name()).unwrap(), t);
        }
    }

    #[test]
    fn variable_index_bounded() {
        assert!(Token::from_name("x4").is_ok());
        assert!(Token::from_name("x5").is_err());
    }
}
