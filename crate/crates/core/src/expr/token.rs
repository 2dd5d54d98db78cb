use std::fmt;
use std::str::FromStr;

use super::ExprError;

/// A vocabulary entry. Discriminants are the token ids used by the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Token {
    Add = 0,
    Mul,
    Sin,
    Cos,
    Log,
    Exp,
    Neg,
    Inv,
    Sq,
    Cb,
    Sqrt,
    C,
    X1,
    X2,
    X3,
    X4,
    X5,
    X6,
    Sos,
    Pad,
}

/// Number of tokens in the vocabulary, including `SOS` and `PAD`.
pub const VOCAB_SIZE: usize = 20;

/// Number of tokens that may appear inside an expression tree.
pub const GENERATIVE_COUNT: usize = 18;

/// Maximum number of distinct variables (`x1..x6`).
pub const MAX_VARIABLES: usize = 6;

impl Token {
    pub const ALL: [Token; VOCAB_SIZE] = [
        Token::Add,
        Token::Mul,
        Token::Sin,
        Token::Cos,
        Token::Log,
        Token::Exp,
        Token::Neg,
        Token::Inv,
        Token::Sq,
        Token::Cb,
        Token::Sqrt,
        Token::C,
        Token::X1,
        Token::X2,
        Token::X3,
        Token::X4,
        Token::X5,
        Token::X6,
        Token::Sos,
        Token::Pad,
    ];

    pub const VARIABLES: [Token; MAX_VARIABLES] = [
        Token::X1,
        Token::X2,
        Token::X3,
        Token::X4,
        Token::X5,
        Token::X6,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: usize) -> Option<Token> {
        Token::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Token::Add => "add",
            Token::Mul => "mul",
            Token::Sin => "sin",
            Token::Cos => "cos",
            Token::Log => "log",
            Token::Exp => "exp",
            Token::Neg => "neg",
            Token::Inv => "inv",
            Token::Sq => "sq",
            Token::Cb => "cb",
            Token::Sqrt => "sqrt",
            Token::C => "C",
            Token::X1 => "x1",
            Token::X2 => "x2",
            Token::X3 => "x3",
            Token::X4 => "x4",
            Token::X5 => "x5",
            Token::X6 => "x6",
            Token::Sos => "<SOS>",
            Token::Pad => "<PAD>",
        }
    }

    /// Child count required by the token. `SOS` and `PAD` have no arity.
    pub fn arity(self) -> Result<usize, ExprError> {
        match self {
            Token::Add | Token::Mul => Ok(2),
            Token::Sin
            | Token::Cos
            | Token::Log
            | Token::Exp
            | Token::Neg
            | Token::Inv
            | Token::Sq
            | Token::Cb
            | Token::Sqrt => Ok(1),
            Token::C
            | Token::X1
            | Token::X2
            | Token::X3
            | Token::X4
            | Token::X5
            | Token::X6 => Ok(0),
            Token::Sos | Token::Pad => Err(ExprError::InvalidToken(self)),
        }
    }

    pub fn is_generative(self) -> bool {
        !matches!(self, Token::Sos | Token::Pad)
    }

    pub fn is_leaf(self) -> bool {
        matches!(self.arity(), Ok(0))
    }

    /// Zero-based variable index for `x1..x6`.
    pub fn variable_index(self) -> Option<usize> {
        match self {
            Token::X1 => Some(0),
            Token::X2 => Some(1),
            Token::X3 => Some(2),
            Token::X4 => Some(3),
            Token::X5 => Some(4),
            Token::X6 => Some(5),
            _ => None,
        }
    }

    pub fn variable(index: usize) -> Option<Token> {
        Token::VARIABLES.get(index).copied()
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Token {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Token::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .or(match s {
                "SOS" => Some(Token::Sos),
                "PAD" => Some(Token::Pad),
                _ => None,
            })
            .ok_or_else(|| ExprError::UnknownToken(s.to_string()))
    }
}

/// The fixed 20-token vocabulary together with the sampling weights of the
/// 18 generative tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    weights: [f64; GENERATIVE_COUNT],
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut weights = [0.0; GENERATIVE_COUNT];
        for (token, w) in [
            (Token::Add, 2.0),
            (Token::Mul, 2.0),
            (Token::Sin, 0.5),
            (Token::Cos, 0.5),
            (Token::Log, 0.5),
            (Token::Exp, 0.5),
            (Token::Neg, 1.0),
            (Token::Inv, 1.0),
            (Token::Sq, 1.0),
            (Token::Cb, 0.25),
            (Token::Sqrt, 0.5),
            (Token::C, 4.0),
            (Token::X1, 1.0),
            (Token::X2, 1.0),
            (Token::X3, 1.0),
            (Token::X4, 1.0),
            (Token::X5, 1.0),
            (Token::X6, 1.0),
        ] {
            weights[token.id() as usize] = w;
        }
        Vocabulary { weights }
    }
}

impl Vocabulary {
    pub fn with_weights(weights: [f64; GENERATIVE_COUNT]) -> Result<Self, ExprError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ExprError::InvalidWeights("weights must be finite and non-negative"));
        }
        let leaf_mass: f64 = Token::ALL[..GENERATIVE_COUNT]
            .iter()
            .filter(|t| t.is_leaf())
            .map(|t| weights[t.id() as usize])
            .sum();
        if leaf_mass <= 0.0 {
            return Err(ExprError::InvalidWeights("at least one leaf needs a positive weight"));
        }
        Ok(Vocabulary { weights })
    }

    pub fn len(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &'static [Token; VOCAB_SIZE] {
        &Token::ALL
    }

    /// Sampling weight of a generative token; `None` for `SOS` and `PAD`.
    pub fn weight(&self, token: Token) -> Option<f64> {
        self.weights.get(token.id() as usize).copied()
    }

    pub fn weights(&self) -> &[f64; GENERATIVE_COUNT] {
        &self.weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arity_examples() {
        assert_eq!(Token::Add.arity().unwrap(), 2);
        assert_eq!(Token::Sqrt.arity().unwrap(), 1);
        assert_eq!(Token::X3.arity().unwrap(), 0);
        assert!(matches!(Token::Sos.arity(), Err(ExprError::InvalidToken(Token::Sos))));
        assert!(Token::Pad.arity().is_err());
    }

    #[test]
    fn ids_are_a_bijection() {
        assert_eq!(Token::ALL.len(), 20);
        for (i, t) in Token::ALL.iter().enumerate() {
            assert_eq!(t.id() as usize, i);
            assert_eq!(Token::from_id(i), Some(*t));
            assert_eq!(t.name().parse::<Token>().unwrap(), *t);
        }
        assert_eq!(Token::from_id(20), None);
    }

    #[test]
    fn special_tokens_have_no_weight() {
        let vocab = Vocabulary::default();
        assert_eq!(vocab.len(), 20);
        assert!(vocab.weight(Token::Sos).is_none());
        assert!(vocab.weight(Token::Pad).is_none());
        assert!(vocab.weight(Token::Mul).unwrap() > vocab.weight(Token::Cos).unwrap());
        assert!(Vocabulary::with_weights([0.0; GENERATIVE_COUNT]).is_err());
    }
}
