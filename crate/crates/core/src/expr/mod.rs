//! Tokens, expression trees and their text forms.

mod eval;
mod infix;
mod token;
mod tree;

use thiserror::Error;

pub use eval::{evaluate, EvalError};
pub use infix::{parse_infix, print_infix};
pub use token::{Token, Vocabulary, GENERATIVE_COUNT, MAX_VARIABLES, VOCAB_SIZE};
pub use tree::{prefix_status, ExprTree, PrefixStatus, Preorder, TokenSequence};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ExprError {
    #[error("token {0} cannot appear inside an expression")]
    InvalidToken(Token),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("unknown token id {0}")]
    UnknownTokenId(usize),
    #[error("{token} takes {expected} children, got {found}")]
    ArityMismatch {
        token: Token,
        expected: usize,
        found: usize,
    },
    #[error("token sequence ends before the tree is complete")]
    ArityDeficit,
    #[error("surplus tokens after the tree completed, starting at position {at}")]
    SurplusTokens { at: usize },
    #[error("sequence of {len} tokens exceeds the limit of {max}")]
    TooLong { len: usize, max: usize },
    #[error("syntax error at offset {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier `{name}` at offset {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("invalid sampling weights: {0}")]
    InvalidWeights(&'static str),
}
