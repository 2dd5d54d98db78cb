use std::fmt;
use std::str::FromStr;

use super::{ExprError, Token};

/// Rooted ordered expression tree. Every node has exactly `token.arity()`
/// children, so leaves are `C` and `x1..x6`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExprTree {
    token: Token,
    children: Vec<ExprTree>,
}

impl ExprTree {
    pub fn new(token: Token, children: Vec<ExprTree>) -> Result<Self, ExprError> {
        let arity = token.arity()?;
        if arity != children.len() {
            return Err(ExprError::ArityMismatch {
                token,
                expected: arity,
                found: children.len(),
            });
        }
        Ok(ExprTree { token, children })
    }

    /// Leaf constructor.
    ///
    /// Panics when `token` is not a leaf token.
    pub fn leaf(token: Token) -> Self {
        assert!(token.is_leaf(), "{token} is not a leaf token");
        ExprTree {
            token,
            children: Vec::new(),
        }
    }

    pub fn unary(token: Token, child: ExprTree) -> Self {
        assert_eq!(token.arity().ok(), Some(1), "{token} is not unary");
        ExprTree {
            token,
            children: vec![child],
        }
    }

    pub fn binary(token: Token, left: ExprTree, right: ExprTree) -> Self {
        assert_eq!(token.arity().ok(), Some(2), "{token} is not binary");
        ExprTree {
            token,
            children: vec![left, right],
        }
    }

    pub fn var(index: usize) -> Self {
        ExprTree::leaf(Token::variable(index).expect("variable index out of range"))
    }

    pub fn constant() -> Self {
        ExprTree::leaf(Token::C)
    }

    pub fn token(&self) -> Token {
        self.token
    }

    pub fn children(&self) -> &[ExprTree] {
        &self.children
    }

    pub fn into_parts(self) -> (Token, Vec<ExprTree>) {
        (self.token, self.children)
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(ExprTree::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(ExprTree::depth).max().unwrap_or(0)
    }

    /// Nodes in pre-order.
    pub fn preorder(&self) -> Preorder<'_> {
        Preorder { stack: vec![self] }
    }

    pub fn count_token(&self, token: Token) -> usize {
        self.preorder().filter(|n| n.token == token).count()
    }

    /// Bit set of the variables used, bit `i` for `x{i+1}`.
    pub fn variable_mask(&self) -> u8 {
        self.preorder()
            .filter_map(|n| n.token.variable_index())
            .fold(0, |mask, i| mask | (1 << i))
    }

    pub fn to_preorder(&self) -> TokenSequence {
        TokenSequence(self.preorder().map(|n| n.token).collect())
    }

    /// Inverse of [`ExprTree::to_preorder`].
    pub fn from_preorder(tokens: &[Token]) -> Result<Self, ExprError> {
        let mut pos = 0;
        let tree = Self::parse_at(tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(ExprError::SurplusTokens { at: pos });
        }
        Ok(tree)
    }

    fn parse_at(tokens: &[Token], pos: &mut usize) -> Result<Self, ExprError> {
        let token = *tokens.get(*pos).ok_or(ExprError::ArityDeficit)?;
        let arity = token.arity()?;
        *pos += 1;
        let mut children = Vec::with_capacity(arity);
        for _ in 0..arity {
            children.push(Self::parse_at(tokens, pos)?);
        }
        Ok(ExprTree { token, children })
    }

    /// Applies `f` to every token, keeping the shape.
    pub fn map_tokens(&self, f: &impl Fn(Token) -> Token) -> ExprTree {
        ExprTree {
            token: f(self.token),
            children: self.children.iter().map(|c| c.map_tokens(f)).collect(),
        }
    }
}

pub struct Preorder<'a> {
    stack: Vec<&'a ExprTree>,
}

impl<'a> Iterator for Preorder<'a> {
    type Item = &'a ExprTree;

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

impl fmt::Display for ExprTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::print_infix(self))
    }
}

/// Ordered list of tokens. Text form is whitespace-separated token names.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence(pub Vec<Token>);

impl TokenSequence {
    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> Vec<u8> {
        self.0.iter().map(|t| t.id()).collect()
    }

    pub fn from_ids(ids: &[u8]) -> Result<Self, ExprError> {
        ids.iter()
            .map(|&id| Token::from_id(id as usize).ok_or(ExprError::UnknownTokenId(id as usize)))
            .collect::<Result<Vec<_>, _>>()
            .map(TokenSequence)
    }

    pub fn to_tree(&self) -> Result<ExprTree, ExprError> {
        ExprTree::from_preorder(&self.0)
    }

    /// Training layout: `SOS`, the tokens, then `PAD` up to `max_len`.
    pub fn padded(&self, max_len: usize) -> Result<Vec<Token>, ExprError> {
        if self.0.len() + 1 > max_len {
            return Err(ExprError::TooLong {
                len: self.0.len(),
                max: max_len - 1,
            });
        }
        let mut out = Vec::with_capacity(max_len);
        out.push(Token::Sos);
        out.extend_from_slice(&self.0);
        out.resize(max_len, Token::Pad);
        Ok(out)
    }
}

impl From<Vec<Token>> for TokenSequence {
    fn from(tokens: Vec<Token>) -> Self {
        TokenSequence(tokens)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t.name())?;
        }
        Ok(())
    }
}

impl FromStr for TokenSequence {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<Token>, _>>()
            .map(TokenSequence)
    }
}

/// Completion state of a pre-order token prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrefixStatus {
    Complete,
    NeedsMore,
    Invalid,
}

/// Classifies a token prefix by its running open-slot count.
pub fn prefix_status(tokens: &[Token]) -> PrefixStatus {
    let mut open: usize = 1;
    for (i, token) in tokens.iter().enumerate() {
        let Ok(arity) = token.arity() else {
            return PrefixStatus::Invalid;
        };
        if open == 0 {
            // The tree already completed before position i.
            return PrefixStatus::Invalid;
        }
        open = open - 1 + arity;
        if open == 0 && i + 1 < tokens.len() {
            return PrefixStatus::Invalid;
        }
    }
    if open == 0 {
        PrefixStatus::Complete
    } else {
        PrefixStatus::NeedsMore
    }
}
