//! Infix text form.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | postfix
//! postfix := primary ('^' exponent)*
//! primary := number | name | func '(' expr ')' | '(' expr ')'
//! ```
//!
//! `a - b` becomes `add(a, neg(b))`, `a / b` becomes `mul(a, inv(b))` and
//! `1 / b` becomes `inv(b)`. Exponents 2 and 3 map to `sq` and `cb`; `-1`
//! and `0.5` map to `inv` and `sqrt`. Numeric literals (and `pi`) become the
//! constant placeholder `C`. `**` is accepted as a synonym for `^`.

use super::{ExprError, ExprTree, Token};

#[derive(Clone, Debug, PartialEq)]
enum Lexeme {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

fn lex(text: &str) -> Result<Vec<(usize, Lexeme)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let lexeme = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Lexeme::Plus,
            b'-' => Lexeme::Minus,
            b'*' if bytes.get(i + 1) == Some(&b'*') => {
                i += 1;
                Lexeme::Caret
            }
            b'*' => Lexeme::Star,
            b'/' => Lexeme::Slash,
            b'^' => Lexeme::Caret,
            b'(' => Lexeme::LParen,
            b')' => Lexeme::RParen,
            b'0'..=b'9' | b'.' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let value = text[i..j].parse::<f64>().map_err(|_| ExprError::Syntax {
                    pos: start,
                    message: format!("malformed number `{}`", &text[i..j]),
                })?;
                i = j;
                out.push((start, Lexeme::Num(value)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push((start, Lexeme::Ident(text[i..j].to_string())));
                i = j;
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    pos: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        i += 1;
        out.push((start, lexeme));
    }
    out.push((text.len(), Lexeme::End));
    Ok(out)
}

/// Parsed operand: numeric literals stay numeric until they must become `C`.
enum Operand {
    Number(f64),
    Tree(ExprTree),
}

impl Operand {
    fn into_tree(self) -> ExprTree {
        match self {
            Operand::Number(_) => ExprTree::constant(),
            Operand::Tree(t) => t,
        }
    }
}

struct Parser {
    lexemes: Vec<(usize, Lexeme)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Lexeme {
        &self.lexemes[self.pos].1
    }

    fn offset(&self) -> usize {
        self.lexemes[self.pos].0
    }

    fn bump(&mut self) -> Lexeme {
        let l = self.lexemes[self.pos].1.clone();
        if self.pos + 1 < self.lexemes.len() {
            self.pos += 1;
        }
        l
    }

    fn syntax(&self, message: impl Into<String>) -> ExprError {
        ExprError::Syntax {
            pos: self.offset(),
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Lexeme, what: &str) -> Result<(), ExprError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(self.syntax(format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Operand, ExprError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Lexeme::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    acc = Operand::Tree(ExprTree::binary(Token::Add, acc.into_tree(), rhs.into_tree()));
                }
                Lexeme::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    acc = Operand::Tree(ExprTree::binary(
                        Token::Add,
                        acc.into_tree(),
                        ExprTree::unary(Token::Neg, rhs.into_tree()),
                    ));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Operand, ExprError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Lexeme::Star => {
                    self.bump();
                    let rhs = self.unary()?;
                    acc = Operand::Tree(ExprTree::binary(Token::Mul, acc.into_tree(), rhs.into_tree()));
                }
                Lexeme::Slash => {
                    self.bump();
                    let rhs = ExprTree::unary(Token::Inv, self.unary()?.into_tree());
                    acc = match acc {
                        Operand::Number(v) if v == 1.0 => Operand::Tree(rhs),
                        other => Operand::Tree(ExprTree::binary(Token::Mul, other.into_tree(), rhs)),
                    };
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<Operand, ExprError> {
        if *self.peek() == Lexeme::Minus {
            self.bump();
            return Ok(match self.unary()? {
                Operand::Number(v) => Operand::Number(-v),
                Operand::Tree(t) => Operand::Tree(ExprTree::unary(Token::Neg, t)),
            });
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Operand, ExprError> {
        let mut acc = self.primary()?;
        while *self.peek() == Lexeme::Caret {
            self.bump();
            let at = self.offset();
            let exponent = self.exponent()?;
            acc = match acc {
                Operand::Number(v) => Operand::Number(v.powf(exponent)),
                Operand::Tree(t) => Operand::Tree(apply_exponent(t, exponent).ok_or_else(|| {
                    ExprError::Syntax {
                        pos: at,
                        message: format!("unsupported exponent {exponent}"),
                    }
                })?),
            };
        }
        Ok(acc)
    }

    fn exponent(&mut self) -> Result<f64, ExprError> {
        let parens = *self.peek() == Lexeme::LParen;
        if parens {
            self.bump();
        }
        let negative = *self.peek() == Lexeme::Minus;
        if negative {
            self.bump();
        }
        let value = match self.bump() {
            Lexeme::Num(v) => v,
            _ => return Err(self.syntax("expected numeric exponent")),
        };
        // (1/2) style exponents
        let value = if parens && *self.peek() == Lexeme::Slash {
            self.bump();
            match self.bump() {
                Lexeme::Num(d) if d != 0.0 => value / d,
                _ => return Err(self.syntax("expected numeric exponent denominator")),
            }
        } else {
            value
        };
        if parens {
            self.expect(Lexeme::RParen, "`)`")?;
        }
        Ok(if negative { -value } else { value })
    }

    fn primary(&mut self) -> Result<Operand, ExprError> {
        let at = self.offset();
        match self.bump() {
            Lexeme::Num(v) => Ok(Operand::Number(v)),
            Lexeme::LParen => {
                let inner = self.expr()?;
                self.expect(Lexeme::RParen, "`)`")?;
                Ok(inner)
            }
            Lexeme::Ident(name) => {
                if let Some(func) = function_token(&name) {
                    self.expect(Lexeme::LParen, "`(` after function name")?;
                    let arg = self.expr()?.into_tree();
                    self.expect(Lexeme::RParen, "`)`")?;
                    return Ok(Operand::Tree(ExprTree::unary(func, arg)));
                }
                match name.as_str() {
                    "pi" => Ok(Operand::Number(std::f64::consts::PI)),
                    "C" => Ok(Operand::Tree(ExprTree::constant())),
                    _ => match name.parse::<Token>() {
                        Ok(t) if t.variable_index().is_some() => Ok(Operand::Tree(ExprTree::leaf(t))),
                        _ => Err(ExprError::UnknownIdentifier { pos: at, name }),
                    },
                }
            }
            Lexeme::End => Err(ExprError::Syntax {
                pos: at,
                message: "unexpected end of input".into(),
            }),
            other => Err(ExprError::Syntax {
                pos: at,
                message: format!("unexpected {other:?}"),
            }),
        }
    }
}

fn function_token(name: &str) -> Option<Token> {
    Some(match name {
        "sin" => Token::Sin,
        "cos" => Token::Cos,
        "log" | "ln" => Token::Log,
        "exp" => Token::Exp,
        "sqrt" => Token::Sqrt,
        "neg" => Token::Neg,
        "inv" => Token::Inv,
        "sq" => Token::Sq,
        "cb" => Token::Cb,
        _ => return None,
    })
}

fn apply_exponent(base: ExprTree, exponent: f64) -> Option<ExprTree> {
    Some(match exponent {
        e if e == 1.0 => base,
        e if e == 2.0 => ExprTree::unary(Token::Sq, base),
        e if e == 3.0 => ExprTree::unary(Token::Cb, base),
        e if e == 4.0 => ExprTree::unary(Token::Sq, ExprTree::unary(Token::Sq, base)),
        e if e == 0.5 => ExprTree::unary(Token::Sqrt, base),
        e if e == -1.0 => ExprTree::unary(Token::Inv, base),
        e if e == -2.0 => ExprTree::unary(Token::Inv, ExprTree::unary(Token::Sq, base)),
        e if e == -0.5 => ExprTree::unary(Token::Inv, ExprTree::unary(Token::Sqrt, base)),
        _ => return None,
    })
}

/// Parses infix text into an expression tree.
pub fn parse_infix(text: &str) -> Result<ExprTree, ExprError> {
    let mut parser = Parser {
        lexemes: lex(text)?,
        pos: 0,
    };
    let tree = parser.expr()?.into_tree();
    if *parser.peek() != Lexeme::End {
        return Err(parser.syntax("trailing input"));
    }
    Ok(tree)
}

// Binding levels used by the printer.
const SUM: u8 = 0;
const PRODUCT: u8 = 1;
const PREFIX: u8 = 2;
const POSTFIX: u8 = 3;
const ATOM: u8 = 4;

/// Renders a tree so that [`parse_infix`] rebuilds it exactly.
pub fn print_infix(tree: &ExprTree) -> String {
    let mut out = String::new();
    write_node(tree, SUM, &mut out);
    out
}

fn level(tree: &ExprTree) -> u8 {
    match tree.token() {
        Token::Add => SUM,
        Token::Mul | Token::Inv => PRODUCT,
        Token::Neg => PREFIX,
        Token::Sq | Token::Cb => POSTFIX,
        _ => ATOM,
    }
}

fn write_node(tree: &ExprTree, min_level: u8, out: &mut String) {
    if level(tree) < min_level {
        out.push('(');
        write_node(tree, SUM, out);
        out.push(')');
        return;
    }
    let children = tree.children();
    match tree.token() {
        Token::Add => {
            write_node(&children[0], SUM, out);
            match children[1].token() {
                Token::Neg => {
                    out.push_str(" - ");
                    write_node(&children[1].children()[0], PRODUCT, out);
                }
                _ => {
                    out.push_str(" + ");
                    write_node(&children[1], PRODUCT, out);
                }
            }
        }
        Token::Mul => {
            write_node(&children[0], PRODUCT, out);
            match children[1].token() {
                Token::Inv => {
                    out.push_str(" / ");
                    write_node(&children[1].children()[0], PREFIX, out);
                }
                _ => {
                    out.push_str(" * ");
                    write_node(&children[1], PREFIX, out);
                }
            }
        }
        Token::Inv => {
            out.push_str("1/");
            write_node(&children[0], PREFIX, out);
        }
        Token::Neg => {
            out.push('-');
            write_node(&children[0], PREFIX, out);
        }
        Token::Sq | Token::Cb => {
            write_node(&children[0], POSTFIX, out);
            out.push_str(if tree.token() == Token::Sq { "^2" } else { "^3" });
        }
        Token::Sin | Token::Cos | Token::Log | Token::Exp | Token::Sqrt => {
            out.push_str(tree.token().name());
            out.push('(');
            write_node(&children[0], SUM, out);
            out.push(')');
        }
        leaf => out.push_str(leaf.name()),
    }
}
