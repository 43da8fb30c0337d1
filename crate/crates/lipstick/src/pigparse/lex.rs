//! Tokenizer for the Pig Latin fragment.

use super::PigParseError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    /// Identifier, possibly `::`-qualified. Keyword recognition happens in
    /// the parser so aliases stay case-sensitive.
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    /// `$k` positional field reference.
    Dollar(usize),
    Assign,
    Semi,
    Comma,
    Dot,
    LParen,
    RParen,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone)]
pub(crate) struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { chars: src.chars().peekable(), line: 1, col: 1 }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn peek2(&self) -> Option<char> {
        let mut look = self.chars.clone();
        look.next();
        look.next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn error(&self, line: usize, col: usize, message: String) -> PigParseError {
        PigParseError::Syntax { line, col, message }
    }

    fn lex_number(&mut self, negative: bool) -> Tok {
        let mut digits = String::new();
        if negative {
            digits.push('-');
        }
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                digits.push(c);
                self.bump();
            } else {
                break;
            }
        }
        // A dot directly followed by a digit continues a float literal; a
        // bare dot is a path separator and stays for the parser.
        if self.peek() == Some('.') && self.peek2().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
            digits.push('.');
            while let Some(c) = self.peek() {
                if c.is_ascii_digit() {
                    digits.push(c);
                    self.bump();
                } else {
                    break;
                }
            }
            Tok::Float(digits.parse().expect("digits form a float"))
        } else {
            Tok::Int(digits.parse().expect("digits form an int"))
        }
    }
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Spanned>, PigParseError> {
    let mut lx = Lexer::new(src);
    let mut toks = Vec::new();

    while let Some(c) = lx.peek() {
        let (line, col) = (lx.line, lx.col);
        let mut push = |tok: Tok| toks.push(Spanned { tok, line, col });
        match c {
            c if c.is_whitespace() => {
                lx.bump();
            }
            '-' => {
                lx.bump();
                match lx.peek() {
                    Some('-') => {
                        while let Some(c) = lx.bump() {
                            if c == '\n' {
                                break;
                            }
                        }
                    }
                    Some(c) if c.is_ascii_digit() => {
                        let tok = lx.lex_number(true);
                        push(tok);
                    }
                    _ => return Err(lx.error(line, col, "unexpected `-`".into())),
                }
            }
            '\'' => {
                lx.bump();
                let mut s = String::new();
                loop {
                    match lx.bump() {
                        Some('\'') => break,
                        Some(c) => s.push(c),
                        None => {
                            return Err(lx.error(line, col, "unterminated string literal".into()))
                        }
                    }
                }
                push(Tok::Str(s));
            }
            '$' => {
                lx.bump();
                let mut digits = String::new();
                while let Some(c) = lx.peek() {
                    if c.is_ascii_digit() {
                        digits.push(c);
                        lx.bump();
                    } else {
                        break;
                    }
                }
                if digits.is_empty() {
                    return Err(lx.error(line, col, "`$` must be followed by a field position".into()));
                }
                let k: usize = digits
                    .parse()
                    .map_err(|_| lx.error(line, col, format!("bad field position `${digits}`")))?;
                push(Tok::Dollar(k));
            }
            c if c.is_ascii_digit() => {
                let tok = lx.lex_number(false);
                push(tok);
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut name = String::new();
                loop {
                    while let Some(c) = lx.peek() {
                        if c.is_alphanumeric() || c == '_' {
                            name.push(c);
                            lx.bump();
                        } else {
                            break;
                        }
                    }
                    // `Alias::field` qualification folds into one identifier.
                    if lx.peek() == Some(':') && lx.peek2() == Some(':') {
                        lx.bump();
                        lx.bump();
                        name.push_str("::");
                    } else {
                        break;
                    }
                }
                push(Tok::Ident(name));
            }
            '=' => {
                lx.bump();
                if lx.peek() == Some('=') {
                    lx.bump();
                    push(Tok::Eq);
                } else {
                    push(Tok::Assign);
                }
            }
            '!' => {
                lx.bump();
                if lx.peek() == Some('=') {
                    lx.bump();
                    push(Tok::Ne);
                } else {
                    return Err(lx.error(line, col, "expected `!=`".into()));
                }
            }
            '<' => {
                lx.bump();
                if lx.peek() == Some('=') {
                    lx.bump();
                    push(Tok::Le);
                } else {
                    push(Tok::Lt);
                }
            }
            '>' => {
                lx.bump();
                if lx.peek() == Some('=') {
                    lx.bump();
                    push(Tok::Ge);
                } else {
                    push(Tok::Gt);
                }
            }
            ';' => {
                lx.bump();
                push(Tok::Semi);
            }
            ',' => {
                lx.bump();
                push(Tok::Comma);
            }
            '.' => {
                lx.bump();
                push(Tok::Dot);
            }
            '(' => {
                lx.bump();
                push(Tok::LParen);
            }
            ')' => {
                lx.bump();
                push(Tok::RParen);
            }
            other => {
                return Err(lx.error(line, col, format!("unexpected character `{other}`")));
            }
        }
    }
    Ok(toks)
}
