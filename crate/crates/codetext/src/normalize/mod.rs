//! Language-aware lexing and normalization into space-joined token strings.
//!
//! Raw code or text is lexed into [`Token`]s, comments are stripped,
//! literals are replaced by placeholder tokens, newlines become a visible
//! newline token, and the surviving tokens are joined by single spaces.

mod lex;

pub use lex::{lex, lex_spanned, LexError, LexLang, SpannedToken};

use crate::corpus::TaskSpec;

/// Lexical token classes. `Comment` tokens are produced by lexing but
/// removed by normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Identifier,
    Keyword,
    StringLit,
    CharLit,
    IntLit,
    RealLit,
    HexLit,
    Punct,
    Newline,
    Comment,
    Word,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
}

impl Token {
    pub fn new(text: impl Into<String>, kind: TokenKind) -> Token {
        Token {
            text: text.into(),
            kind,
        }
    }
}

/// Placeholder surface forms for abstracted literals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placeholders {
    pub string: String,
    pub char_: String,
    pub int: String,
    pub real: String,
    pub hex: String,
}

impl Default for Placeholders {
    fn default() -> Self {
        Placeholders {
            string: "CODE.STRING".to_string(),
            char_: "CODE.CHAR".to_string(),
            int: "CODE.INTEGER".to_string(),
            real: "CODE.REAL".to_string(),
            hex: "CODE.HEX".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizeOptions {
    pub strip_comments: bool,
    pub abstract_literals: bool,
    pub newline_token: String,
    pub placeholders: Placeholders,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions {
            strip_comments: true,
            abstract_literals: true,
            newline_token: "< newline >".to_string(),
            placeholders: Placeholders::default(),
        }
    }
}

/// Render tokens as a single space-joined string.
///
/// Comments are dropped when `strip_comments`, literal tokens map to their
/// placeholders when `abstract_literals`, and newline tokens map to
/// `newline_token`. The result carries no tabs, raw newlines, or runs of
/// spaces.
pub fn normalize(tokens: &[Token], opts: &NormalizeOptions) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(tokens.len());
    for token in tokens {
        match token.kind {
            TokenKind::Comment => {
                if opts.strip_comments {
                    continue;
                }
                parts.push(&token.text);
            }
            TokenKind::Newline => parts.push(&opts.newline_token),
            TokenKind::StringLit if opts.abstract_literals => {
                parts.push(&opts.placeholders.string)
            }
            TokenKind::CharLit if opts.abstract_literals => parts.push(&opts.placeholders.char_),
            TokenKind::IntLit if opts.abstract_literals => parts.push(&opts.placeholders.int),
            TokenKind::RealLit if opts.abstract_literals => parts.push(&opts.placeholders.real),
            TokenKind::HexLit if opts.abstract_literals => parts.push(&opts.placeholders.hex),
            _ => parts.push(&token.text),
        }
    }
    let joined = parts.join(" ");
    if !joined.contains(['\n', '\r', '\t']) {
        return collapse_spaces(&joined);
    }
    // Multi-line token texts (kept comments, unabstracted multi-line
    // strings) still must not leak raw newlines into the output.
    let padded = format!(" {} ", opts.newline_token);
    let joined = joined
        .replace("\r\n", &padded)
        .replace(['\r', '\n'], &padded);
    collapse_spaces(&joined)
}

fn collapse_spaces(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace split, then peel leading/trailing ASCII punctuation into
/// separate punct tokens. Interior punctuation stays attached.
pub fn english_tokenize(raw: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    for chunk in raw.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut lo = 0;
        let mut hi = chars.len();
        let mut leading = Vec::new();
        let mut trailing = Vec::new();
        while lo < hi && chars[lo].is_ascii_punctuation() {
            leading.push(Token::new(chars[lo].to_string(), TokenKind::Punct));
            lo += 1;
        }
        while hi > lo && chars[hi - 1].is_ascii_punctuation() {
            trailing.push(Token::new(chars[hi - 1].to_string(), TokenKind::Punct));
            hi -= 1;
        }
        tokens.extend(leading);
        if lo < hi {
            let word: String = chars[lo..hi].iter().collect();
            tokens.push(Token::new(word, TokenKind::Word));
        }
        tokens.extend(trailing.into_iter().rev());
    }
    tokens
}

/// Prepend the task prefix to a normalized string.
pub fn apply_prefix(spec: &TaskSpec, normalized: &str) -> String {
    format!("{}{}", spec.prefix, normalized)
}
