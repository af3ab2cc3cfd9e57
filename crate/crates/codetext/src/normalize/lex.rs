//! Table-driven scanners for the supported language families.
//!
//! Lexing is lossless: token texts plus the elided inter-token whitespace
//! reconstruct the input byte-for-byte. Newline sequences (`\n`, `\r`,
//! `\r\n`) in the code families are tokens, not elided whitespace.

use thiserror::Error;

use super::{Token, TokenKind};
use crate::corpus::Language;

#[derive(Debug, Error)]
pub enum LexError {
    #[error("unterminated {what} starting at byte {offset}")]
    Unterminated { what: &'static str, offset: usize },
}

/// Lexer families. Each corpus [`Language`] maps onto one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexLang {
    Python,
    /// C-family surface lexemes shared by Java, Go, C#, JavaScript, PHP,
    /// and (approximately) Ruby.
    JavaLike,
    Sql,
    Lisp,
    English,
    Passthrough,
}

impl LexLang {
    pub fn for_language(language: Language) -> LexLang {
        match language {
            Language::Python => LexLang::Python,
            Language::Java
            | Language::Go
            | Language::Php
            | Language::Ruby
            | Language::Javascript
            | Language::Csharp => LexLang::JavaLike,
            Language::Sql => LexLang::Sql,
            Language::Lisp => LexLang::Lisp,
            Language::English => LexLang::English,
            Language::Dsl => LexLang::Passthrough,
        }
    }

    /// Parse either a lexer name or a corpus language tag.
    pub fn parse(tag: &str) -> Option<LexLang> {
        match tag {
            "python" => Some(LexLang::Python),
            "java_like" => Some(LexLang::JavaLike),
            "sql" => Some(LexLang::Sql),
            "lisp" => Some(LexLang::Lisp),
            "english" => Some(LexLang::English),
            "passthrough" => Some(LexLang::Passthrough),
            other => Language::parse(other).map(LexLang::for_language),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpannedToken {
    pub token: Token,
    /// Byte range of the token text in the input.
    pub start: usize,
    pub end: usize,
}

/// Lex `raw` in the given language family.
pub fn lex(lang: LexLang, raw: &str) -> Result<Vec<Token>, LexError> {
    Ok(lex_spanned(lang, raw)?
        .into_iter()
        .map(|s| s.token)
        .collect())
}

/// Lex with byte spans, for callers that need to reconstruct layout.
pub fn lex_spanned(lang: LexLang, raw: &str) -> Result<Vec<SpannedToken>, LexError> {
    match lang {
        LexLang::English => Ok(spans_for_split(raw, english_peel)),
        LexLang::Passthrough => Ok(spans_for_split(raw, |chunk, start| {
            vec![SpannedToken {
                token: Token::new(chunk, TokenKind::Word),
                start,
                end: start + chunk.len(),
            }]
        })),
        _ => Scanner::new(raw, Rules::for_lang(lang)).run(),
    }
}

/// Split on whitespace, handing each chunk (plus its byte offset) to a
/// chunk tokenizer.
fn spans_for_split(
    raw: &str,
    chunk_fn: impl Fn(&str, usize) -> Vec<SpannedToken>,
) -> Vec<SpannedToken> {
    let mut out = Vec::new();
    let mut offset = 0;
    for chunk in raw.split_whitespace() {
        // Safe: split_whitespace yields substrings in order.
        let start = offset + raw[offset..].find(chunk).expect("chunk in tail");
        out.extend(chunk_fn(chunk, start));
        offset = start + chunk.len();
    }
    out
}

fn english_peel(chunk: &str, start: usize) -> Vec<SpannedToken> {
    let tokens = super::english_tokenize(chunk);
    let mut out = Vec::new();
    let mut pos = start;
    for token in tokens {
        let len = token.text.len();
        out.push(SpannedToken {
            token,
            start: pos,
            end: pos + len,
        });
        pos += len;
    }
    out
}

struct Rules {
    line_comments: &'static [&'static str],
    block_comment: Option<(&'static str, &'static str)>,
    string_quotes: &'static [char],
    char_quote: Option<char>,
    triple_quotes: bool,
    string_prefixes: bool,
    doubled_quote_escape: bool,
    keywords: &'static [&'static str],
    keywords_case_insensitive: bool,
    symbolic_identifiers: bool,
}

const PYTHON_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "print", "raise",
    "return", "try", "while", "with", "yield",
];

const JAVA_LIKE_KEYWORDS: &[&str] = &[
    "abstract", "as", "assert", "async", "await", "bool", "boolean", "break", "byte", "case",
    "catch", "chan", "char", "class", "const", "continue", "decimal", "default", "defer", "do",
    "double", "echo", "else", "elseif", "enum", "extends", "fallthrough", "false", "final",
    "finally", "float", "for", "foreach", "func", "function", "go", "goto", "if", "implements",
    "import", "in", "instanceof", "int", "interface", "let", "long", "map", "namespace",
    "native", "new", "null", "object", "out", "package", "private", "protected", "public",
    "range", "readonly", "ref", "require", "return", "sealed", "select", "short", "static",
    "string", "struct", "super", "switch", "synchronized", "this", "throw", "throws",
    "transient", "true", "try", "type", "typeof", "undefined", "using", "var", "void",
    "volatile", "while", "yield",
];

const SQL_KEYWORDS: &[&str] = &[
    "all", "alter", "and", "as", "asc", "avg", "between", "by", "case", "count", "create",
    "date", "delete", "desc", "distinct", "drop", "else", "end", "exists", "from", "group",
    "having", "in", "inner", "insert", "into", "is", "join", "left", "like", "limit", "max",
    "min", "not", "null", "offset", "on", "or", "order", "outer", "right", "select", "set",
    "sum", "table", "then", "time", "union", "update", "values", "when", "where",
];

const LISP_KEYWORDS: &[&str] = &[
    "car", "cdr", "cond", "cons", "defmacro", "defun", "if", "lambda", "let", "list", "progn",
    "quote", "setq",
];

impl Rules {
    fn for_lang(lang: LexLang) -> Rules {
        match lang {
            LexLang::Python => Rules {
                line_comments: &["#"],
                block_comment: None,
                string_quotes: &['"', '\''],
                char_quote: None,
                triple_quotes: true,
                string_prefixes: true,
                doubled_quote_escape: false,
                keywords: PYTHON_KEYWORDS,
                keywords_case_insensitive: false,
                symbolic_identifiers: false,
            },
            LexLang::JavaLike => Rules {
                line_comments: &["//"],
                block_comment: Some(("/*", "*/")),
                string_quotes: &['"'],
                char_quote: Some('\''),
                triple_quotes: false,
                string_prefixes: false,
                doubled_quote_escape: false,
                keywords: JAVA_LIKE_KEYWORDS,
                keywords_case_insensitive: false,
                symbolic_identifiers: false,
            },
            LexLang::Sql => Rules {
                line_comments: &["--"],
                block_comment: Some(("/*", "*/")),
                string_quotes: &['\''],
                char_quote: None,
                triple_quotes: false,
                string_prefixes: false,
                doubled_quote_escape: true,
                keywords: SQL_KEYWORDS,
                keywords_case_insensitive: true,
                symbolic_identifiers: false,
            },
            LexLang::Lisp => Rules {
                line_comments: &[";"],
                block_comment: None,
                string_quotes: &['"'],
                char_quote: None,
                triple_quotes: false,
                string_prefixes: false,
                doubled_quote_escape: false,
                keywords: LISP_KEYWORDS,
                keywords_case_insensitive: false,
                symbolic_identifiers: true,
            },
            LexLang::English | LexLang::Passthrough => unreachable!("handled by lex_spanned"),
        }
    }
}

/// Multi-character operators, longest first within each group.
const OPERATORS3: &[&str] = &["**=", "//=", ">>=", "<<=", "===", "!==", "...", "<=>"];
const OPERATORS2: &[&str] = &[
    "==", "!=", "<=", ">=", "->", "=>", "++", "--", "&&", "||", "+=", "-=", "*=", "/=", "%=",
    "&=", "|=", "^=", ">>", "<<", "**", "//", "::", "..", "<>", ":=",
];

struct Scanner<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
    rules: Rules,
    out: Vec<SpannedToken>,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str, rules: Rules) -> Scanner<'a> {
        Scanner {
            src,
            chars: src.char_indices().collect(),
            pos: 0,
            rules,
            out: Vec::new(),
        }
    }

    fn peek(&self, k: usize) -> Option<char> {
        self.chars.get(self.pos + k).map(|&(_, c)| c)
    }

    fn byte_at(&self, idx: usize) -> usize {
        self.chars
            .get(idx)
            .map(|&(b, _)| b)
            .unwrap_or(self.src.len())
    }

    fn offset(&self) -> usize {
        self.byte_at(self.pos)
    }

    fn starts_with(&self, s: &str) -> bool {
        self.src[self.offset()..].starts_with(s)
    }

    fn advance(&mut self, n_chars: usize) {
        self.pos += n_chars;
    }

    fn emit(&mut self, start_char: usize, kind: TokenKind) {
        let start = self.byte_at(start_char);
        let end = self.offset();
        self.out.push(SpannedToken {
            token: Token::new(&self.src[start..end], kind),
            start,
            end,
        });
    }

    fn run(mut self) -> Result<Vec<SpannedToken>, LexError> {
        while let Some(c) = self.peek(0) {
            let start = self.pos;
            if c == '\r' || c == '\n' {
                self.advance(1);
                if c == '\r' && self.peek(0) == Some('\n') {
                    self.advance(1);
                }
                self.emit(start, TokenKind::Newline);
                continue;
            }
            if c.is_whitespace() {
                self.advance(1);
                continue;
            }
            if let Some(prefix) = self
                .rules
                .line_comments
                .iter()
                .find(|p| self.starts_with(p))
            {
                self.advance(prefix.chars().count());
                while let Some(c) = self.peek(0) {
                    if c == '\n' || c == '\r' {
                        break;
                    }
                    self.advance(1);
                }
                self.emit(start, TokenKind::Comment);
                continue;
            }
            if let Some((open, close)) = self.rules.block_comment {
                if self.starts_with(open) {
                    let offset = self.offset();
                    self.advance(open.chars().count());
                    loop {
                        if self.peek(0).is_none() {
                            return Err(LexError::Unterminated {
                                what: "block comment",
                                offset,
                            });
                        }
                        if self.starts_with(close) {
                            self.advance(close.chars().count());
                            break;
                        }
                        self.advance(1);
                    }
                    self.emit(start, TokenKind::Comment);
                    continue;
                }
            }
            if self.rules.string_quotes.contains(&c) {
                self.scan_string(c)?;
                continue;
            }
            if self.rules.char_quote == Some(c) {
                self.scan_quoted(c, "character literal")?;
                self.emit(start, TokenKind::CharLit);
                continue;
            }
            if c.is_ascii_digit() || (c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit()))
            {
                self.scan_number();
                continue;
            }
            if self.rules.symbolic_identifiers {
                if c == '(' || c == ')' || c == '[' || c == ']' || c == '\'' || c == '`' || c == ','
                {
                    self.advance(1);
                    self.emit(start, TokenKind::Punct);
                } else {
                    self.scan_symbol();
                }
                continue;
            }
            if c.is_alphabetic() || c == '_' {
                self.scan_identifier()?;
                continue;
            }
            self.scan_operator();
        }
        Ok(self.out)
    }

    fn scan_string(&mut self, quote: char) -> Result<(), LexError> {
        let start = self.pos;
        if self.rules.triple_quotes
            && self.peek(1) == Some(quote)
            && self.peek(2) == Some(quote)
        {
            let offset = self.offset();
            self.advance(3);
            loop {
                match self.peek(0) {
                    None => {
                        return Err(LexError::Unterminated {
                            what: "string",
                            offset,
                        })
                    }
                    Some('\\') => self.advance(2),
                    Some(c) if c == quote
                        && self.peek(1) == Some(quote)
                        && self.peek(2) == Some(quote) =>
                    {
                        self.advance(3);
                        break;
                    }
                    Some(_) => self.advance(1),
                }
            }
            self.emit(start, TokenKind::StringLit);
            return Ok(());
        }
        self.scan_quoted(quote, "string")?;
        self.emit(start, TokenKind::StringLit);
        Ok(())
    }

    /// Single-line quoted literal with backslash escapes (and optional
    /// doubled-quote escaping for SQL).
    fn scan_quoted(&mut self, quote: char, what: &'static str) -> Result<(), LexError> {
        let offset = self.offset();
        self.advance(1);
        loop {
            match self.peek(0) {
                None | Some('\n') | Some('\r') => {
                    return Err(LexError::Unterminated { what, offset })
                }
                Some('\\') => self.advance(2),
                Some(c) if c == quote => {
                    if self.rules.doubled_quote_escape && self.peek(1) == Some(quote) {
                        self.advance(2);
                    } else {
                        self.advance(1);
                        return Ok(());
                    }
                }
                Some(_) => self.advance(1),
            }
        }
    }

    fn scan_number(&mut self) {
        let start = self.pos;
        if self.peek(0) == Some('0') && matches!(self.peek(1), Some('x') | Some('X')) {
            self.advance(2);
            while self.peek(0).is_some_and(|c| c.is_ascii_hexdigit()) {
                self.advance(1);
            }
            while self.peek(0).is_some_and(|c| matches!(c, 'l' | 'L' | 'u' | 'U')) {
                self.advance(1);
            }
            self.emit(start, TokenKind::HexLit);
            return;
        }
        let mut real = false;
        while self.peek(0).is_some_and(|c| c.is_ascii_digit()) {
            self.advance(1);
        }
        if self.peek(0) == Some('.') && self.peek(1).is_some_and(|c| c.is_ascii_digit()) {
            real = true;
            self.advance(1);
            while self.peek(0).is_some_and(|c| c.is_ascii_digit()) {
                self.advance(1);
            }
        } else if self.peek(0) == Some('.') && self.pos > start {
            // Trailing-dot real like "1." unless the dot starts "..".
            if self.peek(1) != Some('.') {
                real = true;
                self.advance(1);
            }
        }
        if matches!(self.peek(0), Some('e') | Some('E')) {
            let mut k = 1;
            if matches!(self.peek(1), Some('+') | Some('-')) {
                k = 2;
            }
            if self.peek(k).is_some_and(|c| c.is_ascii_digit()) {
                real = true;
                self.advance(k);
                while self.peek(0).is_some_and(|c| c.is_ascii_digit()) {
                    self.advance(1);
                }
            }
        }
        if self
            .peek(0)
            .is_some_and(|c| matches!(c, 'f' | 'F' | 'd' | 'D' | 'l' | 'L' | 'j' | 'J'))
        {
            if matches!(self.peek(0), Some('f') | Some('F') | Some('d') | Some('D')) {
                real = true;
            }
            self.advance(1);
        }
        self.emit(start, if real { TokenKind::RealLit } else { TokenKind::IntLit });
    }

    fn scan_identifier(&mut self) -> Result<(), LexError> {
        let start = self.pos;
        while self
            .peek(0)
            .is_some_and(|c| c.is_alphanumeric() || c == '_')
        {
            self.advance(1);
        }
        // A short all-letter run directly before a quote is a string
        // prefix (r"...", f'...').
        if self.rules.string_prefixes && self.pos - start <= 2 {
            if let Some(q) = self.peek(0) {
                let text = &self.src[self.byte_at(start)..self.offset()];
                let all_prefix = text
                    .chars()
                    .all(|c| matches!(c, 'r' | 'R' | 'b' | 'B' | 'f' | 'F' | 'u' | 'U'));
                if all_prefix && self.rules.string_quotes.contains(&q) {
                    self.scan_string(q)?;
                    let merged_end = self.out.pop().expect("string token just pushed");
                    let s = self.byte_at(start);
                    self.out.push(SpannedToken {
                        token: Token::new(&self.src[s..merged_end.end], TokenKind::StringLit),
                        start: s,
                        end: merged_end.end,
                    });
                    return Ok(());
                }
            }
        }
        let text = &self.src[self.byte_at(start)..self.offset()];
        let is_keyword = if self.rules.keywords_case_insensitive {
            let lower = text.to_ascii_lowercase();
            self.rules.keywords.binary_search(&lower.as_str()).is_ok()
        } else {
            self.rules.keywords.binary_search(&text).is_ok()
        };
        self.emit(
            start,
            if is_keyword {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            },
        );
        Ok(())
    }

    /// Lisp symbols: any run of characters outside delimiters; numeric
    /// runs were already consumed by scan_number.
    fn scan_symbol(&mut self) {
        let start = self.pos;
        while let Some(c) = self.peek(0) {
            if c.is_whitespace()
                || matches!(c, '(' | ')' | '[' | ']' | '"' | ';' | '\'' | '`' | ',')
            {
                break;
            }
            self.advance(1);
        }
        let text = &self.src[self.byte_at(start)..self.offset()];
        let kind = if self.rules.keywords.binary_search(&text).is_ok() {
            TokenKind::Keyword
        } else {
            TokenKind::Identifier
        };
        self.emit(start, kind);
    }

    fn scan_operator(&mut self) {
        let start = self.pos;
        let tail = &self.src[self.offset()..];
        for op in OPERATORS3 {
            if tail.starts_with(op) {
                self.advance(3);
                self.emit(start, TokenKind::Punct);
                return;
            }
        }
        for op in OPERATORS2 {
            if tail.starts_with(op) {
                // "//" is a comment opener in JavaLike but reaches here
                // only for Python/SQL/Lisp where it is an operator.
                self.advance(2);
                self.emit(start, TokenKind::Punct);
                return;
            }
        }
        self.advance(1);
        self.emit(start, TokenKind::Punct);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Token texts plus elided whitespace must reconstruct the input.
    fn assert_lossless(lang: LexLang, raw: &str) {
        let spanned = lex_spanned(lang, raw).unwrap();
        let mut rebuilt = String::new();
        let mut cursor = 0;
        for st in &spanned {
            let gap = &raw[cursor..st.start];
            assert!(
                gap.chars().all(|c| c.is_whitespace()),
                "non-whitespace gap {gap:?} in {raw:?}"
            );
            rebuilt.push_str(gap);
            assert_eq!(&raw[st.start..st.end], st.token.text);
            rebuilt.push_str(&st.token.text);
            cursor = st.end;
        }
        rebuilt.push_str(&raw[cursor..]);
        assert_eq!(rebuilt, raw);
    }

    #[test]
    fn lexing_is_lossless_across_languages() {
        assert_lossless(LexLang::Python, "def f(x):\n    return r\"a\\n\" + 0x1F  # c\n");
        assert_lossless(LexLang::Python, "s = '''multi\nline''' . strip()");
        assert_lossless(
            LexLang::JavaLike,
            "public static int f() { /* multi\nline */ return 'a' + 1.5e-3; }\r\n",
        );
        assert_lossless(LexLang::Sql, "SELECT 'it''s' FROM t -- trailing\n");
        assert_lossless(LexLang::Lisp, "(defun f (x) ; comment\n  (+ x 1))");
        assert_lossless(LexLang::English, "Hello, world! (this is fine)");
        assert_lossless(LexLang::Passthrough, "[map a [partial1 b -]]");
    }

    #[test]
    fn unterminated_string_reports_offset() {
        let err = lex(LexLang::Python, "x = \"abc").unwrap_err();
        match err {
            LexError::Unterminated { what, offset } => {
                assert_eq!(what, "string");
                assert_eq!(offset, 4);
            }
        }
    }

    #[test]
    fn unterminated_block_comment_reports_offset() {
        let err = lex(LexLang::JavaLike, "a /* never ends").unwrap_err();
        match err {
            LexError::Unterminated { what, offset } => {
                assert_eq!(what, "block comment");
                assert_eq!(offset, 2);
            }
        }
    }

    #[test]
    fn sql_keywords_are_case_insensitive() {
        let tokens = lex(LexLang::Sql, "SELECT x FROM t").unwrap();
        assert_eq!(tokens[0].kind, TokenKind::Keyword);
        assert_eq!(tokens[2].kind, TokenKind::Keyword);
        assert_eq!(tokens[1].kind, TokenKind::Identifier);
    }

    #[test]
    fn python_string_prefix_is_part_of_the_literal()  {
        let tokens = lex(LexLang::Python, "x = rb'h'").unwrap();
        assert_eq!(tokens[2].text, "rb'h'");
        assert_eq!(tokens[2].kind, TokenKind::StringLit);
    }

    #[test]
    fn numeric_literal_classes() {
        let tokens = lex(LexLang::JavaLike, "1 2.5 0xFF 1e-3 .5 3.").unwrap();
        let kinds: Vec<TokenKind> = tokens.iter().map(|t| t.kind).collect();
        assert_eq!(
            kinds,
            vec![
                TokenKind::IntLit,
                TokenKind::RealLit,
                TokenKind::HexLit,
                TokenKind::RealLit,
                TokenKind::RealLit,
                TokenKind::RealLit,
            ]
        );
    }

    #[test]
    fn multi_char_operators_stay_single_tokens() {
        let tokens = lex(LexLang::JavaLike, "a == b && c != d").unwrap();
        let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["a", "==", "b", "&&", "c", "!=", "d"]);
    }

    #[test]
    fn lisp_symbols_include_operator_characters() {
        let tokens = lex(LexLang::Lisp, "(+ a b-c)").unwrap();
        let texts: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["(", "+", "a", "b-c", ")"]);
        assert_eq!(tokens[1].kind, TokenKind::Identifier);
    }

    #[test]
    fn language_mapping_covers_all_tags() {
        assert_eq!(LexLang::parse("go"), Some(LexLang::JavaLike));
        assert_eq!(LexLang::parse("dsl"), Some(LexLang::Passthrough));
        assert_eq!(LexLang::parse("java_like"), Some(LexLang::JavaLike));
        assert_eq!(LexLang::parse("nope"), None);
    }
}
