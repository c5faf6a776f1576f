//! Parser for the literal values models put in their final answers.
//!
//! Accepts JSON and the Python literal subset the prompts ask for:
//! `None`/`True`/`False`, single- or double-quoted (and triple-quoted)
//! strings, lists, tuples and dicts, with trailing commas allowed.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    None,
    Bool(bool),
    Number(f64),
    Str(String),
    List(Vec<Literal>),
    Dict(BTreeMap<String, Literal>),
}

impl Literal {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Literal::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Literal]> {
        match self {
            Literal::List(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiteralError {
    pub offset: usize,
    pub message: String,
}

impl std::fmt::Display for LiteralError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} at offset {}", self.message, self.offset)
    }
}

pub fn parse(input: &str) -> Result<Literal, LiteralError> {
    let mut p = Parser {
        src: input.as_bytes(),
        text: input,
        pos: 0,
    };
    let v = p.value()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing characters"));
    }
    Ok(v)
}

struct Parser<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, message: &str) -> LiteralError {
        LiteralError {
            offset: self.pos,
            message: message.to_owned(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(b) = self.src.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn value(&mut self) -> Result<Literal, LiteralError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'[') => self.sequence(b']').map(Literal::List),
            Some(b'(') => self.sequence(b')').map(Literal::List),
            Some(b'{') => self.dict(),
            Some(b'"' | b'\'') => self.string().map(Literal::Str),
            Some(b) if b == b'-' || b == b'+' || b == b'.' || b.is_ascii_digit() => self.number(),
            Some(b) if b.is_ascii_alphabetic() => self.word(),
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn sequence(&mut self, close: u8) -> Result<Vec<Literal>, LiteralError> {
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(close) {
                self.pos += 1;
                return Ok(items);
            }
            items.push(self.value()?);
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(c) if c == close => {}
                _ => return Err(self.err("expected `,` or closing bracket")),
            }
        }
    }

    fn dict(&mut self) -> Result<Literal, LiteralError> {
        self.pos += 1;
        let mut map = BTreeMap::new();
        loop {
            self.skip_ws();
            if self.peek() == Some(b'}') {
                self.pos += 1;
                return Ok(Literal::Dict(map));
            }
            let key = match self.value()? {
                Literal::Str(s) => s,
                _ => return Err(self.err("dict keys must be strings")),
            };
            self.skip_ws();
            if self.peek() != Some(b':') {
                return Err(self.err("expected `:`"));
            }
            self.pos += 1;
            let v = self.value()?;
            map.insert(key, v);
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected `,` or `}`")),
            }
        }
    }

    fn string(&mut self) -> Result<String, LiteralError> {
        let quote = self.src[self.pos];
        let triple = self.src[self.pos..].starts_with(&[quote; 3]);
        self.pos += if triple { 3 } else { 1 };
        let mut out = String::new();
        loop {
            let rest = &self.text[self.pos..];
            let mut chars = rest.chars();
            let Some(c) = chars.next() else {
                return Err(self.err("unterminated string"));
            };
            if c as u32 == quote as u32 {
                if !triple {
                    self.pos += 1;
                    return Ok(out);
                }
                if rest.as_bytes().starts_with(&[quote; 3]) {
                    self.pos += 3;
                    return Ok(out);
                }
            }
            if c == '\\' {
                let Some(e) = chars.next() else {
                    return Err(self.err("unterminated escape"));
                };
                self.pos += 1 + e.len_utf8();
                match e {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    '0' => out.push('\0'),
                    'b' => out.push('\u{8}'),
                    'f' => out.push('\u{c}'),
                    '\n' => {}
                    'u' => {
                        let hex = self.text.get(self.pos..self.pos + 4).ok_or_else(|| self.err("short \\u escape"))?;
                        let code = u32::from_str_radix(hex, 16).map_err(|_| self.err("bad \\u escape"))?;
                        self.pos += 4;
                        out.push(char::from_u32(code).unwrap_or('\u{fffd}'));
                    }
                    other => out.push(other),
                }
                continue;
            }
            if c == '\n' && !triple {
                return Err(self.err("newline in string"));
            }
            out.push(c);
            self.pos += c.len_utf8();
        }
    }

    fn number(&mut self) -> Result<Literal, LiteralError> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() || matches!(b, b'-' | b'+' | b'.' | b'e' | b'E' | b'_') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let raw: String = self.text[start..self.pos].chars().filter(|c| *c != '_').collect();
        raw.parse::<f64>()
            .map(Literal::Number)
            .map_err(|_| LiteralError {
                offset: start,
                message: format!("bad number `{raw}`"),
            })
    }

    fn word(&mut self) -> Result<Literal, LiteralError> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_alphanumeric() || b == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        match &self.text[start..self.pos] {
            "None" | "null" => Ok(Literal::None),
            "True" | "true" => Ok(Literal::Bool(true)),
            "False" | "false" => Ok(Literal::Bool(false)),
            w => Err(LiteralError {
                offset: start,
                message: format!("unknown identifier `{w}`"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn python_list_of_tuples() {
        let v = parse("[(\"a\", 'b c'), ('d', \"it's\"),]").unwrap();
        assert_eq!(
            v,
            Literal::List(vec![
                Literal::List(vec![Literal::Str("a".into()), Literal::Str("b c".into())]),
                Literal::List(vec![Literal::Str("d".into()), Literal::Str("it's".into())]),
            ])
        );
    }

    #[test]
    fn json_and_keywords() {
        assert_eq!(parse("None").unwrap(), Literal::None);
        assert_eq!(parse(" true ").unwrap(), Literal::Bool(true));
        assert_eq!(parse("[1, -2.5e1]").unwrap(), Literal::List(vec![Literal::Number(1.0), Literal::Number(-25.0)]));
        let d = parse(r#"{"name": "X", "components": []}"#).unwrap();
        match d {
            Literal::Dict(m) => assert_eq!(m["name"], Literal::Str("X".into())),
            _ => panic!(),
        }
    }

    #[test]
    fn escapes_and_triple_quotes() {
        assert_eq!(parse(r#""a\nbA""#).unwrap(), Literal::Str("a\nbA".into()));
        assert_eq!(parse("'''multi\nline'''").unwrap(), Literal::Str("multi\nline".into()));
    }

    #[test]
    fn errors_carry_offsets() {
        let e = parse("[1, 2").unwrap_err();
        assert_eq!(e.offset, 5);
        assert!(parse("[1] x").is_err());
        assert!(parse("maybe").is_err());
    }
}
