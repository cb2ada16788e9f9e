//! Textual stack notation.
//!
//! ```text
//! stack     := group ( '|' group )? ( '@' placement )?
//! group     := layer ( '-' layer )*
//! layer     := '(' int ':' int ( ',' ('w' | 's') '=' int )* ')'
//! placement := 'before' | 'after' | 'both'
//! ```
//!
//! `(2:1)-(2:1)` is two halving layers before the projector; `(2:1)|(2:1)`
//! puts one on each side. Window and stride default to 2 and 1 and are only
//! printed when they differ. Error positions are 0-based byte offsets.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ste::{Insertion, LayerSpec, StackSpec, DEFAULT_STRIDE, DEFAULT_WINDOW};

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.peek() {
            Some(x) if x == c => {
                self.pos += 1;
                Ok(())
            }
            Some(x) => self.err(format!("expected '{}', found '{}'", c as char, x as char)),
            None => self.err(format!("expected '{}', found end of input", c as char)),
        }
    }

    fn int(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return match self.src.get(self.pos) {
                Some(&x) => self.err(format!("expected a number, found '{}'", x as char)),
                None => self.err("expected a number, found end of input"),
            };
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        match text.parse::<usize>() {
            Ok(0) => {
                self.pos = start;
                self.err("frame counts must be positive")
            }
            Ok(v) => Ok(v),
            Err(_) => {
                self.pos = start;
                self.err("number out of range")
            }
        }
    }

    fn layer(&mut self) -> Result<LayerSpec> {
        self.expect(b'(')?;
        let t_u = self.int()?;
        self.expect(b':')?;
        let t_o = self.int()?;
        let mut spec = LayerSpec::ratio(t_u, t_o);
        while self.peek() == Some(b',') {
            self.pos += 1;
            let key = self.peek();
            match key {
                Some(b'w') | Some(b's') => self.pos += 1,
                _ => return self.err("expected override 'w=' or 's='"),
            }
            self.expect(b'=')?;
            let v = self.int()?;
            if key == Some(b'w') {
                spec.t_w = v;
            } else {
                spec.t_s = v;
            }
        }
        self.expect(b')')?;
        Ok(spec)
    }

    fn group(&mut self) -> Result<Vec<LayerSpec>> {
        let mut layers = vec![self.layer()?];
        while self.peek() == Some(b'-') {
            self.pos += 1;
            layers.push(self.layer()?);
        }
        Ok(layers)
    }

    fn word(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).expect("ascii letters")
    }
}

pub fn parse_stack(text: &str) -> Result<StackSpec> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let mut layers = p.group()?;
    let mut split = None;
    if p.peek() == Some(b'|') {
        p.pos += 1;
        split = Some(layers.len());
        layers.extend(p.group()?);
    }
    let mut insertion = match split {
        Some(before) => Insertion::Both { before },
        None => Insertion::BeforeProjector,
    };
    if p.peek() == Some(b'@') {
        p.pos += 1;
        let at = p.pos;
        let word = p.word();
        insertion = match (word, split) {
            ("before", None) => Insertion::BeforeProjector,
            ("after", None) => Insertion::AfterProjector,
            ("both", Some(before)) => Insertion::Both { before },
            ("both", None) => {
                p.pos = at;
                return p.err("'@both' needs '|' between visual and semantic layers");
            }
            ("before" | "after", Some(_)) => {
                p.pos = at;
                return p.err("a '|' split is only valid with '@both'");
            }
            _ => {
                p.pos = at;
                return p.err("expected 'before', 'after' or 'both'");
            }
        };
    }
    if let Some(c) = p.peek() {
        return p.err(format!("unexpected '{}'", c as char));
    }
    Ok(StackSpec::new(layers).with_insertion(insertion))
}

fn write_layer(f: &mut fmt::Formatter<'_>, l: &LayerSpec) -> fmt::Result {
    write!(f, "({}:{}", l.t_u, l.t_o)?;
    if l.t_w != DEFAULT_WINDOW {
        write!(f, ",w={}", l.t_w)?;
    }
    if l.t_s != DEFAULT_STRIDE {
        write!(f, ",s={}", l.t_s)?;
    }
    write!(f, ")")
}

fn write_group(f: &mut fmt::Formatter<'_>, layers: &[LayerSpec]) -> fmt::Result {
    for (i, l) in layers.iter().enumerate() {
        if i > 0 {
            write!(f, "-")?;
        }
        write_layer(f, l)?;
    }
    Ok(())
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_layer(f, self)
    }
}

impl fmt::Display for StackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.insertion {
            Insertion::BeforeProjector => write_group(f, &self.layers),
            Insertion::AfterProjector => {
                write_group(f, &self.layers)?;
                write!(f, "@after")
            }
            Insertion::Both { .. } => {
                write_group(f, self.before_layers())?;
                write!(f, "|")?;
                write_group(f, self.after_layers())?;
                write!(f, "@both")
            }
        }
    }
}

impl FromStr for StackSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_stack(s)
    }
}
