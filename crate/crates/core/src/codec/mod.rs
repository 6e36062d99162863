//! Text serialization of supervision records.
//!
//! Grammars (bins are `0..=255` quantized normalized coordinates):
//!
//! ```text
//! grounding := kind [" : mark " label] [" : (" bin "," bin ")"] [" : " quoted]
//! tom       := text " : marks {" [label {"," label}] "} : traces {" [entry {", " entry}] " }"
//! entry     := label ":[" pair {"," pair} "]"
//! pair      := "(" bin "," bin ")"
//! ```
//!
//! Quoted strings escape `\`, `"` and newlines with a backslash.

mod grounding;
mod robot;
mod trace;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grounding::{encode_grounding, parse_grounding, ParsedGrounding, UiAction, UiActionKind, UiTarget};
pub use robot::{
    decode_robot, encode_robot, fit_stats, percentile, ActionStats, RobotAction, ACTION_DIMS,
    ACTION_TOKENS, DEGENERATE_WIDEN,
};
pub use trace::{encode_tom, parse_tom, subsample_indices, ParsedTom};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Grounding,
    Tom,
    Robot,
}

/// One JSONL line of serialized supervision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub text: String,
    pub ids: Option<Vec<u32>>,
    pub kind: RecordKind,
}

impl TokenRecord {
    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("token record serializes")
    }
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Minimal recursive-descent cursor shared by the grammar parsers.
pub(crate) struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    pub(crate) fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.src.len()
    }

    pub(crate) fn err(&self, what: &str) -> Error {
        Error::Parse {
            line: 1,
            message: format!("at byte {}: expected {what}", self.pos),
        }
    }

    pub(crate) fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    pub(crate) fn expect(&mut self, lit: &str) -> Result<()> {
        if self.eat(lit) {
            Ok(())
        } else {
            Err(self.err(&format!("`{lit}`")))
        }
    }

    pub(crate) fn number(&mut self) -> Result<u32> {
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return Err(self.err("a number"));
        }
        let v = self.rest()[..digits]
            .parse()
            .map_err(|_| self.err("a number in range"))?;
        self.pos += digits;
        Ok(v)
    }

    pub(crate) fn bin(&mut self) -> Result<u8> {
        let v = self.number()?;
        u8::try_from(v).map_err(|_| self.err("a bin in 0..=255"))
    }

    pub(crate) fn pair(&mut self) -> Result<(u8, u8)> {
        self.expect("(")?;
        let x = self.bin()?;
        self.expect(",")?;
        let y = self.bin()?;
        self.expect(")")?;
        Ok((x, y))
    }

    pub(crate) fn quoted(&mut self) -> Result<String> {
        self.expect("\"")?;
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, 'n')) => out.push('\n'),
                    Some((_, c @ ('"' | '\\'))) => out.push(c),
                    _ => return Err(self.err("a valid escape")),
                },
                c => out.push(c),
            }
        }
        Err(self.err("closing quote"))
    }
}
