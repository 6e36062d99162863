use serde::{Deserialize, Serialize};

use super::{quote, Cursor, RecordKind, TokenRecord};
use crate::error::{Error, Result};
use crate::geometry::{quantize, BBox, Point2};
use crate::som::MarkSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UiActionKind {
    Click,
    Type,
    Select,
    Scroll,
    Press,
}

impl UiActionKind {
    pub const ALL: [UiActionKind; 5] = [
        UiActionKind::Click,
        UiActionKind::Type,
        UiActionKind::Select,
        UiActionKind::Scroll,
        UiActionKind::Press,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UiActionKind::Click => "click",
            UiActionKind::Type => "type",
            UiActionKind::Select => "select",
            UiActionKind::Scroll => "scroll",
            UiActionKind::Press => "press",
        }
    }
}

impl std::str::FromStr for UiActionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown action kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UiTarget {
    Box(BBox),
    Point(Point2),
}

impl UiTarget {
    pub fn anchor(&self) -> Point2 {
        match self {
            UiTarget::Box(b) => b.center(),
            UiTarget::Point(p) => *p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiAction {
    pub kind: UiActionKind,
    #[serde(default)]
    pub mark: Option<u32>,
    #[serde(default)]
    pub target: Option<UiTarget>,
    #[serde(default, rename = "text")]
    pub text_arg: Option<String>,
}

impl UiAction {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            UiActionKind::Click | UiActionKind::Select
                if self.mark.is_none() && self.target.is_none() =>
            {
                Err(Error::validation(format!(
                    "{} requires a mark or a target",
                    self.kind.as_str()
                )))
            }
            UiActionKind::Type if self.text_arg.is_none() => {
                Err(Error::validation("type requires a text argument"))
            }
            _ => Ok(()),
        }
    }
}

/// Fields recovered from a grounding string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedGrounding {
    pub kind: UiActionKind,
    pub mark: Option<u32>,
    pub bins: Option<(u8, u8)>,
    pub text_arg: Option<String>,
}

/// Serializes a UI action against the marks of its screenshot. The
/// coordinate is the mark's anchor when a mark is set, else the target's.
pub fn encode_grounding(action: &UiAction, marks: &MarkSet) -> Result<TokenRecord> {
    action.validate()?;
    let mut text = action.kind.as_str().to_string();
    let point = match action.mark {
        Some(k) => {
            let m = marks.get(k).ok_or(Error::UnknownMark(k))?;
            text.push_str(&format!(" : mark {k}"));
            Some(m.anchor())
        }
        None => action.target.map(|t| t.anchor()),
    };
    if let Some(p) = point {
        let (qx, qy) = quantize(p.clamped())?;
        text.push_str(&format!(" : ({},{})", qx.bin(), qy.bin()));
    }
    if let Some(arg) = &action.text_arg {
        text.push_str(" : ");
        text.push_str(&quote(arg));
    }
    Ok(TokenRecord {
        text,
        ids: None,
        kind: RecordKind::Grounding,
    })
}

pub fn parse_grounding(s: &str) -> Result<ParsedGrounding> {
    let mut c = Cursor::new(s);
    let kind = UiActionKind::ALL
        .into_iter()
        .find(|k| c.eat(k.as_str()))
        .ok_or_else(|| c.err("an action kind"))?;
    let mut out = ParsedGrounding {
        kind,
        mark: None,
        bins: None,
        text_arg: None,
    };
    if c.eat(" : mark ") {
        out.mark = Some(c.number()?);
    }
    if c.rest().starts_with(" : (") {
        c.expect(" : ")?;
        out.bins = Some(c.pair()?);
    }
    if c.eat(" : ") {
        out.text_arg = Some(c.quoted()?);
    }
    if !c.at_end() {
        return Err(c.err("end of input"));
    }
    Ok(out)
}
