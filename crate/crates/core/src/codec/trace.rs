use super::{Cursor, RecordKind, TokenRecord};
use crate::error::{Error, Result};
use crate::geometry::{quantize, Trace};
use crate::som::MarkSet;

/// Indices of `horizon` future steps drawn uniformly from a trace of
/// `len` points, excluding the current step 0.
pub fn subsample_indices(len: usize, horizon: usize) -> Vec<usize> {
    (1..=horizon)
        .map(|j| ((j * (len - 1)) as f64 / horizon as f64).round() as usize)
        .collect()
}

/// Fields recovered from a trace-prediction string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTom {
    pub action_text: String,
    pub marks: Vec<u32>,
    pub traces: Vec<(u32, Vec<(u8, u8)>)>,
}

/// Serializes future traces of the foreground marks. Traces pair with
/// marks in ascending label order.
pub fn encode_tom(
    action_text: &str,
    fg_marks: &MarkSet,
    fg_traces: &[Trace],
    horizon: usize,
) -> Result<TokenRecord> {
    if horizon == 0 {
        return Err(Error::validation("horizon must be >= 1"));
    }
    if action_text.contains(" : ") || action_text.contains('\n') {
        return Err(Error::validation("action text must not contain ` : ` or newlines"));
    }
    if fg_marks.len() != fg_traces.len() {
        return Err(Error::validation(format!(
            "{} marks but {} traces",
            fg_marks.len(),
            fg_traces.len()
        )));
    }
    let labels: Vec<u32> = fg_marks.labels().collect();
    let mut entries = Vec::with_capacity(labels.len());
    for (&k, t) in labels.iter().zip(fg_traces) {
        if t.len() < horizon + 1 {
            return Err(Error::validation(format!(
                "trace for mark {k} has {} points, need {}",
                t.len(),
                horizon + 1
            )));
        }
        let pts = subsample_indices(t.len(), horizon)
            .into_iter()
            .map(|i| {
                let (qx, qy) = quantize(t.points()[i].clamped())?;
                Ok(format!("({},{})", qx.bin(), qy.bin()))
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push(format!("{k}:[{}]", pts.join(",")));
    }
    let mark_list: Vec<String> = labels.iter().map(u32::to_string).collect();
    let body = if entries.is_empty() {
        String::new()
    } else {
        format!(" {} ", entries.join(", "))
    };
    Ok(TokenRecord {
        text: format!(
            "{action_text} : marks {{{}}} : traces {{{body}}}",
            mark_list.join(",")
        ),
        ids: None,
        kind: RecordKind::Tom,
    })
}

pub fn parse_tom(s: &str) -> Result<ParsedTom> {
    let split = s
        .find(" : marks {")
        .ok_or_else(|| Cursor::new(s).err("` : marks {`"))?;
    let action_text = s[..split].to_string();
    let mut c = Cursor::new(&s[split..]);
    c.expect(" : marks {")?;
    let mut marks = Vec::new();
    if !c.eat("}") {
        loop {
            marks.push(c.number()?);
            if c.eat("}") {
                break;
            }
            c.expect(",")?;
        }
    }
    c.expect(" : traces {")?;
    let mut traces = Vec::new();
    if !c.eat("}") {
        c.expect(" ")?;
        loop {
            let k = c.number()?;
            c.expect(":[")?;
            let mut pts = vec![c.pair()?];
            while c.eat(",") {
                pts.push(c.pair()?);
            }
            c.expect("]")?;
            traces.push((k, pts));
            if c.eat(" }") {
                break;
            }
            c.expect(", ")?;
        }
    }
    if !c.at_end() {
        return Err(c.err("end of input"));
    }
    Ok(ParsedTom {
        action_text,
        marks,
        traces,
    })
}
