//! The patch-hunk-location sequence notation.
//!
//! A sequence encodes, against the line numbering of an anchoring function,
//! which lines stay, which must be removed, and where new hunks must be
//! inserted:
//!
//! ```text
//! {1,2,3,4,5,[ADD],6,[7],[ADD],8,9,10,11,12,13,14,15,16,17,18}
//! ```
//!
//! `6` keeps line 6, `[7]` removes line 7, and `[ADD]` marks an insertion
//! point. The numbered tokens of a valid sequence are exactly `1..=n` in
//! order, each appearing once; `[ADD]` tokens interleave freely.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SequenceError {
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("invariant violation: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeqToken {
    Keep(usize),
    Remove(usize),
    Add,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationSequence {
    tokens: Vec<SeqToken>,
    anchor_length: usize,
}

impl LocationSequence {
    /// Validates the token stream and derives the anchor length.
    pub fn new(tokens: Vec<SeqToken>) -> Result<Self, SequenceError> {
        let mut expected = 1usize;
        for tok in &tokens {
            let line = match tok {
                SeqToken::Keep(l) | SeqToken::Remove(l) => *l,
                SeqToken::Add => continue,
            };
            if line < expected {
                if line == 0 {
                    return Err(SequenceError::Invariant(
                        "line numbers are 1-based; found 0".into(),
                    ));
                }
                return Err(SequenceError::Invariant(format!(
                    "duplicate or non-monotone line number {line} (expected {expected})"
                )));
            }
            if line > expected {
                return Err(SequenceError::Invariant(format!(
                    "missing line number {expected} (found {line})"
                )));
            }
            expected += 1;
        }
        if expected == 1 {
            return Err(SequenceError::Invariant(
                "sequence contains no line numbers".into(),
            ));
        }
        Ok(LocationSequence {
            tokens,
            anchor_length: expected - 1,
        })
    }

    /// The all-keep sequence `{1,...,n}`.
    pub fn identity(anchor_length: usize) -> Result<Self, SequenceError> {
        LocationSequence::new((1..=anchor_length).map(SeqToken::Keep).collect())
    }

    pub fn tokens(&self) -> &[SeqToken] {
        &self.tokens
    }

    pub fn anchor_length(&self) -> usize {
        self.anchor_length
    }

    pub fn add_count(&self) -> usize {
        self.tokens
            .iter()
            .filter(|t| matches!(t, SeqToken::Add))
            .count()
    }

    pub fn removed_lines(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                SeqToken::Remove(l) => Some(*l),
                _ => None,
            })
            .collect()
    }
}

/// Parses the `{1,[ADD],2,[3]}` notation. Whitespace around tokens and commas
/// is tolerated; duplicated, missing, or non-monotone line numbers and
/// unknown tokens are rejected.
pub fn parse_sequence(text: &str) -> Result<LocationSequence, SequenceError> {
    let bytes = text.as_bytes();
    let mut pos = 0usize;

    let skip_ws = |pos: &mut usize| {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
    };

    skip_ws(&mut pos);
    if pos >= bytes.len() || bytes[pos] != b'{' {
        return Err(SequenceError::Parse {
            offset: pos,
            reason: "expected '{'".into(),
        });
    }
    pos += 1;

    let mut tokens = Vec::new();
    let mut expect_token = true;
    loop {
        skip_ws(&mut pos);
        if pos >= bytes.len() {
            return Err(SequenceError::Parse {
                offset: pos,
                reason: "unterminated sequence, expected '}'".into(),
            });
        }
        if bytes[pos] == b'}' {
            if expect_token && !tokens.is_empty() {
                return Err(SequenceError::Parse {
                    offset: pos,
                    reason: "trailing comma before '}'".into(),
                });
            }
            pos += 1;
            break;
        }
        if !expect_token {
            if bytes[pos] == b',' {
                pos += 1;
                expect_token = true;
                continue;
            }
            return Err(SequenceError::Parse {
                offset: pos,
                reason: "expected ',' or '}'".into(),
            });
        }
        match bytes[pos] {
            b'[' => {
                let start = pos;
                pos += 1;
                skip_ws(&mut pos);
                if bytes[pos..].starts_with(b"ADD") {
                    pos += 3;
                    skip_ws(&mut pos);
                    if pos >= bytes.len() || bytes[pos] != b']' {
                        return Err(SequenceError::Parse {
                            offset: pos,
                            reason: "expected ']' after ADD".into(),
                        });
                    }
                    pos += 1;
                    tokens.push(SeqToken::Add);
                } else if pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    let line = parse_number(bytes, &mut pos)?;
                    skip_ws(&mut pos);
                    if pos >= bytes.len() || bytes[pos] != b']' {
                        return Err(SequenceError::Parse {
                            offset: pos,
                            reason: "expected ']' after line number".into(),
                        });
                    }
                    pos += 1;
                    tokens.push(SeqToken::Remove(line));
                } else {
                    return Err(SequenceError::Parse {
                        offset: start,
                        reason: "expected [ADD] or [<line>]".into(),
                    });
                }
            }
            b'0'..=b'9' => {
                let line = parse_number(bytes, &mut pos)?;
                tokens.push(SeqToken::Keep(line));
            }
            _ => {
                return Err(SequenceError::Parse {
                    offset: pos,
                    reason: format!("unknown token starting with {:?}", bytes[pos] as char),
                });
            }
        }
        expect_token = false;
    }

    skip_ws(&mut pos);
    if pos != bytes.len() {
        return Err(SequenceError::Parse {
            offset: pos,
            reason: "trailing input after '}'".into(),
        });
    }

    LocationSequence::new(tokens)
}

fn parse_number(bytes: &[u8], pos: &mut usize) -> Result<usize, SequenceError> {
    let start = *pos;
    let mut value: usize = 0;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((bytes[*pos] - b'0') as usize))
            .ok_or(SequenceError::Parse {
                offset: start,
                reason: "line number overflows".into(),
            })?;
        *pos += 1;
    }
    Ok(value)
}

/// Canonical form: comma-separated, `[ADD]` and `[n]` tokens, braces, no
/// spaces. `parse_sequence(serialize_sequence(s)) == s` for every valid `s`.
pub fn serialize_sequence(seq: &LocationSequence) -> String {
    let mut out = String::from("{");
    for (idx, tok) in seq.tokens().iter().enumerate() {
        if idx > 0 {
            out.push(',');
        }
        match tok {
            SeqToken::Keep(l) => out.push_str(&l.to_string()),
            SeqToken::Remove(l) => out.push_str(&format!("[{l}]")),
            SeqToken::Add => out.push_str("[ADD]"),
        }
    }
    out.push('}');
    out
}
