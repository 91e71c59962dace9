//! The three-line-per-student text format used by the ASSISTments "builder"
//! exports:
//!
//! ```text
//! 3
//! 5,5,7
//! 1,0,1
//! ```
//!
//! Line one is the sequence length, line two the skill ids, line three the
//! 0/1 answers. Carriage returns are ignored, as are blank lines between
//! records and a trailing comma at the end of a row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, InteractionSequence};
use crate::error::{DktError, Result};

/// Result of parsing a triplet log.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedLog {
    pub dataset: Dataset,
    /// Records dropped because they held fewer than two interactions.
    pub dropped: usize,
    /// Skill id to the tag text it was written as, for labelling reports.
    pub labels: BTreeMap<usize, String>,
}

fn split_row(line: &str) -> Vec<&str> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Vec::new();
    }
    let trimmed = trimmed.strip_suffix(',').unwrap_or(trimmed);
    trimmed.split(',').map(str::trim).collect()
}

pub fn parse_triplet_log(text: &str) -> Result<ParsedLog> {
    let lines: Vec<(usize, String)> = text
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.replace('\r', "")))
        .collect();

    let mut sequences = Vec::new();
    let mut labels = BTreeMap::new();
    let mut dropped = 0;
    let mut max_id: Option<usize> = None;
    let mut pos = 0;

    while pos < lines.len() {
        let (header_no, header) = &lines[pos];
        if header.trim().is_empty() {
            pos += 1;
            continue;
        }
        let header_tok = header.trim();
        let header_tok = header_tok.strip_suffix(',').unwrap_or(header_tok).trim();
        let len: usize = header_tok
            .parse()
            .map_err(|_| DktError::parse(*header_no, format!("expected a sequence length, found '{header_tok}'")))?;

        let (ids_no, ids_line) = lines
            .get(pos + 1)
            .ok_or_else(|| DktError::parse(*header_no, "record is missing its skill-id row"))?;
        let (ans_no, ans_line) = lines
            .get(pos + 2)
            .ok_or_else(|| DktError::parse(*ids_no, "record is missing its answer row"))?;

        let id_toks = split_row(ids_line);
        if id_toks.len() != len {
            return Err(DktError::parse(
                *ids_no,
                format!("declared length {len} but found {} skill ids", id_toks.len()),
            ));
        }
        let ans_toks = split_row(ans_line);
        if ans_toks.len() != len {
            return Err(DktError::parse(
                *ans_no,
                format!("declared length {len} but found {} answers", ans_toks.len()),
            ));
        }

        let mut questions = Vec::with_capacity(len);
        for tok in id_toks {
            let id: usize = tok
                .parse()
                .map_err(|_| DktError::parse(*ids_no, format!("malformed skill id '{tok}'")))?;
            labels.entry(id).or_insert_with(|| tok.to_string());
            max_id = Some(max_id.map_or(id, |m| m.max(id)));
            questions.push(id);
        }
        let mut answers = Vec::with_capacity(len);
        for tok in ans_toks {
            match tok {
                "0" => answers.push(false),
                "1" => answers.push(true),
                other => {
                    return Err(DktError::parse(
                        *ans_no,
                        format!("answer '{other}' is not 0 or 1"),
                    ))
                }
            }
        }

        if len < 2 {
            dropped += 1;
        } else {
            sequences.push(InteractionSequence::new(questions, answers)?);
        }
        pos += 3;
    }

    let num_skills = max_id.map_or(1, |m| m + 1);
    Ok(ParsedLog {
        dataset: Dataset::with_num_skills(sequences, num_skills)?,
        dropped,
        labels,
    })
}

pub fn read_triplet_file(path: impl AsRef<Path>) -> Result<ParsedLog> {
    let text = std::fs::read_to_string(path)?;
    parse_triplet_log(&text)
}

pub fn serialize_triplet_log(d: &Dataset) -> String {
    let mut out = String::new();
    for s in d.sequences() {
        let _ = writeln!(out, "{}", s.len());
        let ids: Vec<String> = s.questions().iter().map(usize::to_string).collect();
        out.push_str(&ids.join(","));
        out.push('\n');
        let ans: Vec<&str> = s.answers().iter().map(|&a| if a { "1" } else { "0" }).collect();
        out.push_str(&ans.join(","));
        out.push('\n');
    }
    out
}
