//! Aligned FASTA: `>`-headed rows over the 20 amino-acid letters and `-`.
//! Letters are upper-cased; wrapped sequence lines are joined.

use std::path::Path;

use crate::alphabet;
use crate::error::{Error, Result};
use crate::fragments::{Alignment, AlignmentRow};

pub const GAP: u8 = b'-';

pub fn parse_aligned_fasta_str(text: &str) -> Result<Alignment> {
    let mut rows: Vec<AlignmentRow> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            if id.is_empty() {
                return Err(Error::Alignment {
                    row: format!("line {}", i + 1),
                    msg: "empty sequence id".into(),
                });
            }
            rows.push(AlignmentRow {
                id,
                aligned: String::new(),
            });
            continue;
        }
        let Some(row) = rows.last_mut() else {
            return Err(Error::Alignment {
                row: format!("line {}", i + 1),
                msg: "sequence data before the first '>' header".into(),
            });
        };
        for (j, c) in line.bytes().enumerate() {
            let c = c.to_ascii_uppercase();
            if c != GAP && alphabet::index_of(c).is_none() {
                return Err(Error::Alignment {
                    row: row.id.clone(),
                    msg: format!(
                        "illegal character '{}' at column {}",
                        c as char,
                        row.aligned.len() + j + 1
                    ),
                });
            }
        }
        row.aligned.push_str(&line.to_ascii_uppercase());
    }
    Alignment::new(rows)
}

pub fn parse_aligned_fasta(path: impl AsRef<Path>) -> Result<Alignment> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_aligned_fasta_str(&text)
}
