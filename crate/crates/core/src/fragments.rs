//! Conserved-fragment mining from multiple sequence alignments.
//!
//! A column's identity is the share of rows carrying its most frequent
//! residue, with gaps counted as mismatches. Columns whose identity
//! strictly exceeds `tau` are conserved, and every residue sitting in a
//! conserved column becomes a fragment of its own (ungapped) sequence.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alphabet::{self, NUM_AMINO_ACIDS};
use crate::error::{Error, Result};
use crate::io::fasta::GAP;
use crate::io::records::write_atomic;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentRow {
    pub id: String,
    pub aligned: String,
}

impl AlignmentRow {
    pub fn ungapped(&self) -> String {
        self.aligned.chars().filter(|&c| c != GAP as char).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    rows: Vec<AlignmentRow>,
    width: usize,
}

impl Alignment {
    /// Checks that rows are non-empty, equally wide and spelled in the
    /// amino-acid alphabet plus gaps.
    pub fn new(rows: Vec<AlignmentRow>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Alignment {
                row: "-".into(),
                msg: "alignment has no rows".into(),
            });
        };
        let width = first.aligned.len();
        for row in &rows {
            if row.aligned.len() != width {
                return Err(Error::Alignment {
                    row: row.id.clone(),
                    msg: format!(
                        "ragged alignment: width {} but the first row has {width}",
                        row.aligned.len()
                    ),
                });
            }
            if let Some((j, c)) = row
                .aligned
                .bytes()
                .enumerate()
                .find(|&(_, c)| c != GAP && alphabet::index_of(c).is_none())
            {
                return Err(Error::Alignment {
                    row: row.id.clone(),
                    msg: format!("illegal character '{}' at column {}", c as char, j + 1),
                });
            }
        }
        Ok(Self { rows, width })
    }

    pub fn rows(&self) -> &[AlignmentRow] {
        &self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Percentage of rows holding the modal non-gap residue of column `col`
/// (1-based). All-gap columns score 0.
pub fn column_identity(alignment: &Alignment, col: usize) -> f64 {
    assert!(
        (1..=alignment.width).contains(&col),
        "column {col} outside 1..={}",
        alignment.width
    );
    let mut counts = [0usize; NUM_AMINO_ACIDS];
    for row in &alignment.rows {
        if let Some(a) = alphabet::index_of(row.aligned.as_bytes()[col - 1]) {
            counts[a] += 1;
        }
    }
    let modal = counts.iter().copied().max().unwrap_or(0);
    100.0 * modal as f64 / alignment.rows.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FragmentMask {
    pub tau: f64,
    /// Sequence id to 1-based, strictly increasing ungapped indices.
    pub fragments: BTreeMap<String, Vec<usize>>,
}

impl FragmentMask {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn mine_fragments(alignment: &Alignment, tau: f64) -> Result<FragmentMask> {
    if !(0.0..=100.0).contains(&tau) {
        return Err(Error::invalid(
            "mine_fragments",
            format!("tau must lie in [0, 100], got {tau}"),
        ));
    }
    let conserved: Vec<bool> = (1..=alignment.width)
        .map(|c| column_identity(alignment, c) > tau)
        .collect();
    let mut fragments = BTreeMap::new();
    for row in &alignment.rows {
        let mut position = 0;
        let mut picked = Vec::new();
        for (c, ch) in row.aligned.bytes().enumerate() {
            if ch == GAP {
                continue;
            }
            position += 1;
            if conserved[c] {
                picked.push(position);
            }
        }
        if fragments.insert(row.id.clone(), picked).is_some() {
            return Err(Error::Alignment {
                row: row.id.clone(),
                msg: "duplicate sequence id".into(),
            });
        }
    }
    Ok(FragmentMask { tau, fragments })
}
