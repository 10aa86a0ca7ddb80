//! The JSON-lines protein record format:
//!
//! ```text
//! {"id": "1abc_A", "sequence": "MKV...", "coords": [[x, y, z], ...], "fragments": [3, 4, 17]}
//! ```
//!
//! Coordinates are Cα positions in Å; fragment indices are 1-based and
//! strictly increasing. Floats are written in shortest round-trip form, so
//! parse → serialize → parse reproduces every coordinate bit-for-bit.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alphabet;
use crate::error::{Error, Result};
use crate::geometry::{dist, Point};

/// Accepted band for consecutive Cα distances, in Å.
pub const CA_DISTANCE_BAND: (f64, f64) = (2.0, 6.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProteinRecord {
    pub id: String,
    pub sequence: String,
    pub coords: Vec<Point>,
    /// 1-based fragment indices.
    pub fragments: Vec<usize>,
}

impl ProteinRecord {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Checks every record invariant; the message names the first
    /// violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.sequence.len();
        if n < 2 {
            return Err(format!("record {}: need at least 2 residues, got {n}", self.id));
        }
        if let Some((pos, c)) = self
            .sequence
            .bytes()
            .enumerate()
            .find(|(_, c)| alphabet::index_of(*c).is_none())
        {
            return Err(format!(
                "record {}: residue '{}' at position {} is not one of the 20 canonical amino acids",
                self.id,
                c as char,
                pos + 1
            ));
        }
        if self.coords.len() != n {
            return Err(format!(
                "record {}: sequence has {n} residues but {} coordinate rows",
                self.id,
                self.coords.len()
            ));
        }
        if let Some(i) = self.coords.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(format!("record {}: non-finite coordinate at residue {}", self.id, i + 1));
        }
        for i in 1..n {
            let d = dist(&self.coords[i - 1], &self.coords[i]);
            if !(CA_DISTANCE_BAND.0..=CA_DISTANCE_BAND.1).contains(&d) {
                return Err(format!(
                    "record {}: Cα distance {d:.3} Å between residues {} and {} outside [{}, {}]",
                    self.id,
                    i,
                    i + 1,
                    CA_DISTANCE_BAND.0,
                    CA_DISTANCE_BAND.1
                ));
            }
        }
        let mut prev = 0;
        for &f in &self.fragments {
            if f == 0 || f > n {
                return Err(format!(
                    "record {}: fragment index {f} outside 1..={n}",
                    self.id
                ));
            }
            if f <= prev {
                return Err(format!(
                    "record {}: fragment indices must be strictly increasing ({prev} then {f})",
                    self.id
                ));
            }
            prev = f;
        }
        Ok(())
    }

    /// Alphabet indices of the sequence. Assumes a validated record.
    pub fn residue_indices(&self) -> Vec<usize> {
        self.sequence
            .bytes()
            .map(|c| alphabet::index_of(c).expect("validated sequence"))
            .collect()
    }

    /// Fragment indices converted to 0-based.
    pub fn fragment_positions(&self) -> Vec<usize> {
        self.fragments.iter().map(|f| f - 1).collect()
    }
}

pub fn parse_records_str(text: &str) -> Result<Vec<ProteinRecord>> {
    parse_records_reader(text.as_bytes())
}

pub fn parse_records_reader(reader: impl std::io::Read) -> Result<Vec<ProteinRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Record {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProteinRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
            line: line_no,
            msg: e.to_string(),
        })?;
        record.validate().map_err(|msg| Error::Record { line: line_no, msg })?;
        out.push(record);
    }
    Ok(out)
}

pub fn parse_records(path: impl AsRef<Path>) -> Result<Vec<ProteinRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records_reader(file)
}

pub fn records_to_string(records: &[ProteinRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

/// Writes `contents` to `path` through a temporary sibling and a rename,
/// so readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_records(path: impl AsRef<Path>, records: &[ProteinRecord]) -> Result<()> {
    write_atomic(path, records_to_string(records)?.as_bytes())
}
