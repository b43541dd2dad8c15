//! Tabular query results.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::SemanticType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnHeader {
    pub label: String,
    pub semantic_type: SemanticType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Integer(i64),
    Decimal(f64),
    Text(String),
}

impl Cell {
    pub fn is_numeric(&self) -> bool {
        matches!(self, Cell::Integer(_) | Cell::Decimal(_))
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Null => f.write_str("NULL"),
            Cell::Integer(i) => write!(f, "{i}"),
            Cell::Decimal(d) => write!(f, "{d}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub headers: Vec<ColumnHeader>,
    pub rows: Vec<Vec<Cell>>,
    pub row_count: usize,
    /// Set when the row cap cut the result short.
    pub truncated: bool,
}

impl ResultTable {
    pub fn new(headers: Vec<ColumnHeader>, rows: Vec<Vec<Cell>>, truncated: bool) -> Self {
        debug_assert!(rows.iter().all(|r| r.len() == headers.len()));
        let row_count = rows.len();
        Self {
            headers,
            rows,
            row_count,
            truncated,
        }
    }

    pub fn empty(headers: Vec<ColumnHeader>) -> Self {
        Self::new(headers, Vec::new(), false)
    }

    pub fn is_well_formed(&self) -> bool {
        self.row_count == self.rows.len() && self.rows.iter().all(|r| r.len() == self.headers.len())
    }

    /// Content hash of the rows (headers excluded), used to compare results
    /// against labeled answers without storing the values themselves.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for row in &self.rows {
            for cell in row {
                let tag: &[u8] = match cell {
                    Cell::Null => b"n",
                    Cell::Integer(_) => b"i",
                    Cell::Decimal(_) => b"d",
                    Cell::Text(_) => b"t",
                };
                hasher.update(tag);
                hasher.update(cell.to_string().as_bytes());
                hasher.update([0x1f]);
            }
            hasher.update([0x1e]);
        }
        hex_string(&hasher.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn sha256_hex(text: &str) -> String {
    hex_string(&Sha256::digest(text.as_bytes()))
}
