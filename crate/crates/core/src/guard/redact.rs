use serde::Serialize;

use crate::catalog::SemanticType;
use crate::table::{Cell, ResultTable};

pub const REDACTION_MARKER: &str = "[REDACTED]";

/// An output column whose values must be masked before leaving the service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlannedRedaction {
    pub output_index: usize,
    pub label: String,
    /// `table.column` of the PII source.
    pub column: String,
}

/// Replaces every non-null value in the planned columns with the marker.
pub fn redact_results(table: &mut ResultTable, redactions: &[PlannedRedaction]) {
    for r in redactions {
        if let Some(header) = table.headers.get_mut(r.output_index) {
            header.semantic_type = SemanticType::Text;
        }
        for row in &mut table.rows {
            if let Some(cell) = row.get_mut(r.output_index) {
                if *cell != Cell::Null {
                    *cell = Cell::Text(REDACTION_MARKER.to_string());
                }
            }
        }
    }
}
