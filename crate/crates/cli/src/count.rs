//! Decision-variable accounting per formulation. Pure builder arithmetic;
//! nothing is evaluated or solved.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use sepplan_core::baseline_dual::FormulationKind;
use sepplan_core::ocp::{count_variables_with, Scenario, VariableCount};

use crate::error::Result;
use crate::REPORT_SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub formulation: FormulationKind,
    pub counts: Option<VariableCount>,
    /// Why the formulation does not apply to this scenario.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub schema_version: u32,
    pub scenario: String,
    pub rows: Vec<CountRow>,
}

impl CountReport {
    pub fn total(&self, kind: FormulationKind) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.formulation == kind)
            .and_then(|r| r.counts.as_ref())
            .map(|c| c.total)
    }
}

/// `all` or a comma-separated list of formulation names.
pub fn parse_formulations(arg: &str) -> Result<Vec<FormulationKind>> {
    if arg.trim() == "all" {
        return Ok(FormulationKind::ALL.to_vec());
    }
    arg.split(',')
        .map(|v| v.trim().parse::<FormulationKind>().map_err(Into::into))
        .collect()
}

pub fn count(s: &Scenario, kinds: &[FormulationKind]) -> CountReport {
    let rows = kinds
        .iter()
        .map(|&kind| match count_variables_with(s, kind) {
            Ok(c) => CountRow {
                formulation: kind,
                counts: Some(c),
                error: None,
            },
            Err(e) => CountRow {
                formulation: kind,
                counts: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    CountReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: s.name.clone(),
        rows,
    }
}

pub fn format_table(r: &CountReport) -> String {
    let mut out = format!("{}\n", r.scenario);
    let _ = writeln!(
        out,
        "{:<12} {:>8} {:>8} {:>6} {:>8} {:>8}",
        "formulation", "states", "controls", "time", "aux", "total"
    );
    for row in &r.rows {
        match (&row.counts, &row.error) {
            (Some(c), _) => {
                let _ = writeln!(
                    out,
                    "{:<12} {:>8} {:>8} {:>6} {:>8} {:>8}",
                    row.formulation.name(),
                    c.states,
                    c.controls,
                    c.time,
                    c.aux,
                    c.total
                );
            }
            (None, err) => {
                let _ = writeln!(
                    out,
                    "{:<12} n/a ({})",
                    row.formulation.name(),
                    err.as_deref().unwrap_or("unavailable")
                );
            }
        }
    }
    out
}
