//! Re-certifies a stored trajectory against its scenario.

use std::fmt::Write as _;
use std::path::Path;

use sepplan_core::io::{load_scenario, load_trajectory};
use sepplan_core::verification::{certify_trajectory, CertificationReport, CertifyOptions};

use crate::error::Result;

pub fn verify_files(
    trajectory: &Path,
    scenario: &Path,
    opts: &CertifyOptions,
) -> Result<CertificationReport> {
    let s = load_scenario(scenario)?;
    let traj = load_trajectory(trajectory)?;
    Ok(certify_trajectory(&traj, &s, opts)?)
}

pub fn format_report(r: &CertificationReport) -> String {
    let mut out = format!(
        "{}: {} steps, max defect {:.3e}, min clearance {:.6}, min containment margin {:.6}\n",
        if r.certified {
            "certified"
        } else {
            "NOT certified"
        },
        r.steps_checked,
        r.max_defect,
        r.min_clearance,
        r.min_containment_margin
    );
    for v in &r.violations {
        let _ = writeln!(
            out,
            "  violation: {}",
            serde_json::to_string(v).unwrap_or_else(|_| format!("{v:?}"))
        );
    }
    out
}
