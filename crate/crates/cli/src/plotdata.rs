//! Column-oriented whitespace-delimited text for generic plotting tools.
//!
//! Each file starts with a single `#`-prefixed header naming the columns;
//! every following line holds one row of numbers.

use std::io::Write;

use bdsde_core::comparison::ComparisonReport;
use bdsde_core::envelope::EnvelopeRecord;
use bdsde_core::solver::PicardDiagnostics;

/// Per-node mean/max gap and violation counts of a comparison run.
pub fn gap_profile<W: Write>(report: &ComparisonReport, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# t mean_gap max_gap violation_count")?;
    for row in &report.gap_profile {
        writeln!(
            out,
            "{} {} {} {}",
            row.t, row.mean_gap, row.max_gap, row.violation_count
        )?;
    }
    Ok(())
}

/// Successive-difference norms of a Picard run.
pub fn convergence<W: Write>(diag: &PicardDiagnostics, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# iteration total_norm ratio distance")?;
    for i in 0..diag.totals.len() {
        let ratio = if i == 0 {
            f64::NAN
        } else {
            diag.contraction_ratios[i - 1]
        };
        writeln!(
            out,
            "{} {} {} {}",
            i + 1,
            diag.totals[i],
            ratio,
            diag.distances[i]
        )?;
    }
    Ok(())
}

/// Bracket data per regularization level.
pub fn envelope<W: Write>(record: &EnvelopeRecord, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "# level y0_lower y0_upper bracket_width")?;
    for row in &record.levels {
        writeln!(
            out,
            "{} {} {} {}",
            row.level, row.y0_lower, row.y0_upper, row.bracket_width
        )?;
    }
    Ok(())
}
