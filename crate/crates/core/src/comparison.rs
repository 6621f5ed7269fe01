//! Monte Carlo verification of the ordering results: the non-positivity
//! check for a single equation and the coupled two-equation comparison
//! (Lipschitz and half-Hölder variants). Both equations of a pair are
//! always solved on the same driver paths, so the reported ordering is a
//! pathwise statement.

use std::io::Write;

use crate::coefficients::{
    sample_cloud, validate_comparison_structure, CoefficientSet, ComparisonHypothesis,
    StructureReport, TerminalCondition, ZetaView,
};
use crate::drivers::DriverPaths;
use crate::error::{BdsdeError, Result};
use crate::solver::{picard_solve, RegressionSpec, SolutionTriple};

/// Per-node summary of the ordering gap.
#[derive(Debug, Clone)]
pub struct GapRow {
    pub t: f64,
    /// Outcome-weighted mean of Y1 - Y2 at the node.
    pub mean_gap: f64,
    /// Largest Y1 - Y2 at the node.
    pub max_gap: f64,
    /// Paths at the node with Y1 - Y2 above slack.
    pub violation_count: usize,
}

/// Outcome of one ordering check.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// Outcome-weighted share of (node, path) pairs with the ordering
    /// violated beyond the slack.
    pub violation_fraction: f64,
    /// Largest Y1 - Y2 observed anywhere.
    pub max_positive_gap: f64,
    /// Scheme-error allowance the violations were counted against.
    pub slack: f64,
    pub gap_profile: Vec<GapRow>,
    pub pass: bool,
    /// Structure validation reports for the sets involved.
    pub structure: Vec<StructureReport>,
}

impl ComparisonReport {
    /// CSV gap profile plus a one-line verdict footer.
    pub fn export_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,mean_gap,max_gap,violation_count")?;
        for row in &self.gap_profile {
            writeln!(
                out,
                "{},{},{},{}",
                row.t, row.mean_gap, row.max_gap, row.violation_count
            )?;
        }
        writeln!(
            out,
            "# verdict pass={} violation_fraction={} max_positive_gap={} slack={}",
            self.pass, self.violation_fraction, self.max_positive_gap, self.slack
        )
    }
}

/// Knobs shared by the comparison entry points.
#[derive(Debug, Clone)]
pub struct ComparisonConfig {
    /// Violation allowance on the gap, typically from [`calibrate_slack`].
    pub slack: f64,
    /// Largest acceptable violation fraction for a pass.
    pub ceiling: f64,
    /// Picard stopping tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Validation cloud parameters.
    pub cloud_pairs: usize,
    pub cloud_seed: u64,
    pub cloud_radius: f64,
    /// Run even when structure validation or drift ordering fails.
    pub force: bool,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            slack: 1e-6,
            ceiling: 0.01,
            tol: 1e-9,
            max_iter: 60,
            cloud_pairs: 512,
            cloud_seed: 7,
            cloud_radius: 2.0,
            force: false,
        }
    }
}

/// Assemble the report from the gap field Y1 - Y2.
fn gap_report(
    sol1: &SolutionTriple,
    sol2: &SolutionTriple,
    drivers: &DriverPaths,
    slack: f64,
    ceiling: f64,
    structure: Vec<StructureReport>,
) -> ComparisonReport {
    let k_max = sol1.n_steps();
    let n_paths = sol1.n_paths();
    let mut profile = Vec::with_capacity(k_max + 1);
    let mut violation_mass = 0.0;
    let mut max_gap = f64::NEG_INFINITY;
    for k in 0..=k_max {
        let (mut mean, mut node_max, mut count) = (0.0, f64::NEG_INFINITY, 0usize);
        for p in 0..n_paths {
            let gap = sol1.y[[k, p]] - sol2.y[[k, p]];
            let w = drivers.path_weight(p);
            mean += w * gap;
            node_max = node_max.max(gap);
            if gap > slack {
                count += 1;
                violation_mass += w;
            }
        }
        max_gap = max_gap.max(node_max);
        profile.push(GapRow {
            t: drivers.grid().node(k),
            mean_gap: mean,
            max_gap: node_max,
            violation_count: count,
        });
    }
    let violation_fraction = violation_mass / (k_max + 1) as f64;
    ComparisonReport {
        violation_fraction,
        max_positive_gap: max_gap,
        slack,
        gap_profile: profile,
        pass: violation_fraction <= ceiling,
        structure,
    }
}

fn validate_or_force(
    coeffs: &CoefficientSet,
    drivers: &DriverPaths,
    hypothesis: ComparisonHypothesis,
    cfg: &ComparisonConfig,
) -> Result<StructureReport> {
    let cloud = sample_cloud(drivers.spaces(), cfg.cloud_pairs, cfg.cloud_seed, cfg.cloud_radius);
    let report = validate_comparison_structure(coeffs, drivers.spaces(), hypothesis, &cloud)?;
    if !report.pass && !cfg.force {
        let clauses: Vec<&str> = report.violations.iter().map(|v| v.clause.as_str()).collect();
        return Err(BdsdeError::HypothesisRejected(format!(
            "{} validation failed on clauses: {}",
            hypothesis.label(),
            clauses.join(", ")
        )));
    }
    Ok(report)
}

/// Check that a single solution with nonpositive terminal stays at or
/// below the slack everywhere.
pub fn nonpositivity_check(
    coeffs: &CoefficientSet,
    terminal: &TerminalCondition,
    drivers: &DriverPaths,
    spec: &RegressionSpec,
    cfg: &ComparisonConfig,
) -> Result<ComparisonReport> {
    let structure =
        validate_or_force(coeffs, drivers, ComparisonHypothesis::NonPositivity, cfg)?;
    let terminal_values = terminal.realize(drivers)?;
    if let Some(bad) = terminal_values.iter().find(|v| **v > 0.0) {
        if !cfg.force {
            return Err(BdsdeError::Config(format!(
                "nonpositivity_check needs a nonpositive terminal, found {bad}"
            )));
        }
    }
    let (sol, diag) = picard_solve(
        coeffs,
        terminal,
        drivers,
        spec,
        cfg.tol,
        cfg.max_iter,
        cfg.force,
    )?;
    if !diag.converged {
        return Err(BdsdeError::Config(
            "picard iteration did not converge within max_iter".into(),
        ));
    }
    // Compare Y against the zero solution.
    let zero = SolutionTriple::zeros(drivers);
    Ok(gap_report(&sol, &zero, drivers, cfg.slack, cfg.ceiling, vec![structure]))
}

/// Verify the ordered drift precondition on a sampled cloud.
fn check_drift_order(
    coeffs1: &CoefficientSet,
    coeffs2: &CoefficientSet,
    drivers: &DriverPaths,
    cfg: &ComparisonConfig,
) -> Result<()> {
    let cloud = sample_cloud(drivers.spaces(), cfg.cloud_pairs, cfg.cloud_seed, cfg.cloud_radius);
    for (a, b) in &cloud {
        for pt in [a, b] {
            let view = ZetaView::new(&pt.zeta, &drivers.spaces().f);
            let b1 = coeffs1.eval_beta(pt.s, pt.y, pt.z, &view)?;
            let b2 = coeffs2.eval_beta(pt.s, pt.y, pt.z, &view)?;
            if b1 > b2 + 1e-12 {
                if cfg.force {
                    return Ok(());
                }
                return Err(BdsdeError::DriftOrderViolated(format!(
                    "beta1={b1} > beta2={b2} at {pt}"
                )));
            }
        }
    }
    Ok(())
}

fn compare_pair_impl(
    coeffs1: &CoefficientSet,
    coeffs2: &CoefficientSet,
    hypothesis: ComparisonHypothesis,
    terminal1: &TerminalCondition,
    terminal2: &TerminalCondition,
    drivers: &DriverPaths,
    spec: &RegressionSpec,
    cfg: &ComparisonConfig,
    solver_force: bool,
) -> Result<ComparisonReport> {
    let r1 = validate_or_force(coeffs1, drivers, hypothesis, cfg)?;
    let r2 = validate_or_force(coeffs2, drivers, hypothesis, cfg)?;
    check_drift_order(coeffs1, coeffs2, drivers, cfg)?;
    let t1 = terminal1.realize(drivers)?;
    let t2 = terminal2.realize(drivers)?;
    if !cfg.force {
        if let Some(p) = (0..t1.len()).find(|&p| t1[p] > t2[p] + 1e-12) {
            return Err(BdsdeError::Config(format!(
                "terminal ordering violated on path {p}: {} > {}",
                t1[p], t2[p]
            )));
        }
    }
    // Both solves consume the identical driver object: coupling.
    let (sol1, d1) = picard_solve(coeffs1, terminal1, drivers, spec, cfg.tol, cfg.max_iter, solver_force)?;
    let (sol2, d2) = picard_solve(coeffs2, terminal2, drivers, spec, cfg.tol, cfg.max_iter, solver_force)?;
    if !d1.converged || !d2.converged {
        return Err(BdsdeError::Config(
            "picard iteration did not converge within max_iter".into(),
        ));
    }
    Ok(gap_report(&sol1, &sol2, drivers, cfg.slack, cfg.ceiling, vec![r1, r2]))
}

/// Compare two equations with ordered Lipschitz drifts: report on
/// Y1 - Y2 <= slack over all (node, path) pairs.
pub fn compare_pair(
    coeffs1: &CoefficientSet,
    coeffs2: &CoefficientSet,
    hypothesis: ComparisonHypothesis,
    terminal1: &TerminalCondition,
    terminal2: &TerminalCondition,
    drivers: &DriverPaths,
    spec: &RegressionSpec,
    cfg: &ComparisonConfig,
) -> Result<ComparisonReport> {
    if !matches!(
        hypothesis,
        ComparisonHypothesis::LipschitzLower | ComparisonHypothesis::LipschitzUpper
    ) {
        return Err(BdsdeError::Config(
            "compare_pair accepts the Lipschitz hypotheses (thm41a/thm41b)".into(),
        ));
    }
    compare_pair_impl(
        coeffs1, coeffs2, hypothesis, terminal1, terminal2, drivers, spec, cfg, cfg.force,
    )
}

/// Comparison under the half-Hölder hypotheses: the standing Lipschitz
/// declaration is not required, so the underlying solves run forced once
/// the Hölder-side structure validation has passed.
pub fn compare_pair_holder(
    coeffs1: &CoefficientSet,
    coeffs2: &CoefficientSet,
    hypothesis: ComparisonHypothesis,
    terminal1: &TerminalCondition,
    terminal2: &TerminalCondition,
    drivers: &DriverPaths,
    spec: &RegressionSpec,
    cfg: &ComparisonConfig,
) -> Result<ComparisonReport> {
    if !matches!(
        hypothesis,
        ComparisonHypothesis::HolderLower | ComparisonHypothesis::HolderUpper
    ) {
        return Err(BdsdeError::Config(
            "compare_pair_holder accepts the Hölder hypotheses (thm43a/thm43b)".into(),
        ));
    }
    compare_pair_impl(
        coeffs1, coeffs2, hypothesis, terminal1, terminal2, drivers, spec, cfg, true,
    )
}

/// Slack calibration on the closed-form pair beta1 = -1, beta2 = +1 with
/// zero terminal: the exact gap is Y2 - Y1 = 2(T - t).
#[derive(Debug, Clone, Copy)]
pub struct SlackCalibration {
    /// Largest |Y_i - closed form| across both runs.
    pub max_error: f64,
    /// 3x max_error: the recommended slack.
    pub slack: f64,
}

pub fn calibrate_slack(
    drivers: &DriverPaths,
    spec: &RegressionSpec,
    tol: f64,
    max_iter: usize,
) -> Result<SlackCalibration> {
    let mut down = CoefficientSet::zero();
    down.beta = std::sync::Arc::new(|_, _, _, _: &ZetaView<'_>| -1.0);
    let mut up = CoefficientSet::zero();
    up.beta = std::sync::Arc::new(|_, _, _, _: &ZetaView<'_>| 1.0);
    let terminal = TerminalCondition::Constant(0.0);
    let (s1, _) = picard_solve(&down, &terminal, drivers, spec, tol, max_iter, false)?;
    let (s2, _) = picard_solve(&up, &terminal, drivers, spec, tol, max_iter, false)?;
    let horizon = drivers.grid().horizon();
    let mut max_error = 0.0f64;
    for k in 0..=drivers.n_steps() {
        let tail = horizon - drivers.grid().node(k);
        for p in 0..drivers.n_paths() {
            max_error = max_error.max((s1.y[[k, p]] + tail).abs());
            max_error = max_error.max((s2.y[[k, p]] - tail).abs());
        }
    }
    Ok(SlackCalibration {
        max_error,
        slack: 3.0 * max_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{build_family, FamilyParams};
    use crate::drivers::{enumerate_drivers, simulate_drivers, SpaceSet, TimeGrid};
    use std::sync::Arc;

    fn constant_drift(level: f64) -> CoefficientSet {
        let mut params = FamilyParams::new();
        params.insert("level".into(), level);
        build_family("constant_drift", &params).unwrap()
    }

    #[test]
    fn calibration_gap_matches_closed_form() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let d = simulate_drivers(&grid, &SpaceSet::all_empty(), 64, 3).unwrap();
        let cal = calibrate_slack(&d, &RegressionSpec::lsmc(), 1e-10, 20).unwrap();
        // Constant drifts integrate exactly on the grid.
        assert!(cal.max_error < 1e-10, "max_error={}", cal.max_error);
    }

    #[test]
    fn identical_pair_has_zero_gaps() {
        let grid = TimeGrid::uniform(1.0, 6).unwrap();
        let d = simulate_drivers(&grid, &SpaceSet::all_empty(), 128, 5).unwrap();
        let coeffs = build_family("linear_drift", &FamilyParams::new()).unwrap();
        let terminal = TerminalCondition::Constant(1.0);
        let cfg = ComparisonConfig { slack: 1e-8, ..ComparisonConfig::default() };
        let report = compare_pair(
            &coeffs,
            &coeffs,
            ComparisonHypothesis::LipschitzLower,
            &terminal,
            &terminal,
            &d,
            &RegressionSpec::lsmc(),
            &cfg,
        )
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.violation_fraction, 0.0);
        for row in &report.gap_profile {
            assert!(row.max_gap.abs() < 1e-12);
        }
    }

    #[test]
    fn ordered_constant_drifts_produce_linear_gap() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let d = simulate_drivers(&grid, &SpaceSet::all_empty(), 64, 9).unwrap();
        let terminal = TerminalCondition::Constant(0.0);
        let cfg = ComparisonConfig { slack: 1e-9, ..ComparisonConfig::default() };
        let report = compare_pair(
            &constant_drift(-1.0),
            &constant_drift(1.0),
            ComparisonHypothesis::LipschitzLower,
            &terminal,
            &terminal,
            &d,
            &RegressionSpec::lsmc(),
            &cfg,
        )
        .unwrap();
        assert!(report.pass);
        for row in &report.gap_profile {
            // Y1 - Y2 = -2(T - t).
            assert!((row.mean_gap + 2.0 * (1.0 - row.t)).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_drift_pair_follows_exponential_gap_profile() {
        // beta1 = -y, beta2 = 1 - y, equal terminals: the mean gap obeys
        // Y2 - Y1 = 1 - exp(-(T - t)).
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let d = simulate_drivers(&grid, &SpaceSet::all_empty(), 256, 17).unwrap();
        let coeffs1 = build_family("linear_drift", &FamilyParams::new()).unwrap();
        let mut params = FamilyParams::new();
        params.insert("shift".into(), 1.0);
        let coeffs2 = build_family("linear_drift", &params).unwrap();
        let terminal = TerminalCondition::Constant(1.0);
        let cfg = ComparisonConfig { slack: 1e-3, ..ComparisonConfig::default() };
        let report = compare_pair(
            &coeffs1,
            &coeffs2,
            ComparisonHypothesis::LipschitzLower,
            &terminal,
            &terminal,
            &d,
            &RegressionSpec::lsmc(),
            &cfg,
        )
        .unwrap();
        assert!(report.pass);
        for row in &report.gap_profile {
            let expected = -(1.0 - (-(1.0 - row.t)).exp());
            assert!(
                (row.mean_gap - expected).abs() < 0.02,
                "t={} gap={} expected={expected}",
                row.t,
                row.mean_gap
            );
        }
    }

    #[test]
    fn drift_order_violation_is_detected_and_forceable() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let d = simulate_drivers(&grid, &SpaceSet::all_empty(), 32, 2).unwrap();
        let terminal = TerminalCondition::Constant(0.0);
        let cfg = ComparisonConfig::default();
        let err = compare_pair(
            &constant_drift(1.0),
            &constant_drift(-1.0),
            ComparisonHypothesis::LipschitzLower,
            &terminal,
            &terminal,
            &d,
            &RegressionSpec::lsmc(),
            &cfg,
        );
        assert!(matches!(err, Err(BdsdeError::DriftOrderViolated(_))));
        let forced_cfg = ComparisonConfig { force: true, slack: 1e-9, ..cfg };
        let report = compare_pair(
            &constant_drift(1.0),
            &constant_drift(-1.0),
            ComparisonHypothesis::LipschitzLower,
            &terminal,
            &terminal,
            &d,
            &RegressionSpec::lsmc(),
            &forced_cfg,
        )
        .unwrap();
        // With the order flipped the gap is +2(T - t): every interior
        // node violates.
        assert!(!report.pass);
        assert!(report.max_positive_gap > 1.9);
    }

    #[test]
    fn antisymmetry_of_the_gap_profile() {
        let grid = TimeGrid::uniform(1.0, 6).unwrap();
        let d = simulate_drivers(&grid, &SpaceSet::all_empty(), 64, 11).unwrap();
        let terminal = TerminalCondition::Constant(0.0);
        let cfg = ComparisonConfig { force: true, ..ComparisonConfig::default() };
        let fwd = compare_pair(
            &constant_drift(-0.5),
            &constant_drift(0.5),
            ComparisonHypothesis::LipschitzLower,
            &terminal,
            &terminal,
            &d,
            &RegressionSpec::lsmc(),
            &cfg,
        )
        .unwrap();
        let rev = compare_pair(
            &constant_drift(0.5),
            &constant_drift(-0.5),
            ComparisonHypothesis::LipschitzLower,
            &terminal,
            &terminal,
            &d,
            &RegressionSpec::lsmc(),
            &cfg,
        )
        .unwrap();
        for (a, b) in fwd.gap_profile.iter().zip(rev.gap_profile.iter()) {
            assert_eq!(a.mean_gap, -b.mean_gap);
        }
    }

    #[test]
    fn constant_negative_terminal_stays_negative() {
        let grid = TimeGrid::uniform(1.0, 6).unwrap();
        let d = simulate_drivers(&grid, &SpaceSet::all_empty(), 64, 4).unwrap();
        let cfg = ComparisonConfig::default();
        let report = nonpositivity_check(
            &CoefficientSet::zero(),
            &TerminalCondition::Constant(-1.0),
            &d,
            &RegressionSpec::lsmc(),
            &cfg,
        )
        .unwrap();
        assert!(report.pass);
        assert_eq!(report.violation_fraction, 0.0);
        assert!(report.max_positive_gap < -0.999);
    }

    #[test]
    fn conditional_expectation_of_nonpositive_terminal() {
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let d = simulate_drivers(&grid, &SpaceSet::all_empty(), 2000, 31).unwrap();
        let cfg = ComparisonConfig { slack: 1e-6, ..ComparisonConfig::default() };
        let terminal = TerminalCondition::BrownianFunction(Arc::new(|b: f64| -b.abs()));
        let report = nonpositivity_check(
            &CoefficientSet::zero(),
            &terminal,
            &d,
            &RegressionSpec::lsmc(),
            &cfg,
        )
        .unwrap();
        assert!(
            report.violation_fraction <= 0.01,
            "violation_fraction={}",
            report.violation_fraction
        );
    }

    #[test]
    fn positive_terminal_is_rejected_without_force() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let d = simulate_drivers(&grid, &SpaceSet::all_empty(), 16, 1).unwrap();
        let err = nonpositivity_check(
            &CoefficientSet::zero(),
            &TerminalCondition::Constant(0.5),
            &d,
            &RegressionSpec::lsmc(),
            &ComparisonConfig::default(),
        );
        assert!(matches!(err, Err(BdsdeError::Config(_))));
    }

    #[test]
    fn holder_pair_orders_under_sqrt_diffusion() {
        // sigma = sqrt(y+) on one atom, beta1 = 0.5 - y, beta2 = 1 - y.
        let grid = TimeGrid::uniform(1.0, 8).unwrap();
        let spaces = SpaceSet {
            e: crate::markspace::DiscreteMeasureSpace::from_atoms(vec![(
                crate::markspace::Atom::point(0.5),
                1.0,
            )])
            .unwrap(),
            u0: crate::markspace::DiscreteMeasureSpace::empty(),
            u1: crate::markspace::DiscreteMeasureSpace::empty(),
            f: crate::markspace::DiscreteMeasureSpace::empty(),
        };
        let d = simulate_drivers(&grid, &spaces, 1000, 23).unwrap();
        let coeffs1 = build_family("sqrt_holder", &FamilyParams::new()).unwrap();
        let mut params = FamilyParams::new();
        params.insert("drift_shift".into(), 1.0);
        let coeffs2 = build_family("sqrt_holder", &params).unwrap();
        let terminal = TerminalCondition::Constant(1.0);
        let cfg = ComparisonConfig { slack: 0.02, ..ComparisonConfig::default() };
        let report = compare_pair_holder(
            &coeffs1,
            &coeffs2,
            ComparisonHypothesis::HolderLower,
            &terminal,
            &terminal,
            &d,
            &RegressionSpec::lsmc(),
            &cfg,
        )
        .unwrap();
        assert!(
            report.violation_fraction <= 0.01,
            "violation_fraction={}",
            report.violation_fraction
        );
    }

    #[test]
    fn wrong_hypothesis_family_is_a_usage_error() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let d = enumerate_drivers(&grid, &SpaceSet::all_empty(), 64).unwrap();
        let terminal = TerminalCondition::Constant(0.0);
        let err = compare_pair(
            &CoefficientSet::zero(),
            &CoefficientSet::zero(),
            ComparisonHypothesis::HolderLower,
            &terminal,
            &terminal,
            &d,
            &RegressionSpec::exact_tree(),
            &ComparisonConfig::default(),
        );
        assert!(matches!(err, Err(BdsdeError::Config(_))));
    }
}
