//! End-to-end acceptance checks, one per advertised guarantee. Each test
//! prints a single verdict line so the suite doubles as a report.

use std::sync::Arc;
use std::time::{Duration, Instant};

use bdsde_core::calculus::{
    ito_residual, ito_residual_profile, AdaptednessTag, BackwardKind, IntegrandField, LinearFn,
    ProcessFields, SquareFn,
};
use bdsde_core::calculus::backward_integral;
use bdsde_core::coefficients::{
    build_family, estimate_lipschitz, sample_cloud, CoefficientSet, ComparisonHypothesis,
    FamilyParams, TerminalCondition, ZetaView,
};
use bdsde_core::comparison::{
    calibrate_slack, compare_pair, compare_pair_holder, nonpositivity_check, ComparisonConfig,
};
use bdsde_core::drivers::{enumerate_drivers, simulate_drivers, DriverPaths, SpaceSet, TimeGrid};
use bdsde_core::envelope::{envelope_solve, inf_convolution, sup_convolution, SearchSpec};
use bdsde_core::markspace::{Atom, DiscreteMeasureSpace};
use bdsde_core::solver::{picard_solve, picard_solve_from, uniqueness_gap, RegressionSpec, SolutionTriple};

fn verdict(name: &str, pass: bool, detail: &str) {
    println!("criterion {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {name} failed: {detail}");
}

fn within_budget(name: &str, start: Instant, budget: Duration) {
    let elapsed = start.elapsed();
    assert!(
        elapsed <= budget,
        "criterion {name} exceeded its runtime budget: {elapsed:?} > {budget:?}"
    );
}

fn atoms(pairs: &[(f64, f64)]) -> DiscreteMeasureSpace {
    DiscreteMeasureSpace::from_atoms(
        pairs.iter().map(|&(c, m)| (Atom::point(c), m)).collect(),
    )
    .unwrap()
}

#[test]
fn criterion_01_trivial_fixed_point() {
    let start = Instant::now();
    // Dyadic step and jump probability keep the tree weights exact in
    // binary floating point, so the zero solution is reproduced bit-exactly.
    let grid = TimeGrid::uniform(1.0, 4).unwrap();
    let spaces = SpaceSet {
        e: DiscreteMeasureSpace::empty(),
        u0: DiscreteMeasureSpace::empty(),
        u1: DiscreteMeasureSpace::empty(),
        f: atoms(&[(0.5, 1.0)]),
    };
    let d = enumerate_drivers(&grid, &spaces, 1 << 13).unwrap();
    let c = 3.25;
    let (sol, diag) = picard_solve(
        &CoefficientSet::zero(),
        &TerminalCondition::Constant(c),
        &d,
        &RegressionSpec::exact_tree(),
        1e-12,
        20,
        false,
    )
    .unwrap();
    let max_y_err = sol.y.iter().map(|v| (v - c).abs()).fold(0.0f64, f64::max);
    let max_z = sol.z.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    let max_zeta = sol.zeta.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    let pass = diag.converged
        && diag.iterations_used == 1
        && max_y_err < 1e-12
        && max_z == 0.0
        && max_zeta == 0.0;
    within_budget("01", start, Duration::from_secs(1));
    verdict(
        "01 trivial fixed point",
        pass,
        &format!(
            "iterations={} max|Y-c|={max_y_err:.3e} max|Z|={max_z:.3e} max|zeta|={max_zeta:.3e}",
            diag.iterations_used
        ),
    );
}

#[test]
fn criterion_02_linear_drift_closed_form() {
    let start = Instant::now();
    let grid = TimeGrid::uniform(1.0, 100).unwrap();
    let d = simulate_drivers(&grid, &SpaceSet::all_empty(), 10_000, 2024).unwrap();
    let coeffs = build_family("linear_drift", &FamilyParams::new()).unwrap();
    let (sol, diag) = picard_solve(
        &coeffs,
        &TerminalCondition::Constant(1.0),
        &d,
        &RegressionSpec::lsmc(),
        1e-7,
        40,
        false,
    )
    .unwrap();
    let y0 = sol.y0_mean(&d);
    let err = (y0 - (-1.0f64).exp()).abs();
    let pass = diag.converged && err <= 0.01;
    within_budget("02", start, Duration::from_secs(30));
    verdict(
        "02 linear drift closed form",
        pass,
        &format!("Y_0={y0:.6} |Y_0-exp(-1)|={err:.2e}"),
    );
}

#[test]
fn criterion_03_backward_integral_law() {
    let start = Instant::now();
    let grid = TimeGrid::uniform(1.0, 32).unwrap();
    let spaces = SpaceSet {
        e: atoms(&[(0.3, 1.0), (0.8, 2.0)]),
        u0: DiscreteMeasureSpace::empty(),
        u1: DiscreteMeasureSpace::empty(),
        f: DiscreteMeasureSpace::empty(),
    };
    let n = 10_000;
    let d = simulate_drivers(&grid, &spaces, n, 99).unwrap();
    let sigma = 0.7;
    let field = IntegrandField::constant(AdaptednessTag::Backward, sigma, 32, n, 2);
    let samples = backward_integral(&field, &d, BackwardKind::WhiteNoise, 0).unwrap();
    let mean: f64 = samples.iter().sum::<f64>() / n as f64;
    let var: f64 = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let target = 1.0 * sigma * sigma * 3.0;
    let rel = (var - target).abs() / target;
    let pass = rel <= 0.05;
    within_budget("03", start, Duration::from_secs(10));
    verdict(
        "03 backward integral law",
        pass,
        &format!("sample var={var:.4} target={target:.4} rel err={rel:.3}"),
    );
}

#[test]
fn criterion_04_ito_convergence() {
    let start = Instant::now();
    let n = 10_000;
    // Linear f on the Brownian process: the telescoping is exact.
    let grid = TimeGrid::uniform(1.0, 64).unwrap();
    let d = simulate_drivers(&grid, &SpaceSet::all_empty(), n, 7).unwrap();
    let terminal: Vec<f64> = (0..n).map(|p| d.b_level(64, p)).collect();
    let mut fields = ProcessFields::zeros(&d, terminal);
    fields.z = IntegrandField::constant(AdaptednessTag::Forward, 1.0, 64, n, 1);
    let lin = LinearFn { a: 3.0, b: -1.0 };
    let linear_max = ito_residual(&lin, &fields, &d, 0)
        .unwrap()
        .iter()
        .map(|r| r.abs())
        .fold(0.0f64, f64::max);

    // Quadratic f: the per-cell residual increment is dB^2 - dt, whose
    // mean magnitude is proportional to dt and halves as K doubles.
    let mut means = Vec::new();
    for steps in [16usize, 32, 64] {
        let grid = TimeGrid::uniform(1.0, steps).unwrap();
        let d = simulate_drivers(&grid, &SpaceSet::all_empty(), n, 7).unwrap();
        let terminal: Vec<f64> = (0..n).map(|p| d.b_level(steps, p)).collect();
        let mut fields = ProcessFields::zeros(&d, terminal);
        fields.z = IntegrandField::constant(AdaptednessTag::Forward, 1.0, steps, n, 1);
        let profile = ito_residual_profile(&SquareFn, &fields, &d).unwrap();
        let mut acc = 0.0;
        for k in 0..steps {
            for p in 0..n {
                acc += (profile[[k, p]] - profile[[k + 1, p]]).abs();
            }
        }
        means.push(acc / (steps * n) as f64);
    }
    let r1 = means[1] / means[0];
    let r2 = means[2] / means[1];
    let halves = |r: f64| (0.35..=0.65).contains(&r);
    let pass = linear_max < 1e-10 && halves(r1) && halves(r2);
    within_budget("04", start, Duration::from_secs(60));
    verdict(
        "04 ito formula convergence",
        pass,
        &format!("linear max residual={linear_max:.2e} increment ratios={r1:.3},{r2:.3}"),
    );
}

#[test]
fn criterion_05_picard_contraction() {
    let start = Instant::now();
    let grid = TimeGrid::uniform(1.0, 4).unwrap();
    let spaces = SpaceSet {
        e: atoms(&[(0.5, 1.0)]),
        u0: DiscreteMeasureSpace::empty(),
        u1: DiscreteMeasureSpace::empty(),
        f: DiscreteMeasureSpace::empty(),
    };
    let d = enumerate_drivers(&grid, &spaces, 1 << 16).unwrap();
    let mut coeffs = build_family("trig_lipschitz", &FamilyParams::new()).unwrap();
    // Use empirical constants measured on a sampled cloud.
    let cloud = sample_cloud(&spaces, 4000, 11, 3.0);
    let est = estimate_lipschitz(&coeffs, &cloud, &spaces).unwrap();
    coeffs.lipschitz_c = est.c_hat;
    coeffs.lipschitz_alpha = est.alpha_hat;
    let (_, diag) = picard_solve(
        &coeffs,
        &TerminalCondition::Constant(0.5),
        &d,
        &RegressionSpec::exact_tree(),
        1e-12,
        40,
        false,
    )
    .unwrap();
    let bound = diag.theoretical_bound + 0.1;
    let worst = diag.contraction_ratios.iter().copied().fold(0.0f64, f64::max);
    let pass = diag.converged
        && !diag.contraction_ratios.is_empty()
        && diag.contraction_ratios.iter().all(|r| *r < 1.0 && *r <= bound);
    within_budget("05", start, Duration::from_secs(120));
    verdict(
        "05 picard contraction",
        pass,
        &format!(
            "C_hat={:.3} alpha_hat={:.3} worst ratio={worst:.3} bound={bound:.3}",
            est.c_hat, est.alpha_hat
        ),
    );
}

#[test]
fn criterion_06_uniqueness_two_starts() {
    let start = Instant::now();
    let grid = TimeGrid::uniform(1.0, 5).unwrap();
    let d = enumerate_drivers(&grid, &SpaceSet::all_empty(), 1 << 8).unwrap();
    let coeffs = build_family("linear_drift", &FamilyParams::new()).unwrap();
    let spec = RegressionSpec::exact_tree();
    let tol = 1e-6;
    let terminal = TerminalCondition::Constant(1.0);
    let (s1, d1) = picard_solve(&coeffs, &terminal, &d, &spec, tol, 60, false).unwrap();
    let mut far = SolutionTriple::zeros(&d);
    far.y.fill(5.0);
    let (s2, d2) =
        picard_solve_from(&coeffs, &terminal, &d, &spec, tol, 60, false, Some(far)).unwrap();
    let gaps = uniqueness_gap(&s1, &s2, &d).unwrap();
    let pass = d1.converged && d2.converged && gaps.sup_y_gap <= 2.0 * tol;
    within_budget("06", start, Duration::from_secs(10));
    verdict(
        "06 uniqueness from two starts",
        pass,
        &format!("sup Y gap={:.3e} bound={:.1e}", gaps.sup_y_gap, 2.0 * tol),
    );
}

#[test]
fn criterion_07_comparison_suites() {
    let start = Instant::now();
    // Calibration: constant drifts integrate exactly on the grid.
    let grid = TimeGrid::uniform(1.0, 32).unwrap();
    let d_plain = simulate_drivers(&grid, &SpaceSet::all_empty(), 10_000, 505).unwrap();
    let cal = calibrate_slack(&d_plain, &RegressionSpec::lsmc(), 1e-10, 30).unwrap();
    let calibration_ok = cal.max_error < 1e-10;

    let cfg = ComparisonConfig {
        slack: cal.slack,
        tol: 1e-7,
        max_iter: 40,
        ..ComparisonConfig::default()
    };

    // Lipschitz suite: monotone jump maps (g0 = -y u on u in (0,1)),
    // drifts ordered by a constant shift, equal terminals.
    let spaces41 = SpaceSet {
        e: DiscreteMeasureSpace::empty(),
        u0: atoms(&[(0.4, 1.0)]),
        u1: DiscreteMeasureSpace::empty(),
        f: DiscreteMeasureSpace::empty(),
    };
    let d41 = simulate_drivers(&grid, &spaces41, 10_000, 606).unwrap();
    let c1 = build_family("jump_contraction", &FamilyParams::new()).unwrap();
    let mut p2 = FamilyParams::new();
    p2.insert("drift_shift".into(), 1.0);
    let c2 = build_family("jump_contraction", &p2).unwrap();
    let terminal = TerminalCondition::Constant(1.0);
    let rep41 = compare_pair(
        &c1,
        &c2,
        ComparisonHypothesis::LipschitzLower,
        &terminal,
        &terminal,
        &d41,
        &RegressionSpec::lsmc(),
        &cfg,
    )
    .unwrap();

    // Hoelder suite: sigma = sqrt(y+), drifts 0.5 - y and 1 - y.
    let spaces43 = SpaceSet {
        e: atoms(&[(0.5, 1.0)]),
        u0: DiscreteMeasureSpace::empty(),
        u1: DiscreteMeasureSpace::empty(),
        f: DiscreteMeasureSpace::empty(),
    };
    let d43 = simulate_drivers(&grid, &spaces43, 10_000, 707).unwrap();
    let h1 = build_family("sqrt_holder", &FamilyParams::new()).unwrap();
    let mut hp = FamilyParams::new();
    hp.insert("drift_shift".into(), 1.0);
    let h2 = build_family("sqrt_holder", &hp).unwrap();
    let rep43 = compare_pair_holder(
        &h1,
        &h2,
        ComparisonHypothesis::HolderLower,
        &terminal,
        &terminal,
        &d43,
        &RegressionSpec::lsmc(),
        &cfg,
    )
    .unwrap();

    let pass = calibration_ok
        && rep41.violation_fraction <= 0.01
        && rep43.violation_fraction <= 0.01;
    within_budget("07", start, Duration::from_secs(300));
    verdict(
        "07 comparison suites",
        pass,
        &format!(
            "calibration err={:.2e} violation fractions: lipschitz={:.4} hoelder={:.4} (slack={:.2e})",
            cal.max_error, rep41.violation_fraction, rep43.violation_fraction, cal.slack
        ),
    );
}

#[test]
fn criterion_08_nonpositivity_examples() {
    let start = Instant::now();
    let grid = TimeGrid::uniform(1.0, 32).unwrap();
    let cfg = ComparisonConfig {
        slack: 1e-6,
        tol: 1e-7,
        max_iter: 40,
        ..ComparisonConfig::default()
    };
    let plain = SpaceSet::all_empty();

    let d1 = simulate_drivers(&grid, &plain, 10_000, 31).unwrap();
    let r1 = nonpositivity_check(
        &CoefficientSet::zero(),
        &TerminalCondition::Constant(-1.0),
        &d1,
        &RegressionSpec::lsmc(),
        &cfg,
    )
    .unwrap();

    let r2 = nonpositivity_check(
        &CoefficientSet::zero(),
        &TerminalCondition::BrownianFunction(Arc::new(|b: f64| -b.abs())),
        &d1,
        &RegressionSpec::lsmc(),
        &cfg,
    )
    .unwrap();

    let spaces = SpaceSet {
        e: atoms(&[(0.5, 1.0)]),
        u0: DiscreteMeasureSpace::empty(),
        u1: DiscreteMeasureSpace::empty(),
        f: DiscreteMeasureSpace::empty(),
    };
    let d3 = simulate_drivers(&grid, &spaces, 10_000, 32).unwrap();
    let r3 = nonpositivity_check(
        &build_family("linear_diffusion", &FamilyParams::new()).unwrap(),
        &TerminalCondition::Constant(-0.5),
        &d3,
        &RegressionSpec::lsmc(),
        &cfg,
    )
    .unwrap();

    let pass = r1.violation_fraction <= 0.01
        && r2.violation_fraction <= 0.01
        && r3.violation_fraction <= 0.01;
    within_budget("08", start, Duration::from_secs(120));
    verdict(
        "08 nonpositivity examples",
        pass,
        &format!(
            "violation fractions: constant={:.4} |B_T|={:.4} linear diffusion={:.4}",
            r1.violation_fraction, r2.violation_fraction, r3.violation_fraction
        ),
    );
}

#[test]
fn criterion_09_convolution_ledger() {
    let start = Instant::now();
    let coeffs = build_family("sqrt_cap_growth", &FamilyParams::new()).unwrap();
    let k = coeffs.growth_k.unwrap();
    let space = DiscreteMeasureSpace::empty();
    let zeta: Vec<f64> = Vec::new();
    let view = ZetaView::new(&zeta, &space);
    let levels = [2.0, 4.0, 8.0];
    let infs: Vec<_> = levels
        .iter()
        .map(|&n| inf_convolution(&coeffs, n, SearchSpec::default()).unwrap())
        .collect();
    let sups: Vec<_> = levels
        .iter()
        .map(|&n| sup_convolution(&coeffs, n, SearchSpec::default()).unwrap())
        .collect();
    let n_pts = 1000;
    let tol = 1e-3;
    let mut chain_ok = true;
    let mut quot_ok = true;
    let mut values = vec![vec![0.0; n_pts]; levels.len()];
    let pts: Vec<f64> = (0..n_pts).map(|i| -4.0 + 8.0 * i as f64 / (n_pts - 1) as f64).collect();
    for (i, &y) in pts.iter().enumerate() {
        let base = (coeffs.beta)(0.0, y, 0.0, &view);
        let iv: Vec<f64> = infs.iter().map(|a| a.eval(0.0, y, 0.0, &view).unwrap()).collect();
        let sv: Vec<f64> = sups.iter().map(|a| a.eval(0.0, y, 0.0, &view).unwrap()).collect();
        chain_ok &= iv[0] <= iv[1] + tol
            && iv[1] <= iv[2] + tol
            && iv[2] <= base + tol
            && base <= sv[2] + tol
            && sv[2] <= sv[1] + tol
            && sv[1] <= sv[0] + tol
            && sv[0] <= base + k + tol;
        for (l, v) in iv.iter().enumerate() {
            values[l][i] = *v;
        }
    }
    // Difference quotients of each inf approximant on the sampled grid.
    for (l, &n) in levels.iter().enumerate() {
        for i in (0..n_pts).step_by(25) {
            for j in ((i + 25)..n_pts).step_by(25) {
                let q = (values[l][i] - values[l][j]).abs() / (pts[i] - pts[j]).abs();
                quot_ok &= q <= n + 1e-2;
            }
        }
    }
    let pass = chain_ok && quot_ok;
    within_budget("09", start, Duration::from_secs(60));
    verdict(
        "09 convolution ledger",
        pass,
        &format!("chain ok={chain_ok} quotients ok={quot_ok} over {n_pts} points"),
    );
}

#[test]
fn criterion_10_envelope_sandwich() {
    let start = Instant::now();
    let grid = TimeGrid::uniform(1.0, 4).unwrap();
    let d = enumerate_drivers(&grid, &SpaceSet::all_empty(), 1 << 6).unwrap();
    let slack = 1e-3;
    let record = envelope_solve(
        &build_family("sqrt_cap_growth", &FamilyParams::new()).unwrap(),
        &TerminalCondition::Constant(0.5),
        &d,
        &RegressionSpec::exact_tree(),
        &[2.0, 4.0, 8.0],
        SearchSpec::default(),
        1e-9,
        60,
        slack,
    )
    .unwrap();

    // Already-Lipschitz base: the bracket collapses to solver tolerance.
    let tol = 1e-6;
    let mut lipschitz = build_family("linear_drift", &FamilyParams::new()).unwrap();
    lipschitz.growth_k = Some(1.0);
    let collapsed = envelope_solve(
        &lipschitz,
        &TerminalCondition::Constant(1.0),
        &d,
        &RegressionSpec::exact_tree(),
        &[1.0, 2.0],
        SearchSpec::default(),
        tol,
        60,
        slack,
    )
    .unwrap();
    let max_width = collapsed
        .levels
        .iter()
        .map(|r| r.bracket_width.abs())
        .fold(0.0f64, f64::max);
    let pass = record.monotone() && collapsed.monotone() && max_width <= 3.0 * tol;
    within_budget("10", start, Duration::from_secs(600));
    verdict(
        "10 envelope sandwich",
        pass,
        &format!(
            "defects={} lipschitz bracket width={max_width:.2e} (bound {:.1e})",
            record.defects.len() + collapsed.defects.len(),
            3.0 * tol
        ),
    );
}

#[test]
fn criterion_11_determinism_across_thread_counts() {
    let start = Instant::now();
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let spaces = SpaceSet {
        e: atoms(&[(0.3, 1.0)]),
        u0: atoms(&[(0.5, 0.5)]),
        u1: atoms(&[(0.7, 0.25)]),
        f: atoms(&[(0.9, 1.0)]),
    };
    let run = |threads: usize| -> (Vec<u8>, Vec<u8>) {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let d = simulate_drivers(&grid, &spaces, 2000, 12345).unwrap();
            let mut driver_csv = Vec::new();
            d.export_csv(&mut driver_csv).unwrap();
            let coeffs = build_family("linear_drift", &FamilyParams::new()).unwrap();
            let (sol, _) = picard_solve(
                &coeffs,
                &TerminalCondition::Constant(1.0),
                &d,
                &RegressionSpec::lsmc(),
                1e-7,
                30,
                false,
            )
            .unwrap();
            let mut sol_csv = Vec::new();
            sol.export_csv(&d, &mut sol_csv).unwrap();
            (driver_csv, sol_csv)
        })
    };
    let (drv1, sol1) = run(1);
    let (drv4, sol4) = run(4);
    let pass = drv1 == drv4 && sol1 == sol4;
    within_budget("11", start, Duration::from_secs(60));
    verdict(
        "11 determinism across thread counts",
        pass,
        &format!(
            "driver csv bytes equal={} solution csv bytes equal={}",
            drv1 == drv4,
            sol1 == sol4
        ),
    );
}

/// Shared helper so unused-import warnings stay away when criteria are
/// filtered; also exercises the driver identity used in comparisons.
#[allow(dead_code)]
fn shared_drivers_identity(d: &DriverPaths) -> usize {
    d.n_paths()
}
