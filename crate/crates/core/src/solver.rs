//! Grid solver for the terminal-value equation: the exogenous-coefficient
//! base case via conditional-expectation projection, then the full
//! nonlinear case via Picard iteration with contraction diagnostics.
//!
//! Conditional expectations E[. | F_k] are taken against the filtration
//! that joins the forward Brownian/M history before node k with the whole
//! reversed-noise history. That filtration is nested in k, so the solve
//! runs as a one-step backward recursion: the node-k value is the
//! projection of (next value + cell contribution of the exogenous
//! fields), and the martingale components Z, zeta come from projecting
//! the same quantity against the normalized forward driver increments.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use ndarray::{Array2, Array3};

use crate::calculus::{AdaptednessTag, IntegrandField};
use crate::coefficients::{CoefficientSet, TerminalCondition, ZetaView};
use crate::drivers::{DriverMode, DriverPaths};
use crate::error::{BdsdeError, Result};

/// Discrete solution (Y, Z, zeta) on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTriple {
    /// Y per (node, path), shape (K+1, P).
    pub y: Array2<f64>,
    /// Z per (cell, path), shape (K, P).
    pub z: Array2<f64>,
    /// zeta per (cell, path, F-atom).
    pub zeta: Array3<f64>,
}

impl SolutionTriple {
    pub fn zeros(drivers: &DriverPaths) -> Self {
        let (k, p) = (drivers.n_steps(), drivers.n_paths());
        SolutionTriple {
            y: Array2::zeros((k + 1, p)),
            z: Array2::zeros((k, p)),
            zeta: Array3::zeros((k, p, drivers.spaces().f.n_atoms())),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.z.dim().0
    }

    pub fn n_paths(&self) -> usize {
        self.y.dim().1
    }

    /// Outcome-weighted mean of Y at node 0.
    pub fn y0_mean(&self, drivers: &DriverPaths) -> f64 {
        (0..self.n_paths())
            .map(|p| drivers.path_weight(p) * self.y[[0, p]])
            .sum()
    }

    /// CSV rows (k, t, p, Y, Z, zeta per atom); the terminal row carries
    /// zeros for the cell-indexed Z and zeta columns.
    pub fn export_csv<W: Write>(&self, drivers: &DriverPaths, out: &mut W) -> std::io::Result<()> {
        let n_atoms = self.zeta.dim().2;
        write!(out, "k,t,p,Y,Z")?;
        for a in 0..n_atoms {
            write!(out, ",zeta_{a}")?;
        }
        writeln!(out)?;
        for k in 0..=self.n_steps() {
            for p in 0..self.n_paths() {
                let t = drivers.grid().node(k);
                let z = if k < self.n_steps() { self.z[[k, p]] } else { 0.0 };
                write!(out, "{k},{t},{p},{},{z}", self.y[[k, p]])?;
                for a in 0..n_atoms {
                    let zt = if k < self.n_steps() { self.zeta[[k, p, a]] } else { 0.0 };
                    write!(out, ",{zt}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionMode {
    /// Least-squares Monte Carlo projection on a polynomial basis.
    Lsmc,
    /// Exact finite conditional expectations on enumeration drivers.
    ExactTree,
}

/// Which driver summaries enter the regression basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSet {
    /// Brownian state B at the node.
    pub brownian_state: bool,
    /// Forward M jump counts per atom up to the node.
    pub forward_jump_state: bool,
    /// Aggregate reversed-noise increments per atom over [t_k, T].
    pub backward_tail: bool,
}

impl Default for FeatureSet {
    fn default() -> Self {
        FeatureSet {
            brownian_state: true,
            forward_jump_state: true,
            backward_tail: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSpec {
    pub mode: RegressionMode,
    /// Maximum total degree of the polynomial basis (lsmc).
    pub basis_degree: usize,
    /// Ridge weight on non-constant basis columns.
    pub ridge: f64,
    pub feature_set: FeatureSet,
}

impl RegressionSpec {
    pub fn lsmc() -> Self {
        RegressionSpec {
            mode: RegressionMode::Lsmc,
            basis_degree: 2,
            ridge: 1e-8,
            feature_set: FeatureSet::default(),
        }
    }

    pub fn exact_tree() -> Self {
        RegressionSpec {
            mode: RegressionMode::ExactTree,
            basis_degree: 2,
            ridge: 0.0,
            feature_set: FeatureSet::default(),
        }
    }

    fn validate(&self, drivers: &DriverPaths) -> Result<()> {
        if self.basis_degree == 0 {
            return Err(BdsdeError::Config("basis_degree must be >= 1".into()));
        }
        if self.mode == RegressionMode::ExactTree && drivers.mode() != DriverMode::Enumeration {
            return Err(BdsdeError::InvalidDrivers(
                "exact_tree projection requires enumeration-mode drivers".into(),
            ));
        }
        Ok(())
    }
}

/// The four exogenous coefficient processes of the base-case equation.
pub struct ExogenousFields {
    /// beta(s): forward scalar.
    pub drift: IntegrandField,
    /// sigma(s,u): backward, E atoms.
    pub white: IntegrandField,
    /// g0(s,u): backward, U0 atoms.
    pub jump0: IntegrandField,
    /// g1(s,u): backward, U1 atoms.
    pub jump1: IntegrandField,
}

impl ExogenousFields {
    pub fn zeros(drivers: &DriverPaths) -> Self {
        let (k, p) = (drivers.n_steps(), drivers.n_paths());
        let s = drivers.spaces();
        ExogenousFields {
            drift: IntegrandField::zeros(AdaptednessTag::Forward, k, p, 1),
            white: IntegrandField::zeros(AdaptednessTag::Backward, k, p, s.e.n_atoms()),
            jump0: IntegrandField::zeros(AdaptednessTag::Backward, k, p, s.u0.n_atoms()),
            jump1: IntegrandField::zeros(AdaptednessTag::Backward, k, p, s.u1.n_atoms()),
        }
    }

    fn validate(&self, drivers: &DriverPaths) -> Result<()> {
        let s = drivers.spaces();
        let want = |field: &IntegrandField, tag, atoms: usize, name: &str| -> Result<()> {
            if field.tag() != tag {
                return Err(BdsdeError::TagMismatch {
                    expected: if tag == AdaptednessTag::Forward { "forward" } else { "backward" },
                    context: "solve_simple",
                });
            }
            if (field.n_nodes(), field.n_paths(), field.n_atoms())
                != (drivers.n_steps() + 1, drivers.n_paths(), atoms)
            {
                return Err(BdsdeError::ShapeMismatch(format!(
                    "exogenous field {name} does not conform to the drivers"
                )));
            }
            Ok(())
        };
        want(&self.drift, AdaptednessTag::Forward, 1, "drift")?;
        want(&self.white, AdaptednessTag::Backward, s.e.n_atoms(), "white")?;
        want(&self.jump0, AdaptednessTag::Backward, s.u0.n_atoms(), "jump0")?;
        want(&self.jump1, AdaptednessTag::Backward, s.u1.n_atoms(), "jump1")?;
        Ok(())
    }

    /// Exogenous contribution of cell k to the backward value recursion.
    fn cell_contribution(&self, drivers: &DriverPaths, k: usize, p: usize) -> f64 {
        let dt = drivers.grid().dt(k);
        let s = drivers.spaces();
        let mut inc = self.drift.value(k, p, 0) * dt;
        for a in 0..s.e.n_atoms() {
            inc += self.white.value(k + 1, p, a) * drivers.rev_w_inc(k, p, a);
        }
        for a in 0..s.u0.n_atoms() {
            inc += self.jump0.value(k + 1, p, a) * drivers.rev_n0_comp(k, p, a);
        }
        for a in 0..s.u1.n_atoms() {
            inc += self.jump1.value(k + 1, p, a) * drivers.rev_n1_count(k, p, a);
        }
        inc
    }
}

/// Precomputed per-node regression features.
struct FeatureEngine {
    /// Raw feature values per (node, path, feature).
    raw: Array3<f64>,
    /// Multi-indices of the monomial basis.
    exponents: Vec<Vec<u8>>,
}

fn monomial_exponents(n_features: usize, degree: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![0u8; n_features]];
    let mut frontier = vec![vec![0u8; n_features]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &frontier {
            // Raise only indices at or after the last raised one so each
            // multi-index is generated exactly once.
            let start = e.iter().rposition(|&x| x > 0).unwrap_or(0);
            for i in start..n_features {
                let mut e2 = e.clone();
                e2[i] += 1;
                next.push(e2);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

impl FeatureEngine {
    fn new(drivers: &DriverPaths, spec: &RegressionSpec) -> Self {
        let k_max = drivers.n_steps();
        let n_paths = drivers.n_paths();
        let s = drivers.spaces();
        let fs = &spec.feature_set;
        let n_features = usize::from(fs.brownian_state)
            + if fs.forward_jump_state { s.f.n_atoms() } else { 0 }
            + if fs.backward_tail {
                s.e.n_atoms() + s.u0.n_atoms() + s.u1.n_atoms()
            } else {
                0
            };
        let mut raw = Array3::zeros((k_max + 1, n_paths, n_features));
        for p in 0..n_paths {
            // Forward states accumulate from node 0; backward tails
            // accumulate from node K downward.
            for k in 0..=k_max {
                let mut i = 0;
                if fs.brownian_state {
                    raw[[k, p, i]] = if k == 0 {
                        0.0
                    } else {
                        raw[[k - 1, p, i]] + drivers.b_inc(k - 1, p)
                    };
                    i += 1;
                }
                if fs.forward_jump_state {
                    for a in 0..s.f.n_atoms() {
                        raw[[k, p, i]] = if k == 0 {
                            0.0
                        } else {
                            raw[[k - 1, p, i]] + drivers.m_count(k - 1, p, a)
                        };
                        i += 1;
                    }
                }
            }
            if fs.backward_tail {
                let base = usize::from(fs.brownian_state)
                    + if fs.forward_jump_state { s.f.n_atoms() } else { 0 };
                for k in (0..k_max).rev() {
                    let mut i = base;
                    for a in 0..s.e.n_atoms() {
                        raw[[k, p, i]] = raw[[k + 1, p, i]] + drivers.rev_w_inc(k, p, a);
                        i += 1;
                    }
                    for a in 0..s.u0.n_atoms() {
                        raw[[k, p, i]] = raw[[k + 1, p, i]] + drivers.rev_n0_count(k, p, a);
                        i += 1;
                    }
                    for a in 0..s.u1.n_atoms() {
                        raw[[k, p, i]] = raw[[k + 1, p, i]] + drivers.rev_n1_count(k, p, a);
                        i += 1;
                    }
                }
            }
        }
        let exponents = monomial_exponents(n_features, spec.basis_degree);
        FeatureEngine { raw, exponents }
    }

    /// Design matrix at node k, shape (P, basis).
    fn design(&self, k: usize) -> Array2<f64> {
        let (_, n_paths, n_features) = self.raw.dim();
        let mut phi = Array2::zeros((n_paths, self.exponents.len()));
        for p in 0..n_paths {
            for (j, e) in self.exponents.iter().enumerate() {
                let mut v = 1.0;
                for i in 0..n_features {
                    for _ in 0..e[i] {
                        v *= self.raw[[k, p, i]];
                    }
                }
                phi[[p, j]] = v;
            }
        }
        phi
    }
}

/// Weighted ridge regression reused for several targets at one node.
struct NodeRegression {
    chol: Cholesky<f64, Dyn>,
    phi: Array2<f64>,
    weights: Vec<f64>,
}

impl NodeRegression {
    fn fit(phi: Array2<f64>, weights: Vec<f64>, ridge: f64) -> Result<Self> {
        let (n_paths, m) = phi.dim();
        let mut gram = DMatrix::zeros(m, m);
        for p in 0..n_paths {
            let w = weights[p];
            for i in 0..m {
                for j in i..m {
                    gram[(i, j)] += w * phi[[p, i]] * phi[[p, j]];
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                gram[(i, j)] = gram[(j, i)];
            }
        }
        // The constant column stays unpenalized so exact constants fit
        // without ridge bias.
        for i in 1..m {
            gram[(i, i)] += ridge;
        }
        let chol = Cholesky::new(gram).ok_or(BdsdeError::SingularRegression)?;
        Ok(NodeRegression { chol, phi, weights })
    }

    fn project(&self, target: &[f64]) -> Vec<f64> {
        let (n_paths, m) = self.phi.dim();
        let mut rhs = DVector::zeros(m);
        for p in 0..n_paths {
            let wv = self.weights[p] * target[p];
            for j in 0..m {
                rhs[j] += wv * self.phi[[p, j]];
            }
        }
        let coef = self.chol.solve(&rhs);
        (0..n_paths)
            .map(|p| (0..m).map(|j| self.phi[[p, j]] * coef[j]).sum())
            .collect()
    }
}

/// Exact conditional expectation by grouping enumeration paths.
struct TreeProjector {
    group_of: Vec<usize>,
    weights: Vec<f64>,
}

impl TreeProjector {
    fn build(drivers: &DriverPaths, k: usize) -> Result<Self> {
        let n_paths = drivers.n_paths();
        let mut keys: Vec<usize> = (0..n_paths)
            .map(|p| drivers.enumeration_group(k, p))
            .collect::<Result<_>>()?;
        // Dense group ids via sorted dedup.
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        sorted.dedup();
        for key in keys.iter_mut() {
            *key = sorted.binary_search(key).unwrap();
        }
        Ok(TreeProjector {
            group_of: keys,
            weights: (0..n_paths).map(|p| drivers.path_weight(p)).collect(),
        })
    }

    fn project(&self, target: &[f64]) -> Vec<f64> {
        let n_groups = self.group_of.iter().copied().max().map_or(0, |g| g + 1);
        let mut num = vec![0.0; n_groups];
        let mut den = vec![0.0; n_groups];
        for (p, &g) in self.group_of.iter().enumerate() {
            num[g] += self.weights[p] * target[p];
            den[g] += self.weights[p];
        }
        self.group_of
            .iter()
            .map(|&g| if den[g] > 0.0 { num[g] / den[g] } else { 0.0 })
            .collect()
    }
}

enum Projector {
    Regression(NodeRegression),
    Tree(TreeProjector),
}

impl Projector {
    fn project(&self, target: &[f64]) -> Vec<f64> {
        match self {
            Projector::Regression(r) => r.project(target),
            Projector::Tree(t) => t.project(target),
        }
    }
}

/// Solve the exogenous-coefficient equation on the grid. Backward from
/// the terminal: Y_k projects the one-step value, Z and zeta project the
/// same value against the normalized forward increments.
pub fn solve_simple(
    terminal: &[f64],
    fields: &ExogenousFields,
    drivers: &DriverPaths,
    spec: &RegressionSpec,
) -> Result<SolutionTriple> {
    spec.validate(drivers)?;
    fields.validate(drivers)?;
    let k_max = drivers.n_steps();
    let n_paths = drivers.n_paths();
    if terminal.len() != n_paths {
        return Err(BdsdeError::ShapeMismatch(format!(
            "terminal has {} values for {n_paths} paths",
            terminal.len()
        )));
    }
    let n_f = drivers.spaces().f.n_atoms();

    let engine = match spec.mode {
        RegressionMode::Lsmc => Some(FeatureEngine::new(drivers, spec)),
        RegressionMode::ExactTree => None,
    };
    let weights: Vec<f64> = (0..n_paths).map(|p| drivers.path_weight(p)).collect();

    let mut sol = SolutionTriple::zeros(drivers);
    for p in 0..n_paths {
        sol.y[[k_max, p]] = terminal[p];
    }

    let mut value = vec![0.0; n_paths];
    let mut scaled = vec![0.0; n_paths];
    for k in (0..k_max).rev() {
        let dt = drivers.grid().dt(k);
        for p in 0..n_paths {
            value[p] = sol.y[[k + 1, p]] + fields.cell_contribution(drivers, k, p);
        }
        let projector = match spec.mode {
            RegressionMode::Lsmc => {
                let phi = engine.as_ref().unwrap().design(k);
                Projector::Regression(NodeRegression::fit(phi, weights.clone(), spec.ridge)?)
            }
            RegressionMode::ExactTree => Projector::Tree(TreeProjector::build(drivers, k)?),
        };

        let y_fit = projector.project(&value);
        for p in 0..n_paths {
            sol.y[[k, p]] = y_fit[p];
        }

        // Project the residual against the increments rather than the raw
        // value: the fitted level is node-measurable and the increments are
        // conditionally centered, so this is the same projection but it
        // keeps constant targets from leaking round-off into Z and zeta.
        for p in 0..n_paths {
            scaled[p] = (value[p] - sol.y[[k, p]]) * drivers.b_inc(k, p) / dt;
        }
        let z_fit = projector.project(&scaled);
        for p in 0..n_paths {
            sol.z[[k, p]] = z_fit[p];
        }

        for a in 0..n_f {
            let w_atom = drivers.spaces().f.weight(a);
            if w_atom == 0.0 {
                continue;
            }
            // Normalize by the variance of the compensated increment under
            // the driver law: dt*w for Poisson counts, p*(1-p) for the
            // Bernoulli cells of the enumeration tree.
            let denom = match drivers.mode() {
                DriverMode::MonteCarlo => dt * w_atom,
                DriverMode::Enumeration => dt * w_atom * (1.0 - dt * w_atom),
            };
            for p in 0..n_paths {
                scaled[p] = (value[p] - sol.y[[k, p]]) * drivers.m_comp(k, p, a) / denom;
            }
            let zeta_fit = projector.project(&scaled);
            for p in 0..n_paths {
                sol.zeta[[k, p, a]] = zeta_fit[p];
            }
        }
    }
    Ok(sol)
}

/// Parameters of the weighted contraction norm. `a` and `b` are the
/// Young-inequality weights; the iteration contracts with factor
/// a_hat = aC + alpha + b alpha once the exponential weight lambda is
/// large enough.
#[derive(Debug, Clone, Copy)]
pub struct ContractionParams {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub a_hat: f64,
    pub w_y: f64,
}

/// Largest (a, b) with aC + alpha + b*alpha at most (1 + alpha)/2,
/// splitting the budget evenly, then lambda from the contraction recipe.
pub fn contraction_params(c: f64, alpha: f64) -> ContractionParams {
    let target = (1.0 + alpha) / 2.0;
    let budget = (target - alpha) / 2.0;
    let a = if c > 0.0 { (budget / c).min(10.0) } else { 10.0 };
    let b = if alpha > 0.0 { (budget / alpha).min(10.0) } else { 10.0 };
    let a_hat = a * c + alpha + b * alpha;
    let lambda = if a_hat > 0.0 {
        1.0 / a + 1.0 / b + (a + b + 1.0) * c / a_hat + 1.0
    } else {
        1.0
    };
    let w_y = (lambda - 1.0 / a - 1.0 / b).max(1.0);
    ContractionParams { a, b, lambda, a_hat, w_y }
}

/// Per-iteration contraction diagnostics in the weighted norm.
#[derive(Debug, Clone)]
pub struct PicardDiagnostics {
    pub y_norms: Vec<f64>,
    pub z_norms: Vec<f64>,
    pub zeta_norms: Vec<f64>,
    /// Combined weighted norms of successive differences.
    pub totals: Vec<f64>,
    /// totals[i] / totals[i-1].
    pub contraction_ratios: Vec<f64>,
    /// Unweighted RMS distance between successive iterates; the stopping
    /// rule compares this against the tolerance.
    pub distances: Vec<f64>,
    pub params: ContractionParams,
    /// Theoretical contraction factor a_hat for the configured (a, b).
    pub theoretical_bound: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

impl PicardDiagnostics {
    /// CSV rows (iteration, y_norm, z_norm, zeta_norm, total, ratio).
    pub fn export_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "iteration,y_norm,z_norm,zeta_norm,total,ratio")?;
        for i in 0..self.totals.len() {
            let ratio = if i == 0 {
                String::new()
            } else {
                format!("{}", self.contraction_ratios[i - 1])
            };
            writeln!(
                out,
                "{},{},{},{},{},{ratio}",
                i + 1,
                self.y_norms[i],
                self.z_norms[i],
                self.zeta_norms[i],
                self.totals[i]
            )?;
        }
        Ok(())
    }
}

/// Time-weighted difference norms (y, z, zeta components) between
/// triples, with node weights proportional to e^{lambda t} dt and
/// normalized to total mass one so the value lives on the solution
/// scale regardless of lambda.
fn weighted_difference(
    a: &SolutionTriple,
    b: &SolutionTriple,
    drivers: &DriverPaths,
    lambda: f64,
) -> (f64, f64, f64) {
    let k_max = a.n_steps();
    let n_f = a.zeta.dim().2;
    let total_weight: f64 = (0..k_max)
        .map(|k| (lambda * drivers.grid().node(k)).exp() * drivers.grid().dt(k))
        .sum();
    let (mut ny, mut nz, mut nzeta) = (0.0, 0.0, 0.0);
    for k in 0..k_max {
        let dt = drivers.grid().dt(k);
        let weight = (lambda * drivers.grid().node(k)).exp() * dt / total_weight;
        let (mut my, mut mz, mut mzeta) = (0.0, 0.0, 0.0);
        for p in 0..a.n_paths() {
            let pw = drivers.path_weight(p);
            my += pw * (a.y[[k, p]] - b.y[[k, p]]).powi(2);
            mz += pw * (a.z[[k, p]] - b.z[[k, p]]).powi(2);
            for at in 0..n_f {
                mzeta += pw
                    * (a.zeta[[k, p, at]] - b.zeta[[k, p, at]]).powi(2)
                    * drivers.spaces().f.weight(at);
            }
        }
        ny += weight * my;
        nz += weight * mz;
        nzeta += weight * mzeta;
    }
    (ny, nz, nzeta)
}

/// Evaluate the coefficient maps along a candidate triple, producing the
/// exogenous fields of the next Picard step.
fn coefficient_fields(
    coeffs: &CoefficientSet,
    triple: &SolutionTriple,
    drivers: &DriverPaths,
) -> Result<ExogenousFields> {
    let k_max = drivers.n_steps();
    let n_paths = drivers.n_paths();
    let s = drivers.spaces();
    let mut fields = ExogenousFields::zeros(drivers);
    for node in 0..=k_max {
        let t = drivers.grid().node(node);
        // Z and zeta are cell-indexed; the terminal node reuses the last
        // cell's values (never consumed by the recursion there).
        let cell = node.min(k_max.saturating_sub(1));
        for p in 0..n_paths {
            let y = triple.y[[node, p]];
            let z = triple.z[[cell, p]];
            let zeta_slice: Vec<f64> = (0..s.f.n_atoms()).map(|a| triple.zeta[[cell, p, a]]).collect();
            let view = ZetaView::new(&zeta_slice, &s.f);
            *fields.drift.value_mut(node, p, 0) = coeffs.eval_beta(t, y, z, &view)?;
            for a in 0..s.e.n_atoms() {
                *fields.white.value_mut(node, p, a) =
                    coeffs.eval_sigma(t, y, z, s.e.atom(a).coord)?;
            }
            for a in 0..s.u0.n_atoms() {
                *fields.jump0.value_mut(node, p, a) = coeffs.eval_g0(t, y, z, s.u0.atom(a).coord)?;
            }
            for a in 0..s.u1.n_atoms() {
                *fields.jump1.value_mut(node, p, a) = coeffs.eval_g1(t, y, z, s.u1.atom(a).coord)?;
            }
        }
    }
    Ok(fields)
}

fn fields_equal(a: &ExogenousFields, b: &ExogenousFields) -> bool {
    a.drift == b.drift && a.white == b.white && a.jump0 == b.jump0 && a.jump1 == b.jump1
}

/// Picard iteration from the zero triple.
pub fn picard_solve(
    coeffs: &CoefficientSet,
    terminal: &TerminalCondition,
    drivers: &DriverPaths,
    spec: &RegressionSpec,
    tol: f64,
    max_iter: usize,
    force: bool,
) -> Result<(SolutionTriple, PicardDiagnostics)> {
    picard_solve_from(coeffs, terminal, drivers, spec, tol, max_iter, force, None)
}

/// Picard iteration from a caller-supplied starting triple.
#[allow(clippy::too_many_arguments)]
pub fn picard_solve_from(
    coeffs: &CoefficientSet,
    terminal: &TerminalCondition,
    drivers: &DriverPaths,
    spec: &RegressionSpec,
    tol: f64,
    max_iter: usize,
    force: bool,
    start: Option<SolutionTriple>,
) -> Result<(SolutionTriple, PicardDiagnostics)> {
    if !coeffs.condition_lipschitz && !force {
        return Err(BdsdeError::HypothesisRejected(
            "coefficient set is not declared Lipschitz-compliant".into(),
        ));
    }
    let terminal_values = terminal.realize(drivers)?;
    let params = contraction_params(coeffs.lipschitz_c, coeffs.lipschitz_alpha);
    let mut diag = PicardDiagnostics {
        y_norms: Vec::new(),
        z_norms: Vec::new(),
        zeta_norms: Vec::new(),
        totals: Vec::new(),
        contraction_ratios: Vec::new(),
        distances: Vec::new(),
        params,
        theoretical_bound: params.a_hat,
        iterations_used: 0,
        converged: false,
    };

    let mut current = start.unwrap_or_else(|| SolutionTriple::zeros(drivers));
    let mut prev_fields: Option<ExogenousFields> = None;
    for iter in 1..=max_iter {
        let fields = coefficient_fields(coeffs, &current, drivers)?;
        if let Some(prev) = &prev_fields {
            if fields_equal(prev, &fields) {
                // The map would reproduce the same solve: fixed point.
                diag.converged = true;
                diag.iterations_used = iter - 1;
                return Ok((current, diag));
            }
        }
        let next = solve_simple(&terminal_values, &fields, drivers, spec)?;
        let (ny, nz, nzeta) = weighted_difference(&next, &current, drivers, params.lambda);
        let total = params.w_y * ny + nz + nzeta;
        if let Some(last) = diag.totals.last() {
            diag.contraction_ratios.push(if *last > 0.0 { total / last } else { 0.0 });
        }
        // Stopping uses the flat time average: the lambda-weighted norm
        // concentrates near the terminal where differences vanish.
        let (fy, fz, fzeta) = weighted_difference(&next, &current, drivers, 0.0);
        let distance = (fy + fz + fzeta).sqrt();
        diag.y_norms.push(ny);
        diag.z_norms.push(nz);
        diag.zeta_norms.push(nzeta);
        diag.totals.push(total);
        diag.distances.push(distance);
        diag.iterations_used = iter;
        current = next;
        if distance <= tol {
            diag.converged = true;
            return Ok((current, diag));
        }
        prev_fields = Some(fields);
    }
    Ok((current, diag))
}

/// The three gap norms between two candidate solutions.
#[derive(Debug, Clone, Copy)]
pub struct UniquenessGaps {
    pub sup_y_gap: f64,
    pub l2_z_gap: f64,
    pub l2_zeta_gap: f64,
}

pub fn uniqueness_gap(
    sol1: &SolutionTriple,
    sol2: &SolutionTriple,
    drivers: &DriverPaths,
) -> Result<UniquenessGaps> {
    if sol1.y.dim() != sol2.y.dim() || sol1.zeta.dim() != sol2.zeta.dim() {
        return Err(BdsdeError::ShapeMismatch(
            "uniqueness_gap needs conforming solutions".into(),
        ));
    }
    let k_max = sol1.n_steps();
    let n_f = sol1.zeta.dim().2;
    let mut sup_y = 0.0f64;
    for k in 0..=k_max {
        for p in 0..sol1.n_paths() {
            sup_y = sup_y.max((sol1.y[[k, p]] - sol2.y[[k, p]]).abs());
        }
    }
    let (mut z_sq, mut zeta_sq) = (0.0, 0.0);
    for k in 0..k_max {
        let dt = drivers.grid().dt(k);
        for p in 0..sol1.n_paths() {
            let pw = drivers.path_weight(p);
            z_sq += dt * pw * (sol1.z[[k, p]] - sol2.z[[k, p]]).powi(2);
            for a in 0..n_f {
                zeta_sq += dt
                    * pw
                    * (sol1.zeta[[k, p, a]] - sol2.zeta[[k, p, a]]).powi(2)
                    * drivers.spaces().f.weight(a);
            }
        }
    }
    Ok(UniquenessGaps {
        sup_y_gap: sup_y,
        l2_z_gap: z_sq.sqrt(),
        l2_zeta_gap: zeta_sq.sqrt(),
    })
}
