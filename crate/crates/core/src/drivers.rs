//! Simulation of the four independent noise sources on a shared time grid:
//! a forward Brownian motion B, a forward Poisson random measure M on F,
//! a Gaussian white noise W on E and two Poisson random measures N0, N1 on
//! U0, U1. W, N0, N1 enter the equation only through their time-reversed
//! views, realized here by the index map `k -> K-1-k`.
//!
//! Every path draws from its own counter-based RNG stream (ChaCha keyed by
//! the master seed, stream = path index), so generation is deterministic
//! under any thread count and extending the path count leaves existing
//! paths bit-identical.

use std::io::Write;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{BdsdeError, Result};
use crate::markspace::DiscreteMeasureSpace;

/// Partition of `[0, T]` shared by all drivers and solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `steps` cells on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(BdsdeError::InvalidGrid(format!(
                "need horizon > 0 and steps >= 1, got T={horizon}, K={steps}"
            )));
        }
        let nodes = (0..=steps)
            .map(|k| horizon * k as f64 / steps as f64)
            .collect();
        Ok(TimeGrid { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 {
            return Err(BdsdeError::InvalidGrid(
                "need at least two nodes starting at 0".into(),
            ));
        }
        for w in nodes.windows(2) {
            if !(w[1] > w[0]) {
                return Err(BdsdeError::InvalidGrid("nodes must strictly increase".into()));
            }
        }
        Ok(TimeGrid { nodes })
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Number of cells K.
    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Cell lengths are symmetric under `t -> T - t`, which is what makes
    /// the index reversal `k -> K-1-k` realize the time reversal.
    pub fn is_reversal_symmetric(&self) -> bool {
        let k_max = self.n_steps();
        (0..k_max).all(|k| (self.dt(k) - self.dt(k_max - 1 - k)).abs() <= 1e-12 * self.horizon())
    }
}

/// The four mark spaces keyed by their role in the equation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceSet {
    /// White-noise mark space E with measure pi.
    pub e: DiscreteMeasureSpace,
    /// Reversed compensated jumps, measure mu0 on U0.
    pub u0: DiscreteMeasureSpace,
    /// Reversed raw jumps, finite measure mu1 on U1.
    pub u1: DiscreteMeasureSpace,
    /// Forward compensated jumps, measure nu on F.
    pub f: DiscreteMeasureSpace,
}

impl SpaceSet {
    pub fn all_empty() -> Self {
        SpaceSet {
            e: DiscreteMeasureSpace::empty(),
            u0: DiscreteMeasureSpace::empty(),
            u1: DiscreteMeasureSpace::empty(),
            f: DiscreteMeasureSpace::empty(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverMode {
    MonteCarlo,
    /// All outcomes enumerated with matched first and second moments:
    /// binary +-sqrt(dt) Gaussian stand-ins and {0,1} jump counts.
    Enumeration,
}

/// Per-path increments of all five noise sources, plus (in enumeration
/// mode) the probability of each outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverPaths {
    grid: TimeGrid,
    spaces: SpaceSet,
    n_paths: usize,
    /// dB over cell k, shape (K, P).
    brownian: Array2<f64>,
    /// dW per (cell, path, E-atom), variance dt * pi(atom).
    white_noise: Array3<f64>,
    /// Jump counts per (cell, path, atom); integer-valued.
    jumps_n0: Array3<f64>,
    jumps_n1: Array3<f64>,
    jumps_m: Array3<f64>,
    /// Outcome probabilities; `None` means equally weighted Monte Carlo.
    probabilities: Option<Vec<f64>>,
    seed: u64,
    mode: DriverMode,
}

/// One step's draws, used to move data out of the parallel generator.
struct PathDraws {
    brownian: Vec<f64>,
    white: Vec<f64>,
    n0: Vec<f64>,
    n1: Vec<f64>,
    m: Vec<f64>,
}

/// Simulate all drivers. Identical `(grid, spaces, n_paths, seed)` give
/// bit-identical output regardless of thread count.
pub fn simulate_drivers(
    grid: &TimeGrid,
    spaces: &SpaceSet,
    n_paths: usize,
    seed: u64,
) -> Result<DriverPaths> {
    if n_paths == 0 {
        return Err(BdsdeError::InvalidDrivers("n_paths must be >= 1".into()));
    }
    if !grid.is_reversal_symmetric() {
        return Err(BdsdeError::InvalidDrivers(
            "grid cells must be symmetric under t -> T - t for index reversal".into(),
        ));
    }
    let k_max = grid.n_steps();
    let (a_e, a_0, a_1, a_f) = (
        spaces.e.n_atoms(),
        spaces.u0.n_atoms(),
        spaces.u1.n_atoms(),
        spaces.f.n_atoms(),
    );

    let draws: Vec<PathDraws> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p as u64);
            let mut out = PathDraws {
                brownian: Vec::with_capacity(k_max),
                white: Vec::with_capacity(k_max * a_e),
                n0: Vec::with_capacity(k_max * a_0),
                n1: Vec::with_capacity(k_max * a_1),
                m: Vec::with_capacity(k_max * a_f),
            };
            for k in 0..k_max {
                let dt = grid.dt(k);
                out.brownian
                    .push(Normal::new(0.0, dt.sqrt()).unwrap().sample(&mut rng));
                for a in 0..a_e {
                    let var = dt * spaces.e.weight(a);
                    out.white.push(if var > 0.0 {
                        Normal::new(0.0, var.sqrt()).unwrap().sample(&mut rng)
                    } else {
                        0.0
                    });
                }
                for (space, buf) in [
                    (&spaces.u0, &mut out.n0),
                    (&spaces.u1, &mut out.n1),
                    (&spaces.f, &mut out.m),
                ] {
                    for a in 0..space.n_atoms() {
                        let lambda = dt * space.weight(a);
                        buf.push(if lambda > 0.0 {
                            Poisson::new(lambda).unwrap().sample(&mut rng)
                        } else {
                            0.0
                        });
                    }
                }
            }
            out
        })
        .collect();

    let mut brownian = Array2::zeros((k_max, n_paths));
    let mut white_noise = Array3::zeros((k_max, n_paths, a_e));
    let mut jumps_n0 = Array3::zeros((k_max, n_paths, a_0));
    let mut jumps_n1 = Array3::zeros((k_max, n_paths, a_1));
    let mut jumps_m = Array3::zeros((k_max, n_paths, a_f));
    for (p, d) in draws.iter().enumerate() {
        for k in 0..k_max {
            brownian[[k, p]] = d.brownian[k];
            for a in 0..a_e {
                white_noise[[k, p, a]] = d.white[k * a_e + a];
            }
            for a in 0..a_0 {
                jumps_n0[[k, p, a]] = d.n0[k * a_0 + a];
            }
            for a in 0..a_1 {
                jumps_n1[[k, p, a]] = d.n1[k * a_1 + a];
            }
            for a in 0..a_f {
                jumps_m[[k, p, a]] = d.m[k * a_f + a];
            }
        }
    }

    Ok(DriverPaths {
        grid: grid.clone(),
        spaces: spaces.clone(),
        n_paths,
        brownian,
        white_noise,
        jumps_n0,
        jumps_n1,
        jumps_m,
        probabilities: None,
        seed,
        mode: DriverMode::MonteCarlo,
    })
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Enumerate every outcome of the moment-matched binary driver tree:
/// dB = +-sqrt(dt) with probability 1/2, white noise per atom
/// +-sqrt(dt * w) with probability 1/2, and jump counts {0, 1} with
/// P(1) = dt * w. The outcome probability is attached to each path.
pub fn enumerate_drivers(grid: &TimeGrid, spaces: &SpaceSet, cap: usize) -> Result<DriverPaths> {
    if !grid.is_reversal_symmetric() {
        return Err(BdsdeError::InvalidDrivers(
            "grid cells must be symmetric under t -> T - t for index reversal".into(),
        ));
    }
    let k_max = grid.n_steps();
    let (a_e, a_0, a_1, a_f) = (
        spaces.e.n_atoms(),
        spaces.u0.n_atoms(),
        spaces.u1.n_atoms(),
        spaces.f.n_atoms(),
    );
    let cells = 1 + a_e + a_0 + a_1 + a_f;
    let bits = cells
        .checked_mul(k_max)
        .filter(|b| *b < usize::BITS as usize)
        .ok_or(BdsdeError::EnumerationTooLarge(usize::MAX, cap))?;
    let n_paths = 1usize << bits;
    if n_paths > cap {
        return Err(BdsdeError::EnumerationTooLarge(n_paths, cap));
    }
    for (space, name) in [(&spaces.u0, "U0"), (&spaces.u1, "U1"), (&spaces.f, "F")] {
        for a in 0..space.n_atoms() {
            for k in 0..k_max {
                if grid.dt(k) * space.weight(a) > 1.0 {
                    return Err(BdsdeError::InvalidDrivers(format!(
                        "enumeration needs dt * weight <= 1 on {name}, atom {a}"
                    )));
                }
            }
        }
    }

    let mut brownian = Array2::zeros((k_max, n_paths));
    let mut white_noise = Array3::zeros((k_max, n_paths, a_e));
    let mut jumps_n0 = Array3::zeros((k_max, n_paths, a_0));
    let mut jumps_n1 = Array3::zeros((k_max, n_paths, a_1));
    let mut jumps_m = Array3::zeros((k_max, n_paths, a_f));
    let mut probabilities = vec![0.0; n_paths];

    for p in 0..n_paths {
        let mut prob = 1.0;
        for k in 0..k_max {
            let dt = grid.dt(k);
            let mut cell = 0;
            let bit = |cell: &mut usize| {
                let b = (p >> (k * cells + *cell)) & 1;
                *cell += 1;
                b == 1
            };
            brownian[[k, p]] = if bit(&mut cell) { dt.sqrt() } else { -dt.sqrt() };
            prob *= 0.5;
            for a in 0..a_e {
                let s = (dt * spaces.e.weight(a)).sqrt();
                white_noise[[k, p, a]] = if bit(&mut cell) { s } else { -s };
                prob *= 0.5;
            }
            for (space, arr) in [
                (&spaces.u0, &mut jumps_n0),
                (&spaces.u1, &mut jumps_n1),
                (&spaces.f, &mut jumps_m),
            ] {
                for a in 0..space.n_atoms() {
                    let lambda = dt * space.weight(a);
                    if bit(&mut cell) {
                        arr[[k, p, a]] = 1.0;
                        prob *= lambda;
                    } else {
                        prob *= 1.0 - lambda;
                    }
                }
            }
        }
        probabilities[p] = prob;
    }

    Ok(DriverPaths {
        grid: grid.clone(),
        spaces: spaces.clone(),
        n_paths,
        brownian,
        white_noise,
        jumps_n0,
        jumps_n1,
        jumps_m,
        probabilities: Some(probabilities),
        seed: 0,
        mode: DriverMode::Enumeration,
    })
}

impl DriverPaths {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn spaces(&self) -> &SpaceSet {
        &self.spaces
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> DriverMode {
        self.mode
    }

    /// Outcome probability of path `p` (1/P for Monte Carlo paths).
    pub fn path_weight(&self, p: usize) -> f64 {
        match &self.probabilities {
            Some(probs) => probs[p],
            None => 1.0 / self.n_paths as f64,
        }
    }

    pub fn reversal_map(&self, k: usize) -> usize {
        self.grid.n_steps() - 1 - k
    }

    // Forward increments over cell k.

    pub fn b_inc(&self, k: usize, p: usize) -> f64 {
        self.brownian[[k, p]]
    }

    /// Brownian state at node k (sum of increments before it).
    pub fn b_level(&self, k: usize, p: usize) -> f64 {
        (0..k).map(|j| self.brownian[[j, p]]).sum()
    }

    /// Total M jump count over [0, t_k) at one atom.
    pub fn m_level(&self, k: usize, p: usize, a: usize) -> f64 {
        (0..k).map(|j| self.jumps_m[[j, p, a]]).sum()
    }

    pub fn m_count(&self, k: usize, p: usize, a: usize) -> f64 {
        self.jumps_m[[k, p, a]]
    }

    /// Compensated M increment: count minus dt * nu(atom).
    pub fn m_comp(&self, k: usize, p: usize, a: usize) -> f64 {
        self.jumps_m[[k, p, a]] - self.grid.dt(k) * self.spaces.f.weight(a)
    }

    pub fn w_inc(&self, k: usize, p: usize, a: usize) -> f64 {
        self.white_noise[[k, p, a]]
    }

    pub fn n0_count(&self, k: usize, p: usize, a: usize) -> f64 {
        self.jumps_n0[[k, p, a]]
    }

    pub fn n1_count(&self, k: usize, p: usize, a: usize) -> f64 {
        self.jumps_n1[[k, p, a]]
    }

    // Reversed increments over original-time cell k: the forward increment
    // over [T - t_{k+1}, T - t_k], i.e. cell K-1-k.

    pub fn rev_w_inc(&self, k: usize, p: usize, a: usize) -> f64 {
        self.white_noise[[self.reversal_map(k), p, a]]
    }

    pub fn rev_n0_count(&self, k: usize, p: usize, a: usize) -> f64 {
        self.jumps_n0[[self.reversal_map(k), p, a]]
    }

    /// Compensated reversed N0 increment over cell k.
    pub fn rev_n0_comp(&self, k: usize, p: usize, a: usize) -> f64 {
        self.rev_n0_count(k, p, a) - self.grid.dt(k) * self.spaces.u0.weight(a)
    }

    pub fn rev_n1_count(&self, k: usize, p: usize, a: usize) -> f64 {
        self.jumps_n1[[self.reversal_map(k), p, a]]
    }

    /// In enumeration mode, paths sharing a group index agree on every
    /// driver increment visible at node k: forward Brownian and M
    /// increments before k, plus every reversed-noise increment (the
    /// conditioning sigma-algebra contains the whole reversed history).
    pub fn enumeration_group(&self, k: usize, p: usize) -> Result<usize> {
        if self.mode != DriverMode::Enumeration {
            return Err(BdsdeError::InvalidDrivers(
                "enumeration_group requires enumeration-mode drivers".into(),
            ));
        }
        let (a_e, a_0, a_1, a_f) = (
            self.spaces.e.n_atoms(),
            self.spaces.u0.n_atoms(),
            self.spaces.u1.n_atoms(),
            self.spaces.f.n_atoms(),
        );
        let cells = 1 + a_e + a_0 + a_1 + a_f;
        let mut mask = 0usize;
        for j in 0..self.n_steps() {
            for cell in 0..cells {
                // Cell layout per step: B, then E, U0, U1 atoms, then F.
                let forward_only = cell == 0 || cell >= 1 + a_e + a_0 + a_1;
                if !forward_only || j < k {
                    mask |= 1 << (j * cells + cell);
                }
            }
        }
        Ok(p & mask)
    }

    /// Time-reversed view of the drivers.
    pub fn reverse_view(&self) -> DriverView<'_> {
        DriverView {
            paths: self,
            reversed: true,
        }
    }

    pub fn view(&self) -> DriverView<'_> {
        DriverView {
            paths: self,
            reversed: false,
        }
    }

    /// One row per (cell, path) with atom columns, for audit.
    pub fn export_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let (a_e, a_0, a_1, a_f) = (
            self.spaces.e.n_atoms(),
            self.spaces.u0.n_atoms(),
            self.spaces.u1.n_atoms(),
            self.spaces.f.n_atoms(),
        );
        write!(out, "k,p,dB")?;
        for a in 0..a_e {
            write!(out, ",dW_{a}")?;
        }
        for a in 0..a_0 {
            write!(out, ",n0_{a}")?;
        }
        for a in 0..a_1 {
            write!(out, ",n1_{a}")?;
        }
        for a in 0..a_f {
            write!(out, ",m_{a}")?;
        }
        writeln!(out, ",weight")?;
        for k in 0..self.n_steps() {
            for p in 0..self.n_paths {
                write!(out, "{k},{p},{}", self.brownian[[k, p]])?;
                for a in 0..a_e {
                    write!(out, ",{}", self.white_noise[[k, p, a]])?;
                }
                for a in 0..a_0 {
                    write!(out, ",{}", self.jumps_n0[[k, p, a]])?;
                }
                for a in 0..a_1 {
                    write!(out, ",{}", self.jumps_n1[[k, p, a]])?;
                }
                for a in 0..a_f {
                    write!(out, ",{}", self.jumps_m[[k, p, a]])?;
                }
                writeln!(out, ",{}", self.path_weight(p))?;
            }
        }
        Ok(())
    }
}

/// Orientation-aware view over a `DriverPaths`. Reversing twice yields the
/// original view.
#[derive(Clone, Copy)]
pub struct DriverView<'a> {
    paths: &'a DriverPaths,
    reversed: bool,
}

impl<'a> DriverView<'a> {
    pub fn reversed(self) -> DriverView<'a> {
        DriverView {
            paths: self.paths,
            reversed: !self.reversed,
        }
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    fn slot(&self, k: usize) -> usize {
        if self.reversed {
            self.paths.reversal_map(k)
        } else {
            k
        }
    }

    pub fn brownian_inc(&self, k: usize, p: usize) -> f64 {
        self.paths.brownian[[self.slot(k), p]]
    }

    pub fn white_noise_inc(&self, k: usize, p: usize, a: usize) -> f64 {
        self.paths.white_noise[[self.slot(k), p, a]]
    }

    pub fn n0_count(&self, k: usize, p: usize, a: usize) -> f64 {
        self.paths.jumps_n0[[self.slot(k), p, a]]
    }

    pub fn n1_count(&self, k: usize, p: usize, a: usize) -> f64 {
        self.paths.jumps_n1[[self.slot(k), p, a]]
    }

    pub fn m_count(&self, k: usize, p: usize, a: usize) -> f64 {
        self.paths.jumps_m[[self.slot(k), p, a]]
    }
}

impl PartialEq for DriverView<'_> {
    fn eq(&self, other: &Self) -> bool {
        std::ptr::eq(self.paths, other.paths) && self.reversed == other.reversed
    }
}
