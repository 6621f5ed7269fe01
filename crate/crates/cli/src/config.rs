//! TOML experiment configuration and its translation into core objects.

use std::collections::BTreeMap;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use bdsde_core::coefficients::{build_family, CoefficientSet, TerminalCondition};
use bdsde_core::drivers::{enumerate_drivers, simulate_drivers, DriverPaths, SpaceSet, TimeGrid};
use bdsde_core::markspace::{Atom, DiscreteMeasureSpace};
use bdsde_core::solver::RegressionSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub driver: DriverSpec,
    #[serde(default)]
    pub measures: MeasureRoles,
    #[serde(default)]
    pub coefficients: CoefficientsSpec,
    #[serde(default)]
    pub terminal: TerminalSpec,
    #[serde(default)]
    pub solve: SolveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: f64,
    pub steps: usize,
}

fn default_cap() -> usize {
    1 << 16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    pub paths: usize,
    pub seed: u64,
    /// "lsmc" (Monte Carlo drivers) or "exact_tree" (full enumeration).
    pub mode: String,
    #[serde(default = "default_cap")]
    pub enumeration_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureRoles {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<MeasureAtoms>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<MeasureAtoms>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u1: Option<MeasureAtoms>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<MeasureAtoms>,
}

/// Explicit atom list: pairs of (coordinate, weight).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureAtoms {
    pub atoms: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsSpec {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Default for CoefficientsSpec {
    fn default() -> Self {
        CoefficientsSpec {
            family: "zero".into(),
            params: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSpec {
    /// "constant" | "neg_abs_brownian" | "neg_jump_indicator".
    pub kind: String,
    #[serde(default)]
    pub value: f64,
}

impl Default for TerminalSpec {
    fn default() -> Self {
        TerminalSpec {
            kind: "constant".into(),
            value: 0.0,
        }
    }
}

fn default_tolerance() -> f64 {
    1e-7
}

fn default_max_iterations() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSpec {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Skip hypothesis validation (also settable via --force).
    #[serde(default)]
    pub force: bool,
}

impl Default for SolveSpec {
    fn default() -> Self {
        SolveSpec {
            tolerance: default_tolerance(),
            max_iterations: default_max_iterations(),
            force: false,
        }
    }
}

fn default_slack() -> f64 {
    1e-6
}

fn default_ceiling() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    /// One of: lemma41, thm41a, thm41b, thm43a, thm43b.
    pub hypothesis: String,
    #[serde(default = "default_slack")]
    pub slack: f64,
    /// Largest tolerated violation fraction.
    #[serde(default = "default_ceiling")]
    pub ceiling: f64,
    /// Second coefficient set (the upper side of the ordering).
    #[serde(default)]
    pub family2: Option<String>,
    #[serde(default)]
    pub params2: BTreeMap<String, f64>,
    #[serde(default)]
    pub terminal2: Option<TerminalSpec>,
}

fn default_envelope_slack() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSpec {
    pub levels: Vec<f64>,
    #[serde(default = "default_envelope_slack")]
    pub slack: f64,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("config does not parse")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn serialize(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    fn validate(&self) -> Result<()> {
        if self.grid.steps == 0 || self.grid.horizon <= 0.0 {
            bail!("grid must have a positive horizon and at least one step");
        }
        if !matches!(self.driver.mode.as_str(), "lsmc" | "exact_tree") {
            bail!("driver.mode must be 'lsmc' or 'exact_tree'");
        }
        // Referenced family names must resolve.
        build_family(&self.coefficients.family, &self.coefficients.params)
            .with_context(|| format!("unknown coefficient family '{}'", self.coefficients.family))?;
        if let Some(cmp) = &self.compare {
            if let Some(f2) = &cmp.family2 {
                build_family(f2, &cmp.params2)
                    .with_context(|| format!("unknown coefficient family '{f2}'"))?;
            }
        }
        Ok(())
    }

    pub fn spaces(&self) -> Result<SpaceSet> {
        let build = |m: &Option<MeasureAtoms>| -> Result<DiscreteMeasureSpace> {
            match m {
                None => Ok(DiscreteMeasureSpace::empty()),
                Some(spec) => Ok(DiscreteMeasureSpace::from_atoms(
                    spec.atoms
                        .iter()
                        .map(|&(c, w)| (Atom::point(c), w))
                        .collect(),
                )?),
            }
        };
        Ok(SpaceSet {
            e: build(&self.measures.e)?,
            u0: build(&self.measures.u0)?,
            u1: build(&self.measures.u1)?,
            f: build(&self.measures.f)?,
        })
    }

    pub fn drivers(&self) -> Result<DriverPaths> {
        let grid = TimeGrid::uniform(self.grid.horizon, self.grid.steps)?;
        let spaces = self.spaces()?;
        let d = match self.driver.mode.as_str() {
            "lsmc" => simulate_drivers(&grid, &spaces, self.driver.paths, self.driver.seed)?,
            "exact_tree" => enumerate_drivers(&grid, &spaces, self.driver.enumeration_cap)?,
            other => bail!("unknown driver mode '{other}'"),
        };
        Ok(d)
    }

    pub fn regression_spec(&self) -> Result<RegressionSpec> {
        match self.driver.mode.as_str() {
            "lsmc" => Ok(RegressionSpec::lsmc()),
            "exact_tree" => Ok(RegressionSpec::exact_tree()),
            other => bail!("unknown driver mode '{other}'"),
        }
    }

    pub fn coefficients(&self) -> Result<CoefficientSet> {
        Ok(build_family(
            &self.coefficients.family,
            &self.coefficients.params,
        )?)
    }
}

impl TerminalSpec {
    /// Terminal conditions that depend on realized paths are scripted from
    /// the supplied drivers.
    pub fn build(&self, drivers: &DriverPaths) -> Result<TerminalCondition> {
        match self.kind.as_str() {
            "constant" => Ok(TerminalCondition::Constant(self.value)),
            "neg_abs_brownian" => Ok(TerminalCondition::BrownianFunction(Arc::new(|b: f64| {
                -b.abs()
            }))),
            // Y_T = -value on paths with at least one M jump (the
            // compensated family the zeta coefficient is fitted against),
            // 0 otherwise.
            "neg_jump_indicator" => {
                let k_max = drivers.n_steps();
                let n_atoms = drivers.spaces().f.n_atoms();
                let kappa = self.value;
                let values = (0..drivers.n_paths())
                    .map(|p| {
                        let total: f64 = (0..k_max)
                            .flat_map(|k| (0..n_atoms).map(move |a| (k, a)))
                            .map(|(k, a)| drivers.m_count(k, p, a))
                            .sum();
                        if total >= 1.0 {
                            -kappa
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Ok(TerminalCondition::Scripted(values))
            }
            other => bail!("unknown terminal kind '{other}'"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
        [grid]
        horizon = 1.0
        steps = 8

        [driver]
        paths = 100
        seed = 7
        mode = "lsmc"

        [measures.e]
        atoms = [[0.3, 1.0], [0.8, 2.0]]

        [coefficients]
        family = "linear_drift"

        [coefficients.params]
        rate = 1.0

        [terminal]
        kind = "constant"
        value = 1.0

        [solve]
        tolerance = 1e-6
    "#;

    #[test]
    fn round_trip_is_lossless() {
        let parsed = ExperimentConfig::parse(SAMPLE).unwrap();
        let text = parsed.serialize().unwrap();
        let reparsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(parsed, reparsed);
    }

    #[test]
    fn unknown_family_is_rejected() {
        let bad = SAMPLE.replace("linear_drift", "no_such_family");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn unknown_key_is_rejected() {
        let bad = format!("{SAMPLE}\n[typo_section]\nx = 1\n");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }
}
