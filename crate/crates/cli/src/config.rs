//! Scenario configuration: schema, validation and conversion to engine types.
//!
//! Configurations are TOML documents; see the `presets/` directory for
//! complete examples. All site and bond indices are 0-based.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::str::FromStr;

use stochmps_core::dense::PauliAxis;
use stochmps_core::mpo::{MeasurementSpec, MeasurementTerm};
use stochmps_core::stoch::Observable;

use crate::CliError;

fn default_coupling() -> f64 {
    1.0
}

fn default_gs_max_bond() -> usize {
    32
}

fn default_gs_sweeps() -> usize {
    16
}

fn default_gs_tol() -> f64 {
    1e-10
}

fn default_max_bond() -> usize {
    32
}

fn default_svd_tol() -> f64 {
    1e-10
}

fn default_trajectories() -> usize {
    1
}

fn default_record_every() -> usize {
    1
}

fn default_truncation_budget() -> f64 {
    1e-4
}

fn default_postselect() -> i8 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub ground_state: GroundStateConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub measurement: Vec<MeasurementConfig>,
    #[serde(default)]
    pub observables: ObservablesConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// Chain length L.
    pub sites: usize,
    /// Exchange coupling J; times are in units of 1/J.
    #[serde(default = "default_coupling")]
    pub coupling: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundStateConfig {
    #[serde(default = "default_gs_max_bond")]
    pub max_bond: usize,
    #[serde(default = "default_gs_sweeps")]
    pub sweeps: usize,
    #[serde(default = "default_gs_tol")]
    pub tol: f64,
    /// Load the initial state from a snapshot instead of solving for the
    /// ground state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<PathBuf>,
}

impl Default for GroundStateConfig {
    fn default() -> Self {
        Self {
            max_bond: default_gs_max_bond(),
            sweeps: default_gs_sweeps(),
            tol: default_gs_tol(),
            initial_state: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// Interleave unitary steps of length 1/kappa with sampled readouts.
    Discrete,
    /// Diffusive continuous-monitoring integration.
    Continuous,
    /// Apply each configured readout once with a forced outcome and no
    /// unitary evolution; rows are indexed by event count, not time.
    Posterior,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    /// Total simulated time in 1/J (ignored in posterior mode).
    #[serde(default)]
    pub duration: f64,
    #[serde(default = "default_max_bond")]
    pub max_bond: usize,
    #[serde(default = "default_svd_tol")]
    pub svd_tol: f64,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_truncation_budget")]
    pub truncation_budget: f64,
    /// Continuous mode: integrator step (required).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Continuous mode: measurement strength Gamma = phi^2 kappa (required).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Discrete mode without readouts: explicit step length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    /// Posterior mode: forced readout outcome (+1 or -1).
    #[serde(default = "default_postselect")]
    pub postselect: i8,
    /// Write final states as snapshots next to the time series.
    #[serde(default)]
    pub write_final_state: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    /// Readout angle phi (radians).
    pub phi: f64,
    /// Repetition rate in units of J (discrete mode).
    #[serde(default)]
    pub kappa: f64,
    pub term: Vec<TermConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub site: usize,
    /// "x", "y" or "z".
    pub pauli: String,
    #[serde(default = "default_coupling")]
    pub g: f64,
}

/// Either an explicit site list or the string "all".
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SiteSelector {
    Word(String),
    List(Vec<usize>),
}

impl SiteSelector {
    fn resolve(&self, l: usize, exclude: Option<usize>, field: &str) -> Result<Vec<usize>, CliError> {
        match self {
            SiteSelector::Word(w) if w == "all" => {
                Ok((0..l).filter(|s| Some(*s) != exclude).collect())
            }
            SiteSelector::Word(w) => Err(CliError::config(
                field,
                format!("expected a site list or \"all\", got \"{w}\""),
            )),
            SiteSelector::List(sites) => {
                for &s in sites {
                    if s >= l {
                        return Err(CliError::config(
                            field,
                            format!("site {s} out of range for {l} sites"),
                        ));
                    }
                    if Some(s) == exclude {
                        return Err(CliError::config(
                            field,
                            format!("site {s} coincides with the anchor site"),
                        ));
                    }
                }
                Ok(sites.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservablesConfig {
    #[serde(default)]
    pub local: Vec<LocalObsConfig>,
    #[serde(default)]
    pub correlator: Vec<CorrelatorObsConfig>,
    /// Pairs of sites whose joint reduced state purity is recorded.
    #[serde(default)]
    pub purity: Vec<[usize; 2]>,
    /// Bonds whose entanglement entropy is recorded.
    #[serde(default)]
    pub entropy_bonds: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalObsConfig {
    pub pauli: String,
    pub sites: SiteSelector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelatorObsConfig {
    pub pauli_a: String,
    pub site_a: usize,
    pub pauli_b: String,
    pub sites_b: SiteSelector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config("<document>", e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::internal(e.to_string()))
    }

    fn parse_axis(s: &str, field: &str) -> Result<PauliAxis, CliError> {
        PauliAxis::from_str(s).map_err(|e| CliError::config(field, e.to_string()))
    }

    /// Full structural validation; reports the offending field by name.
    pub fn validate(&self) -> Result<(), CliError> {
        let l = self.lattice.sites;
        if l == 0 {
            return Err(CliError::config("lattice.sites", "chain must be nonempty"));
        }
        if !self.lattice.coupling.is_finite() {
            return Err(CliError::config("lattice.coupling", "must be finite"));
        }
        if self.run.trajectories == 0 {
            return Err(CliError::config("run.trajectories", "need at least one trajectory"));
        }
        if self.run.max_bond == 0 {
            return Err(CliError::config("run.max_bond", "must be positive"));
        }
        if self.ground_state.max_bond == 0 {
            return Err(CliError::config("ground_state.max_bond", "must be positive"));
        }
        if self.run.record_every == 0 {
            return Err(CliError::config("run.record_every", "must be positive"));
        }

        match self.run.mode {
            RunMode::Discrete => {
                if !(self.run.duration > 0.0) {
                    return Err(CliError::config("run.duration", "must be positive"));
                }
                if self.measurement.is_empty() && self.run.step.is_none() {
                    return Err(CliError::config(
                        "run.step",
                        "required when no readouts are configured",
                    ));
                }
                for (i, m) in self.measurement.iter().enumerate() {
                    if !(m.kappa > 0.0) {
                        return Err(CliError::config(
                            &format!("measurement[{i}].kappa"),
                            "must be positive in discrete mode",
                        ));
                    }
                }
            }
            RunMode::Continuous => {
                if !(self.run.duration > 0.0) {
                    return Err(CliError::config("run.duration", "must be positive"));
                }
                match self.run.dt {
                    Some(dt) if dt > 0.0 => {}
                    _ => return Err(CliError::config("run.dt", "continuous mode requires dt > 0")),
                }
                match self.run.gamma {
                    Some(g) if g >= 0.0 => {}
                    _ => {
                        return Err(CliError::config(
                            "run.gamma",
                            "continuous mode requires gamma >= 0",
                        ))
                    }
                }
                if self.measurement.len() != 1 {
                    return Err(CliError::config(
                        "measurement",
                        format!(
                            "continuous mode monitors exactly one observable, got {}",
                            self.measurement.len()
                        ),
                    ));
                }
            }
            RunMode::Posterior => {
                if self.measurement.is_empty() {
                    return Err(CliError::config(
                        "measurement",
                        "posterior mode needs at least one readout",
                    ));
                }
                if self.run.postselect != 1 && self.run.postselect != -1 {
                    return Err(CliError::config("run.postselect", "must be +1 or -1"));
                }
            }
        }

        for (i, m) in self.measurement.iter().enumerate() {
            if m.term.is_empty() {
                return Err(CliError::config(
                    &format!("measurement[{i}].term"),
                    "needs at least one operator",
                ));
            }
            for (j, t) in m.term.iter().enumerate() {
                let field = format!("measurement[{i}].term[{j}]");
                if t.site >= l {
                    return Err(CliError::config(
                        &format!("{field}.site"),
                        format!("site {} out of range for {l} sites", t.site),
                    ));
                }
                Self::parse_axis(&t.pauli, &format!("{field}.pauli"))?;
                if !t.g.is_finite() {
                    return Err(CliError::config(&format!("{field}.g"), "must be finite"));
                }
            }
            if !m.phi.is_finite() {
                return Err(CliError::config(&format!("measurement[{i}].phi"), "must be finite"));
            }
        }

        // observables validate via conversion
        self.build_observables()?;
        if let Some(path) = &self.ground_state.initial_state {
            if path.as_os_str().is_empty() {
                return Err(CliError::config("ground_state.initial_state", "empty path"));
            }
        }
        Ok(())
    }

    pub fn build_specs(&self) -> Result<Vec<MeasurementSpec>, CliError> {
        self.measurement
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let terms = m
                    .term
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let axis = Self::parse_axis(
                            &t.pauli,
                            &format!("measurement[{i}].term[{j}].pauli"),
                        )?;
                        Ok(MeasurementTerm {
                            site: t.site,
                            op: axis.matrix(),
                            coupling: t.g,
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                MeasurementSpec::new(terms, m.phi, m.kappa)
                    .map_err(|e| CliError::config(&format!("measurement[{i}]"), e.to_string()))
            })
            .collect()
    }

    pub fn build_observables(&self) -> Result<Vec<Observable>, CliError> {
        let l = self.lattice.sites;
        let mut out = Vec::new();
        for (i, lo) in self.observables.local.iter().enumerate() {
            let field = format!("observables.local[{i}]");
            let axis = Self::parse_axis(&lo.pauli, &format!("{field}.pauli"))?;
            for site in lo.sites.resolve(l, None, &format!("{field}.sites"))? {
                out.push(Observable::LocalPauli { axis, site });
            }
        }
        for (i, co) in self.observables.correlator.iter().enumerate() {
            let field = format!("observables.correlator[{i}]");
            let axis_a = Self::parse_axis(&co.pauli_a, &format!("{field}.pauli_a"))?;
            let axis_b = Self::parse_axis(&co.pauli_b, &format!("{field}.pauli_b"))?;
            if co.site_a >= l {
                return Err(CliError::config(
                    &format!("{field}.site_a"),
                    format!("site {} out of range for {l} sites", co.site_a),
                ));
            }
            for site_b in co
                .sites_b
                .resolve(l, Some(co.site_a), &format!("{field}.sites_b"))?
            {
                out.push(Observable::Correlator { axis_a, site_a: co.site_a, axis_b, site_b });
            }
        }
        for (i, pair) in self.observables.purity.iter().enumerate() {
            let field = format!("observables.purity[{i}]");
            let ob = Observable::TwoSitePurity { site_a: pair[0], site_b: pair[1] };
            ob.validate_for_chain(l)
                .map_err(|e| CliError::config(&field, e.to_string()))?;
            out.push(ob);
        }
        for (i, bond) in self.observables.entropy_bonds.iter().enumerate() {
            let field = format!("observables.entropy_bonds[{i}]");
            let ob = Observable::SchmidtEntropy { bond: *bond };
            ob.validate_for_chain(l)
                .map_err(|e| CliError::config(&field, e.to_string()))?;
            out.push(ob);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [lattice]
        sites = 4

        [run]
        mode = "discrete"
        duration = 1.0

        [[measurement]]
        phi = 0.1
        kappa = 10.0
        [[measurement.term]]
        site = 0
        pauli = "z"

        [output]
        directory = "runs/test"
    "#;

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.lattice.sites, 4);
        assert_eq!(cfg.run.trajectories, 1);
        let specs = cfg.build_specs().unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].terms[0].site, 0);
    }

    #[test]
    fn out_of_range_site_is_reported_with_field() {
        let mut cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        cfg.measurement[0].term[0].site = 9;
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("measurement[0].term[0].site"), "{msg}");
    }

    #[test]
    fn continuous_mode_requires_dt_and_gamma() {
        let mut cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        cfg.run.mode = RunMode::Continuous;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("run.dt"), "{err}");
        cfg.run.dt = Some(1e-3);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("run.gamma"), "{err}");
        cfg.run.gamma = Some(1.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\n[extra]\nx = 1\n");
        assert!(ScenarioConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn site_selector_all_excludes_anchor() {
        let cfg_text = r#"
            [lattice]
            sites = 4

            [run]
            mode = "discrete"
            duration = 1.0

            [[measurement]]
            phi = 0.1
            kappa = 10.0
            [[measurement.term]]
            site = 0
            pauli = "z"

            [observables]
            correlator = [{ pauli_a = "z", site_a = 1, pauli_b = "z", sites_b = "all" }]

            [output]
            directory = "runs/test"
        "#;
        let cfg = ScenarioConfig::from_toml(cfg_text).unwrap();
        let obs = cfg.build_observables().unwrap();
        assert_eq!(obs.len(), 3);
        for o in obs {
            if let Observable::Correlator { site_b, .. } = o {
                assert_ne!(site_b, 1);
            }
        }
    }

    #[test]
    fn roundtrip_through_toml() {
        let cfg = ScenarioConfig::from_toml(MINIMAL).unwrap();
        let text = cfg.to_toml().unwrap();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.lattice.sites, cfg.lattice.sites);
        assert_eq!(back.run.base_seed, cfg.run.base_seed);
    }
}
