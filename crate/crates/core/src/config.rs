//! Run configuration: TOML files with named potential and cutoff presets.
//!
//! A config fully determines a run; the seed is mandatory (no wall-clock
//! default) so that every run is replayable.

use crate::error::{Error, Result};
use crate::fieldkernel::{CutoffModel, DispersionSpec, KernelTabulation};
use crate::potentials::PotentialSpec;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutoffPreset {
    /// Sharp momentum cutoff at `lambda` with polarization vectors and an
    /// inverse dispersion power in the coupling (1.0 by default).
    Standard {
        lambda: f64,
        #[serde(default = "default_omega_power")]
        omega_power: f64,
    },
    /// Tables built from scattering solutions, stored on disk as a JSON
    /// header plus a CSV body.
    TableFile { json_path: String, csv_path: String },
}

fn default_omega_power() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    pub sigma: f64,
    #[serde(default)]
    pub center_radius: f64,
}

fn default_workers() -> usize {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: String,
    /// Master RNG seed; required so that runs replay byte-identically.
    pub seed: u64,
    pub dim: usize,
    #[serde(default)]
    pub mass: f64,
    #[serde(default)]
    pub alpha: f64,
    /// Named potential presets; `potential` selects one of them.
    pub potentials: BTreeMap<String, PotentialSpec>,
    pub potential: String,
    #[serde(default)]
    pub cutoffs: BTreeMap<String, CutoffPreset>,
    #[serde(default)]
    pub cutoff: Option<String>,
    #[serde(default)]
    pub kernel_tabulation: Option<KernelTabulation>,
    #[serde(default = "RunConfig::default_t_list")]
    pub t_list: Vec<f64>,
    #[serde(default = "RunConfig::default_n_steps")]
    pub n_steps_per_unit_t: usize,
    #[serde(default = "RunConfig::default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub test_function: Option<TestFunctionSpec>,
    /// 0 = use the ambient thread pool. Must not change results.
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "RunConfig::default_out_dir")]
    pub out_dir: String,
    /// Free-form per-command numeric knobs (radii lists, windows, ...).
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
}

impl RunConfig {
    fn default_t_list() -> Vec<f64> {
        vec![0.5, 1.0, 2.0]
    }
    fn default_n_steps() -> usize {
        64
    }
    fn default_n_samples() -> usize {
        10_000
    }
    fn default_out_dir() -> String {
        "out".into()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.potentials.contains_key(&self.potential) {
            return Err(Error::Config(format!(
                "potential preset '{}' not defined; available: {:?}",
                self.potential,
                self.potentials.keys().collect::<Vec<_>>()
            )));
        }
        if let Some(name) = &self.cutoff {
            if !self.cutoffs.contains_key(name) {
                return Err(Error::Config(format!(
                    "cutoff preset '{}' not defined; available: {:?}",
                    name,
                    self.cutoffs.keys().collect::<Vec<_>>()
                )));
            }
        } else if self.alpha > 0.0 {
            return Err(Error::Config("alpha > 0 requires a cutoff preset".into()));
        }
        for (name, p) in &self.potentials {
            if p.dim != self.dim {
                return Err(Error::Config(format!(
                    "potential '{name}' has dim {} but the run declares dim {}",
                    p.dim, self.dim
                )));
            }
        }
        if self.t_list.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Config("t_list entries must be finite and ≥ 0".into()));
        }
        if self.n_samples == 0 || self.n_steps_per_unit_t == 0 {
            return Err(Error::Config("sample and step counts must be positive".into()));
        }
        Ok(())
    }

    pub fn selected_potential(&self) -> &PotentialSpec {
        &self.potentials[&self.potential]
    }

    pub fn dispersion(&self) -> DispersionSpec {
        DispersionSpec { d: self.dim, m: self.mass }
    }

    /// Resolve the selected cutoff preset into a kernel model.
    pub fn cutoff_model(&self) -> Result<Option<CutoffModel>> {
        let Some(name) = &self.cutoff else { return Ok(None) };
        match &self.cutoffs[name] {
            CutoffPreset::Standard { lambda, omega_power } => Ok(Some(CutoffModel::StandardPf {
                lambda: *lambda,
                omega_power: *omega_power,
            })),
            CutoffPreset::TableFile { json_path, csv_path } => {
                let tables = crate::scattering::parse_cutoff_tables(
                    Path::new(json_path),
                    Path::new(csv_path),
                )?;
                Ok(Some(CutoffModel::VariableMassTable(tables)))
            }
        }
    }

    /// Content hash of the config itself (not of any output).
    pub fn hash(&self) -> String {
        crate::report::content_hash(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
experiment = "kato-scan"
seed = 7
dim = 3
mass = 1.0
alpha = 0.5
potential = "coulomb"
cutoff = "sharp"
t_list = [0.05, 0.1]

[potentials.coulomb]
dim = 3
declared_class = "kato_candidate"
[potentials.coulomb.form]
form = "coulomb_like"
a = 1.0
b = 1.0

[cutoffs.sharp]
kind = "standard"
lambda = 1.0
"#;

    #[test]
    fn parses_example_and_resolves_presets() {
        let cfg = RunConfig::from_toml_str(EXAMPLE).unwrap();
        assert_eq!(cfg.seed, 7);
        let v = cfg.selected_potential();
        assert!(v.eval_radial(2.0) < 0.0);
        let model = cfg.cutoff_model().unwrap().unwrap();
        assert_eq!(
            model,
            CutoffModel::StandardPf { lambda: 1.0, omega_power: 1.0 }
        );
        assert_eq!(cfg.dispersion().m, 1.0);
        // defaults filled in
        assert_eq!(cfg.n_samples, 10_000);
    }

    #[test]
    fn rejects_missing_seed_and_bad_references() {
        let no_seed = EXAMPLE.replace("seed = 7\n", "");
        assert!(RunConfig::from_toml_str(&no_seed).is_err());
        let bad_pot = EXAMPLE.replace("potential = \"coulomb\"", "potential = \"nope\"");
        assert!(matches!(RunConfig::from_toml_str(&bad_pot), Err(Error::Config(_))));
        let bad_cut = EXAMPLE.replace("cutoff = \"sharp\"", "cutoff = \"nope\"");
        assert!(RunConfig::from_toml_str(&bad_cut).is_err());
    }

    #[test]
    fn alpha_without_cutoff_rejected() {
        let text = EXAMPLE.replace("cutoff = \"sharp\"\n", "");
        assert!(matches!(RunConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_nothing_but_is_stable() {
        let c1 = RunConfig::from_toml_str(EXAMPLE).unwrap();
        let c2 = RunConfig::from_toml_str(EXAMPLE).unwrap();
        assert_eq!(c1.hash(), c2.hash());
        let c3 = RunConfig::from_toml_str(&EXAMPLE.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(c1.hash(), c3.hash());
    }
}
