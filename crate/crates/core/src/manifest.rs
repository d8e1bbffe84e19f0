//! Experiment manifests: TOML files that fix every input of a CLI run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::LatticeBox;
use crate::movingblock::{example_by_name, BlockSpec, Example1Config, ExampleSetup, SingularWindow};
use crate::sampling::{verify_diophantine, FrequencyVector, PieceSpec, SamplingFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    pub output: Option<PathBuf>,
    /// Name of a library example to start from.
    pub example: Option<String>,
    /// Epsilon sweep; the first value is used by single-eps subcommands.
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    pub overrides: Option<Overrides>,
    pub sampling: Option<SamplingSection>,
    pub omega: Option<OmegaSection>,
    #[serde(default)]
    pub grids: Grids,
    pub frame: Option<FrameSection>,
    pub series: Option<SeriesSection>,
    pub spectrum: Option<SpectrumSection>,
    pub ids: Option<IdsSection>,
}

fn default_eps() -> Vec<f64> {
    vec![1e-2]
}

/// Field overrides for the single-flat-piece family (example1, example2).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub left: Option<f64>,
    /// Length as a multiple of omega_1.
    pub length_over_omega: Option<f64>,
    pub energy: Option<f64>,
    pub omega: Option<f64>,
    pub tangent_scale: Option<f64>,
    pub c_reg: Option<f64>,
    pub e_reg: Option<f64>,
    pub beta_floor: Option<f64>,
    pub radius: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub pieces: Vec<PieceSpec>,
    pub e_reg: f64,
    #[serde(default = "default_c_reg")]
    pub c_reg: f64,
}

fn default_c_reg() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaSection {
    pub values: Vec<f64>,
    /// Runs the Diophantine scan to this radius when set.
    pub scan_radius: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    /// x-grid points per omega_1 period.
    pub x_points: usize,
    pub t_steps: usize,
    pub box_sizes: Vec<usize>,
    pub x_samples: usize,
    /// Phases sampled per flat window in derivative fits.
    pub window_samples: usize,
}

impl Default for Grids {
    fn default() -> Self {
        Self { x_points: 128, t_steps: 64, box_sizes: vec![401], x_samples: 256, window_samples: 9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSection {
    pub base: Vec<Vec<i64>>,
    pub radius: usize,
    pub x0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSection {
    #[serde(default)]
    pub blocks: Vec<BlockSection>,
    pub c_sep: Option<f64>,
    pub analysis_lo: Option<Vec<i64>>,
    pub analysis_hi: Option<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSection {
    pub box_lo: Vec<i64>,
    pub box_hi: Vec<i64>,
    pub base: Vec<i64>,
    pub order: usize,
    pub x: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub x: f64,
    pub box_lo: Option<Vec<i64>>,
    pub box_hi: Option<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdsSection {
    pub energy: f64,
    /// Predicted derivative exponent; sets the smoothing bandwidth 0.5 eps^mu.
    pub mu: f64,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_half_width() -> f64 {
    1.5
}

fn default_grid_points() -> usize {
    401
}

/// A parsed manifest plus the hash of its source text.
#[derive(Clone, Debug)]
pub struct LoadedManifest {
    pub manifest: ExperimentManifest,
    pub sha256: String,
    pub path: PathBuf,
}

/// The example a manifest describes after overrides are applied.
#[derive(Clone, Debug)]
pub struct ResolvedExperiment {
    pub setup: ExampleSetup,
    /// Present for the single-flat-piece family, which has its own checklist.
    pub single_flat: Option<Example1Config>,
}

pub fn parse_manifest(text: &str) -> Result<ExperimentManifest> {
    let m: ExperimentManifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
    m.validate()?;
    Ok(m)
}

pub fn load_manifest(path: &Path) -> Result<LoadedManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let manifest = parse_manifest(&text)?;
    let digest = Sha256::digest(text.as_bytes());
    let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(LoadedManifest { manifest, sha256, path: path.to_path_buf() })
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Manifest(msg.into())
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() || self.eps.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(bad("eps must be a non-empty list of finite non-negative numbers"));
        }
        let g = &self.grids;
        if g.x_points < 2 || g.t_steps == 0 || g.x_samples == 0 || g.window_samples == 0 || g.box_sizes.contains(&0) {
            return Err(bad("grid sizes must be positive (x_points >= 2)"));
        }
        if self.example.is_none() && (self.sampling.is_none() || self.omega.is_none()) {
            return Err(bad("either `example` or both [sampling] and [omega] are required"));
        }
        if let Some(name) = &self.example {
            example_by_name(name).map_err(|e| bad(e.to_string()))?;
        }
        if self.overrides.is_some() && !matches!(self.example.as_deref(), Some("example1" | "example2")) {
            return Err(bad("[overrides] applies to example1 and example2 only"));
        }
        if let Some(fr) = &self.frame {
            if fr.analysis_lo.is_some() != fr.analysis_hi.is_some() {
                return Err(bad("analysis_lo and analysis_hi go together"));
            }
        }
        if let Some(ids) = &self.ids {
            if ids.half_width <= 0.0 || ids.grid_points < 2 {
                return Err(bad("[ids] needs half_width > 0 and grid_points >= 2"));
            }
        }
        Ok(())
    }

    /// Builds the example with every override and explicit section applied.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let mut single_flat = None;
        let mut setup = match self.example.as_deref() {
            Some(name @ ("example1" | "example2")) => {
                let mut cfg = if name == "example1" { Example1Config::canonical() } else { crate::movingblock::example2_config() };
                if let Some(o) = &self.overrides {
                    apply_overrides(&mut cfg, o);
                }
                let s = cfg.setup()?;
                single_flat = Some(cfg);
                s
            }
            Some(name) => example_by_name(name)?,
            None => {
                let samp = self.sampling.as_ref().unwrap();
                let omega = self.omega.as_ref().unwrap();
                let f = SamplingFunction::from_specs(&samp.pieces, samp.e_reg)?;
                let omega = FrequencyVector::unchecked(omega.values.clone())?;
                let d = omega.dim();
                let windows = f
                    .flat_pieces()
                    .into_iter()
                    .map(|(l, r, e)| SingularWindow {
                        left: l,
                        right: r,
                        energy: e,
                        predicted_mu: crate::movingblock::predicted_mu(&f, &omega, 0.5 * (l + r)),
                    })
                    .collect();
                ExampleSetup {
                    name: self.name.clone(),
                    f,
                    omega,
                    c_reg: samp.c_reg,
                    c_sep: 0.05,
                    blocks: vec![],
                    analysis_box: LatticeBox::new(vec![-6; d], vec![6; d])?,
                    windows,
                    note: None,
                }
            }
        };
        if self.example.is_some() {
            if let Some(samp) = &self.sampling {
                setup.f = SamplingFunction::from_specs(&samp.pieces, samp.e_reg)?;
                setup.c_reg = samp.c_reg;
                single_flat = None;
            }
            if let Some(om) = &self.omega {
                setup.omega = FrequencyVector::unchecked(om.values.clone())?;
                single_flat = None;
            }
        }
        if let Some(om) = &self.omega {
            if let Some(r) = om.scan_radius {
                setup.omega = verify_diophantine(&om.values, r)?;
            }
        }
        if let Some(fr) = &self.frame {
            if !fr.blocks.is_empty() {
                setup.blocks = fr
                    .blocks
                    .iter()
                    .map(|b| BlockSpec { base: b.base.clone(), radius: b.radius, x0: b.x0 })
                    .collect();
            }
            if let Some(c) = fr.c_sep {
                setup.c_sep = c;
            }
            if let (Some(lo), Some(hi)) = (&fr.analysis_lo, &fr.analysis_hi) {
                setup.analysis_box = LatticeBox::new(lo.clone(), hi.clone())?;
            }
        }
        Ok(ResolvedExperiment { setup, single_flat })
    }
}

fn apply_overrides(cfg: &mut Example1Config, o: &Overrides) {
    if let Some(w) = o.omega {
        let ratio = cfg.length / cfg.omega;
        let left = cfg.left / cfg.omega;
        cfg.omega = w;
        cfg.length = ratio * w;
        cfg.left = left * w;
    }
    if let Some(q) = o.length_over_omega {
        let centre = cfg.left + cfg.length / 2.0;
        cfg.length = q * cfg.omega;
        cfg.left = centre - cfg.length / 2.0;
    }
    if let Some(l) = o.left {
        cfg.left = l;
    }
    if let Some(e) = o.energy {
        cfg.energy = e;
    }
    if let Some(s) = o.tangent_scale {
        cfg.tangent_scale = s;
    }
    if let Some(c) = o.c_reg {
        cfg.c_reg = c;
    }
    if o.e_reg.is_some() {
        cfg.e_reg = o.e_reg;
    }
    if let Some(b) = o.beta_floor {
        cfg.beta_floor = b;
    }
    if let Some(r) = o.radius {
        cfg.radius = r;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let e = parse_manifest("name = \"a\"\nexample = \"example1\"\ncolour = 3\n").unwrap_err();
        assert!(matches!(e, Error::Manifest(_)));
    }

    #[test]
    fn missing_model_is_rejected() {
        assert!(parse_manifest("name = \"a\"\n").is_err());
    }

    #[test]
    fn example_with_length_override() {
        let m = parse_manifest("name = \"z2\"\nexample = \"example1\"\n[overrides]\nlength_over_omega = 3.0\n").unwrap();
        let r = m.resolve().unwrap();
        let cfg = r.single_flat.unwrap();
        assert!((cfg.length / cfg.omega - 3.0).abs() < 1e-12);
        assert!(!cfg.verify().get("(z2)").unwrap().passed);
    }

    #[test]
    fn explicit_model() {
        let text = r#"
name = "maryland"
eps = [0.01]
[sampling]
e_reg = 1e9
pieces = [{ kind = "tangent", left = -0.5, right = 0.5, scale = 1.0, offset = 0.0 }]
[omega]
values = [0.381966011250105]
scan_radius = 200
"#;
        let r = parse_manifest(text).unwrap().resolve().unwrap();
        assert!(r.setup.windows.is_empty());
        assert!(r.setup.omega.c_dio > 0.0);
    }
}
