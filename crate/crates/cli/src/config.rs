//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use steklov_core::{validate_domain, Circle, KoebeDomain, ValidDomain, WeightSeries};

/// A named domain or an explicit circle list.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Preset(Preset),
    Explicit(Explicit),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    /// `disk` or `annulus`.
    pub preset: String,
    /// Inner radius of the annulus.
    pub eps: Option<f64>,
    /// Radius of the disk.
    pub radius: Option<f64>,
    /// Weights overriding the unit weights, outer first.
    pub weights: Option<Vec<WeightSeries>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Explicit {
    pub outer: Circle,
    #[serde(default)]
    pub inners: Vec<Circle>,
    /// Unit weights when absent.
    pub weights: Option<Vec<WeightSeries>>,
    pub scale_factor: Option<f64>,
    pub min_gap: Option<f64>,
}

impl DomainSpec {
    /// Tables with a `preset` key are presets, anything else an explicit domain.
    pub fn from_value(v: toml::Value) -> Result<Self> {
        let toml::Value::Table(t) = v else { bail!("`domain` must be a table or a file name") };
        if t.contains_key("preset") {
            Ok(DomainSpec::Preset(t.try_into().context("domain preset")?))
        } else {
            Ok(DomainSpec::Explicit(t.try_into().context("explicit domain")?))
        }
    }

    pub fn build(&self) -> Result<KoebeDomain> {
        let d = match self {
            DomainSpec::Explicit(e) => {
                let weights = e.weights.clone().unwrap_or_else(|| vec![WeightSeries::unit(); e.inners.len() + 1]);
                let mut d = KoebeDomain::new(e.outer, e.inners.clone(), weights);
                if let Some(s) = e.scale_factor {
                    d = d.with_scale(s);
                }
                if let Some(g) = e.min_gap {
                    d = d.with_min_gap(g);
                }
                d
            }
            DomainSpec::Preset(p) => {
                let d = match p.preset.as_str() {
                    "disk" => KoebeDomain::disk(p.radius.unwrap_or(1.0)),
                    "annulus" => {
                        KoebeDomain::annulus(p.eps.context("annulus preset needs `eps`")?)
                    }
                    other => bail!("unknown domain preset `{other}` (expected `disk` or `annulus`)"),
                };
                match &p.weights {
                    Some(w) => d.with_weights(w.clone()),
                    None => d,
                }
            }
        };
        Ok(d)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    /// Inline table, or the name of a TOML file relative to the config.
    domain: toml::Value,
    #[serde(default = "default_m_max")]
    m_max: usize,
    #[serde(default = "default_n_max")]
    n_max: usize,
    cluster_eps: Option<f64>,
    delta: Option<f64>,
    collar_width: Option<f64>,
    #[serde(default)]
    grid_refinements: usize,
    #[serde(default = "default_angles")]
    decay_angles: usize,
    out: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
}

fn default_m_max() -> usize {
    128
}

fn default_n_max() -> usize {
    60
}

fn default_angles() -> usize {
    512
}

/// Fully resolved run parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub domain: KoebeDomain,
    pub m_max: usize,
    pub n_max: usize,
    /// Cluster gap; the largest admissible value scaled by 0.9 when absent.
    pub cluster_eps: Option<f64>,
    /// Classification rate; computed from the collar width when absent.
    pub delta: Option<f64>,
    pub collar_width: Option<f64>,
    /// How many times the default nodal grid is halved.
    pub grid_refinements: usize,
    /// Angular samples per depth in decay profiles.
    pub decay_angles: usize,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: KoebeDomain::disk(1.0),
            m_max: default_m_max(),
            n_max: default_n_max(),
            cluster_eps: None,
            delta: None,
            collar_width: None,
            grid_refinements: 0,
            decay_angles: default_angles(),
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let raw: RawConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let spec = match raw.domain {
            toml::Value::String(f) => {
                let f = base.join(f);
                let text = std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
                let table: toml::Table =
                    toml::from_str(&text).with_context(|| format!("parsing domain file {}", f.display()))?;
                DomainSpec::from_value(toml::Value::Table(table))?
            }
            v => DomainSpec::from_value(v)?,
        };
        let cfg = Self {
            domain: spec.build()?,
            m_max: raw.m_max,
            n_max: raw.n_max,
            cluster_eps: raw.cluster_eps,
            delta: raw.delta,
            collar_width: raw.collar_width,
            grid_refinements: raw.grid_refinements,
            decay_angles: raw.decay_angles,
            out: raw.out.map(|o| base.join(o)).unwrap_or_else(|| PathBuf::from("out")),
            seed: raw.seed,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if !self.m_max.is_power_of_two() || !(32..=4096).contains(&self.m_max) {
            bail!("m_max = {} must be a power of two between 32 and 4096", self.m_max);
        }
        if self.n_max == 0 {
            bail!("n_max must be positive");
        }
        if self.decay_angles < 8 {
            bail!("decay_angles must be at least 8");
        }
        for (name, v) in [("cluster_eps", self.cluster_eps), ("delta", self.delta), ("collar_width", self.collar_width)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    bail!("{name} = {v} must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn validated_domain(&self) -> Result<ValidDomain> {
        validate_domain(self.domain.clone()).context("invalid domain")
    }

    /// SHA-256 of the resolved configuration, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, text).unwrap();
        RunConfig::load(&p)
    }

    #[test]
    fn inline_preset() {
        let c = parse("m_max = 64\n[domain]\npreset = \"annulus\"\neps = 0.5\n").unwrap();
        assert_eq!(c.domain, KoebeDomain::annulus(0.5));
        assert_eq!(c.m_max, 64);
    }

    #[test]
    fn explicit_domain() {
        let c = parse(
            "[domain]\nouter = { center = [0.0, 0.0], radius = 1.0 }\n\
             inners = [{ center = [0.3, 0.0], radius = 0.2 }]\n\
             weights = [{ mean = 1.0 }, { mean = 1.0, cos = [0.2] }]\n",
        )
        .unwrap();
        assert_eq!(c.domain.inners.len(), 1);
        assert_eq!(c.domain.weights[1].cos, vec![0.2]);
    }

    #[test]
    fn explicit_domain_defaults_to_unit_weights() {
        let c = parse("[domain]\nouter = { center = [0.0, 0.0], radius = 1.0 }\ninners = [{ center = [0.0, 0.0], radius = 0.5 }]\n")
            .unwrap();
        assert_eq!(c.domain, KoebeDomain::annulus(0.5));
    }

    #[test]
    fn domain_file_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("shape.toml"), "preset = \"annulus\"\neps = 0.25\n").unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "domain = \"shape.toml\"\n").unwrap();
        assert_eq!(RunConfig::load(&p).unwrap().domain, KoebeDomain::annulus(0.25));
    }

    #[test]
    fn unknown_keys_are_reported() {
        let e = parse("[domain]\npreset = \"disk\"\nradus = 2.0\n").unwrap_err();
        assert!(format!("{e:#}").contains("radus"));
    }

    #[test]
    fn rejects_bad_m_max() {
        assert!(parse("m_max = 100\n[domain]\npreset = \"disk\"\n").is_err());
        assert!(parse("m_max = 8192\n[domain]\npreset = \"disk\"\n").is_err());
        assert!(parse("m_max = 16\n[domain]\npreset = \"disk\"\n").is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = parse("out = \"a\"\n[domain]\npreset = \"disk\"\n").unwrap();
        let b = parse("out = \"b\"\n[domain]\npreset = \"disk\"\n").unwrap();
        let c = parse("seed = 3\n[domain]\npreset = \"disk\"\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
