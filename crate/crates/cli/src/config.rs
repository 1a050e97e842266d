//! Experiment configuration shared by every subcommand.
//!
//! Unknown keys anywhere in the document are rejected. After loading, the
//! configuration is resolved (seeds and per-command defaults filled in) and
//! the resolved form is embedded in every report.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gaussflow::flow::{ChaosPath, ClosedForm, DensityMode, FlowOptions, Solver, VectorField};
use gaussflow::serial::{FieldDoc, MatrixDoc, PolyDoc};
use gaussflow::verify::{PdeSetup, SuiteParams};
use gaussflow::{ChaosMatrix, ChaosPoly, GaussianSpace};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Master seed; sections without their own seed inherit it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub field: Option<FieldConfig>,
    #[serde(default)]
    pub s: f64,
    #[serde(default = "default_t")]
    pub t: f64,
    /// Intervals of the output time grid.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub batch: BatchConfig,
    #[serde(default)]
    pub solver: Solver,
    /// Checks run by `flow`.
    #[serde(default)]
    pub checks: Vec<FlowCheck>,
    #[serde(default)]
    pub verify: SuiteParams,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub demo: DemoSection,
}

fn default_seed() -> u64 {
    20_240_601
}

fn default_t() -> f64 {
    1.0
}

fn default_grid() -> usize {
    10
}

impl Default for Config {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all keys have defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "spec", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    ClosedForm(ClosedForm),
    Chaos(FieldDoc),
    /// Path to a field document, relative to the config file.
    ChaosFile(PathBuf),
    ChaosPath(ChaosPathDoc),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosPathDoc {
    pub nodes: Vec<f64>,
    pub fields: Vec<FieldDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    #[serde(rename = "N", alias = "n", default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_n() -> usize {
    1000
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self { n: default_n(), seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowCheck {
    Reversibility,
    FlowLaw,
    GroupLaw,
    DensityRoutes,
    Mass,
    Pushforward,
    Moments,
    LpBound,
    Derivative,
    Galerkin,
    Adapted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default = "yes")]
    pub density: bool,
    #[serde(default = "default_mode")]
    pub mode: DensityMode,
    /// Exponent of the exponential-moment hypotheses.
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Exponent of the density moment `E Λ^p`.
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_steps")]
    pub steps: Vec<f64>,
    #[serde(default)]
    pub levels: Vec<usize>,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
}

fn yes() -> bool {
    true
}

fn default_mode() -> DensityMode {
    DensityMode::DivergenceIntegral
}

fn default_theta() -> f64 {
    1.0
}

fn default_p() -> f64 {
    2.0
}

fn default_steps() -> Vec<f64> {
    vec![0.1, 0.05, 0.025, 0.0125]
}

fn default_thetas() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}

impl Default for FlowSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all keys have defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixInput {
    Constant(Vec<Vec<f64>>),
    Chaos(MatrixDoc),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSection {
    #[serde(default)]
    pub matrix: Option<MatrixInput>,
    #[serde(default)]
    pub f0: Option<PolyDoc>,
    /// Explicit time grid; otherwise `points` equally spaced times on `[0, t_max]`.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn default_points() -> usize {
    20
}

fn default_t_max() -> f64 {
    2.0
}

impl Default for PdeSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all keys have defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum WeightProfile {
    /// `q_n = 1`.
    None,
    /// `q_n = 1/n`.
    Inverse,
    /// `q_n = 1/n²`.
    InverseSquare,
}

impl WeightProfile {
    pub fn weight(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            WeightProfile::None => 1.0,
            WeightProfile::Inverse => 1.0 / n,
            WeightProfile::InverseSquare => 1.0 / (n * n),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoSection {
    #[serde(default = "default_m_max")]
    pub m_max: usize,
    #[serde(default = "default_profile")]
    pub weights: WeightProfile,
}

fn default_m_max() -> usize {
    100
}

fn default_profile() -> WeightProfile {
    WeightProfile::Inverse
}

impl Default for DemoSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all keys have defaults")
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Config =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // inline file references so the resolved config is self-contained
        if let Some(FieldConfig::ChaosFile(p)) = &cfg.field {
            let full = path.parent().map_or_else(|| p.clone(), |d| d.join(p));
            let doc = std::fs::read_to_string(&full).with_context(|| format!("reading field {}", full.display()))?;
            let doc: FieldDoc =
                serde_json::from_str(&doc).with_context(|| format!("parsing field {}", full.display()))?;
            cfg.field = Some(FieldConfig::Chaos(doc));
        }
        Ok(cfg)
    }

    /// Fills seeds and validates ranges.
    pub fn resolve(&mut self, seed_override: Option<u64>) -> Result<()> {
        if let Some(seed) = seed_override {
            self.seed = seed;
            self.batch.seed = Some(seed);
        }
        self.batch.seed.get_or_insert(self.seed);
        if self.batch.n == 0 {
            bail!("batch.N must be at least 1");
        }
        if self.grid == 0 {
            bail!("grid must be at least 1");
        }
        self.solver.validate()?;
        Ok(())
    }

    pub fn batch_seed(&self) -> u64 {
        self.batch.seed.unwrap_or(self.seed)
    }

    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions { solver: self.solver, grid: self.grid }
    }

    pub fn vector_field(&self) -> Result<Option<VectorField>> {
        let Some(f) = &self.field else { return Ok(None) };
        Ok(Some(match f {
            FieldConfig::ClosedForm(c) => VectorField::closed_form(c.clone())?,
            FieldConfig::Chaos(doc) => VectorField::chaos(doc.to_field()?)?,
            FieldConfig::ChaosFile(p) => bail!("field file {} was not loaded", p.display()),
            FieldConfig::ChaosPath(doc) => {
                let fields = doc.fields.iter().map(FieldDoc::to_field).collect::<gaussflow::Result<Vec<_>>>()?;
                VectorField::Chaos(ChaosPath::new(doc.nodes.clone(), fields)?)
            }
        }))
    }

    pub fn pde_setup(&self) -> Result<PdeSetup> {
        let times = match &self.pde.times {
            Some(t) => t.clone(),
            None => {
                let n = self.pde.points.max(1);
                (0..n).map(|k| if n == 1 { 0.0 } else { self.pde.t_max * k as f64 / (n - 1) as f64 }).collect()
            }
        };
        let default = PdeSetup::rotation()?;
        let f0 = self.pde.f0.as_ref().map(PolyDoc::to_poly).transpose()?;
        let (a, f0) = match (&self.pde.matrix, f0) {
            (None, None) => (default.a, default.f0),
            (None, Some(f0)) => {
                let rot = [vec![0.0, 1.0], vec![-1.0, 0.0]];
                (ChaosMatrix::constant(f0.space(), &rot)?, f0)
            }
            (Some(MatrixInput::Constant(rows)), f0) => {
                let space = match &f0 {
                    Some(f) => f.space().clone(),
                    None => GaussianSpace::new(rows.len(), 4)?,
                };
                let a = ChaosMatrix::constant(&space, rows)?;
                let f0 = f0.unwrap_or_else(|| ChaosPoly::coordinate(&space, 0));
                (a, f0)
            }
            (Some(MatrixInput::Chaos(doc)), f0) => {
                let a = doc.to_matrix()?;
                let f0 = match f0 {
                    Some(f) => f.embed(a.space())?,
                    None => ChaosPoly::coordinate(a.space(), 0),
                };
                (a, f0)
            }
        };
        Ok(PdeSetup { a, f0, times })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_defaults() {
        let c = Config::default();
        assert_eq!(c.batch.n, 1000);
        assert_eq!(c.solver, Solver::default());
        assert!(c.field.is_none() && c.checks.is_empty());
    }

    #[test]
    fn unknown_keys_rejected() {
        for doc in [
            r#"{"sede": 1}"#,
            r#"{"batch": {"N": 5, "extra": 1}}"#,
            r#"{"solver": {"method": "rk45", "tol": 1e-6}}"#,
            r#"{"field": {"kind": "closed_form", "spec": {"name": "tanh", "dim": 1, "speed": 2}}}"#,
            r#"{"flow": {"densty": true}}"#,
        ] {
            assert!(serde_json::from_str::<Config>(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn field_kinds_parse() {
        let c: Config = serde_json::from_str(
            r#"{"field": {"kind": "closed_form", "spec": {"name": "rotation", "dim": 3}}, "checks": ["mass"]}"#,
        )
        .unwrap();
        assert_eq!(c.vector_field().unwrap().unwrap().dim(), 3);
        let c: Config = serde_json::from_str(
            r#"{"field": {"kind": "chaos", "spec": {"dim": 1, "cap": 2, "components": [{"dim": 1, "cap": 2, "terms": [{"alpha": [1], "c": 1.0}]}]}}}"#,
        )
        .unwrap();
        assert!(matches!(c.vector_field().unwrap().unwrap(), VectorField::Chaos(_)));
    }

    #[test]
    fn seed_override_propagates() {
        let mut c = Config::default();
        c.resolve(Some(9)).unwrap();
        assert_eq!((c.seed, c.batch_seed()), (9, 9));
        let mut c: Config = serde_json::from_str(r#"{"seed": 3, "batch": {"N": 10, "seed": 4}}"#).unwrap();
        c.resolve(None).unwrap();
        assert_eq!(c.batch_seed(), 4);
    }

    #[test]
    fn pde_defaults() {
        let p = Config::default().pde_setup().unwrap();
        assert_eq!(p.times.len(), 20);
        assert_eq!(p.a.dim(), 2);
    }
}
