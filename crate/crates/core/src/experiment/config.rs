//! TOML experiment configuration.
//!
//! ```toml
//! [experiment]
//! preset = "desk"
//! mask_sides = [0, 14, 26]
//!
//! [teacher]
//! eta = 4e-6
//! ```
//!
//! Keys live in `[experiment]`, `[teacher]`, `[student]` and `[blobs]`. A file starts
//! from its `preset` (desk when absent) and overrides individual keys. Unknown keys
//! and sections are errors.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::distill::{Divergence, StudentConfig};
use crate::metrics::ModelFamily;
use crate::sgld::{NoiseScale, TeacherConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset `{other}` (expected paper or desk)")),
        }
    }
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// IDX files, gzipped or not.
    Mnist,
    /// Gaussian blobs generated from the master seed.
    Blobs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobsConfig {
    pub classes: usize,
    pub dims: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self { classes: 2, dims: 2, train_per_class: 500, test_per_class: 200, separation: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub model_family: ModelFamily,
    pub seed: u64,
    pub precision: Precision,
    pub data_source: DataSource,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub n_labeled: Vec<usize>,
    pub mask_sides: Vec<usize>,
    pub capacity_factors: Vec<f64>,
    pub replicates: usize,
    /// Unlabeled images taken from the training split; 0 means all of them.
    pub pool_size: usize,
    /// Test images used; 0 means all of them.
    pub test_size: usize,
    /// Hidden width of the unscaled fully connected network.
    pub base_width: usize,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: u64,
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    pub blobs: BlobsConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self {
                preset,
                model_family: ModelFamily::Fcnn,
                seed: 1,
                precision: Precision::F32,
                data_source: DataSource::Mnist,
                data_dir: PathBuf::from("data/mnist"),
                out_dir: PathBuf::from("runs/paper"),
                n_labeled: vec![10_000, 20_000, 30_000, 60_000],
                mask_sides: vec![0, 2, 6, 10, 14, 18, 22, 26],
                capacity_factors: vec![1.0],
                replicates: 1,
                pool_size: 0,
                test_size: 0,
                base_width: 400,
                checkpoint_every: 50_000,
                teacher: TeacherConfig::default(),
                student: StudentConfig::default(),
                blobs: BlobsConfig::default(),
            },
            Preset::Desk => Self {
                preset,
                model_family: ModelFamily::Fcnn,
                seed: 1,
                precision: Precision::F32,
                data_source: DataSource::Mnist,
                data_dir: PathBuf::from("data/mnist-desk"),
                out_dir: PathBuf::from("runs/desk"),
                n_labeled: vec![5_000],
                mask_sides: vec![0, 14, 26],
                capacity_factors: vec![1.0],
                replicates: 1,
                pool_size: 0,
                test_size: 2_000,
                base_width: 100,
                checkpoint_every: 5_000,
                teacher: TeacherConfig {
                    n_total: 5_000,
                    burn_in: 500,
                    thinning: 50,
                    total_iters: 50_000,
                    ..TeacherConfig::default()
                },
                student: StudentConfig::default(),
                blobs: BlobsConfig::default(),
            },
        }
    }

    /// Parses a config file on top of `base` (or the file's own preset).
    pub fn parse(text: &str, base: Option<Preset>) -> Result<Self, ExperimentError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        let preset = file.experiment.as_ref().and_then(|e| e.preset).or(base).unwrap_or(Preset::Desk);
        let mut cfg = Self::preset(preset);
        file.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: String| Err(ExperimentError::Config(m));
        if self.n_labeled.is_empty() || self.mask_sides.is_empty() || self.capacity_factors.is_empty() {
            return fail("n_labeled, mask_sides and capacity_factors must be non-empty".into());
        }
        if self.n_labeled.contains(&0) {
            return fail("n_labeled entries must be positive".into());
        }
        if let Some(m) = self.mask_sides.iter().find(|&&m| m > crate::data::IMAGE_SIDE) {
            return fail(format!("mask side {m} exceeds the image side"));
        }
        if self.data_source == DataSource::Blobs && self.mask_sides.iter().any(|&m| m != 0) {
            return fail("blob data cannot be masked; use mask_sides = 0".into());
        }
        if let Some(k) = self.capacity_factors.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return fail(format!("capacity factor {k} must be positive"));
        }
        if self.seed > i64::MAX as u64 {
            return fail(format!("seed {} does not fit a TOML integer", self.seed));
        }
        if self.replicates == 0 || self.base_width == 0 {
            return fail("replicates and base_width must be positive".into());
        }
        for n in &self.n_labeled {
            if *n < self.teacher.batch_size {
                return fail(format!("n_labeled {n} is smaller than the batch size {}", self.teacher.batch_size));
            }
        }
        let teacher = TeacherConfig { n_total: self.n_labeled[0], ..self.teacher.clone() };
        teacher.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.student.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    /// Every key, such that `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        toml::to_string(&FileConfig::from(self)).expect("config values are representable in TOML")
    }

    /// SHA-256 over every setting that can change a result (paths excluded).
    pub fn hash(&self) -> [u8; 32] {
        let canonical = ExperimentConfig { data_dir: PathBuf::new(), out_dir: PathBuf::new(), ..self.clone() };
        Sha256::digest(canonical.to_text().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        self.hash().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub(crate) fn student_config(&self, seed: u64) -> StudentConfig {
        StudentConfig { seed, ..self.student.clone() }
    }
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: Option<ExperimentSection>,
    teacher: Option<TeacherSection>,
    student: Option<StudentSection>,
    blobs: Option<BlobsSection>,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    preset: Option<Preset>,
    model_family: Option<ModelFamily>,
    seed: Option<u64>,
    precision: Option<Precision>,
    data_source: Option<DataSource>,
    data_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    n_labeled: Option<Vec<usize>>,
    mask_sides: Option<Vec<usize>>,
    capacity_factors: Option<Vec<f64>>,
    replicates: Option<usize>,
    pool_size: Option<usize>,
    test_size: Option<usize>,
    base_width: Option<usize>,
    checkpoint_every: Option<u64>,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TeacherSection {
    eta: Option<f64>,
    lambda: Option<f64>,
    batch_size: Option<usize>,
    burn_in: Option<u64>,
    thinning: Option<u64>,
    total_iters: Option<u64>,
    noise: Option<NoiseScale>,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudentSection {
    rho0: Option<f64>,
    dropout: Option<f64>,
    perturb_sigma: Option<f64>,
    divergence: Option<Divergence>,
    halving_period_epochs: Option<u64>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    adam_eps: Option<f64>,
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobsSection {
    classes: Option<usize>,
    dims: Option<usize>,
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
    separation: Option<f64>,
}

macro_rules! overlay {
    ($src:expr => $($dst:expr, $field:ident;)*) => {
        $(if let Some(v) = $src.$field.clone() { $dst = v; })*
    };
}

impl FileConfig {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(e) = &self.experiment {
            overlay!(e =>
                cfg.preset, preset;
                cfg.model_family, model_family;
                cfg.seed, seed;
                cfg.precision, precision;
                cfg.data_source, data_source;
                cfg.data_dir, data_dir;
                cfg.out_dir, out_dir;
                cfg.n_labeled, n_labeled;
                cfg.mask_sides, mask_sides;
                cfg.capacity_factors, capacity_factors;
                cfg.replicates, replicates;
                cfg.pool_size, pool_size;
                cfg.test_size, test_size;
                cfg.base_width, base_width;
                cfg.checkpoint_every, checkpoint_every;
            );
        }
        if let Some(t) = &self.teacher {
            let c = &mut cfg.teacher;
            overlay!(t =>
                c.eta, eta;
                c.lambda, lambda;
                c.batch_size, batch_size;
                c.burn_in, burn_in;
                c.thinning, thinning;
                c.total_iters, total_iters;
                c.noise, noise;
            );
        }
        if let Some(s) = &self.student {
            let c = &mut cfg.student;
            overlay!(s =>
                c.rho0, rho0;
                c.dropout_rate, dropout;
                c.perturb_sigma, perturb_sigma;
                c.divergence, divergence;
                c.halving_period_epochs, halving_period_epochs;
                c.adam.beta1, adam_beta1;
                c.adam.beta2, adam_beta2;
                c.adam.eps, adam_eps;
            );
        }
        if let Some(b) = &self.blobs {
            let c = &mut cfg.blobs;
            overlay!(b =>
                c.classes, classes;
                c.dims, dims;
                c.train_per_class, train_per_class;
                c.test_per_class, test_per_class;
                c.separation, separation;
            );
        }
    }
}

impl From<&ExperimentConfig> for FileConfig {
    fn from(c: &ExperimentConfig) -> Self {
        let (t, s, b) = (&c.teacher, &c.student, &c.blobs);
        FileConfig {
            experiment: Some(ExperimentSection {
                preset: Some(c.preset),
                model_family: Some(c.model_family),
                seed: Some(c.seed),
                precision: Some(c.precision),
                data_source: Some(c.data_source),
                data_dir: Some(c.data_dir.clone()),
                out_dir: Some(c.out_dir.clone()),
                n_labeled: Some(c.n_labeled.clone()),
                mask_sides: Some(c.mask_sides.clone()),
                capacity_factors: Some(c.capacity_factors.clone()),
                replicates: Some(c.replicates),
                pool_size: Some(c.pool_size),
                test_size: Some(c.test_size),
                base_width: Some(c.base_width),
                checkpoint_every: Some(c.checkpoint_every),
            }),
            teacher: Some(TeacherSection {
                eta: Some(t.eta),
                lambda: Some(t.lambda),
                batch_size: Some(t.batch_size),
                burn_in: Some(t.burn_in),
                thinning: Some(t.thinning),
                total_iters: Some(t.total_iters),
                noise: Some(t.noise),
            }),
            student: Some(StudentSection {
                rho0: Some(s.rho0),
                dropout: Some(s.dropout_rate),
                perturb_sigma: Some(s.perturb_sigma),
                divergence: Some(s.divergence),
                halving_period_epochs: Some(s.halving_period_epochs),
                adam_beta1: Some(s.adam.beta1),
                adam_beta2: Some(s.adam.beta2),
                adam_eps: Some(s.adam.eps),
            }),
            blobs: Some(BlobsSection {
                classes: Some(b.classes),
                dims: Some(b.dims),
                train_per_class: Some(b.train_per_class),
                test_per_class: Some(b.test_per_class),
                separation: Some(b.separation),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for p in [Preset::Paper, Preset::Desk] {
            let cfg = ExperimentConfig::preset(p);
            cfg.validate().unwrap();
            assert_eq!(ExperimentConfig::parse(&cfg.to_text(), None).unwrap(), cfg);
        }
    }

    #[test]
    fn paper_preset_pins_full_scale_settings() {
        let cfg = ExperimentConfig::preset(Preset::Paper);
        assert_eq!(cfg.teacher.eta, 4e-6);
        assert_eq!(cfg.teacher.lambda, 10.0);
        assert_eq!((cfg.teacher.burn_in, cfg.teacher.thinning, cfg.teacher.total_iters), (1000, 100, 1_000_000));
        assert_eq!(cfg.student.rho0, 1e-3);
        assert_eq!(cfg.student.dropout_rate, 0.5);
        assert_eq!(cfg.base_width, 400);
    }

    #[test]
    fn overrides_apply_on_top_of_preset() {
        let text = "# desk tweaks\n[experiment]\nmask_sides = [14]\ncapacity_factors = [1, 2, 4]\n[teacher]\ntotal_iters = 1000\nnoise = \"stddev\"\n";
        let cfg = ExperimentConfig::parse(text, None).unwrap();
        assert_eq!(cfg.preset, Preset::Desk);
        assert_eq!(cfg.mask_sides, vec![14]);
        assert_eq!(cfg.capacity_factors, vec![1.0, 2.0, 4.0]);
        assert_eq!(cfg.teacher.total_iters, 1000);
        assert_eq!(cfg.teacher.burn_in, 500);
        assert_eq!(cfg.teacher.noise, NoiseScale::StdDev);
        let paper = ExperimentConfig::parse("[experiment]\nmask_sides = [2]", Some(Preset::Paper)).unwrap();
        assert_eq!(paper.base_width, 400);
        let reverse = ExperimentConfig::parse("[student]\ndivergence = \"reverse_kl\"", None).unwrap();
        assert_eq!(reverse.student.divergence, Divergence::ReverseKl);
    }

    #[test]
    fn errors_name_the_line() {
        let e = ExperimentConfig::parse("[experiment]\nseed = 1\nbogus = 3\n", None).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        assert!(ExperimentConfig::parse("[nope]\n", None).is_err());
        assert!(ExperimentConfig::parse("[experiment]\nseed 1\n", None).is_err());
        assert!(ExperimentConfig::parse("[experiment]\nprecision = \"f16\"\n", None).is_err());
        assert!(ExperimentConfig::parse("[student]\ndropout = 1.0\n", None).is_err());
        assert!(ExperimentConfig::parse("[experiment]\nmask_sides = [30]\n", None).is_err());
    }

    #[test]
    fn hash_ignores_paths_only() {
        let a = ExperimentConfig::preset(Preset::Desk);
        let b = ExperimentConfig { out_dir: "elsewhere".into(), data_dir: "x".into(), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig { seed: 2, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash_hex().len(), 64);
    }
}
