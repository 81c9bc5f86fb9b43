//! Line-oriented run configuration.
//!
//! ```text
//! # comment
//! model = unified          # required: unified | cascade
//! structure = bottom_up    # bottom_up | top_down | skip | all_to_one
//! edges = 1>3,2>3          # optional explicit edge list (or `none`), overrides structure
//! backend = lattice        # exact | lattice
//! scales = 3
//! seed = 0
//!
//! [kernels]
//! theta_spatial = 1.0
//! theta_pos = 1.5
//! theta_col = 0.05
//!
//! [crf]
//! beta_init = 0.1
//! iterations = 5
//!
//! [train]
//! learning_rate = 0.5
//! momentum = 0.9
//! weight_decay = 0.0005
//! epochs = 10
//! batch_size = 4
//! scenes = 20
//!
//! [synth]
//! width = 64
//! height = 64
//! boxes = 4
//! depth_min = 1.0
//! depth_max = 10.0
//! blur_coarsest = 3.0
//! blur_finest = 1.0
//! noise_coarsest = 0.8
//! noise_finest = 0.4
//!
//! [eval]
//! min_valid_depth = 0.001
//! ```
//!
//! Every key except `model` is optional. Keys are lowercase snake case; values
//! are integers, reals, `true`/`false`, or bare words. Unknown sections and
//! keys are rejected.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::eval::{SynthSpec, DEFAULT_MIN_VALID_DEPTH};
use crate::filter::FilterBackend;
use crate::fusion::{build_passing_structure, format_edges, parse_edges, PassingStructure, StructureKind, TrainConfig};
use crate::types::{CrfParams, KernelSpec, ModelKind};

#[derive(Debug, Clone, PartialEq)]
pub enum StructureChoice {
    Named(StructureKind),
    /// Zero-based `(source, target)` pairs.
    Edges(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidths {
    pub theta_spatial: f64,
    pub theta_pos: f64,
    pub theta_col: f64,
}

impl Default for Bandwidths {
    fn default() -> Self {
        Self { theta_spatial: 1.0, theta_pos: 1.5, theta_col: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub model: ModelKind,
    pub structure: StructureChoice,
    pub backend: FilterBackend,
    pub scales: usize,
    pub seed: u64,
    pub kernels: Bandwidths,
    pub beta_init: f64,
    pub iterations: usize,
    pub train: TrainConfig,
    /// Training scene count.
    pub scenes: usize,
    /// Scene parameters; `scales` and `seed` mirror the top-level keys.
    pub synth: SynthSpec,
    pub min_valid_depth: f64,
}

impl Config {
    /// The defaults for every optional key.
    pub fn new(model: ModelKind) -> Self {
        let synth = SynthSpec::default();
        Self {
            model,
            structure: StructureChoice::Named(StructureKind::BottomUp),
            backend: FilterBackend::Lattice,
            scales: synth.scales,
            seed: synth.seed,
            kernels: Bandwidths::default(),
            beta_init: 0.1,
            iterations: 5,
            train: TrainConfig::default(),
            scenes: 20,
            synth,
            min_valid_depth: DEFAULT_MIN_VALID_DEPTH,
        }
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let k = self.kernels;
        KernelSpec::for_model(self.model, k.theta_spatial, k.theta_pos, k.theta_col)
    }

    pub fn passing_structure(&self) -> Result<PassingStructure> {
        match &self.structure {
            StructureChoice::Named(kind) => build_passing_structure(*kind, self.scales),
            StructureChoice::Edges(edges) => PassingStructure::from_edges(self.scales, edges.clone()),
        }
    }

    pub fn initial_params(&self) -> Result<CrfParams> {
        let kernels = self.kernel_spec()?.len();
        CrfParams::uniform(self.model, self.scales, kernels, self.beta_init, self.iterations)
    }

    /// Synth parameters with the top-level scale count and `seed`.
    pub fn synth_spec(&self, seed: u64) -> SynthSpec {
        SynthSpec { scales: self.scales, seed, ..self.synth.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel_spec()?;
        self.passing_structure()?;
        if !(self.beta_init.is_finite() && self.beta_init >= 0.0) {
            return Err(config_err("beta_init", "must be >= 0"));
        }
        if self.iterations == 0 {
            return Err(config_err("iterations", "must be >= 1"));
        }
        if self.scenes == 0 {
            return Err(config_err("scenes", "must be >= 1"));
        }
        if !(self.min_valid_depth.is_finite() && self.min_valid_depth >= 0.0) {
            return Err(config_err("min_valid_depth", "must be >= 0"));
        }
        self.train.validate()?;
        self.synth_spec(self.seed).validate()
    }

    /// Text that [`parse_config`] reads back to an equal `Config`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        line("model", self.model.name().into());
        match &self.structure {
            StructureChoice::Named(kind) => line("structure", kind.name().into()),
            StructureChoice::Edges(edges) if edges.is_empty() => line("edges", "none".into()),
            StructureChoice::Edges(edges) => line("edges", format_edges(edges)),
        }
        line("backend", self.backend.name().into());
        line("scales", self.scales.to_string());
        line("seed", self.seed.to_string());
        let s = &self.synth;
        let t = &self.train;
        let sections: [(&str, Vec<(&str, String)>); 5] = [
            (
                "kernels",
                vec![
                    ("theta_spatial", real(self.kernels.theta_spatial)),
                    ("theta_pos", real(self.kernels.theta_pos)),
                    ("theta_col", real(self.kernels.theta_col)),
                ],
            ),
            ("crf", vec![("beta_init", real(self.beta_init)), ("iterations", self.iterations.to_string())]),
            (
                "train",
                vec![
                    ("learning_rate", real(t.learning_rate)),
                    ("momentum", real(t.momentum)),
                    ("weight_decay", real(t.weight_decay)),
                    ("epochs", t.epochs.to_string()),
                    ("batch_size", t.batch_size.to_string()),
                    ("scenes", self.scenes.to_string()),
                ],
            ),
            (
                "synth",
                vec![
                    ("width", s.width.to_string()),
                    ("height", s.height.to_string()),
                    ("boxes", s.boxes.to_string()),
                    ("depth_min", real(s.depth_min)),
                    ("depth_max", real(s.depth_max)),
                    ("blur_coarsest", real(s.blur_coarsest)),
                    ("blur_finest", real(s.blur_finest)),
                    ("noise_coarsest", real(s.noise_coarsest)),
                    ("noise_finest", real(s.noise_finest)),
                ],
            ),
            ("eval", vec![("min_valid_depth", real(self.min_valid_depth))]),
        ];
        for (name, keys) in sections {
            out.push_str(&format!("\n[{name}]\n"));
            for (k, v) in keys {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}

/// Reals always carry a decimal point or exponent so they read back as reals.
fn real(v: f64) -> String {
    format!("{v:?}")
}

fn config_err(key: &str, reason: &str) -> Error {
    Error::Config { key: key.into(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Int(i64),
    Real(f64),
    Bool(bool),
    Word(String),
}

impl Value {
    fn lex(text: &str) -> Value {
        if let Ok(i) = text.parse::<i64>() {
            Value::Int(i)
        } else if let Ok(r) = text.parse::<f64>() {
            Value::Real(r)
        } else if text == "true" || text == "false" {
            Value::Bool(text == "true")
        } else {
            Value::Word(text.to_string())
        }
    }
}

struct Entry<'a> {
    line: usize,
    key: &'a str,
    value: Value,
    raw: &'a str,
}

impl Entry<'_> {
    fn real(&self) -> Result<f64> {
        match self.value {
            Value::Int(i) => Ok(i as f64),
            Value::Real(r) if r.is_finite() => Ok(r),
            _ => Err(Error::Config { key: self.key.into(), reason: format!("expected a number, got `{}`", self.raw) }),
        }
    }

    fn count(&self) -> Result<usize> {
        match self.value {
            Value::Int(i) if i >= 0 => Ok(i as usize),
            _ => Err(Error::Config {
                key: self.key.into(),
                reason: format!("expected a nonnegative integer, got `{}`", self.raw),
            }),
        }
    }

    fn seed(&self) -> Result<u64> {
        self.raw.parse().map_err(|_| Error::Config {
            key: self.key.into(),
            reason: format!("expected an unsigned integer, got `{}`", self.raw),
        })
    }

    fn semantic(&self, e: Error) -> Error {
        Error::Config { key: self.key.into(), reason: e.to_string() }
    }
}

const SECTIONS: [&str; 5] = ["kernels", "crf", "train", "synth", "eval"];

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<Config> {
    let mut section = "";
    let mut seen = HashSet::new();
    let mut entries: Vec<(&str, Entry)> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Syntax { line, reason: "unterminated section header".into() })?
                .trim();
            section = SECTIONS
                .iter()
                .find(|s| **s == name)
                .ok_or_else(|| Error::Syntax { line, reason: format!("unknown section [{name}]") })?;
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Syntax { line, reason: format!("expected `key = value`, got `{content}`") })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') {
            return Err(Error::Syntax { line, reason: format!("bad key `{key}`") });
        }
        if value.is_empty() {
            return Err(Error::Syntax { line, reason: format!("missing value for `{key}`") });
        }
        if !seen.insert((section, key)) {
            return Err(Error::Syntax { line, reason: format!("duplicate key `{key}`") });
        }
        entries.push((section, Entry { line, key, value: Value::lex(value), raw: value }));
    }

    let model = entries
        .iter()
        .find(|(s, e)| s.is_empty() && e.key == "model")
        .ok_or_else(|| Error::MissingKey("model".into()))?;
    let kind = match &model.1.value {
        Value::Word(w) => ModelKind::parse(w),
        _ => None,
    }
    .ok_or_else(|| config_err("model", "expected `unified` or `cascade`"))?;

    let mut cfg = Config::new(kind);
    let mut edges = None;
    for (section, e) in &entries {
        match (*section, e.key) {
            ("", "model") => {}
            ("", "structure") => {
                cfg.structure = StructureChoice::Named(StructureKind::parse(e.raw).map_err(|err| e.semantic(err))?)
            }
            ("", "edges") if e.raw == "none" => edges = Some(Vec::new()),
            ("", "edges") => edges = Some(parse_edges(e.raw).map_err(|err| e.semantic(err))?),
            ("", "backend") => {
                cfg.backend = FilterBackend::parse(e.raw)
                    .ok_or_else(|| config_err("backend", "expected `exact` or `lattice`"))?
            }
            ("", "scales") => cfg.scales = e.count()?,
            ("", "seed") => cfg.seed = e.seed()?,
            ("kernels", "theta_spatial") => cfg.kernels.theta_spatial = e.real()?,
            ("kernels", "theta_pos") => cfg.kernels.theta_pos = e.real()?,
            ("kernels", "theta_col") => cfg.kernels.theta_col = e.real()?,
            ("crf", "beta_init") => cfg.beta_init = e.real()?,
            ("crf", "iterations") => cfg.iterations = e.count()?,
            ("train", "learning_rate") => cfg.train.learning_rate = e.real()?,
            ("train", "momentum") => cfg.train.momentum = e.real()?,
            ("train", "weight_decay") => cfg.train.weight_decay = e.real()?,
            ("train", "epochs") => cfg.train.epochs = e.count()?,
            ("train", "batch_size") => cfg.train.batch_size = e.count()?,
            ("train", "scenes") => cfg.scenes = e.count()?,
            ("synth", "width") => cfg.synth.width = e.count()?,
            ("synth", "height") => cfg.synth.height = e.count()?,
            ("synth", "boxes") => cfg.synth.boxes = e.count()?,
            ("synth", "depth_min") => cfg.synth.depth_min = e.real()?,
            ("synth", "depth_max") => cfg.synth.depth_max = e.real()?,
            ("synth", "blur_coarsest") => cfg.synth.blur_coarsest = e.real()?,
            ("synth", "blur_finest") => cfg.synth.blur_finest = e.real()?,
            ("synth", "noise_coarsest") => cfg.synth.noise_coarsest = e.real()?,
            ("synth", "noise_finest") => cfg.synth.noise_finest = e.real()?,
            ("eval", "min_valid_depth") => cfg.min_valid_depth = e.real()?,
            (section, key) => {
                let section = if section.is_empty() { "top level" } else { section };
                return Err(Error::UnknownKey { line: e.line, section: section.into(), key: key.into() });
            }
        }
    }
    if let Some(edges) = edges {
        cfg.structure = StructureChoice::Edges(edges);
    }
    cfg.synth.scales = cfg.scales;
    cfg.synth.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}
