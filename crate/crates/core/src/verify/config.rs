//! Experiment configuration: a flat structured-text document and its typed form.
//!
//! ```text
//! experiment = verify-main
//! n = 2
//! sets = A1, A2
//!
//! [matrix]
//! kind = equicorrelated
//! k = 2
//! rho = 0.5
//!
//! [set.A1]
//! kind = ball
//! measure = 0.5
//! ```
//!
//! Lines are `key = value` pairs, `[section]` headers, blank lines or `#`
//! comments. Lists are comma-separated. [`Document::emit`] writes the canonical
//! form, which parses back to the same document, and floats are written with
//! the shortest representation that round-trips exactly.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gaussian::{ou_covariance, CorrelationMatrix};
use crate::geometry::{HalfSpace, SetExpr, SetSystem};
use crate::gaussian::normal;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    /// Empty for the leading root section.
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

impl Section {
    fn new(name: &str, line: usize) -> Self {
        Self {
            name: name.to_string(),
            line,
            entries: Vec::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.entries.push(Entry {
            key: key.to_string(),
            value: value.into(),
            line: 0,
        });
    }
}

/// Ordered sections of ordered entries. Line numbers are kept for error messages
/// and ignored by equality.
#[derive(Debug, Clone)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl PartialEq for Document {
    fn eq(&self, other: &Self) -> bool {
        let strip = |d: &Document| -> Vec<(String, Vec<(String, String)>)> {
            d.sections
                .iter()
                .map(|s| {
                    (
                        s.name.clone(),
                        s.entries.iter().map(|e| (e.key.clone(), e.value.clone())).collect(),
                    )
                })
                .collect()
        };
        strip(self) == strip(other)
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn cfg_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

impl Document {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = vec![Section::new("", 1)];
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| cfg_err(line, trimmed, "section header is missing `]`"))?
                    .trim();
                if !valid_name(name) {
                    return Err(cfg_err(line, name, "section names use [A-Za-z0-9_.-]"));
                }
                if sections.iter().any(|s| s.name == name) {
                    return Err(cfg_err(line, name, "duplicate section"));
                }
                sections.push(Section::new(name, line));
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| cfg_err(line, trimmed, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if !valid_name(key) {
                return Err(cfg_err(line, key, "keys use [A-Za-z0-9_.-]"));
            }
            if value.is_empty() {
                return Err(cfg_err(line, key, "empty value"));
            }
            let section = sections.last_mut().expect("root section");
            if section.get(key).is_some() {
                return Err(cfg_err(line, key, "duplicate key"));
            }
            section.entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line,
            });
        }
        Ok(Self { sections })
    }

    /// Canonical text: root entries, then each section after a blank line.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            if !s.name.is_empty() {
                if !out.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{}]", s.name);
            }
            for e in &s.entries {
                let _ = writeln!(out, "{} = {}", e.key, e.value);
            }
        }
        out
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    fn root(&self) -> &Section {
        &self.sections[0]
    }
}

/// Shortest decimal form that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        return "inf".into();
    }
    if v == f64::NEG_INFINITY {
        return "-inf".into();
    }
    format!("{v:?}")
}

fn fmt_list<T>(v: &[T], f: impl Fn(&T) -> String) -> String {
    v.iter().map(f).collect::<Vec<_>>().join(", ")
}

/// Typed field access on one section, with every error anchored to a line.
struct Fields<'a> {
    section: &'a Section,
    used: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn new(section: &'a Section) -> Self {
        Self {
            section,
            used: Vec::new(),
        }
    }

    fn raw(&mut self, key: &'a str) -> Option<&'a Entry> {
        self.used.push(key);
        self.section.get(key)
    }

    fn missing(&self, key: &str) -> Error {
        let where_ = if self.section.name.is_empty() {
            "top level".to_string()
        } else {
            format!("section [{}]", self.section.name)
        };
        cfg_err(self.section.line, key, format!("required in {where_}"))
    }

    fn parse_one<T: FromStr>(e: &Entry, what: &str) -> Result<T> {
        e.value
            .parse()
            .map_err(|_| cfg_err(e.line, &e.key, format!("`{}` is not a valid {what}", e.value)))
    }

    fn opt<T: FromStr>(&mut self, key: &'a str, what: &str) -> Result<Option<T>> {
        self.raw(key).map(|e| Self::parse_one(e, what)).transpose()
    }

    fn req<T: FromStr>(&mut self, key: &'a str, what: &str) -> Result<T> {
        self.opt(key, what)?.ok_or_else(|| self.missing(key))
    }

    fn list<T: FromStr>(&mut self, key: &'a str, what: &str) -> Result<Option<Vec<T>>> {
        let Some(e) = self.raw(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|item| {
                item.trim().parse().map_err(|_| {
                    cfg_err(e.line, &e.key, format!("list item `{}` is not a valid {what}", item.trim()))
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn req_list<T: FromStr>(&mut self, key: &'a str, what: &str) -> Result<Vec<T>> {
        self.list(key, what)?.ok_or_else(|| self.missing(key))
    }

    fn line_of(&self, key: &str) -> usize {
        self.section.get(key).map_or(self.section.line, |e| e.line)
    }

    /// Rejects keys that no accessor asked for.
    fn finish(self) -> Result<()> {
        for e in &self.section.entries {
            if !self.used.contains(&e.key.as_str()) {
                return Err(cfg_err(e.line, &e.key, "unknown key"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    VerifyMain,
    NoiseStability,
    ExitTime,
    Occupation,
    HessianSweep,
    EqualityDiagnostic,
    ConditionCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::VerifyMain,
        ExperimentKind::NoiseStability,
        ExperimentKind::ExitTime,
        ExperimentKind::Occupation,
        ExperimentKind::HessianSweep,
        ExperimentKind::EqualityDiagnostic,
        ExperimentKind::ConditionCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::VerifyMain => "verify-main",
            ExperimentKind::NoiseStability => "noise-stability",
            ExperimentKind::ExitTime => "exit-time",
            ExperimentKind::Occupation => "occupation",
            ExperimentKind::HessianSweep => "hessian-sweep",
            ExperimentKind::EqualityDiagnostic => "equality-diagnostic",
            ExperimentKind::ConditionCheck => "condition-check",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

impl OutputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Json => "json",
            OutputFormat::Csv => "csv",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSpec {
    Identity { k: usize },
    Explicit { k: usize, entries: Vec<f64> },
    OuTimes { times: Vec<f64> },
    Equicorrelated { k: usize, rho: f64 },
}

impl MatrixSpec {
    pub fn build(&self) -> Result<CorrelationMatrix> {
        match self {
            MatrixSpec::Identity { k } => Ok(CorrelationMatrix::identity(*k)),
            MatrixSpec::Explicit { k, entries } => CorrelationMatrix::from_rows(*k, entries),
            MatrixSpec::OuTimes { times } => ou_covariance(times),
            MatrixSpec::Equicorrelated { k, rho } => CorrelationMatrix::equicorrelated(*k, *rho),
        }
    }

    fn parse(s: &Section) -> Result<Self> {
        let mut f = Fields::new(s);
        let kind: String = f.req("kind", "matrix kind")?;
        let spec = match kind.as_str() {
            "identity" => MatrixSpec::Identity { k: f.req("k", "integer")? },
            "explicit" => MatrixSpec::Explicit {
                k: f.req("k", "integer")?,
                entries: f.req_list("entries", "number")?,
            },
            "ou-times" => MatrixSpec::OuTimes {
                times: f.req_list("times", "number")?,
            },
            "equicorrelated" => MatrixSpec::Equicorrelated {
                k: f.req("k", "integer")?,
                rho: f.req("rho", "number")?,
            },
            other => {
                return Err(cfg_err(
                    f.line_of("kind"),
                    "kind",
                    format!("unknown matrix kind `{other}` (identity, explicit, ou-times, equicorrelated)"),
                ))
            }
        };
        f.finish()?;
        Ok(spec)
    }

    fn emit(&self, s: &mut Section) {
        match self {
            MatrixSpec::Identity { k } => {
                s.push("kind", "identity");
                s.push("k", k.to_string());
            }
            MatrixSpec::Explicit { k, entries } => {
                s.push("kind", "explicit");
                s.push("k", k.to_string());
                s.push("entries", fmt_list(entries, |v| fmt_f64(*v)));
            }
            MatrixSpec::OuTimes { times } => {
                s.push("kind", "ou-times");
                s.push("times", fmt_list(times, |v| fmt_f64(*v)));
            }
            MatrixSpec::Equicorrelated { k, rho } => {
                s.push("kind", "equicorrelated");
                s.push("k", k.to_string());
                s.push("rho", fmt_f64(*rho));
            }
        }
    }
}

/// Either a literal offset/radius or the Gaussian measure it should produce.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Size {
    Literal(f64),
    Measure(f64),
}

/// Declarative set description; composite sets refer to other sets by name.
#[derive(Debug, Clone, PartialEq)]
pub enum SetSpec {
    HalfSpace { normal: Vec<f64>, bound: Size },
    Ball { center: Vec<f64>, radius: Size },
    AxisBox { lo: Vec<f64>, hi: Vec<f64> },
    Complement { of: String },
    Union { members: Vec<String> },
    Intersection { members: Vec<String> },
    Full,
    Empty,
}

impl SetSpec {
    fn parse(s: &Section) -> Result<Self> {
        let mut f = Fields::new(s);
        let kind: String = f.req("kind", "set kind")?;
        let size = |f: &mut Fields, literal: &'static str| -> Result<Size> {
            let lit: Option<f64> = f.opt(literal, "number")?;
            let meas: Option<f64> = f.opt("measure", "number")?;
            match (lit, meas) {
                (Some(v), None) => Ok(Size::Literal(v)),
                (None, Some(p)) if (0.0..=1.0).contains(&p) => Ok(Size::Measure(p)),
                (None, Some(p)) => Err(cfg_err(f.line_of("measure"), "measure", format!("{p} is not in [0, 1]"))),
                (Some(_), Some(_)) => Err(cfg_err(
                    f.line_of("measure"),
                    "measure",
                    format!("give either `{literal}` or `measure`, not both"),
                )),
                (None, None) => Err(f.missing(literal)),
            }
        };
        let spec = match kind.as_str() {
            "halfspace" => SetSpec::HalfSpace {
                normal: f.req_list("normal", "number")?,
                bound: size(&mut f, "offset")?,
            },
            "ball" => {
                let center = f.list("center", "number")?.unwrap_or_default();
                let radius = size(&mut f, "radius")?;
                if matches!(radius, Size::Measure(_)) && center.iter().any(|&c| c != 0.0) {
                    return Err(cfg_err(f.line_of("measure"), "measure", "a ball given by measure must be centered"));
                }
                SetSpec::Ball { center, radius }
            }
            "box" => SetSpec::AxisBox {
                lo: f.req_list("lo", "number")?,
                hi: f.req_list("hi", "number")?,
            },
            "complement" => SetSpec::Complement { of: f.req("of", "set name")? },
            "union" => SetSpec::Union {
                members: f.req_list("members", "set name")?,
            },
            "intersection" => SetSpec::Intersection {
                members: f.req_list("members", "set name")?,
            },
            "full" => SetSpec::Full,
            "empty" => SetSpec::Empty,
            other => {
                return Err(cfg_err(
                    f.line_of("kind"),
                    "kind",
                    format!("unknown set kind `{other}` (halfspace, ball, box, complement, union, intersection, full, empty)"),
                ))
            }
        };
        f.finish()?;
        Ok(spec)
    }

    fn emit(&self, s: &mut Section) {
        let size = |s: &mut Section, literal: &str, v: &Size| match v {
            Size::Literal(x) => s.push(literal, fmt_f64(*x)),
            Size::Measure(p) => s.push("measure", fmt_f64(*p)),
        };
        match self {
            SetSpec::HalfSpace { normal, bound } => {
                s.push("kind", "halfspace");
                s.push("normal", fmt_list(normal, |v| fmt_f64(*v)));
                size(s, "offset", bound);
            }
            SetSpec::Ball { center, radius } => {
                s.push("kind", "ball");
                if !center.is_empty() {
                    s.push("center", fmt_list(center, |v| fmt_f64(*v)));
                }
                size(s, "radius", radius);
            }
            SetSpec::AxisBox { lo, hi } => {
                s.push("kind", "box");
                s.push("lo", fmt_list(lo, |v| fmt_f64(*v)));
                s.push("hi", fmt_list(hi, |v| fmt_f64(*v)));
            }
            SetSpec::Complement { of } => {
                s.push("kind", "complement");
                s.push("of", of.clone());
            }
            SetSpec::Union { members } => {
                s.push("kind", "union");
                s.push("members", members.join(", "));
            }
            SetSpec::Intersection { members } => {
                s.push("kind", "intersection");
                s.push("members", members.join(", "));
            }
            SetSpec::Full => s.push("kind", "full"),
            SetSpec::Empty => s.push("kind", "empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepSpec {
    /// Every x in `x`ᵏ against every equicorrelated M(ρ), ρ in `rho`.
    Grid { k: usize, x: Vec<f64>, rho: Vec<f64> },
    /// `count` OU matrices on random increasing times with uniform x.
    RandomOu { k: usize, count: usize },
    /// `count` random entrywise nonnegative correlation matrices with uniform x.
    RandomNonneg { k: usize, count: usize },
}

impl SweepSpec {
    fn parse(s: &Section) -> Result<Self> {
        let mut f = Fields::new(s);
        let kind: String = f.req("kind", "sweep kind")?;
        let k: usize = f.req("k", "integer")?;
        let spec = match kind.as_str() {
            "grid" => SweepSpec::Grid {
                k,
                x: f.req_list("x", "number")?,
                rho: f.req_list("rho", "number")?,
            },
            "random-ou" => SweepSpec::RandomOu {
                k,
                count: f.req("count", "integer")?,
            },
            "random-nonneg" => SweepSpec::RandomNonneg {
                k,
                count: f.req("count", "integer")?,
            },
            other => {
                return Err(cfg_err(
                    f.line_of("kind"),
                    "kind",
                    format!("unknown sweep kind `{other}` (grid, random-ou, random-nonneg)"),
                ))
            }
        };
        if k == 0 {
            return Err(cfg_err(f.line_of("k"), "k", "must be positive"));
        }
        f.finish()?;
        Ok(spec)
    }

    fn emit(&self, s: &mut Section) {
        match self {
            SweepSpec::Grid { k, x, rho } => {
                s.push("kind", "grid");
                s.push("k", k.to_string());
                s.push("x", fmt_list(x, |v| fmt_f64(*v)));
                s.push("rho", fmt_list(rho, |v| fmt_f64(*v)));
            }
            SweepSpec::RandomOu { k, count } => {
                s.push("kind", "random-ou");
                s.push("k", k.to_string());
                s.push("count", count.to_string());
            }
            SweepSpec::RandomNonneg { k, count } => {
                s.push("kind", "random-nonneg");
                s.push("k", k.to_string());
                s.push("count", count.to_string());
            }
        }
    }
}

pub const DEFAULT_SAMPLES: u64 = 1_000_000;
pub const DEFAULT_PATHS: u64 = 100_000;
pub const DEFAULT_TARGET_SE: f64 = 1e-6;
pub const DEFAULT_STEPS: usize = 512;
pub const DEFAULT_T: f64 = 0.5;
pub const DEFAULT_PROBES: usize = 200;

/// Fully resolved experiment description. Every field has a value, so the
/// emitted form is re-runnable as is.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub seed: u64,
    pub samples: u64,
    pub paths: u64,
    pub target_se: f64,
    /// Names of the sets forming the system, in order.
    pub system: Vec<String>,
    /// Every set definition, in document order.
    pub sets: Vec<(String, SetSpec)>,
    pub matrix: Option<MatrixSpec>,
    pub taus: Vec<f64>,
    pub steps: usize,
    pub t: f64,
    pub probes: usize,
    pub sweep: Option<SweepSpec>,
    pub output: Option<String>,
    pub format: OutputFormat,
}

impl ExperimentConfig {
    /// A config with defaults everywhere and no sets or matrix.
    pub fn new(experiment: ExperimentKind, seed: u64) -> Self {
        Self {
            experiment,
            n: 2,
            seed,
            samples: DEFAULT_SAMPLES,
            paths: DEFAULT_PATHS,
            target_se: DEFAULT_TARGET_SE,
            system: Vec::new(),
            sets: Vec::new(),
            matrix: None,
            taus: vec![DEFAULT_T],
            steps: DEFAULT_STEPS,
            t: DEFAULT_T,
            probes: DEFAULT_PROBES,
            sweep: None,
            output: None,
            format: OutputFormat::Json,
        }
    }

    /// Parses and validates. `default_seed` applies when the document has none.
    pub fn parse(text: &str, default_seed: u64) -> Result<Self> {
        Self::from_document(&Document::parse(text)?, default_seed)
    }

    pub fn from_document(doc: &Document, default_seed: u64) -> Result<Self> {
        let mut f = Fields::new(doc.root());
        let experiment: String = f.req("experiment", "experiment name")?;
        let experiment = experiment.parse::<ExperimentKind>().map_err(|_| {
            let names: Vec<_> = ExperimentKind::ALL.iter().map(|k| k.as_str()).collect();
            cfg_err(f.line_of("experiment"), "experiment", format!("unknown experiment `{experiment}` ({})", names.join(", ")))
        })?;
        let mut cfg = Self::new(experiment, default_seed);
        if let Some(v) = f.opt("n", "integer")? {
            cfg.n = v;
        }
        if let Some(v) = f.opt("seed", "unsigned integer")? {
            cfg.seed = v;
        }
        if let Some(v) = f.opt("samples", "integer")? {
            cfg.samples = v;
        }
        if let Some(v) = f.opt("paths", "integer")? {
            cfg.paths = v;
        }
        if let Some(v) = f.opt("target_se", "number")? {
            cfg.target_se = v;
        }
        if let Some(v) = f.list::<String>("sets", "set name")? {
            cfg.system = v;
        }
        let root_lines = [
            ("n", f.line_of("n")),
            ("samples", f.line_of("samples")),
            ("paths", f.line_of("paths")),
            ("target_se", f.line_of("target_se")),
            ("sets", f.line_of("sets")),
        ];
        f.finish()?;

        for s in &doc.sections[1..] {
            match s.name.as_str() {
                "matrix" => cfg.matrix = Some(MatrixSpec::parse(s)?),
                "sweep" => cfg.sweep = Some(SweepSpec::parse(s)?),
                "grid" => {
                    let mut g = Fields::new(s);
                    if let Some(v) = g.list("tau", "number")? {
                        cfg.taus = v;
                    }
                    if let Some(v) = g.opt("steps", "integer")? {
                        cfg.steps = v;
                    }
                    if let Some(v) = g.opt("t", "number")? {
                        cfg.t = v;
                    }
                    if let Some(v) = g.opt("probes", "integer")? {
                        cfg.probes = v;
                    }
                    g.finish()?;
                }
                "output" => {
                    let mut o = Fields::new(s);
                    cfg.output = o.opt("path", "path")?;
                    if let Some(v) = o.opt::<String>("format", "format")? {
                        cfg.format = v
                            .parse()
                            .map_err(|_| cfg_err(o.line_of("format"), "format", format!("`{v}` is not json or csv")))?;
                    }
                    o.finish()?;
                }
                name => match name.strip_prefix("set.") {
                    Some(set_name) if !set_name.is_empty() => cfg.sets.push((set_name.to_string(), SetSpec::parse(s)?)),
                    _ => return Err(cfg_err(s.line, name, "unknown section (matrix, sweep, grid, output, set.NAME)")),
                },
            }
        }
        cfg.validate_at(&root_lines)?;
        Ok(cfg)
    }

    fn validate_at(&self, lines: &[(&str, usize)]) -> Result<()> {
        let line = |key: &str| lines.iter().find(|(k, _)| *k == key).map_or(1, |(_, l)| *l);
        if self.n == 0 {
            return Err(cfg_err(line("n"), "n", "must be positive"));
        }
        if self.samples == 0 {
            return Err(cfg_err(line("samples"), "samples", "must be positive"));
        }
        if self.paths == 0 {
            return Err(cfg_err(line("paths"), "paths", "must be positive"));
        }
        if !(self.target_se > 0.0) {
            return Err(cfg_err(line("target_se"), "target_se", "must be positive"));
        }
        for name in &self.system {
            if !self.sets.iter().any(|(n, _)| n == name) {
                return Err(cfg_err(line("sets"), "sets", format!("no section [set.{name}]")));
            }
        }
        if self.steps == 0 {
            return Err(cfg_err(1, "steps", "must be positive"));
        }
        if self.taus.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(cfg_err(1, "tau", "horizons must be finite and nonnegative"));
        }
        // Resolving every set catches dangling references, cycles and dimension errors.
        self.resolve_system()?;
        Ok(())
    }

    /// Checks the config without line information (used after CLI overrides).
    pub fn validate(&self) -> Result<()> {
        self.validate_at(&[])
    }

    /// Resolves one named set against the ambient dimension.
    pub fn resolve(&self, name: &str) -> Result<SetExpr> {
        self.resolve_depth(name, 0)
    }

    fn resolve_depth(&self, name: &str, depth: usize) -> Result<SetExpr> {
        let bad = |msg: String| cfg_err(0, &format!("set.{name}"), msg);
        if depth > self.sets.len() {
            return Err(bad("set references form a cycle".into()));
        }
        let spec = self
            .sets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| bad("no such set".into()))?;
        let n = self.n;
        let dim_check = |v: &[f64], what: &str| -> Result<()> {
            if v.len() != n {
                return Err(bad(format!("{what} has {} entries but n = {n}", v.len())));
            }
            Ok(())
        };
        let lift = |e: Error| bad(e.to_string());
        let members = |names: &[String]| -> Result<Vec<SetExpr>> {
            names.iter().map(|m| self.resolve_depth(m, depth + 1)).collect()
        };
        Ok(match spec {
            SetSpec::HalfSpace { normal, bound } => {
                dim_check(normal, "normal")?;
                let offset = match *bound {
                    Size::Literal(b) => b,
                    Size::Measure(p) => {
                        // Offset in units of |normal| so the canonical form has measure p.
                        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                        normal::quantile(p).map_err(lift)? * norm
                    }
                };
                SetExpr::HalfSpace(HalfSpace::new(normal.clone(), offset).map_err(lift)?)
            }
            SetSpec::Ball { center, radius } => {
                let center = if center.is_empty() { vec![0.0; n] } else { center.clone() };
                dim_check(&center, "center")?;
                match *radius {
                    Size::Literal(r) => SetExpr::ball(center, r).map_err(lift)?,
                    Size::Measure(p) => SetExpr::centered_ball_with_measure(n, p).map_err(lift)?,
                }
            }
            SetSpec::AxisBox { lo, hi } => {
                dim_check(lo, "lo")?;
                dim_check(hi, "hi")?;
                SetExpr::axis_box(lo.clone(), hi.clone()).map_err(lift)?
            }
            SetSpec::Complement { of } => SetExpr::complement(self.resolve_depth(of, depth + 1)?),
            SetSpec::Union { members: m } => SetExpr::union(members(m)?).map_err(lift)?,
            SetSpec::Intersection { members: m } => SetExpr::intersection(members(m)?).map_err(lift)?,
            SetSpec::Full => SetExpr::full(n),
            SetSpec::Empty => SetExpr::empty(n),
        })
    }

    /// The configured set system in `sets` order.
    pub fn resolve_system(&self) -> Result<Vec<SetExpr>> {
        for (name, _) in &self.sets {
            self.resolve(name)?;
        }
        self.system.iter().map(|n| self.resolve(n)).collect()
    }

    pub fn set_system(&self) -> Result<SetSystem> {
        SetSystem::new(self.resolve_system()?)
    }

    pub fn to_document(&self) -> Document {
        let mut root = Section::new("", 1);
        root.push("experiment", self.experiment.as_str());
        root.push("n", self.n.to_string());
        root.push("seed", self.seed.to_string());
        root.push("samples", self.samples.to_string());
        root.push("paths", self.paths.to_string());
        root.push("target_se", fmt_f64(self.target_se));
        if !self.system.is_empty() {
            root.push("sets", self.system.join(", "));
        }
        let mut sections = vec![root];
        if let Some(m) = &self.matrix {
            let mut s = Section::new("matrix", 0);
            m.emit(&mut s);
            sections.push(s);
        }
        if let Some(sw) = &self.sweep {
            let mut s = Section::new("sweep", 0);
            sw.emit(&mut s);
            sections.push(s);
        }
        let mut g = Section::new("grid", 0);
        g.push("tau", fmt_list(&self.taus, |v| fmt_f64(*v)));
        g.push("steps", self.steps.to_string());
        g.push("t", fmt_f64(self.t));
        g.push("probes", self.probes.to_string());
        sections.push(g);
        for (name, spec) in &self.sets {
            let mut s = Section::new(&format!("set.{name}"), 0);
            spec.emit(&mut s);
            sections.push(s);
        }
        let mut o = Section::new("output", 0);
        if let Some(p) = &self.output {
            o.push("path", p.clone());
        }
        o.push("format", self.format.as_str());
        sections.push(o);
        Document { sections }
    }

    /// Canonical text with every default spelled out.
    pub fn emit(&self) -> String {
        self.to_document().emit()
    }
}
