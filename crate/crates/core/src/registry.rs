//! Hierarchical tool configuration.
//!
//! Each tool carries a short description (what the planner reads) and a long
//! manual plus an argument schema (what the executor reads). The registry is
//! loaded once and never mutated afterwards, so it can be shared by reference
//! across concurrently running agents.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::Payload;
use crate::builtins;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("tool `{0}` is already registered")]
    DuplicateName(String),
    #[error("tool `{0}` has an empty manual")]
    EmptyManual(String),
    #[error("tool `{0}` has an empty description")]
    EmptyDescription(String),
    #[error("tool `{tool}` has a malformed schema: {reason}")]
    MalformedSchema { tool: String, reason: String },
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("planner view is {size} bytes, budget is {budget}")]
    PromptBudgetExceeded { size: usize, budget: usize },
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("tool `{0}` is not a builtin")]
    NotBuiltin(String),
    #[error("argument error for `{tool}`: {reason}")]
    ArgValidation { tool: String, reason: String },
    #[error("`{tool}` cannot operate on {got}")]
    MediaMismatch { tool: String, got: String },
    #[error("`{tool}` failed: {reason}")]
    Failed { tool: String, reason: String },
}

impl ToolError {
    pub(crate) fn args(tool: &str, reason: impl Into<String>) -> Self {
        ToolError::ArgValidation {
            tool: tool.to_string(),
            reason: reason.into(),
        }
    }
}

/// Semantic kind of a tool argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgKind {
    Path,
    Integer,
    Real,
    Text,
    /// Four comma separated integers: `x,y,width,height`.
    Box,
    Enum,
}

impl fmt::Display for ArgKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArgKind::Path => "path",
            ArgKind::Integer => "integer",
            ArgKind::Real => "real",
            ArgKind::Text => "text",
            ArgKind::Box => "box",
            ArgKind::Enum => "enum",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum ArgValue {
    Path(String),
    Integer(i64),
    Real(f64),
    Text(String),
    Box([i64; 4]),
    Enum(String),
}

impl ArgValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            ArgValue::Integer(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            ArgValue::Real(v) => Some(*v),
            ArgValue::Integer(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ArgValue::Path(s) | ArgValue::Text(s) | ArgValue::Enum(s) => Some(s),
            _ => None,
        }
    }

    /// Text form used inside a tool-call line.
    pub fn render(&self) -> String {
        match self {
            ArgValue::Path(s) | ArgValue::Text(s) | ArgValue::Enum(s) => s.clone(),
            ArgValue::Integer(v) => v.to_string(),
            ArgValue::Real(v) => format_real(*v),
            ArgValue::Box([x, y, w, h]) => format!("{x},{y},{w},{h}"),
        }
    }

    /// JSON form used on the adapter wire.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            ArgValue::Integer(v) => (*v).into(),
            ArgValue::Real(v) => serde_json::Number::from_f64(*v)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            other => other.render().into(),
        }
    }
}

/// Reals always carry a decimal point so they re-parse as reals.
pub fn format_real(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub kind: ArgKind,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<toml::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
}

impl ArgSpec {
    /// Parses a raw string against this argument's kind.
    pub fn parse_value(&self, raw: &str) -> Result<ArgValue, String> {
        let raw = raw.trim();
        match self.kind {
            ArgKind::Path => {
                if raw.is_empty() {
                    Err(format!("`{}` needs a path", self.name))
                } else {
                    Ok(ArgValue::Path(raw.to_string()))
                }
            }
            ArgKind::Integer => raw
                .parse::<i64>()
                .or_else(|_| {
                    raw.parse::<f64>()
                        .ok()
                        .filter(|f| f.fract() == 0.0 && f.is_finite())
                        .map(|f| f as i64)
                        .ok_or(())
                })
                .map(ArgValue::Integer)
                .map_err(|_| format!("`{}` expects an integer, got `{raw}`", self.name)),
            ArgKind::Real => raw
                .parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .map(ArgValue::Real)
                .ok_or_else(|| format!("`{}` expects a real number, got `{raw}`", self.name)),
            ArgKind::Text => Ok(ArgValue::Text(raw.to_string())),
            ArgKind::Box => {
                let parts: Vec<_> = raw
                    .trim_matches(|c| c == '(' || c == ')' || c == '[' || c == ']')
                    .split(',')
                    .map(|p| p.trim().parse::<i64>())
                    .collect();
                match parts.as_slice() {
                    [Ok(x), Ok(y), Ok(w), Ok(h)] if *w > 0 && *h > 0 && *x >= 0 && *y >= 0 => {
                        Ok(ArgValue::Box([*x, *y, *w, *h]))
                    }
                    _ => Err(format!("`{}` expects `x,y,width,height`, got `{raw}`", self.name)),
                }
            }
            ArgKind::Enum => {
                let hit = self.choices.iter().find(|c| c.eq_ignore_ascii_case(raw));
                hit.map(|c| ArgValue::Enum(c.clone())).ok_or_else(|| {
                    format!(
                        "`{}` must be one of [{}], got `{raw}`",
                        self.name,
                        self.choices.join(", ")
                    )
                })
            }
        }
    }

    fn default_value(&self) -> Result<Option<ArgValue>, String> {
        let Some(d) = &self.default else {
            return Ok(None);
        };
        let raw = match d {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Array(a) => a.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            other => return Err(format!("unsupported default {other}")),
        };
        self.parse_value(&raw).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ToolKind {
    Builtin,
    External { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    #[serde(skip)]
    pub manual: String,
    #[serde(default)]
    pub args: Vec<ArgSpec>,
    pub kind: ToolKind,
}

/// Bound argument list, in schema order.
pub type BoundArgs = Vec<(String, ArgValue)>;

impl ToolSpec {
    pub fn validate(&self) -> Result<(), RegistryError> {
        let bad = |reason: String| RegistryError::MalformedSchema {
            tool: self.name.clone(),
            reason,
        };
        if self.name.trim().is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(bad(format!("invalid tool name `{}`", self.name)));
        }
        if self.description.trim().is_empty() {
            return Err(RegistryError::EmptyDescription(self.name.clone()));
        }
        if self.manual.trim().is_empty() {
            return Err(RegistryError::EmptyManual(self.name.clone()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut optional_seen = false;
        for a in &self.args {
            if a.name.trim().is_empty() || !seen.insert(a.name.as_str()) {
                return Err(bad(format!("duplicate or empty argument `{}`", a.name)));
            }
            if a.required && a.default.is_some() {
                return Err(bad(format!("required argument `{}` has a default", a.name)));
            }
            if a.required && optional_seen {
                return Err(bad(format!("required argument `{}` follows an optional one", a.name)));
            }
            if !a.required {
                optional_seen = true;
            }
            if a.kind == ArgKind::Enum && a.choices.is_empty() {
                return Err(bad(format!("enum argument `{}` has no choices", a.name)));
            }
            a.default_value().map_err(|e| bad(format!("default of `{}`: {e}", a.name)))?;
        }
        Ok(())
    }

    pub fn is_builtin(&self) -> bool {
        self.kind == ToolKind::Builtin
    }

    pub fn path_args(&self) -> impl Iterator<Item = &ArgSpec> {
        self.args.iter().filter(|a| a.kind == ArgKind::Path)
    }

    /// True when every argument is a path: nothing for an LLM to decide.
    pub fn fully_determined(&self) -> bool {
        self.args.iter().all(|a| a.kind == ArgKind::Path) && self.args.len() <= 1
    }

    /// Binds positional raw strings to the schema. Missing optional arguments
    /// take their defaults; surplus arguments are rejected.
    pub fn bind(&self, raw: &[String]) -> Result<BoundArgs, ToolError> {
        if raw.len() > self.args.len() {
            return Err(ToolError::args(
                &self.name,
                format!("expected at most {} arguments, got {}", self.args.len(), raw.len()),
            ));
        }
        let mut out = Vec::with_capacity(self.args.len());
        for (i, spec) in self.args.iter().enumerate() {
            let given = raw.get(i).map(|s| s.trim()).filter(|s| !s.is_empty());
            let value = match given {
                Some(s) => spec.parse_value(s).map_err(|e| ToolError::args(&self.name, e))?,
                None if spec.required => {
                    return Err(ToolError::args(&self.name, format!("missing required `{}`", spec.name)))
                }
                None => match spec.default_value().map_err(|e| ToolError::args(&self.name, e))? {
                    Some(v) => v,
                    None => continue,
                },
            };
            out.push((spec.name.clone(), value));
        }
        Ok(out)
    }

    /// Binds a named map (adapter wire form). Unknown keys are rejected.
    pub fn bind_named(&self, named: &[(String, String)]) -> Result<BoundArgs, ToolError> {
        for (k, _) in named {
            if !self.args.iter().any(|a| &a.name == k) {
                return Err(ToolError::args(&self.name, format!("unknown argument `{k}`")));
            }
        }
        let positional: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                named
                    .iter()
                    .find(|(k, _)| k == &a.name)
                    .map(|(_, v)| v.clone())
                    .unwrap_or_default()
            })
            .collect();
        self.bind(&positional)
    }

    /// One-line usage in the tool-call grammar, e.g. `Resize @@ <image_path> <-> <longest_side>`.
    pub fn usage(&self) -> String {
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                if a.required {
                    format!("<{}>", a.name)
                } else {
                    format!("[{}]", a.name)
                }
            })
            .collect();
        if args.is_empty() {
            format!("{} @@", self.name)
        } else {
            format!("{} @@ {}", self.name, args.join(" <-> "))
        }
    }
}

/// A parameter the manual marks as strength-like, via a line such as
/// `@strength txt_cfg step=1.0 max=8.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrengthParam {
    pub arg: String,
    pub step: f64,
    pub max: f64,
}

pub fn strength_params(manual: &str) -> Vec<StrengthParam> {
    manual
        .lines()
        .filter_map(|line| {
            let rest = line.trim().strip_prefix("@strength")?;
            let mut it = rest.split_whitespace();
            let arg = it.next()?.to_string();
            let (mut step, mut max) = (1.0, f64::INFINITY);
            for kv in it {
                let (k, v) = kv.split_once('=')?;
                let v: f64 = v.parse().ok()?;
                match k {
                    "step" => step = v,
                    "max" => max = v,
                    _ => {}
                }
            }
            Some(StrengthParam { arg, step, max })
        })
        .collect()
}

/// Coarse view: names and descriptions only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannerView {
    pub entries: Vec<PlannerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannerEntry {
    pub name: String,
    pub description: String,
}

impl PlannerView {
    pub fn tool_names(&self) -> String {
        self.entries
            .iter()
            .map(|e| e.name.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn tool_descriptions(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}: {}", e.name, e.description.trim()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn serialized_len(&self) -> usize {
        self.tool_names().len() + self.tool_descriptions().len()
    }
}

/// Fine view: the manual and schema of one tool.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutorView<'a> {
    pub spec: &'a ToolSpec,
}

impl ExecutorView<'_> {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn manual(&self) -> &str {
        &self.spec.manual
    }

    pub fn strength_params(&self) -> Vec<StrengthParam> {
        strength_params(&self.spec.manual)
    }
}

/// Default byte budget for the serialized planner view.
pub const DEFAULT_PLANNER_BUDGET: usize = 16 * 1024;

#[derive(Debug, Clone, Default)]
pub struct Registry {
    tools: Vec<ToolSpec>,
    by_key: HashMap<String, usize>,
    planner_budget: Option<usize>,
}

/// Case- and separator-insensitive lookup key.
pub fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_planner_budget(mut self, bytes: usize) -> Self {
        self.planner_budget = Some(bytes);
        self
    }

    pub fn register(&mut self, spec: ToolSpec) -> Result<(), RegistryError> {
        spec.validate()?;
        let key = normalize_name(&spec.name);
        if self.by_key.contains_key(&key) {
            return Err(RegistryError::DuplicateName(spec.name));
        }
        self.by_key.insert(key, self.tools.len());
        self.tools.push(spec);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name).or_else(|| self.resolve(name))
    }

    /// Resolves a possibly mangled name ("instruct diffusion", " RESIZE ").
    pub fn resolve(&self, name: &str) -> Option<&ToolSpec> {
        let key = normalize_name(name);
        self.by_key.get(&key).map(|&i| &self.tools[i])
    }

    pub fn planner_view(&self) -> Result<PlannerView, RegistryError> {
        if self.tools.is_empty() {
            return Err(RegistryError::EmptyRegistry);
        }
        let view = PlannerView {
            entries: self
                .tools
                .iter()
                .map(|t| PlannerEntry {
                    name: t.name.clone(),
                    description: t.description.clone(),
                })
                .collect(),
        };
        let budget = self.planner_budget.unwrap_or(DEFAULT_PLANNER_BUDGET);
        let size = view.serialized_len();
        if size > budget {
            return Err(RegistryError::PromptBudgetExceeded { size, budget });
        }
        Ok(view)
    }

    pub fn executor_view(&self, name: &str) -> Result<ExecutorView<'_>, RegistryError> {
        self.get(name)
            .map(|spec| ExecutorView { spec })
            .ok_or_else(|| RegistryError::UnknownTool(name.to_string()))
    }

    /// Runs a builtin. `inputs` are the payloads of the path arguments in
    /// schema order.
    pub fn invoke_builtin(&self, name: &str, args: &BoundArgs, inputs: &[&Payload]) -> Result<Payload, ToolError> {
        let spec = self.get(name).ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
        if !spec.is_builtin() {
            return Err(ToolError::NotBuiltin(spec.name.clone()));
        }
        builtins::invoke(&spec.name, args, inputs)
    }

    /// Registry restricted to builtin tools.
    pub fn builtins_only(&self) -> Registry {
        let mut r = Registry {
            planner_budget: self.planner_budget,
            ..Default::default()
        };
        for t in self.tools.iter().filter(|t| t.is_builtin()) {
            r.register(t.clone()).expect("subset of a valid registry");
        }
        r
    }

    /// Loads `<dir>/<name>/spec.toml` + `<dir>/<name>/manual.md` for every
    /// subdirectory, in lexical order.
    pub fn load_dir(dir: &Path) -> Result<Registry, RegistryError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| RegistryError::Io { path, source }
        };
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        let mut reg = Registry::new();
        for tool_dir in entries {
            let spec_path = tool_dir.join("spec.toml");
            let manual_path = tool_dir.join("manual.md");
            let spec_text = std::fs::read_to_string(&spec_path).map_err(io(&spec_path))?;
            let manual = std::fs::read_to_string(&manual_path).map_err(io(&manual_path))?;
            let spec = parse_spec(&spec_text, manual).map_err(|reason| RegistryError::Parse {
                path: spec_path.clone(),
                reason,
            })?;
            reg.register(spec)?;
        }
        Ok(reg)
    }

    /// The registry shipped with the crate (`tools/` next to the manifest).
    pub fn shipped() -> Registry {
        let mut reg = Registry::new();
        for (spec, manual) in SHIPPED {
            let spec = parse_spec(spec, manual.to_string()).expect("shipped tool spec parses");
            reg.register(spec).expect("shipped tool spec is valid");
        }
        reg
    }
}

pub fn parse_spec(spec_toml: &str, manual: String) -> Result<ToolSpec, String> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Raw {
        name: String,
        description: String,
        kind: String,
        endpoint: Option<String>,
        #[serde(default)]
        args: Vec<ArgSpec>,
    }
    let raw: Raw = toml::from_str(spec_toml).map_err(|e| e.to_string())?;
    let kind = match (raw.kind.as_str(), raw.endpoint) {
        ("builtin", None) => ToolKind::Builtin,
        ("external", Some(endpoint)) => ToolKind::External { endpoint },
        ("external", None) => return Err("external tool needs an `endpoint`".into()),
        (k, _) => return Err(format!("unknown tool kind `{k}`")),
    };
    Ok(ToolSpec {
        name: raw.name,
        description: raw.description,
        manual,
        args: raw.args,
        kind,
    })
}

macro_rules! shipped_tools {
    ($($name:literal),* $(,)?) => {
        &[$((
            include_str!(concat!("../tools/", $name, "/spec.toml")),
            include_str!(concat!("../tools/", $name, "/manual.md")),
        )),*]
    };
}

/// Builtins first, in the order the planner sees them, then external tools.
static SHIPPED: &[(&str, &str)] = shipped_tools![
    "Resize",
    "Crop",
    "Paste",
    "Blending",
    "RGB2Gray",
    "GaussianBlur",
    "RotateClockwise",
    "RotateCounterClockwise",
    "EnhanceColor",
    "FlipHorizontal",
    "AddLogo",
    "AddWatermark",
    "GetSize",
    "ImageExpand",
    "InstructDiffusion",
    "Edict",
    "Prompt2Prompt",
    "GroundingDINO",
    "Inpainting",
    "LLaVA",
    "ImageDifferenceLLaVA",
    "AestheticScore",
];

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn spec(name: &str) -> ToolSpec {
        ToolSpec {
            name: name.into(),
            description: format!("{name} does one thing."),
            manual: format!("Manual for {name}."),
            args: vec![ArgSpec {
                name: "image_path".into(),
                kind: ArgKind::Path,
                required: true,
                default: None,
                choices: vec![],
            }],
            kind: ToolKind::Builtin,
        }
    }

    #[test]
    fn duplicate_names_rejected_case_insensitively() {
        let mut r = Registry::new();
        r.register(spec("Resize")).unwrap();
        assert!(matches!(r.register(spec("Resize")), Err(RegistryError::DuplicateName(_))));
        assert!(matches!(r.register(spec("resize")), Err(RegistryError::DuplicateName(_))));
    }

    #[test]
    fn empty_manual_and_bad_schema_rejected() {
        let mut r = Registry::new();
        let mut s = spec("A");
        s.manual = "  ".into();
        assert!(matches!(r.register(s), Err(RegistryError::EmptyManual(_))));

        let mut s = spec("B");
        s.args.push(ArgSpec {
            name: "n".into(),
            kind: ArgKind::Integer,
            required: true,
            default: Some(toml::Value::Integer(3)),
            choices: vec![],
        });
        assert!(matches!(r.register(s), Err(RegistryError::MalformedSchema { .. })));

        let mut s = spec("C");
        s.args.push(ArgSpec {
            name: "n".into(),
            kind: ArgKind::Integer,
            required: false,
            default: Some(toml::Value::String("many".into())),
            choices: vec![],
        });
        assert!(matches!(r.register(s), Err(RegistryError::MalformedSchema { .. })));
    }

    #[test]
    fn planner_view_preserves_order_and_needs_tools() {
        let mut r = Registry::new();
        assert!(matches!(r.planner_view(), Err(RegistryError::EmptyRegistry)));
        r.register(spec("Zeta")).unwrap();
        r.register(spec("Alpha")).unwrap();
        let v = r.planner_view().unwrap();
        assert_eq!(v.entries.len(), 2);
        assert_eq!(v.entries[0].name, "Zeta");
    }

    #[test]
    fn planner_budget_enforced() {
        let mut r = Registry::new().with_planner_budget(20);
        r.register(spec("Resize")).unwrap();
        assert!(matches!(
            r.planner_view(),
            Err(RegistryError::PromptBudgetExceeded { .. })
        ));
    }

    #[test]
    fn bind_fills_defaults_and_rejects_surplus() {
        let reg = Registry::shipped();
        let s = reg.get("AddWatermark").unwrap();
        let b = s.bind(&["a.png".into(), "w.png".into()]).unwrap();
        assert_eq!(b[2], ("alpha".to_string(), ArgValue::Real(0.5)));
        let err = s.bind(&["a".into(), "b".into(), "0.3".into(), "x".into()]);
        assert!(matches!(err, Err(ToolError::ArgValidation { .. })));
        let r = reg.get("Resize").unwrap();
        assert!(r.bind(&["a.png".into(), "big".into()]).is_err());
        assert!(r.bind(&["a.png".into()]).is_err());
    }

    #[test]
    fn strength_marker_parses() {
        let p = strength_params("text\n@strength txt_cfg step=1.0 max=8.0\nmore");
        assert_eq!(
            p,
            vec![StrengthParam {
                arg: "txt_cfg".into(),
                step: 1.0,
                max: 8.0
            }]
        );
    }

    #[test]
    fn shipped_registry_has_all_tools() {
        let r = Registry::shipped();
        assert_eq!(r.len(), 22);
        assert_eq!(r.tools().iter().filter(|t| t.is_builtin()).count(), 14);
        assert!(r.resolve("instruct diffusion").is_some());
        assert_eq!(r.builtins_only().len(), 14);
    }
}
