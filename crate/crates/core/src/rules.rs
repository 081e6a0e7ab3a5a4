//! Log parse rules, shipped as data so a new tool needs no code changes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use regex::{Regex, RegexSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Category, CoverageMetric, Severity};

/// Rules for Icarus Verilog compile/simulation logs and Covered reports.
pub const ICARUS_COVERED: &str = include_str!("../rules/icarus-covered.toml");

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule file: {0}")]
    Format(String),
    #[error("rule {section}[{index}]: {why}")]
    BadRule {
        section: &'static str,
        index: usize,
        why: String,
    },
    #[error("unknown rule set {0:?}")]
    Unknown(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticRule {
    pub pattern: String,
    pub severity: Severity,
    pub category: Category,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternRule {
    pub pattern: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionRule {
    pub pattern: String,
    /// A metric name, or "ignore" for sections whose rows must not count.
    pub metric: String,
}

/// Serialized form of a rule set, as stored in `<tool_id>.toml`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParseRuleSet {
    pub tool_id: String,
    #[serde(default)]
    pub compile_ignore: Vec<String>,
    #[serde(default)]
    pub compile: Vec<DiagnosticRule>,
    #[serde(default)]
    pub assertion: Vec<PatternRule>,
    #[serde(default)]
    pub mismatch: Vec<PatternRule>,
    #[serde(default)]
    pub coverage_section: Vec<SectionRule>,
    #[serde(default)]
    pub coverage_row: Vec<PatternRule>,
}

impl ParseRuleSet {
    pub fn from_toml(text: &str) -> Result<Self, RuleError> {
        toml::from_str(text).map_err(|e| RuleError::Format(e.to_string()))
    }

    pub fn compile_rules(&self) -> Result<RuleSet, RuleError> {
        RuleSet::new(self)
    }
}

pub(crate) struct RuleList {
    pub set: RegexSet,
    pub rules: Vec<Regex>,
}

impl RuleList {
    fn new(section: &'static str, patterns: &[&str], required: &[&[&str]]) -> Result<Self, RuleError> {
        let mut rules = Vec::with_capacity(patterns.len());
        for (index, p) in patterns.iter().enumerate() {
            let re = Regex::new(p).map_err(|e| RuleError::BadRule {
                section,
                index,
                why: e.to_string(),
            })?;
            let names: Vec<&str> = re.capture_names().flatten().collect();
            for alternatives in required {
                if !alternatives.iter().any(|a| names.contains(a)) {
                    return Err(RuleError::BadRule {
                        section,
                        index,
                        why: format!("pattern must capture one of {alternatives:?}"),
                    });
                }
            }
            rules.push(re);
        }
        let set = RegexSet::new(patterns).map_err(|e| RuleError::BadRule {
            section,
            index: 0,
            why: e.to_string(),
        })?;
        Ok(RuleList { set, rules })
    }

    /// First rule matching `line`, with its captures.
    pub fn first_match<'t>(&self, line: &'t str) -> Option<(usize, regex::Captures<'t>)> {
        let index = self.set.matches(line).iter().next()?;
        self.rules[index].captures(line).map(|c| (index, c))
    }

    #[cfg(test)]
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// A validated, compiled rule set.
pub struct RuleSet {
    pub tool_id: String,
    pub(crate) compile_ignore: RegexSet,
    pub(crate) compile: RuleList,
    pub(crate) compile_meta: Vec<(Severity, Category)>,
    pub(crate) assertion: RuleList,
    pub(crate) mismatch: RuleList,
    pub(crate) coverage_section: RuleList,
    pub(crate) section_metric: Vec<Option<CoverageMetric>>,
    pub(crate) coverage_row: RuleList,
}

fn patterns<T>(rules: &[T], f: impl Fn(&T) -> &str) -> Vec<&str> {
    rules.iter().map(f).collect()
}

impl RuleSet {
    pub fn new(spec: &ParseRuleSet) -> Result<Self, RuleError> {
        let compile_ignore = RegexSet::new(&spec.compile_ignore).map_err(|e| RuleError::BadRule {
            section: "compile_ignore",
            index: 0,
            why: e.to_string(),
        })?;
        let compile = RuleList::new("compile", &patterns(&spec.compile, |r| &r.pattern), &[&["message"]])?;
        let assertion = RuleList::new(
            "assertion",
            &patterns(&spec.assertion, |r| &r.pattern),
            &[&["message"]],
        )?;
        let mismatch = RuleList::new(
            "mismatch",
            &patterns(&spec.mismatch, |r| &r.pattern),
            &[&["count", "message"]],
        )?;
        let coverage_section =
            RuleList::new("coverage_section", &patterns(&spec.coverage_section, |r| &r.pattern), &[])?;
        let mut section_metric = Vec::new();
        for (index, rule) in spec.coverage_section.iter().enumerate() {
            if rule.metric == "ignore" {
                section_metric.push(None);
            } else {
                section_metric.push(Some(CoverageMetric::parse(&rule.metric).ok_or_else(|| {
                    RuleError::BadRule {
                        section: "coverage_section",
                        index,
                        why: format!("unknown metric {:?}", rule.metric),
                    }
                })?));
            }
        }
        let coverage_row = RuleList::new(
            "coverage_row",
            &patterns(&spec.coverage_row, |r| &r.pattern),
            &[&["covered"], &["total"]],
        )?;
        Ok(RuleSet {
            tool_id: spec.tool_id.clone(),
            compile_ignore,
            compile_meta: spec.compile.iter().map(|r| (r.severity, r.category)).collect(),
            compile,
            assertion,
            mismatch,
            coverage_section,
            section_metric,
            coverage_row,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, RuleError> {
        ParseRuleSet::from_toml(text)?.compile_rules()
    }

    /// Built-in rule sets by name.
    pub fn builtin(name: &str) -> Result<Self, RuleError> {
        match name {
            "icarus-covered" | "icarus" | "stub" => Self::from_toml(ICARUS_COVERED),
            other => Err(RuleError::Unknown(other.to_string())),
        }
    }

    /// Looks for `<name>.toml` under `dir` first, then falls back to the
    /// built-in sets.
    pub fn resolve(name: &str, dir: Option<&Path>) -> Result<Self, RuleError> {
        if let Some(dir) = dir {
            let path = dir.join(format!("{name}.toml"));
            if path.is_file() {
                return Self::from_toml(&fs::read_to_string(path)?);
            }
        }
        Self::builtin(name)
    }
}

/// Every `*.toml` rule file in `dir`, keyed by its `tool_id`.
pub fn load_rule_dir(dir: &Path) -> Result<BTreeMap<String, ParseRuleSet>, RuleError> {
    let mut out = BTreeMap::new();
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    for path in paths {
        let set = ParseRuleSet::from_toml(&fs::read_to_string(&path)?)?;
        set.compile_rules()?;
        out.insert(set.tool_id.clone(), set);
    }
    Ok(out)
}
