//! Splits an agent reply into design and testbench sources.

use thiserror::Error;

use super::{ChatMessage, Role};
use crate::hdl::{self, ModuleDecl};
use crate::model::{ModelError, RtlBundle};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("only assistant messages carry code")]
    NotAssistant,
    #[error("no fenced code block or module...endmodule span found")]
    NoCodeFound,
    #[error("cannot tell which block is the testbench: {0}")]
    AmbiguousBundle(String),
    #[error("extracted sources are not a valid bundle: {0}")]
    Invalid(#[from] ModelError),
}

struct Unit {
    text: String,
    modules: Vec<ModuleDecl>,
}

impl Unit {
    fn new(raw: &str) -> Option<Unit> {
        let text = format!("{}\n", raw.trim_end());
        let modules = hdl::modules(&text);
        (!modules.is_empty()).then_some(Unit { text, modules })
    }

    fn portless(&self) -> bool {
        self.modules.iter().all(|m| !m.has_ports)
    }

    fn testbench_named(&self) -> bool {
        self.modules.iter().any(|m| hdl::looks_like_testbench_name(&m.name))
    }
}

/// Contents of ``` fenced blocks; an unterminated final fence runs to the end.
fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(lines) => blocks.push(lines.join("\n")),
                None => current = Some(Vec::new()),
            }
        } else if let Some(lines) = current.as_mut() {
            lines.push(line);
        }
    }
    if let Some(lines) = current {
        blocks.push(lines.join("\n"));
    }
    blocks
}

fn bare_module_spans(text: &str) -> Vec<String> {
    hdl::modules(text)
        .into_iter()
        .map(|m| text[m.span].to_string())
        .filter(|s| s.trim_end().ends_with("endmodule"))
        .collect()
}

/// Precedence for the testbench block: (1) the block that instantiates a
/// module from another block, is not itself instantiated, and is port-less
/// or testbench-named; (2) the block with a `tb_*`/`*_tb` module; otherwise
/// ambiguous.
pub fn extract_rtl_bundle(response: &ChatMessage) -> Result<RtlBundle, ExtractError> {
    if response.role != Role::Assistant {
        return Err(ExtractError::NotAssistant);
    }
    let fenced = fenced_blocks(&response.content);
    let raw_units = if fenced.is_empty() {
        bare_module_spans(&response.content)
    } else {
        fenced
    };
    let units: Vec<Unit> = raw_units.iter().filter_map(|s| Unit::new(s)).collect();
    if units.is_empty() {
        return Err(ExtractError::NoCodeFound);
    }
    if units.len() == 1 {
        return Ok(RtlBundle::from_sources(units[0].text.clone(), "")?);
    }

    let instantiates_other = |i: usize| {
        units.iter().enumerate().any(|(j, other)| {
            j != i
                && other
                    .modules
                    .iter()
                    .any(|m| hdl::instantiates(&units[i].text, &m.name))
        })
    };
    let instantiated_by_other = |i: usize| {
        units.iter().enumerate().any(|(j, other)| {
            j != i
                && units[i]
                    .modules
                    .iter()
                    .any(|m| hdl::instantiates(&other.text, &m.name))
        })
    };

    let by_instantiation: Vec<usize> = (0..units.len())
        .filter(|&i| {
            instantiates_other(i)
                && !instantiated_by_other(i)
                && (units[i].portless() || units[i].testbench_named())
        })
        .collect();
    let tb_index = if by_instantiation.len() == 1 {
        by_instantiation[0]
    } else {
        let pool: Vec<usize> = if by_instantiation.is_empty() {
            (0..units.len()).collect()
        } else {
            by_instantiation
        };
        let named: Vec<usize> = pool
            .into_iter()
            .filter(|&i| units[i].testbench_named())
            .collect();
        match named.as_slice() {
            [only] => *only,
            [] => {
                return Err(ExtractError::AmbiguousBundle(format!(
                    "{} code blocks and none is recognizably a testbench",
                    units.len()
                )))
            }
            _ => {
                return Err(ExtractError::AmbiguousBundle(format!(
                    "{} blocks look like testbenches",
                    named.len()
                )))
            }
        }
    };

    let design: Vec<&str> = units
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != tb_index)
        .map(|(_, u)| u.text.as_str())
        .collect();
    Ok(RtlBundle::from_sources(
        design.join("\n"),
        units[tb_index].text.clone(),
    )?)
}
