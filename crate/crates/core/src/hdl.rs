//! Lightweight lexical scanning of Verilog/SystemVerilog text.
//!
//! No parsing: just enough to find module declarations, their port lists and
//! instantiations of known modules. All positions are byte offsets into the
//! original text.

use std::sync::LazyLock;

use regex::Regex;

static MODULE_DECL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:module|macromodule)\s+(?:(?:automatic|static)\s+)?([A-Za-z_][A-Za-z0-9_$]*)")
        .unwrap()
});
static ENDMODULE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bendmodule\b").unwrap());

const KEYWORDS: &[&str] = &[
    "always", "and", "assign", "automatic", "begin", "buf", "case", "casex", "casez", "cell",
    "default", "defparam", "else", "end", "endcase", "endfunction", "endgenerate", "endmodule",
    "endtask", "for", "forever", "function", "generate", "genvar", "if", "initial", "inout",
    "input", "integer", "localparam", "logic", "macromodule", "module", "nand", "negedge", "nor",
    "not", "or", "output", "parameter", "posedge", "real", "reg", "repeat", "signed", "task",
    "while", "wire", "xor", "xnor", "bit", "byte", "int", "always_ff", "always_comb",
];

/// A simple (non-escaped) Verilog identifier that is not a reserved word.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$') && !KEYWORDS.contains(&s)
}

/// Blanks out comments and string literal contents, keeping byte length and
/// newlines so offsets and line numbers still line up with the input.
pub fn strip_comments(text: &str) -> String {
    let bytes = text.as_bytes();
    let mut out = bytes.to_vec();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    out[i] = b' ';
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                out[i] = b' ';
                out[i + 1] = b' ';
                i += 2;
                while i < bytes.len() && !(bytes[i] == b'*' && bytes.get(i + 1) == Some(&b'/')) {
                    if bytes[i] != b'\n' {
                        out[i] = b' ';
                    }
                    i += 1;
                }
                for _ in 0..2 {
                    if i < bytes.len() {
                        out[i] = b' ';
                        i += 1;
                    }
                }
            }
            b'"' => {
                i += 1;
                while i < bytes.len() && bytes[i] != b'"' && bytes[i] != b'\n' {
                    if bytes[i] == b'\\' && i + 1 < bytes.len() && bytes[i + 1] != b'\n' {
                        out[i] = b' ';
                        i += 1;
                    }
                    out[i] = b' ';
                    i += 1;
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    // Only ASCII bytes were written over whole characters, so this holds.
    String::from_utf8(out).unwrap_or_else(|e| String::from_utf8_lossy(e.as_bytes()).into_owned())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleDecl {
    pub name: String,
    pub has_ports: bool,
    /// Byte range from the `module` keyword through `endmodule` (or the end
    /// of text when unterminated).
    pub span: std::ops::Range<usize>,
}

/// Module declarations in source order.
pub fn modules(text: &str) -> Vec<ModuleDecl> {
    let clean = strip_comments(text);
    let mut out = Vec::new();
    let mut search_from = 0;
    while let Some(caps) = MODULE_DECL.captures_at(&clean, search_from) {
        let whole = caps.get(0).unwrap();
        let name = caps.get(1).unwrap();
        let has_ports = port_list_nonempty(&clean[name.end()..]);
        let end = ENDMODULE
            .find_at(&clean, name.end())
            .map(|m| m.end())
            .unwrap_or(clean.len());
        out.push(ModuleDecl {
            name: name.as_str().to_string(),
            has_ports,
            span: whole.start()..end,
        });
        search_from = end.max(whole.end());
    }
    out
}

pub fn first_module_name(text: &str) -> Option<String> {
    modules(text).into_iter().next().map(|m| m.name)
}

fn skip_ws(s: &[u8], mut i: usize) -> usize {
    while i < s.len() && s[i].is_ascii_whitespace() {
        i += 1;
    }
    i
}

/// Index just past the parenthesis group opening at `i`, if balanced.
fn skip_parens(s: &[u8], i: usize) -> Option<usize> {
    if s.get(i) != Some(&b'(') {
        return None;
    }
    let mut depth = 0usize;
    for (j, &b) in s.iter().enumerate().skip(i) {
        match b {
            b'(' => depth += 1,
            b')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(j + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn port_list_nonempty(after_name: &str) -> bool {
    let s = after_name.as_bytes();
    let mut i = skip_ws(s, 0);
    if s.get(i) == Some(&b'#') {
        i = skip_ws(s, i + 1);
        match skip_parens(s, i) {
            Some(j) => i = skip_ws(s, j),
            None => return false,
        }
    }
    if s.get(i) != Some(&b'(') {
        return false;
    }
    match skip_parens(s, i) {
        Some(j) => after_name[i + 1..j - 1].chars().any(|c| !c.is_whitespace()),
        None => true,
    }
}

fn read_identifier(s: &[u8], i: usize) -> Option<(String, usize)> {
    let start = i;
    let mut j = i;
    while j < s.len() && (s[j].is_ascii_alphanumeric() || s[j] == b'_' || s[j] == b'$') {
        j += 1;
    }
    if j == start || s[start].is_ascii_digit() {
        return None;
    }
    Some((String::from_utf8_lossy(&s[start..j]).into_owned(), j))
}

/// Instance names of every instantiation of `module_name` in `text`.
pub fn instances_of(text: &str, module_name: &str) -> Vec<String> {
    let clean = strip_comments(text);
    let s = clean.as_bytes();
    let word = match Regex::new(&format!(r"\b{}\b", regex::escape(module_name))) {
        Ok(re) => re,
        Err(_) => return Vec::new(),
    };
    let mut found = Vec::new();
    for m in word.find_iter(&clean) {
        // Skip the declaration itself.
        let before = clean[..m.start()].trim_end();
        if before.ends_with("module") {
            continue;
        }
        let mut i = skip_ws(s, m.end());
        if s.get(i) == Some(&b'#') {
            i = skip_ws(s, i + 1);
            match skip_parens(s, i) {
                Some(j) => i = skip_ws(s, j),
                None => continue,
            }
        }
        let Some((instance, j)) = read_identifier(s, i) else {
            continue;
        };
        let mut k = skip_ws(s, j);
        // Instance arrays: `adder u[3:0] (...)`.
        if s.get(k) == Some(&b'[') {
            while k < s.len() && s[k] != b']' {
                k += 1;
            }
            k = skip_ws(s, k + 1);
        }
        if s.get(k) == Some(&b'(') && !KEYWORDS.contains(&instance.as_str()) {
            found.push(instance);
        }
    }
    found
}

pub fn instantiates(text: &str, module_name: &str) -> bool {
    !instances_of(text, module_name).is_empty()
}

/// The design module a testbench would test: the one `testbench`
/// instantiates, else the first module no other design module instantiates.
pub fn top_module(design: &str, testbench: &str) -> Option<String> {
    let decls = modules(design);
    if let Some(m) = decls.iter().find(|m| instantiates(testbench, &m.name)) {
        return Some(m.name.clone());
    }
    let root = decls.iter().find(|m| {
        !decls
            .iter()
            .any(|other| other.name != m.name && instantiates(&design[other.span.clone()], &m.name))
    });
    root.or(decls.first()).map(|m| m.name.clone())
}

/// Conventional testbench naming: `tb_*` or `*_tb` (also `tb`, `testbench`).
pub fn looks_like_testbench_name(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.starts_with("tb_")
        || lower.ends_with("_tb")
        || lower == "tb"
        || lower == "testbench"
        || lower.ends_with("_testbench")
}
