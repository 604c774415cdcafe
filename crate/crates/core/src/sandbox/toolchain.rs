use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent_xml::canonical_language;

/// How to build and run a program in one language. Commands are split on
/// whitespace; `{src}`, `{bin}` and `{dir}` are substituted per argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toolchain {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compile_cmd: Option<String>,
    pub run_cmd: String,
    pub file_ext: String,
}

impl Toolchain {
    fn interpreted(run_cmd: &str, file_ext: &str) -> Self {
        Toolchain {
            compile_cmd: None,
            run_cmd: run_cmd.into(),
            file_ext: file_ext.into(),
        }
    }

    fn compiled(compile_cmd: &str, file_ext: &str) -> Self {
        Toolchain {
            compile_cmd: Some(compile_cmd.into()),
            run_cmd: "{bin}".into(),
            file_ext: file_ext.into(),
        }
    }
}

pub(crate) fn expand(template: &str, src: &str, bin: &str, dir: &str) -> Vec<String> {
    template
        .split_whitespace()
        .map(|arg| arg.replace("{src}", src).replace("{bin}", bin).replace("{dir}", dir))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolchainTable(BTreeMap<String, Toolchain>);

impl Default for ToolchainTable {
    fn default() -> Self {
        let mut t = BTreeMap::new();
        t.insert("python".into(), Toolchain::interpreted("python3 {src}", "py"));
        t.insert("sh".into(), Toolchain::interpreted("sh {src}", "sh"));
        t.insert("javascript".into(), Toolchain::interpreted("node {src}", "js"));
        t.insert("cpp".into(), Toolchain::compiled("g++ -O2 -std=c++17 -o {bin} {src}", "cpp"));
        t.insert("c".into(), Toolchain::compiled("gcc -O2 -o {bin} {src} -lm", "c"));
        t.insert("rust".into(), Toolchain::compiled("rustc -O --edition 2021 -o {bin} {src}", "rs"));
        ToolchainTable(t)
    }
}

impl ToolchainTable {
    pub fn empty() -> Self {
        ToolchainTable(BTreeMap::new())
    }

    pub fn get(&self, language: &str) -> Option<&Toolchain> {
        let canon = canonical_language(language);
        self.0
            .get(&canon)
            .or_else(|| self.0.iter().find(|(k, _)| canonical_language(k) == canon).map(|(_, v)| v))
    }

    pub fn insert(&mut self, language: &str, tc: Toolchain) {
        self.0.insert(canonical_language(language), tc);
    }

    /// Layers `overrides` on top of this table.
    pub fn merged(mut self, overrides: &ToolchainTable) -> Self {
        for (k, v) in &overrides.0 {
            self.insert(k, v.clone());
        }
        self
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}
