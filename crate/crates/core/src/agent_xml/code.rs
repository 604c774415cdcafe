//! Fenced code block extraction for coding and debugging responses.

use super::{FailureKind, FormatFailure};
use crate::role::AgentRole;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct FencedBlock {
    pub info: String,
    pub body: String,
}

/// Canonical spelling for common language names and fence tags.
pub fn canonical_language(name: &str) -> String {
    let lowered = name.trim().to_ascii_lowercase();
    let canon = match lowered.as_str() {
        "py" | "py3" | "python3" | "pypy" | "pypy3" => "python",
        "c++" | "cxx" | "cc" | "c++17" | "c++20" | "gnu c++" | "gnu c++17" => "cpp",
        "rs" => "rust",
        "js" | "node" | "nodejs" => "javascript",
        "golang" => "go",
        "sh" | "shell" | "bash" => "sh",
        other => other,
    };
    canon.to_string()
}

fn fence_open(line: &str) -> Option<(char, usize, &str)> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let ch = rest.chars().next()?;
    if ch != '`' && ch != '~' {
        return None;
    }
    let run = rest.chars().take_while(|c| *c == ch).count();
    if run < 3 {
        return None;
    }
    let info = rest[run..].trim();
    if ch == '`' && info.contains('`') {
        return None;
    }
    Some((ch, run, info))
}

fn fence_close(line: &str, ch: char, run: usize) -> bool {
    let trimmed = line.trim_start_matches(' ');
    if line.len() - trimmed.len() > 3 {
        return false;
    }
    let n = trimmed.chars().take_while(|c| *c == ch).count();
    n >= run && trimmed[n..].trim().is_empty()
}

/// All fenced blocks in document order. An unterminated fence runs to the end
/// of the text.
pub(crate) fn fenced_blocks(raw: &str) -> Vec<FencedBlock> {
    let mut blocks = Vec::new();
    let mut current: Option<(char, usize, String, String)> = None;
    for line in raw.split_inclusive('\n') {
        let bare = line.strip_suffix('\n').unwrap_or(line);
        let bare = bare.strip_suffix('\r').unwrap_or(bare);
        match current.as_mut() {
            None => {
                if let Some((ch, run, info)) = fence_open(bare) {
                    current = Some((ch, run, info.to_string(), String::new()));
                }
            }
            Some((ch, run, _, body)) => {
                if fence_close(bare, *ch, *run) {
                    let (_, _, info, body) = current.take().expect("open block");
                    blocks.push(FencedBlock { info, body });
                } else {
                    body.push_str(line);
                }
            }
        }
    }
    if let Some((_, _, info, body)) = current {
        blocks.push(FencedBlock { info, body });
    }
    blocks
}

/// Body of the last fenced block tagged with `language`, else of the last
/// fenced block of any language.
pub fn extract_code(raw: &str, language: &str) -> Result<String, FormatFailure> {
    extract_code_for(AgentRole::Coding, raw, language)
}

pub fn extract_code_for(role: AgentRole, raw: &str, language: &str) -> Result<String, FormatFailure> {
    let blocks = fenced_blocks(raw);
    let wanted = canonical_language(language);
    let tagged = blocks.iter().rev().find(|b| {
        b.info
            .split_whitespace()
            .next()
            .is_some_and(|tag| canonical_language(tag) == wanted)
    });
    tagged
        .or_else(|| blocks.last())
        .map(|b| b.body.clone())
        .ok_or_else(|| FormatFailure::new(role, FailureKind::NoCodeBlock, String::new()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tagged_block_verbatim() {
        let raw = "```python\nimport sys\n\n  x = 1  \n```\n";
        assert_eq!(extract_code(raw, "python").unwrap(), "import sys\n\n  x = 1  \n");
    }

    #[test]
    fn last_block_wins() {
        let raw = "First a snippet:\n```python\nx = int(input())\n```\nNow the full program:\n```python\nn = int(input())\nprint(n * 2)\n```\nDone.";
        assert_eq!(extract_code(raw, "Python3").unwrap(), "n = int(input())\nprint(n * 2)\n");
    }

    #[test]
    fn prefers_matching_language_then_any() {
        let raw = "```python\nprint(1)\n```\n```text\n1\n```\n";
        assert_eq!(extract_code(raw, "python").unwrap(), "print(1)\n");
        assert_eq!(extract_code(raw, "cpp").unwrap(), "1\n");
    }

    #[test]
    fn no_fence_is_no_code_block() {
        let err = extract_code("just prose, print(1)", "python").unwrap_err();
        assert_eq!(err.kind, FailureKind::NoCodeBlock);
    }

    #[test]
    fn tilde_and_unterminated_fences() {
        assert_eq!(extract_code("~~~cpp\nint main(){}\n~~~", "c++").unwrap(), "int main(){}\n");
        assert_eq!(extract_code("```python\nprint(2)\n", "python").unwrap(), "print(2)\n");
    }

    #[test]
    fn longer_fences_contain_shorter_ones() {
        let raw = "````python\ns = '''\n```\n'''\n````\n";
        assert_eq!(extract_code(raw, "python").unwrap(), "s = '''\n```\n'''\n");
    }
}
