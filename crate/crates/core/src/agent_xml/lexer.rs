//! Tolerant tokenizer for agent XML.
//!
//! A `<` only starts a tag when it is followed by a well-formed tag body;
//! anything else (`a < b`, `x<y`) stays text. Comments, processing
//! instructions and doctype declarations are skipped; CDATA becomes text.

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Token {
    Open { name: String, offset: usize },
    Close { name: String, offset: usize },
    SelfClose { name: String, offset: usize },
    Text { text: String, offset: usize },
}

impl Token {
    #[cfg(test)]
    fn offset(&self) -> usize {
        match self {
            Token::Open { offset, .. }
            | Token::Close { offset, .. }
            | Token::SelfClose { offset, .. }
            | Token::Text { offset, .. } => *offset,
        }
    }
}

fn is_name_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_name_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.' | b':')
}

fn skip_ws(bytes: &[u8], mut i: usize) -> usize {
    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
        i += 1;
    }
    i
}

fn read_name(bytes: &[u8], start: usize) -> Option<usize> {
    if start < bytes.len() && is_name_start(bytes[start]) {
        let mut i = start + 1;
        while i < bytes.len() && is_name_char(bytes[i]) {
            i += 1;
        }
        Some(i)
    } else {
        None
    }
}

enum Tag {
    Token(Token),
    Skip,
}

/// Tries to read a tag at `start` (which holds `<`). Returns the tag and the
/// index just past it.
fn read_tag(src: &str, start: usize) -> Option<(Tag, usize)> {
    let bytes = src.as_bytes();
    let rest = &src[start..];
    if rest.starts_with("<!--") {
        let end = rest.find("-->").map(|e| start + e + 3).unwrap_or(src.len());
        return Some((Tag::Skip, end));
    }
    if rest.starts_with("<![CDATA[") {
        let body_start = start + 9;
        let (body_end, end) = match src[body_start..].find("]]>") {
            Some(e) => (body_start + e, body_start + e + 3),
            None => (src.len(), src.len()),
        };
        let text = src[body_start..body_end].to_string();
        return Some((Tag::Token(Token::Text { text, offset: start }), end));
    }
    if rest.starts_with("<?") {
        let end = rest.find("?>").map(|e| start + e + 2)?;
        return Some((Tag::Skip, end));
    }
    if rest.starts_with("<!") {
        let end = rest.find('>').map(|e| start + e + 1)?;
        return Some((Tag::Skip, end));
    }
    if rest.starts_with("</") {
        let name_start = skip_ws(bytes, start + 2);
        let name_end = read_name(bytes, name_start)?;
        let close = skip_ws(bytes, name_end);
        if bytes.get(close) == Some(&b'>') {
            let name = src[name_start..name_end].to_string();
            return Some((Tag::Token(Token::Close { name, offset: start }), close + 1));
        }
        return None;
    }
    let name_end = read_name(bytes, start + 1)?;
    let name = src[start + 1..name_end].to_string();
    let mut i = name_end;
    loop {
        let after_ws = skip_ws(bytes, i);
        match bytes.get(after_ws) {
            Some(b'>') => {
                return Some((Tag::Token(Token::Open { name, offset: start }), after_ws + 1));
            }
            Some(b'/') if bytes.get(after_ws + 1) == Some(&b'>') => {
                return Some((
                    Tag::Token(Token::SelfClose { name, offset: start }),
                    after_ws + 2,
                ));
            }
            _ => {}
        }
        // attribute: ws name ws = ws quoted
        if after_ws == i {
            return None;
        }
        let attr_end = read_name(bytes, after_ws)?;
        let eq = skip_ws(bytes, attr_end);
        if bytes.get(eq) != Some(&b'=') {
            return None;
        }
        let q = skip_ws(bytes, eq + 1);
        let quote = *bytes.get(q)?;
        if quote != b'"' && quote != b'\'' {
            return None;
        }
        let close = src[q + 1..].find(quote as char)? + q + 1;
        if src[q + 1..close].contains('<') {
            return None;
        }
        i = close + 1;
    }
}

pub(crate) fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp..];
        let decoded = tail.find(';').filter(|&semi| semi <= 10).and_then(|semi| {
            let entity = &tail[1..semi];
            let ch = match entity {
                "lt" => Some('<'),
                "gt" => Some('>'),
                "amp" => Some('&'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                _ if entity.starts_with("#x") || entity.starts_with("#X") => {
                    u32::from_str_radix(&entity[2..], 16).ok().and_then(char::from_u32)
                }
                _ if entity.starts_with('#') => entity[1..].parse().ok().and_then(char::from_u32),
                _ => None,
            };
            ch.map(|c| (c, semi + 1))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &tail[len..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub(crate) fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            _ => out.push(c),
        }
    }
    out
}

pub(crate) fn tokenize(src: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut text = String::new();
    let mut text_start = 0;
    let mut i = 0;
    let flush = |text: &mut String, start: usize, tokens: &mut Vec<Token>| {
        if !text.is_empty() {
            tokens.push(Token::Text {
                text: decode_entities(text),
                offset: start,
            });
            text.clear();
        }
    };
    while i < src.len() {
        let next_lt = src[i..].find('<').map(|p| i + p);
        let Some(lt) = next_lt else {
            if text.is_empty() {
                text_start = i;
            }
            text.push_str(&src[i..]);
            break;
        };
        if lt > i {
            if text.is_empty() {
                text_start = i;
            }
            text.push_str(&src[i..lt]);
        }
        match read_tag(src, lt) {
            Some((Tag::Token(tok @ Token::Text { .. }), end)) => {
                flush(&mut text, text_start, &mut tokens);
                tokens.push(tok);
                i = end;
            }
            Some((Tag::Token(tok), end)) => {
                flush(&mut text, text_start, &mut tokens);
                tokens.push(tok);
                i = end;
            }
            Some((Tag::Skip, end)) => {
                flush(&mut text, text_start, &mut tokens);
                i = end;
            }
            None => {
                if text.is_empty() {
                    text_start = lt;
                }
                text.push('<');
                i = lt + 1;
            }
        }
    }
    flush(&mut text, text_start, &mut tokens);
    tokens
}
