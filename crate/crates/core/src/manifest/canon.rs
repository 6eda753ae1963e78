//! Canonical form of manifest text, used for hashing.

use ring::digest::{digest, SHA256};

/// Normalizes line endings to LF, strips `//` comments, collapses whitespace
/// runs to a single space, trims lines and drops blank ones. Quoted strings
/// are copied verbatim.
pub fn canonicalize(source: &str) -> String {
    let normalized = source.replace("\r\n", "\n").replace('\r', "\n");
    let mut lines = Vec::new();
    for raw in normalized.lines() {
        let line = canonical_line(raw);
        if !line.is_empty() {
            lines.push(line);
        }
    }
    lines.join("\n")
}

fn canonical_line(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    let mut in_string = false;
    let mut pending_space = false;
    while let Some(c) = chars.next() {
        if in_string {
            out.push(c);
            match c {
                '\\' => {
                    if let Some(next) = chars.next() {
                        out.push(next);
                    }
                }
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '/' if chars.peek() == Some(&'/') => break,
            c if c.is_whitespace() => pending_space = true,
            c => {
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                if c == '"' {
                    in_string = true;
                }
                out.push(c);
            }
        }
    }
    out
}

/// SHA-256 of the canonical form.
pub fn digest_source(source: &str) -> [u8; 32] {
    let d = digest(&SHA256, canonicalize(source).as_bytes());
    let mut out = [0u8; 32];
    out.copy_from_slice(d.as_ref());
    out
}

/// Lowercase hex of [`digest_source`]; this is the manifest id.
pub fn hash_source(source: &str) -> String {
    hex::encode(digest_source(source))
}
