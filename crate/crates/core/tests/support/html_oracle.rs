// Naive two-pass reference scanner for href/src/action values.
//
// Pass one blanks everything that is not live markup (comments, doctype,
// processing instructions, end tags, raw-text element bodies). Pass two walks
// the remaining start tags and lists their URL attributes. No regexes, no
// sharing with the production rewriter.

#![allow(dead_code)]

const URL_ATTRS: [&str; 3] = ["href", "src", "action"];
const RAW: [&str; 6] = ["script", "style", "textarea", "title", "xmp", "plaintext"];

#[derive(Debug, Clone)]
pub struct OracleAttr {
    pub tag: String,
    pub name: String,
    pub value: String,
    /// Every attribute name on the same tag.
    pub siblings: Vec<String>,
}

fn lower(s: &[u8]) -> String {
    String::from_utf8_lossy(s).to_ascii_lowercase()
}

fn starts_ci(hay: &[u8], needle: &str) -> bool {
    hay.len() >= needle.len() && hay[..needle.len()].eq_ignore_ascii_case(needle.as_bytes())
}

/// Pass one.
pub fn mask(doc: &[u8]) -> Vec<u8> {
    let mut out = doc.to_vec();
    let blank = |from: usize, to: usize, out: &mut Vec<u8>| {
        for b in &mut out[from..to] {
            *b = b' ';
        }
    };
    let n = doc.len();
    let mut i = 0;
    while i < n {
        if doc[i] != b'<' {
            i += 1;
            continue;
        }
        let rest = &doc[i..];
        if rest.starts_with(b"<!--") {
            let mut j = i + 4;
            while j < n && !doc[j..].starts_with(b"-->") {
                j += 1;
            }
            let end = (j + 3).min(n);
            blank(i, end, &mut out);
            i = end;
        } else if rest.starts_with(b"<!") || rest.starts_with(b"<?") || rest.starts_with(b"</") {
            let mut j = i;
            while j < n && doc[j] != b'>' {
                j += 1;
            }
            let end = (j + 1).min(n);
            blank(i, end, &mut out);
            i = end;
        } else if rest.len() > 1 && rest[1].is_ascii_alphabetic() {
            let end = tag_end(doc, i);
            let name = tag_name(&doc[i..end]);
            i = end;
            if RAW.contains(&name.as_str()) && !doc[..end].ends_with(b"/>") {
                let close = format!("</{name}");
                let mut j = i;
                while j < n && !starts_ci(&doc[j..], &close) {
                    j += 1;
                }
                blank(i, j, &mut out);
                i = j;
            }
        } else {
            i += 1;
        }
    }
    out
}

fn tag_name(tag: &[u8]) -> String {
    let mut j = 1;
    while j < tag.len() && !tag[j].is_ascii_whitespace() && tag[j] != b'>' && tag[j] != b'/' {
        j += 1;
    }
    lower(&tag[1..j])
}

// End of a start tag: first `>` not inside a quoted attribute value.
fn tag_end(doc: &[u8], start: usize) -> usize {
    let n = doc.len();
    let mut j = start + 1;
    let mut after_eq = false;
    while j < n {
        let b = doc[j];
        if b == b'>' {
            return j + 1;
        }
        if b == b'=' {
            after_eq = true;
        } else if after_eq && (b == b'"' || b == b'\'') {
            j += 1;
            while j < n && doc[j] != b {
                j += 1;
            }
            after_eq = false;
        } else if !b.is_ascii_whitespace() {
            after_eq = false;
        }
        j += 1;
    }
    n
}

/// Pass two.
pub fn url_attributes(doc: &[u8]) -> Vec<OracleAttr> {
    let masked = mask(doc);
    let n = masked.len();
    let mut found = Vec::new();
    let mut i = 0;
    while i < n {
        if masked[i] == b'<' && i + 1 < n && masked[i + 1].is_ascii_alphabetic() {
            let end = tag_end(&masked, i);
            let tag = &masked[i..end];
            let name = tag_name(tag);
            let attrs = split_attributes(&tag[1 + name.len()..]);
            let names: Vec<String> = attrs.iter().map(|(k, _)| k.clone()).collect();
            for (k, v) in attrs {
                if let Some(v) = v {
                    if URL_ATTRS.contains(&k.as_str()) {
                        found.push(OracleAttr {
                            tag: name.clone(),
                            name: k,
                            value: v,
                            siblings: names.clone(),
                        });
                    }
                }
            }
            i = end;
        } else {
            i += 1;
        }
    }
    found
}

fn split_attributes(body: &[u8]) -> Vec<(String, Option<String>)> {
    let mut attrs = Vec::new();
    let n = body.len();
    let mut i = 0;
    loop {
        while i < n && (body[i].is_ascii_whitespace() || body[i] == b'/') {
            i += 1;
        }
        if i >= n || body[i] == b'>' {
            return attrs;
        }
        let s = i;
        i += 1;
        while i < n && !body[i].is_ascii_whitespace() && !b">/=".contains(&body[i]) {
            i += 1;
        }
        let key = lower(&body[s..i]);
        let mut j = i;
        while j < n && body[j].is_ascii_whitespace() {
            j += 1;
        }
        if j < n && body[j] == b'=' {
            j += 1;
            while j < n && body[j].is_ascii_whitespace() {
                j += 1;
            }
            if j < n && (body[j] == b'"' || body[j] == b'\'') {
                let q = body[j];
                let vs = j + 1;
                let mut ve = vs;
                while ve < n && body[ve] != q {
                    ve += 1;
                }
                attrs.push((key, Some(String::from_utf8_lossy(&body[vs..ve]).into_owned())));
                i = ve + 1;
            } else {
                let vs = j;
                while j < n && !body[j].is_ascii_whitespace() && body[j] != b'>' {
                    j += 1;
                }
                attrs.push((key, Some(String::from_utf8_lossy(&body[vs..j]).into_owned())));
                i = j;
            }
        } else {
            attrs.push((key, None));
        }
    }
}

pub fn decode(value: &str) -> String {
    let table = [("&amp;", "&"), ("&lt;", "<"), ("&gt;", ">"), ("&quot;", "\""), ("&apos;", "'")];
    let mut out = String::new();
    let mut rest = value;
    'outer: while !rest.is_empty() {
        if rest.starts_with('&') {
            for (ent, ch) in table {
                if rest.starts_with(ent) {
                    out.push_str(ch);
                    rest = &rest[ent.len()..];
                    continue 'outer;
                }
            }
            if let Some(semi) = rest.find(';') {
                let body = &rest[1..semi];
                let code = if let Some(h) = body.strip_prefix("#x").or(body.strip_prefix("#X")) {
                    u32::from_str_radix(h, 16).ok()
                } else if let Some(d) = body.strip_prefix('#') {
                    d.parse().ok()
                } else {
                    None
                };
                if let Some(c) = code.and_then(char::from_u32) {
                    out.push(c);
                    rest = &rest[semi + 1..];
                    continue;
                }
            }
        }
        let c = rest.chars().next().unwrap();
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

pub fn is_gateway(value: &str, gateway: &str) -> bool {
    match value.strip_prefix(gateway) {
        Some(r) => r.is_empty() || r.starts_with('?') || r.starts_with('&'),
        None => false,
    }
}

fn has_other_scheme(v: &str) -> bool {
    let mut chars = v.chars();
    if !chars.next().is_some_and(|c| c.is_ascii_alphabetic()) {
        return false;
    }
    for c in chars {
        if c == ':' {
            return true;
        }
        if !(c.is_ascii_alphanumeric() || "+-.".contains(c)) {
            return false;
        }
    }
    false
}

/// Whether a value from a document served at an http(s) URL must be routed
/// through the gateway.
pub fn needs_rewrite(raw: &str, gateway: &str) -> bool {
    let v = decode(raw);
    let v = v.trim();
    if v.starts_with('#') || is_gateway(v, gateway) {
        return false;
    }
    let l = v.to_ascii_lowercase();
    if l.starts_with("http:") || l.starts_with("https:") {
        return true;
    }
    !has_other_scheme(v)
}

/// Number of attribute values the rewriter is expected to touch.
pub fn expected_rewrites(doc: &[u8], gateway: &str) -> usize {
    url_attributes(doc)
        .iter()
        .filter(|a| needs_rewrite(&a.value, gateway))
        .count()
}

/// Values in a rewritten document that still escape the gateway.
pub fn escaping_urls(doc: &[u8], gateway: &str) -> Vec<String> {
    url_attributes(doc)
        .into_iter()
        .filter(|a| needs_rewrite(&a.value, gateway))
        .map(|a| a.value)
        .collect()
}
