//! Lenient markup rewriting.
//!
//! The scanner walks the document once, copying bytes through verbatim and
//! only touching the values of `href`, `src` and `action` attributes. It
//! never fails: unterminated tags, stray `<` and broken quoting are passed
//! through as text or closed at end of input.

use url::Url;

use super::url::{canonical_proxy_url, has_http_scheme, RewriteRule};
use crate::ids::InstanceId;

/// Attribute added to rewritten anchors so the client routes the click
/// through the module-update channel instead of navigating.
pub const MODULE_NAV_ATTR: &str = "data-module-nav";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewriteOutput {
    pub body: Vec<u8>,
    pub rewrite_count: usize,
}

/// Elements whose content is raw text up to the matching end tag.
const RAW_TEXT: [&str; 6] = ["script", "style", "textarea", "title", "xmp", "plaintext"];

struct Attr {
    name: String,
    /// Byte range of the value inside the tag, quotes excluded.
    value: Option<(usize, usize)>,
    quote: Option<u8>,
}

pub fn rewrite_document(
    rule: &RewriteRule,
    body: &[u8],
    base_url: &str,
    module: &InstanceId,
) -> RewriteOutput {
    let mut base = Url::parse(base_url).ok();
    let mut out = Vec::with_capacity(body.len() + body.len() / 8);
    let mut count = 0usize;
    let n = body.len();
    let mut i = 0usize;

    while i < n {
        let Some(lt) = memchr(b'<', &body[i..]).map(|p| p + i) else {
            out.extend_from_slice(&body[i..]);
            break;
        };
        out.extend_from_slice(&body[i..lt]);
        let rest = &body[lt..];

        if rest.starts_with(b"<!--") {
            let end = find(&body[lt + 4..], b"-->").map_or(n, |p| lt + 4 + p + 3);
            out.extend_from_slice(&body[lt..end]);
            i = end;
        } else if rest.starts_with(b"<!") || rest.starts_with(b"<?") || rest.starts_with(b"</") {
            let end = memchr(b'>', &body[lt..]).map_or(n, |p| lt + p + 1);
            out.extend_from_slice(&body[lt..end]);
            i = end;
        } else if rest.len() > 1 && rest[1].is_ascii_alphabetic() {
            let (tag_end, name, attrs) = scan_start_tag(body, lt);
            let tag = &body[lt..tag_end];
            let rewritten = rewrite_tag(rule, body, lt, tag_end, &name, &attrs, &mut base, module, &mut count);
            match rewritten {
                Some(new_tag) => out.extend_from_slice(&new_tag),
                None => out.extend_from_slice(tag),
            }
            i = tag_end;
            if RAW_TEXT.contains(&name.as_str()) && !tag.ends_with(b"/>") {
                let close = format!("</{name}");
                let end = find_ci(&body[i..], close.as_bytes()).map_or(n, |p| i + p);
                out.extend_from_slice(&body[i..end]);
                i = end;
            }
        } else {
            out.push(b'<');
            i = lt + 1;
        }
    }

    RewriteOutput {
        body: out,
        rewrite_count: count,
    }
}

/// Scans a start tag beginning at `start` (which holds `<`). Returns the
/// index just past the tag, its lowercased name and its attributes.
fn scan_start_tag(body: &[u8], start: usize) -> (usize, String, Vec<Attr>) {
    let n = body.len();
    let mut i = start + 1;
    while i < n && !is_space(body[i]) && body[i] != b'>' && body[i] != b'/' {
        i += 1;
    }
    let name = String::from_utf8_lossy(&body[start + 1..i]).to_ascii_lowercase();
    let mut attrs = Vec::new();

    loop {
        while i < n && (is_space(body[i]) || body[i] == b'/') {
            i += 1;
        }
        if i >= n {
            return (n, name, attrs);
        }
        if body[i] == b'>' {
            return (i + 1, name, attrs);
        }
        let name_start = i;
        // An attribute name may begin with `=`; it never contains one later.
        i += 1;
        while i < n && !is_space(body[i]) && !matches!(body[i], b'>' | b'/' | b'=') {
            i += 1;
        }
        let attr_name = String::from_utf8_lossy(&body[name_start..i]).to_ascii_lowercase();
        let mut j = i;
        while j < n && is_space(body[j]) {
            j += 1;
        }
        if j < n && body[j] == b'=' {
            j += 1;
            while j < n && is_space(body[j]) {
                j += 1;
            }
            if j < n && (body[j] == b'"' || body[j] == b'\'') {
                let q = body[j];
                let vstart = j + 1;
                let vend = memchr(q, &body[vstart..]).map_or(n, |p| vstart + p);
                attrs.push(Attr {
                    name: attr_name,
                    value: Some((vstart, vend)),
                    quote: Some(q),
                });
                i = (vend + 1).min(n);
            } else {
                let vstart = j;
                while j < n && !is_space(body[j]) && body[j] != b'>' {
                    j += 1;
                }
                attrs.push(Attr {
                    name: attr_name,
                    value: Some((vstart, j)),
                    quote: None,
                });
                i = j;
            }
        } else {
            attrs.push(Attr {
                name: attr_name,
                value: None,
                quote: None,
            });
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn rewrite_tag(
    rule: &RewriteRule,
    body: &[u8],
    start: usize,
    end: usize,
    name: &str,
    attrs: &[Attr],
    base: &mut Option<Url>,
    module: &InstanceId,
    count: &mut usize,
) -> Option<Vec<u8>> {
    let mut edits: Vec<(usize, usize, Option<u8>, String)> = Vec::new();
    let mut anchor_rewritten = false;
    let has_nav = attrs.iter().any(|a| a.name == MODULE_NAV_ATTR);

    for attr in attrs {
        if !matches!(attr.name.as_str(), "href" | "src" | "action") {
            continue;
        }
        let Some((vs, ve)) = attr.value else { continue };
        let raw = decode_entities(&String::from_utf8_lossy(&body[vs..ve]));
        let value = raw.trim_matches(|c: char| c.is_ascii_whitespace());

        let resolved = resolve_target(rule, value, base.as_ref());
        if name == "base" && attr.name == "href" {
            if let Some(b) = base.as_ref().and_then(|b| b.join(value).ok()).or_else(|| Url::parse(value).ok()) {
                *base = Some(b);
            }
        }
        let Some(target) = resolved else { continue };
        let Ok(proxied) = canonical_proxy_url(rule, &target, module) else {
            continue;
        };
        edits.push((vs, ve, attr.quote, proxied));
        *count += 1;
        if name == "a" && attr.name == "href" {
            anchor_rewritten = true;
        }
    }

    if edits.is_empty() {
        return None;
    }
    let mut out = Vec::with_capacity(end - start + 64);
    let mut cursor = start;
    for (vs, ve, quote, url) in edits {
        out.extend_from_slice(&body[cursor..vs]);
        match quote {
            Some(q) => out.extend_from_slice(escape_attr(&url, q).as_bytes()),
            None => {
                out.push(b'"');
                out.extend_from_slice(escape_attr(&url, b'"').as_bytes());
                out.push(b'"');
            }
        }
        cursor = ve;
    }
    let tail = &body[cursor..end];
    if anchor_rewritten && !has_nav {
        // Insert before `>` or `/>` of a terminated tag.
        let insert_at = if tail.ends_with(b"/>") {
            tail.len() - 2
        } else if tail.ends_with(b">") {
            tail.len() - 1
        } else {
            tail.len()
        };
        out.extend_from_slice(&tail[..insert_at]);
        if out.last().is_some_and(|b| !is_space(*b)) {
            out.push(b' ');
        }
        out.extend_from_slice(
            format!("{MODULE_NAV_ATTR}=\"{}\"", escape_attr(module.as_str(), b'"')).as_bytes(),
        );
        if tail.ends_with(b"/>") {
            out.push(b' ');
        }
        out.extend_from_slice(&tail[insert_at..]);
    } else {
        out.extend_from_slice(tail);
    }
    Some(out)
}

/// Decides whether an attribute value is rewritten and returns the absolute
/// target if so. Fragment-only references, non-http schemes and URLs already
/// on the gateway are left alone.
pub(crate) fn resolve_target(rule: &RewriteRule, value: &str, base: Option<&Url>) -> Option<String> {
    if value.starts_with('#') || rule.is_gateway_url(value) {
        return None;
    }
    if has_http_scheme(value) {
        return Some(value.to_owned());
    }
    if has_scheme(value) {
        return None;
    }
    let joined = base?.join(value).ok()?;
    if !matches!(joined.scheme(), "http" | "https") {
        return None;
    }
    let s = joined.to_string();
    if rule.is_gateway_url(&s) {
        return None;
    }
    Some(s)
}

fn has_scheme(value: &str) -> bool {
    let mut chars = value.char_indices();
    match chars.next() {
        Some((_, c)) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    for (_, c) in chars {
        match c {
            ':' => return true,
            c if c.is_ascii_alphanumeric() || c == '+' || c == '-' || c == '.' => {}
            _ => return false,
        }
    }
    false
}

/// Decodes the character references that matter inside URLs.
pub(crate) fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_owned();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let semi = rest[..rest.len().min(12)].find(';');
        let decoded = semi.and_then(|end| {
            let ent = &rest[1..end];
            let ch = match ent {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                _ => {
                    let num = if let Some(hex) = ent.strip_prefix("#x").or_else(|| ent.strip_prefix("#X")) {
                        u32::from_str_radix(hex, 16).ok()
                    } else if let Some(dec) = ent.strip_prefix('#') {
                        dec.parse::<u32>().ok()
                    } else {
                        None
                    };
                    num.and_then(char::from_u32)
                }
            };
            ch.map(|c| (c, end + 1))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn escape_attr(value: &str, quote: u8) -> String {
    let mut out = String::with_capacity(value.len() + 8);
    for c in value.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '"' if quote == b'"' => out.push_str("&quot;"),
            '\'' if quote == b'\'' => out.push_str("&#39;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            c => out.push(c),
        }
    }
    out
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | b'\x0c')
}

fn memchr(needle: u8, hay: &[u8]) -> Option<usize> {
    hay.iter().position(|&b| b == needle)
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn find_ci(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len())
        .position(|w| w.eq_ignore_ascii_case(needle))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule() -> RewriteRule {
        RewriteRule::new("http://gw.test/proxy").unwrap()
    }

    fn run(html: &str) -> (String, usize) {
        let out = rewrite_document(&rule(), html.as_bytes(), "http://site.test/dir/page.html", &"m1".into());
        (String::from_utf8(out.body).unwrap(), out.rewrite_count)
    }

    #[test]
    fn anchor_gets_proxied_and_marked() {
        let (out, n) = run(r#"<a href="http://webservice.com/x">go</a>"#);
        assert_eq!(n, 1);
        assert_eq!(
            out,
            r#"<a href="http://gw.test/proxy?url=http%3A%2F%2Fwebservice.com%2Fx&amp;module=m1" data-module-nav="m1">go</a>"#
        );
    }

    #[test]
    fn no_urls_is_identity() {
        let html = "<html><body><p class=x>Hello &amp; bye</p><br/></body></html>";
        let (out, n) = run(html);
        assert_eq!(n, 0);
        assert_eq!(out, html);
    }

    #[test]
    fn relative_urls_resolve_against_base() {
        let (out, n) = run(r#"<img src="../img/a.png"><form action=submit></form>"#);
        assert_eq!(n, 2);
        assert!(out.contains("url=http%3A%2F%2Fsite.test%2Fimg%2Fa.png"));
        assert!(out.contains(r#"action="http://gw.test/proxy?url=http%3A%2F%2Fsite.test%2Fdir%2Fsubmit&amp;module=m1""#));
    }

    #[test]
    fn leaves_fragments_and_other_schemes() {
        let html = r##"<a href="#top">t</a><a href="mailto:x@y">m</a><a href="javascript:void(0)">j</a><img src="data:image/png;base64,AA">"##;
        let (out, n) = run(html);
        assert_eq!(n, 0);
        assert_eq!(out, html);
    }

    #[test]
    fn skips_comments_and_scripts() {
        let html = r#"<!-- <a href="http://x.test/"> --><script>var s = '<a href="http://y.test/">';</script><style>a{}</style>"#;
        let (out, n) = run(html);
        assert_eq!(n, 0);
        assert_eq!(out, html);
    }

    #[test]
    fn idempotent() {
        let html = r#"<a href='https://a.test/?q=1&amp;r=2'>a</a><img src=//cdn.test/i.png /><a href="/p" data-module-nav="m1">p</a>"#;
        let first = rewrite_document(&rule(), html.as_bytes(), "https://site.test/", &"m1".into());
        assert_eq!(first.rewrite_count, 3);
        let second = rewrite_document(&rule(), &first.body, "https://site.test/", &"m1".into());
        assert_eq!(second.rewrite_count, 0);
        assert_eq!(second.body, first.body);
        let text = String::from_utf8(first.body).unwrap();
        // Entity-decoded before encoding.
        assert!(text.contains("url=https%3A%2F%2Fa.test%2F%3Fq%3D1%26r%3D2"));
        assert_eq!(text.matches("data-module-nav").count(), 2);
    }

    #[test]
    fn base_element_changes_resolution() {
        let (out, n) = run(r#"<base href="http://other.test/root/"><a href="x">x</a>"#);
        assert_eq!(n, 2);
        assert!(out.contains("url=http%3A%2F%2Fother.test%2Froot%2Fx"));
    }

    #[test]
    fn self_closing_anchor_keeps_xhtml_shape() {
        let (out, _) = run(r#"<a href="http://a.test/"/>"#);
        assert!(out.ends_with(r#" data-module-nav="m1" />"#), "{out}");
    }

    #[test]
    fn garbage_never_panics() {
        for html in ["<", "<a", "<a href=", "<a href=\"http://x", "</", "<!--", "<script>", "<<a>>", "<a =x href=y>"] {
            let _ = run(html);
        }
    }

    #[test]
    fn entity_decoding() {
        assert_eq!(decode_entities("a&amp;b&#38;c&#x26;d&nbsp;e&"), "a&b&c&d&nbsp;e&");
    }
}
