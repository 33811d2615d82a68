// Mutation fuzzing for the feed parser.

#![allow(dead_code)]

use chrono::{TimeZone, Utc};
use dashgate_core::feeds::{parse_feed, FeedFormat};
use rand::rngs::StdRng;
use rand::Rng;

pub const RSS_SEED: &str = r#"<?xml version="1.0"?>
<rss version="2.0"><channel><title>Wire</title>
<item><guid>a1</guid><title>First &amp; foremost</title><link>http://news.test/a1</link>
<pubDate>Tue, 04 May 2010 10:00:00 GMT</pubDate><description>One</description></item>
<item><title>No guid</title><link>/relative/a2</link><enclosure url="http://img.test/a2.jpg" type="image/jpeg"/></item>
<item><title><![CDATA[<b>cdata</b>]]></title><pubDate>garbage</pubDate></item>
</channel></rss>"#;

pub const ATOM_SEED: &str = r#"<?xml version="1.0" encoding="utf-8"?>
<feed xmlns="http://www.w3.org/2005/Atom"><title>Photos</title>
<entry><id>tag:photos.test,2010:1</id><title>Sunset</title>
<link rel="alternate" href="http://photos.test/1"/><link rel="enclosure" href="http://photos.test/1.jpg"/>
<updated>2010-05-04T10:00:00Z</updated><summary>red sky</summary></entry>
<entry><title>Undated</title><link href="http://photos.test/2"/></entry>
</feed>"#;

const SNIPPETS: [&str; 14] = [
    "<item>", "</item>", "<entry>", "</entry>", "<", ">", "&", "&#x110000;", "<![CDATA[", "]]>",
    "<guid></guid>", "<link href=\"javascript:alert(1)\"/>", "\u{0}", "<rss><feed>",
];

pub fn mutate(rng: &mut StdRng, seed: &[u8]) -> Vec<u8> {
    let mut doc = seed.to_vec();
    for _ in 0..rng.gen_range(1..=4) {
        let len = doc.len();
        match rng.gen_range(0..6) {
            0 if len > 0 => {
                let i = rng.gen_range(0..len);
                doc[i] = rng.gen();
            }
            1 if len > 0 => {
                let a = rng.gen_range(0..len);
                let b = rng.gen_range(a..=len.min(a + 64));
                doc.drain(a..b);
            }
            2 if len > 0 => {
                let a = rng.gen_range(0..len);
                let b = rng.gen_range(a..=len.min(a + 64));
                let chunk = doc[a..b].to_vec();
                let at = rng.gen_range(0..=len);
                doc.splice(at..at, chunk);
            }
            3 => {
                let s = SNIPPETS[rng.gen_range(0..SNIPPETS.len())].as_bytes();
                let at = rng.gen_range(0..=len);
                doc.splice(at..at, s.iter().copied());
            }
            4 if len > 0 => doc.truncate(rng.gen_range(0..len)),
            _ => {
                let at = rng.gen_range(0..=len);
                let junk: Vec<u8> = (0..rng.gen_range(1..8)).map(|_| rng.gen()).collect();
                doc.splice(at..at, junk);
            }
        }
    }
    doc
}

/// Parses `trials` mutants and returns the number of invariant violations.
pub fn run(rng: &mut StdRng, trials: usize) -> usize {
    let fetched = Utc.with_ymd_and_hms(2010, 6, 1, 0, 0, 0).unwrap();
    let source = "http://fuzz.test/feed.xml";
    let mut violations = 0;
    for n in 0..trials {
        let seed = if n % 2 == 0 { RSS_SEED } else { ATOM_SEED };
        let doc = mutate(rng, seed.as_bytes());
        let format = [FeedFormat::Auto, FeedFormat::Rss, FeedFormat::Atom][n % 3];
        if let Ok(parsed) = parse_feed(&doc, format, source, fetched) {
            for item in &parsed.items {
                let link_ok = item
                    .link
                    .as_deref()
                    .is_none_or(|l| l.starts_with("http://") || l.starts_with("https://"));
                let time_ok = !item.synthetic_time || item.published_at == fetched;
                if item.id.is_empty() || !link_ok || !time_ok || item.source != source {
                    violations += 1;
                }
            }
        }
    }
    violations
}
