// Brute-force reference merge: concatenate, stable insertion sort, linear
// dedupe keeping the first copy, truncate.

#![allow(dead_code)]

use chrono::{DateTime, Duration, TimeZone, Utc};
use dashgate_core::feeds::FeedItem;
use rand::rngs::StdRng;
use rand::Rng;

fn before(a: &FeedItem, b: &FeedItem) -> bool {
    if a.published_at != b.published_at {
        return a.published_at > b.published_at;
    }
    if a.source != b.source {
        return a.source < b.source;
    }
    a.id < b.id
}

pub fn brute_force_merge(lists: &[Vec<FeedItem>], max_items: usize) -> Vec<FeedItem> {
    let mut all: Vec<FeedItem> = Vec::new();
    for list in lists {
        for item in list {
            all.push(item.clone());
        }
    }
    for i in 1..all.len() {
        let mut j = i;
        while j > 0 && before(&all[j], &all[j - 1]) {
            all.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut out: Vec<FeedItem> = Vec::new();
    for item in all {
        if !out.iter().any(|o| o.id == item.id) {
            out.push(item);
        }
    }
    out.truncate(max_items);
    out
}

fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2010, 5, 1, 12, 0, 0).unwrap()
}

/// `feeds` lists of `per_feed` items with deliberately colliding ids,
/// timestamps and sources.
pub fn random_lists(rng: &mut StdRng, feeds: usize, per_feed: usize) -> Vec<Vec<FeedItem>> {
    let id_pool = (feeds * per_feed / 2).max(1);
    (0..feeds)
        .map(|_| {
            let source = format!("http://feed{}.test/rss", rng.gen_range(0..feeds.max(2)));
            (0..per_feed)
                .map(|_| {
                    let id = format!("id-{}", rng.gen_range(0..id_pool));
                    FeedItem {
                        title: format!("t{}", rng.gen_range(0..1000)),
                        link: Some(format!("http://x.test/{id}")),
                        published_at: epoch() + Duration::minutes(rng.gen_range(0..30)),
                        synthetic_time: false,
                        summary: None,
                        enclosure_url: None,
                        source: source.clone(),
                        id,
                    }
                })
                .collect()
        })
        .collect()
}
