//! Brute-force profiler oracle: rebuilds each call as a closed interval of
//! event indices and derives every statistic by sweeping elementary time
//! segments. Shares no code with the stack-based accounting it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;

pub const ROOT: &str = ".application";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ev {
    pub name: String,
    pub enter: bool,
    pub ts: u64,
}

/// (calls, subrs, excl, incl) per function, root included.
pub type Stats = BTreeMap<String, (i64, i64, i64, i64)>;

struct Interval {
    name: String,
    first: usize,
    last: usize,
}

fn intervals(events: &[Ev]) -> Vec<Interval> {
    let mut out = Vec::new();
    for (i, e) in events.iter().enumerate() {
        if !e.enter {
            continue;
        }
        // The matching exit is where the running balance first drops below
        // its level just before this enter.
        let mut balance = 0i64;
        for (j, f) in events.iter().enumerate().skip(i) {
            balance += if f.enter { 1 } else { -1 };
            if balance == 0 {
                assert_eq!(f.name, e.name, "events {i}..{j} are not properly nested");
                out.push(Interval {
                    name: e.name.clone(),
                    first: i,
                    last: j,
                });
                break;
            }
        }
    }
    out
}

fn contains(outer: &Interval, inner: &Interval) -> bool {
    outer.first < inner.first && inner.last < outer.last
}

fn union_measure(mut spans: Vec<(u64, u64)>) -> u64 {
    spans.sort();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (a, b) in spans {
        cur = match cur {
            Some((ca, cb)) if a <= cb => Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    total + cur.map_or(0, |(a, b)| b - a)
}

/// Statistics of a properly nested, time-ordered event sequence.
pub fn oracle(events: &[Ev]) -> Stats {
    let mut stats = Stats::new();
    if events.is_empty() {
        return stats;
    }
    let ivs = intervals(events);
    let mut excl: BTreeMap<String, u64> = BTreeMap::new();
    let mut root_excl = 0;
    for k in 0..events.len() - 1 {
        let len = events[k + 1].ts - events[k].ts;
        let innermost = ivs
            .iter()
            .filter(|iv| iv.first <= k && iv.last > k)
            .max_by_key(|iv| iv.first);
        match innermost {
            Some(iv) => *excl.entry(iv.name.clone()).or_default() += len,
            None => root_excl += len,
        }
    }
    let mut subrs: BTreeMap<String, i64> = BTreeMap::new();
    let mut root_subrs = 0;
    for iv in &ivs {
        let parent = ivs.iter().filter(|p| contains(p, iv)).max_by_key(|p| p.first);
        match parent {
            Some(p) => *subrs.entry(p.name.clone()).or_default() += 1,
            None => root_subrs += 1,
        }
    }
    let mut by_name: BTreeMap<&str, Vec<&Interval>> = BTreeMap::new();
    for iv in &ivs {
        by_name.entry(&iv.name).or_default().push(iv);
    }
    for (name, list) in by_name {
        let incl = union_measure(
            list.iter()
                .map(|iv| (events[iv.first].ts, events[iv.last].ts))
                .collect(),
        );
        stats.insert(
            name.to_string(),
            (
                list.len() as i64,
                subrs.get(name).copied().unwrap_or(0),
                excl.get(name).copied().unwrap_or(0) as i64,
                incl as i64,
            ),
        );
    }
    let span = events.last().unwrap().ts - events[0].ts;
    stats.insert(ROOT.to_string(), (1, root_subrs, root_excl as i64, span as i64));
    stats
}

/// A random properly nested sequence over a small name pool, so recursion
/// and repeated calls are common. Timestamps never decrease.
pub fn random_sequence(rng: &mut impl Rng, max_calls: usize) -> Vec<Ev> {
    const NAMES: [&str; 5] = ["main", "a", "b", "c", "MPX_Send"];
    let mut out = Vec::new();
    let mut stack: Vec<&str> = Vec::new();
    let mut ts: u64 = rng.gen_range(0..1000);
    let calls = rng.gen_range(0..=max_calls);
    let mut opened = 0;
    while opened < calls || !stack.is_empty() {
        ts += rng.gen_range(0..6);
        let open = opened < calls && (stack.is_empty() || rng.gen_bool(0.55));
        if open {
            let name = NAMES[rng.gen_range(0..NAMES.len())];
            stack.push(name);
            opened += 1;
            out.push(Ev {
                name: name.to_string(),
                enter: true,
                ts,
            });
        } else {
            let name = stack.pop().unwrap();
            out.push(Ev {
                name: name.to_string(),
                enter: false,
                ts,
            });
        }
    }
    out
}
