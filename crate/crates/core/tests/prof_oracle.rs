mod support;

use std::collections::BTreeMap;

use mpx_core::prof::merge::{encode, merge_traces, split, MergedEvent};
use mpx_core::prof::report::{aggregate, render, Format, ReportOptions, Scope, SortKey};
use mpx_core::prof::{load_profiles, validate};
use mpx_core::profiler::format::encode_trace;
use mpx_core::profiler::{ProfileIdentity, ThreadAccount, TraceEvent};
use mpx_core::ProbeKind;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use support::oracle::{oracle, random_sequence, Ev, Stats};

fn kind(e: &Ev) -> ProbeKind {
    if e.enter {
        ProbeKind::Enter
    } else {
        ProbeKind::Exit
    }
}

fn sequences(seed: u64, n: usize) -> Vec<Vec<Ev>> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            let s = random_sequence(&mut rng, 20);
            if !s.is_empty() {
                break s;
            }
        })
        .collect()
}

/// `sum / n` as the report prints it: integers stay integers, anything
/// else is rounded half away from zero to three decimals.
fn expected_cell(sum: i64, n: i64) -> String {
    if sum % n == 0 {
        return (sum / n).to_string();
    }
    let sign = if sum < 0 { "-" } else { "" };
    let scaled = (2 * sum.unsigned_abs() as u128 * 1000 + n as u128) / (2 * n as u128);
    format!("{sign}{}.{:03}", scaled / 1000, scaled % 1000)
}

/// Writes one profile per sequence, threads 0.. on node `node`.
fn write_profiles(dir: &std::path::Path, node: u32, seqs: &[Vec<Ev>]) {
    for (t, seq) in seqs.iter().enumerate() {
        let mut acc = ThreadAccount::new();
        for e in seq {
            acc.on_event(&e.name, kind(e), e.ts);
        }
        let id = ProfileIdentity::new(node, t as u32);
        std::fs::write(dir.join(id.profile_file_name()), acc.profile(vec![]).encode()).unwrap();
    }
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    csv::Reader::from_reader(text.as_bytes())
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mean_report_matches_oracle(seed in any::<u64>(), n in 1usize..6) {
        let seqs = sequences(seed, n);
        let dir = tempfile::tempdir().unwrap();
        write_profiles(dir.path(), 0, &seqs);
        let set = load_profiles(dir.path()).unwrap();
        prop_assert!(validate(&set).is_empty());

        // Functions missing from a profile count as zero.
        let mut sums: Stats = BTreeMap::new();
        for s in &seqs {
            for (name, (c, sb, ex, inc)) in oracle(s) {
                let e = sums.entry(name).or_default();
                *e = (e.0 + c, e.1 + sb, e.2 + ex, e.3 + inc);
            }
        }
        let opts = ReportOptions { scope: Scope::Mean, format: Format::Csv, ..ReportOptions::default() };
        let tables = aggregate(&set, Scope::Mean, SortKey::Excl).unwrap();
        let rows = csv_rows(&render(&tables, &opts));
        prop_assert_eq!(rows.len(), sums.len());
        let nn = n as i64;
        for row in &rows {
            let (c, sb, ex, inc) = sums[&row[1]];
            prop_assert_eq!(&row[0], "mean");
            prop_assert_eq!(&row[2], &expected_cell(ex, nn));
            prop_assert_eq!(&row[3], &expected_cell(inc, nn));
            prop_assert_eq!(&row[4], &expected_cell(c, nn));
            prop_assert_eq!(&row[5], &expected_cell(sb, nn));
            prop_assert!(tables[0].value_eq(tables[0].row(&row[1]).unwrap().excl, ex as i128, nn as i128));
        }
        // Sorted by exclusive time, descending, ties by name.
        let keys: Vec<(i64, &str)> = rows.iter().map(|r| (-sums[&r[1]].2, r[1].as_str())).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        prop_assert_eq!(keys, sorted);
    }

    #[test]
    fn total_and_per_thread_match_oracle(seed in any::<u64>(), n in 1usize..4) {
        let seqs = sequences(seed, n);
        let dir = tempfile::tempdir().unwrap();
        write_profiles(dir.path(), 3, &seqs);
        let set = load_profiles(dir.path()).unwrap();
        let per = aggregate(&set, Scope::PerThread, SortKey::Calls).unwrap();
        prop_assert_eq!(per.len(), n);
        for (t, table) in per.iter().enumerate() {
            prop_assert_eq!(&table.label, &format!("3.0.{t}"));
            for (name, (c, sb, ex, inc)) in oracle(&seqs[t]) {
                let r = table.row(&name).unwrap();
                prop_assert_eq!((r.calls, r.subrs, r.excl, r.incl), (c as i128, sb as i128, ex as i128, inc as i128));
            }
        }
        let total = &aggregate(&set, Scope::Total, SortKey::Incl).unwrap()[0];
        prop_assert_eq!(total.divisor, 1);
        let root_incl: i64 = seqs.iter().map(|s| oracle(s)[".application"].3).sum();
        prop_assert_eq!(total.row(".application").unwrap().incl, root_incl as i128);
    }

    #[test]
    fn merge_orders_by_time_node_thread_and_splits_back(seed in any::<u64>(), streams in 1usize..6) {
        let seqs = sequences(seed, streams);
        let dir = tempfile::tempdir().unwrap();
        let mut originals: BTreeMap<(u32, u32), Vec<TraceEvent>> = BTreeMap::new();
        for (i, seq) in seqs.iter().enumerate() {
            let (node, thread) = ((i % 2) as u32, (i / 2) as u32);
            let events: Vec<TraceEvent> = seq
                .iter()
                .map(|e| TraceEvent { ts_us: e.ts, thread, kind: kind(e), name: e.name.clone() })
                .collect();
            let id = ProfileIdentity::new(node, thread);
            std::fs::write(dir.path().join(id.trace_file_name()), encode_trace(&events)).unwrap();
            originals.insert((node, thread), events);
        }
        // Oracle: full sort on (ts, node, thread, position within stream).
        let mut expected: Vec<(u64, u32, u32, usize, MergedEvent)> = Vec::new();
        for (&(node, thread), events) in &originals {
            for (pos, e) in events.iter().enumerate() {
                let m = MergedEvent { ts_us: e.ts_us, node, thread, kind: e.kind, name: e.name.clone() };
                expected.push((e.ts_us, node, thread, pos, m));
            }
        }
        expected.sort_by_key(|x| (x.0, x.1, x.2, x.3));
        let expected: Vec<MergedEvent> = expected.into_iter().map(|x| x.4).collect();

        let merged = merge_traces(dir.path()).unwrap();
        prop_assert_eq!(&merged, &expected);
        let reparsed: Vec<MergedEvent> = encode(&merged).lines().map(|l| MergedEvent::parse(l).unwrap()).collect();
        prop_assert_eq!(&reparsed, &merged);
        prop_assert_eq!(split(&merged), originals);
    }
}

#[test]
fn rounding_oracle_self_check() {
    assert_eq!(expected_cell(10, 4), "2.500");
    assert_eq!(expected_cell(2, 3), "0.667");
    assert_eq!(expected_cell(1, 8), "0.125");
    assert_eq!(expected_cell(1, 16), "0.063");
    assert_eq!(expected_cell(-1, 16), "-0.063");
    assert_eq!(expected_cell(9, 3), "3");
}
