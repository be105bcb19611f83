//! Fixtures shared by the criterion benches.

use std::path::Path;

use mpx_core::harness::probe::ThreadKey;
use mpx_core::profiler::{Profiler, ProfilerConfig};
use mpx_core::ProbeKind;

/// Machine list with `hosts` distinct addresses.
pub fn machines(hosts: usize) -> Vec<String> {
    (0..hosts)
        .map(|h| format!("10.0.{}.{}", h / 250, h % 250 + 1))
        .collect()
}

/// Writes `threads` profiles of a call tree `depth` deep with `fanout`
/// children per level into `dir`.
pub fn write_profiles(dir: &Path, threads: u64, depth: usize, fanout: usize) {
    let profiler = Profiler::new(ProfilerConfig {
        node: 0,
        dir: dir.to_path_buf(),
        trace: false,
    })
    .expect("profile dir is writable");
    for t in 0..threads {
        let mut ts = 0;
        emit_tree(&profiler, ThreadKey(t), depth, fanout, "f", &mut ts);
    }
    profiler.flush().expect("profiles flush");
}

fn emit_tree(p: &Profiler, thread: ThreadKey, depth: usize, fanout: usize, name: &str, ts: &mut u64) {
    p.on_event(name, ProbeKind::Enter, thread, *ts);
    *ts += 3;
    if depth > 0 {
        for i in 0..fanout {
            emit_tree(p, thread, depth - 1, fanout, &format!("{name}{i}"), ts);
        }
    }
    *ts += 2;
    p.on_event(name, ProbeKind::Exit, thread, *ts);
}
