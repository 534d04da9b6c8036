//! Linearizability check for per-key register histories where every write
//! stores a distinct value (Gibbons and Korach's zone test). A map is
//! linearizable iff each key's projection is, so keys are checked apart.
//!
//! Each value `v` forms a cluster: its write plus every read returning it.
//! With `lo` the earliest end and `hi` the latest start in the cluster, the
//! zone is forward when `lo < hi`. The history is linearizable iff no read
//! ends before its write starts, forward zones are pairwise disjoint, and
//! no backward zone lies strictly inside a forward zone. The initial absent
//! value is a write that finished before time 0.

use std::collections::HashMap;
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use ixframe::trie::KeyTrie;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    /// Stored `value`; `prev` is what the write replaced, if observed.
    Write {
        value: u64,
        prev: Option<Option<u64>>,
    },
    Read {
        value: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub key: u64,
    pub op: Op,
    pub start: u64,
    pub end: u64,
}

#[derive(Default)]
struct Cluster {
    write: Option<(u64, u64)>,
    min_end: u64,
    max_start: u64,
    reads: Vec<(u64, u64)>,
}

/// `Err` describes the first violation found.
pub fn check(history: &[Event]) -> Result<(), String> {
    let mut keys: HashMap<u64, Vec<&Event>> = HashMap::new();
    for e in history {
        keys.entry(e.key).or_default().push(e);
    }
    for (key, events) in keys {
        check_key(key, &events)?;
    }
    Ok(())
}

fn check_key(key: u64, events: &[&Event]) -> Result<(), String> {
    // `None` is the initial absent value.
    let mut clusters: HashMap<Option<u64>, Cluster> = HashMap::new();
    clusters.insert(None, Cluster { write: Some((0, 0)), min_end: 0, max_start: 0, reads: Vec::new() });
    let mut overwritten: HashMap<Option<u64>, u64> = HashMap::new();
    let read = |clusters: &mut HashMap<Option<u64>, Cluster>, v: Option<u64>, s: u64, e: u64| {
        let c = clusters.entry(v).or_insert_with(|| Cluster { min_end: u64::MAX, ..Default::default() });
        c.reads.push((s, e));
        c.min_end = c.min_end.min(e);
        c.max_start = c.max_start.max(s);
    };
    for ev in events {
        match ev.op {
            Op::Write { value, prev } => {
                let c =
                    clusters.entry(Some(value)).or_insert_with(|| Cluster { min_end: u64::MAX, ..Default::default() });
                if c.write.is_some() {
                    return Err(format!("key {key}: value {value} written twice"));
                }
                c.write = Some((ev.start, ev.end));
                c.min_end = c.min_end.min(ev.end);
                c.max_start = c.max_start.max(ev.start);
                if let Some(p) = prev {
                    // An atomic read-modify-write: no two writes may replace
                    // the same value.
                    if let Some(other) = overwritten.insert(p, value) {
                        return Err(format!("key {key}: {other} and {value} both replaced {p:?}"));
                    }
                    read(&mut clusters, p, ev.start, ev.end);
                }
            }
            Op::Read { value } => read(&mut clusters, value, ev.start, ev.end),
        }
    }
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    for (v, c) in &clusters {
        let Some((ws, _)) = c.write else {
            return Err(format!("key {key}: read {v:?}, which was never written"));
        };
        if let Some(&(rs, re)) = c.reads.iter().find(|r| r.1 < ws) {
            return Err(format!("key {key}: read of {v:?} in [{rs}, {re}] ended before its write started at {ws}"));
        }
        if c.min_end < c.max_start {
            forward.push((c.min_end, c.max_start, *v));
        } else {
            backward.push((c.max_start, c.min_end, *v));
        }
    }
    forward.sort();
    for w in forward.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(format!("key {key}: forward zones of {:?} and {:?} overlap", w[0].2, w[1].2));
        }
    }
    for &(a, b, v) in &backward {
        let i = forward.partition_point(|z| z.0 < a);
        if i > 0 && b < forward[i - 1].1 {
            return Err(format!("key {key}: zone of {v:?} lies inside the zone of {:?}", forward[i - 1].2));
        }
    }
    Ok(())
}

/// Runs `writers` and `readers` threads against one trie over `keys` keys
/// for `duration` and returns the recorded history.
///
/// Writers insert unique values, mostly one at a time and sometimes as a
/// multi-key transient commit. Readers use `get` and whole-trie snapshots.
pub fn stress(duration: Duration, writers: usize, readers: usize, keys: u64, seed: u64) -> Vec<Event> {
    let trie = Arc::new(KeyTrie::<u64>::new());
    let barrier = Arc::new(Barrier::new(writers + readers));
    let epoch = Instant::now();
    let clock = move || epoch.elapsed().as_nanos() as u64 + 1;
    let mut handles = Vec::new();
    for t in 0..writers + readers {
        let (trie, barrier) = (trie.clone(), barrier.clone());
        handles.push(std::thread::spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64) << 32);
            let mut log = Vec::new();
            let mut seq = 0u64;
            barrier.wait();
            let deadline = clock() + duration.as_nanos() as u64;
            while clock() < deadline {
                let key = rng.random_range(0..keys);
                if t >= writers {
                    if rng.random_bool(0.1) {
                        let start = clock();
                        let snap = trie.snapshot();
                        let end = clock();
                        for k in 0..keys {
                            log.push(Event { key: k, op: Op::Read { value: snap.get(k).copied() }, start, end });
                        }
                    } else {
                        let start = clock();
                        let value = trie.get(key);
                        log.push(Event { key, op: Op::Read { value }, start, end: clock() });
                    }
                    continue;
                }
                let mut next = || {
                    seq += 1;
                    ((t as u64) << 40) | seq
                };
                if rng.random_bool(0.1) {
                    let picked: Vec<u64> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(0..keys)).collect();
                    loop {
                        let start = clock();
                        let mut tx = trie.begin();
                        let mut writes = Vec::new();
                        for &k in &picked {
                            let value = next();
                            let prev = tx.insert(k, value);
                            writes.push((k, value, prev));
                        }
                        if trie.commit(tx).is_ok() {
                            let end = clock();
                            // Only the last write to a key is visible; earlier
                            // ones in the same commit never existed outside.
                            let mut last: HashMap<u64, (u64, Option<u64>)> = HashMap::new();
                            for (k, value, prev) in writes {
                                let base = last.get(&k).map_or(prev, |w| w.1);
                                last.insert(k, (value, base));
                            }
                            for (k, (value, prev)) in last {
                                log.push(Event { key: k, op: Op::Write { value, prev: Some(prev) }, start, end });
                            }
                            break;
                        }
                    }
                } else {
                    let value = next();
                    let start = clock();
                    let prev = trie.insert(key, value);
                    log.push(Event { key, op: Op::Write { value, prev: Some(prev) }, start, end: clock() });
                }
            }
            log
        }));
    }
    handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
}
