mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::{key_value, nested_loop_join, random_schema, random_table, sorted};
use ixframe::cluster::{Cluster, ClusterConfig, ReplayLog, Task};
use ixframe::dataframe::{DataFrameOptions, IndexedDataFrame};
use ixframe::partition::CanonicalKey;
use ixframe::rowstore::{ColumnType, Field, Schema, Value};
use ixframe::table::PlainTable;
use ixframe::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TYPES: [ColumnType; 4] = [ColumnType::Int32, ColumnType::Int64, ColumnType::Float64, ColumnType::Utf8];

fn config(executors: usize, partitions: usize, seed: u64) -> ClusterConfig {
    ClusterConfig { executors, partitions, batch_bytes: 64 * 1024, seed, envelope_rows: 64, ..Default::default() }
}

fn kv_table(keys: impl IntoIterator<Item = i64>, tag: i64) -> PlainTable {
    let schema =
        Arc::new(Schema::new(vec![Field::new("k", ColumnType::Int64), Field::new("v", ColumnType::Int64)]).unwrap());
    PlainTable::from_rows(schema, keys.into_iter().map(|k| vec![Value::Int64(k), Value::Int64(tag)])).unwrap()
}

/// A cluster and an in-process dataframe fed the same operations.
struct Pair {
    cluster: Cluster,
    reference: BTreeMap<u64, IndexedDataFrame>,
}

impl Pair {
    fn new(cfg: ClusterConfig, t: &PlainTable) -> Self {
        let opts = DataFrameOptions { partitions: cfg.partitions, batch_bytes: cfg.batch_bytes };
        let df = IndexedDataFrame::create_index(t, 0, &opts).unwrap();
        let mut cluster = Cluster::start(cfg).unwrap();
        assert_eq!(cluster.create_index(t, 0).unwrap(), 1);
        Pair { cluster, reference: BTreeMap::from([(1, df)]) }
    }

    fn append(&mut self, parent: u64, t: &PlainTable) -> u64 {
        let v = self.cluster.append(parent, t).unwrap();
        let df = self.reference[&parent].append_rows_as(t, v).unwrap();
        self.reference.insert(v, df);
        v
    }
}

#[test]
fn all_alive_means_all_local() {
    let mut pair = Pair::new(config(3, 6, 1), &kv_table(0..500, 0));
    pair.cluster.reset_stats();
    for k in 0..50 {
        assert_eq!(pair.cluster.lookup(1, &Value::Int64(k)).unwrap().len(), 1);
    }
    let s = pair.cluster.stats();
    assert_eq!(s.tasks, 50);
    assert_eq!(s.locality(), 1.0);
    assert!(s.recoveries.is_empty());
}

#[test]
fn lookups_match_the_dataframe_for_every_key_type() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for ty in TYPES {
        let schema = random_schema(&mut rng, "a", ty);
        let t = random_table(&mut rng, &schema, 2000, 300, true);
        let mut pair = Pair::new(config(3, 5, 2), &t);
        let df = pair.reference[&1].clone();
        for k in 0..320 {
            let key = key_value(ty, k);
            assert_eq!(sorted(&pair.cluster.lookup(1, &key).unwrap()), sorted(&df.get_rows(&key).unwrap()), "{ty} {k}");
        }
        assert_eq!(sorted(&pair.cluster.scan(1).unwrap()), sorted(&t));
    }
}

#[test]
fn kill_then_lookup_rebuilds_lazily() {
    let mut pair = Pair::new(config(3, 6, 3), &kv_table((0..3000).map(|i| i % 400), 0));
    let v2 = pair.append(1, &kv_table(0..100, 2));
    let before: Vec<_> = (0..400).map(|k| sorted(&pair.cluster.lookup(v2, &Value::Int64(k)).unwrap())).collect();
    let lost = pair.cluster.hosted(1);
    assert_eq!(lost, vec![1, 4]);
    pair.cluster.kill_executor(1).unwrap();
    assert_eq!(pair.cluster.placement(1).0, None);

    let key = (0..).find(|&k| CanonicalKey::from_value(&Value::Int64(k)).unwrap().route(6) == 1).unwrap();
    assert_eq!(sorted(&pair.cluster.lookup(v2, &Value::Int64(key)).unwrap()), before[key as usize]);
    let rec = &pair.cluster.stats().recoveries;
    assert_eq!(rec.len(), 1);
    assert_eq!((rec[0].partition, rec[0].version), (1, v2));
    assert_ne!(rec[0].executor, 1);
    // Partition 4 stays lost until something needs it.
    assert_eq!(pair.cluster.placement(4).0, None);

    for k in 0..400 {
        assert_eq!(sorted(&pair.cluster.lookup(v2, &Value::Int64(k)).unwrap()), before[k as usize]);
    }
    assert_eq!(pair.cluster.stats().recoveries.len(), 2);
    // The older version is rebuilt on demand as well.
    assert_eq!(sorted(&pair.cluster.scan(1).unwrap()), sorted(&pair.reference[&1].scan().unwrap()));
}

#[test]
fn killing_an_idle_executor_changes_nothing() {
    let mut pair = Pair::new(config(4, 2, 4), &kv_table(0..100, 0));
    assert!(pair.cluster.hosted(3).is_empty());
    pair.cluster.kill_executor(3).unwrap();
    pair.cluster.kill_executor(3).unwrap();
    pair.cluster.reset_stats();
    assert_eq!(pair.cluster.scan(1).unwrap().len(), 100);
    assert_eq!(pair.cluster.stats().locality(), 1.0);
    assert!(pair.cluster.stats().recoveries.is_empty());
    assert_eq!(pair.cluster.kill_executor(9), Err(Error::UnknownExecutor(9)));
}

#[test]
fn recovery_reproduces_every_version_after_any_kill_schedule() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for round in 0..6 {
        let mut pair = Pair::new(config(4, 7, round), &kv_table((0..800).map(|i| i % 90), 0));
        for step in 0..12 {
            let versions: Vec<u64> = pair.reference.keys().copied().collect();
            let parent = versions[rng.random_range(0..versions.len())];
            let n = rng.random_range(0..60);
            pair.append(parent, &kv_table((0..n).map(|i| (i * 7 + step) % 120), step));
            let e = rng.random_range(0..4);
            if rng.random_bool(0.3) {
                pair.cluster.kill_executor(e).unwrap();
            } else if rng.random_bool(0.3) {
                pair.cluster.restart_executor(e).unwrap();
            }
            if (0..4).all(|e| !pair.cluster.is_alive(e)) {
                pair.cluster.restart_executor(0).unwrap();
            }
        }
        for (v, df) in &pair.reference {
            assert_eq!(sorted(&pair.cluster.scan(*v).unwrap()), sorted(&df.scan().unwrap()), "round {round} v{v}");
        }
    }
}

#[test]
fn stale_replica_is_refused_and_never_read() {
    let mut pair = Pair::new(config(3, 3, 6), &kv_table((0..300).map(|i| i % 30), 0));
    let key = Value::Int64(7);
    let p = CanonicalKey::from_value(&key).unwrap().route(3);
    let owner = pair.cluster.placement(p).0.unwrap();
    let other = (owner + 1) % 3;
    pair.cluster.replicate_to(p, other).unwrap();
    assert_eq!(pair.cluster.placement(p).1, vec![other]);

    // Both copies serve version 1.
    let v1 = pair.cluster.submit_to(other, Task::lookup(p, 1, key.clone())).unwrap();
    assert_eq!(v1.len(), 10);

    let v2 = pair.append(1, &kv_table([7, 7], 9));
    let err = pair.cluster.submit_to(other, Task::lookup(p, v2, key.clone())).unwrap_err();
    assert_eq!(err, Error::StaleTask { partition: p, expected: v2, found: Some(1) });
    assert_eq!(pair.cluster.submit_to(owner, Task::lookup(p, v2, key.clone())).unwrap().len(), 12);

    // The scheduler may pick the replica; it gets refused and dropped.
    for _ in 0..20 {
        assert_eq!(pair.cluster.lookup(v2, &key).unwrap().len(), 12);
    }
    assert!(pair.cluster.placement(p).1.is_empty());
    assert!(pair.cluster.stats().stale_rejections <= 1);
    assert_eq!(pair.cluster.stats().stale_rejections, pair.cluster.stats().dropped_replicas);
}

#[test]
fn stalled_host_sends_the_task_elsewhere_after_the_wait() {
    let mut pair = Pair::new(config(3, 3, 7), &kv_table((0..300).map(|i| i % 30), 0));
    let key = Value::Int64(4);
    let p = CanonicalKey::from_value(&key).unwrap().route(3);
    let owner = pair.cluster.placement(p).0.unwrap();

    pair.cluster.reset_stats();
    pair.cluster.stall_executor(owner, 2).unwrap();
    assert_eq!(pair.cluster.lookup(1, &key).unwrap().len(), 10);
    assert_eq!((pair.cluster.stats().remote_tasks, pair.cluster.stats().locality_wait_ticks), (0, 1));

    pair.cluster.stall_executor(owner, 100).unwrap();
    assert_eq!(pair.cluster.lookup(1, &key).unwrap().len(), 10);
    let s = pair.cluster.stats();
    assert_eq!((s.remote_tasks, s.locality_wait_ticks), (1, 4));
    assert_eq!(s.recoveries.len(), 1);
    assert_ne!(pair.cluster.placement(p).0, Some(owner));
}

#[test]
fn task_storm_matches_reference_regardless_of_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pair = Pair::new(config(4, 8, 8), &kv_table((0..2000).map(|i| i % 150), 0));
    for i in 0..5 {
        let parent = *pair.reference.keys().last().unwrap();
        pair.append(if i == 3 { 1 } else { parent }, &kv_table((0..40).map(|k| k * 3), i));
    }
    let versions: Vec<u64> = pair.reference.keys().copied().collect();
    let mut tasks = Vec::new();
    for _ in 0..300 {
        let v = versions[rng.random_range(0..versions.len())];
        if rng.random_bool(0.1) {
            tasks.push(Task::scan(rng.random_range(0..8), v));
        } else {
            let key = Value::Int64(rng.random_range(0..160));
            tasks.push(Task::lookup(CanonicalKey::from_value(&key).unwrap().route(8), v, key));
        }
    }
    let expect: Vec<_> = tasks.iter().map(|t| sorted(&single_threaded(&pair.reference, t))).collect();
    for round in 0..3 {
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        order.shuffle(&mut rng);
        let shuffled: Vec<Task> = order.iter().map(|&i| tasks[i].clone()).collect();
        for e in 0..4 {
            if rng.random_bool(0.5) {
                pair.cluster.stall_executor(e, rng.random_range(0..400)).unwrap();
            }
        }
        if round == 1 {
            pair.cluster.replicate_to(0, 3).unwrap();
        }
        let out = pair.cluster.submit(&shuffled);
        for (j, &i) in order.iter().enumerate() {
            assert_eq!(sorted(out[j].as_ref().unwrap()), expect[i], "round {round} task {i}");
        }
    }
}

fn single_threaded(reference: &BTreeMap<u64, IndexedDataFrame>, task: &Task) -> PlainTable {
    let df = &reference[&task.expected_version];
    match &task.kind {
        ixframe::cluster::TaskKind::Lookup { key } => df.get_rows(key).unwrap(),
        _ => {
            let mut out = PlainTable::new(df.schema().clone());
            for r in df.partition(task.partition).scan() {
                out.push_encoded(r.unwrap()).unwrap();
            }
            out
        }
    }
}

#[test]
fn joins_match_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for ty in TYPES {
        let bs = random_schema(&mut rng, "b", ty);
        let ps = random_schema(&mut rng, "p", ty);
        let build = random_table(&mut rng, &bs, 1500, 200, true);
        let probe = random_table(&mut rng, &ps, 300, 250, false);
        let mut pair = Pair::new(config(3, 4, 9), &build);
        let got = pair.cluster.join(1, &probe, 0).unwrap();
        let expect = nested_loop_join(&probe.decode_all().unwrap(), 0, &build.decode_all().unwrap(), 0);
        assert_eq!(sorted(&got), expect, "{ty}");
        assert_eq!(got.schema().len(), ps.len() + bs.len());
        let empty = PlainTable::new(ps.clone());
        assert!(pair.cluster.join(1, &empty, 0).unwrap().is_empty());
    }
}

#[test]
fn shuffle_delivers_exactly_once_under_kills() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = ClusterConfig { duplicate_rate: 0.3, ..config(4, 6, 10) };
    let mut c = Cluster::start(cfg).unwrap();
    let zero = c.shuffle(&kv_table([], 0), 0).unwrap();
    assert_eq!(zero.counts, vec![0; 6]);
    for _ in 0..30 {
        let e = rng.random_range(0..4);
        if rng.random_bool(0.4) {
            c.kill_executor(e).unwrap();
        } else {
            c.restart_executor(e).unwrap();
        }
        let n = rng.random_range(0..3000);
        let t = kv_table((0..n).map(|_| rng.random_range(-500..500)), 0);
        let mut expect = vec![0u64; 6];
        for r in t.rows() {
            let k = CanonicalKey::of_row(t.schema(), r, 0).unwrap();
            expect[k.route(6)] += 1;
        }
        match c.shuffle(&t, 0) {
            Ok(r) => {
                assert_eq!(r.counts, expect);
                assert_eq!(r.counts.iter().sum::<u64>(), n as u64);
                c.release(r.id);
            }
            Err(e) => assert_eq!(e, Error::NoSurvivingExecutor),
        }
    }
    assert!(c.stats().duplicate_envelopes > 0);

    let mut one = Cluster::start(config(2, 1, 0)).unwrap();
    assert_eq!(one.shuffle(&kv_table(0..77, 0), 0).unwrap().counts, vec![77]);
}

#[test]
fn same_seed_same_schedule() {
    let run = |seed: u64| {
        let mut pair = Pair::new(config(4, 8, seed), &kv_table((0..500).map(|i| i % 50), 0));
        pair.cluster.replicate_to(2, 3).unwrap();
        pair.cluster.stall_executor(1, 20).unwrap();
        for k in 0..60 {
            pair.cluster.lookup(1, &Value::Int64(k)).unwrap();
        }
        pair.cluster.kill_executor(0).unwrap();
        pair.cluster.scan(1).unwrap();
        let s = pair.cluster.stats().clone();
        (
            s.schedule_digest,
            s.remote_tasks,
            s.local_tasks,
            s.messages,
            s.network_time,
            (0..8).map(|p| pair.cluster.placement(p)).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11).0, run(12).0);
}

#[test]
fn failures_surface_per_task() {
    let mut pair = Pair::new(config(2, 4, 12), &kv_table(0..100, 0));
    let good = Value::Int64(5);
    let p = CanonicalKey::from_value(&good).unwrap().route(4);
    let out = pair.cluster.submit(&[
        Task::lookup(p, 1, good.clone()),
        Task::lookup(p, 1, Value::Utf8("x".into())),
        Task::lookup(p, 99, good.clone()),
    ]);
    assert_eq!(out[0].as_ref().unwrap().len(), 1);
    assert!(matches!(&out[1], Err(Error::TaskFailed { task: 1, .. })));
    assert!(matches!(&out[2], Err(Error::TaskFailed { task: 2, .. })));
    assert_eq!(pair.cluster.lookup(1, &good).unwrap().len(), 1);
    assert_eq!(pair.cluster.lookup(99, &good).unwrap_err(), Error::UnknownVersion(99));

    pair.cluster.kill_executor(0).unwrap();
    pair.cluster.kill_executor(1).unwrap();
    assert_eq!(pair.cluster.lookup(1, &good).unwrap_err(), Error::NoSurvivingExecutor);
}

#[test]
fn persisted_log_rebuilds_the_cluster_state() {
    let mut pair = Pair::new(config(2, 3, 13), &kv_table((0..400).map(|i| i % 40), 0));
    let v2 = pair.append(1, &kv_table(0..10, 1));
    let v3 = pair.append(1, &kv_table(50..60, 2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.log");
    pair.cluster.log().write_to(&path).unwrap();
    let idx = ReplayLog::read_from(&path).unwrap().index().unwrap();
    assert_eq!(idx.versions().collect::<Vec<_>>(), vec![(1, None), (v2, Some(1)), (v3, Some(1))]);
    for v in [1, v2, v3] {
        assert_eq!(sorted(&idx.rebuild(v).unwrap().scan().unwrap()), sorted(&pair.cluster.scan(v).unwrap()));
    }
}
