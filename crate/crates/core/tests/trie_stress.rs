mod common;

use std::time::Duration;

use common::linearize::{check, stress, Event, Op};

fn w(key: u64, value: u64, prev: Option<u64>, start: u64, end: u64) -> Event {
    Event { key, op: Op::Write { value, prev: Some(prev) }, start, end }
}

fn r(key: u64, value: Option<u64>, start: u64, end: u64) -> Event {
    Event { key, op: Op::Read { value }, start, end }
}

#[test]
fn checker_accepts_linearizable_histories() {
    // Overlapping write and reads may see either value.
    let h = [
        w(0, 1, None, 10, 20),
        r(0, None, 12, 14),
        r(0, Some(1), 11, 13),
        w(0, 2, Some(1), 30, 40),
        r(0, Some(1), 35, 36),
    ];
    assert_eq!(check(&h), Ok(()));
    assert_eq!(check(&[]), Ok(()));
}

#[test]
fn checker_rejects_violations() {
    // Reading the old value after the new write completed.
    let stale = [w(0, 1, None, 10, 20), w(0, 2, Some(1), 30, 40), r(0, Some(1), 50, 60)];
    assert!(check(&stale).is_err());
    // Reading absent after a completed write.
    assert!(check(&[w(0, 1, None, 10, 20), r(0, None, 30, 31)]).is_err());
    // A value nobody wrote.
    assert!(check(&[r(0, Some(9), 1, 2)]).is_err());
    // A read finishing before the write began.
    assert!(check(&[w(0, 1, None, 10, 20), r(0, Some(1), 1, 5)]).is_err());
    // Lost update: two writes replaced the same value.
    assert!(check(&[w(0, 1, None, 1, 2), w(0, 2, Some(1), 3, 4), w(0, 3, Some(1), 5, 6)]).is_err());
    // Reads that disagree on order: 1 then 2, then 1 again.
    let flip = [
        w(0, 1, None, 1, 100),
        w(0, 2, Some(1), 1, 100),
        r(0, Some(2), 10, 11),
        r(0, Some(1), 20, 21),
        r(0, Some(2), 30, 31),
    ];
    assert!(check(&flip).is_err());
    // Keys are independent.
    assert!(check(&[w(0, 1, None, 1, 2), r(1, Some(1), 3, 4)]).is_err());
}

#[test]
fn short_stress_run_is_linearizable() {
    let h = stress(Duration::from_millis(500), 4, 4, 8, 1);
    assert!(h.iter().any(|e| matches!(e.op, Op::Write { .. })));
    assert_eq!(check(&h), Ok(()));
}
