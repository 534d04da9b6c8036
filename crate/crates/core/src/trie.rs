//! Snapshot-capable concurrent hash-array-mapped trie keyed by `u64`.
//!
//! Nodes are immutable once published and shared through `Arc`. Writers copy
//! the path from the root to the modified leaf and publish a new root with a
//! compare-and-swap, so readers never block and never see a half-applied
//! update. A snapshot is a clone of the current root pointer: constant time,
//! no node allocation, and later writes to the live trie cannot reach it
//! because they only ever replace nodes.
//!
//! Bulk writers use a [`Transient`]: it copies a shared node the first time
//! it touches it and mutates privately-owned nodes in place afterwards, then
//! publishes everything with one CAS.

use std::fmt;
use std::mem;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwap;

const BITS: u32 = 5;
const MASK: u64 = (1 << BITS) - 1;
/// Levels needed to consume all 64 hash bits, 5 at a time.
pub const MAX_DEPTH: usize = 13;

/// Bytes charged per node for the `Arc` strong and weak counts.
const ARC_HEADER: usize = 2 * mem::size_of::<usize>();

/// Bijective 64-bit mixer (splitmix64 finalizer). Distinct keys therefore have
/// distinct hashes and always separate within `MAX_DEPTH` levels.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn chunk(hash: u64, level: usize) -> u32 {
    ((hash >> (level as u32 * BITS)) & MASK) as u32
}

#[derive(Clone)]
enum Entry<V> {
    Leaf(u64, V),
    Node(Arc<Branch<V>>),
}

#[derive(Clone)]
struct Branch<V> {
    bitmap: u32,
    entries: Vec<Entry<V>>,
}

impl<V> Branch<V> {
    fn empty() -> Self {
        Branch { bitmap: 0, entries: Vec::new() }
    }

    #[inline]
    fn slot(&self, idx: u32) -> (bool, usize) {
        let bit = 1u32 << idx;
        (self.bitmap & bit != 0, (self.bitmap & (bit - 1)).count_ones() as usize)
    }
}

struct Root<V> {
    branch: Arc<Branch<V>>,
    len: usize,
}

fn make_mut<'a, V: Clone>(node: &'a mut Arc<Branch<V>>, allocs: &AtomicU64) -> &'a mut Branch<V> {
    if Arc::get_mut(node).is_none() {
        *node = Arc::new((**node).clone());
        allocs.fetch_add(1, Ordering::Relaxed);
    }
    Arc::get_mut(node).expect("uniquely owned after copy")
}

fn pair<V>(level: usize, a: (u64, u64, V), b: (u64, u64, V), allocs: &AtomicU64) -> Arc<Branch<V>> {
    debug_assert!(level < MAX_DEPTH, "distinct hashes must separate before the last level");
    allocs.fetch_add(1, Ordering::Relaxed);
    let (ia, ib) = (chunk(a.0, level), chunk(b.0, level));
    if ia == ib {
        let child = pair(level + 1, a, b, allocs);
        return Arc::new(Branch { bitmap: 1 << ia, entries: vec![Entry::Node(child)] });
    }
    let (first, second) = if ia < ib { (a, b) } else { (b, a) };
    Arc::new(Branch {
        bitmap: (1 << ia) | (1 << ib),
        entries: vec![Entry::Leaf(first.1, first.2), Entry::Leaf(second.1, second.2)],
    })
}

fn insert_rec<V: Clone>(
    node: &mut Arc<Branch<V>>,
    hash: u64,
    key: u64,
    value: V,
    level: usize,
    allocs: &AtomicU64,
) -> Option<V> {
    let branch = make_mut(node, allocs);
    let idx = chunk(hash, level);
    let (present, pos) = branch.slot(idx);
    if !present {
        branch.entries.insert(pos, Entry::Leaf(key, value));
        branch.bitmap |= 1 << idx;
        return None;
    }
    match &mut branch.entries[pos] {
        Entry::Leaf(k, v) if *k == key => Some(mem::replace(v, value)),
        Entry::Leaf(k, v) => {
            let (old_key, old_value) = (*k, v.clone());
            let sub = pair(level + 1, (mix64(old_key), old_key, old_value), (hash, key, value), allocs);
            branch.entries[pos] = Entry::Node(sub);
            None
        }
        Entry::Node(child) => insert_rec(child, hash, key, value, level + 1, allocs),
    }
}

fn remove_rec<V: Clone>(node: &mut Arc<Branch<V>>, hash: u64, key: u64, level: usize, allocs: &AtomicU64) -> Option<V> {
    let idx = chunk(hash, level);
    let (present, pos) = node.slot(idx);
    if !present {
        return None;
    }
    // Look before copying so a miss leaves shared nodes untouched.
    match &node.entries[pos] {
        Entry::Leaf(k, _) if *k != key => return None,
        Entry::Node(child) if !contains(child, hash, key, level + 1) => return None,
        _ => {}
    }
    let branch = make_mut(node, allocs);
    let removed = match &mut branch.entries[pos] {
        Entry::Leaf(..) => {
            let Entry::Leaf(_, v) = branch.entries.remove(pos) else { unreachable!() };
            branch.bitmap &= !(1 << idx);
            return Some(v);
        }
        Entry::Node(child) => remove_rec(child, hash, key, level + 1, allocs),
    };
    // Collapse a child left holding a single leaf, drop an empty one.
    if let Entry::Node(child) = &branch.entries[pos] {
        if child.entries.is_empty() {
            branch.entries.remove(pos);
            branch.bitmap &= !(1 << idx);
        } else if child.entries.len() == 1 {
            if let Entry::Leaf(k, v) = &child.entries[0] {
                branch.entries[pos] = Entry::Leaf(*k, v.clone());
            }
        }
    }
    removed
}

fn contains<V>(mut node: &Branch<V>, hash: u64, key: u64, mut level: usize) -> bool {
    loop {
        let (present, pos) = node.slot(chunk(hash, level));
        if !present {
            return false;
        }
        match &node.entries[pos] {
            Entry::Leaf(k, _) => return *k == key,
            Entry::Node(child) => {
                node = child;
                level += 1;
            }
        }
    }
}

fn get_in<V>(mut node: &Branch<V>, key: u64) -> Option<&V> {
    let hash = mix64(key);
    let mut level = 0;
    loop {
        let (present, pos) = node.slot(chunk(hash, level));
        if !present {
            return None;
        }
        match &node.entries[pos] {
            Entry::Leaf(k, v) => return (*k == key).then_some(v),
            Entry::Node(child) => {
                node = child;
                level += 1;
            }
        }
    }
}

fn collect<'a, V>(node: &'a Branch<V>, out: &mut Vec<(u64, &'a V)>) {
    for e in &node.entries {
        match e {
            Entry::Leaf(k, v) => out.push((*k, v)),
            Entry::Node(child) => collect(child, out),
        }
    }
}

fn footprint<V>(node: &Branch<V>) -> usize {
    let own = ARC_HEADER + mem::size_of::<Branch<V>>() + node.entries.len() * mem::size_of::<Entry<V>>();
    own + node
        .entries
        .iter()
        .map(|e| match e {
            Entry::Node(child) => footprint(child),
            Entry::Leaf(..) => 0,
        })
        .sum::<usize>()
}

fn root_bytes<V>() -> usize {
    ARC_HEADER + mem::size_of::<Root<V>>()
}

/// Node counts reachable from a root.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeCounts {
    pub branches: usize,
    pub leaves: usize,
    pub max_depth: usize,
}

fn count<V>(node: &Branch<V>, depth: usize, acc: &mut NodeCounts) {
    acc.branches += 1;
    acc.max_depth = acc.max_depth.max(depth);
    for e in &node.entries {
        match e {
            Entry::Leaf(..) => acc.leaves += 1,
            Entry::Node(child) => count(child, depth + 1, acc),
        }
    }
}

/// Concurrent map from `u64` keys to `V`.
pub struct KeyTrie<V> {
    root: ArcSwap<Root<V>>,
    node_allocs: Arc<AtomicU64>,
}

impl<V: Clone> Default for KeyTrie<V> {
    fn default() -> Self {
        Self::new()
    }
}

impl<V: Clone> KeyTrie<V> {
    pub fn new() -> Self {
        let node_allocs = Arc::new(AtomicU64::new(1));
        KeyTrie { root: ArcSwap::from_pointee(Root { branch: Arc::new(Branch::empty()), len: 0 }), node_allocs }
    }

    /// A live trie whose initial content is `snap`, sharing all of its nodes.
    pub fn from_snapshot(snap: &TrieSnapshot<V>) -> Self {
        KeyTrie { root: ArcSwap::new(snap.root.clone()), node_allocs: Arc::new(AtomicU64::new(0)) }
    }

    pub fn get(&self, key: u64) -> Option<V> {
        let root = self.root.load();
        get_in(&root.branch, key).cloned()
    }

    pub fn contains_key(&self, key: u64) -> bool {
        let root = self.root.load();
        get_in(&root.branch, key).is_some()
    }

    pub fn len(&self) -> usize {
        self.root.load().len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Upsert; returns the displaced value.
    pub fn insert(&self, key: u64, value: V) -> Option<V> {
        let hash = mix64(key);
        loop {
            let current = self.root.load_full();
            let mut branch = current.branch.clone();
            let prev = insert_rec(&mut branch, hash, key, value.clone(), 0, &self.node_allocs);
            let len = current.len + usize::from(prev.is_none());
            if self.publish(&current, Root { branch, len }) {
                return prev;
            }
        }
    }

    pub fn remove(&self, key: u64) -> Option<V> {
        let hash = mix64(key);
        loop {
            let current = self.root.load_full();
            if !contains(&current.branch, hash, key, 0) {
                return None;
            }
            let mut branch = current.branch.clone();
            let prev = remove_rec(&mut branch, hash, key, 0, &self.node_allocs);
            let len = current.len - usize::from(prev.is_some());
            if self.publish(&current, Root { branch, len }) {
                return prev;
            }
        }
    }

    fn publish(&self, expected: &Arc<Root<V>>, next: Root<V>) -> bool {
        let prev = self.root.compare_and_swap(expected, Arc::new(next));
        Arc::ptr_eq(&prev, expected)
    }

    /// Constant-time, allocation-free snapshot of the current content.
    pub fn snapshot(&self) -> TrieSnapshot<V> {
        TrieSnapshot { root: self.root.load_full() }
    }

    /// Starts a batch of private updates against the current root.
    pub fn begin(&self) -> Transient<V> {
        let base = self.root.load_full();
        Transient { branch: base.branch.clone(), len: base.len, base, allocs: self.node_allocs.clone() }
    }

    /// Publishes a transient if nothing else was published since it began;
    /// otherwise hands it back untouched.
    pub fn commit(&self, t: Transient<V>) -> Result<(), Transient<V>> {
        let Transient { base, branch, len, allocs } = t;
        let next = Arc::new(Root { branch, len });
        let prev = self.root.compare_and_swap(&base, next.clone());
        if Arc::ptr_eq(&prev, &base) {
            Ok(())
        } else {
            Err(Transient { base, branch: next.branch.clone(), len, allocs })
        }
    }

    /// Branch nodes allocated by writes to this trie so far.
    pub fn node_allocations(&self) -> u64 {
        self.node_allocs.load(Ordering::Relaxed)
    }
}

impl<V> fmt::Debug for KeyTrie<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyTrie").field("len", &self.root.load().len).finish()
    }
}

/// Private, unpublished updates to a [`KeyTrie`].
pub struct Transient<V> {
    base: Arc<Root<V>>,
    branch: Arc<Branch<V>>,
    len: usize,
    allocs: Arc<AtomicU64>,
}

impl<V: Clone> Transient<V> {
    pub fn get(&self, key: u64) -> Option<&V> {
        get_in(&self.branch, key)
    }

    pub fn insert(&mut self, key: u64, value: V) -> Option<V> {
        let prev = insert_rec(&mut self.branch, mix64(key), key, value, 0, &self.allocs);
        self.len += usize::from(prev.is_none());
        prev
    }

    pub fn remove(&mut self, key: u64) -> Option<V> {
        let hash = mix64(key);
        if !contains(&self.branch, hash, key, 0) {
            return None;
        }
        let prev = remove_rec(&mut self.branch, hash, key, 0, &self.allocs);
        self.len -= usize::from(prev.is_some());
        prev
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Immutable view of a trie at one point in time.
pub struct TrieSnapshot<V> {
    root: Arc<Root<V>>,
}

impl<V> Clone for TrieSnapshot<V> {
    fn clone(&self) -> Self {
        TrieSnapshot { root: self.root.clone() }
    }
}

impl<V: Clone> TrieSnapshot<V> {
    pub fn get(&self, key: u64) -> Option<&V> {
        get_in(&self.root.branch, key)
    }

    pub fn len(&self) -> usize {
        self.root.len
    }

    pub fn is_empty(&self) -> bool {
        self.root.len == 0
    }

    /// Entries in ascending key order.
    pub fn entries(&self) -> Vec<(u64, &V)> {
        let mut out = Vec::with_capacity(self.root.len);
        collect(&self.root.branch, &mut out);
        out.sort_unstable_by_key(|(k, _)| *k);
        out
    }

    /// Owned entries in ascending key order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, V)> + '_ {
        self.entries().into_iter().map(|(k, v)| (k, v.clone()))
    }

    /// Structural size: every node reachable from this snapshot's root, each
    /// charged its header, fixed fields and one slot per entry.
    pub fn footprint_bytes(&self) -> usize {
        root_bytes::<V>() + footprint(&self.root.branch)
    }

    pub fn node_counts(&self) -> NodeCounts {
        let mut acc = NodeCounts::default();
        count(&self.root.branch, 1, &mut acc);
        acc
    }

    /// Whether two snapshots share the same root (no write in between).
    pub fn same_root(&self, other: &TrieSnapshot<V>) -> bool {
        Arc::ptr_eq(&self.root, &other.root)
    }
}

/// Per-node costs used by [`TrieSnapshot::footprint_bytes`].
pub fn node_costs<V>() -> (usize, usize, usize) {
    (root_bytes::<V>(), ARC_HEADER + mem::size_of::<Branch<V>>(), mem::size_of::<Entry<V>>())
}

impl<V: fmt::Debug + Clone> fmt::Debug for TrieSnapshot<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.entries()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, HashMap};

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_get_and_insert() {
        let t = KeyTrie::<u64>::new();
        assert_eq!(t.get(5), None);
        assert_eq!(t.insert(5, 50), None);
        assert_eq!(t.get(5), Some(50));
        assert_eq!(t.insert(5, 51), Some(50));
        assert_eq!(t.get(5), Some(51));
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn random_upserts_match_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = KeyTrie::new();
        let mut shadow = HashMap::new();
        for _ in 0..100_000 {
            let k = rng.random_range(0..20_000u64);
            let v: u64 = rng.random();
            assert_eq!(t.insert(k, v), shadow.insert(k, v));
        }
        assert_eq!(t.len(), shadow.len());
        for (k, v) in &shadow {
            assert_eq!(t.get(*k), Some(*v));
        }
        let snap = t.snapshot();
        let mut sorted: Vec<_> = shadow.into_iter().collect();
        sorted.sort();
        assert_eq!(snap.iter().collect::<Vec<_>>(), sorted);
    }

    #[test]
    fn extreme_keys() {
        let t = KeyTrie::new();
        for k in [0, 1, u64::MAX, u64::MAX - 1, 1 << 63, 31, 32] {
            t.insert(k, k);
        }
        for k in [0, 1, u64::MAX, u64::MAX - 1, 1 << 63, 31, 32] {
            assert_eq!(t.get(k), Some(k));
        }
    }

    #[test]
    fn iteration_sorted() {
        let t = KeyTrie::new();
        t.insert(3, 'a');
        t.insert(1, 'b');
        t.insert(2, 'c');
        assert_eq!(t.snapshot().iter().collect::<Vec<_>>(), vec![(1, 'b'), (2, 'c'), (3, 'a')]);
        assert!(KeyTrie::<u8>::new().snapshot().iter().next().is_none());
    }

    #[test]
    fn snapshot_isolation() {
        let t = KeyTrie::new();
        let empty = t.snapshot();
        assert_eq!(empty.len(), 0);
        t.insert(1, 10u64);
        let s1 = t.snapshot();
        t.insert(2, 20);
        t.insert(1, 11);
        assert_eq!(empty.get(1), None);
        assert_eq!(s1.get(2), None);
        assert_eq!(s1.get(1), Some(&10));
        assert_eq!(s1.len(), 1);
        t.remove(1);
        assert_eq!(s1.get(1), Some(&10));
    }

    #[test]
    fn snapshot_allocates_no_nodes() {
        let t = KeyTrie::new();
        let mut tx = t.begin();
        for k in 0..100_000u64 {
            tx.insert(k, k);
        }
        t.commit(tx).ok().unwrap();
        let before = t.node_allocations();
        let snaps: Vec<_> = (0..100).map(|_| t.snapshot()).collect();
        assert_eq!(t.node_allocations(), before);
        assert!(snaps.windows(2).all(|w| w[0].same_root(&w[1])));
    }

    #[test]
    fn path_copy_bound() {
        let t = KeyTrie::new();
        let mut tx = t.begin();
        for k in 0..50_000u64 {
            tx.insert(k, k);
        }
        t.commit(tx).ok().unwrap();
        let depth = t.snapshot().node_counts().max_depth;
        let _snap = t.snapshot();
        let before = t.node_allocations();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 200;
        for _ in 0..m {
            t.insert(rng.random_range(0..100_000u64), 1);
        }
        // Each single insert copies at most one root-to-leaf path, plus a
        // split chain bounded by the trie depth.
        let allocated = t.node_allocations() - before;
        assert!(allocated <= (m * MAX_DEPTH) as u64, "{allocated}");
        assert!(allocated <= (m * (depth + 2)) as u64, "{allocated} > {m} * ({depth} + 2)");
    }

    #[test]
    fn transient_copies_shared_nodes_once() {
        let t = KeyTrie::new();
        let mut tx = t.begin();
        for k in 0..10_000u64 {
            tx.insert(k, k);
        }
        t.commit(tx).ok().unwrap();
        let snap = t.snapshot();
        let before = t.node_allocations();
        let mut tx = t.begin();
        for k in 0..10_000u64 {
            tx.insert(k, k + 1);
        }
        t.commit(tx).ok().unwrap();
        let copied = t.node_allocations() - before;
        assert!(copied as usize <= snap.node_counts().branches, "{copied}");
        assert_eq!(snap.get(7), Some(&7));
        assert_eq!(t.get(7), Some(8));
    }

    #[test]
    fn commit_conflict_returns_transient() {
        let t = KeyTrie::new();
        let mut tx = t.begin();
        tx.insert(1, 1u64);
        t.insert(2, 2);
        let tx = t.commit(tx).unwrap_err();
        assert_eq!(tx.get(1), Some(&1));
        assert_eq!(t.get(1), None);
    }

    #[test]
    fn removal_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = KeyTrie::new();
        let mut shadow = BTreeMap::new();
        for _ in 0..50_000 {
            let k = rng.random_range(0..2_000u64);
            if rng.random_bool(0.4) {
                assert_eq!(t.remove(k), shadow.remove(&k));
            } else {
                assert_eq!(t.insert(k, k * 3), shadow.insert(k, k * 3));
            }
        }
        let snap = t.snapshot();
        assert_eq!(snap.len(), shadow.len());
        assert_eq!(snap.iter().collect::<Vec<_>>(), shadow.into_iter().collect::<Vec<_>>());
        // Removing everything collapses back to an empty root.
        for (k, _) in snap.iter() {
            t.remove(k);
        }
        assert_eq!(t.snapshot().node_counts(), NodeCounts { branches: 1, leaves: 0, max_depth: 1 });
    }

    /// Independent walk: counts nodes by traversing entries directly rather
    /// than through `footprint`.
    fn walk_oracle<V>(b: &Branch<V>) -> (usize, usize) {
        let mut nodes = 1;
        let mut entries = b.entries.len();
        for e in &b.entries {
            if let Entry::Node(c) = e {
                let (n, en) = walk_oracle(c);
                nodes += n;
                entries += en;
            }
        }
        (nodes, entries)
    }

    #[test]
    fn footprint_matches_node_walk() {
        let (root, node, entry) = node_costs::<u64>();
        let empty = KeyTrie::<u64>::new().snapshot();
        assert_eq!(empty.footprint_bytes(), root + node);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = KeyTrie::new();
        let mut prev = empty.footprint_bytes();
        for n in [10_000usize, 100_000] {
            let mut tx = t.begin();
            while tx.len() < n {
                tx.insert(rng.random(), 0u64);
            }
            t.commit(tx).ok().unwrap();
            let s = t.snapshot();
            let (nodes, entries) = walk_oracle(&s.root.branch);
            let oracle = root + nodes * node + entries * entry;
            let fp = s.footprint_bytes();
            assert!((fp as f64 - oracle as f64).abs() <= 0.01 * oracle as f64);
            assert!(fp > prev);
            prev = fp;
        }
    }
}
