//! Selecting the largest keys from block-resident max-heaps.
//!
//! A heap is any structure exposing node keys and up to a constant number of
//! children per node with the max-heap property. Several heaps are combined by
//! arranging their roots into an array max-heap (linear make-heap); each root
//! then has its original children plus at most two array children.
//!
//! Selection is best-first: pop the largest frontier node `t` times and push
//! its children. Every heap node whose key is inspected counts as one node
//! read, so at most `2t + 1` reads happen. The root array of a concatenation
//! is built in memory from keys the caller already holds; inspecting it is
//! counted separately.

use std::collections::BinaryHeap;

pub trait HeapSource {
    type Node: Copy + Eq + std::fmt::Debug;
    fn key(&self, n: Self::Node) -> u64;
    /// Appends the heap children of `n` (keys not larger than `n`'s).
    fn children(&self, n: Self::Node, out: &mut Vec<Self::Node>);
}

/// Roots of several heaps arranged as an array max-heap.
#[derive(Clone, Debug)]
pub struct ConcatHeap<N> {
    roots: Vec<(u64, N)>,
    /// Node writes spent by make-heap.
    pub writes: usize,
}

impl<N: Copy> ConcatHeap<N> {
    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn root(&self) -> Option<N> {
        self.roots.first().map(|r| r.1)
    }

    pub fn root_key(&self) -> Option<u64> {
        self.roots.first().map(|r| r.0)
    }

    /// Number of concatenated heaps.
    pub fn fan_in(&self) -> usize {
        self.roots.len()
    }
}

pub fn concat_heaps<S: HeapSource>(src: &S, roots: &[S::Node]) -> ConcatHeap<S::Node> {
    let mut a: Vec<(u64, S::Node)> = roots.iter().map(|&r| (src.key(r), r)).collect();
    let n = a.len();
    let mut writes = n;
    for start in (0..n / 2).rev() {
        let mut i = start;
        loop {
            let (l, r) = (2 * i + 1, 2 * i + 2);
            let mut big = i;
            if l < n && a[l].0 > a[big].0 {
                big = l;
            }
            if r < n && a[r].0 > a[big].0 {
                big = r;
            }
            if big == i {
                break;
            }
            a.swap(i, big);
            writes += 2;
            i = big;
        }
    }
    ConcatHeap { roots: a, writes }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot<N> {
    Root(usize),
    Inner(N),
}

#[derive(Clone, Debug)]
pub struct Selection<N> {
    /// Selected nodes in descending key order.
    pub nodes: Vec<N>,
    pub keys: Vec<u64>,
    /// Distinct heap nodes whose keys were inspected.
    pub reads: usize,
    /// Entries of the in-memory root array inspected.
    pub array_reads: usize,
}

pub fn select_top<S: HeapSource>(src: &S, heap: &ConcatHeap<S::Node>, t: usize) -> Selection<S::Node> {
    let mut sel = Selection {
        nodes: Vec::new(),
        keys: Vec::new(),
        reads: 0,
        array_reads: 0,
    };
    if t == 0 || heap.roots.is_empty() {
        return sel;
    }
    // (key, tiebreak, slot); keys are distinct in practice, the counter keeps
    // the order total without requiring Ord on nodes.
    let mut frontier: BinaryHeap<(u64, std::cmp::Reverse<usize>, usize)> = BinaryHeap::new();
    let mut slots: Vec<Slot<S::Node>> = Vec::new();
    let push = |frontier: &mut BinaryHeap<_>, slots: &mut Vec<Slot<S::Node>>, key: u64, s: Slot<S::Node>| {
        slots.push(s);
        frontier.push((key, std::cmp::Reverse(slots.len() - 1), slots.len() - 1));
    };
    push(&mut frontier, &mut slots, heap.roots[0].0, Slot::Root(0));
    sel.array_reads = 1;
    let mut kids = Vec::new();
    while sel.nodes.len() < t {
        let Some((key, _, idx)) = frontier.pop() else { break };
        let node = match slots[idx] {
            Slot::Root(i) => {
                for j in [2 * i + 1, 2 * i + 2] {
                    if j < heap.roots.len() {
                        push(&mut frontier, &mut slots, heap.roots[j].0, Slot::Root(j));
                        sel.array_reads += 1;
                    }
                }
                heap.roots[i].1
            }
            Slot::Inner(n) => n,
        };
        kids.clear();
        src.children(node, &mut kids);
        for &c in &kids {
            push(&mut frontier, &mut slots, src.key(c), Slot::Inner(c));
            sel.reads += 1;
        }
        sel.nodes.push(node);
        sel.keys.push(key);
    }
    sel
}
