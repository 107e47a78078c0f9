//! Top-k range reporting over both structures.
//!
//! Large k goes to the priority search tree directly. Small k first asks the
//! small-k tree for an approximate k-th score `s`, then reports every in-range
//! point scoring at least `s` and keeps the k highest. Both structures see
//! every update; everything is rebuilt once the live count has doubled or
//! halved since the last rebuild.

use crate::bigk::{BigK, Point};
use crate::em::{ceil_log2, BlockStore};
use crate::error::{Error, Result};
use crate::key::Key;
use crate::osbtree::OsBTree;
use crate::smallk::{SelectTrace, SmallK, SmallkParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FacadeConfig {
    /// Queries with `k` at or above this go to the priority search tree.
    /// `None` means `B * ceil(lg n)`, capped at `l + 1`.
    pub k_threshold: Option<usize>,
    /// Largest k of the small-k tree; `None` picks the largest that fits.
    pub smallk_l: Option<usize>,
    /// Run without the small-k tree (every query takes the large-k path).
    pub bigk_only: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryPath {
    LargeK,
    SmallK,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FacadeStats {
    pub global_rebuilds: u64,
    pub large_k_queries: u64,
    pub small_k_queries: u64,
    /// Small-k queries whose range held at most k points, answered by a full
    /// 3-sided report.
    pub sparse_queries: u64,
}

#[derive(Clone, Debug)]
pub struct FacadeTrace {
    pub path: QueryPath,
    /// Score threshold of the 3-sided report on the small-k path.
    pub threshold: Option<Key>,
    /// Size of the 3-sided report on the small-k path.
    pub candidates: usize,
    pub select: Option<SelectTrace>,
}

#[derive(Debug)]
pub struct TopK {
    config: FacadeConfig,
    bigk: BigK,
    smallk: Option<SmallK>,
    /// (x, score) of every live point.
    by_x: OsBTree<(Key, Key)>,
    scores: OsBTree<Key>,
    n0: usize,
    k_threshold: usize,
    stats: FacadeStats,
}

impl TopK {
    pub fn new(store: &mut BlockStore, config: FacadeConfig) -> Result<Self> {
        Self::build(store, Vec::new(), config)
    }

    pub fn build(store: &mut BlockStore, points: Vec<Point>, config: FacadeConfig) -> Result<Self> {
        let bigk = BigK::build(store, points.clone())?;
        let smallk = if config.bigk_only {
            None
        } else {
            match SmallK::build(store, points.clone(), config.smallk_l) {
                Ok(s) => Some(s),
                // No small-k configuration fits this block size.
                Err(Error::Params(_)) if config.smallk_l.is_none() => None,
                Err(e) => return Err(e),
            }
        };
        let n = points.len();
        let by_x = OsBTree::build(store, points.iter().map(|p| (p.x, p.y)).collect());
        let scores = OsBTree::build(store, points.iter().map(|p| p.y).collect());
        let mut t = TopK {
            config,
            bigk,
            smallk,
            by_x,
            scores,
            n0: n.max(1),
            k_threshold: 1,
            stats: FacadeStats::default(),
        };
        t.k_threshold = t.compute_threshold(store);
        Ok(t)
    }

    fn compute_threshold(&self, store: &BlockStore) -> usize {
        let Some(s) = &self.smallk else {
            return 1;
        };
        let l = s.params().l;
        match self.config.k_threshold {
            Some(k) => k.min(l + 1),
            None => {
                let lg = ceil_log2(self.len().max(2) as u64) as usize;
                (store.block_words() * lg).min(l + 1)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.by_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_x.is_empty()
    }

    pub fn k_threshold(&self) -> usize {
        self.k_threshold
    }

    pub fn stats(&self) -> FacadeStats {
        self.stats
    }

    pub fn bigk(&self) -> &BigK {
        &self.bigk
    }

    pub fn smallk(&self) -> Option<&SmallK> {
        self.smallk.as_ref()
    }

    pub fn smallk_params(&self) -> Option<SmallkParams> {
        self.smallk.as_ref().map(|s| s.params())
    }

    /// Score of the live point at `x`.
    pub fn score_of(&self, store: &mut BlockStore, x: Key) -> Option<Key> {
        self.by_x.range(store, &(x, 0), &(x, Key::MAX)).first().map(|e| e.1)
    }

    pub fn insert(&mut self, store: &mut BlockStore, x: Key, score: Key) -> Result<()> {
        if self.score_of(store, x).is_some() {
            return Err(Error::Duplicate(format!("x-coordinate {x:#x}")));
        }
        if self.scores.contains(store, &score) {
            return Err(Error::Duplicate(format!("score {score:#x}")));
        }
        let p = Point::new(x, score);
        self.bigk.insert(store, p)?;
        if let Some(s) = self.smallk.as_mut() {
            s.insert(store, p)?;
        }
        self.by_x.insert(store, (x, score));
        self.scores.insert(store, score);
        self.maybe_rebuild(store)
    }

    /// Deletes the point at `x` and returns it.
    pub fn delete(&mut self, store: &mut BlockStore, x: Key) -> Result<Point> {
        let y = self
            .score_of(store, x)
            .ok_or_else(|| Error::NotFound(format!("x-coordinate {x:#x}")))?;
        let p = Point::new(x, y);
        self.bigk.delete(store, p)?;
        if let Some(s) = self.smallk.as_mut() {
            s.delete(store, x)?;
        }
        self.by_x.remove(store, &(x, y));
        self.scores.remove(store, &y);
        self.maybe_rebuild(store)?;
        Ok(p)
    }

    fn maybe_rebuild(&mut self, store: &mut BlockStore) -> Result<()> {
        let n = self.len();
        if n >= 2 * self.n0 || 2 * n <= self.n0 {
            self.rebuild_all(store)?;
        }
        Ok(())
    }

    /// Rebuilds both structures from the live points and recomputes the
    /// dispatch threshold.
    pub fn rebuild_all(&mut self, store: &mut BlockStore) -> Result<()> {
        self.stats.global_rebuilds += 1;
        self.bigk.rebuild_all(store);
        if let Some(s) = self.smallk.as_mut() {
            s.rebuild_all(store)?;
        }
        self.n0 = self.len().max(1);
        self.k_threshold = self.compute_threshold(store);
        Ok(())
    }

    /// The `min(k, |S ∩ [x1, x2]|)` highest points in range, by descending
    /// score.
    pub fn query_topk(&mut self, store: &mut BlockStore, x1: Key, x2: Key, k: usize) -> Result<Vec<Point>> {
        self.query_topk_traced(store, x1, x2, k).map(|r| r.0)
    }

    pub fn query_topk_traced(&mut self, store: &mut BlockStore, x1: Key, x2: Key, k: usize) -> Result<(Vec<Point>, FacadeTrace)> {
        if x1 > x2 {
            return Err(Error::InvalidRange(format!("{x1:#x} > {x2:#x}")));
        }
        if k == 0 {
            return Err(Error::KOutOfRange("k must be at least 1".into()));
        }
        let small = match &self.smallk {
            Some(s) if k < self.k_threshold => s,
            _ => {
                self.stats.large_k_queries += 1;
                let out = self.bigk.query_topk(store, x1, x2, k)?;
                let trace = FacadeTrace { path: QueryPath::LargeK, threshold: None, candidates: 0, select: None };
                return Ok((out, trace));
            }
        };
        self.stats.small_k_queries += 1;
        let in_range = self.by_x.rank_desc(store, &(x1, 0)) - self.by_x.count_greater(store, &(x2, Key::MAX));
        let mut sel = None;
        let threshold = if in_range <= k {
            self.stats.sparse_queries += 1;
            0
        } else {
            let (e, trace) = small.select_approx_traced(store, x1, x2, k)?;
            let e = e.ok_or_else(|| Error::Precondition("approximate selection found fewer than k points".into()))?;
            sel = Some(trace);
            e.y
        };
        if let (Some(trace), Some(s)) = (&sel, self.smallk.as_mut()) {
            s.note_fallbacks(trace);
        }
        let mut cand = self.bigk.report_3sided(store, x1, x2, threshold);
        let candidates = cand.len();
        store.note_scratch(2 * candidates);
        cand.sort_unstable_by(|a, b| b.y.cmp(&a.y));
        cand.truncate(k);
        let trace = FacadeTrace { path: QueryPath::SmallK, threshold: Some(threshold), candidates, select: sel };
        Ok((cand, trace))
    }

    /// Approximate k-selection through the small-k tree.
    pub fn select_approx(&self, store: &mut BlockStore, x1: Key, x2: Key, k: usize) -> Result<Option<Point>> {
        match &self.smallk {
            Some(s) => s.select_approx(store, x1, x2, k),
            None => Err(Error::Config("the small-k structure is disabled".into())),
        }
    }

    /// Live points in x order, uncharged.
    pub fn points(&self) -> Vec<Point> {
        self.by_x.keys_uncharged().into_iter().map(|(x, y)| Point::new(x, y)).collect()
    }

    /// Audits both structures and checks that they hold the same points.
    pub fn audit(&self, store: &BlockStore) -> std::result::Result<(), String> {
        self.bigk.audit_invariants().map_err(|v| format!("large-k structure: {v}"))?;
        let mine = self.points();
        let mut big = self.bigk.points();
        big.sort_unstable_by_key(|p| p.x);
        if big != mine {
            return Err(format!("large-k structure holds {} points, index holds {}", big.len(), mine.len()));
        }
        if let Some(s) = &self.smallk {
            s.audit(store).map_err(|e| format!("small-k structure: {e}"))?;
            if s.points() != mine {
                return Err("small-k structure holds a different point set".into());
            }
        }
        Ok(())
    }
}

/// Brute-force top-k: the `min(k, |S ∩ q|)` highest in-range points.
pub fn oracle_topk(points: &[Point], x1: Key, x2: Key, k: usize) -> Vec<Point> {
    let mut v: Vec<Point> = points.iter().copied().filter(|p| x1 <= p.x && p.x <= x2).collect();
    v.sort_unstable_by(|a, b| b.y.cmp(&a.y));
    v.truncate(k);
    v
}
