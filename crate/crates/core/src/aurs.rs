//! Approximate union-rank selection.
//!
//! Given `m` disjoint sets reachable only through a `Max` operator and an
//! approximate `Rank` operator (an element of local rank in `[rho, c*rho)`),
//! find an element whose rank in the union lies in `[k, c^2 (2 + 2c) k]`.

use crate::em::BlockStore;
use crate::error::{Error, Result};
use crate::key::Key;

pub trait RankedSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Largest element.
    fn max_element(&self, store: &mut BlockStore) -> Key;
    /// An element whose rank (1 = largest) lies in `[rho, c * rho)`, for
    /// `1 <= rho <= len`.
    fn rank_select(&self, store: &mut BlockStore, rho: f64) -> Key;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Marker {
    pub value: Key,
    pub weight: u64,
    pub source: usize,
    pub round: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AursOutcome {
    pub value: Key,
    pub max_calls: usize,
    pub rank_calls: usize,
    pub rounds: u32,
    /// Number of pivots taken per round.
    pub pivots_per_round: Vec<usize>,
    /// Number of active sets per round.
    pub active_per_round: Vec<usize>,
}

/// Output rank bound `c^2 (2 + 2c)`.
pub fn rank_bound_factor(c: u64) -> u64 {
    c * c * (2 + 2 * c)
}

fn ceil_div(a: u128, b: u128) -> u128 {
    a.div_ceil(b)
}

/// Largest pivot whose prefix weight (total weight of pivots at least as
/// large) reaches `k`.
pub fn weighted_select(pivots: &[Marker], k: u64) -> Option<Marker> {
    let mut sorted = pivots.to_vec();
    sorted.sort_unstable_by(|a, b| b.value.cmp(&a.value));
    let mut acc = 0u64;
    for p in sorted {
        acc += p.weight;
        if acc >= k {
            return Some(p);
        }
    }
    None
}

pub fn aurs_select<S: RankedSource>(store: &mut BlockStore, sources: &[S], c: u64, k: usize) -> Result<AursOutcome> {
    let m = sources.len();
    if m == 0 {
        return Err(Error::Precondition("no sources".into()));
    }
    if c < 2 {
        return Err(Error::Params(format!("c = {c} must be at least 2")));
    }
    let min_len = sources.iter().map(|s| s.len()).min().unwrap();
    if k == 0 || (k as u64) * c > min_len as u64 {
        return Err(Error::KOutOfRange(format!(
            "k = {k} violates 1 <= k <= min |L_i| / c = {min_len} / {c}"
        )));
    }
    let mut out = AursOutcome::default();
    if k >= m {
        let all: Vec<usize> = (0..m).collect();
        let v = rounds(store, sources, &all, c, k, &mut out)?;
        out.value = v;
        return Ok(out);
    }
    let maxima: Vec<Key> = sources.iter().map(|s| s.max_element(store)).collect();
    out.max_calls += m;
    let mut sorted = maxima.clone();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let v_prime = sorted[k - 1];
    let active: Vec<usize> = (0..m).filter(|&i| maxima[i] >= v_prime).collect();
    debug_assert_eq!(active.len(), k);
    let v = rounds(store, sources, &active, c, k, &mut out)?;
    out.value = v.max(v_prime);
    Ok(out)
}

/// The round-based algorithm for `k >= |set_ids|`.
fn rounds<S: RankedSource>(store: &mut BlockStore, sources: &[S], set_ids: &[usize], c: u64, k: usize, out: &mut AursOutcome) -> Result<Key> {
    let m = set_ids.len() as u128;
    let (c128, k128) = (c as u128, k as u128);
    let mut r = 1u32;
    while c128.pow(r) < m {
        r += 1;
    }
    out.rounds = r;
    let mut active: Vec<usize> = set_ids.to_vec();
    let mut pivots: Vec<Marker> = Vec::new();
    let mut local_weight = vec![0u128; sources.len()];
    for j in 1..=r {
        let cj = c128.pow(j);
        debug_assert_eq!(active.len() as u128, ceil_div(m, c128.pow(j - 1)));
        out.active_per_round.push(active.len());
        let rho = (cj * k128) as f64 / m as f64;
        let weight = if j == 1 {
            ceil_div(c128 * k128, m)
        } else {
            ceil_div(cj * k128, m) - ceil_div(cj / c128 * k128, m)
        };
        let mut markers = Vec::with_capacity(active.len());
        for &i in &active {
            if rho > sources[i].len() as f64 {
                return Err(Error::Precondition(format!("rank parameter {rho} exceeds |L_{i}| = {}", sources[i].len())));
            }
            let value = sources[i].rank_select(store, rho);
            out.rank_calls += 1;
            markers.push(Marker {
                value,
                weight: weight as u64,
                source: i,
                round: j,
            });
        }
        markers.sort_unstable_by(|a, b| b.value.cmp(&a.value));
        let keep = ceil_div(m, cj) as usize;
        markers.truncate(keep);
        out.pivots_per_round.push(markers.len());
        for p in &markers {
            local_weight[p.source] += weight;
            debug_assert_eq!(local_weight[p.source], ceil_div(cj * k128, m), "local prefix weight");
        }
        active = markers.iter().map(|p| p.source).collect();
        active.sort_unstable();
        pivots.extend(markers);
    }
    store.note_scratch(4 * pivots.len());
    weighted_select(&pivots, k as u64)
        .map(|p| p.value)
        .ok_or_else(|| Error::Precondition("no pivot reaches prefix weight k".into()))
}
