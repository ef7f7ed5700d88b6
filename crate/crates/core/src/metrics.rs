//! Ranking by squared Euclidean distance and binary-relevance retrieval metrics.
//!
//! Mean average precision is reported in two forms: the default divides each
//! query's precision sum by the database size `D`; the standard form divides
//! by the query's number of relevant items.

use crate::error::{Error, Result};

/// Database ids ordered by ascending distance to one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query: usize,
    pub ids: Vec<usize>,
    pub distances: Vec<f64>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Binary relevance of every database item (indexed by database id) to one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceJudgments {
    pub relevant: Vec<bool>,
}

impl RelevanceJudgments {
    pub fn new(relevant: Vec<bool>) -> Self {
        RelevanceJudgments { relevant }
    }

    pub fn total_relevant(&self) -> usize {
        self.relevant.iter().filter(|r| **r).count()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ranks `database` against `query`; ties go to the smaller database id.
pub fn rank(query_id: usize, query: &[f64], database: &[Vec<f64>]) -> Result<RankedList> {
    if let Some(bad) = database.iter().position(|d| d.len() != query.len()) {
        return Err(Error::invalid(format!(
            "database item {bad} has dimension {}, query has {}",
            database[bad].len(),
            query.len()
        )));
    }
    let mut scored: Vec<(f64, usize)> = database
        .iter()
        .enumerate()
        .map(|(id, d)| (squared_distance(query, d), id))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(RankedList {
        query: query_id,
        ids: scored.iter().map(|s| s.1).collect(),
        distances: scored.iter().map(|s| s.0).collect(),
    })
}

/// Relevance flags in rank order with running hit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRelevance {
    flags: Vec<bool>,
    /// `hits[k]` = relevant items among the top `k` (so `hits[0] = 0`).
    hits: Vec<usize>,
}

impl RankedRelevance {
    pub fn new(ranked: &RankedList, judgments: &RelevanceJudgments) -> Result<Self> {
        if ranked.len() != judgments.relevant.len() {
            return Err(Error::invalid(format!(
                "ranking has {} items, judgments cover {}",
                ranked.len(),
                judgments.relevant.len()
            )));
        }
        Ok(Self::from_flags(
            ranked
                .ids
                .iter()
                .map(|&id| judgments.relevant[id])
                .collect(),
        ))
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        let mut hits = Vec::with_capacity(flags.len() + 1);
        hits.push(0);
        for &f in &flags {
            hits.push(hits.last().unwrap() + usize::from(f));
        }
        RankedRelevance { flags, hits }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn total_relevant(&self) -> usize {
        *self.hits.last().unwrap()
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.len() {
            return Err(Error::invalid(format!(
                "k = {k} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn precision_at(&self, k: usize) -> Result<f64> {
        self.check_k(k)?;
        Ok(self.hits[k] as f64 / k as f64)
    }

    pub fn recall_at(&self, k: usize) -> Result<f64> {
        self.check_k(k)?;
        let total = self.total_relevant();
        if total == 0 {
            return Err(Error::UndefinedMetric(
                "recall needs at least one relevant item".into(),
            ));
        }
        Ok(self.hits[k] as f64 / total as f64)
    }

    fn precision_sum(&self) -> f64 {
        self.flags
            .iter()
            .enumerate()
            .filter(|(_, f)| **f)
            .map(|(i, _)| self.hits[i + 1] as f64 / (i + 1) as f64)
            .sum()
    }

    /// `(1/D) sum_k Prec@k * delta@k`.
    pub fn average_precision(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.precision_sum() / self.len() as f64
    }

    /// `(1/R) sum_k Prec@k * delta@k` with `R` relevant items; 0 when `R = 0`.
    pub fn average_precision_standard(&self) -> f64 {
        match self.total_relevant() {
            0 => 0.0,
            r => self.precision_sum() / r as f64,
        }
    }

    /// Smallest `k` minimising `|Prec@k - Reca@k|`, compared exactly.
    pub fn break_even_rank(&self) -> Result<usize> {
        let r = self.total_relevant() as u128;
        if r == 0 {
            return Err(Error::UndefinedMetric(
                "break-even point needs at least one relevant item".into(),
            ));
        }
        // |h/k - h/r| = h |r - k| / (k r); compare as fractions num/den
        let gap = |k: usize| {
            let h = self.hits[k] as u128;
            let k = k as u128;
            (h * r.abs_diff(k), k * r)
        };
        let mut best = 1;
        let mut best_gap = gap(1);
        for k in 2..=self.len() {
            let g = gap(k);
            if g.0 * best_gap.1 < best_gap.0 * g.1 {
                best = k;
                best_gap = g;
            }
        }
        Ok(best)
    }

    pub fn break_even_point(&self) -> Result<f64> {
        let k = self.break_even_rank()?;
        self.precision_at(k)
    }
}

pub fn precision_at(ranked: &RankedList, judgments: &RelevanceJudgments, k: usize) -> Result<f64> {
    RankedRelevance::new(ranked, judgments)?.precision_at(k)
}

pub fn recall_at(ranked: &RankedList, judgments: &RelevanceJudgments, k: usize) -> Result<f64> {
    RankedRelevance::new(ranked, judgments)?.recall_at(k)
}

pub fn break_even_point(ranked: &RankedList, judgments: &RelevanceJudgments) -> Result<f64> {
    RankedRelevance::new(ranked, judgments)?.break_even_point()
}

/// Mean average precision over a query set.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSummary {
    /// Database-size-normalised mAP.
    pub map: f64,
    /// Relevant-count-normalised mAP.
    pub standard: f64,
    pub evaluated: usize,
    /// Query ids with no relevant database item; left out of both means.
    pub excluded: Vec<usize>,
}

pub fn mean_average_precision(
    ranked: &[RankedList],
    judgments: &[RelevanceJudgments],
) -> Result<MapSummary> {
    if ranked.len() != judgments.len() {
        return Err(Error::invalid(
            "one judgment set per ranked list is required",
        ));
    }
    let mut map = 0.0;
    let mut standard = 0.0;
    let mut evaluated = 0;
    let mut excluded = Vec::new();
    for (list, judg) in ranked.iter().zip(judgments) {
        let rr = RankedRelevance::new(list, judg)?;
        if rr.total_relevant() == 0 {
            excluded.push(list.query);
            continue;
        }
        map += rr.average_precision();
        standard += rr.average_precision_standard();
        evaluated += 1;
    }
    let n = evaluated.max(1) as f64;
    Ok(MapSummary {
        map: map / n,
        standard: standard / n,
        evaluated,
        excluded,
    })
}

/// Expected database-size-normalised AP of a uniformly random ranking of `d`
/// items of which `r` are relevant.
pub fn chance_average_precision(r: usize, d: usize) -> f64 {
    if d == 0 || r == 0 {
        return 0.0;
    }
    let (r, d) = (r as f64, d as f64);
    let later = if d > 1.0 { (r - 1.0) / (d - 1.0) } else { 0.0 };
    let mut sum = 0.0;
    for k in 1..=d as usize {
        let k = k as f64;
        sum += (r / d) * (1.0 + (k - 1.0) * later) / k;
    }
    sum / d
}
