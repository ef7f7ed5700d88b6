//! Training on a dataset and the cross-validated cross-modal retrieval protocol.

use std::fmt::Write as _;

use crate::data::{make_folds, Dataset, Model, Provenance, Task};
use crate::error::{Error, Result};
use crate::metrics::{chance_average_precision, rank, RankedRelevance, RelevanceJudgments};
use crate::objective::Hyperparams;
use crate::relevance::RelevanceMatrix;
use crate::solver::{SolveReport, Solver, SolverConfig, TrainingSet};

/// Class-based relevance for a dataset, annotated with modality sizes.
pub fn class_relevance(dataset: &Dataset) -> Result<RelevanceMatrix> {
    RelevanceMatrix::from_labels(&dataset.class_tags()?)
        .with_modality_sizes(&dataset.modality_sizes())
}

/// Trains on the whole dataset with class-based relevance.
pub fn train(
    dataset: &Dataset,
    task: &Task,
    hp: &Hyperparams,
    config: &SolverConfig,
) -> Result<(Model, SolveReport)> {
    train_with(dataset, &class_relevance(dataset)?, task, hp, config)
}

/// Trains on the whole dataset with the given relevance matrix.
pub fn train_with(
    dataset: &Dataset,
    relevance: &RelevanceMatrix,
    task: &Task,
    hp: &Hyperparams,
    config: &SolverConfig,
) -> Result<(Model, SolveReport)> {
    let samples = dataset.samples(task)?;
    let data = TrainingSet::new(&samples, hp)?;
    let mut solver = Solver::new(&data, relevance, hp, config)?;
    let report = solver.run()?;
    let model = Model {
        hyper: hp.clone(),
        params: solver.into_params(),
        provenance: Provenance {
            seed: config.seed,
            iterations: report.iterations,
        },
    };
    Ok((model, report))
}

/// The randomly initialised, untrained model the solver would start from.
pub fn untrained(
    dataset: &Dataset,
    task: &Task,
    hp: &Hyperparams,
    config: &SolverConfig,
) -> Result<Model> {
    let samples = dataset.samples(task)?;
    let data = TrainingSet::new(&samples, hp)?;
    let relevance = class_relevance(dataset)?;
    let solver = Solver::new(&data, &relevance, hp, config)?;
    Ok(Model {
        hyper: hp.clone(),
        params: solver.params().clone(),
        provenance: Provenance {
            seed: config.seed,
            iterations: 0,
        },
    })
}

/// Embeds every record of a dataset. Labels are irrelevant to embedding.
pub fn embed_dataset(dataset: &Dataset, model: &Model) -> Result<Vec<Vec<f64>>> {
    dataset
        .samples(&Task::Positive(Default::default()))?
        .iter()
        .map(|s| model.embed(s).map(|e| e.values))
        .collect()
}

/// Where each round's model comes from.
#[derive(Debug, Clone)]
pub enum ModelSource {
    /// Train a fresh model on the training folds of every round.
    Train {
        hyper: Hyperparams,
        config: SolverConfig,
        task: Task,
    },
    /// Untrained random filters, initialised as training would on each round.
    Untrained {
        hyper: Hyperparams,
        config: SolverConfig,
        task: Task,
    },
    /// One fixed model for every round.
    Fixed(Box<Model>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub folds: usize,
    pub seed: u64,
    pub k_list: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            folds: 10,
            seed: 0,
            k_list: vec![1, 5, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRow {
    pub round: usize,
    /// Global index of the query record.
    pub query: usize,
    pub from: usize,
    pub to: usize,
    pub precision: Vec<f64>,
    pub ap: f64,
    pub ap_standard: f64,
    pub bep: f64,
}

/// Metrics for one query modality against one database modality,
/// averaged over all evaluated queries of all rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionReport {
    pub from: usize,
    pub to: usize,
    pub precision: Vec<f64>,
    pub map: f64,
    pub map_standard: f64,
    pub bep: f64,
    pub evaluated: usize,
    /// Queries with no relevant database item, as (round, global index).
    pub excluded: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub k_list: Vec<usize>,
    pub directions: Vec<DirectionReport>,
    pub queries: Vec<QueryRow>,
    /// Solver reports of trained rounds, in round order.
    pub solves: Vec<SolveReport>,
}

impl EvalReport {
    fn mean_over_directions(&self, f: impl Fn(&DirectionReport) -> f64) -> f64 {
        let n = self.directions.len().max(1) as f64;
        self.directions.iter().map(f).sum::<f64>() / n
    }

    pub fn map(&self) -> f64 {
        self.mean_over_directions(|d| d.map)
    }

    pub fn map_standard(&self) -> f64 {
        self.mean_over_directions(|d| d.map_standard)
    }

    pub fn bep(&self) -> f64 {
        self.mean_over_directions(|d| d.bep)
    }

    pub fn precision(&self, i: usize) -> f64 {
        self.mean_over_directions(|d| d.precision[i])
    }

    /// `metric direction value` lines, directions first, then their mean under `mean`.
    pub fn to_text(&self, standard: bool) -> String {
        let mut out = String::new();
        let mut emit = |name: &str, label: &str, value: f64| {
            let _ = writeln!(out, "{name}\t{label}\t{value:.6}");
        };
        let mut labels: Vec<String> = self
            .directions
            .iter()
            .map(|d| format!("{}->{}", d.from + 1, d.to + 1))
            .collect();
        labels.push("mean".into());
        for (i, k) in self.k_list.iter().enumerate() {
            for (d, label) in self.directions.iter().zip(&labels) {
                emit(&format!("Prec@{k}"), label, d.precision[i]);
            }
            emit(&format!("Prec@{k}"), "mean", self.precision(i));
        }
        for (d, label) in self.directions.iter().zip(&labels) {
            emit("mAP", label, d.map);
        }
        emit("mAP", "mean", self.map());
        if standard {
            for (d, label) in self.directions.iter().zip(&labels) {
                emit("mAP-standard", label, d.map_standard);
            }
            emit("mAP-standard", "mean", self.map_standard());
        }
        for (d, label) in self.directions.iter().zip(&labels) {
            emit("BEPRP", label, d.bep);
        }
        emit("BEPRP", "mean", self.bep());
        for d in &self.directions {
            for (round, q) in &d.excluded {
                let _ = writeln!(
                    out,
                    "# excluded query {q} (round {round}) in {}->{}: no relevant items",
                    d.from + 1,
                    d.to + 1
                );
            }
        }
        out
    }

    /// CSV with one row per evaluated query.
    pub fn queries_csv(&self) -> String {
        let mut out = String::from("round,query,from,to");
        for k in &self.k_list {
            let _ = write!(out, ",prec@{k}");
        }
        out.push_str(",ap,ap_standard,bep\n");
        for q in &self.queries {
            let _ = write!(out, "{},{},{},{}", q.round, q.query, q.from + 1, q.to + 1);
            for p in &q.precision {
                let _ = write!(out, ",{p}");
            }
            let _ = writeln!(out, ",{},{},{}", q.ap, q.ap_standard, q.bep);
        }
        out
    }
}

struct Direction {
    from: usize,
    to: usize,
    rows: Vec<QueryRow>,
    excluded: Vec<(usize, usize)>,
}

fn round_model(source: &ModelSource, train_set: &Dataset) -> Result<(Model, Option<SolveReport>)> {
    match source {
        ModelSource::Train {
            hyper,
            config,
            task,
        } => {
            let (m, r) = train(train_set, task, hyper, config)?;
            Ok((m, Some(r)))
        }
        ModelSource::Untrained {
            hyper,
            config,
            task,
        } => Ok((untrained(train_set, task, hyper, config)?, None)),
        ModelSource::Fixed(m) => Ok(((**m).clone(), None)),
    }
}

/// Cross-validated cross-modal retrieval. In round `r`, fold `r` supplies the
/// queries and the remaining folds the training set and the database; an item
/// is relevant to a query when both share a class.
pub fn cross_validate(
    dataset: &Dataset,
    source: &ModelSource,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if dataset.modalities() < 2 {
        return Err(Error::invalid(
            "cross-modal retrieval needs at least two modalities",
        ));
    }
    if cfg.k_list.contains(&0) {
        return Err(Error::invalid("k must be >= 1"));
    }
    let classes: Vec<i64> = dataset.class_tags()?.into_iter().map(|(_, c)| c).collect();
    let split = make_folds(dataset, cfg.folds, cfg.seed)?;
    let m = dataset.modalities();
    let mut directions: Vec<Direction> = (0..m)
        .flat_map(|a| (0..m).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(from, to)| Direction {
            from,
            to,
            rows: Vec::new(),
            excluded: Vec::new(),
        })
        .collect();
    let mut solves = Vec::new();
    for r in 0..split.len() {
        let (queries, rest) = split.round(r);
        let train_set = dataset.subset(&rest)?;
        let (model, report) = round_model(source, &train_set)?;
        solves.extend(report);
        let emb = embed_dataset(dataset, &model)?;
        for dir in &mut directions {
            let db_ids: Vec<usize> = rest
                .iter()
                .copied()
                .filter(|&i| dataset.records[i].modality == dir.to)
                .collect();
            let db: Vec<Vec<f64>> = db_ids.iter().map(|&i| emb[i].clone()).collect();
            for &q in queries
                .iter()
                .filter(|&&q| dataset.records[q].modality == dir.from)
            {
                let judg = RelevanceJudgments::new(
                    db_ids.iter().map(|&i| classes[i] == classes[q]).collect(),
                );
                let ranked = rank(q, &emb[q], &db)?;
                let rr = RankedRelevance::new(&ranked, &judg)?;
                if rr.total_relevant() == 0 {
                    dir.excluded.push((r, q));
                    continue;
                }
                let precision = cfg
                    .k_list
                    .iter()
                    .map(|&k| rr.precision_at(k.min(rr.len())))
                    .collect::<Result<Vec<_>>>()?;
                dir.rows.push(QueryRow {
                    round: r,
                    query: q,
                    from: dir.from,
                    to: dir.to,
                    precision,
                    ap: rr.average_precision(),
                    ap_standard: rr.average_precision_standard(),
                    bep: rr.break_even_point()?,
                });
            }
        }
    }
    let mut reports = Vec::new();
    let mut queries = Vec::new();
    for dir in directions {
        let n = dir.rows.len();
        if n == 0 {
            return Err(Error::UndefinedMetric(format!(
                "no query of modality {} has a relevant item in modality {}",
                dir.from + 1,
                dir.to + 1
            )));
        }
        let mean = |f: &dyn Fn(&QueryRow) -> f64| dir.rows.iter().map(f).sum::<f64>() / n as f64;
        reports.push(DirectionReport {
            from: dir.from,
            to: dir.to,
            precision: (0..cfg.k_list.len())
                .map(|i| mean(&|q| q.precision[i]))
                .collect(),
            map: mean(&|q| q.ap),
            map_standard: mean(&|q| q.ap_standard),
            bep: mean(&|q| q.bep),
            evaluated: n,
            excluded: dir.excluded,
        });
        queries.extend(dir.rows);
    }
    Ok(EvalReport {
        k_list: cfg.k_list.clone(),
        directions: reports,
        queries,
        solves,
    })
}

/// Expected database-normalised mAP of random rankings under the same protocol: the
/// mean chance AP over the queries that would be evaluated, per direction,
/// averaged over directions.
pub fn chance_map(dataset: &Dataset, cfg: &EvalConfig) -> Result<f64> {
    let classes: Vec<i64> = dataset.class_tags()?.into_iter().map(|(_, c)| c).collect();
    let split = make_folds(dataset, cfg.folds, cfg.seed)?;
    let m = dataset.modalities();
    let mut total = 0.0;
    let mut dirs = 0;
    for a in 0..m {
        for b in (0..m).filter(|&b| b != a) {
            let mut sum = 0.0;
            let mut n = 0;
            for r in 0..split.len() {
                let (queries, rest) = split.round(r);
                let db: Vec<usize> = rest
                    .iter()
                    .copied()
                    .filter(|&i| dataset.records[i].modality == b)
                    .collect();
                for &q in queries
                    .iter()
                    .filter(|&&q| dataset.records[q].modality == a)
                {
                    let rel = db.iter().filter(|&&i| classes[i] == classes[q]).count();
                    if rel > 0 {
                        sum += chance_average_precision(rel, db.len());
                        n += 1;
                    }
                }
            }
            if n > 0 {
                total += sum / n as f64;
                dirs += 1;
            }
        }
    }
    Ok(total / dirs.max(1) as f64)
}
