//! The greedy feature-engineering loop: rank feature pairs by interaction
//! information, expand the top-K pairs with bivariate operators, keep the
//! cross-validation winner, refine it with univariate operators, and feed it
//! back into the pool. Also the generic order-2 expand-reduce baseline that
//! the pair ranking can accelerate.

use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::downstream::{cross_validate, Evaluator};
use crate::error::{Error, Result};
use crate::featurelang::{
    bivariate_candidates, univariate_candidates, FeatureExpr, FittedExpr, OperatorSets,
};
use crate::infotheory::{
    pairwise_ii, prefilter_features, sort_entries, EstimatorConfig, IIEntry, VariableView,
};
use crate::tabular::{make_folds, ColumnKind, Table};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EngineConfig {
    /// How many top pairs are expanded per iteration.
    pub k_pairs: usize,
    /// Stop patience: window length for the two-half-means test. Even, >= 2.
    pub patience: usize,
    /// Hard cap on accepted iterations beyond the stop condition.
    pub max_iterations: usize,
    pub estimator: EstimatorConfig,
    pub seed: u64,
    /// Pairs whose combined feature order exceeds this are popped from the
    /// pair table each iteration.
    pub max_order: Option<usize>,
    /// When set, candidate evaluations each iteration run on a fresh seeded
    /// row subsample of this fraction.
    pub eval_row_fraction: Option<f64>,
    /// Keep only this many features (by univariate MI with the target)
    /// before the first pair ranking.
    pub prefilter: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            k_pairs: 3,
            patience: 20,
            max_iterations: 100,
            estimator: EstimatorConfig::default(),
            seed: 0,
            max_order: None,
            eval_row_fraction: None,
            prefilter: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_pairs < 1 {
            return Err(Error::config("k_pairs must be >= 1"));
        }
        if self.patience < 2 || !self.patience.is_multiple_of(2) {
            return Err(Error::config(format!(
                "patience must be an even number >= 2, got {}",
                self.patience
            )));
        }
        if let Some(f) = self.eval_row_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config("eval_row_fraction must be in (0, 1]"));
            }
        }
        if let Some(m) = self.prefilter {
            if m < 2 {
                return Err(Error::config("prefilter must keep at least 2 features"));
            }
        }
        self.estimator.validate()
    }
}

/// True when at least `patience` scores exist and the mean of the most
/// recent patience/2 scores does not exceed the mean of the preceding
/// patience/2 scores.
pub fn stop_condition(scores: &[f64], patience: usize) -> bool {
    if scores.len() < patience {
        return false;
    }
    let half = patience / 2;
    let recent = &scores[scores.len() - half..];
    let previous = &scores[scores.len() - patience..scores.len() - half];
    let recent_mean = recent.iter().sum::<f64>() / half as f64;
    let previous_mean = previous.iter().sum::<f64>() / half as f64;
    recent_mean - previous_mean <= 0.0
}

/// One engineered (or original) feature in the final report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub expr: String,
    pub order: usize,
    pub cv_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub baseline_cv: f64,
    pub history: Vec<f64>,
    pub features: Vec<FeatureReport>,
    pub test_score: Option<f64>,
    pub seed: u64,
    pub config_echo: serde_json::Value,
    pub candidates_evaluated: usize,
    pub wall_time_seconds: f64,
}

/// The loop's mutable core: the feature pool (originals first, engineered
/// appended), the scored pair table, and the score history.
pub struct EngineState {
    pub pool: Vec<FeatureExpr>,
    kinds: Vec<ColumnKind>,
    views: Vec<VariableView>,
    target_view: VariableView,
    pub ii: Vec<IIEntry>,
    pub history: Vec<f64>,
    pub iteration: usize,
    rendered: HashSet<String>,
    orders: Vec<usize>,
}

/// What one call to [`iterate_once`] did.
#[derive(Debug, Clone)]
pub struct IterationStats {
    pub bivariate_evaluations: usize,
    pub univariate_evaluations: usize,
    /// Rendered expression and score of the accepted feature, when the
    /// iteration accepted one.
    pub accepted: Option<FeatureReport>,
}

fn all_rows(table: &Table) -> Vec<usize> {
    (0..table.n_rows).collect()
}

/// Builds the initial state: optional prefilter, original-column pool, and
/// the interaction-information table over every pair.
pub fn init(table: &Table, cfg: &EngineConfig) -> Result<EngineState> {
    cfg.validate()?;
    let names = match cfg.prefilter {
        Some(m) => prefilter_features(table, m, &cfg.estimator)?,
        None => table.feature_names(),
    };
    if names.len() < 2 {
        return Err(Error::data(format!(
            "need at least 2 features after prefiltering, got {}",
            names.len()
        )));
    }
    let rows = all_rows(table);
    let mut pool = Vec::with_capacity(names.len());
    let mut kinds = Vec::with_capacity(names.len());
    let mut views = Vec::with_capacity(names.len());
    let mut rendered = HashSet::new();
    let mut orders = Vec::with_capacity(names.len());
    for name in &names {
        let column = table.column(name)?;
        let expr = FeatureExpr::col(name.clone());
        rendered.insert(expr.render());
        kinds.push(column.kind());
        views.push(VariableView::from_column(column, &rows));
        orders.push(1);
        pool.push(expr);
    }
    let target_view = VariableView::from_column(table.target_column()?, &rows);
    let pairs: Vec<(usize, usize)> = (0..pool.len())
        .flat_map(|i| ((i + 1)..pool.len()).map(move |j| (i, j)))
        .collect();
    let mut ii = pairwise_ii(&views, &pairs, &target_view, &cfg.estimator)?;
    sort_entries(&mut ii);
    Ok(EngineState {
        pool,
        kinds,
        views,
        target_view,
        ii,
        history: Vec::new(),
        iteration: 0,
        rendered,
        orders,
    })
}

/// First index of the maximum value; ties keep the earliest candidate.
fn first_argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Per-iteration evaluation context: either nothing (use the full table) or
/// a seeded row subsample with a matching fold plan.
fn evaluation_context(
    table: &Table,
    ev: &Evaluator,
    cfg: &EngineConfig,
    iteration: usize,
) -> Result<Option<(Table, Evaluator)>> {
    let Some(fraction) = cfg.eval_row_fraction else {
        return Ok(None);
    };
    let n = table.n_rows;
    let size = ((n as f64 * fraction).ceil() as usize).clamp(ev.folds.k, n);
    if size >= n {
        return Ok(None);
    }
    use rand::SeedableRng;
    let mut rng =
        rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xe0a1 + iteration as u64));
    let mut rows = rand::seq::index::sample(&mut rng, n, size).into_vec();
    rows.sort_unstable();
    let sub_table = table.take_rows(&rows);
    let folds = make_folds(
        size,
        ev.folds.k,
        derive_seed(ev.folds.seed, iteration as u64),
    )?;
    let sub_ev = Evaluator::new(ev.model, folds, ev.metric, ev.drop_division_ops)?;
    Ok(Some((sub_table, sub_ev)))
}

/// Scores `pool + candidate` for every candidate in parallel, collecting
/// into candidate order so the argmax never depends on scheduling.
fn score_candidates(
    pool: &[FeatureExpr],
    candidates: &[FeatureExpr],
    table: &Table,
    ev: &Evaluator,
) -> Result<Vec<f64>> {
    candidates
        .par_iter()
        .map(|cand| {
            let mut features = pool.to_vec();
            features.push(cand.clone());
            Ok(cross_validate(&features, table, ev)?.mean)
        })
        .collect()
}

/// One loop iteration: expand the top-K pairs, keep the best bivariate
/// candidate, refine it with univariate operators, append the winner to the
/// pool, update the score history, and maintain the pair table (the winning
/// pair leaves, pairs with the new feature enter).
pub fn iterate_once(
    state: &mut EngineState,
    table: &Table,
    cfg: &EngineConfig,
    ev: &Evaluator,
) -> Result<IterationStats> {
    if let Some(cap) = cfg.max_order {
        let orders = &state.orders;
        state
            .ii
            .retain(|entry| orders[entry.i] + orders[entry.j] <= cap);
    }
    if state.ii.is_empty() {
        return Err(Error::data("interaction-information table is empty"));
    }

    let mut stats = IterationStats {
        bivariate_evaluations: 0,
        univariate_evaluations: 0,
        accepted: None,
    };
    let sets = if ev.drop_division_ops {
        OperatorSets::without_division()
    } else {
        OperatorSets::standard()
    };

    let top_k: Vec<IIEntry> = state.ii.iter().take(cfg.k_pairs).copied().collect();
    let mut candidates: Vec<(usize, usize, FeatureExpr)> = Vec::new();
    for entry in &top_k {
        for cand in bivariate_candidates(
            &state.pool[entry.i],
            state.kinds[entry.i],
            &state.pool[entry.j],
            state.kinds[entry.j],
            &sets,
        ) {
            if !state.rendered.contains(&cand.render()) {
                candidates.push((entry.i, entry.j, cand));
            }
        }
    }

    if candidates.is_empty() {
        // Every candidate re-derives an existing pool member: consume the
        // top pair and move on.
        state.ii.remove(0);
        return Ok(stats);
    }

    let context = evaluation_context(table, ev, cfg, state.iteration)?;
    let (eval_table, eval_ev) = match &context {
        Some((t, e)) => (t, e),
        None => (table, ev),
    };

    let bivariate_exprs: Vec<FeatureExpr> = candidates.iter().map(|(_, _, e)| e.clone()).collect();
    let scores = score_candidates(&state.pool, &bivariate_exprs, eval_table, eval_ev)?;
    stats.bivariate_evaluations = scores.len();
    let best = first_argmax(&scores);
    let (winner_i, winner_j, winner_bivariate) = candidates[best].clone();

    let mut unary: Vec<FeatureExpr> = univariate_candidates(&winner_bivariate, &sets)
        .into_iter()
        .filter(|cand| !state.rendered.contains(&cand.render()))
        .collect();
    if unary.is_empty() {
        unary.push(winner_bivariate.clone());
    }
    let unary_scores = score_candidates(&state.pool, &unary, eval_table, eval_ev)?;
    stats.univariate_evaluations = unary_scores.len();
    let winner = unary[first_argmax(&unary_scores)].clone();

    let rows = all_rows(table);
    let fitted = FittedExpr::fit(&winner, table, &rows)?;
    let view = VariableView::Numeric(fitted.eval(table, &rows)?);
    let new_index = state.pool.len();
    state.rendered.insert(winner.render());
    state.orders.push(winner.order());
    state.kinds.push(ColumnKind::Numeric);
    state.views.push(view);
    state.pool.push(winner.clone());

    let cv_after = cross_validate(&state.pool, table, ev)?.mean;
    state.history.push(cv_after);
    state.iteration += 1;

    state
        .ii
        .retain(|entry| !(entry.i == winner_i && entry.j == winner_j));
    let new_pairs: Vec<(usize, usize)> = (0..new_index).map(|m| (m, new_index)).collect();
    let mut new_entries =
        pairwise_ii(&state.views, &new_pairs, &state.target_view, &cfg.estimator)?;
    state.ii.append(&mut new_entries);
    sort_entries(&mut state.ii);

    stats.accepted = Some(FeatureReport {
        expr: winner.render(),
        order: winner.order(),
        cv_after,
    });
    Ok(stats)
}

/// Runs the loop until the stop condition fires, the iteration cap is hit,
/// or the pair table empties. Returns the final state and the report (the
/// report's test_score is left for the caller to fill).
pub fn run(table: &Table, cfg: &EngineConfig, ev: &Evaluator) -> Result<(EngineState, RunReport)> {
    let start = Instant::now();
    cfg.validate()?;
    let mut state = init(table, cfg)?;
    let baseline_cv = cross_validate(&state.pool, table, ev)?.mean;

    let mut features = Vec::new();
    let mut candidates_evaluated = 0usize;
    while state.iteration < cfg.max_iterations
        && !stop_condition(&state.history, cfg.patience)
        && !state.ii.is_empty()
    {
        let stats = iterate_once(&mut state, table, cfg, ev)?;
        candidates_evaluated += stats.bivariate_evaluations + stats.univariate_evaluations;
        if let Some(report) = stats.accepted {
            features.push(report);
        }
    }

    let report = RunReport {
        baseline_cv,
        history: state.history.clone(),
        features,
        test_score: None,
        seed: cfg.seed,
        config_echo: serde_json::to_value(cfg)?,
        candidates_evaluated,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((state, report))
}

/// Generic order-2 expand-reduce baseline. With `filter_factor` 1 every
/// feature pair is expanded in column order; above 1 only the top
/// ceil(pairs / filter_factor) pairs by interaction information are, in
/// descending-tau order. Candidates that improve the running CV score are
/// kept (single forward pass, first index wins ties).
pub fn expand_reduce(
    table: &Table,
    ev: &Evaluator,
    filter_factor: f64,
    cfg: &EngineConfig,
) -> Result<(Vec<FeatureExpr>, RunReport)> {
    let start = Instant::now();
    cfg.validate()?;
    if filter_factor < 1.0 {
        return Err(Error::config("filter_factor must be >= 1"));
    }
    let names = table.feature_names();
    if names.len() < 2 {
        return Err(Error::data("need at least 2 features"));
    }
    let rows = all_rows(table);
    let exprs: Vec<FeatureExpr> = names.iter().map(FeatureExpr::col).collect();
    let kinds: Vec<ColumnKind> = names
        .iter()
        .map(|n| Ok(table.column(n)?.kind()))
        .collect::<Result<_>>()?;
    let all_pairs: Vec<(usize, usize)> = (0..names.len())
        .flat_map(|i| ((i + 1)..names.len()).map(move |j| (i, j)))
        .collect();

    let selected_pairs: Vec<(usize, usize)> = if filter_factor > 1.0 {
        let views: Vec<VariableView> = names
            .iter()
            .map(|n| Ok(VariableView::from_column(table.column(n)?, &rows)))
            .collect::<Result<_>>()?;
        let target_view = VariableView::from_column(table.target_column()?, &rows);
        let entries = pairwise_ii(&views, &all_pairs, &target_view, &cfg.estimator)?;
        let keep = (all_pairs.len() as f64 / filter_factor).ceil() as usize;
        entries.iter().take(keep).map(|e| (e.i, e.j)).collect()
    } else {
        all_pairs
    };

    let sets = if ev.drop_division_ops {
        OperatorSets::without_division()
    } else {
        OperatorSets::standard()
    };
    let mut kept = exprs.clone();
    let mut kept_rendered: HashSet<String> = kept.iter().map(|e| e.render()).collect();
    let baseline_cv = cross_validate(&kept, table, ev)?.mean;
    let mut current = baseline_cv;
    let mut history = Vec::new();
    let mut features = Vec::new();
    let mut evaluated = 0usize;

    for &(i, j) in &selected_pairs {
        for cand in bivariate_candidates(&exprs[i], kinds[i], &exprs[j], kinds[j], &sets) {
            let rendered = cand.render();
            if kept_rendered.contains(&rendered) {
                continue;
            }
            let mut trial = kept.clone();
            trial.push(cand.clone());
            let score = cross_validate(&trial, table, ev)?.mean;
            evaluated += 1;
            if score > current {
                current = score;
                history.push(score);
                features.push(FeatureReport {
                    expr: rendered.clone(),
                    order: cand.order(),
                    cv_after: score,
                });
                kept_rendered.insert(rendered);
                kept = trial;
            }
        }
    }

    let report = RunReport {
        baseline_cv,
        history,
        features,
        test_score: None,
        seed: cfg.seed,
        config_echo: serde_json::to_value(cfg)?,
        candidates_evaluated: evaluated,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((kept, report))
}
