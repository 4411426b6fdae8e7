//! Command-line front-end: run the engine end to end, transform new data
//! with saved features, replay the synthetic pair-ranking verification, and
//! benchmark the expand-reduce acceleration. All machine-readable output is
//! JSON; every report embeds the resolved config, the seeds, and the
//! artifact version.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::downstream::{
    metric_f1_micro, metric_one_minus_rae, predict_classes, predict_regression, train_lasso,
    train_logreg, tune_hyperparameter, Evaluator, FittedPipeline, Metric, ModelKind, ModelSpec,
};
use crate::engine::{expand_reduce, run as engine_run, EngineConfig, RunReport};
use crate::error::{Error, Result};
use crate::featurelang::{parse_expr, FeatureExpr, FittedExpr, NodeState};
use crate::infotheory::{
    knn_cmi, knn_mi, pairwise_ii, sort_entries, EstimatorConfig, VariableView,
};
use crate::tabular::{
    load_csv, load_csv_unlabeled, make_folds, train_test_split, ColumnKind, Schema, SplitSpec,
    Table, TaskKind,
};

const FOLD_SEED_TAG: u64 = 0xf01d;
const ESTIMATOR_SEED_TAG: u64 = 0xe571;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Lasso,
    Logreg,
}

impl std::str::FromStr for ModelChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lasso" => Ok(ModelChoice::Lasso),
            "logreg" => Ok(ModelChoice::Logreg),
            other => Err(format!("unknown model '{other}' (expected lasso|logreg)")),
        }
    }
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    match s {
        "classification" => Ok(TaskKind::Classification),
        "regression" => Ok(TaskKind::Regression),
        other => Err(format!(
            "unknown task '{other}' (expected classification|regression)"
        )),
    }
}

/// Resolved configuration for a full engine run. May come from a JSON file,
/// from flags, or both (flags win). Echoed verbatim into every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: PathBuf,
    pub schema: Option<PathBuf>,
    pub target: String,
    pub task: Option<TaskKind>,
    pub model: Option<ModelChoice>,
    pub alpha: f64,
    pub c: f64,
    pub model_max_iterations: Option<usize>,
    pub model_tolerance: Option<f64>,
    pub k_pairs: usize,
    pub patience: usize,
    pub max_iterations: usize,
    pub knn_k: usize,
    pub subsample_size: usize,
    pub split_seed: u64,
    pub seed: u64,
    pub test_fraction: f64,
    pub folds: usize,
    pub prefilter: Option<usize>,
    pub max_order: Option<usize>,
    pub drop_division_ops: bool,
    pub tune: bool,
    pub eval_row_fraction: Option<f64>,
    pub max_cat_card: usize,
    pub output: PathBuf,
    pub features_out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: PathBuf::new(),
            schema: None,
            target: String::new(),
            task: None,
            model: None,
            alpha: 1e-3,
            c: 1.0,
            model_max_iterations: None,
            model_tolerance: None,
            k_pairs: 3,
            patience: 20,
            max_iterations: 100,
            knn_k: 3,
            subsample_size: 3000,
            split_seed: 0,
            seed: 0,
            test_fraction: 0.2,
            folds: 5,
            prefilter: None,
            max_order: None,
            drop_division_ops: false,
            tune: false,
            eval_row_fraction: None,
            max_cat_card: 20,
            output: PathBuf::new(),
            features_out: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.as_os_str().is_empty() {
            return Err(Error::config("data path is required"));
        }
        if self.target.is_empty() {
            return Err(Error::config("target column name is required"));
        }
        if self.task.is_none() {
            return Err(Error::config(
                "task is required (classification|regression)",
            ));
        }
        if self.output.as_os_str().is_empty() {
            return Err(Error::config("output path is required"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction must be in (0, 1)"));
        }
        if self.folds < 2 {
            return Err(Error::config("folds must be >= 2"));
        }
        self.engine_config().validate()?;
        self.model_spec()?.validate()
    }

    pub fn task(&self) -> TaskKind {
        self.task.expect("validated config has a task")
    }

    pub fn metric(&self) -> Metric {
        match self.task() {
            TaskKind::Classification => Metric::F1Micro,
            TaskKind::Regression => Metric::OneMinusRae,
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let task = self.task.ok_or_else(|| Error::config("task is required"))?;
        let choice = self.model.unwrap_or(match task {
            TaskKind::Regression => ModelChoice::Lasso,
            TaskKind::Classification => ModelChoice::Logreg,
        });
        match (choice, task) {
            (ModelChoice::Lasso, TaskKind::Classification) => {
                return Err(Error::config("lasso requires a regression task"))
            }
            (ModelChoice::Logreg, TaskKind::Regression) => {
                return Err(Error::config(
                    "logistic regression requires a classification task",
                ))
            }
            _ => {}
        }
        let mut spec = match choice {
            ModelChoice::Lasso => ModelSpec::lasso(self.alpha),
            ModelChoice::Logreg => ModelSpec::logistic_regression(self.c),
        };
        if let Some(n) = self.model_max_iterations {
            spec.max_iterations = n;
        }
        if let Some(t) = self.model_tolerance {
            spec.tolerance = t;
        }
        Ok(spec)
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            k: self.knn_k,
            subsample_size: self.subsample_size,
            seed: derive_seed(self.seed, ESTIMATOR_SEED_TAG),
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            k_pairs: self.k_pairs,
            patience: self.patience,
            max_iterations: self.max_iterations,
            estimator: self.estimator_config(),
            seed: self.seed,
            max_order: self.max_order,
            eval_row_fraction: self.eval_row_fraction,
            prefilter: self.prefilter,
        }
    }

    fn load_schema(&self) -> Result<Option<Schema>> {
        self.schema.as_deref().map(Schema::load).transpose()
    }

    fn load_table(&self) -> Result<Table> {
        let schema = self.load_schema()?;
        load_csv(
            &self.data,
            &self.target,
            self.task(),
            self.max_cat_card,
            schema.as_ref(),
        )
    }

    fn evaluator(&self, n_rows: usize, model: ModelSpec) -> Result<Evaluator> {
        let folds = make_folds(n_rows, self.folds, derive_seed(self.seed, FOLD_SEED_TAG))?;
        Evaluator::new(model, folds, self.metric(), self.drop_division_ops)
    }

    fn features_out_path(&self) -> PathBuf {
        self.features_out
            .clone()
            .unwrap_or_else(|| self.output.with_extension("features.json"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    pub split_seed: u64,
    pub algorithm_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScorePair {
    pub cv_score: f64,
    pub test_score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneOutcome {
    pub hyperparameter: f64,
    pub cv_score: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalScores {
    pub cv_score: f64,
    pub test_score: f64,
    pub percent_change_over_baseline: Option<f64>,
}

/// Top-level report written by `run`.
#[derive(Debug, Clone, Serialize)]
pub struct FullReport {
    pub artifact_version: String,
    pub config: serde_json::Value,
    pub seeds: Seeds,
    pub baseline: Option<ScorePair>,
    pub tuning_before: Option<TuneOutcome>,
    pub tuning_after: Option<TuneOutcome>,
    pub engine: Option<RunReport>,
    pub r#final: Option<FinalScores>,
    pub error: Option<String>,
    pub wall_time_seconds: f64,
}

/// One entry of the feature-set file consumed by `transform`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureFileEntry {
    pub expr: String,
    pub order: usize,
    pub cv_score_when_added: f64,
    pub states: Vec<NodeState>,
}

pub fn percent_change(before: f64, after: f64) -> Option<f64> {
    if before.abs() < 1e-12 {
        None
    } else {
        Some(100.0 * (after - before) / before.abs())
    }
}

/// Fits the preprocessing pipeline and model on all of `train`, then scores
/// all of `test` with the task metric.
fn holdout_score(
    features: &[FeatureExpr],
    train: &Table,
    test: &Table,
    model: &ModelSpec,
) -> Result<f64> {
    let train_rows: Vec<usize> = (0..train.n_rows).collect();
    let test_rows: Vec<usize> = (0..test.n_rows).collect();
    let (pipeline, x_train) = FittedPipeline::fit(features, train, &train_rows)?;
    let x_test = pipeline.transform(test, &test_rows)?;
    match model.kind {
        ModelKind::Lasso { alpha } => {
            let y_train: Vec<f64> = train.target_column()?.numeric_values()?.to_vec();
            let y_test: Vec<f64> = test.target_column()?.numeric_values()?.to_vec();
            let fit = train_lasso(
                &x_train,
                &y_train,
                alpha,
                model.max_iterations,
                model.tolerance,
            );
            let pred = predict_regression(&fit, &x_test, test.n_rows);
            metric_one_minus_rae(&y_test, &pred)
        }
        ModelKind::LogisticRegression { c } => {
            let (train_codes, _) = train.target_column()?.categorical_codes()?;
            let (test_codes, _) = test.target_column()?.categorical_codes()?;
            let fit = train_logreg(
                &x_train,
                train_codes,
                c,
                model.max_iterations,
                model.tolerance,
            )?;
            let pred = predict_classes(&fit, &x_test, test.n_rows);
            metric_f1_micro(test_codes, &pred)
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_features_file(
    path: &Path,
    engineered: &[FeatureExpr],
    reports: &[crate::engine::FeatureReport],
    train: &Table,
) -> Result<()> {
    let rows: Vec<usize> = (0..train.n_rows).collect();
    let mut entries = Vec::with_capacity(engineered.len());
    for (expr, report) in engineered.iter().zip(reports) {
        let fitted = FittedExpr::fit(expr, train, &rows)?;
        entries.push(FeatureFileEntry {
            expr: report.expr.clone(),
            order: report.order,
            cv_score_when_added: report.cv_after,
            states: fitted.states(),
        });
    }
    write_json(path, &entries)
}

/// Full protocol: load, split, optionally tune, measure the raw-feature
/// baseline on the held-out test set, run the engine on the training set,
/// optionally re-tune with the engineered features, refit, and report the
/// final test score next to the baseline.
pub fn cmd_run(config: &RunConfig) -> Result<FullReport> {
    let start = Instant::now();
    config.validate()?;
    let config_echo = serde_json::to_value(config)?;
    let seeds = Seeds {
        split_seed: config.split_seed,
        algorithm_seed: config.seed,
    };

    let table = config.load_table()?;
    let (train, test) = train_test_split(
        &table,
        &SplitSpec {
            test_fraction: config.test_fraction,
            seed: config.split_seed,
        },
    )?;

    let mut model = config.model_spec()?;
    let original_features: Vec<FeatureExpr> = train
        .feature_names()
        .into_iter()
        .map(FeatureExpr::col)
        .collect();

    let mut report = FullReport {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config_echo,
        seeds,
        baseline: None,
        tuning_before: None,
        tuning_after: None,
        engine: None,
        r#final: None,
        error: None,
        wall_time_seconds: 0.0,
    };

    let outcome: Result<()> = (|| {
        let ev = config.evaluator(train.n_rows, model)?;
        if config.tune {
            let (value, cv) =
                tune_hyperparameter(&original_features, &train, &ev, model.hyperparameter_grid())?;
            model = model.with_hyperparameter(value);
            report.tuning_before = Some(TuneOutcome {
                hyperparameter: value,
                cv_score: cv,
            });
        }

        let ev = config.evaluator(train.n_rows, model)?;
        let baseline_test = holdout_score(&original_features, &train, &test, &model)?;
        let engine_cfg = config.engine_config();
        let (state, mut engine_report) = engine_run(&train, &engine_cfg, &ev)?;
        report.baseline = Some(ScorePair {
            cv_score: engine_report.baseline_cv,
            test_score: baseline_test,
        });

        let mut final_model = model;
        if config.tune {
            let (value, cv) =
                tune_hyperparameter(&state.pool, &train, &ev, model.hyperparameter_grid())?;
            final_model = model.with_hyperparameter(value);
            report.tuning_after = Some(TuneOutcome {
                hyperparameter: value,
                cv_score: cv,
            });
        }

        let test_after = holdout_score(&state.pool, &train, &test, &final_model)?;
        engine_report.test_score = Some(test_after);
        let final_cv = engine_report
            .history
            .last()
            .copied()
            .unwrap_or(engine_report.baseline_cv);

        let engineered_count = engine_report.features.len();
        let engineered = &state.pool[state.pool.len() - engineered_count..];
        write_features_file(
            &config.features_out_path(),
            engineered,
            &engine_report.features,
            &train,
        )?;

        report.r#final = Some(FinalScores {
            cv_score: final_cv,
            test_score: test_after,
            percent_change_over_baseline: percent_change(baseline_test, test_after),
        });
        report.engine = Some(engine_report);
        Ok(())
    })();

    report.wall_time_seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(()) => {
            write_json(&config.output, &report)?;
            Ok(report)
        }
        Err(err) => {
            report.error = Some(err.to_string());
            // Partial report for post-mortem, but the run still fails.
            let _ = write_json(&config.output, &report);
            Err(err)
        }
    }
}

/// Appends saved engineered features to a CSV. Original cells pass through
/// byte-for-byte; appended columns are named by their rendered expressions.
pub fn cmd_transform(
    features_path: &Path,
    data_path: &Path,
    output_path: &Path,
    max_cat_card: usize,
    schema_path: Option<&Path>,
) -> Result<()> {
    let text = std::fs::read_to_string(features_path)?;
    let entries: Vec<FeatureFileEntry> = serde_json::from_str(&text)?;

    let mut fitted_features = Vec::with_capacity(entries.len());
    for entry in &entries {
        let expr = parse_expr(&entry.expr)?;
        fitted_features.push(FittedExpr::from_states(expr, &entry.states)?);
    }

    // The saved features pin the kinds their columns must have; feed those
    // into the loader so value-based inference cannot disagree with the
    // table the features were fitted on. An explicit schema entry wins.
    let explicit = schema_path.map(Schema::load).transpose()?;
    let mut schema = explicit.clone().unwrap_or_default();
    for (fitted, entry) in fitted_features.iter().zip(&entries) {
        for (column, kind) in fitted.column_kinds() {
            let kind_str = match kind {
                ColumnKind::Numeric => "numeric",
                ColumnKind::Categorical => "categorical",
            };
            match schema.columns.get(&column) {
                None => {
                    schema.columns.insert(column, kind_str.to_string());
                }
                Some(existing) if existing == kind_str => {}
                Some(existing) => {
                    let pinned_explicitly = explicit
                        .as_ref()
                        .is_some_and(|e| e.columns.contains_key(&column));
                    if !pinned_explicitly {
                        return Err(Error::expr(format!(
                            "feature '{}' needs column '{column}' as {kind_str}, but another feature requires {existing}",
                            entry.expr
                        )));
                    }
                }
            }
        }
    }
    let table = load_csv_unlabeled(data_path, max_cat_card, Some(&schema))?;
    let rows: Vec<usize> = (0..table.n_rows).collect();

    let mut new_columns: Vec<(String, Vec<f64>)> = Vec::with_capacity(entries.len());
    for (fitted, entry) in fitted_features.iter().zip(&entries) {
        let values = fitted
            .eval(&table, &rows)
            .map_err(|e| Error::expr(format!("evaluating '{}': {e}", entry.expr)))?;
        new_columns.push((entry.expr.clone(), values));
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(data_path)?;
    let mut writer = csv::WriterBuilder::new().from_path(output_path)?;
    let mut header: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    header.extend(new_columns.iter().map(|(name, _)| name.clone()));
    writer.write_record(&header)?;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let mut fields: Vec<String> = record.iter().map(|f| f.to_string()).collect();
        for (_, values) in &new_columns {
            fields.push(format!("{}", values[i]));
        }
        writer.write_record(&fields)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetFunction {
    Sum,
    Product,
    SinPoly,
    ExpMax,
}

impl TargetFunction {
    pub const ALL: [TargetFunction; 4] = [
        TargetFunction::Sum,
        TargetFunction::Product,
        TargetFunction::SinPoly,
        TargetFunction::ExpMax,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TargetFunction::Sum => "sum",
            TargetFunction::Product => "product",
            TargetFunction::SinPoly => "sin-poly",
            TargetFunction::ExpMax => "exp-max",
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> f64 {
        let v = match self {
            TargetFunction::Sum => x + y,
            TargetFunction::Product => x * y,
            TargetFunction::SinPoly => (x * x + x * y + y * y).sin(),
            TargetFunction::ExpMax => x.max(y).abs().exp(),
        };
        if v.is_finite() {
            v
        } else {
            0.0
        }
    }
}

impl std::str::FromStr for TargetFunction {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sum" => Ok(TargetFunction::Sum),
            "product" => Ok(TargetFunction::Product),
            "sin-poly" => Ok(TargetFunction::SinPoly),
            "exp-max" => Ok(TargetFunction::ExpMax),
            other => Err(format!(
                "unknown target function '{other}' (expected sum|product|sin-poly|exp-max)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionRanks {
    /// Rank of the true pair per synthetic target, in pair order (rank 0 is
    /// best).
    pub ranks: Vec<usize>,
    /// Histogram of those ranks over 0..n_pairs.
    pub histogram: Vec<usize>,
    pub top_20pct_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub artifact_version: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub n_features: usize,
    pub n_pairs: usize,
    pub functions: BTreeMap<String, FunctionRanks>,
    pub wall_time_seconds: f64,
}

/// For every feature pair (i, j) and every target function f, builds the
/// synthetic target y = f(Fi, Fj), scores all pairs' interaction information
/// against it, and records where the true pair ranks.
pub fn verify_ii(
    table: &Table,
    functions: &[TargetFunction],
    cfg: &EstimatorConfig,
) -> Result<VerifyReport> {
    let start = Instant::now();
    cfg.validate()?;
    let rows: Vec<usize> = (0..table.n_rows).collect();
    let numeric: Vec<&crate::tabular::Column> = table
        .columns
        .iter()
        .filter(|c| c.kind() == ColumnKind::Numeric && Some(&c.name) != table.target.as_ref())
        .collect();
    if numeric.len() < 4 {
        return Err(Error::data(format!(
            "pair-ranking verification needs at least 4 numeric features, got {}",
            numeric.len()
        )));
    }
    let views: Vec<VariableView> = numeric
        .iter()
        .map(|c| VariableView::from_column(c, &rows))
        .collect();
    let values: Vec<&[f64]> = views
        .iter()
        .map(|v| match v {
            VariableView::Numeric(vals) => vals.as_slice(),
            VariableView::Categorical(_) => unreachable!("filtered to numeric"),
        })
        .collect();
    let d = views.len();
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
        .collect();
    let n_pairs = pairs.len();

    // Without subsampling, tau = CMI - MI splits exactly and the MI term
    // does not depend on the synthetic target, so compute it once per pair.
    let mi_cache: Option<Vec<f64>> = if table.n_rows <= cfg.subsample_size {
        use rayon::prelude::*;
        Some(
            pairs
                .par_iter()
                .map(|&(i, j)| Ok(knn_mi(&views[i], &views[j], cfg)?.nats))
                .collect::<Result<Vec<f64>>>()?,
        )
    } else {
        None
    };

    let score_pairs = |target: VariableView| -> Result<Vec<crate::infotheory::IIEntry>> {
        match &mi_cache {
            Some(mi) => {
                use rayon::prelude::*;
                let mut entries: Vec<crate::infotheory::IIEntry> = pairs
                    .par_iter()
                    .zip(mi)
                    .map(|(&(i, j), &mi_ij)| {
                        let cmi = knn_cmi(&views[i], &views[j], &target, cfg)?.nats;
                        Ok(crate::infotheory::IIEntry {
                            tau: cmi - mi_ij,
                            i,
                            j,
                        })
                    })
                    .collect::<Result<_>>()?;
                sort_entries(&mut entries);
                Ok(entries)
            }
            None => pairwise_ii(&views, &pairs, &target, cfg),
        }
    };

    let mut out = BTreeMap::new();
    for f in functions {
        let mut ranks = Vec::with_capacity(n_pairs);
        for &(i, j) in &pairs {
            let target: Vec<f64> = values[i]
                .iter()
                .zip(values[j])
                .map(|(&a, &b)| f.apply(a, b))
                .collect();
            let entries = score_pairs(VariableView::Numeric(target))?;
            let rank = entries
                .iter()
                .position(|e| e.i == i && e.j == j)
                .expect("true pair present in ranking");
            ranks.push(rank);
        }
        let mut histogram = vec![0usize; n_pairs];
        for &r in &ranks {
            histogram[r] += 1;
        }
        let cutoff = ((n_pairs as f64) * 0.2).ceil() as usize;
        let top = ranks.iter().filter(|&&r| r < cutoff).count();
        out.insert(
            f.name().to_string(),
            FunctionRanks {
                ranks,
                histogram,
                top_20pct_fraction: top as f64 / n_pairs as f64,
            },
        );
    }
    Ok(VerifyReport {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config: serde_json::json!({
            "functions": functions.iter().map(|f| f.name()).collect::<Vec<_>>(),
            "estimator": cfg,
        }),
        seed: cfg.seed,
        n_features: d,
        n_pairs,
        functions: out,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn cmd_verify_ii(
    data_path: &Path,
    functions: &[TargetFunction],
    output_path: &Path,
    cfg: &EstimatorConfig,
    max_cat_card: usize,
    schema_path: Option<&Path>,
) -> Result<VerifyReport> {
    let schema = schema_path.map(Schema::load).transpose()?;
    let table = load_csv_unlabeled(data_path, max_cat_card, schema.as_ref())?;
    let report = verify_ii(&table, functions, cfg)?;
    write_json(output_path, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub filter_factor: f64,
    pub candidates_evaluated: usize,
    pub cv_score: f64,
    pub test_score: f64,
    pub features_kept: usize,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub artifact_version: String,
    pub config: serde_json::Value,
    pub seeds: Seeds,
    pub rows: Vec<BenchRow>,
    pub wall_time_seconds: f64,
}

/// Runs the expand-reduce baseline at each filter factor and reports the
/// candidate counts, scores, and wall times side by side.
pub fn cmd_expand_reduce_bench(config: &RunConfig, filter_factors: &[f64]) -> Result<BenchReport> {
    let start = Instant::now();
    config.validate()?;
    if filter_factors.is_empty() {
        return Err(Error::config("at least one filter factor is required"));
    }
    let table = config.load_table()?;
    let (train, test) = train_test_split(
        &table,
        &SplitSpec {
            test_fraction: config.test_fraction,
            seed: config.split_seed,
        },
    )?;
    let model = config.model_spec()?;
    let ev = config.evaluator(train.n_rows, model)?;
    let engine_cfg = config.engine_config();

    let mut rows = Vec::with_capacity(filter_factors.len());
    for &factor in filter_factors {
        let t0 = Instant::now();
        let (kept, report) = expand_reduce(&train, &ev, factor, &engine_cfg)?;
        let cv_score = report.history.last().copied().unwrap_or(report.baseline_cv);
        let test_score = holdout_score(&kept, &train, &test, &model)?;
        rows.push(BenchRow {
            filter_factor: factor,
            candidates_evaluated: report.candidates_evaluated,
            cv_score,
            test_score,
            features_kept: kept.len(),
            wall_time_seconds: t0.elapsed().as_secs_f64(),
        });
    }
    let report = BenchReport {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config: serde_json::to_value(config)?,
        seeds: Seeds {
            split_seed: config.split_seed,
            algorithm_seed: config.seed,
        },
        rows,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&config.output, &report)?;
    Ok(report)
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long, value_parser = parse_task)]
    task: Option<TaskKind>,
    #[arg(long)]
    model: Option<ModelChoice>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    model_max_iterations: Option<usize>,
    #[arg(long)]
    model_tolerance: Option<f64>,
    /// Top pairs expanded per iteration (K).
    #[arg(long)]
    k_pairs: Option<usize>,
    /// Stop patience (P), an even number.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long)]
    subsample_size: Option<usize>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    prefilter: Option<usize>,
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long, action = clap::ArgAction::SetTrue)]
    drop_division_ops: bool,
    #[arg(long, action = clap::ArgAction::SetTrue)]
    tune: bool,
    #[arg(long)]
    eval_row_fraction: Option<f64>,
    #[arg(long)]
    max_cat_card: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    features_out: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! override_field {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
            (opt $field:ident) => {
                if self.$field.is_some() {
                    cfg.$field = self.$field;
                }
            };
        }
        override_field!(data);
        override_field!(opt schema);
        override_field!(target);
        override_field!(opt task);
        override_field!(opt model);
        override_field!(alpha);
        override_field!(c);
        override_field!(opt model_max_iterations);
        override_field!(opt model_tolerance);
        override_field!(k_pairs);
        override_field!(patience);
        override_field!(max_iterations);
        override_field!(knn_k);
        override_field!(subsample_size);
        override_field!(split_seed);
        override_field!(seed);
        override_field!(test_fraction);
        override_field!(folds);
        override_field!(opt prefilter);
        override_field!(opt max_order);
        if self.drop_division_ops {
            cfg.drop_division_ops = true;
        }
        if self.tune {
            cfg.tune = true;
        }
        override_field!(opt eval_row_fraction);
        override_field!(max_cat_card);
        override_field!(output);
        override_field!(opt features_out);
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TransformArgs {
    /// Feature-set JSON produced by `run`.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    max_cat_card: usize,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Comma-separated list: sum,product,sin-poly,exp-max.
    #[arg(long, value_delimiter = ',')]
    functions: Option<Vec<TargetFunction>>,
    #[arg(long, default_value_t = 3)]
    knn_k: usize,
    #[arg(long, default_value_t = 3000)]
    subsample_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    max_cat_card: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated filter factors, e.g. 1,5.
    #[arg(long, value_delimiter = ',', default_value = "1,5")]
    filter_factors: Vec<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run automated feature engineering end to end and write a JSON report.
    Run(Box<RunArgs>),
    /// Append saved engineered features to a CSV.
    Transform(TransformArgs),
    /// Rank-verify the pair scoring on synthetic targets built from feature
    /// pairs.
    VerifyIi(VerifyArgs),
    /// Compare the expand-reduce baseline with and without pair filtering.
    ExpandReduceBench(Box<BenchArgs>),
}

#[derive(Debug, Parser)]
#[command(
    name = "iife",
    version,
    about = "Automated feature engineering driven by interaction-information pair ranking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn configure_threads() {
    if let Ok(value) = std::env::var("IIFE_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = args.into_config()?;
            cmd_run(&config)?;
        }
        Command::Transform(args) => {
            cmd_transform(
                &args.features,
                &args.data,
                &args.output,
                args.max_cat_card,
                args.schema.as_deref(),
            )?;
        }
        Command::VerifyIi(args) => {
            let functions = args
                .functions
                .unwrap_or_else(|| TargetFunction::ALL.to_vec());
            let cfg = EstimatorConfig {
                k: args.knn_k,
                subsample_size: args.subsample_size,
                seed: args.seed,
            };
            cmd_verify_ii(
                &args.data,
                &functions,
                &args.output,
                &cfg,
                args.max_cat_card,
                args.schema.as_deref(),
            )?;
        }
        Command::ExpandReduceBench(args) => {
            let factors = args.filter_factors.clone();
            let config = args.run.into_config()?;
            cmd_expand_reduce_bench(&config, &factors)?;
        }
    }
    Ok(())
}

pub fn main() -> i32 {
    configure_threads();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_change_conventions() {
        assert_eq!(percent_change(0.5, 0.75), Some(50.0));
        assert_eq!(percent_change(-0.5, -0.25), Some(50.0));
        assert_eq!(percent_change(0.0, 0.75), None);
    }

    #[test]
    fn target_function_parsing_and_values() {
        use std::str::FromStr;
        assert_eq!(
            TargetFunction::from_str("sum").unwrap(),
            TargetFunction::Sum
        );
        assert_eq!(
            TargetFunction::from_str("exp-max").unwrap(),
            TargetFunction::ExpMax
        );
        assert!(TargetFunction::from_str("nope").is_err());

        assert_eq!(TargetFunction::Sum.apply(2.0, 3.0), 5.0);
        assert_eq!(TargetFunction::Product.apply(2.0, 3.0), 6.0);
        assert_eq!(
            TargetFunction::SinPoly.apply(1.0, 2.0),
            (1.0f64 + 2.0 + 4.0).sin()
        );
        assert_eq!(TargetFunction::ExpMax.apply(-3.0, 1.0), 1.0f64.exp());
        // Overflow lands on the 0 convention instead of infinity.
        assert_eq!(TargetFunction::ExpMax.apply(1e300, 0.0), 0.0);
    }

    #[test]
    fn run_config_file_merge_and_flag_override() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("cfg.json");
        std::fs::write(
            &config_path,
            r#"{"data": "a.csv", "target": "y", "task": "regression", "output": "out.json", "seed": 7}"#,
        )
        .unwrap();
        let cli = Cli::parse_from([
            "iife",
            "run",
            "--config",
            config_path.to_str().unwrap(),
            "--seed",
            "9",
            "--patience",
            "4",
        ]);
        let Command::Run(args) = cli.command else {
            panic!("expected run")
        };
        let cfg = args.into_config().unwrap();
        assert_eq!(cfg.data, PathBuf::from("a.csv"));
        assert_eq!(cfg.seed, 9); // flag wins
        assert_eq!(cfg.patience, 4);
        assert_eq!(cfg.target, "y");
        assert_eq!(cfg.task, Some(TaskKind::Regression));
    }

    #[test]
    fn run_config_validation_requires_core_fields() {
        let cfg = RunConfig::default();
        assert!(cfg.validate().is_err());

        let cfg = RunConfig {
            data: "d.csv".into(),
            target: "y".into(),
            task: Some(TaskKind::Regression),
            output: "o.json".into(),
            ..Default::default()
        };
        assert!(cfg.validate().is_ok());

        let odd_patience = RunConfig {
            patience: 7,
            ..cfg.clone()
        };
        assert!(odd_patience.validate().is_err());

        let bad_model = RunConfig {
            model: Some(ModelChoice::Logreg),
            ..cfg
        };
        assert!(bad_model.validate().is_err());
    }

    #[test]
    fn model_spec_defaults_follow_task() {
        let regression = RunConfig {
            data: "d.csv".into(),
            target: "y".into(),
            task: Some(TaskKind::Regression),
            output: "o.json".into(),
            ..Default::default()
        };
        assert!(matches!(
            regression.model_spec().unwrap().kind,
            ModelKind::Lasso { .. }
        ));
        let classification = RunConfig {
            task: Some(TaskKind::Classification),
            ..regression
        };
        assert!(matches!(
            classification.model_spec().unwrap().kind,
            ModelKind::LogisticRegression { .. }
        ));
    }
}
