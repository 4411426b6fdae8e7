//! Downstream linear models (Lasso, logistic regression), evaluation
//! metrics, and the cross-validation evaluator. Every fold fits its own
//! imputer, expression states, encoders, and scaler on the fold's training
//! rows only, then scores the held-out rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurelang::{FeatureExpr, FittedExpr};
use crate::tabular::{
    apply_minmax, apply_onehot, fit_minmax, fit_onehot, Column, ColumnData, ColumnKind,
    EncoderState, FoldPlan, ScalerState, Table,
};

/// Hyperparameter grids for the optional pre/post tuning pass.
pub const LASSO_ALPHA_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];
pub const LOGREG_C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ModelKind {
    Lasso {
        alpha: f64,
    },
    #[serde(rename = "logreg")]
    LogisticRegression {
        c: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl ModelSpec {
    pub fn lasso(alpha: f64) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Lasso { alpha },
            max_iterations: 1000,
            tolerance: 1e-6,
        }
    }

    pub fn logistic_regression(c: f64) -> ModelSpec {
        ModelSpec {
            kind: ModelKind::LogisticRegression { c },
            max_iterations: 300,
            tolerance: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::Lasso { alpha } => {
                if alpha < 0.0 {
                    return Err(Error::config("lasso alpha must be >= 0"));
                }
            }
            ModelKind::LogisticRegression { c } => {
                if c <= 0.0 {
                    return Err(Error::config("logistic regression C must be > 0"));
                }
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::config("model max_iterations must be >= 1"));
        }
        Ok(())
    }

    pub fn with_hyperparameter(&self, value: f64) -> ModelSpec {
        let kind = match self.kind {
            ModelKind::Lasso { .. } => ModelKind::Lasso { alpha: value },
            ModelKind::LogisticRegression { .. } => ModelKind::LogisticRegression { c: value },
        };
        ModelSpec { kind, ..*self }
    }

    pub fn hyperparameter_grid(&self) -> &'static [f64] {
        match self.kind {
            ModelKind::Lasso { .. } => &LASSO_ALPHA_GRID,
            ModelKind::LogisticRegression { .. } => &LOGREG_C_GRID,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    F1Micro,
    OneMinusRae,
}

/// Cross-validation evaluator: model, fold plan, metric, and the operator
/// flag that drops division ops for models that dislike them.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub model: ModelSpec,
    pub folds: FoldPlan,
    pub metric: Metric,
    pub drop_division_ops: bool,
}

impl Evaluator {
    pub fn new(
        model: ModelSpec,
        folds: FoldPlan,
        metric: Metric,
        drop_division_ops: bool,
    ) -> Result<Evaluator> {
        model.validate()?;
        match (metric, model.kind) {
            (Metric::F1Micro, ModelKind::LogisticRegression { .. }) => {}
            (Metric::OneMinusRae, ModelKind::Lasso { .. }) => {}
            _ => {
                return Err(Error::config(
                    "metric/model mismatch: f1_micro pairs with logistic regression, one_minus_rae with lasso",
                ))
            }
        }
        Ok(Evaluator {
            model,
            folds,
            metric,
            drop_division_ops,
        })
    }

    /// Metric value substituted for a fold whose model or metric fails.
    fn floor_score(&self) -> f64 {
        0.0
    }
}

/// Trained linear model: one weight vector per class for one-vs-rest
/// classification, a single one for regression.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub classes: Vec<u32>,
    pub warning: bool,
}

fn soft_threshold(z: f64, alpha: f64) -> f64 {
    if z > alpha {
        z - alpha
    } else if z < -alpha {
        z + alpha
    } else {
        0.0
    }
}

/// Coordinate-descent Lasso on (1/2n)||y - X beta - b||^2 + alpha ||beta||_1.
/// Columns are centered internally; the intercept is recovered at the end.
/// Stops when no coordinate moves more than `tolerance` in one pass.
pub fn train_lasso(
    x_cols: &[Vec<f64>],
    y: &[f64],
    alpha: f64,
    max_iterations: usize,
    tolerance: f64,
) -> FitResult {
    let n = y.len();
    let p = x_cols.len();
    let nf = n as f64;
    let y_mean = y.iter().sum::<f64>() / nf;

    let col_means: Vec<f64> = x_cols.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let centered: Vec<Vec<f64>> = x_cols
        .iter()
        .zip(&col_means)
        .map(|(c, &m)| c.iter().map(|&v| v - m).collect())
        .collect();
    let col_scale: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|&v| v * v).sum::<f64>() / nf)
        .collect();

    let mut beta = vec![0.0; p];
    let mut residual: Vec<f64> = y.iter().map(|&v| v - y_mean).collect();
    let mut converged = false;

    for _ in 0..max_iterations {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if col_scale[j] == 0.0 {
                continue; // constant column stays at zero
            }
            let old = beta[j];
            let col = &centered[j];
            let mut dot = 0.0;
            for (r, &x) in residual.iter().zip(col) {
                dot += r * x;
            }
            let z = dot / nf + col_scale[j] * old;
            let new = soft_threshold(z, alpha) / col_scale[j];
            if new != old {
                let delta = new - old;
                for (r, &x) in residual.iter_mut().zip(col) {
                    *r -= delta * x;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta <= tolerance {
            converged = true;
            break;
        }
    }

    let intercept = y_mean
        - beta
            .iter()
            .zip(&col_means)
            .map(|(&b, &m)| b * m)
            .sum::<f64>();
    FitResult {
        coefficients: vec![beta],
        intercepts: vec![intercept],
        classes: Vec::new(),
        warning: !converged,
    }
}

/// Worst KKT violation of a Lasso solution over all coordinates; at an exact
/// optimum this is 0.
pub fn lasso_kkt_residual(x_cols: &[Vec<f64>], y: &[f64], fit: &FitResult, alpha: f64) -> f64 {
    let n = y.len() as f64;
    let beta = &fit.coefficients[0];
    let b0 = fit.intercepts[0];
    let residual: Vec<f64> = (0..y.len())
        .map(|i| {
            let mut pred = b0;
            for (j, col) in x_cols.iter().enumerate() {
                pred += beta[j] * col[i];
            }
            y[i] - pred
        })
        .collect();
    let mut worst = 0.0f64;
    for (j, col) in x_cols.iter().enumerate() {
        let centered_scale = {
            let m = col.iter().sum::<f64>() / n;
            col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n
        };
        if centered_scale == 0.0 {
            continue;
        }
        let g = col.iter().zip(&residual).map(|(&x, &r)| x * r).sum::<f64>() / n;
        let violation = if beta[j] == 0.0 {
            (g.abs() - alpha).max(0.0)
        } else {
            (g - alpha * beta[j].signum()).abs()
        };
        worst = worst.max(violation);
    }
    worst
}

fn stable_sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn softplus(s: f64) -> f64 {
    if s > 30.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// Regularized binary cross-entropy and its gradient:
/// (1/n) sum softplus(s) - t*s + (1/(2Cn))||w||^2 with s = x.w + b.
/// Exposed so the gradient can be checked against finite differences.
pub fn logreg_loss_and_gradient(
    x_cols: &[Vec<f64>],
    targets: &[f64],
    w: &[f64],
    b: f64,
    c: f64,
) -> (f64, Vec<f64>, f64) {
    let n = targets.len();
    let nf = n as f64;
    let mut scores = vec![b; n];
    for (j, col) in x_cols.iter().enumerate() {
        let wj = w[j];
        if wj != 0.0 {
            for (s, &x) in scores.iter_mut().zip(col) {
                *s += wj * x;
            }
        }
    }
    let mut loss = 0.0;
    let mut errors = vec![0.0; n];
    for i in 0..n {
        loss += softplus(scores[i]) - targets[i] * scores[i];
        errors[i] = stable_sigmoid(scores[i]) - targets[i];
    }
    loss /= nf;
    let reg = 1.0 / (2.0 * c * nf);
    loss += reg * w.iter().map(|&v| v * v).sum::<f64>();

    let mut grad_w = vec![0.0; x_cols.len()];
    for (j, col) in x_cols.iter().enumerate() {
        let mut dot = 0.0;
        for (e, &x) in errors.iter().zip(col) {
            dot += e * x;
        }
        grad_w[j] = dot / nf + w[j] / (c * nf);
    }
    let grad_b = errors.iter().sum::<f64>() / nf;
    (loss, grad_w, grad_b)
}

/// One binary logistic fit by gradient descent with Barzilai-Borwein step
/// sizes and Armijo backtracking. Returns (weights, intercept, converged).
fn fit_binary_logreg(
    x_cols: &[Vec<f64>],
    targets: &[f64],
    c: f64,
    max_iterations: usize,
    tolerance: f64,
) -> (Vec<f64>, f64, bool) {
    let p = x_cols.len();
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let (mut loss, mut grad_w, mut grad_b) = logreg_loss_and_gradient(x_cols, targets, &w, b, c);
    let mut prev: Option<(Vec<f64>, f64, Vec<f64>, f64)> = None;
    let mut step = 1.0;

    for _ in 0..max_iterations {
        let grad_norm = grad_w.iter().fold(grad_b.abs(), |acc, &g| acc.max(g.abs()));
        if grad_norm <= tolerance {
            return (w, b, true);
        }

        if let Some((pw, pb, pgw, pgb)) = &prev {
            // BB2 step from the last parameter and gradient displacement.
            let mut sy = (b - pb) * (grad_b - pgb);
            let mut yy = (grad_b - pgb) * (grad_b - pgb);
            for j in 0..p {
                let dy = grad_w[j] - pgw[j];
                sy += (w[j] - pw[j]) * dy;
                yy += dy * dy;
            }
            if yy > 0.0 && sy.is_finite() {
                step = (sy / yy).abs().clamp(1e-10, 1e10);
            }
        }

        let grad_sq: f64 = grad_w.iter().map(|&g| g * g).sum::<f64>() + grad_b * grad_b;
        let mut eta = step;
        let mut accepted = false;
        for _ in 0..60 {
            let cand_w: Vec<f64> = w.iter().zip(&grad_w).map(|(&v, &g)| v - eta * g).collect();
            let cand_b = b - eta * grad_b;
            let (cand_loss, cand_gw, cand_gb) =
                logreg_loss_and_gradient(x_cols, targets, &cand_w, cand_b, c);
            if cand_loss <= loss - 1e-4 * eta * grad_sq {
                prev = Some((w, b, grad_w, grad_b));
                w = cand_w;
                b = cand_b;
                loss = cand_loss;
                grad_w = cand_gw;
                grad_b = cand_gb;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            // No descent step at double precision; treat as stalled.
            break;
        }
    }
    let grad_norm = grad_w.iter().fold(grad_b.abs(), |acc, &g| acc.max(g.abs()));
    (w, b, grad_norm <= tolerance)
}

/// One-vs-rest logistic regression over integer class labels. A single
/// observed class yields a constant predictor with the warning flag set.
pub fn train_logreg(
    x_cols: &[Vec<f64>],
    y: &[u32],
    c: f64,
    max_iterations: usize,
    tolerance: f64,
) -> Result<FitResult> {
    if y.is_empty() {
        return Err(Error::data("cannot train on empty targets"));
    }
    let mut classes: Vec<u32> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Ok(FitResult {
            coefficients: vec![vec![0.0; x_cols.len()]],
            intercepts: vec![0.0],
            classes,
            warning: true,
        });
    }
    let mut coefficients = Vec::with_capacity(classes.len());
    let mut intercepts = Vec::with_capacity(classes.len());
    let mut warning = false;
    for &class in &classes {
        let targets: Vec<f64> = y
            .iter()
            .map(|&label| if label == class { 1.0 } else { 0.0 })
            .collect();
        let (w, b, converged) = fit_binary_logreg(x_cols, &targets, c, max_iterations, tolerance);
        warning |= !converged;
        coefficients.push(w);
        intercepts.push(b);
    }
    Ok(FitResult {
        coefficients,
        intercepts,
        classes,
        warning,
    })
}

pub fn predict_regression(fit: &FitResult, x_cols: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
    let beta = &fit.coefficients[0];
    let mut out = vec![fit.intercepts[0]; n_rows];
    for (j, col) in x_cols.iter().enumerate() {
        let bj = beta[j];
        if bj != 0.0 {
            for (o, &x) in out.iter_mut().zip(col) {
                *o += bj * x;
            }
        }
    }
    out
}

/// Argmax of the per-class probabilities; ties go to the first class index.
pub fn predict_classes(fit: &FitResult, x_cols: &[Vec<f64>], n_rows: usize) -> Vec<u32> {
    if fit.classes.len() == 1 {
        return vec![fit.classes[0]; n_rows];
    }
    let mut best_score = vec![f64::NEG_INFINITY; n_rows];
    let mut best_class = vec![fit.classes[0]; n_rows];
    for (ci, &class) in fit.classes.iter().enumerate() {
        let mut scores = vec![fit.intercepts[ci]; n_rows];
        for (wj, col) in fit.coefficients[ci].iter().zip(x_cols) {
            if *wj != 0.0 {
                for (s, &x) in scores.iter_mut().zip(col) {
                    *s += wj * x;
                }
            }
        }
        for i in 0..n_rows {
            let prob = stable_sigmoid(scores[i]);
            if prob > best_score[i] {
                best_score[i] = prob;
                best_class[i] = class;
            }
        }
    }
    best_class
}

/// Micro-averaged F1. For single-label predictions this equals accuracy.
pub fn metric_f1_micro(y_true: &[u32], y_pred: &[u32]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::data("f1_micro needs equal-length nonempty inputs"));
    }
    let mut classes: Vec<u32> = y_true.iter().chain(y_pred).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for &class in &classes {
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t == class, p == class) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let precision_den = (tp + fp) as f64;
    let recall_den = (tp + fn_) as f64;
    if precision_den == 0.0 || recall_den == 0.0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / precision_den;
    let recall = tp as f64 / recall_den;
    if precision + recall == 0.0 {
        Ok(0.0)
    } else {
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// 1 - relative absolute error. 1 is perfect, 0 matches predicting the mean,
/// negative is worse than the mean. Undefined for a constant y_true.
pub fn metric_one_minus_rae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::data(
            "one_minus_rae needs equal-length nonempty inputs",
        ));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let denom: f64 = y_true.iter().map(|&v| (v - mean).abs()).sum();
    if denom == 0.0 {
        return Err(Error::data("one_minus_rae undefined for constant y_true"));
    }
    let num: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(&t, &p)| (t - p).abs())
        .sum();
    Ok(1.0 - num / denom)
}

#[derive(Debug, Clone, Copy)]
pub struct CvScore {
    pub mean: f64,
    /// How many folds fell back to the metric floor because the model or
    /// metric could not be computed.
    pub fold_floors: usize,
}

enum FittedFeature {
    Numeric(FittedExpr),
    Encoded {
        column: String,
        encoder: EncoderState,
    },
}

/// The full preprocessing chain fitted on training rows: numeric imputation
/// means, expression states, one-hot encoders, and the min-max scaler.
pub struct FittedPipeline {
    imputer_means: Vec<(String, f64)>,
    features: Vec<FittedFeature>,
    scaler: ScalerState,
}

fn impute_table(table: &Table, means: &[(String, f64)]) -> Result<Table> {
    let mut columns = Vec::with_capacity(table.columns.len());
    for col in &table.columns {
        match &col.data {
            ColumnData::Numeric(values) => {
                let mean = means
                    .iter()
                    .find(|(name, _)| name == &col.name)
                    .map(|&(_, m)| m);
                match mean {
                    Some(m) => {
                        let filled: Vec<f64> = values
                            .iter()
                            .map(|&v| if v.is_finite() { v } else { m })
                            .collect();
                        columns.push(Column::numeric(col.name.clone(), filled));
                    }
                    None => columns.push(col.clone()),
                }
            }
            ColumnData::Categorical { .. } => columns.push(col.clone()),
        }
    }
    Table::new(columns, table.target.clone(), table.task)
}

impl FittedPipeline {
    /// Fits the chain on `train_rows` of `table` and returns the pipeline
    /// together with the transformed training matrix (as columns).
    pub fn fit(
        features: &[FeatureExpr],
        table: &Table,
        train_rows: &[usize],
    ) -> Result<(FittedPipeline, Vec<Vec<f64>>)> {
        let mut imputer_means = Vec::new();
        for col in &table.columns {
            if col.kind() == ColumnKind::Numeric {
                imputer_means.push((col.name.clone(), col.numeric_mean(train_rows)?));
            }
        }
        let imputed = impute_table(table, &imputer_means)?;

        let mut fitted = Vec::with_capacity(features.len());
        let mut train_columns: Vec<Vec<f64>> = Vec::new();
        for expr in features {
            match expr.output_kind(&imputed)? {
                ColumnKind::Categorical => {
                    let FeatureExpr::Col(name) = expr else {
                        return Err(Error::expr(format!(
                            "categorical feature must be a bare column, got '{expr}'"
                        )));
                    };
                    let (codes, cats) = imputed.column(name)?.categorical_codes()?;
                    let train_codes: Vec<u32> = train_rows.iter().map(|&r| codes[r]).collect();
                    let encoder = fit_onehot(&train_codes, cats);
                    train_columns.extend(apply_onehot(&encoder, &train_codes, cats));
                    fitted.push(FittedFeature::Encoded {
                        column: name.clone(),
                        encoder,
                    });
                }
                ColumnKind::Numeric => {
                    let fe = FittedExpr::fit(expr, &imputed, train_rows)?;
                    train_columns.push(fe.eval(&imputed, train_rows)?);
                    fitted.push(FittedFeature::Numeric(fe));
                }
            }
        }

        let scaler = fit_minmax(&train_columns);
        let x_train = apply_minmax(&scaler, &train_columns);
        Ok((
            FittedPipeline {
                imputer_means,
                features: fitted,
                scaler,
            },
            x_train,
        ))
    }

    /// Applies the fitted chain to arbitrary rows of a table with the same
    /// column layout (training imputation means, states, encoders, scaler).
    pub fn transform(&self, table: &Table, rows: &[usize]) -> Result<Vec<Vec<f64>>> {
        let imputed = impute_table(table, &self.imputer_means)?;
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for feature in &self.features {
            match feature {
                FittedFeature::Numeric(fe) => columns.push(fe.eval(&imputed, rows)?),
                FittedFeature::Encoded { column, encoder } => {
                    let (codes, cats) = imputed.column(column)?.categorical_codes()?;
                    let row_codes: Vec<u32> = rows.iter().map(|&r| codes[r]).collect();
                    columns.extend(apply_onehot(encoder, &row_codes, cats));
                }
            }
        }
        Ok(apply_minmax(&self.scaler, &columns))
    }
}

fn regression_targets(table: &Table, rows: &[usize]) -> Result<Vec<f64>> {
    let values = table.target_column()?.numeric_values()?;
    Ok(rows
        .iter()
        .map(|&r| {
            if values[r].is_finite() {
                values[r]
            } else {
                0.0
            }
        })
        .collect())
}

fn classification_targets(table: &Table, rows: &[usize]) -> Result<Vec<u32>> {
    let (codes, _) = table.target_column()?.categorical_codes()?;
    Ok(rows.iter().map(|&r| codes[r]).collect())
}

fn score_fold(
    features: &[FeatureExpr],
    table: &Table,
    ev: &Evaluator,
    train_rows: &[usize],
    val_rows: &[usize],
) -> Result<f64> {
    let (pipeline, x_train) = FittedPipeline::fit(features, table, train_rows)?;
    let x_val = pipeline.transform(table, val_rows)?;
    match ev.model.kind {
        ModelKind::Lasso { alpha } => {
            let y_train = regression_targets(table, train_rows)?;
            let y_val = regression_targets(table, val_rows)?;
            let fit = train_lasso(
                &x_train,
                &y_train,
                alpha,
                ev.model.max_iterations,
                ev.model.tolerance,
            );
            let pred = predict_regression(&fit, &x_val, val_rows.len());
            metric_one_minus_rae(&y_val, &pred)
        }
        ModelKind::LogisticRegression { c } => {
            let y_train = classification_targets(table, train_rows)?;
            let y_val = classification_targets(table, val_rows)?;
            let fit = train_logreg(
                &x_train,
                &y_train,
                c,
                ev.model.max_iterations,
                ev.model.tolerance,
            )?;
            let pred = predict_classes(&fit, &x_val, val_rows.len());
            metric_f1_micro(&y_val, &pred)
        }
    }
}

/// Mean metric over the evaluator's folds. Per fold, every piece of fitted
/// state (imputer, expression states, encoders, scaler, model) comes from
/// that fold's training rows only. A fold whose model or metric fails
/// contributes the metric floor instead of aborting the run.
pub fn cross_validate(features: &[FeatureExpr], table: &Table, ev: &Evaluator) -> Result<CvScore> {
    if ev.folds.assignments.len() != table.n_rows {
        return Err(Error::config(format!(
            "fold plan covers {} rows but table has {}",
            ev.folds.assignments.len(),
            table.n_rows
        )));
    }
    let mut total = 0.0;
    let mut floors = 0usize;
    for fold in 0..ev.folds.k {
        let (train_rows, val_rows) = ev.folds.fold_rows(fold);
        match score_fold(features, table, ev, &train_rows, &val_rows) {
            Ok(score) => total += score,
            Err(Error::Data(_)) | Err(Error::Estimator(_)) => {
                total += ev.floor_score();
                floors += 1;
            }
            Err(other) => return Err(other),
        }
    }
    Ok(CvScore {
        mean: total / ev.folds.k as f64,
        fold_floors: floors,
    })
}

/// Small grid search over the model's hyperparameter: returns the value with
/// the best CV score (first value wins ties).
pub fn tune_hyperparameter(
    features: &[FeatureExpr],
    table: &Table,
    ev: &Evaluator,
    grid: &[f64],
) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for &value in grid {
        let mut trial = ev.clone();
        trial.model = ev.model.with_hyperparameter(value);
        let score = cross_validate(features, table, &trial)?.mean;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((value, score));
        }
    }
    best.ok_or_else(|| Error::config("empty hyperparameter grid"))
}
