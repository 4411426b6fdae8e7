//! The engineered-feature expression language: operator tables, expression
//! trees, fit/transform semantics, and candidate generation.
//!
//! Expressions are trees over original columns. Stateful nodes (group-by
//! aggregates and ordinal codes for categoricals) learn their state from
//! training rows only and apply it unchanged elsewhere, so evaluation on
//! held-out data never sees held-out statistics. Evaluation is total:
//! divisions, overflows, and unseen categories all land on fixed
//! conventions instead of NaN or infinity.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{Column, ColumnKind, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Agg {
    Min,
    Max,
    Mean,
    Median,
    Std,
}

impl Agg {
    pub const ALL: [Agg; 5] = [Agg::Min, Agg::Max, Agg::Mean, Agg::Median, Agg::Std];

    fn name(&self) -> &'static str {
        match self {
            Agg::Min => "gbmin",
            Agg::Max => "gbmax",
            Agg::Mean => "gbmean",
            Agg::Median => "gbmedian",
            Agg::Std => "gbstd",
        }
    }

    fn apply(&self, values: &[f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        match self {
            Agg::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Agg::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Agg::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Agg::Median => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                let mid = sorted.len() / 2;
                if sorted.len() % 2 == 1 {
                    sorted[mid]
                } else {
                    (sorted[mid - 1] + sorted[mid]) / 2.0
                }
            }
            Agg::Std => {
                // Population convention: a single-member group has std 0.
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
                    / values.len() as f64;
                var.sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Square,
    Abs,
    SqrtAbs,
    Sigmoid,
    Reciprocal,
}

impl UnaryOp {
    fn name(&self) -> &'static str {
        match self {
            UnaryOp::Square => "sq",
            UnaryOp::Abs => "abs",
            UnaryOp::SqrtAbs => "sqrtabs",
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Reciprocal => "inv",
        }
    }

    fn apply(&self, x: f64) -> f64 {
        let v = match self {
            UnaryOp::Square => x * x,
            UnaryOp::Abs => x.abs(),
            UnaryOp::SqrtAbs => x.abs().sqrt(),
            UnaryOp::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            UnaryOp::Reciprocal => {
                if x == 0.0 {
                    0.0
                } else {
                    1.0 / x
                }
            }
        };
        sanitize(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    RevSub,
    Mul,
    Min,
    Max,
    SafeDiv,
    RevSafeDiv,
    Mod,
    RevMod,
    GroupByThen(Agg),
}

impl BinaryOp {
    fn name(&self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::RevSub => "rsub",
            BinaryOp::Mul => "mul",
            BinaryOp::Min => "min",
            BinaryOp::Max => "max",
            BinaryOp::SafeDiv => "sdiv",
            BinaryOp::RevSafeDiv => "rsdiv",
            BinaryOp::Mod => "mod",
            BinaryOp::RevMod => "rmod",
            BinaryOp::GroupByThen(agg) => agg.name(),
        }
    }

    fn apply(&self, a: f64, b: f64) -> f64 {
        let v = match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::RevSub => b - a,
            BinaryOp::Mul => a * b,
            BinaryOp::Min => a.min(b),
            BinaryOp::Max => a.max(b),
            BinaryOp::SafeDiv => a / (b.abs() + 1.0),
            BinaryOp::RevSafeDiv => b / (a.abs() + 1.0),
            BinaryOp::Mod => floored_mod(a, b),
            BinaryOp::RevMod => floored_mod(b, a),
            BinaryOp::GroupByThen(_) => unreachable!("group-by is evaluated via its fitted map"),
        };
        sanitize(v)
    }
}

/// Real-valued modulo via floored division; a zero divisor yields 0.
fn floored_mod(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a - b * (a / b).floor()
    }
}

#[inline]
fn sanitize(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Expression tree over original columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureExpr {
    Col(String),
    Unary(UnaryOp, Box<FeatureExpr>),
    Binary(BinaryOp, Box<FeatureExpr>, Box<FeatureExpr>),
}

impl FeatureExpr {
    pub fn col(name: impl Into<String>) -> FeatureExpr {
        FeatureExpr::Col(name.into())
    }

    pub fn unary(op: UnaryOp, child: FeatureExpr) -> FeatureExpr {
        FeatureExpr::Unary(op, Box::new(child))
    }

    pub fn binary(op: BinaryOp, left: FeatureExpr, right: FeatureExpr) -> FeatureExpr {
        FeatureExpr::Binary(op, Box::new(left), Box::new(right))
    }

    /// Number of original-column leaves, counted with multiplicity.
    pub fn order(&self) -> usize {
        match self {
            FeatureExpr::Col(_) => 1,
            FeatureExpr::Unary(_, c) => c.order(),
            FeatureExpr::Binary(_, l, r) => l.order() + r.order(),
        }
    }

    /// Output kind against a concrete table: a bare column reference keeps
    /// its column's kind, every operator application is numeric.
    pub fn output_kind(&self, table: &Table) -> Result<ColumnKind> {
        match self {
            FeatureExpr::Col(name) => Ok(table.column(name)?.kind()),
            _ => Ok(ColumnKind::Numeric),
        }
    }

    /// Column names referenced by this expression (with repeats).
    pub fn referenced_columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            FeatureExpr::Col(name) => out.push(name),
            FeatureExpr::Unary(_, c) => c.collect_columns(out),
            FeatureExpr::Binary(_, l, r) => {
                l.collect_columns(out);
                r.collect_columns(out);
            }
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_into(&mut s);
        s
    }

    fn render_into(&self, out: &mut String) {
        match self {
            FeatureExpr::Col(name) => {
                out.push_str("col:");
                out.push_str(&escape_name(name));
            }
            FeatureExpr::Unary(op, c) => {
                out.push_str(op.name());
                out.push('(');
                c.render_into(out);
                out.push(')');
            }
            FeatureExpr::Binary(op, l, r) => {
                out.push_str(op.name());
                out.push('(');
                l.render_into(out);
                out.push(',');
                r.render_into(out);
                out.push(')');
            }
        }
    }
}

impl fmt::Display for FeatureExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Column names may contain the rendering delimiters; percent-escape them.
fn escape_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for ch in name.chars() {
        match ch {
            '%' => out.push_str("%25"),
            ',' => out.push_str("%2C"),
            '(' => out.push_str("%28"),
            ')' => out.push_str("%29"),
            _ => out.push(ch),
        }
    }
    out
}

fn unescape_name(name: &str) -> Result<String> {
    let bytes = name.as_bytes();
    let mut out = String::with_capacity(name.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            if i + 3 > bytes.len() {
                return Err(Error::expr(format!("truncated escape in '{name}'")));
            }
            let code = std::str::from_utf8(&bytes[i + 1..i + 3])
                .ok()
                .and_then(|h| u8::from_str_radix(h, 16).ok())
                .ok_or_else(|| Error::expr(format!("bad escape in '{name}'")))?;
            out.push(code as char);
            i += 3;
        } else {
            // Delimiters are ASCII, so multi-byte chars pass through whole.
            let ch = name[i..].chars().next().unwrap();
            out.push(ch);
            i += ch.len_utf8();
        }
    }
    Ok(out)
}

fn unary_op_by_name(name: &str) -> Option<UnaryOp> {
    use UnaryOp::*;
    Some(match name {
        "sq" => Square,
        "abs" => Abs,
        "sqrtabs" => SqrtAbs,
        "sigmoid" => Sigmoid,
        "inv" => Reciprocal,
        _ => return None,
    })
}

fn binary_op_by_name(name: &str) -> Option<BinaryOp> {
    use BinaryOp::*;
    Some(match name {
        "add" => Add,
        "sub" => Sub,
        "rsub" => RevSub,
        "mul" => Mul,
        "min" => Min,
        "max" => Max,
        "sdiv" => SafeDiv,
        "rsdiv" => RevSafeDiv,
        "mod" => Mod,
        "rmod" => RevMod,
        "gbmin" => GroupByThen(Agg::Min),
        "gbmax" => GroupByThen(Agg::Max),
        "gbmean" => GroupByThen(Agg::Mean),
        "gbmedian" => GroupByThen(Agg::Median),
        "gbstd" => GroupByThen(Agg::Std),
        _ => return None,
    })
}

/// Parses the prefix notation produced by [`FeatureExpr::render`].
pub fn parse_expr(input: &str) -> Result<FeatureExpr> {
    let mut parser = Parser {
        input,
        bytes: input.as_bytes(),
        pos: 0,
    };
    let expr = parser.parse()?;
    if parser.pos != parser.bytes.len() {
        return Err(Error::expr(format!(
            "trailing input at byte {} in '{input}'",
            parser.pos
        )));
    }
    Ok(expr)
}

struct Parser<'a> {
    input: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn parse(&mut self) -> Result<FeatureExpr> {
        if self.input[self.pos..].starts_with("col:") {
            self.pos += 4;
            let start = self.pos;
            while self.pos < self.bytes.len() && !matches!(self.bytes[self.pos], b',' | b'(' | b')')
            {
                self.pos += 1;
            }
            let raw = &self.input[start..self.pos];
            if raw.is_empty() {
                return Err(Error::expr(format!(
                    "empty column name at byte {start} in '{}'",
                    self.input
                )));
            }
            return Ok(FeatureExpr::Col(unescape_name(raw)?));
        }

        let start = self.pos;
        while self.pos < self.bytes.len() && !matches!(self.bytes[self.pos], b'(' | b',' | b')') {
            self.pos += 1;
        }
        let name = &self.input[start..self.pos];
        if self.pos >= self.bytes.len() || self.bytes[self.pos] != b'(' {
            return Err(Error::expr(format!(
                "expected '(' after operator '{name}' in '{}'",
                self.input
            )));
        }
        self.pos += 1;

        if let Some(op) = unary_op_by_name(name) {
            let child = self.parse()?;
            self.expect(b')')?;
            return Ok(FeatureExpr::unary(op, child));
        }
        if let Some(op) = binary_op_by_name(name) {
            let left = self.parse()?;
            self.expect(b',')?;
            let right = self.parse()?;
            self.expect(b')')?;
            return Ok(FeatureExpr::binary(op, left, right));
        }
        Err(Error::expr(format!(
            "unknown operator '{name}' in '{}'",
            self.input
        )))
    }

    fn expect(&mut self, byte: u8) -> Result<()> {
        if self.pos < self.bytes.len() && self.bytes[self.pos] == byte {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::expr(format!(
                "expected '{}' at byte {} in '{}'",
                byte as char, self.pos, self.input
            )))
        }
    }
}

/// The active operator tables. Dropping division removes the safe-division
/// bivariate pair and the reciprocal univariate.
#[derive(Debug, Clone, Copy)]
pub struct OperatorSets {
    pub include_division: bool,
}

impl OperatorSets {
    pub fn standard() -> OperatorSets {
        OperatorSets {
            include_division: true,
        }
    }

    pub fn without_division() -> OperatorSets {
        OperatorSets {
            include_division: false,
        }
    }

    pub fn numeric_binary_ops(&self) -> Vec<BinaryOp> {
        use BinaryOp::*;
        let mut ops = vec![Add, Sub, RevSub, Mul, Min, Max];
        if self.include_division {
            ops.push(SafeDiv);
            ops.push(RevSafeDiv);
        }
        ops.push(Mod);
        ops.push(RevMod);
        ops
    }

    pub fn unary_ops(&self) -> Vec<UnaryOp> {
        use UnaryOp::*;
        let mut ops = vec![Square, Abs, SqrtAbs, Sigmoid];
        if self.include_division {
            ops.push(Reciprocal);
        }
        ops
    }
}

/// All bivariate candidates for an (ordered) feature pair, in a fixed
/// deterministic order: group-by candidates first (grouped by the
/// categorical side), then the numeric table with categoricals treated as
/// ordinal. Engineered (non-column) expressions are always numeric.
pub fn bivariate_candidates(
    fi: &FeatureExpr,
    ki: ColumnKind,
    fj: &FeatureExpr,
    kj: ColumnKind,
    sets: &OperatorSets,
) -> Vec<FeatureExpr> {
    let mut out = Vec::new();
    match (ki, kj) {
        (ColumnKind::Numeric, ColumnKind::Numeric) => {}
        (ColumnKind::Numeric, ColumnKind::Categorical) => {
            for agg in Agg::ALL {
                out.push(FeatureExpr::binary(
                    BinaryOp::GroupByThen(agg),
                    fj.clone(),
                    fi.clone(),
                ));
            }
        }
        (ColumnKind::Categorical, ColumnKind::Numeric) => {
            for agg in Agg::ALL {
                out.push(FeatureExpr::binary(
                    BinaryOp::GroupByThen(agg),
                    fi.clone(),
                    fj.clone(),
                ));
            }
        }
        (ColumnKind::Categorical, ColumnKind::Categorical) => {
            for agg in Agg::ALL {
                out.push(FeatureExpr::binary(
                    BinaryOp::GroupByThen(agg),
                    fi.clone(),
                    fj.clone(),
                ));
            }
            for agg in Agg::ALL {
                out.push(FeatureExpr::binary(
                    BinaryOp::GroupByThen(agg),
                    fj.clone(),
                    fi.clone(),
                ));
            }
        }
    }
    for op in sets.numeric_binary_ops() {
        out.push(FeatureExpr::binary(op, fi.clone(), fj.clone()));
    }
    out
}

/// Univariate candidates of a numeric expression: the expression itself
/// first, then each unary operator applied to it.
pub fn univariate_candidates(e: &FeatureExpr, sets: &OperatorSets) -> Vec<FeatureExpr> {
    let mut out = vec![e.clone()];
    for op in sets.unary_ops() {
        out.push(FeatureExpr::unary(op, e.clone()));
    }
    out
}

/// Serializable fitted state of one stateful node, addressed by its
/// child-index path from the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub path: Vec<usize>,
    pub kind: String,
    pub map: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
enum FittedNode {
    NumericCol(String),
    OrdinalCol {
        name: String,
        codes: BTreeMap<String, f64>,
    },
    Unary(UnaryOp, Box<FittedNode>),
    Binary(BinaryOp, Box<FittedNode>, Box<FittedNode>),
    GroupByThen {
        key: String,
        map: BTreeMap<String, f64>,
        value: Box<FittedNode>,
    },
}

/// An expression plus the state its stateful nodes learned on training rows.
#[derive(Debug, Clone)]
pub struct FittedExpr {
    expr: FeatureExpr,
    root: FittedNode,
}

impl FittedExpr {
    /// Fits every stateful node on the given training rows: group-by nodes
    /// learn category -> aggregate maps, ordinal-coded categoricals learn
    /// first-appearance integer codes. Purely numeric expressions carry no
    /// state.
    pub fn fit(expr: &FeatureExpr, table: &Table, train_rows: &[usize]) -> Result<FittedExpr> {
        let root = fit_node(expr, table, train_rows)?;
        Ok(FittedExpr {
            expr: expr.clone(),
            root,
        })
    }

    pub fn expr(&self) -> &FeatureExpr {
        &self.expr
    }

    /// Elementwise evaluation over the given rows. Total by convention:
    /// non-finite results become 0, unseen categories map to 0 at group-by
    /// nodes and to code -1 at ordinal nodes.
    pub fn eval(&self, table: &Table, rows: &[usize]) -> Result<Vec<f64>> {
        eval_node(&self.root, table, rows)
    }

    /// Fitted state of every stateful node, in preorder.
    pub fn states(&self) -> Vec<NodeState> {
        let mut out = Vec::new();
        collect_states(&self.root, &mut Vec::new(), &mut out);
        out
    }

    /// Rebuilds a fitted expression from its parsed form and saved states.
    pub fn from_states(expr: FeatureExpr, states: &[NodeState]) -> Result<FittedExpr> {
        let root = rebuild_node(&expr, &mut Vec::new(), states)?;
        Ok(FittedExpr { expr, root })
    }

    /// Column kinds this fitted expression requires of its input table.
    pub fn column_kinds(&self) -> Vec<(String, ColumnKind)> {
        let mut out = Vec::new();
        collect_column_kinds(&self.root, &mut out);
        out
    }
}

fn collect_column_kinds(node: &FittedNode, out: &mut Vec<(String, ColumnKind)>) {
    match node {
        FittedNode::NumericCol(name) => out.push((name.clone(), ColumnKind::Numeric)),
        FittedNode::OrdinalCol { name, .. } => out.push((name.clone(), ColumnKind::Categorical)),
        FittedNode::Unary(_, child) => collect_column_kinds(child, out),
        FittedNode::Binary(_, left, right) => {
            collect_column_kinds(left, out);
            collect_column_kinds(right, out);
        }
        FittedNode::GroupByThen { key, value, .. } => {
            out.push((key.clone(), ColumnKind::Categorical));
            collect_column_kinds(value, out);
        }
    }
}

fn fit_ordinal_codes(column: &Column, rows: &[usize]) -> Result<BTreeMap<String, f64>> {
    let (codes, cats) = column.categorical_codes()?;
    let mut map = BTreeMap::new();
    let mut next = 0.0;
    for &r in rows {
        let cat = &cats[codes[r] as usize];
        if !map.contains_key(cat) {
            map.insert(cat.clone(), next);
            next += 1.0;
        }
    }
    Ok(map)
}

fn fit_node(expr: &FeatureExpr, table: &Table, rows: &[usize]) -> Result<FittedNode> {
    match expr {
        FeatureExpr::Col(name) => {
            let column = table.column(name)?;
            match column.kind() {
                ColumnKind::Numeric => Ok(FittedNode::NumericCol(name.clone())),
                ColumnKind::Categorical => Ok(FittedNode::OrdinalCol {
                    name: name.clone(),
                    codes: fit_ordinal_codes(column, rows)?,
                }),
            }
        }
        FeatureExpr::Unary(op, child) => Ok(FittedNode::Unary(
            *op,
            Box::new(fit_node(child, table, rows)?),
        )),
        FeatureExpr::Binary(BinaryOp::GroupByThen(agg), key, value) => {
            let FeatureExpr::Col(key_name) = key.as_ref() else {
                return Err(Error::expr(format!(
                    "group-by key must be a column reference, got '{key}'"
                )));
            };
            let key_column = table.column(key_name)?;
            let (codes, cats) = key_column.categorical_codes().map_err(|_| {
                Error::expr(format!(
                    "group-by key column '{key_name}' must be categorical"
                ))
            })?;
            let fitted_value = fit_node(value, table, rows)?;
            let value_train = eval_node(&fitted_value, table, rows)?;
            let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for (&r, &v) in rows.iter().zip(&value_train) {
                groups
                    .entry(cats[codes[r] as usize].as_str())
                    .or_default()
                    .push(v);
            }
            let map: BTreeMap<String, f64> = groups
                .into_iter()
                .map(|(cat, vals)| (cat.to_string(), sanitize(agg.apply(&vals))))
                .collect();
            Ok(FittedNode::GroupByThen {
                key: key_name.clone(),
                map,
                value: Box::new(fitted_value),
            })
        }
        FeatureExpr::Binary(op, left, right) => Ok(FittedNode::Binary(
            *op,
            Box::new(fit_node(left, table, rows)?),
            Box::new(fit_node(right, table, rows)?),
        )),
    }
}

/// Per-symbol lookup resolved once per table: symbol id -> mapped value.
fn resolve_category_map(cats: &[String], map: &BTreeMap<String, f64>, unseen: f64) -> Vec<f64> {
    cats.iter()
        .map(|cat| map.get(cat).copied().unwrap_or(unseen))
        .collect()
}

fn eval_node(node: &FittedNode, table: &Table, rows: &[usize]) -> Result<Vec<f64>> {
    match node {
        FittedNode::NumericCol(name) => {
            let values = table.column(name)?.numeric_values()?;
            Ok(rows.iter().map(|&r| sanitize(values[r])).collect())
        }
        FittedNode::OrdinalCol { name, codes } => {
            let (col_codes, cats) = table.column(name)?.categorical_codes()?;
            let lookup = resolve_category_map(cats, codes, -1.0);
            Ok(rows
                .iter()
                .map(|&r| lookup[col_codes[r] as usize])
                .collect())
        }
        FittedNode::Unary(op, child) => {
            let mut vals = eval_node(child, table, rows)?;
            for v in vals.iter_mut() {
                *v = op.apply(*v);
            }
            Ok(vals)
        }
        FittedNode::Binary(op, left, right) => {
            let lv = eval_node(left, table, rows)?;
            let rv = eval_node(right, table, rows)?;
            Ok(lv
                .into_iter()
                .zip(rv)
                .map(|(a, b)| op.apply(a, b))
                .collect())
        }
        FittedNode::GroupByThen { key, map, .. } => {
            let (col_codes, cats) = table.column(key)?.categorical_codes()?;
            let lookup = resolve_category_map(cats, map, 0.0);
            Ok(rows
                .iter()
                .map(|&r| lookup[col_codes[r] as usize])
                .collect())
        }
    }
}

fn collect_states(node: &FittedNode, path: &mut Vec<usize>, out: &mut Vec<NodeState>) {
    match node {
        FittedNode::NumericCol(_) => {}
        FittedNode::OrdinalCol { codes, .. } => out.push(NodeState {
            path: path.clone(),
            kind: "ordinal".to_string(),
            map: codes.clone(),
        }),
        FittedNode::Unary(_, child) => {
            path.push(0);
            collect_states(child, path, out);
            path.pop();
        }
        FittedNode::Binary(_, left, right) => {
            path.push(0);
            collect_states(left, path, out);
            path.pop();
            path.push(1);
            collect_states(right, path, out);
            path.pop();
        }
        FittedNode::GroupByThen { map, value, .. } => {
            out.push(NodeState {
                path: path.clone(),
                kind: "groupby".to_string(),
                map: map.clone(),
            });
            path.push(1);
            collect_states(value, path, out);
            path.pop();
        }
    }
}

fn find_state<'a>(states: &'a [NodeState], path: &[usize], kind: &str) -> Option<&'a NodeState> {
    states.iter().find(|s| s.path == path && s.kind == kind)
}

fn rebuild_node(
    expr: &FeatureExpr,
    path: &mut Vec<usize>,
    states: &[NodeState],
) -> Result<FittedNode> {
    match expr {
        FeatureExpr::Col(name) => {
            if let Some(state) = find_state(states, path, "ordinal") {
                Ok(FittedNode::OrdinalCol {
                    name: name.clone(),
                    codes: state.map.clone(),
                })
            } else {
                Ok(FittedNode::NumericCol(name.clone()))
            }
        }
        FeatureExpr::Unary(op, child) => {
            path.push(0);
            let fitted = rebuild_node(child, path, states)?;
            path.pop();
            Ok(FittedNode::Unary(*op, Box::new(fitted)))
        }
        FeatureExpr::Binary(BinaryOp::GroupByThen(_), key, value) => {
            let FeatureExpr::Col(key_name) = key.as_ref() else {
                return Err(Error::expr(format!(
                    "group-by key must be a column reference, got '{key}'"
                )));
            };
            let state = find_state(states, path, "groupby").ok_or_else(|| {
                Error::expr(format!(
                    "missing group-by state for '{}' at path {path:?}",
                    expr.render()
                ))
            })?;
            path.push(1);
            let fitted_value = rebuild_node(value, path, states)?;
            path.pop();
            Ok(FittedNode::GroupByThen {
                key: key_name.clone(),
                map: state.map.clone(),
                value: Box::new(fitted_value),
            })
        }
        FeatureExpr::Binary(op, left, right) => {
            path.push(0);
            let l = rebuild_node(left, path, states)?;
            path.pop();
            path.push(1);
            let r = rebuild_node(right, path, states)?;
            path.pop();
            Ok(FittedNode::Binary(*op, Box::new(l), Box::new(r)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{Column, TaskKind};
    use proptest::prelude::*;

    fn all_rows(t: &Table) -> Vec<usize> {
        (0..t.n_rows).collect()
    }

    fn sample_table() -> Table {
        let cols = vec![
            Column::numeric("F1", vec![4.0, 1.0, 3.0, -2.0]),
            Column::numeric("F2", vec![1.0, 2.0, 0.0, 5.0]),
            Column::categorical_from_strings("City", &["a", "b", "a", "b"]),
            Column::numeric("y", vec![0.0, 1.0, 0.0, 1.0]),
        ];
        Table::new(cols, Some("y".into()), TaskKind::Regression).unwrap()
    }

    #[test]
    fn order_counts_leaves_with_multiplicity() {
        let f1 = FeatureExpr::col("F1");
        assert_eq!(f1.order(), 1);

        let add = FeatureExpr::binary(BinaryOp::Add, f1.clone(), FeatureExpr::col("F2"));
        assert_eq!(add.order(), 2);

        // order-3 and order-7 subtrees combine into order 10.
        let o3 = FeatureExpr::binary(BinaryOp::Mul, add.clone(), f1.clone());
        let o6 = FeatureExpr::binary(BinaryOp::Add, o3.clone(), o3.clone());
        let o7 = FeatureExpr::binary(BinaryOp::Min, o6, f1.clone());
        assert_eq!(o3.order(), 3);
        assert_eq!(o7.order(), 7);
        assert_eq!(FeatureExpr::binary(BinaryOp::Mul, o3, o7).order(), 10);
    }

    #[test]
    fn fit_groupbythen_mean_learns_per_category_aggregates() {
        let cols = vec![
            Column::categorical_from_strings("g", &["a", "b", "a"]),
            Column::numeric("v", vec![1.0, 2.0, 3.0]),
        ];
        let t = Table::new(cols, None, TaskKind::Regression).unwrap();
        let e = FeatureExpr::binary(
            BinaryOp::GroupByThen(Agg::Mean),
            FeatureExpr::col("g"),
            FeatureExpr::col("v"),
        );
        let fitted = FittedExpr::fit(&e, &t, &all_rows(&t)).unwrap();
        let states = fitted.states();
        assert_eq!(states.len(), 1);
        assert_eq!(states[0].kind, "groupby");
        assert_eq!(states[0].map.get("a"), Some(&2.0));
        assert_eq!(states[0].map.get("b"), Some(&2.0));
    }

    #[test]
    fn fit_groupbythen_std_single_member_group_is_zero() {
        let cols = vec![
            Column::categorical_from_strings("g", &["a", "b", "a"]),
            Column::numeric("v", vec![1.0, 2.0, 3.0]),
        ];
        let t = Table::new(cols, None, TaskKind::Regression).unwrap();
        let e = FeatureExpr::binary(
            BinaryOp::GroupByThen(Agg::Std),
            FeatureExpr::col("g"),
            FeatureExpr::col("v"),
        );
        let fitted = FittedExpr::fit(&e, &t, &all_rows(&t)).unwrap();
        assert_eq!(fitted.states()[0].map.get("b"), Some(&0.0));
    }

    #[test]
    fn fit_pure_numeric_expression_has_empty_state() {
        let t = sample_table();
        let e = FeatureExpr::binary(
            BinaryOp::Add,
            FeatureExpr::col("F1"),
            FeatureExpr::col("F2"),
        );
        let fitted = FittedExpr::fit(&e, &t, &all_rows(&t)).unwrap();
        assert!(fitted.states().is_empty());
    }

    #[test]
    fn eval_safediv_and_sigmoid_conventions() {
        let t = sample_table();
        let rows = all_rows(&t);

        let sdiv = FeatureExpr::binary(
            BinaryOp::SafeDiv,
            FeatureExpr::col("F1"),
            FeatureExpr::col("F2"),
        );
        let vals = FittedExpr::fit(&sdiv, &t, &rows)
            .unwrap()
            .eval(&t, &rows)
            .unwrap();
        assert_eq!(vals[0], 2.0); // 4 / (|1| + 1)

        let sig = FeatureExpr::unary(UnaryOp::Sigmoid, FeatureExpr::col("F2"));
        let vals = FittedExpr::fit(&sig, &t, &rows)
            .unwrap()
            .eval(&t, &rows)
            .unwrap();
        assert_eq!(vals[2], 0.5); // sigmoid(0)
    }

    #[test]
    fn eval_unseen_category_conventions() {
        let train_cols = vec![
            Column::categorical_from_strings("g", &["a", "b"]),
            Column::numeric("v", vec![1.0, 5.0]),
        ];
        let train = Table::new(train_cols, None, TaskKind::Regression).unwrap();
        let gb = FeatureExpr::binary(
            BinaryOp::GroupByThen(Agg::Mean),
            FeatureExpr::col("g"),
            FeatureExpr::col("v"),
        );
        let fitted = FittedExpr::fit(&gb, &train, &[0, 1]).unwrap();

        let test_cols = vec![
            Column::categorical_from_strings("g", &["c", "a"]),
            Column::numeric("v", vec![9.0, 9.0]),
        ];
        let test = Table::new(test_cols, None, TaskKind::Regression).unwrap();
        let vals = fitted.eval(&test, &[0, 1]).unwrap();
        assert_eq!(vals, vec![0.0, 1.0]); // unseen -> 0, seen -> train mean

        let ord = FeatureExpr::binary(BinaryOp::Add, FeatureExpr::col("v"), FeatureExpr::col("g"));
        let fitted = FittedExpr::fit(&ord, &train, &[0, 1]).unwrap();
        let vals = fitted.eval(&test, &[0, 1]).unwrap();
        assert_eq!(vals[0], 9.0 - 1.0); // unseen ordinal code -1
        assert_eq!(vals[1], 9.0); // "a" has code 0
    }

    #[test]
    fn floored_mod_conventions() {
        assert_eq!(floored_mod(5.0, 3.0), 2.0);
        assert_eq!(floored_mod(-5.0, 3.0), 1.0);
        assert_eq!(floored_mod(5.0, 0.0), 0.0);
    }

    #[test]
    fn candidate_counts_per_kind_pair() {
        let sets = OperatorSets::standard();
        let a = FeatureExpr::col("F1");
        let b = FeatureExpr::col("F2");
        let c = FeatureExpr::col("City");

        use ColumnKind::*;
        assert_eq!(
            bivariate_candidates(&a, Numeric, &b, Numeric, &sets).len(),
            10
        );
        assert_eq!(
            bivariate_candidates(&a, Numeric, &c, Categorical, &sets).len(),
            15
        );
        assert_eq!(
            bivariate_candidates(&c, Categorical, &a, Numeric, &sets).len(),
            15
        );
        assert_eq!(
            bivariate_candidates(&c, Categorical, &c, Categorical, &sets).len(),
            20
        );

        let no_div = OperatorSets::without_division();
        assert_eq!(
            bivariate_candidates(&a, Numeric, &b, Numeric, &no_div).len(),
            8
        );
    }

    #[test]
    fn univariate_candidates_identity_first() {
        let t = sample_table();
        let rows = all_rows(&t);
        let e = FeatureExpr::binary(
            BinaryOp::Mul,
            FeatureExpr::col("F1"),
            FeatureExpr::col("F2"),
        );
        let cands = univariate_candidates(&e, &OperatorSets::standard());
        assert_eq!(cands.len(), 6);
        assert_eq!(cands[0], e);

        // The identity candidate evaluates identically to the seed.
        let seed_vals = FittedExpr::fit(&e, &t, &rows)
            .unwrap()
            .eval(&t, &rows)
            .unwrap();
        let id_vals = FittedExpr::fit(&cands[0], &t, &rows)
            .unwrap()
            .eval(&t, &rows)
            .unwrap();
        assert_eq!(seed_vals, id_vals);

        // No structural duplicates.
        let rendered: std::collections::HashSet<String> =
            cands.iter().map(|c| c.render()).collect();
        assert_eq!(rendered.len(), cands.len());
    }

    #[test]
    fn render_and_parse_round_trip() {
        let e = FeatureExpr::binary(
            BinaryOp::Mul,
            FeatureExpr::col("F1"),
            FeatureExpr::col("F2"),
        );
        assert_eq!(e.render(), "mul(col:F1,col:F2)");
        assert_eq!(parse_expr("mul(col:F1,col:F2)").unwrap(), e);

        let gb = FeatureExpr::binary(
            BinaryOp::GroupByThen(Agg::Mean),
            FeatureExpr::col("City"),
            FeatureExpr::col("Price"),
        );
        assert_eq!(gb.render(), "gbmean(col:City,col:Price)");
        assert_eq!(parse_expr(&gb.render()).unwrap(), gb);

        // A nested tree shaped like a unary over a product.
        let nested = FeatureExpr::unary(
            UnaryOp::SqrtAbs,
            FeatureExpr::binary(
                BinaryOp::Mul,
                FeatureExpr::col("F1"),
                FeatureExpr::col("F2"),
            ),
        );
        assert_eq!(parse_expr(&nested.render()).unwrap(), nested);

        // Delimiters in column names survive the round trip.
        let weird = FeatureExpr::col("a,b(c)%");
        assert_eq!(parse_expr(&weird.render()).unwrap(), weird);
    }

    #[test]
    fn parse_errors_are_descriptive() {
        assert!(parse_expr("mul(col:F1").is_err());
        assert!(parse_expr("nope(col:F1,col:F2)").is_err());
        assert!(parse_expr("mul(col:F1,col:F2))").is_err());
        assert!(parse_expr("col:").is_err());
    }

    #[test]
    fn states_round_trip_through_serialization() {
        let cols = vec![
            Column::categorical_from_strings("g", &["a", "b", "a", "c"]),
            Column::numeric("v", vec![1.0, 2.0, 3.0, 4.0]),
        ];
        let t = Table::new(cols, None, TaskKind::Regression).unwrap();
        let e = FeatureExpr::binary(
            BinaryOp::Add,
            FeatureExpr::binary(
                BinaryOp::GroupByThen(Agg::Mean),
                FeatureExpr::col("g"),
                FeatureExpr::col("v"),
            ),
            FeatureExpr::col("g"),
        );
        let rows = all_rows(&t);
        let fitted = FittedExpr::fit(&e, &t, &rows).unwrap();
        let states = fitted.states();
        let rebuilt = FittedExpr::from_states(e.clone(), &states).unwrap();
        assert_eq!(
            fitted.eval(&t, &rows).unwrap(),
            rebuilt.eval(&t, &rows).unwrap()
        );

        // Missing group-by state is an error.
        assert!(FittedExpr::from_states(e, &[]).is_err());
    }

    #[test]
    fn fit_rejects_bad_group_keys_and_missing_columns() {
        let t = sample_table();
        let rows = all_rows(&t);
        let bad_key = FeatureExpr::binary(
            BinaryOp::GroupByThen(Agg::Mean),
            FeatureExpr::col("F1"),
            FeatureExpr::col("F2"),
        );
        assert!(FittedExpr::fit(&bad_key, &t, &rows).is_err());

        let missing = FeatureExpr::binary(
            BinaryOp::Add,
            FeatureExpr::col("F1"),
            FeatureExpr::col("nope"),
        );
        assert!(FittedExpr::fit(&missing, &t, &rows).is_err());
    }

    // Random expression trees over two numeric and one categorical column.
    fn arb_expr() -> impl Strategy<Value = FeatureExpr> {
        let leaf = prop_oneof![
            Just(FeatureExpr::col("F1")),
            Just(FeatureExpr::col("F2")),
            Just(FeatureExpr::col("City")),
        ];
        leaf.prop_recursive(4, 24, 4, |inner| {
            prop_oneof![
                (0usize..5, inner.clone()).prop_map(|(i, c)| {
                    let ops = [
                        UnaryOp::Square,
                        UnaryOp::Abs,
                        UnaryOp::SqrtAbs,
                        UnaryOp::Sigmoid,
                        UnaryOp::Reciprocal,
                    ];
                    FeatureExpr::unary(ops[i], c)
                }),
                (0usize..10, inner.clone(), inner.clone()).prop_map(|(i, l, r)| {
                    let ops = [
                        BinaryOp::Add,
                        BinaryOp::Sub,
                        BinaryOp::RevSub,
                        BinaryOp::Mul,
                        BinaryOp::Min,
                        BinaryOp::Max,
                        BinaryOp::SafeDiv,
                        BinaryOp::RevSafeDiv,
                        BinaryOp::Mod,
                        BinaryOp::RevMod,
                    ];
                    FeatureExpr::binary(ops[i], l, r)
                }),
                (0usize..5, inner).prop_map(|(i, v)| {
                    FeatureExpr::binary(
                        BinaryOp::GroupByThen(Agg::ALL[i]),
                        FeatureExpr::col("City"),
                        v,
                    )
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn eval_is_total_over_extreme_inputs(
            e in arb_expr(),
            v1 in proptest::collection::vec(
                prop_oneof![Just(0.0), Just(-1.0), Just(1e300), Just(-1e300), -1e3f64..1e3],
                6,
            ),
            v2 in proptest::collection::vec(
                prop_oneof![Just(0.0), Just(-0.5), Just(1e-300), Just(-1e308), -1e3f64..1e3],
                6,
            ),
        ) {
            let cols = vec![
                Column::numeric("F1", v1),
                Column::numeric("F2", v2),
                Column::categorical_from_strings("City", &["a", "b", "a", "c", "b", "a"]),
            ];
            let t = Table::new(cols, None, TaskKind::Regression).unwrap();
            let rows: Vec<usize> = (0..6).collect();
            let fitted = FittedExpr::fit(&e, &t, &rows).unwrap();
            for v in fitted.eval(&t, &rows).unwrap() {
                prop_assert!(v.is_finite(), "non-finite value from {}", e.render());
            }
        }

        #[test]
        fn render_parse_round_trip_structural_equality(e in arb_expr()) {
            prop_assert_eq!(parse_expr(&e.render()).unwrap(), e);
        }

        #[test]
        fn order_is_additive(e in arb_expr()) {
            match &e {
                FeatureExpr::Col(_) => prop_assert_eq!(e.order(), 1),
                FeatureExpr::Unary(_, c) => prop_assert_eq!(e.order(), c.order()),
                FeatureExpr::Binary(_, l, r) => prop_assert_eq!(e.order(), l.order() + r.order()),
            }
        }

        #[test]
        fn fitted_state_ignores_rows_outside_train(
            e in arb_expr(),
            mutation in proptest::collection::vec(-1e6f64..1e6, 3),
        ) {
            // Fit on the first 5 rows; mutating the remaining rows must not
            // change any fitted state.
            let base_v1 = vec![1.0, -2.0, 3.0, 0.0, 5.5, 7.0, -9.0, 2.0];
            let base_v2 = vec![0.0, 1.0, -1.0, 2.5, 4.0, -3.0, 6.0, 8.0];
            let cities = ["a", "b", "a", "c", "b", "a", "c", "b"];
            let train_rows: Vec<usize> = (0..5).collect();

            let make = |v1: Vec<f64>, v2: Vec<f64>| {
                Table::new(
                    vec![
                        Column::numeric("F1", v1),
                        Column::numeric("F2", v2),
                        Column::categorical_from_strings("City", &cities),
                    ],
                    None,
                    TaskKind::Regression,
                )
                .unwrap()
            };

            let t1 = make(base_v1.clone(), base_v2.clone());
            let mut v1 = base_v1;
            let mut v2 = base_v2;
            for (i, &m) in mutation.iter().enumerate() {
                v1[5 + i] = m;
                v2[5 + i] = -m;
            }
            let t2 = make(v1, v2);

            let s1 = FittedExpr::fit(&e, &t1, &train_rows).unwrap().states();
            let s2 = FittedExpr::fit(&e, &t2, &train_rows).unwrap().states();
            prop_assert_eq!(s1, s2);
        }
    }
}
