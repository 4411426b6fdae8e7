//! Nonparametric information estimators over mixed discrete/continuous data.
//!
//! Mutual information and conditional mutual information are estimated with
//! k-nearest-neighbor statistics under the max-norm, where numeric
//! coordinates are standardized and categorical coordinates use the 0/1
//! metric. When the k-th neighbor distance is zero (ties, discrete data),
//! the neighbor count is widened to every point at distance zero, so the
//! same estimator covers continuous, discrete, and mixed variables.
//! Interaction information of a feature pair with the target is the
//! difference CMI - MI computed on one shared subsample.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::tabular::{Column, ColumnData, Table};

/// Per-row values of one variable, as seen by the estimators.
#[derive(Debug, Clone)]
pub enum VariableView {
    Numeric(Vec<f64>),
    Categorical(Vec<u32>),
}

impl VariableView {
    /// Builds a view of a table column over the given rows. Missing numeric
    /// values are imputed with the mean of the viewed rows.
    pub fn from_column(column: &Column, rows: &[usize]) -> VariableView {
        match &column.data {
            ColumnData::Numeric(values) => {
                let mut sum = 0.0;
                let mut count = 0usize;
                for &r in rows {
                    if values[r].is_finite() {
                        sum += values[r];
                        count += 1;
                    }
                }
                let mean = if count == 0 { 0.0 } else { sum / count as f64 };
                VariableView::Numeric(
                    rows.iter()
                        .map(|&r| {
                            if values[r].is_finite() {
                                values[r]
                            } else {
                                mean
                            }
                        })
                        .collect(),
                )
            }
            ColumnData::Categorical { codes, .. } => {
                VariableView::Categorical(rows.iter().map(|&r| codes[r]).collect())
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VariableView::Numeric(v) => v.len(),
            VariableView::Categorical(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scored feature pair: interaction information in nats plus the canonical
/// (i < j) pair of feature identifiers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IIEntry {
    pub tau: f64,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EstimatorConfig {
    /// Neighbor count for the kNN statistics.
    pub k: usize,
    /// Rows are subsampled down to this size before estimation.
    pub subsample_size: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            k: 3,
            subsample_size: 3000,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::config("estimator k must be >= 1"));
        }
        if self.subsample_size < 10 * self.k {
            return Err(Error::config(format!(
                "subsample_size {} must be at least 10*k = {}",
                self.subsample_size,
                10 * self.k
            )));
        }
        Ok(())
    }

    fn with_seed(&self, seed: u64) -> EstimatorConfig {
        EstimatorConfig { seed, ..*self }
    }
}

/// Estimate plus a degeneracy flag (set when an input variable was constant
/// after subsampling and the estimate defaulted to zero).
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub nats: f64,
    pub degenerate: bool,
}

/// Digamma at positive integer arguments: psi(1) = -gamma and
/// psi(m) = psi(m-1) + 1/(m-1). A cumulative table makes every lookup O(1),
/// and all arguments used by the estimators are integers.
struct Digamma {
    table: Vec<f64>,
}

const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;

impl Digamma {
    fn up_to(n: usize) -> Digamma {
        let mut table = vec![0.0; n + 1];
        if n >= 1 {
            table[1] = -EULER_MASCHERONI;
        }
        for m in 2..=n {
            table[m] = table[m - 1] + 1.0 / (m - 1) as f64;
        }
        Digamma { table }
    }

    #[inline]
    fn at(&self, m: usize) -> f64 {
        self.table[m]
    }
}

/// Internal estimator-ready form: numeric values standardized over the
/// subsample (stored single-precision; the distance kernel is bandwidth
/// bound), categorical values left as codes. A constant numeric variable
/// becomes all zeros so it contributes zero distance everywhere.
enum Prepared {
    Numeric(Vec<f32>),
    Categorical(Vec<u32>),
}

struct PreparedVar {
    data: Prepared,
    constant: bool,
}

fn prepare(view: &VariableView, rows: Option<&[usize]>) -> PreparedVar {
    match view {
        VariableView::Numeric(values) => {
            let gathered: Vec<f64> = match rows {
                Some(rows) => rows.iter().map(|&r| values[r]).collect(),
                None => values.clone(),
            };
            let n = gathered.len();
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in &gathered {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if n == 0 || lo == hi {
                return PreparedVar {
                    data: Prepared::Numeric(vec![0.0; n]),
                    constant: true,
                };
            }
            let mean = gathered.iter().sum::<f64>() / n as f64;
            let var = gathered
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<f64>()
                / n as f64;
            let std = var.sqrt();
            if !std.is_finite() || std == 0.0 {
                return PreparedVar {
                    data: Prepared::Numeric(vec![0.0; n]),
                    constant: true,
                };
            }
            PreparedVar {
                data: Prepared::Numeric(
                    gathered
                        .iter()
                        .map(|&v| ((v - mean) / std) as f32)
                        .collect(),
                ),
                constant: false,
            }
        }
        VariableView::Categorical(codes) => {
            let gathered: Vec<u32> = match rows {
                Some(rows) => rows.iter().map(|&r| codes[r]).collect(),
                None => codes.clone(),
            };
            let constant = gathered.windows(2).all(|w| w[0] == w[1]);
            PreparedVar {
                data: Prepared::Categorical(gathered),
                constant,
            }
        }
    }
}

#[inline]
fn fill_distances(var: &Prepared, i: usize, out: &mut [f32]) {
    match var {
        Prepared::Numeric(v) => {
            let vi = v[i];
            for (j, &vj) in v.iter().enumerate() {
                out[j] = (vi - vj).abs();
            }
        }
        Prepared::Categorical(c) => {
            let ci = c[i];
            for (j, &cj) in c.iter().enumerate() {
                out[j] = if ci == cj { 0.0 } else { 1.0 };
            }
        }
    }
}

struct Scratch {
    dx: Vec<f32>,
    dy: Vec<f32>,
    dz: Vec<f32>,
    joint: Vec<f32>,
    joint2: Vec<f32>,
    smallest: Vec<f32>,
    select: Vec<f32>,
}

impl Scratch {
    fn new(n: usize, k: usize) -> Scratch {
        Scratch {
            dx: vec![0.0; n],
            dy: vec![0.0; n],
            dz: vec![0.0; n],
            joint: vec![0.0; n],
            joint2: vec![0.0; n],
            smallest: Vec::with_capacity(k.min(SMALL_K_LIMIT)),
            select: if k > SMALL_K_LIMIT {
                vec![0.0; n]
            } else {
                Vec::new()
            },
        }
    }
}

const SMALL_K_LIMIT: usize = 32;

/// k-th smallest distance. The caller poisons the self-distance with
/// infinity, so no index is excluded here. For the usual small k this is a
/// single pass maintaining the k smallest seen so far; large k falls back to
/// selection on a copy.
fn kth_smallest(values: &[f32], k: usize, smallest: &mut Vec<f32>, select: &mut [f32]) -> f32 {
    if k <= SMALL_K_LIMIT {
        smallest.clear();
        for &d in values {
            if smallest.len() < k {
                let pos = smallest.partition_point(|&h| h <= d);
                smallest.insert(pos, d);
            } else if d < smallest[k - 1] {
                smallest.pop();
                let pos = smallest.partition_point(|&h| h <= d);
                smallest.insert(pos, d);
            }
        }
        smallest[k - 1]
    } else {
        select.copy_from_slice(values);
        *select.select_nth_unstable_by(k - 1, f32::total_cmp).1
    }
}

fn mi_point(x: &Prepared, y: &Prepared, i: usize, k: usize, psi: &Digamma, s: &mut Scratch) -> f64 {
    let n = s.joint.len();
    fill_distances(x, i, &mut s.dx);
    fill_distances(y, i, &mut s.dy);
    // Poison the self-distances so the scans below need no index checks.
    s.dx[i] = f32::INFINITY;
    s.dy[i] = f32::INFINITY;
    for j in 0..n {
        s.joint[j] = s.dx[j].max(s.dy[j]);
    }
    let rho = kth_smallest(&s.joint, k, &mut s.smallest, &mut s.select);
    let mut k_tilde = 0usize;
    let mut n_x = 0usize;
    let mut n_y = 0usize;
    for j in 0..n {
        k_tilde += usize::from(s.joint[j] <= rho);
        n_x += usize::from(s.dx[j] <= rho);
        n_y += usize::from(s.dy[j] <= rho);
    }
    // Terms grouped so the value is exactly symmetric in x and y.
    (psi.at(k_tilde) + psi.at(n)) - (psi.at(n_x + 1) + psi.at(n_y + 1))
}

fn cmi_point(
    x: &Prepared,
    y: &Prepared,
    z: &Prepared,
    i: usize,
    k: usize,
    psi: &Digamma,
    s: &mut Scratch,
) -> f64 {
    let n = s.joint.len();
    fill_distances(x, i, &mut s.dx);
    fill_distances(y, i, &mut s.dy);
    fill_distances(z, i, &mut s.dz);
    s.dx[i] = f32::INFINITY;
    s.dy[i] = f32::INFINITY;
    s.dz[i] = f32::INFINITY;
    for j in 0..n {
        s.joint[j] = s.dx[j].max(s.dy[j]).max(s.dz[j]);
    }
    let rho = kth_smallest(&s.joint, k, &mut s.smallest, &mut s.select);
    let mut k_tilde = 0usize;
    let mut n_xz = 0usize;
    let mut n_yz = 0usize;
    let mut n_z = 0usize;
    for j in 0..n {
        k_tilde += usize::from(s.joint[j] <= rho);
        let z_in = usize::from(s.dz[j] <= rho);
        n_z += z_in;
        n_xz += z_in & usize::from(s.dx[j] <= rho);
        n_yz += z_in & usize::from(s.dy[j] <= rho);
    }
    (psi.at(k_tilde) + psi.at(n_z + 1)) - (psi.at(n_xz + 1) + psi.at(n_yz + 1))
}

/// Both pointwise terms of tau at once, sharing the per-variable distances:
/// the conditional term over (x, y, z) and the marginal term over (x, y).
fn tau_point(
    x: &Prepared,
    y: &Prepared,
    z: &Prepared,
    i: usize,
    k: usize,
    psi: &Digamma,
    s: &mut Scratch,
) -> (f64, f64) {
    let n = s.joint.len();
    fill_distances(x, i, &mut s.dx);
    fill_distances(y, i, &mut s.dy);
    fill_distances(z, i, &mut s.dz);
    s.dx[i] = f32::INFINITY;
    s.dy[i] = f32::INFINITY;
    s.dz[i] = f32::INFINITY;
    for j in 0..n {
        let dxy = s.dx[j].max(s.dy[j]);
        s.joint2[j] = dxy;
        s.joint[j] = dxy.max(s.dz[j]);
    }
    let rho3 = kth_smallest(&s.joint, k, &mut s.smallest, &mut s.select);
    let rho2 = kth_smallest(&s.joint2, k, &mut s.smallest, &mut s.select);
    let mut k3 = 0usize;
    let mut n_xz = 0usize;
    let mut n_yz = 0usize;
    let mut n_z = 0usize;
    let mut k2 = 0usize;
    let mut n_x = 0usize;
    let mut n_y = 0usize;
    for j in 0..n {
        let dx = s.dx[j];
        let dy = s.dy[j];
        let dz = s.dz[j];
        k3 += usize::from(s.joint[j] <= rho3);
        let z_in = usize::from(dz <= rho3);
        n_z += z_in;
        n_xz += z_in & usize::from(dx <= rho3);
        n_yz += z_in & usize::from(dy <= rho3);
        k2 += usize::from(s.joint2[j] <= rho2);
        n_x += usize::from(dx <= rho2);
        n_y += usize::from(dy <= rho2);
    }
    let cmi = (psi.at(k3) + psi.at(n_z + 1)) - (psi.at(n_xz + 1) + psi.at(n_yz + 1));
    let mi = (psi.at(k2) + psi.at(n)) - (psi.at(n_x + 1) + psi.at(n_y + 1));
    (cmi, mi)
}

/// Mean of the pointwise terms, computed in index order so the result does
/// not depend on thread scheduling.
fn mean_over_points<F>(n: usize, k: usize, point: F) -> f64
where
    F: Fn(usize, &mut Scratch) -> f64 + Sync,
{
    let xis: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(|| Scratch::new(n, k), |s, i| point(i, s))
        .collect();
    xis.iter().sum::<f64>() / n as f64
}

fn prepared_len(v: &PreparedVar) -> usize {
    match &v.data {
        Prepared::Numeric(vals) => vals.len(),
        Prepared::Categorical(codes) => codes.len(),
    }
}

fn core_mi(x: &PreparedVar, y: &PreparedVar, k: usize) -> Estimate {
    if x.constant || y.constant {
        return Estimate {
            nats: 0.0,
            degenerate: true,
        };
    }
    let n = prepared_len(x);
    let psi = Digamma::up_to(n + 1);
    let mean = mean_over_points(n, k, |i, s| mi_point(&x.data, &y.data, i, k, &psi, s));
    Estimate {
        nats: mean.max(0.0),
        degenerate: false,
    }
}

fn core_cmi(x: &PreparedVar, y: &PreparedVar, z: &PreparedVar, k: usize) -> Estimate {
    if x.constant || y.constant {
        return Estimate {
            nats: 0.0,
            degenerate: true,
        };
    }
    let n = prepared_len(x);
    let psi = Digamma::up_to(n + 1);
    let mean = mean_over_points(n, k, |i, s| {
        cmi_point(&x.data, &y.data, &z.data, i, k, &psi, s)
    });
    Estimate {
        nats: mean.max(0.0),
        degenerate: false,
    }
}

/// CMI and MI on the same prepared data in one pass over the points, each
/// clamped below at zero.
fn core_tau(x: &PreparedVar, y: &PreparedVar, z: &PreparedVar, k: usize) -> Estimate {
    if x.constant || y.constant {
        return Estimate {
            nats: 0.0,
            degenerate: true,
        };
    }
    let n = prepared_len(x);
    let psi = Digamma::up_to(n + 1);
    let terms: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map_init(
            || Scratch::new(n, k),
            |s, i| tau_point(&x.data, &y.data, &z.data, i, k, &psi, s),
        )
        .collect();
    let cmi = (terms.iter().map(|&(c, _)| c).sum::<f64>() / n as f64).max(0.0);
    let mi = (terms.iter().map(|&(_, m)| m).sum::<f64>() / n as f64).max(0.0);
    Estimate {
        nats: cmi - mi,
        degenerate: false,
    }
}

fn check_lengths(views: &[&VariableView]) -> Result<usize> {
    let n = views[0].len();
    if views.iter().any(|v| v.len() != n) {
        return Err(Error::estimator("variable lengths differ"));
    }
    Ok(n)
}

/// Seeded subsample of row indices; `None` when no subsampling is needed,
/// so small inputs are seed-independent.
fn subsample_rows(n: usize, cfg: &EstimatorConfig) -> Option<Vec<usize>> {
    if n <= cfg.subsample_size {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = rand::seq::index::sample(&mut rng, n, cfg.subsample_size).into_vec();
    rows.sort_unstable();
    Some(rows)
}

fn effective_len(n: usize, cfg: &EstimatorConfig) -> Result<usize> {
    let eff = n.min(cfg.subsample_size);
    if eff < 10 * cfg.k {
        return Err(Error::estimator(format!(
            "{eff} samples after subsampling, need at least 10*k = {}",
            10 * cfg.k
        )));
    }
    Ok(eff)
}

/// Exact plug-in Shannon entropy (nats) of the empirical joint distribution
/// of one or more categorical variables.
pub fn plugin_entropy(vars: &[&VariableView]) -> Result<f64> {
    if vars.is_empty() {
        return Err(Error::estimator(
            "plugin_entropy needs at least one variable",
        ));
    }
    let n = check_lengths(vars)?;
    if n == 0 {
        return Err(Error::estimator("plugin_entropy on empty input"));
    }
    let mut codes: Vec<&[u32]> = Vec::with_capacity(vars.len());
    for v in vars {
        match v {
            VariableView::Categorical(c) => codes.push(c),
            VariableView::Numeric(_) => {
                return Err(Error::estimator(
                    "plugin_entropy requires categorical variables",
                ))
            }
        }
    }
    let mut counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for row in 0..n {
        let key: Vec<u32> = codes.iter().map(|c| c[row]).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    let total = n as f64;
    let mut h = 0.0;
    for &count in counts.values() {
        let p = count as f64 / total;
        h -= p * p.ln();
    }
    Ok(h)
}

/// kNN mutual information estimate in nats, clamped below at zero.
pub fn knn_mi(x: &VariableView, y: &VariableView, cfg: &EstimatorConfig) -> Result<Estimate> {
    cfg.validate()?;
    let n = check_lengths(&[x, y])?;
    effective_len(n, cfg)?;
    let rows = subsample_rows(n, cfg);
    let px = prepare(x, rows.as_deref());
    let py = prepare(y, rows.as_deref());
    Ok(core_mi(&px, &py, cfg.k))
}

/// kNN conditional mutual information I(x; y | z) in nats, clamped below at
/// zero. A constant z reduces this exactly to `knn_mi(x, y)`.
pub fn knn_cmi(
    x: &VariableView,
    y: &VariableView,
    z: &VariableView,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    cfg.validate()?;
    let n = check_lengths(&[x, y, z])?;
    effective_len(n, cfg)?;
    let rows = subsample_rows(n, cfg);
    let px = prepare(x, rows.as_deref());
    let py = prepare(y, rows.as_deref());
    let pz = prepare(z, rows.as_deref());
    Ok(core_cmi(&px, &py, &pz, cfg.k))
}

/// Interaction information tau = I(fi; fj | y) - I(fi; fj), both terms
/// computed on one shared seeded subsample. Positive tau means synergy,
/// negative means redundancy; tau itself is not clamped.
pub fn interaction_information(
    fi: &VariableView,
    fj: &VariableView,
    y: &VariableView,
    cfg: &EstimatorConfig,
) -> Result<Estimate> {
    cfg.validate()?;
    let n = check_lengths(&[fi, fj, y])?;
    effective_len(n, cfg)?;
    let rows = subsample_rows(n, cfg);
    let px = prepare(fi, rows.as_deref());
    let py = prepare(fj, rows.as_deref());
    let pz = prepare(y, rows.as_deref());
    Ok(core_tau(&px, &py, &pz, cfg.k))
}

/// Plug-in interaction information for fully categorical triples via the
/// seven-entropy identity. Serves as the discrete-data oracle for the
/// kNN-based route.
pub fn plugin_interaction_information(
    fi: &VariableView,
    fj: &VariableView,
    y: &VariableView,
) -> Result<f64> {
    Ok(
        plugin_entropy(&[fi, fj])? + plugin_entropy(&[fj, y])? + plugin_entropy(&[fi, y])?
            - plugin_entropy(&[fi])?
            - plugin_entropy(&[fj])?
            - plugin_entropy(&[y])?
            - plugin_entropy(&[fi, fj, y])?,
    )
}

/// Scores every pair and returns entries sorted by descending tau with a
/// lexicographic (i, j) tie-break. Pair evaluations run in parallel; each
/// pair draws its own subsample from a seed derived from (cfg.seed, i, j),
/// so results do not depend on evaluation order.
pub fn pairwise_ii(
    vars: &[VariableView],
    pairs: &[(usize, usize)],
    y: &VariableView,
    cfg: &EstimatorConfig,
) -> Result<Vec<IIEntry>> {
    cfg.validate()?;
    let mut canonical: Vec<(usize, usize)> = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        if a == b {
            return Err(Error::estimator(format!("pair ({a}, {b}) is degenerate")));
        }
        if a >= vars.len() || b >= vars.len() {
            return Err(Error::estimator(format!("pair ({a}, {b}) out of range")));
        }
        canonical.push((a.min(b), a.max(b)));
    }
    {
        let mut sorted = canonical.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::estimator("duplicate pair in input"));
        }
    }
    let mut entries: Vec<IIEntry> = canonical
        .par_iter()
        .map(|&(i, j)| {
            let pair_cfg = cfg.with_seed(derive_seed(cfg.seed, ((i as u64) << 32) | j as u64));
            interaction_information(&vars[i], &vars[j], y, &pair_cfg).map(|est| IIEntry {
                tau: est.nats,
                i,
                j,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_entries(&mut entries);
    Ok(entries)
}

/// Canonical entry order: descending tau, lexicographic (i, j) tie-break.
pub fn sort_entries(entries: &mut [IIEntry]) {
    entries.sort_by(|a, b| {
        b.tau
            .partial_cmp(&a.tau)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| (a.i, a.j).cmp(&(b.i, b.j)))
    });
}

/// Selects the top-m features by univariate MI with the target, returned in
/// table order. With m at or above the feature count this is the identity.
pub fn prefilter_features(table: &Table, m: usize, cfg: &EstimatorConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    if m < 2 {
        return Err(Error::config("prefilter size must be >= 2"));
    }
    let names = table.feature_names();
    if m >= names.len() {
        return Ok(names);
    }
    let rows: Vec<usize> = (0..table.n_rows).collect();
    let target = VariableView::from_column(table.target_column()?, &rows);
    let scored: Vec<(usize, f64)> = names
        .par_iter()
        .enumerate()
        .map(|(idx, name)| {
            let view = VariableView::from_column(table.column(name)?, &rows);
            let pair_cfg = cfg.with_seed(derive_seed(cfg.seed, 0x5eed_0000 | idx as u64));
            let mi = knn_mi(&view, &target, &pair_cfg)?;
            Ok((idx, mi.nats))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ranked = scored;
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    let mut keep: Vec<usize> = ranked.iter().take(m).map(|&(idx, _)| idx).collect();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|idx| names[idx].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn standard_normals(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
        // Box-Muller.
        (0..n)
            .map(|_| {
                let u1: f64 = r.gen_range(1e-12..1.0);
                let u2: f64 = r.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    }

    #[test]
    fn plugin_entropy_fair_coin() {
        let coin = VariableView::Categorical((0..3000).map(|i| i % 2).collect());
        assert_abs_diff_eq!(
            plugin_entropy(&[&coin]).unwrap(),
            2f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn plugin_entropy_constant_is_zero() {
        let constant = VariableView::Categorical(vec![7; 100]);
        assert_abs_diff_eq!(plugin_entropy(&[&constant]).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn plugin_entropy_joint_of_independent_coins() {
        // Enumerate the product distribution exactly: all four combinations
        // equally often, so the joint entropy is ln 4.
        let a = VariableView::Categorical((0..400).map(|i| i % 2).collect());
        let b = VariableView::Categorical((0..400).map(|i| (i / 2) % 2).collect());
        assert_abs_diff_eq!(
            plugin_entropy(&[&a, &b]).unwrap(),
            4f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn plugin_entropy_rejects_empty_and_numeric() {
        assert!(plugin_entropy(&[]).is_err());
        let num = VariableView::Numeric(vec![1.0, 2.0]);
        assert!(plugin_entropy(&[&num]).is_err());
    }

    #[test]
    fn mi_independent_uniforms_is_near_zero() {
        let mut r = rng(11);
        let x = VariableView::Numeric((0..3000).map(|_| r.gen_range(0.0..1.0)).collect());
        let y = VariableView::Numeric((0..3000).map(|_| r.gen_range(0.0..1.0)).collect());
        let mi = knn_mi(&x, &y, &EstimatorConfig::default()).unwrap();
        assert!(mi.nats.abs() <= 0.05, "independent MI = {}", mi.nats);
    }

    #[test]
    fn mi_correlated_gaussian_matches_closed_form() {
        let rho: f64 = 0.9;
        let expected = -0.5 * (1.0 - rho * rho).ln();
        let mut r = rng(12);
        let z1 = standard_normals(3000, &mut r);
        let z2 = standard_normals(3000, &mut r);
        let x: Vec<f64> = z1.clone();
        let y: Vec<f64> = z1
            .iter()
            .zip(&z2)
            .map(|(&a, &b)| rho * a + (1.0 - rho * rho).sqrt() * b)
            .collect();
        let mi = knn_mi(
            &VariableView::Numeric(x),
            &VariableView::Numeric(y),
            &EstimatorConfig::default(),
        )
        .unwrap();
        assert!(
            (mi.nats - expected).abs() <= 0.1,
            "MI {} vs closed form {expected}",
            mi.nats
        );
    }

    #[test]
    fn mi_identical_categorical_matches_plugin_entropy() {
        let mut r = rng(13);
        let codes: Vec<u32> = (0..3000).map(|_| r.gen_range(0..4)).collect();
        let x = VariableView::Categorical(codes.clone());
        let y = VariableView::Categorical(codes);
        let oracle = plugin_entropy(&[&x]).unwrap();
        let mi = knn_mi(&x, &y, &EstimatorConfig::default()).unwrap();
        assert!(
            (mi.nats - oracle).abs() <= 0.05,
            "MI {} vs plug-in entropy {oracle}",
            mi.nats
        );
    }

    #[test]
    fn mi_constant_input_degenerates_to_zero() {
        let x = VariableView::Numeric(vec![5.0; 100]);
        let y = VariableView::Numeric((0..100).map(|i| i as f64).collect());
        let mi = knn_mi(&x, &y, &EstimatorConfig::default()).unwrap();
        assert_eq!(mi.nats, 0.0);
        assert!(mi.degenerate);
    }

    #[test]
    fn estimators_reject_too_few_samples() {
        // Fewer than 10*k samples after subsampling is an error.
        let x = VariableView::Numeric((0..20).map(|i| i as f64).collect());
        let y = VariableView::Numeric((0..20).map(|i| (i * 2) as f64).collect());
        let cfg = EstimatorConfig::default(); // k = 3 needs 30
        assert!(knn_mi(&x, &y, &cfg).is_err());
        assert!(knn_cmi(&x, &y, &x.clone(), &cfg).is_err());
        assert!(interaction_information(&x, &y, &x.clone(), &cfg).is_err());

        // Mismatched lengths are an error too.
        let short = VariableView::Numeric(vec![1.0; 10]);
        assert!(knn_mi(&x, &short, &cfg).is_err());
    }

    #[test]
    fn cmi_conditionally_independent_is_near_zero() {
        // x and y are noisy copies of z, independent given z.
        let mut r = rng(14);
        let z: Vec<u32> = (0..3000).map(|_| r.gen_range(0..2)).collect();
        let x: Vec<u32> = z
            .iter()
            .map(|&b| {
                if r.gen_range(0.0..1.0) < 0.25 {
                    b ^ 1
                } else {
                    b
                }
            })
            .collect();
        let y: Vec<u32> = z
            .iter()
            .map(|&b| {
                if r.gen_range(0.0..1.0) < 0.25 {
                    b ^ 1
                } else {
                    b
                }
            })
            .collect();
        let cmi = knn_cmi(
            &VariableView::Categorical(x),
            &VariableView::Categorical(y),
            &VariableView::Categorical(z),
            &EstimatorConfig::default(),
        )
        .unwrap();
        assert!(cmi.nats.abs() <= 0.05, "conditional MI = {}", cmi.nats);
    }

    #[test]
    fn cmi_xor_is_ln_two() {
        let mut r = rng(15);
        let x: Vec<u32> = (0..3000).map(|_| r.gen_range(0..2)).collect();
        let y: Vec<u32> = (0..3000).map(|_| r.gen_range(0..2)).collect();
        let z: Vec<u32> = x.iter().zip(&y).map(|(&a, &b)| a ^ b).collect();
        let cmi = knn_cmi(
            &VariableView::Categorical(x),
            &VariableView::Categorical(y),
            &VariableView::Categorical(z),
            &EstimatorConfig::default(),
        )
        .unwrap();
        assert!(
            (cmi.nats - 2f64.ln()).abs() <= 0.1,
            "XOR CMI = {}",
            cmi.nats
        );
    }

    #[test]
    fn cmi_with_constant_condition_equals_mi() {
        let mut r = rng(16);
        let x = VariableView::Numeric(standard_normals(500, &mut r));
        let y = VariableView::Numeric(standard_normals(500, &mut r));
        let z = VariableView::Categorical(vec![0; 500]);
        let cfg = EstimatorConfig::default();
        let cmi = knn_cmi(&x, &y, &z, &cfg).unwrap();
        let mi = knn_mi(&x, &y, &cfg).unwrap();
        assert!((cmi.nats - mi.nats).abs() <= 0.02);
    }

    #[test]
    fn interaction_information_xor_triple_is_synergy() {
        let mut r = rng(17);
        let fi: Vec<u32> = (0..3000).map(|_| r.gen_range(0..2)).collect();
        let fj: Vec<u32> = (0..3000).map(|_| r.gen_range(0..2)).collect();
        let y: Vec<u32> = fi.iter().zip(&fj).map(|(&a, &b)| a ^ b).collect();
        let tau = interaction_information(
            &VariableView::Categorical(fi),
            &VariableView::Categorical(fj),
            &VariableView::Categorical(y),
            &EstimatorConfig::default(),
        )
        .unwrap();
        assert!(
            (tau.nats - 2f64.ln()).abs() <= 0.1,
            "XOR tau = {}",
            tau.nats
        );
    }

    #[test]
    fn interaction_information_redundant_triple_is_negative() {
        let mut r = rng(18);
        let v: Vec<u32> = (0..3000).map(|_| r.gen_range(0..4)).collect();
        let tau = interaction_information(
            &VariableView::Categorical(v.clone()),
            &VariableView::Categorical(v.clone()),
            &VariableView::Categorical(v),
            &EstimatorConfig::default(),
        )
        .unwrap();
        assert!(tau.nats < -0.2, "redundant tau = {}", tau.nats);
    }

    #[test]
    fn interaction_information_independent_triple_is_near_zero() {
        let mut r = rng(19);
        let fi = VariableView::Numeric(standard_normals(3000, &mut r));
        let fj = VariableView::Numeric(standard_normals(3000, &mut r));
        let y = VariableView::Numeric(standard_normals(3000, &mut r));
        let tau = interaction_information(&fi, &fj, &y, &EstimatorConfig::default()).unwrap();
        assert!(tau.nats.abs() <= 0.05, "independent tau = {}", tau.nats);
    }

    #[test]
    fn interaction_information_is_exactly_symmetric() {
        let mut r = rng(20);
        let a = standard_normals(400, &mut r);
        let b = standard_normals(400, &mut r);
        let y: Vec<f64> = a.iter().zip(&b).map(|(&u, &v)| u * v).collect();
        let fi = VariableView::Numeric(a);
        let fj = VariableView::Numeric(b);
        let y = VariableView::Numeric(y);
        let cfg = EstimatorConfig::default();
        let ab = interaction_information(&fi, &fj, &y, &cfg).unwrap();
        let ba = interaction_information(&fj, &fi, &y, &cfg).unwrap();
        assert_eq!(ab.nats.to_bits(), ba.nats.to_bits());
    }

    #[test]
    fn estimates_are_deterministic_and_subsample_invariant_when_small() {
        let mut r = rng(21);
        let x = VariableView::Numeric(standard_normals(500, &mut r));
        let y = VariableView::Numeric(standard_normals(500, &mut r));
        let a = knn_mi(
            &x,
            &y,
            &EstimatorConfig {
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let b = knn_mi(
            &x,
            &y,
            &EstimatorConfig {
                seed: 999,
                ..Default::default()
            },
        )
        .unwrap();
        // n <= subsample_size: no subsampling happens, so the seed is inert.
        assert_eq!(a.nats.to_bits(), b.nats.to_bits());

        let big = VariableView::Numeric(standard_normals(5000, &mut r));
        let big2 = VariableView::Numeric(standard_normals(5000, &mut r));
        let c1 = knn_mi(
            &big,
            &big2,
            &EstimatorConfig {
                seed: 7,
                ..Default::default()
            },
        )
        .unwrap();
        let c2 = knn_mi(
            &big,
            &big2,
            &EstimatorConfig {
                seed: 7,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(c1.nats.to_bits(), c2.nats.to_bits());
    }

    #[test]
    fn pairwise_ii_counts_and_canonicalization() {
        let mut r = rng(22);
        let vars: Vec<VariableView> = (0..3)
            .map(|_| VariableView::Numeric(standard_normals(200, &mut r)))
            .collect();
        let y = VariableView::Numeric(standard_normals(200, &mut r));
        let cfg = EstimatorConfig::default();
        let all = pairwise_ii(&vars, &[(0, 1), (0, 2), (1, 2)], &y, &cfg).unwrap();
        assert_eq!(all.len(), 3);

        let fwd = pairwise_ii(&vars, &[(0, 1)], &y, &cfg).unwrap();
        let rev = pairwise_ii(&vars, &[(1, 0)], &y, &cfg).unwrap();
        assert_eq!(fwd[0].tau.to_bits(), rev[0].tau.to_bits());
        assert_eq!((fwd[0].i, fwd[0].j), (rev[0].i, rev[0].j));

        assert!(pairwise_ii(&vars, &[(0, 1), (1, 0)], &y, &cfg).is_err());
        assert!(pairwise_ii(&vars, &[(1, 1)], &y, &cfg).is_err());
    }

    #[test]
    fn pairwise_ii_ranks_planted_product_pair_first() {
        let mut hits = 0;
        for seed in 0..5 {
            let mut r = rng(100 + seed);
            let n = 2000;
            let vars: Vec<VariableView> = (0..8)
                .map(|_| VariableView::Numeric(standard_normals(n, &mut r)))
                .collect();
            let noise = standard_normals(n, &mut r);
            let y: Vec<f64> = (0..n)
                .map(|row| {
                    let f1 = match &vars[0] {
                        VariableView::Numeric(v) => v[row],
                        _ => unreachable!(),
                    };
                    let f2 = match &vars[1] {
                        VariableView::Numeric(v) => v[row],
                        _ => unreachable!(),
                    };
                    f1 * f2 + 0.05 * noise[row]
                })
                .collect();
            let pairs: Vec<(usize, usize)> = (0..8)
                .flat_map(|i| ((i + 1)..8).map(move |j| (i, j)))
                .collect();
            let entries = pairwise_ii(
                &vars,
                &pairs,
                &VariableView::Numeric(y),
                &EstimatorConfig {
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            if (entries[0].i, entries[0].j) == (0, 1) {
                hits += 1;
            }
        }
        assert!(
            hits >= 4,
            "planted pair ranked first in only {hits}/5 seeds"
        );
    }

    #[test]
    fn prefilter_identity_and_planted_selection() {
        use crate::tabular::{Column, Table, TaskKind};

        // Identity case: m >= feature count returns everything unchanged.
        let mut r = rng(23);
        let cols = vec![
            Column::numeric("f0", standard_normals(100, &mut r)),
            Column::numeric("f1", standard_normals(100, &mut r)),
            Column::numeric("y", standard_normals(100, &mut r)),
        ];
        let t = Table::new(cols, Some("y".into()), TaskKind::Regression).unwrap();
        let kept = prefilter_features(&t, 50, &EstimatorConfig::default()).unwrap();
        assert_eq!(kept, vec!["f0".to_string(), "f1".to_string()]);

        // A feature equal to the target has maximal MI and must be kept.
        let mut r = rng(24);
        let y = standard_normals(400, &mut r);
        let mut cols = vec![Column::numeric("copy", y.clone())];
        for i in 0..5 {
            cols.push(Column::numeric(
                format!("n{i}"),
                standard_normals(400, &mut r),
            ));
        }
        cols.push(Column::numeric("y", y));
        let t = Table::new(cols, Some("y".into()), TaskKind::Regression).unwrap();
        let kept = prefilter_features(&t, 2, &EstimatorConfig::default()).unwrap();
        assert!(kept.contains(&"copy".to_string()));

        // Planted additive target: {F1, F2} recovered in most seeds.
        let mut hits = 0;
        for seed in 0..5 {
            let mut r = rng(200 + seed);
            let n = 1500;
            let feats: Vec<Vec<f64>> = (0..10).map(|_| standard_normals(n, &mut r)).collect();
            let y: Vec<f64> = (0..n).map(|row| feats[0][row] + feats[1][row]).collect();
            let mut cols: Vec<Column> = feats
                .into_iter()
                .enumerate()
                .map(|(i, v)| Column::numeric(format!("f{i}"), v))
                .collect();
            cols.push(Column::numeric("y", y));
            let t = Table::new(cols, Some("y".into()), TaskKind::Regression).unwrap();
            let kept = prefilter_features(
                &t,
                2,
                &EstimatorConfig {
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            if kept == vec!["f0".to_string(), "f1".to_string()] {
                hits += 1;
            }
        }
        assert!(
            hits >= 4,
            "planted features recovered in only {hits}/5 seeds"
        );
    }
}
