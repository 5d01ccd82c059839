//! Gaussian copula over empirical marginals.
//!
//! Every column is pushed through its own empirical CDF into a uniform and
//! then through the standard normal quantile function. The Pearson
//! correlation of those latent normals is the only joint structure kept.
//! Sampling runs the chain backwards: correlated normals, normal CDF, then
//! the empirical quantile function of each column.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{SynthesisError, SynthesisResult};
use crate::table::{ColumnKind, DataTable, Value};

/// Eigenvalue floor used when repairing a correlation matrix.
pub const EIGEN_FLOOR: f64 = 1e-9;

const UNIT_CLAMP: f64 = 1e-12;

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Numeric {
        sorted: Vec<f64>,
    },
    /// `upper[k]` is the right end of category `k`'s interval; intervals
    /// partition `[0, 1]` in declared order.
    Categorical {
        frequencies: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl Marginal {
    fn interval(&self, category: usize) -> (f64, f64) {
        match self {
            Marginal::Categorical { upper, .. } => {
                let lower = if category == 0 { 0.0 } else { upper[category - 1] };
                (lower, upper[category])
            }
            Marginal::Numeric { .. } => unreachable!("numeric marginal has no intervals"),
        }
    }

    /// Maps a uniform back to a cell value.
    fn quantile(&self, u: f64) -> Value {
        match self {
            Marginal::Numeric { sorted } => {
                let last = sorted.len() - 1;
                let position = u.clamp(0.0, 1.0) * last as f64;
                let lo = (position.floor() as usize).min(last);
                let hi = (lo + 1).min(last);
                let frac = position - lo as f64;
                let value = if lo == hi || sorted[lo] == sorted[hi] {
                    sorted[lo]
                } else {
                    sorted[lo] + frac * (sorted[hi] - sorted[lo])
                };
                Value::Num(value)
            }
            Marginal::Categorical { frequencies, upper } => {
                let mut k = upper.partition_point(|&c| c <= u);
                if k >= upper.len() {
                    k = frequencies.iter().rposition(|&f| f > 0.0).expect("some category observed");
                }
                Value::Cat(k as u32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopulaOptions {
    /// Draw categorical latents uniformly inside the category interval
    /// instead of at its midpoint.
    #[serde(default)]
    pub categorical_jitter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    pub columns: Vec<String>,
    pub marginals: Vec<Marginal>,
    /// Row-major `d × d` correlation of the latent normals.
    pub latent_correlation: Vec<f64>,
}

impl CopulaModel {
    pub fn dims(&self) -> usize {
        self.columns.len()
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.latent_correlation[i * self.dims() + j]
    }

    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dims(), self.dims(), &self.latent_correlation)
    }

    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Mid-rank empirical CDF values `(rank - 0.5) / n`, averaging ranks over ties.
fn mid_rank_uniforms(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = (mean_rank - 0.5) / n as f64;
        }
        start = end;
    }
    out
}

fn pearson_matrix(latent: &[Vec<f64>]) -> DMatrix<f64> {
    let d = latent.len();
    let n = latent.first().map_or(0, Vec::len) as f64;
    let centered: Vec<Vec<f64>> = latent
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / n;
            col.iter().map(|x| x - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = centered.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut m = DMatrix::identity(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let r = if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    m
}

fn is_repaired(matrix: &DMatrix<f64>, floor: f64) -> bool {
    SymmetricEigen::new(matrix.clone()).eigenvalues.iter().all(|&l| l >= floor / 2.0)
}

fn clip_and_rescale(matrix: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(matrix.clone());
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let scale: Vec<f64> = (0..rebuilt.nrows()).map(|i| rebuilt[(i, i)].sqrt()).collect();
    let n = rebuilt.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            let v = 0.5 * (rebuilt[(i, j)] + rebuilt[(j, i)]) / (scale[i] * scale[j]);
            v.clamp(-1.0, 1.0)
        }
    })
}

/// Nearest-PSD repair by eigenvalue clipping at `floor`, followed by
/// rescaling to unit diagonal. A matrix whose smallest eigenvalue is already
/// at least `floor / 2` is returned unchanged, which makes the repair
/// idempotent.
pub fn repair_psd(matrix: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let mut current = matrix.clone();
    // Rescaling can pull the smallest eigenvalue back under the floor once;
    // a second clip lands within a factor (1 + floor) of it.
    for _ in 0..4 {
        if is_repaired(&current, floor) {
            break;
        }
        current = clip_and_rescale(&current, floor);
    }
    current
}

pub fn fit_copula(train: &DataTable, seed: u64) -> Result<CopulaModel, SynthesisError> {
    fit_copula_with(train, seed, CopulaOptions::default())
}

pub fn fit_copula_with(train: &DataTable, seed: u64, options: CopulaOptions) -> Result<CopulaModel, SynthesisError> {
    let n = train.len();
    let schema = train.schema();
    if n < 2 || schema.columns().is_empty() {
        return Err(SynthesisError::TooFewRows(n));
    }
    let normal = standard_normal();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut marginals = Vec::with_capacity(schema.columns().len());
    let mut latent = Vec::with_capacity(schema.columns().len());

    for (index, spec) in schema.columns().iter().enumerate() {
        match spec.kind {
            ColumnKind::Numeric => {
                let values: Vec<f64> = train.rows().iter().map(|r| r[index].as_num().expect("numeric")).collect();
                let uniforms = mid_rank_uniforms(&values);
                latent.push(uniforms.iter().map(|&u| normal.inverse_cdf(u)).collect());
                let mut sorted = values;
                sorted.sort_by(f64::total_cmp);
                marginals.push(Marginal::Numeric { sorted });
            }
            ColumnKind::Categorical => {
                let mut counts = vec![0usize; spec.categories.len()];
                for row in train.rows() {
                    counts[row[index].as_cat().expect("categorical") as usize] += 1;
                }
                let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
                let mut upper = Vec::with_capacity(counts.len());
                let mut running = 0usize;
                for &c in &counts {
                    running += c;
                    upper.push(running as f64 / n as f64);
                }
                let marginal = Marginal::Categorical { frequencies, upper };
                let column = train
                    .rows()
                    .iter()
                    .map(|row| {
                        let (lo, hi) = marginal.interval(row[index].as_cat().expect("categorical") as usize);
                        let u = if options.categorical_jitter {
                            lo + rng.random::<f64>() * (hi - lo)
                        } else {
                            0.5 * (lo + hi)
                        };
                        normal.inverse_cdf(u.clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP))
                    })
                    .collect();
                latent.push(column);
                marginals.push(marginal);
            }
        }
    }

    let correlation = repair_psd(&pearson_matrix(&latent), EIGEN_FLOOR);
    let d = correlation.nrows();
    let latent_correlation = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| correlation[(i, j)]).collect();
    Ok(CopulaModel { columns: schema.columns().iter().map(|c| c.name.clone()).collect(), marginals, latent_correlation })
}

/// Lower-triangular factor `L` with `L Lᵀ = R`; falls back to an
/// eigen-decomposition factor when Cholesky fails numerically.
fn correlation_factor(model: &CopulaModel) -> DMatrix<f64> {
    let corr = model.correlation_matrix();
    if let Some(chol) = corr.clone().cholesky() {
        return chol.l();
    }
    let eig = SymmetricEigen::new(corr);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Draws `n` rows. The table carries `train`'s schema (the model does not
/// store category names) and row ids `0..n`.
pub fn sample_copula(model: &CopulaModel, train: &DataTable, n: usize, seed: u64) -> Result<SynthesisResult, SynthesisError> {
    let schema = train.schema_arc();
    if schema.columns().len() != model.dims()
        || schema.columns().iter().zip(&model.columns).any(|(c, name)| &c.name != name)
    {
        return Err(SynthesisError::ModelSchemaMismatch);
    }
    let d = model.dims();
    let factor = correlation_factor(model);
    let normal = standard_normal();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut noise = nalgebra::DVector::zeros(d);
    for _ in 0..n {
        for x in noise.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let z = &factor * &noise;
        let row = model.marginals.iter().zip(z.iter()).map(|(m, &zi)| m.quantile(normal.cdf(zi))).collect();
        rows.push(row);
    }
    let table = DataTable::from_rows(std::sync::Arc::clone(schema), rows)?;
    Ok(SynthesisResult { table, rows_requested: n, model_fingerprint: model.fingerprint(), log: String::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{ColumnSpec, Role, Schema};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn numeric_schema(names: &[&str]) -> Arc<Schema> {
        let mut cols: Vec<ColumnSpec> = names.iter().map(|n| ColumnSpec::numeric(*n)).collect();
        cols.push(ColumnSpec::categorical("y", ["no", "yes"]).with_role(Role::Label));
        Arc::new(Schema::new(cols, "y", "yes", BTreeMap::new()).unwrap())
    }

    fn numeric_table(columns: &[Vec<f64>], labels: &[u32]) -> DataTable {
        let names: Vec<String> = (0..columns.len()).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let rows = (0..labels.len())
            .map(|r| {
                let mut row: Vec<Value> = columns.iter().map(|c| Value::Num(c[r])).collect();
                row.push(Value::Cat(labels[r]));
                row
            })
            .collect();
        DataTable::from_rows(numeric_schema(&refs), rows).unwrap()
    }

    fn uniform_column(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| lo + rng.random::<f64>() * (hi - lo)).collect()
    }

    fn alternating(n: usize) -> Vec<u32> {
        (0..n).map(|i| (i % 2) as u32).collect()
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let m = pearson_matrix(&[a.to_vec(), b.to_vec()]);
        m[(0, 1)]
    }

    #[test]
    fn mid_ranks_average_ties() {
        assert_eq!(mid_rank_uniforms(&[3.0, 1.0, 2.0, 2.0]), vec![0.875, 0.125, 0.5, 0.5]);
        assert_eq!(mid_rank_uniforms(&[7.0, 7.0, 7.0]), vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn duplicated_column_has_unit_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = uniform_column(&mut rng, 500, 0.0, 1.0);
        let model = fit_copula(&numeric_table(&[x.clone(), x], &alternating(500)), 0).unwrap();
        assert_abs_diff_eq!(model.correlation(0, 1), 1.0, epsilon = 1e-6);
        assert_eq!(model.correlation(0, 0), 1.0);
    }

    #[test]
    fn independent_columns_are_nearly_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = uniform_column(&mut rng, 10_000, 0.0, 1.0);
        let b = uniform_column(&mut rng, 10_000, 0.0, 1.0);
        let model = fit_copula(&numeric_table(&[a, b], &alternating(10_000)), 0).unwrap();
        assert!(model.correlation(0, 1).abs() < 0.05);
    }

    #[test]
    fn constant_categorical_column() {
        let schema = Arc::new(
            Schema::new(
                vec![
                    ColumnSpec::numeric("x"),
                    ColumnSpec::categorical("c", ["a", "b"]),
                    ColumnSpec::categorical("y", ["no", "yes"]).with_role(Role::Label),
                ],
                "y",
                "yes",
                BTreeMap::new(),
            )
            .unwrap(),
        );
        let rows = (0..50).map(|i| vec![Value::Num(i as f64), Value::Cat(1), Value::Cat((i % 2) as u32)]).collect();
        let table = DataTable::from_rows(schema, rows).unwrap();
        let model = fit_copula(&table, 0).unwrap();
        assert_eq!(model.marginals[1], Marginal::Categorical { frequencies: vec![0.0, 1.0], upper: vec![0.0, 1.0] });
        assert_eq!(model.marginals[1].interval(1), (0.0, 1.0));
        assert_eq!(model.correlation(0, 1), 0.0);
        assert_eq!(model.correlation(1, 2), 0.0);
        let sample = sample_copula(&model, &table, 200, 3).unwrap();
        assert!(sample.table.rows().iter().all(|r| r[1] == Value::Cat(1)));
    }

    #[test]
    fn too_few_rows() {
        let t = numeric_table(&[vec![1.0]], &[0]);
        assert!(matches!(fit_copula(&t, 0), Err(SynthesisError::TooFewRows(1))));
    }

    #[test]
    fn constant_numeric_column_samples_constant() {
        let t = numeric_table(&[vec![4.5; 20]], &alternating(20));
        let model = fit_copula(&t, 0).unwrap();
        let s = sample_copula(&model, &t, 100, 9).unwrap();
        assert!(s.table.rows().iter().all(|r| r[0] == Value::Num(4.5)));
    }

    #[test]
    fn samples_stay_in_empirical_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = uniform_column(&mut rng, 1000, 10.0, 90.0);
        x[0] = 10.0;
        x[1] = 90.0;
        let t = numeric_table(&[x], &alternating(1000));
        let s = sample_copula(&fit_copula(&t, 0).unwrap(), &t, 5000, 4).unwrap();
        assert_eq!(s.table.len(), 5000);
        assert!(s.table.rows().iter().all(|r| (10.0..=90.0).contains(&r[0].as_num().unwrap())));
    }

    /// Monte-Carlo check: perfectly correlated inputs stay correlated.
    #[test]
    fn correlated_columns_stay_correlated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = uniform_column(&mut rng, 2000, 0.0, 1.0);
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x + 1.0).collect();
        let t = numeric_table(&[a, b], &alternating(2000));
        let s = sample_copula(&fit_copula(&t, 0).unwrap(), &t, 5000, 6).unwrap();
        let xs: Vec<f64> = s.table.rows().iter().map(|r| r[0].as_num().unwrap()).collect();
        let ys: Vec<f64> = s.table.rows().iter().map(|r| r[1].as_num().unwrap()).collect();
        assert!(pearson(&xs, &ys) > 0.95);
    }

    #[test]
    fn fit_and_sample_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = numeric_table(&[uniform_column(&mut rng, 300, 0.0, 5.0), uniform_column(&mut rng, 300, -1.0, 1.0)], &alternating(300));
        let a = sample_copula(&fit_copula(&t, 1).unwrap(), &t, 400, 2).unwrap();
        let b = sample_copula(&fit_copula(&t, 1).unwrap(), &t, 400, 2).unwrap();
        assert_eq!(a.table.to_csv_bytes(), b.table.to_csv_bytes());
        assert_eq!(a.model_fingerprint, b.model_fingerprint);
        let c = sample_copula(&fit_copula(&t, 1).unwrap(), &t, 400, 3).unwrap();
        assert_ne!(a.table.to_csv_bytes(), c.table.to_csv_bytes());
    }

    #[test]
    fn jitter_changes_latents_but_not_marginals() {
        let schema = Arc::new(
            Schema::new(
                vec![ColumnSpec::categorical("c", ["a", "b", "c"]), ColumnSpec::categorical("y", ["no", "yes"]).with_role(Role::Label)],
                "y",
                "yes",
                BTreeMap::new(),
            )
            .unwrap(),
        );
        let rows = (0..90).map(|i| vec![Value::Cat((i % 3) as u32), Value::Cat(u32::from(i % 3 == 0))]).collect();
        let t = DataTable::from_rows(schema, rows).unwrap();
        let plain = fit_copula(&t, 0).unwrap();
        let jittered = fit_copula_with(&t, 0, CopulaOptions { categorical_jitter: true }).unwrap();
        assert_eq!(plain.marginals, jittered.marginals);
        assert_ne!(plain.latent_correlation, jittered.latent_correlation);
    }

    #[test]
    fn repair_fixes_indefinite_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        assert!(SymmetricEigen::new(m.clone()).eigenvalues.min() < 0.0);
        let fixed = repair_psd(&m, EIGEN_FLOOR);
        assert!(SymmetricEigen::new(fixed.clone()).eigenvalues.min() >= EIGEN_FLOOR / 2.0);
        for i in 0..3 {
            assert_eq!(fixed[(i, i)], 1.0);
        }
        assert_eq!(repair_psd(&fixed, EIGEN_FLOOR), fixed);
    }

    proptest! {
        #[test]
        fn repair_leaves_valid_correlations_alone(entries in prop::collection::vec(-1.0f64..1.0, 16)) {
            // Gram matrix of random 4-vectors, normalised: a valid correlation matrix.
            let v = DMatrix::from_row_slice(4, 4, &entries) + DMatrix::from_fn(4, 4, |i, j| if i == j { 1.5 } else { 0.0 });
            let gram = &v * v.transpose();
            let d: Vec<f64> = (0..4).map(|i| gram[(i, i)].sqrt()).collect();
            let corr = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { gram[(i, j)] / (d[i] * d[j]) });
            let min_eig = SymmetricEigen::new(corr.clone()).eigenvalues.min();
            prop_assume!(min_eig >= EIGEN_FLOOR);
            let repaired = repair_psd(&corr, EIGEN_FLOOR);
            prop_assert_eq!((&repaired - &corr).norm(), 0.0);
        }

        #[test]
        fn repair_is_idempotent(entries in prop::collection::vec(-1.0f64..1.0, 6)) {
            let m = DMatrix::from_fn(4, 4, |i, j| match i.cmp(&j) {
                std::cmp::Ordering::Equal => 1.0,
                std::cmp::Ordering::Less => entries[i * (7 - i) / 2 + j - i - 1],
                std::cmp::Ordering::Greater => entries[j * (7 - j) / 2 + i - j - 1],
            });
            let once = repair_psd(&m, EIGEN_FLOOR);
            prop_assert!(SymmetricEigen::new(once.clone()).eigenvalues.min() >= EIGEN_FLOOR / 2.0);
            prop_assert_eq!(repair_psd(&once, EIGEN_FLOOR), once);
        }
    }
}
