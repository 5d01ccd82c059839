//! Balanced accuracy, demographic parity ratio and equalized odds ratio,
//! per protected attribute and over the intersectional subgroup lattice.
//!
//! Both ratios are `min / max` of a rate over subgroups. The equalized odds
//! ratio takes that min and max jointly over every (subgroup, true label)
//! cell, so it mixes true- and false-positive rates in one ratio; the more
//! common per-label variant is available as [`EoddrVariant::Standard`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::table::DataTable;

#[derive(Debug, thiserror::Error)]
pub enum FairnessError {
    #[error("ground truth contains a single class")]
    SingleClassTruth,
    #[error("need at least two included subgroups, got {0}")]
    TooFewSubgroups(usize),
    #[error("rate undefined for subgroup {subgroup} with true label {y}")]
    UndefinedRate { subgroup: String, y: u8 },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("attribute list is empty")]
    NoAttributes,
    #[error(transparent)]
    Table(#[from] crate::table::TableError),
}

/// Ordered (protected column, value) pairs identifying a subgroup.
pub type SubgroupKey = Vec<(String, String)>;

pub fn key_label(key: &SubgroupKey) -> String {
    key.iter().map(|(c, v)| format!("{c}={v}")).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    LowSupport,
    /// Kept for the parity ratio but dropped from equalized odds because one
    /// true-label cell is empty.
    UndefinedRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedSubgroup {
    pub key: SubgroupKey,
    pub n: usize,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupStats {
    pub key: SubgroupKey,
    pub n: usize,
    /// P(Ŷ = favourable | subgroup)
    pub positive_rate: Option<f64>,
    /// P(Ŷ = favourable | subgroup, Y = favourable)
    pub tpr: Option<f64>,
    /// P(Ŷ = favourable | subgroup, Y = unfavourable)
    pub fpr: Option<f64>,
    pub support_favourable: usize,
    pub support_unfavourable: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EoddrVariant {
    /// Joint min/max over all (subgroup, y) cells.
    #[default]
    Paper,
    /// min(TPR ratio, FPR ratio), each ratio min/max over subgroups.
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPair {
    pub dpr: f64,
    pub eoddr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub bca: f64,
    pub per_attribute: BTreeMap<String, RatioPair>,
    pub intersectional: RatioPair,
    pub attributes: Vec<String>,
    pub subgroups: Vec<SubgroupStats>,
    pub excluded: Vec<ExcludedSubgroup>,
    /// No favourable prediction at all: every ratio reads 1.0 by convention.
    pub all_negative_predictions: bool,
}

fn ratio(min: f64, max: f64) -> f64 {
    if max == 0.0 {
        1.0
    } else {
        min / max
    }
}

fn min_max(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values.into_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn balanced_accuracy(y_true: &[bool], y_pred: &[bool]) -> Result<f64, FairnessError> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(FairnessError::LengthMismatch(format!("{} truths vs {} predictions", y_true.len(), y_pred.len())));
    }
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t {
            pos += 1;
            tp += usize::from(p);
        } else {
            neg += 1;
            tn += usize::from(!p);
        }
    }
    if pos == 0 || neg == 0 {
        return Err(FairnessError::SingleClassTruth);
    }
    Ok((tp as f64 / pos as f64 + tn as f64 / neg as f64) / 2.0)
}

/// Subgroup partition of the evaluation table.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupPlan {
    pub attributes: Vec<String>,
    pub included: Vec<SubgroupKey>,
    pub excluded: Vec<ExcludedSubgroup>,
    /// Subgroup key of every table row, by position.
    pub membership: Vec<SubgroupKey>,
}

/// Cartesian product of the values each attribute takes in `table`.
/// Cells with fewer than `min_support` rows are excluded as low support.
pub fn build_subgroups(table: &DataTable, attributes: &[String], min_support: usize) -> Result<SubgroupPlan, FairnessError> {
    if attributes.is_empty() {
        return Err(FairnessError::NoAttributes);
    }
    let schema = table.schema();
    let indices = attributes.iter().map(|a| schema.protected_index(a)).collect::<Result<Vec<_>, _>>()?;

    let mut observed: Vec<Vec<u32>> = vec![Vec::new(); indices.len()];
    let mut counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    let mut membership_codes = Vec::with_capacity(table.len());
    for pos in 0..table.len() {
        let code: Vec<u32> = indices.iter().map(|&c| table.category_of(pos, c)).collect();
        for (values, &v) in observed.iter_mut().zip(&code) {
            if let Err(at) = values.binary_search(&v) {
                values.insert(at, v);
            }
        }
        *counts.entry(code.clone()).or_default() += 1;
        membership_codes.push(code);
    }

    let to_key = |code: &[u32]| -> SubgroupKey {
        indices
            .iter()
            .zip(code)
            .map(|(&c, &v)| (schema.column(c).name.clone(), schema.column(c).categories[v as usize].clone()))
            .collect()
    };

    let mut included = Vec::new();
    let mut excluded = Vec::new();
    let mut code = vec![0usize; indices.len()];
    if observed.iter().all(|v| !v.is_empty()) {
        loop {
            let values: Vec<u32> = code.iter().zip(&observed).map(|(&i, vals)| vals[i]).collect();
            let n = counts.get(&values).copied().unwrap_or(0);
            let key = to_key(&values);
            if n < min_support.max(1) {
                excluded.push(ExcludedSubgroup { key, n, reason: ExclusionReason::LowSupport });
            } else {
                included.push(key);
            }
            // odometer over the observed values, last attribute fastest
            let mut d = indices.len();
            loop {
                if d == 0 {
                    break;
                }
                d -= 1;
                code[d] += 1;
                if code[d] < observed[d].len() {
                    break;
                }
                code[d] = 0;
                if d == 0 {
                    d = usize::MAX;
                    break;
                }
            }
            if d == usize::MAX {
                break;
            }
        }
    }
    let membership = membership_codes.iter().map(|c| to_key(c)).collect();
    Ok(SubgroupPlan { attributes: attributes.to_vec(), included, excluded, membership })
}

/// Rates for every subgroup in `keys`, computed from row memberships.
pub fn subgroup_stats(y_true: &[bool], y_pred: &[bool], membership: &[SubgroupKey], keys: &[SubgroupKey]) -> Vec<SubgroupStats> {
    // (n, predicted favourable, fav support, tp, unfav support, fp)
    let mut tally: BTreeMap<&SubgroupKey, [usize; 6]> = keys.iter().map(|k| (k, [0; 6])).collect();
    for ((key, &t), &p) in membership.iter().zip(y_true).zip(y_pred) {
        if let Some(c) = tally.get_mut(key) {
            c[0] += 1;
            c[1] += usize::from(p);
            if t {
                c[2] += 1;
                c[3] += usize::from(p);
            } else {
                c[4] += 1;
                c[5] += usize::from(p);
            }
        }
    }
    let rate = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    keys.iter()
        .map(|key| {
            let c = tally[key];
            SubgroupStats {
                key: key.clone(),
                n: c[0],
                positive_rate: rate(c[1], c[0]),
                tpr: rate(c[3], c[2]),
                fpr: rate(c[5], c[4]),
                support_favourable: c[2],
                support_unfavourable: c[4],
            }
        })
        .collect()
}

pub fn demographic_parity_ratio(stats: &[SubgroupStats]) -> Result<f64, FairnessError> {
    let rates: Vec<f64> = stats.iter().filter_map(|s| s.positive_rate).collect();
    if rates.len() < 2 {
        return Err(FairnessError::TooFewSubgroups(rates.len()));
    }
    let (lo, hi) = min_max(rates);
    Ok(ratio(lo, hi))
}

pub fn equalized_odds_ratio(stats: &[SubgroupStats], variant: EoddrVariant) -> Result<f64, FairnessError> {
    if stats.len() < 2 {
        return Err(FairnessError::TooFewSubgroups(stats.len()));
    }
    let mut tprs = Vec::with_capacity(stats.len());
    let mut fprs = Vec::with_capacity(stats.len());
    for s in stats {
        let undefined = |y| FairnessError::UndefinedRate { subgroup: key_label(&s.key), y };
        tprs.push(s.tpr.ok_or_else(|| undefined(1))?);
        fprs.push(s.fpr.ok_or_else(|| undefined(0))?);
    }
    Ok(match variant {
        EoddrVariant::Paper => {
            let (lo, hi) = min_max(tprs.iter().chain(&fprs).copied());
            ratio(lo, hi)
        }
        EoddrVariant::Standard => {
            let (tlo, thi) = min_max(tprs);
            let (flo, fhi) = min_max(fprs);
            ratio(tlo, thi).min(ratio(flo, fhi))
        }
    })
}

/// DPR and EOddR over one subgroup plan. Subgroups lacking one of the two
/// true-label cells are left out of EOddR and reported as excluded.
fn ratios_for(
    y_true: &[bool],
    y_pred: &[bool],
    plan: &SubgroupPlan,
    variant: EoddrVariant,
) -> Result<(RatioPair, Vec<SubgroupStats>, Vec<ExcludedSubgroup>), FairnessError> {
    let stats = subgroup_stats(y_true, y_pred, &plan.membership, &plan.included);
    let dpr = demographic_parity_ratio(&stats)?;
    let mut excluded = plan.excluded.clone();
    let complete: Vec<SubgroupStats> = stats
        .iter()
        .filter(|s| {
            let ok = s.tpr.is_some() && s.fpr.is_some();
            if !ok {
                excluded.push(ExcludedSubgroup { key: s.key.clone(), n: s.n, reason: ExclusionReason::UndefinedRate });
            }
            ok
        })
        .cloned()
        .collect();
    let eoddr = equalized_odds_ratio(&complete, variant)?;
    Ok((RatioPair { dpr, eoddr }, stats, excluded))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationOptions {
    pub min_support: usize,
    pub eoddr_variant: EoddrVariant,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self { min_support: 10, eoddr_variant: EoddrVariant::Paper }
    }
}

pub fn evaluate(
    y_true: &[bool],
    y_pred: &[bool],
    test: &DataTable,
    protected: &[String],
    options: &EvaluationOptions,
) -> Result<FairnessReport, FairnessError> {
    if y_true.len() != test.len() || y_pred.len() != test.len() {
        return Err(FairnessError::LengthMismatch(format!(
            "{} truths, {} predictions, {} test rows",
            y_true.len(),
            y_pred.len(),
            test.len()
        )));
    }
    if protected.is_empty() {
        return Err(FairnessError::NoAttributes);
    }
    let bca = balanced_accuracy(y_true, y_pred)?;
    let mut per_attribute = BTreeMap::new();
    let mut subgroups = Vec::new();
    let mut excluded = Vec::new();
    for attribute in protected {
        let plan = build_subgroups(test, std::slice::from_ref(attribute), options.min_support)?;
        let (pair, stats, ex) = ratios_for(y_true, y_pred, &plan, options.eoddr_variant)?;
        per_attribute.insert(attribute.clone(), pair);
        subgroups.extend(stats);
        excluded.extend(ex);
    }
    let intersectional = if protected.len() == 1 {
        per_attribute[&protected[0]]
    } else {
        let plan = build_subgroups(test, protected, options.min_support)?;
        let (pair, stats, ex) = ratios_for(y_true, y_pred, &plan, options.eoddr_variant)?;
        subgroups.extend(stats);
        excluded.extend(ex);
        pair
    };
    Ok(FairnessReport {
        bca,
        per_attribute,
        intersectional,
        attributes: protected.to_vec(),
        subgroups,
        excluded,
        all_negative_predictions: !y_pred.iter().any(|&p| p),
    })
}
