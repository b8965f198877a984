//! Inter-annotator agreement and rank correlation.

use num_traits::{FromPrimitive, Num};

use crate::error::{Error, Result};
use crate::records::AnnotationRecord;

pub const LABELS_PER_RECORD: usize = 3;

/// Closed label set for a task name.
pub fn task_labels(task: &str) -> Option<&'static [&'static str]> {
    match task {
        "formality" => Some(&["first", "second", "equal"]),
        "similarity" => Some(&["1", "2", "3"]),
        _ => None,
    }
}

/// Per-record category counts, validated against the task's label set.
/// All records must share one task.
pub fn count_table(records: &[AnnotationRecord]) -> Result<Vec<Vec<usize>>> {
    if records.len() < 2 {
        return Err(Error::Eval(format!("agreement needs at least 2 records, got {}", records.len())));
    }
    let task = &records[0].task;
    let labels = task_labels(task).ok_or_else(|| Error::Eval(format!("unknown annotation task `{task}`")))?;
    records
        .iter()
        .map(|r| {
            if &r.task != task {
                return Err(Error::Eval(format!("record {} has task `{}`, expected `{task}`", r.id, r.task)));
            }
            if r.labels.len() != LABELS_PER_RECORD {
                return Err(Error::Eval(format!("record {} has {} labels, expected {LABELS_PER_RECORD}", r.id, r.labels.len())));
            }
            let mut row = vec![0usize; labels.len()];
            for l in &r.labels {
                let j = labels.iter().position(|c| c == l).ok_or_else(|| Error::Eval(format!("record {}: label `{l}` not in {labels:?}", r.id)))?;
                row[j] += 1;
            }
            Ok(row)
        })
        .collect()
}

fn from_usize<T: FromPrimitive>(v: usize) -> T {
    T::from_usize(v).expect("count fits the numeric type")
}

/// Mean observed agreement `P̄` and category marginals `p_j`.
fn observed<T: Num + Clone + FromPrimitive>(table: &[Vec<usize>]) -> (T, Vec<T>) {
    let n = LABELS_PER_RECORD;
    let rows = table.len();
    let k = table[0].len();
    let mut p_bar = T::zero();
    let mut totals = vec![0usize; k];
    for row in table {
        let sq: usize = row.iter().map(|c| c * c).sum();
        p_bar = p_bar + from_usize::<T>(sq - n) / from_usize::<T>(n * (n - 1));
        for (t, c) in totals.iter_mut().zip(row) {
            *t += c;
        }
    }
    let p_bar = p_bar / from_usize::<T>(rows);
    let marg = totals.iter().map(|&t| from_usize::<T>(t) / from_usize::<T>(rows * n)).collect();
    (p_bar, marg)
}

fn kappa<T: Num + Clone>(p_bar: T, p_e: T) -> T {
    if p_e == T::one() {
        // Every label in one category: observed agreement is perfect.
        return T::one();
    }
    (p_bar - p_e.clone()) / (T::one() - p_e)
}

/// Fixed-marginal chance-corrected agreement over a count table.
pub fn fleiss_kappa_table<T: Num + Clone + FromPrimitive>(table: &[Vec<usize>]) -> T {
    let (p_bar, marg) = observed::<T>(table);
    let p_e = marg.into_iter().fold(T::zero(), |acc, p| acc + p.clone() * p);
    kappa(p_bar, p_e)
}

/// Free-marginal chance-corrected agreement over a count table.
pub fn randolph_kappa_table<T: Num + Clone + FromPrimitive>(table: &[Vec<usize>]) -> T {
    let (p_bar, _) = observed::<T>(table);
    let p_e = T::one() / from_usize::<T>(table[0].len());
    kappa(p_bar, p_e)
}

pub fn fleiss_kappa<T: Num + Clone + FromPrimitive>(records: &[AnnotationRecord]) -> Result<T> {
    Ok(fleiss_kappa_table(&count_table(records)?))
}

pub fn randolph_kappa<T: Num + Clone + FromPrimitive>(records: &[AnnotationRecord]) -> Result<T> {
    Ok(randolph_kappa_table(&count_table(records)?))
}

/// Fractions of records with unanimous labels and with all-distinct labels.
pub fn agreement_fractions<T: Num + Clone + FromPrimitive>(records: &[AnnotationRecord]) -> Result<(T, T)> {
    let table = count_table(records)?;
    let all = table.iter().filter(|r| r.contains(&LABELS_PER_RECORD)).count();
    let none = table.iter().filter(|r| r.iter().all(|&c| c <= 1)).count();
    let n = from_usize::<T>(table.len());
    Ok((from_usize::<T>(all) / n.clone(), from_usize::<T>(none) / n))
}

/// Ranks starting at 1, with tied values sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Eval(format!("spearman needs two equal-length lists of at least 2 values, got {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Eval("spearman inputs must be finite".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Eval("spearman is undefined for a constant input".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}
