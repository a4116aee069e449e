//! Clustering and estimation metrics.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{CrlError, Result};
use crate::model::Dataset;

/// Contingency table between two labelings, with labels mapped to dense
/// indices in order of first appearance.
fn contingency(truth: &[usize], pred: &[usize]) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(CrlError::Structural(format!(
            "label vectors differ in length ({} vs {})",
            truth.len(),
            pred.len()
        )));
    }
    let dense = |labels: &[usize]| {
        let mut map = HashMap::new();
        let idx: Vec<usize> = labels
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        (idx, map.len())
    };
    let (t, kt) = dense(truth);
    let (p, kp) = dense(pred);
    let mut table = vec![vec![0u64; kp]; kt];
    for (a, b) in t.into_iter().zip(p) {
        table[a][b] += 1;
    }
    Ok(table)
}

/// Fraction of points matched under the best one-to-one map between
/// predicted and true labels. Differing cluster counts are handled by
/// zero-padding the confusion matrix to a square.
pub fn clustering_accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let table = contingency(truth, pred)?;
    if truth.is_empty() {
        return Ok(1.0);
    }
    let k = table.len().max(table[0].len());
    let mut w = Matrix::new_square(k, 0i64);
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            w[(i, j)] = c as i64;
        }
    }
    let (matched, _) = kuhn_munkres(&w);
    Ok(matched as f64 / truth.len() as f64)
}

fn choose2(n: u64) -> f64 {
    n as f64 * (n as f64 - 1.0) / 2.0
}

/// Share of point pairs on which the two partitions agree.
pub fn rand_index(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let table = contingency(truth, pred)?;
    let n = truth.len() as u64;
    if n < 2 {
        return Err(CrlError::Domain("Rand index needs at least two points".into()));
    }
    let same_both: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let same_truth: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let kp = table[0].len();
    let same_pred: f64 = (0..kp).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let total = choose2(n);
    let agree = total + 2.0 * same_both - same_truth - same_pred;
    Ok(agree / total)
}

fn entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the geometric mean of the entropies.
/// Two single-cluster partitions score 1; a single-cluster partition against
/// a split one scores 0.
pub fn nmi(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let table = contingency(truth, pred)?;
    if truth.is_empty() {
        return Ok(1.0);
    }
    let n = truth.len() as f64;
    let rows: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..table[0].len()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let ht = entropy(rows.iter().copied(), n);
    let hp = entropy(cols.iter().copied(), n);
    if ht == 0.0 && hp == 0.0 {
        return Ok(1.0);
    }
    if ht == 0.0 || hp == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (n * c / (rows[i] as f64 * cols[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (ht * hp).sqrt()).clamp(0.0, 1.0))
}

/// `‖Y* − B̂‖²_F / (mn)`.
pub fn approx_mse(y_star: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<f64> {
    if y_star.shape() != b_hat.shape() {
        return Err(CrlError::Structural("matrices differ in shape".into()));
    }
    if y_star.is_empty() {
        return Ok(0.0);
    }
    Ok((y_star - b_hat).norm_squared() / y_star.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    /// `‖Y − (1αᵀ + XB̂)‖²_F / n`, minus `m` when centering is requested.
    pub err_p: f64,
    /// `‖B̂ − B*‖²_F` when the truth is known.
    pub err_e: Option<f64>,
}

/// Test-set prediction error and, given `B*`, estimation error. Subtracting
/// `m` centers `err_p` at zero only when the noise has unit variance.
pub fn prediction_error(
    test: &Dataset,
    b_hat: &DMatrix<f64>,
    alpha: &DVector<f64>,
    b_star: Option<&DMatrix<f64>>,
    subtract_m: bool,
) -> Result<PredictionError> {
    if b_hat.shape() != test.coef_shape() || alpha.len() != test.m() {
        return Err(CrlError::Structural("coefficients do not match the test design".into()));
    }
    let resid = &test.y - test.linear_predictor(b_hat, alpha);
    let mut err_p = resid.norm_squared() / test.n() as f64;
    if subtract_m {
        err_p -= test.m() as f64;
    }
    let err_e = match b_star {
        Some(b) if b.shape() != b_hat.shape() => {
            return Err(CrlError::Structural("true coefficients differ in shape".into()))
        }
        Some(b) => Some((b_hat - b).norm_squared()),
        None => None,
    };
    Ok(PredictionError { err_p, err_e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Best accuracy over all label permutations (k ≤ 4).
    fn accuracy_by_permutation(truth: &[usize], pred: &[usize], k: usize) -> f64 {
        fn perms(k: usize) -> Vec<Vec<usize>> {
            if k == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(k - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, k - 1);
                    out.push(q);
                }
            }
            out
        }
        perms(k)
            .into_iter()
            .map(|perm| truth.iter().zip(pred).filter(|(t, p)| perm[**p] == **t).count())
            .max()
            .unwrap() as f64
            / truth.len() as f64
    }

    fn rand_by_pairs(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let mut agree = 0;
        let mut total = 0;
        for i in 0..n {
            for j in i + 1..n {
                total += 1;
                if (a[i] == a[j]) == (b[i] == b[j]) {
                    agree += 1;
                }
            }
        }
        agree as f64 / total as f64
    }

    #[test]
    fn accuracy_examples() {
        let t = [1, 1, 2, 2];
        assert_eq!(clustering_accuracy(&t, &t).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&t, &[7, 7, 3, 3]).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&t, &[1, 2, 2, 2]).unwrap(), 0.75);
        // more predicted clusters than true ones
        assert_eq!(clustering_accuracy(&[0, 0, 0, 1], &[0, 1, 2, 3]).unwrap(), 0.5);
    }

    #[test]
    fn rand_examples() {
        let t = [0, 0, 1, 1, 2];
        assert_eq!(rand_index(&t, &t).unwrap(), 1.0);
        assert_eq!(rand_index(&[1, 1, 1], &[1, 2, 3]).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<usize> = (0..20).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<usize> = (0..20).map(|_| rng.random_range(0..4)).collect();
        assert!((rand_index(&a, &b).unwrap() - rand_by_pairs(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn nmi_examples() {
        let t = [0, 0, 1, 1];
        assert!((nmi(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!((nmi(&t, &[5, 5, 9, 9]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 0], &[0, 1, 1]).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..5)).collect();
        let b: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..5)).collect();
        assert!(nmi(&a, &b).unwrap() <= 0.05);
    }

    #[test]
    fn mse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(approx_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(approx_mse(&a, &a.add_scalar(1.0)).unwrap(), 1.0);
        let b = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                acc += (a[(i, j)] - b[(i, j)]).powi(2);
            }
        }
        assert!((approx_mse(&a, &b).unwrap() - acc / 12.0).abs() < 1e-14);
        assert!(approx_mse(&a, &DMatrix::zeros(3, 4)).is_err());
    }

    #[test]
    fn prediction_error_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, p, m) = (10_000, 5, 25);
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let b = DMatrix::from_fn(p, m, |_, _| StandardNormal.sample(&mut rng));
        let noise = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
        let d = Dataset::new(&x * &b + noise, x.clone(), LossKind::Quadratic).unwrap();
        let e = prediction_error(&d, &b, &DVector::zeros(m), Some(&b), true).unwrap();
        assert!(e.err_p.abs() <= 0.5);
        assert_eq!(e.err_e, Some(0.0));

        let d = Dataset::new(&x * &b, x, LossKind::Quadratic).unwrap();
        let e = prediction_error(&d, &b, &DVector::zeros(m), None, true).unwrap();
        assert!((e.err_p + m as f64).abs() < 1e-9);
        let e = prediction_error(&d, &b, &DVector::zeros(m), None, false).unwrap();
        assert!(e.err_p.abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn accuracy_matches_permutation_search(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(1..5);
            let n = rng.random_range(1..30);
            let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let ca = clustering_accuracy(&t, &p).unwrap();
            prop_assert!((ca - accuracy_by_permutation(&t, &p, k)).abs() < 1e-12);

            // baseline and relabeling invariance
            let mut freq = vec![0usize; k];
            t.iter().for_each(|&l| freq[l] += 1);
            let baseline = *freq.iter().max().unwrap() as f64 / n as f64;
            prop_assert!((clustering_accuracy(&t, &vec![0; n]).unwrap() - baseline).abs() < 1e-12);
            let shifted: Vec<usize> = p.iter().map(|&l| (l + 3) * 11).collect();
            prop_assert_eq!(clustering_accuracy(&t, &shifted).unwrap(), ca);
        }

        #[test]
        fn symmetric_measures(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..40);
            let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            prop_assert!((rand_index(&a, &b).unwrap() - rand_index(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((nmi(&a, &b).unwrap() - nmi(&b, &a).unwrap()).abs() < 1e-12);
            let v = nmi(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
