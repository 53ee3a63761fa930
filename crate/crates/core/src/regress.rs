//! Weighted least squares with linear and categorical controls.
//!
//! Every regression in the crate goes through [`wls_fit`]. Controls are
//! factored with a column-pivoted Householder QR; the coefficient on the
//! regressor of interest is then read off the part of the regressor that the
//! controls cannot explain (Frisch–Waugh–Lovell). This separates "the
//! regressor has no identifying variation" ([`RegressError::RankDeficient`])
//! from harmless collinearity among the controls, which simply drops columns.

use std::collections::BTreeSet;

use thiserror::Error;

/// Relative cutoff on the pivoted-QR diagonal (after column equilibration)
/// below which a direction is treated as numerically absent.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressError {
    #[error("regressor of interest is collinear with the controls")]
    RankDeficient,
    #[error("need at least {needed} rows with positive weight, found {found}")]
    InsufficientRows { needed: usize, found: usize },
    #[error("column lengths differ: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("weights must be finite and non-negative (row {0})")]
    InvalidWeight(usize),
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("regressor takes {0} distinct values, expected exactly 2")]
    NotBinary(usize),
}

/// Regression of `response` on `regressor`, holding controls fixed.
#[derive(Debug, Clone)]
pub struct RegressionSpec<'a> {
    pub response: &'a [f64],
    pub regressor: &'a [f64],
    pub linear_controls: Vec<&'a [f64]>,
    /// Integer-coded categoricals; the smallest code present is the
    /// reference level.
    pub categorical_controls: Vec<&'a [u32]>,
    pub weights: Option<&'a [f64]>,
    pub include_intercept: bool,
}

impl<'a> RegressionSpec<'a> {
    /// `response ~ 1 + regressor`
    pub fn new(response: &'a [f64], regressor: &'a [f64]) -> Self {
        RegressionSpec {
            response,
            regressor,
            linear_controls: Vec::new(),
            categorical_controls: Vec::new(),
            weights: None,
            include_intercept: true,
        }
    }

    pub fn control(mut self, column: &'a [f64]) -> Self {
        self.linear_controls.push(column);
        self
    }

    pub fn categorical(mut self, codes: &'a [u32]) -> Self {
        self.categorical_controls.push(codes);
        self
    }

    pub fn weights(mut self, w: &'a [f64]) -> Self {
        self.weights = Some(w);
        self
    }

    pub fn without_intercept(mut self) -> Self {
        self.include_intercept = false;
        self
    }
}

/// A column of the expanded design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Regressor,
    Intercept,
    /// Index into `linear_controls`.
    Linear(usize),
    /// Dummy for `level` of categorical `index`.
    Dummy {
        index: usize,
        level: u32,
    },
}

#[derive(Debug, Clone)]
pub struct WlsFit {
    /// Coefficient on the regressor of interest.
    pub coef: f64,
    /// Every design column with its coefficient; `None` marks a control
    /// dropped as collinear.
    pub terms: Vec<(Term, Option<f64>)>,
    /// Rows with positive weight.
    pub n: usize,
    /// Effective rank of the full design.
    pub rank: usize,
}

impl WlsFit {
    pub fn intercept(&self) -> Option<f64> {
        self.term(Term::Intercept)
    }

    pub fn term(&self, t: Term) -> Option<f64> {
        self.terms.iter().find(|(k, _)| *k == t).and_then(|(_, c)| *c)
    }
}

/// Householder QR with column pivoting over column-major storage.
#[derive(Debug)]
struct PivotedQr {
    rows: usize,
    /// Householder vectors, one per accepted step; `v[k]` acts on rows `k..`.
    reflectors: Vec<(Vec<f64>, f64)>,
    /// Upper-triangular factor, `r[j]` holds column j (in pivoted order), length rank.
    r: Vec<Vec<f64>>,
    /// `perm[j]` is the original column index of pivoted column j.
    perm: Vec<usize>,
    /// Column scale factors applied before factoring.
    scale: Vec<f64>,
    rank: usize,
}

impl PivotedQr {
    fn factor(mut cols: Vec<Vec<f64>>, rows: usize) -> Self {
        let p = cols.len();
        let mut scale = vec![0.0; p];
        for (j, c) in cols.iter_mut().enumerate() {
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                scale[j] = 1.0 / norm;
                c.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let mut perm: Vec<usize> = (0..p).collect();
        let mut reflectors = Vec::new();
        let mut first_diag = 0.0;
        let mut rank = 0;
        for k in 0..p.min(rows) {
            // pivot: largest remaining norm on rows k..
            let (best, best_norm) = (k..p)
                .map(|j| (j, cols[j][k..].iter().map(|v| v * v).sum::<f64>()))
                .fold((k, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            let norm = best_norm.sqrt();
            if k == 0 {
                first_diag = norm;
            }
            if norm == 0.0 || norm <= RANK_TOL * first_diag {
                break;
            }
            cols.swap(k, best);
            perm.swap(k, best);

            let col = &cols[k];
            let alpha = if col[k] >= 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = col[k..].to_vec();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            let beta = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
            for c in cols.iter_mut().skip(k) {
                apply_reflector(&v, beta, &mut c[k..]);
            }
            reflectors.push((v, beta));
            rank += 1;
        }
        let r = cols.iter().map(|c| c[..rank.min(c.len())].to_vec()).collect();
        PivotedQr {
            rows,
            reflectors,
            r,
            perm,
            scale,
            rank,
        }
    }

    /// Overwrite `b` with Qᵀb.
    fn apply_qt(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.rows);
        for (k, (v, beta)) in self.reflectors.iter().enumerate() {
            apply_reflector(v, *beta, &mut b[k..]);
        }
    }

    /// Solve R z = rhs[..rank] and map back to original columns; dropped
    /// columns get `None`.
    fn back_substitute(&self, rhs: &[f64]) -> Vec<Option<f64>> {
        let k = self.rank;
        let mut z = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = rhs[i];
            for (j, zj) in z.iter().enumerate().take(k).skip(i + 1) {
                s -= self.r[j][i] * zj;
            }
            z[i] = s / self.r[i][i];
        }
        let mut out = vec![None; self.perm.len()];
        for (j, &orig) in self.perm.iter().enumerate() {
            if j < k {
                out[orig] = Some(z[j] * self.scale[orig]);
            }
        }
        out
    }
}

fn apply_reflector(v: &[f64], beta: f64, x: &mut [f64]) {
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let f = beta * dot;
    if f != 0.0 {
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi -= f * vi;
        }
    }
}

fn check_len(expected: usize, found: usize) -> Result<(), RegressError> {
    if expected == found {
        Ok(())
    } else {
        Err(RegressError::LengthMismatch { expected, found })
    }
}

/// Rows with positive weight, plus their square-root weights.
fn active_rows(n: usize, weights: Option<&[f64]>) -> Result<(Vec<usize>, Vec<f64>), RegressError> {
    match weights {
        None => Ok(((0..n).collect(), vec![1.0; n])),
        Some(w) => {
            check_len(n, w.len())?;
            let mut idx = Vec::with_capacity(n);
            let mut sw = Vec::with_capacity(n);
            for (i, &wi) in w.iter().enumerate() {
                if !wi.is_finite() || wi < 0.0 {
                    return Err(RegressError::InvalidWeight(i));
                }
                if wi > 0.0 {
                    idx.push(i);
                    sw.push(wi.sqrt());
                }
            }
            Ok((idx, sw))
        }
    }
}

/// Weighted least squares fit of `spec.response` on `spec.regressor` and controls.
pub fn wls_fit(spec: &RegressionSpec<'_>) -> Result<WlsFit, RegressError> {
    let n = spec.response.len();
    check_len(n, spec.regressor.len())?;
    for c in &spec.linear_controls {
        check_len(n, c.len())?;
    }
    for c in &spec.categorical_controls {
        check_len(n, c.len())?;
    }
    let (rows, sw) = active_rows(n, spec.weights)?;
    let m = rows.len();
    if m < 2 {
        return Err(RegressError::InsufficientRows { needed: 2, found: m });
    }
    for &i in &rows {
        let bad = !spec.response[i].is_finite()
            || !spec.regressor[i].is_finite()
            || spec.linear_controls.iter().any(|c| !c[i].is_finite());
        if bad {
            return Err(RegressError::NonFinite(i));
        }
    }

    let mut terms = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if spec.include_intercept {
        terms.push(Term::Intercept);
        cols.push(sw.clone());
    }
    for (k, c) in spec.linear_controls.iter().enumerate() {
        terms.push(Term::Linear(k));
        cols.push(rows.iter().zip(&sw).map(|(&i, s)| c[i] * s).collect());
    }
    for (k, codes) in spec.categorical_controls.iter().enumerate() {
        let levels: BTreeSet<u32> = rows.iter().map(|&i| codes[i]).collect();
        for &level in levels.iter().skip(1) {
            terms.push(Term::Dummy { index: k, level });
            cols.push(
                rows.iter()
                    .zip(&sw)
                    .map(|(&i, s)| if codes[i] == level { *s } else { 0.0 })
                    .collect(),
            );
        }
    }

    let mut x: Vec<f64> = rows.iter().zip(&sw).map(|(&i, s)| spec.regressor[i] * s).collect();
    let mut y: Vec<f64> = rows.iter().zip(&sw).map(|(&i, s)| spec.response[i] * s).collect();
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();

    let qr = PivotedQr::factor(cols, m);
    qr.apply_qt(&mut x);
    qr.apply_qt(&mut y);
    let r = qr.rank;
    let rx = &x[r..];
    let ry = &y[r..];
    let rxx: f64 = rx.iter().map(|v| v * v).sum();
    if x_norm == 0.0 || rxx.sqrt() <= RANK_TOL * x_norm {
        return Err(RegressError::RankDeficient);
    }
    let coef = rx.iter().zip(ry).map(|(a, b)| a * b).sum::<f64>() / rxx;

    let rhs: Vec<f64> = y[..r].iter().zip(&x[..r]).map(|(yv, xv)| yv - coef * xv).collect();
    let control_coefs = qr.back_substitute(&rhs);
    let mut out_terms = Vec::with_capacity(terms.len() + 1);
    out_terms.push((Term::Regressor, Some(coef)));
    out_terms.extend(terms.into_iter().zip(control_coefs));

    Ok(WlsFit {
        coef,
        terms: out_terms,
        n: m,
        rank: r + 1,
    })
}

/// Least-squares solution over arbitrary columns (no distinguished
/// regressor). Collinear columns get `None`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefs: Vec<Option<f64>>,
    pub rank: usize,
    pub n: usize,
}

impl LeastSquares {
    /// Fitted value for one row of regressors; dropped columns contribute nothing.
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.coefs.iter().zip(row).map(|(c, v)| c.map_or(0.0, |c| c * v)).sum()
    }
}

pub fn least_squares(
    columns: &[&[f64]],
    response: &[f64],
    weights: Option<&[f64]>,
) -> Result<LeastSquares, RegressError> {
    let n = response.len();
    for c in columns {
        check_len(n, c.len())?;
    }
    let (rows, sw) = active_rows(n, weights)?;
    let m = rows.len();
    if m < columns.len().max(1) {
        return Err(RegressError::InsufficientRows {
            needed: columns.len().max(1),
            found: m,
        });
    }
    let cols: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| rows.iter().zip(&sw).map(|(&i, s)| c[i] * s).collect())
        .collect();
    let mut y: Vec<f64> = rows.iter().zip(&sw).map(|(&i, s)| response[i] * s).collect();
    let qr = PivotedQr::factor(cols, m);
    qr.apply_qt(&mut y);
    let coefs = qr.back_substitute(&y[..qr.rank]);
    Ok(LeastSquares {
        coefs,
        rank: qr.rank,
        n: m,
    })
}

/// Difference-in-means ratio for a regressor with exactly two values:
/// (E[y | x = x₂] − E[y | x = x₁]) / (x₂ − x₁), with optional row weights.
pub fn binary_contrast(y: &[f64], x: &[f64], weights: Option<&[f64]>) -> Result<f64, RegressError> {
    check_len(y.len(), x.len())?;
    let (rows, sw) = active_rows(y.len(), weights)?;
    let mut values: Vec<f64> = Vec::with_capacity(2);
    for &i in &rows {
        if !values.contains(&x[i]) {
            values.push(x[i]);
            if values.len() > 2 {
                let distinct: BTreeSet<u64> = rows.iter().map(|&j| x[j].to_bits()).collect();
                return Err(RegressError::NotBinary(distinct.len()));
            }
        }
    }
    if values.len() != 2 {
        return Err(RegressError::NotBinary(values.len()));
    }
    let (lo, hi) = if values[0] < values[1] {
        (values[0], values[1])
    } else {
        (values[1], values[0])
    };
    let (mut s_lo, mut w_lo, mut s_hi, mut w_hi) = (0.0, 0.0, 0.0, 0.0);
    for (&i, s) in rows.iter().zip(&sw) {
        let w = s * s;
        if x[i] == hi {
            s_hi += w * y[i];
            w_hi += w;
        } else {
            s_lo += w * y[i];
            w_lo += w;
        }
    }
    Ok((s_hi / w_hi - s_lo / w_lo) / (hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_ols() {
        let y = [1.0, 1.0, 3.0, 3.0];
        let x = [0.0, 0.0, 1.0, 1.0];
        let fit = wls_fit(&RegressionSpec::new(&y, &x)).unwrap();
        assert!((fit.coef - 2.0).abs() < 1e-12);
        assert!((fit.intercept().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fit.rank, 2);
    }

    #[test]
    fn exact_linear_fit() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 5.0 * v).collect();
        let fit = wls_fit(&RegressionSpec::new(&y, &x)).unwrap();
        assert!((fit.coef - 5.0).abs() < 1e-12);
        assert!(fit.intercept().unwrap().abs() < 1e-12);
    }

    #[test]
    fn constant_regressor_is_rank_deficient() {
        let y = [1.0, 2.0, 3.0];
        let x = [4.0, 4.0, 4.0];
        assert_eq!(
            wls_fit(&RegressionSpec::new(&y, &x)).unwrap_err(),
            RegressError::RankDeficient
        );
    }

    #[test]
    fn collinear_controls_are_dropped_not_fatal() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let c = [1.0, -1.0, 2.0, 0.5, 0.0, 3.0];
        let c2: Vec<f64> = c.iter().map(|v| 2.0 * v).collect();
        let y: Vec<f64> = x.iter().zip(&c).map(|(a, b)| 1.5 * a - b + 0.25).collect();
        let fit = wls_fit(&RegressionSpec::new(&y, &x).control(&c).control(&c2)).unwrap();
        assert!((fit.coef - 1.5).abs() < 1e-10);
        let dropped = fit.terms.iter().filter(|(_, v)| v.is_none()).count();
        assert_eq!(dropped, 1);
    }

    #[test]
    fn regressor_collinear_with_control() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let c: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let y = [0.3, 0.1, 0.8, 1.0];
        assert_eq!(
            wls_fit(&RegressionSpec::new(&y, &x).control(&c)).unwrap_err(),
            RegressError::RankDeficient
        );
    }

    #[test]
    fn insufficient_rows() {
        let y = [1.0, 2.0];
        let x = [0.0, 1.0];
        let w = [1.0, 0.0];
        assert!(matches!(
            wls_fit(&RegressionSpec::new(&y, &x).weights(&w)),
            Err(RegressError::InsufficientRows { found: 1, .. })
        ));
    }

    #[test]
    fn binary_contrast_examples() {
        assert_eq!(
            binary_contrast(&[1.0, 1.0, 5.0, 5.0], &[0.0, 0.0, 2.0, 2.0], None).unwrap(),
            2.0
        );
        assert_eq!(binary_contrast(&[3.0, 3.0, 3.0], &[0.0, 1.0, 1.0], None).unwrap(), 0.0);
        assert_eq!(
            binary_contrast(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0], None).unwrap_err(),
            RegressError::NotBinary(3)
        );
    }

    #[test]
    fn dummy_reference_is_smallest_code() {
        let y = [1.0, 2.0, 10.0, 11.0, 20.0, 22.0];
        let x = [0.0, 1.0, 0.0, 1.0, 0.0, 2.0];
        let g = [5u32, 5, 2, 2, 9, 9];
        let fit = wls_fit(&RegressionSpec::new(&y, &x).categorical(&g)).unwrap();
        let dummies: Vec<Term> = fit
            .terms
            .iter()
            .filter(|(t, _)| matches!(t, Term::Dummy { .. }))
            .map(|(t, _)| *t)
            .collect();
        assert_eq!(
            dummies,
            vec![Term::Dummy { index: 0, level: 5 }, Term::Dummy { index: 0, level: 9 }]
        );
    }

    #[test]
    fn least_squares_recovers_plane() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, -1.0, 0.0, 1.0, 3.0];
        let one = [1.0; 5];
        let y: Vec<f64> = a.iter().zip(&b).map(|(a, b)| 0.5 + 2.0 * a - 3.0 * b).collect();
        let ls = least_squares(&[&one, &a, &b], &y, None).unwrap();
        assert_eq!(ls.rank, 3);
        let c: Vec<f64> = ls.coefs.iter().map(|c| c.unwrap()).collect();
        assert!((c[0] - 0.5).abs() < 1e-10 && (c[1] - 2.0).abs() < 1e-10 && (c[2] + 3.0).abs() < 1e-10);
        assert!((ls.predict(&[1.0, 1.0, 1.0]) + 0.5).abs() < 1e-10);
    }

    fn binary_rows() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, f64, f64)> {
        (2usize..50).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0..100.0f64, n),
                prop::collection::vec(any::<bool>(), n),
                -10.0..10.0f64,
                0.1..10.0f64,
            )
        })
    }

    proptest! {
        #[test]
        fn binary_identity((y, hi, lo, gap) in binary_rows()) {
            prop_assume!(hi.iter().any(|&h| h) && hi.iter().any(|&h| !h));
            let x: Vec<f64> = hi.iter().map(|&h| if h { lo + gap } else { lo }).collect();
            let fit = wls_fit(&RegressionSpec::new(&y, &x)).unwrap();
            let bc = binary_contrast(&y, &x, None).unwrap();
            prop_assert!((fit.coef - bc).abs() < 1e-10 * (1.0 + bc.abs()));
        }

        #[test]
        fn weight_scale_invariance(
            y in prop::collection::vec(-10.0..10.0f64, 8),
            x in prop::collection::vec(-10.0..10.0f64, 8),
            w in prop::collection::vec(0.1..5.0f64, 8),
            k in 0.01..100.0f64,
        ) {
            let wk: Vec<f64> = w.iter().map(|v| v * k).collect();
            let a = wls_fit(&RegressionSpec::new(&y, &x).weights(&w));
            let b = wls_fit(&RegressionSpec::new(&y, &x).weights(&wk));
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert!((a.coef - b.coef).abs() < 1e-8 * (1.0 + a.coef.abs()));
            }
        }

        #[test]
        fn affine_equivariance(
            y in prop::collection::vec(-10.0..10.0f64, 10),
            x in prop::collection::vec(-10.0..10.0f64, 10),
            a in -5.0..5.0f64,
            b in -5.0..5.0f64,
        ) {
            let yt: Vec<f64> = y.iter().map(|v| a + b * v).collect();
            if let (Ok(f0), Ok(f1)) = (wls_fit(&RegressionSpec::new(&y, &x)), wls_fit(&RegressionSpec::new(&yt, &x))) {
                prop_assert!((f1.coef - b * f0.coef).abs() < 1e-8 * (1.0 + f0.coef.abs() * b.abs()));
            }
        }

        #[test]
        fn fixed_effects_match_within_demeaning(
            y in prop::collection::vec(-10.0..10.0f64, 12),
            x in prop::collection::vec(-10.0..10.0f64, 12),
            g in prop::collection::vec(0u32..3, 12),
        ) {
            let fe = wls_fit(&RegressionSpec::new(&y, &x).categorical(&g));
            let demean = |v: &[f64]| -> Vec<f64> {
                let mut sums = [0.0; 3];
                let mut counts = [0.0; 3];
                for (val, &k) in v.iter().zip(&g) {
                    sums[k as usize] += val;
                    counts[k as usize] += 1.0;
                }
                v.iter().zip(&g).map(|(val, &k)| val - sums[k as usize] / counts[k as usize]).collect()
            };
            let (yd, xd) = (demean(&y), demean(&x));
            let num: f64 = yd.iter().zip(&xd).map(|(a, b)| a * b).sum();
            let den: f64 = xd.iter().map(|v| v * v).sum();
            if let Ok(fe) = fe {
                let within = num / den;
                prop_assert!((fe.coef - within).abs() < 1e-8 * (1.0 + within.abs()));
            }
        }
    }
}
