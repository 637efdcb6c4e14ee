//! Dense least squares via Householder QR. Small and allocation-simple:
//! the design matrices here are at most a few dozen columns.

use crate::error::Error;
use crate::Result;

/// Solves min ||X b - y||_2 for b. `rows` holds X row-major; every row
/// must have the same length. Rank deficiency (a zero pivot against the
/// column scale) reports the offending column; because reflectors are
/// applied left to right, the reported column is dependent on the columns
/// before it, so callers can drop it without changing the column span.
pub fn solve_least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let n = rows.len();
    if n == 0 || rows[0].is_empty() {
        return Err(Error::InvalidParameter("empty design matrix".into()));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::LengthMismatch("design matrix rows differ in length".into()));
    }
    if y.len() != n {
        return Err(Error::LengthMismatch(format!("{n} rows but {} responses", y.len())));
    }
    if n < p {
        return Err(Error::TooFewRows { rows: n, cols: p });
    }

    // column-major copy of X, and a mutable copy of y
    let mut a = vec![0.0; n * p];
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            a[j * n + i] = *v;
        }
    }
    let mut b = y.to_vec();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);

    // Householder triangularization, reflectors applied on the fly
    for j in 0..p {
        let (head, tail) = (j, n);
        let col = &a[j * n..(j + 1) * n];
        let norm = col[head..tail].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= scale * 1e-13 {
            return Err(Error::RankDeficient { column: j });
        }
        let alpha = if col[head] >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; tail - head];
        v[0] = col[head] - alpha;
        v[1..].copy_from_slice(&col[head + 1..tail]);
        let vnorm_sq = v.iter().map(|x| x * x).sum::<f64>();
        a[j * n + head] = alpha;
        for x in &mut a[j * n + head + 1..(j + 1) * n] {
            *x = 0.0;
        }
        if vnorm_sq == 0.0 {
            continue;
        }
        for k in j + 1..p {
            let col_k = &mut a[k * n..(k + 1) * n];
            let dot: f64 = v.iter().zip(&col_k[head..tail]).map(|(vi, xi)| vi * xi).sum();
            let f = 2.0 * dot / vnorm_sq;
            for (vi, xi) in v.iter().zip(&mut col_k[head..tail]) {
                *xi -= f * vi;
            }
        }
        let dot: f64 = v.iter().zip(&b[head..tail]).map(|(vi, xi)| vi * xi).sum();
        let f = 2.0 * dot / vnorm_sq;
        for (vi, xi) in v.iter().zip(&mut b[head..tail]) {
            *xi -= f * vi;
        }
    }

    // back-substitute R x = b[0..p]
    let mut x = vec![0.0; p];
    for j in (0..p).rev() {
        let mut s = b[j];
        for k in j + 1..p {
            s -= a[k * n + j] * x[k];
        }
        x[j] = s / a[j * n + j];
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares solution".into()));
    }
    Ok(x)
}

/// Coefficient of determination of regressing `y` on `rows` plus an
/// intercept. The fitted values are a projection onto the column span, so
/// they stay well defined even when the columns are collinear: dependent
/// columns get dropped (they do not change the span) and the fit retried.
pub fn r_squared(rows: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    let design: Vec<Vec<f64>> =
        rows.iter().map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect()).collect();
    let mut active: Vec<usize> = (0..design[0].len()).collect();
    let (beta, kept) = loop {
        let sub: Vec<Vec<f64>> =
            design.iter().map(|row| active.iter().map(|&j| row[j]).collect()).collect();
        match solve_least_squares(&sub, y) {
            Ok(b) => break (b, sub),
            Err(Error::RankDeficient { column }) => {
                active.remove(column);
            }
            Err(e) => return Err(e),
        }
    };
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = kept
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let pred: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            (yi - pred).powi(2)
        })
        .sum();
    if ss_tot <= 0.0 {
        return Err(Error::ConstantColumn("response in r_squared".into()));
    }
    Ok((1.0 - ss_res / ss_tot).clamp(0.0, 1.0))
}
