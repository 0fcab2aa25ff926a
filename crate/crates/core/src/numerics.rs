//! Small dense-numerics helpers: finite differences, spectra, fits, quadrature.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Central-difference Jacobian of `f` at `x` with a uniform step `h`.
pub fn central_jacobian<F>(mut f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fp = f(&xp)?;
        let fm = f(&xm)?;
        cols.push((fp - fm) / (2.0 * h));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, x.len(), |i, j| cols[j][i]))
}

/// Central-difference gradient of a scalar function.
pub fn central_gradient<F>(mut f: F, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let mut g = DVector::zeros(x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        g[j] = (f(&xp)? - f(&xm)?) / (2.0 * h);
    }
    Ok(g)
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Eigenvalues of the symmetric part `m + mᵀ`, ascending.
pub fn symmetric_part_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = m + m.transpose();
    let mut eigs: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| a.total_cmp(b));
    eigs
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// 2-norm condition number; infinite for exactly singular matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&max), Some(&min)) if min > 0.0 => max / min,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Numerical rank with an absolute singular-value threshold.
pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    singular_values(m).iter().filter(|&&s| s > tol).count()
}

/// Distance between the eigenvalue multisets of `a` and `b`.
///
/// Eigenvalues are paired by the matching that minimises the largest pairwise
/// distance. Exhaustive for n ≤ 6, greedy nearest-pair above that.
pub fn spectral_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    matched_distance(&eigenvalues(a), &eigenvalues(b))
}

pub fn matched_distance(la: &[Complex<f64>], lb: &[Complex<f64>]) -> f64 {
    assert_eq!(la.len(), lb.len(), "eigenvalue multisets differ in size");
    let n = la.len();
    if n == 0 {
        return 0.0;
    }
    if n <= 6 {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let d = p
                .iter()
                .enumerate()
                .map(|(i, &j)| (la[i] - lb[j]).norm())
                .fold(0.0, f64::max);
            best = best.min(d);
        });
        best
    } else {
        let mut used = vec![false; n];
        let mut worst: f64 = 0.0;
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
        for (i, x) in la.iter().enumerate() {
            for (j, y) in lb.iter().enumerate() {
                pairs.push(((x - y).norm(), i, j));
            }
        }
        pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut taken = vec![false; n];
        for (d, i, j) in pairs {
            if !taken[i] && !used[j] {
                taken[i] = true;
                used[j] = true;
                worst = worst.max(d);
            }
        }
        worst
    }
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope of log(y) against log(x) over the points where y exceeds `floor`.
///
/// Returns `None` when fewer than two points survive the floor.
pub fn loglog_order(x: &[f64], y: &[f64], floor: f64) -> Option<f64> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(&a, &b)| a > 0.0 && b > floor && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    linear_fit(&lx, &ly).map(|(slope, _)| slope)
}

/// Least-squares polynomial coefficients (ascending powers) for each column of `y`.
///
/// `y` holds one sample per row. Returns a `(degree + 1) × cols` matrix and the
/// root-mean-square residual over all entries.
pub fn polynomial_fit(x: &[f64], y: &DMatrix<f64>, degree: usize) -> Result<(DMatrix<f64>, f64)> {
    let rows = x.len();
    if rows <= degree || y.nrows() != rows {
        return Err(Error::InvalidParams(format!(
            "polynomial fit of degree {degree} needs more than {degree} samples"
        )));
    }
    // Scale the abscissa so the Vandermonde columns are comparable.
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let vander = DMatrix::from_fn(rows, degree + 1, |i, j| (x[i] / scale).powi(j as i32));
    let svd = vander.clone().svd(true, true);
    let mut coef = svd
        .solve(y, 1e-14)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    for j in 0..=degree {
        let s = scale.powi(j as i32);
        coef.row_mut(j).scale_mut(1.0 / s);
    }
    let unscaled = DMatrix::from_fn(rows, degree + 1, |i, j| x[i].powi(j as i32));
    let resid = &unscaled * &coef - y;
    let rms = (resid.norm_squared() / resid.len().max(1) as f64).sqrt();
    Ok((coef, rms))
}

/// Adaptive Simpson quadrature of a vector-valued integrand over `[a, b]`.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<DVector<f64>>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = simpson(a, b, &fa, &fm, &fb);
    let mut budget_exceeded = false;
    let value = simpson_step(&f, a, b, &fa, &fm, &fb, &whole, tol, max_depth, 0, &mut budget_exceeded)?;
    if budget_exceeded {
        return Err(Error::QuadratureFailure { estimate: value.norm() });
    }
    Ok(value)
}

fn simpson(a: f64, b: f64, fa: &DVector<f64>, fm: &DVector<f64>, fb: &DVector<f64>) -> DVector<f64> {
    (fa + fm * 4.0 + fb) * ((b - a) / 6.0)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: &DVector<f64>,
    fm: &DVector<f64>,
    fb: &DVector<f64>,
    whole: &DVector<f64>,
    tol: f64,
    max_depth: u32,
    depth: u32,
    exceeded: &mut bool,
) -> Result<DVector<f64>>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = simpson(a, m, fa, &flm, fm);
    let right = simpson(m, b, fm, &frm, fb);
    let sum = &left + &right;
    let delta = &sum - whole;
    // Require a few levels of refinement so symmetric integrands cannot fool the first estimate.
    if depth >= 3 && delta.amax() <= 15.0 * tol {
        return Ok(sum + delta / 15.0);
    }
    if depth >= max_depth {
        *exceeded = true;
        return Ok(sum);
    }
    let l = simpson_step(f, a, m, fa, &flm, fm, &left, 0.5 * tol, max_depth, depth + 1, exceeded)?;
    let r = simpson_step(f, m, b, fm, &frm, fb, &right, 0.5 * tol, max_depth, depth + 1, exceeded)?;
    Ok(l + r)
}
