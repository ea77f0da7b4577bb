//! Lower convex envelope of a tabulated curve and its slope function.

/// Indices of the lower convex hull of `(x, y)`, assumed sorted by `x`.
/// Collinear interior points are dropped.
pub fn lower_hull(x: &[f64], y: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let a = hull[hull.len() - 1];
            let cross = (x[a] - x[o]) * (y[k] - y[o]) - (y[a] - y[o]) * (x[k] - x[o]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }
    hull
}

/// Derivative of the lower convex envelope, sampled at every grid point.
///
/// Points strictly inside a hull segment get that segment's slope. A hull
/// vertex gets the spacing-weighted average of its two adjacent slopes,
/// which reproduces the derivative of a quadratic exactly; the two end
/// points are extrapolated linearly. The result is nondecreasing.
pub fn envelope_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 2, "envelope needs at least two points");
    let hull = lower_hull(x, y);
    let mut slopes: Vec<f64> = hull
        .windows(2)
        .map(|w| (y[w[1]] - y[w[0]]) / (x[w[1]] - x[w[0]]))
        .collect();
    for j in 1..slopes.len() {
        slopes[j] = slopes[j].max(slopes[j - 1]);
    }

    let mut phi = vec![0.0; n];
    for (j, w) in hull.windows(2).enumerate() {
        for value in &mut phi[w[0] + 1..w[1]] {
            *value = slopes[j];
        }
    }
    for j in 1..hull.len() - 1 {
        let k = hull[j];
        let (left, right) = (slopes[j - 1], slopes[j]);
        let hl = x[k] - x[k - 1];
        let hr = x[k + 1] - x[k];
        phi[k] = ((hr * left + hl * right) / (hl + hr)).clamp(left, right);
    }
    if n == 2 {
        phi[0] = slopes[0];
        phi[1] = slopes[0];
        return phi;
    }
    let first = slopes[0];
    let last = slopes[slopes.len() - 1];
    phi[0] = (2.0 * first - phi[1]).min(phi[1]);
    phi[n - 1] = (2.0 * last - phi[n - 2]).max(phi[n - 2]);
    phi
}

/// Envelope values at every grid point: the hull interpolated linearly.
pub fn envelope_values(x: &[f64], y: &[f64]) -> Vec<f64> {
    let hull = lower_hull(x, y);
    let mut out = y.to_vec();
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let slope = (y[b] - y[a]) / (x[b] - x[a]);
        for k in a + 1..b {
            out[k] = y[a] + slope * (x[k] - x[a]);
        }
    }
    out
}
