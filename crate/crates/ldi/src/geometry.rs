//! Convex-geometry kernels: projection onto finitely generated cones
//! (nonnegative least squares), distance to convex hulls (min-norm point),
//! and the separating direction read off the projection residual.

use crate::linalg::{dot, norm2, Mat};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GeomError {
    #[error("active-set iteration exceeded its cap; the instance is numerically degenerate")]
    NumericalBreakdown,
    #[error("projection residual is degenerate: the point is in the cone, no separator exists")]
    DegenerateResidual,
}

/// Projection of a point onto the cone spanned by the columns of `M`.
#[derive(Debug, Clone)]
pub struct ConeProjection {
    /// Nonnegative cone coefficients, one per column.
    pub alpha: Vec<f64>,
    /// `M * alpha`, the closest cone point.
    pub projection: Vec<f64>,
    /// Euclidean distance from the projected point to the input.
    pub distance: f64,
}

/// Unit-norm direction with `Mᵀy ≥ 0` (up to tolerance) and `bᵀy < 0`,
/// witnessing that `b` is outside the cone.
#[derive(Debug, Clone)]
pub struct SeparatingDirection {
    pub y: Vec<f64>,
    /// `bᵀy`; equals minus the projection distance.
    pub violation: f64,
}

/// Lawson-Hanson active-set nonnegative least squares: minimize `‖Mα − b‖₂`
/// over `α ≥ 0`. Deterministic: the entering column is the one with the most
/// negative gradient, ties broken by lowest index.
pub fn nnls_project(m: &Mat<f64>, b: &[f64]) -> Result<ConeProjection, GeomError> {
    let (rows, nd) = (m.rows, m.cols);
    assert_eq!(b.len(), rows);
    assert!(nd >= 1, "a cone needs at least one generator");
    assert!(m.is_finite(), "matrix entries must be finite");

    let mut alpha = vec![0.0; nd];
    let mut passive = vec![false; nd];
    let mut residual: Vec<f64> = b.to_vec();
    // stationarity scale: gradients below this count as zero
    let grad0 = m.matvec_t(b);
    let scale = grad0.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let colnorm = (0..nd)
        .map(|j| (0..rows).map(|i| m[(i, j)] * m[(i, j)]).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let cap = 50 * nd + 100;
    let mut iters = 0;
    // columns whose entry failed to shrink the residual; cleared on progress
    let mut barred = vec![false; nd];

    loop {
        let dist = norm2(&residual);
        // Two-part entering tolerance. The absolute part screens rounding
        // noise in the gradient. The relative part keeps the test meaningful
        // for near-parallel generators, where the achievable improvement is
        // large even though the gradient gap ‖(c_i − c_j)ᵀr‖ is tiny: it
        // demands the residual direction actually violate cone polarity.
        let tol = (1e-14 * scale).max(1e-10 * dist * colnorm);
        // w = Mᵀ(b − Mα); the most positive entry is the steepest descent
        let w = m.matvec_t(&residual);
        let mut best = tol;
        let mut enter = None;
        for j in 0..nd {
            if !passive[j] && !barred[j] && w[j] > best {
                best = w[j];
                enter = Some(j);
            }
        }
        let Some(j) = enter else { break };
        passive[j] = true;

        loop {
            iters += 1;
            if iters > cap {
                return Err(GeomError::NumericalBreakdown);
            }
            let z = passive_solve(m, b, &passive);
            // fully feasible step: adopt and leave the inner loop
            if passive
                .iter()
                .enumerate()
                .all(|(k, &p)| !p || z[k] > 0.0)
            {
                alpha = z;
                break;
            }
            // shorten the step to the first coordinate hitting zero
            let mut theta = 1.0f64;
            for k in 0..nd {
                if passive[k] && z[k] <= 0.0 {
                    let t = alpha[k] / (alpha[k] - z[k]);
                    if t < theta {
                        theta = t;
                    }
                }
            }
            for k in 0..nd {
                if passive[k] {
                    alpha[k] += theta * (z[k] - alpha[k]);
                    if alpha[k] <= 1e-14 * scale.max(1.0) {
                        alpha[k] = 0.0;
                        passive[k] = false;
                    }
                }
            }
        }
        for (k, a) in alpha.iter().enumerate() {
            if !passive[k] {
                debug_assert_eq!(*a, 0.0);
            }
        }
        residual = b.to_vec();
        for k in 0..nd {
            if alpha[k] != 0.0 {
                for i in 0..rows {
                    residual[i] -= m[(i, k)] * alpha[k];
                }
            }
        }
        // in the noise regime an entry can leave the residual unchanged;
        // barring it instead of retrying guarantees termination
        if norm2(&residual) < dist * (1.0 - 1e-12) {
            for f in barred.iter_mut() {
                *f = false;
            }
        } else {
            barred[j] = true;
        }
    }

    let projection: Vec<f64> = (0..rows).map(|i| b[i] - residual[i]).collect();
    let distance = norm2(&residual);
    Ok(ConeProjection { alpha, projection, distance })
}

/// Least squares restricted to the passive columns; zeros elsewhere.
fn passive_solve(m: &Mat<f64>, b: &[f64], passive: &[bool]) -> Vec<f64> {
    let cols: Vec<usize> = (0..m.cols).filter(|&j| passive[j]).collect();
    let sub = Mat::from_fn(m.rows, cols.len(), |i, j| m[(i, cols[j])]);
    let z = sub.lstsq(b);
    let mut full = vec![0.0; m.cols];
    for (slot, &j) in cols.iter().enumerate() {
        full[j] = z[slot];
    }
    full
}

/// Distance from `p` to the convex hull of `vertices`, with the optimal
/// simplex weights. Wolfe's min-norm-point algorithm on the translated point
/// set `{v_i − p}`.
pub fn hull_distance(vertices: &[Vec<f64>], p: &[f64]) -> Result<(f64, Vec<f64>), GeomError> {
    let nd = vertices.len();
    assert!(nd >= 1, "hull of an empty set");
    let dim = p.len();
    let pts: Vec<Vec<f64>> = vertices
        .iter()
        .map(|v| {
            assert_eq!(v.len(), dim);
            v.iter().zip(p).map(|(a, b)| a - b).collect()
        })
        .collect();

    let scale = pts
        .iter()
        .map(|q| norm2(q))
        .fold(1.0f64, f64::max);
    let tol = scale * scale * 1e-14;

    // start from the nearest single point
    let mut s: Vec<usize> = vec![nearest_index(&pts)];
    let mut w = vec![1.0f64];
    let mut x = pts[s[0]].clone();
    let cap = 200 * nd + 200;

    for _ in 0..cap {
        // most improving vertex
        let xx = dot(&x, &x);
        let mut best = f64::INFINITY;
        let mut q = 0;
        for (i, pt) in pts.iter().enumerate() {
            let v = dot(&x, pt);
            if v < best {
                best = v;
                q = i;
            }
        }
        if xx - best <= tol {
            break; // optimality: no vertex is on the near side of x
        }
        if s.contains(&q) {
            break; // numerically stalled; current x is as good as it gets
        }
        s.push(q);
        w.push(0.0);

        // minor cycle: pull x to the affine minimizer over s, trimming
        // vertices whose weight would go negative
        loop {
            let y = affine_min_norm(&pts, &s);
            let Some(y) = y else {
                // degenerate affine system; drop the newest vertex and stop
                s.pop();
                w.pop();
                break;
            };
            if y.iter().all(|&wi| wi > -1e-12) {
                w = y.iter().map(|&wi| wi.max(0.0)).collect();
                break;
            }
            // step toward y until the first weight hits zero
            let mut theta = 1.0f64;
            for (wi, yi) in w.iter().zip(&y) {
                if *yi <= 1e-12 && *wi > *yi {
                    theta = theta.min(*wi / (*wi - *yi));
                }
            }
            let mut keep = Vec::with_capacity(s.len());
            let mut neww = Vec::with_capacity(s.len());
            for k in 0..s.len() {
                let v = (1.0 - theta) * w[k] + theta * y[k];
                if v > 1e-12 {
                    keep.push(s[k]);
                    neww.push(v);
                }
            }
            if keep.is_empty() {
                keep.push(s[0]);
                neww.push(1.0);
            }
            s = keep;
            let total: f64 = neww.iter().sum();
            w = neww.iter().map(|v| v / total).collect();
        }

        x = combination(&pts, &s, &w, dim);
    }

    x = combination(&pts, &s, &w, dim);
    let mut alpha = vec![0.0; nd];
    for (k, &i) in s.iter().enumerate() {
        alpha[i] += w[k];
    }
    let total: f64 = alpha.iter().sum();
    if total > 0.0 {
        for a in alpha.iter_mut() {
            *a /= total;
        }
    }
    Ok((norm2(&x), alpha))
}

fn nearest_index(pts: &[Vec<f64>]) -> usize {
    let mut best = f64::INFINITY;
    let mut idx = 0;
    for (i, p) in pts.iter().enumerate() {
        let d = dot(p, p);
        if d < best {
            best = d;
            idx = i;
        }
    }
    idx
}

fn combination(pts: &[Vec<f64>], s: &[usize], w: &[f64], dim: usize) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    for (k, &i) in s.iter().enumerate() {
        for (xj, pj) in x.iter_mut().zip(&pts[i]) {
            *xj += w[k] * pj;
        }
    }
    x
}

/// Minimize `‖Σ β_i s_i‖` subject to `Σ β = 1` (β unrestricted in sign) via
/// the bordered Gram system. `None` when the system is singular.
fn affine_min_norm(pts: &[Vec<f64>], s: &[usize]) -> Option<Vec<f64>> {
    let k = s.len();
    let mut sys = Mat::zeros(k + 1, k + 1);
    let mut rhs = vec![0.0; k + 1];
    rhs[0] = 1.0;
    for j in 0..k {
        sys[(0, j + 1)] = 1.0;
        sys[(j + 1, 0)] = 1.0;
    }
    for a in 0..k {
        for b in 0..k {
            sys[(a + 1, b + 1)] = dot(&pts[s[a]], &pts[s[b]]);
        }
    }
    let sol = sys.lu_solve(&rhs)?;
    Some(sol[1..].to_vec())
}

/// Normalized residual of a cone projection: the Farkas separator.
pub fn separating_direction(
    m: &Mat<f64>,
    b: &[f64],
    proj: &ConeProjection,
) -> Result<SeparatingDirection, GeomError> {
    if proj.distance <= 1e-9 {
        return Err(GeomError::DegenerateResidual);
    }
    let y: Vec<f64> = proj
        .projection
        .iter()
        .zip(b)
        .map(|(p, bi)| (p - bi) / proj.distance)
        .collect();
    // sanity only: solver noise in the residual is amplified by 1/distance,
    // so tiny distances admit weak separators; any witness that matters is
    // re-checked in interval arithmetic before being believed
    debug_assert!(
        m.matvec_t(&y)
            .iter()
            .all(|&v| v >= -1e-6 * (1.0 + norm2(b) / proj.distance.max(1e-9))),
        "separating direction points into the cone"
    );
    Ok(SeparatingDirection { y: y.clone(), violation: dot(b, &y) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(cols: &[Vec<f64>]) -> Mat<f64> {
        let rows = cols[0].len();
        Mat::from_fn(rows, cols.len(), |i, j| cols[j][i])
    }

    #[test]
    fn point_in_polar_cone_projects_to_origin() {
        let m = mat(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = nnls_project(&m, &[-1.0, -1.0]).unwrap();
        assert_eq!(p.alpha, vec![0.0, 0.0]);
        assert!((p.distance - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn point_inside_cone_has_zero_distance() {
        let m = mat(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = nnls_project(&m, &[2.0, 3.0]).unwrap();
        assert!((p.alpha[0] - 2.0).abs() < 1e-12);
        assert!((p.alpha[1] - 3.0).abs() < 1e-12);
        assert!(p.distance < 1e-12);
    }

    #[test]
    fn oblique_cone_matches_enumeration() {
        // columns (1,1) and (2,1), point (0,1): the best active set is {(1,1)}
        // with coefficient 1/2, distance sqrt(1/2)
        let m = mat(&[vec![1.0, 1.0], vec![2.0, 1.0]]);
        let p = nnls_project(&m, &[0.0, 1.0]).unwrap();
        assert!((p.distance - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((p.alpha[0] - 0.5).abs() < 1e-12);
        assert_eq!(p.alpha[1], 0.0);
    }

    #[test]
    fn projection_invariants_hold() {
        let m = mat(&[vec![1.0, 1.0, 0.0], vec![2.0, 1.0, -1.0], vec![0.5, -0.3, 0.2]]);
        let b = [0.1, -0.7, 0.9];
        let p = nnls_project(&m, &b).unwrap();
        assert!(p.alpha.iter().all(|&a| a >= -1e-12));
        let pa = m.matvec(&p.alpha);
        for (a, b) in pa.iter().zip(&p.projection) {
            assert!((a - b).abs() < 1e-12);
        }
        if p.distance > 1e-9 {
            // complementarity of the residual with the projection
            let y: Vec<f64> =
                p.projection.iter().zip(&b).map(|(pr, bi)| (pr - bi) / p.distance).collect();
            assert!(dot(&y, &p.projection).abs() < 1e-9);
        }
    }

    #[test]
    fn segment_distance_is_closed_form() {
        let (d, alpha) = hull_distance(&[vec![-1.0, 0.0], vec![1.0, 0.0]], &[2.0, 1.0]).unwrap();
        assert!((d - 2.0f64.sqrt()).abs() < 1e-12);
        assert!((alpha[1] - 1.0).abs() < 1e-12);
        assert!(alpha[0].abs() < 1e-12);
    }

    #[test]
    fn vertex_itself_has_distance_zero() {
        let vs = vec![vec![0.3, -0.2], vec![1.0, 2.0], vec![-1.0, 0.5]];
        for v in &vs {
            let (d, _) = hull_distance(&vs, v).unwrap();
            assert!(d <= 1e-9);
        }
    }

    #[test]
    fn square_contains_its_center() {
        let vs = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        let (d, alpha) = hull_distance(&vs, &[0.5, 0.5]).unwrap();
        assert!(d <= 1e-9);
        let s: f64 = alpha.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(alpha.iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn separator_on_an_axis_case() {
        let m = mat(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = [-1.0, 0.0];
        let p = nnls_project(&m, &b).unwrap();
        let s = separating_direction(&m, &b, &p).unwrap();
        assert!((s.y[0] - 1.0).abs() < 1e-12);
        assert!(s.y[1].abs() < 1e-12);
        assert!((s.violation + 1.0).abs() < 1e-12);
    }

    #[test]
    fn separator_refused_when_inside() {
        let m = mat(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = [1.0, 1.0];
        let p = nnls_project(&m, &b).unwrap();
        assert_eq!(
            separating_direction(&m, &b, &p).unwrap_err(),
            GeomError::DegenerateResidual
        );
    }

    #[test]
    fn separator_satisfies_farkas_conditions() {
        let m = mat(&[vec![1.0, 0.2, 0.1], vec![0.3, 1.0, -0.2], vec![-0.1, 0.4, 0.9]]);
        let b = [-0.5, -1.2, 0.3];
        let p = nnls_project(&m, &b).unwrap();
        assert!(p.distance > 1e-9);
        let s = separating_direction(&m, &b, &p).unwrap();
        assert!((norm2(&s.y) - 1.0).abs() < 1e-12);
        let mty = m.matvec_t(&s.y);
        assert!(mty.iter().all(|&v| v >= -1e-9));
        assert!((s.violation + p.distance).abs() < 1e-9);
    }
}
