//! Branch-and-bound certification: prove that over the whole region the
//! deviation successor stays within distance epsilon of the convex hull of
//! the vertex images.
//!
//! Three upper bounds on the sup of the hull distance over a sub-box are
//! available. [`box_bound`] is the direct interval bound: enclose the
//! successor and every vertex image, then take the worst corner distance to
//! the hull of the image midpoints plus the worst image radius. It is cheap
//! and always applies, but its radius term scales linearly with box width,
//! so it cannot retire boxes near configurations where the inclusion is
//! tight. The certificate bounds complement it: around a midpoint with
//! valid hull coefficients they build a coefficient field that reproduces
//! the Jacobian match and charge only the Taylor remainder against it.
//! With an affine field the remainder (interval Hessian) scales
//! quadratically with box width; extending the field with a quadratic term
//! also cancels the midpoint Hessian defect and leaves a third-order
//! remainder. The cubic version matters when few vertices leave no affine
//! slack: with two vertices the Jacobian match consumes every affine
//! degree of freedom, the quadratic defect sits at a width-independent
//! floor, and boxes near it would have to shrink far below any sensible
//! budget before the second-order bound clears a tight epsilon. The
//! certifier retires a box when the smallest applicable bound does.

use std::collections::BinaryHeap;

use crate::expr::{EvalError, VarRef};
use crate::farkas::{
    self, CandidateLDI, DynamicalSystem, FarkasError, Membership, Region, Witness,
};
use crate::geometry;
use crate::interval::Interval;
use crate::linalg::{norm2, Mat};
use crate::{Expr64, Interval64, Mat64};

/// Largest n_x + n_u the certifier accepts; corner enumeration and box
/// counts grow exponentially past desk scale.
pub const DIM_LIMIT: usize = 6;

#[derive(Debug, Clone)]
pub struct BoxNode {
    pub x_sub: Vec<Interval64>,
    pub u_sub: Vec<Interval64>,
    /// Sound upper bound on the sup of hull distance over the sub-box.
    pub upper_bound: f64,
    pub depth: u32,
}

#[derive(Debug, Clone)]
pub enum CertOutcome {
    Certified { epsilon: f64, boxes_processed: u64, max_depth: u32 },
    Falsified { witness: Witness },
    Inconclusive { worst_bound: f64, boxes_remaining: u64, boxes_processed: u64 },
}

#[derive(Debug, Clone, Default)]
pub struct CertStats {
    /// Boxes whose bound was evaluated (the budget unit).
    pub boxes_processed: u64,
    pub max_depth_reached: u32,
    /// Largest bound among retired boxes; minus this is the certified margin.
    pub worst_retired_bound: f64,
    pub splits: u64,
    pub retired: u64,
    pub excluded: u64,
    pub remaining: u64,
    /// Normalized volumes; the three sum to one when the run ends.
    pub retired_volume: f64,
    pub excluded_volume: f64,
    pub remaining_volume: f64,
    /// Boxes where the certificate beat the direct interval bound.
    pub certificate_wins: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CertError {
    #[error("box and depth budgets must be at least one")]
    BudgetZero,
    #[error("epsilon must be positive")]
    InvalidTolerance,
    #[error(transparent)]
    Farkas(#[from] FarkasError),
}

impl From<EvalError> for CertError {
    fn from(e: EvalError) -> Self {
        CertError::Farkas(FarkasError::Eval(e))
    }
}

fn interval_deviation(boxes: &[Interval64], shift: &[f64]) -> Vec<Interval64> {
    boxes.iter().zip(shift).map(|(iv, &s)| iv.sub(Interval::point(s))).collect()
}

fn interval_successor(
    system: &DynamicalSystem,
    x_sub: &[Interval64],
    u_sub: &[Interval64],
) -> Result<Vec<Interval64>, EvalError> {
    system
        .f
        .iter()
        .zip(&system.x_s)
        .map(|(e, &s)| Ok(e.eval_interval(x_sub, u_sub)?.sub(Interval::point(s))))
        .collect()
}

/// Interval image `A_i [δx] + B_i [δu]` of each vertex system.
fn interval_images(
    candidate: &CandidateLDI,
    dx: &[Interval64],
    du: &[Interval64],
) -> Vec<Vec<Interval64>> {
    candidate
        .vertices
        .iter()
        .map(|v| {
            (0..v.a.rows)
                .map(|i| {
                    let mut acc = Interval::point(0.0);
                    for (j, d) in dx.iter().enumerate() {
                        acc = acc.add(d.scale(v.a[(i, j)]));
                    }
                    for (j, d) in du.iter().enumerate() {
                        acc = acc.add(d.scale(v.b[(i, j)]));
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Distance from a point to the hull, falling back to the nearest vertex
/// (always an upper bound) if the min-norm solve breaks down.
fn hull_distance_or_vertex(vertices: &[Vec<f64>], p: &[f64]) -> f64 {
    match geometry::hull_distance(vertices, p) {
        Ok((d, _)) => d,
        Err(_) => vertices
            .iter()
            .map(|v| {
                let diff: Vec<f64> = v.iter().zip(p).map(|(a, b)| a - b).collect();
                norm2(&diff)
            })
            .fold(f64::INFINITY, f64::min),
    }
}

/// Direct interval bound on the sup of hull distance over the sub-box: the
/// worst corner of the successor enclosure against the hull of the image
/// midpoints, plus the worst image radius (a hull built from shifted
/// vertices moves by at most the largest vertex shift).
pub fn box_bound(
    system: &DynamicalSystem,
    candidate: &CandidateLDI,
    node: &BoxNode,
) -> Result<f64, EvalError> {
    let n_x = system.n_x;
    let dxp = interval_successor(system, &node.x_sub, &node.u_sub)?;
    let dx = interval_deviation(&node.x_sub, &system.x_s);
    let du = interval_deviation(&node.u_sub, &system.u_s);
    let images = interval_images(candidate, &dx, &du);
    let mids: Vec<Vec<f64>> =
        images.iter().map(|img| img.iter().map(|iv| iv.mid()).collect()).collect();
    let rad_max = images
        .iter()
        .map(|img| norm2(&img.iter().map(|iv| iv.rad()).collect::<Vec<f64>>()))
        .fold(0.0f64, f64::max);
    let mut worst = 0.0f64;
    for mask in 0u32..(1u32 << n_x) {
        let corner: Vec<f64> = (0..n_x)
            .map(|k| if mask >> k & 1 == 1 { dxp[k].hi } else { dxp[k].lo })
            .collect();
        worst = worst.max(hull_distance_or_vertex(&mids, &corner));
    }
    Ok(worst + rad_max)
}

/// Symbolic derivatives of the dynamics with respect to the stacked
/// variable z = (x; u). Jacobian and Hessian are required; the third
/// derivatives may be missing on their own, which disables only the cubic
/// certificate. All absent when the dynamics contain a non-differentiable
/// operation.
struct TaylorData {
    jac: Vec<Vec<Expr64>>,
    hess: Vec<Vec<Vec<Expr64>>>,
    third: Option<Vec<Vec<Vec<Vec<Expr64>>>>>,
}

fn taylor_data(system: &DynamicalSystem) -> Option<TaylorData> {
    let nz = system.n_x + system.n_u;
    let var = |j: usize| {
        if j < system.n_x {
            VarRef::X(j)
        } else {
            VarRef::U(j - system.n_x)
        }
    };
    let mut jac = Vec::with_capacity(system.n_x);
    let mut hess = Vec::with_capacity(system.n_x);
    for f in &system.f {
        let row: Vec<Expr64> =
            (0..nz).map(|j| f.differentiate(var(j))).collect::<Result<_, _>>().ok()?;
        let hrow: Vec<Vec<Expr64>> = row
            .iter()
            .map(|d| (0..nz).map(|q| d.differentiate(var(q))).collect::<Result<_, _>>())
            .collect::<Result<_, _>>()
            .ok()?;
        jac.push(row);
        hess.push(hrow);
    }
    let third = hess
        .iter()
        .map(|hrow| {
            hrow.iter()
                .map(|hp| {
                    hp.iter()
                        .map(|h| {
                            (0..nz)
                                .map(|s| h.differentiate(var(s)))
                                .collect::<Result<Vec<_>, _>>()
                        })
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()
        .ok();
    Some(TaylorData { jac, hess, third })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Everything the certificate bounds need from the box midpoint: hull
/// coefficients there, the Jacobian defect they leave, and the vertex
/// spreads that extending the coefficients can trade against.
struct MidpointFit {
    mid: Vec<f64>,
    hw: Vec<f64>,
    a0: Vec<f64>,
    ref_i: usize,
    idxs: Vec<usize>,
    /// Vertex image differences against the reference vertex.
    dv: Vec<Vec<f64>>,
    /// Stacked matrix differences against the reference vertex.
    dc: Vec<Mat64>,
    /// Jacobian of the dynamics minus the coefficient-weighted vertex mix.
    g: Mat64,
    /// Successor residual of the coefficient mix at the midpoint.
    res_mid: Vec<f64>,
}

/// Fit hull coefficients at the box midpoint. None when the midpoint
/// residual already exceeds epsilon: the certificates have nothing valid to
/// anchor on and the caller falls back to the direct bound.
fn midpoint_fit(
    system: &DynamicalSystem,
    candidate: &CandidateLDI,
    stacked: &[Mat64],
    taylor: &TaylorData,
    node: &BoxNode,
    epsilon: f64,
) -> Option<MidpointFit> {
    let n_x = system.n_x;
    let nz = n_x + system.n_u;
    let nd = candidate.n_d();
    let boxes: Vec<Interval64> =
        node.x_sub.iter().chain(&node.u_sub).copied().collect();
    let mid: Vec<f64> = boxes.iter().map(|iv| iv.mid()).collect();
    let hw: Vec<f64> = boxes.iter().map(|iv| iv.rad()).collect();
    let (xm, um) = mid.split_at(n_x);

    let data = farkas::build(system, candidate, xm, um).ok()?;
    let proj = geometry::nnls_project(&data.m, &data.b).ok()?;
    if proj.distance > epsilon {
        return None;
    }
    let mut a0 = proj.alpha.clone();
    let s: f64 = a0.iter().sum();
    if s > 0.0 {
        for a in &mut a0 {
            *a /= s;
        }
    }

    let mut jm = Mat::zeros(n_x, nz);
    for k in 0..n_x {
        for j in 0..nz {
            jm[(k, j)] = taylor.jac[k][j].eval(xm, um).ok()?;
        }
    }

    // move the coefficients toward the best Frobenius match of the Jacobian
    // while keeping M a = b through a stiff penalty; only adopted when the
    // recentered coefficients still satisfy the constraint tightly
    {
        let kap = 1e5;
        let rows = n_x * nz + n_x + 1;
        let mut pen = Mat::zeros(rows, nd);
        let mut rhs = vec![0.0; rows];
        for i in 0..nd {
            for k in 0..n_x {
                for j in 0..nz {
                    pen[(k * nz + j, i)] = stacked[i][(k, j)];
                }
            }
            for r in 0..(n_x + 1) {
                pen[(n_x * nz + r, i)] = kap * data.m[(r, i)];
            }
        }
        for k in 0..n_x {
            for j in 0..nz {
                rhs[k * nz + j] = jm[(k, j)];
            }
        }
        for r in 0..(n_x + 1) {
            rhs[n_x * nz + r] = kap * data.b[r];
        }
        if let Ok(p2) = geometry::nnls_project(&pen, &rhs) {
            let s2: f64 = p2.alpha.iter().sum();
            if s2 > 0.0 {
                let scaled: Vec<f64> = p2.alpha.iter().map(|a| a / s2).collect();
                let back = data.m.matvec(&scaled);
                let err: Vec<f64> =
                    back.iter().zip(&data.b).map(|(a, b)| a - b).collect();
                if norm2(&err) < 1e-7 {
                    a0 = scaled;
                }
            }
        }
    }

    let ref_i = argmax(&a0);
    let idxs: Vec<usize> = (0..nd).filter(|&i| i != ref_i).collect();

    let dxm: Vec<f64> = xm.iter().zip(&system.x_s).map(|(a, b)| a - b).collect();
    let dum: Vec<f64> = um.iter().zip(&system.u_s).map(|(a, b)| a - b).collect();
    let vs = candidate.vertex_images(&dxm, &dum);
    let dv: Vec<Vec<f64>> = idxs
        .iter()
        .map(|&i| vs[i].iter().zip(&vs[ref_i]).map(|(a, b)| a - b).collect())
        .collect();
    let dc: Vec<Mat64> = idxs.iter().map(|&i| stacked[i].sub(&stacked[ref_i])).collect();
    let mut g = jm.clone();
    for i in 0..nd {
        g = g.sub(&stacked[i].scale(a0[i]));
    }
    let mut res_mid = data.delta_xp.clone();
    for i in 0..nd {
        for k in 0..n_x {
            res_mid[k] -= a0[i] * vs[i][k];
        }
    }
    Some(MidpointFit { mid, hw, a0, ref_i, idxs, dv, dc, g, res_mid })
}

/// Affine coefficient rates λ for the non-reference vertices: least-squares
/// cancel the target Hessian (weighted by box half-widths) subject to
/// reproducing the Jacobian defect exactly, with a coefficient-proportional
/// ridge so the system stays well-posed when the vertex spread is
/// degenerate. Unclamped; the callers apply their own nonnegativity caps.
fn affine_rates(fit: &MidpointFit, hm: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let n_x = fit.res_mid.len();
    let nz = fit.hw.len();
    let m_cnt = fit.idxs.len();
    let nv = m_cnt * nz;
    let mut lam = vec![vec![0.0; nz]; m_cnt];
    if nv == 0 {
        return lam;
    }
    let hw = &fit.hw;
    let mut qmat = Mat::zeros(nv, nv);
    let mut cvec = vec![0.0; nv];
    for k in 0..n_x {
        for p in 0..nz {
            for q in 0..nz {
                let ws = hw[p] * hw[q];
                if ws == 0.0 {
                    continue;
                }
                let mut row = vec![0.0; nv];
                for ii in 0..m_cnt {
                    row[ii * nz + p] += 0.5 * fit.dc[ii][(k, q)] * ws;
                    row[ii * nz + q] += 0.5 * fit.dc[ii][(k, p)] * ws;
                }
                let target = 0.5 * hm[k][p][q] * ws;
                for a in 0..nv {
                    if row[a] == 0.0 {
                        continue;
                    }
                    for b in 0..nv {
                        qmat[(a, b)] += row[a] * row[b];
                    }
                    cvec[a] += row[a] * target;
                }
            }
        }
    }
    let trace: f64 = (0..nv).map(|i| qmat[(i, i)]).sum();
    let zeta = 1e-10 * trace.max(1.0);
    let neq = n_x * nz;
    let mut kkt = Mat::zeros(nv + neq, nv + neq);
    for a in 0..nv {
        for b in 0..nv {
            kkt[(a, b)] = qmat[(a, b)];
        }
    }
    for (ii, &i) in fit.idxs.iter().enumerate() {
        let r = zeta / fit.a0[i].max(1e-14);
        for j in 0..nz {
            kkt[(ii * nz + j, ii * nz + j)] += r;
        }
    }
    for p in 0..n_x {
        for j in 0..nz {
            let eq = nv + p * nz + j;
            for ii in 0..m_cnt {
                kkt[(eq, ii * nz + j)] = fit.dv[ii][p];
                kkt[(ii * nz + j, eq)] = fit.dv[ii][p];
            }
        }
    }
    let mut rhs = vec![0.0; nv + neq];
    rhs[..nv].copy_from_slice(&cvec);
    for p in 0..n_x {
        for j in 0..nz {
            rhs[nv + p * nz + j] = fit.g[(p, j)];
        }
    }
    let sol = kkt.lstsq(&rhs);
    for ii in 0..m_cnt {
        lam[ii].copy_from_slice(&sol[ii * nz..(ii + 1) * nz]);
    }
    lam
}

/// Symmetric quadratic the affine rate field induces on each successor
/// component through the vertex matrix spread; the part of the Hessian the
/// rates already account for.
fn rate_coupling(fit: &MidpointFit, lam: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let n_x = fit.res_mid.len();
    let nz = fit.hw.len();
    let mut sk = vec![vec![vec![0.0; nz]; nz]; n_x];
    for k in 0..n_x {
        for (ii, l) in lam.iter().enumerate() {
            for p in 0..nz {
                for q in 0..nz {
                    sk[k][p][q] += l[p] * fit.dc[ii][(k, q)];
                }
            }
        }
        for p in 0..nz {
            for q in (p + 1)..nz {
                let sym = 0.5 * (sk[k][p][q] + sk[k][q][p]);
                sk[k][p][q] = sym;
                sk[k][q][p] = sym;
            }
        }
    }
    sk
}

/// Second-order bound on the sup of hull distance over the sub-box.
///
/// The midpoint hull coefficients are extended affinely, α_i(z) = a0_i +
/// λ_iᵀ(z − mid), with the λ chosen to reproduce the Jacobian of the
/// dynamics exactly and to cancel as much of the Hessian as the vertex
/// spread allows, then clamped so every α_i stays nonnegative over the box.
/// The remaining defect, bounded through the interval Hessian Taylor
/// remainder, is an upper bound on the hull distance because the α(z) are a
/// feasible hull combination at every z. Returns None when the construction
/// does not apply; the caller falls back to [`box_bound`].
fn certificate_bound(taylor: &TaylorData, node: &BoxNode, fit: &MidpointFit) -> Option<f64> {
    let n_x = fit.res_mid.len();
    let nz = fit.hw.len();
    let m_cnt = fit.idxs.len();
    let hw = &fit.hw;

    let mut hf = vec![vec![vec![Interval::point(0.0); nz]; nz]; n_x];
    for k in 0..n_x {
        for p in 0..nz {
            for q in 0..nz {
                hf[k][p][q] =
                    taylor.hess[k][p][q].eval_interval(&node.x_sub, &node.u_sub).ok()?;
            }
        }
    }
    let hmid: Vec<Vec<Vec<f64>>> = hf
        .iter()
        .map(|hk| {
            hk.iter()
                .map(|hp| hp.iter().map(|iv| 0.5 * (iv.lo + iv.hi)).collect())
                .collect()
        })
        .collect();

    let mut lam = affine_rates(fit, &hmid);

    // clamp so every affine coefficient stays nonnegative over the box
    for (ii, &i) in fit.idxs.iter().enumerate() {
        let reach: f64 = lam[ii].iter().zip(hw).map(|(l, h)| l.abs() * h).sum();
        if reach > fit.a0[i] {
            let f = if reach > 0.0 { fit.a0[i] / reach } else { 0.0 };
            for l in &mut lam[ii] {
                *l *= f;
            }
        }
    }
    let mut lam_sum = vec![0.0; nz];
    for l in &lam {
        for (s, v) in lam_sum.iter_mut().zip(l) {
            *s += *v;
        }
    }
    let reach: f64 = lam_sum.iter().zip(hw).map(|(l, h)| l.abs() * h).sum();
    if reach > fit.a0[fit.ref_i] {
        let f = if reach > 0.0 { fit.a0[fit.ref_i] / reach } else { 0.0 };
        for l in &mut lam {
            for v in l.iter_mut() {
                *v *= f;
            }
        }
    }

    let mut dmid = fit.g.clone();
    for ii in 0..m_cnt {
        for p in 0..n_x {
            for j in 0..nz {
                dmid[(p, j)] -= fit.dv[ii][p] * lam[ii][j];
            }
        }
    }
    let sk = rate_coupling(fit, &lam);

    let mut mags = vec![0.0; n_x];
    for k in 0..n_x {
        let mut lin = 0.0;
        for j in 0..nz {
            lin += dmid[(k, j)].abs() * hw[j];
        }
        let mut quad = 0.0;
        for p in 0..nz {
            for q in 0..nz {
                let d_lo = 0.5 * hf[k][p][q].lo - sk[k][p][q];
                let d_hi = 0.5 * hf[k][p][q].hi - sk[k][p][q];
                quad += d_lo.abs().max(d_hi.abs()) * hw[p] * hw[q];
            }
        }
        mags[k] = fit.res_mid[k].abs() + lin + quad;
    }
    Some(norm2(&mags))
}

/// Third-order bound on the sup of hull distance over the sub-box.
///
/// Same anchor as [`certificate_bound`], but the coefficient field gains a
/// symmetric quadratic term, α_i(z) = a0_i + λ_iᵀd + dᵀΛ_i d with d = z −
/// mid. The Λ_i are fitted to the part of the midpoint Hessian the affine
/// rates cannot reach, the Hessian is taken at the midpoint rather than
/// over the box, and the box variation is charged through the interval
/// third-derivative remainder instead, so the bound decays cubically with
/// box width. The caps keeping every α_i nonnegative scale λ_i and Λ_i
/// together. Returns None when third derivatives are unavailable.
fn certificate_bound_cubic(
    taylor: &TaylorData,
    node: &BoxNode,
    fit: &MidpointFit,
) -> Option<f64> {
    let third = taylor.third.as_ref()?;
    let n_x = fit.res_mid.len();
    let nz = fit.hw.len();
    let m_cnt = fit.idxs.len();
    let hw = &fit.hw;
    let (xm, um) = fit.mid.split_at(n_x);

    let mut hm = vec![vec![vec![0.0; nz]; nz]; n_x];
    for k in 0..n_x {
        for p in 0..nz {
            for q in 0..nz {
                hm[k][p][q] = taylor.hess[k][p][q].eval(xm, um).ok()?;
            }
        }
    }
    let mut t3 = vec![vec![vec![vec![Interval::point(0.0); nz]; nz]; nz]; n_x];
    for k in 0..n_x {
        for p in 0..nz {
            for q in 0..nz {
                for s in 0..nz {
                    t3[k][p][q][s] =
                        third[k][p][q][s].eval_interval(&node.x_sub, &node.u_sub).ok()?;
                }
            }
        }
    }

    let mut lam = affine_rates(fit, &hm);

    // quadratic coefficients: one symmetric matrix per non-reference
    // vertex, fitted entry-wise (the normal equations decouple per upper
    // triangle slot) to the midpoint Hessian defect the rates leave behind,
    // with the same coefficient-proportional ridge as the rate solve
    let mut lam2 = vec![vec![vec![0.0; nz]; nz]; m_cnt];
    if m_cnt > 0 {
        let sk = rate_coupling(fit, &lam);
        let mut gram = Mat::zeros(m_cnt, m_cnt);
        for ii in 0..m_cnt {
            for jj in 0..m_cnt {
                gram[(ii, jj)] =
                    fit.dv[ii].iter().zip(&fit.dv[jj]).map(|(a, b)| a * b).sum();
            }
        }
        let n_tri = nz * (nz + 1) / 2;
        let trace: f64 = (0..m_cnt).map(|i| gram[(i, i)]).sum::<f64>() * n_tri as f64;
        let zl = 1e-8 * trace.max(1.0);
        for p in 0..nz {
            for q in p..nz {
                let mut a = gram.clone();
                let mut rhs = vec![0.0; m_cnt];
                for ii in 0..m_cnt {
                    a[(ii, ii)] += zl / fit.a0[fit.idxs[ii]].max(1e-14);
                    rhs[ii] = (0..n_x)
                        .map(|k| fit.dv[ii][k] * (0.5 * hm[k][p][q] - sk[k][p][q]))
                        .sum();
                }
                let sol = a.lstsq(&rhs);
                for ii in 0..m_cnt {
                    lam2[ii][p][q] = sol[ii];
                    lam2[ii][q][p] = sol[ii];
                }
            }
        }
    }

    // caps: the affine and quadratic reach together must stay within a0_i
    let quad_reach = |m: &[Vec<f64>]| -> f64 {
        let mut acc = 0.0;
        for p in 0..nz {
            for q in 0..nz {
                acc += m[p][q].abs() * hw[p] * hw[q];
            }
        }
        acc
    };
    for (ii, &i) in fit.idxs.iter().enumerate() {
        let reach: f64 = lam[ii].iter().zip(hw).map(|(l, h)| l.abs() * h).sum::<f64>()
            + quad_reach(&lam2[ii]);
        if reach > fit.a0[i] {
            let f = if reach > 0.0 { fit.a0[i] / reach } else { 0.0 };
            for l in &mut lam[ii] {
                *l *= f;
            }
            for row in &mut lam2[ii] {
                for v in row.iter_mut() {
                    *v *= f;
                }
            }
        }
    }
    let mut lam_sum = vec![0.0; nz];
    let mut lam2_sum = vec![vec![0.0; nz]; nz];
    for ii in 0..m_cnt {
        for (s, v) in lam_sum.iter_mut().zip(&lam[ii]) {
            *s += *v;
        }
        for p in 0..nz {
            for q in 0..nz {
                lam2_sum[p][q] += lam2[ii][p][q];
            }
        }
    }
    let reach: f64 = lam_sum.iter().zip(hw).map(|(l, h)| l.abs() * h).sum::<f64>()
        + quad_reach(&lam2_sum);
    if reach > fit.a0[fit.ref_i] {
        let f = if reach > 0.0 { fit.a0[fit.ref_i] / reach } else { 0.0 };
        for ii in 0..m_cnt {
            for l in &mut lam[ii] {
                *l *= f;
            }
            for row in &mut lam2[ii] {
                for v in row.iter_mut() {
                    *v *= f;
                }
            }
        }
    }

    let mut dmid = fit.g.clone();
    for ii in 0..m_cnt {
        for p in 0..n_x {
            for j in 0..nz {
                dmid[(p, j)] -= fit.dv[ii][p] * lam[ii][j];
            }
        }
    }
    let sk = rate_coupling(fit, &lam);

    let mut mags = vec![0.0; n_x];
    for k in 0..n_x {
        let mut lin = 0.0;
        for j in 0..nz {
            lin += dmid[(k, j)].abs() * hw[j];
        }
        let mut quad = 0.0;
        for p in 0..nz {
            for q in 0..nz {
                let mut tgt = sk[k][p][q];
                for ii in 0..m_cnt {
                    tgt += fit.dv[ii][k] * lam2[ii][p][q];
                }
                quad += (0.5 * hm[k][p][q] - tgt).abs() * hw[p] * hw[q];
            }
        }
        // the quadratic witness field itself contributes a cubic term in
        // the residual; symmetrize it into the third-derivative charge
        let mut cub = 0.0;
        for p in 0..nz {
            for q in 0..nz {
                for s in 0..nz {
                    let mut w = 0.0;
                    for ii in 0..m_cnt {
                        w += lam2[ii][p][q] * fit.dc[ii][(k, s)]
                            + lam2[ii][p][s] * fit.dc[ii][(k, q)]
                            + lam2[ii][q][s] * fit.dc[ii][(k, p)];
                    }
                    w /= 3.0;
                    let lo = t3[k][p][q][s].lo / 6.0 - w;
                    let hi = t3[k][p][q][s].hi / 6.0 - w;
                    cub += lo.abs().max(hi.abs()) * hw[p] * hw[q] * hw[s];
                }
            }
        }
        mags[k] = fit.res_mid[k].abs() + lin + quad + cub;
    }
    Some(norm2(&mags))
}

/// The bound the certifier actually retires boxes with: the direct interval
/// bound, then the quadratic certificate, then the cubic one, each consulted
/// only while the running bound still exceeds epsilon (once a cheaper bound
/// clears epsilon the retirement decision cannot change). Inflated by one
/// part in 1e12 to cover plain floating-point evaluation of the bound
/// algebra itself (the interval operations are outward-rounded, the hull and
/// least-squares kernels are not). The flag reports whether a certificate
/// improved on the direct bound.
fn staged_bound(
    system: &DynamicalSystem,
    candidate: &CandidateLDI,
    stacked: &[Mat64],
    taylor: Option<&TaylorData>,
    node: &BoxNode,
    epsilon: f64,
) -> Result<(f64, bool), EvalError> {
    let literal = box_bound(system, candidate, node)?;
    let mut b = literal;
    if b > epsilon {
        if let Some(t) = taylor {
            if let Some(fit) = midpoint_fit(system, candidate, stacked, t, node, epsilon) {
                if let Some(c) = certificate_bound(t, node, &fit) {
                    b = b.min(c);
                }
                if b > epsilon {
                    if let Some(c) = certificate_bound_cubic(t, node, &fit) {
                        b = b.min(c);
                    }
                }
            }
        }
    }
    Ok((b + 1e-12 * (1.0 + b), b < literal))
}

/// Smallest available sound bound for one box; standalone entry point for
/// the staged combination the certifier uses internally.
pub fn refined_bound(
    system: &DynamicalSystem,
    candidate: &CandidateLDI,
    node: &BoxNode,
    epsilon: f64,
) -> Result<f64, EvalError> {
    let taylor = taylor_data(system);
    let (b, _) =
        staged_bound(system, candidate, &candidate.stacked(), taylor.as_ref(), node, epsilon)?;
    Ok(b)
}

struct Queued {
    node: BoxNode,
    uid: u64,
    volume: f64,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.node.upper_bound == other.node.upper_bound && self.uid == other.uid
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    // max-heap on bound, oldest first among equals
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.node
            .upper_bound
            .partial_cmp(&other.node.upper_bound)
            .expect("bounds are never NaN")
            .then_with(|| other.uid.cmp(&self.uid))
    }
}

/// True when interval evaluation proves the whole box violates some
/// halfspace (the minimum of that row over the box exceeds 1).
fn box_excluded(region: &Region, x_sub: &[Interval64], u_sub: &[Interval64]) -> bool {
    let Some(h) = &region.halfspaces else { return false };
    for r in 0..h.f.rows {
        let mut acc = Interval::point(0.0);
        for (j, iv) in x_sub.iter().enumerate() {
            acc = acc.add(iv.scale(h.f[(r, j)]));
        }
        for (j, iv) in u_sub.iter().enumerate() {
            acc = acc.add(iv.scale(h.e[(r, j)]));
        }
        if acc.lo > 1.0 {
            return true;
        }
    }
    false
}

/// Certify that the hull distance stays at most epsilon over the region, or
/// find a verified counterexample, or give up when a budget runs out.
pub fn certify(
    system: &DynamicalSystem,
    region: &Region,
    candidate: &CandidateLDI,
    epsilon: f64,
    max_boxes: usize,
    max_depth: usize,
) -> Result<(CertOutcome, CertStats), CertError> {
    if !(epsilon > 0.0) {
        return Err(CertError::InvalidTolerance);
    }
    if max_boxes == 0 || max_depth == 0 {
        return Err(CertError::BudgetZero);
    }
    let mut stats = CertStats::default();
    let dims = system.n_x + system.n_u;
    if dims > DIM_LIMIT {
        stats.remaining = 1;
        stats.remaining_volume = 1.0;
        let outcome = CertOutcome::Inconclusive {
            worst_bound: f64::INFINITY,
            boxes_remaining: 1,
            boxes_processed: 0,
        };
        return Ok((outcome, stats));
    }

    let stacked = candidate.stacked();
    let taylor = taylor_data(system);
    let region_box: Vec<Interval64> =
        region.x_box.iter().chain(&region.u_box).copied().collect();
    let region_width: Vec<f64> = region_box.iter().map(|iv| iv.width()).collect();

    let evaluate = |x_sub: Vec<Interval64>,
                        u_sub: Vec<Interval64>,
                        depth: u32,
                        stats: &mut CertStats|
     -> Result<BoxNode, CertError> {
        let mut node = BoxNode { x_sub, u_sub, upper_bound: 0.0, depth };
        let (b, cert_won) =
            staged_bound(system, candidate, &stacked, taylor.as_ref(), &node, epsilon)?;
        if cert_won {
            stats.certificate_wins += 1;
        }
        node.upper_bound = b;
        stats.boxes_processed += 1;
        stats.max_depth_reached = stats.max_depth_reached.max(depth);
        Ok(node)
    };

    let mut heap = BinaryHeap::new();
    let mut uid = 0u64;
    let root = evaluate(region.x_box.clone(), region.u_box.clone(), 0, &mut stats)?;
    heap.push(Queued { node: root, uid, volume: 1.0 });
    uid += 1;

    let finish_remaining = |heap: &BinaryHeap<Queued>, extra: Option<f64>| {
        let mut count = heap.len() as u64;
        let mut vol: f64 = heap.iter().map(|q| q.volume).sum();
        if let Some(v) = extra {
            count += 1;
            vol += v;
        }
        (count, vol)
    };

    while let Some(popped) = heap.pop() {
        let Queued { node, volume, .. } = popped;
        if node.upper_bound <= epsilon {
            stats.retired += 1;
            stats.retired_volume += volume;
            stats.worst_retired_bound = stats.worst_retired_bound.max(node.upper_bound);
            continue;
        }

        // pointwise check at the midpoint before paying for a split
        let xm: Vec<f64> = node.x_sub.iter().map(|iv| iv.mid()).collect();
        let um: Vec<f64> = node.u_sub.iter().map(|iv| iv.mid()).collect();
        if region.contains(&xm, &um) {
            let data = farkas::build(system, candidate, &xm, &um)?;
            let dxm: Vec<f64> = xm.iter().zip(&system.x_s).map(|(a, b)| a - b).collect();
            let dum: Vec<f64> = um.iter().zip(&system.u_s).map(|(a, b)| a - b).collect();
            let images = candidate.vertex_images(&dxm, &dum);
            if hull_distance_or_vertex(&images, &data.delta_xp) > epsilon {
                if let Membership::Outside { witness } =
                    farkas::membership(system, candidate, &xm, &um)?
                {
                    match farkas::verify_witness(system, region, candidate, &witness, epsilon)
                    {
                        Ok(verified) => {
                            let (count, vol) = finish_remaining(&heap, Some(volume));
                            stats.remaining = count;
                            stats.remaining_volume = vol;
                            return Ok((CertOutcome::Falsified { witness: verified }, stats));
                        }
                        // an unverifiable near-threshold midpoint is not a
                        // counterexample; keep splitting instead
                        Err(FarkasError::Verification { .. }) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }

        let over_depth = node.depth as usize >= max_depth;
        let over_boxes = stats.boxes_processed + 2 > max_boxes as u64;
        let axis = {
            let widths: Vec<f64> = node
                .x_sub
                .iter()
                .chain(&node.u_sub)
                .zip(&region_width)
                .map(|(iv, &rw)| if rw > 0.0 { iv.width() / rw } else { 0.0 })
                .collect();
            argmax(&widths)
        };
        let splittable = {
            let iv = if axis < system.n_x {
                node.x_sub[axis]
            } else {
                node.u_sub[axis - system.n_x]
            };
            iv.width() > 0.0 && iv.mid() > iv.lo && iv.mid() < iv.hi
        };
        if over_depth || over_boxes || !splittable {
            let (count, vol) = finish_remaining(&heap, Some(volume));
            stats.remaining = count;
            stats.remaining_volume = vol;
            let outcome = CertOutcome::Inconclusive {
                worst_bound: node.upper_bound,
                boxes_remaining: count,
                boxes_processed: stats.boxes_processed,
            };
            return Ok((outcome, stats));
        }

        stats.splits += 1;
        let (lo_iv, hi_iv) = {
            let iv = if axis < system.n_x {
                node.x_sub[axis]
            } else {
                node.u_sub[axis - system.n_x]
            };
            let m = iv.mid();
            (Interval::new(iv.lo, m), Interval::new(m, iv.hi))
        };
        for part in [lo_iv, hi_iv] {
            let mut xs = node.x_sub.clone();
            let mut us = node.u_sub.clone();
            if axis < system.n_x {
                xs[axis] = part;
            } else {
                us[axis - system.n_x] = part;
            }
            let half = volume / 2.0;
            if box_excluded(region, &xs, &us) {
                stats.excluded += 1;
                stats.excluded_volume += half;
                continue;
            }
            let child = evaluate(xs, us, node.depth + 1, &mut stats)?;
            heap.push(Queued { node: child, uid, volume: half });
            uid += 1;
        }
    }

    stats.remaining = 0;
    stats.remaining_volume = 0.0;
    let outcome = CertOutcome::Certified {
        epsilon,
        boxes_processed: stats.boxes_processed,
        max_depth: stats.max_depth_reached,
    };
    Ok((outcome, stats))
}
