//! Candidate construction and tightening.
//!
//! The mean-value build takes the symbolic Jacobian of the dynamics,
//! encloses every entry over the region box with interval arithmetic, and
//! enumerates vertex matrices over the endpoint combinations of the entries
//! that actually vary. Any trajectory deviation is then a convex combination
//! of the vertex images, so the construction is valid by the mean value
//! theorem applied entrywise. Its conservatism (each entry relaxed
//! independently) is what [`tighten`] walks back: given a family
//! interpolating from a proven-valid candidate toward an aggressive one, it
//! bisects on the interpolation parameter against the falsifier and the
//! certifier.

use crate::certify::{self, CertError, CertOutcome};
use crate::expr::{EvalError, NonDifferentiable, VarRef};
use crate::farkas::{CandidateLDI, DynamicalSystem, Region, VertexSystem};
use crate::linalg::Mat;
use crate::search::{self, SearchConfig, SearchError, SearchOutcome};
use crate::Interval64;

/// Vertex-count ceiling for the mean-value build: 2^10 vertices.
pub const MAX_VARYING: usize = 10;
/// Jacobian entries whose interval is at most this wide are frozen at their
/// midpoint instead of spawning a vertex dimension.
pub const DEGENERACY_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum ConstructError {
    #[error("the dynamics are not differentiable, so the mean-value build does not apply")]
    NonDifferentiable,
    #[error("{varying} Jacobian entries vary over the region; 2^{varying} vertices exceeds the {MAX_VARYING}-entry ceiling")]
    TooManyVertices { varying: usize },
    #[error("the Jacobian enclosure is not finite over the region")]
    NonFiniteEnclosure,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<NonDifferentiable> for ConstructError {
    fn from(_: NonDifferentiable) -> Self {
        ConstructError::NonDifferentiable
    }
}

/// A candidate built from an interval enclosure of the Jacobian.
#[derive(Debug, Clone)]
pub struct MvtCandidate {
    /// Entrywise Jacobian enclosure over the region, n_x rows by n_x+n_u
    /// columns (state columns first).
    pub entry_intervals: Vec<Vec<Interval64>>,
    pub vertices: CandidateLDI,
    /// (row, col) of each entry wider than the degeneracy tolerance; bit k
    /// of a vertex index selects the upper endpoint of varying entry k.
    pub varying_entries: Vec<(usize, usize)>,
}

/// Enclose the Jacobian over the region box and enumerate endpoint vertices.
pub fn mvt_build(
    system: &DynamicalSystem,
    region: &Region,
    degeneracy_tol: f64,
) -> Result<MvtCandidate, ConstructError> {
    let n_x = system.n_x;
    let nz = n_x + system.n_u;
    let var = |j: usize| {
        if j < n_x {
            VarRef::X(j)
        } else {
            VarRef::U(j - n_x)
        }
    };

    let mut entry_intervals = Vec::with_capacity(n_x);
    for f in &system.f {
        let mut row = Vec::with_capacity(nz);
        for j in 0..nz {
            let d = f.differentiate(var(j))?;
            let iv = d.eval_interval(&region.x_box, &region.u_box)?;
            if !iv.is_finite() {
                return Err(ConstructError::NonFiniteEnclosure);
            }
            row.push(iv);
        }
        entry_intervals.push(row);
    }

    let mut varying_entries = Vec::new();
    for (k, row) in entry_intervals.iter().enumerate() {
        for (j, iv) in row.iter().enumerate() {
            if iv.width() > degeneracy_tol {
                varying_entries.push((k, j));
            }
        }
    }
    if varying_entries.len() > MAX_VARYING {
        return Err(ConstructError::TooManyVertices { varying: varying_entries.len() });
    }

    let count = 1usize << varying_entries.len();
    let mut vertices = Vec::with_capacity(count);
    for v in 0..count {
        let mut a = Mat::from_fn(n_x, n_x, |k, j| entry_intervals[k][j].mid());
        let mut b = Mat::from_fn(n_x, system.n_u, |k, j| entry_intervals[k][n_x + j].mid());
        for (bit, &(k, j)) in varying_entries.iter().enumerate() {
            let iv = entry_intervals[k][j];
            let val = if v >> bit & 1 == 1 { iv.hi } else { iv.lo };
            if j < n_x {
                a[(k, j)] = val;
            } else {
                b[(k, j - n_x)] = val;
            }
        }
        vertices.push(VertexSystem { a, b });
    }
    let vertices = CandidateLDI::new(vertices, n_x, system.n_u)
        .expect("vertex matrices are built with consistent finite dimensions");
    Ok(MvtCandidate { entry_intervals, vertices, varying_entries })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("family endpoints have different shapes")]
pub struct ShapeMismatch;

/// Entrywise affine interpolation between two candidates of the same shape.
#[derive(Debug, Clone)]
pub struct CandidateFamily {
    pub loose: CandidateLDI,
    pub tight: CandidateLDI,
}

impl CandidateFamily {
    pub fn new(loose: CandidateLDI, tight: CandidateLDI) -> Result<Self, ShapeMismatch> {
        if loose.n_d() != tight.n_d() {
            return Err(ShapeMismatch);
        }
        for (l, t) in loose.vertices.iter().zip(&tight.vertices) {
            if l.a.rows != t.a.rows
                || l.a.cols != t.a.cols
                || l.b.rows != t.b.rows
                || l.b.cols != t.b.cols
            {
                return Err(ShapeMismatch);
            }
        }
        Ok(CandidateFamily { loose, tight })
    }

    /// `(1−t)·loose + t·tight`; the endpoints are returned exactly.
    pub fn candidate(&self, t: f64) -> CandidateLDI {
        debug_assert!((0.0..=1.0).contains(&t), "interpolation parameter {t} outside [0,1]");
        if t == 0.0 {
            return self.loose.clone();
        }
        if t == 1.0 {
            return self.tight.clone();
        }
        let vertices = self
            .loose
            .vertices
            .iter()
            .zip(&self.tight.vertices)
            .map(|(l, r)| VertexSystem {
                a: l.a.scale(1.0 - t).add(&r.a.scale(t)),
                b: l.b.scale(1.0 - t).add(&r.b.scale(t)),
            })
            .collect();
        CandidateLDI { vertices }
    }
}

/// Budgets applied to every bisection probe.
#[derive(Debug, Clone)]
pub struct ProbeBudgets {
    pub search: SearchConfig,
    pub epsilon: f64,
    pub max_boxes: usize,
    pub max_depth: usize,
}

impl Default for ProbeBudgets {
    fn default() -> Self {
        ProbeBudgets {
            search: SearchConfig::default(),
            epsilon: 1e-6,
            max_boxes: 200_000,
            max_depth: 60,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TightenError {
    #[error("the loose endpoint of the family did not certify, so there is nothing to tighten from")]
    LooseEndpointNotCertified,
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Cert(#[from] CertError),
}

#[derive(Debug, Clone)]
pub struct TightenResult {
    /// Largest probed parameter whose candidate certified.
    pub t_star: f64,
    /// Smallest probed parameter whose candidate failed (falsified or
    /// inconclusive); 1 + t_tol when every probe certified.
    pub t_hi: f64,
    /// Certification outcome at t_star.
    pub outcome: CertOutcome,
    pub probes: u64,
    /// Probes that neither certified nor falsified within budget; they are
    /// treated as not certified, which keeps t_star sound but may leave it
    /// pessimistic.
    pub inconclusive_probes: u64,
}

enum ProbeStatus {
    Certified(CertOutcome),
    Falsified,
    Inconclusive,
}

fn probe(
    system: &DynamicalSystem,
    region: &Region,
    candidate: &CandidateLDI,
    budgets: &ProbeBudgets,
) -> Result<ProbeStatus, TightenError> {
    let (found, _) = search::falsify(system, region, candidate, &budgets.search)?;
    if let SearchOutcome::Falsified { .. } = found {
        return Ok(ProbeStatus::Falsified);
    }
    let (outcome, _) = certify::certify(
        system,
        region,
        candidate,
        budgets.epsilon,
        budgets.max_boxes,
        budgets.max_depth,
    )?;
    Ok(match outcome {
        CertOutcome::Certified { .. } => ProbeStatus::Certified(outcome),
        CertOutcome::Falsified { .. } => ProbeStatus::Falsified,
        CertOutcome::Inconclusive { .. } => ProbeStatus::Inconclusive,
    })
}

/// Bisect on the interpolation parameter for the largest candidate that
/// still certifies. A probe counts as certified only on a Certified
/// outcome; falsified and inconclusive probes both move the upper end of
/// the bracket down.
pub fn tighten(
    system: &DynamicalSystem,
    region: &Region,
    family: &CandidateFamily,
    t_tol: f64,
    budgets: &ProbeBudgets,
) -> Result<TightenResult, TightenError> {
    assert!(t_tol > 0.0, "t_tol must be positive");
    let mut probes = 0u64;
    let mut inconclusive = 0u64;

    let run = |t: f64, probes: &mut u64, inconclusive: &mut u64| {
        *probes += 1;
        let status = probe(system, region, &family.candidate(t), budgets)?;
        if matches!(status, ProbeStatus::Inconclusive) {
            *inconclusive += 1;
        }
        Ok::<ProbeStatus, TightenError>(status)
    };

    let ProbeStatus::Certified(mut best) = run(0.0, &mut probes, &mut inconclusive)? else {
        return Err(TightenError::LooseEndpointNotCertified);
    };
    let mut t_lo = 0.0f64;
    let mut t_hi = match run(1.0, &mut probes, &mut inconclusive)? {
        ProbeStatus::Certified(outcome) => {
            return Ok(TightenResult {
                t_star: 1.0,
                t_hi: 1.0 + t_tol,
                outcome,
                probes,
                inconclusive_probes: inconclusive,
            });
        }
        _ => 1.0,
    };

    while t_hi - t_lo > t_tol {
        let tm = 0.5 * (t_lo + t_hi);
        match run(tm, &mut probes, &mut inconclusive)? {
            ProbeStatus::Certified(outcome) => {
                t_lo = tm;
                best = outcome;
            }
            ProbeStatus::Falsified | ProbeStatus::Inconclusive => t_hi = tm,
        }
    }

    Ok(TightenResult {
        t_star: t_lo,
        t_hi,
        outcome: best,
        probes,
        inconclusive_probes: inconclusive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::farkas::tests::{
        cubic_system, exponential_system, region_around, slope_candidate, square_region,
    };
    use crate::interval::Interval;

    #[test]
    fn encloses_the_exponential_slope_entry() {
        let sys = exponential_system();
        let region = region_around(&[1.0, -1.0], 2.0);
        let built = mvt_build(&sys, &region, DEGENERACY_TOL).unwrap();
        assert_eq!(built.varying_entries, vec![(0, 0)]);
        assert_eq!(built.vertices.n_d(), 2);
        let iv = built.entry_intervals[0][0];
        // d(2^x1)/dx1 = 2^x1 ln 2 over [−2,2]: [ln2/4, 4 ln2]
        assert!((iv.lo - 0.17328679513998632).abs() < 1e-12, "lo {}", iv.lo);
        assert!((iv.hi - 2.772588722239781).abs() < 1e-9, "hi {}", iv.hi);
        let lo_vertex = &built.vertices.vertices[0];
        let hi_vertex = &built.vertices.vertices[1];
        assert_eq!(lo_vertex.a[(0, 0)], iv.lo);
        assert_eq!(hi_vertex.a[(0, 0)], iv.hi);
        for v in [lo_vertex, hi_vertex] {
            assert_eq!(v.a[(0, 1)], 1.0);
            assert_eq!(v.a[(1, 0)], 1.0);
            assert_eq!(v.a[(1, 1)], 2.0);
        }
    }

    #[test]
    fn constant_jacobian_gives_a_single_vertex() {
        let sys = DynamicalSystem::new(
            2,
            0,
            vec![parse("0.5*x1 + x2", 2, 0).unwrap(), parse("-0.25*x2", 2, 0).unwrap()],
            vec![0.0, 0.0],
            vec![],
        )
        .unwrap();
        let built = mvt_build(&sys, &square_region(1.0), DEGENERACY_TOL).unwrap();
        assert!(built.varying_entries.is_empty());
        assert_eq!(built.vertices.n_d(), 1);
        let a = &built.vertices.vertices[0].a;
        assert_eq!(a[(0, 0)], 0.5);
        assert_eq!(a[(0, 1)], 1.0);
        assert_eq!(a[(1, 0)], 0.0);
        assert_eq!(a[(1, 1)], -0.25);
    }

    #[test]
    fn cubic_jacobian_varies_in_all_four_entries() {
        let built = mvt_build(&cubic_system(), &square_region(1.0), DEGENERACY_TOL).unwrap();
        assert_eq!(built.varying_entries.len(), 4);
        assert_eq!(built.vertices.n_d(), 16);
        // 3x1^2 over [−1,1] and 2x2 over [−1,1]
        let j = &built.entry_intervals;
        assert!((j[0][0].lo - 0.0).abs() < 1e-12 && (j[0][0].hi - 3.0).abs() < 1e-12);
        assert!((j[0][1].lo + 2.0).abs() < 1e-12 && (j[0][1].hi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_varying_entries_is_an_error() {
        let n = 4;
        let f: Vec<_> = (0..n)
            .map(|k| {
                let (a, b) = ((k + 1) % n + 1, (k + 2) % n + 1);
                parse(&format!("x{a}*x{b} + x{}*x{}", (k + 3) % n + 1, k + 1, ), n, 0).unwrap()
            })
            .collect();
        let sys = DynamicalSystem::new(n, 0, f, vec![0.0; n], vec![]).unwrap();
        let region = Region::new(
            vec![Interval::new(-1.0, 1.0); n],
            vec![],
            None,
            &vec![0.0; n],
            &[],
        )
        .unwrap();
        match mvt_build(&sys, &region, DEGENERACY_TOL) {
            Err(ConstructError::TooManyVertices { varying }) => assert!(varying > MAX_VARYING),
            other => panic!("expected a vertex-count refusal, got {other:?}"),
        }
    }

    #[test]
    fn family_endpoints_are_exact() {
        let loose = slope_candidate(0.174, 2.77);
        let tight = slope_candidate(0.6, 1.9);
        let fam = CandidateFamily::new(loose.clone(), tight.clone()).unwrap();
        assert_eq!(fam.candidate(0.0).vertices[0].a[(0, 0)], 0.174);
        assert_eq!(fam.candidate(1.0).vertices[0].a[(0, 0)], 0.6);
        let mid = fam.candidate(0.5);
        assert!((mid.vertices[0].a[(0, 0)] - 0.387).abs() < 1e-15);
        assert!((mid.vertices[1].a[(0, 0)] - 2.335).abs() < 1e-15);
        // untouched entries interpolate to themselves
        assert_eq!(mid.vertices[0].a[(1, 1)], 2.0);
    }

    fn quick_budgets() -> ProbeBudgets {
        ProbeBudgets {
            search: SearchConfig { random_starts: 30, ..SearchConfig::default() },
            ..ProbeBudgets::default()
        }
    }

    #[test]
    fn identical_certified_endpoints_tighten_to_one() {
        let sys = exponential_system();
        let region = region_around(&[1.0, -1.0], 2.0);
        let cand = slope_candidate(0.5, 2.0);
        let fam = CandidateFamily::new(cand.clone(), cand).unwrap();
        let result = tighten(&sys, &region, &fam, 0.01, &quick_budgets()).unwrap();
        assert_eq!(result.t_star, 1.0);
        assert!(matches!(result.outcome, CertOutcome::Certified { .. }));
        assert_eq!(result.inconclusive_probes, 0);
    }

    #[test]
    fn uncertifiable_loose_endpoint_is_refused() {
        let sys = exponential_system();
        let region = region_around(&[1.0, -1.0], 2.0);
        let fam = CandidateFamily::new(slope_candidate(0.6, 1.9), slope_candidate(0.7, 1.8))
            .unwrap();
        assert!(matches!(
            tighten(&sys, &region, &fam, 0.01, &quick_budgets()),
            Err(TightenError::LooseEndpointNotCertified)
        ));
    }

    #[test]
    fn bisection_brackets_the_validity_boundary() {
        let sys = exponential_system();
        let region = region_around(&[1.0, -1.0], 2.0);
        let fam = CandidateFamily::new(slope_candidate(0.174, 2.77), slope_candidate(0.6, 1.9))
            .unwrap();
        let result = tighten(&sys, &region, &fam, 0.01, &quick_budgets()).unwrap();
        // the upper slope 2.77 − 0.87 t crosses the secant extreme 2.0 at
        // t = 0.77/0.87 ≈ 0.88506; the dyadic bracket around it at width
        // 2^-7 is [0.8828125, 0.890625]
        assert!(
            (result.t_star - 0.8828125).abs() < 1e-12,
            "t_star = {}",
            result.t_star
        );
        assert!((result.t_hi - 0.890625).abs() < 1e-12, "t_hi = {}", result.t_hi);
        assert!(result.t_hi - result.t_star <= 0.01 + 1e-12);
        assert!(matches!(result.outcome, CertOutcome::Certified { .. }));
        assert_eq!(result.inconclusive_probes, 0);
    }
}
