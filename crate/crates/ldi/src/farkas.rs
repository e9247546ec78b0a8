//! Assembly and pointwise evaluation of the inclusion certificate data.
//!
//! For a point `(x,u)` the data is the matrix `M` whose columns are the
//! lifted vertex images `(Ā_i δx + B̄_i δu ; 1)` and the lifted deviation
//! successor `b = (f(x,u) − x_s ; 1)`. The deviation successor lies in the
//! convex hull of the vertex images exactly when `b` lies in the cone spanned
//! by the columns of `M` (the all-ones row makes the coefficients sum to one).
//! The signed margin at the point is minus the Euclidean distance from `b` to
//! that cone, which is the exact inner optimum over unit-ball separators.

use crate::expr::EvalError;
use crate::geometry::{self, GeomError, SeparatingDirection};
use crate::interval::Interval;
use crate::linalg::{dot, norm2, norm_inf, Mat};
use crate::{Expr64, Interval64, Mat64};

/// Tolerance deciding pointwise hull membership.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// Default verified-falsification threshold: a witness only counts when its
/// rigorously enclosed objective is below minus this.
pub const FALSIFY_THRESHOLD: f64 = 1e-6;
/// Slack on halfspace constraints `Fx + Eu ≤ 1`.
pub const HALFSPACE_TOL: f64 = 1e-12;
/// Largest `‖f(x_s,u_s) − x_s‖∞` accepted as an equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SystemError {
    #[error("equilibrium residual {residual:e} exceeds {EQUILIBRIUM_TOL:e}")]
    EquilibriumResidual { residual: f64 },
    #[error("dimension mismatch in {field}")]
    Dimension { field: &'static str },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegionError {
    #[error("region bounds must be finite, with lo ≤ hi")]
    BadBounds,
    #[error("dimension mismatch in {field}")]
    Dimension { field: &'static str },
    #[error("the equilibrium pair is not strictly inside the region")]
    ExcludesEquilibrium,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CandidateError {
    #[error("a candidate needs at least one vertex")]
    Empty,
    #[error("vertex {index} has inconsistent dimensions")]
    Dimension { index: usize },
    #[error("vertex {index} has non-finite entries")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FarkasError {
    #[error("separator norm ‖y‖² = {norm_sq} exceeds the unit ball")]
    NormViolation { norm_sq: f64 },
    #[error("witness verification failed: {condition}")]
    Verification { condition: &'static str },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Discrete-time dynamics `x⁺ = f(x,u)` with a checked equilibrium pair.
#[derive(Debug, Clone)]
pub struct DynamicalSystem {
    pub n_x: usize,
    pub n_u: usize,
    pub f: Vec<Expr64>,
    pub x_s: Vec<f64>,
    pub u_s: Vec<f64>,
}

impl DynamicalSystem {
    pub fn new(
        n_x: usize,
        n_u: usize,
        f: Vec<Expr64>,
        x_s: Vec<f64>,
        u_s: Vec<f64>,
    ) -> Result<Self, SystemError> {
        if f.len() != n_x {
            return Err(SystemError::Dimension { field: "dynamics" });
        }
        if x_s.len() != n_x {
            return Err(SystemError::Dimension { field: "x_s" });
        }
        if u_s.len() != n_u {
            return Err(SystemError::Dimension { field: "u_s" });
        }
        let sys = DynamicalSystem { n_x, n_u, f, x_s, u_s };
        let fx = sys.eval_f(&sys.x_s, &sys.u_s)?;
        let residual =
            norm_inf(&fx.iter().zip(&sys.x_s).map(|(a, b)| a - b).collect::<Vec<_>>());
        if residual > EQUILIBRIUM_TOL {
            return Err(SystemError::EquilibriumResidual { residual });
        }
        Ok(sys)
    }

    pub fn eval_f(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.f.iter().map(|e| e.eval(x, u)).collect()
    }

    /// `f(x,u) − x_s`.
    pub fn delta_successor(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, EvalError> {
        let fx = self.eval_f(x, u)?;
        Ok(fx.iter().zip(&self.x_s).map(|(a, b)| a - b).collect())
    }
}

#[derive(Debug, Clone)]
pub struct Halfspaces {
    /// Row-major `F`, one row per constraint.
    pub f: Mat64,
    /// Matching `E` (zero columns when there are no inputs).
    pub e: Mat64,
}

/// Compact operating region: a box, optionally cut by halfspaces `Fx+Eu ≤ 1`.
#[derive(Debug, Clone)]
pub struct Region {
    pub x_box: Vec<Interval64>,
    pub u_box: Vec<Interval64>,
    pub halfspaces: Option<Halfspaces>,
}

impl Region {
    pub fn new(
        x_box: Vec<Interval64>,
        u_box: Vec<Interval64>,
        halfspaces: Option<Halfspaces>,
        x_s: &[f64],
        u_s: &[f64],
    ) -> Result<Self, RegionError> {
        if x_box.len() != x_s.len() {
            return Err(RegionError::Dimension { field: "x_box" });
        }
        if u_box.len() != u_s.len() {
            return Err(RegionError::Dimension { field: "u_box" });
        }
        for iv in x_box.iter().chain(&u_box) {
            if !iv.is_finite() || iv.lo > iv.hi {
                return Err(RegionError::BadBounds);
            }
        }
        if let Some(h) = &halfspaces {
            if h.f.cols != x_s.len() || h.e.cols != u_s.len() || h.f.rows != h.e.rows {
                return Err(RegionError::Dimension { field: "halfspaces" });
            }
            if !h.f.is_finite() || !h.e.is_finite() {
                return Err(RegionError::BadBounds);
            }
        }
        let region = Region { x_box, u_box, halfspaces };
        let strictly_inside = region
            .x_box
            .iter()
            .zip(x_s)
            .chain(region.u_box.iter().zip(u_s))
            .all(|(iv, &v)| iv.lo < v && v < iv.hi || (iv.lo == iv.hi && iv.lo == v));
        let strict_halfspaces = region.halfspace_values(x_s, u_s).iter().all(|&v| v < 1.0);
        if !strictly_inside || !strict_halfspaces {
            return Err(RegionError::ExcludesEquilibrium);
        }
        Ok(region)
    }

    fn halfspace_values(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.halfspaces {
            None => Vec::new(),
            Some(h) => {
                let fx = h.f.matvec(x);
                let eu = h.e.matvec(u);
                fx.iter().zip(&eu).map(|(a, b)| a + b).collect()
            }
        }
    }

    pub fn contains(&self, x: &[f64], u: &[f64]) -> bool {
        let in_box = self
            .x_box
            .iter()
            .zip(x)
            .chain(self.u_box.iter().zip(u))
            .all(|(iv, &v)| iv.contains(v));
        in_box && self.halfspace_values(x, u).iter().all(|&v| v <= 1.0 + HALFSPACE_TOL)
    }
}

/// One vertex system of a candidate inclusion.
#[derive(Debug, Clone)]
pub struct VertexSystem {
    pub a: Mat64,
    pub b: Mat64,
}

/// Candidate polytopic inclusion: the list of vertex systems.
#[derive(Debug, Clone)]
pub struct CandidateLDI {
    pub vertices: Vec<VertexSystem>,
}

impl CandidateLDI {
    pub fn new(vertices: Vec<VertexSystem>, n_x: usize, n_u: usize) -> Result<Self, CandidateError> {
        if vertices.is_empty() {
            return Err(CandidateError::Empty);
        }
        for (index, v) in vertices.iter().enumerate() {
            if v.a.rows != n_x || v.a.cols != n_x || v.b.rows != n_x || v.b.cols != n_u {
                return Err(CandidateError::Dimension { index });
            }
            if !v.a.is_finite() || !v.b.is_finite() {
                return Err(CandidateError::NonFinite { index });
            }
        }
        Ok(CandidateLDI { vertices })
    }

    pub fn n_d(&self) -> usize {
        self.vertices.len()
    }

    /// Vertex image `Ā_i δx + B̄_i δu` for every vertex.
    pub fn vertex_images(&self, dx: &[f64], du: &[f64]) -> Vec<Vec<f64>> {
        self.vertices
            .iter()
            .map(|v| {
                let mut img = v.a.matvec(dx);
                let bu = v.b.matvec(du);
                for (a, b) in img.iter_mut().zip(&bu) {
                    *a += *b;
                }
                img
            })
            .collect()
    }

    /// `[Ā_i | B̄_i]` acting on the stacked deviation `(δx; δu)`.
    pub fn stacked(&self) -> Vec<Mat64> {
        self.vertices
            .iter()
            .map(|v| {
                let n_x = v.a.rows;
                let n_u = v.b.cols;
                Mat::from_fn(n_x, n_x + n_u, |i, j| {
                    if j < n_x {
                        v.a[(i, j)]
                    } else {
                        v.b[(i, j - n_x)]
                    }
                })
            })
            .collect()
    }
}

/// The pointwise certificate data.
#[derive(Debug, Clone)]
pub struct FarkasData {
    /// `(n_x+1) × n_d`; column i is the lifted vertex image.
    pub m: Mat64,
    /// Lifted deviation successor; last entry exactly 1.
    pub b: Vec<f64>,
    pub delta_x: Vec<f64>,
    pub delta_u: Vec<f64>,
    pub delta_xp: Vec<f64>,
}

/// Falsification candidate: a point, its separator, and verification state.
#[derive(Debug, Clone)]
pub struct Witness {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub y: SeparatingDirection,
    /// `bᵀy` at the witness.
    pub objective: f64,
    /// Distance from `b` to the cone (the NNLS residual norm).
    pub alpha_residual: f64,
    /// Cone coefficients of the projection, normalized to sum one when the
    /// projection is on the lifted slice.
    pub alpha: Vec<f64>,
    pub verified: bool,
}

pub fn build(
    system: &DynamicalSystem,
    candidate: &CandidateLDI,
    x: &[f64],
    u: &[f64],
) -> Result<FarkasData, EvalError> {
    let delta_x: Vec<f64> = x.iter().zip(&system.x_s).map(|(a, b)| a - b).collect();
    let delta_u: Vec<f64> = u.iter().zip(&system.u_s).map(|(a, b)| a - b).collect();
    let delta_xp = system.delta_successor(x, u)?;
    let images = candidate.vertex_images(&delta_x, &delta_u);
    let nd = images.len();
    let m = Mat::from_fn(system.n_x + 1, nd, |i, j| {
        if i < system.n_x {
            images[j][i]
        } else {
            1.0
        }
    });
    let mut b = delta_xp.clone();
    b.push(1.0);
    Ok(FarkasData { m, b, delta_x, delta_u, delta_xp })
}

/// `bᵀy` under the unit-ball precondition on `y`.
pub fn objective(data: &FarkasData, y: &[f64]) -> Result<f64, FarkasError> {
    let norm_sq = dot(y, y);
    if norm_sq > 1.0 + 1e-9 {
        return Err(FarkasError::NormViolation { norm_sq });
    }
    Ok(dot(&data.b, y))
}

/// Exact inner optimum of the separator problem at a fixed point: minus the
/// distance from `b` to the cone of lifted vertex images. Zero exactly when
/// the point admits valid hull coefficients.
pub fn margin(
    system: &DynamicalSystem,
    candidate: &CandidateLDI,
    x: &[f64],
    u: &[f64],
) -> Result<f64, FarkasError> {
    let data = build(system, candidate, x, u)?;
    let proj = geometry::nnls_project(&data.m, &data.b)?;
    Ok(-proj.distance)
}

#[derive(Debug, Clone)]
pub enum Membership {
    Inside { alpha: Vec<f64> },
    Outside { witness: Witness },
}

/// Pointwise dichotomy: valid hull coefficients, or a separating witness.
pub fn membership(
    system: &DynamicalSystem,
    candidate: &CandidateLDI,
    x: &[f64],
    u: &[f64],
) -> Result<Membership, FarkasError> {
    let data = build(system, candidate, x, u)?;
    let proj = geometry::nnls_project(&data.m, &data.b)?;
    if proj.distance <= MEMBERSHIP_TOL {
        let total: f64 = proj.alpha.iter().sum();
        let alpha = if total > 0.0 {
            proj.alpha.iter().map(|a| a / total).collect()
        } else {
            proj.alpha.clone()
        };
        return Ok(Membership::Inside { alpha });
    }
    let y = geometry::separating_direction(&data.m, &data.b, &proj)?;
    let objective = y.violation;
    Ok(Membership::Outside {
        witness: Witness {
            x: x.to_vec(),
            u: u.to_vec(),
            y,
            objective,
            alpha_residual: proj.distance,
            alpha: proj.alpha,
            verified: false,
        },
    })
}

/// Re-check a witness with outward-rounded interval arithmetic. `b` is
/// recomputed by evaluating `f` on the degenerate box at the witness point, so
/// the decision `bᵀy < −threshold` holds over every rounding of the data.
pub fn verify_witness(
    system: &DynamicalSystem,
    region: &Region,
    candidate: &CandidateLDI,
    w: &Witness,
    threshold: f64,
) -> Result<Witness, FarkasError> {
    let finite = w.x.iter().chain(&w.u).chain(&w.y.y).all(|v| v.is_finite());
    if !finite {
        return Err(FarkasError::Verification { condition: "finiteness" });
    }
    if w.y.y.len() != system.n_x + 1 {
        return Err(FarkasError::Verification { condition: "separator dimension" });
    }
    if !region.contains(&w.x, &w.u) {
        return Err(FarkasError::Verification { condition: "region membership" });
    }
    let norm = norm2(&w.y.y);
    if (norm - 1.0).abs() > 1e-9 {
        return Err(FarkasError::Verification { condition: "separator norm" });
    }

    let xi: Vec<Interval64> = w.x.iter().map(|&v| Interval::point(v)).collect();
    let ui: Vec<Interval64> = w.u.iter().map(|&v| Interval::point(v)).collect();
    let dx: Vec<Interval64> = xi
        .iter()
        .zip(&system.x_s)
        .map(|(iv, &s)| iv.sub(Interval::point(s)))
        .collect();
    let du: Vec<Interval64> = ui
        .iter()
        .zip(&system.u_s)
        .map(|(iv, &s)| iv.sub(Interval::point(s)))
        .collect();

    // cone side: every lifted vertex image must see y nonnegatively
    for v in &candidate.vertices {
        let mut acc = Interval::point(w.y.y[system.n_x]); // the all-ones row
        for i in 0..system.n_x {
            let mut row = Interval::point(0.0);
            for (j, dxi) in dx.iter().enumerate() {
                row = row.add(dxi.scale(v.a[(i, j)]));
            }
            for (j, dui) in du.iter().enumerate() {
                row = row.add(dui.scale(v.b[(i, j)]));
            }
            acc = acc.add(row.scale(w.y.y[i]));
        }
        if acc.lo < -1e-9 {
            return Err(FarkasError::Verification { condition: "cone inequality" });
        }
    }

    // objective side: enclose bᵀy and demand it stays below the threshold
    let mut obj = Interval::point(w.y.y[system.n_x]);
    for (k, e) in system.f.iter().enumerate() {
        let fk = e.eval_interval(&xi, &ui)?;
        let dk = fk.sub(Interval::point(system.x_s[k]));
        obj = obj.add(dk.scale(w.y.y[k]));
    }
    if !(obj.hi < -threshold) {
        return Err(FarkasError::Verification { condition: "objective enclosure" });
    }

    let mut out = w.clone();
    out.objective = obj.mid();
    out.verified = true;
    Ok(out)
}
