//! Properties the kernels must hold on arbitrary inputs: interval results
//! enclose point results, symbolic derivatives agree with finite
//! differences, printed expressions parse back, the cone projection is
//! optimal and scale-equivariant, box bounds dominate interior distances,
//! and mean-value candidates actually cover sampled successors.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use ldi::certify::{box_bound, refined_bound, BoxNode};
use ldi::expr::{self, parse, Expr, Func, VarRef};
use ldi::farkas::{self, CandidateLDI, DynamicalSystem, Membership, Region, VertexSystem};
use ldi::geometry::{hull_distance, nnls_project};
use ldi::interval::Interval;
use ldi::linalg::{norm2, Mat};
use ldi::search::{falsify, SearchConfig, SearchOutcome};
use ldi::{Expr64, Interval64};

fn func_strategy() -> impl Strategy<Value = Func> {
    prop::sample::select(vec![
        Func::Exp,
        Func::Ln,
        Func::Sin,
        Func::Cos,
        Func::Tanh,
        Func::Sqrt,
        Func::Abs,
    ])
}

/// Random expression over x1, x2, u1 built through the public constructors,
/// so it carries whatever simplifications they apply.
fn expr_strategy() -> impl Strategy<Value = Expr64> {
    let leaf = prop_oneof![
        (-2.0..2.0f64).prop_map(Expr::Const),
        Just(Expr::Var(VarRef::X(0))),
        Just(Expr::Var(VarRef::X(1))),
        Just(Expr::Var(VarRef::U(0))),
    ];
    leaf.prop_recursive(3, 24, 2, |inner| {
        prop_oneof![
            3 => (inner.clone(), inner.clone()).prop_map(|(a, b)| expr::add(a, b)),
            3 => (inner.clone(), inner.clone()).prop_map(|(a, b)| expr::sub(a, b)),
            3 => (inner.clone(), inner.clone()).prop_map(|(a, b)| expr::mul(a, b)),
            1 => (inner.clone(), inner.clone()).prop_map(|(a, b)| expr::div(a, b)),
            2 => inner.clone().prop_map(expr::neg),
            2 => (inner.clone(), 2u32..4).prop_map(|(a, n)| expr::powi(a, n)),
            1 => (inner.clone(), func_strategy()).prop_map(|(a, f)| expr::call(f, a)),
        ]
    })
}

fn box_strategy() -> impl Strategy<Value = Vec<Interval64>> {
    prop::collection::vec((-2.0..2.0f64, 0.0..1.5f64), 3)
        .prop_map(|dims| dims.into_iter().map(|(lo, w)| Interval::new(lo, lo + w)).collect())
}

proptest! {
    /// Whenever the interval evaluation of an expression over a box
    /// succeeds and is finite, every point evaluation inside the box
    /// succeeds and lands inside the interval.
    #[test]
    fn interval_evaluation_encloses_point_evaluations(
        e in expr_strategy(),
        bx in box_strategy(),
        seed in 0u64..1_000_000,
    ) {
        let (xb, ub) = bx.split_at(2);
        let iv = match e.eval_interval(xb, ub) {
            Ok(iv) if iv.is_finite() => iv,
            _ => return Ok(()),
        };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let pt: Vec<f64> = bx
                .iter()
                .map(|b| if b.width() > 0.0 { rng.gen_range(b.lo..=b.hi) } else { b.lo })
                .collect();
            let v = e
                .eval(&pt[..2], &pt[2..])
                .expect("point evaluation failed inside a box whose interval evaluation succeeded");
            prop_assert!(
                iv.lo <= v && v <= iv.hi,
                "value {v} escapes enclosure [{}, {}] at {pt:?} for `{e}`",
                iv.lo,
                iv.hi
            );
        }
    }

    /// Printing an expression and parsing it back preserves its value.
    #[test]
    fn printed_expressions_parse_back_to_the_same_values(
        e in expr_strategy(),
        seed in 0u64..1_000_000,
    ) {
        let text = e.to_string();
        let back: Expr64 = parse(&text, 2, 1)
            .unwrap_or_else(|err| panic!("`{text}` does not re-parse: {err}"));
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let pt: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = e.eval(&pt[..2], &pt[2..]);
            let b = back.eval(&pt[..2], &pt[2..]);
            prop_assert_eq!(a, b, "`{}` evaluates differently after a print/parse trip", text);
        }
    }

    /// The distance from a lifted point to the cone of lifted vertices
    /// never exceeds the plain distance to the convex hull: the cone
    /// contains the whole lifted hull slice.
    #[test]
    fn cone_distance_never_exceeds_hull_distance(
        verts in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 1..6),
        p in prop::collection::vec(-4.0..4.0f64, 3),
    ) {
        let (dh, w) = hull_distance(&verts, &p).unwrap();
        // the returned weights are a convex combination realizing dh
        let mut mix = vec![0.0; 3];
        for (wi, v) in w.iter().zip(&verts) {
            prop_assert!(*wi >= -1e-12, "negative hull weight {wi}");
            for (m, c) in mix.iter_mut().zip(v) {
                *m += wi * c;
            }
        }
        let wsum: f64 = w.iter().sum();
        prop_assert!((wsum - 1.0).abs() <= 1e-9, "hull weights sum to {wsum}");
        let resid: Vec<f64> = mix.iter().zip(&p).map(|(m, c)| m - c).collect();
        prop_assert!((norm2(&resid) - dh).abs() <= 1e-7 * (1.0 + dh));

        let m = Mat::from_fn(4, verts.len(), |i, j| if i < 3 { verts[j][i] } else { 1.0 });
        let mut b = p.clone();
        b.push(1.0);
        let proj = nnls_project(&m, &b).unwrap();
        prop_assert!(
            proj.distance <= dh + 1e-9,
            "cone distance {} exceeds hull distance {dh}",
            proj.distance
        );
    }

    /// Doubling the target doubles the projection: the cone is invariant
    /// under positive scaling, so distance and coefficients scale linearly.
    #[test]
    fn cone_projection_scales_linearly_with_the_target(
        cols in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 4), 1..5),
        b in prop::collection::vec(-3.0..3.0f64, 4),
    ) {
        let m = Mat::from_fn(4, cols.len(), |i, j| cols[j][i]);
        let b2: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
        let p1 = nnls_project(&m, &b).unwrap();
        let p2 = nnls_project(&m, &b2).unwrap();
        prop_assert!(
            (p2.distance - 2.0 * p1.distance).abs() <= 1e-12 * (1.0 + p1.distance),
            "distance {} vs doubled {}",
            p2.distance,
            2.0 * p1.distance
        );
    }
}

#[test]
fn symbolic_derivatives_match_richardson_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut checked = 0usize;
    while checked < 300 {
        let e = random_expr(&mut rng, 3);
        let vars = [VarRef::X(0), VarRef::X(1)];
        let var = vars[rng.gen_range(0..2)];
        let Ok(d) = e.differentiate(var) else { continue };
        let pt: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let Ok(sym) = d.eval(&pt, &[]) else { continue };
        let h = 1e-3;
        let eval_at = |t: f64| -> Option<f64> {
            let mut q = pt.clone();
            let j = match var {
                VarRef::X(j) => j,
                VarRef::U(_) => unreachable!(),
            };
            q[j] += t;
            e.eval(&q, &[]).ok()
        };
        let central = |h: f64| -> Option<f64> {
            Some((eval_at(h)? - eval_at(-h)?) / (2.0 * h))
        };
        let (Some(d1), Some(d2)) = (central(h), central(h / 2.0)) else { continue };
        let rich = (4.0 * d2 - d1) / 3.0;
        let wobble = (rich - d2).abs();
        // an unstable difference quotient says nothing; only score points
        // where halving the step already agrees with the extrapolation
        if wobble > 1e-4 * (1.0 + rich.abs()) || !rich.is_finite() {
            continue;
        }
        assert!(
            (sym - rich).abs() <= 50.0 * wobble + 1e-6 * (1.0 + rich.abs()),
            "derivative of `{e}` at {pt:?} along {var:?}: symbolic {sym}, finite difference {rich}"
        );
        checked += 1;
    }
}

/// RNG-driven expression generator for the plain tests (the proptest
/// strategy above cannot be reused outside proptest closures).
fn random_expr(rng: &mut ChaCha20Rng, depth: usize) -> Expr64 {
    if depth == 0 || rng.gen_bool(0.3) {
        return match rng.gen_range(0..4) {
            0 => Expr::Const(rng.gen_range(-2.0..2.0)),
            1 => Expr::Const(rng.gen_range(0.1..2.0)),
            2 => Expr::Var(VarRef::X(0)),
            _ => Expr::Var(VarRef::X(1)),
        };
    }
    let a = random_expr(rng, depth - 1);
    let b = random_expr(rng, depth - 1);
    match rng.gen_range(0..8) {
        0 => expr::add(a, b),
        1 => expr::sub(a, b),
        2 => expr::mul(a, b),
        3 => expr::div(a, b),
        4 => expr::neg(a),
        5 => expr::powi(a, rng.gen_range(2..4)),
        6 => expr::call(
            [Func::Exp, Func::Sin, Func::Cos, Func::Tanh][rng.gen_range(0..4)],
            a,
        ),
        _ => expr::call([Func::Ln, Func::Sqrt][rng.gen_range(0..2)], a),
    }
}

fn exponential_system() -> DynamicalSystem {
    DynamicalSystem::new(
        2,
        0,
        vec![parse("2^x1 + x2", 2, 0).unwrap(), parse("x1 + 2*x2", 2, 0).unwrap()],
        vec![1.0, -1.0],
        vec![],
    )
    .unwrap()
}

fn slope_candidate(lo: f64, hi: f64) -> CandidateLDI {
    let vertex = |s: f64| VertexSystem {
        a: Mat::from_rows(&[vec![s, 1.0], vec![1.0, 2.0]]),
        b: Mat::zeros(2, 0),
    };
    CandidateLDI::new(vec![vertex(lo), vertex(hi)], 2, 0).unwrap()
}

fn square_region() -> Region {
    Region::new(
        vec![Interval::new(-2.0, 2.0), Interval::new(-2.0, 2.0)],
        vec![],
        None,
        &[1.0, -1.0],
        &[],
    )
    .unwrap()
}

/// Plain hull distance from the deviation successor to the vertex images at
/// a point; what the box bounds promise to dominate.
fn point_distance(sys: &DynamicalSystem, cand: &CandidateLDI, x: &[f64]) -> f64 {
    let dx: Vec<f64> = x.iter().zip(&sys.x_s).map(|(a, b)| a - b).collect();
    let images = cand.vertex_images(&dx, &[]);
    let dxp = sys.delta_successor(x, &[]).unwrap();
    hull_distance(&images, &dxp).unwrap().0
}

#[test]
fn membership_always_returns_a_checkable_side() {
    let sys = exponential_system();
    let cand = slope_candidate(0.6, 1.9);
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let data = farkas::build(&sys, &cand, &x, &[]).unwrap();
        match farkas::membership(&sys, &cand, &x, &[]).unwrap() {
            Membership::Inside { alpha } => {
                let total: f64 = alpha.iter().sum();
                assert!((total - 1.0).abs() <= 1e-7, "coefficients sum to {total}");
                assert!(alpha.iter().all(|&a| a >= -1e-12));
                let back = data.m.matvec(&alpha);
                let err: Vec<f64> = back.iter().zip(&data.b).map(|(a, b)| a - b).collect();
                assert!(norm2(&err) <= 1e-7, "reconstruction error {}", norm2(&err));
            }
            Membership::Outside { witness } => {
                let y = &witness.y.y;
                assert!((norm2(y) - 1.0).abs() <= 1e-9, "separator norm {}", norm2(y));
                assert!(witness.objective < 0.0);
                assert!(
                    (witness.objective + witness.alpha_residual).abs()
                        <= 1e-7 * (1.0 + witness.alpha_residual),
                    "objective {} is not minus the projection distance {}",
                    witness.objective,
                    witness.alpha_residual
                );
                let grad = data.m.matvec_t(y);
                let scale = 1.0 + norm2(&data.b);
                assert!(
                    grad.iter().all(|&g| g >= -1e-7 * scale),
                    "separator sees a vertex image negatively: {grad:?}"
                );
            }
        }
    }
}

#[test]
fn cone_projection_satisfies_the_optimality_conditions() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let rows = rng.gen_range(1..=5);
        let cols = rng.gen_range(1..=6);
        let m = Mat::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0));
        let b: Vec<f64> = (0..rows).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let proj = nnls_project(&m, &b).unwrap();
        assert!(proj.alpha.iter().all(|&a| a >= 0.0));
        let resid: Vec<f64> = b.iter().zip(&proj.projection).map(|(x, y)| x - y).collect();
        assert!((norm2(&resid) - proj.distance).abs() <= 1e-12 * (1.0 + proj.distance));
        let grad = m.matvec_t(&resid);
        let tol = 1e-8 * (1.0 + norm2(&b));
        for (j, (&g, &a)) in grad.iter().zip(&proj.alpha).enumerate() {
            assert!(g <= tol, "column {j} could still reduce the residual: gradient {g}");
            if a > 1e-10 {
                assert!(g.abs() <= tol, "active column {j} has nonzero gradient {g}");
            }
        }
    }
}

#[test]
fn box_bounds_dominate_interior_hull_distances() {
    let sys = exponential_system();
    let cand = slope_candidate(0.5, 2.0);
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    for _ in 0..300 {
        let cx = rng.gen_range(-2.0..2.0);
        let cy = rng.gen_range(-2.0..2.0);
        let w = rng.gen_range(1e-4..1.0f64);
        let clip = |c: f64| Interval::new((c - w).max(-2.0), (c + w).min(2.0));
        let node = BoxNode {
            x_sub: vec![clip(cx), clip(cy)],
            u_sub: vec![],
            upper_bound: 0.0,
            depth: 0,
        };
        let literal = box_bound(&sys, &cand, &node).unwrap();
        let refined = refined_bound(&sys, &cand, &node, 1e-6).unwrap();
        assert!(refined <= literal + 1e-12 * (1.0 + literal));
        for _ in 0..20 {
            let x = [
                rng.gen_range(node.x_sub[0].lo..=node.x_sub[0].hi),
                rng.gen_range(node.x_sub[1].lo..=node.x_sub[1].hi),
            ];
            let d = point_distance(&sys, &cand, &x);
            assert!(
                d <= refined + 1e-9,
                "hull distance {d} at {x:?} exceeds the box bound {refined}"
            );
        }
    }
}

#[test]
fn shrinking_boxes_tighten_toward_the_point_distance() {
    let sys = exponential_system();
    let cand = slope_candidate(0.6, 1.9);
    let center = [-1.3, 0.4];
    let exact = point_distance(&sys, &cand, &center);
    let mut prev = f64::INFINITY;
    for k in 0..=10 {
        let w = (2.0f64).powi(-k) * 0.5;
        let node = BoxNode {
            x_sub: vec![
                Interval::new(center[0] - w, center[0] + w),
                Interval::new(center[1] - w, center[1] + w),
            ],
            u_sub: vec![],
            upper_bound: 0.0,
            depth: 0,
        };
        let b = box_bound(&sys, &cand, &node).unwrap();
        assert!(b >= exact - 1e-9, "bound {b} dips below the point distance {exact}");
        assert!(b <= prev + 1e-12, "bound grew from {prev} to {b} on a smaller box");
        assert!(
            b - exact <= 20.0 * w + 1e-9,
            "bound gap {} decays slower than the box width {w}",
            b - exact
        );
        prev = b;
    }
}

#[test]
fn mean_value_candidates_cover_sampled_successors() {
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    let region = Region::new(
        vec![Interval::new(-1.0, 1.0), Interval::new(-1.0, 1.0)],
        vec![],
        None,
        &[0.0, 0.0],
        &[],
    )
    .unwrap();
    for _ in 0..50 {
        let mut poly = || {
            let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();
            format!(
                "{}*x1 + {}*x2 + {}*x1^2 + {}*x1*x2 + {}*x2^2 + {}*x1^3",
                c[0], c[1], c[2], c[3], c[4], c[5]
            )
        };
        let f1 = poly();
        let f2 = poly();
        let sys = DynamicalSystem::new(
            2,
            0,
            vec![parse(&f1, 2, 0).unwrap(), parse(&f2, 2, 0).unwrap()],
            vec![0.0, 0.0],
            vec![],
        )
        .unwrap();
        let built = ldi::construct::mvt_build(&sys, &region, 1e-12).unwrap();
        for _ in 0..20 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let d = point_distance(&sys, &built.vertices, &x);
            assert!(
                d <= 1e-7,
                "successor of ({f1}, {f2}) at {x:?} leaves its mean-value hull by {d}"
            );
            let margin = farkas::margin(&sys, &built.vertices, &x, &[]).unwrap();
            assert!(margin >= -1e-7, "margin {margin} at {x:?}");
        }
    }
}

#[test]
fn reported_best_margin_matches_its_best_point() {
    let sys = exponential_system();
    let region = square_region();
    let cand = slope_candidate(0.5, 2.0);
    let config = SearchConfig { random_starts: 50, ..SearchConfig::default() };
    let (outcome, _) = falsify(&sys, &region, &cand, &config).unwrap();
    match outcome {
        SearchOutcome::NotFalsified { best_margin, best_point } => {
            let again = farkas::margin(&sys, &cand, &best_point.0, &best_point.1).unwrap();
            assert!(
                (again - best_margin).abs() <= 1e-12 * (1.0 + best_margin.abs()),
                "stored margin {best_margin} but the point re-evaluates to {again}"
            );
        }
        SearchOutcome::Falsified { witness } => {
            panic!("a valid slope pair was falsified at {:?}", witness.x)
        }
    }
}
