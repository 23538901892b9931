//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! Every tolerance is pinned in the assertions below. The suite is seeded
//! (seed 42 throughout) and runs in well under the time budget on a single
//! core with the workspace's optimized test profile.

use dcforge_core::expr::{ConvexExpr, Domain};
use dcforge_core::folded::{self, FoldedCase, FoldedSpec};
use dcforge_core::linalg::{self, Matrix};
use dcforge_core::piecewise::{self, PiecewiseLc1, QuadraticPiece};
use dcforge_core::polyhedral::Polyhedron;
use dcforge_core::qp::{self, QpInstance};
use dcforge_core::risk::{
    self, CenterSpec, DeviationKind, MeasureSpec, PwlUtility, RandomDcFunctional, ScenarioSet,
    WPolytope,
};
use dcforge_core::rng::SplitMix64;
use dcforge_core::verify;
use dcforge_core::Error;

const SEED: u64 = 42;

fn random_probs(s: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let raw: Vec<f64> = (0..s).map(|_| rng.uniform(0.2, 1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let head: f64 = p[..s - 1].iter().sum();
    p[s - 1] = 1.0 - head;
    p
}

fn random_convex_piece(rng: &mut SplitMix64, dim: usize) -> ConvexExpr {
    if rng.below(2) == 0 {
        ConvexExpr::affine(rng.uniform_vec(dim, -1.0, 1.0), rng.uniform(-1.0, 1.0))
    } else {
        let root = rng.uniform_vec(dim, -0.8, 0.8);
        let mut a = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                a.set(i, j, root[i] * root[j] + if i == j { 0.05 } else { 0.0 });
            }
        }
        ConvexExpr::quad_form(a, rng.uniform_vec(dim, -1.0, 1.0), rng.uniform(-1.0, 1.0))
            .expect("psd by construction")
    }
}

/// Random functional with S scenarios of quadratic/affine dc pieces on a
/// box domain of the given dimension.
fn random_functional(rng: &mut SplitMix64, s: usize, dim: usize) -> RandomDcFunctional {
    let probs = random_probs(s, rng);
    let pieces: Vec<(ConvexExpr, ConvexExpr)> = (0..s)
        .map(|_| (random_convex_piece(rng, dim), random_convex_piece(rng, dim)))
        .collect();
    RandomDcFunctional::new(
        ScenarioSet::new(probs).expect("valid probabilities"),
        pieces,
        Domain::from_box(vec![-1.0; dim], vec![1.0; dim]).unwrap(),
    )
    .unwrap()
}

fn random_utility(rng: &mut SplitMix64, pieces: usize) -> PwlUtility {
    let mut slopes = vec![rng.uniform(0.0, 0.9), rng.uniform(1.1, 3.0)];
    let mut intercepts = vec![0.0, 0.0];
    if pieces >= 3 {
        slopes.push(rng.uniform(0.0, 3.0));
        intercepts.push(rng.uniform(0.1, 1.0));
    }
    PwlUtility::new(slopes, intercepts).expect("valid utility")
}

fn rel_close(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * (1.0 + want.abs())
}

#[test]
fn criterion_1_risk_oracle_equivalence() {
    let mut rng = SplitMix64::new(SEED);
    let deviation_specs: Vec<MeasureSpec> = {
        let mut v = Vec::new();
        for kind in [DeviationKind::Sq, DeviationKind::SqrtSq, DeviationKind::Pos, DeviationKind::Abs]
        {
            for center in [CenterSpec::Mean, CenterSpec::Cvar(0.6), CenterSpec::Var(0.6)] {
                v.push(MeasureSpec::Deviation { kind, center });
            }
        }
        v
    };
    let mut measures_checked = 0usize;
    for instance in 0..500 {
        // mu needs pieces * scenarios <= 12 for the vertex enumeration.
        let i_count = 2 + rng.below(2); // 2 or 3 utility pieces
        let s_max = (12 / i_count).min(5);
        let s = 1 + rng.below(s_max);
        let dim = 1 + rng.below(3);
        let rf = random_functional(&mut rng, s, dim);
        let u = random_utility(&mut rng, i_count);
        let alpha = rng.uniform(0.1, 0.9);
        let sampler = rf.domain().sampler().unwrap();

        let mut specs: Vec<MeasureSpec> = vec![
            MeasureSpec::Cvar(alpha),
            MeasureSpec::Var(alpha),
            MeasureSpec::Oce(u.clone()),
            MeasureSpec::Mu(u.clone()),
            MeasureSpec::Variance,
            MeasureSpec::Std,
        ];
        specs.extend(deviation_specs.iter().cloned());
        for spec in &specs {
            let built = risk::measure_dc(spec, &rf)
                .unwrap_or_else(|e| panic!("instance {instance} {}: {e}", spec.describe()));
            measures_checked += 1;
            for _ in 0..20 {
                let x = sampler.sample(&mut rng);
                let want = risk::risk_oracle(spec, &rf, &x).unwrap();
                let got = built.value_unchecked(&x).unwrap();
                assert!(
                    rel_close(got, want, 1e-7),
                    "instance {instance} measure {} at {x:?}: dc {got} vs oracle {want}",
                    spec.describe()
                );
            }
        }
    }
    assert_eq!(measures_checked, 500 * 18);
    println!("criterion 1 (risk oracle equivalence, 500 instances x 18 measures): pass");
}

#[test]
fn criterion_2_var_cvar_linkage() {
    // S = 2 equal probabilities, alpha = 0.5, z = (0, 1).
    let w = WPolytope::new(0.5, &[0.5, 0.5]).unwrap();
    assert_eq!(w.vertices.len(), 1, "W must have exactly one vertex");
    assert!(linalg::dist2(&w.vertices[0], &[1.0, 1.0]) <= 1e-10);
    let rf = RandomDcFunctional::constant(
        ScenarioSet::uniform(2),
        &[0.0, 1.0],
        Domain::interval(-1.0, 1.0),
    )
    .unwrap();
    let cvar = risk::cvar_dc(&rf, 0.5).unwrap();
    let var = risk::var_dc(&rf, 0.5).unwrap();
    let at = [0.25];
    assert!((cvar.value(&at).unwrap() - 1.0).abs() <= 1e-10);
    assert!(var.value(&at).unwrap().abs() <= 1e-10);
    println!("criterion 2 (VaR-CVaR linkage on the two-point instance): pass");
}

#[test]
fn criterion_3_oce_specializes_to_cvar() {
    let mut rng = SplitMix64::new(SEED ^ 3);
    for instance in 0..100 {
        let s = 1 + rng.below(5);
        let dim = 1 + rng.below(2);
        let rf = random_functional(&mut rng, s, dim);
        let alpha = rng.uniform(0.1, 0.9);
        let u = PwlUtility::cvar_equivalent(alpha).unwrap();
        let oce = risk::oce_dc(&rf, &u).unwrap();
        let negated = rf.negated();
        let sampler = rf.domain().sampler().unwrap();
        for _ in 0..10 {
            let x = sampler.sample(&mut rng);
            let want = -risk::risk_oracle(&MeasureSpec::Cvar(alpha), &negated, &x).unwrap();
            let got = oce.value_unchecked(&x).unwrap();
            assert!(
                rel_close(got, want, 1e-8),
                "instance {instance}: oce {got} vs -cvar(-Z) {want}"
            );
        }
    }
    println!("criterion 3 (certainty equivalent specializes to -CVaR(-Z)): pass");
}

#[test]
fn criterion_4_deviation_identities() {
    let mut rng = SplitMix64::new(SEED ^ 4);
    // Mean-centered absolute deviation doubles the semi-deviation.
    for instance in 0..100 {
        let s = 1 + rng.below(5);
        let dim = 1 + rng.below(2);
        let rf = random_functional(&mut rng, s, dim);
        let asd = risk::deviation_dc(&rf, DeviationKind::Pos, CenterSpec::Mean).unwrap();
        let ad = risk::deviation_dc(&rf, DeviationKind::Abs, CenterSpec::Mean).unwrap();
        let sampler = rf.domain().sampler().unwrap();
        for _ in 0..10 {
            let x = sampler.sample(&mut rng);
            let two_asd = 2.0 * asd.value_unchecked(&x).unwrap();
            let ad_v = ad.value_unchecked(&x).unwrap();
            assert!(
                (ad_v - two_asd).abs() <= 1e-9 * (1.0 + ad_v.abs()),
                "instance {instance}: AD {ad_v} vs 2 ASD {two_asd}"
            );
        }
    }
    // The CVaR-centered analog genuinely fails on the two-point instance.
    let coin = RandomDcFunctional::constant(
        ScenarioSet::uniform(2),
        &[0.0, 1.0],
        Domain::interval(-1.0, 1.0),
    )
    .unwrap();
    let pos_c = risk::deviation_dc(&coin, DeviationKind::Pos, CenterSpec::Cvar(0.5)).unwrap();
    let abs_c = risk::deviation_dc(&coin, DeviationKind::Abs, CenterSpec::Cvar(0.5)).unwrap();
    let x = [0.0];
    let abs_v = abs_c.value(&x).unwrap();
    let two_pos = 2.0 * pos_c.value(&x).unwrap();
    assert!((abs_v - 0.5).abs() <= 1e-9);
    assert!(two_pos.abs() <= 1e-9);
    assert!((abs_v - two_pos).abs() > 0.4, "counterexample must separate the two");
    println!("criterion 4 (deviation identities and the CVaR-centered counterexample): pass");
}

/// Dense-grid brute force: minimize the objective over the feasible grid
/// points of a box anchored at b with the stated resolution.
fn brute_force_value(inst: &QpInstance, q: &[f64], b: &[f64], span: f64, step: f64) -> f64 {
    let m = inst.num_vars();
    let counts = (span / step).round() as usize + 1;
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; m];
    loop {
        let z: Vec<f64> = (0..m).map(|i| b[i] + step * idx[i] as f64).collect();
        let feasible = (0..inst.num_constraints())
            .all(|r| linalg::dot(inst.d_mat().row(r), &z) >= b[r] - 1e-12);
        if feasible {
            best = best.min(inst.objective(q, &z));
        }
        let mut ax = 0;
        loop {
            if ax == m {
                return best;
            }
            idx[ax] += 1;
            if idx[ax] < counts {
                break;
            }
            idx[ax] = 0;
            ax += 1;
        }
    }
}

#[test]
fn criterion_5_qp_value_function() {
    let mut rng = SplitMix64::new(SEED ^ 5);

    // Scalar instance: Q = 2, D = 1.
    let scalar = QpInstance::new(Matrix::scalar(2.0), Matrix::scalar(1.0)).unwrap();
    for _ in 0..10 {
        let q = [rng.uniform(-2.0, 2.0)];
        let b = [rng.uniform(-2.0, 2.0)];
        let direct = qp::qp_solve(&scalar, &q, &b).unwrap().value;
        let brute = brute_force_value(&scalar, &q, &b, 4.0, 1e-3);
        assert!((direct - brute).abs() <= 1e-4, "scalar: {direct} vs brute {brute}");
    }
    let region = Domain::from_box(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
    let pieces = qp::enumerate_pieces(&scalar, &region).unwrap();
    for i in 0..20 {
        for j in 0..20 {
            let q = -2.0 + 4.0 * i as f64 / 19.0;
            let b = -2.0 + 4.0 * j as f64 / 19.0;
            let direct = qp::qp_solve(&scalar, &[q], &[b]).unwrap().value;
            let piecewise_val = qp::min_over_pieces(&pieces, &[q, b]).unwrap();
            assert!(rel_close(piecewise_val, direct, 1e-6));
        }
    }
    let vdc_region = Domain::from_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let vdc = qp::value_dc(&scalar, &vdc_region).unwrap();
    let conv_g = verify::check_convexity(
        "vdc_g",
        |u| vdc.g().eval(u),
        &vdc_region,
        1000,
        1e-8,
        SEED,
    )
    .unwrap();
    let conv_h = verify::check_convexity(
        "vdc_h",
        |u| vdc.h().eval(u),
        &vdc_region,
        1000,
        1e-8,
        SEED ^ 1,
    )
    .unwrap();
    assert!(conv_g.pass && conv_h.pass, "value_dc components must be convex");
    let sampler = vdc_region.sampler().unwrap();
    for _ in 0..50 {
        let u = sampler.sample(&mut rng);
        let direct = qp::qp_solve(&scalar, &u[..1], &u[1..]).unwrap().value;
        assert!(rel_close(vdc.value_unchecked(&u).unwrap(), direct, 1e-6));
    }

    // Indefinite-but-copositive instance: Q = [[0,1],[1,0]], D = I.
    let offdiag = QpInstance::new(
        Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
        Matrix::identity(2),
    )
    .unwrap();
    for _ in 0..5 {
        let q = [rng.uniform(0.3, 1.2), rng.uniform(0.3, 1.2)];
        let b = [rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)];
        let direct = qp::qp_solve(&offdiag, &q, &b).unwrap().value;
        let brute = brute_force_value(&offdiag, &q, &b, 2.0, 1e-3);
        assert!((direct - brute).abs() <= 1e-4, "offdiag: {direct} vs brute {brute}");
    }
    let region4 =
        Domain::from_box(vec![0.3, 0.3, -0.2, -0.2], vec![1.2, 1.2, 0.2, 0.2]).unwrap();
    let pieces4 = qp::enumerate_pieces(&offdiag, &region4).unwrap();
    // 20 x 20 parameter grid over the (q1, b1) slice.
    for i in 0..20 {
        for j in 0..20 {
            let q1 = 0.3 + 0.9 * i as f64 / 19.0;
            let b1 = -0.2 + 0.4 * j as f64 / 19.0;
            let u = [q1, 0.7, b1, 0.0];
            let direct = qp::qp_solve(&offdiag, &u[..2], &u[2..]).unwrap().value;
            let piecewise_val = qp::min_over_pieces(&pieces4, &u).unwrap();
            assert!(rel_close(piecewise_val, direct, 1e-6));
        }
    }
    let vdc4 = qp::value_dc(&offdiag, &region4).unwrap();
    let sampler4 = region4.sampler().unwrap();
    for _ in 0..50 {
        let u = sampler4.sample(&mut rng);
        let direct = qp::qp_solve(&offdiag, &u[..2], &u[2..]).unwrap().value;
        assert!(rel_close(vdc4.value_unchecked(&u).unwrap(), direct, 1e-6));
    }
    let conv4_g =
        verify::check_convexity("vdc4_g", |u| vdc4.g().eval(u), &region4, 1000, 1e-8, SEED ^ 2)
            .unwrap();
    let conv4_h =
        verify::check_convexity("vdc4_h", |u| vdc4.h().eval(u), &region4, 1000, 1e-8, SEED ^ 3)
            .unwrap();
    assert!(conv4_g.pass && conv4_h.pass);
    println!("criterion 5 (QP value function vs brute force, pieces, and dc): pass");
}

#[test]
fn criterion_6_eaves_domain_test() {
    let inst = QpInstance::new(Matrix::scalar(0.0), Matrix::scalar(1.0)).unwrap();
    let mut rng = SplitMix64::new(SEED ^ 6);
    let mut misclassified = 0;
    for _ in 0..200 {
        let q = rng.uniform(-1.0, 1.0);
        let b = rng.uniform(-1.0, 1.0);
        let expect = q >= 0.0;
        let got = qp::dom_membership(&inst, &[q], &[b]).unwrap();
        if got != expect {
            misclassified += 1;
        }
    }
    assert_eq!(misclassified, 0, "domain test must match the sign of q exactly");
    println!("criterion 6 (domain of finiteness matches the sign rule, 200 points): pass");
}

#[test]
fn criterion_7_piecewise_min_representation() {
    let mut rng = SplitMix64::new(SEED ^ 7);

    // |x| from its two affine pieces.
    let abs_pw = PiecewiseLc1::new(
        vec![
            QuadraticPiece::affine(vec![1.0], 0.0),
            QuadraticPiece::affine(vec![-1.0], 0.0),
        ],
        vec![
            Polyhedron::from_box(&[0.0], &[f64::INFINITY]).unwrap(),
            Polyhedron::from_box(&[f64::NEG_INFINITY], &[0.0]).unwrap(),
        ],
        Domain::interval(-2.0, 2.0),
    )
    .unwrap();
    let abs_rep = piecewise::build_min_representation(&abs_pw).unwrap();
    for _ in 0..1000 {
        let x = rng.uniform(-2.0, 2.0);
        let got = abs_rep.theta.value(&[x]).unwrap();
        assert!((got - x.abs()).abs() <= 1e-8);
        for psi in &abs_rep.majorants {
            assert!(psi.value(&[x]).unwrap() >= x.abs() - 1e-8);
        }
    }

    // min(x^2, (x-1)^2) split at 1/2.
    let par_pw = PiecewiseLc1::new(
        vec![
            QuadraticPiece::new(Matrix::scalar(2.0), vec![0.0], 0.0).unwrap(),
            QuadraticPiece::new(Matrix::scalar(2.0), vec![-2.0], 1.0).unwrap(),
        ],
        vec![
            Polyhedron::from_box(&[f64::NEG_INFINITY], &[0.5]).unwrap(),
            Polyhedron::from_box(&[0.5], &[f64::INFINITY]).unwrap(),
        ],
        Domain::interval(-1.0, 2.0),
    )
    .unwrap();
    let par_rep = piecewise::build_min_representation(&par_pw).unwrap();
    for _ in 0..1000 {
        let x = rng.uniform(-1.0, 2.0);
        let want = (x * x).min((x - 1.0) * (x - 1.0));
        let got = par_rep.theta.value(&[x]).unwrap();
        assert!((got - want).abs() <= 1e-8, "x = {x}: {got} vs {want}");
        for psi in &par_rep.majorants {
            assert!(psi.value(&[x]).unwrap() >= want - 1e-8);
        }
    }

    // 50 random continuous 3-piece univariate piecewise-affine functions.
    for trial in 0..50 {
        let xi1 = rng.uniform(-1.5, 0.0);
        let xi2 = rng.uniform(0.2, 1.5);
        let slopes = [
            rng.uniform(-2.0, 2.0),
            rng.uniform(-2.0, 2.0),
            rng.uniform(-2.0, 2.0),
        ];
        let y1 = rng.uniform(-1.0, 1.0);
        // Anchor each piece so the selection is continuous at the joints.
        let a0 = (slopes[0], y1 - slopes[0] * xi1);
        let a1 = (slopes[1], y1 - slopes[1] * xi1);
        let y2 = a1.0 * xi2 + a1.1;
        let a2 = (slopes[2], y2 - slopes[2] * xi2);
        let pieces = vec![
            QuadraticPiece::affine(vec![a0.0], a0.1),
            QuadraticPiece::affine(vec![a1.0], a1.1),
            QuadraticPiece::affine(vec![a2.0], a2.1),
        ];
        let regions = vec![
            Polyhedron::from_box(&[f64::NEG_INFINITY], &[xi1]).unwrap(),
            Polyhedron::from_box(&[xi1], &[xi2]).unwrap(),
            Polyhedron::from_box(&[xi2], &[f64::INFINITY]).unwrap(),
        ];
        let hull = Domain::interval(-3.0, 3.0);
        let theta = piecewise::pwa_min_representation(&pieces, &regions, &hull).unwrap();
        let direct = |x: f64| -> f64 {
            if x <= xi1 {
                a0.0 * x + a0.1
            } else if x <= xi2 {
                a1.0 * x + a1.1
            } else {
                a2.0 * x + a2.1
            }
        };
        for _ in 0..500 {
            let x = rng.uniform(-3.0, 3.0);
            let got = theta.value(&[x]).unwrap();
            let want = direct(x);
            assert!(
                (got - want).abs() <= 1e-8 * (1.0 + want.abs()),
                "trial {trial}, x = {x}: {got} vs {want}"
            );
        }
    }
    println!("criterion 7 (piecewise min-representations and majorization): pass");
}

#[test]
fn criterion_8_folded_concave_cases() {
    // Case with vanishing right derivative: decomposes as purely concave.
    let concave = FoldedSpec::fig_concave(10.0).unwrap();
    let dec_a = folded::decompose(&concave).unwrap();
    assert_eq!(dec_a.case, FoldedCase::Concave);

    // Finite crossing case: crossings at -4 and 4.
    let crossing = FoldedSpec::fig_crossing(10.0).unwrap();
    let dec_b1 = folded::decompose(&crossing).unwrap();
    match dec_b1.case {
        FoldedCase::MaxOfConcaves { t_minus, t_plus } => {
            assert!((t_minus + 4.0).abs() <= 1e-8, "t_minus = {t_minus}");
            assert!((t_plus - 4.0).abs() <= 1e-8, "t_plus = {t_plus}");
        }
        other => panic!("unexpected case {other:?}"),
    }

    // Square-root case: the reported negative-side crossing sits at -8.
    let sqrtish = FoldedSpec::sqrt1p(10.0).unwrap();
    let dec_b2 = folded::decompose(&sqrtish).unwrap();
    match dec_b2.case {
        FoldedCase::MaxOfConcaves { t_minus, .. } => {
            assert!((t_minus + 8.0).abs() <= 1e-8, "t_minus = {t_minus}");
        }
        other => panic!("unexpected case {other:?}"),
    }

    // Reconstruction within 1e-8 across the working interval for all three.
    let mut rng = SplitMix64::new(SEED ^ 8);
    for (spec, dec) in [(&concave, &dec_a), (&crossing, &dec_b1), (&sqrtish, &dec_b2)] {
        for _ in 0..1000 {
            let t = rng.uniform(-10.0, 10.0);
            let got = dec.dc.value(&[t]).unwrap();
            let want = spec.eval_theta(t);
            assert!(
                (got - want).abs() <= 1e-8 * (1.0 + want.abs()),
                "{}: t = {t}, {got} vs {want}",
                spec.label()
            );
        }
    }

    // The square-root of |t| is rejected.
    let sqrt_abs = FoldedSpec::sqrt_abs(10.0).unwrap();
    assert!(matches!(folded::decompose(&sqrt_abs), Err(Error::NotDc(_))));
    println!("criterion 8 (folded concave cases, crossings, and the rejection): pass");
}

#[test]
fn criterion_9_deterministic_reports() {
    let first = verify::run_full_suite(SEED).unwrap();
    let second = verify::run_full_suite(SEED).unwrap();
    let a = serde_json::to_string(&first).unwrap();
    let b = serde_json::to_string(&second).unwrap();
    assert_eq!(a, b, "two runs with seed 42 must serialize identically");
    assert!(first.iter().all(|c| c.pass), "the built-in battery must pass");
    println!("criterion 9 (byte-identical reports under seed 42): pass");
}
