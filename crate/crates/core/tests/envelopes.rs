//! Envelope breakpoint scans against an independent golden-section search.
//!
//! The auxiliary objectives minimized by the envelope nodes are piecewise
//! linear and convex in their scalar variable, so golden-section search on
//! a bracket spanning the breakpoints is a valid independent minimizer.

use dcforge_core::expr::ConvexExpr;
use dcforge_core::linalg::Matrix;
use dcforge_core::rng::SplitMix64;

/// Golden-section minimum of a unimodal function on [lo, hi].
fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = 0.618_033_988_749_894_8;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    f(0.5 * (lo + hi))
}

fn random_convex_piece(rng: &mut SplitMix64, dim: usize) -> ConvexExpr {
    match rng.below(3) {
        0 => ConvexExpr::affine(rng.uniform_vec(dim, -1.0, 1.0), rng.uniform(-1.0, 1.0)),
        1 => {
            let root = rng.uniform_vec(dim, -1.0, 1.0);
            let mut a = Matrix::zeros(dim, dim);
            for i in 0..dim {
                for j in 0..dim {
                    a.set(i, j, root[i] * root[j] + if i == j { 0.1 } else { 0.0 });
                }
            }
            ConvexExpr::quad_form(a, rng.uniform_vec(dim, -1.0, 1.0), rng.uniform(-1.0, 1.0))
                .expect("psd by construction")
        }
        _ => ConvexExpr::max_of(vec![
            ConvexExpr::affine(rng.uniform_vec(dim, -1.0, 1.0), rng.uniform(-1.0, 1.0)),
            ConvexExpr::affine(rng.uniform_vec(dim, -1.0, 1.0), rng.uniform(-1.0, 1.0)),
        ])
        .expect("nonempty"),
    }
}

fn random_probs(s: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let raw: Vec<f64> = (0..s).map(|_| rng.uniform(0.2, 1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let head: f64 = p[..s - 1].iter().sum();
    p[s - 1] = 1.0 - head;
    p
}

#[test]
fn cvar_envelope_scan_matches_golden_section() {
    let mut rng = SplitMix64::new(2024);
    for trial in 0..100 {
        let s = 1 + rng.below(5);
        let dim = 1 + rng.below(3);
        let alpha = rng.uniform(0.05, 0.95);
        let probs = random_probs(s, &mut rng);
        let pieces: Vec<(ConvexExpr, ConvexExpr)> = (0..s)
            .map(|_| (random_convex_piece(&mut rng, dim), random_convex_piece(&mut rng, dim)))
            .collect();
        let env = ConvexExpr::cvar_envelope(alpha, probs.clone(), pieces.clone()).unwrap();
        let x = rng.uniform_vec(dim, -1.0, 1.0);
        let scanned = env.eval(&x).unwrap();

        // Independent route: golden-section on the auxiliary objective.
        let pv: Vec<f64> = pieces.iter().map(|(p, _)| p.eval(&x).unwrap()).collect();
        let qv: Vec<f64> = pieces.iter().map(|(_, q)| q.eval(&x).unwrap()).collect();
        let inv = 1.0 / (1.0 - alpha);
        let phi = |t: f64| -> f64 {
            t + inv
                * probs
                    .iter()
                    .zip(pv.iter().zip(&qv))
                    .map(|(p, (pi, qi))| p * (pi - t).max(*qi))
                    .sum::<f64>()
        };
        let spread = pv
            .iter()
            .zip(&qv)
            .map(|(p, q)| p - q)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let gs = golden_section(phi, spread.0 - 2.0, spread.1 + 2.0);
        assert!(
            (scanned - gs).abs() <= 1e-6 * (1.0 + gs.abs()),
            "trial {trial}: scan {scanned} vs golden-section {gs}"
        );
    }
}

#[test]
fn oce_envelope_scan_matches_golden_section() {
    let mut rng = SplitMix64::new(4048);
    for trial in 0..100 {
        let s = 1 + rng.below(4);
        let dim = 1 + rng.below(2);
        let probs = random_probs(s, &mut rng);
        // Slopes all nonnegative with at least one above and one below 1,
        // which keeps the auxiliary objective coercive.
        let mut slopes = vec![rng.uniform(0.0, 0.9), rng.uniform(1.1, 3.0)];
        let mut intercepts = vec![0.0, 0.0];
        if rng.below(2) == 0 {
            slopes.push(rng.uniform(0.0, 3.0));
            intercepts.push(rng.uniform(0.0, 1.0));
        }
        let pieces: Vec<(ConvexExpr, ConvexExpr)> = (0..s)
            .map(|_| (random_convex_piece(&mut rng, dim), random_convex_piece(&mut rng, dim)))
            .collect();
        let env = ConvexExpr::neg_oce_envelope(
            slopes.clone(),
            intercepts.clone(),
            probs.clone(),
            pieces.clone(),
        )
        .unwrap();
        let x = rng.uniform_vec(dim, -1.0, 1.0);
        let scanned = env.eval(&x).unwrap();

        let pv: Vec<f64> = pieces.iter().map(|(p, _)| p.eval(&x).unwrap()).collect();
        let qv: Vec<f64> = pieces.iter().map(|(_, q)| q.eval(&x).unwrap()).collect();
        let total: f64 = slopes.iter().sum();
        let phi = |eta: f64| -> f64 {
            let mut acc = 0.0;
            for (sdx, p) in probs.iter().enumerate() {
                let inner = slopes
                    .iter()
                    .zip(&intercepts)
                    .map(|(a, al)| (total - a) * pv[sdx] + a * (qv[sdx] + eta) - al)
                    .fold(f64::NEG_INFINITY, f64::max);
                acc += p * inner;
            }
            acc - eta
        };
        let spread = pv
            .iter()
            .zip(&qv)
            .map(|(p, q)| p - q)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let width = 4.0 + intercepts.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 10.0;
        let gs = golden_section(phi, spread.0 - width, spread.1 + width);
        assert!(
            (scanned - gs).abs() <= 1e-6 * (1.0 + gs.abs()),
            "trial {trial}: scan {scanned} vs golden-section {gs}"
        );
    }
}

#[test]
fn sampled_convexity_of_random_envelope_nodes() {
    let mut rng = SplitMix64::new(6006);
    for _ in 0..20 {
        let s = 1 + rng.below(4);
        let dim = 1 + rng.below(2);
        let alpha = rng.uniform(0.1, 0.9);
        let probs = random_probs(s, &mut rng);
        let pieces: Vec<(ConvexExpr, ConvexExpr)> = (0..s)
            .map(|_| (random_convex_piece(&mut rng, dim), random_convex_piece(&mut rng, dim)))
            .collect();
        let env = ConvexExpr::cvar_envelope(alpha, probs, pieces).unwrap();
        for _ in 0..50 {
            let x = rng.uniform_vec(dim, -1.0, 1.0);
            let y = rng.uniform_vec(dim, -1.0, 1.0);
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            let fx = env.eval(&x).unwrap();
            let fy = env.eval(&y).unwrap();
            let fm = env.eval(&mid).unwrap();
            assert!(fm <= 0.5 * (fx + fy) + 1e-8 * (1.0 + fx.abs() + fy.abs()));
        }
    }
}
