use proptest::prelude::*;
use steklov_core::dtn_solver::solve_spectrum;
use steklov_core::{validate_domain, Circle, KoebeDomain, WeightSeries};

const M: usize = 32;
const N: usize = 12;

fn eigenvalues(d: KoebeDomain) -> Vec<f64> {
    solve_spectrum(&validate_domain(d).unwrap(), M, N).unwrap().eigenvalues
}

fn two_holes(cx: f64, r: f64, a: f64) -> KoebeDomain {
    KoebeDomain::new(
        Circle::new([0.0, 0.0], 1.0),
        vec![Circle::new([cx, 0.1], r), Circle::new([-0.45, -0.2], 0.15)],
        vec![WeightSeries::cosine_bump(a), WeightSeries::unit(), WeightSeries { mean: 1.0, cos: vec![], sin: vec![0.2] }],
    )
}

fn shifted(d: &KoebeDomain, v: [f64; 2]) -> KoebeDomain {
    let mv = |c: &Circle| Circle::new([c.center[0] + v[0], c.center[1] + v[1]], c.radius);
    KoebeDomain { outer: mv(&d.outer), inners: d.inners.iter().map(mv).collect(), ..d.clone() }
}

fn dilated(d: &KoebeDomain, t: f64) -> KoebeDomain {
    let sc = |c: &Circle| Circle::new([t * c.center[0], t * c.center[1]], t * c.radius);
    KoebeDomain { outer: sc(&d.outer), inners: d.inners.iter().map(sc).collect(), ..d.clone() }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        prop_assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{} vs {}", x, y);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn rotation_preserves_spectrum(cx in 0.2f64..0.4, r in 0.1f64..0.25, a in -0.4f64..0.4, alpha in 0.0f64..6.28) {
        let d = two_holes(cx, r, a);
        close(&eigenvalues(d.rotated(alpha)), &eigenvalues(d), 1e-9)?;
    }

    #[test]
    fn translation_preserves_spectrum(cx in 0.2f64..0.4, r in 0.1f64..0.25, vx in -2.0f64..2.0, vy in -2.0f64..2.0) {
        let d = two_holes(cx, r, 0.2);
        close(&eigenvalues(shifted(&d, [vx, vy])), &eigenvalues(d), 1e-9)?;
    }

    #[test]
    fn dilation_scales_spectrum_inversely(cx in 0.2f64..0.4, r in 0.1f64..0.25, t in 0.3f64..3.0) {
        let d = two_holes(cx, r, -0.3);
        let scaled: Vec<f64> = eigenvalues(dilated(&d, t)).iter().map(|l| l * t).collect();
        close(&scaled, &eigenvalues(d), 1e-9)?;
    }

    #[test]
    fn constant_weight_factor_divides_spectrum(c in 0.3f64..4.0, eps in 0.2f64..0.7) {
        let w = WeightSeries { mean: c, cos: vec![], sin: vec![] };
        let d = KoebeDomain::annulus(eps).with_weights(vec![w.clone(), w]);
        let scaled: Vec<f64> = eigenvalues(d).iter().map(|l| l * c).collect();
        close(&scaled, &eigenvalues(KoebeDomain::annulus(eps)), 1e-9)?;
    }
}

#[test]
fn first_eigenvalue_is_zero_and_rest_positive() {
    let l = eigenvalues(two_holes(0.3, 0.2, 0.25));
    assert!(l[0].abs() < 1e-10);
    assert!(l[1..].iter().all(|&x| x > 1e-3));
    assert!(l.windows(2).all(|w| w[0] <= w[1]));
}
