//! Polarization tensor `Pol(S, v)`, the operator `P_v` and its inverse on its
//! range, and the slice projectors `Pbar1`, `Pbar2` with the product `N ~(x) X`.

use crate::error::{LabError, LabResult};
use crate::phases::NullFrame;
use crate::tensor::{axpy, dot, scale, MetricAt, Real, Sym, Sym3, Sym4, Vec3, Vec4};

/// Threshold on `|g^{-1}(dv, dv)|` below which `P_v` is not inverted.
pub const NEAR_NULL: Real = 1e-10;
/// Relative Pol residual admitted by `pv_solve`.
pub const RANGE_TOL: Real = 1e-10;

/// `Pol(S, v)_a = g^{mn} S_am d_n v - tr(S) d_a v / 2`.
pub fn pol(s: &Sym4, dv: &Vec4, g: &MetricAt<4>) -> Vec4 {
    let up = g.raise(dv);
    let sv = s.contract1(&up);
    let tr = g.trace(s);
    std::array::from_fn(|a| sv[a] - 0.5 * tr * dv[a])
}

/// `P_v(S) = -g^{-1}(dv, dv) S + d_(a v Pol(S, v)_b)`.
pub fn pv_apply(s: &Sym4, dv: &Vec4, g: &MetricAt<4>) -> Sym4 {
    let q = g.ip_inv(dv, dv);
    *s * (-q) + Sym::sym_prod(dv, &pol(s, dv, g))
}

/// Solves `P_v(S) = A` for `A` in the kernel of `Pol(., v)`: `S = -A / g^{-1}(dv, dv)`.
pub fn pv_solve(a: &Sym4, dv: &Vec4, g: &MetricAt<4>) -> LabResult<Sym4> {
    let q = g.ip_inv(dv, dv);
    if q.abs() < NEAR_NULL {
        return Err(LabError::NullDirectionUnsolvable { divisor: q });
    }
    let r = crate::tensor::max_abs(&pol(a, dv, g));
    if r > RANGE_TOL * a.max_abs().max(Real::MIN_POSITIVE) && r > 0.0 {
        return Err(LabError::NotInRange { residual: r });
    }
    Ok(*a * (-1.0 / q))
}

/// Unit normal `N_v = grad v / |grad v|` as (lowered, raised) spatial vectors.
pub fn slice_normal(dv: &Vec3, g: &MetricAt<3>) -> LabResult<(Vec3, Vec3)> {
    let n2 = g.ip_inv(dv, dv);
    if !(n2 > 0.0) {
        return Err(LabError::DegeneratePhase);
    }
    let low = scale(1.0 / n2.sqrt(), dv);
    Ok((low, g.raise(&low)))
}

/// `Pbar1_v(S) = S - (tr S - S_NN) g / 2`.
pub fn pbar1(s: &Sym3, dv: &Vec3, g: &MetricAt<3>) -> LabResult<Sym3> {
    let (_, nup) = slice_normal(dv, g)?;
    let k = g.trace(s) - s.contract2(&nup, &nup);
    Ok(*s - g.g * (0.5 * k))
}

/// `Pbar2_v(S) = S + N_(i (N_j) tr S - S_Nj)) - (tr S - S_NN) g / 2`.
pub fn pbar2(s: &Sym3, dv: &Vec3, g: &MetricAt<3>) -> LabResult<Sym3> {
    let (nlow, nup) = slice_normal(dv, g)?;
    let tr = g.trace(s);
    let sn = s.contract1(&nup);
    let inner: Vec3 = std::array::from_fn(|j| nlow[j] * tr - sn[j]);
    let k = tr - s.contract2(&nup, &nup);
    Ok(*s + Sym::sym_prod(&nlow, &inner) - g.g * (0.5 * k))
}

/// `(N ~(x) X)_ij = N_(i X_j) - X_N g_ij / 2` for vectors `N`, `X`.
pub fn ntilde_otimes(n: &Vec3, x: &Vec3, g: &MetricAt<3>) -> Sym3 {
    let (nl, xl) = (g.lower(n), g.lower(x));
    Sym::sym_prod(&nl, &xl) - g.g * (0.5 * g.ip(x, n))
}

/// A symmetric `S` with `Pol(S, u) = v` for a null phase with frame `(L, Lbar, e1, e2)`:
/// `S = -a g + (b/2) Lbar Lbar + (1/2) Lbar (x)s Y` with `a = v(Lbar)/2`,
/// `b = -v(L)/2`, `Y = sum v(e) e`.
pub fn pol_preimage(v: &Vec4, frame: &NullFrame, g: &MetricAt<4>) -> Sym4 {
    let a = 0.5 * dot(v, &frame.lbar);
    let b = -0.5 * dot(v, &frame.l);
    let lb = g.lower(&frame.lbar);
    let y = axpy(&scale(dot(v, &frame.e1), &g.lower(&frame.e1)), dot(v, &frame.e2), &g.lower(&frame.e2));
    g.g * (-a) + Sym4::outer(&lb) * (0.5 * b) + Sym::sym_prod(&lb, &y) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phases::null_frame_at;
    use crate::tensor::{max_abs, minkowski, norm2};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mink() -> MetricAt<4> {
        MetricAt::new(minkowski()).unwrap()
    }

    fn eucl() -> MetricAt<3> {
        MetricAt::new(Sym3::identity()).unwrap()
    }

    fn sym4(e: &[Real; 10]) -> Sym4 {
        let mut k = 0;
        Sym::from_fn(|_, _| {
            k += 1;
            e[k - 1]
        })
    }

    fn sym3(e: &[Real; 6]) -> Sym3 {
        let mut k = 0;
        Sym::from_fn(|_, _| {
            k += 1;
            e[k - 1]
        })
    }

    fn spd3(e: &[Real; 6]) -> MetricAt<3> {
        MetricAt::new(Sym3::identity() + sym3(e) * 0.2).unwrap()
    }

    #[test]
    fn pol_examples() {
        let g = mink();
        let du = [1.0, -1.0, 0.0, 0.0];
        let s = Sym4::diag([0.0, 0.0, 1.0, -1.0]);
        assert_eq!(pol(&s, &du, &g), [0.0; 4]);
        // S = d_(a v Q_b) with v = t, Q = dx^1: Pol = g^{-1}(dv, dv) Q = -Q
        let dt = [1.0, 0.0, 0.0, 0.0];
        let q = [0.0, 1.0, 0.0, 0.0];
        let p = pol(&Sym::sym_prod(&dt, &q), &dt, &g);
        assert_eq!(p, [0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn pv_examples() {
        let g = mink();
        let dt = [1.0, 0.0, 0.0, 0.0];
        let s = Sym4::diag([0.0, 1.0, -1.0, 0.0]);
        assert_eq!(pv_apply(&s, &dt, &g), s);
        assert_eq!(pv_solve(&s, &dt, &g).unwrap(), s);
        assert_eq!(pv_solve(&Sym4::zero(), &dt, &g).unwrap(), Sym4::zero());
        let du = [1.0, -1.0, 0.0, 0.0];
        assert!(matches!(pv_solve(&s, &du, &g), Err(LabError::NullDirectionUnsolvable { .. })));
        let bad = Sym4::diag([1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(pv_solve(&bad, &dt, &g), Err(LabError::NotInRange { .. })));
        // null v: first term vanishes
        let a = sym4(&[0.3, 0.1, -0.2, 0.5, 0.7, 0.2, -0.4, 0.9, 0.3, -0.1]);
        assert_eq!(pv_apply(&a, &du, &g), Sym::sym_prod(&du, &pol(&a, &du, &g)));
    }

    #[test]
    fn pbar_examples() {
        let g = eucl();
        let dv = [1.0, 0.0, 0.0];
        assert!(pbar1(&Sym3::identity(), &[0.3, -0.2, 0.9], &g).unwrap().max_abs() < 1e-15);
        let p2 = pbar2(&Sym3::identity(), &dv, &g).unwrap();
        assert_eq!(p2, Sym3::outer(&[1.0, 0.0, 0.0]) * 4.0);
        let nn = Sym3::outer(&[1.0, 0.0, 0.0]) * 1.7;
        assert_eq!(pbar2(&nn, &dv, &g).unwrap(), nn);
        // tr S = S_NN is a fixed point of Pbar1
        let s = Sym3::diag([0.0, 1.0, -1.0]);
        assert_eq!(pbar1(&s, &dv, &g).unwrap(), s);
        assert!(matches!(pbar1(&s, &[0.0; 3], &g), Err(LabError::DegeneratePhase)));
    }

    #[test]
    fn ntilde_examples() {
        let g = eucl();
        let x = [1.0, 0.0, 0.0];
        assert_eq!(ntilde_otimes(&x, &[0.0; 3], &g), Sym3::zero());
        assert_eq!(ntilde_otimes(&x, &x, &g), Sym3::diag([1.5, -0.5, -0.5]));
        let t = ntilde_otimes(&x, &[0.0, 1.0, 0.0], &g);
        assert_abs_diff_eq!(g.trace(&t), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn frame_component_formulas() {
        let g = mink();
        let du = [1.0, -0.6, -0.8, 0.0];
        let f = null_frame_at(&du, &g).unwrap();
        let s = sym4(&[0.3, 0.1, -0.2, 0.5, 0.7, 0.2, -0.4, 0.9, 0.3, -0.1]);
        let p = pol(&s, &du, &g);
        assert_abs_diff_eq!(dot(&p, &f.l), -s.contract2(&f.l, &f.l), epsilon = 1e-14);
        for i in 0..2 {
            assert_abs_diff_eq!(dot(&p, &f.e(i)), -s.contract2(&f.l, &f.e(i)), epsilon = 1e-14);
        }
        let want = -s.contract2(&f.e1, &f.e1) - s.contract2(&f.e2, &f.e2);
        assert_abs_diff_eq!(dot(&p, &f.lbar), want, epsilon = 1e-14);
        // same numbers after rotating the transverse pair
        let r = f.rotated(0.7);
        let want_r = -s.contract2(&r.e1, &r.e1) - s.contract2(&r.e2, &r.e2);
        assert_abs_diff_eq!(want, want_r, epsilon = 1e-14);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn pv_range_and_round_trip(e in proptest::array::uniform10(-1.0f64..1.0), dv in proptest::array::uniform4(-1.0f64..1.0)) {
            let g = mink();
            let q = g.ip_inv(&dv, &dv);
            prop_assume!(q.abs() > 0.05);
            let s = sym4(&e);
            let a = pv_apply(&s, &dv, &g);
            prop_assert!(max_abs(&pol(&a, &dv, &g)) <= 1e-12 * (1.0 + a.max_abs()));
            let back = pv_apply(&pv_solve(&a, &dv, &g).unwrap(), &dv, &g);
            prop_assert!((back - a).max_abs() <= 1e-12 * (1.0 + a.max_abs()));
        }

        #[test]
        fn pbar_idempotent_and_range(e in proptest::array::uniform6(-1.0f64..1.0), m in proptest::array::uniform6(-1.0f64..1.0), dv in proptest::array::uniform3(-1.0f64..1.0)) {
            prop_assume!(norm2(&dv) > 0.1);
            let g = spd3(&m);
            let s = sym3(&e);
            let (nl, nu) = slice_normal(&dv, &g).unwrap();
            let p1 = pbar1(&s, &dv, &g).unwrap();
            prop_assert!((pbar1(&p1, &dv, &g).unwrap() - p1).max_abs() < 1e-12);
            prop_assert!((g.trace(&p1) - p1.contract2(&nu, &nu)).abs() < 1e-12);
            let p2 = pbar2(&s, &dv, &g).unwrap();
            prop_assert!((pbar2(&p2, &dv, &g).unwrap() - p2).max_abs() < 1e-12);
            let tr = g.trace(&p2);
            let pn = p2.contract1(&nu);
            for i in 0..3 {
                prop_assert!((tr * nl[i] - pn[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn pol_preimage_round_trip(v in proptest::array::uniform4(-1.0f64..1.0), z in proptest::array::uniform3(-1.0f64..1.0), e in proptest::array::uniform10(-1.0f64..1.0)) {
            prop_assume!(norm2(&z) > 0.1);
            let g = MetricAt::new(minkowski() + sym4(&e) * 0.05).unwrap();
            let zu = scale(1.0 / norm2(&z), &z);
            let du = crate::hierarchy::null_covector(&zu, &g);
            let frame = null_frame_at(&du, &g).unwrap();
            let s = pol_preimage(&v, &frame, &g);
            let back = pol(&s, &du, &g);
            for k in 0..4 {
                prop_assert!((back[k] - v[k]).abs() < 1e-12);
            }
        }
    }
}
