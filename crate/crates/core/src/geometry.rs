//! Fields, 4th-order finite differences, Christoffel symbols and Ricci curvature,
//! including the wave-gauge split of the Ricci tensor.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::tensor::{minkowski, Chris, Lin, Mat, MetricAt, Real, Sym, Sym3, Sym4, Vec4};

/// A spacetime point `(t, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinatePoint {
    pub t: Real,
    pub x: [Real; 3],
}

impl CoordinatePoint {
    pub fn new(t: Real, x: [Real; 3]) -> Self {
        CoordinatePoint { t, x }
    }

    pub fn as_array(&self) -> Vec4 {
        [self.t, self.x[0], self.x[1], self.x[2]]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

impl From<Vec4> for CoordinatePoint {
    fn from(p: Vec4) -> Self {
        CoordinatePoint { t: p[0], x: [p[1], p[2], p[3]] }
    }
}

impl From<CoordinatePoint> for Vec4 {
    fn from(p: CoordinatePoint) -> Self {
        p.as_array()
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain<const D: usize> {
    pub lo: [Real; D],
    pub hi: [Real; D],
}

impl<const D: usize> Domain<D> {
    pub fn check(&self, p: &[Real; D]) -> LabResult<()> {
        for a in 0..D {
            if !(p[a] >= self.lo[a] && p[a] <= self.hi[a]) {
                return Err(LabError::StencilOutOfDomain { axis: a });
            }
        }
        Ok(())
    }
}

type Rule<const D: usize, T> = Arc<dyn Fn(&[Real; D]) -> T + Send + Sync>;

/// A field on `R^D`: an analytic rule or an interpolated sampled grid.
#[derive(Clone)]
pub struct Field<const D: usize, T> {
    rule: Rule<D, T>,
    domain: Option<Domain<D>>,
    spacing: Option<[Real; D]>,
}

pub type ScalarField<const D: usize> = Field<D, Real>;
pub type CovectorField<const D: usize> = Field<D, [Real; D]>;
pub type SymField<const D: usize> = Field<D, Sym<D>>;
pub type ScalarField4 = ScalarField<4>;
pub type OneFormField = CovectorField<4>;
pub type VectorField = CovectorField<4>;
pub type SymTensor4Field = SymField<4>;
pub type SymTensor3Field = SymField<3>;

impl<const D: usize, T> Field<D, T> {
    pub fn analytic(f: impl Fn(&[Real; D]) -> T + Send + Sync + 'static) -> Self {
        Field { rule: Arc::new(f), domain: None, spacing: None }
    }

    /// Evaluates the field, failing outside a sampled domain.
    pub fn eval(&self, p: &[Real; D]) -> LabResult<T> {
        if let Some(d) = &self.domain {
            d.check(p)?;
        }
        Ok((self.rule)(p))
    }

    /// Evaluates without the domain guard; analytic fields only.
    pub fn at(&self, p: &[Real; D]) -> T {
        (self.rule)(p)
    }

    pub fn domain(&self) -> Option<Domain<D>> {
        self.domain
    }

    pub fn spacing(&self) -> Option<[Real; D]> {
        self.spacing
    }

    pub fn is_sampled(&self) -> bool {
        self.spacing.is_some()
    }
}

impl<const D: usize, T: 'static> Field<D, T> {
    /// Pointwise map of the field values, keeping the domain.
    pub fn map<U: 'static>(&self, f: impl Fn(T) -> U + Send + Sync + 'static) -> Field<D, U> {
        let r = self.rule.clone();
        Field { rule: Arc::new(move |p| f(r(p))), domain: self.domain, spacing: self.spacing }
    }
}

impl<const D: usize, T: Lin + Send + Sync + 'static> Field<D, T> {
    pub fn constant(v: T) -> Self {
        Field::analytic(move |_| v.clone())
    }
}

/// Uniform grid samples with 4-point Lagrange (cubic) interpolation per axis.
pub struct SampledGrid<const D: usize, T> {
    pub domain: Domain<D>,
    pub n: [usize; D],
    pub h: [Real; D],
    values: Vec<T>,
}

impl<const D: usize, T: Lin + Send + Sync + 'static> SampledGrid<D, T> {
    /// Samples `f` on `n[a] >= 4` nodes per axis spanning the domain.
    pub fn sample(domain: Domain<D>, n: [usize; D], f: impl Fn(&[Real; D]) -> T) -> LabResult<Self> {
        for a in 0..D {
            if n[a] < 4 || !(domain.hi[a] > domain.lo[a]) {
                return Err(LabError::Config(format!("grid axis {a} needs >= 4 nodes and positive extent")));
            }
        }
        let h: [Real; D] = std::array::from_fn(|a| (domain.hi[a] - domain.lo[a]) / (n[a] - 1) as Real);
        let total: usize = n.iter().product();
        let mut values = Vec::with_capacity(total);
        for lin in 0..total {
            let mut rem = lin;
            let mut p = [0.0; D];
            for a in (0..D).rev() {
                let i = rem % n[a];
                rem /= n[a];
                p[a] = domain.lo[a] + i as Real * h[a];
            }
            values.push(f(&p));
        }
        Ok(SampledGrid { domain, n, h, values })
    }

    fn index(&self, idx: &[usize; D]) -> usize {
        let mut lin = 0;
        for a in 0..D {
            lin = lin * self.n[a] + idx[a];
        }
        lin
    }

    /// Cubic interpolation; the 4-node window is shifted inward near the edges.
    pub fn interpolate(&self, p: &[Real; D]) -> LabResult<T> {
        self.domain.check(p)?;
        let mut base = [0usize; D];
        let mut w = [[0.0; 4]; D];
        for a in 0..D {
            let s = (p[a] - self.domain.lo[a]) / self.h[a];
            let i0 = (s.floor() as isize - 1).clamp(0, self.n[a] as isize - 4) as usize;
            base[a] = i0;
            let x = s - i0 as Real;
            for k in 0..4 {
                let mut l = 1.0;
                for m in 0..4 {
                    if m != k {
                        l *= (x - m as Real) / (k as Real - m as Real);
                    }
                }
                w[a][k] = l;
            }
        }
        let mut acc = self.values[0].zero_like();
        let corners = 4usize.pow(D as u32);
        for c in 0..corners {
            let mut rem = c;
            let mut idx = [0usize; D];
            let mut weight = 1.0;
            for a in 0..D {
                let k = rem % 4;
                rem /= 4;
                idx[a] = base[a] + k;
                weight *= w[a][k];
            }
            acc.axpy(weight, &self.values[self.index(&idx)]);
        }
        Ok(acc)
    }

    pub fn into_field(self) -> Field<D, T> {
        let domain = self.domain;
        let spacing = self.h;
        let grid = Arc::new(self);
        Field {
            rule: Arc::new(move |p| grid.interpolate(p).unwrap_or_else(|_| grid.values[0].zero_like())),
            domain: Some(domain),
            spacing: Some(spacing),
        }
    }
}

// ---------------------------------------------------------------- stencils

const D1_OFF: [Real; 4] = [-2.0, -1.0, 1.0, 2.0];
// integer weights, scaled after summation so that
// constant inputs cancel exactly
const D1_W: [Real; 4] = [1.0, -8.0, 8.0, -1.0];
const D2_OFF: [Real; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
const D2_W: [Real; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];

fn scaled<T: Lin>(v: &T, a: Real) -> T {
    let mut z = v.zero_like();
    z.axpy(a, v);
    z
}

fn shifted<const D: usize>(p: &[Real; D], axis: usize, s: Real) -> [Real; D] {
    let mut q = *p;
    q[axis] += s;
    q
}

/// 4th-order central first derivative along `axis`.
pub fn diff1<const D: usize, T: Lin>(
    f: &impl Fn(&[Real; D]) -> LabResult<T>,
    p: &[Real; D],
    axis: usize,
    h: Real,
) -> LabResult<T> {
    let mut acc: Option<T> = None;
    for (o, w) in D1_OFF.iter().zip(D1_W.iter()) {
        let v = f(&shifted(p, axis, o * h))?;
        match acc.as_mut() {
            None => acc = Some(scaled(&v, *w)),
            Some(a) => a.axpy(*w, &v),
        }
    }
    Ok(scaled(&acc.expect("stencil is nonempty"), 1.0 / (12.0 * h)))
}

/// Gradient `[d_0 f, ..., d_{D-1} f]`.
pub fn grad<const D: usize, T: Lin>(
    f: &impl Fn(&[Real; D]) -> LabResult<T>,
    p: &[Real; D],
    h: Real,
) -> LabResult<[T; D]> {
    let mut out: Vec<T> = Vec::with_capacity(D);
    for a in 0..D {
        out.push(diff1(f, p, a, h)?);
    }
    Ok(out.try_into().unwrap_or_else(|_| unreachable!()))
}

/// Second derivatives: 5-point stencil on the diagonal, nested first-derivative
/// stencils off the diagonal. Output is symmetric in the two axes.
pub fn hessian<const D: usize, T: Lin>(
    f: &impl Fn(&[Real; D]) -> LabResult<T>,
    p: &[Real; D],
    h: Real,
) -> LabResult<[[T; D]; D]> {
    let f0 = f(p)?;
    let mut out: Vec<Vec<T>> = vec![vec![f0.zero_like(); D]; D];
    for a in 0..D {
        let mut acc = f0.zero_like();
        for (o, w) in D2_OFF.iter().zip(D2_W.iter()) {
            let v = if *o == 0.0 { f0.clone() } else { f(&shifted(p, a, o * h))? };
            acc.axpy(*w, &v);
        }
        out[a][a] = scaled(&acc, 1.0 / (12.0 * h * h));
        for b in (a + 1)..D {
            let mut acc = f0.zero_like();
            for (oa, wa) in D1_OFF.iter().zip(D1_W.iter()) {
                for (ob, wb) in D1_OFF.iter().zip(D1_W.iter()) {
                    let q = shifted(&shifted(p, a, oa * h), b, ob * h);
                    acc.axpy(wa * wb, &f(&q)?);
                }
            }
            let acc = scaled(&acc, 1.0 / (144.0 * h * h));
            out[a][b] = acc.clone();
            out[b][a] = acc;
        }
    }
    Ok(std::array::from_fn(|a| {
        let row = std::mem::take(&mut out[a]);
        row.try_into().unwrap_or_else(|_| unreachable!())
    }))
}

// ---------------------------------------------------------------- metrics

/// Spacetime metric field with signature checks at queried points.
#[derive(Clone)]
pub struct LorentzMetricField {
    pub value: SymTensor4Field,
}

/// Riemannian slice metric field.
#[derive(Clone)]
pub struct SliceMetricField {
    pub value: SymTensor3Field,
}

/// Number of negative eigenvalues of a symmetric 4x4 matrix.
pub fn negative_eigenvalues4(g: &Sym4) -> usize {
    let m = nalgebra::Matrix4::from_fn(|i, j| g.get(i, j));
    m.symmetric_eigenvalues().iter().filter(|&&e| e < 0.0).count()
}

/// Checks `(-,+,+,+)` and returns the pointwise metric with inverse.
pub fn lorentz_at(g: Sym4) -> LabResult<MetricAt<4>> {
    let m = MetricAt::new(g)?;
    let neg = negative_eigenvalues4(&g);
    if neg != 1 {
        return Err(LabError::SignatureViolated { negative: neg });
    }
    Ok(m)
}

/// Checks positive definiteness and returns the pointwise slice metric.
pub fn riemann_at(g: Sym3) -> LabResult<MetricAt<3>> {
    let m = MetricAt::new(g)?;
    let c = nalgebra::Matrix3::from_fn(|i, j| g.get(i, j));
    if c.cholesky().is_none() {
        return Err(LabError::NotPositiveDefinite);
    }
    Ok(m)
}

impl LorentzMetricField {
    pub fn new(value: SymTensor4Field) -> Self {
        LorentzMetricField { value }
    }

    pub fn analytic(f: impl Fn(&Vec4) -> Sym4 + Send + Sync + 'static) -> Self {
        LorentzMetricField { value: Field::analytic(f) }
    }

    pub fn minkowski() -> Self {
        Self::analytic(|_| crate::tensor::minkowski())
    }

    /// Metric with inverse at `p`, after a signature check.
    pub fn at(&self, p: &Vec4) -> LabResult<MetricAt<4>> {
        lorentz_at(self.value.eval(p)?)
    }

    /// Raw component rule used inside stencils.
    pub fn rule(&self) -> impl Fn(&Vec4) -> LabResult<Sym4> + '_ {
        move |q| self.value.eval(q)
    }
}

impl SliceMetricField {
    pub fn new(value: SymTensor3Field) -> Self {
        SliceMetricField { value }
    }

    pub fn analytic(f: impl Fn(&[Real; 3]) -> Sym3 + Send + Sync + 'static) -> Self {
        SliceMetricField { value: Field::analytic(f) }
    }

    pub fn euclidean() -> Self {
        Self::analytic(|_| Sym3::identity())
    }

    pub fn at(&self, p: &[Real; 3]) -> LabResult<MetricAt<3>> {
        riemann_at(self.value.eval(p)?)
    }

    pub fn rule(&self) -> impl Fn(&[Real; 3]) -> LabResult<Sym3> + '_ {
        move |q| self.value.eval(q)
    }
}

/// Christoffel symbols from metric values and first derivatives `dg[mu]`.
pub fn christoffels_from<const D: usize>(ginv: &Sym<D>, dg: &[Sym<D>; D]) -> Chris<D> {
    let mut gam = [[[0.0; D]; D]; D];
    for mu in 0..D {
        for nu in mu..D {
            // lowered symbol Gamma_{sigma mu nu}
            let low: [Real; D] = std::array::from_fn(|s| {
                0.5 * (dg[mu].get(s, nu) + dg[nu].get(s, mu) - dg[s].get(mu, nu))
            });
            for rho in 0..D {
                let v: Real = (0..D).map(|s| ginv.get(rho, s) * low[s]).sum();
                gam[rho][mu][nu] = v;
                gam[rho][nu][mu] = v;
            }
        }
    }
    gam
}

/// Finite-difference Christoffel symbols of a metric rule at `p`.
pub fn christoffels_rule<const D: usize>(
    g: &impl Fn(&[Real; D]) -> LabResult<Sym<D>>,
    p: &[Real; D],
    h: Real,
) -> LabResult<Chris<D>> {
    let m = MetricAt::new(g(p)?)?;
    let dg = grad(g, p, h)?;
    Ok(christoffels_from(&m.ginv, &dg))
}

pub fn christoffels_fd(g: &LorentzMetricField, p: &CoordinatePoint, h: Real) -> LabResult<Chris<4>> {
    let p = p.as_array();
    g.at(&p)?;
    christoffels_rule(&g.rule(), &p, h)
}

fn ricci_from_parts<const D: usize>(gam: &Chris<D>, dgam: &[Chris<D>; D]) -> Sym<D> {
    let mut r: Mat<D> = [[0.0; D]; D];
    for a in 0..D {
        for b in 0..D {
            let mut v = 0.0;
            for rho in 0..D {
                v += dgam[rho][rho][a][b] - dgam[a][rho][rho][b];
                for s in 0..D {
                    v += gam[rho][rho][s] * gam[s][a][b] - gam[rho][a][s] * gam[s][rho][b];
                }
            }
            r[a][b] = v;
        }
    }
    Sym::from_mat_sym(&r)
}

/// Ricci tensor from nested finite differences of the Christoffel symbols.
pub fn ricci_rule<const D: usize>(
    g: &impl Fn(&[Real; D]) -> LabResult<Sym<D>>,
    p: &[Real; D],
    h: Real,
) -> LabResult<Sym<D>> {
    let gam = christoffels_rule(g, p, h)?;
    let dgam = grad(&|q: &[Real; D]| christoffels_rule(g, q, h), p, h)?;
    Ok(ricci_from_parts(&gam, &dgam))
}

pub fn ricci_direct(g: &LorentzMetricField, p: &CoordinatePoint, h: Real) -> LabResult<Sym4> {
    let p = p.as_array();
    g.at(&p)?;
    ricci_rule(&g.rule(), &p, h)
}

/// Scalar curvature `g^ab R_ab`.
pub fn scalar_curvature_rule<const D: usize>(
    g: &impl Fn(&[Real; D]) -> LabResult<Sym<D>>,
    p: &[Real; D],
    h: Real,
) -> LabResult<Real> {
    let m = MetricAt::new(g(p)?)?;
    Ok(m.trace(&ricci_rule(g, p, h)?))
}

/// Wave-gauge split of the Ricci tensor; see `ricci_gwc`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RicciBreakdown {
    pub wave_part: Sym4,
    pub p_part: Sym4,
    pub gauge_part: Sym4,
    pub total: Sym4,
}

/// Gauge vector `H^rho = g^{mu nu} Gamma^rho_{mu nu}`.
pub fn gauge_vector<const D: usize>(ginv: &Sym<D>, gam: &Chris<D>) -> [Real; D] {
    std::array::from_fn(|rho| {
        let mut v = 0.0;
        for mu in 0..D {
            for nu in 0..D {
                v += ginv.get(mu, nu) * gam[rho][mu][nu];
            }
        }
        v
    })
}

/// Quadratic part `P_ab(g)(dg, dg)` of the wave-gauge Ricci split.
pub fn p_quadratic(ginv: &Sym4, dg: &[Sym4; 4]) -> Sym4 {
    Sym::from_fn(|a, b| {
        let mut v = 0.0;
        for mu in 0..4 {
            for rho in 0..4 {
                let gmr = ginv.get(mu, rho);
                if gmr == 0.0 {
                    continue;
                }
                for nu in 0..4 {
                    for sig in 0..4 {
                        let w = gmr * ginv.get(nu, sig);
                        if w == 0.0 {
                            continue;
                        }
                        let t = dg[a].get(rho, sig) * dg[mu].get(b, nu) + dg[b].get(rho, sig) * dg[mu].get(a, nu)
                            - 0.5 * dg[a].get(rho, sig) * dg[b].get(mu, nu)
                            - dg[rho].get(a, nu) * dg[sig].get(b, mu)
                            + dg[rho].get(sig, a) * dg[mu].get(nu, b);
                        v += w * t;
                    }
                }
            }
        }
        v
    })
}

pub fn ricci_gwc(g: &LorentzMetricField, p: &CoordinatePoint, h: Real) -> LabResult<RicciBreakdown> {
    let p = p.as_array();
    let m = g.at(&p)?;
    let rule = g.rule();
    let dg = grad(&rule, &p, h)?;
    let ddg = hessian(&rule, &p, h)?;
    let gam = christoffels_from(&m.ginv, &dg);
    let hv = gauge_vector(&m.ginv, &gam);
    let dh = grad(
        &|q: &Vec4| -> LabResult<Vec4> {
            let mq = MetricAt::new(rule(q)?)?;
            Ok(gauge_vector(&mq.ginv, &christoffels_rule(&rule, q, h)?))
        },
        &p,
        h,
    )?;
    let wave_part = Sym::from_fn(|a, b| {
        let mut v = 0.0;
        for mu in 0..4 {
            for nu in 0..4 {
                v += m.ginv.get(mu, nu) * ddg[mu][nu].get(a, b);
            }
        }
        v
    });
    let p_part = p_quadratic(&m.ginv, &dg);
    let gauge_part = Sym::from_fn(|a, b| {
        let mut v = 0.0;
        for rho in 0..4 {
            v += m.g.get(rho, a) * dh[b][rho] + m.g.get(rho, b) * dh[a][rho] + hv[rho] * dg[rho].get(a, b);
        }
        v
    });
    let total = (p_part + gauge_part - wave_part) * 0.5;
    Ok(RicciBreakdown { wave_part, p_part, gauge_part, total })
}

/// `box_g f = g^{mu nu}(d_mu d_nu f - Gamma^rho_{mu nu} d_rho f)`.
pub fn wave_operator_rule(
    g: &impl Fn(&Vec4) -> LabResult<Sym4>,
    f: &impl Fn(&Vec4) -> LabResult<Real>,
    p: &Vec4,
    h: Real,
) -> LabResult<Real> {
    let m = MetricAt::new(g(p)?)?;
    let gam = christoffels_rule(g, p, h)?;
    let df = grad(f, p, h)?;
    let ddf = hessian(f, p, h)?;
    let mut v = 0.0;
    for mu in 0..4 {
        for nu in 0..4 {
            let gi = m.ginv.get(mu, nu);
            let mut s = ddf[mu][nu];
            for rho in 0..4 {
                s -= gam[rho][mu][nu] * df[rho];
            }
            v += gi * s;
        }
    }
    Ok(v)
}

pub fn wave_operator(g: &LorentzMetricField, f: &ScalarField4, p: &CoordinatePoint, h: Real) -> LabResult<Real> {
    let p = p.as_array();
    g.at(&p)?;
    wave_operator_rule(&g.rule(), &|q: &Vec4| f.eval(q), &p, h)
}

/// pp-wave in `(t, x, y, z)`: with `u = t - x`, `g = eta + H(y, z) du du`.
/// Vacuum iff `H_yy + H_zz = 0`; in general `R_uu = -(H_yy + H_zz)/2`.
pub fn pp_wave_metric(hfun: fn(Real, Real) -> Real) -> LorentzMetricField {
    LorentzMetricField::analytic(move |p| {
        let hv = hfun(p[2], p[3]);
        let du = [1.0, -1.0, 0.0, 0.0];
        minkowski() + Sym::outer(&du) * hv
    })
}

/// Minkowski plus `amp * sin(k.x + n)` in each independent component, with
/// `k` and the component weights drawn from `seed`.
pub fn random_smooth_metric(seed: u64, amp: Real) -> LorentzMetricField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: [Real; 10] = std::array::from_fn(|_| amp * rng.gen_range(-1.0..1.0));
    let k: [Real; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    LorentzMetricField::analytic(move |p| {
        let ph = k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + k[3] * p[3];
        let mut m = minkowski();
        let mut n = 0;
        for i in 0..4 {
            for j in i..4 {
                let v = m.get(i, j) + c[n] * (ph + n as Real).sin();
                m.set(i, j, v);
                n += 1;
            }
        }
        m
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tensor::minkowski;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn pp_wave(hfun: fn(Real, Real) -> Real) -> LorentzMetricField {
        pp_wave_metric(hfun)
    }

    /// `R_uu` from `(t, x)` components via `d_u = (d_t - d_x)/2`.
    fn r_uu(r: &Sym4) -> Real {
        0.25 * (r.get(0, 0) - 2.0 * r.get(0, 1) + r.get(1, 1))
    }

    fn p0() -> CoordinatePoint {
        CoordinatePoint::new(0.3, [0.2, 0.4, -0.7])
    }

    #[test]
    fn minkowski_christoffels_vanish() {
        let g = LorentzMetricField::minkowski();
        let gam = christoffels_fd(&g, &p0(), 1e-2).unwrap();
        for a in gam.iter().flatten().flatten() {
            assert!(a.abs() < 1e-14);
        }
    }

    #[test]
    fn quadratic_bump_christoffel() {
        let g = LorentzMetricField::analytic(|p| {
            let mut m = minkowski();
            m.set(1, 1, 1.0 + 0.1 * p[1] * p[1]);
            m
        });
        let gam = christoffels_fd(&g, &CoordinatePoint::new(0.0, [1.0, 0.0, 0.0]), 1e-2).unwrap();
        // hand derivative: Gamma^1_11 = g^11 d_1 g_11 / 2
        let oracle = 0.1 * 1.0 / (1.0 + 0.1);
        assert_abs_diff_eq!(gam[1][1][1], oracle, epsilon = 1e-8);
        assert_eq!(gam[1][2][1], gam[1][1][2]);
    }

    #[test]
    fn pp_wave_christoffels_closed_form() {
        // In (u, v, y, z): Gamma^v_{uy} = -H_y/2, Gamma^y_{uu} = -H_y/2, Gamma^u = 0.
        // With t = v + u/2, x = v - u/2 the t- and x-components both equal the v-component.
        let g = pp_wave(|y, z| y * y - z * z);
        let p = p0();
        let gam = christoffels_fd(&g, &p, 1e-2).unwrap();
        let (y, z) = (p.x[1], p.x[2]);
        let (hy, hz) = (2.0 * y, -2.0 * z);
        // Gamma^y_{tt} = Gamma^y_{uu} (du(d_t))^2 = -H_y/2
        assert_abs_diff_eq!(gam[2][0][0], -hy / 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(gam[3][0][1], hz / 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(gam[0][0][2], -hy / 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(gam[1][0][3], -hz / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn minkowski_ricci_vanishes() {
        let g = LorentzMetricField::minkowski();
        assert!(ricci_direct(&g, &p0(), 1e-2).unwrap().max_abs() < 1e-12);
        let b = ricci_gwc(&g, &p0(), 1e-2).unwrap();
        for s in [b.wave_part, b.p_part, b.gauge_part, b.total] {
            assert!(s.max_abs() < 1e-12);
        }
    }

    #[test]
    fn pp_wave_vacuum_and_dust() {
        let vac = pp_wave(|y, z| y * y - z * z);
        assert!(ricci_direct(&vac, &p0(), 1e-2).unwrap().max_abs() < 1e-8);
        let dust = pp_wave(|y, z| y * y + z * z);
        let r = ricci_direct(&dust, &p0(), 1e-2).unwrap();
        // oracle: R_uu = -(H_yy + H_zz)/2 = -2
        assert_abs_diff_eq!(r_uu(&r), -2.0, epsilon = 1e-6);
        let r2 = ricci_gwc(&dust, &p0(), 1e-2).unwrap().total;
        assert_abs_diff_eq!(r_uu(&r2), -2.0, epsilon = 1e-6);
    }

    #[test]
    fn fd_order_on_nonpolynomial_pp_wave() {
        let g = pp_wave(|y, z| y.sin() * z.cosh());
        let p = p0();
        let r = |h: Real| ricci_direct(&g, &p, h).unwrap();
        let (a, b, c) = (r(4e-2), r(2e-2), r(1e-2));
        let ratio = (a - b).frob() / (b - c).frob();
        assert!(ratio >= 14.0, "ratio {ratio}");
        // exact vacuum for harmonic H
        assert!(c.max_abs() < 1e-8);
    }

    #[test]
    fn wave_operator_examples() {
        let g = LorentzMetricField::minkowski();
        let f = ScalarField4::analytic(|p| p[0] * p[0]);
        assert_abs_diff_eq!(wave_operator(&g, &f, &p0(), 1e-2).unwrap(), -2.0, epsilon = 1e-10);
        let u = ScalarField4::analytic(|p| p[0] - p[1]);
        assert_abs_diff_eq!(wave_operator(&g, &u, &p0(), 1e-2).unwrap(), 0.0, epsilon = 1e-12);
        let pp = pp_wave(|y, z| y.sin() * z.cosh());
        assert_abs_diff_eq!(wave_operator(&pp, &u, &p0(), 1e-2).unwrap(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn plane_tt_wave_gauge_is_small() {
        // Minkowski + eps cos(t - x)(dy^2 - dz^2), harmonic at linear order
        let g = LorentzMetricField::analytic(|p| {
            let mut m = minkowski();
            let e = 1e-3 * (p[0] - p[1]).cos();
            m.set(2, 2, 1.0 + e);
            m.set(3, 3, 1.0 - e);
            m
        });
        let b = ricci_gwc(&g, &p0(), 1e-2).unwrap();
        assert!(b.gauge_part.max_abs() < 1e-5);
    }

    #[test]
    fn signature_guard() {
        let bad = LorentzMetricField::analytic(|_| Sym4::diag([1.0, 1.0, 1.0, 1.0]));
        assert!(matches!(bad.at(&[0.0; 4]), Err(LabError::SignatureViolated { negative: 0 })));
        let deg = LorentzMetricField::analytic(|_| Sym4::diag([-1.0, 1.0, 1.0, 0.0]));
        assert!(matches!(deg.at(&[0.0; 4]), Err(LabError::SingularMetric { .. })));
    }

    #[test]
    fn sampled_grid_cubic_is_exact_on_cubics_and_guards_domain() {
        let dom = Domain { lo: [0.0, 0.0, 0.0], hi: [1.0, 1.0, 1.0] };
        let f = |p: &[Real; 3]| p[0].powi(3) - 2.0 * p[1] * p[2] + p[2].powi(2);
        let grid = SampledGrid::sample(dom, [9, 9, 9], f).unwrap();
        let field = grid.into_field();
        assert_eq!(field.spacing().unwrap()[0], 0.125);
        let q = [0.33, 0.71, 0.05];
        assert_abs_diff_eq!(field.eval(&q).unwrap(), f(&q), epsilon = 1e-13);
        let near_edge = [0.5, 0.5, 0.01];
        let r = diff1(&|p: &[Real; 3]| field.eval(p), &near_edge, 2, 0.01);
        assert!(matches!(r, Err(LabError::StencilOutOfDomain { axis: 2 })));
    }

    #[test]
    fn sampled_metric_christoffels_match_analytic() {
        let rule = |p: &Vec4| {
            let mut m = minkowski();
            m.set(1, 1, 1.0 + 0.1 * p[1].sin());
            m
        };
        let dom = Domain { lo: [-0.5; 4], hi: [0.5; 4] };
        let sampled = SampledGrid::sample(dom, [5, 41, 5, 5], rule).unwrap().into_field();
        let gs = LorentzMetricField::new(sampled);
        let ga = LorentzMetricField::analytic(rule);
        let p = CoordinatePoint::new(0.0, [0.1, 0.0, 0.0]);
        let a = christoffels_fd(&ga, &p, 0.05).unwrap();
        let s = christoffels_fd(&gs, &p, 0.05).unwrap();
        assert_abs_diff_eq!(a[1][1][1], s[1][1][1], epsilon = 1e-5);
    }

    fn smooth_metric(c: [Real; 10], k: [Real; 4]) -> LorentzMetricField {
        LorentzMetricField::analytic(move |p| {
            let ph = k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + k[3] * p[3];
            let mut m = minkowski();
            let mut n = 0;
            for i in 0..4 {
                for j in i..4 {
                    let v = m.get(i, j) + c[n] * (ph + n as Real).sin();
                    m.set(i, j, v);
                    n += 1;
                }
            }
            m
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gwc_split_matches_direct(c in proptest::array::uniform10(-0.1f64..0.1), k in proptest::array::uniform4(-1.0f64..1.0)) {
            let g = smooth_metric(c, k);
            let p = p0();
            let d = ricci_direct(&g, &p, 1e-2).unwrap();
            let b = ricci_gwc(&g, &p, 1e-2).unwrap();
            prop_assert!((d - b.total).max_abs() < 1e-9);
            let id = b.total * 2.0 + b.wave_part - b.p_part - b.gauge_part;
            prop_assert!(id.max_abs() < 1e-14);
        }
    }
}
