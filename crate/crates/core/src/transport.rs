//! Transport along the null generators `L = -g0^{-1} du`: characteristic flows,
//! RK4 integration of `(-2 D_L + box u) T = S`, propagation audits, and the time
//! derivative on the initial slice implied by a transport law.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::geometry::{christoffels_rule, grad, Domain, LorentzMetricField};
use crate::hierarchy::box_phase;
use crate::phases::{null_frame_at, Phase};
use crate::polarization::pol;
use crate::tensor::{max_abs, scale, Lin, MetricAt, Real, Sym, Sym3, Sym4, Vec3, Vec4};

/// Norm above which an integration is declared divergent.
pub const BLOWUP: Real = 1e12;

/// Shared parameters of a characteristic integration in coordinate time.
#[derive(Clone)]
pub struct TransportProblem<'a> {
    pub phase: &'a Phase,
    pub g0: &'a LorentzMetricField,
    pub dt: Real,
    pub t_end: Real,
    /// Finite-difference step for Christoffel symbols and `box u`.
    pub h: Real,
    pub domain: Option<Domain<4>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Characteristic {
    pub foot: Vec3,
    pub points: Vec<Vec4>,
    /// Set when the curve left the domain before `t_end`.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicBundle {
    pub label: usize,
    pub dt: Real,
    pub curves: Vec<Characteristic>,
}

/// Values carried along each curve of a bundle, one per time step.
#[derive(Clone, Debug)]
pub struct Carried<T> {
    pub bundle: CharacteristicBundle,
    pub values: Vec<Vec<T>>,
}

impl<'a> TransportProblem<'a> {
    fn steps(&self) -> LabResult<usize> {
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return Err(LabError::Config(format!("bad time stepping dt = {}, t_end = {}", self.dt, self.t_end)));
        }
        Ok((self.t_end / self.dt).round() as usize)
    }

    fn inside(&self, p: &Vec4) -> bool {
        self.domain.as_ref().is_none_or(|d| d.check(p).is_ok())
    }

    /// `L = -g0^{-1} du`, required future directed.
    pub fn generator(&self, p: &Vec4) -> LabResult<(MetricAt<4>, Vec4)> {
        let g = self.g0.at(p)?;
        let l = scale(-1.0, &g.raise(&self.phase.du(p)?));
        if !(l[0] > 0.0) {
            return Err(LabError::NotFutureDirected);
        }
        Ok((g, l))
    }
}

fn advance<T: Lin>(x: &Vec3, t: &T, dx: &Vec3, dtv: &T, a: Real) -> (Vec3, T) {
    let mut tn = t.clone();
    tn.axpy(a, dtv);
    (std::array::from_fn(|i| x[i] + a * dx[i]), tn)
}

/// RK4 in coordinate time for the joint state (position, carried value).
fn integrate<T: Lin>(
    prob: &TransportProblem,
    foot: Vec3,
    init: T,
    rhs: &(impl Fn(&Vec4, &T) -> LabResult<(Vec3, T)> + ?Sized),
    norm: &impl Fn(&T) -> Real,
) -> LabResult<(Characteristic, Vec<T>)> {
    let n = prob.steps()?;
    let dt = prob.dt;
    let mut x = foot;
    let mut v = init;
    let mut points = vec![[0.0, x[0], x[1], x[2]]];
    let mut values = vec![v.clone()];
    let mut truncated = false;
    let at = |t: Real, x: &Vec3| [t, x[0], x[1], x[2]];
    for k in 0..n {
        let t = k as Real * dt;
        let stages = (|| -> LabResult<(Vec3, T)> {
            let (k1x, k1v) = rhs(&at(t, &x), &v)?;
            let (x2, v2) = advance(&x, &v, &k1x, &k1v, 0.5 * dt);
            let (k2x, k2v) = rhs(&at(t + 0.5 * dt, &x2), &v2)?;
            let (x3, v3) = advance(&x, &v, &k2x, &k2v, 0.5 * dt);
            let (k3x, k3v) = rhs(&at(t + 0.5 * dt, &x3), &v3)?;
            let (x4, v4) = advance(&x, &v, &k3x, &k3v, dt);
            let (k4x, k4v) = rhs(&at(t + dt, &x4), &v4)?;
            let mut vn = v.clone();
            for (c, kv) in [(1.0, &k1v), (2.0, &k2v), (2.0, &k3v), (1.0, &k4v)] {
                vn.axpy(c * dt / 6.0, kv);
            }
            let xn = std::array::from_fn(|i| x[i] + dt / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]));
            Ok((xn, vn))
        })();
        let (xn, vn) = match stages {
            Ok(s) => s,
            Err(LabError::StencilOutOfDomain { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let nv = norm(&vn);
        if !nv.is_finite() || nv > BLOWUP {
            return Err(LabError::Diverged { t: t + dt, norm: nv });
        }
        let p = at(t + dt, &xn);
        if !prob.inside(&p) {
            truncated = true;
            break;
        }
        x = xn;
        v = vn;
        points.push(p);
        values.push(v.clone());
    }
    Ok((Characteristic { foot, points, truncated }, values))
}

fn bundle_from<T>(prob: &TransportProblem, out: Vec<(Characteristic, Vec<T>)>) -> Carried<T> {
    let (curves, values): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    Carried { bundle: CharacteristicBundle { label: prob.phase.label, dt: prob.dt, curves }, values }
}

/// Integrates `dx^i/dt = L^i / L^0` from each footpoint on the slice `t = 0`.
pub fn flow_characteristics(prob: &TransportProblem, footpoints: &[Vec3]) -> LabResult<CharacteristicBundle> {
    let rhs = |p: &Vec4, _: &Real| -> LabResult<(Vec3, Real)> {
        let (_, l) = prob.generator(p)?;
        Ok(([l[1] / l[0], l[2] / l[0], l[3] / l[0]], 0.0))
    };
    let out: LabResult<Vec<_>> = footpoints.par_iter().map(|f| integrate(prob, *f, 0.0, &rhs, &|_| 0.0)).collect();
    Ok(bundle_from(prob, out?).bundle)
}

/// `L^mu d_mu T = L^mu (G^r_{mu a} T_rb + G^r_{mu b} T_ar) + (box u T - S)/2`.
fn tensor_rhs(prob: &TransportProblem, p: &Vec4, t: &Sym4, s: &Sym4) -> LabResult<(Vec3, Sym4)> {
    let (_, l) = prob.generator(p)?;
    let gam = christoffels_rule(&prob.g0.rule(), p, prob.h)?;
    let bx = box_phase(prob.phase, prob.g0, p, prob.h)?;
    let lt = Sym::from_fn(|a, b| {
        let mut v = 0.5 * (bx * t.get(a, b) - s.get(a, b));
        for mu in 0..4 {
            for r in 0..4 {
                v += l[mu] * (gam[r][mu][a] * t.get(r, b) + gam[r][mu][b] * t.get(a, r));
            }
        }
        v
    });
    Ok(([l[1] / l[0], l[2] / l[0], l[3] / l[0]], lt * (1.0 / l[0])))
}

/// Solves `(-2 D_L + box u) T = S` along the characteristics from `t0` on `t = 0`.
pub fn solve_transport(
    prob: &TransportProblem,
    footpoints: &[Vec3],
    t0: &(dyn Fn(&Vec3) -> LabResult<Sym4> + Sync),
    source: &(dyn Fn(&Vec4) -> LabResult<Sym4> + Sync),
) -> LabResult<Carried<Sym4>> {
    let rhs = |p: &Vec4, t: &Sym4| tensor_rhs(prob, p, t, &source(p)?);
    let out: LabResult<Vec<_>> = footpoints
        .par_iter()
        .map(|f| integrate(prob, *f, t0(f)?, &rhs, &|t: &Sym4| t.max_abs()))
        .collect();
    Ok(bundle_from(prob, out?))
}

/// Scalar law `(-2 L + box u) f = s`, used for the dust density.
pub fn solve_scalar_transport(
    prob: &TransportProblem,
    footpoints: &[Vec3],
    f0: &(dyn Fn(&Vec3) -> LabResult<Real> + Sync),
    source: &(dyn Fn(&Vec4) -> LabResult<Real> + Sync),
) -> LabResult<Carried<Real>> {
    let rhs = |p: &Vec4, f: &Real| -> LabResult<(Vec3, Real)> {
        let (_, l) = prob.generator(p)?;
        let bx = box_phase(prob.phase, prob.g0, p, prob.h)?;
        Ok(([l[1] / l[0], l[2] / l[0], l[3] / l[0]], 0.5 * (bx * f - source(p)?) / l[0]))
    };
    let out: LabResult<Vec<_>> = footpoints
        .par_iter()
        .map(|x| integrate(prob, *x, f0(x)?, &rhs, &|f: &Real| f.abs()))
        .collect();
    Ok(bundle_from(prob, out?))
}

/// Per-time maxima over a bundle of the polarization, `F1(L, Lbar)` and
/// backreaction residuals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditSeries {
    pub times: Vec<Real>,
    pub pol: Vec<Real>,
    pub l_lbar: Vec<Real>,
    pub energy: Vec<Real>,
}

impl AuditSeries {
    pub fn max_pol(&self) -> Real {
        self.pol.iter().copied().fold(0.0, Real::max)
    }

    pub fn max_l_lbar(&self) -> Real {
        self.l_lbar.iter().copied().fold(0.0, Real::max)
    }

    pub fn max_energy(&self) -> Real {
        self.energy.iter().copied().fold(0.0, Real::max)
    }
}

/// Audits `F1` transported with `S = 0` together with the transported dust `F`.
pub fn propagation_audit(
    f1: &Carried<Sym4>,
    dust: &Carried<Real>,
    u: &Phase,
    g0: &LorentzMetricField,
) -> LabResult<AuditSeries> {
    let mut out = AuditSeries::default();
    for (c, curve) in f1.bundle.curves.iter().enumerate() {
        for (k, p) in curve.points.iter().enumerate() {
            if out.times.len() <= k {
                out.times.push(p[0]);
                out.pol.push(0.0);
                out.l_lbar.push(0.0);
                out.energy.push(0.0);
            }
            let g = g0.at(p)?;
            let du = u.du(p)?;
            let f = &f1.values[c][k];
            let fr = null_frame_at(&du, &g)?;
            let d = dust.values[c][k];
            out.pol[k] = out.pol[k].max(max_abs(&pol(f, &du, &g)));
            out.l_lbar[k] = out.l_lbar[k].max(f.contract2(&fr.l, &fr.lbar).abs());
            out.energy[k] = out.energy[k].max((g.dot(f, f) - 8.0 * d * d).abs());
        }
    }
    Ok(out)
}

/// Spatial block of a spacetime metric value.
pub fn spatial_block(g: &Sym4) -> Sym3 {
    Sym::from_fn(|i, j| g.get(i + 1, j + 1))
}

/// `d_t T` on `t = 0` from `(-2 D_L + box u) T = S`, assuming unit lapse and
/// zero shift on the slice so that `L = |grad u| (d_t - N)` there.
pub fn dt_from_transport(
    t0: &dyn Fn(&Vec3) -> LabResult<Sym4>,
    s0: &Sym4,
    u: &Phase,
    g0: &LorentzMetricField,
    x: &Vec3,
    h: Real,
) -> LabResult<Sym4> {
    let p = [0.0, x[0], x[1], x[2]];
    let g = g0.at(&p)?;
    let g3 = MetricAt::new(spatial_block(&g.g))?;
    let du = u.du(&p)?;
    let du3 = [du[1], du[2], du[3]];
    let n2 = g3.ip_inv(&du3, &du3);
    if !(n2 > 0.0) {
        return Err(LabError::DegeneratePhase);
    }
    let nrm = n2.sqrt();
    let nvec = scale(1.0 / nrm, &g3.raise(&du3));
    let dt3 = grad(&|y: &Vec3| t0(y), x, h)?;
    let mut nt = Sym4::zero();
    for i in 0..3 {
        nt += dt3[i] * nvec[i];
    }
    let tv = t0(x)?;
    let v = [1.0, -nvec[0], -nvec[1], -nvec[2]];
    let gam = christoffels_rule(&g0.rule(), &p, h)?;
    let bx = box_phase(u, g0, &p, h)?;
    let gterm = Sym::from_fn(|m, n| {
        let mut s = 0.0;
        for a in 0..4 {
            for r in 0..4 {
                s += v[a] * (gam[r][a][m] * tv.get(n, r) + gam[r][a][n] * tv.get(m, r));
            }
        }
        s
    });
    Ok(nt + gterm + tv * (bx / (2.0 * nrm)) - *s0 * (1.0 / (2.0 * nrm)))
}
