//! Eikonal phases, adapted null frames, harmonic words and coherence margins.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::geometry::{christoffels_rule, grad, LorentzMetricField, ScalarField4};
use crate::tensor::{axpy, dot, norm2, scale, MetricAt, Real, Sym4, Vec3, Vec4};
use crate::geometry::{Field, OneFormField};

/// Step used when a phase has no analytic gradient.
pub const PHASE_FD_STEP: Real = 1e-3;
/// Tolerance on `|g^{-1}(du, du)|` when building frames.
pub const EIKONAL_TOL: Real = 1e-10;

/// An optical phase `u_A`.
#[derive(Clone)]
pub struct Phase {
    pub label: usize,
    pub u: ScalarField4,
    du: Option<OneFormField>,
    /// Reference spatial direction, unit length.
    pub direction: Option<Vec3>,
}

impl fmt::Debug for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Phase").field("label", &self.label).field("direction", &self.direction).finish()
    }
}

impl Phase {
    pub fn new(label: usize, u: ScalarField4, du: Option<OneFormField>, direction: Option<Vec3>) -> Self {
        Phase { label, u, du, direction }
    }

    pub fn value(&self, p: &Vec4) -> LabResult<Real> {
        self.u.eval(p)
    }

    /// Spacetime differential `du` at `p`.
    pub fn du(&self, p: &Vec4) -> LabResult<Vec4> {
        match &self.du {
            Some(d) => d.eval(p),
            None => grad(&|q: &Vec4| self.u.eval(q), p, PHASE_FD_STEP),
        }
    }

    /// Same phase scaled by an integer, `k u`.
    pub fn scaled(&self, k: Real) -> Phase {
        Phase {
            label: self.label,
            u: self.u.map(move |v| k * v),
            du: self.du.as_ref().map(|d| d.map(move |v| scale(k, &v))),
            direction: self.direction,
        }
    }
}

/// Normalizes a nonzero direction.
pub fn unit_direction(d: Vec3) -> LabResult<Vec3> {
    let n = norm2(&d);
    if !(n > 0.0) || !n.is_finite() {
        return Err(LabError::InvalidDirection(format!("{d:?}")));
    }
    Ok(scale(1.0 / n, &d))
}

/// Plane phase `u = t - z.x` on Minkowski; `direction` is normalized.
pub fn plane_phase(label: usize, direction: Vec3) -> LabResult<Phase> {
    let z = unit_direction(direction)?;
    let u = Field::analytic(move |p: &Vec4| p[0] - z[0] * p[1] - z[1] * p[2] - z[2] * p[3]);
    let du = Field::analytic(move |_: &Vec4| [1.0, -z[0], -z[1], -z[2]]);
    Ok(Phase::new(label, u, Some(du), Some(z)))
}

/// Null frame `(L, Lbar, e1, e2)` as contravariant vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullFrame {
    pub l: Vec4,
    pub lbar: Vec4,
    pub e1: Vec4,
    pub e2: Vec4,
}

impl NullFrame {
    pub fn e(&self, i: usize) -> Vec4 {
        if i == 0 {
            self.e1
        } else {
            self.e2
        }
    }

    /// Largest violation of the frame relations.
    pub fn defect(&self, g: &MetricAt<4>) -> Real {
        let v = [self.l, self.lbar, self.e1, self.e2];
        let target = [
            [0.0, -2.0, 0.0, 0.0],
            [-2.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let mut d: Real = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                d = d.max((g.ip(&v[i], &v[j]) - target[i][j]).abs());
            }
        }
        d
    }

    /// `g = -(L (x) Lbar + Lbar (x) L)/2 + sum e (x) e` in lowered form.
    pub fn reconstruct_metric(&self, g: &MetricAt<4>) -> Sym4 {
        let (l, lb) = (g.lower(&self.l), g.lower(&self.lbar));
        Sym4::sym_prod(&l, &lb) * -0.5 + Sym4::outer(&g.lower(&self.e1)) + Sym4::outer(&g.lower(&self.e2))
    }

    /// Rotates `(e1, e2)` by angle `a` in their plane.
    pub fn rotated(&self, a: Real) -> NullFrame {
        let (c, s) = (a.cos(), a.sin());
        NullFrame {
            e1: axpy(&scale(c, &self.e1), s, &self.e2),
            e2: axpy(&scale(c, &self.e2), -s, &self.e1),
            ..*self
        }
    }
}

/// Future unit normal to the `t = const` slices.
pub fn unit_normal(g: &MetricAt<4>) -> LabResult<Vec4> {
    let dt = [1.0, 0.0, 0.0, 0.0];
    let q = g.ip_inv(&dt, &dt);
    if !(q < 0.0) {
        return Err(LabError::SignatureViolated { negative: 0 });
    }
    Ok(scale(-1.0 / (-q).sqrt(), &g.raise(&dt)))
}

/// Null frame adapted to a null covector `du` at a point.
pub fn null_frame_at(du: &Vec4, g: &MetricAt<4>) -> LabResult<NullFrame> {
    let res = g.ip_inv(du, du);
    let scale_du = dot(du, du).max(1.0);
    if res.abs() > EIKONAL_TOL * scale_du {
        return Err(LabError::EikonalViolated { residual: res });
    }
    let l = scale(-1.0, &g.raise(du));
    let n = unit_normal(g)?;
    let c = -g.ip(&l, &n);
    if c.abs() < 1e-14 {
        return Err(LabError::DegeneratePhase);
    }
    if c < 0.0 || l[0] <= 0.0 {
        return Err(LabError::NotFutureDirected);
    }
    // L = c (n + N'), N' unit spacelike orthogonal to n
    let w = axpy(&l, -c, &n);
    let np = scale(1.0 / c, &w);
    let lbar = scale(1.0 / c, &axpy(&n, -1.0, &np));
    let project = |v: &Vec4| -> Vec4 {
        let a = axpy(v, g.ip(v, &n), &n);
        axpy(&a, -g.ip(v, &np), &np)
    };
    let mut es: Vec<Vec4> = Vec::with_capacity(2);
    for axis in 1..4 {
        let mut v = [0.0; 4];
        v[axis] = 1.0;
        let mut v = project(&v);
        for e in &es {
            v = axpy(&v, -g.ip(&v, e), e);
        }
        let nn = g.ip(&v, &v);
        if nn > 1e-8 {
            es.push(scale(1.0 / nn.sqrt(), &v));
            if es.len() == 2 {
                break;
            }
        }
    }
    if es.len() < 2 {
        return Err(LabError::DegeneratePhase);
    }
    // one re-orthogonalization pass for roundoff
    let e1 = es[0];
    let mut e2 = project(&es[1]);
    e2 = axpy(&e2, -g.ip(&e2, &e1), &e1);
    e2 = scale(1.0 / g.ip(&e2, &e2).sqrt(), &e2);
    Ok(NullFrame { l, lbar, e1, e2 })
}

pub fn build_null_frame(u: &Phase, g: &LorentzMetricField, p: &Vec4) -> LabResult<NullFrame> {
    let m = g.at(p)?;
    null_frame_at(&u.du(p)?, &m)
}

/// `D_L L` for `L = -g^{-1} du`.
pub fn geodesic_residual(u: &Phase, g: &LorentzMetricField, p: &Vec4, h: Real) -> LabResult<Vec4> {
    let rule = g.rule();
    let lvec = |q: &Vec4| -> LabResult<Vec4> {
        let m = MetricAt::new(rule(q)?)?;
        Ok(scale(-1.0, &m.raise(&u.du(q)?)))
    };
    let l = lvec(p)?;
    let dl = grad(&lvec, p, h)?;
    let gam = christoffels_rule(&rule, p, h)?;
    Ok(std::array::from_fn(|a| {
        let mut v = 0.0;
        for mu in 0..4 {
            v += l[mu] * dl[mu][a];
            for nu in 0..4 {
                v += gam[a][mu][nu] * l[mu] * l[nu];
            }
        }
        v
    }))
}

// ---------------------------------------------------------------- harmonics

/// Defining pattern of a harmonic word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WordClass {
    N1,
    N2,
    N3,
    I2,
    I3,
    I4,
    I5,
    /// Any other combination (not produced by `harmonic_lattice`).
    Other,
}

impl WordClass {
    pub fn is_null(self) -> bool {
        matches!(self, WordClass::N1 | WordClass::N2 | WordClass::N3)
    }

    /// Member of the mixed set `I = I2 u I3`.
    pub fn is_mixed(self) -> bool {
        matches!(self, WordClass::I2 | WordClass::I3)
    }

    /// Member of `W = N u I`.
    pub fn in_w(self) -> bool {
        self.is_null() || self.is_mixed()
    }

    fn from_magnitudes(mut m: Vec<u32>) -> WordClass {
        m.sort_unstable();
        match m.as_slice() {
            [1] => WordClass::N1,
            [2] => WordClass::N2,
            [3] => WordClass::N3,
            [1, 1] => WordClass::I2,
            [1, 2] | [1, 1, 1] => WordClass::I3,
            [1, 3] | [1, 1, 2] | [1, 1, 1, 1] => WordClass::I4,
            [1, 4] | [2, 3] | [1, 2, 2] | [1, 1, 3] | [1, 1, 1, 2] => WordClass::I5,
            _ => WordClass::Other,
        }
    }
}

/// Integer combination of phases, stored with canonical sign (first nonzero
/// coefficient positive) and sorted by label.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HarmonicWord {
    pub coeffs: Vec<(usize, i32)>,
    pub class: WordClass,
}

impl HarmonicWord {
    /// Builds a canonical word; returns the word and the sign `s` with
    /// `input = s * word`.
    pub fn canonical(coeffs: &[(usize, i32)]) -> Option<(HarmonicWord, i32)> {
        let mut c: Vec<(usize, i32)> = Vec::new();
        for &(l, k) in coeffs {
            match c.iter_mut().find(|(m, _)| *m == l) {
                Some(e) => e.1 += k,
                None => c.push((l, k)),
            }
        }
        c.retain(|&(_, k)| k != 0);
        c.sort_unstable();
        let first = c.first()?.1;
        let s = first.signum();
        for e in c.iter_mut() {
            e.1 *= s;
        }
        let class = WordClass::from_magnitudes(c.iter().map(|&(_, k)| k.unsigned_abs()).collect());
        Some((HarmonicWord { coeffs: c, class }, s))
    }

    pub fn single(label: usize, k: i32) -> HarmonicWord {
        Self::canonical(&[(label, k)]).expect("nonzero coefficient").0
    }

    /// `u_a + s u_b`.
    pub fn pair(a: usize, b: usize, s: i32) -> (HarmonicWord, i32) {
        Self::canonical(&[(a, 1), (b, s)]).expect("distinct labels")
    }

    pub fn coeff(&self, label: usize) -> i32 {
        self.coeffs.iter().find(|(l, _)| *l == label).map(|e| e.1).unwrap_or(0)
    }

    /// Value `sum k_A u_A(p)`.
    pub fn eval(&self, phases: &[Phase], p: &Vec4) -> LabResult<Real> {
        let mut v = 0.0;
        for &(l, k) in &self.coeffs {
            v += k as Real * find_phase(phases, l)?.value(p)?;
        }
        Ok(v)
    }

    /// Differential `sum k_A du_A(p)`.
    pub fn differential(&self, phases: &[Phase], p: &Vec4) -> LabResult<Vec4> {
        let mut d = [0.0; 4];
        for &(l, k) in &self.coeffs {
            d = axpy(&d, k as Real, &find_phase(phases, l)?.du(p)?);
        }
        Ok(d)
    }
}

impl fmt::Display for HarmonicWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &(l, k)) in self.coeffs.iter().enumerate() {
            let sign = if k < 0 { "-" } else if i > 0 { "+" } else { "" };
            let mag = k.unsigned_abs();
            if mag == 1 {
                write!(f, "{sign}u{l}")?;
            } else {
                write!(f, "{sign}{mag}u{l}")?;
            }
        }
        Ok(())
    }
}

/// Parses `2u0-u1`, `u0+u1` or the letter form `A-B`, `2A+B` (`A` is phase 0).
impl std::str::FromStr for HarmonicWord {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LabError::Config(format!("cannot parse harmonic word {s:?}"));
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let mut coeffs = Vec::new();
        let mut rest = t.as_str();
        while !rest.is_empty() {
            let (sign, body) = match rest.as_bytes()[0] {
                b'-' => (-1, &rest[1..]),
                b'+' => (1, &rest[1..]),
                _ if coeffs.is_empty() => (1, rest),
                _ => return Err(bad()),
            };
            let end = body.find(['+', '-']).unwrap_or(body.len());
            let term = &body[..end];
            rest = &body[end..];
            let digits = term.len() - term.trim_start_matches(|c: char| c.is_ascii_digit()).len();
            let mag: i32 = if digits == 0 { 1 } else { term[..digits].parse().map_err(|_| bad())? };
            let name = &term[digits..];
            let label = match name.as_bytes() {
                [b'u', ..] => name[1..].parse::<usize>().map_err(|_| bad())?,
                [c] if c.is_ascii_uppercase() => (c - b'A') as usize,
                _ => return Err(bad()),
            };
            coeffs.push((label, sign * mag));
        }
        match HarmonicWord::canonical(&coeffs) {
            Some((w, 1)) => Ok(w),
            _ => Err(bad()),
        }
    }
}

pub fn find_phase(phases: &[Phase], label: usize) -> LabResult<&Phase> {
    phases.iter().find(|p| p.label == label).ok_or(LabError::UnknownPhase(label))
}

/// Coefficient patterns of N, I2..I5 as magnitude lists over distinct labels.
const PATTERNS: &[&[i32]] = &[
    &[1],
    &[2],
    &[3],
    &[1, 1],
    &[1, 2],
    &[1, 1, 1],
    &[1, 3],
    &[1, 1, 2],
    &[1, 1, 1, 1],
    &[1, 4],
    &[3, 2],
    &[1, 2, 2],
    &[1, 1, 3],
    &[1, 1, 1, 2],
];

fn assignments(labels: &[usize], k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for &l in labels {
        if !cur.contains(&l) {
            cur.push(l);
            assignments(labels, k, cur, out);
            cur.pop();
        }
    }
}

/// All words of `Z = N u I u I4 u I5`, deduplicated up to sign and sorted.
pub fn harmonic_lattice(labels: &[usize]) -> Vec<HarmonicWord> {
    let mut set = BTreeSet::new();
    for pat in PATTERNS {
        let k = pat.len();
        let mut ass = Vec::new();
        assignments(labels, k, &mut Vec::new(), &mut ass);
        for a in ass {
            for signs in 0..(1u32 << k) {
                let coeffs: Vec<(usize, i32)> = a
                    .iter()
                    .zip(pat.iter())
                    .enumerate()
                    .map(|(i, (&l, &m))| (l, if signs >> i & 1 == 1 { -m } else { m }))
                    .collect();
                if let Some((w, _)) = HarmonicWord::canonical(&coeffs) {
                    set.insert(w);
                }
            }
        }
    }
    set.into_iter().collect()
}

/// Words of `W = N u I`.
pub fn w_lattice(labels: &[usize]) -> Vec<HarmonicWord> {
    harmonic_lattice(labels).into_iter().filter(|w| w.class.in_w()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// `min |g^{-1}(dv, dv)|` over `v` in I; infinite when I is empty.
    pub c_coherence: Real,
    /// `min |grad z|` (Euclidean, spatial part) over `z` in Z.
    pub c_spatial: Real,
}

pub fn coherence_margins(
    lattice: &[HarmonicWord],
    phases: &[Phase],
    g: &LorentzMetricField,
    points: &[Vec4],
) -> LabResult<Margins> {
    let per_point: Vec<LabResult<(Real, Real)>> = points
        .par_iter()
        .map(|p| {
            let m = g.at(p)?;
            let mut coh = Real::INFINITY;
            let mut spa = Real::INFINITY;
            for w in lattice {
                let d = w.differential(phases, p)?;
                if w.class.is_mixed() {
                    coh = coh.min(m.ip_inv(&d, &d).abs());
                }
                spa = spa.min(norm2(&[d[1], d[2], d[3]]));
            }
            Ok((coh, spa))
        })
        .collect();
    let mut out = Margins { c_coherence: Real::INFINITY, c_spatial: Real::INFINITY };
    for r in per_point {
        let (c, s) = r?;
        out.c_coherence = out.c_coherence.min(c);
        out.c_spatial = out.c_spatial.min(s);
    }
    Ok(out)
}

/// Default `n^3` lattice over a box for margin sampling on the slice `t`.
pub fn box_lattice(t: Real, lo: Vec3, hi: Vec3, n: usize) -> Vec<Vec4> {
    let mut pts = Vec::with_capacity(n * n * n);
    let step = |a: usize, i: usize| if n > 1 { lo[a] + (hi[a] - lo[a]) * i as Real / (n - 1) as Real } else { lo[a] };
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                pts.push([t, step(0, i), step(1, j), step(2, k)]);
            }
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LorentzMetricField;
    use crate::tensor::minkowski;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn mink() -> MetricAt<4> {
        MetricAt::new(minkowski()).unwrap()
    }

    #[test]
    fn plane_phase_examples() {
        let u = plane_phase(0, [1.0, 0.0, 0.0]).unwrap();
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(u.du(&p).unwrap(), [1.0, -1.0, 0.0, 0.0]);
        let m = mink();
        let du = u.du(&p).unwrap();
        assert_eq!(m.ip_inv(&du, &du), 0.0);
        let f = null_frame_at(&du, &m).unwrap();
        assert_eq!(f.l, [1.0, 1.0, 0.0, 0.0]);
        let u2 = plane_phase(1, [0.0, 1.0, 0.0]).unwrap();
        let f2 = null_frame_at(&u2.du(&p).unwrap(), &m).unwrap();
        assert_eq!(f2.l, [1.0, 0.0, 1.0, 0.0]);
        let u3 = plane_phase(2, [1.0, 1.0, 0.0]).unwrap();
        let d3 = u3.du(&p).unwrap();
        assert_abs_diff_eq!(norm2(&[d3[1], d3[2], d3[3]]), 1.0, epsilon = 1e-15);
        assert_eq!(d3[0], 1.0);
        assert!(matches!(plane_phase(3, [0.0; 3]), Err(LabError::InvalidDirection(_))));
    }

    #[test]
    fn frame_examples_on_minkowski() {
        let m = mink();
        let f = null_frame_at(&[1.0, -1.0, 0.0, 0.0], &m).unwrap();
        assert_eq!(f.lbar, [1.0, -1.0, 0.0, 0.0]);
        assert_eq!(f.e1, [0.0, 0.0, 1.0, 0.0]);
        assert_eq!(f.e2, [0.0, 0.0, 0.0, 1.0]);
        let f = null_frame_at(&[1.0, 0.0, 0.0, -1.0], &m).unwrap();
        assert_eq!(f.e1, [0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(null_frame_at(&[1.0, -0.5, 0.0, 0.0], &m), Err(LabError::EikonalViolated { .. })));
        assert!(matches!(null_frame_at(&[0.0; 4], &m), Err(LabError::DegeneratePhase)));
    }

    #[test]
    fn lattice_counts() {
        let one = harmonic_lattice(&[0]);
        assert_eq!(one.iter().filter(|w| w.class.is_null()).count(), 3);
        assert_eq!(one.iter().filter(|w| w.class.is_mixed()).count(), 0);
        let two = harmonic_lattice(&[0, 1]);
        assert_eq!(two.iter().filter(|w| w.class == WordClass::I2).count(), 2);
        assert_eq!(two.iter().filter(|w| w.class.is_null()).count(), 6);
        // brute force over all coefficient vectors with |k| <= 4 on three labels
        let three = harmonic_lattice(&[0, 1, 2]);
        let triples: HashSet<_> = three
            .iter()
            .filter(|w| w.class == WordClass::I3 && w.coeffs.len() == 3)
            .cloned()
            .collect();
        let mut brute = HashSet::new();
        for a in [-1, 1] {
            for b in [-1, 1] {
                for c in [-1, 1] {
                    brute.insert(HarmonicWord::canonical(&[(0, a), (1, b), (2, c)]).unwrap().0);
                }
            }
        }
        assert_eq!(triples, brute);
        assert_eq!(triples.len(), 4);
    }

    #[test]
    fn canonical_sign() {
        let (w, s) = HarmonicWord::canonical(&[(1, 1), (0, -1)]).unwrap();
        assert_eq!(w.coeffs, vec![(0, 1), (1, -1)]);
        assert_eq!(s, -1);
        assert_eq!(w.to_string(), "u0-u1");
        assert!(HarmonicWord::canonical(&[(0, 1), (0, -1)]).is_none());
    }

    #[test]
    fn margins_for_orthogonal_and_parallel_phases() {
        let a = plane_phase(0, [1.0, 0.0, 0.0]).unwrap();
        let b = plane_phase(1, [0.0, 1.0, 0.0]).unwrap();
        let g = LorentzMetricField::minkowski();
        let pts = box_lattice(0.0, [-1.0; 3], [1.0; 3], 3);
        let lat = harmonic_lattice(&[0, 1]);
        let m = coherence_margins(&lat, &[a.clone(), b.clone()], &g, &pts).unwrap();
        assert_abs_diff_eq!(m.c_coherence, 2.0, epsilon = 1e-15);
        // oracle: smallest spatial gradient among the enumerated words
        let oracle = lat
            .iter()
            .map(|w| {
                let d = w.differential(&[a.clone(), b.clone()], &pts[0]).unwrap();
                norm2(&[d[1], d[2], d[3]])
            })
            .fold(Real::INFINITY, Real::min);
        assert_abs_diff_eq!(m.c_spatial, oracle, epsilon = 1e-15);
        assert!(m.c_spatial > 0.0);
        let (w, _) = HarmonicWord::pair(0, 1, -1);
        let d = w.differential(&[a.clone(), b.clone()], &pts[0]).unwrap();
        assert_abs_diff_eq!(norm2(&[d[1], d[2], d[3]]), 2f64.sqrt(), epsilon = 1e-15);
        let c = plane_phase(1, [1.0, 0.0, 0.0]).unwrap();
        let m = coherence_margins(&lat, &[a.clone(), c], &g, &pts).unwrap();
        assert_eq!(m.c_coherence, 0.0);
        // adding a phase never increases margins
        let d3 = plane_phase(2, [0.0, 0.0, 1.0]).unwrap();
        let m3 = coherence_margins(&harmonic_lattice(&[0, 1, 2]), &[a, b, d3], &g, &pts).unwrap();
        assert!(m3.c_coherence <= 2.0 && m3.c_spatial <= m.c_spatial.max(m3.c_spatial));
    }

    #[test]
    fn geodesic_residuals() {
        let u = plane_phase(0, [1.0, 0.0, 0.0]).unwrap();
        let p = [0.2, 0.1, 0.3, -0.2];
        let r = geodesic_residual(&u, &LorentzMetricField::minkowski(), &p, 1e-2).unwrap();
        assert!(max_abs(&r) < 1e-14);
        let pp = LorentzMetricField::analytic(|p| minkowski() + Sym4::outer(&[1.0, -1.0, 0.0, 0.0]) * (p[2].sin() * p[3].cosh()));
        let r = geodesic_residual(&u, &pp, &p, 1e-2).unwrap();
        assert!(max_abs(&r) < 1e-10);
        // non-eikonal case: g = m + 0.1 x^2 dx^2; oracle L^1 d_1 L^1 + Gamma^1_11 (L^1)^2
        let bump = LorentzMetricField::analytic(|p| {
            let mut m = minkowski();
            m.set(1, 1, 1.0 + 0.1 * p[1] * p[1]);
            m
        });
        let r = geodesic_residual(&u, &bump, &p, 1e-2).unwrap();
        let x = p[1];
        let g11 = 1.0 + 0.1 * x * x;
        let l1 = 1.0 / g11;
        let dl1 = -0.2 * x / (g11 * g11);
        let gam = 0.1 * x / g11;
        assert_abs_diff_eq!(r[1], l1 * dl1 + gam * l1 * l1, epsilon = 1e-9);
        assert!(r[1].abs() > 1e-3);
    }

    fn max_abs(v: &Vec4) -> Real {
        crate::tensor::max_abs(v)
    }

    /// Random Lorentz metric near Minkowski with a random null covector.
    pub(crate) fn random_null(e: [Real; 10], dir: Vec3) -> Option<(MetricAt<4>, Vec4)> {
        let mut g = minkowski();
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                g.set(i, j, g.get(i, j) + e[k]);
                k += 1;
            }
        }
        let m = MetricAt::new(g).ok()?;
        let z = unit_direction(dir).ok()?;
        let xi = [-z[0], -z[1], -z[2]];
        // solve g^00 w^2 + 2 w g^0i xi_i + g^ij xi_i xi_j = 0
        let a = m.ginv.get(0, 0);
        let b: Real = 2.0 * (1..4).map(|i| m.ginv.get(0, i) * xi[i - 1]).sum::<Real>();
        let c: Real = (1..4).flat_map(|i| (1..4).map(move |j| (i, j))).map(|(i, j)| m.ginv.get(i, j) * xi[i - 1] * xi[j - 1]).sum();
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        for w in [(-b + disc.sqrt()) / (2.0 * a), (-b - disc.sqrt()) / (2.0 * a)] {
            let du = [w, xi[0], xi[1], xi[2]];
            if null_frame_at(&du, &m).is_ok() {
                return Some((m, du));
            }
        }
        None
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn frame_laws_on_perturbed_metrics(e in proptest::array::uniform10(-0.05f64..0.05), dir in proptest::array::uniform3(-1.0f64..1.0)) {
            prop_assume!(norm2(&dir) > 0.1);
            if let Some((m, du)) = random_null(e, dir) {
                let f = null_frame_at(&du, &m).unwrap();
                prop_assert!(f.defect(&m) < 1e-12);
                prop_assert!((f.reconstruct_metric(&m) - m.g).max_abs() < 1e-11);
                prop_assert!(f.l[0] > 0.0);
            }
        }
    }

    #[test]
    fn word_parsing() {
        let w: HarmonicWord = "u0-u1".parse().unwrap();
        assert_eq!(w, HarmonicWord::pair(0, 1, -1).0);
        assert_eq!("A-B".parse::<HarmonicWord>().unwrap(), w);
        assert_eq!("2u1".parse::<HarmonicWord>().unwrap(), HarmonicWord::single(1, 2));
        assert_eq!("2A+B".parse::<HarmonicWord>().unwrap().to_string(), "2u0+u1");
        for bad in ["", "u0-u0", "-u0", "x1", "u0++u1"] {
            assert!(bad.parse::<HarmonicWord>().is_err(), "{bad}");
        }
    }
}
