//! Exact small-time expectations for lattice walks via distribution
//! convolution. Certifies the reduction-rule constants and the base
//! random-walk moment bounds numerically, and cross-checks the Monte Carlo
//! estimators.

use crate::lattice::{check_dim, Point, MAX_DIM};
use crate::stats::Kahan;
use crate::{par, Error, Result};

/// Memory budget: largest exact time per dimension.
pub fn max_time(dim: u8) -> u32 {
    match dim {
        3 => 60,
        4 => 40,
        _ => 16,
    }
}

/// Exact probability distribution of `S_t` on the box `|x|_inf <= t`,
/// supported on the parity sublattice.
#[derive(Clone, Debug)]
pub struct MassFunction {
    dim: u8,
    t: u32,
    half: i32,
    probs: Vec<f64>,
}

/// `|v|_+^{-p}` from the squared norm, with fast paths for the exponents
/// used by the reduction tables.
#[inline(always)]
pub(crate) fn inv_norm_pow(n2: i64, p: f64) -> f64 {
    if n2 <= 1 {
        return 1.0;
    }
    let x = n2 as f64;
    if p == 3.0 {
        1.0 / (x * x.sqrt())
    } else if p == 4.0 {
        1.0 / (x * x)
    } else if p == 2.0 {
        1.0 / x
    } else if p == 1.5 {
        let r = x.sqrt();
        1.0 / (r * r.sqrt())
    } else if p == 1.0 {
        1.0 / x.sqrt()
    } else if p == 0.5 {
        1.0 / x.sqrt().sqrt()
    } else {
        x.powf(-0.5 * p)
    }
}

impl MassFunction {
    pub fn dim(&self) -> u8 {
        self.dim
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    fn side(&self) -> usize {
        (2 * self.half + 1) as usize
    }

    #[inline(always)]
    fn index(&self, c: &[i32; MAX_DIM]) -> usize {
        let side = self.side();
        let d = self.dim as usize;
        let mut idx = 0usize;
        for a in (0..d).rev() {
            idx = idx * side + (c[a] + self.half) as usize;
        }
        idx
    }

    #[inline(always)]
    fn decode(&self, mut i: usize) -> [i32; MAX_DIM] {
        let side = self.side();
        let d = self.dim as usize;
        let mut c = [0i32; MAX_DIM];
        for a in c.iter_mut().take(d) {
            *a = (i % side) as i32 - self.half;
            i /= side;
        }
        c
    }

    /// `P(S_t = x)`; zero outside the box.
    pub fn prob(&self, x: &Point) -> f64 {
        if x.linf() > self.half {
            0.0
        } else {
            self.probs[self.index(x.raw())]
        }
    }

    /// Total mass (should be 1 up to rounding).
    pub fn total_mass(&self) -> f64 {
        let mut k = Kahan::new();
        for &p in &self.probs {
            k.add(p);
        }
        k.total()
    }

    /// Exact second moment `E|S_t|^2` (equals `t`).
    pub fn second_moment(&self) -> f64 {
        let mut k = Kahan::new();
        for (i, &p) in self.probs.iter().enumerate() {
            if p != 0.0 {
                let c = self.decode(i);
                let n2: i64 = c.iter().map(|&v| v as i64 * v as i64).sum();
                k.add(p * n2 as f64);
            }
        }
        k.total()
    }

    /// Normalization, nonnegativity, parity support, and symmetry checks.
    pub fn validate(&self) -> Result<()> {
        let mass = self.total_mass();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::QuadratureResidual((mass - 1.0).abs()));
        }
        let parity = (self.t % 2) as i64;
        for (i, &p) in self.probs.iter().enumerate() {
            if p < 0.0 {
                return Err(Error::BadTableFile("negative mass".into()));
            }
            let c = self.decode(i);
            let s: i64 = c.iter().map(|&v| v.abs() as i64).sum();
            if s % 2 != parity && p != 0.0 {
                return Err(Error::BadTableFile("mass off the parity sublattice".into()));
            }
            let mut f = c;
            for v in f.iter_mut() {
                *v = -*v;
            }
            if self.probs[self.index(&f)] != p {
                return Err(Error::BadTableFile("mass not sign-symmetric".into()));
            }
        }
        // full orbit symmetry: every cell equals its canonical representative
        let d = self.dim as usize;
        for (i, &p) in self.probs.iter().enumerate() {
            let c = self.decode(i);
            let mut rep = c;
            for v in rep.iter_mut().take(d) {
                *v = v.abs();
            }
            rep[..d].sort_unstable_by(|a, b| b.cmp(a));
            if self.probs[self.index(&rep)] != p {
                return Err(Error::BadTableFile("mass not orbit-symmetric".into()));
            }
        }
        Ok(())
    }

    /// `E prod_j |S_t - y_j|_+^{-w_j}`, exactly.
    pub fn expect_product(&self, anchors: &[(Point, f64)]) -> f64 {
        let d = self.dim as usize;
        let chunk = 1usize << 16;
        let n_chunks = self.probs.len().div_ceil(chunk);
        let parts = par::map_indexed(n_chunks, |ci| {
            let mut acc = Kahan::new();
            let lo = ci * chunk;
            let hi = (lo + chunk).min(self.probs.len());
            for i in lo..hi {
                let p = self.probs[i];
                if p == 0.0 {
                    continue;
                }
                let c = self.decode(i);
                let mut f = p;
                for (y, w) in anchors {
                    let yr = y.raw();
                    let mut n2 = 0i64;
                    for a in 0..d {
                        let dv = (c[a] - yr[a]) as i64;
                        n2 += dv * dv;
                    }
                    f *= inv_norm_pow(n2, *w);
                }
                acc.add(f);
            }
            acc.total()
        });
        let mut k = Kahan::new();
        for v in parts {
            k.add(v);
        }
        k.total()
    }
}

/// Exact `p_t` by repeated convolution with the nearest-neighbor kernel.
pub fn step_distribution_power(dim: u8, t: u32) -> Result<MassFunction> {
    check_dim(dim)?;
    if t > max_time(dim) {
        return Err(Error::BudgetExceeded(format!(
            "t = {t} exceeds exact-convolution budget {} for d = {dim}",
            max_time(dim)
        )));
    }
    let d = dim as usize;
    let half = t as i32;
    let side = (2 * half + 1) as usize;
    let len = side.pow(d as u32);
    let mut mf = MassFunction {
        dim,
        t,
        half,
        probs: vec![0.0; len],
    };
    let origin = [0i32; MAX_DIM];
    let idx0 = mf.index(&origin);
    mf.probs[idx0] = 1.0;
    let inv = 1.0 / (2 * d) as f64;
    let strides: Vec<usize> = (0..d).map(|a| side.pow(a as u32)).collect();
    for step in 0..t {
        let prev = std::mem::take(&mut mf.probs);
        let next = par::map_indexed(len, |i| {
            let c = mf.decode(i);
            // neighbors stay in bounds inside the reachable sub-box
            let reach = (step + 1) as i32;
            if c.iter().take(d).any(|&v| v.abs() > reach) {
                return 0.0;
            }
            // per-axis pair sums added in sorted order: any lattice symmetry
            // permutes the pair multiset, so values are bit-identical across
            // an orbit
            let mut pair = [0.0f64; MAX_DIM];
            for a in 0..d {
                let up = if c[a] + 1 <= half {
                    prev[i + strides[a]]
                } else {
                    0.0
                };
                let down = if c[a] - 1 >= -half {
                    prev[i - strides[a]]
                } else {
                    0.0
                };
                pair[a] = up + down;
            }
            pair[..d].sort_unstable_by(|x, y| x.total_cmp(y));
            let mut s = 0.0;
            for p in &pair[..d] {
                s += p;
            }
            s * inv
        });
        mf.probs = next;
        let mass = mf.total_mass();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::QuadratureResidual((mass - 1.0).abs()));
        }
    }
    mf.validate()?;
    Ok(mf)
}

/// `E |S_t - x|_+^{-p}`, exactly. Requires `p < dim` so the corresponding
/// bound shapes stay integrable.
pub fn expect_inverse_power(dim: u8, t: u32, x: &Point, p: f64) -> Result<f64> {
    if p >= dim as f64 {
        return Err(Error::NonPositive("need p < dim"));
    }
    let mf = step_distribution_power(dim, t)?;
    Ok(mf.expect_product(&[(*x, p)]))
}

/// Which two-factor expectation to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairPattern {
    /// `E |D|_+^{-q1} |D + E|_+^{-q2}` with `D ~ p_a`, `E ~ p_b` independent
    /// (two chained cross-term links).
    Cross,
    /// `E |U|_+^{-q1} |U - V|_+^{-q2}` with `U ~ p_a`, `V ~ p_b` independent
    /// (an error-term link pair sharing a vertex).
    Error,
}

/// Largest gap for exact pair products (support pairs grow like `(2g+1)^{2d}`).
pub fn max_pair_gap(dim: u8) -> u32 {
    match dim {
        3 => 16,
        4 => 8,
        _ => 4,
    }
}

/// Exact double sum over both supports.
pub fn expect_pair_product(
    dim: u8,
    gaps: (u32, u32),
    pattern: PairPattern,
    exponents: (f64, f64),
) -> Result<f64> {
    check_dim(dim)?;
    let cap = max_pair_gap(dim);
    if gaps.0 > cap || gaps.1 > cap {
        return Err(Error::BudgetExceeded(format!(
            "pair gaps {gaps:?} exceed exact budget {cap} for d = {dim}"
        )));
    }
    let d = dim as usize;
    let pa = step_distribution_power(dim, gaps.0)?;
    let pb = step_distribution_power(dim, gaps.1)?;
    let (q1, q2) = exponents;
    let parts = par::map_indexed(pa.probs.len(), |i| {
        let pu = pa.probs[i];
        if pu == 0.0 {
            return 0.0;
        }
        let u = pa.decode(i);
        let mut nu = 0i64;
        for a in 0..d {
            nu += u[a] as i64 * u[a] as i64;
        }
        let fu = pu * inv_norm_pow(nu, q1);
        let mut acc = Kahan::new();
        for (j, &pv) in pb.probs.iter().enumerate() {
            if pv == 0.0 {
                continue;
            }
            let v = pb.decode(j);
            let mut n2 = 0i64;
            for a in 0..d {
                let dv = match pattern {
                    PairPattern::Cross => (u[a] + v[a]) as i64,
                    PairPattern::Error => (u[a] - v[a]) as i64,
                };
                n2 += dv * dv;
            }
            acc.add(pv * inv_norm_pow(n2, q2));
        }
        fu * acc.total()
    });
    let mut k = Kahan::new();
    for v in parts {
        k.add(v);
    }
    Ok(k.total())
}

// ---------------------------------------------------------------------------
// Rule-constant sweeps
// ---------------------------------------------------------------------------

/// Sweep sizes for [`certify_rule_constants`] and [`rw_moment_sweep`].
#[derive(Clone, Debug)]
pub struct SweepBudget {
    /// times `i` swept (subject to the exact-convolution budget)
    pub times: Vec<u32>,
    /// reach of single-anchor sweeps along axis/diagonal rays
    pub anchor_reach: i32,
    /// reach of the dense orbit block in single-anchor sweeps
    pub dense_reach: i32,
    /// times used for rules with three or more anchors
    pub times_multi: Vec<u32>,
}

impl Default for SweepBudget {
    fn default() -> Self {
        SweepBudget {
            times: vec![1, 2, 3, 4, 6, 8, 12],
            anchor_reach: 8,
            dense_reach: 2,
            times_multi: vec![1, 2, 4, 6],
        }
    }
}

impl SweepBudget {
    /// Same sweep with anchors reaching twice as far (stability probe).
    pub fn doubled(&self) -> SweepBudget {
        SweepBudget {
            times: self.times.clone(),
            anchor_reach: 2 * self.anchor_reach,
            dense_reach: self.dense_reach + 1,
            times_multi: self.times_multi.clone(),
        }
    }
}

/// One certified empirical constant.
#[derive(Clone, Debug, serde::Serialize)]
pub struct RuleConstantRow {
    pub rule: String,
    pub sweep: String,
    pub max_ratio: f64,
    pub argmax: String,
}

fn fmt_point(p: &Point) -> String {
    let mut s = String::from("(");
    for (i, v) in p.coords().iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&v.to_string());
    }
    s.push(')');
    s
}

/// Anchor list: all orbit representatives within `dense_reach`, plus axis,
/// face-diagonal, and full-diagonal rays out to `reach`.
fn anchor_list(dim: u8, dense_reach: i32, reach: i32) -> Vec<Point> {
    let d = dim as usize;
    let mut out: Vec<Point> = Vec::new();
    fn rec(axis: usize, d: usize, cap: i32, x: &mut [i32; MAX_DIM], out: &mut Vec<Point>) {
        if axis == d {
            out.push(Point::new(&x[..d]).unwrap());
            return;
        }
        for v in 0..=cap {
            x[axis] = v;
            rec(axis + 1, d, v, x, out);
        }
    }
    let mut x = [0i32; MAX_DIM];
    rec(0, d, dense_reach, &mut x, &mut out);
    for k in (dense_reach + 1)..=reach {
        let mut axis = [0i32; MAX_DIM];
        axis[0] = k;
        out.push(Point::new(&axis[..d]).unwrap());
        let mut face = [0i32; MAX_DIM];
        face[0] = k;
        face[1] = k;
        out.push(Point::new(&face[..d]).unwrap());
        out.push(Point::new(&vec![k; d]).unwrap());
    }
    out
}

/// Small anchor list for rules with several anchors.
fn anchor_list_multi(dim: u8, reach: i32) -> Vec<Point> {
    let d = dim as usize;
    let mut out = anchor_list(dim, 1, 1);
    for k in 2..=reach {
        if k % 2 == 0 {
            let mut axis = [0i32; MAX_DIM];
            axis[0] = k;
            out.push(Point::new(&axis[..d]).unwrap());
        }
    }
    out
}

struct RuleSpec {
    id: &'static str,
    /// weights of the pivot's incident edges; anchor count = len
    pivot_weights: &'static [f64],
    /// emitted deterministic exponent on the time gap
    gap_exponent: f64,
    /// product of the rewritten-graph factors, given the anchors
    residual: fn(&[Point]) -> f64,
}

fn np(a: &Point, b: &Point) -> f64 {
    a.sub(b).norm_plus()
}

/// The reduction-rule inventory: local pivot patterns of the cross-term
/// table (gap exponent 3/4, weights in {3, 3/2}) and of the error-term
/// tables (gap exponent 1, weights in {3, 1}). Anchors are measured from
/// the conditioning point, which sits at the origin.
fn rule_specs() -> Vec<RuleSpec> {
    vec![
        RuleSpec {
            id: "lem-cross/col1",
            pivot_weights: &[3.0],
            gap_exponent: 0.75,
            residual: |a| a[0].norm_plus().powf(-1.5),
        },
        RuleSpec {
            id: "lem-cross/col3",
            pivot_weights: &[3.0, 1.5],
            gap_exponent: 0.75,
            residual: |a| a[0].norm_plus().powf(-1.5) * np(&a[0], &a[1]).powf(-1.5),
        },
        RuleSpec {
            id: "lem-cross/col4",
            pivot_weights: &[1.5, 1.5],
            gap_exponent: 0.75,
            residual: |a| np(&a[0], &a[1]).powf(-1.5),
        },
        RuleSpec {
            id: "lem-cross/col5",
            pivot_weights: &[1.5],
            gap_exponent: 0.75,
            residual: |_| 1.0,
        },
        RuleSpec {
            id: "tbl-error/col1",
            pivot_weights: &[3.0],
            gap_exponent: 1.0,
            residual: |a| 1.0 / a[0].norm_plus(),
        },
        RuleSpec {
            id: "tbl-error/col2",
            pivot_weights: &[3.0, 1.0],
            gap_exponent: 1.0,
            residual: |a| 1.0 / (a[0].norm_plus() * a[1].norm_plus()),
        },
        RuleSpec {
            id: "tbl-error/col3",
            pivot_weights: &[3.0, 1.0, 1.0],
            gap_exponent: 1.0,
            residual: |a| 1.0 / (a[0].norm_plus() * np(&a[0], &a[1]) * a[2].norm_plus()),
        },
        RuleSpec {
            id: "tbl-path/col1",
            pivot_weights: &[1.0, 1.0, 1.0, 1.0],
            gap_exponent: 1.0,
            residual: |a| 1.0 / (np(&a[0], &a[1]) * np(&a[2], &a[3])),
        },
        RuleSpec {
            id: "tbl-path/col2",
            pivot_weights: &[1.0, 1.0, 1.0],
            gap_exponent: 1.0,
            residual: |a| 1.0 / np(&a[0], &a[1]),
        },
        RuleSpec {
            id: "tbl-path/col3",
            pivot_weights: &[1.0, 1.0],
            gap_exponent: 1.0,
            residual: |_| 1.0,
        },
    ]
}

/// For every reduction-rule column, sweep small times and anchor positions,
/// computing the expectation side exactly and the rewritten side in closed
/// form; report the max ratio (the empirical constant) and its argmax.
pub fn certify_rule_constants(dim: u8, budget: &SweepBudget) -> Result<Vec<RuleConstantRow>> {
    check_dim(dim)?;
    let t_cap = max_time(dim);
    let times: Vec<u32> = budget
        .times
        .iter()
        .copied()
        .filter(|&t| t <= t_cap)
        .collect();
    let times_multi: Vec<u32> = budget
        .times_multi
        .iter()
        .copied()
        .filter(|&t| t <= t_cap)
        .collect();
    let mass: Vec<(u32, MassFunction)> = {
        let mut uniq: Vec<u32> = times.iter().chain(&times_multi).copied().collect();
        uniq.sort_unstable();
        uniq.dedup();
        uniq.into_iter()
            .map(|t| step_distribution_power(dim, t).map(|m| (t, m)))
            .collect::<Result<_>>()?
    };
    let singles = anchor_list(dim, budget.dense_reach, budget.anchor_reach);
    let multi = anchor_list_multi(dim, budget.anchor_reach / 2);

    let mut rows = Vec::new();
    for spec in rule_specs() {
        let k = spec.pivot_weights.len();
        let (anchors, sweep_times): (&[Point], &[u32]) = if k <= 2 {
            (&singles, &times)
        } else {
            (&multi, &times_multi)
        };
        let tuples = anchors.len().pow(k as u32);
        let mut best = (0.0f64, String::new());
        for (t, mf) in mass.iter().filter(|(t, _)| sweep_times.contains(t)) {
            let ratios = par::map_indexed(tuples, |mut idx| {
                let mut tuple = Vec::with_capacity(k);
                for _ in 0..k {
                    tuple.push(anchors[idx % anchors.len()]);
                    idx /= anchors.len();
                }
                let pairs: Vec<(Point, f64)> = tuple
                    .iter()
                    .zip(spec.pivot_weights)
                    .map(|(p, w)| (*p, *w))
                    .collect();
                let lhs = mf.expect_product(&pairs);
                let rhs = (*t as f64).max(1.0).powf(-spec.gap_exponent) * (spec.residual)(&tuple);
                lhs / rhs
            });
            for (i, r) in ratios.iter().enumerate() {
                if *r > best.0 {
                    let mut idx = i;
                    let mut names = Vec::new();
                    for _ in 0..k {
                        names.push(fmt_point(&anchors[idx % anchors.len()]));
                        idx /= anchors.len();
                    }
                    best = (*r, format!("i={t}, anchors={}", names.join(" ")));
                }
            }
        }
        rows.push(RuleConstantRow {
            rule: spec.id.into(),
            sweep: format!(
                "d={dim}, times {:?}, {} anchors^{k}",
                sweep_times,
                anchors.len()
            ),
            max_ratio: best.0,
            argmax: best.1,
        });
    }
    Ok(rows)
}

/// Empirical constants for the base random-walk moment bounds
/// `E|S_i - x|_+^{-4} <= C min(|i|_+^{-2}, |x|_+^{-4})` and the `-3`
/// companion against `min(|i|_+^{-3/2}, |x|_+^{-3})` (both time factors
/// regularized).
pub fn rw_moment_sweep(dim: u8, budget: &SweepBudget) -> Result<Vec<RuleConstantRow>> {
    check_dim(dim)?;
    let t_cap = max_time(dim);
    let times: Vec<u32> = budget
        .times
        .iter()
        .copied()
        .filter(|&t| t <= t_cap)
        .collect();
    let anchors = anchor_list(dim, budget.dense_reach + 1, budget.anchor_reach);
    let cases: [(&str, f64, f64); 2] = [("rw-moment/p4", 4.0, 2.0), ("rw-moment/p3", 3.0, 1.5)];
    let mut rows = Vec::new();
    for (id, p, it) in cases {
        let mut best = (0.0f64, String::new());
        for &t in &times {
            let mf = step_distribution_power(dim, t)?;
            let ratios = par::map_indexed(anchors.len(), |i| {
                let x = anchors[i];
                let lhs = mf.expect_product(&[(x, p)]);
                let bound = (t as f64).max(1.0).powf(-it).min(x.norm_plus().powf(-p));
                lhs / bound
            });
            for (i, r) in ratios.iter().enumerate() {
                if *r > best.0 {
                    best = (*r, format!("i={t}, x={}", fmt_point(&anchors[i])));
                }
            }
        }
        rows.push(RuleConstantRow {
            rule: id.into(),
            sweep: format!("d={dim}, times {times:?}, {} anchors", anchors.len()),
            max_ratio: best.0,
            argmax: best.1,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use crate::stats::RunningStats;

    #[test]
    fn one_step_distribution_d5() {
        let mf = step_distribution_power(5, 1).unwrap();
        let e1 = Point::new(&[1, 0, 0, 0, 0]).unwrap();
        assert!((mf.prob(&e1) - 0.1).abs() < 1e-15);
        assert!((mf.prob(&e1.neg()) - 0.1).abs() < 1e-15);
        assert_eq!(mf.prob(&Point::origin(5).unwrap()), 0.0);
    }

    #[test]
    fn two_step_return_mass_d5() {
        // 10 paths out-and-back, each of probability (1/10)^2
        let mf = step_distribution_power(5, 2).unwrap();
        assert!((mf.prob(&Point::origin(5).unwrap()) - 0.1).abs() < 1e-14);
    }

    #[test]
    fn mass_and_second_moment_exact() {
        for (dim, t) in [(5u8, 6u32), (4, 9), (3, 12)] {
            let mf = step_distribution_power(dim, t).unwrap();
            assert!((mf.total_mass() - 1.0).abs() < 1e-12);
            assert!(
                (mf.second_moment() - t as f64).abs() < 1e-10,
                "E|S_t|^2 != t at d={dim}, t={t}"
            );
        }
    }

    #[test]
    fn budget_is_enforced() {
        assert!(matches!(
            step_distribution_power(5, 17),
            Err(Error::BudgetExceeded(_))
        ));
    }

    #[test]
    fn expect_inverse_power_t0_is_plain_norm() {
        let x = Point::new(&[3, 1, 0, 0, 0]).unwrap();
        let v = expect_inverse_power(5, 0, &x, 4.0).unwrap();
        assert!((v - x.norm_plus().powi(-4)).abs() < 1e-15);
    }

    #[test]
    fn expect_inverse_power_small_case_by_hand() {
        // t = 2, x = 0, p = 4, d = 5: the origin atom carries 1/10 and
        // contributes (1/10) * 1; each other support point z contributes
        // p_2(z) |z|^{-4}.
        let mf = step_distribution_power(5, 2).unwrap();
        let mut expect = Kahan::new();
        for (i, &p) in mf.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let c = mf.decode(i);
            let n2: i64 = c.iter().map(|&v| v as i64 * v as i64).sum();
            expect.add(p * inv_norm_pow(n2, 4.0));
        }
        let got = expect_inverse_power(5, 2, &Point::origin(5).unwrap(), 4.0).unwrap();
        assert!((got - expect.total()).abs() < 1e-15);
        assert!(got > 0.1);
    }

    #[test]
    fn rejects_non_integrable_exponent() {
        let x = Point::origin(5).unwrap();
        assert!(expect_inverse_power(5, 2, &x, 5.0).is_err());
    }

    #[test]
    fn pair_product_difference_identity() {
        // E|S_i - S~_j|^{-3} = E|S_{i+j}|^{-3}: the difference of independent
        // symmetric walks is a single longer walk.
        let lhs = expect_pair_product(5, (2, 3), PairPattern::Error, (0.0, 3.0)).unwrap();
        let rhs = expect_inverse_power(5, 5, &Point::origin(5).unwrap(), 3.0).unwrap();
        assert!(
            (lhs - rhs).abs() < 1e-12,
            "difference identity broken: {lhs} vs {rhs}"
        );
    }

    #[test]
    fn pair_product_cross_error_agree_by_symmetry() {
        let a = expect_pair_product(5, (2, 2), PairPattern::Cross, (3.0, 3.0)).unwrap();
        let b = expect_pair_product(5, (2, 2), PairPattern::Error, (3.0, 3.0)).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn pair_product_monotone_in_gaps() {
        let mut prev = f64::INFINITY;
        for g in [0u32, 1, 2, 3] {
            let v = expect_pair_product(5, (g, 1), PairPattern::Error, (3.0, 3.0)).unwrap();
            assert!(v < prev, "not decreasing at gap {g}");
            prev = v;
        }
    }

    #[test]
    fn pair_product_budget() {
        assert!(expect_pair_product(5, (5, 1), PairPattern::Cross, (3.0, 3.0)).is_err());
    }

    #[test]
    fn oracle_matches_monte_carlo() {
        // 20 random (t, x, p) triples; MC within 3 stderr of the exact value.
        let mut pick = derive_stream(2024, 0);
        for trial in 0..20 {
            let t = 1 + pick.below(8) as u32;
            let p = [1.0, 1.5, 2.0, 3.0, 4.0][pick.below(5) as usize];
            let mut c = [0i32; 5];
            for v in c.iter_mut() {
                *v = pick.below(9) as i32 - 4;
            }
            let x = Point::new(&c).unwrap();
            let exact = expect_inverse_power(5, t, &x, p).unwrap();
            let mut st = RunningStats::new();
            for r in 0..4000 {
                let mut s = derive_stream(7000 + trial, r);
                let w = crate::lattice::simulate_walk(5, t as u64, &mut s).unwrap();
                st.push(inv_norm_pow(w.end().sub(&x).norm2(), p));
            }
            let diff = (st.mean() - exact).abs();
            let tol = 3.0 * st.stderr() + 1e-12;
            assert!(
                diff < tol,
                "trial {trial}: t={t} x={x:?} p={p}: MC {} vs exact {exact} (tol {tol})",
                st.mean()
            );
        }
    }

    #[test]
    fn rule_constants_finite_on_small_sweep() {
        let budget = SweepBudget {
            times: vec![1, 2, 3],
            anchor_reach: 3,
            dense_reach: 1,
            times_multi: vec![1, 2],
        };
        let rows = certify_rule_constants(5, &budget).unwrap();
        assert_eq!(rows.len(), 10);
        for row in &rows {
            assert!(row.max_ratio.is_finite() && row.max_ratio > 0.0, "{row:?}");
        }
    }

    #[test]
    fn rw_moment_constant_finite() {
        let budget = SweepBudget {
            times: vec![1, 2, 4],
            anchor_reach: 4,
            dense_reach: 1,
            times_multi: vec![],
        };
        let rows = rw_moment_sweep(5, &budget).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert!(row.max_ratio.is_finite() && row.max_ratio > 0.0);
        }
    }
}
