//! Discrete Green's function `G_D` for simple random walk, its far-field
//! asymptotics, the Brownian Green's function `G`, and the convolutional
//! square root of `G_D`.
//!
//! `G_D(x) = (2pi)^-d Int cos(k.x) / (1 - phi(k)) dk` with
//! `phi(k) = (1/d) sum_i cos k_i`. Writing `1/(1-phi) = Int_0^inf
//! exp(-u(1-phi)) du` factorizes the cube integral into modified Bessel
//! functions, leaving the exact one-dimensional representation
//!
//! ```text
//!     G_D(x) = Int_0^inf prod_i [ e^{-u/d} I_{|x_i|}(u/d) ] du
//! ```
//!
//! which we integrate by Gauss-Legendre panels plus an analytic three-term
//! tail. Values are stored once per symmetry orbit, so invariance under
//! coordinate permutations and sign flips is exact by construction.

use std::io::{Read, Write};

use crate::lattice::{check_dim, Point, MAX_DIM};
use crate::stats::Kahan;
use crate::{par, Error, Result};

/// Upper integration limit for the Bessel representation. Beyond this the
/// integrand is replaced by its analytic tail expansion.
const U_MAX: f64 = 2.0e5;
/// Geometric panel growth ratio.
const PANEL_RATIO: f64 = 1.3;
/// Gauss-Legendre nodes per panel.
const PANEL_NODES: usize = 24;

// ---------------------------------------------------------------------------
// Orbit indexing
// ---------------------------------------------------------------------------

/// C(n, k) for small k; exact in u64 for every use here.
pub(crate) fn binom(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..k {
        num *= (n - i) as u128;
        den *= (i + 1) as u128;
    }
    (num / den) as u64
}

/// Number of orbit representatives with `R >= x_1 >= ... >= x_d >= 0`.
pub fn orbit_count(dim: u8, radius: u32) -> usize {
    binom(radius as u64 + dim as u64, dim as u64) as usize
}

/// Rank of a descending tuple in lexicographic order (first coordinate
/// major). Inverse of the enumeration used by [`for_each_rep`].
#[inline(always)]
#[cfg(test)]
fn rank_desc(sorted_desc: &[i32], dim: usize) -> usize {
    let mut r = 0u64;
    for (k, &x) in sorted_desc.iter().take(dim).enumerate() {
        let slots = (dim - k) as u64;
        r += binom(x as u64 + slots - 1, slots);
    }
    r as usize
}

/// Visit every representative in lexicographic (= rank) order.
fn for_each_rep(dim: usize, radius: i32, mut f: impl FnMut(&[i32; MAX_DIM])) {
    let mut x = [0i32; MAX_DIM];
    fn rec(
        axis: usize,
        dim: usize,
        cap: i32,
        x: &mut [i32; MAX_DIM],
        f: &mut impl FnMut(&[i32; MAX_DIM]),
    ) {
        if axis == dim {
            f(x);
            return;
        }
        for v in 0..=cap {
            x[axis] = v;
            rec(axis + 1, dim, v, x, f);
        }
    }
    rec(0, dim, radius, &mut x, &mut f);
}

/// Representatives collected into a vector (rank order).
fn collect_reps(dim: usize, radius: i32) -> Vec<[i32; MAX_DIM]> {
    let mut reps = Vec::with_capacity(orbit_count(dim as u8, radius as u32));
    for_each_rep(dim, radius, |x| reps.push(*x));
    reps
}

#[inline(always)]
fn sorted_abs(c: &[i32; MAX_DIM], dim: usize) -> [i32; MAX_DIM] {
    let mut a = [0i32; MAX_DIM];
    for i in 0..dim {
        a[i] = c[i].abs();
    }
    // insertion sort, descending; dim <= 5
    for i in 1..dim {
        let v = a[i];
        let mut j = i;
        while j > 0 && a[j - 1] < v {
            a[j] = a[j - 1];
            j -= 1;
        }
        a[j] = v;
    }
    a
}

// ---------------------------------------------------------------------------
// Quadrature machinery
// ---------------------------------------------------------------------------

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Legendre P_n(x) and derivative by recurrence
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0f64, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Scaled modified Bessel row `e^-z I_m(z)` for `m = 0..=m_max`, by downward
/// (Miller) recurrence normalized with `I_0 + 2 sum I_m = e^z`.
pub(crate) fn bessel_i_scaled_row(z: f64, m_max: usize) -> Vec<f64> {
    let mut row = vec![0.0f64; m_max + 1];
    if z <= 0.0 {
        row[0] = 1.0;
        return row;
    }
    let start = (m_max as f64).max(z) as usize + (8.0 * z.max(1.0).sqrt()) as usize + 40;
    let mut p_up = 0.0f64; // I_{m+1}
    let mut p_cur = 1e-280f64; // I_m seed at m = start
    let mut norm = Kahan::new();
    norm.add(2.0 * p_cur);
    for m in (1..=start).rev() {
        let p_down = p_up + (2.0 * m as f64 / z) * p_cur; // I_{m-1}
        p_up = p_cur;
        p_cur = p_down;
        if m - 1 >= 1 {
            norm.add(2.0 * p_cur);
        } else {
            norm.add(p_cur);
        }
        if m - 1 <= m_max {
            row[m - 1] = p_cur;
        }
        if p_cur > 1e280 {
            let scale = 1e-280;
            p_up *= scale;
            p_cur *= scale;
            let total = norm.total() * scale;
            norm = Kahan::new();
            norm.add(total);
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
    }
    let s = norm.total();
    for v in row.iter_mut() {
        *v /= s;
    }
    row
}

/// Integrand weight: plain `du` for `G_D`, `u^{-1/2} du` for its
/// convolutional square root.
#[derive(Clone, Copy, PartialEq)]
enum WeightKind {
    Plain,
    InvSqrtU,
}

struct BesselQuadrature {
    /// integration nodes u_j with weights (weight factor folded in)
    weights: Vec<f64>,
    /// rows[j][m] = e^{-u_j/d} I_m(u_j/d)
    rows: Vec<Vec<f64>>,
    /// start of the analytic tail
    u_max: f64,
    /// extra exponent in the tail integrand (1/2 for `InvSqrtU`)
    tail_shift: f64,
}

impl BesselQuadrature {
    fn build(dim: usize, m_max: usize, kind: WeightKind) -> BesselQuadrature {
        let (gl_x, gl_w) = gauss_legendre(PANEL_NODES);
        let mut us = Vec::new();
        let mut weights = Vec::new();
        // first panel [0, 1]: substitute u = s^2 for the InvSqrtU weight so
        // the integrable endpoint singularity disappears
        for i in 0..PANEL_NODES {
            let s = 0.5 + 0.5 * gl_x[i];
            let w = 0.5 * gl_w[i];
            match kind {
                WeightKind::Plain => {
                    us.push(s);
                    weights.push(w);
                }
                WeightKind::InvSqrtU => {
                    us.push(s * s);
                    weights.push(2.0 * w);
                }
            }
        }
        let mut bounds = vec![1.0f64];
        while *bounds.last().unwrap() < U_MAX {
            let next = bounds.last().unwrap() * PANEL_RATIO;
            bounds.push(next);
        }
        for w in bounds.windows(2) {
            let (a, b) = (w[0], w[1]);
            let c = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for i in 0..PANEL_NODES {
                let u = mid + c * gl_x[i];
                us.push(u);
                weights.push(match kind {
                    WeightKind::Plain => c * gl_w[i],
                    WeightKind::InvSqrtU => c * gl_w[i] / u.sqrt(),
                });
            }
        }
        let rows = par::map_indexed(us.len(), |j| bessel_i_scaled_row(us[j] / dim as f64, m_max));
        BesselQuadrature {
            weights,
            rows,
            u_max: *bounds.last().unwrap(),
            tail_shift: match kind {
                WeightKind::Plain => 0.0,
                WeightKind::InvSqrtU => 0.5,
            },
        }
    }

    /// Integrate the product for one lattice orbit representative.
    fn green_value(&self, dim: usize, x: &[i32; MAX_DIM]) -> f64 {
        let mut acc = Kahan::new();
        for (j, w) in self.weights.iter().enumerate() {
            let row = &self.rows[j];
            let mut prod = *w;
            for axis in 0..dim {
                prod *= row[x[axis] as usize];
            }
            acc.add(prod);
        }
        acc.add(self.tail(dim, x));
        acc.total()
    }

    /// Three-term asymptotic tail of the integrand past `u_max`:
    /// `prod_i e^{-z} I_m(z) ~ (2 pi z)^{-1/2} [1 - a1/(8z) + a1 a2/(2(8z)^2)]`
    /// with `z = u/d`, integrated in closed form.
    fn tail(&self, dim: usize, x: &[i32; MAX_DIM]) -> f64 {
        let d = dim as f64;
        let u = self.u_max;
        let mut a1_sum = 0.0;
        let mut b_sum = 0.0;
        let mut a1s = [0.0f64; MAX_DIM];
        for axis in 0..dim {
            let m2 = (x[axis] as f64) * (x[axis] as f64);
            let a1 = 4.0 * m2 - 1.0;
            let a2 = 4.0 * m2 - 9.0;
            a1s[axis] = a1;
            a1_sum += a1;
            b_sum += 0.5 * a1 * a2;
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                b_sum += a1s[i] * a1s[j];
            }
        }
        let e0 = d / 2.0 + self.tail_shift;
        let i1 = u.powf(1.0 - e0) / (e0 - 1.0);
        let i2 = u.powf(-e0) / e0;
        let i3 = u.powf(-e0 - 1.0) / (e0 + 1.0);
        let c = (d / (2.0 * std::f64::consts::PI)).powf(d / 2.0);
        c * (i1 - (d / 8.0) * a1_sum * i2 + (d / 8.0).powi(2) * b_sum * i3)
    }
}

// ---------------------------------------------------------------------------
// GreenTable
// ---------------------------------------------------------------------------

/// Exact `G_D` on the box `|x|_inf <= radius`, orbit-compressed, with the
/// asymptotic `tail_constant * |x|^{2-d}` outside.
#[derive(Clone, Debug)]
pub struct GreenTable {
    dim: u8,
    radius: u32,
    values: Vec<f64>,
    tail_constant: f64,
    /// rank_lut[k][v] = C(v + d-1-k, d-k): per-axis rank contributions
    rank_lut: Vec<Vec<u64>>,
}

fn build_rank_lut(dim: usize, radius: u32) -> Vec<Vec<u64>> {
    (0..dim)
        .map(|k| {
            let slots = (dim - k) as u64;
            (0..=radius as u64)
                .map(|v| binom(v + slots - 1, slots))
                .collect()
        })
        .collect()
}

/// Build the table by deterministic quadrature of the Bessel representation.
/// Fails if the interior harmonic residual comes out above `1e-6`.
pub fn build_green_table(dim: u8, radius: u32) -> Result<GreenTable> {
    check_dim(dim)?;
    if radius < 1 {
        return Err(Error::NonPositive("radius"));
    }
    let d = dim as usize;
    let quad = BesselQuadrature::build(d, radius as usize, WeightKind::Plain);
    let reps = collect_reps(d, radius as i32);
    let values = par::map_indexed(reps.len(), |i| quad.green_value(d, &reps[i]));

    let tail_constant = match dim {
        5 => 5.0 / (4.0 * std::f64::consts::PI * std::f64::consts::PI),
        _ => {
            // Fit c from the boundary shell: G_D ~ c |x|^{2-d} out there.
            let mut acc = Kahan::new();
            let mut cnt = 0u64;
            for (i, rep) in reps.iter().enumerate() {
                if rep[0] == radius as i32 {
                    let n2: i64 = rep.iter().map(|&v| v as i64 * v as i64).sum();
                    let r = (n2 as f64).sqrt();
                    acc.add(values[i] * r.powi(d as i32 - 2));
                    cnt += 1;
                }
            }
            acc.total() / cnt as f64
        }
    };

    let table = GreenTable {
        dim,
        radius,
        values,
        tail_constant,
        rank_lut: build_rank_lut(d, radius),
    };
    let residual = table.harmonic_residual_max();
    if !(residual < 1e-6) {
        return Err(Error::QuadratureResidual(residual));
    }
    Ok(table)
}

impl GreenTable {
    pub fn dim(&self) -> u8 {
        self.dim
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn tail_constant(&self) -> f64 {
        self.tail_constant
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `G_D(x)`: table lookup inside the box, asymptotic law outside.
    /// Total on all of `Z^d`.
    #[inline]
    pub fn eval(&self, x: &Point) -> f64 {
        self.eval_raw(x.raw())
    }

    /// `G_D(a - b)` without building the intermediate point.
    #[inline(always)]
    pub fn eval_diff(&self, a: &Point, b: &Point) -> f64 {
        let mut c = [0i32; MAX_DIM];
        let (ar, br) = (a.raw(), b.raw());
        for i in 0..MAX_DIM {
            c[i] = ar[i] - br[i];
        }
        self.eval_raw(&c)
    }

    #[inline(always)]
    pub(crate) fn eval_raw(&self, c: &[i32; MAX_DIM]) -> f64 {
        let d = self.dim as usize;
        let a = sorted_abs(c, d);
        if a[0] <= self.radius as i32 {
            let mut r = 0u64;
            for k in 0..d {
                r += self.rank_lut[k][a[k] as usize];
            }
            self.values[r as usize]
        } else {
            let n2: i64 = a.iter().map(|&v| v as i64 * v as i64).sum();
            self.tail_constant * (n2 as f64).sqrt().powi(2 - d as i32)
        }
    }

    /// Max over interior orbit representatives of
    /// `|mean_{|e|=1} G(x+e) - G(x) + delta_{x,0}|`.
    pub fn harmonic_residual_max(&self) -> f64 {
        let d = self.dim as usize;
        let reps = collect_reps(d, self.radius as i32 - 1);
        let res = par::map_indexed(reps.len(), |i| {
            let x = reps[i];
            let mut acc = Kahan::new();
            for axis in 0..d {
                for sign in [1, -1] {
                    let mut y = x;
                    y[axis] += sign;
                    acc.add(self.eval_raw(&y));
                }
            }
            let mut r = acc.total() / (2.0 * d as f64) - self.eval_raw(&x);
            if x == [0i32; MAX_DIM] {
                r += 1.0;
            }
            r.abs()
        });
        res.into_iter().fold(0.0, f64::max)
    }

    /// Max relative mismatch between the stored boundary shell and the
    /// asymptotic tail law.
    pub fn seam_mismatch_max(&self) -> f64 {
        let d = self.dim as usize;
        let mut worst = 0.0f64;
        for_each_rep(d, self.radius as i32, |x| {
            if x[0] == self.radius as i32 {
                let v = self.eval_raw(x);
                let n2: i64 = x.iter().map(|&v| v as i64 * v as i64).sum();
                let asym = self.tail_constant * (n2 as f64).sqrt().powi(2 - d as i32);
                worst = worst.max(((v - asym) / v).abs());
            }
        });
        worst
    }

    /// Stored value at `x = 0`.
    pub fn at_origin(&self) -> f64 {
        self.values[0]
    }

    // -- binary format ------------------------------------------------------
    //
    // header: magic "GRN1", dim u8, radius u32 LE, tail_constant f64 LE;
    // then f64 LE values in lexicographic order of the fundamental domain
    // (0 <= x_d <= ... <= x_1 <= radius). Round-trips bit-exactly.

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"GRN1")?;
        w.write_all(&[self.dim])?;
        w.write_all(&self.radius.to_le_bytes())?;
        w.write_all(&self.tail_constant.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<GreenTable> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"GRN1" {
            return Err(Error::BadTableFile(format!("bad magic {magic:?}")));
        }
        let mut dim = [0u8; 1];
        r.read_exact(&mut dim)?;
        let dim = dim[0];
        check_dim(dim).map_err(|_| Error::BadTableFile(format!("dim {dim}")))?;
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let radius = u32::from_le_bytes(b4);
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let tail_constant = f64::from_le_bytes(b8);
        let count = orbit_count(dim, radius);
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::BadTableFile("trailing bytes".into()));
        }
        Ok(GreenTable {
            dim,
            radius,
            values,
            tail_constant,
            rank_lut: build_rank_lut(dim as usize, radius),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &std::path::Path) -> Result<GreenTable> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        GreenTable::read_from(&mut f)
    }
}

// ---------------------------------------------------------------------------
// Continuous Green's function
// ---------------------------------------------------------------------------

/// Brownian Green's function `G(x) = Gamma(d/2 - 1) / (2 pi^{d/2}) |x|^{2-d}`;
/// for `d = 5` this is `(1/4pi^2) |x|^{-3}`.
pub fn eval_continuous_green(dim: u8, x: &[f64]) -> Result<f64> {
    check_dim(dim)?;
    let n2: f64 = x.iter().map(|v| v * v).sum();
    if n2 == 0.0 {
        return Err(Error::SingularPoint);
    }
    let pi = std::f64::consts::PI;
    let c = match dim {
        3 => 1.0 / (2.0 * pi),
        4 => 1.0 / (2.0 * pi * pi),
        5 => 1.0 / (4.0 * pi * pi),
        _ => unreachable!(),
    };
    Ok(c * n2.sqrt().powi(2 - dim as i32))
}

// ---------------------------------------------------------------------------
// Convolutional square root
// ---------------------------------------------------------------------------

/// Convolutional square root of `G_D`: the kernel `g` with `g * g = G_D`,
/// i.e. the inverse transform of `(1 - phi(k))^{-1/2}`. Via
/// `a^{-1/2} = pi^{-1/2} Int_0^inf u^{-1/2} e^{-a u} du` it has the same
/// Bessel product representation as `G_D` with an extra `u^{-1/2}` weight:
///
/// ```text
///     g(x) = pi^{-1/2} Int_0^inf u^{-1/2} prod_i [ e^{-u/d} I_{|x_i|}(u/d) ] du
/// ```
///
/// Values are tabulated per orbit on `|x|_inf <= half_width` and continued
/// outside by the exact far-field law `c_d |x|^{1-d}` (the inverse transform
/// of `sqrt(2d)/|k|`).
#[derive(Clone, Debug)]
pub struct SqrtGreenTable {
    dim: u8,
    half_width: u32,
    values: Vec<f64>,
    tail_constant: f64,
    rank_lut: Vec<Vec<u64>>,
    far_sum: std::sync::OnceLock<f64>,
}

/// Tensor-GL integral of `|u|^{-p}` over the cube annulus
/// `[-2,2]^d \ [-1,1]^d`, tiled by `3^d - 1` boxes.
fn annulus_box_integral(dim: usize, p: f64) -> f64 {
    let (gx, gw) = gauss_legendre(8);
    let seg = [(-2.0f64, -1.0f64), (-1.0, 1.0), (1.0, 2.0)];
    let mut total = Kahan::new();
    let mut idx = [0usize; MAX_DIM];
    loop {
        if idx[..dim].iter().any(|&s| s != 1) {
            let mut box_sum = Kahan::new();
            let mut node = [0usize; MAX_DIM];
            loop {
                let mut w = 1.0;
                let mut n2 = 0.0;
                for a in 0..dim {
                    let (lo, hi) = seg[idx[a]];
                    let c = 0.5 * (hi - lo);
                    let u = 0.5 * (lo + hi) + c * gx[node[a]];
                    w *= c * gw[node[a]];
                    n2 += u * u;
                }
                box_sum.add(w * n2.sqrt().powf(-p));
                let mut a = 0;
                loop {
                    if a == dim {
                        break;
                    }
                    node[a] += 1;
                    if node[a] < gx.len() {
                        break;
                    }
                    node[a] = 0;
                    a += 1;
                }
                if a == dim {
                    break;
                }
            }
            total.add(box_sum.total());
        }
        let mut a = 0;
        loop {
            if a == dim {
                break;
            }
            idx[a] += 1;
            if idx[a] < 3 {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
        if a == dim {
            break;
        }
    }
    total.total()
}

/// `Int_{|u|_inf > 1} |u|^{-p} du` for `p > d`: geometric annuli scale by
/// `2^{d-p}`, so the integral is the first annulus over `1 - 2^{d-p}`.
fn cube_complement_integral(dim: usize, p: f64) -> f64 {
    annulus_box_integral(dim, p) / (1.0 - 2.0f64.powf(dim as f64 - p))
}

/// Exact lattice sum of `|z|^{-p}` over the shells `lo < |z|_inf <= hi`,
/// by orbit representatives with multiplicities.
fn lattice_shell_sum(dim: usize, lo: i32, hi: i32, p: f64) -> f64 {
    let shells: Vec<i32> = (lo + 1..=hi).collect();
    let parts = par::map_indexed(shells.len(), |si| {
        let s = shells[si];
        let mut acc = Kahan::new();
        // descending tuples with leading coordinate pinned to the shell
        fn rec(
            axis: usize,
            dim: usize,
            cap: i32,
            x: &mut [i32; MAX_DIM],
            acc: &mut Kahan,
            p: f64,
        ) {
            if axis == dim {
                // multiplicity: sign flips of nonzero coords times
                // permutations of the multiset of values
                let mut mult = 1.0f64;
                let mut run = 1;
                for i in 0..dim {
                    if x[i] != 0 {
                        mult *= 2.0;
                    }
                    if i > 0 && x[i] == x[i - 1] {
                        run += 1;
                    } else {
                        run = 1;
                    }
                    mult *= (i + 1) as f64 / run as f64;
                }
                let n2: i64 = x.iter().map(|&v| v as i64 * v as i64).sum();
                acc.add(mult * (n2 as f64).sqrt().powf(-p));
                return;
            }
            for v in 0..=cap {
                x[axis] = v;
                rec(axis + 1, dim, v, x, acc, p);
            }
        }
        let mut x = [0i32; MAX_DIM];
        x[0] = s;
        rec(1, dim, s, &mut x, &mut acc, p);
        acc.total()
    });
    let mut total = Kahan::new();
    for v in parts {
        total.add(v);
    }
    total.total()
}

/// Build the square-root kernel table with grid half-width `half_width`
/// (a power of two, matching the dyadic splitting conventions elsewhere).
pub fn build_sqrt_green(dim: u8, half_width: u32) -> Result<SqrtGreenTable> {
    check_dim(dim)?;
    if half_width < 2 || !half_width.is_power_of_two() {
        return Err(Error::Config(format!(
            "grid half-width must be a power of two >= 2, got {half_width}"
        )));
    }
    let d = dim as usize;
    let quad = BesselQuadrature::build(d, half_width as usize, WeightKind::InvSqrtU);
    let reps = collect_reps(d, half_width as i32);
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let values = par::map_indexed(reps.len(), |i| inv_sqrt_pi * quad.green_value(d, &reps[i]));
    // inverse transform of sqrt(2d)/|k|:
    //   sqrt(2d) Gamma((d-1)/2) / (2 pi^{d/2} Gamma(1/2)) |x|^{1-d}
    let pi = std::f64::consts::PI;
    let gamma_half_dm1 = match dim {
        3 => 1.0,            // Gamma(1)
        4 => pi.sqrt() / 2.0, // Gamma(3/2)
        5 => 1.0,            // Gamma(2)
        _ => unreachable!(),
    };
    let tail_constant =
        (2.0 * d as f64).sqrt() * gamma_half_dm1 / (2.0 * pi.powf(d as f64 / 2.0) * pi.sqrt());
    Ok(SqrtGreenTable {
        dim,
        half_width,
        values,
        tail_constant,
        rank_lut: build_rank_lut(d, half_width),
        far_sum: std::sync::OnceLock::new(),
    })
}

impl SqrtGreenTable {
    pub fn dim(&self) -> u8 {
        self.dim
    }

    pub fn half_width(&self) -> u32 {
        self.half_width
    }

    pub fn tail_constant(&self) -> f64 {
        self.tail_constant
    }

    /// Kernel value at `x`; table lookup inside the grid, far-field law
    /// outside. Total on all of `Z^d`.
    #[inline]
    pub fn eval(&self, x: &Point) -> f64 {
        self.eval_raw(x.raw())
    }

    #[inline(always)]
    fn eval_raw(&self, c: &[i32; MAX_DIM]) -> f64 {
        let d = self.dim as usize;
        let a = sorted_abs(c, d);
        if a[0] <= self.half_width as i32 {
            let mut r = 0u64;
            for k in 0..d {
                r += self.rank_lut[k][a[k] as usize];
            }
            self.values[r as usize]
        } else {
            let n2: i64 = a.iter().map(|&v| v as i64 * v as i64).sum();
            let n2 = n2 as f64;
            // |z|^{1-d} with integer-power fast paths
            self.tail_constant
                * match d {
                    3 => 1.0 / n2,
                    4 => 1.0 / (n2 * n2.sqrt()),
                    _ => 1.0 / (n2 * n2),
                }
        }
    }

    /// Lattice sum `sum_{|z|_inf > L} |z|^{2(1-d)}` entering the far-tail
    /// correction of [`Self::self_convolution`]; exact shells out to `2 L`,
    /// integral beyond.
    fn far_tail_sum(&self) -> f64 {
        *self.far_sum.get_or_init(|| {
            let d = self.dim as usize;
            let l = 2 * self.half_width as i32;
            let p = (2 * d - 2) as f64;
            lattice_shell_sum(d, l, 2 * l, p)
                + (2.0 * l as f64).powf(d as f64 - p) * cube_complement_integral(d, p)
        })
    }

    /// Discrete self-convolution `sum_z g(z) g(x - z)` over all of `Z^d`:
    /// direct summation for `|z|_inf <= 2 half_width`, analytic far-field
    /// estimate beyond. The residual against `G_D` decreases with the grid
    /// half-width.
    pub fn self_convolution(&self, x: &Point) -> f64 {
        let w2 = 2 * self.half_width as i32;
        let d = self.dim as usize;
        let xr = x.raw();
        let mut z = [0i32; MAX_DIM];
        for a in 0..d {
            z[a] = -w2;
        }
        let mut acc = Kahan::new();
        loop {
            let mut diff = [0i32; MAX_DIM];
            for a in 0..d {
                diff[a] = xr[a] - z[a];
            }
            acc.add(self.eval_raw(&z) * self.eval_raw(&diff));
            let mut a = 0;
            loop {
                if a == d {
                    break;
                }
                z[a] += 1;
                if z[a] <= w2 {
                    break;
                }
                z[a] = -w2;
                a += 1;
            }
            if a == d {
                break;
            }
        }
        acc.add(self.tail_constant * self.tail_constant * self.far_tail_sum());
        acc.total()
    }

    /// Max relative self-convolution error against `green` over the orbit
    /// representatives with `|x|_inf <= check_radius`, plus the minimum of
    /// the kernel on that range (positivity check).
    pub fn convolution_check(&self, green: &GreenTable, check_radius: u32) -> (f64, f64) {
        let d = self.dim as usize;
        self.far_tail_sum();
        let reps = collect_reps(d, check_radius as i32);
        let errs = par::map_indexed(reps.len(), |i| {
            let p = Point::new(&reps[i][..d]).unwrap();
            let conv = self.self_convolution(&p);
            let exact = green.eval(&p);
            let rel = ((conv - exact) / exact).abs();
            let val = self.eval_raw(&reps[i]);
            (rel, val)
        });
        let mut max_rel = 0.0f64;
        let mut min_val = f64::INFINITY;
        for (rel, val) in errs {
            max_rel = max_rel.max(rel);
            min_val = min_val.min(val);
        }
        (max_rel, min_val)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Point;

    #[test]
    fn binom_small_values() {
        assert_eq!(binom(5, 2), 10);
        assert_eq!(binom(37, 5), 435_897);
        assert_eq!(binom(4, 0), 1);
        assert_eq!(binom(3, 5), 0);
    }

    #[test]
    fn rank_matches_enumeration_order() {
        for dim in 3..=5usize {
            let reps = collect_reps(dim, 6);
            for (i, rep) in reps.iter().enumerate() {
                assert_eq!(rank_desc(rep, dim), i, "dim {dim} rep {rep:?}");
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        // int_{-1}^{1} x^14 dx = 2/15 (degree 14 < 2*8)
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-13);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
    }

    #[test]
    fn bessel_row_known_values() {
        // e^-1 I_0(1) = 0.4657596..., e^-1 I_1(1) = 0.2079104...
        let row = bessel_i_scaled_row(1.0, 4);
        assert!((row[0] - 0.465759607593).abs() < 1e-11, "{}", row[0]);
        assert!((row[1] - 0.207910415350).abs() < 1e-11, "{}", row[1]);
        // normalization: I_0 + 2 sum I_m = e^z means scaled row sums to 1
        let z = 37.5;
        let row = bessel_i_scaled_row(z, 400);
        let s = row[0] + 2.0 * row[1..].iter().sum::<f64>();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    fn small_table(dim: u8) -> GreenTable {
        build_green_table(dim, 8).unwrap()
    }

    #[test]
    fn harmonic_identity_d5() {
        let t = small_table(5);
        assert!(
            t.harmonic_residual_max() < 1e-8,
            "residual {}",
            t.harmonic_residual_max()
        );
    }

    #[test]
    fn harmonic_identity_d4_d3() {
        for dim in [3u8, 4] {
            let t = small_table(dim);
            assert!(
                t.harmonic_residual_max() < 1e-6,
                "dim {dim} residual {}",
                t.harmonic_residual_max()
            );
        }
    }

    #[test]
    fn origin_identity_with_source() {
        // G(0) = 1 + mean of neighbors
        let t = small_table(5);
        let mut s = 0.0;
        for axis in 0..5 {
            for sign in [1, -1] {
                let mut c = [0i32; 5];
                c[axis] = sign;
                s += t.eval(&Point::new(&c).unwrap());
            }
        }
        let rhs = 1.0 + s / 10.0;
        assert!((t.at_origin() - rhs).abs() < 1e-9);
    }

    #[test]
    fn symmetry_is_exact() {
        let t = small_table(5);
        let a = t.eval(&Point::new(&[3, -1, 2, 0, 1]).unwrap());
        let b = t.eval(&Point::new(&[1, 2, 3, 1, 0]).unwrap());
        let c = t.eval(&Point::new(&[-3, 1, -2, 0, -1]).unwrap());
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn monotone_decay_along_axis() {
        let t = small_table(5);
        let mut prev = t.at_origin();
        for k in 1..=8 {
            let v = t.eval(&Point::new(&[k, 0, 0, 0, 0]).unwrap());
            assert!(v < prev, "not decreasing at k={k}");
            prev = v;
        }
    }

    #[test]
    fn tail_beyond_radius_d5() {
        let t = small_table(5);
        let x = Point::new(&[16, 0, 0, 0, 0]).unwrap();
        let expect = 5.0 / (4.0 * std::f64::consts::PI.powi(2)) / 16.0f64.powi(3);
        assert!((t.eval(&x) - expect).abs() < 1e-12);
    }

    #[test]
    fn continuous_green_values() {
        let g1 = eval_continuous_green(5, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((g1 - 1.0 / (4.0 * std::f64::consts::PI.powi(2))).abs() < 1e-15);
        // homogeneity G(2x) = 2^{-3} G(x)
        let g2 = eval_continuous_green(5, &[2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((g2 - g1 / 8.0).abs() < 1e-15);
        let g10 = eval_continuous_green(5, &[10.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((g10 - g1 / 1000.0).abs() < 1e-18);
        assert!(matches!(
            eval_continuous_green(5, &[0.0; 5]),
            Err(Error::SingularPoint)
        ));
    }

    #[test]
    fn file_round_trip_bit_exact() {
        let t = small_table(4);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let u = GreenTable::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(t.dim, u.dim);
        assert_eq!(t.radius, u.radius);
        assert_eq!(t.tail_constant.to_bits(), u.tail_constant.to_bits());
        assert_eq!(t.values.len(), u.values.len());
        for (a, b) in t.values.iter().zip(&u.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn file_rejects_garbage() {
        let mut buf = b"NOPE".to_vec();
        buf.extend_from_slice(&[0u8; 32]);
        assert!(GreenTable::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn sqrt_green_symmetry_and_positivity() {
        let s = build_sqrt_green(5, 8).unwrap();
        let a = s.eval(&Point::new(&[2, -1, 0, 1, 0]).unwrap());
        let b = s.eval(&Point::new(&[1, 0, 2, 0, -1]).unwrap());
        assert_eq!(a.to_bits(), b.to_bits());
        for k in 0..=2 {
            let v = s.eval(&Point::new(&[k, 0, 0, 0, 0]).unwrap());
            assert!(v > 0.0, "kernel not positive at {k}");
        }
    }

    #[test]
    fn sqrt_green_rejects_non_power_of_two() {
        assert!(build_sqrt_green(5, 12).is_err());
    }

    #[test]
    fn sqrt_green_far_field_matches_table_at_seam() {
        // far-field corrections are O(|x|^-2) relative, so the seam at the
        // small test grid is loose; the self-convolution check is the sharp
        // accuracy gate.
        let s = build_sqrt_green(5, 8).unwrap();
        let inside = s.eval(&Point::new(&[8, 0, 0, 0, 0]).unwrap());
        let law = s.tail_constant() / 8.0f64.powi(4);
        assert!(
            ((inside - law) / inside).abs() < 0.10,
            "seam mismatch: table {inside} vs law {law}"
        );
    }

    #[test]
    fn sqrt_green_self_convolution_matches_green() {
        // d = 4 keeps this test light; the d = 5 check runs in acceptance.
        let g = build_green_table(4, 8).unwrap();
        let s = build_sqrt_green(4, 16).unwrap();
        let (max_rel, min_val) = s.convolution_check(&g, 4);
        assert!(max_rel < 0.02, "self-convolution rel err {max_rel}");
        assert!(min_val > 0.0);
    }

    #[test]
    #[ignore = "scratch: truncation size survey"]
    fn scratch_conv_experiment() {
        for (dim, w) in [(4u8, 8u32), (4, 16), (5, 8)] {
            let g = build_green_table(dim, 8).unwrap();
            let s = build_sqrt_green(dim, w).unwrap();
            let (max_rel, min_val) = s.convolution_check(&g, w / 4);
            println!("d={dim} W={w}: max_rel={max_rel:.5} min_val={min_val:.3e}");
        }
    }
}
