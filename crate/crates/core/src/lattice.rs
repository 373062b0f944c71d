//! Lattice points, walk segments, and the dyadic piece bookkeeping.

use serde::{Deserialize, Serialize};

use crate::rng::RngStream;
use crate::{Error, Result};

pub const MAX_DIM: usize = 5;

/// A point of `Z^d`, `3 <= d <= 5`. Coordinates beyond `dim` are zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Point {
    dim: u8,
    c: [i32; MAX_DIM],
}

pub(crate) fn check_dim(dim: u8) -> Result<()> {
    if (3..=5).contains(&dim) {
        Ok(())
    } else {
        Err(Error::BadDimension(dim))
    }
}

impl Point {
    pub fn origin(dim: u8) -> Result<Point> {
        check_dim(dim)?;
        Ok(Point {
            dim,
            c: [0; MAX_DIM],
        })
    }

    pub fn new(coords: &[i32]) -> Result<Point> {
        check_dim(coords.len() as u8)?;
        let mut c = [0i32; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Point {
            dim: coords.len() as u8,
            c,
        })
    }

    #[inline(always)]
    pub fn dim(&self) -> u8 {
        self.dim
    }

    #[inline(always)]
    pub fn coords(&self) -> &[i32] {
        &self.c[..self.dim as usize]
    }

    #[inline(always)]
    pub(crate) fn raw(&self) -> &[i32; MAX_DIM] {
        &self.c
    }

    /// Squared Euclidean norm, exact in i64.
    #[inline(always)]
    pub fn norm2(&self) -> i64 {
        self.c.iter().map(|&x| x as i64 * x as i64).sum()
    }

    #[inline(always)]
    pub fn norm(&self) -> f64 {
        (self.norm2() as f64).sqrt()
    }

    /// `max(|x|, 1)` -- the regularized Euclidean norm used in reciprocal powers.
    #[inline(always)]
    pub fn norm_plus(&self) -> f64 {
        self.norm().max(1.0)
    }

    #[inline(always)]
    pub fn linf(&self) -> i32 {
        self.c.iter().map(|&x| x.abs()).max().unwrap_or(0)
    }

    #[inline(always)]
    pub fn is_origin(&self) -> bool {
        self.c == [0; MAX_DIM]
    }

    #[inline(always)]
    pub fn sub(&self, other: &Point) -> Point {
        let mut c = [0i32; MAX_DIM];
        for i in 0..MAX_DIM {
            c[i] = self.c[i] - other.c[i];
        }
        Point { dim: self.dim, c }
    }

    #[inline(always)]
    pub fn add(&self, other: &Point) -> Point {
        let mut c = [0i32; MAX_DIM];
        for i in 0..MAX_DIM {
            c[i] = self.c[i] + other.c[i];
        }
        Point { dim: self.dim, c }
    }

    pub fn neg(&self) -> Point {
        let mut c = [0i32; MAX_DIM];
        for i in 0..MAX_DIM {
            c[i] = -self.c[i];
        }
        Point { dim: self.dim, c }
    }

    /// Unit step along `axis` with the given sign.
    pub fn unit(dim: u8, axis: usize, positive: bool) -> Result<Point> {
        check_dim(dim)?;
        let mut c = [0i32; MAX_DIM];
        c[axis] = if positive { 1 } else { -1 };
        Ok(Point { dim, c })
    }

    /// Stable 64-bit key; used for hashing and for point-keyed stream
    /// derivation (common random numbers across set contexts).
    #[inline(always)]
    pub fn key(&self) -> u64 {
        let mut k = self.dim as u64;
        for &x in &self.c {
            k = crate::rng::mix2(k, x as u32 as u64);
        }
        k
    }

    /// All neighbors at L1 distance one.
    pub fn neighbors(&self) -> Vec<Point> {
        let d = self.dim as usize;
        let mut out = Vec::with_capacity(2 * d);
        for axis in 0..d {
            for sign in [1i32, -1] {
                let mut c = self.c;
                c[axis] += sign;
                out.push(Point { dim: self.dim, c });
            }
        }
        out
    }
}

/// A contiguous simple-random-walk path with its index bookkeeping.
///
/// `points[t]` is the position at time `start_time + t`; consecutive points
/// differ by exactly one unit in exactly one coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkSegment {
    pub dim: u8,
    pub start_time: u64,
    pub points: Vec<Point>,
}

impl WalkSegment {
    /// Number of steps (one less than the number of points).
    pub fn steps(&self) -> u64 {
        (self.points.len() - 1) as u64
    }

    pub fn start(&self) -> &Point {
        &self.points[0]
    }

    pub fn end(&self) -> &Point {
        self.points.last().unwrap()
    }

    /// True when every increment has L1 length one.
    pub fn increments_valid(&self) -> bool {
        self.points.windows(2).all(|w| {
            let d = w[1].sub(&w[0]);
            d.c.iter().map(|x| x.abs()).sum::<i32>() == 1
        })
    }

    /// Distinct points visited, in first-visit order.
    pub fn distinct_points(&self) -> Vec<Point> {
        let mut seen = std::collections::HashSet::with_capacity(self.points.len());
        let mut out = Vec::with_capacity(self.points.len());
        for p in &self.points {
            if seen.insert(*p) {
                out.push(*p);
            }
        }
        out
    }

    /// Translate every point by `-c` (re-rooting helper).
    pub fn translated(&self, c: &Point) -> WalkSegment {
        WalkSegment {
            dim: self.dim,
            start_time: self.start_time,
            points: self.points.iter().map(|p| p.sub(c)).collect(),
        }
    }
}

/// Simulate `n` steps of simple random walk from the origin.
pub fn simulate_walk(dim: u8, n: u64, stream: &mut RngStream) -> Result<WalkSegment> {
    check_dim(dim)?;
    let d = dim as usize;
    let mut points = Vec::with_capacity(n as usize + 1);
    let mut cur = Point::origin(dim)?;
    points.push(cur);
    for _ in 0..n {
        let r = stream.below(2 * d as u64) as usize;
        cur.c[r / 2] += if r % 2 == 0 { 1 } else { -1 };
        points.push(cur);
    }
    Ok(WalkSegment {
        dim,
        start_time: 0,
        points,
    })
}

/// The `j`-th of `2^l` equal pieces, both endpoints included.
///
/// The walk length must be divisible by `2^l`; callers pad `n` up to a
/// multiple of a power of two before splitting.
pub fn split_segment(walk: &WalkSegment, l: u32, j: u64) -> Result<WalkSegment> {
    let pieces = 1u64 << l;
    let n = walk.steps();
    if n % pieces != 0 {
        return Err(Error::IndivisibleLength {
            len: n,
            divisor: pieces,
        });
    }
    if j < 1 || j > pieces {
        return Err(Error::PieceIndex { l, j, max: pieces });
    }
    let len = n / pieces;
    let a = ((j - 1) * len) as usize;
    let b = (j * len) as usize;
    Ok(WalkSegment {
        dim: walk.dim,
        start_time: walk.start_time + (j - 1) * len,
        points: walk.points[a..=b].to_vec(),
    })
}

/// Split an even-length walk at its midpoint into two walks re-rooted at the
/// middle position: the first half time-reversed, both translated so the
/// midpoint maps to the origin. By reversibility each output is again a
/// simple random walk started at the origin.
pub fn reverse_from_midpoint(walk: &WalkSegment) -> Result<(WalkSegment, WalkSegment)> {
    let n = walk.steps();
    if n % 2 != 0 {
        return Err(Error::OddLength(n));
    }
    let half = (n / 2) as usize;
    let mid = walk.points[half];
    let first = WalkSegment {
        dim: walk.dim,
        start_time: 0,
        points: (0..=half).map(|t| walk.points[half - t].sub(&mid)).collect(),
    };
    let second = WalkSegment {
        dim: walk.dim,
        start_time: 0,
        points: (half..walk.points.len())
            .map(|t| walk.points[t].sub(&mid))
            .collect(),
    };
    Ok((first, second))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use proptest::prelude::*;

    #[test]
    fn zero_step_walk_is_origin() {
        let mut s = derive_stream(1, 0);
        let w = simulate_walk(5, 0, &mut s).unwrap();
        assert_eq!(w.points.len(), 1);
        assert!(w.points[0].is_origin());
    }

    #[test]
    fn rejects_low_dimension() {
        let mut s = derive_stream(1, 0);
        assert!(matches!(
            simulate_walk(2, 10, &mut s),
            Err(Error::BadDimension(2))
        ));
    }

    #[test]
    fn replay_identical_walk() {
        let mut a = derive_stream(42, 7);
        let mut b = derive_stream(42, 7);
        let wa = simulate_walk(5, 10_000, &mut a).unwrap();
        let wb = simulate_walk(5, 10_000, &mut b).unwrap();
        assert_eq!(wa, wb);
    }

    #[test]
    fn mean_square_displacement_is_n() {
        // E|S_n|^2 = n exactly; check the replicate mean to 4 sigma.
        let n = 256u64;
        let reps = 4000;
        let mut sum = 0.0;
        for r in 0..reps {
            let mut s = derive_stream(9, r);
            let w = simulate_walk(5, n, &mut s).unwrap();
            sum += w.end().norm2() as f64;
        }
        let mean = sum / reps as f64;
        // Var|S_n|^2 ~ 2n^2(1-1/d)/... bounded by 2n^2; sd of mean < n*sqrt(2/reps)
        let tol = 4.0 * n as f64 * (2.0 / reps as f64).sqrt();
        assert!(
            (mean - n as f64).abs() < tol,
            "mean {mean} vs {n} (tol {tol})"
        );
    }

    #[test]
    fn split_whole_walk_is_identity() {
        let mut s = derive_stream(3, 1);
        let w = simulate_walk(4, 64, &mut s).unwrap();
        let piece = split_segment(&w, 0, 1).unwrap();
        assert_eq!(piece, w);
    }

    #[test]
    fn split_second_half_starts_at_midtime() {
        let mut s = derive_stream(3, 2);
        let w = simulate_walk(5, 64, &mut s).unwrap();
        let piece = split_segment(&w, 1, 2).unwrap();
        assert_eq!(piece.start_time, 32);
        assert_eq!(piece.points[0], w.points[32]);
    }

    #[test]
    fn split_rejects_bad_indices() {
        let mut s = derive_stream(3, 3);
        let w = simulate_walk(5, 64, &mut s).unwrap();
        assert!(split_segment(&w, 1, 0).is_err());
        assert!(split_segment(&w, 1, 3).is_err());
        assert!(split_segment(&w, 7, 1).is_err()); // 64 steps, 128 pieces
    }

    #[test]
    fn reverse_outputs_start_at_origin_and_cover_range() {
        let mut s = derive_stream(4, 5);
        let w = simulate_walk(5, 128, &mut s).unwrap();
        let (a, b) = reverse_from_midpoint(&w).unwrap();
        assert!(a.points[0].is_origin());
        assert!(b.points[0].is_origin());
        assert!(a.increments_valid());
        assert!(b.increments_valid());
        // union of ranges = range of input translated by -S_{n/2}
        let mid = w.points[64];
        let mut expect: Vec<Point> = w.points.iter().map(|p| p.sub(&mid)).collect();
        let mut got: Vec<Point> = a.points.iter().chain(b.points.iter()).cloned().collect();
        expect.sort_by_key(|p| *p.raw());
        expect.dedup();
        got.sort_by_key(|p| *p.raw());
        got.dedup();
        assert_eq!(expect, got);
    }

    #[test]
    fn reverse_rejects_odd_length() {
        let mut s = derive_stream(4, 6);
        let w = simulate_walk(5, 33, &mut s).unwrap();
        assert!(matches!(reverse_from_midpoint(&w), Err(Error::OddLength(33))));
    }

    #[test]
    fn reversed_half_endpoint_matches_direct_law() {
        // Empirical law of the first output's endpoint vs direct S_{n/2}:
        // compare mean squared radius (a two-sample z-test on |X|^2).
        let n = 128u64;
        let reps = 3000;
        let mut rev = crate::stats::RunningStats::new();
        let mut dir = crate::stats::RunningStats::new();
        for r in 0..reps {
            let mut s = derive_stream(11, r);
            let w = simulate_walk(5, n, &mut s).unwrap();
            let (a, _) = reverse_from_midpoint(&w).unwrap();
            rev.push(a.end().norm2() as f64);
            let mut s2 = derive_stream(12, r);
            let w2 = simulate_walk(5, n / 2, &mut s2).unwrap();
            dir.push(w2.end().norm2() as f64);
        }
        let diff = rev.mean() - dir.mean();
        let se = (rev.stderr().powi(2) + dir.stderr().powi(2)).sqrt();
        assert!(diff.abs() < 4.0 * se, "diff {diff} vs se {se}");
    }

    proptest! {
        #[test]
        fn increments_always_unit_l1(seed in 0u64..1000, n in 0u64..512, dim in 3u8..=5) {
            let mut s = derive_stream(seed, 0);
            let w = simulate_walk(dim, n, &mut s).unwrap();
            prop_assert!(w.increments_valid());
        }

        #[test]
        fn pieces_concatenate_to_walk(seed in 0u64..500, l in 0u32..4) {
            let mut s = derive_stream(seed, 1);
            let w = simulate_walk(5, 1 << 6, &mut s).unwrap();
            let mut glued = vec![w.points[0]];
            for j in 1..=(1u64 << l) {
                let piece = split_segment(&w, l, j).unwrap();
                // shared endpoints: piece starts where the previous ended
                prop_assert_eq!(piece.points[0], *glued.last().unwrap());
                glued.extend_from_slice(&piece.points[1..]);
            }
            prop_assert_eq!(glued, w.points);
        }
    }
}
