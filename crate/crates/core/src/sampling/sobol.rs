//! Unscrambled Sobol sequence in Gray-code order.
//!
//! The all-zero first point of the sequence is skipped, so in one dimension
//! the sequence starts 0.5, 0.75, 0.25, ...

use super::sobol_table::{DIRECTIONS, MAX_DIM};
use crate::error::{Error, Result};

const BITS: usize = 32;
const SCALE: f64 = 1.0 / 4_294_967_296.0;

pub const MAX_SOBOL_DIM: usize = MAX_DIM;

#[derive(Debug, Clone)]
pub struct Sobol {
    dim: usize,
    /// `directions[d][k]` is the k-th direction number of dimension d.
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    index: u64,
}

fn direction_numbers(dim_index: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim_index == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (poly, m) = DIRECTIONS[dim_index];
    let s = (u32::BITS - poly.leading_zeros() - 1) as usize;
    // Inner coefficients a_1 .. a_{s-1}, most significant first.
    let a = (poly >> 1) & ((1u32 << (s - 1)) - 1);
    for k in 0..s.min(BITS) {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!(
                "Sobol sequence supports 1..={MAX_DIM} dimensions, got {dim}"
            )));
        }
        Ok(Self {
            dim,
            directions: (0..dim).map(direction_numbers).collect(),
            state: vec![0; dim],
            index: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of points drawn so far.
    pub fn index(&self) -> u64 {
        self.index
    }

    fn advance(&mut self) {
        let c = self.index.trailing_ones() as usize;
        assert!(c < BITS, "Sobol sequence exhausted");
        for (x, v) in self.state.iter_mut().zip(&self.directions) {
            *x ^= v[c];
        }
        self.index += 1;
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        self.advance();
        self.state.iter().map(|&x| x as f64 * SCALE).collect()
    }

    pub fn next_n(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }

    /// Jumps `n` points ahead. The state at index `k` is the XOR of the
    /// direction numbers selected by the bits of `k`'s Gray code.
    pub fn skip(&mut self, n: u64) {
        let target = self.index.checked_add(n).expect("Sobol sequence exhausted");
        let gray = target ^ (target >> 1);
        assert!(gray >> BITS == 0, "Sobol sequence exhausted");
        for (x, v) in self.state.iter_mut().zip(&self.directions) {
            *x = (0..BITS)
                .filter(|&k| (gray >> k) & 1 == 1)
                .fold(0, |acc, k| acc ^ v[k]);
        }
        self.index = target;
    }
}

/// Next `n` points of `state`.
pub fn sobol_next(state: &mut Sobol, n: usize) -> Vec<Vec<f64>> {
    state.next_n(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Base-2 radical inverse of `i`.
    fn radical_inverse(mut i: u64) -> f64 {
        let (mut out, mut f) = (0.0, 0.5);
        while i > 0 {
            if i & 1 == 1 {
                out += f;
            }
            i >>= 1;
            f *= 0.5;
        }
        out
    }

    #[test]
    fn one_d_prefix_matches_radical_inverse_in_gray_order() {
        let mut s = Sobol::new(1).unwrap();
        let pts: Vec<f64> = s.next_n(3).into_iter().map(|p| p[0]).collect();
        assert_eq!(pts, vec![0.5, 0.75, 0.25]);
        let mut s = Sobol::new(1).unwrap();
        for i in 1u64..1000 {
            let gray = i ^ (i >> 1);
            assert_eq!(s.next_point()[0], radical_inverse(gray));
        }
    }

    #[test]
    fn first_point_is_centre() {
        let mut s = Sobol::new(7).unwrap();
        assert_eq!(s.next_point(), vec![0.5; 7]);
    }

    #[test]
    fn unsupported_dims() {
        assert!(Sobol::new(0).is_err());
        assert!(Sobol::new(MAX_SOBOL_DIM + 1).is_err());
        assert!(Sobol::new(MAX_SOBOL_DIM).is_ok());
    }

    #[test]
    fn same_dim_same_sequence() {
        let mut a = Sobol::new(5).unwrap();
        let mut b = Sobol::new(5).unwrap();
        assert_eq!(a.next_n(50), b.next_n(50));
        let mut c = Sobol::new(5).unwrap();
        c.skip(10);
        let mut d = Sobol::new(5).unwrap();
        assert_eq!(c.next_point(), d.next_n(11)[10]);
        for (first, n) in [(0, 0), (3, 1), (7, 1000), (1000, 4097)] {
            let mut jump = Sobol::new(9).unwrap();
            jump.next_n(first);
            jump.skip(n);
            let mut walk = Sobol::new(9).unwrap();
            walk.next_n(first + n as usize);
            assert_eq!(jump.index(), walk.index());
            assert_eq!(jump.next_n(3), walk.next_n(3));
        }
    }

    #[test]
    fn points_in_unit_cube() {
        let mut s = Sobol::new(30).unwrap();
        for p in s.next_n(2000) {
            assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
        }
    }

    #[test]
    fn matches_reference_sequence() {
        // Unscrambled Joe-Kuo Sobol points from an independent implementation.
        let dims = [0, 1, 2, 3, 9, 57, 199];
        let reference: [(usize, [f64; 7]); 7] = [
            (1, [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]),
            (2, [0.75, 0.25, 0.25, 0.25, 0.75, 0.75, 0.25]),
            (3, [0.25, 0.75, 0.75, 0.75, 0.25, 0.25, 0.75]),
            (4, [0.375, 0.375, 0.625, 0.875, 0.625, 0.375, 0.875]),
            (5, [0.875, 0.875, 0.125, 0.375, 0.125, 0.875, 0.375]),
            (
                100,
                [
                    0.4140625, 0.2578125, 0.7734375, 0.7265625, 0.6953125, 0.2734375, 0.1328125,
                ],
            ),
            (
                1024,
                [
                    0.00146484375,
                    0.37646484375,
                    0.44775390625,
                    0.48681640625,
                    0.67138671875,
                    0.52490234375,
                    0.21630859375,
                ],
            ),
        ];
        let mut s = Sobol::new(200).unwrap();
        let pts = s.next_n(1024);
        for (i, expected) in reference {
            let got: Vec<f64> = dims.iter().map(|&d| pts[i - 1][d]).collect();
            assert_eq!(got, expected, "point {i}");
        }
    }
}
