//! Two-dimensional base-2 Sobol points.
//!
//! Dimension 1 is the van der Corput sequence; dimension 2 uses the primitive
//! polynomial `x + 1` with initial direction number `m_1 = 1`. Points are
//! produced in Gray-code order, so the sequence starts at the origin.

use crate::Vec2;

const BITS: usize = 32;

fn direction_numbers() -> [[u32; BITS]; 2] {
    let mut v = [[0u32; BITS]; 2];
    for k in 0..BITS {
        v[0][k] = 1 << (BITS - 1 - k);
    }
    // m_k = m_{k-1} xor 2 m_{k-1}, v_k = m_k / 2^k
    let mut m: u64 = 1;
    for k in 0..BITS {
        if k > 0 {
            m ^= m << 1;
        }
        v[1][k] = ((m << (BITS - 1 - k)) & 0xffff_ffff) as u32;
    }
    v
}

/// Streams Sobol points in Gray-code order.
#[derive(Clone, Debug)]
pub struct SobolSequence {
    directions: [[u32; BITS]; 2],
    state: [u32; 2],
    index: u64,
}

impl Default for SobolSequence {
    fn default() -> Self {
        Self::new()
    }
}

impl SobolSequence {
    pub fn new() -> Self {
        SobolSequence {
            directions: direction_numbers(),
            state: [0, 0],
            index: 0,
        }
    }
}

impl Iterator for SobolSequence {
    type Item = [f64; 2];

    fn next(&mut self) -> Option<[f64; 2]> {
        let scale = 1.0 / (1u64 << BITS) as f64;
        let out = [self.state[0] as f64 * scale, self.state[1] as f64 * scale];
        let c = self.index.trailing_ones() as usize;
        if c >= BITS {
            return None;
        }
        for d in 0..2 {
            self.state[d] ^= self.directions[d][c];
        }
        self.index += 1;
        Some(out)
    }
}

/// First `n` points scaled onto the square `[0, extent]^2`.
pub fn sobol_points(n: usize, extent: f64) -> Vec<Vec2> {
    SobolSequence::new()
        .take(n)
        .map(|[x, y]| Vec2::new(x * extent, y * extent))
        .collect()
}
