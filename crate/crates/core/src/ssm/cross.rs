//! Cross-scan: four traversal orders of a 2-D feature map.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{Real, Tensor};
use crate::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    RowForward,
    RowBackward,
    ColForward,
    ColBackward,
}

impl Direction {
    /// Fixed order in which directional results are merged.
    pub const ALL: [Direction; 4] =
        [Direction::RowForward, Direction::RowBackward, Direction::ColForward, Direction::ColBackward];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::RowForward => "row_fwd",
            Direction::RowBackward => "row_bwd",
            Direction::ColForward => "col_fwd",
            Direction::ColBackward => "col_bwd",
        }
    }

    /// Row-major site index visited at each step.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        let row_major = 0..h * w;
        let col_major = (0..w).flat_map(move |j| (0..h).map(move |i| i * w + j));
        match self {
            Direction::RowForward => row_major.collect(),
            Direction::RowBackward => row_major.rev().collect(),
            Direction::ColForward => col_major.collect(),
            Direction::ColBackward => {
                let mut v: Vec<usize> = col_major.collect();
                v.reverse();
                v
            }
        }
    }
}

/// Unfolds `[1, C, H, W]` into four `[C, H*W]` sequences, one per [`Direction`].
pub fn cross_scan<T: Real>(x: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
    let (n, c, h, w) = x.nchw()?;
    if n != 1 {
        return Err(shape_err!("cross_scan takes a single feature map, got {}", x.shape()));
    }
    let hw = h * w;
    let gather = |dir: Direction| {
        let order = dir.order(h, w);
        let mut out = Vec::with_capacity(c * hw);
        for plane in x.data().chunks(hw) {
            out.extend(order.iter().map(|&s| plane[s]));
        }
        Tensor::new(&[c, hw], out)
    };
    Ok([
        gather(Direction::RowForward)?,
        gather(Direction::RowBackward)?,
        gather(Direction::ColForward)?,
        gather(Direction::ColBackward)?,
    ])
}

/// Scatters four directional sequences back to `[1, C, H, W]` and sums them.
pub fn cross_merge<T: Real>(seqs: &[Tensor<T>; 4], h: usize, w: usize) -> Result<Tensor<T>> {
    let [c, l] = seqs[0].dims() else {
        return Err(shape_err!("cross_merge expects [C, L] sequences, got {}", seqs[0].shape()));
    };
    let (c, l) = (*c, *l);
    if l != h * w {
        return Err(shape_err!("sequence length {l} does not match {h}x{w}"));
    }
    let mut out = vec![T::zero(); c * l];
    for (dir, seq) in Direction::ALL.iter().zip(seqs) {
        if seq.dims() != [c, l] {
            return Err(shape_err!("{} vs {}", seqs[0].shape(), seq.shape()));
        }
        let order = dir.order(h, w);
        for (dst, src) in out.chunks_mut(l).zip(seq.data().chunks(l)) {
            for (t, &s) in order.iter().enumerate() {
                dst[s] += src[t];
            }
        }
    }
    Tensor::new(&[1, c, h, w], out)
}
