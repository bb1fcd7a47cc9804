//! Bit-matrix state encoding and the four-frame input stack.
//!
//! The square matrix is split into vertical column bands: one queue
//! thermometer per approach, then signal state, time of day and day of week.
//! Row 0 is the top row; thermometers fill from the bottom.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{RingBarrierPlan, RingBarrierState};
use crate::sim::{SimClock, SECONDS_PER_DAY};

pub const FRAME_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    pub start_col: usize,
    pub width: usize,
}

impl Band {
    pub fn cols(&self) -> std::ops::Range<usize> {
        self.start_col..self.start_col + self.width
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderLayout {
    pub size: usize,
    pub queue_bands: Vec<Band>,
    pub signal_band: Band,
    pub time_band: Band,
    pub day_band: Band,
    /// First signal row-block index of each ring; each ring owns
    /// `phases × 3` blocks, one per (phase, interval) pair.
    pub ring_block_offsets: Vec<usize>,
    pub signal_blocks: usize,
}

impl EncoderLayout {
    pub fn bands(&self) -> impl Iterator<Item = Band> + '_ {
        self.queue_bands
            .iter()
            .copied()
            .chain([self.signal_band, self.time_band, self.day_band])
    }
}

/// Column layout for a supported matrix size.
pub fn layout_for(size: usize, plan: &RingBarrierPlan, n_approaches: usize) -> Result<EncoderLayout> {
    let (queue_w, signal_w, time_w, day_w) = match size {
        80 => (12, 8, 12, 12),
        24 => (3, 4, 4, 4),
        other => return Err(Error::UnsupportedSize(other)),
    };
    if n_approaches != 4 {
        return Err(Error::Config(format!("encoder layouts are defined for 4 approaches, got {n_approaches}")));
    }
    let mut col = 0;
    let mut take = |w: usize| {
        let b = Band { start_col: col, width: w };
        col += w;
        b
    };
    let queue_bands = (0..n_approaches).map(|_| take(queue_w)).collect();
    let signal_band = take(signal_w);
    let time_band = take(time_w);
    let day_band = take(day_w);
    debug_assert_eq!(col, size);

    let mut ring_block_offsets = Vec::new();
    let mut blocks = 0;
    for r in 0..plan.rings.len() {
        ring_block_offsets.push(blocks);
        blocks += plan.ring_len(r) * 3;
    }
    if blocks > size {
        return Err(Error::Config(format!("{blocks} signal states do not fit in {size} rows")));
    }
    Ok(EncoderLayout { size, queue_bands, signal_band, time_band, day_band, ring_block_offsets, signal_blocks: blocks })
}

/// Square bit matrix, packed row-major, most significant bit first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateMatrix {
    size: usize,
    bits: Vec<u8>,
}

impl StateMatrix {
    pub fn zeros(size: usize) -> StateMatrix {
        StateMatrix { size, bits: vec![0; (size * size).div_ceil(8)] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        let i = row * self.size + col;
        self.bits[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn set(&mut self, row: usize, col: usize) {
        let i = row * self.size + col;
        self.bits[i / 8] |= 0x80 >> (i % 8);
    }

    fn fill(&mut self, rows: std::ops::Range<usize>, band: Band) {
        for r in rows {
            for c in band.cols() {
                self.set(r, c);
            }
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.bits.iter().map(|b| b.count_ones()).sum()
    }

    pub fn count_ones_in(&self, band: Band) -> u32 {
        let mut n = 0;
        for r in 0..self.size {
            for c in band.cols() {
                n += self.get(r, c) as u32;
            }
        }
        n
    }

    /// Calls `f(row, col)` for every set cell in row-major order.
    pub fn for_each_set(&self, mut f: impl FnMut(usize, usize)) {
        for (byte_i, &byte) in self.bits.iter().enumerate() {
            let mut b = byte;
            while b != 0 {
                let lead = b.leading_zeros() as usize;
                let i = byte_i * 8 + lead;
                f(i / self.size, i % self.size);
                b &= !(0x80 >> lead);
            }
        }
    }

    /// Row-major, one bit per cell, MSB-first within each byte.
    pub fn to_packed(&self) -> &[u8] {
        &self.bits
    }

    pub fn from_packed(size: usize, bytes: &[u8]) -> Result<StateMatrix> {
        let need = (size * size).div_ceil(8);
        if bytes.len() != need {
            return Err(Error::ShapeMismatch(format!("{size}x{size} matrix needs {need} bytes, got {}", bytes.len())));
        }
        let mut m = StateMatrix { size, bits: bytes.to_vec() };
        // clear padding bits past the last cell
        let tail = size * size % 8;
        if tail != 0 {
            let last = m.bits.len() - 1;
            m.bits[last] &= !(0xFFu8 >> tail);
        }
        Ok(m)
    }

    pub fn render_ascii(&self) -> String {
        let mut s = String::with_capacity(self.size * (self.size + 1));
        for r in 0..self.size {
            for c in 0..self.size {
                s.push(if self.get(r, c) { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }
}

/// Builds the state matrix for one second.
pub fn encode(
    queues: &[u32],
    signal: &RingBarrierState,
    clock: &SimClock,
    layout: &EncoderLayout,
) -> StateMatrix {
    let n = layout.size;
    let mut m = StateMatrix::zeros(n);
    for (q, band) in queues.iter().zip(&layout.queue_bands) {
        let h = (*q as usize).min(n);
        m.fill(n - h..n, *band);
    }
    for (r, rs) in signal.rings.iter().enumerate() {
        let block = layout.ring_block_offsets[r] + rs.position * 3 + rs.interval.index();
        m.fill(row_block(n, block, layout.signal_blocks), layout.signal_band);
    }
    let h = (n as u64 * clock.second_of_day as u64 / SECONDS_PER_DAY) as usize;
    m.fill(n - h..n, layout.time_band);
    m.fill(row_block(n, clock.day_of_week as usize, 7), layout.day_band);
    m
}

fn row_block(size: usize, k: usize, blocks: usize) -> std::ops::Range<usize> {
    size * k / blocks..size * (k + 1) / blocks
}

/// The four most recent matrices, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameStack {
    frames: [Arc<StateMatrix>; FRAME_COUNT],
}

impl FrameStack {
    /// Bootstraps by repeating the first matrix.
    pub fn new(first: StateMatrix) -> FrameStack {
        let m = Arc::new(first);
        FrameStack { frames: std::array::from_fn(|_| Arc::clone(&m)) }
    }

    pub fn from_frames(frames: [Arc<StateMatrix>; FRAME_COUNT]) -> FrameStack {
        FrameStack { frames }
    }

    pub fn frames(&self) -> &[Arc<StateMatrix>; FRAME_COUNT] {
        &self.frames
    }

    pub fn newest(&self) -> &StateMatrix {
        &self.frames[FRAME_COUNT - 1]
    }

    pub fn size(&self) -> usize {
        self.frames[0].size()
    }

    pub fn push(&mut self, m: StateMatrix) {
        self.push_shared(Arc::new(m));
    }

    pub fn push_shared(&mut self, m: Arc<StateMatrix>) {
        self.frames.rotate_left(1);
        self.frames[FRAME_COUNT - 1] = m;
    }

    /// Dense height × width × channel tensor, channel = frame age rank (oldest first).
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.size();
        let mut out = vec![0.0; n * n * FRAME_COUNT];
        for (c, f) in self.frames.iter().enumerate() {
            f.for_each_set(|r, col| out[(r * n + col) * FRAME_COUNT + c] = 1.0);
        }
        out
    }

    /// Set cells as flat height × width × channel indices.
    pub fn active_indices(&self, out: &mut Vec<u32>) {
        out.clear();
        let n = self.size();
        for (c, f) in self.frames.iter().enumerate() {
            f.for_each_set(|r, col| out.push(((r * n + col) * FRAME_COUNT + c) as u32));
        }
    }
}

/// Functional form of [`FrameStack::push`].
pub fn push_frame(stack: &FrameStack, matrix: StateMatrix) -> FrameStack {
    let mut s = stack.clone();
    s.push(matrix);
    s
}

/// Multi-line dump of a stack, oldest frame first.
pub fn render_stack(stack: &FrameStack) -> String {
    let mut s = String::new();
    for (i, f) in stack.frames().iter().enumerate() {
        let _ = writeln!(s, "frame t-{}:", FRAME_COUNT - 1 - i);
        s.push_str(&f.render_ascii());
    }
    s
}
