//! Sliding-window release over a window of `w = (2^k − 1)·w₀` points.
//!
//! The window is tiled by a base bucket of `2^(k−1)` blocks and, on either
//! side of it, buckets of `2^i` blocks (`i < k−1`). The left side (older than
//! the base) and the right side (newer) hold complementary binary
//! decompositions of `2^(k−1) − 1` blocks, so every size below the base
//! appears exactly once. On both sides the larger buckets sit next to the
//! base. Each non-base model is fine-tuned from the model of the next larger
//! bucket, which makes the chain
//!
//! ```text
//! f[size 1] ← f[size 2] ← … ← f[base]
//! ```
//!
//! Advancing by one block increments the right side in binary (the trailing
//! run of small buckets merges with the new block) and decrements the left
//! side (its outermost bucket loses its oldest block and is split into
//! smaller ones). Only buckets whose interval changed are retrained. When the
//! right side would reach the base's size the window is refreshed: the right
//! side plus the new block becomes the base, and the newest half of the old
//! base is re-split as the new left side.

use super::{pow2, EventKind, IdAlloc, PrivacyParams, ReleaseEvent, Scheduler, Trainer};
use crate::erm::ModelId;
use crate::error::{Error, Result};
use crate::ledger::{Eps, Subsystem};
use crate::mechanisms::{noise_scale, NoiseKind, SamplingRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Base,
    Left,
    Right,
}

impl Side {
    pub fn mechanism(&self) -> &'static str {
        match self {
            Side::Base => "sliding-base",
            Side::Left => "sliding-left",
            Side::Right => "sliding-right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bucket {
    /// First stream index.
    pub start: usize,
    /// Size in blocks of `w₀` points; always a power of two.
    pub blocks: usize,
    pub side: Side,
    pub model: ModelId,
}

impl Bucket {
    pub fn interval(&self, w0: usize) -> (usize, usize) {
        (self.start, self.start + self.blocks * w0 - 1)
    }

    pub fn level(&self) -> u32 {
        self.blocks.trailing_zeros()
    }
}

/// `k` such that `w = (2^k − 1)·w₀`, with `k ≥ 2`.
pub fn window_k(w: usize, w0: usize) -> Result<u32> {
    let err = || {
        Error::invalid(
            "w",
            format!("window {w} must equal (2^k - 1)·w0 with k >= 2 for w0 = {w0}"),
        )
    };
    if w0 == 0 || w % w0 != 0 {
        return Err(err());
    }
    let blocks = w / w0 + 1;
    if !blocks.is_power_of_two() || blocks < 4 {
        return Err(err());
    }
    Ok(blocks.trailing_zeros())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlidingConfig {
    pub w: usize,
    pub w0: usize,
    pub params: PrivacyParams,
    /// Subsample every update bucket of `2^j` blocks with probability `1/2^j`.
    pub sampled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowState {
    k: u32,
    w0: usize,
    /// Older than the base, oldest first.
    pub left: Vec<Bucket>,
    pub base: Bucket,
    /// Newer than the base, oldest first.
    pub right: Vec<Bucket>,
}

impl WindowState {
    pub fn w0(&self) -> usize {
        self.w0
    }

    /// Blocks in the base bucket, `2^(k−1)`.
    pub fn base_blocks(&self) -> usize {
        1 << (self.k - 1)
    }

    pub fn right_blocks(&self) -> usize {
        self.right.iter().map(|b| b.blocks).sum()
    }

    pub fn buckets(&self) -> impl Iterator<Item = &Bucket> {
        self.left.iter().chain(std::iter::once(&self.base)).chain(&self.right)
    }

    /// Buckets by strictly decreasing size; the head is the base.
    pub fn chain(&self) -> Vec<Bucket> {
        let mut c: Vec<Bucket> = self.buckets().copied().collect();
        c.sort_by(|a, b| b.blocks.cmp(&a.blocks));
        c
    }

    /// The model published for the window: the tail of the chain.
    pub fn released(&self) -> ModelId {
        self.chain().last().expect("window has at least one bucket").model
    }

    /// `[first, last]` stream indices covered.
    pub fn span(&self) -> (usize, usize) {
        let first = self.buckets().next().unwrap();
        let last = self.buckets().last().unwrap();
        (first.start, last.interval(self.w0).1)
    }

    fn bucket_of_size(&self, blocks: usize) -> Option<&Bucket> {
        self.buckets().find(|b| b.blocks == blocks)
    }

    /// Checks the chain and tiling invariants.
    pub fn check(&self) -> Result<()> {
        let chain = self.chain();
        if chain[0] != self.base {
            return Err(Error::invalid("window", "chain head is not the base"));
        }
        let sizes: Vec<usize> = chain.iter().map(|b| b.blocks).collect();
        let expected: Vec<usize> = (0..self.k).rev().map(|i| 1usize << i).collect();
        if sizes != expected {
            return Err(Error::invalid("window", format!("bucket sizes {sizes:?}, expected {expected:?}")));
        }
        let mut next = None;
        for b in self.buckets() {
            if let Some(n) = next {
                if b.start != n {
                    return Err(Error::invalid("window", format!("gap or overlap before {}", b.start)));
                }
            }
            next = Some(b.interval(self.w0).1 + 1);
        }
        Ok(())
    }

    /// Left buckets of sizes `1, 2, …, 2^(m−1)` blocks tiling
    /// `[start, start + (2^m − 1)·w₀)`, smallest (oldest) first.
    fn split_left(start: usize, m: u32, w0: usize, ids: &mut IdAlloc) -> Vec<Bucket> {
        let mut out = Vec::new();
        let mut at = start;
        for i in 0..m {
            let blocks = 1usize << i;
            out.push(Bucket {
                start: at,
                blocks,
                side: Side::Left,
                model: ids.next(),
            });
            at += blocks * w0;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SlidingScheduler {
    cfg: SlidingConfig,
    k: u32,
    state: Option<WindowState>,
    ids: IdAlloc,
}

impl SlidingScheduler {
    pub fn new(cfg: SlidingConfig) -> Result<Self> {
        let k = window_k(cfg.w, cfg.w0)?;
        Ok(Self {
            cfg,
            k,
            state: None,
            ids: IdAlloc::default(),
        })
    }

    pub fn state(&self) -> Option<&WindowState> {
        self.state.as_ref()
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    fn event(&self, t: usize, kind: EventKind, bucket: &Bucket, reg: Option<ModelId>, tail: bool) -> Result<ReleaseEvent> {
        let p = &self.cfg.params;
        let w0 = self.cfg.w0;
        let level = bucket.level();
        let (trainer, noise, sampling, eps) = match bucket.side {
            Side::Base => (
                Trainer::Psgd,
                NoiseKind::SlidingBase { w0, k: self.k },
                None,
                p.fraction(1, 3),
            ),
            _ if self.cfg.sampled => (
                Trainer::Pberm,
                NoiseKind::SlidingUpdateSampled { w0, level },
                Some(SamplingRule::Reciprocal { level }),
                p.fraction(1, 6 * pow2(level)),
            ),
            _ => (
                Trainer::Pberm,
                NoiseKind::SlidingUpdate { w0 },
                None,
                p.fraction(1, 6 * pow2(level)),
            ),
        };
        Ok(ReleaseEvent {
            t,
            kind,
            level: Some(level),
            interval: bucket.interval(w0),
            model_id: bucket.model,
            reg_source: reg,
            trainer,
            noise_scale: noise_scale(noise, &p.noise())?,
            sampling,
            sampled_p: sampling.map(|r| r.probability(p.eps_f64())).transpose()?,
            eps,
            subsystem: Subsystem::Sliding,
            mechanism: bucket.side.mechanism(),
            released: tail,
        })
    }

    /// Events for `trained` buckets in chain order, each regularized on the
    /// next larger bucket of `state`.
    fn train_events(&self, t: usize, kind: EventKind, state: &WindowState, mut trained: Vec<Bucket>) -> Result<Vec<ReleaseEvent>> {
        trained.sort_by(|a, b| b.blocks.cmp(&a.blocks));
        trained
            .iter()
            .map(|b| {
                let reg = if b.side == Side::Base {
                    None
                } else {
                    Some(
                        state
                            .bucket_of_size(b.blocks * 2)
                            .expect("next larger bucket exists")
                            .model,
                    )
                };
                self.event(t, kind, b, reg, b.blocks == 1)
            })
            .collect()
    }

    /// Fresh layout over `[start, start + w)`: the base on the newest
    /// `2^(k−1)` blocks and the left side split below it.
    fn build(&mut self, start: usize) -> WindowState {
        let w0 = self.cfg.w0;
        let half = 1usize << (self.k - 1);
        let base = Bucket {
            start: start + (half - 1) * w0,
            blocks: half,
            side: Side::Base,
            model: self.ids.next(),
        };
        WindowState {
            k: self.k,
            w0,
            left: WindowState::split_left(start, self.k - 1, w0, &mut self.ids),
            base,
            right: Vec::new(),
        }
    }

    /// Initial layout once the first `w` points are in (`t = w`).
    pub fn window_init(&mut self, t: usize) -> Result<Vec<ReleaseEvent>> {
        if t < self.cfg.w {
            return Err(Error::StreamExhausted {
                needed: self.cfg.w - 1,
                available: t,
            });
        }
        let state = self.build(t - self.cfg.w);
        let all: Vec<Bucket> = state.buckets().copied().collect();
        let events = self.train_events(t, EventKind::WindowInit, &state, all)?;
        self.state = Some(state);
        Ok(events)
    }

    /// Incorporates the block `[t − w₀, t − 1]`.
    pub fn window_advance(&mut self, t: usize) -> Result<Vec<ReleaseEvent>> {
        let w0 = self.cfg.w0;
        let mut state = self
            .state
            .take()
            .ok_or_else(|| Error::invalid("window", "advance before init"))?;
        let expected_end = state.span().1 + 1 + w0;
        if t != expected_end {
            self.state = Some(state);
            return Err(Error::invalid("t", format!("next block ends at {expected_end}, got {t}")));
        }
        let r = state.right_blocks();
        let full = state.base_blocks() - 1;
        if r == full {
            let fresh = self.build(t - self.cfg.w);
            let all: Vec<Bucket> = fresh.buckets().copied().collect();
            let events = self.train_events(t, EventKind::WindowRefresh, &fresh, all)?;
            self.state = Some(fresh);
            return Ok(events);
        }

        // binary increment on the right
        let j = r.trailing_ones();
        let merged = 1usize << j;
        state.right.retain(|b| b.blocks >= merged);
        let new_right = Bucket {
            start: t - merged * w0,
            blocks: merged,
            side: Side::Right,
            model: self.ids.next(),
        };
        state.right.push(new_right);

        // binary decrement on the left: the outermost bucket has exactly
        // `merged` blocks since left and right sizes are complementary
        let outer = state.left.remove(0);
        debug_assert_eq!(outer.blocks, merged);
        let pieces = WindowState::split_left(outer.start + w0, j, w0, &mut self.ids);
        let mut trained = pieces.clone();
        state.left.splice(0..0, pieces);
        trained.push(new_right);

        let events = self.train_events(t, EventKind::WindowAdvance, &state, trained)?;
        self.state = Some(state);
        Ok(events)
    }
}

impl Scheduler for SlidingScheduler {
    fn step(&mut self, t: usize) -> Result<Vec<ReleaseEvent>> {
        let w = self.cfg.w;
        if t < w {
            return Ok(Vec::new());
        }
        if t == w {
            return self.window_init(t);
        }
        if (t - w) % self.cfg.w0 == 0 {
            return self.window_advance(t);
        }
        Ok(Vec::new())
    }

    fn name(&self) -> &'static str {
        if self.cfg.sampled {
            "sliding-sample"
        } else {
            "sliding"
        }
    }

    fn unit(&self) -> usize {
        self.cfg.w0
    }

    fn base_interval(&self) -> Option<(usize, usize)> {
        self.state.as_ref().map(|s| s.base.interval(s.w0))
    }

    fn eps(&self) -> Eps {
        self.cfg.params.eps
    }
}
