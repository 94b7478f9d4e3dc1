use std::collections::VecDeque;

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, OtvmError, Result};
use crate::tensor::Tensor;

/// Anything stored in a [`MemoryBank`].
pub trait FrameIndexed {
    fn frame_index(&self) -> usize;
}

/// Stride-16 key and value of one encoded frame, detached from any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub key: Tensor,
    pub value: Tensor,
    pub frame_index: usize,
}

impl FrameIndexed for MemoryEntry {
    fn frame_index(&self) -> usize {
        self.frame_index
    }
}

/// A memory entry that still carries gradients.
#[derive(Clone, Copy)]
pub struct MemVar<'g> {
    pub key: Var<'g>,
    pub value: Var<'g>,
    pub frame_index: usize,
}

impl FrameIndexed for MemVar<'_> {
    fn frame_index(&self) -> usize {
        self.frame_index
    }
}

impl<'g> MemVar<'g> {
    pub fn to_entry(&self) -> MemoryEntry {
        MemoryEntry {
            key: self.key.tensor(),
            value: self.value.tensor(),
            frame_index: self.frame_index,
        }
    }

    pub fn from_entry(graph: &'g Graph, e: &MemoryEntry) -> Self {
        MemVar {
            key: graph.constant(e.key.clone()),
            value: graph.constant(e.value.clone()),
            frame_index: e.frame_index,
        }
    }
}

/// First frame, previous frame and up to three recent intermediate frames.
#[derive(Clone, Debug)]
pub struct MemoryBank<E> {
    reference: Option<E>,
    previous: Option<E>,
    intermediates: VecDeque<E>,
}

impl<E> Default for MemoryBank<E> {
    fn default() -> Self {
        Self {
            reference: None,
            previous: None,
            intermediates: VecDeque::new(),
        }
    }
}

impl<E: FrameIndexed> MemoryBank<E> {
    pub const MAX_INTERMEDIATES: usize = 3;
    pub const INTERMEDIATE_EVERY: usize = 10;
    pub const CAPACITY: usize = 5;

    pub fn new() -> Self {
        Self::default()
    }

    /// Write the entry of frame `t`: frame 0 becomes the reference, every frame
    /// replaces the previous slot, and every tenth frame after 0 is appended to
    /// the intermediates, evicting the oldest beyond three.
    pub fn update(&mut self, entry: E, t: usize) -> Result<()>
    where
        E: Clone,
    {
        if entry.frame_index() != t {
            return Err(OtvmError::InvalidArgument(format!(
                "entry for frame {} written at t={t}",
                entry.frame_index()
            )));
        }
        if t == 0 {
            self.reference = Some(entry.clone());
        } else if self.reference.is_none() {
            return Err(OtvmError::InvalidArgument(
                "first memory write must be frame 0".into(),
            ));
        }
        if t > 0 && t.is_multiple_of(Self::INTERMEDIATE_EVERY) {
            self.intermediates.push_back(entry.clone());
            while self.intermediates.len() > Self::MAX_INTERMEDIATES {
                self.intermediates.pop_front();
            }
        }
        self.previous = Some(entry);
        Ok(())
    }

    pub fn reference(&self) -> Option<&E> {
        self.reference.as_ref()
    }

    pub fn previous(&self) -> Option<&E> {
        self.previous.as_ref()
    }

    pub fn intermediates(&self) -> impl Iterator<Item = &E> {
        self.intermediates.iter()
    }

    /// Distinct entries ordered by frame index.
    pub fn entries(&self) -> Vec<&E> {
        let mut all: Vec<&E> = self
            .reference
            .iter()
            .chain(self.intermediates.iter())
            .chain(self.previous.iter())
            .collect();
        all.sort_by_key(|e| e.frame_index());
        all.dedup_by_key(|e| e.frame_index());
        all
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.entries().iter().map(|e| e.frame_index()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries().len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_none() && self.previous.is_none()
    }
}

/// Space-time memory read.
///
/// For every query location `j`, attention weights over all memory locations
/// `m` are `softmax_m(key_m · q_key_j)`; the retrieved feature is the weighted
/// sum of memory values. Returns `[retrieved; q_value]` stacked on channels.
pub fn memory_read<'g>(
    entries: &[MemVar<'g>],
    q_key: Var<'g>,
    q_value: Var<'g>,
) -> Result<Var<'g>> {
    let (retrieved, _) = read_parts(entries, q_key)?;
    let qs = q_value.shape();
    if qs[1..] != q_key.shape()[1..] {
        return shape_err(format!(
            "query key {:?} and value {:?} differ spatially",
            q_key.shape(),
            qs
        ));
    }
    let cv = retrieved.shape()[0];
    let r = retrieved.reshape(&[cv, qs[1], qs[2]]);
    Ok(Var::cat_channels(&[r, q_value]))
}

/// Attention weights `[M, h·w]` of the read, one column per query location.
pub fn attention_weights<'g>(entries: &[MemVar<'g>], q_key: Var<'g>) -> Result<Var<'g>> {
    Ok(read_parts(entries, q_key)?.1)
}

fn read_parts<'g>(entries: &[MemVar<'g>], q_key: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
    if entries.is_empty() {
        return Err(OtvmError::EmptyBank);
    }
    let ks = q_key.shape();
    if ks.len() != 3 {
        return shape_err(format!("query key must be [Ck,h,w], got {ks:?}"));
    }
    let ck = ks[0];
    let cv = entries[0].value.shape()[0];
    let mut keys = Vec::with_capacity(entries.len());
    let mut values = Vec::with_capacity(entries.len());
    for e in entries {
        let (k, v) = (e.key.shape(), e.value.shape());
        if k.len() != 3 || k[0] != ck || v.len() != 3 || v[0] != cv || k[1..] != v[1..] {
            return shape_err(format!(
                "memory key {k:?} / value {v:?} incompatible with Ck={ck}, Cv={cv}"
            ));
        }
        let m = k[1] * k[2];
        keys.push(e.key.reshape(&[ck, m]));
        values.push(e.value.reshape(&[cv, m]));
    }
    let km = Var::concat(&keys, 1);
    let vm = Var::concat(&values, 1);
    let q = q_key.reshape(&[ck, ks[1] * ks[2]]);
    let w = km.t().matmul(q).softmax0();
    Ok((vm.matmul(w), w))
}
