//! Layered sample space for blind source separation.
//!
//! The space is a poset with a least element `bot`, a mixing layer (one state
//! per mixing coefficient, including higher-order interaction coefficients),
//! a source layer (one state per source sample) and a received layer (one
//! state per received sample). Order runs upward `bot -> mixing -> source ->
//! received`; states inside a layer are never comparable. The source-to-
//! received edge `z(n;m) -> x(l;m)` is dropped when `n == l` so that source
//! states in the same column keep distinct expectation parameters.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

/// Which layer a state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    Bottom,
    Mixing,
    Source,
    Received,
}

/// A state of the sample space. All indices are 0-based; `Mixing::sources`
/// is strictly increasing and holds the interacting source rows.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum State {
    Bottom,
    Mixing { row: usize, sources: Vec<usize> },
    Source { row: usize, sample: usize },
    Received { row: usize, sample: usize },
}

impl State {
    pub fn layer(&self) -> Layer {
        match self {
            State::Bottom => Layer::Bottom,
            State::Mixing { .. } => Layer::Mixing,
            State::Source { .. } => Layer::Source,
            State::Received { .. } => Layer::Received,
        }
    }

    /// Convenience constructor for a first-order mixing state.
    pub fn mixing(row: usize, source: usize) -> Self {
        State::Mixing { row, sources: vec![source] }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Bottom => write!(f, "bot"),
            State::Mixing { row, sources } => {
                let subs: Vec<String> = sources.iter().map(|n| n.to_string()).collect();
                write!(f, "a({};{})", row, subs.join(","))
            }
            State::Source { row, sample } => write!(f, "z({};{})", row, sample),
            State::Received { row, sample } => write!(f, "x({};{})", row, sample),
        }
    }
}

/// Errors from sample-space construction and queries.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpaceError {
    #[error("at least two received signals are required, got {0}")]
    TooFewReceived(usize),
    #[error("dimension must be positive: {0}")]
    ZeroDimension(&'static str),
    #[error("interaction order {order} exceeds the number of sources {sources}")]
    OrderTooLarge { order: usize, sources: usize },
    #[error("state {0} does not belong to this sample space")]
    UnknownState(String),
}

/// Row-major bit matrix; row `i` stores the upset of state `i`.
#[derive(Debug, Clone)]
struct BitMatrix {
    words_per_row: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    fn new(n: usize) -> Self {
        let words_per_row = n.div_ceil(64);
        BitMatrix { words_per_row, bits: vec![0; n * words_per_row] }
    }

    #[inline]
    fn set(&mut self, row: usize, col: usize) {
        self.bits[row * self.words_per_row + col / 64] |= 1 << (col % 64);
    }

    #[inline]
    fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.words_per_row + col / 64] >> (col % 64) & 1 == 1
    }

    /// `row[dst] |= row[src]`.
    fn or_row(&mut self, dst: usize, src: usize) {
        let (d, s) = (dst * self.words_per_row, src * self.words_per_row);
        for w in 0..self.words_per_row {
            let v = self.bits[s + w];
            self.bits[d + w] |= v;
        }
    }

    /// Indices of set bits in a row, ascending.
    fn row_indices(&self, row: usize, n: usize) -> Vec<usize> {
        let base = row * self.words_per_row;
        let mut out = Vec::new();
        for w in 0..self.words_per_row {
            let mut word = self.bits[base + w];
            while word != 0 {
                let b = word.trailing_zeros() as usize;
                let idx = w * 64 + b;
                if idx < n {
                    out.push(idx);
                }
                word &= word - 1;
            }
        }
        out
    }
}

/// All strictly increasing index tuples of length `len` drawn from `0..n`,
/// in lexicographic order.
pub(crate) fn combinations(n: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(len);
    fn rec(n: usize, len: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == len {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            current.push(i);
            rec(n, len, i + 1, current, out);
            current.pop();
        }
    }
    rec(n, len, 0, &mut current, &mut out);
    out
}

/// The layered poset with precomputed reachability.
///
/// State enumeration is fixed: `bot`, then mixing states sorted by
/// interaction order, then row, then subscripts, then source states
/// row-major, then received states row-major. Every vector the model
/// produces is indexed by this enumeration.
#[derive(Debug, Clone)]
pub struct SampleSpace {
    received_rows: usize,
    source_rows: usize,
    samples: usize,
    order: usize,
    states: Vec<State>,
    index: HashMap<State, usize>,
    /// Children per state after edge removal (cover relation).
    cover: Vec<Vec<u32>>,
    /// reach[i] = bitset of the upset of state i (reflexive).
    reach: BitMatrix,
    mixing_count: usize,
    /// Per state, ascending parameter indices j with state (1 + j) below it
    /// (reflexive). Parameter order is mixing then source.
    param_downset: Vec<Vec<u32>>,
}

/// Build the sample space for `l` received signals, `n` source signals,
/// `m` samples and interactions up to order `k`.
pub fn build_sample_space(l: usize, n: usize, m: usize, k: usize) -> Result<SampleSpace, SpaceError> {
    if l == 0 || n == 0 || m == 0 || k == 0 {
        return Err(SpaceError::ZeroDimension(if l == 0 {
            "received signals"
        } else if n == 0 {
            "source signals"
        } else if m == 0 {
            "samples"
        } else {
            "interaction order"
        }));
    }
    if l < 2 {
        return Err(SpaceError::TooFewReceived(l));
    }
    if k > n {
        return Err(SpaceError::OrderTooLarge { order: k, sources: n });
    }

    let mut states = vec![State::Bottom];
    for j in 1..=k {
        for row in 0..l {
            for combo in combinations(n, j) {
                states.push(State::Mixing { row, sources: combo });
            }
        }
    }
    for row in 0..n {
        for sample in 0..m {
            states.push(State::Source { row, sample });
        }
    }
    for row in 0..l {
        for sample in 0..m {
            states.push(State::Received { row, sample });
        }
    }

    let total = states.len();
    let mixing_count = total - 1 - n * m - l * m;
    let source_offset = 1 + mixing_count;
    let received_offset = source_offset + n * m;
    let index: HashMap<State, usize> =
        states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();

    let mut cover: Vec<Vec<u32>> = vec![Vec::new(); total];
    let mut indegree = vec![0u32; total];
    let connect = |cover: &mut Vec<Vec<u32>>, indegree: &mut Vec<u32>, from: usize, to: usize| {
        cover[from].push(to as u32);
        indegree[to] += 1;
    };

    for (i, state) in states.iter().enumerate() {
        match state {
            State::Bottom => {
                for a in 1..source_offset {
                    connect(&mut cover, &mut indegree, 0, a);
                }
            }
            State::Mixing { sources, .. } => {
                for &src in sources {
                    for sample in 0..m {
                        connect(&mut cover, &mut indegree, i, source_offset + src * m + sample);
                    }
                }
            }
            State::Source { row, sample } => {
                // Removal rule: drop z(n;m) -> x(l;m) when n == l. Source rows
                // beyond the received range keep every edge.
                for recv in 0..l {
                    if *row < l && recv == *row {
                        continue;
                    }
                    connect(&mut cover, &mut indegree, i, received_offset + recv * m + sample);
                }
            }
            State::Received { .. } => {}
        }
    }
    // bot is the least element by definition; cover it explicitly for states
    // the layer edges left parentless (received states when n == 1).
    for (i, &parents) in indegree.iter().enumerate().skip(1) {
        if parents == 0 {
            cover[0].push(i as u32);
        }
    }
    for children in cover.iter_mut() {
        children.sort_unstable();
    }

    // Transitive closure in reverse enumeration order; enumeration is already
    // topological because edges only point to later layers.
    let mut reach = BitMatrix::new(total);
    for i in (0..total).rev() {
        reach.set(i, i);
        let children = cover[i].clone();
        for c in children {
            reach.or_row(i, c as usize);
        }
    }

    let param_count = mixing_count + n * m;
    let mut param_downset: Vec<Vec<u32>> = vec![Vec::new(); total];
    for j in 0..param_count {
        for omega in reach.row_indices(1 + j, total) {
            param_downset[omega].push(j as u32);
        }
    }

    Ok(SampleSpace {
        received_rows: l,
        source_rows: n,
        samples: m,
        order: k,
        states,
        index,
        cover,
        reach,
        mixing_count,
        param_downset,
    })
}

impl SampleSpace {
    pub fn received_rows(&self) -> usize {
        self.received_rows
    }

    pub fn source_rows(&self) -> usize {
        self.source_rows
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn interaction_order(&self) -> usize {
        self.order
    }

    /// Number of states in the space.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn state(&self, idx: usize) -> &State {
        &self.states[idx]
    }

    pub fn index_of(&self, state: &State) -> Option<usize> {
        self.index.get(state).copied()
    }

    /// Number of mixing states across all interaction orders.
    pub fn mixing_count(&self) -> usize {
        self.mixing_count
    }

    pub fn source_count(&self) -> usize {
        self.source_rows * self.samples
    }

    pub fn received_count(&self) -> usize {
        self.received_rows * self.samples
    }

    /// Number of parameters (mixing plus source states).
    pub fn param_count(&self) -> usize {
        self.mixing_count + self.source_count()
    }

    /// State index of the first source state.
    pub fn source_offset(&self) -> usize {
        1 + self.mixing_count
    }

    /// State index of the first received state.
    pub fn received_offset(&self) -> usize {
        self.source_offset() + self.source_count()
    }

    pub fn source_index(&self, row: usize, sample: usize) -> usize {
        debug_assert!(row < self.source_rows && sample < self.samples);
        self.source_offset() + row * self.samples + sample
    }

    pub fn received_index(&self, row: usize, sample: usize) -> usize {
        debug_assert!(row < self.received_rows && sample < self.samples);
        self.received_offset() + row * self.samples + sample
    }

    /// Parameter index of a state, if it carries one (mixing and source states).
    pub fn param_index(&self, state_idx: usize) -> Option<usize> {
        (1..=self.param_count()).contains(&state_idx).then(|| state_idx - 1)
    }

    pub fn layer_of(&self, idx: usize) -> Layer {
        self.states[idx].layer()
    }

    /// Whether `s` precedes `omega` (reflexive reachability), by index.
    #[inline]
    pub fn leq_idx(&self, s: usize, omega: usize) -> bool {
        self.reach.get(s, omega)
    }

    fn require(&self, state: &State) -> Result<usize, SpaceError> {
        self.index_of(state).ok_or_else(|| SpaceError::UnknownState(state.to_string()))
    }

    /// Whether `s` precedes `omega` under the partial order.
    pub fn leq(&self, s: &State, omega: &State) -> Result<bool, SpaceError> {
        Ok(self.leq_idx(self.require(s)?, self.require(omega)?))
    }

    /// Ascending state indices of the upset `{omega : s <= omega}`.
    pub fn upset_indices(&self, s: usize) -> Vec<usize> {
        self.reach.row_indices(s, self.len())
    }

    pub fn upset(&self, s: &State) -> Result<Vec<&State>, SpaceError> {
        let idx = self.require(s)?;
        Ok(self.upset_indices(idx).into_iter().map(|i| &self.states[i]).collect())
    }

    /// Ascending state indices of the downset `{s : s <= omega}`.
    pub fn downset_indices(&self, omega: usize) -> Vec<usize> {
        (0..self.len()).filter(|&s| self.reach.get(s, omega)).collect()
    }

    pub fn downset(&self, omega: &State) -> Result<Vec<&State>, SpaceError> {
        let idx = self.require(omega)?;
        Ok(self.downset_indices(idx).into_iter().map(|i| &self.states[i]).collect())
    }

    /// Ascending parameter indices below state `omega` (reflexive).
    #[inline]
    pub fn param_downset(&self, omega: usize) -> &[u32] {
        &self.param_downset[omega]
    }

    /// Splits a parameter-downset slice into its mixing and source parts.
    #[inline]
    pub fn split_param_downset(&self, omega: usize) -> (&[u32], &[u32]) {
        let row = &self.param_downset[omega];
        let cut = row.partition_point(|&j| (j as usize) < self.mixing_count);
        row.split_at(cut)
    }

    /// The 0/1 model matrix with entry `(i, j)` set when state j precedes
    /// state i. Dense; kept for identifiability checks and test oracles.
    pub fn model_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| if self.reach.get(j, i) { 1.0 } else { 0.0 })
    }

    /// Cover edges as text, one `s -> t` pair per line, in enumeration order.
    pub fn dump_cover_edges(&self) -> String {
        let mut out = String::new();
        for (i, children) in self.cover.iter().enumerate() {
            for &c in children {
                out.push_str(&format!("{} -> {}\n", self.states[i], self.states[c as usize]));
            }
        }
        out
    }
}
