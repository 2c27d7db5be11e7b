//! Multi-output random-forest regression built from CART trees.
//!
//! Trees split on `x[feature] <= threshold`, thresholds sit at midpoints
//! between consecutive distinct feature values, and the split criterion is
//! the summed per-output squared error of the two children. Among splits of
//! equal quality the lowest feature index wins, then the lowest threshold.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::signal::StandardScaler;

const MAGIC: &[u8; 8] = b"GRTFRST1";
const FORMAT_VERSION: u32 = 1;

/// Relative tolerance under which two split scores count as a tie.
const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("empty input")]
    EmptyInput,
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("model format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ForestError {
    pub fn code(&self) -> &'static str {
        match self {
            ForestError::EmptyInput => "E_EMPTY_INPUT",
            ForestError::ShapeError(_) => "E_SHAPE",
            ForestError::Format(_) => "E_FORMAT",
            ForestError::Io(_) => "E_IO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaxFeatures {
    All,
    /// `ceil(n_features / 3)`, at least 1.
    Third,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Third => n_features.div_ceil(3).max(1),
            MaxFeatures::Count(k) => k.clamp(1, n_features.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl ForestParams {
    /// 100 trees, otherwise library defaults (the vGRF model).
    pub fn grf_default() -> Self {
        Self {
            n_trees: 100,
            ..Self::angle_default()
        }
    }

    /// 200 trees, unlimited depth, min split 2, min leaf 1 (angle models).
    pub fn angle_default() -> Self {
        Self {
            n_trees: 200,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Third,
            bootstrap: true,
        }
    }

    /// One tree on the full data considering every feature: plain CART.
    pub fn single_cart() -> Self {
        Self {
            n_trees: 1,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
            bootstrap: false,
        }
    }
}

impl Default for ForestParams {
    fn default() -> Self {
        Self::angle_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Internal {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Offset of the leaf's output vector in [`Tree::values`].
    Leaf { value: u32 },
}

/// A fitted regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
    values: Vec<f64>,
    n_outputs: usize,
    flat: Vec<FlatNode>,
}

/// Preorder inference layout: the left child of an internal node is the
/// next entry. Leaves have `feature == LEAF` and `next` holds the value offset.
#[derive(Debug, Clone, Copy)]
struct FlatNode {
    threshold: f64,
    feature: u32,
    next: u32,
}

const LEAF: u32 = u32::MAX;

/// Trees walked together so their memory accesses overlap.
const LOCKSTEP: usize = 8;

impl PartialEq for Tree {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.values == other.values && self.n_outputs == other.n_outputs
    }
}

impl Tree {
    /// Builds a tree from a node arena rooted at node 0.
    pub fn new(nodes: Vec<Node>, values: Vec<f64>, n_outputs: usize) -> Result<Self, ForestError> {
        let n = nodes.len() as u32;
        for node in &nodes {
            let ok = match *node {
                Node::Internal { left, right, .. } => left < n && right < n,
                Node::Leaf { value } => value as usize + n_outputs <= values.len(),
            };
            if !ok {
                return Err(ForestError::Format("node reference out of range".into()));
            }
        }
        if nodes.is_empty() {
            return Err(ForestError::Format("tree without nodes".into()));
        }
        let mut t = Tree {
            nodes,
            values,
            n_outputs,
            flat: Vec::new(),
        };
        t.flat = Vec::with_capacity(t.nodes().len());
        let mut stack = vec![(0u32, None::<usize>)];
        let mut visited = 0;
        while let Some((i, parent)) = stack.pop() {
            visited += 1;
            if visited > t.nodes().len() {
                return Err(ForestError::Format("node graph is not a tree".into()));
            }
            let pos = t.flat.len();
            if let Some(p) = parent {
                t.flat[p].next = pos as u32;
            }
            match t.nodes[i as usize] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    t.flat.push(FlatNode {
                        threshold,
                        feature,
                        next: 0,
                    });
                    stack.push((right, Some(pos)));
                    stack.push((left, None));
                }
                Node::Leaf { value } => t.flat.push(FlatNode {
                    threshold: 0.0,
                    feature: LEAF,
                    next: value,
                }),
            }
        }
        Ok(t)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// Arena index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature as usize] <= threshold { left } else { right } as usize;
                }
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            let n = self.flat[i];
            if n.feature == LEAF {
                let v = n.next as usize;
                return &self.values[v..v + self.n_outputs];
            }
            i = if x[n.feature as usize] <= n.threshold { i + 1 } else { n.next as usize };
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Internal { left, right, .. } => 1 + walk(t, left as usize).max(walk(t, right as usize)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

struct Building {
    nodes: Vec<Node>,
    values: Vec<f64>,
}

struct Grower<'a> {
    /// Training features stored feature-major.
    cols: &'a [f64],
    n_rows: usize,
    y: &'a Matrix,
    params: &'a ForestParams,
    n_candidates: usize,
    rng: &'a mut ChaCha8Rng,
    tree: Building,
    /// Per feature, the node's sample rows in ascending (value, row) order;
    /// every node owns the same `lo..hi` range in each feature's block.
    sorted: Vec<u32>,
    n_samples: usize,
    tmp: Vec<u32>,
    goes_left: Vec<bool>,
    features: Vec<usize>,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Grower<'_> {
    fn value(&self, row: u32, f: usize) -> f64 {
        self.cols[f * self.n_rows + row as usize]
    }

    fn segment(&self, f: usize, lo: usize, hi: usize) -> &[u32] {
        &self.sorted[f * self.n_samples + lo..f * self.n_samples + hi]
    }

    fn grow(&mut self, lo: usize, hi: usize, depth: usize) -> u32 {
        let id = self.tree.nodes.len() as u32;
        self.tree.nodes.push(Node::Leaf { value: 0 });
        let n = hi - lo;
        let stop = n < self.params.min_samples_split
            || n < 2 * self.params.min_samples_leaf
            || self.params.max_depth.is_some_and(|d| depth >= d)
            || self.targets_constant(lo, hi);
        let split = if stop { None } else { self.best_split(lo, hi) };
        match split {
            None => {
                let offset = self.tree.values.len() as u32;
                let means = self.mean_targets(lo, hi);
                self.tree.values.extend(means);
                self.tree.nodes[id as usize] = Node::Leaf { value: offset };
            }
            Some(s) => {
                let mid = self.partition(lo, hi, &s);
                let left = self.grow(lo, mid, depth + 1);
                let right = self.grow(mid, hi, depth + 1);
                self.tree.nodes[id as usize] = Node::Internal {
                    feature: s.feature as u32,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }

    /// Stable partition of every feature's `lo..hi` block; returns the split
    /// position.
    fn partition(&mut self, lo: usize, hi: usize, s: &Split) -> usize {
        for i in lo..hi {
            let r = self.sorted[s.feature * self.n_samples + i];
            self.goes_left[r as usize] = self.value(r, s.feature) <= s.threshold;
        }
        let mut mid = lo;
        for f in 0..self.cols.len() / self.n_rows {
            let base = f * self.n_samples;
            self.tmp.clear();
            let mut w = base + lo;
            for i in base + lo..base + hi {
                let r = self.sorted[i];
                if self.goes_left[r as usize] {
                    self.sorted[w] = r;
                    w += 1;
                } else {
                    self.tmp.push(r);
                }
            }
            mid = w - base;
            self.sorted[w..base + hi].copy_from_slice(&self.tmp);
        }
        mid
    }

    fn targets_constant(&self, lo: usize, hi: usize) -> bool {
        let seg = self.segment(0, lo, hi);
        let first = self.y.row(seg[0] as usize);
        seg.iter().all(|&r| self.y.row(r as usize) == first)
    }

    fn mean_targets(&self, lo: usize, hi: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.y.cols()];
        for &r in self.segment(0, lo, hi) {
            for (a, v) in m.iter_mut().zip(self.y.row(r as usize)) {
                *a += v;
            }
        }
        let n = (hi - lo) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Visits features in a random order until `n_candidates` non-constant
    /// ones have been scanned (constant features do not use up the budget).
    fn best_split(&mut self, lo: usize, hi: usize) -> Option<Split> {
        let n_features = self.cols.len() / self.n_rows;
        self.features.clear();
        self.features.extend(0..n_features);
        if self.n_candidates < n_features {
            self.features.shuffle(self.rng);
        }
        let n_out = self.y.cols();
        let n = hi - lo;
        let min_leaf = self.params.min_samples_leaf;
        let mut per_feature: Vec<Split> = Vec::new();
        let mut scanned = 0;
        let mut total = vec![0.0; n_out];
        for &r in self.segment(0, lo, hi) {
            for (t, v) in total.iter_mut().zip(self.y.row(r as usize)) {
                *t += v;
            }
        }
        let mut left = vec![0.0; n_out];
        for fi in 0..n_features {
            if scanned >= self.n_candidates {
                break;
            }
            let f = self.features[fi];
            let seg = self.segment(f, lo, hi);
            if self.value(seg[0], f) == self.value(seg[n - 1], f) {
                continue;
            }
            scanned += 1;
            left.iter_mut().for_each(|v| *v = 0.0);
            let mut best: Option<Split> = None;
            let mut cur = self.value(seg[0], f);
            for i in 1..n {
                let prev = cur;
                for (l, v) in left.iter_mut().zip(self.y.row(seg[i - 1] as usize)) {
                    *l += v;
                }
                cur = self.value(seg[i], f);
                if prev == cur || i < min_leaf || n - i < min_leaf {
                    continue;
                }
                let (nl, nr) = (i as f64, (n - i) as f64);
                let score: f64 = left
                    .iter()
                    .zip(&total)
                    .map(|(l, t)| l * l / nl + (t - l) * (t - l) / nr)
                    .sum();
                if best.as_ref().map_or(true, |b| better(score, b.score)) {
                    best = Some(Split {
                        feature: f,
                        threshold: midpoint(prev, cur),
                        score,
                    });
                }
            }
            if let Some(b) = best {
                per_feature.push(b);
            }
        }
        per_feature.sort_by_key(|s| s.feature);
        let mut chosen: Option<Split> = None;
        for s in per_feature {
            if chosen.as_ref().map_or(true, |c| better(s.score, c.score)) {
                chosen = Some(s);
            }
        }
        chosen
    }
}

/// Maps `v` to an integer whose unsigned order is `f64::total_cmp` order.
fn order_key(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn feature_major(x: &Matrix) -> Vec<f64> {
    let (n, f) = (x.rows(), x.cols());
    let mut cols = vec![0.0; n * f];
    for r in 0..n {
        for (c, v) in x.row(r).iter().enumerate() {
            cols[c * n + r] = *v;
        }
    }
    cols
}

/// `a` beats the incumbent `b` only by more than the tie tolerance.
fn better(a: f64, b: f64) -> bool {
    a > b + TIE_TOLERANCE * b.abs().max(1.0)
}

/// Midpoint of two consecutive distinct values, falling back to the lower
/// one when the midpoint rounds onto the upper.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

fn check_xy(x: &Matrix, y: &Matrix) -> Result<(), ForestError> {
    if x.rows() > u32::MAX as usize {
        return Err(ForestError::ShapeError("more than 2^32 rows".into()));
    }
    if x.rows() == 0 || y.rows() == 0 {
        return Err(ForestError::EmptyInput);
    }
    if x.rows() != y.rows() {
        return Err(ForestError::ShapeError(format!(
            "{} feature rows vs {} target rows",
            x.rows(),
            y.rows()
        )));
    }
    if x.cols() == 0 || y.cols() == 0 {
        return Err(ForestError::ShapeError("zero feature or target columns".into()));
    }
    Ok(())
}

/// Grows one tree on `rows` (indices into `x`/`y`, repeats allowed).
pub fn fit_tree_on(
    x: &Matrix,
    y: &Matrix,
    rows: &[usize],
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Result<Tree, ForestError> {
    check_xy(x, y)?;
    let cols = feature_major(x);
    grow_tree(x, &cols, &presort(x, &cols), y, rows, params, rng)
}

/// Row order of every feature of `x`, ascending by `f64::total_cmp` then
/// row index.
fn presort(x: &Matrix, cols: &[f64]) -> Vec<u32> {
    let n = x.rows();
    let mut out = Vec::with_capacity(n * x.cols());
    let mut keyed: Vec<(u64, u32)> = Vec::with_capacity(n);
    for f in 0..x.cols() {
        keyed.clear();
        keyed.extend(cols[f * n..(f + 1) * n].iter().enumerate().map(|(r, v)| (order_key(*v), r as u32)));
        keyed.sort_unstable();
        out.extend(keyed.iter().map(|k| k.1));
    }
    out
}

fn grow_tree(
    x: &Matrix,
    cols: &[f64],
    order: &[u32],
    y: &Matrix,
    rows: &[usize],
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Result<Tree, ForestError> {
    if rows.is_empty() {
        return Err(ForestError::EmptyInput);
    }
    let n_rows = x.rows();
    let mut counts = vec![0u32; n_rows];
    for &r in rows {
        counts[r] += 1;
    }
    let mut sorted = Vec::with_capacity(rows.len() * x.cols());
    for f in 0..x.cols() {
        for &r in &order[f * n_rows..(f + 1) * n_rows] {
            for _ in 0..counts[r as usize] {
                sorted.push(r);
            }
        }
    }
    let mut g = Grower {
        cols,
        n_rows,
        y,
        params,
        n_candidates: params.max_features.resolve(x.cols()),
        rng,
        tree: Building {
            nodes: Vec::new(),
            values: Vec::new(),
        },
        sorted,
        n_samples: rows.len(),
        tmp: Vec::with_capacity(rows.len()),
        goes_left: vec![false; n_rows],
        features: Vec::with_capacity(x.cols()),
    };
    g.grow(0, rows.len(), 0);
    let Building { nodes, values } = g.tree;
    Tree::new(nodes, values, y.cols())
}

pub fn fit_tree(x: &Matrix, y: &Matrix, params: &ForestParams, rng: &mut ChaCha8Rng) -> Result<Tree, ForestError> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    fit_tree_on(x, y, &rows, params, rng)
}

/// Random generator for tree `index` of a forest seeded with `seed`; each
/// tree draws from its own stream so trees can be grown in any order.
pub fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub n_outputs: usize,
    pub params: ForestParams,
    pub seed: u64,
    /// Applied to inputs before routing when present.
    pub scaler: Option<StandardScaler>,
    pub metadata: BTreeMap<String, String>,
}

pub fn fit_forest(x: &Matrix, y: &Matrix, params: &ForestParams, seed: u64) -> Result<ForestModel, ForestError> {
    check_xy(x, y)?;
    let n = x.rows();
    let cols = feature_major(x);
    let order = presort(x, &cols);
    let mut trees = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let mut rng = tree_rng(seed, t);
        let rows: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        trees.push(grow_tree(x, &cols, &order, y, &rows, params, &mut rng)?);
    }
    Ok(ForestModel {
        trees,
        n_features: x.cols(),
        n_outputs: y.cols(),
        params: params.clone(),
        seed,
        scaler: None,
        metadata: BTreeMap::new(),
    })
}

/// Standardizes `x` with a scaler fitted on it, then fits the forest.
pub fn fit_forest_scaled(x: &Matrix, y: &Matrix, params: &ForestParams, seed: u64) -> Result<ForestModel, ForestError> {
    check_xy(x, y)?;
    let scaler = StandardScaler::fit(x).map_err(|e| ForestError::ShapeError(e.to_string()))?;
    let xs = scaler.transform(x).map_err(|e| ForestError::ShapeError(e.to_string()))?;
    let mut model = fit_forest(&xs, y, params, seed)?;
    model.scaler = Some(scaler);
    Ok(model)
}

impl ForestModel {
    /// Mean of the tree outputs for one (unscaled) input row.
    pub fn predict_row(&self, x: &[f64], out: &mut [f64]) -> Result<(), ForestError> {
        if x.len() != self.n_features || out.len() != self.n_outputs {
            return Err(ForestError::ShapeError(format!(
                "expected {} inputs and {} outputs, got {} and {}",
                self.n_features,
                self.n_outputs,
                x.len(),
                out.len()
            )));
        }
        let mut buf;
        let x = match &self.scaler {
            Some(s) => {
                buf = x.to_vec();
                s.transform_row(&mut buf);
                &buf[..]
            }
            None => x,
        };
        out.iter_mut().for_each(|o| *o = 0.0);
        for chunk in self.trees.chunks(LOCKSTEP) {
            let mut at = [0usize; LOCKSTEP];
            loop {
                let mut moved = false;
                for (t, i) in chunk.iter().zip(at.iter_mut()) {
                    let n = t.flat[*i];
                    if n.feature != LEAF {
                        *i = if x[n.feature as usize] <= n.threshold { *i + 1 } else { n.next as usize };
                        moved = true;
                    }
                }
                if !moved {
                    break;
                }
            }
            for (t, &i) in chunk.iter().zip(&at) {
                let v = t.flat[i].next as usize;
                for (o, v) in out.iter_mut().zip(&t.values[v..v + self.n_outputs]) {
                    *o += v;
                }
            }
        }
        let k = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        Ok(())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix, ForestError> {
        if x.cols() != self.n_features {
            return Err(ForestError::ShapeError(format!(
                "expected {} feature columns, got {}",
                self.n_features,
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), self.n_outputs);
        for r in 0..x.rows() {
            self.predict_row(x.row(r), out.row_mut(r))?;
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ForestError> {
        #[derive(Serialize)]
        struct Header<'a> {
            n_features: usize,
            n_outputs: usize,
            params: &'a ForestParams,
            seed: u64,
            metadata: &'a BTreeMap<String, String>,
        }
        let header = serde_json::to_vec(&Header {
            n_features: self.n_features,
            n_outputs: self.n_outputs,
            params: &self.params,
            seed: self.seed,
            metadata: &self.metadata,
        })
        .map_err(|e| ForestError::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        put_u32(w, FORMAT_VERSION)?;
        put_u32(w, header.len() as u32)?;
        w.write_all(&header)?;
        match &self.scaler {
            Some(s) => {
                put_u32(w, 1)?;
                for v in s.mean.iter().chain(&s.std) {
                    put_f64(w, *v)?;
                }
            }
            None => put_u32(w, 0)?,
        }
        put_u32(w, self.trees.len() as u32)?;
        for t in &self.trees {
            put_u32(w, t.nodes.len() as u32)?;
            for node in t.nodes() {
                match *node {
                    Node::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        w.write_all(&[0])?;
                        put_u32(w, feature)?;
                        put_f64(w, threshold)?;
                        put_u32(w, left)?;
                        put_u32(w, right)?;
                    }
                    Node::Leaf { value } => {
                        w.write_all(&[1])?;
                        for v in &t.values[value as usize..value as usize + t.n_outputs] {
                            put_f64(w, *v)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ForestError> {
        #[derive(Deserialize)]
        struct Header {
            n_features: usize,
            n_outputs: usize,
            params: ForestParams,
            seed: u64,
            metadata: BTreeMap<String, String>,
        }
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ForestError::Format("not a forest model file".into()));
        }
        let version = get_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(ForestError::Format(format!("unsupported format version {version}")));
        }
        let len = get_u32(r)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let h: Header = serde_json::from_slice(&buf).map_err(|e| ForestError::Format(e.to_string()))?;
        let scaler = match get_u32(r)? {
            0 => None,
            1 => {
                let mean = (0..h.n_features).map(|_| get_f64(r)).collect::<Result<_, _>>()?;
                let std = (0..h.n_features).map(|_| get_f64(r)).collect::<Result<_, _>>()?;
                Some(StandardScaler { mean, std })
            }
            x => return Err(ForestError::Format(format!("bad scaler flag {x}"))),
        };
        let n_trees = get_u32(r)? as usize;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let n_nodes = get_u32(r)? as usize;
            let mut tree = Building {
                nodes: Vec::with_capacity(n_nodes),
                values: Vec::new(),
            };
            for _ in 0..n_nodes {
                let mut kind = [0u8];
                r.read_exact(&mut kind)?;
                match kind[0] {
                    0 => {
                        let feature = get_u32(r)?;
                        let threshold = get_f64(r)?;
                        let left = get_u32(r)?;
                        let right = get_u32(r)?;
                        if feature as usize >= h.n_features || left as usize >= n_nodes || right as usize >= n_nodes {
                            return Err(ForestError::Format("node index out of range".into()));
                        }
                        tree.nodes.push(Node::Internal {
                            feature,
                            threshold,
                            left,
                            right,
                        });
                    }
                    1 => {
                        let value = tree.values.len() as u32;
                        for _ in 0..h.n_outputs {
                            tree.values.push(get_f64(r)?);
                        }
                        tree.nodes.push(Node::Leaf { value });
                    }
                    k => return Err(ForestError::Format(format!("bad node kind {k}"))),
                }
            }
            trees.push(Tree::new(tree.nodes, tree.values, h.n_outputs)?);
        }
        Ok(ForestModel {
            trees,
            n_features: h.n_features,
            n_outputs: h.n_outputs,
            params: h.params,
            seed: h.seed,
            scaler,
            metadata: h.metadata,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, ForestError> {
        Self::read_from(&mut bytes)
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: Vec<Vec<f64>>) -> Matrix {
        Matrix::from_rows(rows)
    }

    fn cart(x: &Matrix, y: &Matrix) -> Tree {
        fit_tree(x, y, &ForestParams::single_cart(), &mut tree_rng(0, 0)).unwrap()
    }

    #[test]
    fn two_points_split_at_midpoint() {
        let t = cart(&m(vec![vec![0.0], vec![1.0]]), &m(vec![vec![0.0], vec![10.0]]));
        assert_eq!(t.nodes().len(), 3);
        match t.nodes()[0] {
            Node::Internal { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 0.5);
            }
            _ => panic!("root should split"),
        }
        assert_eq!(t.predict_row(&[0.0]), &[0.0]);
        assert_eq!(t.predict_row(&[1.0]), &[10.0]);
    }

    #[test]
    fn constant_targets_make_one_leaf() {
        let x = m((0..10).map(|i| vec![i as f64, (i * i) as f64]).collect());
        let y = m(vec![vec![3.5, -1.0]; 10]);
        let t = cart(&x, &y);
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict_row(&[100.0, 0.0]), &[3.5, -1.0]);
    }

    #[test]
    fn empty_input_is_rejected() {
        let x = Matrix::zeros(0, 2);
        let y = Matrix::zeros(0, 1);
        assert!(matches!(
            fit_tree(&x, &y, &ForestParams::single_cart(), &mut tree_rng(0, 0)),
            Err(ForestError::EmptyInput)
        ));
        assert!(matches!(
            fit_forest(&x, &y, &ForestParams::default(), 1),
            Err(ForestError::EmptyInput)
        ));
    }

    #[test]
    fn single_unbootstrapped_tree_memorizes() {
        let x = m((0..30).map(|i| vec![(i as f64 * 0.37).sin(), i as f64]).collect());
        let y = m((0..30).map(|i| vec![(i as f64).cos() * 5.0, i as f64 * 2.0]).collect());
        let f = fit_forest(&x, &y, &ForestParams::single_cart(), 9).unwrap();
        assert_eq!(f.predict(&x).unwrap(), y);
    }

    #[test]
    fn same_seed_same_forest() {
        let x = m((0..60).map(|i| vec![(i as f64 * 0.37).sin(), (i % 7) as f64, i as f64]).collect());
        let y = m((0..60).map(|i| vec![(i as f64 * 0.2).cos()]).collect());
        let p = ForestParams {
            n_trees: 10,
            ..ForestParams::default()
        };
        let a = fit_forest(&x, &y, &p, 42).unwrap();
        let b = fit_forest(&x, &y, &p, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = fit_forest(&x, &y, &p, 43).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn stump_routing_and_averaging() {
        let stump = |lo: f64, hi: f64| {
            Tree::new(
                vec![
                    Node::Internal {
                        feature: 0,
                        threshold: 0.5,
                        left: 1,
                        right: 2,
                    },
                    Node::Leaf { value: 0 },
                    Node::Leaf { value: 1 },
                ],
                vec![lo, hi],
                1,
            )
            .unwrap()
        };
        let mut f = ForestModel {
            trees: vec![stump(0.0, 10.0)],
            n_features: 1,
            n_outputs: 1,
            params: ForestParams::single_cart(),
            seed: 0,
            scaler: None,
            metadata: BTreeMap::new(),
        };
        let mut out = [0.0];
        f.predict_row(&[0.7], &mut out).unwrap();
        assert_eq!(out, [10.0]);
        f.trees = vec![stump(2.0, 2.0), stump(4.0, 4.0)];
        f.predict_row(&[0.7], &mut out).unwrap();
        assert_eq!(out, [3.0]);
        assert!(matches!(f.predict(&Matrix::zeros(1, 2)), Err(ForestError::ShapeError(_))));
    }

    #[test]
    fn min_samples_leaf_is_respected() {
        let x = m((0..20).map(|i| vec![i as f64]).collect());
        let y = m((0..20).map(|i| vec![(i * i) as f64]).collect());
        let p = ForestParams {
            min_samples_leaf: 4,
            ..ForestParams::single_cart()
        };
        let f = fit_forest(&x, &y, &p, 0).unwrap();
        let t = &f.trees[0];
        let mut counts = vec![0; t.nodes().len()];
        for r in 0..20 {
            counts[t.leaf_index(x.row(r))] += 1;
        }
        for (i, node) in t.nodes().iter().enumerate() {
            if matches!(node, Node::Leaf { .. }) {
                assert!(counts[i] >= 4);
            }
        }
    }

    #[test]
    fn max_depth_limits_tree() {
        let x = m((0..64).map(|i| vec![i as f64]).collect());
        let y = m((0..64).map(|i| vec![(i as f64).sin()]).collect());
        let p = ForestParams {
            max_depth: Some(3),
            ..ForestParams::single_cart()
        };
        assert!(fit_forest(&x, &y, &p, 0).unwrap().trees[0].depth() <= 3);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let x = m((0..50).map(|i| vec![(i as f64 * 0.37).sin(), (i % 5) as f64]).collect());
        let y = m((0..50).map(|i| vec![(i as f64 * 0.1).exp(), 1.0 / (1.0 + i as f64)]).collect());
        let p = ForestParams {
            n_trees: 5,
            ..ForestParams::default()
        };
        let mut f = fit_forest_scaled(&x, &y, &p, 7).unwrap();
        f.metadata.insert("config".into(), "W4".into());
        let bytes = f.to_bytes();
        let g = ForestModel::from_bytes(&bytes).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.to_bytes(), bytes);
        assert!(matches!(ForestModel::from_bytes(&bytes[..bytes.len() - 3]), Err(ForestError::Io(_))));
        assert!(matches!(ForestModel::from_bytes(b"NOTAFRST...."), Err(ForestError::Format(_))));
    }

    #[test]
    fn max_features_rule() {
        assert_eq!(MaxFeatures::Third.resolve(20), 7);
        assert_eq!(MaxFeatures::Third.resolve(9), 3);
        assert_eq!(MaxFeatures::Third.resolve(1), 1);
        assert_eq!(MaxFeatures::All.resolve(40), 40);
    }
}
