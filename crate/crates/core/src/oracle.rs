//! Brute-force ground truth: glue labeled stars in every color-respecting way.
//!
//! Half-edges are indexed globally, star-major, clockwise within a star, so
//! that position 0 of each star is its marked first branch. Gluings are
//! generated by pairing the lowest unmatched half-edge with each later
//! candidate of the same color, which visits every perfect matching once.
//!
//! Faces are the cycles of `h ↦ σ(α(h))`, where `α` is the pairing and `σ`
//! the clockwise successor at a star. The enumerator tracks them
//! incrementally: pairing two half-edges that lie on the same open boundary
//! splits it (one more face in the end), pairing across boundaries merges two
//! (one fewer). With `V` stars and `E` edges this gives `F = V + E - 2·merges`
//! and, for a connected gluing, `genus = merges - (V - 1)`.

use std::collections::{BTreeMap, HashMap, HashSet};

use num_bigint::BigUint;
use rayon::prelude::*;
use thiserror::Error;

use crate::ncpoly::Monomial;
use crate::potential::StarSpec;
use crate::rational::binomial;
use crate::sd::MultiIndex;

/// Largest number of half-edges of a single color the oracle accepts unless forced.
pub const MAX_HALF_EDGES_PER_COLOR: usize = 22;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("color x{} has {count} half-edges; the oracle refuses more than {MAX_HALF_EDGES_PER_COLOR} unless forced", .color + 1)]
    TooLarge { color: usize, count: usize },
    #[error("the rooted enumeration requires a root star")]
    MissingRoot,
}

/// An ordered list of labeled stars.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StarList {
    stars: Vec<Monomial>,
}

impl StarList {
    pub fn new(stars: Vec<Monomial>) -> Self {
        StarList { stars }
    }

    /// Root star (if any) followed by `count` copies of each listed word.
    pub fn from_multiset(root: Option<&Monomial>, multiset: &[(Monomial, usize)]) -> Self {
        let mut stars = Vec::new();
        if let Some(r) = root {
            stars.push(r.clone());
        }
        for (word, count) in multiset {
            stars.extend(std::iter::repeat_n(word.clone(), *count));
        }
        StarList { stars }
    }

    pub fn stars(&self) -> &[Monomial] {
        &self.stars
    }

    pub fn len(&self) -> usize {
        self.stars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stars.is_empty()
    }

    pub fn half_edge_count(&self) -> usize {
        self.stars.iter().map(Monomial::degree).sum()
    }

    /// Half-edges of each color.
    pub fn color_totals(&self) -> Vec<usize> {
        let m = self.stars.iter().map(Monomial::min_alphabet).max().unwrap_or(0);
        let mut totals = vec![0; m];
        for s in &self.stars {
            for &c in s.letters() {
                totals[c as usize] += 1;
            }
        }
        totals
    }

    /// Number of gluings: `Π_c (n_c - 1)!!`, zero if some `n_c` is odd.
    pub fn gluing_count(&self) -> BigUint {
        let mut total = BigUint::from(1u32);
        for n in self.color_totals() {
            if n % 2 == 1 {
                return BigUint::from(0u32);
            }
            let mut k = n;
            while k > 1 {
                total *= BigUint::from(k - 1);
                k -= 2;
            }
        }
        total
    }

    fn check_size(&self, force: bool) -> Result<(), OracleError> {
        if force {
            return Ok(());
        }
        for (color, &count) in self.color_totals().iter().enumerate() {
            if count > MAX_HALF_EDGES_PER_COLOR {
                return Err(OracleError::TooLarge { color, count });
            }
        }
        Ok(())
    }
}

/// A fixed-point-free, color-preserving involution on the half-edges.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GluingDiagram {
    pairing: Vec<u32>,
}

impl GluingDiagram {
    pub fn new(pairing: Vec<u32>) -> Self {
        GluingDiagram { pairing }
    }

    pub fn pairing(&self) -> &[u32] {
        &self.pairing
    }

    pub fn partner(&self, h: usize) -> usize {
        self.pairing[h] as usize
    }
}

/// Connectivity and topology of one gluing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    pub connected: bool,
    pub faces: usize,
    /// Only reported for connected gluings.
    pub genus: Option<usize>,
}

/// Connected gluings by genus, plus the disconnected remainder.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GenusCensus {
    pub counts: BTreeMap<usize, u64>,
    pub disconnected: u64,
}

impl GenusCensus {
    pub fn total(&self) -> u64 {
        self.counts.values().sum::<u64>() + self.disconnected
    }

    pub fn planar(&self) -> u64 {
        self.counts.get(&0).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
struct Layout {
    color: Vec<u8>,
    owner: Vec<u32>,
    position: Vec<u32>,
    sigma: Vec<u32>,
    offsets: Vec<usize>,
    n_stars: usize,
    /// Some star has no half-edges (a point); it is isolated from everything else.
    has_point: bool,
}

impl Layout {
    fn new(list: &StarList) -> Self {
        let mut color = Vec::new();
        let mut owner = Vec::new();
        let mut position = Vec::new();
        let mut sigma = Vec::new();
        let mut offsets = Vec::new();
        for (s, star) in list.stars.iter().enumerate() {
            let start = color.len();
            offsets.push(start);
            let d = star.degree();
            for (p, &c) in star.letters().iter().enumerate() {
                color.push(c);
                owner.push(s as u32);
                position.push(p as u32);
                sigma.push((start + (p + 1) % d) as u32);
            }
        }
        Layout {
            color,
            owner,
            position,
            sigma,
            offsets,
            n_stars: list.len(),
            has_point: list.stars.iter().any(Monomial::is_unit),
        }
    }

    fn len(&self) -> usize {
        self.color.len()
    }

    fn components(&self, pairing: &[u32]) -> usize {
        let mut parent: Vec<u32> = (0..self.n_stars as u32).collect();
        fn find(parent: &mut [u32], mut x: u32) -> u32 {
            while parent[x as usize] != x {
                parent[x as usize] = parent[parent[x as usize] as usize];
                x = parent[x as usize];
            }
            x
        }
        let mut components = self.n_stars;
        for h in 0..self.len() {
            let a = find(&mut parent, self.owner[h]);
            let b = find(&mut parent, self.owner[pairing[h] as usize]);
            if a != b {
                parent[a as usize] = b;
                components -= 1;
            }
        }
        components
    }
}

/// Stream of every color-respecting gluing, in canonical order.
pub fn enumerate_gluings(stars: &StarList) -> GluingIter {
    GluingIter::new(stars)
}

pub struct GluingIter {
    layout: Layout,
    pair: Vec<u32>,
    frames: Vec<(usize, usize)>,
    started: bool,
    done: bool,
}

impl GluingIter {
    fn new(stars: &StarList) -> Self {
        let layout = Layout::new(stars);
        let n = layout.len();
        let parity_ok = stars.color_totals().iter().all(|c| c % 2 == 0);
        GluingIter {
            layout,
            pair: vec![NONE; n],
            frames: Vec::new(),
            started: false,
            done: !parity_ok,
        }
    }

    fn lowest_unmatched(&self) -> Option<usize> {
        let from = self.frames.last().map_or(0, |&(i, _)| i + 1);
        (from..self.pair.len()).find(|&h| self.pair[h] == NONE)
    }

    fn candidate_after(&self, i: usize, after: usize) -> Option<usize> {
        (after + 1..self.pair.len()).find(|&j| self.pair[j] == NONE && self.layout.color[j] == self.layout.color[i])
    }

    /// Extends the partial matching greedily; false on a dead end.
    fn descend(&mut self) -> bool {
        while let Some(i) = self.lowest_unmatched() {
            match self.candidate_after(i, i) {
                Some(j) => {
                    self.pair[i] = j as u32;
                    self.pair[j] = i as u32;
                    self.frames.push((i, j));
                }
                None => return false,
            }
        }
        true
    }

    /// Moves the deepest choice to its next candidate; false when exhausted.
    fn backtrack(&mut self) -> bool {
        while let Some((i, j)) = self.frames.pop() {
            self.pair[i] = NONE;
            self.pair[j] = NONE;
            if let Some(next) = self.candidate_after(i, j) {
                self.pair[i] = next as u32;
                self.pair[next] = i as u32;
                self.frames.push((i, next));
                return true;
            }
        }
        false
    }
}

impl Iterator for GluingIter {
    type Item = GluingDiagram;

    fn next(&mut self) -> Option<GluingDiagram> {
        if self.done {
            return None;
        }
        let mut ok = if self.started {
            if !self.backtrack() {
                self.done = true;
                return None;
            }
            self.descend()
        } else {
            self.started = true;
            self.descend()
        };
        while !ok {
            if !self.backtrack() {
                self.done = true;
                return None;
            }
            ok = self.descend();
        }
        Some(GluingDiagram {
            pairing: self.pair.clone(),
        })
    }
}

/// Connectivity, face count and genus of a gluing, computed from scratch.
pub fn genus(diagram: &GluingDiagram, stars: &StarList) -> Topology {
    let layout = Layout::new(stars);
    let n = layout.len();
    let mut seen = vec![false; n];
    let mut faces = 0;
    for h in 0..n {
        if seen[h] {
            continue;
        }
        faces += 1;
        let mut x = h;
        while !seen[x] {
            seen[x] = true;
            // next half-edge: clockwise successor at the star of the partner
            x = layout.sigma[diagram.partner(x)] as usize;
        }
    }
    let points = stars.stars.iter().filter(|s| s.is_unit()).count();
    // a point star is a vertex bounded by a single face
    faces += points;
    let components = layout.components(&diagram.pairing);
    let connected = components == 1;
    let genus = connected.then(|| {
        let chi = layout.n_stars as i64 - (n / 2) as i64 + faces as i64;
        ((2 - chi) / 2) as usize
    });
    Topology {
        connected,
        faces,
        genus,
    }
}

/// Enumeration switches for the counting routines.
#[derive(Debug, Clone, Default)]
pub struct EnumOptions {
    /// Skip subtrees that cannot end connected and planar. Exact, but off by default.
    pub prune_nonplanar: bool,
    /// Stars flagged here may not be glued to each other.
    pub no_links_between: Option<Vec<bool>>,
    /// Lift the per-color size guard.
    pub force: bool,
}

/// Depth-first enumerator with incremental face tracking.
#[derive(Clone)]
struct Walker<'a> {
    layout: &'a Layout,
    opts: &'a EnumOptions,
    pair: Vec<u32>,
    next: Vec<u32>,
    prev: Vec<u32>,
    merges: usize,
    max_merges: usize,
    /// Union-find over stars with rollback; `open` counts unpaired half-edges per root.
    parent: Vec<u32>,
    size: Vec<u32>,
    open: Vec<u32>,
}

impl<'a> Walker<'a> {
    fn new(layout: &'a Layout, opts: &'a EnumOptions) -> Self {
        let n = layout.len();
        let mut prev = vec![0; n];
        for h in 0..n {
            prev[layout.sigma[h] as usize] = h as u32;
        }
        Walker {
            layout,
            opts,
            pair: vec![NONE; n],
            next: layout.sigma.clone(),
            prev,
            merges: 0,
            max_merges: layout.n_stars.saturating_sub(1),
            parent: (0..layout.n_stars as u32).collect(),
            size: vec![1; layout.n_stars],
            open: (0..layout.n_stars)
                .map(|s| (layout.offsets.get(s + 1).copied().unwrap_or(n) - layout.offsets[s]) as u32)
                .collect(),
        }
    }

    fn find(&self, mut s: u32) -> u32 {
        while self.parent[s as usize] != s {
            s = self.parent[s as usize];
        }
        s
    }

    /// Whether the last pairing rules out a connected planar completion: a
    /// merge inside one component adds a handle, a component with no
    /// unpaired half-edges left can never reach the other stars, and once
    /// every star is connected each boundary must pair up internally.
    fn dead_end(&self, undo: &Undo) -> bool {
        if !self.opts.prune_nonplanar {
            return false;
        }
        if !undo.split && undo.join.is_none() {
            return true;
        }
        let r = self.find(self.layout.owner[undo.h1]) as usize;
        let whole = self.size[r] as usize == self.layout.n_stars;
        (self.open[r] == 0 && !whole) || (undo.odd_split && whole)
    }

    fn allowed(&self, i: usize, j: usize) -> bool {
        if self.layout.color[i] != self.layout.color[j] || self.pair[j] != NONE {
            return false;
        }
        match &self.opts.no_links_between {
            Some(flags) => !(flags[self.layout.owner[i] as usize] && flags[self.layout.owner[j] as usize]),
            None => true,
        }
    }

    /// When `a` and `b` share a boundary, the color-parity masks of the two
    /// arcs strictly between them; `None` when they lie on different boundaries.
    fn split_masks(&self, a: usize, b: usize) -> Option<(u64, u64)> {
        let bit = |h: usize| 1u64 << self.layout.color[h];
        let mut first = 0u64;
        let mut x = self.next[a] as usize;
        while x != b {
            if x == a {
                return None;
            }
            first ^= bit(x);
            x = self.next[x] as usize;
        }
        let mut second = 0u64;
        x = self.next[b] as usize;
        while x != a {
            second ^= bit(x);
            x = self.next[x] as usize;
        }
        Some((first, second))
    }

    /// Pairs `h1` with `h2`; returns what `unpair` needs to restore.
    fn pair(&mut self, h1: usize, h2: usize) -> Undo {
        let masks = self.split_masks(h1, h2);
        let split = masks.is_some();
        let odd_split = masks.is_some_and(|(m1, m2)| m1 | m2 != 0);
        let ra = self.find(self.layout.owner[h1]) as usize;
        let rb = self.find(self.layout.owner[h2]) as usize;
        self.open[ra] -= 1;
        self.open[rb] -= 1;
        let join = (ra != rb).then(|| {
            let (small, big) = if self.size[ra] < self.size[rb] {
                (ra, rb)
            } else {
                (rb, ra)
            };
            self.parent[small] = big as u32;
            self.size[big] += self.size[small];
            self.open[big] += self.open[small];
            (small as u32, big as u32)
        });
        let undo = Undo {
            h1,
            h2,
            n1: self.next[h1],
            n2: self.next[h2],
            p1: self.prev[h1],
            p2: self.prev[h2],
            split,
            odd_split,
            join,
        };
        let g = |x: usize| -> usize {
            if x == h1 {
                undo.n2 as usize
            } else {
                undo.n1 as usize
            }
        };
        for u in [undo.p1 as usize, undo.p2 as usize] {
            if u == h1 || u == h2 {
                continue;
            }
            let mut y = self.next[u] as usize;
            while y == h1 || y == h2 {
                y = g(y);
            }
            self.next[u] = y as u32;
            self.prev[y] = u as u32;
        }
        self.pair[h1] = h2 as u32;
        self.pair[h2] = h1 as u32;
        if !split {
            self.merges += 1;
        }
        undo
    }

    fn unpair(&mut self, undo: Undo) {
        let Undo {
            h1,
            h2,
            n1,
            n2,
            p1,
            p2,
            split,
            join,
            ..
        } = undo;
        if let Some((small, big)) = join {
            let (small, big) = (small as usize, big as usize);
            self.open[big] -= self.open[small];
            self.size[big] -= self.size[small];
            self.parent[small] = small as u32;
        }
        let ra = self.find(self.layout.owner[h1]) as usize;
        let rb = self.find(self.layout.owner[h2]) as usize;
        self.open[ra] += 1;
        self.open[rb] += 1;
        self.pair[h1] = NONE;
        self.pair[h2] = NONE;
        // restore the links in reverse
        self.next[h1] = n1;
        self.next[h2] = n2;
        self.prev[h1] = p1;
        self.prev[h2] = p2;
        self.next[p1 as usize] = h1 as u32;
        self.next[p2 as usize] = h2 as u32;
        self.prev[n1 as usize] = h1 as u32;
        self.prev[n2 as usize] = h2 as u32;
        if !split {
            self.merges -= 1;
        }
    }

    fn run<F: FnMut(&Walker)>(&mut self, from: usize, visit: &mut F) {
        let Some(i) = (from..self.pair.len()).find(|&h| self.pair[h] == NONE) else {
            visit(self);
            return;
        };
        for j in i + 1..self.pair.len() {
            if !self.allowed(i, j) {
                continue;
            }
            let undo = self.pair(i, j);
            if !self.dead_end(&undo) {
                self.run(i + 1, visit);
            }
            self.unpair(undo);
        }
    }

    /// Every star starts as one boundary (a point as one closed face).
    fn faces(&self) -> usize {
        self.layout.n_stars + self.layout.len() / 2 - 2 * self.merges
    }
}

#[derive(Clone, Copy)]
struct Undo {
    h1: usize,
    h2: usize,
    n1: u32,
    n2: u32,
    p1: u32,
    p2: u32,
    split: bool,
    /// Some arc left by the split holds an odd number of half-edges of a color.
    odd_split: bool,
    /// `(child, parent)` roots when the pairing joined two components.
    join: Option<(u32, u32)>,
}

/// Runs `visit` on every complete gluing (subject to the options), splitting
/// the work over the partner choices of half-edge 0. Returns the merged result.
fn enumerate_reduce<T, F, M>(stars: &StarList, opts: &EnumOptions, init: impl Fn() -> T + Sync, visit: F, merge: M) -> T
where
    T: Send,
    F: Fn(&mut T, &Walker) + Sync,
    M: Fn(T, T) -> T + Sync + Send,
{
    let layout = Layout::new(stars);
    if stars.color_totals().iter().any(|c| c % 2 == 1) {
        return init();
    }
    let n = layout.len();
    if n == 0 {
        let mut acc = init();
        visit(&mut acc, &Walker::new(&layout, opts));
        return acc;
    }
    let root = Walker::new(&layout, opts);
    let firsts: Vec<usize> = (1..n).filter(|&j| root.allowed(0, j)).collect();
    firsts
        .into_par_iter()
        .map(|j| {
            let mut acc = init();
            let mut w = root.clone();
            let undo = w.pair(0, j);
            if !w.dead_end(&undo) {
                w.run(1, &mut |walker: &Walker| visit(&mut acc, walker));
            }
            acc
        })
        .reduce(&init, &merge)
}

fn is_connected_planar(w: &Walker) -> bool {
    if w.layout.has_point {
        // a point is connected to nothing: only the lone point counts
        return w.layout.n_stars == 1;
    }
    w.layout.n_stars > 0 && w.merges == w.max_merges && w.size[w.find(0) as usize] as usize == w.layout.n_stars
}

/// Number of connected genus-0 gluings of a star list, under the options.
pub fn count_planar(stars: &StarList, opts: &EnumOptions) -> Result<u64, OracleError> {
    stars.check_size(opts.force)?;
    Ok(enumerate_reduce(
        stars,
        opts,
        || 0u64,
        |acc, w| {
            if is_connected_planar(w) {
                *acc += 1;
            }
        },
        |a, b| a + b,
    ))
}

/// `ℳ₀(root, (q_1,k_1), ...)`: connected planar gluings of fully labeled stars.
pub fn count_m0(root: Option<&Monomial>, multiset: &[(Monomial, usize)]) -> Result<u64, OracleError> {
    count_planar(&StarList::from_multiset(root, multiset), &EnumOptions::default())
}

/// Genus stratification of the connected gluings.
pub fn count_by_genus(stars: &StarList) -> Result<GenusCensus, OracleError> {
    count_by_genus_with(stars, &EnumOptions::default())
}

pub fn count_by_genus_with(stars: &StarList, opts: &EnumOptions) -> Result<GenusCensus, OracleError> {
    stars.check_size(opts.force)?;
    let opts = EnumOptions {
        prune_nonplanar: false,
        ..opts.clone()
    };
    Ok(enumerate_reduce(
        stars,
        &opts,
        GenusCensus::default,
        |acc, w| {
            let connected = if w.layout.has_point || w.layout.n_stars == 0 {
                w.layout.n_stars == 1
            } else {
                w.size[w.find(0) as usize] as usize == w.layout.n_stars
            };
            if connected {
                let genus = w.merges - w.max_merges;
                *acc.counts.entry(genus).or_insert(0) += 1;
            } else {
                acc.disconnected += 1;
            }
        },
        |mut a, b| {
            for (g, c) in b.counts {
                *a.counts.entry(g).or_insert(0) += c;
            }
            a.disconnected += b.disconnected;
            a
        },
    ))
}

/// Faces as tracked by the incremental enumerator, for every gluing in order.
/// Exposed for cross-checking against [`genus`].
pub fn tracked_faces(stars: &StarList) -> Vec<(GluingDiagram, usize)> {
    let layout = Layout::new(stars);
    let opts = EnumOptions::default();
    if stars.color_totals().iter().any(|c| c % 2 == 1) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut w = Walker::new(&layout, &opts);
    w.run(0, &mut |walker: &Walker| {
        out.push((
            GluingDiagram {
                pairing: walker.pair.clone(),
            },
            walker.faces(),
        ))
    });
    out
}

/// Label-independent code of a connected gluing seen from the root star.
///
/// Stars are visited breadth-first from the root's marked branch; each star
/// records its type, the offset of the entry branch from its marked branch
/// (modulo the word's period) and, branch by branch clockwise from the entry,
/// which star and which relative branch it is glued to.
fn rooted_code(layout: &Layout, pairing: &[u32], type_of: &[u32], period: &[u32]) -> Vec<u32> {
    let n_stars = layout.n_stars;
    let mut order = vec![NONE; n_stars];
    let mut entry = vec![0u32; n_stars];
    let mut queue = vec![0usize];
    order[0] = 0;
    let mut code = Vec::with_capacity(3 * layout.len() + 2 * n_stars);
    let mut head = 0;
    while head < queue.len() {
        let s = queue[head];
        head += 1;
        let start = layout.offsets[s];
        let d = layout.offsets.get(s + 1).copied().unwrap_or(layout.len()) - start;
        code.push(type_of[s]);
        code.push(entry[s] % period[s].max(1));
        for step in 0..d {
            let h = start + (entry[s] as usize + step) % d;
            let partner = pairing[h] as usize;
            let t = layout.owner[partner] as usize;
            let pos = layout.position[partner];
            if order[t] == NONE {
                order[t] = queue.len() as u32;
                entry[t] = pos;
                queue.push(t);
            }
            let dt = (layout.offsets.get(t + 1).copied().unwrap_or(layout.len()) - layout.offsets[t]) as u32;
            code.push(order[t]);
            code.push((pos + dt - entry[t]) % dt);
        }
    }
    code
}

/// Rooted planar maps: connected planar gluings up to relabeling stars of the
/// same type and moving their marked branch by a symmetry of the word. The
/// root (first star) stays fixed.
pub fn count_rooted_planar(stars: &StarList, opts: &EnumOptions) -> Result<u64, OracleError> {
    if stars.is_empty() {
        return Err(OracleError::MissingRoot);
    }
    stars.check_size(opts.force)?;
    let layout = Layout::new(stars);
    let mut types: HashMap<&Monomial, u32> = HashMap::new();
    let mut type_of = vec![0u32; stars.len()];
    let mut period = vec![1u32; stars.len()];
    for (s, star) in stars.stars.iter().enumerate() {
        if s == 0 {
            // the root is distinguished from every other star, even one of the same word
            type_of[s] = 0;
            period[s] = star.degree().max(1) as u32;
            continue;
        }
        let next_id = types.len() as u32 + 1;
        type_of[s] = *types.entry(star).or_insert(next_id);
        period[s] = match star.symmetry_degree() {
            Ok(sym) => (star.degree() / sym) as u32,
            Err(_) => 1,
        };
    }
    let codes = enumerate_reduce(
        stars,
        opts,
        HashSet::new,
        |acc: &mut HashSet<Vec<u32>>, w| {
            if is_connected_planar(w) {
                acc.insert(rooted_code(&layout, &w.pair, &type_of, &period));
            }
        },
        |mut a, b| {
            a.extend(b);
            a
        },
    );
    Ok(codes.len() as u64)
}

/// Stars of the two-matrix Ising model: `a[j-1]` copies of `A^{2j}`,
/// `b[j-1]` copies of `B^{2j}` and `r` copies of `AB`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct IsingStars {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub r: usize,
}

impl IsingStars {
    fn star_list(&self, root: Option<&Monomial>) -> (StarList, Vec<bool>) {
        let mut stars = Vec::new();
        let mut flags = Vec::new();
        if let Some(r) = root {
            stars.push(r.clone());
            flags.push(false);
        }
        for (color, counts) in [(0u8, &self.a), (1u8, &self.b)] {
            for (j, &count) in counts.iter().enumerate() {
                for _ in 0..count {
                    stars.push(Monomial::power(color, 2 * (j + 1)));
                    flags.push(false);
                }
            }
        }
        for _ in 0..self.r {
            stars.push(Monomial::new(vec![0, 1]));
            flags.push(true);
        }
        (StarList::new(stars), flags)
    }

    /// `r! Π_j k_j! (2j)^{k_j}` over both colors.
    pub fn relabeling_factor(&self) -> BigUint {
        let mut f = crate::rational::factorial(self.r);
        for counts in [&self.a, &self.b] {
            for (j, &k) in counts.iter().enumerate() {
                f *= crate::rational::factorial(k) * num_traits::pow(BigUint::from(2 * (j + 1)), k);
            }
        }
        f
    }
}

/// `ℐ`: connected planar gluings in which no two `AB` stars are glued together.
/// Runs with the planarity prune, which is exact.
/// A root of type `AB` is not one of the `r` flagged stars.
pub fn count_ising_filtered(root: Option<&Monomial>, stars: &IsingStars) -> Result<u64, OracleError> {
    let (list, flags) = stars.star_list(root);
    let opts = EnumOptions {
        no_links_between: Some(flags),
        prune_nonplanar: true,
        ..EnumOptions::default()
    };
    count_planar(&list, &opts)
}

/// `𝒥`: the rooted counterpart of [`count_ising_filtered`].
pub fn count_ising_rooted(root: &Monomial, stars: &IsingStars) -> Result<u64, OracleError> {
    let (list, flags) = stars.star_list(Some(root));
    let opts = EnumOptions {
        no_links_between: Some(flags),
        prune_nonplanar: true,
        ..EnumOptions::default()
    };
    count_rooted_planar(&list, &opts)
}

/// `ℳ(P, (q_1,k_1), ...) = Σ_{p ≤ k} Π C(k_j,p_j) ℳ₀(P, (q_j,p_j), (q_j^*,k_j-p_j), ...)`,
/// the symmetrized count the recursion produces, evaluated by brute force.
pub fn symmetrized_count(root: Option<&Monomial>, spec: &StarSpec, k: &MultiIndex) -> Result<BigUint, OracleError> {
    symmetrized_count_with(root, spec, k, &EnumOptions::default())
}

/// [`symmetrized_count`] under explicit enumeration options.
pub fn symmetrized_count_with(
    root: Option<&Monomial>,
    spec: &StarSpec,
    k: &MultiIndex,
    opts: &EnumOptions,
) -> Result<BigUint, OracleError> {
    let mut cache: HashMap<Vec<(Monomial, usize)>, u64> = HashMap::new();
    let mut total = BigUint::from(0u32);
    for p in k.sub_box() {
        let mut multiset: BTreeMap<Monomial, usize> = BTreeMap::new();
        let mut weight = BigUint::from(1u32);
        for (j, (&pj, &kj)) in p.entries().iter().zip(k.entries()).enumerate() {
            let q = spec.word(j);
            *multiset.entry(q.clone()).or_insert(0) += pj as usize;
            *multiset.entry(q.adjoint()).or_insert(0) += (kj - pj) as usize;
            weight *= binomial(kj as usize, pj as usize);
        }
        let key: Vec<(Monomial, usize)> = multiset.into_iter().filter(|(_, c)| *c > 0).collect();
        let m0 = match cache.get(&key) {
            Some(&v) => v,
            None => {
                let v = count_planar(&StarList::from_multiset(root, &key), opts)?;
                cache.insert(key, v);
                v
            }
        };
        total += weight * BigUint::from(m0);
    }
    Ok(total)
}
