//! Discrete spatial domain: locations with areas, GFDM stars and
//! contiguity rings.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{check_len, Result, SardError};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    Planar,
    /// Periodic in both directions on `[0,width) x [0,height)`.
    Torus { width: f64, height: f64 },
}

/// Present when the domain was built as a regular lattice. Index of cell
/// `(ix, iy)` is `iy * nx + ix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridInfo {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub origin: [f64; 2],
}

impl GridInfo {
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn cell(&self, i: usize) -> (usize, usize) {
        (i % self.nx, i / self.nx)
    }
}

#[derive(Debug, Clone)]
pub struct SpatialDomain {
    points: Vec<[f64; 2]>,
    areas: Vec<f64>,
    ids: Vec<String>,
    topology: Topology,
    grid: Option<GridInfo>,
}

/// Validates and builds a domain. Exact coordinate duplicates are rejected.
pub fn build_domain(points: Vec<[f64; 2]>, areas: Vec<f64>, topology: Topology) -> Result<SpatialDomain> {
    check_len("areas", areas.len(), points.len())?;
    for (i, &a) in areas.iter().enumerate() {
        if !(a > 0.0) || !a.is_finite() {
            return Err(SardError::NonpositiveArea(i, a));
        }
    }
    for (i, p) in points.iter().enumerate() {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(SardError::InvalidArgument(format!("non-finite coordinate at {i}")));
        }
        if let Topology::Torus { width, height } = topology {
            if p[0] < 0.0 || p[0] >= width || p[1] < 0.0 || p[1] >= height {
                return Err(SardError::CoordinateOutOfRange(i, width, height));
            }
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
            .then(a.cmp(&b))
    });
    for w in order.windows(2) {
        if points[w[0]] == points[w[1]] {
            return Err(SardError::DuplicateLocation(w[0], w[1]));
        }
    }
    let ids = (0..points.len()).map(|i| i.to_string()).collect();
    Ok(SpatialDomain {
        points,
        areas,
        ids,
        topology,
        grid: None,
    })
}

impl SpatialDomain {
    /// Regular `nx x ny` lattice of cell centres covering
    /// `[0,width) x [0,height)`, each cell carrying its own area.
    pub fn uniform_grid(nx: usize, ny: usize, width: f64, height: f64, topology: Topology) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(SardError::TooFewLocations { needed: 1, got: 0 });
        }
        let (dx, dy) = (width / nx as f64, height / ny as f64);
        let mut points = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                points.push([(ix as f64 + 0.5) * dx, (iy as f64 + 0.5) * dy]);
            }
        }
        let mut d = build_domain(points, vec![dx * dy; nx * ny], topology)?;
        d.grid = Some(GridInfo {
            nx,
            ny,
            dx,
            dy,
            origin: [0.0, 0.0],
        });
        Ok(d)
    }

    /// Unit-area torus split into `n x n` cells, the Monte Carlo layout.
    pub fn unit_torus(n: usize) -> Result<Self> {
        Self::uniform_grid(n, n, 1.0, 1.0, Topology::Torus { width: 1.0, height: 1.0 })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        check_len("ids", ids.len(), self.len())?;
        self.ids = ids;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        self.points[i]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn grid(&self) -> Option<&GridInfo> {
        self.grid.as_ref()
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Area-weighted total `sum_i v_i A_i`.
    pub fn integrate(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.areas).map(|(v, a)| v * a).sum()
    }

    /// Displacement from `from` to `to`, minimum image on the torus.
    pub fn offset(&self, from: usize, to: usize) -> [f64; 2] {
        self.offset_between(self.points[from], self.points[to])
    }

    pub fn offset_between(&self, from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
        let mut d = [to[0] - from[0], to[1] - from[1]];
        if let Topology::Torus { width, height } = self.topology {
            d[0] = wrap(d[0], width);
            d[1] = wrap(d[1], height);
        }
        d
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let d = self.offset(i, j);
        d[0].hypot(d[1])
    }

    /// Bounding extents used by the bucket index.
    fn extents(&self) -> ([f64; 2], [f64; 2]) {
        match self.topology {
            Topology::Torus { width, height } => ([0.0, 0.0], [width, height]),
            Topology::Planar => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for p in &self.points {
                    for k in 0..2 {
                        lo[k] = lo[k].min(p[k]);
                        hi[k] = hi[k].max(p[k]);
                    }
                }
                (lo, hi)
            }
        }
    }
}

pub(crate) fn wrap(d: f64, period: f64) -> f64 {
    let mut d = d % period;
    if d > 0.5 * period {
        d -= period;
    } else if d < -0.5 * period {
        d += period;
    }
    d
}

/// Uniform bucket grid for nearest-neighbour and radius queries.
pub struct NeighborIndex<'a> {
    domain: &'a SpatialDomain,
    lo: [f64; 2],
    cell: [f64; 2],
    n: [usize; 2],
    buckets: Vec<Vec<usize>>,
    periodic: bool,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(domain: &'a SpatialDomain) -> Self {
        let (lo, hi) = domain.extents();
        let span = [(hi[0] - lo[0]).max(1e-12), (hi[1] - lo[1]).max(1e-12)];
        let target = (span[0] * span[1] / domain.len().max(1) as f64).sqrt().max(1e-12);
        let periodic = matches!(domain.topology, Topology::Torus { .. });
        let n = [
            ((span[0] / target).floor() as usize).clamp(1, 4096),
            ((span[1] / target).floor() as usize).clamp(1, 4096),
        ];
        let cell = [span[0] / n[0] as f64, span[1] / n[1] as f64];
        let mut idx = Self {
            domain,
            lo,
            cell,
            n,
            buckets: vec![Vec::new(); n[0] * n[1]],
            periodic,
        };
        for (i, p) in domain.points.iter().enumerate() {
            let (cx, cy) = idx.bucket_of(*p);
            idx.buckets[cy * n[0] + cx].push(i);
        }
        idx
    }

    fn min_cell(&self) -> f64 {
        self.cell[0].min(self.cell[1])
    }

    fn bucket_of(&self, p: [f64; 2]) -> (usize, usize) {
        let f = |k: usize| {
            let c = ((p[k] - self.lo[k]) / self.cell[k]).floor();
            (c.max(0.0) as usize).min(self.n[k] - 1)
        };
        (f(0), f(1))
    }

    fn axis_range(&self, c: usize, r: usize, k: usize) -> Vec<usize> {
        let n = self.n[k];
        if self.periodic {
            if 2 * r + 1 >= n {
                (0..n).collect()
            } else {
                (0..=2 * r).map(|o| (c + n + o - r) % n).collect()
            }
        } else {
            let a = c.saturating_sub(r);
            let b = (c + r).min(n - 1);
            (a..=b).collect()
        }
    }

    fn covers_everything(&self, c: (usize, usize), r: usize) -> bool {
        let full = |k: usize, cc: usize| {
            if self.periodic {
                2 * r + 1 >= self.n[k]
            } else {
                cc < r + 1 && cc + r + 1 >= self.n[k]
            }
        };
        full(0, c.0) && full(1, c.1)
    }

    fn candidates(&self, c: (usize, usize), r: usize, out: &mut Vec<usize>) {
        out.clear();
        let ys = self.axis_range(c.1, r, 1);
        let xs = self.axis_range(c.0, r, 0);
        for &y in &ys {
            for &x in &xs {
                out.extend_from_slice(&self.buckets[y * self.n[0] + x]);
            }
        }
    }

    /// The `k` nearest other locations to `i`, sorted by distance with ties
    /// broken by ascending index.
    pub fn k_nearest(&self, i: usize, k: usize) -> Vec<(usize, f64)> {
        let c = self.bucket_of(self.domain.points[i]);
        let mut cand = Vec::new();
        let mut r = 1;
        loop {
            self.candidates(c, r, &mut cand);
            let mut scored: Vec<(usize, f64)> = cand
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (j, self.domain.distance(i, j)))
                .collect();
            scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let done = self.covers_everything(c, r)
                || (scored.len() >= k && scored[k - 1].1 < r as f64 * self.min_cell());
            if done {
                scored.truncate(k);
                return scored;
            }
            r += 1;
        }
    }

    /// All other locations within distance `d` of `i` (inclusive), sorted by
    /// index.
    pub fn within(&self, i: usize, d: f64) -> Vec<(usize, f64)> {
        let c = self.bucket_of(self.domain.points[i]);
        let r = (d / self.min_cell()).ceil() as usize + 1;
        let mut cand = Vec::new();
        self.candidates(c, r, &mut cand);
        let mut out: Vec<(usize, f64)> = cand
            .into_iter()
            .filter(|&j| j != i)
            .map(|j| (j, self.domain.distance(i, j)))
            .filter(|&(_, dist)| dist <= d)
            .collect();
        out.sort_by_key(|&(j, _)| j);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Star {
    pub center: usize,
    pub members: Vec<usize>,
    /// Member position minus centre position, `(h_j, k_j)`.
    pub offsets: Vec<[f64; 2]>,
    /// Largest member distance.
    pub dm: f64,
}

/// One star of `n_s` nearest neighbours per location.
pub fn build_stars(domain: &SpatialDomain, n_s: usize) -> Result<Vec<Star>> {
    if n_s == 0 || domain.len() < n_s + 1 {
        return Err(SardError::TooFewLocations {
            needed: n_s + 1,
            got: domain.len(),
        });
    }
    let index = NeighborIndex::new(domain);
    Ok((0..domain.len())
        .into_par_iter()
        .map(|i| {
            let nn = index.k_nearest(i, n_s);
            let members: Vec<usize> = nn.iter().map(|&(j, _)| j).collect();
            let offsets = members.iter().map(|&j| domain.offset(i, j)).collect();
            let dm = nn.iter().map(|&(_, d)| d).fold(0.0, f64::max);
            Star {
                center: i,
                members,
                offsets,
                dm,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContiguityMethod {
    /// Four-neighbour adjacency on a lattice domain.
    RookOnGrid,
    /// First-order neighbours are all locations within the distance.
    DistanceThreshold(f64),
}

/// Nested contiguity sets `W_1 ⊂ ... ⊂ W_Q`, stored as the hop order of each
/// reachable pair.
#[derive(Debug, Clone)]
pub struct ContiguityStructure {
    max_order: usize,
    /// For location `i`: `(j, order)` with `1 <= order <= max_order`,
    /// sorted by `j`.
    rings: Vec<Vec<(usize, u32)>>,
    connected: bool,
}

pub fn contiguity(domain: &SpatialDomain, method: ContiguityMethod, max_order: usize) -> Result<ContiguityStructure> {
    if max_order == 0 {
        return Err(SardError::InvalidArgument("contiguity order must be >= 1".into()));
    }
    let first = first_order(domain, method)?;
    let n = domain.len();
    let rings: Vec<Vec<(usize, u32)>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut seen = std::collections::HashMap::new();
            seen.insert(s, 0u32);
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                let du = seen[&u];
                if du as usize == max_order {
                    continue;
                }
                for &v in &first[u] {
                    if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(v) {
                        e.insert(du + 1);
                        queue.push_back(v);
                    }
                }
            }
            let mut out: Vec<(usize, u32)> = seen.into_iter().filter(|&(j, _)| j != s).collect();
            out.sort_unstable();
            out
        })
        .collect();
    let connected = graph_connected(&first);
    Ok(ContiguityStructure {
        max_order,
        rings,
        connected,
    })
}

fn first_order(domain: &SpatialDomain, method: ContiguityMethod) -> Result<Vec<Vec<usize>>> {
    let n = domain.len();
    match method {
        ContiguityMethod::RookOnGrid => {
            let g = domain
                .grid()
                .ok_or_else(|| SardError::InvalidArgument("rook contiguity needs a lattice domain".into()))?;
            let periodic = matches!(domain.topology(), Topology::Torus { .. });
            Ok((0..n)
                .map(|i| {
                    let (ix, iy) = g.cell(i);
                    let mut nb = Vec::with_capacity(4);
                    let steps: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
                    for (sx, sy) in steps {
                        let (mut x, mut y) = (ix as isize + sx, iy as isize + sy);
                        if periodic {
                            x = x.rem_euclid(g.nx as isize);
                            y = y.rem_euclid(g.ny as isize);
                        } else if x < 0 || y < 0 || x >= g.nx as isize || y >= g.ny as isize {
                            continue;
                        }
                        let j = g.index(x as usize, y as usize);
                        if j != i && !nb.contains(&j) {
                            nb.push(j);
                        }
                    }
                    nb.sort_unstable();
                    nb
                })
                .collect())
        }
        ContiguityMethod::DistanceThreshold(d) => {
            if !(d > 0.0) {
                return Err(SardError::InvalidArgument("distance threshold must be positive".into()));
            }
            let index = NeighborIndex::new(domain);
            Ok((0..n)
                .into_par_iter()
                .map(|i| index.within(i, d).into_iter().map(|(j, _)| j).collect())
                .collect())
        }
    }
}

fn graph_connected(adj: &[Vec<usize>]) -> bool {
    if adj.is_empty() {
        return true;
    }
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == adj.len()
}

impl ContiguityStructure {
    pub fn len(&self) -> usize {
        self.rings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rings.is_empty()
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// `false` when the first-order graph has more than one component, so
    /// some pairs are unreachable at any order.
    pub fn is_connected(&self) -> bool {
        self.connected
    }

    /// Hop order between `i` and `j` if within `max_order`.
    pub fn order(&self, i: usize, j: usize) -> Option<u32> {
        let r = &self.rings[i];
        r.binary_search_by_key(&j, |&(k, _)| k).ok().map(|p| r[p].1)
    }

    pub fn neighbors(&self, i: usize, q: usize) -> impl Iterator<Item = usize> + '_ {
        self.rings[i].iter().filter(move |&&(_, o)| o as usize <= q).map(|&(j, _)| j)
    }

    /// Binary `W_q`: all pairs within `q` hops.
    pub fn cumulative(&self, q: usize) -> CsrMatrix {
        self.pattern(|o| o as usize <= q)
    }

    /// Binary `W_q - W_{q-1}`: pairs exactly `q` hops apart.
    pub fn band(&self, q: usize) -> CsrMatrix {
        self.pattern(|o| o as usize == q)
    }

    fn pattern(&self, keep: impl Fn(u32) -> bool + Sync) -> CsrMatrix {
        let rows = self
            .rings
            .iter()
            .map(|r| r.iter().filter(|&&(_, o)| keep(o)).map(|&(j, _)| (j, 1.0)).collect())
            .collect();
        CsrMatrix::from_rows(self.rings.len(), rows)
    }

    pub fn band_size(&self, q: usize) -> usize {
        self.rings.iter().map(|r| r.iter().filter(|&&(_, o)| o as usize == q).count()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_knn(d: &SpatialDomain, i: usize, k: usize) -> Vec<usize> {
        let mut all: Vec<(usize, f64)> = (0..d.len()).filter(|&j| j != i).map(|j| (j, d.distance(i, j))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.into_iter().take(k).map(|(j, _)| j).collect()
    }

    #[test]
    fn grid_144_on_unit_torus() {
        let d = SpatialDomain::unit_torus(12).unwrap();
        assert_eq!(d.len(), 144);
        assert!((d.total_area() - 1.0).abs() < 1e-12);
        assert!(d.areas().iter().all(|&a| (a - 1.0 / 144.0).abs() < 1e-15));
    }

    #[test]
    fn degenerate_single_point() {
        let d = build_domain(vec![[0.3, 0.2]], vec![1.0], Topology::Planar).unwrap();
        assert_eq!(d.len(), 1);
        assert!(matches!(build_stars(&d, 1), Err(SardError::TooFewLocations { .. })));
    }

    #[test]
    fn rejects_bad_input() {
        let dup = build_domain(vec![[0.1, 0.1], [0.5, 0.5], [0.1, 0.1]], vec![1.0; 3], Topology::Planar);
        assert!(matches!(dup, Err(SardError::DuplicateLocation(0, 2))));
        let area = build_domain(vec![[0.0, 0.0], [1.0, 0.0]], vec![1.0, 0.0], Topology::Planar);
        assert!(matches!(area, Err(SardError::NonpositiveArea(1, _))));
        let torus = Topology::Torus { width: 1.0, height: 1.0 };
        let out = build_domain(vec![[0.0, 0.0], [1.0, 0.5]], vec![1.0; 2], torus);
        assert!(matches!(out, Err(SardError::CoordinateOutOfRange(1, _, _))));
        let short = build_domain(vec![[0.0, 0.0]], vec![], Topology::Planar);
        assert!(matches!(short, Err(SardError::DimensionMismatch { .. })));
    }

    #[test]
    fn interior_star_is_the_eight_surrounding_cells() {
        let d = SpatialDomain::uniform_grid(7, 7, 7.0, 7.0, Topology::Planar).unwrap();
        let g = *d.grid().unwrap();
        let stars = build_stars(&d, 8).unwrap();
        let c = g.index(3, 3);
        let mut got = stars[c].members.clone();
        got.sort_unstable();
        let mut expect = vec![];
        for iy in 2..=4 {
            for ix in 2..=4 {
                if (ix, iy) != (3, 3) {
                    expect.push(g.index(ix, iy));
                }
            }
        }
        expect.sort_unstable();
        assert_eq!(got, expect);
        assert!((stars[c].dm - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn torus_corner_star_wraps() {
        let d = SpatialDomain::unit_torus(10).unwrap();
        let stars = build_stars(&d, 8).unwrap();
        assert_eq!(stars[0].members, brute_knn(&d, 0, 8));
        // the corner cell sees the opposite edges
        let g = d.grid().unwrap();
        assert!(stars[0].members.contains(&g.index(9, 9)));
        assert!(stars[0].members.contains(&g.index(9, 0)));
        for s in &stars {
            assert!(s.offsets.iter().all(|o| o[0].abs() <= 0.1 + 1e-12 && o[1].abs() <= 0.1 + 1e-12));
        }
    }

    #[test]
    fn full_star_contains_everything() {
        let pts: Vec<[f64; 2]> = (0..9).map(|i| [(i as f64).sin() * 3.0, (i as f64 * 1.7).cos()]).collect();
        let d = build_domain(pts, vec![1.0; 9], Topology::Planar).unwrap();
        let stars = build_stars(&d, 8).unwrap();
        for s in &stars {
            let mut m = s.members.clone();
            m.sort_unstable();
            let expect: Vec<usize> = (0..9).filter(|&j| j != s.center).collect();
            assert_eq!(m, expect);
        }
    }

    #[test]
    fn rook_orders_on_grid() {
        let d = SpatialDomain::uniform_grid(11, 11, 1.0, 1.0, Topology::Planar).unwrap();
        let g = *d.grid().unwrap();
        let c = contiguity(&d, ContiguityMethod::RookOnGrid, 10).unwrap();
        let mid = g.index(5, 5);
        assert_eq!(c.neighbors(mid, 1).count(), 4);
        assert_eq!(c.neighbors(mid, 2).count(), 12);
        for q in 1..10 {
            let a = c.cumulative(q);
            let b = c.cumulative(q + 1);
            for (i, j, _) in a.triplets() {
                assert_eq!(b.get(i, j), 1.0);
            }
        }
        assert!(c.is_connected());
    }

    #[test]
    fn distance_threshold_flags_disconnection() {
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [10.0, 0.0], [11.0, 0.0]];
        let d = build_domain(pts, vec![1.0; 4], Topology::Planar).unwrap();
        let c = contiguity(&d, ContiguityMethod::DistanceThreshold(1.5), 3).unwrap();
        assert!(!c.is_connected());
        assert_eq!(c.order(0, 1), Some(1));
        assert_eq!(c.order(0, 2), None);
    }
}
