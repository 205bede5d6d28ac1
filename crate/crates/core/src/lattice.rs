//! Periodic lattice geometry, cubes, paired blocks and bonds.
//!
//! Sites are addressed by a flat row-major index; the last axis varies
//! fastest. Open regions (segments, squares) used by the exact spectral
//! computations are represented by [`Region`], which carries its own bond
//! list and never wraps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete torus with side lengths `dims` (one per axis, `1 <= d <= 3`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GeometrySpec", into = "GeometrySpec")]
pub struct TorusGeometry {
    dims: Vec<usize>,
    strides: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GeometrySpec {
    dims: Vec<usize>,
}

impl TryFrom<GeometrySpec> for TorusGeometry {
    type Error = Error;
    fn try_from(spec: GeometrySpec) -> Result<Self> {
        TorusGeometry::new(&spec.dims)
    }
}

impl From<TorusGeometry> for GeometrySpec {
    fn from(g: TorusGeometry) -> Self {
        GeometrySpec { dims: g.dims }
    }
}

/// An unordered nearest-neighbour pair `{x, x + e_axis}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    pub x: usize,
    pub y: usize,
    pub axis: usize,
}

impl TorusGeometry {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::Geometry(format!(
                "dimension must be 1, 2 or 3, got {}",
                dims.len()
            )));
        }
        if let Some(&bad) = dims.iter().find(|&&n| n < 2) {
            return Err(Error::Geometry(format!("side length {bad} < 2")));
        }
        let mut strides = vec![1; dims.len()];
        for i in (0..dims.len() - 1).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        Ok(Self {
            dims: dims.to_vec(),
            strides,
        })
    }

    /// Cubic torus of side `side` in dimension `d`.
    pub fn cubic(side: usize, d: usize) -> Result<Self> {
        Self::new(&vec![side; d])
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_sites(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn min_side(&self) -> usize {
        *self.dims.iter().min().unwrap()
    }

    /// Flat index of (wrapped) integer coordinates.
    pub fn index(&self, coords: &[i64]) -> usize {
        debug_assert_eq!(coords.len(), self.dim());
        coords
            .iter()
            .zip(&self.dims)
            .zip(&self.strides)
            .map(|((&c, &n), &s)| c.rem_euclid(n as i64) as usize * s)
            .sum()
    }

    /// Canonical coordinates of a flat index.
    pub fn coords(&self, idx: usize) -> Vec<i64> {
        self.dims
            .iter()
            .zip(&self.strides)
            .map(|(&n, &s)| ((idx / s) % n) as i64)
            .collect()
    }

    pub fn site(&self, idx: usize) -> Site {
        Site {
            coords: self.coords(idx).into_iter().map(|c| c as usize).collect(),
        }
    }

    /// Translate site `idx` by an integer offset.
    pub fn shift(&self, idx: usize, offset: &[i64]) -> usize {
        let mut c = self.coords(idx);
        for (ci, oi) in c.iter_mut().zip(offset) {
            *ci += oi;
        }
        self.index(&c)
    }

    /// Neighbour of `idx` along `axis`, one step in direction `sign` (+1/-1).
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, sign: i64) -> usize {
        let n = self.dims[axis];
        let s = self.strides[axis];
        let c = (idx / s) % n;
        let nc = (c as i64 + sign).rem_euclid(n as i64) as usize;
        idx - c * s + nc * s
    }

    /// Unit vector along `axis`.
    pub fn unit(&self, axis: usize) -> Vec<i64> {
        let mut v = vec![0; self.dim()];
        v[axis] = 1;
        v
    }

    /// Number of directed pairs `(x, x + e)` before deduplication.
    pub fn directed_pairs(&self) -> usize {
        self.dim() * self.n_sites()
    }

    /// Every nearest-neighbour bond exactly once. On an axis of side 2 the
    /// pairs `(x, x+e)` and `(x+e, x+2e)` coincide and are kept once.
    pub fn bonds(&self) -> Vec<Bond> {
        let mut out = Vec::with_capacity(self.directed_pairs());
        for x in 0..self.n_sites() {
            for axis in 0..self.dim() {
                if self.dims[axis] == 2 && (x / self.strides[axis]) % 2 == 1 {
                    continue;
                }
                out.push(Bond {
                    x,
                    y: self.neighbor(x, axis, 1),
                    axis,
                });
            }
        }
        out
    }

    /// Sites of the cube of radius `radius` (side `2r+1`) around `center`.
    pub fn box_sites(&self, center: usize, radius: usize) -> Result<Vec<usize>> {
        let side = 2 * radius + 1;
        if side > self.min_side() {
            return Err(Error::Geometry(format!(
                "box of side {side} does not fit in torus {:?}",
                self.dims
            )));
        }
        let c = self.coords(center);
        Ok(cube_offsets(self.dim(), radius)
            .map(|off| {
                let p: Vec<i64> = c.iter().zip(&off).map(|(a, b)| a + b).collect();
                self.index(&p)
            })
            .collect())
    }

    /// The two adjacent cubes of odd side `n` on either side of the
    /// hyperplane through `center` orthogonal to `axis`, ordered
    /// (negative side, positive side).
    pub fn paired_boxes(&self, center: usize, n: usize, axis: usize) -> Result<(Block, Block)> {
        if n % 2 == 0 {
            return Err(Error::Geometry(format!("paired box side {n} must be odd")));
        }
        if axis >= self.dim() {
            return Err(Error::Geometry(format!("axis {axis} out of range")));
        }
        if 2 * n > self.dims[axis] {
            return Err(Error::Geometry(format!(
                "paired boxes of side {n} overlap on axis of length {}",
                self.dims[axis]
            )));
        }
        if let Some((i, &len)) = self
            .dims
            .iter()
            .enumerate()
            .find(|&(i, &len)| i != axis && n > len)
        {
            return Err(Error::Geometry(format!(
                "paired boxes of side {n} exceed axis {i} of length {len}"
            )));
        }
        let r = (n - 1) / 2;
        let r = r as i64;
        let mut c1 = vec![0i64; self.dim()];
        c1[axis] = -(r + 1);
        let mut c2 = vec![0i64; self.dim()];
        c2[axis] = r;
        let first = Block {
            center: self.shift(center, &c1),
            radius: r as usize,
            sites: self.box_sites_unchecked(self.shift(center, &c1), r as usize),
        };
        let second = Block {
            center: self.shift(center, &c2),
            radius: r as usize,
            sites: self.box_sites_unchecked(self.shift(center, &c2), r as usize),
        };
        Ok((first, second))
    }

    fn box_sites_unchecked(&self, center: usize, radius: usize) -> Vec<usize> {
        let c = self.coords(center);
        cube_offsets(self.dim(), radius)
            .map(|off| {
                let p: Vec<i64> = c.iter().zip(&off).map(|(a, b)| a + b).collect();
                self.index(&p)
            })
            .collect()
    }
}

/// Site with canonical coordinates `0 <= coords[i] < dims[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Site {
    pub coords: Vec<usize>,
}

/// A cube `Λ_{x,r}` on a torus, kept with its site list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub center: usize,
    pub radius: usize,
    pub sites: Vec<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// Integer offsets of the cube `[-r, r]^d` in row-major order.
pub fn cube_offsets(d: usize, radius: usize) -> impl Iterator<Item = Vec<i64>> {
    let side = 2 * radius + 1;
    let total = side.pow(d as u32);
    (0..total).map(move |mut k| {
        let mut v = vec![0i64; d];
        for i in (0..d).rev() {
            v[i] = (k % side) as i64 - radius as i64;
            k /= side;
        }
        v
    })
}

/// A finite set of sites with its own internal bond list (no wrapping unless
/// inherited from a torus). Local site indices run over `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    /// Integer coordinates of each local site.
    pub coords: Vec<Vec<i64>>,
    /// Internal bonds in local indices.
    pub bonds: Vec<Bond>,
}

impl Region {
    /// Open parallelepiped with the given side lengths (origin at corner).
    pub fn open_box(sides: &[usize]) -> Result<Self> {
        if sides.is_empty() || sides.len() > 3 || sides.iter().any(|&s| s == 0) {
            return Err(Error::Geometry(format!("invalid box sides {sides:?}")));
        }
        let d = sides.len();
        let n: usize = sides.iter().product();
        let mut coords = Vec::with_capacity(n);
        for mut k in 0..n {
            let mut c = vec![0i64; d];
            for i in (0..d).rev() {
                c[i] = (k % sides[i]) as i64;
                k /= sides[i];
            }
            coords.push(c);
        }
        Ok(Self::from_coords(coords))
    }

    /// Region given by explicit coordinates, bonds between unit-distance pairs.
    pub fn from_coords(coords: Vec<Vec<i64>>) -> Self {
        let mut bonds = Vec::new();
        for x in 0..coords.len() {
            for y in x + 1..coords.len() {
                let diff: Vec<i64> = coords[x].iter().zip(&coords[y]).map(|(a, b)| b - a).collect();
                let l1: i64 = diff.iter().map(|v| v.abs()).sum();
                if l1 == 1 {
                    let axis = diff.iter().position(|&v| v != 0).unwrap();
                    bonds.push(Bond { x, y, axis });
                }
            }
        }
        Self { coords, bonds }
    }

    /// Sub-region of a torus: the torus bonds with both ends inside.
    pub fn from_torus(geom: &TorusGeometry, sites: &[usize]) -> Self {
        let coords = sites.iter().map(|&s| geom.coords(s)).collect();
        let local: std::collections::HashMap<usize, usize> =
            sites.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let bonds = geom
            .bonds()
            .into_iter()
            .filter_map(|b| match (local.get(&b.x), local.get(&b.y)) {
                (Some(&x), Some(&y)) => Some(Bond { x, y, axis: b.axis }),
                _ => None,
            })
            .collect();
        Self { coords, bonds }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.coords.first().map_or(0, |c| c.len())
    }

    /// Local index of a coordinate, if inside.
    pub fn find(&self, c: &[i64]) -> Option<usize> {
        self.coords.iter().position(|x| x.as_slice() == c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn ring_and_torus_bond_counts() {
        assert_eq!(TorusGeometry::new(&[4]).unwrap().bonds().len(), 4);
        let g = TorusGeometry::new(&[3, 3]).unwrap();
        assert_eq!(g.n_sites(), 9);
        assert_eq!(g.bonds().len(), 18);
    }

    #[test]
    fn side_two_bonds_are_deduplicated() {
        let g = TorusGeometry::new(&[2, 2, 2]).unwrap();
        assert_eq!(g.directed_pairs(), 24);
        // brute force: distinct unordered neighbour pairs
        let mut set = HashSet::new();
        for x in 0..g.n_sites() {
            for a in 0..3 {
                let y = g.neighbor(x, a, 1);
                set.insert((x.min(y), x.max(y), a));
            }
        }
        assert_eq!(set.len(), 12);
        assert_eq!(g.bonds().len(), 12);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(TorusGeometry::new(&[]).is_err());
        assert!(TorusGeometry::new(&[3, 3, 3, 3]).is_err());
        assert!(TorusGeometry::new(&[1, 4]).is_err());
    }

    #[test]
    fn indexing_is_bijective() {
        let g = TorusGeometry::new(&[3, 4, 5]).unwrap();
        for i in 0..g.n_sites() {
            assert_eq!(g.index(&g.coords(i)), i);
        }
    }

    #[test]
    fn boxes() {
        let g = TorusGeometry::new(&[5]).unwrap();
        assert_eq!(g.box_sites(0, 0).unwrap(), vec![0]);
        let mut b = g.box_sites(0, 1).unwrap();
        b.sort();
        assert_eq!(b, vec![0, 1, 4]);
        let g2 = TorusGeometry::new(&[5, 5]).unwrap();
        let b = g2.box_sites(g2.index(&[4, 4]), 1).unwrap();
        assert_eq!(b.len(), 9);
        assert!(b.contains(&g2.index(&[0, 0])));
        assert!(g.box_sites(0, 3).is_err());
    }

    #[test]
    fn paired_boxes_layout() {
        let g = TorusGeometry::new(&[6]).unwrap();
        let (a, b) = g.paired_boxes(0, 1, 0).unwrap();
        assert_eq!(a.sites, vec![5]);
        assert_eq!(b.sites, vec![0]);
        let g = TorusGeometry::new(&[12]).unwrap();
        let (a, b) = g.paired_boxes(0, 3, 0).unwrap();
        assert_eq!(a.sites, vec![9, 10, 11]);
        assert_eq!(b.sites, vec![0, 1, 2]);
        assert!(g.paired_boxes(0, 7, 0).is_err());
        assert!(g.paired_boxes(0, 4, 0).is_err());
    }

    #[test]
    fn open_box_bonds() {
        assert_eq!(Region::open_box(&[5]).unwrap().bonds.len(), 4);
        assert_eq!(Region::open_box(&[3, 3]).unwrap().bonds.len(), 12);
        let g = TorusGeometry::new(&[8]).unwrap();
        let r = Region::from_torus(&g, &[6, 7, 0, 1]);
        assert_eq!(r.bonds.len(), 3);
    }

    proptest::proptest! {
        #[test]
        fn box_translation_consistency(x in 0usize..49, z in 0usize..49, r in 0usize..4) {
            let g = TorusGeometry::new(&[7, 7]).unwrap();
            let zc = g.coords(z);
            let shifted: HashSet<usize> = g.box_sites(x, r).unwrap().into_iter().map(|s| g.shift(s, &zc)).collect();
            let direct: HashSet<usize> = g.box_sites(g.shift(x, &zc), r).unwrap().into_iter().collect();
            proptest::prop_assert_eq!(shifted, direct);
        }

        #[test]
        fn paired_boxes_disjoint(c in 0usize..100, half in 0usize..3, axis in 0usize..2) {
            let g = TorusGeometry::new(&[10, 10]).unwrap();
            let n = 2 * half + 1;
            let (a, b) = g.paired_boxes(c, n, axis).unwrap();
            let sa: HashSet<_> = a.sites.iter().collect();
            let sb: HashSet<_> = b.sites.iter().collect();
            proptest::prop_assert_eq!(sa.len(), n * n);
            proptest::prop_assert_eq!(sb.len(), n * n);
            proptest::prop_assert!(sa.is_disjoint(&sb));
        }
    }
}
