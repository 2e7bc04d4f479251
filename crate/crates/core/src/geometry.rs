//! Finite lattices and interaction-range families.
//!
//! Short-range lattices are the open cubic box `[0, L-1]^d` with sites
//! numbered in row-major order (first coordinate most significant).
//! Mean-field lattices are `L` unstructured sites.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeKind {
    ShortRange,
    MeanField,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    dimension: usize,
    side: usize,
    kind: LatticeKind,
}

/// Builds a lattice. Mean-field lattices ignore `dimension` and are stored
/// with `dimension = 1`.
pub fn build_lattice(dimension: usize, side: usize, kind: LatticeKind) -> Result<LatticeSpec> {
    LatticeSpec::new(dimension, side, kind)
}

impl LatticeSpec {
    pub fn new(dimension: usize, side: usize, kind: LatticeKind) -> Result<Self> {
        if side == 0 {
            return Err(Error::InvalidLattice("side L must be at least 1".into()));
        }
        if dimension == 0 {
            return Err(Error::InvalidLattice("dimension d must be at least 1".into()));
        }
        let dimension = match kind {
            LatticeKind::ShortRange => dimension,
            LatticeKind::MeanField => 1,
        };
        if kind == LatticeKind::ShortRange
            && u32::try_from(dimension)
                .ok()
                .and_then(|d| side.checked_pow(d))
                .is_none()
        {
            return Err(Error::InvalidLattice(format!(
                "L^d overflows for L={side}, d={dimension}"
            )));
        }
        Ok(Self {
            dimension,
            side,
            kind,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn num_sites(&self) -> usize {
        match self.kind {
            LatticeKind::ShortRange => self.side.pow(self.dimension as u32),
            LatticeKind::MeanField => self.side,
        }
    }

    /// Same lattice with a different side length.
    pub fn with_side(&self, side: usize) -> Result<Self> {
        Self::new(self.dimension, side, self.kind)
    }

    /// Row-major coordinates of a site.
    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut out = vec![0; self.dimension];
        let mut rest = site;
        for slot in out.iter_mut().rev() {
            *slot = rest % self.side;
            rest /= self.side;
        }
        out
    }

    /// Site index of the given coordinates, or `None` outside the box.
    pub fn site(&self, coords: &[usize]) -> Option<usize> {
        if coords.len() != self.dimension {
            return None;
        }
        coords
            .iter()
            .try_fold(0usize, |acc, &c| (c < self.side).then_some(acc * self.side + c))
    }

    fn shifted(&self, coords: &[usize], offset: &[usize]) -> Option<usize> {
        let moved: Vec<usize> = coords.iter().zip(offset).map(|(c, o)| c + o).collect();
        self.site(&moved)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    RandomField,
    NearestNeighbor,
    Plaquette,
    MeanFieldComplete,
    Custom,
}

impl FamilyKind {
    /// The family used when a species does not name one.
    pub fn default_for(p: usize, lattice: LatticeKind) -> Option<Self> {
        match (lattice, p) {
            (LatticeKind::MeanField, _) => Some(Self::MeanFieldComplete),
            (LatticeKind::ShortRange, 1) => Some(Self::RandomField),
            (LatticeKind::ShortRange, 2) => Some(Self::NearestNeighbor),
            (LatticeKind::ShortRange, 4) => Some(Self::Plaquette),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::RandomField => "random_field",
            Self::NearestNeighbor => "nearest_neighbor",
            Self::Plaquette => "plaquette",
            Self::MeanFieldComplete => "mean_field_complete",
            Self::Custom => "custom",
        }
    }
}

/// Boundary convention of a family. Only open boundaries exist today; the
/// field is omitted from JSON when open.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Open,
}

impl Boundary {
    fn is_open(&self) -> bool {
        *self == Boundary::Open
    }
}

/// The support `B_p` of one disorder species: a canonically sorted list of
/// distinct `p`-subsets of sites.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFamily")]
pub struct CouplingFamily {
    p: usize,
    kind: FamilyKind,
    #[serde(default, skip_serializing_if = "Boundary::is_open")]
    boundary: Boundary,
    ranges: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFamily {
    p: usize,
    kind: FamilyKind,
    #[serde(default)]
    boundary: Boundary,
    ranges: Vec<Vec<usize>>,
}

impl TryFrom<RawFamily> for CouplingFamily {
    type Error = Error;

    fn try_from(raw: RawFamily) -> Result<Self> {
        let family = Self::from_ranges(raw.p, raw.kind, raw.ranges)?;
        Ok(Self {
            boundary: raw.boundary,
            ..family
        })
    }
}

impl CouplingFamily {
    /// A user-supplied family. Ranges are sorted and must be distinct sets of
    /// exactly `p` sites below `n_sites`.
    pub fn custom(p: usize, n_sites: usize, ranges: Vec<Vec<usize>>) -> Result<Self> {
        let family = Self::from_ranges(p, FamilyKind::Custom, ranges)?;
        family.check_sites(n_sites)?;
        Ok(family)
    }

    fn from_ranges(p: usize, kind: FamilyKind, ranges: Vec<Vec<usize>>) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidFamily("p must be positive".into()));
        }
        let mut ranges: Vec<Vec<usize>> = ranges
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r
            })
            .collect();
        for r in &ranges {
            if r.len() != p || r.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidFamily(format!(
                    "range {r:?} is not a set of exactly {p} sites"
                )));
            }
        }
        ranges.sort_unstable();
        if ranges.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidFamily("ranges are not distinct".into()));
        }
        Ok(Self {
            p,
            kind,
            boundary: Boundary::Open,
            ranges,
        })
    }

    pub(crate) fn check_sites(&self, n_sites: usize) -> Result<()> {
        match self.ranges.iter().flatten().find(|&&s| s >= n_sites) {
            Some(&site) => Err(Error::InvalidSite { site, n_sites }),
            None => Ok(()),
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn ranges(&self) -> &[Vec<usize>] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Position of a range (given in any order) in the canonical list.
    pub fn position(&self, sites: &[usize]) -> Option<usize> {
        let mut key = sites.to_vec();
        key.sort_unstable();
        self.ranges.binary_search(&key).ok()
    }

    /// Bit masks of the ranges; only meaningful for at most 64 sites.
    pub fn masks(&self) -> Vec<u64> {
        self.ranges.iter().map(|r| site_mask(r)).collect()
    }
}

pub(crate) fn site_mask(sites: &[usize]) -> u64 {
    sites.iter().fold(0u64, |m, &s| m ^ (1u64 << s))
}

/// `|B_p|`.
pub fn family_size(family: &CouplingFamily) -> usize {
    family.len()
}

/// Builds the full deterministic family of the requested kind.
pub fn build_family(lattice: &LatticeSpec, kind: FamilyKind, p: usize) -> Result<CouplingFamily> {
    let n = lattice.num_sites();
    if p == 0 {
        return Err(Error::InvalidFamily("p must be positive".into()));
    }
    if p > n {
        return Err(Error::InvalidFamily(format!(
            "p={p} exceeds the number of sites {n}"
        )));
    }
    let expected_p = match kind {
        FamilyKind::RandomField => Some(1),
        FamilyKind::NearestNeighbor => Some(2),
        FamilyKind::Plaquette => Some(4),
        FamilyKind::MeanFieldComplete => None,
        FamilyKind::Custom => {
            return Err(Error::InvalidFamily(
                "custom families are built from explicit ranges".into(),
            ))
        }
    };
    if let Some(q) = expected_p {
        if q != p {
            return Err(Error::InvalidFamily(format!(
                "{} families have p={q}, got p={p}",
                kind.name()
            )));
        }
    }
    let short_range_only = matches!(kind, FamilyKind::NearestNeighbor | FamilyKind::Plaquette);
    if short_range_only && lattice.kind() != LatticeKind::ShortRange {
        return Err(Error::InvalidFamily(format!(
            "{} families need a short-range lattice",
            kind.name()
        )));
    }
    if kind == FamilyKind::Plaquette && lattice.dimension() < 2 {
        return Err(Error::InvalidFamily(
            "plaquette families need dimension d >= 2".into(),
        ));
    }

    let ranges = match kind {
        FamilyKind::RandomField => (0..n).map(|i| vec![i]).collect(),
        FamilyKind::MeanFieldComplete => (0..n).combinations(p).collect(),
        FamilyKind::NearestNeighbor | FamilyKind::Plaquette => {
            let shapes = base_shapes(kind, lattice.dimension());
            translate(lattice, &shapes)
        }
        FamilyKind::Custom => unreachable!(),
    };
    CouplingFamily::from_ranges(p, kind, ranges)
}

/// Base shapes `A_p` as coordinate offsets containing the origin.
pub(crate) fn base_shapes(kind: FamilyKind, dimension: usize) -> Vec<Vec<Vec<usize>>> {
    let unit = |a: usize| -> Vec<usize> {
        let mut e = vec![0; dimension];
        e[a] = 1;
        e
    };
    match kind {
        FamilyKind::NearestNeighbor => (0..dimension)
            .map(|a| vec![vec![0; dimension], unit(a)])
            .collect(),
        FamilyKind::Plaquette => (0..dimension)
            .tuple_combinations()
            .map(|(a, b)| {
                let mut both = unit(a);
                both[b] = 1;
                vec![vec![0; dimension], unit(a), unit(b), both]
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// Every translate `i + A` fully contained in the box (open boundaries).
fn translate(lattice: &LatticeSpec, shapes: &[Vec<Vec<usize>>]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for i in 0..lattice.num_sites() {
        let corner = lattice.coords(i);
        for shape in shapes {
            let range: Option<Vec<usize>> = shape
                .iter()
                .map(|offset| lattice.shifted(&corner, offset))
                .collect();
            if let Some(r) = range {
                out.push(r);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sr(d: usize, l: usize) -> LatticeSpec {
        build_lattice(d, l, LatticeKind::ShortRange).unwrap()
    }

    #[test]
    fn site_counts() {
        assert_eq!(sr(2, 3).num_sites(), 9);
        assert_eq!(sr(3, 2).num_sites(), 8);
        let mf = build_lattice(1, 16, LatticeKind::MeanField).unwrap();
        assert_eq!(mf.num_sites(), 16);
        let mf = build_lattice(3, 16, LatticeKind::MeanField).unwrap();
        assert_eq!(mf.num_sites(), 16);
    }

    #[test]
    fn rejects_zero_sizes() {
        assert!(build_lattice(0, 3, LatticeKind::ShortRange).is_err());
        assert!(build_lattice(2, 0, LatticeKind::ShortRange).is_err());
        assert!(build_lattice(1, 0, LatticeKind::MeanField).is_err());
    }

    /// Independent oracle: scan every unordered pair for l1 distance 1.
    fn brute_force_bonds(lattice: &LatticeSpec) -> usize {
        let n = lattice.num_sites();
        let mut count = 0;
        for a in 0..n {
            for b in a + 1..n {
                let (ca, cb) = (lattice.coords(a), lattice.coords(b));
                let dist: usize = ca.iter().zip(&cb).map(|(x, y)| x.abs_diff(*y)).sum();
                if dist == 1 {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn nearest_neighbor_counts_match_exhaustive_scan() {
        for d in 1..=3 {
            for l in 1..=5 {
                let lat = sr(d, l);
                if lat.num_sites() < 2 {
                    continue;
                }
                let fam = build_family(&lat, FamilyKind::NearestNeighbor, 2).unwrap();
                let closed = d * l.pow(d as u32 - 1) * (l - 1);
                assert_eq!(fam.len(), closed, "d={d} L={l}");
                assert_eq!(fam.len(), brute_force_bonds(&lat), "d={d} L={l}");
            }
        }
        let fam = build_family(&sr(2, 3), FamilyKind::NearestNeighbor, 2).unwrap();
        assert_eq!(family_size(&fam), 12);
        let fam = build_family(&sr(2, 4), FamilyKind::NearestNeighbor, 2).unwrap();
        assert_eq!(family_size(&fam), 24);
    }

    #[test]
    fn other_family_sizes() {
        let fam = build_family(&sr(1, 5), FamilyKind::RandomField, 1).unwrap();
        assert_eq!(fam.len(), 5);
        let fam = build_family(&sr(2, 3), FamilyKind::RandomField, 1).unwrap();
        assert_eq!(family_size(&fam), 9);
        let mf4 = build_lattice(1, 4, LatticeKind::MeanField).unwrap();
        assert_eq!(
            build_family(&mf4, FamilyKind::MeanFieldComplete, 2)
                .unwrap()
                .len(),
            6
        );
        let mf8 = build_lattice(1, 8, LatticeKind::MeanField).unwrap();
        assert_eq!(
            build_family(&mf8, FamilyKind::MeanFieldComplete, 3)
                .unwrap()
                .len(),
            56
        );
        // C(d,2) L^{d-2} (L-1)^2 unit squares
        let fam = build_family(&sr(2, 3), FamilyKind::Plaquette, 4).unwrap();
        assert_eq!(fam.len(), 4);
        let fam = build_family(&sr(3, 3), FamilyKind::Plaquette, 4).unwrap();
        assert_eq!(fam.len(), 3 * 3 * 4);
    }

    #[test]
    fn family_errors() {
        let lat = sr(1, 3);
        assert!(build_family(&lat, FamilyKind::Plaquette, 4).is_err());
        let mf = build_lattice(1, 3, LatticeKind::MeanField).unwrap();
        assert!(build_family(&mf, FamilyKind::MeanFieldComplete, 4).is_err());
        assert!(build_family(&lat, FamilyKind::NearestNeighbor, 3).is_err());
        assert!(build_family(&mf, FamilyKind::NearestNeighbor, 2).is_err());
        assert!(CouplingFamily::custom(2, 3, vec![vec![0, 1], vec![1, 0]]).is_err());
        assert!(CouplingFamily::custom(2, 3, vec![vec![0, 3]]).is_err());
        assert!(CouplingFamily::custom(2, 3, vec![vec![1, 1]]).is_err());
    }

    #[test]
    fn ranges_are_canonical_and_valid() {
        let lat = sr(3, 3);
        for (kind, p) in [
            (FamilyKind::RandomField, 1),
            (FamilyKind::NearestNeighbor, 2),
            (FamilyKind::Plaquette, 4),
        ] {
            let fam = build_family(&lat, kind, p).unwrap();
            assert!(fam.ranges().windows(2).all(|w| w[0] < w[1]));
            for r in fam.ranges() {
                assert_eq!(r.len(), p);
                assert!(r.windows(2).all(|w| w[0] < w[1]));
                assert!(r.iter().all(|&s| s < lat.num_sites()));
            }
        }
    }

    #[test]
    fn translation_closure() {
        for (d, l) in [(1, 6), (2, 4), (3, 3)] {
            let lat = sr(d, l);
            for (kind, p) in [(FamilyKind::NearestNeighbor, 2), (FamilyKind::Plaquette, 4)] {
                if kind == FamilyKind::Plaquette && d < 2 {
                    continue;
                }
                let fam = build_family(&lat, kind, p).unwrap();
                let shapes = base_shapes(kind, d);
                for r in fam.ranges() {
                    // the smallest index is the lexicographically smallest corner
                    let corner = lat.coords(r[0]);
                    let rebuilt = shapes.iter().any(|shape| {
                        let mut sites: Vec<usize> = shape
                            .iter()
                            .map(|off| lat.shifted(&corner, off).unwrap_or(usize::MAX))
                            .collect();
                        sites.sort_unstable();
                        &sites == r
                    });
                    assert!(rebuilt, "range {r:?} is not a translate of a base shape");
                }
            }
        }
    }

    #[test]
    fn deterministic_and_json_shape() {
        let lat = sr(2, 3);
        let a = build_family(&lat, FamilyKind::NearestNeighbor, 2).unwrap();
        let b = build_family(&lat, FamilyKind::NearestNeighbor, 2).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        assert_eq!(ja, serde_json::to_string(&b).unwrap());
        assert!(ja.starts_with(r#"{"p":2,"kind":"nearest_neighbor","ranges":[[0,1],[0,3],"#));
        let back: CouplingFamily = serde_json::from_str(&ja).unwrap();
        assert_eq!(back, a);
        let bad = r#"{"p":2,"kind":"custom","ranges":[[0,1,2]]}"#;
        assert!(serde_json::from_str::<CouplingFamily>(bad).is_err());
    }

    proptest! {
        #[test]
        fn index_map_round_trips(d in 1usize..4, l in 1usize..7, seed in any::<u64>()) {
            let lat = sr(d, l);
            let site = (seed as usize) % lat.num_sites();
            let c = lat.coords(site);
            prop_assert!(c.iter().all(|&x| x < l));
            prop_assert_eq!(lat.site(&c), Some(site));
        }
    }
}
