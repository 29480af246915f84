//! Tetrahedral meshes with global edge enumeration and boundary flags.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{cross, dot3, Real};

/// Local vertex pairs of the six tet edges, in the order used everywhere.
pub const LOCAL_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Tag value marking tets of the observation region.
pub const REGION_D: i64 = 1;

/// Axis-aligned box `[x0,x1]×[y0,y1]×[z0,z1]` selecting the observation
/// region, or the whole domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegionBox {
    Whole,
    Box { lo: [f64; 3], hi: [f64; 3] },
}

impl RegionBox {
    /// Parses `x0,y0,z0,x1,y1,z1` or `all`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") || s.eq_ignore_ascii_case("whole") {
            return Ok(RegionBox::Whole);
        }
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("region box '{s}': {e}")))?;
        Self::from_slice(&v)
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 6 {
            return Err(Error::Parse(format!(
                "region box needs 6 numbers, got {}",
                v.len()
            )));
        }
        let lo = [v[0], v[1], v[2]];
        let hi = [v[3], v[4], v[5]];
        if (0..3).any(|i| lo[i] > hi[i]) {
            return Err(Error::InvalidArgument(format!(
                "region box lower corner {lo:?} exceeds upper corner {hi:?}"
            )));
        }
        Ok(RegionBox::Box { lo, hi })
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            RegionBox::Whole => true,
            RegionBox::Box { lo, hi } => (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i]),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mesh<T> {
    pub nodes: Vec<[T; 3]>,
    /// Positively oriented tets.
    pub tets: Vec<[usize; 4]>,
    pub region_tags: Vec<i64>,
    /// Global edges `(i, j)` with `i < j`, sorted lexicographically.
    pub edges: Vec<[usize; 2]>,
    /// Per tet, the global edge index and orientation sign of each local
    /// edge in [`LOCAL_EDGES`] order.
    pub tet_edges: Vec<[(usize, i8); 6]>,
    pub boundary_edges: Vec<bool>,
    pub boundary_nodes: Vec<bool>,
    pub face_count: usize,
    pub boundary_face_count: usize,
    pub h: T,
}

impl<T: Real> Mesh<T> {
    /// Builds topology from raw node and tet arrays and validates it.
    pub fn from_raw(nodes: Vec<[T; 3]>, tets: Vec<[usize; 4]>, region_tags: Vec<i64>) -> Result<Self> {
        if tets.is_empty() {
            return Err(Error::MeshValidation("mesh has no tets".into()));
        }
        if region_tags.len() != tets.len() {
            return Err(Error::MeshValidation(format!(
                "{} region tags for {} tets",
                region_tags.len(),
                tets.len()
            )));
        }
        let nv = nodes.len();
        for (k, t) in tets.iter().enumerate() {
            for &i in t {
                if i >= nv {
                    return Err(Error::MeshValidation(format!(
                        "tet {k} references node {i}, but the mesh has {nv} nodes"
                    )));
                }
            }
            let mut s = *t;
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::MeshValidation(format!("tet {k} repeats a node")));
            }
        }
        let mut h = T::zero();
        for (k, t) in tets.iter().enumerate() {
            let v = signed_volume(&nodes, t);
            if v < T::zero() {
                return Err(Error::MeshValidation(format!("negative volume, tet {k}")));
            }
            if v == T::zero() {
                return Err(Error::MeshValidation(format!("zero volume, tet {k}")));
            }
            for &(a, b) in &LOCAL_EDGES {
                h = h.max(distance(nodes[t[a]], nodes[t[b]]));
            }
        }

        let mut pairs: Vec<[usize; 2]> = Vec::with_capacity(tets.len() * 6);
        for t in &tets {
            for &(a, b) in &LOCAL_EDGES {
                let (i, j) = (t[a].min(t[b]), t[a].max(t[b]));
                pairs.push([i, j]);
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let edges = pairs;
        let edge_index: HashMap<[usize; 2], usize> =
            edges.iter().enumerate().map(|(k, &e)| (e, k)).collect();
        let tet_edges: Vec<[(usize, i8); 6]> = tets
            .iter()
            .map(|t| {
                let mut out = [(0usize, 1i8); 6];
                for (l, &(a, b)) in LOCAL_EDGES.iter().enumerate() {
                    let (ga, gb) = (t[a], t[b]);
                    let key = [ga.min(gb), ga.max(gb)];
                    out[l] = (edge_index[&key], if ga < gb { 1 } else { -1 });
                }
                out
            })
            .collect();

        let mut faces: HashMap<[usize; 3], usize> = HashMap::with_capacity(tets.len() * 2);
        for t in &tets {
            for skip in 0..4 {
                let mut f = [0usize; 3];
                let mut c = 0;
                for (l, &v) in t.iter().enumerate() {
                    if l != skip {
                        f[c] = v;
                        c += 1;
                    }
                }
                f.sort_unstable();
                *faces.entry(f).or_insert(0) += 1;
            }
        }
        let mut boundary_nodes = vec![false; nv];
        let mut boundary_edges = vec![false; edges.len()];
        let mut boundary_face_count = 0;
        let mut bfaces: Vec<&[usize; 3]> = Vec::new();
        for (f, &count) in &faces {
            if count > 2 {
                return Err(Error::MeshValidation(format!(
                    "face {f:?} shared by {count} tets"
                )));
            }
            if count == 1 {
                boundary_face_count += 1;
                bfaces.push(f);
            }
        }
        for f in bfaces {
            for &v in f {
                boundary_nodes[v] = true;
            }
            for (a, b) in [(0, 1), (0, 2), (1, 2)] {
                boundary_edges[edge_index[&[f[a], f[b]]]] = true;
            }
        }
        let face_count = faces.len();
        let used: usize = {
            let mut seen = vec![false; nv];
            for t in &tets {
                for &v in t {
                    seen[v] = true;
                }
            }
            seen.iter().filter(|&&s| !s).count()
        };
        if used > 0 {
            return Err(Error::MeshValidation(format!(
                "{used} nodes are not used by any tet"
            )));
        }
        Ok(Mesh {
            nodes,
            tets,
            region_tags,
            edges,
            tet_edges,
            boundary_edges,
            boundary_nodes,
            face_count,
            boundary_face_count,
            h,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// `V - E + F - T`
    pub fn euler_characteristic(&self) -> i64 {
        self.num_nodes() as i64 - self.num_edges() as i64 + self.face_count as i64
            - self.num_tets() as i64
    }

    pub fn volume(&self, k: usize) -> T {
        signed_volume(&self.nodes, &self.tets[k])
    }

    pub fn total_volume(&self) -> T {
        (0..self.num_tets()).map(|k| self.volume(k)).sum()
    }

    pub fn centroid(&self, k: usize) -> [T; 3] {
        let q = T::lit(0.25);
        let mut c = [T::zero(); 3];
        for &v in &self.tets[k] {
            for d in 0..3 {
                c[d] += q * self.nodes[v][d];
            }
        }
        c
    }

    pub fn in_region(&self, k: usize) -> bool {
        self.region_tags[k] == REGION_D
    }

    /// Gradients of the four barycentric coordinates of tet `k`.
    pub fn barycentric_gradients(&self, k: usize) -> [[T; 3]; 4] {
        let t = &self.tets[k];
        let p: [[T; 3]; 4] = [
            self.nodes[t[0]],
            self.nodes[t[1]],
            self.nodes[t[2]],
            self.nodes[t[3]],
        ];
        let e = |a: usize| {
            [
                p[a][0] - p[0][0],
                p[a][1] - p[0][1],
                p[a][2] - p[0][2],
            ]
        };
        let (e1, e2, e3) = (e(1), e(2), e(3));
        let det = dot3(e1, cross(e2, e3));
        let inv = T::one() / det;
        // rows of the inverse Jacobian are the gradients of λ1..λ3
        let g1 = cross(e2, e3).map(|v| v * inv);
        let g2 = cross(e3, e1).map(|v| v * inv);
        let g3 = cross(e1, e2).map(|v| v * inv);
        let g0 = [
            -(g1[0] + g2[0] + g3[0]),
            -(g1[1] + g2[1] + g3[1]),
            -(g1[2] + g2[2] + g3[2]),
        ];
        [g0, g1, g2, g3]
    }

    /// Ratio of the longest to the shortest edge.
    pub fn edge_length_ratio(&self) -> T {
        let mut lo = T::infinity();
        let mut hi = T::zero();
        for e in &self.edges {
            let l = distance(self.nodes[e[0]], self.nodes[e[1]]);
            lo = lo.min(l);
            hi = hi.max(l);
        }
        hi / lo
    }

    pub fn region_is_nonempty(&self) -> bool {
        (0..self.num_tets()).any(|k| self.in_region(k))
    }

    /// Retags tets whose centroid lies in `region`.
    pub fn tag_region(&mut self, region: &RegionBox) {
        for k in 0..self.num_tets() {
            let c = self.centroid(k).map(|v| v.to_f64_lossy());
            self.region_tags[k] = if region.contains(c) { REGION_D } else { 0 };
        }
    }

    /// Serializes to the ASCII mesh format.
    pub fn to_ascii(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {}", self.num_nodes());
        for p in &self.nodes {
            let _ = writeln!(
                s,
                "{} {} {}",
                p[0].to_f64_lossy(),
                p[1].to_f64_lossy(),
                p[2].to_f64_lossy()
            );
        }
        let _ = writeln!(s, "tets {}", self.num_tets());
        for (t, tag) in self.tets.iter().zip(&self.region_tags) {
            let _ = writeln!(s, "{} {} {} {} {}", t[0], t[1], t[2], t[3], tag);
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ascii())?;
        Ok(())
    }

    /// Parses the ASCII mesh format and validates the result.
    pub fn from_ascii(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let nv = header(lines.next(), "nodes")?;
        let mut nodes = Vec::with_capacity(nv);
        for k in 0..nv {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("expected {nv} node lines, found {k}")))?;
            let v = numbers::<f64>(l, 3, ln)?;
            nodes.push([T::lit(v[0]), T::lit(v[1]), T::lit(v[2])]);
        }
        let nt = header(lines.next(), "tets")?;
        let mut tets = Vec::with_capacity(nt);
        let mut tags = Vec::with_capacity(nt);
        for k in 0..nt {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("expected {nt} tet lines, found {k}")))?;
            let v = numbers::<i64>(l, 5, ln)?;
            let mut t = [0usize; 4];
            for d in 0..4 {
                if v[d] < 0 {
                    return Err(Error::MeshValidation(format!(
                        "tet {k} has negative node index {}",
                        v[d]
                    )));
                }
                t[d] = v[d] as usize;
            }
            tets.push(t);
            tags.push(v[4]);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::Parse(format!("unexpected content at line {ln}")));
        }
        Self::from_raw(nodes, tets, tags)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_ascii(&text)
    }
}

fn header(line: Option<(usize, &str)>, key: &str) -> Result<usize> {
    let (ln, l) = line.ok_or_else(|| Error::Parse(format!("missing '{key}' header")))?;
    let mut it = l.split_whitespace();
    if it.next() != Some(key) {
        return Err(Error::Parse(format!("line {ln}: expected '{key} <count>'")));
    }
    let n = it
        .next()
        .and_then(|t| t.parse::<usize>().ok())
        .ok_or_else(|| Error::Parse(format!("line {ln}: bad {key} count")))?;
    if it.next().is_some() {
        return Err(Error::Parse(format!("line {ln}: trailing tokens")));
    }
    Ok(n)
}

fn numbers<N: std::str::FromStr>(l: &str, count: usize, ln: usize) -> Result<Vec<N>> {
    let v: Vec<N> = l
        .split_whitespace()
        .map(|t| t.parse::<N>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse(format!("line {ln}: malformed number in '{l}'")))?;
    if v.len() != count {
        return Err(Error::Parse(format!(
            "line {ln}: expected {count} values, got {}",
            v.len()
        )));
    }
    Ok(v)
}

fn signed_volume<T: Real>(nodes: &[[T; 3]], t: &[usize; 4]) -> T {
    let p0 = nodes[t[0]];
    let d = |a: usize| {
        let p = nodes[t[a]];
        [p[0] - p0[0], p[1] - p0[1], p[2] - p0[2]]
    };
    dot3(d(1), cross(d(2), d(3))) / T::lit(6.0)
}

fn distance<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    dot3(d, d).sqrt()
}

/// Kuhn triangulation of `[0,1]³` into `6 n³` tets; tets whose centroid
/// lies in `region` are tagged as the observation region.
pub fn generate_structured_cube<T: Real>(n: usize, region: &RegionBox) -> Result<Mesh<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "structured cube needs at least one subdivision per axis".into(),
        ));
    }
    let m = n + 1;
    let id = |i: usize, j: usize, k: usize| (k * m + j) * m + i;
    let hn = T::one() / T::from_usize_lossy(n);
    let mut nodes = Vec::with_capacity(m * m * m);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                nodes.push([
                    T::from_usize_lossy(i) * hn,
                    T::from_usize_lossy(j) * hn,
                    T::from_usize_lossy(k) * hn,
                ]);
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut tets = Vec::with_capacity(6 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for p in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [id(c[0], c[1], c[2]), 0, 0, 0];
                    for (s, &axis) in p.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = id(c[0], c[1], c[2]);
                    }
                    if signed_volume(&nodes, &t) < T::zero() {
                        t.swap(2, 3);
                    }
                    tets.push(t);
                }
            }
        }
    }
    let tags = vec![0; tets.len()];
    let mut mesh = Mesh::from_raw(nodes, tets, tags)?;
    mesh.tag_region(region);
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn n1_counts() {
        let m = generate_structured_cube::<f64>(1, &RegionBox::Whole).unwrap();
        assert_eq!(m.num_nodes(), 8);
        assert_eq!(m.num_tets(), 6);
        assert_eq!(m.num_edges(), 19);
        assert!((m.h - 3f64.sqrt()).abs() < 1e-15);
        assert!(m.boundary_nodes.iter().all(|&b| b));
        // the body diagonal lies inside the cube, every other edge on a face
        let interior: Vec<usize> = (0..19).filter(|&e| !m.boundary_edges[e]).collect();
        assert_eq!(interior.len(), 1);
        assert_eq!(m.edges[interior[0]], [0, 7]);
        assert!((0..6).all(|k| m.in_region(k)));
    }

    #[test]
    fn n1_edges_by_exhaustive_enumeration() {
        // oracle: every pair of unit-cube corners whose difference is a
        // 0/1 vector with monotone coordinates along the main diagonal
        let m = generate_structured_cube::<f64>(1, &RegionBox::Whole).unwrap();
        let corner = |v: usize| [v & 1, (v >> 1) & 1, (v >> 2) & 1];
        let mut oracle = BTreeSet::new();
        for a in 0..8 {
            for b in a + 1..8 {
                let (ca, cb) = (corner(a), corner(b));
                if (0..3).all(|d| ca[d] <= cb[d]) {
                    oracle.insert([a, b]);
                }
            }
        }
        let got: BTreeSet<[usize; 2]> = m.edges.iter().copied().collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn n2_counts_and_euler() {
        let m = generate_structured_cube::<f64>(2, &RegionBox::Whole).unwrap();
        assert_eq!(m.num_nodes(), 27);
        assert_eq!(m.num_tets(), 48);
        // brute-force face and edge sets
        let mut faces = BTreeSet::new();
        let mut edges = BTreeSet::new();
        for t in &m.tets {
            for a in 0..4 {
                for b in a + 1..4 {
                    edges.insert([t[a].min(t[b]), t[a].max(t[b])]);
                    for c in b + 1..4 {
                        let mut f = [t[a], t[b], t[c]];
                        f.sort_unstable();
                        faces.insert(f);
                    }
                }
            }
        }
        assert_eq!(edges.len(), m.num_edges());
        assert_eq!(faces.len(), m.face_count);
        assert_eq!(m.euler_characteristic(), 1);
        assert_eq!(m.boundary_nodes.iter().filter(|&&b| !b).count(), 1);
    }

    #[test]
    fn euler_on_larger_cubes() {
        for n in 3..=5 {
            let m = generate_structured_cube::<f64>(n, &RegionBox::Whole).unwrap();
            assert_eq!(m.euler_characteristic(), 1);
            assert!((m.total_volume() - 1.0).abs() < 1e-13);
            assert!((m.edge_length_ratio() - 3f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn local_edges_reproduce_node_pairs() {
        let m = generate_structured_cube::<f64>(2, &RegionBox::Whole).unwrap();
        for (t, te) in m.tets.iter().zip(&m.tet_edges) {
            for (l, &(a, b)) in LOCAL_EDGES.iter().enumerate() {
                let (e, s) = te[l];
                let [i, j] = m.edges[e];
                if s > 0 {
                    assert_eq!((t[a], t[b]), (i, j));
                } else {
                    assert_eq!((t[b], t[a]), (i, j));
                }
            }
        }
    }

    #[test]
    fn region_tagging() {
        let r = RegionBox::parse("0,0,0,0.5,0.5,0.5").unwrap();
        let m = generate_structured_cube::<f64>(2, &r).unwrap();
        assert_eq!((0..48).filter(|&k| m.in_region(k)).count(), 6);
        let vol: f64 = (0..48).filter(|&k| m.in_region(k)).map(|k| m.volume(k)).sum();
        assert!((vol - 0.125).abs() < 1e-15);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(matches!(
            generate_structured_cube::<f64>(0, &RegionBox::Whole),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn ascii_round_trip() {
        let m = generate_structured_cube::<f64>(1, &RegionBox::Whole).unwrap();
        let back = Mesh::<f64>::from_ascii(&m.to_ascii()).unwrap();
        assert_eq!(back.nodes, m.nodes);
        assert_eq!(back.tets, m.tets);
        assert_eq!(back.edges, m.edges);
        assert_eq!(back.tet_edges, m.tet_edges);
        assert_eq!(back.region_tags, m.region_tags);
    }

    #[test]
    fn inverted_tet_rejected() {
        let m = generate_structured_cube::<f64>(1, &RegionBox::Whole).unwrap();
        let mut tets = m.tets.clone();
        tets[0].swap(0, 1);
        let err = Mesh::from_raw(m.nodes.clone(), tets, m.region_tags.clone()).unwrap_err();
        assert!(err.to_string().contains("negative volume, tet 0"), "{err}");
    }

    #[test]
    fn dangling_node_rejected() {
        let text = "nodes 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\ntets 1\n0 1 2 4 0\n";
        let err = Mesh::<f64>::from_ascii(text).unwrap_err();
        assert!(matches!(err, Error::MeshValidation(_)), "{err}");
        assert!(err.to_string().contains("node 4"));
    }

    #[test]
    fn malformed_file_rejected() {
        assert!(matches!(
            Mesh::<f64>::from_ascii("nodes 2\n0 0\n"),
            Err(Error::Parse(_))
        ));
        assert!(matches!(Mesh::<f64>::from_ascii("tets 0\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn f32_mesh() {
        let m = generate_structured_cube::<f32>(2, &RegionBox::Whole).unwrap();
        assert_eq!(m.num_edges(), generate_structured_cube::<f64>(2, &RegionBox::Whole).unwrap().num_edges());
        assert!((m.total_volume() - 1.0).abs() < 1e-6);
    }
}
