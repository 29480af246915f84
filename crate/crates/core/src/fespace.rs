//! Lowest-order Nédélec edge space, P1 nodal space and the piecewise
//! constant control space on a tetrahedral mesh, plus assembly of every
//! parameter-independent operator block.

use crate::error::{Error, Result};
use crate::linalg::{Csr, Triplets};
use crate::mesh::{Mesh, LOCAL_EDGES};
use crate::quadrature::TetRule;
use crate::scalar::{cross, dot3, Real};

/// Marker for a dof removed by the homogeneous boundary condition.
pub const CONSTRAINED: usize = usize::MAX;

/// Degree-of-freedom counts of the three spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DofCounts {
    pub edge: usize,
    pub node: usize,
    pub control: usize,
}

impl DofCounts {
    pub fn of<T: Real>(mesh: &Mesh<T>) -> Self {
        DofCounts {
            edge: mesh.boundary_edges.iter().filter(|&&b| !b).count(),
            node: mesh.boundary_nodes.iter().filter(|&&b| !b).count(),
            control: 3 * mesh.num_tets(),
        }
    }
}

/// Per-tet geometric data.
#[derive(Clone, Debug)]
pub struct TetGeom<T> {
    pub volume: T,
    pub grads: [[T; 3]; 4],
    /// Curls `2 ∇λa × ∇λb` of the local Whitney functions (local orientation).
    pub curls: [[T; 3]; 6],
    /// Global edge dof per local edge, or [`CONSTRAINED`].
    pub edge_dofs: [usize; 6],
    /// Orientation sign turning the local function into the global one.
    pub signs: [T; 6],
    pub node_dofs: [usize; 4],
}

impl<T: Real> TetGeom<T> {
    /// Local Whitney function `i` (global orientation) at barycentric point.
    pub fn whitney(&self, i: usize, bary: &[T; 4]) -> [T; 3] {
        let (a, b) = LOCAL_EDGES[i];
        let s = self.signs[i];
        let (ga, gb) = (self.grads[a], self.grads[b]);
        [
            s * (bary[a] * gb[0] - bary[b] * ga[0]),
            s * (bary[a] * gb[1] - bary[b] * ga[1]),
            s * (bary[a] * gb[2] - bary[b] * ga[2]),
        ]
    }

    /// Curl of local Whitney function `i` in global orientation.
    pub fn curl(&self, i: usize) -> [T; 3] {
        self.curls[i].map(|v| v * self.signs[i])
    }

    /// Mean of local Whitney function `i` over the tet: `(∇λb − ∇λa)/4`.
    pub fn whitney_mean(&self, i: usize) -> [T; 3] {
        let (a, b) = LOCAL_EDGES[i];
        let q = T::lit(0.25) * self.signs[i];
        [
            q * (self.grads[b][0] - self.grads[a][0]),
            q * (self.grads[b][1] - self.grads[a][1]),
            q * (self.grads[b][2] - self.grads[a][2]),
        ]
    }
}

/// The discrete spaces on one mesh.
#[derive(Clone, Debug)]
pub struct Spaces<T> {
    pub mesh: Mesh<T>,
    pub edge_dof: Vec<usize>,
    pub node_dof: Vec<usize>,
    /// Inverse maps: dof → global edge / node.
    pub edge_of_dof: Vec<usize>,
    pub node_of_dof: Vec<usize>,
    pub geom: Vec<TetGeom<T>>,
}

impl<T: Real> Spaces<T> {
    /// Builds the spaces; fails when the edge or nodal space is empty.
    pub fn new(mesh: Mesh<T>) -> Result<Self> {
        let counts = DofCounts::of(&mesh);
        if counts.node == 0 || counts.edge == 0 {
            return Err(Error::TrivialSpace(format!(
                "{} interior edges and {} interior nodes; refine the mesh (n >= 2 for the structured cube)",
                counts.edge, counts.node
            )));
        }
        let mut edge_dof = vec![CONSTRAINED; mesh.num_edges()];
        let mut edge_of_dof = Vec::with_capacity(counts.edge);
        for (e, &b) in mesh.boundary_edges.iter().enumerate() {
            if !b {
                edge_dof[e] = edge_of_dof.len();
                edge_of_dof.push(e);
            }
        }
        let mut node_dof = vec![CONSTRAINED; mesh.num_nodes()];
        let mut node_of_dof = Vec::with_capacity(counts.node);
        for (v, &b) in mesh.boundary_nodes.iter().enumerate() {
            if !b {
                node_dof[v] = node_of_dof.len();
                node_of_dof.push(v);
            }
        }
        let geom = (0..mesh.num_tets())
            .map(|k| {
                let grads = mesh.barycentric_gradients(k);
                let two = T::lit(2.0);
                let mut curls = [[T::zero(); 3]; 6];
                let mut edge_dofs = [CONSTRAINED; 6];
                let mut signs = [T::one(); 6];
                for (l, &(a, b)) in LOCAL_EDGES.iter().enumerate() {
                    curls[l] = cross(grads[a], grads[b]).map(|v| two * v);
                    let (e, s) = mesh.tet_edges[k][l];
                    edge_dofs[l] = edge_dof[e];
                    signs[l] = if s > 0 { T::one() } else { -T::one() };
                }
                let t = mesh.tets[k];
                TetGeom {
                    volume: mesh.volume(k),
                    grads,
                    curls,
                    edge_dofs,
                    signs,
                    node_dofs: [node_dof[t[0]], node_dof[t[1]], node_dof[t[2]], node_dof[t[3]]],
                }
            })
            .collect();
        Ok(Spaces {
            mesh,
            edge_dof,
            node_dof,
            edge_of_dof,
            node_of_dof,
            geom,
        })
    }

    pub fn n_edge(&self) -> usize {
        self.edge_of_dof.len()
    }

    pub fn n_node(&self) -> usize {
        self.node_of_dof.len()
    }

    pub fn n_tet(&self) -> usize {
        self.geom.len()
    }

    pub fn n_control(&self) -> usize {
        3 * self.n_tet()
    }

    pub fn volumes(&self) -> Vec<T> {
        self.geom.iter().map(|g| g.volume).collect()
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.n_tet() {
            return Err(Error::Config(format!(
                "{what}: {len} per-tet values for {} tets",
                self.n_tet()
            )));
        }
        Ok(())
    }

    /// `(c ∇×u, ∇×v)` with per-tet coefficient `c`.
    pub fn curl_curl(&self, coef: &[T]) -> Result<Csr<T>> {
        self.check_len("curl-curl coefficient", coef.len())?;
        let mut t = Triplets::with_capacity(self.n_edge(), self.n_edge(), 36 * self.n_tet());
        for (g, &c) in self.geom.iter().zip(coef) {
            let curls: [[T; 3]; 6] = std::array::from_fn(|i| g.curl(i));
            for i in 0..6 {
                let di = g.edge_dofs[i];
                if di == CONSTRAINED {
                    continue;
                }
                for j in 0..6 {
                    let dj = g.edge_dofs[j];
                    if dj == CONSTRAINED {
                        continue;
                    }
                    t.push(di, dj, c * g.volume * dot3(curls[i], curls[j]));
                }
            }
        }
        Ok(t.build())
    }

    /// `(c u, v)` over the tets selected by `region` (all when `None`),
    /// integrated with the degree-2 rule. The sparsity pattern is the same
    /// whatever the region, so region and full masses can be combined.
    pub fn mass(&self, coef: &[T], region_only: bool) -> Result<Csr<T>> {
        self.check_len("mass coefficient", coef.len())?;
        let rule = TetRule::<T>::order2();
        let mut t = Triplets::with_capacity(self.n_edge(), self.n_edge(), 36 * self.n_tet());
        for (k, (g, &c)) in self.geom.iter().zip(coef).enumerate() {
            let active = !region_only || self.mesh.in_region(k);
            let mut local = [[T::zero(); 6]; 6];
            if active {
                for (p, &w) in rule.points.iter().zip(&rule.weights) {
                    let vals: [[T; 3]; 6] = std::array::from_fn(|i| g.whitney(i, p));
                    for i in 0..6 {
                        for j in 0..6 {
                            local[i][j] += w * dot3(vals[i], vals[j]);
                        }
                    }
                }
            }
            for i in 0..6 {
                let di = g.edge_dofs[i];
                if di == CONSTRAINED {
                    continue;
                }
                for j in 0..6 {
                    let dj = g.edge_dofs[j];
                    if dj == CONSTRAINED {
                        continue;
                    }
                    t.push(di, dj, c * g.volume * local[i][j]);
                }
            }
        }
        Ok(t.build())
    }

    /// Divergence coupling `B[φ, e] = (c w_e, ∇φ)` (nodal × edge).
    pub fn div_coupling(&self, coef: &[T]) -> Result<Csr<T>> {
        self.check_len("divergence coefficient", coef.len())?;
        let mut t = Triplets::with_capacity(self.n_node(), self.n_edge(), 24 * self.n_tet());
        for (g, &c) in self.geom.iter().zip(coef) {
            for i in 0..6 {
                let de = g.edge_dofs[i];
                if de == CONSTRAINED {
                    continue;
                }
                let mean = g.whitney_mean(i);
                for n in 0..4 {
                    let dn = g.node_dofs[n];
                    if dn == CONSTRAINED {
                        continue;
                    }
                    t.push(dn, de, c * g.volume * dot3(mean, g.grads[n]));
                }
            }
        }
        Ok(t.build())
    }

    /// Control coupling `MU[(k,d), e] = (c e_d χ_k, w_e)` (control × edge).
    pub fn control_coupling(&self, coef: &[T]) -> Result<Csr<T>> {
        self.check_len("control coefficient", coef.len())?;
        let mut t = Triplets::with_capacity(self.n_control(), self.n_edge(), 18 * self.n_tet());
        for (k, (g, &c)) in self.geom.iter().zip(coef).enumerate() {
            for i in 0..6 {
                let de = g.edge_dofs[i];
                if de == CONSTRAINED {
                    continue;
                }
                let mean = g.whitney_mean(i);
                for d in 0..3 {
                    t.push(3 * k + d, de, c * g.volume * mean[d]);
                }
            }
        }
        Ok(t.build())
    }

    /// Per-tet averages of edge fields (control × edge), the L² projection
    /// onto piecewise constants.
    pub fn edge_average(&self) -> Csr<T> {
        let mut t = Triplets::with_capacity(self.n_control(), self.n_edge(), 18 * self.n_tet());
        for (k, g) in self.geom.iter().enumerate() {
            for i in 0..6 {
                let de = g.edge_dofs[i];
                if de == CONSTRAINED {
                    continue;
                }
                let mean = g.whitney_mean(i);
                for d in 0..3 {
                    t.push(3 * k + d, de, mean[d]);
                }
            }
        }
        t.build()
    }

    /// Weighted nodal stiffness `(c ∇ψ, ∇φ)`.
    pub fn nodal_stiffness(&self, coef: &[T]) -> Result<Csr<T>> {
        self.check_len("stiffness coefficient", coef.len())?;
        let mut t = Triplets::with_capacity(self.n_node(), self.n_node(), 16 * self.n_tet());
        for (g, &c) in self.geom.iter().zip(coef) {
            for a in 0..4 {
                let da = g.node_dofs[a];
                if da == CONSTRAINED {
                    continue;
                }
                for b in 0..4 {
                    let db = g.node_dofs[b];
                    if db == CONSTRAINED {
                        continue;
                    }
                    t.push(da, db, c * g.volume * dot3(g.grads[a], g.grads[b]));
                }
            }
        }
        Ok(t.build())
    }

    /// P1 mass matrix `(ψ, φ)`.
    pub fn nodal_mass(&self) -> Csr<T> {
        let mut t = Triplets::with_capacity(self.n_node(), self.n_node(), 16 * self.n_tet());
        let twentieth = T::lit(0.05);
        for g in &self.geom {
            for a in 0..4 {
                let da = g.node_dofs[a];
                if da == CONSTRAINED {
                    continue;
                }
                for b in 0..4 {
                    let db = g.node_dofs[b];
                    if db == CONSTRAINED {
                        continue;
                    }
                    let f = if a == b { T::lit(2.0) } else { T::one() };
                    t.push(da, db, f * twentieth * g.volume);
                }
            }
        }
        t.build()
    }

    /// Discrete gradient `G` (edge × nodal): column of node `v` holds the
    /// edge coefficients of `∇φ_v`.
    pub fn gradient(&self) -> Csr<T> {
        let mut t = Triplets::with_capacity(self.n_edge(), self.n_node(), 2 * self.n_edge());
        for (d, &e) in self.edge_of_dof.iter().enumerate() {
            let [a, b] = self.mesh.edges[e];
            if self.node_dof[a] != CONSTRAINED {
                t.push(d, self.node_dof[a], -T::one());
            }
            if self.node_dof[b] != CONSTRAINED {
                t.push(d, self.node_dof[b], T::one());
            }
        }
        t.build()
    }

    /// Per-tet gradients of nodal functions (control × nodal).
    pub fn control_gradient(&self) -> Csr<T> {
        let mut t = Triplets::with_capacity(self.n_control(), self.n_node(), 12 * self.n_tet());
        for (k, g) in self.geom.iter().enumerate() {
            for n in 0..4 {
                let dn = g.node_dofs[n];
                if dn == CONSTRAINED {
                    continue;
                }
                for d in 0..3 {
                    t.push(3 * k + d, dn, g.grads[n][d]);
                }
            }
        }
        t.build()
    }

    /// Load `(c, φ)` for a per-tet constant `c`.
    pub fn nodal_load(&self, coef: &[T]) -> Result<Vec<T>> {
        self.check_len("nodal load", coef.len())?;
        let mut r = vec![T::zero(); self.n_node()];
        let q = T::lit(0.25);
        for (g, &c) in self.geom.iter().zip(coef) {
            for n in 0..4 {
                let dn = g.node_dofs[n];
                if dn != CONSTRAINED {
                    r[dn] += q * c * g.volume;
                }
            }
        }
        Ok(r)
    }

    /// Load `(c f, w_e)` restricted to `region_only` tets for a per-tet
    /// constant vector field `f`.
    pub fn edge_load_piecewise(&self, coef: &[T], f: &[[T; 3]], region_only: bool) -> Result<Vec<T>> {
        self.check_len("edge load coefficient", coef.len())?;
        self.check_len("edge load field", f.len())?;
        let mut l = vec![T::zero(); self.n_edge()];
        for (k, g) in self.geom.iter().enumerate() {
            if region_only && !self.mesh.in_region(k) {
                continue;
            }
            for i in 0..6 {
                let de = g.edge_dofs[i];
                if de != CONSTRAINED {
                    l[de] += coef[k] * g.volume * dot3(g.whitney_mean(i), f[k]);
                }
            }
        }
        Ok(l)
    }

    /// Load `(f, w_e)` for a function of position, by the given rule.
    pub fn edge_load_fn<F: Fn([T; 3]) -> [T; 3]>(&self, f: F, rule: &TetRule<T>) -> Vec<T> {
        let mut l = vec![T::zero(); self.n_edge()];
        for (k, g) in self.geom.iter().enumerate() {
            for (p, &w) in rule.points.iter().zip(&rule.weights) {
                let fx = f(self.point(k, p));
                for i in 0..6 {
                    let de = g.edge_dofs[i];
                    if de != CONSTRAINED {
                        l[de] += w * g.volume * dot3(g.whitney(i, p), fx);
                    }
                }
            }
        }
        l
    }

    /// Physical point of barycentric coordinates in tet `k`.
    pub fn point(&self, k: usize, bary: &[T; 4]) -> [T; 3] {
        let t = &self.mesh.tets[k];
        let mut x = [T::zero(); 3];
        for v in 0..4 {
            for d in 0..3 {
                x[d] += bary[v] * self.mesh.nodes[t[v]][d];
            }
        }
        x
    }

    /// Value of an edge field at a barycentric point of tet `k`.
    pub fn eval_edge(&self, coeffs: &[T], k: usize, bary: &[T; 4]) -> [T; 3] {
        let g = &self.geom[k];
        let mut v = [T::zero(); 3];
        for i in 0..6 {
            let de = g.edge_dofs[i];
            if de != CONSTRAINED {
                let w = g.whitney(i, bary);
                for d in 0..3 {
                    v[d] += coeffs[de] * w[d];
                }
            }
        }
        v
    }

    /// Curl of an edge field on tet `k` (constant per tet).
    pub fn curl_edge(&self, coeffs: &[T], k: usize) -> [T; 3] {
        let g = &self.geom[k];
        let mut v = [T::zero(); 3];
        for i in 0..6 {
            let de = g.edge_dofs[i];
            if de != CONSTRAINED {
                let c = g.curl(i);
                for d in 0..3 {
                    v[d] += coeffs[de] * c[d];
                }
            }
        }
        v
    }

    /// Edge field sampled at tet barycenters (control layout).
    pub fn edge_at_centroids(&self, coeffs: &[T]) -> Vec<T> {
        let q = T::lit(0.25);
        let c = [q; 4];
        let mut out = Vec::with_capacity(self.n_control());
        for k in 0..self.n_tet() {
            out.extend_from_slice(&self.eval_edge(coeffs, k, &c));
        }
        out
    }

    /// `(‖f − E_h‖², ‖curl f − curl E_h‖²)` by the given rule.
    pub fn hcurl_error<F, C>(&self, coeffs: &[T], f: F, curl_f: C, rule: &TetRule<T>) -> (T, T)
    where
        F: Fn([T; 3]) -> [T; 3],
        C: Fn([T; 3]) -> [T; 3],
    {
        let mut l2 = T::zero();
        let mut cc = T::zero();
        for k in 0..self.n_tet() {
            let vol = self.geom[k].volume;
            let ch = self.curl_edge(coeffs, k);
            for (p, &w) in rule.points.iter().zip(&rule.weights) {
                let x = self.point(k, p);
                let eh = self.eval_edge(coeffs, k, p);
                let ex = f(x);
                let cx = curl_f(x);
                for d in 0..3 {
                    l2 += w * vol * (ex[d] - eh[d]) * (ex[d] - eh[d]);
                    cc += w * vol * (cx[d] - ch[d]) * (cx[d] - ch[d]);
                }
            }
        }
        (l2, cc)
    }
}

/// A desired-state term: per-tet constant vectors, or coefficients in the
/// edge space (interior dofs).
#[derive(Clone, Debug)]
pub enum StateField<T> {
    PerTet(Vec<[T; 3]>),
    Edge(Vec<T>),
}

/// Spatial coefficient fields of every affine term, resolved on a mesh.
#[derive(Clone, Debug)]
pub struct CoefficientFields<T> {
    pub sigma_inv: Vec<Vec<T>>,
    pub eps: Vec<Vec<T>>,
    pub rho: Vec<Vec<T>>,
    pub u_d: Vec<Vec<[T; 3]>>,
    pub e_d: Vec<StateField<T>>,
}

/// All parameter-independent operators.
#[derive(Clone, Debug)]
pub struct OperatorBlocks<T> {
    /// Curl-curl per `σ⁻¹` term.
    pub a: Vec<Csr<T>>,
    /// Edge mass per `ε` term on Ω and on D.
    pub m: Vec<Csr<T>>,
    pub md: Vec<Csr<T>>,
    /// Divergence couplings per `ε` term (nodal × edge).
    pub b: Vec<Csr<T>>,
    /// Control couplings per `ε` term (control × edge).
    pub mu: Vec<Csr<T>>,
    /// Weighted nodal stiffness per `ε` term; equals `B_q G`.
    pub k: Vec<Csr<T>>,
    /// Charge loads per `ρ` term.
    pub r: Vec<Vec<T>>,
    /// `(ε_q E_d,s, w)_D` indexed `[q][s]`.
    pub ed_load: Vec<Vec<Vec<T>>>,
    /// `(ε_q E_d,s, E_d,t)_D` indexed `[q][s][t]`.
    pub ed_gram: Vec<Vec<Vec<T>>>,
    /// Desired-control terms in control layout.
    pub u_d: Vec<Vec<T>>,
    /// Per-tet `ε_q` values, for the weighted control geometry.
    pub eps_tet: Vec<Vec<T>>,
    pub volumes: Vec<T>,
    pub x_curl: Csr<T>,
    pub x_grad: Csr<T>,
    /// Unit-weight nodal stiffness (Helmholtz decomposition).
    pub k_unit: Csr<T>,
    pub g: Csr<T>,
    pub gu: Csr<T>,
    pub pi0: Csr<T>,
}

impl<T: Real> OperatorBlocks<T> {
    pub fn q_sigma(&self) -> usize {
        self.a.len()
    }
    pub fn q_eps(&self) -> usize {
        self.m.len()
    }
    pub fn q_rho(&self) -> usize {
        self.r.len()
    }
    pub fn q_ud(&self) -> usize {
        self.u_d.len()
    }
    pub fn q_ed(&self) -> usize {
        self.ed_load.first().map_or(0, |v| v.len())
    }
}

/// Assembles every affine block for the given coefficient fields.
pub fn assemble_blocks<T: Real>(sp: &Spaces<T>, f: &CoefficientFields<T>) -> Result<OperatorBlocks<T>> {
    if f.sigma_inv.is_empty() || f.eps.is_empty() {
        return Err(Error::Config("σ⁻¹ and ε need at least one affine term each".into()));
    }
    let a = f.sigma_inv.iter().map(|c| sp.curl_curl(c)).collect::<Result<Vec<_>>>()?;
    let m = f.eps.iter().map(|c| sp.mass(c, false)).collect::<Result<Vec<_>>>()?;
    let md = f.eps.iter().map(|c| sp.mass(c, true)).collect::<Result<Vec<_>>>()?;
    let b = f.eps.iter().map(|c| sp.div_coupling(c)).collect::<Result<Vec<_>>>()?;
    let mu = f.eps.iter().map(|c| sp.control_coupling(c)).collect::<Result<Vec<_>>>()?;
    let k = f.eps.iter().map(|c| sp.nodal_stiffness(c)).collect::<Result<Vec<_>>>()?;
    let r = f.rho.iter().map(|c| sp.nodal_load(c)).collect::<Result<Vec<_>>>()?;
    for (s, e) in f.e_d.iter().enumerate() {
        match e {
            StateField::PerTet(v) => sp.check_len(&format!("desired state term {s}"), v.len())?,
            StateField::Edge(v) if v.len() != sp.n_edge() => {
                return Err(Error::Config(format!(
                    "desired state term {s}: {} edge coefficients for {} edge dofs",
                    v.len(),
                    sp.n_edge()
                )))
            }
            _ => {}
        }
    }
    let mut ed_load = Vec::with_capacity(f.eps.len());
    let mut ed_gram = Vec::with_capacity(f.eps.len());
    for (q, c) in f.eps.iter().enumerate() {
        let loads: Vec<Vec<T>> = f
            .e_d
            .iter()
            .map(|e| match e {
                StateField::PerTet(v) => sp.edge_load_piecewise(c, v, true),
                StateField::Edge(v) => Ok(md[q].matvec(v)),
            })
            .collect::<Result<_>>()?;
        let ns = f.e_d.len();
        let mut gram = vec![vec![T::zero(); ns]; ns];
        for s in 0..ns {
            for t in 0..ns {
                gram[s][t] = match (&f.e_d[s], &f.e_d[t]) {
                    (StateField::PerTet(vs), StateField::PerTet(vt)) => (0..sp.n_tet())
                        .filter(|&k| sp.mesh.in_region(k))
                        .map(|k| c[k] * sp.geom[k].volume * dot3(vs[k], vt[k]))
                        .sum(),
                    (StateField::Edge(vs), _) => crate::scalar::dot(vs, &loads[t]),
                    (_, StateField::Edge(vt)) => crate::scalar::dot(vt, &loads[s]),
                };
            }
        }
        ed_load.push(loads);
        ed_gram.push(gram);
    }
    let u_d = f
        .u_d
        .iter()
        .enumerate()
        .map(|(s, v)| {
            sp.check_len(&format!("desired control term {s}"), v.len())?;
            Ok(v.iter().flat_map(|x| x.iter().copied()).collect())
        })
        .collect::<Result<Vec<Vec<T>>>>()?;
    for (q, c) in f.eps.iter().enumerate() {
        sp.check_len(&format!("ε term {q}"), c.len())?;
    }
    let ones = vec![T::one(); sp.n_tet()];
    let x_curl = sp.mass(&ones, false)?.add(T::one(), &sp.curl_curl(&ones)?, T::one());
    let k_unit = sp.nodal_stiffness(&ones)?;
    let x_grad = k_unit.add(T::one(), &sp.nodal_mass(), T::one());
    Ok(OperatorBlocks {
        a,
        m,
        md,
        b,
        mu,
        k,
        r,
        ed_load,
        ed_gram,
        u_d,
        eps_tet: f.eps.clone(),
        volumes: sp.volumes(),
        x_curl,
        x_grad,
        k_unit,
        g: sp.gradient(),
        gu: sp.control_gradient(),
        pi0: sp.edge_average(),
    })
}


#[cfg(test)]
impl<T: Real> Spaces<T> {
    fn build_geom_for_test(mesh: &Mesh<T>) -> TetGeom<T> {
        let grads = mesh.barycentric_gradients(0);
        let curls = std::array::from_fn(|l| {
            let (a, b) = LOCAL_EDGES[l];
            cross(grads[a], grads[b]).map(|v| T::lit(2.0) * v)
        });
        TetGeom {
            volume: mesh.volume(0),
            grads,
            curls,
            edge_dofs: [CONSTRAINED; 6],
            signs: [T::one(); 6],
            node_dofs: [CONSTRAINED; 4],
        }
    }
}
