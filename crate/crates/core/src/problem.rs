//! Parameterized problem definition: parameter box, affine decompositions,
//! bounds and caps, and every explicit constant derived from them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fespace::{CoefficientFields, StateField};
use crate::mesh::{Mesh, RegionBox};
use crate::scalar::Real;

// ---------------------------------------------------------------------------
// problem file

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub parameters: ParameterSection,
    pub domain: DomainSection,
    pub control: ControlSection,
    pub bounds: BoundsSection,
    pub sigma_inv: Vec<TermSpec>,
    pub eps: Vec<TermSpec>,
    #[serde(default)]
    pub rho: Vec<TermSpec>,
    #[serde(default)]
    pub u_d: Vec<TermSpec>,
    #[serde(default)]
    pub e_d: Vec<TermSpec>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Variable names used in Θ expressions; defaults to `mu1, mu2, ...`.
    #[serde(default)]
    pub names: Vec<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    /// `[x0,y0,z0,x1,y1,z1]`; omitted means D = Ω.
    #[serde(default)]
    pub d_box: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub alpha: f64,
    /// Componentwise bounds; `inf`/`-inf` disable a side.
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    /// `[σ̲, σ̄]` for σ = 1/σ⁻¹.
    pub sigma: [f64; 2],
    pub eps: [f64; 2],
    #[serde(default)]
    pub rho: [f64; 2],
    /// Cap on `‖E_d(μ)‖_{L²(D)}`.
    #[serde(default)]
    pub e_d: f64,
    /// Cap on `‖u_d(μ)‖_{L²(Ω)}`.
    #[serde(default)]
    pub u_d: f64,
    /// Optional analytic coercivity constant overriding the computed one.
    #[serde(default)]
    pub coercivity: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    /// Θ(μ) as an expression in the parameter names.
    pub theta: String,
    /// Declared Hölder constant `L` of Θ.
    #[serde(default)]
    pub lipschitz: f64,
    /// Declared Hölder exponent `γ` of Θ.
    #[serde(default)]
    pub holder: Option<f64>,
    pub field: FieldSpec,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant { value: f64 },
    Box { lo: [f64; 3], hi: [f64; 3], inside: f64, outside: f64 },
    /// Expression in `x, y, z`, sampled at tet centroids.
    Expr { expr: String },
    /// One value per tet, one per line.
    File { path: String },
    Vector { value: [f64; 3] },
    VectorBox { lo: [f64; 3], hi: [f64; 3], inside: [f64; 3], outside: [f64; 3] },
    VectorExpr { expr: [String; 3] },
    /// Three values per line, one line per tet.
    VectorFile { path: String },
    /// Edge-space coefficients over interior edge dofs, one per line.
    EdgeFile { path: String },
}

impl FieldSpec {
    fn is_scalar(&self) -> bool {
        matches!(
            self,
            FieldSpec::Constant { .. } | FieldSpec::Box { .. } | FieldSpec::Expr { .. } | FieldSpec::File { .. }
        )
    }
}

// ---------------------------------------------------------------------------
// parameter domain and Θ evaluation

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParameterDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub names: Vec<String>,
}

impl ParameterDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Config(format!(
                "parameter box has {} lower and {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] < upper[i])) {
            return Err(Error::Config(format!(
                "parameter {i}: lower bound {} not below upper bound {}",
                lower[i], upper[i]
            )));
        }
        let names = if names.is_empty() {
            (1..=lower.len()).map(|i| format!("mu{i}")).collect()
        } else if names.len() == lower.len() {
            names
        } else {
            return Err(Error::Config("one name per parameter required".into()));
        };
        Ok(ParameterDomain { lower, upper, names })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim()
            && mu.iter().enumerate().all(|(i, &m)| {
                let slack = 1e-12 * (self.upper[i] - self.lower[i]);
                m >= self.lower[i] - slack && m <= self.upper[i] + slack
            })
    }

    pub fn check(&self, mu: &[f64]) -> Result<()> {
        if self.contains(mu) {
            Ok(())
        } else {
            Err(Error::Domain { mu: mu.to_vec() })
        }
    }

    /// Tensor grid with `counts[i]` uniformly spaced points per axis,
    /// ordered with the first coordinate varying slowest.
    pub fn grid(&self, counts: &[usize]) -> Result<Vec<Vec<f64>>> {
        if counts.len() != self.dim() || counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!(
                "grid spec {counts:?} does not match {} parameters",
                self.dim()
            )));
        }
        let axes: Vec<Vec<f64>> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if c == 1 {
                    vec![0.5 * (self.lower[i] + self.upper[i])]
                } else {
                    (0..c)
                        .map(|k| self.lower[i] + (self.upper[i] - self.lower[i]) * k as f64 / (c - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for prefix in &out {
                for &v in axis {
                    let mut p = prefix.clone();
                    p.push(v);
                    next.push(p);
                }
            }
            out = next;
        }
        Ok(out)
    }

    /// Maps a point of the unit cube to the parameter box.
    pub fn from_unit(&self, t: &[f64]) -> Vec<f64> {
        t.iter()
            .enumerate()
            .map(|(i, &s)| self.lower[i] + s * (self.upper[i] - self.lower[i]))
            .collect()
    }
}

/// A parsed Θ expression with its declared Hölder data.
#[derive(Clone, Debug)]
pub struct Theta {
    pub source: String,
    expr: meval::Expr,
    pub lipschitz: f64,
    pub holder: Option<f64>,
}

impl Theta {
    pub fn parse(source: &str, lipschitz: f64, holder: Option<f64>) -> Result<Self> {
        let expr: meval::Expr = source
            .parse()
            .map_err(|e| Error::Config(format!("Θ expression '{source}': {e}")))?;
        Ok(Theta {
            source: source.to_string(),
            expr,
            lipschitz,
            holder,
        })
    }

    pub fn constant(v: f64) -> Self {
        Theta::parse(&format!("{v:?}"), 0.0, Some(1.0)).expect("literal parses")
    }

    pub fn eval(&self, names: &[String], mu: &[f64]) -> Result<f64> {
        let mut ctx = meval::Context::new();
        for (n, &v) in names.iter().zip(mu) {
            ctx.var(n.clone(), v);
        }
        let v = self
            .expr
            .eval_with_context(ctx)
            .map_err(|e| Error::Config(format!("Θ expression '{}': {e}", self.source)))?;
        if !v.is_finite() {
            return Err(Error::Config(format!(
                "Θ expression '{}' is not finite at {mu:?}",
                self.source
            )));
        }
        Ok(v)
    }
}

/// Θ values of every field at one parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Thetas {
    pub sigma: Vec<f64>,
    pub eps: Vec<f64>,
    pub rho: Vec<f64>,
    pub u_d: Vec<f64>,
    pub e_d: Vec<f64>,
}

impl Thetas {
    pub fn cast<T: Real>(v: &[f64]) -> Vec<T> {
        v.iter().map(|&x| T::lit(x)).collect()
    }
}

/// The scalar problem data and bounds.
#[derive(Clone, Debug, Serialize)]
pub struct ProblemData {
    pub alpha: f64,
    pub u_lower: [f64; 3],
    pub u_upper: [f64; 3],
    pub sigma_bounds: [f64; 2],
    pub eps_bounds: [f64; 2],
    pub rho_bounds: [f64; 2],
    pub e_d_cap: f64,
    pub u_d_cap: f64,
    pub region: RegionBoxSer,
    pub coercivity_override: Option<f64>,
}

/// Serializable mirror of [`RegionBox`].
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct RegionBoxSer(pub Option<[f64; 6]>);

impl RegionBoxSer {
    pub fn region(&self) -> RegionBox {
        match self.0 {
            None => RegionBox::Whole,
            Some(v) => RegionBox::Box {
                lo: [v[0], v[1], v[2]],
                hi: [v[3], v[4], v[5]],
            },
        }
    }
}

impl ProblemData {
    /// `max(|ρ̲|, |ρ̄|)`
    pub fn rho_max(&self) -> f64 {
        self.rho_bounds[0].abs().max(self.rho_bounds[1].abs())
    }

    /// Euclidean norm of the componentwise largest control magnitude.
    pub fn u_bar_norm(&self) -> f64 {
        (0..3)
            .map(|d| {
                let m = self.u_lower[d].abs().max(self.u_upper[d].abs());
                m * m
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// A fully parsed problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub domain: ParameterDomain,
    pub data: ProblemData,
    pub sigma_inv: Vec<(Theta, FieldSpec)>,
    pub eps: Vec<(Theta, FieldSpec)>,
    pub rho: Vec<(Theta, FieldSpec)>,
    pub u_d: Vec<(Theta, FieldSpec)>,
    pub e_d: Vec<(Theta, FieldSpec)>,
    pub base_dir: PathBuf,
    pub source: ProblemFile,
}

impl Problem {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ProblemFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("problem file: {e}")))?;
        Self::from_file(file, base_dir)
    }

    pub fn from_file(file: ProblemFile, base_dir: &Path) -> Result<Self> {
        let domain = ParameterDomain::new(
            file.parameters.lower.clone(),
            file.parameters.upper.clone(),
            file.parameters.names.clone(),
        )?;
        let c = &file.control;
        if !(c.alpha > 0.0) {
            return Err(Error::Config(format!("α must be positive, got {}", c.alpha)));
        }
        if (0..3).any(|d| c.lower[d] > c.upper[d]) {
            return Err(Error::Config("control lower bound exceeds upper bound".into()));
        }
        let b = &file.bounds;
        if !(b.sigma[0] > 0.0 && b.sigma[0] <= b.sigma[1]) {
            return Err(Error::Config(format!("σ bounds {:?} must satisfy 0 < σ̲ ≤ σ̄", b.sigma)));
        }
        if !(b.eps[0] > 0.0 && b.eps[0] <= b.eps[1]) {
            return Err(Error::Config(format!("ε bounds {:?} must satisfy 0 < ε̲ ≤ ε̄", b.eps)));
        }
        if b.rho[0] > b.rho[1] {
            return Err(Error::Config("ρ lower bound exceeds upper bound".into()));
        }
        if b.e_d < 0.0 || b.u_d < 0.0 {
            return Err(Error::Config("caps e_d, u_d must be non-negative".into()));
        }
        if let Some(cv) = b.coercivity {
            if !(cv > 0.0) {
                return Err(Error::Config("coercivity override must be positive".into()));
            }
        }
        let region = match &file.domain.d_box {
            None => RegionBoxSer(None),
            Some(v) => {
                RegionBox::from_slice(v)?;
                RegionBoxSer(Some([v[0], v[1], v[2], v[3], v[4], v[5]]))
            }
        };
        let data = ProblemData {
            alpha: c.alpha,
            u_lower: c.lower,
            u_upper: c.upper,
            sigma_bounds: b.sigma,
            eps_bounds: b.eps,
            rho_bounds: b.rho,
            e_d_cap: b.e_d,
            u_d_cap: b.u_d,
            region,
            coercivity_override: b.coercivity,
        };
        let terms = |name: &str, list: &[TermSpec], scalar: bool, need_holder: bool| -> Result<Vec<(Theta, FieldSpec)>> {
            list.iter()
                .enumerate()
                .map(|(q, t)| {
                    if t.field.is_scalar() != scalar {
                        return Err(Error::Config(format!(
                            "{name} term {q}: expected a {} field",
                            if scalar { "scalar" } else { "vector" }
                        )));
                    }
                    if matches!(t.field, FieldSpec::EdgeFile { .. }) && name != "e_d" {
                        return Err(Error::Config(format!("{name} term {q}: edge fields are only allowed for e_d")));
                    }
                    if need_holder && t.holder.is_none() {
                        return Err(Error::Config(format!("{name} term {q}: missing Hölder exponent")));
                    }
                    if let Some(g) = t.holder {
                        if !(g > 0.0) {
                            return Err(Error::Config(format!("{name} term {q}: Hölder exponent must be positive")));
                        }
                    }
                    let th = Theta::parse(&t.theta, t.lipschitz, t.holder)?;
                    // parse check against the parameter names
                    th.eval(&domain.names, &domain.lower)?;
                    Ok((th, t.field.clone()))
                })
                .collect()
        };
        let sigma_inv = terms("sigma_inv", &file.sigma_inv, true, true)?;
        let eps = terms("eps", &file.eps, true, true)?;
        let rho = terms("rho", &file.rho, true, false)?;
        let u_d = terms("u_d", &file.u_d, false, true)?;
        let e_d = terms("e_d", &file.e_d, false, true)?;
        if sigma_inv.is_empty() || eps.is_empty() {
            return Err(Error::Config("σ⁻¹ and ε need at least one term each".into()));
        }
        Ok(Problem {
            domain,
            data,
            sigma_inv,
            eps,
            rho,
            u_d,
            e_d,
            base_dir: base_dir.to_path_buf(),
            source: file,
        })
    }

    /// Normalized TOML echo of the parsed problem.
    pub fn normalized(&self) -> String {
        toml::to_string_pretty(&self.source).unwrap_or_default()
    }

    pub fn thetas(&self, mu: &[f64]) -> Result<Thetas> {
        self.domain.check(mu)?;
        let names = &self.domain.names;
        let ev = |list: &[(Theta, FieldSpec)]| -> Result<Vec<f64>> {
            list.iter().map(|(t, _)| t.eval(names, mu)).collect()
        };
        Ok(Thetas {
            sigma: ev(&self.sigma_inv)?,
            eps: ev(&self.eps)?,
            rho: ev(&self.rho)?,
            u_d: ev(&self.u_d)?,
            e_d: ev(&self.e_d)?,
        })
    }

    /// Resolves every spatial field to per-tet data on `mesh`.
    pub fn resolve_fields<T: Real>(&self, mesh: &Mesh<T>, n_edge_dofs: usize) -> Result<CoefficientFields<T>> {
        let scal = |list: &[(Theta, FieldSpec)]| -> Result<Vec<Vec<T>>> {
            list.iter().map(|(_, f)| self.scalar_field(f, mesh)).collect()
        };
        let vecs = |list: &[(Theta, FieldSpec)]| -> Result<Vec<Vec<[T; 3]>>> {
            list.iter().map(|(_, f)| self.vector_field(f, mesh)).collect()
        };
        let e_d = self
            .e_d
            .iter()
            .map(|(_, f)| match f {
                FieldSpec::EdgeFile { path } => {
                    let v = read_numbers(&self.base_dir.join(path))?;
                    if v.len() != n_edge_dofs {
                        return Err(Error::Config(format!(
                            "{path}: {} edge coefficients for {n_edge_dofs} edge dofs",
                            v.len()
                        )));
                    }
                    Ok(StateField::Edge(v.into_iter().map(T::lit).collect()))
                }
                other => Ok(StateField::PerTet(self.vector_field(other, mesh)?)),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CoefficientFields {
            sigma_inv: scal(&self.sigma_inv)?,
            eps: scal(&self.eps)?,
            rho: scal(&self.rho)?,
            u_d: vecs(&self.u_d)?,
            e_d,
        })
    }

    fn scalar_field<T: Real>(&self, f: &FieldSpec, mesh: &Mesh<T>) -> Result<Vec<T>> {
        let nt = mesh.num_tets();
        let cents: Vec<[f64; 3]> = (0..nt).map(|k| mesh.centroid(k).map(|v| v.to_f64_lossy())).collect();
        let out: Vec<f64> = match f {
            FieldSpec::Constant { value } => vec![*value; nt],
            FieldSpec::Box { lo, hi, inside, outside } => {
                let r = RegionBox::Box { lo: *lo, hi: *hi };
                cents.iter().map(|&c| if r.contains(c) { *inside } else { *outside }).collect()
            }
            FieldSpec::Expr { expr } => {
                let e = parse_xyz(expr)?;
                cents.iter().map(|&c| e(c)).collect::<Result<_>>()?
            }
            FieldSpec::File { path } => {
                let v = read_numbers(&self.base_dir.join(path))?;
                if v.len() != nt {
                    return Err(Error::Config(format!("{path}: {} values for {nt} tets", v.len())));
                }
                v
            }
            _ => return Err(Error::Config("expected a scalar field".into())),
        };
        Ok(out.into_iter().map(T::lit).collect())
    }

    fn vector_field<T: Real>(&self, f: &FieldSpec, mesh: &Mesh<T>) -> Result<Vec<[T; 3]>> {
        let nt = mesh.num_tets();
        let cents: Vec<[f64; 3]> = (0..nt).map(|k| mesh.centroid(k).map(|v| v.to_f64_lossy())).collect();
        let out: Vec<[f64; 3]> = match f {
            FieldSpec::Vector { value } => vec![*value; nt],
            FieldSpec::VectorBox { lo, hi, inside, outside } => {
                let r = RegionBox::Box { lo: *lo, hi: *hi };
                cents.iter().map(|&c| if r.contains(c) { *inside } else { *outside }).collect()
            }
            FieldSpec::VectorExpr { expr } => {
                let es = [parse_xyz(&expr[0])?, parse_xyz(&expr[1])?, parse_xyz(&expr[2])?];
                cents
                    .iter()
                    .map(|&c| Ok([es[0](c)?, es[1](c)?, es[2](c)?]))
                    .collect::<Result<_>>()?
            }
            FieldSpec::VectorFile { path } => {
                let v = read_numbers(&self.base_dir.join(path))?;
                if v.len() != 3 * nt {
                    return Err(Error::Config(format!("{path}: {} values for 3×{nt} components", v.len())));
                }
                v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
            }
            _ => return Err(Error::Config("expected a vector field".into())),
        };
        Ok(out.into_iter().map(|v| v.map(T::lit)).collect())
    }

    /// Checks the declared coefficient bounds and caps at `mu`; returns the
    /// list of violations (empty when all hold).
    pub fn validate_bounds<T: Real>(&self, mu: &[f64], mesh: &Mesh<T>, fields: &CoefficientFields<T>) -> Result<Vec<String>> {
        let th = self.thetas(mu)?;
        let mut bad = Vec::new();
        let tol = 1e-12;
        let nt = mesh.num_tets();
        let d = &self.data;
        let mut ud_sq = 0.0;
        let mut ed_sq = 0.0;
        for k in 0..nt {
            let vol = mesh.volume(k).to_f64_lossy();
            let si: f64 = th.sigma.iter().zip(&fields.sigma_inv).map(|(t, f)| t * f[k].to_f64_lossy()).sum();
            let sigma = 1.0 / si;
            if !(si > 0.0) || sigma < d.sigma_bounds[0] * (1.0 - tol) || sigma > d.sigma_bounds[1] * (1.0 + tol) {
                bad.push(format!("tet {k}: σ = {sigma} outside {:?}", d.sigma_bounds));
            }
            let e: f64 = th.eps.iter().zip(&fields.eps).map(|(t, f)| t * f[k].to_f64_lossy()).sum();
            if e < d.eps_bounds[0] * (1.0 - tol) || e > d.eps_bounds[1] * (1.0 + tol) {
                bad.push(format!("tet {k}: ε = {e} outside {:?}", d.eps_bounds));
            }
            let r: f64 = th.rho.iter().zip(&fields.rho).map(|(t, f)| t * f[k].to_f64_lossy()).sum();
            if r < d.rho_bounds[0] - tol || r > d.rho_bounds[1] + tol {
                bad.push(format!("tet {k}: ρ = {r} outside {:?}", d.rho_bounds));
            }
            let mut ud = [0.0; 3];
            for (t, f) in th.u_d.iter().zip(&fields.u_d) {
                for c in 0..3 {
                    ud[c] += t * f[k][c].to_f64_lossy();
                }
            }
            ud_sq += vol * (ud[0] * ud[0] + ud[1] * ud[1] + ud[2] * ud[2]);
            if mesh.in_region(k) {
                let mut ed = [0.0; 3];
                let mut has = false;
                for (t, f) in th.e_d.iter().zip(&fields.e_d) {
                    if let StateField::PerTet(v) = f {
                        has = true;
                        for c in 0..3 {
                            ed[c] += t * v[k][c].to_f64_lossy();
                        }
                    }
                }
                if has {
                    ed_sq += vol * (ed[0] * ed[0] + ed[1] * ed[1] + ed[2] * ed[2]);
                }
            }
        }
        if ud_sq.sqrt() > d.u_d_cap * (1.0 + tol) + tol {
            bad.push(format!("‖u_d‖ = {} exceeds cap {}", ud_sq.sqrt(), d.u_d_cap));
        }
        if fields.e_d.iter().all(|f| matches!(f, StateField::PerTet(_))) && ed_sq.sqrt() > d.e_d_cap * (1.0 + tol) + tol {
            bad.push(format!("‖E_d‖_D = {} exceeds cap {}", ed_sq.sqrt(), d.e_d_cap));
        }
        Ok(bad)
    }

    /// Spot-checks the declared Hölder data `|ΔΘ| ≤ L |Δμ|^γ` on the given
    /// parameter pairs; returns violations.
    pub fn check_holder_declarations(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        let names = &self.domain.names;
        for (label, list) in [
            ("sigma_inv", &self.sigma_inv),
            ("eps", &self.eps),
            ("u_d", &self.u_d),
            ("e_d", &self.e_d),
        ] {
            for (q, (th, _)) in list.iter().enumerate() {
                let g = th.holder.unwrap_or(1.0);
                for (a, b) in pairs {
                    let dt = (th.eval(names, a)? - th.eval(names, b)?).abs();
                    let dm = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    if dt > th.lipschitz * dm.powf(g) * (1.0 + 1e-12) + 1e-14 {
                        bad.push(format!(
                            "{label} term {q}: |ΔΘ| = {dt:e} > L|Δμ|^γ = {:e}",
                            th.lipschitz * dm.powf(g)
                        ));
                    }
                }
            }
        }
        Ok(bad)
    }

    /// `γ = ½ min(γ^σ, γ^ε, 2γ^{u_d}, γ^{E_d})`, each field exponent being
    /// the smallest declared over its terms.
    pub fn gamma_exponent(&self) -> Result<f64> {
        let field = |name: &str, list: &[(Theta, FieldSpec)]| -> Result<f64> {
            list.iter().try_fold(f64::INFINITY, |m, (t, _)| {
                t.holder
                    .map(|g| m.min(g))
                    .ok_or_else(|| Error::Config(format!("{name}: missing Hölder exponent")))
            })
        };
        gamma_formula(
            field("sigma_inv", &self.sigma_inv)?,
            field("eps", &self.eps)?,
            field("u_d", &self.u_d)?,
            field("e_d", &self.e_d)?,
        )
    }
}

/// The Hölder exponent combination for the greedy convergence rate. Fields
/// without terms pass `inf`.
pub fn gamma_formula(g_sigma: f64, g_eps: f64, g_ud: f64, g_ed: f64) -> Result<f64> {
    let m = g_sigma.min(g_eps).min(2.0 * g_ud).min(g_ed);
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::Config(format!(
            "Hölder exponents ({g_sigma}, {g_eps}, {g_ud}, {g_ed}) do not define a positive rate"
        )));
    }
    Ok(0.5 * m)
}

fn parse_xyz(src: &str) -> Result<impl Fn([f64; 3]) -> Result<f64>> {
    let expr: meval::Expr = src
        .parse()
        .map_err(|e| Error::Config(format!("field expression '{src}': {e}")))?;
    let src = src.to_string();
    Ok(move |p: [f64; 3]| {
        let mut ctx = meval::Context::new();
        ctx.var("x", p[0]).var("y", p[1]).var("z", p[2]);
        expr.eval_with_context(ctx)
            .map_err(|e| Error::Config(format!("field expression '{src}': {e}")))
    })
}

fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("{}: bad number '{t}'", path.display())))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// constants

/// Every computable constant feeding the bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger {
    /// Discrete coercivity constant `C^Ω_σ̄` on the ε-divergence-free kernel.
    pub c_omega_sigma: f64,
    /// Discrete inf-sup constant of the ε-divergence form.
    pub beta: f64,
    /// Saddle-point stability constant replacing `C^Ω_{ε̄,σ̄}`.
    pub stability: f64,
    pub c_e: f64,
    pub c_f: f64,
    pub c_sigma_half: f64,
    pub c_eps_half: f64,
    pub c_eps_one: f64,
    pub c_ud_one: f64,
    pub c_ed_half: f64,
    pub delta_up_e: f64,
    pub delta_up_f: f64,
    pub delta_lo_e: f64,
    pub delta_lo_f: f64,
    pub delta_j_e: f64,
    pub delta_j_f: f64,
    /// Prefactors of `‖R_E‖*` and `‖R_F‖*` in the absolute estimator.
    pub ab_e: f64,
    pub ab_f: f64,
    pub omega_volume: f64,
    pub q_ud: usize,
    pub q_ed: usize,
}

impl ConstantsLedger {
    /// Builds the ledger from the problem data, the coercivity estimate,
    /// the inf-sup estimate, `|Ω|` and the term counts of `u_d`, `E_d`.
    pub fn build(data: &ProblemData, coercivity: f64, infsup: f64, omega_volume: f64, q_ud: usize, q_ed: usize) -> Result<Self> {
        if !(coercivity > 0.0) || !coercivity.is_finite() {
            return Err(Error::InvalidArgument(format!("coercivity estimate {coercivity} must be positive")));
        }
        if !(infsup > 0.0) || !infsup.is_finite() {
            return Err(Error::InvalidArgument(format!("inf-sup estimate {infsup} must be positive")));
        }
        if !(omega_volume > 0.0) {
            return Err(Error::InvalidArgument("domain volume must be positive".into()));
        }
        let c = coercivity;
        let alpha = data.alpha;
        let (sig_lo, _) = (data.sigma_bounds[0], data.sigma_bounds[1]);
        let (eps_lo, eps_hi) = (data.eps_bounds[0], data.eps_bounds[1]);
        let ubar = data.u_bar_norm();
        if !ubar.is_finite() {
            return Err(Error::InvalidArgument(
                "unbounded control box: the state bound C_E is infinite".into(),
            ));
        }
        let vol_half = omega_volume.sqrt();
        let ed = data.e_d_cap;
        let ud = data.u_d_cap;

        let stability = (eps_hi * c).max((1.0 + c / sig_lo) / infsup);
        let c_e = stability * vol_half * (data.rho_max() + ubar);
        let c_f = stability * (ed + c_e);

        let a_half = alpha.sqrt();
        let c_sigma_half = 8.0 * c * c_e / alpha / sig_lo / eps_lo * eps_hi * (ed + c_e);
        let c_eps_half = 8.0 * (c * eps_hi * (ed + c_e) + c_f) / alpha / eps_lo * eps_hi * ubar * vol_half;
        let t1 = c * eps_hi * (ed + c_e);
        let t2 = alpha * (ud + vol_half * ubar) + c_f;
        let c_eps_one = 4.0 * (t1 * t1 + t2 * t2) / (alpha * alpha) / (eps_lo * eps_lo) * eps_hi * eps_hi;
        let c_ud_one = 4.0 / (eps_lo * eps_lo) * eps_hi * eps_hi * ud * ud * q_ud as f64;
        let c_ed_half = 8.0 * c_e / alpha / eps_lo * eps_hi * ed * (q_ed as f64).sqrt();

        let k1 = c / a_half / eps_lo * eps_hi; // C α^-½ ε̲⁻¹ ε̄
        let k2 = c / alpha / eps_lo * eps_hi; // C α⁻¹ ε̲⁻¹ ε̄
        let delta_up_e = c * (eps_hi / a_half / eps_lo + (1.0 + c * eps_hi) * (k1 * eps_hi + 1.0));
        let delta_up_f = c * (1.0 + eps_hi / alpha / eps_lo + (1.0 + c * eps_hi) * k2 * eps_hi);
        let delta_lo_e = sig_lo / 2f64.max(c * eps_hi);
        let delta_lo_f = sig_lo / 1f64.max(2.0 * c * eps_hi);
        let uterm = ubar * vol_half + ud;
        let delta_j_e = c * eps_hi * ((c_e + ed) * (k1 * eps_hi + 1.0) + a_half / eps_lo * eps_hi * uterm);
        let delta_j_f = c * eps_hi * eps_hi * (k2 * (c_e + ed) + uterm / eps_lo);

        let ledger = ConstantsLedger {
            c_omega_sigma: c,
            beta: infsup,
            stability,
            c_e,
            c_f,
            c_sigma_half,
            c_eps_half,
            c_eps_one,
            c_ud_one,
            c_ed_half,
            delta_up_e,
            delta_up_f,
            delta_lo_e,
            delta_lo_f,
            delta_j_e,
            delta_j_f,
            ab_e: k1,
            ab_f: k2,
            omega_volume,
            q_ud,
            q_ed,
        };
        Ok(ledger)
    }

    /// The five-term Hölder bound on `‖u*(μ¹) − u*(μ²)‖` from Θ values.
    pub fn holder_upper_bound(&self, t1: &Thetas, t2: &Thetas) -> f64 {
        let d = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect() };
        let ds = d(&t1.sigma, &t2.sigma);
        let de = d(&t1.eps, &t2.eps);
        let du = d(&t1.u_d, &t2.u_d);
        let dd = d(&t1.e_d, &t2.e_d);
        let s_sigma: f64 = ds.iter().sum();
        let s_eps: f64 = de.iter().sum();
        let s_ud: f64 = du.iter().map(|v| v * v).sum();
        let s_ed: f64 = dd.iter().map(|v| v * v).sum();
        self.c_sigma_half.sqrt() * s_sigma.sqrt()
            + self.c_eps_half.sqrt() * s_eps.sqrt()
            + self.c_eps_one.sqrt() * s_eps
            + self.c_ud_one.sqrt() * s_ud.sqrt()
            + self.c_ed_half.sqrt() * s_ed.sqrt().sqrt()
    }
}

/// `κ = max_{c ∈ candidates} min_{t ∈ training} |c − t|`.
pub fn fill_distance(training: &[Vec<f64>], candidates: &[Vec<f64>]) -> Result<f64> {
    if training.is_empty() || candidates.is_empty() {
        return Err(Error::InvalidArgument("fill distance needs non-empty sets".into()));
    }
    Ok(candidates
        .iter()
        .map(|c| {
            training
                .iter()
                .map(|t| c.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_structured_cube;
    use proptest::prelude::*;

    const SAMPLE: &str = r#"
[parameters]
lower = [0.1, 0.1]
upper = [1.0, 1.0]

[domain]
d_box = [0.0, 0.0, 0.0, 0.5, 0.5, 0.5]

[control]
alpha = 0.01
lower = [-1.0, -1.0, -1.0]
upper = [1.0, 1.0, 1.0]

[bounds]
sigma = [0.5, 1.0]
eps = [1.0, 2.0]
e_d = 1.0
u_d = 2.0

[[sigma_inv]]
theta = "1"
holder = 1.0
field = { kind = "constant", value = 1.0 }

[[sigma_inv]]
theta = "mu1"
lipschitz = 1.0
holder = 1.0
field = { kind = "box", lo = [0.0, 0.0, 0.0], hi = [0.5, 1.0, 1.0], inside = 1.0, outside = 0.0 }

[[eps]]
theta = "1"
holder = 1.0
field = { kind = "constant", value = 1.0 }

[[eps]]
theta = "mu2"
lipschitz = 1.0
holder = 1.0
field = { kind = "box", lo = [0.0, 0.0, 0.0], hi = [1.0, 1.0, 0.5], inside = 1.0, outside = 0.0 }

[[u_d]]
theta = "1"
holder = 1.0
field = { kind = "vector", value = [1.0, 0.5, 0.0] }

[[e_d]]
theta = "1"
holder = 1.0
field = { kind = "vector", value = [0.1, 0.0, 0.0] }
"#;

    fn sample() -> Problem {
        Problem::from_toml_str(SAMPLE, Path::new(".")).unwrap()
    }

    fn data() -> ProblemData {
        sample().data
    }

    #[test]
    fn theta_evaluation() {
        let p = sample();
        let t = p.thetas(&[0.3, 0.7]).unwrap();
        assert_eq!(t.sigma, vec![1.0, 0.3]);
        assert_eq!(t.eps, vec![1.0, 0.7]);
        assert_eq!(t.u_d, vec![1.0]);
        assert!(matches!(p.thetas(&[0.05, 0.5]), Err(Error::Domain { .. })));
        let th = Theta::parse("1/2 + mu1^2", 0.0, None).unwrap();
        assert_eq!(th.eval(&["mu1".into()], &[2.0]).unwrap(), 4.5);
    }

    #[test]
    fn coefficients_within_bounds() {
        // sampling oracle: σ, ε at (tet, μ) pairs
        let p = sample();
        let mesh = generate_structured_cube::<f64>(2, &p.data.region.region()).unwrap();
        let f = p.resolve_fields(&mesh, 0).unwrap();
        for i in 0..20 {
            let mu = p.domain.from_unit(&[(i as f64 * 0.37) % 1.0, (i as f64 * 0.61) % 1.0]);
            let bad = p.validate_bounds(&mu, &mesh, &f).unwrap();
            assert!(bad.is_empty(), "{bad:?}");
        }
    }

    #[test]
    fn bound_violation_detected() {
        let text = SAMPLE.replace("eps = [1.0, 2.0]", "eps = [1.0, 1.5]");
        let p = Problem::from_toml_str(&text, Path::new(".")).unwrap();
        let mesh = generate_structured_cube::<f64>(2, &RegionBox::Whole).unwrap();
        let f = p.resolve_fields(&mesh, 0).unwrap();
        assert!(!p.validate_bounds(&[1.0, 1.0], &mesh, &f).unwrap().is_empty());
    }

    #[test]
    fn config_errors() {
        let missing = SAMPLE.replacen("holder = 1.0\nfield = { kind = \"constant\"", "field = { kind = \"constant\"", 1);
        assert!(matches!(Problem::from_toml_str(&missing, Path::new(".")), Err(Error::Config(_))));
        let bad_alpha = SAMPLE.replace("alpha = 0.01", "alpha = 0.0");
        assert!(Problem::from_toml_str(&bad_alpha, Path::new(".")).is_err());
        let wrong_kind = SAMPLE.replace("kind = \"vector\", value = [1.0, 0.5, 0.0]", "kind = \"constant\", value = 1.0");
        assert!(Problem::from_toml_str(&wrong_kind, Path::new(".")).is_err());
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_formula(1.0, 1.0, 1.0, 1.0).unwrap(), 0.5);
        assert_eq!(gamma_formula(1.0, 1.0, 0.25, 1.0).unwrap(), 0.25);
        assert_eq!(gamma_formula(2.0, 2.0, 2.0, 2.0).unwrap(), 1.0);
        assert_eq!(sample().gamma_exponent().unwrap(), 0.5);
    }

    #[test]
    fn lower_sandwich_constants() {
        // σ̲ = 1, C ε̄ = 1 gives 1/2 and 1/2
        let mut d = data();
        d.sigma_bounds = [1.0, 1.0];
        d.eps_bounds = [1.0, 1.0];
        let l = ConstantsLedger::build(&d, 1.0, 1.0, 1.0, 1, 1).unwrap();
        assert_eq!(l.delta_lo_e, 0.5);
        assert_eq!(l.delta_lo_f, 0.5);
        assert!(l.delta_lo_e <= l.delta_up_e && l.delta_lo_f <= l.delta_up_f);
    }

    #[test]
    fn estimator_prefactors_decay_in_alpha() {
        let mut d = data();
        let mut last = (f64::INFINITY, f64::INFINITY);
        for a in [1.0, 10.0, 100.0] {
            d.alpha = a;
            let l = ConstantsLedger::build(&d, 1.2, 0.5, 1.0, 1, 1).unwrap();
            assert!(l.ab_e < last.0 && l.ab_f < last.1);
            last = (l.ab_e, l.ab_f);
        }
    }

    #[test]
    fn ledger_is_positive_and_pure() {
        let d = data();
        let a = ConstantsLedger::build(&d, 1.05, 0.3, 1.0, 1, 1).unwrap();
        let b = ConstantsLedger::build(&d, 1.05, 0.3, 1.0, 1, 1).unwrap();
        assert_eq!(a, b);
        for v in [
            a.c_e, a.c_f, a.c_sigma_half, a.c_eps_half, a.c_eps_one, a.c_ud_one, a.c_ed_half,
            a.delta_up_e, a.delta_up_f, a.delta_lo_e, a.delta_lo_f, a.delta_j_e, a.delta_j_f, a.ab_e, a.ab_f,
        ] {
            assert!(v > 0.0);
        }
        assert!(ConstantsLedger::build(&d, 0.0, 0.3, 1.0, 1, 1).is_err());
        assert!(ConstantsLedger::build(&d, 1.0, -1.0, 1.0, 1, 1).is_err());
    }

    #[test]
    fn ledger_formulas_by_hand() {
        // independent re-evaluation of the printed formulas at one setting
        let mut d = data();
        d.alpha = 0.25;
        d.sigma_bounds = [0.5, 1.0];
        d.eps_bounds = [1.0, 2.0];
        d.e_d_cap = 0.3;
        d.u_d_cap = 1.5;
        let (c, beta) = (1.5, 0.4);
        let l = ConstantsLedger::build(&d, c, beta, 1.0, 2, 3).unwrap();
        let ubar = 3f64.sqrt();
        let stab = f64::max(2.0 * 1.5, (1.0 + 1.5 / 0.5) / 0.4);
        assert!((l.stability - stab).abs() < 1e-12);
        let ce = stab * (0.0 + ubar);
        assert!((l.c_e - ce).abs() < 1e-12);
        let cf = stab * (0.3 + ce);
        assert!((l.c_f - cf).abs() < 1e-12);
        // δ̄_E = C(α^-½ ε̲⁻¹ε̄ + (1 + Cε̄)(Cα^-½ε̲⁻¹ε̄² + 1))
        let de = 1.5 * (2.0 * 2.0 + (1.0 + 3.0) * (1.5 * 2.0 * 4.0 + 1.0));
        assert!((l.delta_up_e - de).abs() < 1e-12);
        // δ̄_F = C(1 + α⁻¹ε̲⁻¹ε̄ + (1 + Cε̄) C α⁻¹ ε̲⁻¹ ε̄²)
        let df = 1.5 * (1.0 + 4.0 * 2.0 + 4.0 * 1.5 * 4.0 * 4.0);
        assert!((l.delta_up_f - df).abs() < 1e-12);
        assert!((l.delta_lo_e - 0.5 / 3.0).abs() < 1e-15);
        assert!((l.delta_lo_f - 0.5 / 6.0).abs() < 1e-15);
        let cud = 4.0 * 4.0 * 1.5 * 1.5 * 2.0;
        assert!((l.c_ud_one - cud).abs() < 1e-12);
        let ced = 8.0 * ce * 4.0 * 2.0 * 0.3 * 3f64.sqrt();
        assert!((l.c_ed_half - ced).abs() < 1e-9);
        assert!((l.ab_e - 1.5 * 2.0 * 2.0).abs() < 1e-12);
        assert!((l.ab_f - 1.5 * 4.0 * 2.0).abs() < 1e-12);
        let dje = 1.5 * 2.0 * ((ce + 0.3) * (1.5 * 2.0 * 4.0 + 1.0) + 0.5 * 2.0 * (ubar + 1.5));
        assert!((l.delta_j_e - dje).abs() < 1e-9);
        let djf = 1.5 * 4.0 * (1.5 * 4.0 * 2.0 * (ce + 0.3) + (ubar + 1.5));
        assert!((l.delta_j_f - djf).abs() < 1e-9);
    }

    #[test]
    fn holder_bound_examples() {
        let l = ConstantsLedger::build(&data(), 1.1, 0.5, 1.0, 1, 1).unwrap();
        let t = |s: Vec<f64>, e: Vec<f64>| Thetas { sigma: s, eps: e, rho: vec![], u_d: vec![1.0], e_d: vec![1.0] };
        let a = t(vec![1.0, 0.3], vec![1.0, 0.2]);
        assert_eq!(l.holder_upper_bound(&a, &a), 0.0);
        // single ε term with ΔΘ = 1
        let b = t(vec![1.0, 0.3], vec![1.0, 1.2]);
        let v = l.holder_upper_bound(&a, &b);
        assert!((v - (l.c_eps_half.sqrt() + l.c_eps_one.sqrt())).abs() < 1e-9 * v);
    }

    #[test]
    fn fill_distance_examples() {
        let cands: Vec<Vec<f64>> = (0..=100).map(|i| vec![i as f64 / 100.0]).collect();
        assert!((fill_distance(&[vec![0.0], vec![1.0]], &cands).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(fill_distance(&cands, &cands).unwrap(), 0.0);
        assert!(fill_distance(&[], &cands).is_err());
    }

    #[test]
    fn grid_ordering() {
        let p = sample();
        let g = p.domain.grid(&[2, 3]).unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], vec![0.1, 0.1]);
        assert_eq!(g[1], vec![0.1, 0.55]);
        assert_eq!(g[5], vec![1.0, 1.0]);
    }

    #[test]
    fn holder_declarations_checked() {
        let p = sample();
        let pairs = vec![(vec![0.1, 0.1], vec![1.0, 1.0]), (vec![0.5, 0.2], vec![0.3, 0.9])];
        assert!(p.check_holder_declarations(&pairs).unwrap().is_empty());
        let text = SAMPLE.replacen("theta = \"mu1\"\nlipschitz = 1.0", "theta = \"mu1\"\nlipschitz = 0.5", 1);
        let q = Problem::from_toml_str(&text, Path::new(".")).unwrap();
        assert!(!q.check_holder_declarations(&pairs).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn holder_bound_symmetric(a in 0.1f64..1.0, b in 0.1f64..1.0, c in 0.1f64..1.0, d in 0.1f64..1.0) {
            let p = sample();
            let l = ConstantsLedger::build(&p.data, 1.1, 0.5, 1.0, 1, 1).unwrap();
            let t1 = p.thetas(&[a, b]).unwrap();
            let t2 = p.thetas(&[c, d]).unwrap();
            let x = l.holder_upper_bound(&t1, &t2);
            let y = l.holder_upper_bound(&t2, &t1);
            prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
            prop_assert!((x == 0.0) == (a == c && b == d));
        }

        #[test]
        fn fill_distance_matches_brute_force(seed in 0u64..200) {
            let mut s = seed as f64 + 0.5;
            let mut rnd = || { s = (s * 16807.0) % 2147483647.0; s / 2147483647.0 };
            let train: Vec<Vec<f64>> = (0..5).map(|_| vec![rnd(), rnd()]).collect();
            let cand: Vec<Vec<f64>> = (0..30).map(|_| vec![rnd(), rnd()]).collect();
            let mut kappa: f64 = 0.0;
            for c in &cand {
                let mut best = f64::MAX;
                for t in &train {
                    best = best.min(((c[0]-t[0]).powi(2) + (c[1]-t[1]).powi(2)).sqrt());
                }
                kappa = kappa.max(best);
            }
            prop_assert_eq!(fill_distance(&train, &cand).unwrap(), kappa);
        }
    }
}
