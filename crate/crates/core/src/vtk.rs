//! Legacy ASCII VTK output of per-tet vector fields.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::scalar::Real;

/// Writes the mesh as an unstructured grid with the region tags and each
/// named field (three values per tet) as cell data.
pub fn to_vtk<T: Real>(mesh: &Mesh<T>, fields: &[(&str, &[T])]) -> Result<String> {
    let nt = mesh.num_tets();
    for (name, v) in fields {
        if v.len() != 3 * nt {
            return Err(Error::InvalidArgument(format!(
                "field {name} has {} values for {nt} tets",
                v.len()
            )));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("invalid field name {name:?}")));
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\nmaxrb fields\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(s, "POINTS {} double", mesh.num_nodes());
    for p in &mesh.nodes {
        let _ = writeln!(s, "{:e} {:e} {:e}", p[0].to_f64_lossy(), p[1].to_f64_lossy(), p[2].to_f64_lossy());
    }
    let _ = writeln!(s, "CELLS {nt} {}", 5 * nt);
    for t in &mesh.tets {
        let _ = writeln!(s, "4 {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(s, "10");
    }
    let _ = writeln!(s, "CELL_DATA {nt}\nSCALARS region int 1\nLOOKUP_TABLE default");
    for tag in &mesh.region_tags {
        let _ = writeln!(s, "{tag}");
    }
    for (name, v) in fields {
        let _ = writeln!(s, "VECTORS {name} double");
        for c in v.chunks(3) {
            let _ = writeln!(s, "{:e} {:e} {:e}", c[0].to_f64_lossy(), c[1].to_f64_lossy(), c[2].to_f64_lossy());
        }
    }
    Ok(s)
}

pub fn write_vtk<T: Real>(path: &Path, mesh: &Mesh<T>, fields: &[(&str, &[T])]) -> Result<()> {
    std::fs::write(path, to_vtk(mesh, fields)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_structured_cube, RegionBox};

    #[test]
    fn layout() {
        let m = generate_structured_cube::<f64>(1, &RegionBox::Whole).unwrap();
        let nt = m.num_tets();
        let u = vec![1.0; 3 * nt];
        let text = to_vtk(&m, &[("u", &u)]).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0"));
        assert!(text.contains(&format!("CELLS {nt} {}", 5 * nt)));
        assert_eq!(text.lines().filter(|l| *l == "10").count(), nt);
        assert!(text.contains("VECTORS u double"));
        assert!(to_vtk(&m, &[("u", &u[1..])]).is_err());
        assert!(to_vtk(&m, &[("a b", &u)]).is_err());
    }
}
