use std::path::Path;

use nalgebra::Vector3;

use super::GeometryError;

/// Vertex count above which the diameter uses the pruned exact search.
pub const BRUTE_FORCE_DIAMETER_LIMIT: usize = 5000;

/// Triangle mesh in meters. The diameter is computed once at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    triangles: Vec<[u32; 3]>,
    diameter: f64,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::Degenerate(format!(
                "mesh needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if !vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinite);
        }
        let n = vertices.len() as u32;
        if let Some((i, t)) = triangles.iter().enumerate().find(|(_, t)| t.iter().any(|&v| v >= n)) {
            return Err(GeometryError::IndexOutOfRange {
                triangle: i,
                index: *t.iter().max().unwrap_or(&0),
                vertex_count: vertices.len(),
            });
        }
        let diameter = point_set_diameter(&vertices)?;
        Ok(Self {
            vertices,
            triangles,
            diameter,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Largest distance between any two vertices, meters.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Uniformly scaled copy (e.g. 0.001 for millimeter models).
    pub fn scaled(&self, factor: f64) -> Result<Self, GeometryError> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(GeometryError::Degenerate(format!("invalid scale factor {factor}")));
        }
        Ok(Self {
            vertices: self.vertices.iter().map(|v| v * factor).collect(),
            triangles: self.triangles.clone(),
            diameter: self.diameter * factor,
        })
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64
    }

    /// Merges several meshes into one (vertex indices are offset).
    pub fn merge(parts: &[TriangleMesh]) -> Result<Self, GeometryError> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for part in parts {
            let base = vertices.len() as u32;
            vertices.extend_from_slice(&part.vertices);
            triangles.extend(part.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        }
        Self::new(vertices, triangles)
    }

    pub fn transformed(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Result<Self, GeometryError> {
        Self::new(self.vertices.iter().map(f).collect(), self.triangles.clone())
    }

    /// Loads an ASCII OBJ or PLY file, chosen by extension.
    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
            Some(ext) if ext == "obj" => parse_obj(&text),
            Some(ext) if ext == "ply" => parse_ply(&text),
            _ => Err(GeometryError::UnsupportedFormat(path.display().to_string())),
        }
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for t in &self.triangles {
            out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        out
    }
}

/// Maximum pairwise distance of a point set.
///
/// Exhaustive for up to [`BRUTE_FORCE_DIAMETER_LIMIT`] points. Larger sets sort
/// points by distance from the centroid and prune pairs whose radius sum cannot
/// beat the current best; the result is still exact.
pub fn point_set_diameter(points: &[Vector3<f64>]) -> Result<f64, GeometryError> {
    if points.len() < 2 {
        return Err(GeometryError::Degenerate("diameter needs at least 2 points".into()));
    }
    let best_sq = if points.len() <= BRUTE_FORCE_DIAMETER_LIMIT {
        brute_force_diameter_sq(points)
    } else {
        pruned_diameter_sq(points)
    };
    if best_sq == 0.0 {
        return Err(GeometryError::Degenerate("all vertices coincide".into()));
    }
    Ok(best_sq.sqrt())
}

fn brute_force_diameter_sq(points: &[Vector3<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best
}

fn pruned_diameter_sq(points: &[Vector3<f64>]) -> f64 {
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - centroid).norm(), i))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let slack = 1.0 + 1e-9;
    let mut best = 0.0f64;
    for (a, &(ra, ia)) in order.iter().enumerate() {
        if 2.0 * ra * slack < best.sqrt() {
            break;
        }
        for &(rb, ib) in &order[a + 1..] {
            if (ra + rb) * slack < best.sqrt() {
                break;
            }
            best = best.max((points[ia] - points[ib]).norm_squared());
        }
    }
    best
}

fn parse_err(line: usize, msg: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        line,
        message: msg.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, GeometryError> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, format!("invalid number '{tok}'")))
}

/// Parses ASCII OBJ `v` and `f` records; polygons are fan-triangulated.
pub fn parse_obj(text: &str) -> Result<TriangleMesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let coords: Vec<f64> = toks
                    .take(3)
                    .map(|t| parse_f64(t, lineno))
                    .collect::<Result<_, _>>()?;
                if coords.len() != 3 {
                    return Err(parse_err(lineno, "vertex needs 3 coordinates"));
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in toks {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("invalid face index '{tok}'")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(parse_err(lineno, "face index 0 is invalid"));
                    };
                    if resolved < 0 {
                        return Err(parse_err(lineno, format!("face index {i} out of range")));
                    }
                    poly.push(resolved as u32);
                }
                if poly.len() < 3 {
                    return Err(parse_err(lineno, "face needs at least 3 vertices"));
                }
                for k in 1..poly.len() - 1 {
                    triangles.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

/// Parses ASCII PLY with a `vertex` element (x, y, z properties) and an optional
/// `face` element carrying a vertex index list. Other elements are skipped.
pub fn parse_ply(text: &str) -> Result<TriangleMesh, GeometryError> {
    struct Element {
        name: String,
        count: usize,
        props: Vec<String>,
        list_prop: Option<usize>,
    }

    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(1, "missing 'ply' magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut header_done = false;
    for (idx, raw) in lines.by_ref() {
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(parse_err(idx + 1, format!("only ASCII PLY is supported, got '{fmt}'")));
                }
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(idx + 1, "invalid element count"))?,
                props: Vec::new(),
                list_prop: None,
            }),
            ["property", "list", _, _, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(idx + 1, "property before element"))?;
                el.list_prop = Some(el.props.len());
                el.props.push(name.to_string());
            }
            ["property", _, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(idx + 1, "property before element"))?;
                el.props.push(name.to_string());
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => {}
        }
    }
    if !header_done {
        return Err(parse_err(0, "missing end_header"));
    }
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for el in &elements {
        let xyz = if el.name == "vertex" {
            let find = |n: &str| el.props.iter().position(|p| p == n);
            match (find("x"), find("y"), find("z")) {
                (Some(x), Some(y), Some(z)) => Some((x, y, z)),
                _ => return Err(parse_err(0, "vertex element lacks x/y/z")),
            }
        } else {
            None
        };
        for _ in 0..el.count {
            let (idx, raw) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("unexpected end of file in element '{}'", el.name)))?;
            let lineno = idx + 1;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            if let Some((x, y, z)) = xyz {
                if el.list_prop.is_some() || toks.len() < el.props.len() {
                    return Err(parse_err(lineno, "malformed vertex record"));
                }
                vertices.push(Vector3::new(
                    parse_f64(toks[x], lineno)?,
                    parse_f64(toks[y], lineno)?,
                    parse_f64(toks[z], lineno)?,
                ));
            } else if el.name == "face" {
                let start = el.list_prop.ok_or_else(|| parse_err(lineno, "face element lacks a list property"))?;
                let n: usize = toks
                    .get(start)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(lineno, "invalid face list length"))?;
                let ids: Vec<u32> = toks
                    .get(start + 1..start + 1 + n)
                    .ok_or_else(|| parse_err(lineno, "face list shorter than declared"))?
                    .iter()
                    .map(|t| t.parse::<u32>().map_err(|_| parse_err(lineno, format!("invalid face index '{t}'"))))
                    .collect::<Result<_, _>>()?;
                if ids.len() < 3 {
                    return Err(parse_err(lineno, "face needs at least 3 vertices"));
                }
                for k in 1..ids.len() - 1 {
                    triangles.push([ids[0], ids[k], ids[k + 1]]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}
