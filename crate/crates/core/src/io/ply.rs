use std::io::{BufRead, BufReader, Read, Write};

use super::{malformed, FormatError};
use crate::geometry::{Point2, Point3};

/// An ASCII PLY point cloud, coordinates in µm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlyCloud {
    pub points: Vec<Point3<f64>>,
    /// Left-image pixel of each point, when known.
    pub pixels: Option<Vec<Point2<f64>>>,
    /// Free-text `comment` lines, without the keyword.
    pub comments: Vec<String>,
}

fn write_header<W: Write>(w: &mut W, comments: &[String], vertices: usize, with_pixels: bool) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "comment units um")?;
    for c in comments {
        writeln!(w, "comment {}", c.replace('\n', " "))?;
    }
    writeln!(w, "element vertex {vertices}")?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property double {p}")?;
    }
    if with_pixels {
        writeln!(w, "property double u_left")?;
        writeln!(w, "property double v_left")?;
    }
    Ok(())
}

pub fn write_ply_cloud<W: Write>(mut w: W, cloud: &PlyCloud) -> Result<(), FormatError> {
    if let Some(px) = &cloud.pixels {
        if px.len() != cloud.points.len() {
            return Err(malformed("point cloud", "pixel and point counts differ"));
        }
    }
    let comments: Vec<String> = cloud
        .comments
        .iter()
        .filter(|c| c.as_str() != "units um")
        .cloned()
        .collect();
    write_header(&mut w, &comments, cloud.points.len(), cloud.pixels.is_some())?;
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        match &cloud.pixels {
            Some(px) => writeln!(w, "{} {} {} {} {}", p.x, p.y, p.z, px[i].u, px[i].v)?,
            None => writeln!(w, "{} {} {}", p.x, p.y, p.z)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a `res × res` lattice (row by row, as produced by
/// [`BBSurface::sample_grid`](crate::surface::BBSurface::sample_grid)) as a
/// triangle mesh.
pub fn write_ply_mesh<W: Write>(
    mut w: W,
    lattice: &[(Point2<f64>, Point3<f64>)],
    res: usize,
    comments: &[String],
) -> Result<(), FormatError> {
    if res < 2 || lattice.len() != res * res {
        return Err(malformed(
            "mesh",
            format!("{} samples do not form a {res}x{res} lattice", lattice.len()),
        ));
    }
    write_header(&mut w, comments, lattice.len(), true)?;
    writeln!(w, "element face {}", 2 * (res - 1) * (res - 1))?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(w, "end_header")?;
    for (u, x) in lattice {
        writeln!(w, "{} {} {} {} {}", x.x, x.y, x.z, u.u, u.v)?;
    }
    for j in 0..res - 1 {
        for i in 0..res - 1 {
            let a = j * res + i;
            let (b, c, d) = (a + 1, a + res, a + res + 1);
            writeln!(w, "3 {a} {b} {d}")?;
            writeln!(w, "3 {a} {d} {c}")?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// Reads the vertex element of an ASCII PLY file. Other elements (faces)
/// are skipped; vertex properties other than `x y z u_left v_left` are
/// ignored.
pub fn read_ply_cloud<R: Read>(r: R) -> Result<PlyCloud, FormatError> {
    let mut lines = BufReader::new(r).lines();
    let mut next = || -> Result<String, FormatError> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| malformed("ply", "unexpected end of file"))
    };
    if next()?.trim() != "ply" {
        return Err(malformed("ply", "missing `ply` magic"));
    }
    let mut comments = Vec::new();
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next()?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(malformed("ply", "only ascii PLY is supported"));
                }
            }
            Some("comment") => comments.push(line.trim_start()["comment".len()..].trim().to_string()),
            Some("element") => {
                let name = tok.next().ok_or_else(|| malformed("ply", "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| malformed("ply", "element without count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| malformed("ply", "property before element"))?;
                let name = match tok.next() {
                    Some("list") => tok.nth(2),
                    _ => tok.next(),
                };
                el.properties.push(
                    name.ok_or_else(|| malformed("ply", "property without name"))?
                        .to_string(),
                );
            }
            Some("end_header") => break,
            Some("obj_info") | None => {}
            Some(other) => return Err(malformed("ply", format!("unknown header keyword `{other}`"))),
        }
    }

    let mut cloud = PlyCloud {
        comments,
        ..Default::default()
    };
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                next()?;
            }
            continue;
        }
        let col = |n: &str| el.properties.iter().position(|p| p == n);
        let (Some(cx), Some(cy), Some(cz)) = (col("x"), col("y"), col("z")) else {
            return Err(malformed("ply", "vertex element lacks x, y, z"));
        };
        let pix = col("u_left").zip(col("v_left"));
        let mut pixels = Vec::new();
        for row in 0..el.count {
            let line = next()?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| malformed("ply", format!("vertex {row}: bad number")))?;
            if vals.len() < el.properties.len() {
                return Err(malformed("ply", format!("vertex {row}: too few values")));
            }
            cloud.points.push(Point3::new(vals[cx], vals[cy], vals[cz]));
            if let Some((cu, cv)) = pix {
                pixels.push(Point2::new(vals[cu], vals[cv]));
            }
        }
        if pix.is_some() {
            cloud.pixels = Some(pixels);
        }
    }
    Ok(cloud)
}
