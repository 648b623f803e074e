use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{malformed, FormatError};
use crate::calibration::{Correspondence, CorrespondenceSet};
use crate::geometry::{Point2, Point3};
use crate::keypoints::KeypointDetection;
use crate::stereo::PixelMatch;

#[derive(Debug, Serialize, Deserialize)]
struct CorrespondenceRow {
    t: usize,
    k: usize,
    x_um: f64,
    y_um: f64,
    z_um: f64,
    ul_px: f64,
    vl_px: f64,
    ur_px: f64,
    vr_px: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MatchRow {
    ul_px: f64,
    vl_px: f64,
    ur_px: f64,
    vr_px: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PixelRow {
    u_px: f64,
    v_px: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct KeypointRow {
    channel: usize,
    u_px: f64,
    v_px: f64,
    peak: f64,
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

pub fn read_correspondences<R: Read>(r: R) -> Result<CorrespondenceSet<f64>, FormatError> {
    let mut items = Vec::new();
    for row in reader(r).deserialize() {
        let row: CorrespondenceRow = row?;
        items.push(Correspondence {
            x: Point3::new(row.x_um, row.y_um, row.z_um),
            u_left: Point2::new(row.ul_px, row.vl_px),
            u_right: Point2::new(row.ur_px, row.vr_px),
            frame: row.t,
            keypoint: row.k,
        });
    }
    CorrespondenceSet::from_items(items).map_err(|e| malformed("correspondence file", e.to_string()))
}

pub fn write_correspondences<W: Write>(w: W, set: &CorrespondenceSet<f64>) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    for c in set.items() {
        out.serialize(CorrespondenceRow {
            t: c.frame,
            k: c.keypoint,
            x_um: c.x.x,
            y_um: c.x.y,
            z_um: c.x.z,
            ul_px: c.u_left.u,
            vl_px: c.u_left.v,
            ur_px: c.u_right.u,
            vr_px: c.u_right.v,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matches<R: Read>(r: R) -> Result<Vec<PixelMatch<f64>>, FormatError> {
    reader(r)
        .deserialize()
        .map(|row| {
            let row: MatchRow = row?;
            Ok((Point2::new(row.ul_px, row.vl_px), Point2::new(row.ur_px, row.vr_px)))
        })
        .collect()
}

pub fn write_matches<W: Write>(w: W, matches: &[PixelMatch<f64>]) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    for (l, r) in matches {
        out.serialize(MatchRow {
            ul_px: l.u,
            vl_px: l.v,
            ur_px: r.u,
            vr_px: r.v,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a `u_px,v_px` pixel list.
pub fn read_pixels<R: Read>(r: R) -> Result<Vec<Point2<f64>>, FormatError> {
    reader(r)
        .deserialize()
        .map(|row| {
            let row: PixelRow = row?;
            Ok(Point2::new(row.u_px, row.v_px))
        })
        .collect()
}

pub fn read_keypoints<R: Read>(r: R) -> Result<Vec<KeypointDetection<f64>>, FormatError> {
    reader(r)
        .deserialize()
        .map(|row| {
            let row: KeypointRow = row?;
            Ok(KeypointDetection {
                location: Point2::new(row.u_px, row.v_px),
                peak_value: row.peak,
                channel_index: row.channel,
            })
        })
        .collect()
}

pub fn write_keypoints<W: Write>(w: W, detections: &[KeypointDetection<f64>]) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    for d in detections {
        out.serialize(KeypointRow {
            channel: d.channel_index,
            u_px: d.location.u,
            v_px: d.location.v,
            peak: d.peak_value,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Landmark coordinates, optionally tagged with a frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTable {
    pub points: Vec<Point3<f64>>,
    /// Present when the file has a `frame` column.
    pub frames: Option<Vec<usize>>,
}

/// Reads `x,y,z` or `frame,x,y,z` (µm). `x_um`-style column names are
/// accepted as well.
pub fn read_points<R: Read>(r: R) -> Result<PointTable, FormatError> {
    let mut rdr = reader(r);
    let headers = rdr.headers()?.clone();
    let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
    let cols = [find(&["x", "x_um"]), find(&["y", "y_um"]), find(&["z", "z_um"])];
    let [Some(cx), Some(cy), Some(cz)] = cols else {
        return Err(malformed("point file", "expected columns x,y,z"));
    };
    let cf = find(&["frame", "t"]);
    let mut points = Vec::new();
    let mut frames = cf.map(|_| Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64, FormatError> {
            rec.get(c).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| {
                malformed(
                    "point file",
                    format!("row {}: bad number in column {}", line + 1, c + 1),
                )
            })
        };
        points.push(Point3::new(num(cx)?, num(cy)?, num(cz)?));
        if let (Some(c), Some(f)) = (cf, frames.as_mut()) {
            let v = rec
                .get(c)
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| malformed("point file", format!("row {}: bad frame index", line + 1)))?;
            f.push(v);
        }
    }
    Ok(PointTable { points, frames })
}

pub fn write_points<W: Write>(w: W, table: &PointTable) -> Result<(), FormatError> {
    let mut out = csv::Writer::from_writer(w);
    match &table.frames {
        Some(frames) => {
            out.write_record(["frame", "x", "y", "z"])?;
            for (p, f) in table.points.iter().zip(frames) {
                out.write_record([f.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
            }
        }
        None => {
            out.write_record(["x", "y", "z"])?;
            for p in &table.points {
                out.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
