use std::io::{BufRead, BufReader, Read, Write};

use super::{malformed, FormatError};
use crate::keypoints::Heatmap;

/// Writes `width height sigma\n` followed by the activations as row-major
/// little-endian `f32`.
pub fn write_heatmap<W: Write>(mut w: W, heatmap: &Heatmap<f32>) -> Result<(), FormatError> {
    writeln!(w, "{} {} {}", heatmap.width(), heatmap.height(), heatmap.sigma())?;
    let mut payload = Vec::with_capacity(4 * heatmap.values().len());
    for v in heatmap.values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_heatmap<R: Read>(r: R) -> Result<Heatmap<f32>, FormatError> {
    let mut r = BufReader::new(r);
    let mut header = Vec::new();
    r.read_until(b'\n', &mut header)?;
    let header = std::str::from_utf8(&header).map_err(|_| malformed("heatmap", "header is not text"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [w, h, s] = fields[..] else {
        return Err(malformed("heatmap", "header must be `width height sigma`"));
    };
    let width: usize = w.parse().map_err(|_| malformed("heatmap", "bad width"))?;
    let height: usize = h.parse().map_err(|_| malformed("heatmap", "bad height"))?;
    let sigma: f32 = s.parse().map_err(|_| malformed("heatmap", "bad sigma"))?;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| malformed("heatmap", "dimensions overflow"))?;
    let mut payload = Vec::with_capacity(expected);
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(malformed(
            "heatmap",
            format!("expected {expected} payload bytes, got {}", payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Heatmap::new(width, height, values, sigma).map_err(|e| malformed("heatmap", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let hm = Heatmap::from_fn(7, 5, 1.5f32, |u, v| (u as f32 * 0.37 + v as f32).sin().abs()).unwrap();
        let mut buf = Vec::new();
        write_heatmap(&mut buf, &hm).unwrap();
        assert!(buf.starts_with(b"7 5 1.5\n"));
        assert_eq!(buf.len(), 8 + 4 * 35);
        assert_eq!(read_heatmap(&buf[..]).unwrap(), hm);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let hm = Heatmap::from_fn(3, 3, 1.0f32, |_, _| 1.0).unwrap();
        let mut buf = Vec::new();
        write_heatmap(&mut buf, &hm).unwrap();
        buf.pop();
        assert!(matches!(read_heatmap(&buf[..]), Err(FormatError::Malformed { .. })));
        assert!(read_heatmap(&b"3 3\n"[..]).is_err());
    }
}
