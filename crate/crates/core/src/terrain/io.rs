//! Plain-text heightmap format and costmap CSV export.
//!
//! Heightmap files start with `nx ny resolution z_resolution origin_x origin_y`
//! followed by `nx·ny` heights in row-major order, `nan` for unknown cells.

use super::{CostMap, GridSpec, HeightMap, Result, TerrainError};
use crate::geom::Vec2;
use std::io::{BufRead, Write};

pub fn write_heightmap<W: Write>(hm: &HeightMap, mut w: W) -> Result<()> {
    let s = hm.spec();
    writeln!(
        w,
        "{} {} {:?} {:?} {:?} {:?}",
        s.nx, s.ny, s.resolution, s.z_resolution, s.origin.x, s.origin.y
    )?;
    for iy in 0..s.ny {
        let row: Vec<String> = (0..s.nx)
            .map(|ix| match hm.height(ix, iy) {
                Some(z) => format!("{z:?}"),
                None => "nan".to_string(),
            })
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_heightmap<R: BufRead>(r: R) -> Result<HeightMap> {
    let mut tokens = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("");
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    if tokens.len() < 6 {
        return Err(TerrainError::Parse("truncated header".into()));
    }
    let dim = |i: usize| -> Result<usize> {
        tokens[i]
            .parse()
            .map_err(|_| TerrainError::Parse(format!("bad dimension {:?}", tokens[i])))
    };
    let num = |tok: &str| -> Result<f64> {
        tok.parse()
            .map_err(|_| TerrainError::Parse(format!("bad number {tok:?}")))
    };
    let (nx, ny) = (dim(0)?, dim(1)?);
    let spec = GridSpec::new(
        Vec2::new(num(&tokens[4])?, num(&tokens[5])?),
        num(&tokens[2])?,
        nx,
        ny,
        num(&tokens[3])?,
    )?;
    let body = &tokens[6..];
    if body.len() != spec.len() {
        return Err(TerrainError::Parse(format!(
            "expected {} heights, found {}",
            spec.len(),
            body.len()
        )));
    }
    let mut hm = HeightMap::unknown(spec);
    for (i, tok) in body.iter().enumerate() {
        let z = num(tok)?;
        hm.set(i % nx, i / nx, z.is_finite().then_some(z));
    }
    Ok(hm)
}

/// CSV with one row per costmap cell: `x,y,height_dev,slope,curvature,total`.
pub fn write_costmap_csv<W: Write>(cm: &CostMap, mut w: W) -> Result<()> {
    writeln!(w, "x,y,height_dev,slope,curvature,total")?;
    let s = cm.spec();
    for iy in 0..s.ny {
        for ix in 0..s.nx {
            let c = cm.cell(ix, iy);
            let p = s.cell_center(ix, iy);
            writeln!(
                w,
                "{:.4},{:.4},{},{},{},{}",
                p.x, p.y, c.height_dev, c.slope, c.curvature, c.total
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_unknowns() {
        let spec = GridSpec::new(Vec2::new(-0.37, 1.1), 0.02, 7, 3, 0.01).unwrap();
        let mut hm = HeightMap::from_fn(spec, |p| 0.3 * p.x - p.y);
        hm.set(2, 1, None);
        let mut buf = Vec::new();
        write_heightmap(&hm, &mut buf).unwrap();
        let back = read_heightmap(buf.as_slice()).unwrap();
        assert_eq!(back, hm);
    }

    #[test]
    fn rejects_wrong_count() {
        let text = "2 2 0.02 0.01 0 0\n0 0 0\n";
        assert!(read_heightmap(text.as_bytes()).is_err());
    }
}
