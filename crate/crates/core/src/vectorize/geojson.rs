//! Contour export as a GeoJSON `MultiPolygon`: one polygon per region, first
//! ring exterior, remaining rings holes, each ring closed.

use serde_json::{json, Value};

use super::{ContourSet, Orientation, Region, Ring, Space};
use crate::error::{Error, Result};

fn ring_coords(r: &Ring) -> Value {
    let mut pts: Vec<Value> = r.vertices.iter().map(|&(x, y)| json!([x, y])).collect();
    if let Some(first) = pts.first().cloned() {
        pts.push(first);
    }
    Value::Array(pts)
}

pub fn contours_to_geojson(cs: &ContourSet, slide_id: &str) -> Value {
    let polys: Vec<Value> = cs
        .regions
        .iter()
        .map(|reg| {
            let mut rings = vec![ring_coords(&reg.exterior)];
            rings.extend(reg.holes.iter().map(ring_coords));
            Value::Array(rings)
        })
        .collect();
    json!({
        "type": "MultiPolygon",
        "coordinates": polys,
        "slide_id": slide_id,
        "space": cs.space,
        "source_downsample": cs.source_downsample,
    })
}

fn parse_ring(v: &Value, orientation: Orientation) -> Result<Ring> {
    let bad = || Error::InvalidParam("malformed GeoJSON ring".into());
    let mut pts = v
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|p| {
            let a = p.as_array().filter(|a| a.len() >= 2).ok_or_else(bad)?;
            Ok((a[0].as_f64().ok_or_else(bad)?, a[1].as_f64().ok_or_else(bad)?))
        })
        .collect::<Result<Vec<_>>>()?;
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    if pts.len() < 3 {
        return Err(bad());
    }
    Ok(Ring::new(pts, orientation))
}

pub fn contours_from_geojson(v: &Value) -> Result<ContourSet> {
    if v.get("type").and_then(Value::as_str) != Some("MultiPolygon") {
        return Err(Error::InvalidParam("expected a GeoJSON MultiPolygon".into()));
    }
    let space = match v.get("space") {
        Some(s) => serde_json::from_value(s.clone())?,
        None => Space::Level0,
    };
    let source_downsample = v.get("source_downsample").and_then(Value::as_f64).unwrap_or(1.0);
    let polys = v
        .get("coordinates")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidParam("MultiPolygon without coordinates".into()))?;
    let regions = polys
        .iter()
        .map(|poly| {
            let rings = poly.as_array().filter(|r| !r.is_empty()).ok_or_else(|| Error::InvalidParam("empty polygon".into()))?;
            Ok(Region {
                exterior: parse_ring(&rings[0], Orientation::Exterior)?,
                holes: rings[1..].iter().map(|r| parse_ring(r, Orientation::Hole)).collect::<Result<_>>()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ContourSet { regions, space, source_downsample })
}
