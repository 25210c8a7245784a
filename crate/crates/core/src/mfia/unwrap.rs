use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{ensure, Result};
use crate::klfield::GeometrySpec;

/// How a scan sits relative to the corner.
///
/// For a curved scan the centre of curvature lies `radius` millimetres
/// above row 0 at column `apex_col`, so row 0 at the apex column is the
/// inner surface and depth grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CornerLayout {
    Flat,
    Curved { apex_col: f64 },
}

fn check_focus(geom: &GeometrySpec, focus_radius: f64) -> Result<()> {
    geom.validate()?;
    let outer = geom.radius + geom.thickness();
    ensure!(
        focus_radius >= geom.radius && focus_radius <= outer,
        Parameter,
        "focus radius {focus_radius} mm lies outside the laminate annulus [{}, {outer}]",
        geom.radius
    );
    Ok(())
}

fn resample(src: &GrayImage, map: impl Fn(f64, f64) -> (f64, f64)) -> Result<GrayImage> {
    let fill = src.mean();
    let [p1, p3] = src.pitch();
    GrayImage::from_fn(src.width(), src.height(), [p1, p3], |col, row| {
        let (c, r) = map(col as f64, row as f64);
        src.bilinear(c, r).unwrap_or(fill)
    })
}

/// Maps a scan of the curved corner onto a rectangle whose columns are arc
/// length measured at `focus_radius` and whose rows are radial depth below
/// the inner surface. Output keeps the input size and pitch; pixels with no
/// source data get the image mean.
pub fn unwrap_corner(
    img: &GrayImage,
    layout: CornerLayout,
    geom: &GeometrySpec,
    focus_radius: f64,
) -> Result<GrayImage> {
    let CornerLayout::Curved { apex_col } = layout else {
        return Ok(img.clone());
    };
    check_focus(geom, focus_radius)?;
    let [p1, p3] = img.pitch();
    let r0 = geom.radius;
    resample(img, |col, row| {
        let alpha = (col - apex_col) * p1 / focus_radius;
        let r = r0 + row * p3;
        let y = r * alpha.sin();
        let z = r * alpha.cos() - r0;
        (apex_col + y / p1, z / p3)
    })
}

/// Inverse of [`unwrap_corner`]: bends a flat scan around the corner.
pub fn wrap_corner(
    flat: &GrayImage,
    layout: CornerLayout,
    geom: &GeometrySpec,
    focus_radius: f64,
) -> Result<GrayImage> {
    let CornerLayout::Curved { apex_col } = layout else {
        return Ok(flat.clone());
    };
    check_focus(geom, focus_radius)?;
    let [p1, p3] = flat.pitch();
    let r0 = geom.radius;
    resample(flat, |col, row| {
        let y = (col - apex_col) * p1;
        let z = row * p3 + r0;
        let r = y.hypot(z);
        let alpha = y.atan2(z);
        (apex_col + alpha * focus_radius / p1, (r - r0) / p3)
    })
}
