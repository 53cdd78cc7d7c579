//! Raster scenes with per-pixel polygon annotations.
//!
//! A raster is a JSON header next to a raw little-endian `f32` file holding
//! the channels one after another (channel-major). Annotations are a JSON
//! header pointing at an `i32` polygon-id grid, an `f32` border-distance grid
//! in meters and a polygon table. Negative ids mark pixels outside any
//! polygon. Relative file names resolve against the header's directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PatchSample, CHANNELS};
use crate::error::{Error, Result};
use crate::label_codec::{read_polygon_table, write_polygon_table, PolygonRecord};
use crate::net::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixel_spacing_m: f64,
    pub data_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationHeader {
    pub width: usize,
    pub height: usize,
    pub polygon_ids_file: String,
    pub border_distance_file: String,
    pub polygons_file: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRaster {
    pub width: usize,
    pub height: usize,
    pub pixel_spacing_m: f64,
    /// `3 * height * width` values, channel-major then row-major.
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneAnnotations {
    pub width: usize,
    pub height: usize,
    pub polygon_ids: Vec<i32>,
    pub border_distance: Vec<f32>,
    pub polygons: Vec<PolygonRecord>,
}

fn sibling(header: &Path, name: &str) -> PathBuf {
    header.parent().unwrap_or(Path::new(".")).join(name)
}

fn stem(header: &Path) -> String {
    header
        .file_stem()
        .map_or_else(|| "scene".into(), |s| s.to_string_lossy().into_owned())
}

fn read_words(path: &Path, expected: usize) -> Result<Vec<[u8; 4]>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format(format!(
            "{}: {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect())
}

fn read_header<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

impl SceneRaster {
    pub fn load(header_path: &Path) -> Result<Self> {
        let h: RasterHeader = read_header(header_path)?;
        if h.channels != CHANNELS {
            return Err(Error::ChannelCount(h.channels));
        }
        let words = read_words(&sibling(header_path, &h.data_file), CHANNELS * h.width * h.height)?;
        Ok(Self {
            width: h.width,
            height: h.height,
            pixel_spacing_m: h.pixel_spacing_m,
            data: words.into_iter().map(f32::from_le_bytes).collect(),
        })
    }

    /// Writes the header to `header_path` and the pixels to `<stem>.f32`.
    pub fn save(&self, header_path: &Path) -> Result<()> {
        let data_file = format!("{}.f32", stem(header_path));
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(sibling(header_path, &data_file), bytes)?;
        let header = RasterHeader {
            width: self.width,
            height: self.height,
            channels: CHANNELS,
            pixel_spacing_m: self.pixel_spacing_m,
            data_file,
        };
        std::fs::write(header_path, serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }
}

impl SceneAnnotations {
    pub fn load(header_path: &Path) -> Result<Self> {
        let h: AnnotationHeader = read_header(header_path)?;
        let n = h.width * h.height;
        let ids = read_words(&sibling(header_path, &h.polygon_ids_file), n)?;
        let border = read_words(&sibling(header_path, &h.border_distance_file), n)?;
        Ok(Self {
            width: h.width,
            height: h.height,
            polygon_ids: ids.into_iter().map(i32::from_le_bytes).collect(),
            border_distance: border.into_iter().map(f32::from_le_bytes).collect(),
            polygons: read_polygon_table(&sibling(header_path, &h.polygons_file))?,
        })
    }

    /// Writes the header plus `<stem>.ids.i32`, `<stem>.border.f32` and
    /// `<stem>.polygons.json`.
    pub fn save(&self, header_path: &Path) -> Result<()> {
        let s = stem(header_path);
        let header = AnnotationHeader {
            width: self.width,
            height: self.height,
            polygon_ids_file: format!("{s}.ids.i32"),
            border_distance_file: format!("{s}.border.f32"),
            polygons_file: format!("{s}.polygons.json"),
        };
        let ids: Vec<u8> = self.polygon_ids.iter().flat_map(|v| v.to_le_bytes()).collect();
        let border: Vec<u8> = self.border_distance.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(sibling(header_path, &header.polygon_ids_file), ids)?;
        std::fs::write(sibling(header_path, &header.border_distance_file), border)?;
        write_polygon_table(&sibling(header_path, &header.polygons_file), &self.polygons)?;
        std::fs::write(header_path, serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }
}

/// Loads a scene and cuts it into patches; see [`extract_patches`].
pub fn ingest_scene(
    raster: &Path,
    annotations: &Path,
    patch: usize,
    pixel_spacing_m: f64,
) -> Result<Vec<PatchSample>> {
    let r = SceneRaster::load(raster)?;
    if (r.pixel_spacing_m - pixel_spacing_m).abs() > 1e-9 * pixel_spacing_m.abs().max(1.0) {
        return Err(Error::Format(format!(
            "raster pixel spacing {} m, expected {pixel_spacing_m} m",
            r.pixel_spacing_m
        )));
    }
    extract_patches(&r, &SceneAnnotations::load(annotations)?, patch)
}

/// Non-overlapping `patch x patch` tiles in row-major tile order. Edge
/// remainders are dropped. Each tile takes the polygon and border distance
/// found under its center pixel `(top + patch/2, left + patch/2)`; tiles
/// centered outside every polygon are skipped.
pub fn extract_patches(raster: &SceneRaster, ann: &SceneAnnotations, patch: usize) -> Result<Vec<PatchSample>> {
    let (w, h) = (raster.width, raster.height);
    if patch == 0 {
        return Err(Error::Format("patch size must be positive".into()));
    }
    if raster.data.len() != CHANNELS * w * h {
        return Err(Error::Format(format!("raster holds {} values for {w}x{h}", raster.data.len())));
    }
    if (ann.width, ann.height) != (w, h) {
        return Err(Error::Format(format!(
            "annotation grid {}x{} does not match raster {w}x{h}",
            ann.width, ann.height
        )));
    }
    if ann.polygon_ids.len() != w * h || ann.border_distance.len() != w * h {
        return Err(Error::Format("annotation grids have the wrong length".into()));
    }
    let table: HashMap<i64, &PolygonRecord> = ann.polygons.iter().map(|p| (p.polygon_id, p)).collect();
    let mut out = Vec::new();
    for top in (0..h / patch).map(|t| t * patch) {
        for left in (0..w / patch).map(|t| t * patch) {
            let center = (top + patch / 2) * w + left + patch / 2;
            let id = ann.polygon_ids[center];
            if id < 0 {
                continue;
            }
            let record = table
                .get(&i64::from(id))
                .ok_or_else(|| Error::Format(format!("polygon {id} missing from the table")))?;
            let mut pixels = Vec::with_capacity(CHANNELS * patch * patch);
            for ch in 0..CHANNELS {
                for row in top..top + patch {
                    let start = (ch * h + row) * w + left;
                    pixels.extend(raster.data[start..start + patch].iter().map(|v| f64::from(*v)));
                }
            }
            out.push(PatchSample::new(
                Tensor::new(vec![CHANNELS, patch, patch], pixels)?,
                record.egg.clone(),
                record.polygon_id,
                f64::from(ann.border_distance[center]),
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label_codec::EggCode;

    /// Left half polygon 1 (first-year ice), right half polygon 2 (water).
    fn two_polygons(w: usize, h: usize) -> (SceneRaster, SceneAnnotations) {
        let data = (0..CHANNELS * w * h).map(|i| i as f32).collect();
        let polygon_ids = (0..w * h).map(|i| if i % w < w / 2 { 1 } else { 2 }).collect();
        let raster = SceneRaster {
            width: w,
            height: h,
            pixel_spacing_m: 40.0,
            data,
        };
        let ann = SceneAnnotations {
            width: w,
            height: h,
            polygon_ids,
            border_distance: vec![2500.0; w * h],
            polygons: vec![
                PolygonRecord {
                    polygon_id: 1,
                    egg: EggCode::single(86, Some(99)),
                },
                PolygonRecord {
                    polygon_id: 2,
                    egg: EggCode::ice_free(),
                },
            ],
        };
        (raster, ann)
    }

    #[test]
    fn tiling_arithmetic() {
        let (r, a) = two_polygons(100, 100);
        assert_eq!(extract_patches(&r, &a, 50).unwrap().len(), 4);
        let (r, a) = two_polygons(110, 105);
        assert_eq!(extract_patches(&r, &a, 50).unwrap().len(), 4);
    }

    #[test]
    fn assigned_by_center_pixel() {
        // 12 wide, patch 8: the single tile covers columns 0..8, its center
        // column 4 is in the left polygon though columns 6..8 are not.
        let (r, a) = two_polygons(12, 8);
        let patches = extract_patches(&r, &a, 8).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].polygon_id, 1);
        assert_eq!(patches[0].labels.true_class(), 3);
        // Shift the border left of the center: now water.
        let mut a2 = a.clone();
        for row in 0..8 {
            a2.polygon_ids[row * 12 + 4] = 2;
        }
        assert_eq!(extract_patches(&r, &a2, 8).unwrap()[0].polygon_id, 2);
    }

    #[test]
    fn pixels_are_channel_major() {
        let (r, a) = two_polygons(4, 4);
        let p = extract_patches(&r, &a, 2).unwrap();
        assert_eq!(p.len(), 4);
        // Tile (0, 1): rows 0..2, columns 2..4 of each channel.
        assert_eq!(p[1].pixels.data(), &[2.0, 3.0, 6.0, 7.0, 18.0, 19.0, 22.0, 23.0, 34.0, 35.0, 38.0, 39.0]);
    }

    #[test]
    fn unlabeled_tiles_are_skipped() {
        let (r, mut a) = two_polygons(4, 4);
        a.polygon_ids = vec![-1; 16];
        assert!(extract_patches(&r, &a, 2).unwrap().is_empty());
        a.polygon_ids = vec![7; 16];
        assert!(matches!(extract_patches(&r, &a, 2), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (r, a) = two_polygons(100, 100);
        let rp = dir.path().join("scene.json");
        let ap = dir.path().join("labels.json");
        r.save(&rp).unwrap();
        a.save(&ap).unwrap();
        assert_eq!(SceneRaster::load(&rp).unwrap(), r);
        assert_eq!(SceneAnnotations::load(&ap).unwrap(), a);
        let patches = ingest_scene(&rp, &ap, 50, 40.0).unwrap();
        assert_eq!(patches.len(), 4);
        assert_eq!(patches, extract_patches(&r, &a, 50).unwrap());
        assert!(matches!(ingest_scene(&rp, &ap, 50, 80.0), Err(Error::Format(_))));

        let mut header: RasterHeader = serde_json::from_str(&std::fs::read_to_string(&rp).unwrap()).unwrap();
        header.channels = 2;
        std::fs::write(&rp, serde_json::to_string(&header).unwrap()).unwrap();
        assert!(matches!(ingest_scene(&rp, &ap, 50, 40.0), Err(Error::ChannelCount(2))));

        header.channels = 3;
        std::fs::write(&rp, serde_json::to_string(&header).unwrap()).unwrap();
        std::fs::write(dir.path().join("scene.f32"), [0u8; 10]).unwrap();
        assert!(matches!(ingest_scene(&rp, &ap, 50, 40.0), Err(Error::Format(_))));
        std::fs::write(&rp, "{not json").unwrap();
        assert!(matches!(SceneRaster::load(&rp), Err(Error::Format(_))));
    }
}
