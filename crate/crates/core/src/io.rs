//! Annotation JSON and image file IO.
//!
//! Annotation files follow a point+box layout:
//! `{"id": str, "width": int, "height": int, "instances": [{"cx", "cy", "w", "h"}]}`.
//! Areas are never stored; they are recomputed as `w * h` on load.

use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ImageGrid, InstanceAnnotation, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub instances: Vec<InstanceRecord>,
}

impl AnnotationFile {
    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            id: scene.id.clone(),
            width: scene.width(),
            height: scene.height(),
            instances: scene
                .annotations
                .iter()
                .map(|a| InstanceRecord {
                    cx: a.cx,
                    cy: a.cy,
                    w: a.w,
                    h: a.h,
                })
                .collect(),
        }
    }
}

/// A scene plus the number of annotation centers that had to be clamped into the grid.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub scene: Scene,
    pub clamped: usize,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, &e))
}

/// Writes pretty JSON with a trailing newline. This is the canonical on-disk form.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_annotations(path: &Path) -> Result<AnnotationFile> {
    read_json(path)
}

pub fn save_annotations(path: &Path, ann: &AnnotationFile) -> Result<()> {
    write_json(path, ann)
}

/// Decodes a PNG or PGM into a grid normalized to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            let data = img.to_luma8().into_raw();
            ImageGrid::new(w, h, 1, data.iter().map(|&v| v as f64 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let data = img.to_luma16().into_raw();
            ImageGrid::new(w, h, 1, data.iter().map(|&v| v as f64 / 65535.0).collect())
        }
        other => {
            let data = other.to_rgb8().into_raw();
            ImageGrid::new(w, h, 3, data.iter().map(|&v| v as f64 / 255.0).collect())
        }
    }
}

/// Encodes as 8-bit PNG (or PGM when the extension is `.pgm`).
pub fn save_image(path: &Path, img: &ImageGrid) -> Result<()> {
    let to_u8 = |v: &f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    let bytes: Vec<u8> = img.data().iter().map(to_u8).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = if img.channels() == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer size"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size"))
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    dynamic.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Builds a scene from a parsed annotation file and a decoded image.
///
/// Centers outside the grid are moved to the nearest border pixel center and counted.
pub fn scene_from_parts(ann: &AnnotationFile, image: ImageGrid) -> Result<LoadedScene> {
    if ann.width != image.width() || ann.height != image.height() {
        return Err(Error::DimensionMismatch {
            ann_width: ann.width,
            ann_height: ann.height,
            img_width: image.width(),
            img_height: image.height(),
        });
    }
    let (w, h) = (ann.width as f64, ann.height as f64);
    let mut clamped = 0;
    let mut annotations = Vec::with_capacity(ann.instances.len());
    for rec in &ann.instances {
        let mut cx = rec.cx;
        let mut cy = rec.cy;
        if !(0.0..w).contains(&cx) || !(0.0..h).contains(&cy) {
            clamped += 1;
            cx = cx.clamp(0.0, w - 0.5);
            cy = cy.clamp(0.0, h - 0.5);
        }
        annotations.push(InstanceAnnotation::new(cx, cy, rec.w, rec.h)?);
    }
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} annotation(s) into the grid", ann.id);
    }
    Ok(LoadedScene {
        scene: Scene::new(ann.id.clone(), image, annotations)?,
        clamped,
    })
}

pub fn load_scene(annotation_path: &Path, image_path: &Path) -> Result<LoadedScene> {
    let ann = load_annotations(annotation_path)?;
    let image = load_image(image_path)?;
    scene_from_parts(&ann, image)
}

/// Loads `anns/<id>.json` + `images/<id>.png` for each id under a dataset directory.
pub fn load_scenes(dir: &Path, ids: &[String]) -> Result<Vec<Scene>> {
    ids.iter()
        .map(|id| {
            load_scene(
                &dir.join("anns").join(format!("{id}.json")),
                &dir.join("images").join(format!("{id}.png")),
            )
            .map(|l| l.scene)
        })
        .collect()
}

/// Writes the scene's annotations and image; the inverse of [`load_scene`].
pub fn save_scene(scene: &Scene, annotation_path: &Path, image_path: &Path) -> Result<()> {
    save_annotations(annotation_path, &AnnotationFile::from_scene(scene))?;
    save_image(image_path, &scene.image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn blank_png(dir: &Path, w: usize, h: usize) -> std::path::PathBuf {
        let p = dir.join("img.png");
        save_image(&p, &ImageGrid::filled(w, h, 0.25).unwrap()).unwrap();
        p
    }

    #[test]
    fn two_instances_load_with_area() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(
            dir.path(),
            "a.json",
            r#"{"id":"s","width":20,"height":10,"instances":[
                {"cx":3.0,"cy":4.0,"w":2.0,"h":3.0},{"cx":10.5,"cy":5.0,"w":4.0,"h":4.0}]}"#,
        );
        let img = blank_png(dir.path(), 20, 10);
        let loaded = load_scene(&ann, &img).unwrap();
        assert_eq!(loaded.clamped, 0);
        let scales: Vec<f64> = loaded.scene.annotations.iter().map(|a| a.scale()).collect();
        assert_eq!(scales, vec![6.0, 16.0]);
    }

    #[test]
    fn zero_width_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(
            dir.path(),
            "a.json",
            r#"{"id":"s","width":20,"height":10,"instances":[{"cx":3.0,"cy":4.0,"w":0.0,"h":3.0}]}"#,
        );
        let img = blank_png(dir.path(), 20, 10);
        assert!(matches!(
            load_scene(&ann, &img),
            Err(Error::Invalid { .. })
        ));
    }

    #[test]
    fn malformed_json_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(dir.path(), "a.json", "{\n  \"id\": \"s\",\n  \"width\": ,\n}");
        let img = blank_png(dir.path(), 20, 10);
        match load_scene(&ann, &img) {
            Err(Error::Json { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected json error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_names_both_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(
            dir.path(),
            "a.json",
            r#"{"id":"s","width":30,"height":10,"instances":[]}"#,
        );
        let img = blank_png(dir.path(), 20, 10);
        let msg = load_scene(&ann, &img).unwrap_err().to_string();
        assert!(msg.contains("30x10") && msg.contains("20x10"), "{msg}");
    }

    #[test]
    fn outside_centers_are_clamped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(
            dir.path(),
            "a.json",
            r#"{"id":"s","width":20,"height":10,"instances":[
                {"cx":-1.0,"cy":4.0,"w":2.0,"h":2.0},{"cx":5.0,"cy":10.0,"w":2.0,"h":2.0},
                {"cx":5.0,"cy":5.0,"w":2.0,"h":2.0}]}"#,
        );
        let img = blank_png(dir.path(), 20, 10);
        let loaded = load_scene(&ann, &img).unwrap();
        assert_eq!(loaded.clamped, 2);
        assert_eq!(loaded.scene.annotations[0].cx, 0.0);
        assert_eq!(loaded.scene.annotations[1].cy, 9.5);
    }

    #[test]
    fn canonical_annotation_file_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let ann = AnnotationFile {
            id: "s".into(),
            width: 8,
            height: 8,
            instances: vec![InstanceRecord {
                cx: 1.5,
                cy: 2.25,
                w: 3.0,
                h: 1.0,
            }],
        };
        let p = dir.path().join("a.json");
        save_annotations(&p, &ann).unwrap();
        let first = fs::read(&p).unwrap();
        let reloaded = load_annotations(&p).unwrap();
        save_annotations(&p, &reloaded).unwrap();
        assert_eq!(first, fs::read(&p).unwrap());
    }

    #[test]
    fn pgm_and_rgb_png_decode() {
        let dir = tempfile::tempdir().unwrap();
        let pgm = dir.path().join("g.pgm");
        fs::write(&pgm, b"P5\n2 1\n255\n\x00\xff").unwrap();
        let g = load_image(&pgm).unwrap();
        assert_eq!((g.width(), g.height(), g.channels()), (2, 1, 1));
        assert_eq!(g.data(), &[0.0, 1.0]);

        let rgb = ImageGrid::new(1, 1, 3, vec![1.0, 0.0, 51.0 / 255.0]).unwrap();
        let p = dir.path().join("c.png");
        save_image(&p, &rgb).unwrap();
        assert_eq!(load_image(&p).unwrap(), rgb);
    }
}
