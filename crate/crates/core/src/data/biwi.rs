//! BIWI-layout annotation files, camera calibration and image I/O.
//!
//! A dataset root holds one directory per sequence; each frame is a pair
//! `frame_XXXXX_rgb.png` / `frame_XXXXX_pose.txt`, and a sequence may carry
//! an `rgb.cal` calibration file.

use std::fs;
use std::path::{Path, PathBuf};

use super::geometry::{determinant, euler_to_matrix, matrix_to_euler, orthonormality_error, orthonormalize, Mat3};
use super::Sample;
use crate::codec::HeadAnnotation;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rotation tolerance kept in a parsed pose; larger drift is repaired.
pub const ORTHO_KEEP: f64 = 1e-3;
/// Rotation drift beyond which a pose file is rejected.
pub const ORTHO_REJECT: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiwiPose {
    pub rotation: Mat3<f64>,
    /// Millimetres, camera frame.
    pub translation: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Nominal Kinect RGB camera at 640x480, used when a sequence has no
    /// calibration file.
    pub const KINECT_RGB: Intrinsics = Intrinsics { fx: 517.679, fy: 517.679, cx: 320.0, cy: 240.5 };
}

fn format_err(file: &str, line: usize, detail: impl Into<String>) -> Error {
    Error::Format { location: format!("{file}:{line}"), detail: detail.into() }
}

/// Rows of numbers from non-blank lines, with their 1-based line numbers.
fn numeric_rows(text: &str, file: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(tokens.len());
        for (j, tok) in tokens.iter().enumerate() {
            let v: f64 = tok
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| format_err(file, i + 1, format!("token {} {tok:?} is not a finite number", j + 1)))?;
            row.push(v);
        }
        rows.push((i + 1, row));
    }
    Ok(rows)
}

fn expect_shape(rows: &[(usize, Vec<f64>)], widths: &[usize], file: &str) -> Result<()> {
    let total: usize = rows.iter().map(|r| r.1.len()).sum();
    let want: usize = widths.iter().sum();
    for (k, &w) in widths.iter().enumerate() {
        match rows.get(k) {
            Some((line, r)) if r.len() != w => {
                return Err(format_err(file, *line, format!("expected {w} numbers on this row, found {} ({total} of {want} in file)", r.len())))
            }
            None => {
                let line = rows.last().map_or(0, |r| r.0);
                return Err(format_err(file, line, format!("file ends after {total} of {want} numbers")));
            }
            _ => {}
        }
    }
    if let Some((line, _)) = rows.get(widths.len()) {
        return Err(format_err(file, *line, format!("unexpected data after {want} numbers ({total} in file)")));
    }
    Ok(())
}

/// Parse a `*_pose.txt` payload: three rotation rows then one translation row.
pub fn parse_biwi_pose(text: &str) -> Result<BiwiPose> {
    parse_biwi_pose_named(text, "pose")
}

pub fn parse_biwi_pose_named(text: &str, file: &str) -> Result<BiwiPose> {
    let rows = numeric_rows(text, file)?;
    expect_shape(&rows, &[3, 3, 3, 3], file)?;
    let row = |k: usize| [rows[k].1[0], rows[k].1[1], rows[k].1[2]];
    let mut rotation = [row(0), row(1), row(2)];
    let drift = orthonormality_error(&rotation);
    if drift > ORTHO_REJECT {
        return Err(Error::DataIntegrity(format!("{file}: rotation is not orthonormal (max |RᵀR - I| = {drift:.3e})")));
    }
    if determinant(&rotation) <= 0.0 {
        return Err(Error::DataIntegrity(format!("{file}: rotation has non-positive determinant")));
    }
    if drift > ORTHO_KEEP {
        rotation = orthonormalize(&rotation);
    }
    Ok(BiwiPose { rotation, translation: row(3) })
}

pub fn format_biwi_pose(pose: &BiwiPose) -> String {
    let mut s = String::new();
    for r in &pose.rotation {
        s.push_str(&format!("{} {} {} \n", r[0], r[1], r[2]));
    }
    let t = pose.translation;
    s.push_str(&format!("\n{} {} {} \n", t[0], t[1], t[2]));
    s
}

/// Parse an `rgb.cal` file: 3x3 intrinsic matrix, 4 distortion
/// coefficients, 3x3 rotation, translation. Only the intrinsics are used.
pub fn parse_calibration(text: &str) -> Result<Intrinsics> {
    let rows = numeric_rows(text, "rgb.cal")?;
    expect_shape(&rows, &[3, 3, 3, 4, 3, 3, 3, 3], "rgb.cal")?;
    let k = |r: usize, c: usize| rows[r].1[c];
    let intr = Intrinsics { fx: k(0, 0), fy: k(1, 1), cx: k(0, 2), cy: k(1, 2) };
    if !(intr.fx > 0.0 && intr.fy > 0.0) {
        return Err(Error::DataIntegrity(format!("rgb.cal: focal lengths must be positive, got {} {}", intr.fx, intr.fy)));
    }
    Ok(intr)
}

pub fn format_calibration(k: &Intrinsics) -> String {
    format!(
        "{} 0 {} \n0 {} {} \n0 0 1 \n\n0 0 0 0 \n\n1 0 0 \n0 1 0 \n0 0 1 \n\n0 0 0 \n",
        k.fx, k.cx, k.fy, k.cy
    )
}

/// Pinhole projection of a camera-frame point (mm) to pixels.
pub fn project_center(t: [f64; 3], k: &Intrinsics) -> Result<(f64, f64)> {
    if !(t[2] > 0.0) {
        return Err(Error::Geometry(format!("point depth {} is not in front of the camera", t[2])));
    }
    Ok((k.fx * t[0] / t[2] + k.cx, k.fy * t[1] / t[2] + k.cy))
}

/// Decode a PNG or PPM into a `[3, H, W]` tensor in `[0, 1]`.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match img.format() {
        Some(image::ImageFormat::Png | image::ImageFormat::Pnm) => {}
        other => {
            return Err(Error::Format { location: path.display().to_string(), detail: format!("unsupported image format {other:?}") })
        }
    }
    let rgb = img
        .decode()
        .map_err(|e| Error::Format { location: path.display().to_string(), detail: e.to_string() })?
        .to_rgb8();
    Ok(rgb_to_tensor(&rgb))
}

fn rgb_to_tensor<T: Scalar>(rgb: &image::RgbImage) -> Tensor<T> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![T::zero(); 3 * h * w];
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = T::lit(p.0[c] as f64 / 255.0);
        }
    }
    Tensor::from_vec(vec![3, h, w], data).expect("sizes match")
}

pub fn tensor_to_rgb<T: Scalar>(image: &Tensor<T>) -> Result<image::RgbImage> {
    let (h, w) = match image.shape() {
        &[3, h, w] => (h, w),
        s => return Err(Error::shape("image", format!("expected [3, H, W], got {s:?}"))),
    };
    let d = image.data();
    Ok(image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| (d[(c * h + y as usize) * w + x as usize].as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    }))
}

pub fn save_png<T: Scalar>(image: &Tensor<T>, path: &Path) -> Result<()> {
    tensor_to_rgb(image)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Format { location: path.display().to_string(), detail: e.to_string() })
}

/// Bilinear resize of a `[3, H, W]` image; a no-op at the same size.
pub fn resize_image<T: Scalar>(image: &Tensor<T>, w: usize, h: usize) -> Result<Tensor<T>> {
    if image.shape() == [3, h, w] {
        return Ok(image.clone());
    }
    let rgb = tensor_to_rgb(image)?;
    Ok(rgb_to_tensor(&image::imageops::resize(&rgb, w as u32, h as u32, image::imageops::FilterType::Triangle)))
}

/// Geometry needed to move between image pixels and heatmap cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layout {
    pub input_w: usize,
    pub input_h: usize,
    pub stride: usize,
    /// Used for sequences without `rgb.cal`.
    pub intrinsics: Intrinsics,
}

impl Layout {
    pub fn heatmap(&self) -> (usize, usize) {
        (self.input_h / self.stride, self.input_w / self.stride)
    }
}

/// Depth at which exported synthetic heads are placed.
pub const EXPORT_DEPTH_MM: f64 = 1000.0;

fn frame_stem(i: usize) -> String {
    format!("frame_{i:05}")
}

/// Write samples as sequence `01` of a BIWI-layout dataset whose camera has
/// intrinsics `k`; returns the written paths in order.
pub fn export_dataset<T: Scalar>(root: &Path, samples: &[Sample<T>], stride: usize, k: &Intrinsics) -> Result<Vec<PathBuf>> {
    let seq = root.join("01");
    fs::create_dir_all(&seq).map_err(|e| Error::io(&seq, e))?;
    let mut written = Vec::new();
    let cal = seq.join("rgb.cal");
    fs::write(&cal, format_calibration(k)).map_err(|e| Error::io(&cal, e))?;
    written.push(cal);
    for (i, s) in samples.iter().enumerate() {
        let png = seq.join(format!("{}_rgb.png", frame_stem(i)));
        save_png(&s.image, &png)?;
        let u = s.annotation.center_x.as_f64() * stride as f64;
        let v = s.annotation.center_y.as_f64() * stride as f64;
        let z = EXPORT_DEPTH_MM;
        let a = s.annotation.angles;
        let pose = BiwiPose {
            rotation: euler_to_matrix(crate::codec::AngleTriple::new(a.pitch.as_f64(), a.yaw.as_f64(), a.roll.as_f64())),
            translation: [(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z],
        };
        let txt = seq.join(format!("{}_pose.txt", frame_stem(i)));
        fs::write(&txt, format_biwi_pose(&pose)).map_err(|e| Error::io(&txt, e))?;
        written.push(png);
        written.push(txt);
    }
    Ok(written)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Frames of a BIWI-layout dataset in (sequence, frame) order.
pub fn list_frames(root: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    if !root.is_dir() {
        return Err(Error::MissingPath(root.to_path_buf()));
    }
    let mut frames = Vec::new();
    for seq in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        for png in sorted_entries(&seq)? {
            let name = png.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(stem) = name.strip_suffix("_rgb.png") {
                let pose = seq.join(format!("{stem}_pose.txt"));
                if !pose.exists() {
                    return Err(Error::MissingPath(pose));
                }
                frames.push((png, pose));
            }
        }
    }
    Ok(frames)
}

/// Load every frame under `root`, resizing images to the layout's input size.
pub fn load_dataset<T: Scalar>(root: &Path, layout: &Layout) -> Result<Vec<Sample<T>>> {
    let frames = list_frames(root)?;
    if frames.is_empty() {
        return Err(Error::Usage(format!("no frame_*_rgb.png files under {}", root.display())));
    }
    let mut samples = Vec::with_capacity(frames.len());
    let mut cal_cache: Option<(PathBuf, Intrinsics)> = None;
    for (png, pose_path) in frames {
        let seq = png.parent().expect("frame has a parent").to_path_buf();
        let k = match &cal_cache {
            Some((dir, k)) if *dir == seq => *k,
            _ => {
                let cal = seq.join("rgb.cal");
                let k = if cal.exists() {
                    parse_calibration(&fs::read_to_string(&cal).map_err(|e| Error::io(&cal, e))?)?
                } else {
                    layout.intrinsics
                };
                cal_cache = Some((seq.clone(), k));
                k
            }
        };
        let text = fs::read_to_string(&pose_path).map_err(|e| Error::io(&pose_path, e))?;
        let pose = parse_biwi_pose_named(&text, &pose_path.display().to_string())?;
        let angles = matrix_to_euler(&pose.rotation)?;
        let (u, v) = project_center(pose.translation, &k)?;

        let image = load_image::<T>(&png)?;
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let (sx, sy) = (layout.input_w as f64 / w as f64, layout.input_h as f64 / h as f64);
        let image = resize_image(&image, layout.input_w, layout.input_h)?;
        let ann = HeadAnnotation {
            center_x: T::lit(u * sx / layout.stride as f64),
            center_y: T::lit(v * sy / layout.stride as f64),
            angles: crate::codec::AngleTriple::new(T::lit(angles.pitch), T::lit(angles.yaw), T::lit(angles.roll)),
        };
        let (hh, hw) = layout.heatmap();
        let inside = |c: T, n: usize| c >= T::zero() && c <= T::lit((n - 1) as f64);
        if !inside(ann.center_x, hw) || !inside(ann.center_y, hh) {
            return Err(Error::Annotation(format!(
                "{}: head center ({:.2}, {:.2}) falls outside the {hw}x{hh} heatmap",
                pose_path.display(),
                ann.center_x,
                ann.center_y
            )));
        }
        samples.push(Sample { image, annotation: ann });
    }
    Ok(samples)
}
