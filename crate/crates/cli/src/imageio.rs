//! Images as `h × w × c` tensors on `[0, 1]`, video as `h × w × c × frames`.

use std::fs;
use std::path::{Path, PathBuf};

use datc::random::RngStream;
use datc::synth::sample_observed_flags;
use datc::tensor::{DenseTensor, ObservationMask, TensorShape};
use image::{ColorType, DynamicImage, GrayImage, RgbImage};

use crate::error::{CliError, CliResult};

/// Substream of the run seed used for random pixel masks.
const MASK_STREAM: u64 = 7;

pub fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "ppm" | "pgm" | "pnm")
    )
}

fn open(path: &Path) -> CliResult<DynamicImage> {
    image::open(path).map_err(|e| CliError::input(path.display(), e))
}

fn is_gray(color: ColorType) -> bool {
    matches!(color, ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16)
}

/// Loads an 8-bit image; grayscale inputs become a single channel.
pub fn load_image(path: &Path) -> CliResult<DenseTensor> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = if is_gray(img.color()) {
        (1, img.to_luma8().into_raw())
    } else {
        (3, img.to_rgb8().into_raw())
    };
    let shape = TensorShape::new(vec![h, w, channels]).map_err(|e| CliError::input(path.display(), e))?;
    let values = bytes.iter().map(|&b| b as f64 / 255.0).collect();
    DenseTensor::new(shape, values).map_err(|e| CliError::input(path.display(), e))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an `h × w × c` tensor (`c` = 1 or 3) as PNG, clamping to `[0, 1]`.
pub fn save_image(path: &Path, tensor: &DenseTensor) -> CliResult<()> {
    let dims = tensor.dims();
    if dims.len() != 3 {
        return Err(CliError::Runtime(format!(
            "cannot write a {}-mode tensor as an image",
            dims.len()
        )));
    }
    let (h, w, c) = (dims[0] as u32, dims[1] as u32, dims[2]);
    let bytes: Vec<u8> = tensor.values().iter().map(|&v| quantize(v)).collect();
    let result = match c {
        1 => GrayImage::from_raw(w, h, bytes).map(|img| img.save(path)),
        3 => RgbImage::from_raw(w, h, bytes).map(|img| img.save(path)),
        _ => return Err(CliError::Runtime(format!("cannot write {c} channels as an image"))),
    };
    result
        .expect("buffer length matches the tensor shape")
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Image files in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::input(dir.display(), e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::input(dir.display(), e))?.path();
        if path.is_file() && is_image_file(&path) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Input(format!("{}: no PNG/PPM frames", dir.display())));
    }
    Ok(paths)
}

/// Stacks equally sized frames into `h × w × c × frames`.
pub fn stack_frames(frames: &[DenseTensor]) -> CliResult<DenseTensor> {
    let first = frames.first().ok_or_else(|| CliError::Input("no frames".into()))?;
    let dims = first.dims().to_vec();
    if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims.as_slice()) {
        return Err(CliError::Input(format!(
            "frame {i} has shape {:?}, frame 0 has {:?}",
            f.dims(),
            dims
        )));
    }
    let count = frames.len();
    let shape = TensorShape::new(vec![dims[0], dims[1], dims[2], count]).map_err(|e| CliError::Input(e.to_string()))?;
    let mut values = vec![0.0; first.len() * count];
    for (t, frame) in frames.iter().enumerate() {
        for (p, &v) in frame.values().iter().enumerate() {
            values[p * count + t] = v;
        }
    }
    DenseTensor::new(shape, values).map_err(|e| CliError::Runtime(e.to_string()))
}

/// Frame `t` of an `h × w × c × frames` tensor.
pub fn frame(video: &DenseTensor, t: usize) -> CliResult<DenseTensor> {
    let dims = video.dims();
    let count = dims[3];
    let shape = TensorShape::new(dims[..3].to_vec()).map_err(|e| CliError::Runtime(e.to_string()))?;
    let values = video.values().iter().skip(t).step_by(count).copied().collect();
    DenseTensor::new(shape, values).map_err(|e| CliError::Runtime(e.to_string()))
}

/// Parses `rrggbb` (optionally prefixed with `#`).
pub fn parse_marker(s: &str) -> CliResult<[u8; 3]> {
    let hex = s.trim_start_matches('#');
    let bad = || CliError::Usage(format!("marker colour must be hex rrggbb, got {s:?}"));
    if hex.len() != 6 {
        return Err(bad());
    }
    let mut rgb = [0u8; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        *out = u8::from_str_radix(&hex[2 * c..2 * c + 2], 16).map_err(|_| bad())?;
    }
    Ok(rgb)
}

/// Per-pixel missing flags of an `h × w × c` image whose pixels equal `marker`.
pub fn marker_pixels(img: &DenseTensor, marker: [u8; 3]) -> CliResult<Vec<bool>> {
    let c = img.dims()[2];
    let target: Vec<u8> = if c == 1 {
        if marker[0] != marker[1] || marker[1] != marker[2] {
            return Err(CliError::Usage("grayscale input needs a gray marker colour".into()));
        }
        vec![marker[0]]
    } else {
        marker.to_vec()
    };
    Ok(img
        .values()
        .chunks_exact(c)
        .map(|px| px.iter().zip(&target).all(|(&v, &m)| quantize(v) == m))
        .collect())
}

/// Per-pixel missing flags from a mask image: non-black pixels are missing.
pub fn mask_image_pixels(path: &Path, h: usize, w: usize) -> CliResult<Vec<bool>> {
    let img = open(path)?.to_luma8();
    if img.height() as usize != h || img.width() as usize != w {
        return Err(CliError::Input(format!(
            "{}: mask is {}x{}, image is {w}x{h}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    Ok(img.into_raw().iter().map(|&v| v > 0).collect())
}

/// Exactly `round((1 - missing) P)` of the `P` pixel positions stay observed.
pub fn random_pixels(pixels: usize, missing: f64, seed: u64) -> CliResult<Vec<bool>> {
    let mut rng = RngStream::new(seed).substream(MASK_STREAM);
    let observed = sample_observed_flags(pixels, missing, &mut rng).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(observed.into_iter().map(|o| !o).collect())
}

/// Expands per-pixel missing flags (pixel-major, frame fastest) to an
/// observation mask over `shape`, where channels of a pixel share a flag.
pub fn pixel_mask(shape: &TensorShape, missing: &[bool]) -> CliResult<ObservationMask> {
    let dims = shape.dims();
    let channels = dims[2];
    let frames: usize = dims[3..].iter().product();
    let pixels = dims[0] * dims[1];
    if missing.len() != pixels * frames {
        return Err(CliError::Input(format!(
            "{} mask flags for {pixels} pixels x {frames} frames",
            missing.len()
        )));
    }
    let mut flags = Vec::with_capacity(shape.len());
    for p in 0..pixels {
        for _ in 0..channels {
            for t in 0..frames {
                flags.push(!missing[p * frames + t]);
            }
        }
    }
    ObservationMask::new(shape.clone(), flags).map_err(|e| CliError::Runtime(e.to_string()))
}

/// Observations with missing entries zeroed, for display.
pub fn masked(tensor: &DenseTensor, mask: &ObservationMask) -> CliResult<DenseTensor> {
    let values = tensor
        .values()
        .iter()
        .zip(mask.flags())
        .map(|(&v, &o)| if o { v } else { 0.0 })
        .collect();
    DenseTensor::new(tensor.shape().clone(), values).map_err(|e| CliError::Runtime(e.to_string()))
}
