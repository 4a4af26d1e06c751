use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::RgbImage;

use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// A decoded frame with its index in the source video.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub image: RgbImage,
}

/// Decodes an in-memory encoded image (PNG/JPEG).
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::input("<memory>", e.to_string()))
}

fn open_image(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::input(path, e.to_string()))
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Sort key for numbered frame files: the last run of digits in the stem,
/// then the full name.
fn frame_sort_key(path: &Path) -> (u64, String) {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    (digits.parse().unwrap_or(u64::MAX), stem.to_string())
}

fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::input(dir, e.to_string()))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_file() && has_image_extension(&path) {
            files.push(path);
        }
    }
    files.sort_by_cached_key(|p| frame_sort_key(p));
    Ok(files)
}

/// Decodes a frame source in temporal order, keeping every `stride`-th frame.
///
/// Accepts a directory of numbered image files, a Y4M file, a single image,
/// or any other container when an `ffmpeg` executable is available.
pub fn decode_frames(source: impl AsRef<Path>, stride: usize) -> Result<Vec<Frame>> {
    let source = source.as_ref();
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if source.is_dir() {
        return list_frame_files(source)?
            .iter()
            .enumerate()
            .step_by(stride)
            .map(|(index, p)| Ok(Frame { index, image: open_image(p)? }))
            .collect();
    }
    if !source.is_file() {
        return Err(Error::input(source, "no such file or directory"));
    }
    let ext = source
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    if ext == "y4m" {
        decode_y4m(source, stride)
    } else if has_image_extension(source) {
        Ok(vec![Frame { index: 0, image: open_image(source)? }])
    } else {
        decode_with_ffmpeg(source, stride)
    }
}

fn yuv_to_rgb(y: u8, u: u8, v: u8) -> [u8; 3] {
    let y = f32::from(y);
    let u = f32::from(u) - 128.0;
    let v = f32::from(v) - 128.0;
    let c = |x: f32| x.round().clamp(0.0, 255.0) as u8;
    [c(y + 1.402 * v), c(y - 0.344_136 * u - 0.714_136 * v), c(y + 1.772 * u)]
}

fn decode_y4m(path: &Path, stride: usize) -> Result<Vec<Frame>> {
    let file = fs::File::open(path).map_err(|e| Error::input(path, e.to_string()))?;
    let mut dec = y4m::decode(BufReader::new(file)).map_err(|e| Error::input(path, format!("{e:?}")))?;
    if dec.get_bit_depth() != 8 {
        return Err(Error::input(path, "only 8-bit Y4M is supported"));
    }
    let (w, h) = (dec.get_width(), dec.get_height());
    let (sx, sy) = match dec.get_colorspace() {
        y4m::Colorspace::C444 => (1, 1),
        y4m::Colorspace::C422 => (2, 1),
        y4m::Colorspace::Cmono => (0, 0),
        _ => (2, 2),
    };
    let cw = if sx == 0 { 0 } else { w.div_ceil(sx) };
    let mut frames = Vec::new();
    let mut index = 0usize;
    loop {
        let frame = match dec.read_frame() {
            Ok(f) => f,
            Err(y4m::Error::EOF) => break,
            Err(e) => return Err(Error::input(path, format!("frame {index}: {e:?}"))),
        };
        if index % stride == 0 {
            let (yp, up, vp) = (frame.get_y_plane(), frame.get_u_plane(), frame.get_v_plane());
            let image = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                let luma = yp[y * w + x];
                let rgb = if sx == 0 {
                    [luma; 3]
                } else {
                    let ci = (y / sy) * cw + x / sx;
                    yuv_to_rgb(luma, up[ci], vp[ci])
                };
                image::Rgb(rgb)
            });
            frames.push(Frame { index, image });
        }
        index += 1;
    }
    Ok(frames)
}

fn decode_with_ffmpeg(path: &Path, stride: usize) -> Result<Vec<Frame>> {
    let tmp = std::env::temp_dir().join(format!(
        "idseq-frames-{}-{}",
        std::process::id(),
        path.file_stem().and_then(|s| s.to_str()).unwrap_or("video")
    ));
    fs::create_dir_all(&tmp)?;
    let status = Command::new("ffmpeg")
        .args(["-loglevel", "error", "-nostdin", "-i"])
        .arg(path)
        .arg(tmp.join("%06d.png"))
        .status();
    let result = match status {
        Ok(s) if s.success() => decode_frames(&tmp, stride),
        Ok(s) => Err(Error::input(path, format!("ffmpeg exited with {s}"))),
        Err(e) => Err(Error::input(path, format!("cannot decode container without ffmpeg: {e}"))),
    };
    let _ = fs::remove_dir_all(&tmp);
    result
}

/// Loads one image from a locator: a plain image path, or
/// `<frame source>#<index>` selecting a frame of a video/frame directory.
pub fn load_image_locator(locator: &str) -> Result<RgbImage> {
    if let Some((source, idx)) = locator.rsplit_once('#') {
        if let Ok(idx) = idx.parse::<usize>() {
            let source = Path::new(source);
            if source.is_dir() {
                let files = list_frame_files(source)?;
                let file = files
                    .get(idx)
                    .ok_or_else(|| Error::input(source, format!("frame {idx} out of range")))?;
                return open_image(file);
            }
            return decode_frames(source, 1)?
                .into_iter()
                .find(|f| f.index == idx)
                .map(|f| f.image)
                .ok_or_else(|| Error::input(source, format!("frame {idx} out of range")));
        }
    }
    open_image(Path::new(locator))
}
