//! 8-bit PNG / binary PNM (P5, P6) reading and writing, plus bilinear resizing.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Loads an 8-bit PNG, PPM (P6) or PGM (P5). Values are `byte / 255`;
/// color images get 3 channels, grayscale 1. Alpha is dropped.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<ImageTensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_image(&bytes)
}

/// Decodes an in-memory PNG or PNM file. The format is detected from the
/// leading magic bytes.
pub fn decode_image<T: Scalar>(bytes: &[u8]) -> Result<ImageTensor<T>> {
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else {
        Err(Error::UnsupportedFormat(
            "expected PNG or binary PPM/PGM (P5/P6) data".into(),
        ))
    }
}

fn decode_png<T: Scalar>(bytes: &[u8]) -> Result<ImageTensor<T>> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::MalformedImage(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::MalformedImage("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::MalformedImage(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "only 8-bit PNG is supported, got {:?}",
            info.bit_depth
        )));
    }
    let (height, width) = (info.height as usize, info.width as usize);
    if height == 0 || width == 0 {
        return Err(Error::EmptyImage);
    }
    let (stride, channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(Error::MalformedImage("palette was not expanded".into()))
        }
    };
    let row_bytes = info.line_size;
    interleaved_to_tensor(height, width, channels, |y, x, c| {
        buf[y * row_bytes + x * stride + c]
    })
}

fn decode_pnm<T: Scalar>(bytes: &[u8]) -> Result<ImageTensor<T>> {
    let channels = if bytes[1] == b'6' { 3 } else { 1 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        *field = read_pnm_number(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "only 8-bit PNM (maxval 255) is supported, got maxval {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::MalformedImage("truncated PNM header".into())),
    }
    if height == 0 || width == 0 {
        return Err(Error::EmptyImage);
    }
    let needed = height * width * channels;
    let raster = &bytes[pos..];
    if raster.len() < needed {
        return Err(Error::MalformedImage(format!(
            "PNM raster needs {needed} bytes, found {}",
            raster.len()
        )));
    }
    interleaved_to_tensor(height, width, channels, |y, x, c| {
        raster[(y * width + x) * channels + c]
    })
}

fn read_pnm_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::MalformedImage("truncated PNM header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedImage("bad number in PNM header".into()))
}

fn interleaved_to_tensor<T: Scalar>(
    height: usize,
    width: usize,
    channels: usize,
    byte_at: impl Fn(usize, usize, usize) -> u8,
) -> Result<ImageTensor<T>> {
    let scale = T::of(255.0);
    ImageTensor::from_fn(height, width, channels, |c, y, x| {
        T::of(byte_at(y, x, c) as f64) / scale
    })
}

/// Clamps to `[0, 1]` and rounds half up onto the byte grid. NaN maps to 0.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    let v = v.as_f64();
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes `img` as PNG (`.png`) or binary PNM (`.ppm`, `.pgm`, `.pnm`).
/// PNM output is P6 for 3 channels and P5 for 1 channel.
pub fn save_image<T: Scalar>(img: &ImageTensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "png" => encode_png(img)?,
        "ppm" | "pgm" | "pnm" => encode_pnm(img),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "cannot infer output format from extension `{other}`"
            )))
        }
    };
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn interleaved_bytes<T: Scalar>(img: &ImageTensor<T>) -> Vec<u8> {
    let (h, w, c) = img.shape();
    let mut out = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quantize(img.get(ch, y, x)));
            }
        }
    }
    out
}

pub fn encode_png<T: Scalar>(img: &ImageTensor<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        encoder.set_color(if img.channels() == 3 {
            png::ColorType::Rgb
        } else {
            png::ColorType::Grayscale
        });
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::MalformedImage(e.to_string()))?;
        writer
            .write_image_data(&interleaved_bytes(img))
            .map_err(|e| Error::MalformedImage(e.to_string()))?;
    }
    Ok(out)
}

pub fn encode_pnm<T: Scalar>(img: &ImageTensor<T>) -> Vec<u8> {
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(interleaved_bytes(img));
    out
}

/// Downscales so the longer edge equals `max_edge`, preserving the aspect
/// ratio to the nearest pixel. Images already within bounds are returned
/// unchanged.
pub fn resize_longest_edge<T: Scalar>(
    img: &ImageTensor<T>,
    max_edge: usize,
) -> Result<ImageTensor<T>> {
    if max_edge == 0 {
        return Err(Error::InvalidParam("max_edge must be at least 1".into()));
    }
    if img.height().max(img.width()) <= max_edge {
        return Ok(img.clone());
    }
    resize_to_longest_edge(img, max_edge)
}

/// Rescales (up or down) so the longer edge equals `edge`.
pub fn resize_to_longest_edge<T: Scalar>(
    img: &ImageTensor<T>,
    edge: usize,
) -> Result<ImageTensor<T>> {
    if edge == 0 {
        return Err(Error::InvalidParam("edge must be at least 1".into()));
    }
    let (h, w) = (img.height(), img.width());
    let long = h.max(w);
    if long == edge {
        return Ok(img.clone());
    }
    let scaled =
        |short: usize| ((short as f64 * edge as f64 / long as f64).round() as usize).max(1);
    let (nh, nw) = if h >= w {
        (edge, scaled(w))
    } else {
        (scaled(h), edge)
    };
    resize_bilinear(img, nh, nw)
}

/// Bilinear resampling with half-pixel-centered coordinates and edge clamping.
pub fn resize_bilinear<T: Scalar>(
    img: &ImageTensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<ImageTensor<T>> {
    let (h, w, c) = img.shape();
    let ys = sample_positions(h, out_h);
    let xs = sample_positions(w, out_w);
    ImageTensor::from_fn(out_h, out_w, c, |ch, y, x| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let (fy, fx) = (T::of(fy), T::of(fx));
        let top = img.get(ch, y0, x0) * (T::one() - fx) + img.get(ch, y0, x1) * fx;
        let bottom = img.get(ch, y1, x0) * (T::one() - fx) + img.get(ch, y1, x1) * fx;
        top * (T::one() - fy) + bottom * fy
    })
}

fn sample_positions(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}
