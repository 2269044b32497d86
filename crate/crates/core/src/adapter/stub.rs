//! Lightweight stand-ins for the model-backed tools. They are deterministic
//! functions of their inputs, so sessions using them replay exactly.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::worker::{HandlerError, HandlerOutput, Worker};
use super::AdapterRequest;
use crate::raster::{self, Raster};

fn input(req: &AdapterRequest, i: usize) -> Result<Raster, HandlerError> {
    let p = req
        .input_paths
        .get(i)
        .ok_or_else(|| HandlerError::new("bad_args", format!("missing input path #{}", i + 1)))?;
    Raster::load(Path::new(p)).map_err(|e| HandlerError::new("bad_input", format!("{p}: {e}")))
}

fn real(req: &AdapterRequest, key: &str, default: f64) -> Result<f64, HandlerError> {
    match req.args.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| HandlerError::new("bad_args", format!("`{key}` must be a number"))),
    }
}

fn text<'a>(req: &'a AdapterRequest, key: &str) -> Option<&'a str> {
    req.args.get(key).and_then(|v| v.as_str())
}

fn out_path(req: &AdapterRequest, ext: &str) -> PathBuf {
    let dir = req
        .input_paths
        .first()
        .and_then(|p| Path::new(p).parent())
        .map(Path::to_path_buf)
        .unwrap_or_else(std::env::temp_dir);
    let safe: String = req
        .request_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    dir.join(format!("{safe}.{}.{ext}", req.tool))
}

fn write_raster(req: &AdapterRequest, r: &Raster) -> Result<HandlerOutput, HandlerError> {
    let p = out_path(req, "png");
    r.save_png(&p).map_err(|e| HandlerError::new("io", e.to_string()))?;
    Ok(HandlerOutput::path(p.to_string_lossy()))
}

fn write_text(req: &AdapterRequest, t: &str) -> Result<HandlerOutput, HandlerError> {
    let p = out_path(req, "txt");
    std::fs::write(&p, t).map_err(|e| HandlerError::new("io", e.to_string()))?;
    Ok(HandlerOutput::path(p.to_string_lossy()))
}

/// Heuristic appeal score in [0, 10]: mean absolute Laplacian of the luma
/// (sharpness) plus the Hasler-Suesstrunk colourfulness, squashed by
/// `10 * (1 - exp(-(sharp / 20 + colour / 60)))`. Flat images score 0.
pub fn aesthetic_score(img: &Raster) -> f64 {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rgb: Vec<[f64; 3]> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let p = img.rgba(x as u32, y as u32);
            [p[0] as f64, p[1] as f64, p[2] as f64]
        })
        .collect();
    let luma: Vec<f64> = rgb.iter().map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect();
    let mut lap = 0.0;
    let mut n = 0usize;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let c = luma[y * w + x];
            let s = luma[y * w + x - 1] + luma[y * w + x + 1] + luma[(y - 1) * w + x] + luma[(y + 1) * w + x];
            lap += (s - 4.0 * c).abs();
            n += 1;
        }
    }
    let sharp = if n == 0 { 0.0 } else { lap / n as f64 };
    let rg: Vec<f64> = rgb.iter().map(|p| p[0] - p[1]).collect();
    let yb: Vec<f64> = rgb.iter().map(|p| 0.5 * (p[0] + p[1]) - p[2]).collect();
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
        (m, var.sqrt())
    };
    let (mrg, srg) = stats(&rg);
    let (myb, syb) = stats(&yb);
    let colour = (srg * srg + syb * syb).sqrt() + 0.3 * (mrg * mrg + myb * myb).sqrt();
    let score = 10.0 * (1.0 - (-(sharp / 20.0 + colour / 60.0)).exp());
    (score * 1e4).round() / 1e4
}

fn prompt_colour(prompt: &str) -> [u8; 3] {
    let h = Sha256::digest(prompt.as_bytes());
    [h[0], h[1], h[2]]
}

/// Tints the centre of the image towards a colour derived from the prompt.
/// The tint weight grows with guidance, so escalating it is visible.
fn pseudo_edit(img: &Raster, prompt: &str, guidance: f64) -> Raster {
    let c = prompt_colour(prompt);
    let (w, h) = (img.width(), img.height());
    let patch = Raster::filled((w / 2).max(1), (h / 2).max(1), &c).expect("non-empty patch");
    let weight = (guidance / 10.0).clamp(0.0, 1.0);
    raster::composite(img, &patch, (w / 4) as i64, (h / 4) as i64, weight)
}

fn describe(img: &Raster) -> String {
    let (mut r, mut g, mut b) = (0u64, 0u64, 0u64);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.rgba(x, y);
            r += p[0] as u64;
            g += p[1] as u64;
            b += p[2] as u64;
        }
    }
    let n = (img.width() * img.height()) as u64;
    let tone = if img.is_grayscale() {
        "a grayscale image".to_string()
    } else {
        let (r, g, b) = (r / n, g / n, b / n);
        let dominant = if r >= g && r >= b {
            "red"
        } else if g >= b {
            "green"
        } else {
            "blue"
        };
        format!("a colour image with mostly {dominant} tones")
    };
    format!("{tone}, {} by {} pixels", img.width(), img.height())
}

/// Worker serving every external tool shipped in the registry.
pub fn stub_worker() -> Worker {
    Worker::new()
        .handle("AestheticScore", |req| {
            let s = aesthetic_score(&input(req, 0)?);
            Ok(write_text(req, &format!("{s}"))?.metric("aesthetic", s))
        })
        .handle("LLaVA", |req| {
            let img = input(req, 0)?;
            let q = text(req, "question").unwrap_or("Describe the image in detail.");
            let lower = q.to_ascii_lowercase();
            let answer = if lower.starts_with("describe") || lower.starts_with("what") {
                describe(&img)
            } else if lower.contains("gray") || lower.contains("grey") || lower.contains("black and white") {
                if img.is_grayscale() { "Yes" } else { "No" }.to_string()
            } else {
                "Unknown".to_string()
            };
            write_text(req, &answer)
        })
        .handle("ImageDifferenceLLaVA", |req| {
            let (a, b) = (input(req, 0)?, input(req, 1)?);
            let answer = if (a.width(), a.height()) != (b.width(), b.height()) {
                format!(
                    "The size changed from {}x{} to {}x{}.",
                    a.width(),
                    a.height(),
                    b.width(),
                    b.height()
                )
            } else if a.digest() == b.digest() {
                "The images are identical.".to_string()
            } else {
                "The content of the image changed.".to_string()
            };
            write_text(req, &answer)
        })
        .handle("InstructDiffusion", |req| {
            let prompt = text(req, "prompt").ok_or_else(|| HandlerError::new("bad_args", "missing prompt"))?;
            let g = real(req, "txt_cfg", 4.0)?;
            write_raster(req, &pseudo_edit(&input(req, 0)?, prompt, g))
        })
        .handle("Edict", |req| {
            let prompt = text(req, "target_prompt").ok_or_else(|| HandlerError::new("bad_args", "missing target_prompt"))?;
            let g = real(req, "guidance", 3.0)?;
            write_raster(req, &pseudo_edit(&input(req, 0)?, prompt, g))
        })
        .handle("Prompt2Prompt", |req| {
            let prompt = text(req, "target_prompt").ok_or_else(|| HandlerError::new("bad_args", "missing target_prompt"))?;
            let g = 10.0 * real(req, "cross_replace", 0.8)?;
            write_raster(req, &pseudo_edit(&input(req, 0)?, prompt, g))
        })
        .handle("GroundingDINO", |req| {
            // mask of pixels far from the mean colour
            let img = input(req, 0)?;
            let thr = real(req, "box_threshold", 0.35)?;
            let n = (img.width() * img.height()) as f64;
            let mut mean = [0.0f64; 3];
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let p = img.rgba(x, y);
                    for c in 0..3 {
                        mean[c] += p[c] as f64 / n;
                    }
                }
            }
            let mut mask = Raster::filled(img.width(), img.height(), &[0]).expect("non-empty");
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let p = img.rgba(x, y);
                    let d = (0..3).map(|c| (p[c] as f64 - mean[c]).abs()).sum::<f64>() / 765.0;
                    if d > thr * 0.5 {
                        mask.set_pixel(x, y, &[255]);
                    }
                }
            }
            write_raster(req, &mask)
        })
        .handle("Inpainting", |req| {
            let img = input(req, 0)?.with_channels(3);
            let mask = input(req, 1)?;
            if (mask.width(), mask.height()) != (img.width(), img.height()) {
                return Err(HandlerError::new("bad_input", "mask size differs from image size"));
            }
            let prompt = text(req, "prompt").ok_or_else(|| HandlerError::new("bad_args", "missing prompt"))?;
            let g = real(req, "guidance", 4.0)?;
            let c = prompt_colour(prompt);
            let w = (g / 10.0).clamp(0.0, 1.0);
            let mut out = img.clone();
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if mask.rgba(x, y)[0] >= 128 {
                        let p = img.pixel(x, y);
                        let mixed: Vec<u8> = (0..3)
                            .map(|i| raster::clamp_u8(p[i] as f64 * (1.0 - w) + c[i] as f64 * w))
                            .collect();
                        out.set_pixel(x, y, &mixed);
                    }
                }
            }
            write_raster(req, &out)
        })
}
