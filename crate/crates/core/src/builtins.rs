//! Deterministic builtin tools.

use crate::artifact::Payload;
use crate::raster::{self, longest_side_dims, Raster};
use crate::registry::{ArgValue, BoundArgs, ToolError};

fn arg<'a>(args: &'a BoundArgs, name: &str) -> Option<&'a ArgValue> {
    args.iter().find(|(n, _)| n == name).map(|(_, v)| v)
}

fn int_arg(tool: &str, args: &BoundArgs, name: &str) -> Result<i64, ToolError> {
    arg(args, name)
        .and_then(ArgValue::as_int)
        .ok_or_else(|| ToolError::args(tool, format!("missing integer `{name}`")))
}

fn real_arg(tool: &str, args: &BoundArgs, name: &str) -> Result<f64, ToolError> {
    arg(args, name)
        .and_then(ArgValue::as_real)
        .ok_or_else(|| ToolError::args(tool, format!("missing real `{name}`")))
}

fn raster_input<'a>(tool: &str, inputs: &'a [&Payload], i: usize) -> Result<&'a Raster, ToolError> {
    match inputs.get(i) {
        Some(Payload::Raster(r)) => Ok(r),
        Some(other) => Err(ToolError::MediaMismatch {
            tool: tool.to_string(),
            got: other.kind_name().to_string(),
        }),
        None => Err(ToolError::args(tool, format!("missing input image #{}", i + 1))),
    }
}

fn u32_arg(tool: &str, v: i64, what: &str, min: i64) -> Result<u32, ToolError> {
    if v < min || v > u32::MAX as i64 / 4 {
        return Err(ToolError::args(tool, format!("`{what}` out of range: {v}")));
    }
    Ok(v as u32)
}

pub(crate) fn invoke(name: &str, args: &BoundArgs, inputs: &[&Payload]) -> Result<Payload, ToolError> {
    let img = || raster_input(name, inputs, 0);
    let out = match name {
        "Resize" => {
            let n = u32_arg(name, int_arg(name, args, "longest_side")?, "longest_side", 1)?;
            if n > 8192 {
                return Err(ToolError::args(name, "longest_side above 8192"));
            }
            let src = img()?;
            let (w, h) = longest_side_dims(src.width(), src.height(), n);
            raster::resize_bilinear(src, w, h)
        }
        "Crop" => {
            let Some(ArgValue::Box([x, y, w, h])) = arg(args, "region") else {
                return Err(ToolError::args(name, "missing `region`"));
            };
            let src = img()?;
            let (x, y) = (u32_arg(name, *x, "x", 0)?, u32_arg(name, *y, "y", 0)?);
            let (w, h) = (u32_arg(name, *w, "width", 1)?, u32_arg(name, *h, "height", 1)?);
            raster::crop(src, x, y, w, h).ok_or_else(|| {
                ToolError::args(
                    name,
                    format!(
                        "region {x},{y},{w},{h} exceeds {}x{} image",
                        src.width(),
                        src.height()
                    ),
                )
            })?
        }
        "Paste" | "AddLogo" => {
            let base = img()?;
            let over = raster_input(name, inputs, 1)?;
            let x = int_arg(name, args, "x")?;
            let y = int_arg(name, args, "y")?;
            raster::composite(base, over, x, y, 1.0)
        }
        "Blending" => {
            let base = img()?;
            let over = raster_input(name, inputs, 1)?;
            let s = real_arg(name, args, "strength")?;
            if !(0.0..=1.0).contains(&s) {
                return Err(ToolError::args(name, format!("strength {s} outside [0, 1]")));
            }
            let x = int_arg(name, args, "x")?;
            let y = int_arg(name, args, "y")?;
            // opaque overlay at weight `s` is exactly the linear mix
            raster::composite(base, &over.with_channels(3), x, y, s)
        }
        "RGB2Gray" => raster::to_gray(img()?),
        "GaussianBlur" => {
            let k = int_arg(name, args, "kernel_size")?;
            if k < 1 || k % 2 == 0 || k > 255 {
                return Err(ToolError::args(name, format!("kernel_size must be odd in [1, 255], got {k}")));
            }
            raster::gaussian_blur(img()?, k as u32)
        }
        "RotateClockwise" => raster::rotate_clockwise(img()?),
        "RotateCounterClockwise" => raster::rotate_counter_clockwise(img()?),
        "EnhanceColor" => {
            let f = real_arg(name, args, "factor")?;
            if !(0.0..=10.0).contains(&f) {
                return Err(ToolError::args(name, format!("factor {f} outside [0, 10]")));
            }
            raster::enhance_color(img()?, f)
        }
        "FlipHorizontal" => raster::flip_horizontal(img()?),
        "AddWatermark" => {
            let base = img()?;
            let mark = raster_input(name, inputs, 1)?;
            let alpha = real_arg(name, args, "alpha")?;
            if !(0.0..=1.0).contains(&alpha) {
                return Err(ToolError::args(name, format!("alpha {alpha} outside [0, 1]")));
            }
            let x = base.width() as i64 - mark.width() as i64;
            let y = base.height() as i64 - mark.height() as i64;
            raster::composite(base, mark, x, y, alpha)
        }
        "GetSize" => {
            let src = img()?;
            return Ok(Payload::Text(format!("{}x{}", src.width(), src.height())));
        }
        "ImageExpand" => {
            let b = u32_arg(name, int_arg(name, args, "border_px")?, "border_px", 0)?;
            if b > 4096 {
                return Err(ToolError::args(name, "border_px above 4096"));
            }
            let color = match arg(args, "color").and_then(ArgValue::as_str) {
                Some("black") => [0, 0, 0],
                _ => [255, 255, 255],
            };
            raster::expand(img()?, b, color)
        }
        other => return Err(ToolError::NotBuiltin(other.to_string())),
    };
    Ok(Payload::raster(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Registry;
    use rand::{Rng, SeedableRng};

    fn bind(reg: &Registry, tool: &str, raw: &[&str]) -> BoundArgs {
        let raw: Vec<String> = raw.iter().map(|s| s.to_string()).collect();
        reg.get(tool).unwrap().bind(&raw).unwrap()
    }

    fn random_image(rng: &mut impl Rng) -> Raster {
        let w = rng.random_range(1..12);
        let h = rng.random_range(1..12);
        let c = [1u8, 3, 4][rng.random_range(0..3)];
        let data = (0..w * h * c as u32).map(|_| rng.random()).collect();
        Raster::new(w, h, c, data).unwrap()
    }

    fn run(reg: &Registry, tool: &str, raw: &[&str], inputs: &[&Payload]) -> Result<Payload, ToolError> {
        reg.invoke_builtin(tool, &bind(reg, tool, raw), inputs)
    }

    #[test]
    fn resize_1024x768_to_512() {
        let reg = Registry::shipped();
        let img = Payload::raster(Raster::filled(1024, 768, &[9, 9, 9]).unwrap());
        let out = run(&reg, "Resize", &["in.png", "512"], &[&img]).unwrap();
        let r = out.as_raster().unwrap();
        assert_eq!((r.width(), r.height()), (512, 384));
    }

    #[test]
    fn gray_is_idempotent_on_gray() {
        let reg = Registry::shipped();
        let gray = Raster::new(3, 2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let p = Payload::raster(gray.clone());
        let out = run(&reg, "RGB2Gray", &["in.png"], &[&p]).unwrap();
        assert_eq!(**out.as_raster().unwrap(), gray);
    }

    #[test]
    fn rotate_pair_is_identity_on_random_images() {
        let reg = Registry::shipped();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let img = random_image(&mut rng);
            let p = Payload::raster(img.clone());
            let cw = run(&reg, "RotateClockwise", &["x"], &[&p]).unwrap();
            let back = run(&reg, "RotateCounterClockwise", &["x"], &[&cw]).unwrap();
            assert_eq!(**back.as_raster().unwrap(), img);
        }
    }

    #[test]
    fn builtins_are_deterministic() {
        let reg = Registry::shipped();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let img = Payload::raster(random_image(&mut rng));
        for (tool, raw) in [
            ("GaussianBlur", vec!["x", "5"]),
            ("EnhanceColor", vec!["x", "1.7"]),
            ("Resize", vec!["x", "17"]),
            ("ImageExpand", vec!["x", "3"]),
        ] {
            let a = run(&reg, tool, &raw, &[&img]).unwrap();
            let b = run(&reg, tool, &raw, &[&img]).unwrap();
            assert_eq!(a.encode().unwrap(), b.encode().unwrap(), "{tool}");
        }
    }

    #[test]
    fn get_size_rejects_text() {
        let reg = Registry::shipped();
        let t = Payload::Text("hello".into());
        assert!(matches!(
            run(&reg, "GetSize", &["x"], &[&t]),
            Err(ToolError::MediaMismatch { .. })
        ));
        let img = Payload::raster(Raster::filled(7, 5, &[0]).unwrap());
        assert_eq!(run(&reg, "GetSize", &["x"], &[&img]).unwrap(), Payload::Text("7x5".into()));
    }

    #[test]
    fn crop_matches_region_and_expand_pads() {
        let reg = Registry::shipped();
        let img = Payload::raster(Raster::filled(40, 30, &[1, 2, 3]).unwrap());
        let c = run(&reg, "Crop", &["x", "5,6,10,12"], &[&img]).unwrap();
        assert_eq!(c.media(), crate::artifact::Media::Raster { width: 10, height: 12, channels: 3 });
        assert!(run(&reg, "Crop", &["x", "35,0,10,10"], &[&img]).is_err());
        let e = run(&reg, "ImageExpand", &["x", "50"], &[&img]).unwrap();
        let r = e.as_raster().unwrap();
        assert_eq!((r.width(), r.height()), (140, 130));
        assert_eq!(r.pixel(0, 0), &[255, 255, 255]);
        assert_eq!(r.pixel(50, 50), &[1, 2, 3]);
    }

    #[test]
    fn watermark_lands_bottom_right() {
        let reg = Registry::shipped();
        let img = Payload::raster(Raster::filled(40, 30, &[100, 100, 100]).unwrap());
        let mark = Payload::raster(crate::artifact::bundled_asset("watermark").unwrap());
        let out = run(&reg, "AddWatermark", &["x", "w", "0.5"], &[&img, &mark]).unwrap();
        let r = out.as_raster().unwrap();
        assert_eq!(r.pixel(0, 0), &[100, 100, 100]);
        // top-left cell of the checkerboard is white: 100 + (255-100)/2
        assert_eq!(r.pixel(24, 14), &[178, 178, 178]);
        assert_eq!(r.pixel(28, 14), &[50, 50, 50]);
    }

    #[test]
    fn even_kernel_rejected() {
        let reg = Registry::shipped();
        let img = Payload::raster(Raster::filled(4, 4, &[1]).unwrap());
        assert!(run(&reg, "GaussianBlur", &["x", "4"], &[&img]).is_err());
    }

    #[test]
    fn external_tools_are_not_builtins() {
        let reg = Registry::shipped();
        let img = Payload::raster(Raster::filled(4, 4, &[1]).unwrap());
        assert!(matches!(
            run(&reg, "InstructDiffusion", &["x", "add a hat"], &[&img]),
            Err(ToolError::NotBuiltin(_))
        ));
    }
}
