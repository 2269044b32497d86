//! Synthetic editing tasks with machine-checkable goals, and the checker
//! that decides whether an output meets them. The checker does its own pixel
//! arithmetic and shares no transform code with the tools it judges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Cropped { x: u32, y: u32, w: u32, h: u32 },
    LongestSide { k: u32 },
    Grayscale,
    FlippedH,
    /// Clockwise quarter turns, 1..=3.
    RotatedCw { r: u8 },
    Border { b: u32 },
    Watermark,
}

impl Predicate {
    /// Position in the canonical order.
    pub fn rank(&self) -> u8 {
        match self {
            Predicate::Cropped { .. } => 0,
            Predicate::LongestSide { .. } => 1,
            Predicate::Grayscale => 2,
            Predicate::FlippedH => 3,
            Predicate::RotatedCw { .. } => 4,
            Predicate::Border { .. } => 5,
            Predicate::Watermark => 6,
        }
    }

    /// Builtin tool calls needed to establish it.
    pub fn tool_len(&self) -> usize {
        match self {
            Predicate::RotatedCw { r: 2 } => 2,
            _ => 1,
        }
    }

    pub fn clause(&self) -> String {
        match self {
            Predicate::Cropped { x, y, w, h } => format!("crop the image to the region {x},{y},{w},{h}"),
            Predicate::LongestSide { k } => format!("resize the image so its longest side is {k} pixels"),
            Predicate::Grayscale => "convert the image to grayscale".into(),
            Predicate::FlippedH => "flip the image horizontally".into(),
            Predicate::RotatedCw { r } => format!("rotate the image {} degrees clockwise", *r as u32 * 90),
            Predicate::Border { b } => format!("add a {b}-pixel white border around the image"),
            Predicate::Watermark => "add a watermark to the bottom-right corner".into(),
        }
    }

    pub fn question(&self) -> String {
        match self {
            Predicate::Cropped { x, y, w, h } => {
                format!("Is the image cropped to the region {x},{y},{w},{h} of the original?")
            }
            Predicate::LongestSide { k } => format!("Is the longest side of the image {k} pixels?"),
            Predicate::Grayscale => "Is the image in grayscale?".into(),
            Predicate::FlippedH => "Is the image flipped horizontally compared with the original?".into(),
            Predicate::RotatedCw { r } => {
                format!("Is the image rotated {} degrees clockwise compared with the original?", *r as u32 * 90)
            }
            Predicate::Border { b } => format!("Is there a {b}-pixel white border around the image?"),
            Predicate::Watermark => "Is there a watermark in the bottom-right corner?".into(),
        }
    }
}

/// Joins clauses as "a, b and c." with a leading capital.
pub fn render_goal(predicates: &[Predicate]) -> String {
    let clauses: Vec<String> = predicates.iter().map(Predicate::clause).collect();
    let mut text = match clauses.len() {
        0 => String::new(),
        1 => clauses[0].clone(),
        n => format!("{} and {}", clauses[..n - 1].join(", "), clauses[n - 1]),
    };
    if let Some(first) = text.get(..1) {
        text = first.to_uppercase() + &text[1..];
    }
    text.push('.');
    text
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub id: u32,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Canonical order.
    pub predicates: Vec<Predicate>,
    pub goal: String,
}

impl SyntheticTask {
    pub fn new(id: u32, seed: u64, width: u32, height: u32, mut predicates: Vec<Predicate>) -> Self {
        predicates.sort_by_key(Predicate::rank);
        let goal = render_goal(&predicates);
        Self {
            id,
            seed,
            width,
            height,
            predicates,
            goal,
        }
    }

    pub fn tool_len(&self) -> usize {
        self.predicates.iter().map(Predicate::tool_len).sum()
    }

    pub fn input(&self) -> Raster {
        procedural_image(self.seed, self.width, self.height)
    }

    pub fn check(&self, input: &Raster, output: &Raster) -> CheckReport {
        check(&self.predicates, input, output)
    }
}

/// Smooth, asymmetric colour field with a few discs. Channels stay within
/// 16..=239, so no pixel is pure white or black and no row is uniform.
pub fn procedural_image(seed: u64, w: u32, h: u32) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(60.0..190.0));
    let gx: [f64; 3] = std::array::from_fn(|_| rng.random_range(-90.0..90.0));
    let gy: [f64; 3] = std::array::from_fn(|_| rng.random_range(-90.0..90.0));
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.1..0.9) * w as f64,
                rng.random_range(0.1..0.9) * h as f64,
                rng.random_range(0.08..0.22) * w.min(h) as f64,
                std::array::from_fn(|_| rng.random_range(20.0..235.0)),
            )
        })
        .collect();
    let mut data = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            let mut px: [f64; 3] = std::array::from_fn(|c| base[c] + gx[c] * (u - 0.3) * (u + 0.2) * 2.0 + gy[c] * v * v);
            for (cx, cy, r, col) in &discs {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                    px = *col;
                }
            }
            data.extend(px.iter().map(|v| v.clamp(16.0, 239.0) as u8));
        }
    }
    Raster::new(w, h, 3, data).expect("consistent buffer")
}

/// Deterministic task suite. `max_len` bounds the builtin calls per task.
pub fn gen_tasks(seed: u64, n: usize, max_len: usize) -> Vec<SyntheticTask> {
    let max_len = max_len.clamp(1, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let task_seed: u64 = rng.random();
            let (w, h) = loop {
                let w = rng.random_range(64..=128u32);
                let h = rng.random_range(64..=128u32);
                if w.abs_diff(h) >= 12 {
                    break (w, h);
                }
            };
            let predicates = if max_len >= 2 && rng.random_bool(0.1) {
                let cw = rng.random_range(w / 3..=w * 2 / 3);
                let ch = rng.random_range(h / 3..=h * 2 / 3);
                let x = rng.random_range(0..=w - cw);
                let y = rng.random_range(0..=h - ch);
                vec![Predicate::Cropped { x, y, w: cw, h: ch }, Predicate::Grayscale]
            } else {
                let target = rng.random_range(1..=max_len.clamp(1, 3));
                pick_predicates(&mut rng, target)
            };
            SyntheticTask::new(i as u32, task_seed, w, h, predicates)
        })
        .collect()
}

fn pick_predicates(rng: &mut ChaCha8Rng, target: usize) -> Vec<Predicate> {
    let mut chosen: Vec<Predicate> = Vec::new();
    let mut len = 0;
    for _ in 0..20 {
        if len >= target {
            break;
        }
        let p = match rng.random_range(0..6) {
            0 => Predicate::LongestSide { k: [256, 512][rng.random_range(0..2)] },
            1 => Predicate::Grayscale,
            2 => Predicate::FlippedH,
            3 => Predicate::RotatedCw { r: rng.random_range(1..=3) },
            4 => Predicate::Border { b: [10, 50][rng.random_range(0..2)] },
            _ => Predicate::Watermark,
        };
        let clash = chosen.iter().any(|c| {
            c.rank() == p.rank()
                || matches!(
                    (c, &p),
                    (Predicate::Border { .. }, Predicate::LongestSide { .. } | Predicate::Watermark)
                        | (Predicate::LongestSide { .. } | Predicate::Watermark, Predicate::Border { .. })
                        | (Predicate::FlippedH, Predicate::RotatedCw { .. })
                        | (Predicate::RotatedCw { .. }, Predicate::FlippedH)
                )
        });
        if clash || len + p.tool_len() > target {
            continue;
        }
        len += p.tool_len();
        chosen.push(p);
    }
    if chosen.is_empty() {
        chosen.push(Predicate::Grayscale);
    }
    chosen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateCheck {
    pub predicate: Predicate,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub dims_ok: bool,
    pub content_ok: bool,
    pub checks: Vec<PredicateCheck>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.dims_ok && self.content_ok && self.checks.iter().all(|c| c.passed)
    }
}

fn px(img: &Raster, x: u32, y: u32) -> [u8; 3] {
    let p = img.rgba(x, y);
    [p[0], p[1], p[2]]
}

fn gray_level(p: [u8; 3]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// Source coordinate shown at output pixel (x, y) of a `w`x`h` output made
/// by an optional horizontal flip followed by `turns` clockwise turns.
fn source_coord(x: u32, y: u32, w: u32, h: u32, flip: bool, turns: u8) -> (u32, u32) {
    let (mut x, mut y, mut w, mut h) = (x, y, w, h);
    for _ in 0..turns % 4 {
        // a clockwise turn sends (sx, sy) to (sh - 1 - sy, sx)
        (x, y) = (y, w - 1 - x);
        std::mem::swap(&mut w, &mut h);
    }
    if flip {
        x = w - 1 - x;
    }
    (x, y)
}

/// 16x16 block means of gray levels over a region.
fn block_means(w: u32, h: u32, sample: impl Fn(u32, u32) -> f64) -> Vec<f64> {
    let n = 16u32;
    let mut out = vec![0.0; (n * n) as usize];
    for by in 0..n {
        for bx in 0..n {
            let (x0, x1) = (bx * w / n, ((bx + 1) * w / n).max(bx * w / n + 1).min(w));
            let (y0, y1) = (by * h / n, ((by + 1) * h / n).max(by * h / n + 1).min(h));
            let mut sum = 0.0;
            let mut count = 0.0f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += sample(x, y);
                    count += 1.0;
                }
            }
            out[(by * n + bx) as usize] = sum / count.max(1.0);
        }
    }
    out
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

pub const CONTENT_TOLERANCE: f64 = 12.0;
pub const WATERMARK_CONTRAST: f64 = 40.0;

/// Checks every predicate plus the exact output geometry and that the
/// content is the input, transformed as the predicates require.
pub fn check(predicates: &[Predicate], input: &Raster, output: &Raster) -> CheckReport {
    let mut crop = None;
    let mut longest = None;
    let mut flip = false;
    let mut turns = 0u8;
    let mut border = 0u32;
    for p in predicates {
        match *p {
            Predicate::Cropped { x, y, w, h } => crop = Some((x, y, w, h)),
            Predicate::LongestSide { k } => longest = Some(k),
            Predicate::Grayscale | Predicate::Watermark => {}
            Predicate::FlippedH => flip = true,
            Predicate::RotatedCw { r } => turns = r,
            Predicate::Border { b } => border = b,
        }
    }
    let (cx, cy, cw, ch) = crop.unwrap_or((0, 0, input.width(), input.height()));
    let cropped_ok = cx + cw <= input.width() && cy + ch <= input.height();
    // content size before the border
    let (mut ew, mut eh) = (cw as f64, ch as f64);
    if let Some(k) = longest {
        let s = k as f64 / ew.max(eh);
        (ew, eh) = (ew * s, eh * s);
    }
    if turns % 2 == 1 {
        (ew, eh) = (eh, ew);
    }
    let (ow, oh) = (output.width(), output.height());
    let inner_w = ow as i64 - 2 * border as i64;
    let inner_h = oh as i64 - 2 * border as i64;
    let dims_ok = cropped_ok && inner_w > 0 && inner_h > 0 && {
        let close = |got: i64, want: f64| (got as f64 - want).abs() <= 1.0;
        match longest {
            Some(k) => inner_w.max(inner_h) == k as i64 && close(inner_w, ew) && close(inner_h, eh),
            None => inner_w == ew.round() as i64 && inner_h == eh.round() as i64,
        }
    };

    let mut checks = Vec::new();
    for p in predicates {
        let (passed, detail) = match *p {
            Predicate::Cropped { w, h, .. } => (dims_ok, format!("expected content {w}x{h} from the region")),
            Predicate::LongestSide { k } => {
                let got = inner_w.max(inner_h);
                (got == k as i64, format!("longest side {got}"))
            }
            Predicate::Grayscale => {
                let ok = output.channels() <= 2 || (0..oh).all(|y| (0..ow).all(|x| {
                    let p = px(output, x, y);
                    p[0] == p[1] && p[1] == p[2]
                }));
                (ok, String::new())
            }
            Predicate::FlippedH | Predicate::RotatedCw { .. } => (dims_ok, "orientation checked with content".into()),
            Predicate::Border { b } => {
                let white = |x: u32, y: u32| px(output, x, y) == [255, 255, 255];
                let frame = ow > 2 * b
                    && oh > 2 * b
                    && (0..oh).all(|y| (0..ow).all(|x| !(x < b || y < b || x >= ow - b || y >= oh - b) || white(x, y)));
                let inner_not_white = frame && (b..ow - b).any(|x| !white(x, b));
                (frame && inner_not_white, format!("{b}-pixel frame"))
            }
            Predicate::Watermark => {
                let contrast = if ow >= 16 && oh >= 16 {
                    let (mut on, mut off) = (0.0, 0.0);
                    for dy in 0..16 {
                        for dx in 0..16 {
                            let g = gray_level(px(output, ow - 16 + dx, oh - 16 + dy));
                            if (dx / 4 + dy / 4) % 2 == 0 {
                                on += g;
                            } else {
                                off += g;
                            }
                        }
                    }
                    (on - off) / 128.0
                } else {
                    0.0
                };
                (contrast > WATERMARK_CONTRAST, format!("corner contrast {contrast:.1}"))
            }
        };
        checks.push(PredicateCheck {
            predicate: *p,
            passed,
            detail,
        });
    }

    let content_ok = dims_ok && {
        let (iw, ih) = (inner_w as u32, inner_h as u32);
        let got = block_means(iw, ih, |x, y| gray_level(px(output, x + border, y + border)));
        let expected_for = |flip: bool, turns: u8| {
            let (tw, th) = if turns % 2 == 1 { (ch, cw) } else { (cw, ch) };
            block_means(iw, ih, |x, y| {
                // nearest source pixel of the untransformed crop
                let ux = ((x as f64 + 0.5) * tw as f64 / iw as f64) as u32;
                let uy = ((y as f64 + 0.5) * th as f64 / ih as f64) as u32;
                let (sx, sy) = source_coord(ux.min(tw - 1), uy.min(th - 1), tw, th, flip, turns);
                gray_level(px(input, cx + sx.min(cw - 1), cy + sy.min(ch - 1)))
            })
        };
        let want = mean_abs_diff(&expected_for(flip, turns), &got);
        // strict: the required orientation must also beat every other one
        // that fits the same output shape
        let rivals = (0..8u8)
            .map(|k| (k >= 4, k % 4))
            .filter(|&(f, t)| (f, t) != (flip, turns) && t % 2 == turns % 2)
            .map(|(f, t)| mean_abs_diff(&expected_for(f, t), &got))
            .fold(f64::INFINITY, f64::min);
        want < CONTENT_TOLERANCE && want < rivals
    };

    CheckReport {
        dims_ok,
        content_ok,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster;

    #[test]
    fn tasks_are_deterministic_and_bounded() {
        let a = gen_tasks(7, 20, 3);
        assert_eq!(a, gen_tasks(7, 20, 3));
        assert_eq!(a.len(), 20);
        for t in &a {
            assert!(t.tool_len() <= 3 && !t.predicates.is_empty(), "{t:?}");
            assert!(t.width <= 128 && t.height <= 128);
        }
        for t in gen_tasks(3, 50, 1) {
            assert_eq!(t.tool_len(), 1, "{t:?}");
        }
    }

    #[test]
    fn goal_text() {
        let t = SyntheticTask::new(0, 1, 80, 64, vec![Predicate::Watermark, Predicate::Grayscale, Predicate::LongestSide { k: 256 }]);
        assert_eq!(
            t.goal,
            "Resize the image so its longest side is 256 pixels, convert the image to grayscale and add a watermark to the bottom-right corner."
        );
    }

    #[test]
    fn source_coords_match_rotation() {
        // 3x2 image; one clockwise turn gives 2x3
        let (w, h) = (2, 3);
        // output (0,0) shows source bottom-left (0,1)
        assert_eq!(source_coord(0, 0, w, h, false, 1), (0, 1));
        assert_eq!(source_coord(1, 0, w, h, false, 1), (0, 0));
        assert_eq!(source_coord(0, 0, 3, 2, true, 0), (2, 0));
    }

    #[test]
    fn checker_accepts_correct_and_rejects_wrong_outputs() {
        let input = procedural_image(5, 90, 70);
        let preds = [Predicate::Grayscale, Predicate::RotatedCw { r: 1 }];
        let good = raster::rotate_clockwise(&raster::to_gray(&input));
        assert!(check(&preds, &input, &good).passed());
        let wrong_way = raster::rotate_counter_clockwise(&raster::to_gray(&input));
        assert!(!check(&preds, &input, &wrong_way).passed());
        let colour = raster::rotate_clockwise(&input);
        assert!(!check(&preds, &input, &colour).passed());

        let flip = [Predicate::FlippedH];
        assert!(check(&flip, &input, &raster::flip_horizontal(&input)).passed());
        assert!(!check(&flip, &input, &input).passed());
        let half = raster::rotate_clockwise(&raster::rotate_clockwise(&input));
        assert!(!check(&flip, &input, &half).passed());
    }

    #[test]
    fn checker_geometry() {
        let input = procedural_image(9, 100, 80);
        let big = raster::resize_bilinear(&input, 512, 410);
        assert!(check(&[Predicate::LongestSide { k: 512 }], &input, &big).passed());
        assert!(!check(&[Predicate::LongestSide { k: 256 }], &input, &big).passed());
        let framed = raster::expand(&input, 10, [255, 255, 255]);
        assert!(check(&[Predicate::Border { b: 10 }], &input, &framed).passed());
        assert!(!check(&[Predicate::Border { b: 50 }], &input, &framed).passed());
        let mark = crate::artifact::bundled_asset("watermark").unwrap();
        let marked = raster::composite(&input, &mark, 84, 64, 0.5);
        assert!(check(&[Predicate::Watermark], &input, &marked).passed());
        assert!(!check(&[Predicate::Watermark], &input, &input).passed());
        let region = Predicate::Cropped { x: 10, y: 5, w: 40, h: 30 };
        let c = raster::to_gray(&raster::crop(&input, 10, 5, 40, 30).unwrap());
        assert!(check(&[region, Predicate::Grayscale], &input, &c).passed());
        let off = raster::to_gray(&raster::crop(&input, 30, 25, 40, 30).unwrap());
        assert!(!check(&[region, Predicate::Grayscale], &input, &off).passed());
    }
}
