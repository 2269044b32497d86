//! LLM-free planner, executor and question writer for synthetic tasks.
//!
//! The backend reads only the rendered prompts, like a real model would. A
//! share of initial plans is deliberately flawed (mis-ordered, wrong tool,
//! missing step, wrong value), so reflection, collaboration and competition
//! have something to repair.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::task::Predicate;
use crate::llm::{ChatBackend, LlmError, LlmRequest, TemplateId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub seed: u64,
    /// Chance that an agent's initial plan is flawed.
    pub flaw_rate: f64,
    /// Chance per reflection that an agent finds the correct plan on its own.
    pub fix_rate: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            flaw_rate: 0.7,
            fix_rate: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub goal: String,
    pub tool: String,
}

fn step(goal: impl Into<String>, tool: &str) -> Step {
    Step {
        goal: goal.into(),
        tool: tool.to_string(),
    }
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("valid regex"))
}

/// Reads the predicate clauses back out of a goal sentence.
pub fn parse_goal(goal: &str) -> Vec<Predicate> {
    static CROP: OnceLock<Regex> = OnceLock::new();
    static SIDE: OnceLock<Regex> = OnceLock::new();
    static ROT: OnceLock<Regex> = OnceLock::new();
    static BORDER: OnceLock<Regex> = OnceLock::new();
    let g = goal.to_lowercase();
    let mut out = Vec::new();
    if let Some(c) = re(&CROP, r"crop the image to the region (\d+),(\d+),(\d+),(\d+)").captures(&g) {
        let n: Vec<u32> = (1..=4).map(|i| c[i].parse().unwrap_or(0)).collect();
        out.push(Predicate::Cropped { x: n[0], y: n[1], w: n[2], h: n[3] });
    }
    if let Some(c) = re(&SIDE, r"longest side is (\d+) pixels").captures(&g) {
        out.push(Predicate::LongestSide { k: c[1].parse().unwrap_or(0) });
    }
    if g.contains("grayscale") {
        out.push(Predicate::Grayscale);
    }
    if g.contains("flip the image horizontally") {
        out.push(Predicate::FlippedH);
    }
    if let Some(c) = re(&ROT, r"rotate the image (\d+) degrees clockwise").captures(&g) {
        let deg: u32 = c[1].parse().unwrap_or(0);
        out.push(Predicate::RotatedCw { r: ((deg / 90) % 4) as u8 });
    }
    if let Some(c) = re(&BORDER, r"add a (\d+)-pixel white border").captures(&g) {
        out.push(Predicate::Border { b: c[1].parse().unwrap_or(0) });
    }
    if g.contains("watermark") {
        out.push(Predicate::Watermark);
    }
    out.sort_by_key(Predicate::rank);
    out
}

/// The plan a careful planner would write.
pub fn correct_plan(predicates: &[Predicate]) -> Vec<Step> {
    let mut out = Vec::new();
    for p in predicates {
        match *p {
            Predicate::Cropped { x, y, w, h } => out.push(step(format!("Crop the image to the region {x},{y},{w},{h}"), "Crop")),
            Predicate::LongestSide { k } => out.push(step(format!("Resize the image so its longest side is {k} pixels"), "Resize")),
            Predicate::Grayscale => out.push(step("Convert the image to grayscale", "RGB2Gray")),
            Predicate::FlippedH => out.push(step("Flip the image horizontally", "FlipHorizontal")),
            Predicate::RotatedCw { r: 3 } => out.push(step("Rotate the image 90 degrees counterclockwise", "RotateCounterClockwise")),
            Predicate::RotatedCw { r } => {
                for _ in 0..r {
                    out.push(step("Rotate the image 90 degrees clockwise", "RotateClockwise"));
                }
            }
            Predicate::Border { b } => out.push(step(format!("Add a {b}-pixel white border around the image"), "ImageExpand")),
            Predicate::Watermark => out.push(step("Add a watermark to the bottom-right corner", "AddWatermark")),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    MisOrder,
    MisTool,
    Omit,
    WrongValue,
}

fn swap_value(goal: &str, from: &str, to: &str) -> String {
    goal.replacen(from, to, 1)
}

/// A plan with exactly one flaw that makes it fail its checks.
pub fn flawed_plan(predicates: &[Predicate], rng: &mut impl Rng) -> (Vec<Step>, Noise) {
    let good = correct_plan(predicates);
    let has_mark = predicates.contains(&Predicate::Watermark);
    let has_geometry = predicates
        .iter()
        .any(|p| matches!(p, Predicate::LongestSide { .. } | Predicate::FlippedH | Predicate::RotatedCw { .. }));
    let valued: Vec<usize> = good
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s.tool.as_str(), "Resize" | "ImageExpand" | "Crop"))
        .map(|(i, _)| i)
        .collect();
    let mistoolable: Vec<usize> = good
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            matches!(
                s.tool.as_str(),
                "RGB2Gray" | "FlipHorizontal" | "RotateClockwise" | "RotateCounterClockwise" | "AddWatermark"
            )
        })
        .map(|(i, _)| i)
        .collect();
    let mut kinds = Vec::new();
    if good.len() > 1 {
        kinds.push(Noise::Omit);
    }
    if has_mark && has_geometry {
        kinds.push(Noise::MisOrder);
    }
    if !mistoolable.is_empty() {
        kinds.push(Noise::MisTool);
    }
    if !valued.is_empty() {
        kinds.push(Noise::WrongValue);
    }
    let kind = kinds[rng.random_range(0..kinds.len())];
    let mut plan = good.clone();
    match kind {
        Noise::MisOrder => {
            let mark = plan.pop().expect("watermark is last");
            plan.insert(0, mark);
        }
        Noise::MisTool => {
            let i = mistoolable[rng.random_range(0..mistoolable.len())];
            plan[i].tool = match plan[i].tool.as_str() {
                "RGB2Gray" => "EnhanceColor",
                "FlipHorizontal" => "RotateClockwise",
                "RotateClockwise" => "RotateCounterClockwise",
                "RotateCounterClockwise" => "RotateClockwise",
                _ => "AddLogo",
            }
            .to_string();
        }
        Noise::Omit => {
            plan.remove(rng.random_range(0..plan.len()));
        }
        Noise::WrongValue => {
            let i = valued[rng.random_range(0..valued.len())];
            let g = plan[i].goal.clone();
            plan[i].goal = match plan[i].tool.as_str() {
                "Resize" if g.contains(" 256 ") => swap_value(&g, " 256 ", " 512 "),
                "Resize" => swap_value(&g, " 512 ", " 256 "),
                "ImageExpand" if g.contains(" 10-") => swap_value(&g, " 10-", " 50-"),
                "ImageExpand" => swap_value(&g, " 50-", " 10-"),
                _ => shift_region(&g),
            };
        }
    }
    (plan, kind)
}

fn shift_region(goal: &str) -> String {
    static REGION: OnceLock<Regex> = OnceLock::new();
    re(&REGION, r"(\d+),(\d+),(\d+),(\d+)")
        .replace(goal, |c: &regex::Captures| {
            let n: Vec<i64> = (1..=4).map(|i| c[i].parse().unwrap_or(0)).collect();
            if n[2] != n[3] {
                // width and height mixed up
                return format!("{},{},{},{}", n[0], n[1], n[3], n[2]);
            }
            let shift = (n[2] / 2).max(8);
            let x = if n[0] >= shift { n[0] - shift } else { n[0] + shift };
            format!("{x},{},{},{}", n[1], n[2], n[3])
        })
        .into_owned()
}

pub fn render_steps(steps: &[Step]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {} using {}", i + 1, s.goal, s.tool))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Arguments the executor writes for a tool, read from the subtask text.
pub fn call_for(tool: &str, subtask: &str, image: &str) -> String {
    static NUMS: OnceLock<Regex> = OnceLock::new();
    let nums: Vec<&str> = re(&NUMS, r"\d+").find_iter(subtask).map(|m| m.as_str()).collect();
    let first = nums.first().copied().unwrap_or("1");
    let args: Vec<String> = match tool {
        "Resize" | "ImageExpand" => vec![image.into(), first.into()],
        "Crop" if nums.len() >= 4 => vec![image.into(), nums[..4].join(",")],
        "AddWatermark" => vec![image.into(), "builtin:watermark".into(), "0.5".into()],
        "AddLogo" => vec![image.into(), "builtin:logo".into(), "0".into(), "0".into()],
        "EnhanceColor" => vec![image.into(), "1.5".into()],
        "GaussianBlur" => vec![image.into(), "5".into()],
        _ => vec![image.into()],
    };
    format!("{tool} @@ {}", args.join(" <-> "))
}

/// First backtick-quoted span after an "instruction" or "using" cue.
pub fn request_in(prompt: &str) -> Option<String> {
    static REQ: OnceLock<Regex> = OnceLock::new();
    re(&REQ, r"(?:instruction|using) `([^`]*)`")
        .captures(prompt)
        .map(|c| c[1].to_string())
}

fn line_value<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(label)).map(str::trim)
}

fn tool_in(prompt: &str) -> Option<String> {
    static TOOL: OnceLock<Regex> = OnceLock::new();
    re(&TOOL, r"running the tool `([^`]+)`").captures(prompt).map(|c| c[1].to_string())
}

fn satisfied(prompt: &str) -> Vec<(u32, u32)> {
    static SAT: OnceLock<Regex> = OnceLock::new();
    re(&SAT, r"Satisfied checks: (\d+)/(\d+)")
        .captures_iter(prompt)
        .map(|c| (c[1].parse().unwrap_or(0), c[2].parse().unwrap_or(0)))
        .collect()
}

/// Body of the first fenced block after `marker`.
fn fenced_after<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    let rest = &prompt[prompt.find(marker)? + marker.len()..];
    let open = rest.find("```")? + 3;
    let body = &rest[open..];
    let close = body.find("```")?;
    Some(body[..close].trim())
}

fn parse_steps(block: &str) -> Vec<Step> {
    static LINE: OnceLock<Regex> = OnceLock::new();
    block
        .lines()
        .filter_map(|l| re(&LINE, r"^\s*\d+\.\s+(.*) using (\S+)\s*$").captures(l))
        .map(|c| step(&c[1], &c[2]))
        .collect()
}

/// Which predicate a plan step works towards, read from its goal text.
fn serves(s: &Step, p: &Predicate) -> bool {
    let g = s.goal.to_lowercase();
    match p {
        Predicate::Cropped { .. } => g.starts_with("crop"),
        Predicate::LongestSide { .. } => g.starts_with("resize"),
        Predicate::Grayscale => g.contains("grayscale"),
        Predicate::FlippedH => g.starts_with("flip"),
        Predicate::RotatedCw { .. } => g.starts_with("rotate"),
        Predicate::Border { .. } => g.contains("border"),
        Predicate::Watermark => g.contains("watermark"),
    }
}

fn passed(feedback: &str, p: &Predicate) -> bool {
    let q = p.question();
    feedback.lines().any(|l| l.trim_start().strip_prefix("- [yes] ").is_some_and(|r| r.starts_with(&q)))
}

/// Keeps own steps for checks that passed, borrows the peer's steps for
/// checks only the peer passed. `None` when the peer adds nothing.
fn merge_with_peer(prompt: &str, preds: &[Predicate]) -> Option<Vec<Step>> {
    let own_plan = parse_steps(fenced_after(prompt, "Currently, I have")?);
    let own_fb = fenced_after(prompt, "step by step is:")?;
    let peer_plan = parse_steps(fenced_after(prompt, "another plan")?);
    let peer_fb = fenced_after(prompt, "This plan obtained")?;
    let mut merged = Vec::new();
    let mut borrowed = false;
    for p in preds {
        let own: Vec<Step> = own_plan.iter().filter(|s| serves(s, p)).cloned().collect();
        let peer: Vec<Step> = peer_plan.iter().filter(|s| serves(s, p)).cloned().collect();
        if !passed(own_fb, p) && passed(peer_fb, p) && !peer.is_empty() {
            borrowed = true;
            merged.extend(peer);
        } else {
            merged.extend(own);
        }
    }
    (borrowed && !merged.is_empty()).then_some(merged)
}

pub struct RuleBackend {
    pub config: RuleConfig,
}

impl RuleBackend {
    pub fn new(config: RuleConfig) -> Self {
        Self { config }
    }

    fn rng(&self, goal: &str, req: &LlmRequest, purpose: &str) -> ChaCha8Rng {
        let text = format!(
            "{}|{goal}|{}|{}|{purpose}",
            self.config.seed,
            req.origin.agent.unwrap_or(0),
            req.origin.round
        );
        let digest = Sha256::digest(text.as_bytes());
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
    }

    fn noisy_or_correct(&self, preds: &[Predicate], rng: &mut ChaCha8Rng, flaw: bool) -> String {
        if flaw {
            render_steps(&flawed_plan(preds, rng).0)
        } else {
            render_steps(&correct_plan(preds))
        }
    }
}

impl ChatBackend for RuleBackend {
    fn name(&self) -> String {
        format!("rule(seed={})", self.config.seed)
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let prompt = req
            .exchange
            .messages
            .first()
            .map(|m| m.text.as_str())
            .unwrap_or_default();
        let unsupported = || LlmError::Backend(format!("rule backend does not answer {} prompts", req.template));
        match req.template {
            TemplateId::QuestionGen => {
                let goal = request_in(prompt).ok_or_else(unsupported)?;
                Ok(parse_goal(&goal)
                    .iter()
                    .enumerate()
                    .map(|(i, p)| format!("{}. {}", i + 1, p.question()))
                    .collect::<Vec<_>>()
                    .join("\n"))
            }
            TemplateId::PlannerInitial => {
                let goal = request_in(prompt).ok_or_else(unsupported)?;
                let preds = parse_goal(&goal);
                let mut rng = self.rng(&goal, req, "initial");
                let flaw = rng.random_bool(self.config.flaw_rate);
                Ok(self.noisy_or_correct(&preds, &mut rng, flaw))
            }
            TemplateId::PlannerReflect => {
                let goal = request_in(prompt).ok_or_else(unsupported)?;
                let preds = parse_goal(&goal);
                let sat = satisfied(prompt);
                let own = sat.first().copied().unwrap_or((0, 1));
                if own.1 > 0 && own.0 == own.1 {
                    return Ok("No.".into());
                }
                let mut rng = self.rng(&goal, req, "reflect");
                if rng.random_bool(self.config.fix_rate) {
                    return Ok(render_steps(&correct_plan(&preds)));
                }
                if let Some(merged) = merge_with_peer(prompt, &preds) {
                    return Ok(render_steps(&merged));
                }
                Ok(self.noisy_or_correct(&preds, &mut rng, true))
            }
            TemplateId::ExecutorToolcall => {
                let tool = tool_in(prompt).ok_or_else(unsupported)?;
                let subtask = line_value(prompt, "Subtask:").unwrap_or_default();
                let image = line_value(prompt, "Current image:").unwrap_or("image/input.png");
                Ok(call_for(&tool, subtask, image))
            }
            _ => Err(unsupported()),
        }
    }
}
