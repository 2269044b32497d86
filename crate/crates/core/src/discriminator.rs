//! Evaluation side: questions, answers, feedback reports, per-subtask
//! feedback, the quality competition and the memory bank.

use std::cmp::Ordering;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use regex::Regex;
use sha2::Digest;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter::{invoke_external, AdapterRequest, Transport};
use crate::artifact::ArtifactId;
use crate::llm::parse::{parse_questions, parse_subtask_verdicts, parse_yes_no, Verdict};
use crate::llm::template::{render_template, Vars};
use crate::llm::{AskError, CallOrigin, Gateway, LlmCall, LlmError, TemplateId};
use crate::plan::Plan;
use crate::raster::{self, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    ItemCheck,
    GlobalQuality,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    pub kind: QuestionKind,
}

pub const MAX_QUESTIONS: usize = 5;

/// Added when the generated questions leave room and none is global.
pub const GLOBAL_QUESTION: &str = "Are the parts of the image unrelated to the request unchanged?";

const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "does", "do", "did", "has", "have", "had", "can", "could", "will", "would", "should",
    "shall", "may", "might", "must", "am",
];

/// Yes/No form: the question opens with an auxiliary verb.
pub fn is_yes_no_question(text: &str) -> bool {
    let first = text
        .trim_start_matches(|c: char| !c.is_alphabetic())
        .split(|c: char| !c.is_alphabetic())
        .next()
        .unwrap_or("")
        .to_ascii_lowercase();
    AUXILIARIES.contains(&first.as_str())
}

const GLOBAL_CUES: &[&str] = &[
    "overall", "unchanged", "unrelated", "remain", "artifact", "natural", "realistic", "quality", "aesthetic",
    "consistent", "distort", "preserved", "coherent",
];

pub fn classify_question(text: &str) -> QuestionKind {
    let lower = text.to_lowercase();
    if GLOBAL_CUES.iter().any(|c| lower.contains(c)) {
        QuestionKind::GlobalQuality
    } else {
        QuestionKind::ItemCheck
    }
}

/// Keeps Yes/No questions, caps the count and tops up with a global one.
pub fn select_questions(raw: &[String]) -> Vec<Question> {
    let mut out: Vec<Question> = raw
        .iter()
        .filter(|q| is_yes_no_question(q))
        .map(|q| Question {
            text: q.trim().to_string(),
            kind: classify_question(q),
        })
        .take(MAX_QUESTIONS)
        .collect();
    if out.len() < MAX_QUESTIONS && !out.iter().any(|q| q.kind == QuestionKind::GlobalQuality) {
        out.push(Question {
            text: GLOBAL_QUESTION.to_string(),
            kind: QuestionKind::GlobalQuality,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscriminatorError {
    #[error("the editing request is empty")]
    EmptyGoal,
    #[error("no usable questions after re-prompt")]
    QuestionParseFailure { calls: Vec<LlmCall> },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

pub fn generate_questions(
    gateway: &Gateway,
    caption: &str,
    goal: &str,
    origin: CallOrigin,
) -> Result<(Vec<Question>, Vec<LlmCall>), DiscriminatorError> {
    if goal.trim().is_empty() {
        return Err(DiscriminatorError::EmptyGoal);
    }
    let vars: Vars = [("EDITING_REQUEST", goal.to_string()), ("CAPTION", caption.to_string())].into();
    let prompt = render_template(TemplateId::QuestionGen, &vars)?;
    let parse = |text: &str| {
        let qs = parse_questions(text);
        if qs.iter().any(|q| is_yes_no_question(q)) {
            Ok(select_questions(&qs))
        } else {
            Err(())
        }
    };
    match gateway.ask(TemplateId::QuestionGen, &prompt, origin, parse) {
        Ok(v) => Ok(v),
        Err(AskError::Llm(e)) => Err(e.into()),
        Err(AskError::Format { calls, .. }) => Err(DiscriminatorError::QuestionParseFailure { calls }),
    }
}

/// An image under evaluation; `path` is set when it exists on disk.
#[derive(Debug, Clone, Copy)]
pub struct ImageRef<'a> {
    pub raster: &'a Raster,
    pub path: Option<&'a Path>,
}

pub trait Vqa: Send + Sync {
    fn name(&self) -> String;
    fn answer(&self, image: ImageRef<'_>, question: &str) -> Result<String, String>;
}

pub trait AestheticScorer: Send + Sync {
    fn score(&self, image: ImageRef<'_>) -> Result<f64, String>;
}

/// Index into the eight symmetries of the square: `k % 4` clockwise quarter
/// turns, applied after a horizontal flip when `k >= 4`.
pub fn d4_transform(src: &Raster, k: usize) -> Raster {
    let mut out = if k >= 4 { raster::flip_horizontal(src) } else { src.clone() };
    for _ in 0..k % 4 {
        out = raster::rotate_clockwise(&out);
    }
    out
}

const THUMB: u32 = 16;

fn thumbnail(src: &Raster) -> Vec<f64> {
    let g = raster::to_gray(src);
    let t = raster::resize_bilinear(&g, THUMB, THUMB);
    t.data().iter().map(|&v| v as f64).collect()
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

/// Width of a uniform pure-white frame around the image, if any.
pub fn white_frame_width(img: &Raster) -> u32 {
    let white = |x: u32, y: u32| {
        let p = img.rgba(x, y);
        p[0] == 255 && p[1] == 255 && p[2] == 255
    };
    let (w, h) = (img.width(), img.height());
    let mut b = 0;
    while 2 * (b + 1) < w.min(h) {
        let ring = (b..w - b).all(|x| white(x, b) && white(x, h - b - 1))
            && (b..h - b).all(|y| white(b, y) && white(w - b - 1, y));
        if !ring {
            break;
        }
        b += 1;
    }
    b
}

/// Which symmetry of `reference` the candidate looks like. A white frame
/// around the candidate is ignored.
pub fn best_orientation(reference: &Raster, candidate: &Raster) -> usize {
    let b = white_frame_width(candidate);
    let inner = if b > 0 {
        raster::crop(candidate, b, b, candidate.width() - 2 * b, candidate.height() - 2 * b)
    } else {
        None
    };
    let c = thumbnail(inner.as_ref().unwrap_or(candidate));
    (0..8)
        .map(|k| (k, mse(&thumbnail(&d4_transform(reference, k)), &c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
        .unwrap_or(0)
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("valid regex"))
}

/// Checkerboard contrast in the bottom-right 16x16 corner: mean luma of the
/// cells that are white in the bundled watermark minus that of the others.
pub fn watermark_contrast(img: &Raster) -> f64 {
    if img.width() < 16 || img.height() < 16 {
        return 0.0;
    }
    let (x0, y0) = (img.width() - 16, img.height() - 16);
    let (mut white, mut black) = (0.0, 0.0);
    for y in 0..16 {
        for x in 0..16 {
            let p = img.rgba(x0 + x, y0 + y);
            let l = raster::luma(p[0], p[1], p[2]) as f64;
            if ((x / 4) + (y / 4)) % 2 == 0 {
                white += l;
            } else {
                black += l;
            }
        }
    }
    (white - black) / 128.0
}

/// Answers mechanically checkable questions by inspecting pixels, comparing
/// against the original image where needed. Anything else is "unknown".
pub struct PropertyOracle {
    reference: Arc<Raster>,
}

impl PropertyOracle {
    pub fn new(reference: Arc<Raster>) -> Self {
        Self { reference }
    }

    fn answer_text(&self, img: &Raster, q: &str) -> String {
        static CROP: OnceLock<Regex> = OnceLock::new();
        static BORDER: OnceLock<Regex> = OnceLock::new();
        static ROT: OnceLock<Regex> = OnceLock::new();
        static DIMS: OnceLock<Regex> = OnceLock::new();
        static NUM: OnceLock<Regex> = OnceLock::new();
        let lower = q.to_lowercase();
        let yes_no = |ok: bool, what: String| format!("{}, {what}.", if ok { "Yes" } else { "No" });

        if lower.contains("crop") {
            if let Some(c) = re(&CROP, r"(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)").captures(&lower) {
                let n: Vec<u32> = (1..=4).map(|i| c[i].parse().unwrap_or(0)).collect();
                let Some(expected) = raster::crop(&self.reference, n[0], n[1], n[2], n[3]) else {
                    return "No, the region lies outside the original image.".into();
                };
                if (img.width(), img.height()) != (n[2], n[3]) {
                    return format!("No, the image is {}x{} rather than {}x{}.", img.width(), img.height(), n[2], n[3]);
                }
                let ok = mse(&thumbnail(&expected), &thumbnail(img)) < 150.0;
                return yes_no(ok, format!("the content {} the requested region", if ok { "matches" } else { "does not match" }));
            }
        }
        if lower.contains("border") || lower.contains("frame") {
            if let Some(c) = re(&BORDER, r"(\d+)\s*-?\s*(?:pixel|px)").captures(&lower) {
                let b: u32 = c[1].parse().unwrap_or(0);
                let ok = has_white_border(img, b);
                return yes_no(ok, format!("a {b}-pixel white border {}", if ok { "surrounds the image" } else { "is not present" }));
            }
        }
        if lower.contains("watermark") {
            let ok = watermark_contrast(img) > 40.0;
            return yes_no(ok, format!("a watermark {} in the bottom-right corner", if ok { "is visible" } else { "is not visible" }));
        }
        if lower.contains("rotat") {
            if let Some(c) = re(&ROT, r"(90|180|270)").captures(&lower) {
                let deg: usize = c[1].parse().unwrap_or(0);
                let counter = lower.contains("counter") || lower.contains("anti");
                let turns = if counter { (4 - deg / 90) % 4 } else { deg / 90 };
                let got = best_orientation(&self.reference, img);
                return yes_no(got == turns, orientation_phrase(got));
            }
        }
        if lower.contains("flip") || lower.contains("mirror") {
            let got = best_orientation(&self.reference, img);
            return yes_no(got == 4, orientation_phrase(got));
        }
        if lower.contains("gray") || lower.contains("grey") || lower.contains("black and white") || lower.contains("monochrome") {
            let ok = img.is_grayscale();
            return yes_no(ok, format!("the image {} grayscale", if ok { "is" } else { "is not" }));
        }
        if let Some(c) = re(&DIMS, r"(\d+)\s*(?:x|×|by)\s*(\d+)").captures(&lower) {
            let (w, h): (u32, u32) = (c[1].parse().unwrap_or(0), c[2].parse().unwrap_or(0));
            let ok = (img.width(), img.height()) == (w, h);
            return yes_no(ok, format!("the image is {}x{}", img.width(), img.height()));
        }
        if lower.contains("size") || lower.contains("side") || lower.contains("resolution") {
            if let Some(c) = re(&NUM, r"(\d+)").captures(&lower) {
                let n: u32 = c[1].parse().unwrap_or(0);
                let ok = img.longest_side() == n;
                return yes_no(ok, format!("the longest side is {} pixels", img.longest_side()));
            }
        }
        "Cannot tell; the question needs a vision model.".into()
    }
}

fn orientation_phrase(k: usize) -> String {
    match k {
        0 => "the image keeps its original orientation".into(),
        4 => "the image is mirrored horizontally".into(),
        r if r < 4 => format!("the image is turned {} degrees clockwise", r * 90),
        r => format!("the image is mirrored and turned {} degrees clockwise", (r - 4) * 90),
    }
}

/// Exactly `b` outer rows and columns of pure white.
pub fn has_white_border(img: &Raster, b: u32) -> bool {
    b > 0 && white_frame_width(img) == b
}

impl Vqa for PropertyOracle {
    fn name(&self) -> String {
        "property-oracle".into()
    }

    fn answer(&self, image: ImageRef<'_>, question: &str) -> Result<String, String> {
        Ok(self.answer_text(image.raster, question))
    }
}

/// VQA through an adapter exposing the `LLaVA` tool.
pub struct AdapterVqa {
    pub transport: Arc<dyn Transport>,
    pub timeout: Duration,
}

impl Vqa for AdapterVqa {
    fn name(&self) -> String {
        format!("adapter({})", self.transport.describe())
    }

    fn answer(&self, image: ImageRef<'_>, question: &str) -> Result<String, String> {
        let path = image.path.ok_or("image is not on disk")?;
        let tag = hex::encode(sha2::Sha256::digest(format!("{}\n{question}", image.raster.digest())));
        let id = format!("vqa-{}", &tag[..12]);
        let req = AdapterRequest::new(id, "LLaVA")
            .arg("question", question)
            .input(path.to_string_lossy());
        let resp = invoke_external(self.transport.as_ref(), &req, self.timeout).map_err(|e| e.to_string())?;
        let out = resp.output_path.ok_or("no output")?;
        std::fs::read_to_string(&out).map_err(|e| format!("{out}: {e}"))
    }
}

/// Aesthetic score through an adapter exposing `AestheticScore`.
pub struct AdapterAesthetic {
    pub transport: Arc<dyn Transport>,
    pub timeout: Duration,
}

impl AestheticScorer for AdapterAesthetic {
    fn score(&self, image: ImageRef<'_>) -> Result<f64, String> {
        let path = image.path.ok_or("image is not on disk")?;
        let id = format!("aes-{}", &image.raster.digest()[..12]);
        let req = AdapterRequest::new(id, "AestheticScore").input(path.to_string_lossy());
        let resp = invoke_external(self.transport.as_ref(), &req, self.timeout).map_err(|e| e.to_string())?;
        resp.metrics
            .and_then(|m| m.get("aesthetic").copied())
            .ok_or_else(|| "no aesthetic metric in response".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub question: Question,
    pub verdict: Verdict,
    pub explanation: String,
}

/// One verdict per question; a failing VQA call yields "unknown".
pub fn answer_questions(vqa: &dyn Vqa, image: ImageRef<'_>, questions: &[Question]) -> Vec<Answer> {
    questions
        .iter()
        .map(|q| match vqa.answer(image, &q.text) {
            Ok(text) => {
                let yn = parse_yes_no(&text);
                Answer {
                    question: q.clone(),
                    verdict: yn.verdict,
                    explanation: yn.explanation,
                }
            }
            Err(e) => Answer {
                question: q.clone(),
                verdict: Verdict::Unknown,
                explanation: format!("no answer: {e}"),
            },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub answers: Vec<Answer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aesthetic: Option<f64>,
    pub summary: String,
    pub satisfied_count: u32,
    pub total_checks: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advice: Option<String>,
}

impl FeedbackReport {
    pub fn satisfied_ratio(&self) -> f64 {
        if self.total_checks == 0 {
            0.0
        } else {
            self.satisfied_count as f64 / self.total_checks as f64
        }
    }

    /// The feedback block placed into reflection prompts.
    pub fn render(&self) -> String {
        let mut out = format!("Satisfied checks: {}/{}\n", self.satisfied_count, self.total_checks);
        for a in &self.answers {
            out.push_str(&format!("- [{}] {}", a.verdict, a.question.text));
            if !a.explanation.is_empty() {
                out.push_str(&format!(" {}", a.explanation));
            }
            out.push('\n');
        }
        if let Some(s) = self.aesthetic {
            out.push_str(&format!("Aesthetic score: {s}\n"));
        }
        out.push_str(&format!("Summary: {}", self.summary));
        if let Some(a) = &self.advice {
            out.push_str(&format!("\nAdvice: {a}"));
        }
        out
    }

    /// Scoreless report for an agent that produced nothing this round.
    pub fn empty(reason: &str) -> Self {
        Self {
            answers: Vec::new(),
            aesthetic: None,
            summary: reason.to_string(),
            satisfied_count: 0,
            total_checks: 0,
            advice: None,
        }
    }
}

fn sentence(a: &Answer) -> String {
    if a.explanation.is_empty() {
        a.question.text.clone()
    } else {
        format!("{} ({})", a.question.text, a.explanation.trim_end_matches('.'))
    }
}

/// Failed checks lead the summary; the satisfied count covers item checks.
pub fn compile_feedback(answers: Vec<Answer>, aesthetic: Option<f64>) -> FeedbackReport {
    let items = || answers.iter().filter(|a| a.question.kind == QuestionKind::ItemCheck);
    let total = items().count() as u32;
    let satisfied = items().filter(|a| a.verdict == Verdict::Yes).count() as u32;
    let failed: Vec<String> = answers.iter().filter(|a| a.verdict == Verdict::No).map(sentence).collect();
    let unclear: Vec<String> = answers.iter().filter(|a| a.verdict == Verdict::Unknown).map(sentence).collect();
    let passed: Vec<String> = answers.iter().filter(|a| a.verdict == Verdict::Yes).map(sentence).collect();
    let mut parts = Vec::new();
    if total > 0 && satisfied == total && failed.is_empty() {
        parts.push("All checks satisfied.".to_string());
    } else {
        if !failed.is_empty() {
            parts.push(format!("Not satisfied: {}.", failed.join("; ")));
        }
        if !passed.is_empty() {
            parts.push(format!("Satisfied: {}.", passed.join("; ")));
        }
    }
    if !unclear.is_empty() {
        parts.push(format!("Unclear: {}.", unclear.join("; ")));
    }
    if let Some(s) = aesthetic {
        parts.push(format!("Aesthetic score: {s}."));
    }
    FeedbackReport {
        answers,
        aesthetic,
        summary: parts.join(" "),
        satisfied_count: satisfied,
        total_checks: total,
        advice: None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Suggestion {
    Keep,
    RetuneParams,
    ChangeTool {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    ChangeGoal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskFeedback {
    pub index: u32,
    pub verdict: Verdict,
    pub note: String,
    pub suggestion: Suggestion,
}

/// Reads a suggestion out of free-form feedback text.
pub fn suggestion_from(text: &str) -> Suggestion {
    static TOOL: OnceLock<Regex> = OnceLock::new();
    let lower = text.to_lowercase();
    if let Some(c) = re(&TOOL, r"(?i)chang(?:e|ing) (?:the )?tool to `?([A-Za-z0-9_-]+)").captures(text) {
        return Suggestion::ChangeTool { name: Some(c[1].to_string()) };
    }
    if ["different tool", "another tool", "alternative", "more suitable tool"].iter().any(|c| lower.contains(c)) {
        return Suggestion::ChangeTool { name: None };
    }
    if ["weak", "not been added", "not added", "not visible", "increase", "stronger", "too subtle", "barely"]
        .iter()
        .any(|c| lower.contains(c))
    {
        return Suggestion::RetuneParams;
    }
    if lower.contains("change the goal") || lower.contains("misunderstood") {
        return Suggestion::ChangeGoal;
    }
    Suggestion::Keep
}

const STOPWORDS: &[&str] = &[
    "the", "a", "an", "image", "is", "are", "to", "of", "in", "with", "and", "it", "its", "so", "be", "there",
    "does", "do", "has", "have", "been", "picture", "photo", "edited", "original", "compared", "using", "that",
    "this", "at", "by", "on", "for", "from", "into", "was", "were", "pixel", "pixels", "px", "should", "make",
];

fn concept(word: &str) -> Option<&'static str> {
    Some(match word {
        "gray" | "grey" | "grayscale" | "greyscale" | "monochrome" | "rgb2gray" => "#gray",
        "flip" | "flipped" | "flipping" | "mirror" | "mirrored" | "horizontally" | "horizontal" | "fliphorizontal" => "#flip",
        "rotate" | "rotated" | "rotation" | "rotating" | "clockwise" | "counterclockwise" | "degrees" | "turn"
        | "turned" | "rotateclockwise" | "rotatecounterclockwise" => "#rotate",
        "resize" | "resized" | "size" | "longest" | "longer" | "side" | "scale" | "scaled" => "#size",
        "border" | "frame" | "expand" | "padding" | "pad" | "imageexpand" => "#border",
        "watermark" | "watermarked" | "addwatermark" => "#watermark",
        "crop" | "cropped" | "cropping" | "region" => "#crop",
        _ => return None,
    })
}

fn stem(w: &str) -> String {
    for suf in ["ing", "ed", "es", "s"] {
        if w.len() > suf.len() + 2 {
            if let Some(s) = w.strip_suffix(suf) {
                return s.to_string();
            }
        }
    }
    w.to_string()
}

fn keywords(text: &str) -> Vec<String> {
    let mut out: Vec<String> = text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(w))
        .map(|w| concept(w).map(str::to_string).unwrap_or_else(|| stem(w)))
        .collect();
    out.sort();
    out.dedup();
    out
}

fn overlap(a: &[String], b: &[String]) -> u32 {
    a.iter()
        .filter(|w| b.contains(w))
        .map(|w| if w.starts_with('#') { 3 } else { 1 })
        .sum()
}

/// One entry per subtask. Each item-check answer goes to the subtask(s) it
/// overlaps most by keyword; a subtask's verdict is "no" if any of its
/// answers is, "yes" if all are, and "unknown" with no answers.
pub fn decompose_feedback(report: &FeedbackReport, plan: &Plan) -> Vec<SubtaskFeedback> {
    let goals: Vec<Vec<String>> = plan
        .subtasks
        .iter()
        .map(|s| keywords(&format!("{} {}", s.goal_text, s.tool_name)))
        .collect();
    let mut assigned: Vec<Vec<&Answer>> = vec![Vec::new(); plan.subtasks.len()];
    for a in report.answers.iter().filter(|a| a.question.kind == QuestionKind::ItemCheck) {
        let q = keywords(&a.question.text);
        let scores: Vec<u32> = goals.iter().map(|g| overlap(&q, g)).collect();
        let best = scores.iter().copied().max().unwrap_or(0);
        if best == 0 {
            continue;
        }
        for (i, s) in scores.iter().enumerate() {
            if *s == best {
                assigned[i].push(a);
            }
        }
    }
    plan.subtasks
        .iter()
        .zip(assigned)
        .map(|(s, answers)| {
            if answers.is_empty() {
                return SubtaskFeedback {
                    index: s.index,
                    verdict: Verdict::Unknown,
                    note: "no check refers to this subtask".into(),
                    suggestion: Suggestion::Keep,
                };
            }
            let verdict = if answers.iter().any(|a| a.verdict == Verdict::No) {
                Verdict::No
            } else if answers.iter().all(|a| a.verdict == Verdict::Yes) {
                Verdict::Yes
            } else {
                Verdict::Unknown
            };
            let note = answers.iter().map(|a| sentence(a)).collect::<Vec<_>>().join("; ");
            let suggestion = match verdict {
                Verdict::No => answers
                    .iter()
                    .filter(|a| a.verdict == Verdict::No)
                    .map(|a| suggestion_from(&a.explanation))
                    .find(|s| *s != Suggestion::Keep)
                    .unwrap_or(Suggestion::Keep),
                _ => Suggestion::Keep,
            };
            SubtaskFeedback {
                index: s.index,
                verdict,
                note,
                suggestion,
            }
        })
        .collect()
}

/// Per-subtask verdicts from the language model, falling back to keyword
/// matching when the completion does not list every subtask.
pub fn decompose_with_llm(
    gateway: &Gateway,
    report: &FeedbackReport,
    plan: &Plan,
    origin: CallOrigin,
) -> (Vec<SubtaskFeedback>, Vec<LlmCall>) {
    let vars: Vars = [("SUBTASKS", plan.render()), ("FEEDBACK", report.render())].into();
    let Ok(prompt) = render_template(TemplateId::FeedbackCompile, &vars) else {
        return (decompose_feedback(report, plan), Vec::new());
    };
    let n = plan.subtasks.len();
    let parsed = gateway.ask(TemplateId::FeedbackCompile, &prompt, origin, |t| parse_subtask_verdicts(t, n).ok_or(()));
    match parsed {
        Ok((verdicts, calls)) => {
            let fb = plan
                .subtasks
                .iter()
                .zip(verdicts)
                .map(|(s, v)| SubtaskFeedback {
                    index: s.index,
                    verdict: v.verdict,
                    suggestion: if v.verdict == Verdict::No { suggestion_from(&v.explanation) } else { Suggestion::Keep },
                    note: v.explanation,
                })
                .collect();
            (fb, calls)
        }
        Err(AskError::Format { calls, .. }) => (decompose_feedback(report, plan), calls),
        Err(AskError::Llm(_)) => (decompose_feedback(report, plan), Vec::new()),
    }
}

/// Lexicographic: satisfied ratio, then aesthetic (absent sorts lowest),
/// then earlier round, then lower agent id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub satisfied_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aesthetic: Option<f64>,
    pub round: u32,
    pub agent_id: u32,
}

impl QualityScore {
    pub fn of(report: &FeedbackReport, round: u32, agent_id: u32) -> Self {
        Self {
            satisfied_ratio: report.satisfied_ratio(),
            aesthetic: report.aesthetic,
            round,
            agent_id,
        }
    }

    /// Order on the leading fields only.
    pub fn cmp_quality(&self, other: &Self) -> Ordering {
        self.satisfied_ratio.total_cmp(&other.satisfied_ratio).then_with(|| match (self.aesthetic, other.aesthetic) {
            (Some(a), Some(b)) => a.total_cmp(&b),
            (Some(_), None) => Ordering::Greater,
            (None, Some(_)) => Ordering::Less,
            (None, None) => Ordering::Equal,
        })
    }

    /// Total order; `Greater` means better.
    pub fn cmp_total(&self, other: &Self) -> Ordering {
        self.cmp_quality(other)
            .then_with(|| other.round.cmp(&self.round))
            .then_with(|| other.agent_id.cmp(&self.agent_id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub round: u32,
    pub agent_id: u32,
    pub artifact: ArtifactId,
    pub digest: String,
    pub feedback: FeedbackReport,
}

impl Candidate {
    pub fn score(&self) -> QualityScore {
        QualityScore::of(&self.feedback, self.round, self.agent_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    /// Round in which the entry was appended.
    pub appended_round: u32,
    pub best: Candidate,
    pub score: QualityScore,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    pub entries: Vec<MemoryEntry>,
}

impl MemoryBank {
    pub fn best(&self) -> Option<&Candidate> {
        self.entries.last().map(|e| &e.best)
    }

    /// Appends the round's winner; at most one entry per round.
    pub fn update(&mut self, round: u32, winner: Candidate) {
        assert!(
            self.entries.last().is_none_or(|e| e.appended_round < round),
            "one memory entry per round"
        );
        let score = winner.score();
        self.entries.push(MemoryEntry {
            appended_round: round,
            best: winner,
            score,
        });
    }

    /// Leading score fields never decrease from one entry to the next.
    pub fn is_monotone(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| w[1].score.cmp_quality(&w[0].score) != Ordering::Less)
    }
}

pub const ALTERNATIVE_TOOL_ADVICE: &str = "select an alternative, more suitable tool";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompeteOutcome {
    pub winner: Candidate,
    pub from_memory: bool,
    /// Every contender scored the same on the leading fields.
    pub full_tie: bool,
}

/// Best of this round's candidates and the memory's current best.
pub fn compete(candidates: &[Candidate], memory: &MemoryBank) -> Option<CompeteOutcome> {
    let mut pool: Vec<(&Candidate, bool)> = candidates.iter().map(|c| (c, false)).collect();
    if let Some(m) = memory.best() {
        pool.push((m, true));
    }
    let (best, from_memory) = pool
        .iter()
        .copied()
        .max_by(|a, b| a.0.score().cmp_total(&b.0.score()))?;
    let full_tie = pool.len() >= 2 && pool.iter().all(|(c, _)| c.score().cmp_quality(&best.score()) == Ordering::Equal);
    let mut winner = best.clone();
    if full_tie && winner.feedback.total_checks > winner.feedback.satisfied_count {
        winner.feedback.advice = Some(ALTERNATIVE_TOOL_ADVICE.to_string());
    }
    Some(CompeteOutcome {
        winner,
        from_memory,
        full_tie,
    })
}

/// Aesthetic is advisory: only item checks decide.
pub fn should_stop(best: &FeedbackReport) -> bool {
    best.total_checks > 0 && best.satisfied_count == best.total_checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::parse::PlanItem;
    use crate::plan::Provenance;

    fn ans(q: &str, v: Verdict, e: &str) -> Answer {
        Answer {
            question: Question { text: q.into(), kind: classify_question(q) },
            verdict: v,
            explanation: e.into(),
        }
    }

    fn plan(items: &[(&str, &str)]) -> Plan {
        let items: Vec<PlanItem> = items
            .iter()
            .map(|(g, t)| PlanItem { goal_text: g.to_string(), tool_name: t.to_string() })
            .collect();
        Plan::from_items(1, 1, &items, Provenance::Initial)
    }

    fn cand(round: u32, agent: u32, sat: u32, total: u32, aes: Option<f64>) -> Candidate {
        Candidate {
            round,
            agent_id: agent,
            artifact: ArtifactId::step(round, agent, 1),
            digest: String::new(),
            feedback: FeedbackReport {
                answers: vec![],
                aesthetic: aes,
                summary: String::new(),
                satisfied_count: sat,
                total_checks: total,
                advice: None,
            },
        }
    }

    #[test]
    fn question_forms() {
        assert!(is_yes_no_question("Is the moon present in the photo?"));
        assert!(is_yes_no_question("2.Are streetlights visible?"));
        assert!(!is_yes_no_question("What color is the sky?"));
        assert_eq!(classify_question("Is the overall quality good?"), QuestionKind::GlobalQuality);
        assert_eq!(classify_question("Is the size of image changed to 800?"), QuestionKind::ItemCheck);
        let qs: Vec<String> = (0..7).map(|i| format!("Is item {i} there?")).collect();
        assert_eq!(select_questions(&qs).len(), MAX_QUESTIONS);
        let sel = select_questions(&["Is it gray?".into(), "Why?".into()]);
        assert_eq!(sel.len(), 2);
        assert_eq!(sel[1].kind, QuestionKind::GlobalQuality);
    }

    #[test]
    fn empty_goal_makes_no_call() {
        let g = Gateway::new(Arc::new(crate::llm::ScriptedBackend::new()));
        assert_eq!(
            generate_questions(&g, "cap", "  ", CallOrigin::default()),
            Err(DiscriminatorError::EmptyGoal)
        );
    }

    fn asym(w: u32, h: u32) -> Raster {
        let data = (0..w * h)
            .flat_map(|i| {
                let (x, y) = (i % w, i / w);
                let v = (20 + (x * 7 + y * y * 3) % 200) as u8;
                [v, (20 + (x * x + y) % 200) as u8, (20 + (x * 5 + y * 11) % 200) as u8]
            })
            .collect();
        Raster::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn oracle_answers_size_gray_orientation() {
        let img = asym(30, 20);
        let oracle = PropertyOracle::new(Arc::new(img.clone()));
        let ask = |r: &Raster, q: &str| parse_yes_no(&oracle.answer_text(r, q)).verdict;
        let big = raster::resize_bilinear(&img, 800, 533);
        assert_eq!(ask(&big, "Is the size of image changed to 800?"), Verdict::Yes);
        assert_eq!(ask(&img, "Is the size of image changed to 800?"), Verdict::No);
        // equal channels count as gray even in an RGB buffer
        let gray_rgb = raster::to_gray(&img).with_channels(3);
        assert_eq!(ask(&gray_rgb, "Is the image in grayscale?"), Verdict::Yes);
        assert_eq!(ask(&img, "Is the image in grayscale?"), Verdict::No);
        let flipped = raster::flip_horizontal(&img);
        assert_eq!(ask(&flipped, "Is the image flipped horizontally?"), Verdict::Yes);
        assert_eq!(ask(&img, "Is the image flipped horizontally?"), Verdict::No);
        let cw = raster::rotate_clockwise(&img);
        assert_eq!(ask(&cw, "Is the image rotated 90 degrees clockwise?"), Verdict::Yes);
        assert_eq!(ask(&cw, "Is the image rotated 270 degrees counterclockwise?"), Verdict::Yes);
        assert_eq!(ask(&cw, "Is the image rotated 180 degrees clockwise?"), Verdict::No);
        assert_eq!(ask(&img, "Is there a hat on the man?"), Verdict::Unknown);
    }

    #[test]
    fn oracle_border_watermark_crop() {
        let img = asym(40, 30);
        let oracle = PropertyOracle::new(Arc::new(img.clone()));
        let ask = |r: &Raster, q: &str| parse_yes_no(&oracle.answer_text(r, q)).verdict;
        let framed = raster::expand(&img, 10, [255, 255, 255]);
        assert_eq!(ask(&framed, "Is there a 10-pixel white border around the image?"), Verdict::Yes);
        assert_eq!(ask(&framed, "Is there a 50-pixel white border around the image?"), Verdict::No);
        let mark = crate::artifact::bundled_asset("watermark").unwrap();
        let marked = raster::composite(&img, &mark, 24, 14, 0.5);
        assert_eq!(ask(&marked, "Is there a watermark in the bottom-right corner?"), Verdict::Yes);
        assert_eq!(ask(&img, "Is there a watermark in the bottom-right corner?"), Verdict::No);
        let cropped = raster::crop(&img, 5, 5, 20, 12).unwrap();
        assert_eq!(ask(&cropped, "Is the image cropped to the region 5,5,20,12 of the original?"), Verdict::Yes);
        let other = raster::crop(&img, 15, 10, 20, 12).unwrap();
        assert_eq!(ask(&other, "Is the image cropped to the region 5,5,20,12 of the original?"), Verdict::No);
    }

    #[test]
    fn summary_puts_failures_first() {
        let r = compile_feedback(
            vec![
                ans("Is a rainbow added?", Verdict::Yes, "there is a rainbow"),
                ans("Are there sunflowers in the field?", Verdict::No, "there are no sunflowers in the field"),
                ans("Is there a barn?", Verdict::No, "no barn"),
                ans("Is the overall image free of artifacts?", Verdict::No, "some artifacts"),
            ],
            Some(6.3),
        );
        assert!(r.summary.starts_with("Not satisfied: Are there sunflowers in the field?"), "{}", r.summary);
        assert_eq!((r.satisfied_count, r.total_checks), (1, 3));
        assert!(r.summary.contains("Aesthetic score: 6.3"));
        let all = compile_feedback(vec![ans("Is it gray?", Verdict::Yes, "")], None);
        assert_eq!(all.summary, "All checks satisfied.");
        assert_eq!(all.satisfied_count, all.total_checks);
    }

    #[test]
    fn decomposition_matches_paper_style_example() {
        let p = plan(&[
            ("Add a rainbow to the sky", "InstructDiffusion"),
            ("Add sunflowers to the field", "Inpainting"),
            ("Add a red barn", "InstructDiffusion"),
        ]);
        let r = compile_feedback(
            vec![
                ans("Is a rainbow added in the sky?", Verdict::Yes, "Rainbow is successfully added"),
                ans(
                    "Are there sunflowers in the field?",
                    Verdict::No,
                    "there are no sunflowers in the field, suggest changing the tool to GroundingDINOInpainting",
                ),
                ans("Is there a red barn?", Verdict::No, "the barn is missing"),
            ],
            None,
        );
        let fb = decompose_feedback(&r, &p);
        assert_eq!(fb.len(), 3);
        assert_eq!((fb[0].verdict, &fb[0].suggestion), (Verdict::Yes, &Suggestion::Keep));
        assert_eq!(fb[1].verdict, Verdict::No);
        assert_eq!(fb[1].suggestion, Suggestion::ChangeTool { name: Some("GroundingDINOInpainting".into()) });
        assert_eq!((fb[2].verdict, &fb[2].suggestion), (Verdict::No, &Suggestion::Keep));
    }

    #[test]
    fn unmatched_subtasks_are_unknown() {
        let p = plan(&[("Convert to grayscale", "RGB2Gray"), ("Blur a little", "GaussianBlur")]);
        let r = compile_feedback(vec![ans("Is the image grayscale?", Verdict::No, "")], None);
        let fb = decompose_feedback(&r, &p);
        assert_eq!(fb[0].verdict, Verdict::No);
        assert_eq!((fb[1].verdict, &fb[1].suggestion), (Verdict::Unknown, &Suggestion::Keep));
    }

    #[test]
    fn comparator_examples() {
        let m = MemoryBank::default();
        let w = compete(&[cand(1, 1, 2, 3, None), cand(1, 2, 3, 3, None)], &m).unwrap();
        assert_eq!(w.winner.agent_id, 2);
        let w = compete(&[cand(1, 1, 2, 3, Some(6.3)), cand(1, 2, 2, 3, Some(6.1))], &m).unwrap();
        assert_eq!(w.winner.agent_id, 1);
        let mut mem = MemoryBank::default();
        mem.update(1, cand(1, 2, 3, 3, None));
        let w = compete(&[cand(2, 1, 1, 3, None)], &mem).unwrap();
        assert!(w.from_memory);
        assert_eq!(w.winner.round, 1);
        // singleton with empty memory returns itself
        let only = cand(1, 1, 0, 3, None);
        assert_eq!(compete(std::slice::from_ref(&only), &MemoryBank::default()).unwrap().winner, only);
    }

    #[test]
    fn full_tie_attaches_advice_and_prefers_earlier() {
        let mut mem = MemoryBank::default();
        mem.update(1, cand(1, 1, 1, 3, None));
        let w = compete(&[cand(2, 1, 1, 3, None), cand(2, 2, 1, 3, None)], &mem).unwrap();
        assert!(w.full_tie);
        assert_eq!((w.winner.round, w.winner.agent_id), (1, 1));
        assert_eq!(w.winner.feedback.advice.as_deref(), Some(ALTERNATIVE_TOOL_ADVICE));
    }

    #[test]
    fn stopping_rule() {
        let mut r = cand(1, 1, 3, 3, Some(1.0)).feedback;
        assert!(should_stop(&r));
        r.satisfied_count = 2;
        assert!(!should_stop(&r));
    }

    use proptest::prelude::*;

    fn arb_score() -> impl Strategy<Value = (u32, u32, Option<u8>)> {
        (1u32..6).prop_flat_map(|t| (0..=t, Just(t), proptest::option::of(0u8..4)))
    }

    proptest! {
        #[test]
        fn comparator_is_a_total_order(a in arb_score(), b in arb_score(), c in arb_score(), r in 1u32..4, ag in 1u32..4) {
            let mk = |s: (u32, u32, Option<u8>), k: u32| cand(r + k % 2, ag + k / 2, s.0, s.1, s.2.map(|v| v as f64)).score();
            let (x, y, z) = (mk(a, 0), mk(b, 1), mk(c, 2));
            prop_assert_eq!(x.cmp_total(&y), y.cmp_total(&x).reverse());
            if x.cmp_total(&y) != Ordering::Less && y.cmp_total(&z) != Ordering::Less {
                prop_assert!(x.cmp_total(&z) != Ordering::Less);
            }
        }

        #[test]
        fn memory_never_regresses(rounds in proptest::collection::vec(proptest::collection::vec(arb_score(), 1..4), 1..6)) {
            let mut mem = MemoryBank::default();
            for (i, round) in rounds.iter().enumerate() {
                let r = i as u32 + 1;
                let cs: Vec<Candidate> = round.iter().enumerate()
                    .map(|(a, s)| cand(r, a as u32 + 1, s.0, s.1, s.2.map(|v| v as f64)))
                    .collect();
                let out = compete(&cs, &mem).unwrap();
                for c in &cs {
                    prop_assert!(out.winner.score().cmp_quality(&c.score()) != Ordering::Less);
                }
                mem.update(r, out.winner);
            }
            prop_assert!(mem.is_monotone());
            prop_assert_eq!(mem.entries.len(), rounds.len());
        }
    }
}
