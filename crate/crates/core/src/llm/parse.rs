//! Parsers for every structured completion the engine consumes.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanItem {
    pub goal_text: String,
    pub tool_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanParseError {
    #[error("no numbered subtasks found")]
    NoSubtasksFound,
    #[error("no registered tool named in subtask `{line}`")]
    UnknownToolName { line: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed tool call: {0}")]
pub struct FormatError(pub String);

/// `Tool @@ arg1 <-> arg2`. Arguments are raw strings, bound later against
/// the tool's schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallLine {
    pub tool: String,
    pub args: Vec<String>,
}

pub const SEPARATOR: &str = "<->";
pub const ALT_SEPARATOR: &str = "\u{2194}";
pub const MARKER: &str = "@@";

impl ToolCallLine {
    pub fn new(tool: impl Into<String>, args: Vec<String>) -> Self {
        Self { tool: tool.into(), args }
    }

    /// Canonical form, always with the ASCII separator.
    pub fn render(&self) -> String {
        if self.args.is_empty() {
            format!("{} {MARKER}", self.tool)
        } else {
            format!("{} {MARKER} {}", self.tool, self.args.join(&format!(" {SEPARATOR} ")))
        }
    }

    /// Whether `render` then `parse_tool_call` gives this value back. Args may
    /// not hold separators, newlines or surrounding whitespace; a lone empty
    /// argument is indistinguishable from no arguments.
    pub fn is_representable(&self) -> bool {
        let tool_ok = !self.tool.is_empty() && self.tool.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        let args_ok = self.args.iter().all(|a| {
            a.trim() == a && !a.contains(SEPARATOR) && !a.contains(ALT_SEPARATOR) && !a.contains('\n') && !a.contains('\r')
        });
        tool_ok && args_ok && self.args != [String::new()]
    }
}

impl fmt::Display for ToolCallLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn is_tool_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

/// Reads the first line holding `@@`. The tool is the last token before the
/// marker; everything after it splits on either separator.
pub fn parse_tool_call(text: &str) -> Result<ToolCallLine, FormatError> {
    let line = text
        .lines()
        .find(|l| l.contains(MARKER))
        .ok_or_else(|| FormatError("no `@@` marker".into()))?;
    let line = line.trim().trim_matches('`').trim();
    let (head, tail) = line.split_once(MARKER).expect("line holds marker");
    let tool: String = head
        .split_whitespace()
        .last()
        .unwrap_or("")
        .trim_matches(|c: char| !is_tool_char(c))
        .to_string();
    if tool.is_empty() || !tool.chars().all(is_tool_char) {
        return Err(FormatError(format!("no tool name before `@@` in `{line}`")));
    }
    let tail = tail.trim();
    let args = if tail.is_empty() {
        Vec::new()
    } else {
        tail.replace(ALT_SEPARATOR, SEPARATOR)
            .split(SEPARATOR)
            .map(|a| a.trim().to_string())
            .collect()
    };
    Ok(ToolCallLine { tool, args })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
    Unknown,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Yes => "yes",
            Verdict::No => "no",
            Verdict::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct YesNo {
    pub verdict: Verdict,
    pub explanation: String,
}

/// Verdict from the leading word; the rest is explanation.
pub fn parse_yes_no(text: &str) -> YesNo {
    let trimmed = text.trim();
    let body = trimmed.trim_start_matches(|c: char| !c.is_alphanumeric());
    let word_end = body.find(|c: char| !c.is_alphabetic()).unwrap_or(body.len());
    let verdict = match body[..word_end].to_ascii_lowercase().as_str() {
        "yes" | "yeah" | "yep" | "true" | "correct" => Verdict::Yes,
        "no" | "nope" | "false" | "incorrect" => Verdict::No,
        _ => Verdict::Unknown,
    };
    let explanation = match verdict {
        Verdict::Unknown => trimmed.to_string(),
        _ => body[word_end..]
            .trim_start_matches(|c: char| c.is_whitespace() || ",.:;!-".contains(c))
            .trim_end()
            .to_string(),
    };
    YesNo { verdict, explanation }
}

/// Splits a completion into its numbered items, accepting only the sequence
/// 1, 2, 3... so numbers inside item text (`512 pixels`, `2.5`) are ignored.
/// Items may sit on separate lines or inline (`1. a; 2. b`).
pub fn numbered_items(text: &str) -> Vec<String> {
    let text = text.replace("\\n", "\n");
    let bytes = text.as_bytes();
    let mut starts: Vec<(usize, usize)> = Vec::new(); // (marker start, body start)
    let mut expected = 1u32;
    let mut i = 0;
    while i < bytes.len() {
        let boundary = i == 0 || {
            let p = bytes[i - 1];
            p.is_ascii_whitespace() || p == b';' || p == b'*' || p == b'(' || p == b'#'
        };
        if boundary && bytes[i].is_ascii_digit() {
            let mut j = i;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            let n: u32 = text[i..j].parse().unwrap_or(0);
            let punct = j < bytes.len() && matches!(bytes[j], b'.' | b')' | b':');
            let after = j + 1;
            let spaced = after >= bytes.len() || !bytes[after].is_ascii_digit();
            if n == expected && punct && spaced {
                starts.push((i, after));
                expected += 1;
                i = after;
                continue;
            }
            i = j;
            continue;
        }
        i += text[i..].chars().next().map_or(1, char::len_utf8);
    }
    let mut items = Vec::new();
    for (k, &(_, body)) in starts.iter().enumerate() {
        let end = starts.get(k + 1).map_or(text.len(), |&(s, _)| s);
        let item = text[body..end]
            .trim()
            .trim_start_matches(['*', ' '])
            .trim_end_matches(|c: char| c.is_whitespace() || c == ';' || c == '*')
            .to_string();
        items.push(item);
    }
    items
}

fn words(s: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices().chain(std::iter::once((s.len(), ' '))) {
        if c.is_alphanumeric() {
            start.get_or_insert(i);
        } else if let Some(st) = start.take() {
            out.push((st, i, s[st..i].to_lowercase()));
        }
    }
    out
}

const TOOL_CUES: &[&str] = &["using", "use", "with", "via", "by", "tool"];

/// Finds the tool an item names: n-grams of up to three words are matched
/// against normalized registry names. A match right after a cue word
/// ("using X") wins, otherwise the last match. Returns (tool, byte offset
/// where the tool clause begins).
pub fn find_tool(item: &str, registry: &Registry) -> Option<(String, usize)> {
    let ws = words(item);
    let mut best: Option<(String, usize, bool)> = None;
    for i in 0..ws.len() {
        for n in (1..=3).rev() {
            if i + n > ws.len() {
                continue;
            }
            let joined: String = ws[i..i + n].iter().map(|w| w.2.as_str()).collect();
            if let Some(spec) = registry.resolve(&joined) {
                let cued = i > 0 && TOOL_CUES.contains(&ws[i - 1].2.as_str());
                let clause = if cued { ws[i - 1].0 } else { ws[i].0 };
                if cued || !best.as_ref().is_some_and(|b| b.2) {
                    best = Some((spec.name.clone(), clause, cued));
                }
                break;
            }
        }
    }
    best.map(|(n, c, _)| (n, c))
}

/// Numbered subtasks bound to registered tools, in order.
pub fn parse_plan(text: &str, registry: &Registry) -> Result<Vec<PlanItem>, PlanParseError> {
    let items = numbered_items(text);
    if items.is_empty() {
        return Err(PlanParseError::NoSubtasksFound);
    }
    items
        .into_iter()
        .map(|item| {
            let first_line = item.lines().next().unwrap_or("").trim().to_string();
            let (tool, clause) =
                find_tool(&first_line, registry).ok_or(PlanParseError::UnknownToolName { line: first_line.clone() })?;
            let mut goal = first_line[..clause].trim_end_matches(|c: char| c.is_whitespace() || ",;:-".contains(c));
            if goal.is_empty() {
                goal = first_line.trim_end_matches('.');
            }
            Ok(PlanItem {
                goal_text: goal.trim_end_matches('.').trim().to_string(),
                tool_name: tool,
            })
        })
        .collect()
}

/// Renders a plan the way the planner is asked to write one.
pub fn render_plan(items: &[PlanItem]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, it)| format!("{}. {} using {}", i + 1, it.goal_text, it.tool_name))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reflection {
    Keep,
    Revised(Vec<PlanItem>),
}

/// A leading "No" keeps the plan; otherwise the completion must hold a plan.
pub fn parse_reflection(text: &str, registry: &Registry) -> Result<Reflection, PlanParseError> {
    if parse_yes_no(text).verdict == Verdict::No {
        return Ok(Reflection::Keep);
    }
    parse_plan(text, registry).map(Reflection::Revised)
}

/// Numbered items, or failing that every line ending in a question mark.
pub fn parse_questions(text: &str) -> Vec<String> {
    let items = numbered_items(text);
    let items = if items.is_empty() {
        text.lines()
            .map(str::trim)
            .filter(|l| l.ends_with('?'))
            .map(str::to_string)
            .collect()
    } else {
        items
    };
    items
        .into_iter()
        .map(|q| q.lines().next().unwrap_or("").trim().to_string())
        .filter(|q| !q.is_empty())
        .collect()
}

/// Lines `<n>. <Yes|No|Unknown> - note` from the decomposition prompt.
pub fn parse_subtask_verdicts(text: &str, n: usize) -> Option<Vec<YesNo>> {
    let items = numbered_items(text);
    if items.len() != n {
        return None;
    }
    Some(items.iter().map(|i| parse_yes_no(i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tool_call_examples() {
        assert_eq!(
            parse_tool_call("Resize @@ image/in.png <-> 512").unwrap(),
            ToolCallLine::new("Resize", vec!["image/in.png".into(), "512".into()])
        );
        assert!(parse_tool_call("Resize 512").is_err());
        assert!(parse_tool_call(" @@ x").is_err());
        assert_eq!(
            parse_tool_call("Sure! Here it is:\n`InstructDiffusion @@ a.png ↔ add a hat ↔ 5.0`").unwrap(),
            ToolCallLine::new("InstructDiffusion", vec!["a.png".into(), "add a hat".into(), "5.0".into()])
        );
        assert_eq!(parse_tool_call("FlipHorizontal @@").unwrap().args, Vec::<String>::new());
        assert_eq!(parse_tool_call("T @@ a <->  <-> c").unwrap().args, vec!["a", "", "c"]);
        assert_eq!(parse_tool_call("Call: **Crop** @@ x").unwrap().tool, "Crop");
    }

    #[test]
    fn fuzz_tool_calls_never_panic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let alphabet: Vec<char> = "ab @<->↔\n`*:_12".chars().collect();
        for i in 0..1000 {
            let s: String = if i % 2 == 0 {
                let bytes: Vec<u8> = (0..rng.random_range(0..60)).map(|_| rng.random()).collect();
                String::from_utf8_lossy(&bytes).into_owned()
            } else {
                (0..rng.random_range(0..40)).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
            };
            if let Ok(call) = parse_tool_call(&s) {
                assert!(!call.tool.is_empty());
            }
        }
    }

    #[test]
    fn yes_no_examples() {
        let y = parse_yes_no("Yes, the dog has been changed to the corgi.");
        assert_eq!(y.verdict, Verdict::Yes);
        assert_eq!(y.explanation, "the dog has been changed to the corgi.");
        assert_eq!(parse_yes_no("No."), YesNo { verdict: Verdict::No, explanation: String::new() });
        let u = parse_yes_no("The image is nice.");
        assert_eq!(u.verdict, Verdict::Unknown);
        assert_eq!(u.explanation, "The image is nice.");
        assert_eq!(parse_yes_no("**Yes**").verdict, Verdict::Yes);
        assert_eq!(parse_yes_no("Nothing changed").verdict, Verdict::Unknown);
    }

    #[test]
    fn inline_plan_with_numbers_inside() {
        let reg = Registry::shipped();
        let text = "1. Resize the image to 512 pixels using Resize; 2. Change background to a county fair using Edict; 3. Add cowboy hat to the man using InstructDiffusion.";
        let plan = parse_plan(text, &reg).unwrap();
        assert_eq!(
            plan.iter().map(|p| p.tool_name.as_str()).collect::<Vec<_>>(),
            ["Resize", "Edict", "InstructDiffusion"]
        );
        assert_eq!(plan[0].goal_text, "Resize the image to 512 pixels");
        assert_eq!(plan[2].goal_text, "Add cowboy hat to the man");
    }

    #[test]
    fn template_example_plan_parses() {
        let reg = Registry::shipped();
        let text = "1. Resize the image to have its longest side at 800 pixels using Resize; 2. Add a vintage-style hat to the person in the image using Instructdiffusion; 3. Apply a sepia tone filter to the entire image Edict.";
        let plan = parse_plan(text, &reg).unwrap();
        assert_eq!(plan.len(), 3);
        assert_eq!(plan[1].tool_name, "InstructDiffusion");
        assert_eq!(plan[2].tool_name, "Edict");
    }

    #[test]
    fn mangled_tool_names_resolve_uniquely() {
        let reg = Registry::shipped();
        let table = [
            ("instructdiffusion", "InstructDiffusion"),
            ("Instruct Diffusion", "InstructDiffusion"),
            ("INSTRUCT-DIFFUSION", "InstructDiffusion"),
            ("resize", "Resize"),
            (" RESIZE ", "Resize"),
            ("rgb2gray", "RGB2Gray"),
            ("RGB 2 Gray", "RGB2Gray"),
            ("rgb_2_gray", "RGB2Gray"),
            ("flip horizontal", "FlipHorizontal"),
            ("Flip-Horizontal", "FlipHorizontal"),
            ("gaussian blur", "GaussianBlur"),
            ("GAUSSIANBLUR", "GaussianBlur"),
            ("add watermark", "AddWatermark"),
            ("image expand", "ImageExpand"),
            ("image_expand", "ImageExpand"),
            ("grounding dino", "GroundingDINO"),
            ("groundingdino", "GroundingDINO"),
            ("rotate clockwise", "RotateClockwise"),
            ("Prompt2prompt", "Prompt2Prompt"),
            ("aesthetic score", "AestheticScore"),
        ];
        for (mangled, want) in table {
            let item = format!("1. do the thing using {mangled}");
            let plan = parse_plan(&item, &reg).unwrap_or_else(|e| panic!("{mangled}: {e}"));
            assert_eq!(plan[0].tool_name, want, "{mangled}");
        }
    }

    #[test]
    fn plan_errors() {
        let reg = Registry::shipped();
        assert_eq!(parse_plan("just do it", &reg), Err(PlanParseError::NoSubtasksFound));
        assert!(matches!(
            parse_plan("1. paint it using Photoshop", &reg),
            Err(PlanParseError::UnknownToolName { .. })
        ));
    }

    #[test]
    fn reflection_keep_and_revise() {
        let reg = Registry::shipped();
        assert_eq!(parse_reflection("No.", &reg).unwrap(), Reflection::Keep);
        assert_eq!(parse_reflection("No, only the tool should change.", &reg).unwrap(), Reflection::Keep);
        let r = parse_reflection("Yes. New plan:\n1. Convert to gray using RGB2Gray\n2. Mirror using FlipHorizontal", &reg).unwrap();
        assert!(matches!(r, Reflection::Revised(ref p) if p.len() == 2));
    }

    #[test]
    fn questions_from_escaped_newlines() {
        let qs = parse_questions("1. Is it night?\\n 2.Are lights on?\\n 3. Is the size of image changed to 800?");
        assert_eq!(qs, ["Is it night?", "Are lights on?", "Is the size of image changed to 800?"]);
        assert_eq!(parse_questions("Is it gray?\nNice.\nIs it flipped?"), ["Is it gray?", "Is it flipped?"]);
    }

    #[test]
    fn render_plan_round_trips() {
        let reg = Registry::shipped();
        let items = vec![
            PlanItem { goal_text: "Resize the image to 256 pixels".into(), tool_name: "Resize".into() },
            PlanItem { goal_text: "Convert to grayscale".into(), tool_name: "RGB2Gray".into() },
        ];
        assert_eq!(parse_plan(&render_plan(&items), &reg).unwrap(), items);
    }

    fn arg_strategy() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9_./,: -]{0,12}".prop_map(|s| s.trim().to_string())
    }

    proptest! {
        #[test]
        fn grammar_round_trip(tool in "[A-Za-z][A-Za-z0-9_]{0,15}", args in prop::collection::vec(arg_strategy(), 0..5)) {
            let v = ToolCallLine::new(tool, args);
            prop_assume!(v.is_representable());
            prop_assert_eq!(parse_tool_call(&v.render()).unwrap(), v);
        }

        #[test]
        fn canonical_form_is_a_fixpoint(s in "[A-Za-z]{1,6} ?@@[ a-z0-9<>↔-]{0,30}") {
            if let Ok(v) = parse_tool_call(&s) {
                let once = v.render();
                prop_assert_eq!(parse_tool_call(&once).unwrap().render(), once);
            }
        }
    }
}
