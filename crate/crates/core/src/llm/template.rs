//! Prompt templates with `{NAME}` placeholders.
//!
//! `{#NAME}...{/NAME}` keeps its body only when `NAME` is supplied and
//! `{^NAME}...{/NAME}` only when it is not. Sections do not nest.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    PlannerInitial,
    PlannerReflect,
    QuestionGen,
    ExecutorToolcall,
    FeedbackCompile,
    CompetitorJudge,
    PlannerOnestage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelTier {
    Strong,
    Fast,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::PlannerInitial,
        TemplateId::PlannerReflect,
        TemplateId::QuestionGen,
        TemplateId::ExecutorToolcall,
        TemplateId::FeedbackCompile,
        TemplateId::CompetitorJudge,
        TemplateId::PlannerOnestage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::PlannerInitial => "planner_initial",
            TemplateId::PlannerReflect => "planner_reflect",
            TemplateId::QuestionGen => "question_gen",
            TemplateId::ExecutorToolcall => "executor_toolcall",
            TemplateId::FeedbackCompile => "feedback_compile",
            TemplateId::CompetitorJudge => "competitor_judge",
            TemplateId::PlannerOnestage => "planner_onestage",
        }
    }

    pub fn parse(s: &str) -> Option<TemplateId> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn body(self) -> &'static str {
        match self {
            TemplateId::PlannerInitial => include_str!("../../templates/planner_initial.txt"),
            TemplateId::PlannerReflect => include_str!("../../templates/planner_reflect.txt"),
            TemplateId::QuestionGen => include_str!("../../templates/question_gen.txt"),
            TemplateId::ExecutorToolcall => include_str!("../../templates/executor_toolcall.txt"),
            TemplateId::FeedbackCompile => include_str!("../../templates/feedback_compile.txt"),
            TemplateId::CompetitorJudge => include_str!("../../templates/competitor_judge.txt"),
            TemplateId::PlannerOnestage => include_str!("../../templates/planner_onestage.txt"),
        }
    }

    /// Planning and evaluation go to the strong model, argument filling and
    /// judging to the fast one.
    pub fn tier(self) -> ModelTier {
        match self {
            TemplateId::ExecutorToolcall | TemplateId::CompetitorJudge => ModelTier::Fast,
            _ => ModelTier::Strong,
        }
    }

    /// Appended as a follow-up turn when a completion fails to parse.
    pub fn format_reminder(self) -> &'static str {
        match self {
            TemplateId::PlannerInitial | TemplateId::PlannerReflect => {
                "Your answer could not be read. Give the plan as a numbered list, one subtask per item, each ending with \"using <ToolName>\" where <ToolName> is one of the listed tools."
            }
            TemplateId::QuestionGen => "Your answer could not be read. Give at most five numbered Yes or No questions, one per line.",
            TemplateId::ExecutorToolcall => {
                "Your answer could not be read. Reply with one line only: ToolName @@ arg1 <-> arg2 <-> ..."
            }
            TemplateId::FeedbackCompile => "Your answer could not be read. Reply with one line per subtask: <number>. <Yes|No|Unknown> - <note>",
            TemplateId::CompetitorJudge => "Your answer could not be read. Reply with the number of the best result only.",
            TemplateId::PlannerOnestage => {
                "Your answer could not be read. Give a numbered list; each item is a subtask ending with \"using <ToolName>\" followed by a line ToolName @@ arg1 <-> arg2."
            }
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every placeholder any template may use.
pub const PLACEHOLDERS: &[&str] = &[
    "IMAGE_PATH",
    "EDITING_REQUEST",
    "TOOL_NAMES",
    "TOOL_DESCRIPTIONS",
    "SUBTASKS",
    "FEEDBACK",
    "PLAN",
    "CAPTION",
    "MANUAL",
    "MANUALS",
    "TOOL_NAME",
    "SUBTASK",
    "PREVIOUS_CALL",
    "PEER_PLAN",
    "PEER_FEEDBACK",
    "CANDIDATES",
];

/// Inserted for variables supplied with an empty value, so a first-round
/// reflection with no feedback still renders.
pub const EMPTY_SENTINEL: &str = "(empty)";

pub type Vars = BTreeMap<&'static str, String>;

enum Piece<'a> {
    Text(&'a str),
    Var(&'a str),
    Section { name: &'a str, inverted: bool, body: Vec<Piece<'a>> },
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_uppercase() || b == b'_')
}

fn parse_pieces<'a>(src: &'a str, in_section: Option<&str>) -> Result<(Vec<Piece<'a>>, usize), String> {
    let mut out = Vec::new();
    let mut i = 0;
    let mut text_start = 0;
    while let Some(off) = src[i..].find('{') {
        let at = i + off;
        let Some(close) = src[at..].find('}') else { break };
        let inner = &src[at + 1..at + close];
        let end = at + close + 1;
        let (sigil, name) = match inner.chars().next() {
            Some(c @ ('#' | '^' | '/')) => (Some(c), &inner[1..]),
            _ => (None, inner),
        };
        if !is_name(name) {
            i = at + 1;
            continue;
        }
        if at > text_start {
            out.push(Piece::Text(&src[text_start..at]));
        }
        match sigil {
            None => out.push(Piece::Var(name)),
            Some('/') => {
                return match in_section {
                    Some(open) if open == name => Ok((out, end)),
                    _ => Err(format!("unbalanced section end `{name}`")),
                };
            }
            Some(c) => {
                if in_section.is_some() {
                    return Err(format!("nested section `{name}`"));
                }
                let (body, used) = parse_pieces(&src[end..], Some(name))?;
                out.push(Piece::Section {
                    name,
                    inverted: c == '^',
                    body,
                });
                i = end + used;
                text_start = i;
                continue;
            }
        }
        i = end;
        text_start = end;
    }
    if let Some(open) = in_section {
        return Err(format!("section `{open}` never closed"));
    }
    if text_start < src.len() {
        out.push(Piece::Text(&src[text_start..]));
    }
    Ok((out, src.len()))
}

/// Names of every placeholder and section the body refers to.
pub fn placeholders(body: &str) -> Result<Vec<String>, String> {
    fn walk(pieces: &[Piece<'_>], out: &mut Vec<String>) {
        for p in pieces {
            match p {
                Piece::Text(_) => {}
                Piece::Var(n) => out.push(n.to_string()),
                Piece::Section { name, body, .. } => {
                    out.push(name.to_string());
                    walk(body, out);
                }
            }
        }
    }
    let (pieces, _) = parse_pieces(body, None)?;
    let mut out = Vec::new();
    walk(&pieces, &mut out);
    out.sort();
    out.dedup();
    Ok(out)
}

fn render_pieces(pieces: &[Piece<'_>], vars: &Vars, out: &mut String) -> Result<(), LlmError> {
    for p in pieces {
        match p {
            Piece::Text(t) => out.push_str(t),
            Piece::Var(n) => match vars.get(n) {
                Some(v) if v.trim().is_empty() => out.push_str(EMPTY_SENTINEL),
                Some(v) => out.push_str(v),
                None => return Err(LlmError::MissingVariable(n.to_string())),
            },
            Piece::Section { name, inverted, body } => {
                if vars.contains_key(name) != *inverted {
                    render_pieces(body, vars, out)?;
                }
            }
        }
    }
    Ok(())
}

pub fn render_body(body: &str, vars: &Vars) -> Result<String, LlmError> {
    let (pieces, _) = parse_pieces(body, None).map_err(LlmError::Template)?;
    let mut out = String::with_capacity(body.len() + vars.values().map(String::len).sum::<usize>());
    render_pieces(&pieces, vars, &mut out)?;
    Ok(out)
}

pub fn render_template(id: TemplateId, vars: &Vars) -> Result<String, LlmError> {
    render_body(id.body(), vars)
}
