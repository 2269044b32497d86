//! Breadth-first search over builtin tool sequences, the ground truth for
//! which synthetic tasks are solvable within a length bound.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use super::task::{Predicate, SyntheticTask};
use crate::artifact::{bundled_asset, Payload};
use crate::llm::parse::ToolCallLine;
use crate::raster::Raster;
use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("search budget of {cap} nodes exceeded")]
    SearchBudgetExceeded { cap: usize },
    #[error("registry lacks builtin `{0}`")]
    MissingTool(String),
}

pub const DEFAULT_NODE_CAP: usize = 50_000;

/// Candidate calls: a small argument grid per tool. Crop only offers the
/// task's own region.
pub fn arg_grid(task: &SyntheticTask) -> Vec<ToolCallLine> {
    let img = "image".to_string();
    let mut grid = vec![
        ToolCallLine::new("Resize", vec![img.clone(), "256".into()]),
        ToolCallLine::new("Resize", vec![img.clone(), "512".into()]),
        ToolCallLine::new("RGB2Gray", vec![img.clone()]),
        ToolCallLine::new("FlipHorizontal", vec![img.clone()]),
        ToolCallLine::new("RotateClockwise", vec![img.clone()]),
        ToolCallLine::new("RotateCounterClockwise", vec![img.clone()]),
        ToolCallLine::new("ImageExpand", vec![img.clone(), "10".into()]),
        ToolCallLine::new("ImageExpand", vec![img.clone(), "50".into()]),
        ToolCallLine::new("AddWatermark", vec![img.clone(), "builtin:watermark".into(), "0.5".into()]),
    ];
    for p in &task.predicates {
        if let Predicate::Cropped { x, y, w, h } = p {
            grid.push(ToolCallLine::new("Crop", vec![img.clone(), format!("{x},{y},{w},{h}")]));
        }
    }
    grid
}

/// Applies one grid call through the registry.
pub fn apply(registry: &Registry, call: &ToolCallLine, img: &Raster) -> Result<Option<Raster>, OracleError> {
    let spec = registry.get(&call.tool).ok_or_else(|| OracleError::MissingTool(call.tool.clone()))?;
    let Ok(bound) = spec.bind(&call.args) else {
        return Ok(None);
    };
    let base = Payload::raster(img.clone());
    let extra = match call.tool.as_str() {
        "AddWatermark" => Some(Payload::raster(bundled_asset("watermark").expect("bundled"))),
        _ => None,
    };
    let mut inputs = vec![&base];
    if let Some(e) = &extra {
        inputs.push(e);
    }
    match registry.invoke_builtin(&spec.name, &bound, &inputs) {
        Ok(Payload::Raster(r)) => Ok(Some((*r).clone())),
        _ => Ok(None),
    }
}

fn state_hash(img: &Raster) -> u64 {
    let mut h = DefaultHasher::new();
    (img.width(), img.height(), img.channels()).hash(&mut h);
    img.data().hash(&mut h);
    h.finish()
}

/// Shortest satisfying sequence up to `max_len` calls, or `None` when the
/// bound is exhausted. Duplicate intermediate images are expanded once.
pub fn oracle_solve(
    task: &SyntheticTask,
    registry: &Registry,
    max_len: usize,
    node_cap: usize,
) -> Result<Option<Vec<ToolCallLine>>, OracleError> {
    let input = task.input();
    if task.check(&input, &input).passed() {
        return Ok(Some(Vec::new()));
    }
    let grid = arg_grid(task);
    let mut seen = HashSet::from([state_hash(&input)]);
    let mut frontier: Vec<(Raster, Vec<usize>)> = vec![(input.clone(), Vec::new())];
    let mut nodes = 0usize;
    for _depth in 0..max_len {
        let mut next = Vec::new();
        for (img, path) in &frontier {
            for (i, call) in grid.iter().enumerate() {
                nodes += 1;
                if nodes > node_cap {
                    return Err(OracleError::SearchBudgetExceeded { cap: node_cap });
                }
                let Some(out) = apply(registry, call, img)? else {
                    continue;
                };
                if !seen.insert(state_hash(&out)) {
                    continue;
                }
                let mut p = path.clone();
                p.push(i);
                if task.check(&input, &out).passed() {
                    return Ok(Some(p.into_iter().map(|i| grid[i].clone()).collect()));
                }
                next.push((out, p));
            }
        }
        frontier = next;
    }
    Ok(None)
}

/// Runs a sequence and reports whether the task's checker accepts it.
pub fn verify_plan(task: &SyntheticTask, registry: &Registry, plan: &[ToolCallLine]) -> Result<bool, OracleError> {
    let input = task.input();
    let mut img = input.clone();
    for call in plan {
        match apply(registry, call, &img)? {
            Some(out) => img = out,
            None => return Ok(false),
        }
    }
    Ok(task.check(&input, &img).passed())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> Registry {
        Registry::shipped().builtins_only()
    }

    #[test]
    fn gray_and_flip_needs_two_steps() {
        let t = SyntheticTask::new(0, 3, 90, 70, vec![Predicate::Grayscale, Predicate::FlippedH]);
        let plan = oracle_solve(&t, &reg(), 3, DEFAULT_NODE_CAP).unwrap().unwrap();
        assert_eq!(plan.len(), 2);
        let mut tools: Vec<&str> = plan.iter().map(|c| c.tool.as_str()).collect();
        tools.sort();
        assert_eq!(tools, ["FlipHorizontal", "RGB2Gray"]);
        assert!(verify_plan(&t, &reg(), &plan).unwrap());
    }

    #[test]
    fn depth_three_goal_out_of_reach_at_two() {
        let t = SyntheticTask::new(
            0,
            4,
            90,
            70,
            vec![Predicate::Grayscale, Predicate::FlippedH, Predicate::Watermark],
        );
        assert_eq!(oracle_solve(&t, &reg(), 2, DEFAULT_NODE_CAP).unwrap(), None);
        assert_eq!(oracle_solve(&t, &reg(), 3, DEFAULT_NODE_CAP).unwrap().map(|p| p.len()), Some(3));
    }

    #[test]
    fn identity_goal_gives_empty_plan() {
        // an input that is already gray
        let mut t = SyntheticTask::new(0, 4, 90, 70, vec![Predicate::Grayscale]);
        t.predicates.clear();
        assert_eq!(oracle_solve(&t, &reg(), 2, DEFAULT_NODE_CAP).unwrap(), Some(vec![]));
    }

    #[test]
    fn node_cap_is_reported() {
        let t = SyntheticTask::new(0, 4, 90, 70, vec![Predicate::Grayscale, Predicate::FlippedH, Predicate::Watermark]);
        assert_eq!(
            oracle_solve(&t, &reg(), 3, 15),
            Err(OracleError::SearchBudgetExceeded { cap: 15 })
        );
    }
}
