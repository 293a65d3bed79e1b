use serde::Serialize;

use super::{EventKind, Trace, TraceError};
use crate::frontend::StatementId;
use crate::storage::LogicalTime;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeNode {
    pub step: LogicalTime,
    pub statement_id: StatementId,
    pub kind: EventKind,
    pub var: Option<String>,
    pub parent: Option<LogicalTime>,
    pub children: Vec<LogicalTime>,
}

/// Steps nested under the branch or loop iteration that enclosed them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionTree {
    pub nodes: Vec<TreeNode>,
    pub roots: Vec<LogicalTime>,
}

impl ExecutionTree {
    pub fn node(&self, step: LogicalTime) -> Option<&TreeNode> {
        self.index(step).map(|i| &self.nodes[i])
    }

    fn index(&self, step: LogicalTime) -> Option<usize> {
        self.nodes.binary_search_by_key(&step, |n| n.step).ok()
    }

    pub fn depth(&self, step: LogicalTime) -> usize {
        let mut d = 0;
        let mut cur = self.node(step).and_then(|n| n.parent);
        while let Some(p) = cur {
            d += 1;
            cur = self.node(p).and_then(|n| n.parent);
        }
        d
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn build_execution_tree(trace: &Trace) -> Result<ExecutionTree, TraceError> {
    let mut nodes: Vec<TreeNode> = Vec::with_capacity(trace.events.len());
    let mut roots = Vec::new();
    for e in &trace.events {
        if let Some(prev) = nodes.last() {
            if e.step != prev.step.next() {
                return Err(TraceError::MalformedTrace(format!(
                    "gap between steps {} and {}",
                    prev.step, e.step
                )));
            }
        }
        match e.parent_step {
            None => roots.push(e.step),
            Some(p) => {
                if p >= e.step {
                    return Err(TraceError::MalformedTrace(format!(
                        "step {} has parent {p}",
                        e.step
                    )));
                }
                let first = nodes.first().map_or(e.step, |n| n.step);
                let i = (p.get().checked_sub(first.get()))
                    .map(|i| i as usize)
                    .filter(|&i| i < nodes.len())
                    .ok_or_else(|| TraceError::MalformedTrace(format!("step {} has unknown parent {p}", e.step)))?;
                if !nodes[i].kind.opens_scope() {
                    return Err(TraceError::MalformedTrace(format!(
                        "parent {p} of step {} is not a branch or loop iteration",
                        e.step
                    )));
                }
                nodes[i].children.push(e.step);
            }
        }
        nodes.push(TreeNode {
            step: e.step,
            statement_id: e.statement_id,
            kind: e.kind,
            var: e.var.clone(),
            parent: e.parent_step,
            children: Vec::new(),
        });
    }
    Ok(ExecutionTree { nodes, roots })
}
