use crate::frontend::{ProbeKind, Procedure, Statement, StatementKind, TraceProbe};

/// Returns a copy of `proc` with trace probes inserted.
///
/// Each assignment and DML statement is followed by a probe. A branch taken
/// opens with a `Branch` probe and closes with `EndScope`; an `IF` without
/// `ELSE` gets an else branch holding only those two probes. A loop body opens
/// with `LoopIter { continues: true }` and closes with `EndScope`, and the
/// loop is followed by `LoopIter { continues: false }` for the failing check.
pub fn instrument(proc: &Procedure) -> Procedure {
    Procedure {
        name: proc.name.clone(),
        params: proc.params.clone(),
        body: block(&proc.body),
    }
}

fn probe(s: &Statement, kind: ProbeKind) -> Statement {
    Statement {
        id: s.id,
        span: s.span,
        kind: StatementKind::Trace(TraceProbe {
            statement: s.id,
            kind,
        }),
    }
}

fn scoped(s: &Statement, open: ProbeKind, body: &[Statement]) -> Vec<Statement> {
    let mut out = vec![probe(s, open)];
    out.extend(block(body));
    out.push(probe(s, ProbeKind::EndScope));
    out
}

fn block(stmts: &[Statement]) -> Vec<Statement> {
    let mut out = Vec::with_capacity(stmts.len() * 2);
    for s in stmts {
        match &s.kind {
            StatementKind::Declare { .. } | StatementKind::Trace(_) => out.push(s.clone()),
            StatementKind::AssignScalar { var, .. } => {
                out.push(s.clone());
                out.push(probe(s, ProbeKind::AssignScalar { var: var.clone() }));
            }
            StatementKind::AssignTable { var, .. } => {
                out.push(s.clone());
                out.push(probe(
                    s,
                    ProbeKind::AssignTable {
                        var: var.clone(),
                        query_id: super::query_id(s.id),
                    },
                ));
            }
            StatementKind::Dml(_) => {
                out.push(s.clone());
                out.push(probe(s, ProbeKind::Dml));
            }
            StatementKind::If {
                cond,
                then_branch,
                else_branch,
            } => out.push(Statement {
                id: s.id,
                span: s.span,
                kind: StatementKind::If {
                    cond: cond.clone(),
                    then_branch: scoped(s, ProbeKind::Branch { taken: true }, then_branch),
                    else_branch: scoped(s, ProbeKind::Branch { taken: false }, else_branch),
                },
            }),
            StatementKind::While { cond, body } => {
                out.push(Statement {
                    id: s.id,
                    span: s.span,
                    kind: StatementKind::While {
                        cond: cond.clone(),
                        body: scoped(s, ProbeKind::LoopIter { continues: true }, body),
                    },
                });
                out.push(probe(s, ProbeKind::LoopIter { continues: false }));
            }
        }
    }
    out
}
