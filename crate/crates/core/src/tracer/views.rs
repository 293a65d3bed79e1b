use std::fmt::Write;

use crate::frontend::{render_query_with, Procedure, StatementKind, VarType};

fn text_literal(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

/// View definitions that reconstruct each table variable at a step.
///
/// `{step}` stands for the requested step and `{trace_id}` for the run.
/// Each assignment site gets `V_<var>_<statement_id>`, the site's query with
/// every variable read replaced by that variable's master view one step
/// earlier. `V_<var>__MASTER` picks the site of the latest assignment at or
/// before `{step}` and evaluates it at that assignment's step. Scalar
/// variables read by some query get a master view that looks up the most
/// recently traced value.
pub fn emit_reconstruction_views(proc: &Procedure) -> String {
    let vars = proc.variables();
    let mut sites: Vec<(String, u32, String)> = Vec::new();
    let mut read_scalars: Vec<String> = Vec::new();
    for s in proc.statements() {
        if let StatementKind::AssignTable { var, query } = &s.kind {
            let text = render_query_with(query, &|v| Some(format!("V_{v}__MASTER({{step}} - 1)")));
            sites.push((var.clone(), s.id.0, text));
            for a in query.variables() {
                let scalar = vars.iter().any(|(n, t)| n == &a && !t.is_table());
                if scalar && !read_scalars.contains(&a) {
                    read_scalars.push(a);
                }
            }
        }
    }

    let mut out = String::new();
    for (name, ty) in &vars {
        match ty {
            VarType::Table => {
                let mine: Vec<_> = sites.iter().filter(|(v, ..)| v == name).collect();
                if mine.is_empty() {
                    continue;
                }
                for (_, id, text) in &mine {
                    let _ = writeln!(out, "CREATE VIEW V_{name}_{id} AS\n  {text} AT STEP {{step}};\n");
                }
                let _ = writeln!(out, "CREATE VIEW V_{name}__MASTER AS");
                let _ = writeln!(
                    out,
                    "  WITH last AS (SELECT statement_id, step FROM TRACE_EVENTS WHERE trace_id = {{trace_id}} AND var = {} AND step <= {{step}} ORDER BY step DESC LIMIT 1)",
                    text_literal(name)
                );
                let branches: Vec<String> = mine
                    .iter()
                    .map(|(_, id, _)| {
                        format!("  SELECT v.* FROM last JOIN V_{name}_{id}(last.step) v ON last.statement_id = {id}")
                    })
                    .collect();
                let _ = writeln!(out, "{};\n", branches.join("\n  UNION ALL\n"));
            }
            VarType::Scalar(_) if read_scalars.contains(name) => {
                let _ = writeln!(out, "CREATE VIEW V_{name}__MASTER AS");
                let _ = writeln!(
                    out,
                    "  SELECT s.value FROM TRACE_EVENTS e JOIN TRACE_SCALARS s ON s.trace_id = e.trace_id AND s.step = e.step WHERE e.trace_id = {{trace_id}} AND e.var = {} AND e.step <= {{step}} ORDER BY e.step DESC LIMIT 1;\n",
                    text_literal(name)
                );
            }
            VarType::Scalar(_) => {}
        }
    }
    out
}
