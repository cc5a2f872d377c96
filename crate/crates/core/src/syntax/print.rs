//! Pretty-printing back to concrete syntax.
//!
//! `pretty` emits the multi-line form with indented fun bodies; for
//! task-free terms `parse(pretty(e))` is structurally `e`. `pretty_inline`
//! emits a single line with braced fun bodies, which is the form embedded in
//! trace and replay files.

use std::fmt::Write;

use super::{Expr, LabeledExpr, Operation, PrimExpr, PrimValue, Statement, ANON_HANDLE_BASE};

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            other => out.push(other),
        }
    }
    out
}

/// Bare rendering of a primitive value (no surrounding `< >`).
pub fn render_prim_value(c: &PrimValue) -> String {
    match c {
        PrimValue::Int(n) => n.to_string(),
        PrimValue::Str(s) => format!("\"{}\"", escape(s)),
        PrimValue::Bool(true) => "t".to_string(),
        PrimValue::Bool(false) => "f".to_string(),
        PrimValue::Unit => "()".to_string(),
        PrimValue::Handle(h) => match &h.name {
            Some(n) => format!("&{n}"),
            None => format!("&#{}", h.id & !ANON_HANDLE_BASE),
        },
        PrimValue::ExternFn(n) => format!("@{n}"),
    }
}

/// Canonical text of a primitive expression, used for replay keys.
pub fn render_prim_expr(c: &PrimExpr) -> String {
    match c {
        PrimExpr::Value(v) => render_prim_value(v),
        PrimExpr::Tuple(parts) => {
            let inner: Vec<String> = parts.iter().map(render_prim_expr).collect();
            format!("({})", inner.join(", "))
        }
    }
}

fn write_op_head(out: &mut String, op: &Operation) {
    match op {
        Operation::Alias(x) => {
            let _ = write!(out, "{x}");
        }
        Operation::Call { f, arg } => {
            let _ = write!(out, "{f} {arg}");
        }
        Operation::Tuple(xs) => {
            let names: Vec<&str> = xs.iter().map(|x| x.as_str()).collect();
            let _ = write!(out, "({})", names.join(", "));
        }
        Operation::Proj { index, tuple } => {
            let _ = write!(out, "prj {index} {tuple}");
        }
        Operation::Prim(c) => {
            let _ = write!(out, "<{}>", render_prim_value(c));
        }
        Operation::Task(t) => {
            let _ = write!(
                out,
                "<<{} {} {}>>",
                t.fn_name(),
                render_prim_expr(&t.arg),
                t.task
            );
        }
        Operation::Fun { .. } => unreachable!("fun handled by caller"),
    }
}

fn write_stmt(out: &mut String, s: &Statement, indent: usize) {
    let pad = "    ".repeat(indent);
    match &s.op {
        Operation::Fun { param, body } => {
            let _ = writeln!(out, "{pad}{} := fun {param}:", s.bound);
            write_block(out, body, indent + 1);
        }
        other => {
            let _ = write!(out, "{pad}{} := ", s.bound);
            write_op_head(out, other);
            out.push('\n');
        }
    }
}

fn write_block(out: &mut String, e: &Expr, indent: usize) {
    let pad = "    ".repeat(indent);
    for s in &e.stmts {
        write_stmt(out, s, indent);
    }
    let _ = writeln!(out, "{pad}ret {}", e.ret);
}

/// Multi-line concrete syntax.
pub fn pretty(e: &Expr) -> String {
    let mut out = String::new();
    write_block(&mut out, e, 0);
    out
}

fn write_stmt_inline(out: &mut String, s: &Statement) {
    match &s.op {
        Operation::Fun { param, body } => {
            let _ = write!(out, "{} := fun {param}: {{ ", s.bound);
            write_block_inline(out, body);
            out.push_str(" }");
        }
        other => {
            let _ = write!(out, "{} := ", s.bound);
            write_op_head(out, other);
        }
    }
}

fn write_block_inline(out: &mut String, e: &Expr) {
    for s in &e.stmts {
        write_stmt_inline(out, s);
        out.push_str("; ");
    }
    let _ = write!(out, "ret {}", e.ret);
}

/// Single-line concrete syntax with braced fun bodies.
pub fn pretty_inline(e: &Expr) -> String {
    let mut out = String::new();
    write_block_inline(&mut out, e);
    out
}

/// Debug rendering of a labeled expression, one `label: stmt` per line.
pub fn pretty_labeled(p: &LabeledExpr) -> String {
    let mut out = String::new();
    for (l, s) in &p.stmts {
        let mut line = String::new();
        match &s.op {
            Operation::Fun { param, body } => {
                let _ = write!(line, "{}: {} := fun {param}:", l, s.bound);
                out.push_str(&line);
                out.push('\n');
                write_block(&mut out, body, 1);
                continue;
            }
            other => {
                let _ = write!(line, "{}: {} := ", l, s.bound);
                write_op_head(&mut line, other);
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    let _ = writeln!(out, "ret {}", p.ret);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse, Var};

    #[test]
    fn minimal_program() {
        let e = parse("x := <7>\nret x").unwrap();
        assert_eq!(pretty(&e), "x := <7>\nret x\n");
    }

    #[test]
    fn roundtrip_fun_layout() {
        let src = "g := fun x:\n    y := f x\n    ret y\nz := g w\nret z\n";
        let e = parse(src).unwrap();
        assert_eq!(pretty(&e), src);
        assert_eq!(parse(&pretty(&e)).unwrap(), e);
    }

    #[test]
    fn inline_roundtrip() {
        let src = "g := fun x:\n    y := f x\n    ret y\nz := g w\nret z\n";
        let e = parse(src).unwrap();
        let inline = pretty_inline(&e);
        assert_eq!(parse(&inline).unwrap(), e);
    }

    #[test]
    fn literals_roundtrip() {
        let src = r#"a := <7>
b := <-3>
c := <"hi \"there\"">
d := <t>
e := <f>
u := <()>
h := <&stdout>
i := <&#12>
p := <@print>
ret a
"#;
        let e = parse(src).unwrap();
        assert_eq!(parse(&pretty(&e)).unwrap(), e);
        assert_eq!(e.stmts[0].bound, Var::new("a"));
    }
}
