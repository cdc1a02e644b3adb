#![allow(dead_code)]

use std::path::PathBuf;

use dialogic::providers::ChatRequest;

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden").join(name)
}

/// Compare `actual` with the stored golden file. `UPDATE_GOLDEN=1` rewrites it.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        return Ok(());
    }
    let line = expected
        .lines()
        .zip(actual.lines())
        .position(|(a, b)| a != b)
        .unwrap_or_else(|| expected.lines().count().min(actual.lines().count()));
    Err(format!(
        "{name} differs from golden at line {}:\n  expected: {:?}\n  actual:   {:?}",
        line + 1,
        expected.lines().nth(line),
        actual.lines().nth(line)
    ))
}

pub fn render_request(req: &ChatRequest) -> String {
    let mut out = format!("# purpose: {}\n", req.purpose);
    for m in &req.messages {
        out.push_str(&format!("--- {:?}\n{}\n", m.role, m.content));
    }
    out
}
