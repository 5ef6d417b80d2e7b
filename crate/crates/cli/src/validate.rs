//! Consistency checks over bundled data and user files.

use std::path::{Path, PathBuf};

use gamelab_core::agents::builtin_catalog;
use gamelab_core::equilibrium::support_enumeration_nash;
use gamelab_core::gateway::prompt::{render_prompt, scan_placeholders, Bindings, PromptTemplate};
use gamelab_core::matrix::{validate_matrix, PayoffMatrix};
use gamelab_core::persistence::{read_envelopes, validate_envelope};
use gamelab_core::protocol::presets::RunConfig;

#[derive(Default)]
pub struct Report {
    pub checked: usize,
    pub failures: Vec<String>,
}

impl Report {
    fn check(&mut self, what: impl Into<String>, result: Result<(), String>) {
        self.checked += 1;
        if let Err(e) = result {
            self.failures.push(format!("{}: {e}", what.into()));
        }
    }
}

fn shipped_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn run(fixtures: Option<&Path>, files: &[PathBuf]) -> Report {
    let mut r = Report::default();
    for name in PayoffMatrix::bundled_names() {
        r.check(format!("matrix {name}"), check_matrix(PayoffMatrix::bundled(name)));
    }
    for (name, spec) in builtin_catalog() {
        r.check(format!("agent {name}"), spec.validate(None).map_err(|e| e.to_string()));
    }
    for t in PromptTemplate::all() {
        r.check(format!("template {:?}/{:?}", t.game, t.part), check_template(t));
    }
    let dir = match fixtures {
        Some(d) => Some(d.to_path_buf()),
        None => [PathBuf::from("fixtures"), shipped_fixtures()]
            .into_iter()
            .find(|p| p.is_dir()),
    };
    match dir {
        Some(d) if d.is_dir() => {
            let mut found = Vec::new();
            collect(&d, &mut found);
            found.sort();
            for f in found {
                check_file(&mut r, &f);
            }
        }
        Some(d) => r.check(d.display().to_string(), Err("not a directory".into())),
        None => {}
    }
    for f in files {
        if f.exists() {
            check_file(&mut r, f);
        } else {
            r.check(f.display().to_string(), Err("no such file".into()));
        }
    }
    r
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            collect(&p, out);
        } else {
            out.push(p);
        }
    }
}

fn check_matrix(m: Option<PayoffMatrix>) -> Result<(), String> {
    let m = m.ok_or("missing")?;
    let v = validate_matrix(&m);
    if !v.is_empty() {
        let list: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        return Err(list.join("; "));
    }
    if support_enumeration_nash(&m).is_empty() {
        return Err("no equilibrium found".into());
    }
    let again = PayoffMatrix::parse(&m.to_text()).map_err(|e| e.to_string())?;
    if again != m {
        return Err("text form does not round-trip".into());
    }
    Ok(())
}

fn check_template(t: PromptTemplate) -> Result<(), String> {
    let slots = t.slots().map_err(|e| e.to_string())?;
    let values: Bindings = slots.iter().map(|s| (s.clone(), "x".to_string())).collect();
    let text = render_prompt(t, &values).map_err(|e| e.to_string())?;
    let left = scan_placeholders(&text);
    if !left.is_empty() {
        return Err(format!("unfilled placeholders {left:?}"));
    }
    Ok(())
}

fn check_file(r: &mut Report, path: &Path) {
    let name = path.display().to_string();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let result = match ext {
        "jsonl" => check_log(path),
        "json" => check_json(path),
        "csv" => check_csv(path),
        "matrix" => std::fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|t| PayoffMatrix::parse(&t).map_err(|e| e.to_string()))
            .and_then(|m| check_matrix(Some(m))),
        _ => return,
    };
    r.check(name, result);
}

fn check_log(path: &Path) -> Result<(), String> {
    let envs = read_envelopes(path).map_err(|e| e.to_string())?;
    if envs.is_empty() {
        return Err("empty log".into());
    }
    for env in &envs {
        validate_envelope(env).map_err(|e| format!("seq {} of {}: {e}", env.seq, env.match_id))?;
    }
    Ok(())
}

/// Run configs are recognized by parsing; other JSON only has to be well formed.
fn check_json(path: &Path) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let looks_like_config = v
        .as_object()
        .is_some_and(|o| o.contains_key("profile") || o.contains_key("agents") || o.contains_key("endpoints"));
    if looks_like_config {
        RunConfig::load(path).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn check_csv(path: &Path) -> Result<(), String> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let width = rd.headers().map_err(|e| e.to_string())?.len();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| format!("row {}: {e}", i + 1))?;
        if rec.len() != width {
            return Err(format!("row {} has {} fields, header has {width}", i + 1, rec.len()));
        }
    }
    Ok(())
}
