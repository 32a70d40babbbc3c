use std::collections::{BTreeSet, HashSet};

use super::{
    is_glob, FileDecl, FileOverrides, GroupDecl, GroupTarget, OpKind, PatternOverride, TaskGraph, TaskSpec, TraceOp,
    Workload,
};
use crate::error::WorkloadError;
use crate::units::parse_size;

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Files,
    Groups,
    Tasks,
}

/// Parse and validate a workload file: syntax, per-task open/close discipline, and
/// the derived dependency graph (unknown files, cycles, reads of never-written files).
pub fn parse_workload(text: &str) -> Result<(Workload, TaskGraph), WorkloadError> {
    let w = Workload::parse(text)?;
    let g = TaskGraph::build(&w)?;
    Ok((w, g))
}

fn syntax(line: usize, msg: impl Into<String>) -> WorkloadError {
    WorkloadError::Syntax { line, msg: msg.into() }
}

impl Workload {
    /// Syntax-level parse. Use [`parse_workload`] to also validate dependencies.
    pub fn parse(text: &str) -> Result<Workload, WorkloadError> {
        let mut w = Workload::default();
        let mut section = Section::None;
        let mut file_names = HashSet::new();
        let mut task_ids = HashSet::new();
        let mut group_names = HashSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if content.starts_with('[') {
                section = match content {
                    "[files]" => Section::Files,
                    "[groups]" => Section::Groups,
                    "[tasks]" => Section::Tasks,
                    other => return Err(syntax(line, format!("unknown section {other}"))),
                };
                continue;
            }
            match section {
                Section::None => return Err(syntax(line, "content before the first section header")),
                Section::Files => {
                    let entry = parse_file_line(content, line)?;
                    match entry {
                        FileLine::Decl(d) => {
                            if !file_names.insert(d.name.clone()) {
                                return Err(syntax(line, format!("file {:?} declared twice", d.name)));
                            }
                            w.files.push(d);
                        }
                        FileLine::Pattern(p) => w.patterns.push(p),
                    }
                }
                Section::Groups => {
                    let g = parse_group_line(content, line)?;
                    if !group_names.insert(g.name.clone()) {
                        return Err(syntax(line, format!("group {:?} declared twice", g.name)));
                    }
                    w.groups.push(g);
                }
                Section::Tasks => {
                    if let Some(rest) =
                        content
                            .strip_prefix("task ")
                            .or(if content == "task" { Some("") } else { None })
                    {
                        let t = parse_task_header(rest, line)?;
                        if !task_ids.insert(t.id.clone()) {
                            return Err(syntax(line, format!("task {:?} declared twice", t.id)));
                        }
                        w.tasks.push(t);
                    } else {
                        let op = parse_op(content, line)?;
                        let task = w
                            .tasks
                            .last_mut()
                            .ok_or_else(|| syntax(line, "operation before any `task` header"))?;
                        if let Some(prev) = task.ops.last() {
                            if op.timestamp < prev.timestamp {
                                return Err(syntax(line, "timestamps within a task must not decrease"));
                            }
                        }
                        task.ops.push(op);
                    }
                }
            }
        }
        for t in &w.tasks {
            check_open_close(t)?;
        }
        Ok(w)
    }
}

enum FileLine {
    Decl(FileDecl),
    Pattern(PatternOverride),
}

fn parse_file_line(content: &str, line: usize) -> Result<FileLine, WorkloadError> {
    let mut parts = content.split_whitespace();
    let name = parts.next().expect("non-empty line").to_string();
    let size_tok = parts
        .next()
        .ok_or_else(|| syntax(line, format!("file {name:?} needs a size or `-`")))?;
    let size = if size_tok == "-" {
        None
    } else {
        Some(parse_size(size_tok).map_err(|e| syntax(line, e.to_string()))?)
    };
    let mut overrides = FileOverrides::default();
    let mut at = None;
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| syntax(line, format!("expected key=value, got {kv:?}")))?;
        match k {
            "placement" => {
                overrides.placement = Some(
                    v.parse()
                        .map_err(|e: crate::error::ConfigError| syntax(line, e.to_string()))?,
                )
            }
            "replication" => overrides.replication_level = Some(positive(v, line, k)?),
            "stripe" => overrides.stripe_width = Some(positive(v, line, k)?),
            "at" => at = Some(v.parse().map_err(|_| syntax(line, format!("bad host id {v:?}")))?),
            _ => return Err(syntax(line, format!("unknown file key {k:?}"))),
        }
    }
    if is_glob(&name) {
        glob::Pattern::new(&name).map_err(|e| syntax(line, format!("bad glob {name:?}: {e}")))?;
        if size.is_some() || at.is_some() {
            return Err(syntax(line, "glob overrides take `-` as size and no at="));
        }
        return Ok(FileLine::Pattern(PatternOverride {
            pattern: name,
            overrides,
        }));
    }
    if name.contains(',') {
        return Err(syntax(line, "file names cannot contain commas"));
    }
    Ok(FileLine::Decl(FileDecl {
        name,
        size,
        overrides,
        at,
    }))
}

fn positive(v: &str, line: usize, key: &str) -> Result<u32, WorkloadError> {
    match v.parse::<u32>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(syntax(line, format!("{key} must be a positive integer, got {v:?}"))),
    }
}

fn parse_group_line(content: &str, line: usize) -> Result<GroupDecl, WorkloadError> {
    let mut parts = content.split_whitespace();
    let name = parts.next().expect("non-empty line").to_string();
    let kv = parts
        .next()
        .ok_or_else(|| syntax(line, format!("group {name:?} needs host= or consumer=")))?;
    if parts.next().is_some() {
        return Err(syntax(line, "a group takes exactly one target"));
    }
    let target = match kv.split_once('=') {
        Some(("host", h)) => GroupTarget::Host(h.parse().map_err(|_| syntax(line, format!("bad host id {h:?}")))?),
        Some(("consumer", t)) if !t.is_empty() => GroupTarget::Consumer(t.to_string()),
        _ => return Err(syntax(line, format!("unknown group key in {kv:?}"))),
    };
    Ok(GroupDecl { name, target })
}

fn parse_task_header(rest: &str, line: usize) -> Result<TaskSpec, WorkloadError> {
    let mut parts = rest.split_whitespace();
    let id = parts
        .next()
        .ok_or_else(|| syntax(line, "task header needs an id"))?
        .to_string();
    let mut pin = None;
    for kv in parts {
        match kv.split_once('=') {
            Some(("pin", h)) => pin = Some(h.parse().map_err(|_| syntax(line, format!("bad host id {h:?}")))?),
            _ => return Err(syntax(line, format!("unknown task key in {kv:?}"))),
        }
    }
    Ok(TaskSpec {
        id,
        pin,
        ops: Vec::new(),
    })
}

fn parse_op(content: &str, line: usize) -> Result<TraceOp, WorkloadError> {
    let fields: Vec<&str> = content.split(',').map(str::trim).collect();
    if fields.len() != 6 {
        return Err(syntax(
            line,
            format!(
                "expected 6 fields timestamp,client,op,file,offset,size; got {}",
                fields.len()
            ),
        ));
    }
    let num = |s: &str, what: &str| parse_size(s).map_err(|_| syntax(line, format!("bad {what} {s:?}")));
    let kind: OpKind = fields[2].parse().map_err(|e: String| syntax(line, e))?;
    if fields[3].is_empty() {
        return Err(syntax(line, "empty file name"));
    }
    Ok(TraceOp {
        timestamp: num(fields[0], "timestamp")?,
        client: fields[1]
            .parse()
            .map_err(|_| syntax(line, format!("bad client id {:?}", fields[1])))?,
        kind,
        file: fields[3].to_string(),
        offset: num(fields[4], "offset")?,
        size: num(fields[5], "size")?,
        line,
    })
}

/// Reads and writes must happen between an open and a close of the same file, and
/// every opened file must be closed before the task ends.
fn check_open_close(task: &TaskSpec) -> Result<(), WorkloadError> {
    let mut open = BTreeSet::new();
    for op in &task.ops {
        let err = |msg: String| syntax(op.line, format!("task {:?}: {msg}", task.id));
        match op.kind {
            OpKind::Open => {
                if !open.insert(op.file.as_str()) {
                    return Err(err(format!("{:?} opened twice", op.file)));
                }
            }
            OpKind::Close => {
                if !open.remove(op.file.as_str()) {
                    return Err(err(format!("close of {:?} which is not open", op.file)));
                }
            }
            OpKind::Read | OpKind::Write => {
                if !open.contains(op.file.as_str()) {
                    return Err(err(format!("{} of {:?} outside open/close", op.kind, op.file)));
                }
            }
        }
    }
    if let Some(f) = open.into_iter().next() {
        return Err(WorkloadError::Invalid(format!("task {:?} never closes {f:?}", task.id)));
    }
    Ok(())
}
