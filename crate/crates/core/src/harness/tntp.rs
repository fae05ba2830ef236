//! Reader and writer for the TNTP network and trip-table text formats.
//!
//! Network files start with `<KEY> value` metadata lines closed by
//! `<END OF METADATA>`; link rows are whitespace separated and end with `;`.
//! Lines whose first non-blank character is `~` are comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TntpLink {
    pub init_node: usize,
    pub term_node: usize,
    pub capacity: f64,
    pub length: f64,
    pub free_flow_time: f64,
    pub b: f64,
    pub power: f64,
    pub speed_limit: f64,
    pub toll: f64,
    pub link_type: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TntpNetwork {
    pub zones: usize,
    pub nodes: usize,
    pub first_thru_node: usize,
    /// Link `k` (1-based in the file) is `links[k - 1]`.
    pub links: Vec<TntpLink>,
}

impl TntpNetwork {
    /// 1-based link number of the first `init -> term` link.
    pub fn link_number(&self, init: usize, term: usize) -> Option<usize> {
        self.links
            .iter()
            .position(|l| l.init_node == init && l.term_node == term)
            .map(|p| p + 1)
    }

    pub fn link(&self, number: usize) -> Option<&TntpLink> {
        number.checked_sub(1).and_then(|k| self.links.get(k))
    }
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Splits the metadata block off; returns the key/value map and the line
/// index where the body starts.
fn metadata<'a>(lines: &[&'a str], label: &str) -> Result<(BTreeMap<String, (usize, &'a str)>, usize)> {
    let mut meta = BTreeMap::new();
    for (idx, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if !line.starts_with('<') {
            return Err(parse_err(label, idx + 1, "expected a <KEY> metadata line"));
        }
        let close = line
            .find('>')
            .ok_or_else(|| parse_err(label, idx + 1, "unterminated metadata key"))?;
        let key = line[1..close].trim().to_ascii_uppercase();
        if key == "END OF METADATA" {
            return Ok((meta, idx + 1));
        }
        meta.insert(key, (idx + 1, line[close + 1..].trim()));
    }
    if lines.iter().all(|l| l.trim().is_empty()) {
        Err(parse_err(label, 1, "empty file"))
    } else {
        Err(parse_err(label, lines.len(), "missing <END OF METADATA>"))
    }
}

fn meta_count(meta: &BTreeMap<String, (usize, &str)>, key: &str, label: &str) -> Result<Option<usize>> {
    match meta.get(key) {
        None => Ok(None),
        Some(&(line, v)) => v
            .parse::<f64>()
            .ok()
            .filter(|x| *x >= 0.0 && x.fract() == 0.0)
            .map(|x| Some(x as usize))
            .ok_or_else(|| {
                parse_err(
                    label,
                    line,
                    format!("<{key}> must be a non-negative integer, got {v:?}"),
                )
            }),
    }
}

pub fn load_tntp(path: &Path) -> Result<TntpNetwork> {
    parse_tntp(&read(path)?, &path.display().to_string())
}

/// Parses network text; `label` names the source in errors.
pub fn parse_tntp(text: &str, label: &str) -> Result<TntpNetwork> {
    let lines: Vec<&str> = text.lines().collect();
    let (meta, body) = metadata(&lines, label)?;
    let nodes = meta_count(&meta, "NUMBER OF NODES", label)?
        .ok_or_else(|| parse_err(label, body, "missing <NUMBER OF NODES>"))?;
    let n_links = meta_count(&meta, "NUMBER OF LINKS", label)?
        .ok_or_else(|| parse_err(label, body, "missing <NUMBER OF LINKS>"))?;
    let zones = meta_count(&meta, "NUMBER OF ZONES", label)?.unwrap_or(nodes);
    let first_thru_node = meta_count(&meta, "FIRST THRU NODE", label)?.unwrap_or(1);

    let mut links = Vec::with_capacity(n_links);
    for (idx, raw) in lines.iter().enumerate().skip(body) {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        let row = line
            .strip_suffix(';')
            .ok_or_else(|| parse_err(label, line_no, "link row must end with ';'"))?;
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != 10 {
            return Err(parse_err(
                label,
                line_no,
                format!("expected 10 link fields, found {}", fields.len()),
            ));
        }
        let num = |k: usize, name: &str| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(label, line_no, format!("bad {name} {:?}", fields[k])))
        };
        let node = |k: usize, name: &str| -> Result<usize> {
            let v = fields[k]
                .parse::<usize>()
                .map_err(|_| parse_err(label, line_no, format!("bad {name} {:?}", fields[k])))?;
            if v == 0 || v > nodes {
                return Err(parse_err(label, line_no, format!("{name} {v} outside 1..={nodes}")));
            }
            Ok(v)
        };
        let capacity = num(2, "capacity")?;
        if capacity <= 0.0 {
            return Err(parse_err(
                label,
                line_no,
                format!("capacity {capacity} must be positive"),
            ));
        }
        links.push(TntpLink {
            init_node: node(0, "init node")?,
            term_node: node(1, "term node")?,
            capacity,
            length: num(3, "length")?,
            free_flow_time: num(4, "free-flow time")?,
            b: num(5, "b")?,
            power: num(6, "power")?,
            speed_limit: num(7, "speed limit")?,
            toll: num(8, "toll")?,
            link_type: fields[9]
                .parse()
                .map_err(|_| parse_err(label, line_no, format!("bad link type {:?}", fields[9])))?,
        });
    }
    if links.len() != n_links {
        return Err(parse_err(
            label,
            lines.len(),
            format!("header declares {n_links} links, found {}", links.len()),
        ));
    }
    Ok(TntpNetwork {
        zones,
        nodes,
        first_thru_node,
        links,
    })
}

/// Canonical text of `net`; parsing it gives `net` back exactly.
pub fn emit_tntp(net: &TntpNetwork) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<NUMBER OF ZONES> {}", net.zones);
    let _ = writeln!(s, "<NUMBER OF NODES> {}", net.nodes);
    let _ = writeln!(s, "<FIRST THRU NODE> {}", net.first_thru_node);
    let _ = writeln!(s, "<NUMBER OF LINKS> {}", net.links.len());
    s.push_str("<END OF METADATA>\n\n");
    s.push_str("~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;\n");
    for l in &net.links {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t;",
            l.init_node,
            l.term_node,
            l.capacity,
            l.length,
            l.free_flow_time,
            l.b,
            l.power,
            l.speed_limit,
            l.toll,
            l.link_type
        );
    }
    s
}

/// Origin-destination trip table, zero entries omitted.
#[derive(Clone, Debug, PartialEq)]
pub struct TntpTrips {
    pub zones: usize,
    pub demand: BTreeMap<(usize, usize), f64>,
}

impl TntpTrips {
    pub fn total(&self) -> f64 {
        self.demand.values().sum()
    }

    pub fn get(&self, origin: usize, dest: usize) -> f64 {
        self.demand.get(&(origin, dest)).copied().unwrap_or(0.0)
    }
}

pub fn load_trips(path: &Path) -> Result<TntpTrips> {
    parse_trips(&read(path)?, &path.display().to_string())
}

pub fn parse_trips(text: &str, label: &str) -> Result<TntpTrips> {
    let lines: Vec<&str> = text.lines().collect();
    let (meta, body) = metadata(&lines, label)?;
    let zones = meta_count(&meta, "NUMBER OF ZONES", label)?
        .ok_or_else(|| parse_err(label, body, "missing <NUMBER OF ZONES>"))?;
    let mut demand = BTreeMap::new();
    let mut origin: Option<usize> = None;
    for (idx, raw) in lines.iter().enumerate().skip(body) {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("Origin") {
            let o = rest
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&o| o >= 1 && o <= zones)
                .ok_or_else(|| parse_err(label, line_no, format!("bad origin {:?}", rest.trim())))?;
            origin = Some(o);
            continue;
        }
        let o = origin.ok_or_else(|| parse_err(label, line_no, "trip entries before any Origin line"))?;
        for entry in line.split(';').map(str::trim).filter(|e| !e.is_empty()) {
            let (d, v) = entry
                .split_once(':')
                .ok_or_else(|| parse_err(label, line_no, format!("expected 'dest : value', got {entry:?}")))?;
            let d = d
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&d| d >= 1 && d <= zones)
                .ok_or_else(|| parse_err(label, line_no, format!("bad destination {:?}", d.trim())))?;
            let v = v
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| parse_err(label, line_no, format!("bad trip value {:?}", v.trim())))?;
            if v > 0.0 {
                demand.insert((o, d), v);
            }
        }
    }
    Ok(TntpTrips { zones, demand })
}
