//! Reader for TSPLIB files with `EUC_2D` node coordinates.

use std::path::Path;

use crate::error::{Error, Result};
use crate::problems::{Instance, Point, ProblemKind};

#[derive(Clone, Debug, PartialEq)]
pub struct TsplibProblem {
    pub name: String,
    pub comment: String,
    pub nodes: Vec<Point>,
}

impl TsplibProblem {
    /// MTSP instance with the first node as depot; coordinates stay in the
    /// file's units.
    pub fn to_instance(&self, agents: usize) -> Result<Instance> {
        let (depot, customers) = self
            .nodes
            .split_first()
            .ok_or_else(|| Error::Parse("no nodes".into()))?;
        Instance::new(ProblemKind::Mtsp, agents, vec![*depot], customers.to_vec())
    }
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {line}: {msg}"))
}

pub fn parse_tsplib_str(text: &str) -> Result<TsplibProblem> {
    let mut name = String::new();
    let mut comment = String::new();
    let mut dimension = None;
    let mut nodes = Vec::new();
    let mut in_coords = false;
    let mut saw_coords = false;
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "EOF" {
            break;
        }
        if in_coords {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() == 3 && parts[0].parse::<usize>().is_ok() {
                let x = parts[1].parse::<f64>().map_err(|e| parse_err(ln, e))?;
                let y = parts[2].parse::<f64>().map_err(|e| parse_err(ln, e))?;
                nodes.push([x, y]);
                continue;
            }
            if parts[0].parse::<f64>().is_ok() {
                return Err(parse_err(ln, format!("malformed coordinate line {line:?}")));
            }
            in_coords = false;
        }
        if line.starts_with("NODE_COORD_SECTION") {
            in_coords = true;
            saw_coords = true;
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            if line.ends_with("_SECTION") {
                return Err(parse_err(ln, format!("unsupported section {line}")));
            }
            return Err(parse_err(ln, format!("unexpected line {line:?}")));
        };
        let value = value.trim();
        match key.trim() {
            "NAME" => name = value.to_string(),
            "COMMENT" => comment = value.to_string(),
            "DIMENSION" => dimension = Some(value.parse::<usize>().map_err(|e| parse_err(ln, e))?),
            "EDGE_WEIGHT_TYPE" if value != "EUC_2D" => {
                return Err(Error::Parse(format!("unsupported edge weight type {value}")));
            }
            _ => {}
        }
    }
    if !saw_coords {
        return Err(Error::Parse("missing NODE_COORD_SECTION".into()));
    }
    if let Some(d) = dimension {
        if d != nodes.len() {
            return Err(Error::Parse(format!("DIMENSION is {d} but {} nodes were read", nodes.len())));
        }
    }
    Ok(TsplibProblem { name, comment, nodes })
}

pub fn parse_tsplib(path: &Path) -> Result<TsplibProblem> {
    parse_tsplib_str(&std::fs::read_to_string(path)?)
}
