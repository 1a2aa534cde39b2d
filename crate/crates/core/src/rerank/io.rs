//! Text formats for re-rank instances and solutions.
//!
//! Instance, one user per row:
//! `user<TAB>group<TAB>t_u<TAB>item:score:rel item:score:rel ...`
//! with a `# rerank-instance v1 k=<k> alpha=<alpha>` header. Scores print
//! in shortest round-trip form, alpha may be `inf`.
//!
//! Solution, one user per row after a report header:
//! `# rerank-solution v1 objective=<f> gap=<num>/<den> feasible=<bool>
//! nodes=<n>` then `user<TAB>item,item,...`.

use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;

use super::{Group, RerankInstance, RerankSolution, UserCandidates};
use crate::{Error, Result};

pub fn write_instance<W: Write>(out: &mut W, instance: &RerankInstance) -> Result<()> {
    let alpha = if instance.alpha.is_finite() {
        instance.alpha.to_string()
    } else {
        "inf".to_string()
    };
    writeln!(out, "# rerank-instance v1 k={} alpha={}", instance.k, alpha)?;
    for uc in &instance.users {
        let group = match uc.group {
            Group::Active => "A",
            Group::Inactive => "B",
        };
        let entries: Vec<String> = uc
            .candidates
            .iter()
            .zip(&uc.relevant)
            .map(|(&(item, score), &rel)| format!("{item}:{score}:{}", u8::from(rel)))
            .collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            uc.user,
            group,
            uc.t_u,
            entries.join(" ")
        )?;
    }
    Ok(())
}

pub fn read_instance<R: Read>(reader: R) -> Result<RerankInstance> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty instance file".into()))??;
    let (k, alpha) = parse_instance_header(&header)?;

    let mut users = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Format(format!("expected 4 columns, got: {line:?}")));
        }
        let user: u32 = cols[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad user id {:?}", cols[0])))?;
        let group = match cols[1] {
            "A" => Group::Active,
            "B" => Group::Inactive,
            other => return Err(Error::Format(format!("bad group {other:?}"))),
        };
        let t_u: usize = cols[2]
            .parse()
            .map_err(|_| Error::Format(format!("bad t_u {:?}", cols[2])))?;
        let mut candidates = Vec::new();
        let mut relevant = Vec::new();
        for entry in cols[3].split(' ').filter(|e| !e.is_empty()) {
            let parts: Vec<&str> = entry.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::Format(format!("bad candidate entry {entry:?}")));
            }
            let item: u32 = parts[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad item {:?}", parts[0])))?;
            let score: f64 = parts[1]
                .parse()
                .map_err(|_| Error::Format(format!("bad score {:?}", parts[1])))?;
            let rel = match parts[2] {
                "0" => false,
                "1" => true,
                other => return Err(Error::Format(format!("bad relevance flag {other:?}"))),
            };
            candidates.push((item, score));
            relevant.push(rel);
        }
        users.push(UserCandidates {
            user,
            group,
            candidates,
            relevant,
            t_u,
        });
    }
    let instance = RerankInstance { users, alpha, k };
    instance.validate()?;
    Ok(instance)
}

fn parse_instance_header(header: &str) -> Result<(usize, f64)> {
    let rest = header
        .strip_prefix("# rerank-instance v1 ")
        .ok_or_else(|| Error::Format(format!("bad instance header {header:?}")))?;
    let mut k = None;
    let mut alpha = None;
    for field in rest.split(' ') {
        if let Some(v) = field.strip_prefix("k=") {
            k = Some(
                v.parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad k in header: {v:?}")))?,
            );
        } else if let Some(v) = field.strip_prefix("alpha=") {
            alpha = Some(if v == "inf" {
                f64::INFINITY
            } else {
                v.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad alpha in header: {v:?}")))?
            });
        }
    }
    match (k, alpha) {
        (Some(k), Some(alpha)) => Ok((k, alpha)),
        _ => Err(Error::Format(format!(
            "instance header missing k or alpha: {header:?}"
        ))),
    }
}

pub fn write_solution<W: Write>(
    out: &mut W,
    instance: &RerankInstance,
    solution: &RerankSolution,
) -> Result<()> {
    writeln!(
        out,
        "# rerank-solution v1 objective={} gap={}/{} feasible={} nodes={}",
        solution.objective,
        solution.gap.numer(),
        solution.gap.denom(),
        solution.feasible,
        solution.nodes_expanded
    )?;
    for (uc, items) in instance.users.iter().zip(&solution.chosen) {
        let list: Vec<String> = items.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}\t{}", uc.user, list.join(","))?;
    }
    Ok(())
}

/// Parsed solution report plus per-user chosen items.
pub struct SolutionFile {
    pub objective: f64,
    pub gap: BigRational,
    pub feasible: bool,
    pub nodes_expanded: u64,
    pub chosen: Vec<(u32, Vec<u32>)>,
}

pub fn read_solution<R: Read>(reader: R) -> Result<SolutionFile> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty solution file".into()))??;
    let rest = header
        .strip_prefix("# rerank-solution v1 ")
        .ok_or_else(|| Error::Format(format!("bad solution header {header:?}")))?;
    let mut objective = None;
    let mut gap = None;
    let mut feasible = None;
    let mut nodes = None;
    for field in rest.split(' ') {
        if let Some(v) = field.strip_prefix("objective=") {
            objective = v.parse::<f64>().ok();
        } else if let Some(v) = field.strip_prefix("gap=") {
            let (num, den) = v
                .split_once('/')
                .ok_or_else(|| Error::Format(format!("bad gap {v:?}")))?;
            let num = BigInt::from_str(num).map_err(|e| Error::Format(e.to_string()))?;
            let den = BigInt::from_str(den).map_err(|e| Error::Format(e.to_string()))?;
            gap = Some(BigRational::new(num, den));
        } else if let Some(v) = field.strip_prefix("feasible=") {
            feasible = v.parse::<bool>().ok();
        } else if let Some(v) = field.strip_prefix("nodes=") {
            nodes = v.parse::<u64>().ok();
        }
    }
    let (objective, gap, feasible, nodes_expanded) = match (objective, gap, feasible, nodes) {
        (Some(o), Some(g), Some(f), Some(n)) => (o, g, f, n),
        _ => {
            return Err(Error::Format(format!(
                "solution header missing fields: {header:?}"
            )))
        }
    };
    let mut chosen = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (user, items) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("bad solution row {line:?}")))?;
        let user: u32 = user
            .parse()
            .map_err(|_| Error::Format(format!("bad user {user:?}")))?;
        let items = items
            .split(',')
            .map(|v| {
                v.parse::<u32>()
                    .map_err(|_| Error::Format(format!("bad item {v:?}")))
            })
            .collect::<Result<Vec<u32>>>()?;
        chosen.push((user, items));
    }
    Ok(SolutionFile {
        objective,
        gap,
        feasible,
        nodes_expanded,
        chosen,
    })
}
