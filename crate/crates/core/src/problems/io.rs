//! Line-oriented instance files: one JSON object per line,
//! `{"kind":"MTSP","M":5,"depots":[[x,y],...],"customers":[[x,y],...]}`.
//! Floats are written in shortest round-trip form, so reading a written file
//! reproduces every coordinate bit for bit.

use std::io::{BufRead, Write};

use super::instance::Instance;
use crate::error::{Error, Result};

pub fn instance_to_line(inst: &Instance) -> Result<String> {
    Ok(serde_json::to_string(inst)?)
}

pub fn instance_from_line(line: &str) -> Result<Instance> {
    let inst: Instance = serde_json::from_str(line)?;
    inst.check()?;
    Ok(inst)
}

pub fn write_instances<W: Write>(mut w: W, instances: &[Instance]) -> Result<()> {
    for inst in instances {
        writeln!(w, "{}", instance_to_line(inst)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_instances<R: BufRead>(r: R) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(instance_from_line(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gen_uniform, ProblemKind};

    #[test]
    fn field_names() {
        let inst = Instance::new(ProblemKind::Mdvrp, 2, vec![[0.5, 0.25], [0.0, 1.0]], vec![[0.1, 0.2], [0.3, 0.4]])
            .unwrap();
        assert_eq!(
            instance_to_line(&inst).unwrap(),
            r#"{"kind":"MDVRP","M":2,"depots":[[0.5,0.25],[0.0,1.0]],"customers":[[0.1,0.2],[0.3,0.4]]}"#
        );
    }

    #[test]
    fn round_trip_is_bitwise() {
        let insts: Vec<_> = (0..5)
            .map(|s| gen_uniform(ProblemKind::Mpdp, 10, 1, 3, s).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_instances(&mut buf, &insts).unwrap();
        let back = read_instances(buf.as_slice()).unwrap();
        for (a, b) in insts.iter().zip(&back) {
            for (p, q) in a.customers.iter().zip(&b.customers) {
                assert_eq!(p[0].to_bits(), q[0].to_bits());
                assert_eq!(p[1].to_bits(), q[1].to_bits());
            }
        }
    }

    #[test]
    fn rejects_invalid_records() {
        let line = r#"{"kind":"MPDP","M":1,"depots":[[0,0]],"customers":[[0.1,0.2]]}"#;
        assert!(instance_from_line(line).is_err());
        assert!(read_instances(&b"{not json}\n"[..]).is_err());
    }
}
