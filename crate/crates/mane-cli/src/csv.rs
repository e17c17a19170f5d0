//! Trajectory CSV export: header `t,q...,p...,H,monitors...` with a
//! deterministic column order.

use std::io::Write;

use mane_core::flow::{SolReducedTrajectory, Trajectory};

pub fn write_trajectory(path: &str, traj: &Trajectory) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = traj.states[0].dim();
    let mut header = String::from("t");
    for i in 0..n {
        header.push_str(&format!(",q{i}"));
    }
    for i in 0..n {
        header.push_str(&format!(",p{i}"));
    }
    header.push_str(",H");
    for (name, _) in &traj.monitors {
        header.push(',');
        header.push_str(name);
    }
    writeln!(out, "{header}")?;
    for (i, state) in traj.states.iter().enumerate() {
        let mut line = format!("{}", traj.times[i]);
        for v in state.q.iter().chain(state.p.iter()) {
            line.push_str(&format!(",{v}"));
        }
        line.push_str(&format!(",{}", traj.energy[i]));
        for (_, vals) in &traj.monitors {
            line.push_str(&format!(",{}", vals[i]));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_reduced_trajectory(path: &str, traj: &SolReducedTrajectory) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "t,z,M_x,M_y,M_z,H,m")?;
    for (i, s) in traj.states.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            traj.times[i], s[0], s[1], s[2], s[3], traj.energy[i], traj.m_values[i]
        )?;
    }
    Ok(())
}
