use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Comparison, Episode, FlightLog, HarnessError, ScenarioConfig};

pub const TRAJECTORY_COLUMNS: [&str; 36] = [
    "t", "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "roll_rate", "pitch_rate", "yaw_rate",
    "ref_x", "ref_y", "ref_z", "u_thrust", "u_roll", "u_pitch", "u_yaw", "force_x", "force_y", "force_z",
    "dist_x", "dist_y", "dist_z", "gp_mean_x", "gp_mean_y", "gp_mean_z", "gp_std_x", "gp_std_y",
    "gp_std_z", "mode", "backoff_x", "backoff_y", "backoff_z",
];

pub const GP_TRACE_COLUMNS: [&str; 9] = [
    "t", "axis", "updates", "signal_variance", "length_scale", "noise_variance", "nll", "accepted",
    "update_ms",
];

pub const TIMING_COLUMNS: [&str; 9] = [
    "t", "mode", "step_ms", "build_ms", "solve_ms", "iterations", "status", "softened", "kkt_ok",
];

pub fn write_trajectory_csv(log: &FlightLog, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRAJECTORY_COLUMNS)?;
    for r in &log.records {
        let mut row: Vec<String> = Vec::with_capacity(TRAJECTORY_COLUMNS.len());
        row.push(r.t.to_string());
        row.extend(r.state.to_vector().iter().map(f64::to_string));
        row.extend(r.reference.iter().map(f64::to_string));
        row.extend(r.command.0.iter().map(f64::to_string));
        for v in [&r.latent_force, &r.extracted, &r.gp_mean, &r.gp_std] {
            row.extend(v.iter().map(f64::to_string));
        }
        row.push(r.mode.to_string());
        row.extend(r.backoff.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gp_trace_csv(log: &FlightLog, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(GP_TRACE_COLUMNS)?;
    for r in &log.gp_trace {
        w.write_record([
            r.t.to_string(),
            ["x", "y", "z"][r.axis].to_string(),
            r.updates.to_string(),
            r.hyper.signal_variance.to_string(),
            r.hyper.length_scale.to_string(),
            r.hyper.noise_variance.to_string(),
            r.nll.to_string(),
            r.accepted.to_string(),
            format!("{:.4}", r.elapsed.as_secs_f64() * 1e3),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timings_csv(log: &FlightLog, path: &Path) -> Result<(), HarnessError> {
    let ms = |d: std::time::Duration| format!("{:.4}", d.as_secs_f64() * 1e3);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TIMING_COLUMNS)?;
    for r in &log.timings {
        w.write_record([
            r.t.to_string(),
            r.mode.to_string(),
            ms(r.step),
            ms(r.build),
            ms(r.solve),
            r.iterations.to_string(),
            r.status.to_string(),
            r.softened.to_string(),
            r.kkt_ok.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn opt_ms(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.3} ms"))
}

pub fn write_summary(episode: &Episode, cfg: &ScenarioConfig, path: &Path) -> Result<(), HarnessError> {
    let mut s = String::new();
    let _ = writeln!(s, "seed: {}", cfg.seed);
    let _ = writeln!(s, "controller: {}", if cfg.control.use_gp { "gp-mpc" } else { "nominal" });
    let _ = writeln!(
        s,
        "status: {}",
        episode.abort.as_ref().map_or("completed".to_string(), |a| a.to_string())
    );
    if let Some(m) = &episode.metrics {
        let _ = writeln!(s, "simulated: {:.3} s", m.simulated);
        let _ = writeln!(s, "rms_error: {:.6} m", m.rms);
        let _ = writeln!(
            s,
            "rms_axis: {:.6} {:.6} {:.6} m",
            m.rms_axis.x, m.rms_axis.y, m.rms_axis.z
        );
        let _ = writeln!(
            s,
            "switch_time: {}",
            m.switch_time.map_or("-".into(), |t| format!("{t:.3} s"))
        );
        let _ = writeln!(s, "solves: {}", m.solves);
        let _ = writeln!(s, "softened: {}", m.softened);
        let _ = writeln!(s, "max_iter: {}", m.max_iter);
        let _ = writeln!(s, "kkt_failures: {}", m.kkt_failures);
        let _ = writeln!(s, "mean_step_nominal: {}", opt_ms(m.mean_step_nominal));
        let _ = writeln!(s, "mean_step_gp: {}", opt_ms(m.mean_step_gp));
        let _ = writeln!(s, "mean_gp_update: {}", opt_ms(m.mean_gp_update));
        for (axis, h) in ["x", "y", "z"].iter().zip(&m.final_hyper) {
            let _ = writeln!(s, "gp_{axis}: {h}");
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// Writes the four episode artifacts into `dir`.
pub fn write_episode(episode: &Episode, cfg: &ScenarioConfig, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_trajectory_csv(&episode.log, &dir.join("trajectory.csv"))?;
    write_gp_trace_csv(&episode.log, &dir.join("gp_trace.csv"))?;
    write_timings_csv(&episode.log, &dir.join("timings.csv"))?;
    write_summary(episode, cfg, &dir.join("summary.txt"))
}

pub fn write_comparison_csv(cmp: &Comparison, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed", "controller", "rms", "rms_x", "rms_y", "rms_z", "mean_step_ms", "status",
    ])?;
    for r in &cmp.rows {
        w.write_record([
            r.seed.to_string(),
            r.label.clone(),
            r.rms.to_string(),
            r.rms_axis.x.to_string(),
            r.rms_axis.y.to_string(),
            r.rms_axis.z.to_string(),
            format!("{:.4}", r.mean_step_ms),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
