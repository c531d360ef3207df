use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use nalgebra::Vector3;

use super::{run_episode, Episode, HarnessError, ScenarioConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub seed: u64,
    pub label: String,
    /// RMS over the logged part of the episode.
    pub rms: f64,
    pub rms_axis: Vector3<f64>,
    pub mean_step_ms: f64,
    /// `completed` or the abort diagnostic.
    pub status: String,
    pub aborted: bool,
}

impl ComparisonRow {
    /// RMS used for ranking; an aborted episode never wins.
    pub fn score(&self) -> f64 {
        if self.aborted {
            f64::INFINITY
        } else {
            self.rms
        }
    }
}

/// Paired-seed results: for every seed, the row of A followed by the row of B.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: [String; 2],
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    /// `(score_A, score_B)` per seed.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.rows.chunks(2).map(|c| (c[0].score(), c[1].score())).collect()
    }

    /// Seeds on which B has strictly lower RMS than A.
    pub fn wins_b(&self) -> usize {
        self.pairs().iter().filter(|(a, b)| b < a).count()
    }

    /// Median of `rms_A / rms_B`.
    pub fn median_ratio(&self) -> f64 {
        let mut r: Vec<f64> = self.pairs().iter().map(|(a, b)| a / b).collect();
        if r.is_empty() {
            return f64::NAN;
        }
        r.sort_by(f64::total_cmp);
        let n = r.len();
        if n % 2 == 1 {
            r[n / 2]
        } else {
            0.5 * (r[n / 2 - 1] + r[n / 2])
        }
    }

    fn mean_of(&self, side: usize, f: impl Fn(&ComparisonRow) -> f64) -> f64 {
        let v: Vec<f64> = self.rows.iter().skip(side).step_by(2).map(f).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let [a, b] = &self.labels;
        let _ = writeln!(s, "{:>6}  {:>12}  {:>12}  {:>8}", "seed", a, b, "ratio");
        for (seed, (ra, rb)) in self.seeds.iter().zip(self.pairs()) {
            let _ = writeln!(s, "{seed:>6}  {ra:>12.4}  {rb:>12.4}  {:>8.3}", ra / rb);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{b} better on {}/{} seeds", self.wins_b(), self.seeds.len());
        let _ = writeln!(s, "median rms ratio {a}/{b}: {:.3}", self.median_ratio());
        for (side, label) in self.labels.iter().enumerate() {
            let rms = self.mean_of(side, |r| r.rms);
            let axis = Vector3::from_fn(|i, _| self.mean_of(side, |r| r.rms_axis[i]));
            let step = self.mean_of(side, |r| r.mean_step_ms);
            let _ = writeln!(
                s,
                "{label}: mean rms {rms:.4} m (x {:.4}, y {:.4}, z {:.4}), mean step {step:.3} ms",
                axis.x, axis.y, axis.z
            );
        }
        for r in self.rows.iter().filter(|r| r.aborted) {
            let _ = writeln!(s, "seed {} {}: {}", r.seed, r.label, r.status);
        }
        s
    }
}

fn row(seed: u64, label: &str, ep: &Episode) -> ComparisonRow {
    let steps: Vec<f64> = ep.log.timings.iter().map(|t| t.step.as_secs_f64() * 1e3).collect();
    let (rms, rms_axis) = ep
        .metrics
        .as_ref()
        .map_or((f64::NAN, Vector3::from_element(f64::NAN)), |m| (m.rms, m.rms_axis));
    ComparisonRow {
        seed,
        label: label.to_string(),
        rms,
        rms_axis,
        mean_step_ms: steps.iter().sum::<f64>() / steps.len().max(1) as f64,
        status: ep.abort.as_ref().map_or("completed".into(), |a| a.to_string()),
        aborted: ep.abort.is_some(),
    }
}

/// Runs both configurations on every seed, overriding their own seeds so
/// that each pair sees the same wind. Episodes run on all available cores.
pub fn compare(
    a: (&str, &ScenarioConfig),
    b: (&str, &ScenarioConfig),
    seeds: &[u64],
) -> Result<Comparison, HarnessError> {
    let jobs: Vec<(u64, &str, ScenarioConfig)> = seeds
        .iter()
        .flat_map(|&seed| {
            [a, b].map(|(label, cfg)| {
                let mut c = cfg.clone();
                c.seed = seed;
                (seed, label, c)
            })
        })
        .collect();
    let results: Mutex<Vec<Option<Result<ComparisonRow, HarnessError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((seed, label, cfg)) = jobs.get(i) else { break };
                let r = run_episode(cfg).map(|ep| row(*seed, label, &ep));
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let rows = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Comparison {
        labels: [a.0.to_string(), b.0.to_string()],
        seeds: seeds.to_vec(),
        rows,
    })
}
