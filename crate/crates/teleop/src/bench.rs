//! Headless benchmark: repeated scripted runs with seeded pilot jitter.

use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wip_core::course::{PilotProfile, Verdict};
use wip_core::record::{run_scripted, RunRecord};
use wip_core::world::RunSetup;

/// Scripted pilot selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PilotKind {
    Straightline,
    Weave,
    Step,
    Idle,
}

impl FromStr for PilotKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as clap::ValueEnum>::from_str(s, true)
    }
}

impl PilotKind {
    pub fn profile(self, setup: &RunSetup) -> wip_core::Result<PilotProfile> {
        match self {
            PilotKind::Straightline => PilotProfile::straight_line(&setup.mapping, &setup.params),
            PilotKind::Weave => PilotProfile::weave(&setup.mapping, &setup.params),
            PilotKind::Step => Ok(PilotProfile::step(&setup.mapping)),
            PilotKind::Idle => Ok(PilotProfile::Idle),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchOptions {
    pub runs: usize,
    pub seed: u64,
    /// Relative spread of the per-run time stretch.
    pub time_jitter: f64,
    /// Relative spread of the per-run lean scale.
    pub amp_jitter: f64,
    pub max_ticks: Option<u64>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { runs: 10, seed: 0, time_jitter: 0.02, amp_jitter: 0.02, max_ticks: None }
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub run: usize,
    pub seed: u64,
    pub time_scale: f64,
    pub amp_scale: f64,
    pub verdict: String,
    pub completion_time: Option<f64>,
    pub path_length: Option<f64>,
    pub motion_area: f64,
    pub max_abs_pitch: f64,
    pub ticks: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchSummary {
    pub runs: usize,
    pub successes: usize,
    pub collisions: usize,
    pub out_of_bounds: usize,
    pub falls: usize,
    pub timeouts: usize,
    pub completion_mean: Option<f64>,
    pub completion_min: Option<f64>,
    pub completion_max: Option<f64>,
    pub path_mean: Option<f64>,
    pub path_min: Option<f64>,
    pub path_max: Option<f64>,
}

impl BenchSummary {
    pub fn from_rows(rows: &[BenchRow]) -> Self {
        let mut s = BenchSummary { runs: rows.len(), ..Default::default() };
        for r in rows {
            match r.verdict.as_str() {
                "success" => s.successes += 1,
                "collision" => s.collisions += 1,
                "out_of_bounds" => s.out_of_bounds += 1,
                "fell" => s.falls += 1,
                _ => s.timeouts += 1,
            }
        }
        let stats = |vals: Vec<f64>| -> (Option<f64>, Option<f64>, Option<f64>) {
            if vals.is_empty() {
                return (None, None, None);
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (Some(mean), Some(min), Some(max))
        };
        let ok = || rows.iter().filter(|r| r.verdict == "success");
        (s.completion_mean, s.completion_min, s.completion_max) = stats(ok().filter_map(|r| r.completion_time).collect());
        (s.path_mean, s.path_min, s.path_max) = stats(ok().filter_map(|r| r.path_length).collect());
        s
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        writeln!(
            out,
            "runs={} success={} collision={} out_of_bounds={} fell={} timeout={}",
            self.runs, self.successes, self.collisions, self.out_of_bounds, self.falls, self.timeouts
        )?;
        writeln!(
            out,
            "completion_time mean={} min={} max={}",
            f(self.completion_mean),
            f(self.completion_min),
            f(self.completion_max)
        )?;
        writeln!(out, "path_length mean={} min={} max={}", f(self.path_mean), f(self.path_min), f(self.path_max))
    }
}

pub fn row_from_record(run: usize, seed: u64, time_scale: f64, amp_scale: f64, r: &RunRecord) -> BenchRow {
    let m = &r.metrics;
    BenchRow {
        run,
        seed,
        time_scale,
        amp_scale,
        verdict: m.verdict.as_ref().map_or("timeout", Verdict::label).to_string(),
        completion_time: m.completion_time,
        path_length: m.path_length,
        motion_area: m.motion_area,
        max_abs_pitch: r.frames.iter().map(|f| f.state.pitch.abs()).fold(0.0, f64::max),
        ticks: r.frames.len(),
    }
}

/// Run `opts.runs` jittered copies of `pilot`. Run 0 is unperturbed; each
/// later run draws its own seed from the master stream. `on_run` sees each
/// record as it completes.
pub fn run_bench(
    setup: &RunSetup,
    pilot: &PilotProfile,
    opts: &BenchOptions,
    mut on_run: impl FnMut(&BenchRow, &RunRecord),
) -> wip_core::Result<Vec<BenchRow>> {
    let mut master = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows = Vec::with_capacity(opts.runs);
    for run in 0..opts.runs {
        let run_seed: u64 = master.random();
        let (ts, amp) = if run == 0 {
            (1.0, 1.0)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
            (jitter(&mut rng, opts.time_jitter), jitter(&mut rng, opts.amp_jitter))
        };
        let record = run_scripted(setup, &pilot.perturbed(ts, amp), opts.max_ticks)?;
        let row = row_from_record(run, run_seed, ts, amp, &record);
        on_run(&row, &record);
        rows.push(row);
    }
    Ok(rows)
}

fn jitter(rng: &mut impl Rng, spread: f64) -> f64 {
    if spread > 0.0 {
        1.0 + rng.random_range(-spread..=spread)
    } else {
        1.0
    }
}

pub fn write_csv(rows: &[BenchRow], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(verdict: &str, ct: Option<f64>) -> BenchRow {
        BenchRow {
            run: 0,
            seed: 0,
            time_scale: 1.0,
            amp_scale: 1.0,
            verdict: verdict.into(),
            completion_time: ct,
            path_length: ct.map(|c| c + 1.0),
            motion_area: 0.0,
            max_abs_pitch: 0.0,
            ticks: 1,
        }
    }

    #[test]
    fn summary_counts_and_stats() {
        let rows = [row("success", Some(4.0)), row("success", Some(5.0)), row("fell", None), row("collision", Some(9.0))];
        let s = BenchSummary::from_rows(&rows);
        assert_eq!((s.runs, s.successes, s.falls, s.collisions), (4, 2, 1, 1));
        assert_eq!(s.completion_mean, Some(4.5));
        assert_eq!((s.path_min, s.path_max), (Some(5.0), Some(6.0)));
    }

    #[test]
    fn jitter_stays_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let j = jitter(&mut rng, 0.05);
            assert!((0.95..=1.05).contains(&j));
        }
        assert_eq!(jitter(&mut rng, 0.0), 1.0);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut buf = Vec::new();
        write_csv(&[row("success", Some(4.0)), row("timeout", None)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("run,seed,time_scale"));
        assert!(lines[2].contains("timeout,,,"));
    }
}
