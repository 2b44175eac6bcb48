//! Configuration files, trajectory dumps and learning-curve merging.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::env::{EnvConfig, TrajectoryBuffer};
use crate::error::{Error, Result};
use crate::plot::{heatmap, line_chart, Series};
use crate::ppo::TrainConfig;
use crate::train::{rolling_stats, ROLLING_WINDOW};

/// Environment and training settings read from one flat `key = value` file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
}

fn field_names<T: Serialize>(value: &T) -> Vec<String> {
    match toml::Value::try_from(value) {
        Ok(toml::Value::Table(t)) => t.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

impl RunConfig {
    /// Parses flat TOML. Every key must name an `EnvConfig` or `TrainConfig`
    /// field; missing keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let env_keys = field_names(&EnvConfig::default());
        let train_keys = field_names(&TrainConfig::default());
        let mut env = toml::Table::new();
        let mut train = toml::Table::new();
        for (key, value) in table {
            if env_keys.contains(&key) {
                env.insert(key, value);
            } else if train_keys.contains(&key) {
                train.insert(key, value);
            } else {
                return Err(Error::Config(format!("unknown configuration key {key:?}")));
            }
        }
        let env: EnvConfig = toml::Value::Table(env)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        let train: TrainConfig = toml::Value::Table(train)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        env.validate()?;
        train.validate()?;
        Ok(Self { env, train })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v}").unwrap();
    }
    out.push('\n');
}

/// Time rows drawn in a heatmap before the history is strided.
pub const HEATMAP_MAX_ROWS: usize = 400;

/// Writes `sigma.csv`, `u.csv`, `w.csv` and their SVG renders into `dir`.
/// `x` are the grid nodes, used as the column header of the field files.
pub fn dump_trajectory(traj: &TrajectoryBuffer, x: &[f64], dir: &Path) -> Result<()> {
    if traj.u_history.iter().chain(&traj.w_history).any(|r| r.len() != x.len()) {
        return Err(Error::invalid("trajectory rows must match the grid"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sigma = String::from("t,sigma\n");
    for (t, s) in traj.times.iter().zip(&traj.sigmas) {
        writeln!(sigma, "{t},{s}").unwrap();
    }
    write_file(&dir.join("sigma.csv"), &sigma)?;
    for (name, rows) in [("u", &traj.u_history), ("w", &traj.w_history)] {
        let mut text = String::new();
        let header: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
        writeln!(text, "{}", header.join(",")).unwrap();
        for row in rows {
            csv_row(&mut text, row);
        }
        write_file(&dir.join(format!("{name}.csv")), &text)?;
        let t_end = traj.times.last().copied().unwrap_or(0.0);
        let svg = heatmap(&format!("{name}(x, t)"), rows, t_end, HEATMAP_MAX_ROWS);
        write_file(&dir.join(format!("{name}.svg")), &svg)?;
    }
    let series = Series {
        label: "sigma".into(),
        x: traj.times.clone(),
        y: traj.sigmas.clone(),
        band: None,
    };
    write_file(&dir.join("sigma.svg"), &line_chart("transport speed", "t", "sigma", &[series]))
}

/// Rewards from a `metrics.csv` file, in episode order.
pub fn read_metrics(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: format!("line {line}: {detail}"),
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("episode,reward") {
        return Err(bad(1, "expected header \"episode,reward\""));
    }
    let mut rewards = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (ep, r) = line.split_once(',').ok_or_else(|| bad(i + 2, "expected two fields"))?;
        let ep: usize = ep.trim().parse().map_err(|_| bad(i + 2, "bad episode index"))?;
        if ep != rewards.len() {
            return Err(bad(i + 2, "episodes must be consecutive from 0"));
        }
        let r: f64 = r.trim().parse().map_err(|_| bad(i + 2, "bad reward"))?;
        rewards.push(r);
    }
    Ok(rewards)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean: f64,
    pub std: f64,
}

/// Per seed, the trailing `window`-episode mean; then across seeds, the mean
/// and population standard deviation. Runs are cut to the shortest log.
pub fn merge_curves(seed_logs: &[Vec<f64>], window: usize) -> Result<Vec<CurvePoint>> {
    if seed_logs.is_empty() {
        return Err(Error::invalid("no reward logs to merge"));
    }
    let len = seed_logs.iter().map(Vec::len).min().unwrap_or(0);
    let smoothed: Vec<Vec<f64>> = seed_logs
        .iter()
        .map(|log| rolling_stats(&log[..len], window).into_iter().map(|(m, _)| m).collect())
        .collect();
    let k = seed_logs.len() as f64;
    Ok((0..len)
        .map(|e| {
            let mean = smoothed.iter().map(|s| s[e]).sum::<f64>() / k;
            let var = smoothed.iter().map(|s| (s[e] - mean).powi(2)).sum::<f64>() / k;
            CurvePoint {
                episode: e,
                mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

/// Half-width of the shaded band, in standard deviations.
pub const BAND_STDS: f64 = 0.2;

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("episode,mean,std\n");
    for p in points {
        writeln!(out, "{},{},{}", p.episode, p.mean, p.std).unwrap();
    }
    out
}

pub fn curve_series(label: &str, points: &[CurvePoint]) -> Series {
    Series {
        label: label.to_string(),
        x: points.iter().map(|p| p.episode as f64).collect(),
        y: points.iter().map(|p| p.mean).collect(),
        band: Some((
            points.iter().map(|p| p.mean - BAND_STDS * p.std).collect(),
            points.iter().map(|p| p.mean + BAND_STDS * p.std).collect(),
        )),
    }
}

/// The `metrics.csv` files of a run directory: `DIR/seed*/metrics.csv`, or
/// `DIR/metrics.csv` for a single-seed directory. Sorted by path.
pub fn find_metrics(dir: &Path) -> Result<Vec<PathBuf>> {
    let direct = dir.join("metrics.csv");
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path().join("metrics.csv");
        let is_seed = entry.file_name().to_string_lossy().starts_with("seed");
        if is_seed && path.is_file() {
            found.push(path);
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::Config(format!("no metrics.csv under {}", dir.display())));
    }
    Ok(found)
}

/// Merges each labelled run directory and writes `curve_<label>.csv` plus
/// `curves.svg` into `out`.
pub fn plot_runs(inputs: &[(String, PathBuf)], out: &Path) -> Result<Vec<(String, Vec<CurvePoint>)>> {
    if inputs.is_empty() {
        return Err(Error::Config("plot needs at least one LABEL=DIR input".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut curves = Vec::new();
    for (label, dir) in inputs {
        let logs = find_metrics(dir)?
            .iter()
            .map(|p| read_metrics(p))
            .collect::<Result<Vec<_>>>()?;
        let points = merge_curves(&logs, ROLLING_WINDOW)?;
        write_file(&out.join(format!("curve_{label}.csv")), &curve_csv(&points))?;
        curves.push((label.clone(), points));
    }
    let series: Vec<Series> = curves.iter().map(|(l, p)| curve_series(l, p)).collect();
    let svg = line_chart("episode reward", "episode", "reward (20-episode mean)", &series);
    write_file(&out.join("curves.svg"), &svg)?;
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{DiffusionMode, PackCoolingEnv};

    #[test]
    fn config_overrides_and_rejects_unknown_keys() {
        let cfg = RunConfig::from_toml("n_x = 50\ndt = 0.02\nhorizon_time = 4.0\nhorizon = 512\nhidden = [32, 32]\ndiffusion_mode = \"backward\"\n").unwrap();
        assert_eq!(cfg.env.n_x, 50);
        assert_eq!(cfg.env.diffusion_mode, DiffusionMode::Backward);
        assert_eq!(cfg.train.horizon, 512);
        assert_eq!(cfg.train.hidden, vec![32, 32]);
        assert_eq!(cfg.train.minibatch, 64);
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
        for bad in ["bogus = 1", "n_x = \"many\"", "n_x = ", "dt = 0.5", "gamma = 2.0"] {
            assert!(matches!(RunConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn infinite_resistance_parses() {
        let cfg = RunConfig::from_toml("resistance = inf").unwrap();
        assert!(cfg.env.resistance.is_infinite());
    }

    #[test]
    fn trajectory_files() {
        let env_cfg = EnvConfig {
            n_x: 6,
            dt: 0.1,
            horizon_time: 0.3,
            n_fourier: 2,
            ..EnvConfig::default()
        };
        let mut env = PackCoolingEnv::new(env_cfg).unwrap();
        env.set_recording(true);
        env.reset();
        for _ in 0..3 {
            env.step(0.0).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        dump_trajectory(env.trajectory(), &env.grid().nodes(), dir.path()).unwrap();
        let sigma = fs::read_to_string(dir.path().join("sigma.csv")).unwrap();
        assert_eq!(sigma.lines().count(), 4);
        assert_eq!(sigma.lines().next(), Some("t,sigma"));
        let u = fs::read_to_string(dir.path().join("u.csv")).unwrap();
        let rows: Vec<&str> = u.lines().skip(1).collect();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.split(',').count() == 6));
        for name in ["u.svg", "w.svg", "sigma.svg", "w.csv"] {
            assert!(dir.path().join(name).is_file());
        }
    }

    #[test]
    fn curve_statistics() {
        let single = merge_curves(&[vec![-3.0, -1.0, -2.0]], 20).unwrap();
        assert!(single.iter().all(|p| p.std == 0.0));
        let constant = merge_curves(&[vec![-1.0; 30], vec![-1.0; 30]], 20).unwrap();
        assert!(constant.iter().all(|p| p.mean == -1.0 && p.std == 0.0));
        let pair = merge_curves(&[vec![0.0; 25], vec![-2.0; 25]], 20).unwrap();
        for p in &pair {
            assert_eq!((p.mean, p.std), (-1.0, 1.0));
        }
        let band = curve_series("x", &pair).band.unwrap();
        assert!((band.0[0] + 1.2).abs() < 1e-15 && (band.1[0] + 0.8).abs() < 1e-15);
        let ragged = merge_curves(&[vec![0.0; 5], vec![0.0; 3]], 20).unwrap();
        assert_eq!(ragged.len(), 3);
        assert!(merge_curves(&[], 20).is_err());
    }

    #[test]
    fn plot_runs_merges_seed_directories() {
        let root = tempfile::tempdir().unwrap();
        let run = root.path().join("run");
        for (seed, r) in [(0, 0.0), (1, -2.0)] {
            let d = run.join(format!("seed{seed}"));
            fs::create_dir_all(&d).unwrap();
            let mut text = String::from("episode,reward\n");
            for e in 0..25 {
                writeln!(text, "{e},{r}").unwrap();
            }
            fs::write(d.join("metrics.csv"), text).unwrap();
        }
        let out = root.path().join("plots");
        let curves = plot_runs(&[("hjbppo".into(), run)], &out).unwrap();
        assert_eq!(curves[0].1.len(), 25);
        let csv = fs::read_to_string(out.join("curve_hjbppo.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some("episode,mean,std"));
        assert_eq!(csv.lines().nth(1), Some("0,-1,1"));
        assert!(out.join("curves.svg").is_file());
        assert!(plot_runs(&[], &out).is_err());
    }

    #[test]
    fn malformed_metrics_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        fs::write(&p, "ep,r\n0,1\n").unwrap();
        assert!(read_metrics(&p).is_err());
        fs::write(&p, "episode,reward\n0,-1\n2,-1\n").unwrap();
        assert!(read_metrics(&p).is_err());
        fs::write(&p, "episode,reward\n0,-1\n1,-2.5\n").unwrap();
        assert_eq!(read_metrics(&p).unwrap(), vec![-1.0, -2.5]);
    }
}
