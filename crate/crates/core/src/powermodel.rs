//! Discrete DVFS processor model with a cubic power law `P(f) = alpha f^3 + gamma`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("unknown processor preset {0:?} (expected transmeta_crusoe or intel_xscale)")]
    UnknownPreset(String),
    #[error("degenerate fit: need at least two distinct frequencies, got {0}")]
    DegenerateFit(usize),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: malformed processor file: {source}", path.display())]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// One operating point. `power` is the measured dynamic power in mW; the
/// energy arithmetic uses the fitted law instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyLevel {
    /// MHz.
    pub freq: f64,
    /// Volts.
    pub voltage: f64,
    /// mW.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessorModel {
    #[serde(default)]
    pub name: String,
    /// Ascending by frequency.
    pub levels: Vec<FrequencyLevel>,
    /// mW / MHz^3.
    pub alpha: f64,
    /// mW.
    pub gamma: f64,
    /// mW drawn while not executing.
    pub p_idle: f64,
    /// Seconds per frequency switch.
    pub transition_time: f64,
}

/// Midpoint of the typical 30-150 us switching latency.
pub const DEFAULT_TRANSITION_TIME: f64 = 100e-6;

pub const PRESET_NAMES: [&str; 2] = ["transmeta_crusoe", "intel_xscale"];

fn level(freq: f64, voltage: f64, power: f64) -> FrequencyLevel {
    FrequencyLevel { freq, voltage, power }
}

impl ProcessorModel {
    /// Builds and validates a model. `p_idle = None` uses the power of the
    /// lowest level under the fitted law.
    pub fn new(
        name: impl Into<String>,
        levels: Vec<FrequencyLevel>,
        alpha: f64,
        gamma: f64,
        p_idle: Option<f64>,
        transition_time: f64,
    ) -> Result<Self, ModelError> {
        let mut model = Self {
            name: name.into(),
            levels,
            alpha,
            gamma,
            p_idle: 0.0,
            transition_time,
        };
        model.levels.sort_by(|a, b| a.freq.total_cmp(&b.freq));
        model.p_idle = match p_idle {
            Some(p) => p,
            None => match model.levels.first() {
                Some(l) => model.power_at(l.freq),
                None => 0.0,
            },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn preset(name: &str) -> Result<Self, ModelError> {
        let (levels, alpha, gamma) = match name {
            "transmeta_crusoe" => (
                vec![
                    level(300.0, 1.2, 1300.0),
                    level(400.0, 1.225, 1900.0),
                    level(533.0, 1.35, 3000.0),
                    level(600.0, 1.5, 4200.0),
                    level(667.0, 1.6, 5300.0),
                ],
                1.94e-5,
                4.44,
            ),
            "intel_xscale" => (
                vec![
                    level(150.0, 0.75, 80.0),
                    level(400.0, 1.0, 170.0),
                    level(600.0, 1.3, 400.0),
                    level(800.0, 1.6, 900.0),
                    level(1000.0, 1.8, 1600.0),
                ],
                1.55e-6,
                60.0,
            ),
            other => return Err(ModelError::UnknownPreset(other.to_owned())),
        };
        Self::new(name, levels, alpha, gamma, None, DEFAULT_TRANSITION_TIME)
    }

    /// Resolves a preset name, or failing that, reads a model file.
    pub fn from_preset_or_file(spec: &str) -> Result<Self, ModelError> {
        if PRESET_NAMES.contains(&spec) {
            Self::preset(spec)
        } else if Path::new(spec).exists() {
            Self::load(spec)
        } else {
            Err(ModelError::UnknownPreset(spec.to_owned()))
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Parameter(msg));
        if self.levels.len() < 2 {
            return bad(format!("need at least 2 frequency levels, got {}", self.levels.len()));
        }
        for l in &self.levels {
            if !(l.freq > 0.0 && l.voltage > 0.0 && l.power > 0.0)
                || !(l.freq.is_finite() && l.voltage.is_finite() && l.power.is_finite())
            {
                return bad(format!("level {l:?}: freq, voltage and power must be positive"));
            }
        }
        if self.levels.windows(2).any(|w| w[0].freq >= w[1].freq) {
            return bad("level frequencies must be strictly increasing".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(self.p_idle >= 0.0 && self.p_idle.is_finite()) {
            return bad(format!("p_idle must be non-negative, got {}", self.p_idle));
        }
        if !(self.transition_time >= 0.0 && self.transition_time.is_finite()) {
            return bad(format!("transition_time must be non-negative, got {}", self.transition_time));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_owned(),
            source,
        })?;
        let model: Self = serde_json::from_str(&text).map_err(|source| ModelError::Parse {
            path: path.to_owned(),
            source,
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("model serialization cannot fail");
        fs::write(path, text + "\n").map_err(|source| ModelError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn freqs(&self) -> impl Iterator<Item = f64> + '_ {
        self.levels.iter().map(|l| l.freq)
    }

    /// Lowest discrete frequency.
    pub fn f_min(&self) -> f64 {
        self.levels[0].freq
    }

    /// Highest discrete frequency; the original schedule runs here.
    pub fn f_max(&self) -> f64 {
        self.levels[self.levels.len() - 1].freq
    }

    pub(crate) fn power_at(&self, freq: f64) -> f64 {
        self.alpha * freq * freq * freq + self.gamma
    }

    /// `alpha f^3 + gamma` in mW. `freq` need not be a discrete level.
    pub fn dynamic_power(&self, freq: f64) -> Result<f64, ModelError> {
        positive("frequency", freq)?;
        Ok(self.power_at(freq))
    }

    /// Seconds needed for `cycles` megacycles at `freq` MHz.
    pub fn exec_time(&self, cycles: f64, freq: f64) -> Result<f64, ModelError> {
        positive("frequency", freq)?;
        if cycles.is_nan() || cycles < 0.0 {
            return Err(ModelError::Parameter(format!("cycles must be non-negative, got {cycles}")));
        }
        Ok(cycles / freq)
    }

    /// mJ spent executing at `freq` for `duration` seconds.
    pub fn segment_energy(&self, freq: f64, duration: f64) -> Result<f64, ModelError> {
        non_negative_time(duration)?;
        Ok(self.dynamic_power(freq)? * duration)
    }

    /// mJ spent idle for `duration` seconds.
    pub fn idle_energy(&self, duration: f64) -> Result<f64, ModelError> {
        non_negative_time(duration)?;
        Ok(self.p_idle * duration)
    }
}

fn positive(what: &str, x: f64) -> Result<(), ModelError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Parameter(format!("{what} must be positive, got {x}")))
    }
}

fn non_negative_time(t: f64) -> Result<(), ModelError> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(ModelError::Parameter(format!("duration must be non-negative, got {t}")))
    }
}

/// Ordinary least squares of power against `f^3` with an intercept.
/// Returns `(alpha, gamma)`.
pub fn fit_convex(points: &[(f64, f64)]) -> Result<(f64, f64), ModelError> {
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(ModelError::DegenerateFit(distinct.len()));
    }

    let n = points.len() as f64;
    let cube = |f: f64| f * f * f;
    let x_mean = points.iter().map(|p| cube(p.0)).sum::<f64>() / n;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxx, sxy) = points.iter().fold((0.0, 0.0), |(sxx, sxy), &(f, p)| {
        let dx = cube(f) - x_mean;
        (sxx + dx * dx, sxy + dx * (p - y_mean))
    });
    let alpha = sxy / sxx;
    Ok((alpha, y_mean - alpha * x_mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn presets_match_table() {
        let t = ProcessorModel::preset("transmeta_crusoe").unwrap();
        let got: Vec<_> = t.levels.iter().map(|l| (l.freq, l.voltage, l.power)).collect();
        assert_eq!(
            got,
            vec![
                (300.0, 1.2, 1300.0),
                (400.0, 1.225, 1900.0),
                (533.0, 1.35, 3000.0),
                (600.0, 1.5, 4200.0),
                (667.0, 1.6, 5300.0)
            ]
        );
        assert_eq!((t.alpha, t.gamma), (1.94e-5, 4.44));
        assert_eq!(t.transition_time, 100e-6);
        // 1.94e-5 * 300^3 + 4.44
        assert!((t.p_idle - 528.24).abs() < 1e-9);

        let x = ProcessorModel::preset("intel_xscale").unwrap();
        let got: Vec<_> = x.levels.iter().map(|l| (l.freq, l.voltage, l.power)).collect();
        assert_eq!(
            got,
            vec![
                (150.0, 0.75, 80.0),
                (400.0, 1.0, 170.0),
                (600.0, 1.3, 400.0),
                (800.0, 1.6, 900.0),
                (1000.0, 1.8, 1600.0)
            ]
        );
        assert_eq!((x.alpha, x.gamma), (1.55e-6, 60.0));

        assert!(matches!(ProcessorModel::preset("pentium"), Err(ModelError::UnknownPreset(_))));
    }

    #[test]
    fn dynamic_power_values() {
        let t = ProcessorModel::preset("transmeta_crusoe").unwrap();
        // 1.94e-5 * 296_740_963 + 4.44
        assert!(rel(t.dynamic_power(667.0).unwrap(), 5761.2147) < 1e-6);
        let x = ProcessorModel::preset("intel_xscale").unwrap();
        assert!(rel(x.dynamic_power(1000.0).unwrap(), 1610.0) < 1e-12);
        assert!((t.dynamic_power(1e-9).unwrap() - t.gamma).abs() < 1e-12);
        assert!(t.dynamic_power(0.0).is_err());
        assert!(t.dynamic_power(-5.0).is_err());
    }

    #[test]
    fn dynamic_power_is_increasing_and_convex() {
        let t = ProcessorModel::preset("transmeta_crusoe").unwrap();
        let grid: Vec<f64> = (1..=200).map(|i| i as f64 * 5.0).collect();
        let p: Vec<f64> = grid.iter().map(|&f| t.dynamic_power(f).unwrap()).collect();
        for w in p.windows(3) {
            assert!(w[1] > w[0]);
            assert!(w[2] - 2.0 * w[1] + w[0] > 0.0);
        }
    }

    #[test]
    fn exec_time_and_energies() {
        let t = ProcessorModel::preset("transmeta_crusoe").unwrap();
        assert!((t.exec_time(4002.0, 667.0).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(t.exec_time(0.0, 667.0).unwrap(), 0.0);
        assert!(t.exec_time(1.0, 0.0).is_err());
        assert_eq!(t.segment_energy(533.0, 0.0).unwrap(), 0.0);
        assert_eq!(t.idle_energy(0.0).unwrap(), 0.0);
        // 2941.98 mW * 7.50844 s
        assert!(rel(t.segment_energy(533.0, 7.50844).unwrap(), 22089.9) < 1e-4);
        // 528.24 mW * 2.49156 s
        assert!(rel(t.idle_energy(2.49156).unwrap(), 1316.14) < 1e-4);
        assert!(t.segment_energy(533.0, -1.0).is_err());
        assert!(t.idle_energy(-1.0).is_err());
    }

    /// Closed-form normal equations on the raw (uncentered) sums.
    fn normal_equations(points: &[(f64, f64)]) -> (f64, f64) {
        let n = points.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for &(f, p) in points {
            let x = f * f * f;
            sx += x;
            sy += p;
            sxx += x * x;
            sxy += x * p;
        }
        let det = n * sxx - sx * sx;
        ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
    }

    #[test]
    fn fit_recovers_exact_law() {
        let pts: Vec<_> = [100.0, 250.0, 400.0, 800.0]
            .iter()
            .map(|&f| (f, 2e-5 * f * f * f + 100.0))
            .collect();
        let (a, g) = fit_convex(&pts).unwrap();
        assert!(rel(a, 2e-5) < 1e-12 && rel(g, 100.0) < 1e-12);

        let two = [(300.0, 700.0), (600.0, 2000.0)];
        let (a, g) = fit_convex(&two).unwrap();
        for (f, p) in two {
            assert!(rel(a * f * f * f + g, p) < 1e-12);
        }
    }

    #[test]
    fn fit_of_table_matches_normal_equations() {
        for name in PRESET_NAMES {
            let m = ProcessorModel::preset(name).unwrap();
            let pts: Vec<_> = m.levels.iter().map(|l| (l.freq, l.power)).collect();
            let (a, g) = fit_convex(&pts).unwrap();
            let (a0, g0) = normal_equations(&pts);
            assert!(rel(a, a0) < 1e-9, "{name}: {a} vs {a0}");
            assert!(rel(g, g0) < 1e-9, "{name}: {g} vs {g0}");
        }
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        assert!(matches!(fit_convex(&[]), Err(ModelError::DegenerateFit(0))));
        assert!(matches!(
            fit_convex(&[(5.0, 1.0), (5.0, 2.0)]),
            Err(ModelError::DegenerateFit(1))
        ));
    }

    #[test]
    fn model_validation() {
        let lv = vec![level(100.0, 1.0, 10.0), level(200.0, 1.1, 20.0)];
        assert!(ProcessorModel::new("ok", lv.clone(), 1e-6, 1.0, None, 0.0).is_ok());
        assert!(ProcessorModel::new("one", lv[..1].to_vec(), 1e-6, 1.0, None, 0.0).is_err());
        assert!(ProcessorModel::new("dup", vec![lv[0], lv[0]], 1e-6, 1.0, None, 0.0).is_err());
        assert!(ProcessorModel::new("alpha", lv.clone(), 0.0, 1.0, None, 0.0).is_err());
        assert!(ProcessorModel::new("gamma", lv.clone(), 1e-6, -1.0, None, 0.0).is_err());
        assert!(ProcessorModel::new("tt", lv.clone(), 1e-6, 1.0, None, -1.0).is_err());
        // unsorted input is canonicalized
        let m = ProcessorModel::new("rev", vec![lv[1], lv[0]], 1e-6, 1.0, Some(3.0), 0.0).unwrap();
        assert_eq!((m.f_min(), m.f_max(), m.p_idle), (100.0, 200.0, 3.0));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cpu.json");
        let m = ProcessorModel::preset("intel_xscale").unwrap();
        m.save(&path).unwrap();
        assert_eq!(ProcessorModel::load(&path).unwrap(), m);
        let spec = path.to_str().unwrap();
        assert_eq!(ProcessorModel::from_preset_or_file(spec).unwrap(), m);
        assert!(ProcessorModel::from_preset_or_file("nope").is_err());
    }
}
