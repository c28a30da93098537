//! Station physics: active/passive switch models, detector efficiency and
//! dark counts, and per-trial timestamped local event generation.
//!
//! Trial clocking: pair emissions at a fixed period (default 1000 ns)
//! with per-station Gaussian timestamp jitter (default 1 ns). Dark counts
//! are Poisson per detector per trial window and land in the first
//! quarter of the window, which keeps log timestamps nondecreasing. If a
//! dark count and a real detection fall in the same trial window, the
//! earlier timestamp wins (first-event-wins, as in gated counters).

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::core::{streams, Outcome, RngStream, Setting, SettingLabel, SettingPair, Station};
use crate::sources::{lhv_respond, quantum_sample_joint, LhvSource, SettingDependentSource};
use crate::{Error, Result};

/// Switch in front of the analysers.
///
/// Active: the photon is routed to the analyser selected by the current
/// setting and survives with probability `transmission`. Passive: the
/// photon is routed 50/50 to the two analysers (surviving with
/// probability `transmission`), and only the selected analyser's
/// detectors are on, so half the surviving photons are silently lost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SwitchKind {
    Active { transmission: f64 },
    Passive { transmission: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Detection efficiency eta in [0, 1].
    pub efficiency: f64,
    /// Expected dark counts per trial window per detector (Poisson).
    pub dark_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationConfig {
    pub switch: SwitchKind,
    pub detectors: DetectorConfig,
    /// The station's two settings, indexed by [Primary, Alternate].
    pub settings: [Setting; 2],
}

impl StationConfig {
    pub fn validate(&self) -> Result<()> {
        let t = match self.switch {
            SwitchKind::Active { transmission } | SwitchKind::Passive { transmission } => transmission,
        };
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("switch transmission {t} outside [0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.detectors.efficiency) {
            return Err(Error::Config(format!(
                "detector efficiency {} outside [0, 1]",
                self.detectors.efficiency
            )));
        }
        if self.detectors.dark_rate < 0.0 {
            return Err(Error::Config("dark_rate must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Trial clocking parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub period_ns: i64,
    pub jitter_ns: f64,
    pub propagation_ns: i64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing { period_ns: 1000, jitter_ns: 1.0, propagation_ns: 0 }
    }
}

/// One station's record of one detected event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalEvent {
    pub trial_id: u64,
    pub t_ns: i64,
    pub setting: SettingLabel,
    pub outcome: Outcome,
    pub dark: bool,
}

/// A station's append-only local detection record.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub station: Station,
    pub seed: u64,
    pub config_hash: String,
    pub period_ns: i64,
    pub scenario: Option<String>,
    pub events: Vec<LocalEvent>,
}

impl EventLog {
    /// Check well-formedness: nondecreasing timestamps, unique trial ids.
    pub fn validate(&self) -> Result<()> {
        for w in self.events.windows(2) {
            if w[1].t_ns < w[0].t_ns {
                return Err(Error::Config(format!(
                    "log timestamps decrease at trial {}",
                    w[1].trial_id
                )));
            }
            if w[1].trial_id <= w[0].trial_id {
                return Err(Error::Config(format!(
                    "duplicate or unordered trial id {}",
                    w[1].trial_id
                )));
            }
        }
        Ok(())
    }

    pub fn write_ndjson(&self, mut w: impl Write) -> Result<()> {
        let header = NdjsonHeader {
            station: self.station,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            period_ns: self.period_ns,
            scenario: self.scenario.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for ev in &self.events {
            let rec = NdjsonRecord {
                trial: ev.trial_id,
                t_ns: ev.t_ns,
                setting: ev.setting.wire(self.station).to_string(),
                outcome: ev
                    .outcome
                    .wire()
                    .expect("NoDetect trials produce no record")
                    .to_string(),
                dark: ev.dark,
            };
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(())
    }

    pub fn read_ndjson(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::MalformedRecord { line: 1, reason: "empty log".into() })?;
        let header: NdjsonHeader = serde_json::from_str(&first?)
            .map_err(|e| Error::MalformedRecord { line: 1, reason: e.to_string() })?;
        let mut events = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 1;
            let rec: NdjsonRecord = serde_json::from_str(&line)
                .map_err(|e| Error::MalformedRecord { line: lineno, reason: e.to_string() })?;
            let (station, setting) =
                SettingLabel::from_wire(&rec.setting).ok_or_else(|| Error::MalformedRecord {
                    line: lineno,
                    reason: format!("unknown setting label {:?}", rec.setting),
                })?;
            if station != header.station {
                return Err(Error::MalformedRecord {
                    line: lineno,
                    reason: format!("setting {:?} belongs to the other station", rec.setting),
                });
            }
            let outcome = Outcome::from_wire(&rec.outcome).ok_or_else(|| Error::MalformedRecord {
                line: lineno,
                reason: format!("unknown outcome {:?}", rec.outcome),
            })?;
            events.push(LocalEvent {
                trial_id: rec.trial,
                t_ns: rec.t_ns,
                setting,
                outcome,
                dark: rec.dark,
            });
        }
        Ok(EventLog {
            station: header.station,
            seed: header.seed,
            config_hash: header.config_hash,
            period_ns: header.period_ns,
            scenario: header.scenario,
            events,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct NdjsonHeader {
    station: Station,
    seed: u64,
    config_hash: String,
    period_ns: i64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    scenario: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct NdjsonRecord {
    trial: u64,
    t_ns: i64,
    setting: String,
    outcome: String,
    dark: bool,
}

/// Which physical source feeds the experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SourceSpec {
    /// The nonlocal quantum reference sampler.
    Quantum,
    Lhv(LhvSource),
    /// Locality-loophole scenario: the sampler sees both settings.
    SettingDependent(SettingDependentSource),
}

/// Exact closed-form per-trial outcome law of a station (dark counts
/// excluded; they are additive in the log layer).
///
/// Active(T): each detected component is thinned by T * eta. Passive(T):
/// thinned by T * eta / 2, the extra 1/2 being the chance the photon was
/// routed to the switched-off analyser.
pub fn outcome_distribution(config: &StationConfig, p_micro: [f64; 3]) -> Result<[f64; 3]> {
    let sum: f64 = p_micro.iter().sum();
    if p_micro.iter().any(|&p| p < -1e-12) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("p_micro = {p_micro:?}")));
    }
    let eta = config.detectors.efficiency;
    let factor = match config.switch {
        SwitchKind::Active { transmission } => transmission * eta,
        SwitchKind::Passive { transmission } => transmission * eta / 2.0,
    };
    let plus = factor * p_micro[0];
    let minus = factor * p_micro[1];
    Ok([plus, minus, 1.0 - plus - minus])
}

/// Dark counts land in the first quarter of the trial window so that the
/// log stays time-ordered across trials.
fn dark_gate_ns(timing: &Timing) -> i64 {
    (timing.period_ns / 4).max(1)
}

/// Run one trial through one station: switch routing/loss, passive-switch
/// gating, detector efficiency, then dark-count injection. Returns `None`
/// when nothing fired (no-detect trials produce no record).
pub fn station_trial(
    config: &StationConfig,
    setting: SettingLabel,
    micro: Outcome,
    rng: &mut impl Rng,
    t_emit: i64,
    timing: &Timing,
) -> Option<LocalEvent> {
    let trial_id = (t_emit / timing.period_ns) as u64;
    let real = if micro.detected() {
        let survives = match config.switch {
            SwitchKind::Active { transmission } => rng.random::<f64>() < transmission,
            SwitchKind::Passive { transmission } => {
                let through = rng.random::<f64>() < transmission;
                // 50/50 routing; the off analyser's detections never happen.
                let gated = rng.random::<f64>() < 0.5;
                through && gated
            }
        };
        let detected = survives && rng.random::<f64>() < config.detectors.efficiency;
        if detected {
            let jitter = Normal::new(0.0, timing.jitter_ns.max(f64::MIN_POSITIVE))
                .expect("valid jitter sigma")
                .sample(rng);
            let max_jitter = (timing.period_ns / 4) as f64;
            let t = t_emit
                + timing.propagation_ns
                + jitter.clamp(-max_jitter, max_jitter).round() as i64;
            Some((t, micro, false))
        } else {
            None
        }
    } else {
        None
    };

    let mut dark: Option<(i64, Outcome, bool)> = None;
    if config.detectors.dark_rate > 0.0 {
        let gate = dark_gate_ns(timing);
        let poisson = Poisson::new(config.detectors.dark_rate).expect("positive dark rate");
        for outcome in [Outcome::Plus, Outcome::Minus] {
            // Cap the count to stay inside the per-trial draw budget.
            let k = (poisson.sample(rng) as u64).min(16);
            for _ in 0..k {
                let t = t_emit + rng.random_range(0..gate);
                if dark.is_none_or(|(best, _, _)| t < best) {
                    dark = Some((t, outcome, true));
                }
            }
        }
    }

    // First event wins when both a real detection and a dark count land
    // in the same window.
    let winner = match (real, dark) {
        (Some(r), Some(d)) => Some(if r.0 <= d.0 { r } else { d }),
        (r, d) => r.or(d),
    };
    winner.map(|(t_ns, outcome, is_dark)| LocalEvent {
        trial_id,
        t_ns,
        setting,
        outcome,
        dark: is_dark,
    })
}

/// Per-run ground truth kept alongside the logs (available in simulation,
/// absent for real logs).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub n_trials: u64,
    /// Trials per joint setting pair, canonical order.
    pub trials_per_pair: [u64; 4],
    /// Trials per station (outer) per setting (inner); every trial counts
    /// as one emission toward the station's chosen setting.
    pub emitted: [[u64; 2]; 2],
    /// Chosen setting per trial per station, for trial-level ground truth.
    pub settings: Vec<[SettingLabel; 2]>,
}

#[derive(Serialize)]
struct RunDescriptor<'a> {
    source: &'a SourceSpec,
    alice: &'a StationConfig,
    bob: &'a StationConfig,
    timing: &'a Timing,
    n_trials: u64,
    seed: u64,
}

/// Hash of the canonicalized run description, stored in log headers.
pub fn config_hash(
    source: &SourceSpec,
    alice: &StationConfig,
    bob: &StationConfig,
    timing: &Timing,
    n_trials: u64,
    seed: u64,
) -> String {
    let descriptor = RunDescriptor { source, alice, bob, timing, n_trials, seed };
    let canonical = serde_json::to_string(&descriptor).expect("descriptor serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

struct TrialResult {
    alice: Option<LocalEvent>,
    bob: Option<LocalEvent>,
    settings: [SettingLabel; 2],
}

fn simulate_trial(
    trial: u64,
    source: &SourceSpec,
    alice_cfg: &StationConfig,
    bob_cfg: &StationConfig,
    timing: &Timing,
    seed: u64,
) -> Result<TrialResult> {
    let mut src_rng = RngStream::new(seed, streams::SOURCE).trial_rng(trial);
    let mut alice_set_rng = RngStream::new(seed, streams::ALICE_SETTING).trial_rng(trial);
    let mut bob_set_rng = RngStream::new(seed, streams::BOB_SETTING).trial_rng(trial);
    let mut alice_rng = RngStream::new(seed, streams::ALICE_STATION).trial_rng(trial);
    let mut bob_rng = RngStream::new(seed, streams::BOB_STATION).trial_rng(trial);

    let a_label = SettingLabel::from_index(alice_set_rng.random_range(0..2usize));
    let b_label = SettingLabel::from_index(bob_set_rng.random_range(0..2usize));
    let a_setting = &alice_cfg.settings[a_label.index()];
    let b_setting = &bob_cfg.settings[b_label.index()];

    let (micro_a, micro_b) = match source {
        SourceSpec::Quantum => quantum_sample_joint(a_setting, b_setting, &mut src_rng),
        SourceSpec::Lhv(src) => {
            let lambda = src.sample(trial, &mut src_rng);
            let a = lhv_respond(&src.alice_response(&lambda, a_setting), &mut src_rng)?;
            let b = lhv_respond(&src.bob_response(&lambda, b_setting), &mut src_rng)?;
            (a, b)
        }
        SourceSpec::SettingDependent(src) => {
            // Deliberately inverted ordering: the sampler sees both settings.
            let lambda = src.sample(trial, a_setting, b_setting, &mut src_rng);
            let a = lhv_respond(&src.alice_response(&lambda, a_setting), &mut src_rng)?;
            let b = lhv_respond(&src.bob_response(&lambda, b_setting), &mut src_rng)?;
            (a, b)
        }
    };

    let t_emit = trial as i64 * timing.period_ns;
    Ok(TrialResult {
        alice: station_trial(alice_cfg, a_label, micro_a, &mut alice_rng, t_emit, timing),
        bob: station_trial(bob_cfg, b_label, micro_b, &mut bob_rng, t_emit, timing),
        settings: [a_label, b_label],
    })
}

/// Run the full pipeline: per-trial setting choices, source emission,
/// both stations, two independent event logs.
///
/// Trials shard across `workers` threads by contiguous ranges and merge
/// by trial id; because every trial draws from its own fixed RNG offset,
/// the logs are identical for any worker count.
pub fn run_experiment(
    source: &SourceSpec,
    alice_cfg: &StationConfig,
    bob_cfg: &StationConfig,
    n_trials: u64,
    seed: u64,
    timing: &Timing,
    workers: usize,
) -> Result<(EventLog, EventLog, RunMetadata)> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be at least 1".into()));
    }
    alice_cfg.validate()?;
    bob_cfg.validate()?;

    let workers = workers.clamp(1, 64).min(n_trials as usize);
    let chunk = n_trials.div_ceil(workers as u64);
    let mut results: Vec<Result<Vec<TrialResult>>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers as u64)
            .map(|w| {
                let lo = w * chunk;
                let hi = ((w + 1) * chunk).min(n_trials);
                scope.spawn(move || {
                    (lo..hi)
                        .map(|t| simulate_trial(t, source, alice_cfg, bob_cfg, timing, seed))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        for h in handles {
            results.push(h.join().expect("worker thread panicked"));
        }
    });

    let hash = config_hash(source, alice_cfg, bob_cfg, timing, n_trials, seed);
    let scenario = match source {
        SourceSpec::SettingDependent(_) => Some("locality-loophole".to_string()),
        _ => None,
    };
    let mut alice_log = EventLog {
        station: Station::Alice,
        seed,
        config_hash: hash.clone(),
        period_ns: timing.period_ns,
        scenario: scenario.clone(),
        events: Vec::new(),
    };
    let mut bob_log = EventLog {
        station: Station::Bob,
        seed,
        config_hash: hash,
        period_ns: timing.period_ns,
        scenario,
        events: Vec::new(),
    };
    let mut meta = RunMetadata { n_trials, ..Default::default() };

    for chunk in results {
        for trial in chunk? {
            let [a_label, b_label] = trial.settings;
            let pair = SettingPair { alice: a_label, bob: b_label };
            meta.trials_per_pair[pair.index()] += 1;
            meta.emitted[Station::Alice.index()][a_label.index()] += 1;
            meta.emitted[Station::Bob.index()][b_label.index()] += 1;
            meta.settings.push(trial.settings);
            if let Some(ev) = trial.alice {
                alice_log.events.push(ev);
            }
            if let Some(ev) = trial.bob {
                bob_log.events.push(ev);
            }
        }
    }
    Ok((alice_log, bob_log, meta))
}
