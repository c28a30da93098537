//! Batch scenario orchestration: JSON experiment configs, the four CLI
//! commands, and machine-readable result emission (results.json + CSV).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    chsh, compare_stations, efficiency_estimate, pair_coincidences, ChshResult, Estimator,
};
use crate::apparatus::{
    config_hash, outcome_distribution, run_experiment, station_trial, DetectorConfig, EventLog,
    SourceSpec, StationConfig, SwitchKind, Timing,
};
use crate::core::{Angle, Outcome, RngStream, Setting, SettingLabel, SettingPair, Station};
use crate::lhvopt::{critical_efficiency, max_chsh_at_efficiency, StrategyMixture};
use crate::sources::{make_gg_adversary, make_guess_mixture_adversary, make_locality_adversary};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Exit-code contract: 0 success, 2 config/parse, 3 I/O, 4 analysis
/// undefined on the given data.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 3,
        Error::ZeroCoincidences(_)
        | Error::MissingCorrelation(_)
        | Error::MissingMetadata(_)
        | Error::Infeasible(_)
        | Error::NonBracketing { .. } => 4,
        _ => 2,
    }
}

/// Worker-thread cap: BELL_LAB_THREADS if set, else the machine's
/// available parallelism.
pub fn worker_count() -> usize {
    std::env::var("BELL_LAB_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceConfig {
    Quantum,
    GgAdversary,
    LocalityAdversary,
    GuessMixture { w: f64 },
    Mixture { weights: Vec<f64> },
}

impl SourceConfig {
    fn to_spec(&self) -> Result<SourceSpec> {
        Ok(match self {
            SourceConfig::Quantum => SourceSpec::Quantum,
            SourceConfig::GgAdversary => SourceSpec::Lhv(make_gg_adversary()),
            SourceConfig::LocalityAdversary => {
                SourceSpec::SettingDependent(make_locality_adversary())
            }
            SourceConfig::GuessMixture { w } => {
                SourceSpec::Lhv(make_guess_mixture_adversary(*w)?)
            }
            SourceConfig::Mixture { weights } => {
                let mixture = StrategyMixture::new(weights.clone())
                    .map_err(|e| Error::Config(e.to_string()))?;
                SourceSpec::Lhv(crate::lhvopt::realize_adversary(&mixture)?)
            }
        })
    }
}

fn default_transmission() -> SwitchKind {
    SwitchKind::Active { transmission: 1.0 }
}
fn default_efficiency() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSection {
    #[serde(default = "default_transmission")]
    pub switch: SwitchKind,
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
    #[serde(default)]
    pub dark_rate: f64,
}

impl Default for StationSection {
    fn default() -> Self {
        StationSection {
            switch: default_transmission(),
            efficiency: 1.0,
            dark_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnglesDeg {
    /// Alice's [primary, alternate] analyser angles in degrees.
    pub alice: [f64; 2],
    /// Bob's [primary, alternate] analyser angles in degrees.
    pub bob: [f64; 2],
}

impl Default for AnglesDeg {
    fn default() -> Self {
        // The CHSH-optimal settings.
        AnglesDeg { alice: [0.0, 45.0], bob: [22.5, -22.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StationsSection {
    #[serde(default)]
    pub alice: StationSection,
    #[serde(default)]
    pub bob: StationSection,
}

fn default_period() -> i64 {
    1000
}
fn default_jitter() -> f64 {
    1.0
}
fn default_k_sigma() -> f64 {
    3.0
}
fn default_estimator() -> Estimator {
    Estimator::Conditional
}

/// One batch scenario, loaded from a single JSON document. Unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: SourceConfig,
    #[serde(default)]
    pub angles_deg: AnglesDeg,
    #[serde(default)]
    pub stations: StationsSection,
    pub n_trials: u64,
    pub seed: u64,
    #[serde(default = "default_period")]
    pub period_ns: i64,
    #[serde(default = "default_jitter")]
    pub jitter_ns: f64,
    /// Coincidence window; defaults to period_ns / 4.
    #[serde(default)]
    pub window_ns: Option<i64>,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    #[serde(default = "default_k_sigma")]
    pub k_sigma: f64,
    /// Output directory for logs and results; defaults to ".".
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let config: ExperimentConfig = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if self.period_ns < 4 {
            return Err(Error::Config("period_ns must be at least 4".into()));
        }
        if self.window_ns.is_some_and(|w| w <= 0) {
            return Err(Error::Config("window_ns must be positive".into()));
        }
        self.station_config(Station::Alice).validate()?;
        self.station_config(Station::Bob).validate()
    }

    fn station_config(&self, station: Station) -> StationConfig {
        let (section, degs) = match station {
            Station::Alice => (&self.stations.alice, self.angles_deg.alice),
            Station::Bob => (&self.stations.bob, self.angles_deg.bob),
        };
        StationConfig {
            switch: section.switch,
            detectors: DetectorConfig {
                efficiency: section.efficiency,
                dark_rate: section.dark_rate,
            },
            settings: [
                Setting {
                    station,
                    label: SettingLabel::Primary,
                    angle: Angle::from_degrees(degs[0]),
                },
                Setting {
                    station,
                    label: SettingLabel::Alternate,
                    angle: Angle::from_degrees(degs[1]),
                },
            ],
        }
    }

    pub fn timing(&self) -> Timing {
        Timing { period_ns: self.period_ns, jitter_ns: self.jitter_ns, propagation_ns: 0 }
    }

    pub fn window(&self) -> i64 {
        self.window_ns.unwrap_or(self.period_ns / 4)
    }
}

/// The stable results.json payload shared by `run` and `analyze`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub window_ns: i64,
    pub chsh: ChshResult,
    /// Per-pair coincidence totals in canonical pair order.
    pub coincidences: [u64; 4],
    pub singles: [[u64; 2]; 2],
    pub ambiguous_matches: u64,
    /// singles / emitted per station per setting; simulation runs only.
    pub efficiencies: Option<[[f64; 2]; 2]>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| Error::Config(format!("serializing {}: {e}", path.display())))?;
    out.write_all(b"\n")?;
    Ok(())
}

fn write_correlation_csv(path: &Path, results: &Results) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "pair,e,stderr,coincidences")?;
    for pair in SettingPair::ALL {
        writeln!(
            out,
            "{pair},{},{},{}",
            results.chsh.e.get(pair).unwrap_or(f64::NAN),
            results.chsh.stderr_e[pair.index()],
            results.coincidences[pair.index()],
        )?;
    }
    Ok(())
}

fn print_verdict(results: &Results) {
    println!(
        "S = {:.4} ± {:.4}  ({} the classical bound at {:.0}σ, {} estimator)",
        results.chsh.s,
        results.chsh.stderr_s,
        if results.chsh.violates { "violates" } else { "within" },
        results.chsh.k_sigma,
        match results.chsh.estimator {
            Estimator::Conditional => "conditional",
            Estimator::AllTrials => "all-trials",
        },
    );
}

/// `run`: simulate a configured scenario, write the two station logs and
/// results.json, and print the CHSH verdict.
pub fn cmd_run(
    config_path: &Path,
    seed_override: Option<u64>,
    out_dir_override: Option<&Path>,
) -> Result<Results> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let out_dir = out_dir_override
        .map(Path::to_path_buf)
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir)?;

    let source = config.source.to_spec()?;
    let alice_cfg = config.station_config(Station::Alice);
    let bob_cfg = config.station_config(Station::Bob);
    let timing = config.timing();
    let (alice_log, bob_log, meta) = run_experiment(
        &source,
        &alice_cfg,
        &bob_cfg,
        config.n_trials,
        config.seed,
        &timing,
        worker_count(),
    )?;

    alice_log.write_ndjson(BufWriter::new(File::create(out_dir.join("alice.ndjson"))?))?;
    bob_log.write_ndjson(BufWriter::new(File::create(out_dir.join("bob.ndjson"))?))?;

    let table = pair_coincidences(&alice_log, &bob_log, config.window()).with_metadata(&meta);
    let chsh_result = chsh(&table, config.estimator, config.k_sigma)?;
    let results = Results {
        schema_version: SCHEMA_VERSION,
        config_hash: config_hash(
            &source,
            &alice_cfg,
            &bob_cfg,
            &timing,
            config.n_trials,
            config.seed,
        ),
        seed: config.seed,
        window_ns: config.window(),
        coincidences: [
            table.total(SettingPair::ALL[0]),
            table.total(SettingPair::ALL[1]),
            table.total(SettingPair::ALL[2]),
            table.total(SettingPair::ALL[3]),
        ],
        singles: table.singles,
        ambiguous_matches: table.ambiguous_matches,
        efficiencies: efficiency_estimate(&table).ok(),
        chsh: chsh_result,
    };
    write_json(&out_dir.join("results.json"), &results)?;
    write_correlation_csv(&out_dir.join("correlations.csv"), &results)?;
    print_verdict(&results);
    Ok(results)
}

/// `analyze`: pair two NDJSON logs and estimate CHSH from scratch.
pub fn cmd_analyze(
    log_a_path: &Path,
    log_b_path: &Path,
    window_ns: Option<i64>,
    estimator: Estimator,
    k_sigma: f64,
    out_dir: &Path,
) -> Result<Results> {
    let log_a = EventLog::read_ndjson(BufReader::new(File::open(log_a_path)?))?;
    let log_b = EventLog::read_ndjson(BufReader::new(File::open(log_b_path)?))?;
    if log_a.config_hash != log_b.config_hash {
        return Err(Error::Config(format!(
            "log headers disagree: config hashes {} vs {}",
            log_a.config_hash, log_b.config_hash
        )));
    }
    let window = window_ns.unwrap_or(log_a.period_ns / 4);
    if window <= 0 {
        return Err(Error::Config("window_ns must be positive".into()));
    }
    fs::create_dir_all(out_dir)?;

    let table = pair_coincidences(&log_a, &log_b, window);
    let chsh_result = chsh(&table, estimator, k_sigma)?;
    let results = Results {
        schema_version: SCHEMA_VERSION,
        config_hash: log_a.config_hash.clone(),
        seed: log_a.seed,
        window_ns: window,
        coincidences: [
            table.total(SettingPair::ALL[0]),
            table.total(SettingPair::ALL[1]),
            table.total(SettingPair::ALL[2]),
            table.total(SettingPair::ALL[3]),
        ],
        singles: table.singles,
        ambiguous_matches: table.ambiguous_matches,
        efficiencies: None,
        chsh: chsh_result,
    };
    write_json(&out_dir.join("results.json"), &results)?;
    write_correlation_csv(&out_dir.join("correlations.csv"), &results)?;
    print_verdict(&results);
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub eta: f64,
    pub s_lp: f64,
    pub s_fallback: f64,
    pub gap: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResults {
    pub schema_version: u32,
    pub target_s: f64,
    pub critical_efficiency: f64,
    pub rows: Vec<ScanRow>,
}

/// `scan-eta`: tabulate S_max over an efficiency grid and report the
/// critical efficiency for `target_s`.
pub fn cmd_scan_eta(
    lo: f64,
    hi: f64,
    steps: usize,
    target_s: f64,
    out_dir: &Path,
) -> Result<ScanResults> {
    if !(lo > 0.0 && hi <= 1.0 && lo <= hi) || steps == 0 {
        return Err(Error::Config(format!(
            "grid [{lo}, {hi}] with {steps} steps is not a subdivision of (0, 1]"
        )));
    }
    fs::create_dir_all(out_dir)?;

    let grid: Vec<f64> = if steps == 1 {
        vec![lo]
    } else {
        (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect()
    };

    // Grid points are independent; shard across worker threads.
    let workers = worker_count().clamp(1, grid.len());
    let chunk = grid.len().div_ceil(workers);
    let mut rows: Vec<ScanRow> = Vec::with_capacity(grid.len());
    let mut shards: Vec<Result<Vec<ScanRow>>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = grid
            .chunks(chunk)
            .map(|etas| {
                scope.spawn(move || {
                    etas.iter()
                        .map(|&eta| {
                            let r = max_chsh_at_efficiency(eta)?;
                            Ok(ScanRow {
                                eta,
                                s_lp: r.s_lp,
                                s_fallback: r.s_fallback,
                                gap: r.gap,
                                flagged: r.flagged,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        for h in handles {
            shards.push(h.join().expect("scan worker panicked"));
        }
    });
    for shard in shards {
        rows.extend(shard?);
    }

    let critical = critical_efficiency(target_s)?;
    let results = ScanResults {
        schema_version: SCHEMA_VERSION,
        target_s,
        critical_efficiency: critical,
        rows,
    };

    let mut csv = BufWriter::new(File::create(out_dir.join("scan.csv"))?);
    writeln!(csv, "eta,s_max_lp,s_max_fallback,gap")?;
    for row in &results.rows {
        writeln!(csv, "{},{},{},{}", row.eta, row.s_lp, row.s_fallback, row.gap)?;
    }
    drop(csv);
    write_json(&out_dir.join("scan.json"), &results)?;

    for row in &results.rows {
        let flag = if row.flagged { "  [optimizers disagree]" } else { "" };
        println!("eta = {:.4}  S_max = {:.4}{flag}", row.eta, row.s_lp.max(row.s_fallback));
    }
    println!("critical efficiency for S = {target_s:.4}: {critical:.4}");
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchComparison {
    pub schema_version: u32,
    pub closed_form_max_diff: f64,
    pub closed_form_equal: bool,
    pub tv_distance: f64,
    pub tv_bound: f64,
    pub tv_consistent: bool,
    pub n_samples: u64,
    pub indistinguishable: bool,
    pub note: Option<String>,
}

/// `compare-switch`: check that an active switch at transmission `t_active`
/// is indistinguishable from a passive one at `t_passive`, first in closed
/// form over a (efficiency, micro-distribution) grid, then by a two-sample
/// Monte Carlo total-variation test.
pub fn cmd_compare_switch(
    t_active: f64,
    t_passive: f64,
    n_samples: u64,
    seed: u64,
) -> Result<SwitchComparison> {
    for t in [t_active, t_passive] {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("transmission {t} outside [0, 1]")));
        }
    }
    if n_samples == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }

    let station = |switch: SwitchKind, eta: f64| StationConfig {
        switch,
        detectors: DetectorConfig { efficiency: eta, dark_rate: 0.0 },
        settings: [
            Setting {
                station: Station::Alice,
                label: SettingLabel::Primary,
                angle: Angle::from_degrees(0.0),
            },
            Setting {
                station: Station::Alice,
                label: SettingLabel::Alternate,
                angle: Angle::from_degrees(45.0),
            },
        ],
    };

    // Closed form over a grid of efficiencies and micro distributions.
    let mut max_diff: f64 = 0.0;
    for eta in [0.25, 0.5, 0.75, 1.0] {
        for p_plus in [0.0, 0.3, 0.5, 1.0] {
            for p_minus_frac in [0.0, 0.5, 1.0] {
                let p_minus = (1.0 - p_plus) * p_minus_frac;
                let micro = [p_plus, p_minus, 1.0 - p_plus - p_minus];
                let active =
                    outcome_distribution(&station(SwitchKind::Active { transmission: t_active }, eta), micro)?;
                let passive =
                    outcome_distribution(&station(SwitchKind::Passive { transmission: t_passive }, eta), micro)?;
                for (a, p) in active.iter().zip(&passive) {
                    max_diff = max_diff.max((a - p).abs());
                }
            }
        }
    }
    let closed_form_equal = max_diff <= 1e-12;

    // Two-sample Monte Carlo at a fixed interior operating point.
    let eta = 0.8;
    let micro_p = [0.5, 0.3, 0.2];
    let active_cfg = station(SwitchKind::Active { transmission: t_active }, eta);
    let passive_cfg = station(SwitchKind::Passive { transmission: t_passive }, eta);
    let timing = Timing::default();
    let mut rng = RngStream::new(seed, 10).rng();
    let mut counts = [[0u64; 3]; 2];
    for trial in 0..n_samples {
        let u: f64 = rng.random();
        let micro = if u < micro_p[0] {
            Outcome::Plus
        } else if u < micro_p[0] + micro_p[1] {
            Outcome::Minus
        } else {
            Outcome::NoDetect
        };
        let t_emit = trial as i64 * timing.period_ns;
        for (i, cfg) in [&active_cfg, &passive_cfg].into_iter().enumerate() {
            let ev = station_trial(cfg, SettingLabel::Primary, micro, &mut rng, t_emit, &timing);
            let cell = match ev.map(|e| e.outcome) {
                Some(Outcome::Plus) => 0,
                Some(_) => 1,
                None => 2,
            };
            counts[i][cell] += 1;
        }
    }
    let to_dist = |c: &[u64; 3]| -> Vec<f64> {
        c.iter().map(|&k| k as f64 / n_samples as f64).collect()
    };
    let (tv, tv_consistent) =
        compare_stations(&to_dist(&counts[0]), n_samples, &to_dist(&counts[1]), n_samples)?;
    let tv_bound = 5.0 * (3.0 / n_samples as f64).sqrt();

    let note = (tv_bound >= 0.25).then(|| {
        format!("insufficient samples for a sharp test (noise bound {tv_bound:.3})")
    });
    let comparison = SwitchComparison {
        schema_version: SCHEMA_VERSION,
        closed_form_max_diff: max_diff,
        closed_form_equal,
        tv_distance: tv,
        tv_bound,
        tv_consistent,
        n_samples,
        indistinguishable: closed_form_equal && tv_consistent,
        note,
    };

    println!(
        "closed-form max |Δp| = {:.3e} ({} 1e-12)",
        comparison.closed_form_max_diff,
        if comparison.closed_form_equal { "within" } else { "exceeds" },
    );
    println!(
        "monte-carlo TV = {:.5} (noise bound {:.5}, n = {})",
        comparison.tv_distance, comparison.tv_bound, comparison.n_samples
    );
    if let Some(note) = &comparison.note {
        println!("note: {note}");
    }
    println!("indistinguishable: {}", comparison.indistinguishable);
    Ok(comparison)
}
