//! Offline analysis: pair two event logs into coincidences, build counts,
//! estimate correlations, evaluate CHSH with errors, estimate
//! efficiencies, and compare station variants statistically.
//!
//! The default correlation estimator is conditional on coincidences (the
//! fair-sampling convention used in the cited experiments). The
//! "all-trials" variant divides by the number of emitted trials instead;
//! the contrast between the two is exactly the detection loophole.

use serde::{Deserialize, Serialize};

use crate::apparatus::{EventLog, RunMetadata};
use crate::core::{chsh_s, CorrelationSet, Outcome, SettingPair, Station};
use crate::{Error, Result};

/// Counts of paired outcomes per setting pair, plus per-station singles
/// and (when simulation metadata exists) true trial counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceTable {
    /// counts[pair][cell] with cell = 2 * (alice minus?) + (bob minus?):
    /// [++, +-, -+, --] per canonical pair.
    pub counts: [[u64; 4]; 4],
    /// Detected singles per station (outer) per setting (inner).
    pub singles: [[u64; 2]; 2],
    /// Trials per setting pair, from simulation metadata.
    pub trials_per_pair: Option<[u64; 4]>,
    /// Emitted trials per station per setting, from simulation metadata.
    pub emitted: Option<[[u64; 2]; 2]>,
    /// Matches whose nearest-partner choice was ambiguous within the
    /// window (warning channel, not an error).
    pub ambiguous_matches: u64,
}

impl CoincidenceTable {
    pub fn total(&self, pair: SettingPair) -> u64 {
        self.counts[pair.index()].iter().sum()
    }

    fn cell(a: Outcome, b: Outcome) -> usize {
        let ai = if a == Outcome::Plus { 0 } else { 1 };
        let bi = if b == Outcome::Plus { 0 } else { 1 };
        ai * 2 + bi
    }

    /// Attach ground-truth trial counts from simulation metadata.
    pub fn with_metadata(mut self, meta: &RunMetadata) -> Self {
        self.trials_per_pair = Some(meta.trials_per_pair);
        self.emitted = Some(meta.emitted);
        self
    }
}

/// Correlation estimator convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Normalize coincidence counts by the pair's total coincidences
    /// (fair-sampling convention). Default.
    Conditional,
    /// Normalize by the number of emitted trials for the pair; requires
    /// simulation metadata.
    AllTrials,
}

/// CHSH estimate with per-pair correlations and propagated errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    pub e: CorrelationSet,
    pub stderr_e: [f64; 4],
    pub s: f64,
    pub stderr_s: f64,
    /// True iff S - 2 > k * stderr_s.
    pub violates: bool,
    pub k_sigma: f64,
    pub estimator: Estimator,
}

/// Greedy nearest-timestamp matching of two local logs.
///
/// Events pair iff |tA - tB| <= window_ns; each event is used at most
/// once; candidates are consumed in Alice-time order and ties break
/// toward the smaller Bob timestamp, then the smaller trial id.
pub fn pair_coincidences(log_a: &EventLog, log_b: &EventLog, window_ns: i64) -> CoincidenceTable {
    let mut table = CoincidenceTable::default();
    for ev in &log_a.events {
        table.singles[Station::Alice.index()][ev.setting.index()] += 1;
    }
    for ev in &log_b.events {
        table.singles[Station::Bob.index()][ev.setting.index()] += 1;
    }

    let b = &log_b.events;
    let mut used = vec![false; b.len()];
    let mut start = 0usize; // first possibly-unused index in b
    for a_ev in &log_a.events {
        while start < b.len() && (used[start] || b[start].t_ns < a_ev.t_ns - window_ns) {
            start += 1;
        }
        let mut best: Option<usize> = None;
        let mut candidates = 0u32;
        let mut j = start;
        while j < b.len() && b[j].t_ns <= a_ev.t_ns + window_ns {
            if !used[j] {
                candidates += 1;
                let better = match best {
                    None => true,
                    Some(k) => {
                        let dj = (b[j].t_ns - a_ev.t_ns).abs();
                        let dk = (b[k].t_ns - a_ev.t_ns).abs();
                        dj < dk
                            || (dj == dk
                                && (b[j].t_ns, b[j].trial_id) < (b[k].t_ns, b[k].trial_id))
                    }
                };
                if better {
                    best = Some(j);
                }
            }
            j += 1;
        }
        if let Some(k) = best {
            used[k] = true;
            if candidates > 1 {
                table.ambiguous_matches += 1;
            }
            let pair = SettingPair { alice: a_ev.setting, bob: b[k].setting };
            table.counts[pair.index()][CoincidenceTable::cell(a_ev.outcome, b[k].outcome)] += 1;
        }
    }
    table
}

/// Correlation E and its standard error for one setting pair.
pub fn correlation(
    table: &CoincidenceTable,
    pair: SettingPair,
    estimator: Estimator,
) -> Result<(f64, f64)> {
    let c = &table.counts[pair.index()];
    let numerator = c[0] as i64 + c[3] as i64 - c[1] as i64 - c[2] as i64;
    let denominator = match estimator {
        Estimator::Conditional => table.total(pair),
        Estimator::AllTrials => {
            table.trials_per_pair.ok_or(Error::MissingMetadata("trials per pair"))?
                [pair.index()]
        }
    };
    if table.total(pair) == 0 {
        return Err(Error::ZeroCoincidences(pair));
    }
    let e = numerator as f64 / denominator as f64;
    let stderr = ((1.0 - e * e).max(0.0) / denominator as f64).sqrt();
    Ok((e, stderr))
}

/// Evaluate CHSH over a coincidence table.
pub fn chsh(table: &CoincidenceTable, estimator: Estimator, k_sigma: f64) -> Result<ChshResult> {
    let mut e = CorrelationSet::new();
    let mut stderr_e = [0.0; 4];
    for pair in SettingPair::ALL {
        let (value, stderr) = correlation(table, pair, estimator)?;
        e.set(pair, value);
        stderr_e[pair.index()] = stderr;
    }
    let s = chsh_s(&e)?;
    let stderr_s = stderr_e.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(ChshResult {
        e,
        stderr_e,
        s,
        stderr_s,
        violates: s - 2.0 > k_sigma * stderr_s,
        k_sigma,
        estimator,
    })
}

/// Detected / emitted per station per setting. Requires simulation
/// metadata; unavailable for real logs.
pub fn efficiency_estimate(table: &CoincidenceTable) -> Result<[[f64; 2]; 2]> {
    let emitted = table.emitted.ok_or(Error::MissingMetadata("emitted trial counts"))?;
    let mut eff = [[0.0; 2]; 2];
    for st in 0..2 {
        for set in 0..2 {
            if emitted[st][set] > 0 {
                eff[st][set] = table.singles[st][set] as f64 / emitted[st][set] as f64;
            }
        }
    }
    Ok(eff)
}

/// Total-variation comparison of two empirical distributions over the
/// same outcome cells, with a sampling-noise threshold of
/// 5 * sqrt(cells / N).
pub fn compare_stations(
    dist_1: &[f64],
    n_1: u64,
    dist_2: &[f64],
    n_2: u64,
) -> Result<(f64, bool)> {
    if dist_1.len() != dist_2.len() {
        return Err(Error::CellMismatch(dist_1.len(), dist_2.len()));
    }
    let tv = 0.5 * dist_1.iter().zip(dist_2).map(|(p, q)| (p - q).abs()).sum::<f64>();
    let n = n_1.min(n_2).max(1);
    let bound = 5.0 * (dist_1.len() as f64 / n as f64).sqrt();
    Ok((tv, tv <= bound))
}

/// Empirical (setting, outcome) distribution of one station over a known
/// number of trials: cells are (setting, Plus/Minus/NoDetect), row-major.
pub fn station_distribution(log: &EventLog, n_trials: u64) -> Vec<f64> {
    let mut cells = vec![0.0; 6];
    let mut per_setting_detected = [0u64; 2];
    for ev in &log.events {
        let oi = if ev.outcome == Outcome::Plus { 0 } else { 1 };
        cells[ev.setting.index() * 3 + oi] += 1.0;
        per_setting_detected[ev.setting.index()] += 1;
    }
    // NoDetect mass: trials split evenly between settings is not assumed;
    // we only know detected counts, so attribute the remaining mass to
    // the no-detect cells proportionally to a fair setting choice.
    let detected: u64 = per_setting_detected.iter().sum();
    let missing = n_trials.saturating_sub(detected) as f64;
    cells[2] = missing / 2.0;
    cells[5] = missing / 2.0;
    for c in &mut cells {
        *c /= n_trials as f64;
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apparatus::{
        run_experiment, DetectorConfig, LocalEvent, SourceSpec, StationConfig, SwitchKind, Timing,
    };
    use crate::core::{Angle, Setting, SettingLabel};
    use crate::sources::make_gg_adversary;
    use approx::assert_abs_diff_eq;

    fn ideal_station(st: Station) -> StationConfig {
        let (p, a) = match st {
            Station::Alice => (0.0, 45.0),
            Station::Bob => (22.5, -22.5),
        };
        StationConfig {
            switch: SwitchKind::Active { transmission: 1.0 },
            detectors: DetectorConfig { efficiency: 1.0, dark_rate: 0.0 },
            settings: [
                Setting { station: st, label: SettingLabel::Primary, angle: Angle::from_degrees(p) },
                Setting {
                    station: st,
                    label: SettingLabel::Alternate,
                    angle: Angle::from_degrees(a),
                },
            ],
        }
    }

    fn empty_log(station: Station) -> EventLog {
        EventLog {
            station,
            seed: 0,
            config_hash: String::new(),
            period_ns: 1000,
            scenario: None,
            events: Vec::new(),
        }
    }

    fn event(trial: u64, t: i64, setting: SettingLabel, outcome: Outcome) -> LocalEvent {
        LocalEvent { trial_id: trial, t_ns: t, setting, outcome, dark: false }
    }

    #[test]
    fn empty_bob_log_gives_empty_table() {
        let mut a = empty_log(Station::Alice);
        a.events.push(event(0, 0, SettingLabel::Primary, Outcome::Plus));
        let b = empty_log(Station::Bob);
        let table = pair_coincidences(&a, &b, 250);
        assert_eq!(table.counts, [[0; 4]; 4]);
        assert_eq!(table.singles[0][0], 1);
    }

    #[test]
    fn zero_window_with_jitter_pairs_nothing() {
        let mut a = empty_log(Station::Alice);
        let mut b = empty_log(Station::Bob);
        for t in 0..100i64 {
            a.events.push(event(t as u64, t * 1000 + 1, SettingLabel::Primary, Outcome::Plus));
            b.events.push(event(t as u64, t * 1000 - 1, SettingLabel::Primary, Outcome::Plus));
        }
        let table = pair_coincidences(&a, &b, 0);
        assert_eq!(table.counts, [[0; 4]; 4]);
    }

    #[test]
    fn pairing_recovers_trial_ids_when_jitter_is_small() {
        let (a, b, meta) = run_experiment(
            &SourceSpec::Quantum,
            &ideal_station(Station::Alice),
            &ideal_station(Station::Bob),
            20_000,
            31,
            &Timing::default(),
            2,
        )
        .unwrap();
        let table = pair_coincidences(&a, &b, 250);
        // every trial detected on both sides, so every trial pairs
        assert_eq!(
            SettingPair::ALL.iter().map(|&p| table.total(p)).sum::<u64>(),
            meta.n_trials
        );
        assert_eq!(table.ambiguous_matches, 0);
        // per-pair totals match the metadata trial counts exactly
        for pair in SettingPair::ALL {
            assert_eq!(table.total(pair), meta.trials_per_pair[pair.index()]);
        }
    }

    #[test]
    fn correlation_examples() {
        let mut table = CoincidenceTable::default();
        table.counts[0] = [25, 25, 25, 25];
        let (e, _) = correlation(&table, SettingPair::ALL[0], Estimator::Conditional).unwrap();
        assert_abs_diff_eq!(e, 0.0);

        table.counts[1] = [50, 0, 0, 50];
        let (e, se) = correlation(&table, SettingPair::ALL[1], Estimator::Conditional).unwrap();
        assert_abs_diff_eq!(e, 1.0);
        assert_abs_diff_eq!(se, 0.0);
    }

    #[test]
    fn zero_coincidences_is_a_hard_error_naming_the_pair() {
        let table = CoincidenceTable::default();
        match correlation(&table, SettingPair::ALL[2], Estimator::Conditional) {
            Err(Error::ZeroCoincidences(p)) => assert_eq!(p, SettingPair::ALL[2]),
            other => panic!("expected zero-coincidence error, got {other:?}"),
        }
    }

    #[test]
    fn all_trials_estimator_requires_metadata() {
        let mut table = CoincidenceTable::default();
        table.counts[0] = [10, 0, 0, 10];
        assert!(matches!(
            correlation(&table, SettingPair::ALL[0], Estimator::AllTrials),
            Err(Error::MissingMetadata(_))
        ));
    }

    #[test]
    fn quantum_run_correlation_matches_closed_form() {
        let (a, b, meta) = run_experiment(
            &SourceSpec::Quantum,
            &ideal_station(Station::Alice),
            &ideal_station(Station::Bob),
            100_000,
            7,
            &Timing::default(),
            2,
        )
        .unwrap();
        let table = pair_coincidences(&a, &b, 250).with_metadata(&meta);
        // pair (a, b): 0 vs 22.5 degrees -> E = cos 45 deg
        let (e, se) = correlation(&table, SettingPair::ALL[0], Estimator::Conditional).unwrap();
        assert!((e - 0.5f64.sqrt()).abs() < 4.0 * se, "e={e} se={se}");
        let result = chsh(&table, Estimator::Conditional, 3.0).unwrap();
        assert!((result.s - 2.0 * std::f64::consts::SQRT_2).abs() < 0.03, "s={}", result.s);
        assert!(result.violates);

        let eff = efficiency_estimate(&table).unwrap();
        for st in 0..2 {
            for set in 0..2 {
                assert_abs_diff_eq!(eff[st][set], 1.0);
            }
        }
    }

    #[test]
    fn gg_run_conditional_violates_but_all_trials_does_not() {
        let (a, b, meta) = run_experiment(
            &SourceSpec::Lhv(make_gg_adversary()),
            &ideal_station(Station::Alice),
            &ideal_station(Station::Bob),
            200_000,
            13,
            &Timing::default(),
            2,
        )
        .unwrap();
        let table = pair_coincidences(&a, &b, 250).with_metadata(&meta);
        let conditional = chsh(&table, Estimator::Conditional, 3.0).unwrap();
        assert!(conditional.s > 2.0 + 5.0 * conditional.stderr_s, "s={}", conditional.s);
        let all_trials = chsh(&table, Estimator::AllTrials, 3.0).unwrap();
        assert!(all_trials.s <= 2.0 + 5.0 * all_trials.stderr_s, "s={}", all_trials.s);

        let eff = efficiency_estimate(&table).unwrap();
        assert_abs_diff_eq!(eff[0][0], 1.0);
        assert_abs_diff_eq!(eff[0][1], 1.0);
        assert!((eff[1][0] - 2.0 / std::f64::consts::PI).abs() < 0.005);
    }

    #[test]
    fn thinned_quantum_run_recovers_configured_efficiency() {
        let mut bob = ideal_station(Station::Bob);
        bob.detectors.efficiency = 0.8;
        let mut alice = ideal_station(Station::Alice);
        alice.detectors.efficiency = 0.8;
        let (a, b, meta) = run_experiment(
            &SourceSpec::Quantum,
            &alice,
            &bob,
            100_000,
            19,
            &Timing::default(),
            2,
        )
        .unwrap();
        let table = pair_coincidences(&a, &b, 250).with_metadata(&meta);
        let eff = efficiency_estimate(&table).unwrap();
        for st in 0..2 {
            for set in 0..2 {
                assert!((eff[st][set] - 0.8).abs() < 0.005, "eff={:?}", eff);
            }
        }
    }

    #[test]
    fn compare_identical_distributions() {
        let d = vec![0.25, 0.25, 0.25, 0.25];
        let (tv, ok) = compare_stations(&d, 1000, &d, 1000).unwrap();
        assert_abs_diff_eq!(tv, 0.0);
        assert!(ok);
    }

    #[test]
    fn compare_rejects_mismatched_cells() {
        assert!(compare_stations(&[0.5, 0.5], 10, &[1.0], 10).is_err());
    }

    #[test]
    fn pairing_is_deterministic_under_reserialization() {
        let (a, b, _) = run_experiment(
            &SourceSpec::Quantum,
            &ideal_station(Station::Alice),
            &ideal_station(Station::Bob),
            5_000,
            3,
            &Timing::default(),
            1,
        )
        .unwrap();
        let table_1 = pair_coincidences(&a, &b, 250);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_ndjson(&mut buf_a).unwrap();
        b.write_ndjson(&mut buf_b).unwrap();
        let a2 = EventLog::read_ndjson(&buf_a[..]).unwrap();
        let b2 = EventLog::read_ndjson(&buf_b[..]).unwrap();
        let table_2 = pair_coincidences(&a2, &b2, 250);
        assert_eq!(table_1, table_2);
    }
}
