//! End-to-end acceptance checks, one per shipped guarantee. Each test
//! prints a single machine-greppable pass/fail line (run with
//! `cargo test --test acceptance -- --nocapture` to see them all).

use std::f64::consts::SQRT_2;
use std::time::Instant;

use bell_lab::analysis::{chsh, pair_coincidences, ChshResult, Estimator};
use bell_lab::apparatus::{
    outcome_distribution, DetectorConfig, EventLog, RunMetadata, SourceSpec, StationConfig,
    SwitchKind, Timing,
};
use bell_lab::core::{
    chsh_optimal_settings, quantum_correlation, RngStream, Setting, SettingLabel, SettingPair,
    Station,
};
use bell_lab::harness;
use bell_lab::lhvopt::{critical_efficiency, max_chsh_at_efficiency};
use bell_lab::sources::{make_gg_adversary, make_locality_adversary, random_lhv_strategy};

fn verdict(number: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "acceptance {number} ({name}): {} [{detail}]",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "acceptance {number} ({name}) failed: {detail}");
}

fn ideal_station(station: Station) -> StationConfig {
    let [a, a2, b, b2] = chsh_optimal_settings();
    let angles = match station {
        Station::Alice => [a, a2],
        Station::Bob => [b, b2],
    };
    StationConfig {
        switch: SwitchKind::Active { transmission: 1.0 },
        detectors: DetectorConfig { efficiency: 1.0, dark_rate: 0.0 },
        settings: [
            Setting { station, label: SettingLabel::Primary, angle: angles[0] },
            Setting { station, label: SettingLabel::Alternate, angle: angles[1] },
        ],
    }
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn run(source: &SourceSpec, n_trials: u64, seed: u64) -> (EventLog, EventLog, RunMetadata) {
    let timing = Timing::default();
    bell_lab::apparatus::run_experiment(
        source,
        &ideal_station(Station::Alice),
        &ideal_station(Station::Bob),
        n_trials,
        seed,
        &timing,
        workers(),
    )
    .expect("simulation runs")
}

fn estimate(
    logs: &(EventLog, EventLog, RunMetadata),
    estimator: Estimator,
) -> ChshResult {
    let table = pair_coincidences(&logs.0, &logs.1, 250).with_metadata(&logs.2);
    chsh(&table, estimator, 3.0).expect("estimable")
}

#[test]
fn acceptance_1_quantum_violation() {
    let start = Instant::now();
    let logs = run(&SourceSpec::Quantum, 1_000_000, 20_260_826);
    let result = estimate(&logs, Estimator::Conditional);
    let elapsed = start.elapsed().as_secs_f64();
    let ok = (result.s - 2.8284).abs() <= 0.02 && result.violates && elapsed < 10.0;
    verdict(
        1,
        "quantum violation",
        ok,
        &format!("S = {:.4} ± {:.4}, violates = {}, {elapsed:.1} s", result.s, result.stderr_s, result.violates),
    );
}

#[test]
fn acceptance_2_bell_bound_for_random_lhv_mixtures() {
    let start = Instant::now();
    let mut rng = RngStream::new(7, 99).rng();
    let mut worst_excess = f64::NEG_INFINITY;
    for i in 0..1000 {
        let source = SourceSpec::Lhv(random_lhv_strategy(&mut rng));
        let logs = run(&source, 100_000, 40_000 + i);
        let result = estimate(&logs, Estimator::Conditional);
        worst_excess = worst_excess.max(result.s - 2.0 - 5.0 * result.stderr_s);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = worst_excess <= 0.0 && elapsed < 120.0;
    verdict(
        2,
        "Bell bound over 1000 random full-detection mixtures",
        ok,
        &format!("worst S - (2 + 5 stderr) = {worst_excess:.4}, {elapsed:.1} s"),
    );
}

#[test]
fn acceptance_3_detection_loophole() {
    let logs = run(&SourceSpec::Lhv(make_gg_adversary()), 1_000_000, 31);
    let conditional = estimate(&logs, Estimator::Conditional);
    let all_trials = estimate(&logs, Estimator::AllTrials);
    let table = pair_coincidences(&logs.0, &logs.1, 250).with_metadata(&logs.2);
    let eff = bell_lab::analysis::efficiency_estimate(&table).unwrap();

    let two_over_pi = 2.0 / std::f64::consts::PI;
    let ok = (conditional.s - 2.828).abs() <= 0.02
        && eff[0][0] == 1.0
        && eff[0][1] == 1.0
        && (eff[1][0] - two_over_pi).abs() <= 0.005
        && (eff[1][1] - two_over_pi).abs() <= 0.005
        && all_trials.s <= 2.0 + 5.0 * all_trials.stderr_s;
    verdict(
        3,
        "detection loophole",
        ok,
        &format!(
            "conditional S = {:.4}, all-trials S = {:.4} ± {:.4}, eff A = {:?}, eff B = {:?}",
            conditional.s, all_trials.s, all_trials.stderr_s, eff[0], eff[1]
        ),
    );
}

#[test]
fn acceptance_4_locality_loophole() {
    let n_trials = 1_000_000u64;
    let logs = run(
        &SourceSpec::SettingDependent(make_locality_adversary()),
        n_trials,
        58,
    );
    let result = estimate(&logs, Estimator::Conditional);
    let table = pair_coincidences(&logs.0, &logs.1, 250).with_metadata(&logs.2);

    // Full detection: every trial produced an event at both stations.
    let full_detection = logs.0.events.len() as u64 == n_trials
        && logs.1.events.len() as u64 == n_trials;

    // Joint frequencies against the quantum law, per pair and cell.
    let alice_cfg = ideal_station(Station::Alice);
    let bob_cfg = ideal_station(Station::Bob);
    let mut max_sigma: f64 = 0.0;
    for pair in SettingPair::ALL {
        let n = table.trials_per_pair.unwrap()[pair.index()] as f64;
        let c = quantum_correlation(
            alice_cfg.settings[pair.alice.index()].angle,
            bob_cfg.settings[pair.bob.index()].angle,
        );
        for (cell, (a, b)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
            .into_iter()
            .enumerate()
        {
            let p = 0.25 * (1.0 + a * b * c);
            let freq = table.counts[pair.index()][cell] as f64 / n;
            let sigma = (p * (1.0 - p) / n).sqrt();
            max_sigma = max_sigma.max((freq - p).abs() / sigma);
        }
    }

    let ok = full_detection && max_sigma <= 3.0 && (result.s - 2.828).abs() <= 0.02;
    verdict(
        4,
        "locality loophole",
        ok,
        &format!(
            "S = {:.4}, full detection = {full_detection}, worst cell deviation = {max_sigma:.2} sigma",
            result.s
        ),
    );
}

#[test]
fn acceptance_5_switch_equivalence() {
    // Closed form: Active(T/2) vs Passive(T) across a grid.
    let station = |switch: SwitchKind, eta: f64| StationConfig {
        switch,
        detectors: DetectorConfig { efficiency: eta, dark_rate: 0.0 },
        settings: ideal_station(Station::Alice).settings,
    };
    let mut max_diff: f64 = 0.0;
    for t in [0.2, 0.5, 0.8, 1.0] {
        for eta in [0.25, 0.5, 0.75, 1.0] {
            for p_plus in [0.0, 0.2, 0.5, 0.9] {
                let micro = [p_plus, 1.0 - p_plus, 0.0];
                let active = outcome_distribution(
                    &station(SwitchKind::Active { transmission: t / 2.0 }, eta),
                    micro,
                )
                .unwrap();
                let passive = outcome_distribution(
                    &station(SwitchKind::Passive { transmission: t }, eta),
                    micro,
                )
                .unwrap();
                for (a, p) in active.iter().zip(&passive) {
                    max_diff = max_diff.max((a - p).abs());
                }
            }
        }
    }

    // Monte Carlo two-sample check at defaults (active 0.5 vs passive 1.0).
    let mc = harness::cmd_compare_switch(0.5, 1.0, 1_000_000, 12).unwrap();

    let ok = max_diff <= 1e-12 && mc.tv_distance <= mc.tv_bound;
    verdict(
        5,
        "active/passive switch equivalence",
        ok,
        &format!(
            "closed-form max diff = {max_diff:.2e}, TV = {:.5} (bound {:.5})",
            mc.tv_distance, mc.tv_bound
        ),
    );
}

#[test]
fn acceptance_6_critical_efficiency() {
    let start = Instant::now();
    let critical = critical_efficiency(2.0 * SQRT_2).unwrap();
    let at_one = max_chsh_at_efficiency(1.0).unwrap();
    let at_two_thirds = max_chsh_at_efficiency(2.0 / 3.0).unwrap();
    let mut max_gap: f64 = 0.0;
    for i in 0..10 {
        let eta = 0.55 + 0.05 * i as f64;
        max_gap = max_gap.max(max_chsh_at_efficiency(eta).unwrap().gap);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ok = (0.818..=0.838).contains(&critical)
        && (at_one.s_max - 2.0).abs() <= 1e-9
        && (at_two_thirds.s_max - 4.0).abs() <= 1e-6
        && max_gap <= 1e-2
        && elapsed < 60.0;
    verdict(
        6,
        "critical efficiency",
        ok,
        &format!(
            "critical = {critical:.4}, S(1) = {:.10}, S(2/3) = {:.7}, max optimizer gap = {max_gap:.2e}, {elapsed:.1} s",
            at_one.s_max, at_two_thirds.s_max
        ),
    );
}

#[test]
fn acceptance_7_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let logs = run(&SourceSpec::Quantum, 200_000, 88);
    let a_path = dir.path().join("alice.ndjson");
    let b_path = dir.path().join("bob.ndjson");
    logs.0
        .write_ndjson(std::io::BufWriter::new(std::fs::File::create(&a_path).unwrap()))
        .unwrap();
    logs.1
        .write_ndjson(std::io::BufWriter::new(std::fs::File::create(&b_path).unwrap()))
        .unwrap();

    // Bit-exact log round trip.
    let a_back = EventLog::read_ndjson(std::io::BufReader::new(
        std::fs::File::open(&a_path).unwrap(),
    ))
    .unwrap();
    let round_trip_exact = a_back == logs.0;

    // In-process table vs cmd_analyze on the written files.
    let window = 250;
    let table = pair_coincidences(&logs.0, &logs.1, window);
    let in_process = chsh(&table, Estimator::Conditional, 3.0).unwrap();
    let analyzed = harness::cmd_analyze(
        &a_path,
        &b_path,
        Some(window),
        Estimator::Conditional,
        3.0,
        &dir.path().join("out"),
    )
    .unwrap();
    let bit_exact = analyzed.chsh.s.to_bits() == in_process.s.to_bits()
        && analyzed.coincidences
            == [
                table.total(SettingPair::ALL[0]),
                table.total(SettingPair::ALL[1]),
                table.total(SettingPair::ALL[2]),
                table.total(SettingPair::ALL[3]),
            ];

    // Timestamp pairing vs trial-id ground truth (jitter sigma 1 ns is
    // far below window / 4, dark rate 0).
    let mut by_trial = std::collections::HashMap::new();
    for ev in &logs.0.events {
        by_trial.insert(ev.trial_id, ev);
    }
    let mut trial_id_counts = [[0u64; 4]; 4];
    for ev_b in &logs.1.events {
        if let Some(ev_a) = by_trial.get(&ev_b.trial_id) {
            let pair = SettingPair { alice: ev_a.setting, bob: ev_b.setting };
            let cell = match (ev_a.outcome.value().unwrap(), ev_b.outcome.value().unwrap()) {
                (1, 1) => 0,
                (1, -1) => 1,
                (-1, 1) => 2,
                _ => 3,
            };
            trial_id_counts[pair.index()][cell] += 1;
        }
    }
    let pairing_exact = table.counts == trial_id_counts && table.ambiguous_matches == 0;

    let ok = round_trip_exact && bit_exact && pairing_exact;
    verdict(
        7,
        "pipeline round trip",
        ok,
        &format!(
            "log round trip = {round_trip_exact}, analyze bit-exact = {bit_exact}, pairing matches trial ids = {pairing_exact}"
        ),
    );
}

#[test]
fn acceptance_8_estimator_convergence_rate() {
    // RMS error of the (a, b) correlation estimate across seeds, at
    // nested prefixes of a single long run per seed.
    let sizes = [1_000u64, 10_000, 100_000, 1_000_000];
    let n_seeds = 16u64;
    let pair = SettingPair::ALL[0];
    let alice_cfg = ideal_station(Station::Alice);
    let bob_cfg = ideal_station(Station::Bob);
    let truth = quantum_correlation(
        alice_cfg.settings[0].angle,
        bob_cfg.settings[0].angle,
    );

    let mut rms = Vec::new();
    for &n in &sizes {
        let mut sq_sum = 0.0;
        for seed in 0..n_seeds {
            let logs = run(&SourceSpec::Quantum, n, 9_000 + seed);
            let table = pair_coincidences(&logs.0, &logs.1, 250);
            let (e, _) =
                bell_lab::analysis::correlation(&table, pair, Estimator::Conditional).unwrap();
            sq_sum += (e - truth) * (e - truth);
        }
        rms.push((sq_sum / n_seeds as f64).sqrt());
    }

    // Least-squares slope of ln(rms) against ln(N).
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = rms.iter().map(|r| r.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum::<f64>()
        / xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum::<f64>();

    let ok = (slope + 0.5).abs() <= 0.1;
    verdict(
        8,
        "1/sqrt(N) estimator convergence",
        ok,
        &format!("log-log slope = {slope:.3}, rms = {rms:?}"),
    );
}
