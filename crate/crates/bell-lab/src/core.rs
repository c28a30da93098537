//! Shared domain types, angle and RNG conventions, and the pure CHSH
//! arithmetic used by every other module.
//!
//! Conventions: analyser angles are degrees in all external interfaces and
//! radians internally, normalized to `[0, pi)` (polarization analysers are
//! pi-periodic). The entangled reference state is chosen so that
//! `E(alpha, beta) = cos 2(alpha - beta)`, which makes the standard angle
//! set (0, 45, 22.5, -22.5 degrees) give S = +2*sqrt(2).

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// An analyser orientation, stored in radians, normalized to `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Angle(f64);

impl Angle {
    pub fn from_radians(r: f64) -> Self {
        Angle(r.rem_euclid(PI))
    }

    pub fn from_degrees(d: f64) -> Self {
        Self::from_radians(d.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }
}

/// Which side of the experiment a setting or log belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Station {
    Alice,
    Bob,
}

impl Station {
    pub fn index(self) -> usize {
        match self {
            Station::Alice => 0,
            Station::Bob => 1,
        }
    }
}

/// One of the two analyser orientations available at a station.
///
/// `Primary`/`Alternate` correspond to alpha/alpha' on Alice's side and
/// beta/beta' on Bob's side; the wire labels are "a"/"a2" and "b"/"b2".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingLabel {
    Primary,
    Alternate,
}

impl SettingLabel {
    pub fn index(self) -> usize {
        match self {
            SettingLabel::Primary => 0,
            SettingLabel::Alternate => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => SettingLabel::Primary,
            _ => SettingLabel::Alternate,
        }
    }

    /// Wire label as used in NDJSON logs and config files.
    pub fn wire(self, station: Station) -> &'static str {
        match (station, self) {
            (Station::Alice, SettingLabel::Primary) => "a",
            (Station::Alice, SettingLabel::Alternate) => "a2",
            (Station::Bob, SettingLabel::Primary) => "b",
            (Station::Bob, SettingLabel::Alternate) => "b2",
        }
    }

    pub fn from_wire(s: &str) -> Option<(Station, SettingLabel)> {
        match s {
            "a" => Some((Station::Alice, SettingLabel::Primary)),
            "a2" => Some((Station::Alice, SettingLabel::Alternate)),
            "b" => Some((Station::Bob, SettingLabel::Primary)),
            "b2" => Some((Station::Bob, SettingLabel::Alternate)),
            _ => None,
        }
    }
}

/// One concrete analyser setting at one station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub station: Station,
    pub label: SettingLabel,
    pub angle: Angle,
}

/// A single detection outcome. `Plus` is detector "r" (+1), `Minus` is
/// detector "g" (-1). `NoDetect` never enters a correlation sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
    NoDetect,
}

impl Outcome {
    /// Arithmetic value, or `None` for `NoDetect`.
    pub fn value(self) -> Option<i8> {
        match self {
            Outcome::Plus => Some(1),
            Outcome::Minus => Some(-1),
            Outcome::NoDetect => None,
        }
    }

    pub fn detected(self) -> bool {
        self != Outcome::NoDetect
    }

    /// Detector label as used in NDJSON logs ("r"/"g").
    pub fn wire(self) -> Option<&'static str> {
        match self {
            Outcome::Plus => Some("r"),
            Outcome::Minus => Some("g"),
            Outcome::NoDetect => None,
        }
    }

    pub fn from_wire(s: &str) -> Option<Self> {
        match s {
            "r" => Some(Outcome::Plus),
            "g" => Some(Outcome::Minus),
            _ => None,
        }
    }
}

/// One of the four joint setting choices (alpha or alpha', beta or beta').
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SettingPair {
    pub alice: SettingLabel,
    pub bob: SettingLabel,
}

impl SettingPair {
    /// Canonical ordering: (a,b), (a,b'), (a',b), (a',b').
    pub const ALL: [SettingPair; 4] = [
        SettingPair { alice: SettingLabel::Primary, bob: SettingLabel::Primary },
        SettingPair { alice: SettingLabel::Primary, bob: SettingLabel::Alternate },
        SettingPair { alice: SettingLabel::Alternate, bob: SettingLabel::Primary },
        SettingPair { alice: SettingLabel::Alternate, bob: SettingLabel::Alternate },
    ];

    /// CHSH sign of this pair: +1 except for (alpha', beta').
    pub fn chsh_sign(self) -> f64 {
        if self.alice == SettingLabel::Alternate && self.bob == SettingLabel::Alternate {
            -1.0
        } else {
            1.0
        }
    }

    pub fn index(self) -> usize {
        self.alice.index() * 2 + self.bob.index()
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

impl std::fmt::Display for SettingPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {})",
            self.alice.wire(Station::Alice),
            self.bob.wire(Station::Bob)
        )
    }
}

/// The four correlations E(setting pair) needed to evaluate CHSH.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSet {
    e: [Option<f64>; 4],
}

impl CorrelationSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from values in canonical pair order.
    pub fn from_values(values: [f64; 4]) -> Self {
        CorrelationSet { e: values.map(Some) }
    }

    pub fn set(&mut self, pair: SettingPair, value: f64) {
        self.e[pair.index()] = Some(value);
    }

    pub fn get(&self, pair: SettingPair) -> Option<f64> {
        self.e[pair.index()]
    }
}

/// The CHSH quantity S = E(a,b) + E(a,b') + E(a',b) - E(a',b').
///
/// Errors if any of the four correlations is missing or outside [-1, 1].
pub fn chsh_s(corr: &CorrelationSet) -> Result<f64> {
    let mut s = 0.0;
    for pair in SettingPair::ALL {
        let e = corr.get(pair).ok_or(Error::MissingCorrelation(pair))?;
        if !(-1.0..=1.0).contains(&e) {
            return Err(Error::CorrelationOutOfRange { pair, value: e });
        }
        s += pair.chsh_sign() * e;
    }
    Ok(s)
}

/// Ideal quantum correlation cos 2(alpha - beta) for the chosen maximally
/// entangled polarization pair.
pub fn quantum_correlation(alice: Angle, bob: Angle) -> f64 {
    (2.0 * (alice.radians() - bob.radians())).cos()
}

/// The angle set (alpha, alpha', beta, beta') = (0, 45, 22.5, -22.5)
/// degrees, for which CHSH over `quantum_correlation` equals 2*sqrt(2).
/// The last angle is stored mod pi, i.e. 157.5 degrees.
pub fn chsh_optimal_settings() -> [Angle; 4] {
    [
        Angle::from_degrees(0.0),
        Angle::from_degrees(45.0),
        Angle::from_degrees(22.5),
        Angle::from_degrees(-22.5),
    ]
}

/// A reproducible counter-based random stream.
///
/// The generator is pinned to ChaCha8 (`rand_chacha`): identical
/// (seed, stream id, draw index) yields identical values on every
/// platform. Each simulation role (source, per-station setting choice,
/// per-station apparatus) draws from its own stream id, and each trial
/// jumps the stream to a fixed word offset, so trials can be sharded
/// across workers without changing any drawn value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

/// Stream ids per simulation role.
pub mod streams {
    pub const SOURCE: u64 = 0;
    pub const ALICE_SETTING: u64 = 1;
    pub const BOB_SETTING: u64 = 2;
    pub const ALICE_STATION: u64 = 3;
    pub const BOB_STATION: u64 = 4;
}

/// ChaCha word budget reserved per trial within a stream (128 u64 draws).
const TRIAL_WORD_BUDGET: u128 = 256;

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    /// Generator positioned at the start of the stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Generator positioned at the fixed offset reserved for one trial.
    pub fn trial_rng(&self, trial_id: u64) -> ChaCha8Rng {
        let mut rng = self.rng();
        rng.set_word_pos(trial_id as u128 * TRIAL_WORD_BUDGET);
        rng
    }
}
