//! Pair sources: the quantum reference sampler and the family of local
//! hidden variable (LHV) sources.
//!
//! Every [`LhvSource`] factorizes by construction: the response rule for
//! one side reads only the hidden sample and that side's own setting. The
//! quantum reference sampler is deliberately nonlocal (two-stage
//! conditional sampling) and is never presented as an LHV model. The
//! [`SettingDependentSource`] breaks setting-independence of the hidden
//! variable distribution on purpose and is only usable in scenarios
//! labeled as locality-loophole demonstrations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::core::{Angle, Outcome, Setting, SettingLabel, Station};
use crate::{Error, Result};

/// The per-trial hidden state lambda emitted by a source.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSample {
    pub trial_id: u64,
    pub payload: HiddenPayload,
}

/// Model-specific lambda payload. Only the local character of lambda
/// matters, so each model keeps its own natural encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum HiddenPayload {
    /// A hidden analyser orientation theta (detection-loophole model).
    Analyser(Angle),
    /// An index into a list of deterministic strategies (mixtures).
    Strategy(usize),
    /// Predetermined outcomes for both sides (locality adversary and the
    /// always-detect branch of the guess mixture).
    Predetermined { alice: Outcome, bob: Outcome },
    /// Guessed settings plus the fixed outcome table of the guess-mixture
    /// adversary: a side detects only if its actual setting matches its
    /// guess.
    Guess {
        alice_guess: SettingLabel,
        bob_guess: SettingLabel,
    },
}

/// Per-(lambda, setting) response probabilities of one side.
///
/// The deficit `1 - p_plus - p_minus` is the no-detect probability; a
/// strictly positive deficit on a positive-measure set of lambda is
/// exactly what it means for a model to exploit the detection loophole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalResponse {
    pub p_plus: f64,
    pub p_minus: f64,
}

impl LocalResponse {
    pub fn plus() -> Self {
        LocalResponse { p_plus: 1.0, p_minus: 0.0 }
    }

    pub fn minus() -> Self {
        LocalResponse { p_plus: 0.0, p_minus: 1.0 }
    }

    pub fn no_detect() -> Self {
        LocalResponse { p_plus: 0.0, p_minus: 0.0 }
    }

    pub fn deterministic(outcome: Outcome) -> Self {
        match outcome {
            Outcome::Plus => Self::plus(),
            Outcome::Minus => Self::minus(),
            Outcome::NoDetect => Self::no_detect(),
        }
    }

    pub fn p_no_detect(&self) -> f64 {
        1.0 - self.p_plus - self.p_minus
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.p_plus >= 0.0
            && self.p_minus >= 0.0
            && self.p_plus + self.p_minus <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidResponse { p_plus: self.p_plus, p_minus: self.p_minus })
        }
    }
}

/// A deterministic local response map: one outcome (possibly `NoDetect`)
/// per setting label per side. These are the extreme points of the LHV
/// polytope with non-detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicStrategy {
    /// Alice's outcome at [Primary, Alternate].
    pub alice: [Outcome; 2],
    /// Bob's outcome at [Primary, Alternate].
    pub bob: [Outcome; 2],
}

impl DeterministicStrategy {
    pub fn respond(&self, station: Station, label: SettingLabel) -> Outcome {
        match station {
            Station::Alice => self.alice[label.index()],
            Station::Bob => self.bob[label.index()],
        }
    }

    /// True if both sides detect at every setting.
    pub fn full_detection(&self) -> bool {
        self.alice.iter().chain(self.bob.iter()).all(|o| o.detected())
    }
}

/// sign(cos 2(x - theta)) with the sign(0) = +1 tie-break.
fn polarizer_sign(x: Angle, theta: Angle) -> Outcome {
    if (2.0 * (x.radians() - theta.radians())).cos() >= 0.0 {
        Outcome::Plus
    } else {
        Outcome::Minus
    }
}

/// A local hidden variable source: a lambda sampler plus one response
/// rule per side, neither of which ever reads the other side's setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LhvSource {
    /// The stand-in detection-loophole model: lambda is a hidden analyser
    /// angle theta, uniform on [0, pi). Alice always detects with outcome
    /// sign(cos 2(alpha - theta)); Bob detects with probability
    /// |cos 2(beta - theta)| and, when detected, outputs
    /// sign(cos 2(beta - theta)). Conditional on coincidence this
    /// reproduces the quantum correlation cos 2(alpha - beta) exactly,
    /// with Bob's per-setting efficiency 2/pi.
    GgAdversary,
    /// With probability `w` the source guesses one setting per side
    /// (uniformly) and the particle is lost whenever the actual setting
    /// differs from the guess; with probability `1 - w` a deterministic
    /// always-detect strategy fires. Per-side efficiency is 1 - w/2. The
    /// matched-guess outcome table is fixed to (+1,+1,+1,-1), which
    /// maximizes the CHSH combination.
    GuessMixture { w: f64 },
    /// A mixture over deterministic strategies; lambda is the strategy
    /// index drawn by weight.
    Mixture {
        strategies: Vec<DeterministicStrategy>,
        weights: Vec<f64>,
    },
}

impl LhvSource {
    /// Draw one hidden sample for a trial.
    pub fn sample(&self, trial_id: u64, rng: &mut impl Rng) -> HiddenSample {
        let payload = match self {
            LhvSource::GgAdversary => {
                HiddenPayload::Analyser(Angle::from_radians(
                    rng.random_range(0.0..std::f64::consts::PI),
                ))
            }
            LhvSource::GuessMixture { w } => {
                if rng.random::<f64>() < *w {
                    HiddenPayload::Guess {
                        alice_guess: SettingLabel::from_index(rng.random_range(0..2usize)),
                        bob_guess: SettingLabel::from_index(rng.random_range(0..2usize)),
                    }
                } else {
                    HiddenPayload::Predetermined { alice: Outcome::Plus, bob: Outcome::Plus }
                }
            }
            LhvSource::Mixture { weights, .. } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut idx = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        idx = i;
                        break;
                    }
                }
                HiddenPayload::Strategy(idx)
            }
        };
        HiddenSample { trial_id, payload }
    }

    fn respond(&self, station: Station, lambda: &HiddenSample, setting: &Setting) -> LocalResponse {
        match (&lambda.payload, self) {
            (HiddenPayload::Analyser(theta), LhvSource::GgAdversary) => {
                let sign = polarizer_sign(setting.angle, *theta);
                match station {
                    Station::Alice => LocalResponse::deterministic(sign),
                    Station::Bob => {
                        let p = (2.0 * (setting.angle.radians() - theta.radians())).cos().abs();
                        match sign {
                            Outcome::Plus => LocalResponse { p_plus: p, p_minus: 0.0 },
                            _ => LocalResponse { p_plus: 0.0, p_minus: p },
                        }
                    }
                }
            }
            (HiddenPayload::Guess { alice_guess, bob_guess }, LhvSource::GuessMixture { .. }) => {
                let (guess, out) = match station {
                    Station::Alice => (*alice_guess, Outcome::Plus),
                    Station::Bob => {
                        // Outcome table (+1,+1,+1,-1) on matched guesses.
                        let out = if *alice_guess == SettingLabel::Alternate
                            && *bob_guess == SettingLabel::Alternate
                        {
                            Outcome::Minus
                        } else {
                            Outcome::Plus
                        };
                        (*bob_guess, out)
                    }
                };
                if setting.label == guess {
                    LocalResponse::deterministic(out)
                } else {
                    LocalResponse::no_detect()
                }
            }
            (HiddenPayload::Predetermined { alice, bob }, _) => {
                LocalResponse::deterministic(match station {
                    Station::Alice => *alice,
                    Station::Bob => *bob,
                })
            }
            (HiddenPayload::Strategy(idx), LhvSource::Mixture { strategies, .. }) => {
                LocalResponse::deterministic(strategies[*idx].respond(station, setting.label))
            }
            _ => unreachable!("hidden sample does not belong to this source"),
        }
    }

    /// Alice's response rule; reads only (lambda, Alice's setting).
    pub fn alice_response(&self, lambda: &HiddenSample, setting: &Setting) -> LocalResponse {
        self.respond(Station::Alice, lambda, setting)
    }

    /// Bob's response rule; reads only (lambda, Bob's setting).
    pub fn bob_response(&self, lambda: &HiddenSample, setting: &Setting) -> LocalResponse {
        self.respond(Station::Bob, lambda, setting)
    }
}

/// Sample an outcome from a local response rule.
pub fn lhv_respond(response: &LocalResponse, rng: &mut impl Rng) -> Result<Outcome> {
    response.validate()?;
    // Always exactly one draw, so the per-trial draw budget is constant.
    let u: f64 = rng.random();
    Ok(if u < response.p_plus {
        Outcome::Plus
    } else if u < response.p_plus + response.p_minus {
        Outcome::Minus
    } else {
        Outcome::NoDetect
    })
}

/// The stand-in detection-loophole adversary (see [`LhvSource::GgAdversary`]).
pub fn make_gg_adversary() -> LhvSource {
    LhvSource::GgAdversary
}

/// The guess-mixture adversary (see [`LhvSource::GuessMixture`]).
pub fn make_guess_mixture_adversary(w: f64) -> Result<LhvSource> {
    if (0.0..=1.0).contains(&w) {
        Ok(LhvSource::GuessMixture { w })
    } else {
        Err(Error::Config(format!("guess-mixture weight {w} outside [0, 1]")))
    }
}

/// A source whose hidden variable distribution depends on both settings.
///
/// Lambda is a predetermined outcome pair sampled from the quantum joint
/// law for the actual settings; both responses are deterministic with
/// detection probability 1 on both sides. Explicitly flagged as violating
/// setting-independence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SettingDependentSource {
    LocalityAdversary,
}

impl SettingDependentSource {
    /// The sampler deliberately receives both settings.
    pub fn sample(
        &self,
        trial_id: u64,
        alice: &Setting,
        bob: &Setting,
        rng: &mut impl Rng,
    ) -> HiddenSample {
        let (a, b) = quantum_sample_joint(alice, bob, rng);
        HiddenSample { trial_id, payload: HiddenPayload::Predetermined { alice: a, bob: b } }
    }

    pub fn alice_response(&self, lambda: &HiddenSample, _setting: &Setting) -> LocalResponse {
        match &lambda.payload {
            HiddenPayload::Predetermined { alice, .. } => LocalResponse::deterministic(*alice),
            _ => unreachable!("hidden sample does not belong to this source"),
        }
    }

    pub fn bob_response(&self, lambda: &HiddenSample, _setting: &Setting) -> LocalResponse {
        match &lambda.payload {
            HiddenPayload::Predetermined { bob, .. } => LocalResponse::deterministic(*bob),
            _ => unreachable!("hidden sample does not belong to this source"),
        }
    }
}

/// The locality-loophole adversary.
pub fn make_locality_adversary() -> SettingDependentSource {
    SettingDependentSource::LocalityAdversary
}

/// Nonlocal reference sampler for the quantum prediction.
///
/// Joint law P(a,b) = (1 + ab cos 2(alpha - beta)) / 4: a is uniform,
/// then b = a with probability (1 + cos 2(alpha - beta)) / 2. Marginals
/// are uniform. This is NOT an LHV source.
pub fn quantum_sample_joint(
    alice: &Setting,
    bob: &Setting,
    rng: &mut impl Rng,
) -> (Outcome, Outcome) {
    let c = crate::core::quantum_correlation(alice.angle, bob.angle);
    let a = if rng.random::<f64>() < 0.5 { Outcome::Plus } else { Outcome::Minus };
    let same = rng.random::<f64>() < (1.0 + c) / 2.0;
    let b = if same {
        a
    } else {
        match a {
            Outcome::Plus => Outcome::Minus,
            _ => Outcome::Plus,
        }
    };
    (a, b)
}

/// A random mixture over the 16 full-detection deterministic strategies,
/// with Dirichlet(1) weights. Property-testing generator for the Bell
/// bound.
pub fn random_lhv_strategy(rng: &mut impl Rng) -> LhvSource {
    let outcomes = [Outcome::Plus, Outcome::Minus];
    let mut strategies = Vec::with_capacity(16);
    for a0 in outcomes {
        for a1 in outcomes {
            for b0 in outcomes {
                for b1 in outcomes {
                    strategies.push(DeterministicStrategy { alice: [a0, a1], bob: [b0, b1] });
                }
            }
        }
    }
    let mut weights: Vec<f64> = (0..16).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    LhvSource::Mixture { strategies, weights }
}
