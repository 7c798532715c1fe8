//! Noisy-OR cohort simulator with rule-based drug labels, plus a brute-force
//! statistics oracle for small matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::EventCohort;
use crate::error::{Error, Result};
use crate::sparse::BinaryMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    AnyOf,
    AllOf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugRule {
    pub events: Vec<usize>,
    pub kind: RuleKind,
}

impl DrugRule {
    pub fn eval(&self, present: &[bool]) -> bool {
        match self.kind {
            RuleKind::AnyOf => self.events.iter().any(|&j| present[j]),
            RuleKind::AllOf => self.events.iter().all(|&j| present[j]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub m: usize,
    pub c: usize,
    pub l: usize,
    /// Probability that each latent cause is active for a patient.
    pub cause_prevalence: Vec<f64>,
    /// Per cause, `(event, activation probability)` pairs.
    pub loading: Vec<Vec<(usize, f64)>>,
    /// Per event, probability of firing without any cause.
    pub background_rate: Vec<f64>,
    pub rules: Vec<DrugRule>,
    /// Symmetric label flip probability.
    pub label_noise: f64,
    pub seed: u64,
}

/// Knobs for [`SynthConfig::planted`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub n: usize,
    pub m: usize,
    pub c: usize,
    pub l: usize,
    /// Target mean marginal event rate.
    pub event_rate: f64,
    /// Leading events of each block that fire more often than the rest.
    pub hubs: usize,
    /// Marginal rate of a hub event.
    pub hub_rate: f64,
    /// Share of each event's rate contributed by its latent cause.
    pub cause_share: f64,
    /// Activation probability, given its active cause, of an event whose rate
    /// is `event_rate`; scales with the event's rate.
    pub activation: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            m: 40,
            c: 6,
            l: 5,
            event_rate: 0.005,
            hubs: 2,
            hub_rate: 0.015,
            cause_share: 0.6,
            activation: 0.15,
            label_noise: 0.05,
            seed: 0,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} = {p} is not a probability")))
    }
}

impl SynthConfig {
    /// Causes own contiguous event blocks of `m / l` events. The first `hubs`
    /// events of a block have rate `hub_rate`, the others share what is left
    /// of the block's budget, so the mean rate is exactly `event_rate`.
    /// Drug `k < l` fires on any hub of block `k`; each remaining drug fires
    /// on one hub position taken across all blocks.
    pub fn planted(spec: PlantedSpec) -> Result<Self> {
        let PlantedSpec { n, m, c, l, .. } = spec;
        if l == 0 || m == 0 || c == 0 || l > m {
            return Err(Error::InvalidConfig(format!(
                "planted cohort needs 1 <= l <= m and c >= 1, got m={m} c={c} l={l}"
            )));
        }
        check_prob("event_rate", spec.event_rate)?;
        check_prob("hub_rate", spec.hub_rate)?;
        check_prob("cause_share", spec.cause_share)?;
        check_prob("activation", spec.activation)?;
        if spec.activation == 0.0 && spec.cause_share > 0.0 {
            return Err(Error::InvalidConfig("activation must be positive".into()));
        }
        let block = m / l;
        let hubs = spec.hubs;
        if hubs == 0 || hubs > block {
            return Err(Error::InvalidConfig(format!("hubs must be in 1..={block}, got {hubs}")));
        }
        let budget = block as f64 * spec.event_rate;
        let hub_total = hubs as f64 * spec.hub_rate;
        let other_rate = if hubs == block {
            if (hub_total - budget).abs() > 1e-12 {
                return Err(Error::InvalidConfig(
                    "with every event a hub, hub_rate must equal event_rate".into(),
                ));
            }
            0.0
        } else {
            (budget - hub_total) / (block - hubs) as f64
        };
        if other_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "{hubs} hubs at rate {} exceed the block's rate budget {budget}",
                spec.hub_rate
            )));
        }

        let prevalence = if spec.cause_share == 0.0 {
            0.0
        } else {
            spec.cause_share * spec.event_rate / spec.activation
        };
        check_prob("derived cause prevalence", prevalence)?;
        let mut loading = vec![Vec::new(); l];
        let mut background = vec![spec.event_rate; m];
        for (cause, load) in loading.iter_mut().enumerate() {
            for i in 0..block {
                let j = cause * block + i;
                let rate = if i < hubs { spec.hub_rate } else { other_rate };
                let act = spec.activation * rate / spec.event_rate;
                check_prob("derived activation", act)?;
                let cause_part = prevalence * act;
                if spec.cause_share > 0.0 {
                    load.push((j, act));
                }
                // 1 - (1 - b)(1 - p a) = rate
                background[j] = 1.0 - (1.0 - rate) / (1.0 - cause_part);
            }
        }
        let rules = (0..c)
            .map(|k| DrugRule {
                events: if k < l {
                    (k * block..k * block + hubs).collect()
                } else {
                    let pos = (k - l) % hubs;
                    (0..l).map(|b| b * block + pos).collect()
                },
                kind: RuleKind::AnyOf,
            })
            .collect();
        let config = Self {
            n,
            m,
            c,
            l,
            cause_prevalence: vec![prevalence; l],
            loading,
            background_rate: background,
            rules,
            label_noise: spec.label_noise,
            seed: spec.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.c == 0 || self.l == 0 {
            return Err(Error::InvalidConfig("n, m, c and l must all be at least 1".into()));
        }
        if self.cause_prevalence.len() != self.l || self.loading.len() != self.l {
            return Err(Error::InvalidConfig(format!(
                "expected {} cause prevalences and loadings",
                self.l
            )));
        }
        if self.background_rate.len() != self.m {
            return Err(Error::InvalidConfig(format!(
                "expected {} background rates, got {}",
                self.m,
                self.background_rate.len()
            )));
        }
        if self.rules.len() != self.c {
            return Err(Error::InvalidConfig(format!(
                "expected {} drug rules, got {}",
                self.c,
                self.rules.len()
            )));
        }
        for &p in &self.cause_prevalence {
            check_prob("cause_prevalence", p)?;
        }
        for &p in &self.background_rate {
            check_prob("background_rate", p)?;
        }
        check_prob("label_noise", self.label_noise)?;
        for load in &self.loading {
            for &(j, a) in load {
                check_prob("activation", a)?;
                if j >= self.m {
                    return Err(Error::InvalidConfig(format!("loading references event {j}")));
                }
            }
        }
        for (k, rule) in self.rules.iter().enumerate() {
            if rule.events.iter().any(|&j| j >= self.m) {
                return Err(Error::InvalidConfig(format!(
                    "rule for drug {k} references an event outside 0..{}",
                    self.m
                )));
            }
        }
        Ok(())
    }

    /// Analytic marginal rate of every event.
    pub fn expected_event_rates(&self) -> Vec<f64> {
        let mut silent = self.background_rate.iter().map(|b| 1.0 - b).collect::<Vec<_>>();
        for (load, &p) in self.loading.iter().zip(&self.cause_prevalence) {
            for &(j, a) in load {
                silent[j] *= 1.0 - p * a;
            }
        }
        silent.into_iter().map(|s| 1.0 - s).collect()
    }

    pub fn expected_sparsity(&self) -> f64 {
        1.0 - self.expected_event_rates().iter().sum::<f64>() / self.m as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Active latent causes per patient.
    pub causes: Vec<Vec<u32>>,
    /// Rule labels before flip noise, dense per patient.
    pub clean_labels: Vec<Vec<u8>>,
}

struct Patient {
    causes: Vec<u32>,
    events: Vec<u32>,
    clean: Vec<u8>,
    noisy: Vec<u32>,
}

fn draw_patient(config: &SynthConfig, row: usize) -> Patient {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(row as u64);
    let mut present = vec![false; config.m];
    let mut causes = Vec::new();
    for (l, &p) in config.cause_prevalence.iter().enumerate() {
        if rng.random::<f64>() < p {
            causes.push(l as u32);
        }
    }
    for &l in &causes {
        for &(j, a) in &config.loading[l as usize] {
            if rng.random::<f64>() < a {
                present[j] = true;
            }
        }
    }
    for (j, &b) in config.background_rate.iter().enumerate() {
        if rng.random::<f64>() < b {
            present[j] = true;
        }
    }
    let clean: Vec<u8> = config.rules.iter().map(|r| r.eval(&present) as u8).collect();
    let noisy = clean
        .iter()
        .enumerate()
        .filter_map(|(k, &y)| {
            let flip = rng.random::<f64>() < config.label_noise;
            ((y == 1) != flip).then_some(k as u32)
        })
        .collect();
    Patient {
        causes,
        events: (0..config.m as u32).filter(|&j| present[j as usize]).collect(),
        clean,
        noisy,
    }
}

/// Each patient draws from its own counter-keyed stream, so the output does
/// not depend on the thread count.
pub fn generate(config: &SynthConfig) -> Result<(EventCohort, GroundTruth)> {
    config.validate()?;
    let patients: Vec<Patient> = (0..config.n)
        .into_par_iter()
        .map(|row| draw_patient(config, row))
        .collect();
    let mut events = Vec::with_capacity(config.n);
    let mut labels = Vec::with_capacity(config.n);
    let mut truth = GroundTruth {
        causes: Vec::with_capacity(config.n),
        clean_labels: Vec::with_capacity(config.n),
    };
    for p in patients {
        events.push(p.events);
        labels.push(p.noisy);
        truth.causes.push(p.causes);
        truth.clean_labels.push(p.clean);
    }
    let cohort = EventCohort::unnamed(
        BinaryMatrix::from_rows(config.m, events)?,
        BinaryMatrix::from_rows(config.c, labels)?,
    )?;
    Ok((cohort, truth))
}

/// Dense, loop-based statistics used as a reference for the sparse kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceStats {
    pub n_rows: u64,
    pub counts: Vec<u64>,
    pub rho: Vec<f64>,
    /// Symmetric `M x M` co-occurrence counts; the diagonal holds `counts`.
    pub joint: Vec<Vec<u64>>,
    /// `conditional[i][j] = P(i | j)`, `None` when event `j` never occurs or `i == j`.
    pub conditional: Vec<Vec<Option<f64>>>,
}

pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

pub fn brute_force_stats(events: &BinaryMatrix) -> Result<BruteForceStats> {
    let n = events.n_rows();
    let m = events.n_cols();
    let work = n as u64 * (m as u64).pow(2);
    if work > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(work, BRUTE_FORCE_LIMIT));
    }
    if n == 0 {
        return Err(Error::NoRows);
    }
    let dense: Vec<Vec<u8>> = (0..n).map(|r| events.dense_row(r)).collect();
    let mut joint = vec![vec![0u64; m]; m];
    for row in &dense {
        for i in 0..m {
            for j in 0..m {
                if row[i] == 1 && row[j] == 1 {
                    joint[i][j] += 1;
                }
            }
        }
    }
    let counts: Vec<u64> = (0..m).map(|j| joint[j][j]).collect();
    let rho = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let conditional = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    (i != j && counts[j] > 0).then(|| joint[i][j] as f64 / counts[j] as f64)
                })
                .collect()
        })
        .collect();
    Ok(BruteForceStats {
        n_rows: n as u64,
        counts,
        rho,
        joint,
        conditional,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::sparsity;

    #[test]
    fn conditional_fixture() {
        // A = [1,1,0,0], B = [1,0,1,0]
        let m = BinaryMatrix::from_dense(2, &[[1u8, 1], [1, 0], [0, 1], [0, 0]]).unwrap();
        let s = brute_force_stats(&m).unwrap();
        assert_eq!(s.conditional[0][1], Some(0.5));
        assert_eq!(s.joint[0][1], 1);

        let same = BinaryMatrix::from_dense(2, &[[1u8, 1], [0, 0], [1, 1]]).unwrap();
        let s = brute_force_stats(&same).unwrap();
        assert_eq!((s.conditional[0][1], s.conditional[1][0]), (Some(1.0), Some(1.0)));

        let disjoint = BinaryMatrix::from_dense(2, &[[1u8, 0], [0, 1]]).unwrap();
        assert_eq!(brute_force_stats(&disjoint).unwrap().joint[0][1], 0);
    }

    #[test]
    fn size_guard() {
        let big = BinaryMatrix::zeros(10_001, 32);
        assert!(matches!(brute_force_stats(&big), Err(Error::TooLarge(..))));
    }

    #[test]
    fn planted_rates_and_determinism() {
        let config = SynthConfig::planted(PlantedSpec::default()).unwrap();
        let rates = config.expected_event_rates();
        for (j, r) in rates.iter().enumerate() {
            let want = if j % 8 < 2 { 0.015 } else { 0.04 / 6.0 - 0.03 / 6.0 };
            assert!((r - want).abs() < 1e-12, "event {j}: {r}");
        }
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        assert!((mean - 0.005).abs() < 1e-12);
        assert!((config.expected_sparsity() - 0.995).abs() < 1e-12);
        assert_eq!(config.rules[0].events, vec![0, 1]);
        assert_eq!(config.rules[5].events, vec![0, 8, 16, 24, 32]);
        let (a, ta) = generate(&config).unwrap();
        let (b, tb) = generate(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let s = sparsity(&a.events).unwrap();
        assert!((0.990..=0.999).contains(&s), "sparsity {s}");
    }

    #[test]
    fn noiseless_any_of_rule() {
        let mut config = SynthConfig::planted(PlantedSpec {
            n: 300,
            label_noise: 0.0,
            event_rate: 0.05,
            hub_rate: 0.1,
            ..PlantedSpec::default()
        })
        .unwrap();
        config.seed = 3;
        let (cohort, truth) = generate(&config).unwrap();
        for r in 0..cohort.n_patients() {
            let row = cohort.events.dense_row(r);
            for (k, rule) in config.rules.iter().enumerate() {
                let expected = rule.events.iter().any(|&j| row[j] == 1) as u8;
                assert_eq!(cohort.labels.get(r, k) as u8, expected);
                assert_eq!(truth.clean_labels[r][k], expected);
            }
        }
    }

    #[test]
    fn degenerate_config_is_empty() {
        let mut config = SynthConfig::planted(PlantedSpec {
            n: 50,
            ..PlantedSpec::default()
        })
        .unwrap();
        config.cause_prevalence.fill(0.0);
        config.background_rate.fill(0.0);
        let (cohort, _) = generate(&config).unwrap();
        assert_eq!(sparsity(&cohort.events).unwrap(), 1.0);
    }

    #[test]
    fn invalid_configs() {
        let mut config = SynthConfig::planted(PlantedSpec::default()).unwrap();
        config.rules[0].events.push(40);
        assert!(matches!(config.validate(), Err(Error::InvalidConfig(_))));
        let mut config = SynthConfig::planted(PlantedSpec::default()).unwrap();
        config.label_noise = 1.5;
        assert!(generate(&config).is_err());
    }
}
