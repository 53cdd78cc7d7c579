//! Class-conditional Gaussian patches with chart-style labels.
//!
//! A patch is laid out in horizontal bands: the primary stage, an optional
//! younger secondary stage and open water, each band holding a share of the
//! rows equal to its midpoint concentration. The band stack is rotated by a
//! random row offset.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PatchSample, CHANNELS};
use crate::error::{Error, Result};
use crate::label_codec::{parse_concentration_code, EggCode, IceClass, NUM_CLASSES};
use crate::net::Tensor;
use crate::util::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedCode {
    pub ca: i64,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPair {
    pub ca: i64,
    pub cb: i64,
    pub weight: f64,
}

/// Concentration codes drawn for single-stage and two-stage polygons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationMix {
    pub single: Vec<WeightedCode>,
    pub pairs: Vec<WeightedPair>,
}

impl Default for ConcentrationMix {
    fn default() -> Self {
        let single = [(99, 0.5), (89, 0.3), (79, 0.2)];
        let pairs = [(79, 13, 0.4), (68, 13, 0.3), (57, 23, 0.3)];
        Self {
            single: single.map(|(ca, weight)| WeightedCode { ca, weight }).to_vec(),
            pairs: pairs.map(|(ca, cb, weight)| WeightedPair { ca, cb, weight }).to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Per-class channel means, canonical class order.
    pub means: [[f64; CHANNELS]; NUM_CLASSES],
    pub stds: [[f64; CHANNELS]; NUM_CLASSES],
    /// Primary-class frequencies.
    pub frequencies: [f64; NUM_CLASSES],
    /// Probability that an ice polygon older than new ice carries a secondary stage.
    pub two_type_fraction: f64,
    #[serde(default)]
    pub concentrations: ConcentrationMix,
    pub patch_size: usize,
    pub samples: usize,
    /// Border distances are drawn uniformly from this range, in meters.
    #[serde(default = "default_border_range")]
    pub border_distance_m: [f64; 2],
}

fn default_border_range() -> [f64; 2] {
    [2000.0, 20000.0]
}

pub const DESK_FREQUENCIES: [f64; NUM_CLASSES] = [0.40, 0.05, 0.10, 0.08, 0.25, 0.12];

impl SyntheticSpec {
    /// 6,000 imbalanced 16x16 patches.
    pub fn desk() -> Self {
        Self {
            means: [
                [1.5, 1.5, 1.5],
                [1.5, -1.5, -1.5],
                [-1.5, 1.5, -1.5],
                [-1.5, -1.5, 1.5],
                [0.0, 0.0, -2.5],
                [0.0, 0.0, 0.0],
            ],
            stds: [[0.6; CHANNELS]; NUM_CLASSES],
            frequencies: DESK_FREQUENCIES,
            two_type_fraction: 0.3,
            concentrations: ConcentrationMix::default(),
            patch_size: 16,
            samples: 6000,
            border_distance_m: default_border_range(),
        }
    }

    /// Desk textures at the full patch size and sample count.
    pub fn paper() -> Self {
        Self {
            patch_size: 50,
            samples: 127_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.frequencies.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
            return bad(format!("frequencies {:?} must be nonnegative", self.frequencies));
        }
        if (self.frequencies.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("frequencies {:?} do not sum to 1", self.frequencies));
        }
        if self.stds.iter().flatten().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("standard deviations must be positive".into());
        }
        if self.means.iter().flatten().any(|m| !m.is_finite()) {
            return bad("means must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.two_type_fraction) {
            return bad(format!("two_type_fraction {}", self.two_type_fraction));
        }
        if self.patch_size == 0 {
            return bad("patch size must be positive".into());
        }
        let [lo, hi] = self.border_distance_m;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("border distance range {lo}..{hi}"));
        }
        let mix = &self.concentrations;
        if mix.single.is_empty() {
            return bad("no single-stage concentration codes".into());
        }
        if self.two_type_fraction > 0.0 && mix.pairs.is_empty() {
            return bad("two-stage polygons requested without concentration pairs".into());
        }
        for w in mix.single.iter().map(|c| c.weight).chain(mix.pairs.iter().map(|p| p.weight)) {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("weight {w}"));
            }
        }
        for c in &mix.single {
            parse_concentration_code(c.ca).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        }
        for p in &mix.pairs {
            let (a, b) = pair_midpoints(p)?;
            if a <= b {
                return bad(format!("pair {}/{}: CA must exceed CB", p.ca, p.cb));
            }
            if a + b > 1.0 + 1e-9 {
                return bad(format!("pair {}/{} exceeds full cover", p.ca, p.cb));
            }
        }
        Ok(())
    }
}

fn pair_midpoints(p: &WeightedPair) -> Result<(f64, f64)> {
    let parse = |code| {
        parse_concentration_code(code)
            .map(|r| r.midpoint())
            .map_err(|e| Error::InvalidSpec(e.to_string()))
    };
    Ok((parse(p.ca)?, parse(p.cb)?))
}

fn weighted<I: IntoIterator<Item = f64>>(weights: I) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| Error::InvalidSpec(format!("weights: {e}")))
}

struct Samplers {
    class: WeightedIndex<f64>,
    single: WeightedIndex<f64>,
    pairs: Option<WeightedIndex<f64>>,
}

/// Draws `spec.samples` patches. Sample `i` uses its own RNG stream derived
/// from `(seed, i)`, so the output does not depend on thread scheduling.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<PatchSample>> {
    spec.validate()?;
    let mix = &spec.concentrations;
    let samplers = Samplers {
        class: weighted(spec.frequencies)?,
        single: weighted(mix.single.iter().map(|c| c.weight))?,
        pairs: if mix.pairs.is_empty() {
            None
        } else {
            Some(weighted(mix.pairs.iter().map(|p| p.weight))?)
        },
    };
    (0..spec.samples)
        .into_par_iter()
        .map(|i| draw_sample(spec, &samplers, seed, i))
        .collect()
}

fn draw_sample(spec: &SyntheticSpec, s: &Samplers, seed: u64, index: usize) -> Result<PatchSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, index as u64]));
    let primary = IceClass::from_index(s.class.sample(&mut rng))?;
    let (egg, bands) = match primary {
        IceClass::Water => (EggCode::ice_free(), vec![(primary, 1.0)]),
        _ => {
            let sa = primary.sod_code().expect("ice classes carry a code");
            let older_than_new = primary.index() > 0;
            let two = older_than_new && spec.two_type_fraction > 0.0 && rng.random_bool(spec.two_type_fraction);
            match (&s.pairs, two) {
                (Some(pairs), true) => {
                    let pair = spec.concentrations.pairs[pairs.sample(&mut rng)];
                    let secondary = IceClass::from_index(rng.random_range(0..primary.index()))?;
                    let sb = secondary.sod_code().expect("ice classes carry a code");
                    let (a, b) = pair_midpoints(&pair)?;
                    (
                        EggCode::two_types(sa, pair.ca, sb, pair.cb),
                        vec![(primary, a), (secondary, b), (IceClass::Water, 1.0 - a - b)],
                    )
                }
                _ => {
                    let ca = spec.concentrations.single[s.single.sample(&mut rng)].ca;
                    let a = parse_concentration_code(ca)?.midpoint();
                    (EggCode::single(sa, Some(ca)), vec![(primary, a), (IceClass::Water, 1.0 - a)])
                }
            }
        }
    };
    let p = spec.patch_size;
    let rows = band_rows(&bands, p);
    let offset = rng.random_range(0..p);
    let mut pixels = vec![0.0; CHANNELS * p * p];
    for (r, class) in rows.iter().enumerate() {
        let row = (r + offset) % p;
        let c = class.index();
        for ch in 0..CHANNELS {
            let base = (ch * p + row) * p;
            for v in &mut pixels[base..base + p] {
                let z: f64 = rng.sample(StandardNormal);
                *v = spec.means[c][ch] + spec.stds[c][ch] * z;
            }
        }
    }
    let [lo, hi] = spec.border_distance_m;
    let border = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let tensor = Tensor::new(vec![CHANNELS, p, p], pixels)?;
    PatchSample::new(tensor, egg, index as i64, border)
}

/// Class of each row. Non-primary bands get `round(share * p)` rows; the
/// primary band takes the rest.
fn band_rows(bands: &[(IceClass, f64)], p: usize) -> Vec<IceClass> {
    let mut rows = Vec::with_capacity(p);
    let mut taken = 0;
    for &(class, share) in &bands[1..] {
        let k = ((share.max(0.0) * p as f64).round() as usize).min(p - taken);
        rows.extend(std::iter::repeat_n(class, k));
        taken += k;
    }
    let mut out = vec![bands[0].0; p - taken];
    out.extend(rows);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label_codec::LabelKind;

    fn small(n: usize) -> SyntheticSpec {
        SyntheticSpec {
            samples: n,
            patch_size: 8,
            ..SyntheticSpec::desk()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = small(50);
        let a = generate_synthetic(&spec, 3).unwrap();
        assert_eq!(a, generate_synthetic(&spec, 3).unwrap());
        assert_ne!(a, generate_synthetic(&spec, 4).unwrap());
        // Sample i does not depend on how many samples follow it.
        let b = generate_synthetic(&small(20), 3).unwrap();
        assert_eq!(&a[..20], &b[..]);
    }

    #[test]
    fn single_stage_only() {
        let spec = SyntheticSpec {
            two_type_fraction: 0.0,
            ..small(300)
        };
        for s in generate_synthetic(&spec, 0).unwrap() {
            assert_eq!(s.labels.confidence_partial.support().count(), 1);
        }
    }

    #[test]
    fn all_new_ice() {
        let spec = SyntheticSpec {
            frequencies: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            ..small(100)
        };
        let samples = generate_synthetic(&spec, 1).unwrap();
        assert!(samples.iter().all(|s| s.labels.true_class() == 0));
    }

    #[test]
    fn class_frequencies_within_binomial_bound() {
        let spec = SyntheticSpec {
            patch_size: 1,
            ..small(10_000)
        };
        let samples = generate_synthetic(&spec, 9).unwrap();
        let counts = super::super::class_counts(&samples, LabelKind::OneHot).unwrap();
        let n = samples.len() as f64;
        for (c, f) in counts.iter().zip(spec.frequencies) {
            let sd = (n * f * (1.0 - f)).sqrt();
            assert!((*c as f64 - n * f).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn channel_means_converge() {
        let spec = SyntheticSpec {
            two_type_fraction: 0.0,
            concentrations: ConcentrationMix {
                single: vec![WeightedCode { ca: 99, weight: 1.0 }],
                pairs: vec![],
            },
            patch_size: 4,
            ..small(1200)
        };
        let samples = generate_synthetic(&spec, 2).unwrap();
        // 99 covers 90%: with 4 rows that rounds to no water row.
        let p = spec.patch_size;
        for class in 0..NUM_CLASSES {
            let members: Vec<_> = samples.iter().filter(|s| s.labels.true_class() == class).collect();
            let m = (members.len() * p * p) as f64;
            for ch in 0..CHANNELS {
                let total: f64 = members
                    .iter()
                    .flat_map(|s| &s.pixels.data()[ch * p * p..(ch + 1) * p * p])
                    .sum();
                let bound = 3.0 * spec.stds[class][ch] / m.sqrt();
                assert!((total / m - spec.means[class][ch]).abs() <= bound);
            }
        }
    }

    #[test]
    fn oldest_stage_dominates() {
        for s in generate_synthetic(&small(500), 5).unwrap() {
            assert!(s.ca_fraction > 0.5);
            assert_eq!(s.labels.one_hot.argmax(), s.labels.confidence_partial.argmax());
            assert!((2000.0..=20000.0).contains(&s.border_distance));
        }
    }

    #[test]
    fn mixed_patch_rows() {
        assert_eq!(
            band_rows(&[(IceClass::FirstYearIce, 0.75), (IceClass::YoungIce, 0.25), (IceClass::Water, 0.0)], 8),
            [[IceClass::FirstYearIce; 6].as_slice(), &[IceClass::YoungIce; 2]].concat()
        );
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(1);
        s.frequencies[0] = 0.5;
        assert!(matches!(generate_synthetic(&s, 0), Err(Error::InvalidSpec(_))));
        let mut s = small(1);
        s.stds[2][1] = 0.0;
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        let mut s = small(1);
        s.concentrations.pairs = vec![WeightedPair { ca: 24, cb: 79, weight: 1.0 }];
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        let mut s = small(1);
        s.concentrations.single = vec![WeightedCode { ca: 97, weight: 1.0 }];
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SyntheticSpec::desk();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<SyntheticSpec>(&json).unwrap(), spec);
    }
}
