//! Egg-code parsing and the three polygon label encodings.
//!
//! An ice-chart polygon carries up to two stages of development (`SA`, the
//! oldest, and `SB`, the second oldest) together with coded partial
//! concentration ranges (`CA`, `CB`). From one [`EggCode`] three label
//! vectors are derived over the canonical class order
//! `[NI, N, YI, FYI, OI, W]`:
//!
//! * one-hot: 1 at the oldest stage,
//! * binary partial: 1 at every stage present,
//! * confidence partial: the midpoint concentration of every stage present,
//!   with any surplus above 100% removed evenly from the candidates.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::fmt_sig;

pub const NUM_CLASSES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IceClass {
    NewIce,
    Nilas,
    YoungIce,
    FirstYearIce,
    OldIce,
    Water,
}

impl IceClass {
    /// All classes in canonical index order.
    pub const ALL: [IceClass; NUM_CLASSES] = [
        IceClass::NewIce,
        IceClass::Nilas,
        IceClass::YoungIce,
        IceClass::FirstYearIce,
        IceClass::OldIce,
        IceClass::Water,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL.get(index).copied().ok_or(Error::IndexOutOfRange {
            index,
            classes: NUM_CLASSES,
        })
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            IceClass::NewIce => "NI",
            IceClass::Nilas => "N",
            IceClass::YoungIce => "YI",
            IceClass::FirstYearIce => "FYI",
            IceClass::OldIce => "OI",
            IceClass::Water => "W",
        }
    }

    /// Chart code for the stage of development. Water has none.
    pub fn sod_code(self) -> Option<i64> {
        match self {
            IceClass::NewIce => Some(81),
            IceClass::Nilas => Some(82),
            IceClass::YoungIce => Some(83),
            IceClass::FirstYearIce => Some(86),
            IceClass::OldIce => Some(95),
            IceClass::Water => None,
        }
    }
}

impl fmt::Display for IceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

pub fn sod_code_to_class(code: i64) -> Result<IceClass> {
    match code {
        81 => Ok(IceClass::NewIce),
        82 => Ok(IceClass::Nilas),
        83 => Ok(IceClass::YoungIce),
        86 => Ok(IceClass::FirstYearIce),
        95 => Ok(IceClass::OldIce),
        other => Err(Error::UnknownSodCode(other)),
    }
}

/// Closed interval of ice cover fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRange {
    lo: f64,
    hi: f64,
}

impl ConcentrationRange {
    pub fn new(lo: f64, hi: f64) -> Option<Self> {
        (0.0 <= lo && lo <= hi && hi <= 1.0).then_some(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn midpoint(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }
}

/// Decodes a two-digit concentration code: the digits are the lower and upper
/// bound in tenths, so `79` is 70-90%. Descending digits and single-digit
/// codes are rejected.
pub fn parse_concentration_code(code: i64) -> Result<ConcentrationRange> {
    if !(10..=99).contains(&code) {
        return Err(Error::InvalidConcentrationCode(code));
    }
    let (lo, hi) = (code / 10, code % 10);
    if lo > hi {
        return Err(Error::InvalidConcentrationCode(code));
    }
    ConcentrationRange::new(lo as f64 / 10.0, hi as f64 / 10.0)
        .ok_or(Error::InvalidConcentrationCode(code))
}

pub fn midpoint(range: &ConcentrationRange) -> f64 {
    range.midpoint()
}

/// Chart attributes of one polygon. Floe forms are carried but unused.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EggCode {
    #[serde(rename = "CT", default, skip_serializing_if = "Option::is_none")]
    pub ct: Option<i64>,
    #[serde(rename = "CA", default, skip_serializing_if = "Option::is_none")]
    pub ca: Option<i64>,
    #[serde(rename = "SA", default, skip_serializing_if = "Option::is_none")]
    pub sa: Option<i64>,
    #[serde(rename = "FA", default, skip_serializing_if = "Option::is_none")]
    pub fa: Option<i64>,
    #[serde(rename = "CB", default, skip_serializing_if = "Option::is_none")]
    pub cb: Option<i64>,
    #[serde(rename = "SB", default, skip_serializing_if = "Option::is_none")]
    pub sb: Option<i64>,
    #[serde(rename = "FB", default, skip_serializing_if = "Option::is_none")]
    pub fb: Option<i64>,
    #[serde(default)]
    pub ice_free: bool,
}

impl EggCode {
    pub fn ice_free() -> Self {
        Self {
            ice_free: true,
            ..Self::default()
        }
    }

    pub fn single(sa: i64, ca: Option<i64>) -> Self {
        Self {
            sa: Some(sa),
            ca,
            ..Self::default()
        }
    }

    pub fn two_types(sa: i64, ca: i64, sb: i64, cb: i64) -> Self {
        Self {
            sa: Some(sa),
            ca: Some(ca),
            sb: Some(sb),
            cb: Some(cb),
            ..Self::default()
        }
    }

    /// Checks the structural invariants and resolves the candidate classes,
    /// oldest first.
    pub fn candidates(&self) -> Result<Vec<IceClass>> {
        if self.sb.is_some() && self.sa.is_none() {
            return Err(Error::InconsistentEgg("SB present without SA".into()));
        }
        if self.cb.is_some() && self.ca.is_none() {
            return Err(Error::InconsistentEgg("CB present without CA".into()));
        }
        if self.ice_free {
            if self.sa.is_some() {
                return Err(Error::InconsistentEgg(
                    "ice-free polygon carries a stage of development".into(),
                ));
            }
            return Ok(vec![IceClass::Water]);
        }
        let sa = self.sa.ok_or(Error::MissingSod)?;
        let mut out = vec![sod_code_to_class(sa)?];
        if let Some(sb) = self.sb {
            let second = sod_code_to_class(sb)?;
            if second == out[0] {
                return Err(Error::InconsistentEgg(format!("SA and SB are both {sa}")));
            }
            out.push(second);
        }
        Ok(out)
    }

    /// Midpoint concentration of the oldest stage; 1 for ice-free polygons.
    pub fn oldest_fraction(&self) -> Result<f64> {
        if self.ice_free {
            self.candidates()?;
            return Ok(1.0);
        }
        let sa = self.sa.ok_or(Error::MissingSod)?;
        let ca = self.ca.ok_or(Error::MissingConcentration(sa))?;
        Ok(parse_concentration_code(ca)?.midpoint())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    OneHot,
    BinaryPartial,
    ConfidencePartial,
}

impl LabelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelKind::OneHot => "one_hot",
            LabelKind::BinaryPartial => "binary_partial",
            LabelKind::ConfidencePartial => "confidence_partial",
        }
    }
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub values: [f64; NUM_CLASSES],
    pub kind: LabelKind,
}

impl LabelVector {
    pub fn new(values: [f64; NUM_CLASSES], kind: LabelKind) -> Self {
        Self { values, kind }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        crate::util::argmax(&self.values)
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, _)| i)
    }
}

pub fn encode_one_hot(egg: &EggCode) -> Result<LabelVector> {
    let oldest = egg.candidates()?[0];
    let mut values = [0.0; NUM_CLASSES];
    values[oldest.index()] = 1.0;
    Ok(LabelVector::new(values, LabelKind::OneHot))
}

pub fn encode_binary_partial(egg: &EggCode) -> Result<LabelVector> {
    let mut values = [0.0; NUM_CLASSES];
    for class in egg.candidates()? {
        values[class.index()] = 1.0;
    }
    Ok(LabelVector::new(values, LabelKind::BinaryPartial))
}

pub fn encode_confidence_partial(egg: &EggCode) -> Result<LabelVector> {
    let candidates = egg.candidates()?;
    let mut values = [0.0; NUM_CLASSES];
    if egg.ice_free {
        values[IceClass::Water.index()] = 1.0;
        return Ok(LabelVector::new(values, LabelKind::ConfidencePartial));
    }
    let stages = [(egg.sa, egg.ca), (egg.sb, egg.cb)];
    for (class, (sod, conc)) in candidates.iter().zip(stages) {
        let sod = sod.expect("candidates resolved from present codes");
        let conc = conc.ok_or(Error::MissingConcentration(sod))?;
        values[class.index()] = parse_concentration_code(conc)?.midpoint();
    }
    Ok(normalize_surplus(&LabelVector::new(
        values,
        LabelKind::ConfidencePartial,
    )))
}

/// Removes any mass above 1 by subtracting an equal share from every nonzero
/// candidate. Candidates driven below zero are clamped and dropped, and the
/// remaining surplus is shared among the survivors, so the result never sums
/// above 1.
pub fn normalize_surplus(vector: &LabelVector) -> LabelVector {
    let mut values = vector.values;
    for _ in 0..NUM_CLASSES {
        let sum: f64 = values.iter().sum();
        let k = values.iter().filter(|v| **v > 0.0).count();
        if sum <= 1.0 || k == 0 {
            break;
        }
        let share = (sum - 1.0) / k as f64;
        for v in values.iter_mut().filter(|v| **v > 0.0) {
            *v = (*v - share).max(0.0);
        }
    }
    LabelVector::new(values, vector.kind)
}

/// All three encodings of one polygon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedLabels {
    pub one_hot: LabelVector,
    pub binary_partial: LabelVector,
    pub confidence_partial: LabelVector,
}

impl EncodedLabels {
    pub fn from_egg(egg: &EggCode) -> Result<Self> {
        Ok(Self {
            one_hot: encode_one_hot(egg)?,
            binary_partial: encode_binary_partial(egg)?,
            confidence_partial: encode_confidence_partial(egg)?,
        })
    }

    pub fn get(&self, kind: LabelKind) -> &LabelVector {
        match kind {
            LabelKind::OneHot => &self.one_hot,
            LabelKind::BinaryPartial => &self.binary_partial,
            LabelKind::ConfidencePartial => &self.confidence_partial,
        }
    }

    /// Class of the oldest stage, used as ground truth for evaluation.
    pub fn true_class(&self) -> usize {
        self.one_hot.argmax()
    }
}

/// One entry of a polygon label file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolygonRecord {
    pub polygon_id: i64,
    #[serde(flatten)]
    pub egg: EggCode,
}

pub fn read_polygon_table(path: &Path) -> Result<Vec<PolygonRecord>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_polygon_table(path: &Path, records: &[PolygonRecord]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(records)?)?;
    Ok(())
}

/// Writes one CSV row per polygon: id, then the one-hot, binary-partial and
/// confidence-partial vectors, each in canonical class order.
pub fn write_label_csv<W: Write>(records: &[PolygonRecord], mut out: W) -> Result<()> {
    let mut header = vec!["polygon_id".to_string()];
    for prefix in ["one_hot", "binary_partial", "confidence_partial"] {
        for class in IceClass::ALL {
            header.push(format!("{prefix}_{}", class.abbrev()));
        }
    }
    writeln!(out, "{}", header.join(","))?;
    for record in records {
        let labels = EncodedLabels::from_egg(&record.egg)?;
        let mut row = vec![record.polygon_id.to_string()];
        for vector in [labels.one_hot, labels.binary_partial, labels.confidence_partial] {
            row.extend(vector.values.iter().map(|v| fmt_sig(*v, 12)));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
