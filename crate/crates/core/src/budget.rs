//! Group budget allocation and privacy receipts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::GroupLabel;
use crate::mechanism::{MechanismConfig, Metric};

/// Per-group ε, indexed by [`GroupLabel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BudgetVector([f64; 4]);

impl BudgetVector {
    pub fn new(eps: [f64; 4]) -> Result<Self> {
        if let Some(bad) = eps.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "group budgets must be finite and >= 0, got {bad}"
            )));
        }
        Ok(Self(eps))
    }

    pub fn uniform(eps: f64) -> Result<Self> {
        Self::new([eps; 4])
    }

    pub fn get(&self, label: GroupLabel) -> f64 {
        self.0[label.index()]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

impl TryFrom<[f64; 4]> for BudgetVector {
    type Error = Error;
    fn try_from(eps: [f64; 4]) -> Result<Self> {
        Self::new(eps)
    }
}

impl From<BudgetVector> for [f64; 4] {
    fn from(b: BudgetVector) -> Self {
        b.0
    }
}

impl std::ops::Index<GroupLabel> for BudgetVector {
    type Output = f64;
    fn index(&self, label: GroupLabel) -> &f64 {
        &self.0[label.index()]
    }
}

pub const DEFAULT_RATIO: [f64; 4] = [2.0, 1.0, 4.0, 3.0];
pub const DEFAULT_OFFSETS: [f64; 4] = [100.0, 0.0, 400.0, 300.0];

/// How a base ε expands into four group budgets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AllocationStrategy {
    /// `eps[c] = base · ratio[c] / ratio[2]`.
    Ratio {
        #[serde(default = "default_ratio")]
        ratio: [f64; 4],
    },
    /// `eps[c] = base + offsets[c]`.
    Offset {
        #[serde(default = "default_offsets")]
        offsets: [f64; 4],
    },
    /// Fixed budgets; the base is ignored.
    Explicit { explicit: [f64; 4] },
}

fn default_ratio() -> [f64; 4] {
    DEFAULT_RATIO
}

fn default_offsets() -> [f64; 4] {
    DEFAULT_OFFSETS
}

impl Default for AllocationStrategy {
    fn default() -> Self {
        AllocationStrategy::Offset {
            offsets: DEFAULT_OFFSETS,
        }
    }
}

impl AllocationStrategy {
    pub fn ratio() -> Self {
        AllocationStrategy::Ratio { ratio: DEFAULT_RATIO }
    }

    pub fn offset() -> Self {
        Self::default()
    }

    pub fn name(&self) -> &'static str {
        match self {
            AllocationStrategy::Ratio { .. } => "ratio",
            AllocationStrategy::Offset { .. } => "offset",
            AllocationStrategy::Explicit { .. } => "explicit",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (name, values, strict) = match self {
            AllocationStrategy::Ratio { ratio } => ("ratio", ratio, true),
            AllocationStrategy::Offset { offsets } => ("offsets", offsets, false),
            AllocationStrategy::Explicit { explicit } => ("explicit", explicit, false),
        };
        let ok = values
            .iter()
            .all(|v| v.is_finite() && if strict { *v > 0.0 } else { *v >= 0.0 });
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid {name} entries {values:?}")));
        }
        Ok(())
    }
}

/// Expands `base_eps` into a [`BudgetVector`]; under both ratio and offset
/// the base is the budget of group 2.
pub fn allocate(base_eps: f64, strategy: &AllocationStrategy) -> Result<BudgetVector> {
    if !(base_eps >= 0.0) || !base_eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "base epsilon must be finite and >= 0, got {base_eps}"
        )));
    }
    strategy.validate()?;
    let eps = match strategy {
        AllocationStrategy::Ratio { ratio } => ratio.map(|r| base_eps * r / ratio[1]),
        AllocationStrategy::Offset { offsets } => offsets.map(|o| base_eps + o),
        AllocationStrategy::Explicit { explicit } => *explicit,
    };
    BudgetVector::new(eps)
}

/// Per-document privacy accounting.
///
/// Entries of `per_token_eps` are the budgets handed to the mechanism; masked
/// positions carry 0 and positions emitted without privatization carry
/// `+∞` (serialized as `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReceipt {
    #[serde(with = "eps_list")]
    pub per_token_eps: Vec<f64>,
    pub group_counts: [usize; 4],
    #[serde(with = "eps_value")]
    pub mean_eps: f64,
    pub budgets: BudgetVector,
    pub composed_exponent_form: String,
    pub mechanism: MechanismConfig,
    pub metric: Metric,
    /// Every mechanism here is pure ε (δ = 0).
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masked_positions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unprotected_positions: Vec<usize>,
}

impl PrivacyReceipt {
    pub fn len(&self) -> usize {
        self.per_token_eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_token_eps.is_empty()
    }

    pub fn total_eps(&self) -> f64 {
        self.per_token_eps.iter().sum()
    }

    /// Receipt for a document with no tokens.
    pub fn empty(budgets: BudgetVector, mech: &MechanismConfig) -> Self {
        Self {
            per_token_eps: Vec::new(),
            group_counts: [0; 4],
            mean_eps: 0.0,
            budgets,
            composed_exponent_form: "0".into(),
            mechanism: *mech,
            metric: mech.kind.metric(),
            delta: 0.0,
            masked_positions: Vec::new(),
            unprotected_positions: Vec::new(),
        }
    }

    /// Overrides the budget at `position` (masking: 0, pass-through: ∞) and
    /// refreshes the mean.
    pub fn override_position(&mut self, position: usize, eps: f64) {
        self.per_token_eps[position] = eps;
        if eps == 0.0 {
            self.masked_positions.push(position);
            self.masked_positions.sort_unstable();
            self.masked_positions.dedup();
        } else if eps.is_infinite() {
            self.unprotected_positions.push(position);
            self.unprotected_positions.sort_unstable();
            self.unprotected_positions.dedup();
        }
        self.mean_eps = self.total_eps() / self.len() as f64;
    }
}

fn composed_form(counts: &[usize; 4], budgets: &BudgetVector, metric: Metric) -> String {
    let d = match metric {
        Metric::Chordal => "d_chordal",
        Metric::Euclidean => "d_euclidean",
    };
    let terms: Vec<String> = GroupLabel::ALL
        .iter()
        .filter(|g| counts[g.index()] > 0)
        .map(|&g| format!("{}*D{}", budgets[g], g.value()))
        .collect();
    format!(
        "sum_i eps(c_i)*{d}(w_i, w'_i) = {} where Dc = sum over positions i in group c of {d}(w_i, w'_i)",
        terms.join(" + ")
    )
}

/// Builds the receipt for a labelled sequence.
pub fn build_receipt(labels: &[GroupLabel], budgets: &BudgetVector, mech: &MechanismConfig) -> Result<PrivacyReceipt> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("labels"));
    }
    let per_token_eps: Vec<f64> = labels.iter().map(|&l| budgets[l]).collect();
    let mut group_counts = [0usize; 4];
    for l in labels {
        group_counts[l.index()] += 1;
    }
    let mean_eps = per_token_eps.iter().sum::<f64>() / labels.len() as f64;
    let metric = mech.kind.metric();
    let masked_positions = per_token_eps
        .iter()
        .enumerate()
        .filter(|(_, &e)| e == 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok(PrivacyReceipt {
        composed_exponent_form: composed_form(&group_counts, budgets, metric),
        per_token_eps,
        group_counts,
        mean_eps,
        budgets: *budgets,
        mechanism: *mech,
        metric,
        delta: 0.0,
        masked_positions,
        unprotected_positions: Vec::new(),
    })
}

/// The single budget a uniform baseline needs to spend the same total ε.
pub fn matched_uniform_budget(receipt: &PrivacyReceipt) -> f64 {
    receipt.mean_eps
}

/// Total-ε-weighted mean over many receipts (corpus-level ε̄).
pub fn pooled_mean_eps<'a>(receipts: impl IntoIterator<Item = &'a PrivacyReceipt>) -> f64 {
    let (mut total, mut n) = (0.0, 0usize);
    for r in receipts {
        total += r.total_eps();
        n += r.len();
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

mod eps_value {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

mod eps_list {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            if x.is_finite() {
                seq.serialize_element(x)?;
            } else {
                seq.serialize_element(&Option::<f64>::None)?;
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Option<f64>>::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use GroupLabel::*;

    #[test]
    fn offset_strategy_examples() {
        let s = AllocationStrategy::offset();
        assert_eq!(allocate(50.0, &s).unwrap().as_array(), [150.0, 50.0, 450.0, 350.0]);
        assert_eq!(allocate(250.0, &s).unwrap().as_array(), [350.0, 250.0, 650.0, 550.0]);
    }

    #[test]
    fn ratio_strategy_anchors_group_two() {
        assert_eq!(
            allocate(50.0, &AllocationStrategy::ratio()).unwrap().as_array(),
            [100.0, 50.0, 200.0, 150.0]
        );
        let custom = AllocationStrategy::Ratio { ratio: [3.0, 2.0, 4.0, 5.0] };
        assert_eq!(allocate(10.0, &custom).unwrap().as_array(), [15.0, 10.0, 20.0, 25.0]);
    }

    #[test]
    fn invalid_inputs() {
        assert!(allocate(-1.0, &AllocationStrategy::offset()).is_err());
        assert!(allocate(f64::NAN, &AllocationStrategy::offset()).is_err());
        assert!(allocate(1.0, &AllocationStrategy::Ratio { ratio: [1.0, 0.0, 1.0, 1.0] }).is_err());
        assert!(allocate(1.0, &AllocationStrategy::Offset { offsets: [1.0, -2.0, 1.0, 1.0] }).is_err());
        let explicit = AllocationStrategy::Explicit { explicit: [0.0, 0.0, 7.0, 1.0] };
        assert_eq!(allocate(99.0, &explicit).unwrap().as_array(), [0.0, 0.0, 7.0, 1.0]);
        assert!(build_receipt(&[], &BudgetVector::uniform(1.0).unwrap(), &MechanismConfig::default()).is_err());
    }

    #[test]
    fn strategy_json_forms() {
        let s: AllocationStrategy = serde_json::from_str(r#"{"kind":"offset"}"#).unwrap();
        assert_eq!(s, AllocationStrategy::offset());
        let s: AllocationStrategy = serde_json::from_str(r#"{"kind":"ratio","ratio":[2,1,4,3]}"#).unwrap();
        assert_eq!(s, AllocationStrategy::ratio());
        let s: AllocationStrategy = serde_json::from_str(r#"{"kind":"explicit","explicit":[1,2,3,4]}"#).unwrap();
        assert_eq!(s, AllocationStrategy::Explicit { explicit: [1.0, 2.0, 3.0, 4.0] });
    }

    #[test]
    fn receipts() {
        let b = allocate(50.0, &AllocationStrategy::offset()).unwrap();
        let mech = MechanismConfig::default();
        let r = build_receipt(&[PublicImportant; 3], &b, &mech).unwrap();
        assert_eq!(r.per_token_eps, vec![450.0; 3]);
        assert_eq!(r.mean_eps, 450.0);
        assert_eq!(r.group_counts, [0, 0, 3, 0]);
        assert_eq!(matched_uniform_budget(&r), 450.0);

        let r = build_receipt(&[SensitiveImportant, SensitiveUnimportant, PublicImportant, PublicUnimportant], &b, &mech)
            .unwrap();
        assert_eq!(r.mean_eps, 250.0);
        assert_eq!(r.group_counts, [1, 1, 1, 1]);
        assert_eq!(matched_uniform_budget(&r), 250.0);
        assert!(r.composed_exponent_form.contains("150*D1 + 50*D2 + 450*D3 + 350*D4"));

        let uniform = build_receipt(&[PublicUnimportant; 4], &BudgetVector::uniform(250.0).unwrap(), &mech).unwrap();
        assert!((uniform.total_eps() - r.total_eps()).abs() < 1e-9);
    }

    #[test]
    fn overrides_and_null_serialization() {
        let b = BudgetVector::new([1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut r = build_receipt(&[SensitiveImportant, PublicUnimportant], &b, &MechanismConfig::default()).unwrap();
        r.override_position(0, 0.0);
        assert_eq!(r.mean_eps, 2.0);
        assert_eq!(r.masked_positions, vec![0]);
        r.override_position(1, f64::INFINITY);
        assert!(r.mean_eps.is_infinite());
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["per_token_eps"], serde_json::json!([0.0, null]));
        assert!(json["mean_eps"].is_null());
        let back: PrivacyReceipt = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }
}
