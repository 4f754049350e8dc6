//! Content space: ordinal parameter schemas, content vectors, labeled games
//! and tagged subspaces.
//!
//! A content vector `g` is a point of the product space of the schema's
//! ordinal dimensions. Every vector has a stable *game id*: its rank in the
//! lexicographic enumeration of the space (mixed-radix encoding, first
//! dimension most significant).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One ordinal parameter of the content generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub cardinality: u32,
}

impl Dimension {
    pub fn new(name: impl Into<String>, cardinality: u32) -> Self {
        Self {
            name: name.into(),
            cardinality,
        }
    }
}

/// Ordered list of ordinal dimensions spanning the content space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Dimension>", into = "Vec<Dimension>")]
pub struct ContentSchema {
    dims: Vec<Dimension>,
}

/// Cardinalities of the nine-parameter default schema. Their product is
/// 116,640.
pub const DEFAULT_CARDINALITIES: [u32; 9] = [3, 6, 3, 3, 5, 4, 3, 3, 4];

/// Names of the nine default dimensions, in order.
pub const DEFAULT_DIMENSION_NAMES: [&str; 9] = [
    "skill",
    "monsters",
    "health",
    "ammo",
    "weapons",
    "monster_melee",
    "monster_ranged",
    "monster_flying",
    "monster_boss",
];

impl ContentSchema {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSchema("schema has no dimensions".into()));
        }
        for (i, d) in dims.iter().enumerate() {
            if d.cardinality < 2 {
                return Err(Error::InvalidSchema(format!(
                    "dimension `{}` has cardinality {} (< 2)",
                    d.name, d.cardinality
                )));
            }
            if d.cardinality > u16::MAX as u32 {
                return Err(Error::InvalidSchema(format!(
                    "dimension `{}` cardinality {} is too large",
                    d.name, d.cardinality
                )));
            }
            if dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate dimension name `{}`",
                    d.name
                )));
            }
        }
        Ok(Self { dims })
    }

    /// Schema with generated names `p0, p1, ...`.
    pub fn from_cardinalities(cards: &[u32]) -> Result<Self> {
        Self::new(
            cards
                .iter()
                .enumerate()
                .map(|(i, &c)| Dimension::new(format!("p{i}"), c))
                .collect(),
        )
    }

    /// The nine-parameter default schema.
    pub fn default_schema() -> Self {
        Self::new(
            DEFAULT_DIMENSION_NAMES
                .iter()
                .zip(DEFAULT_CARDINALITIES)
                .map(|(n, c)| Dimension::new(*n, c))
                .collect(),
        )
        .expect("default schema is valid")
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<u32> {
        self.dims.iter().map(|d| d.cardinality).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    /// Number of points in the space.
    pub fn space_size(&self) -> Result<u64> {
        self.dims.iter().try_fold(1u64, |acc, d| {
            acc.checked_mul(d.cardinality as u64)
                .ok_or(Error::SizeOverflow)
        })
    }

    pub fn validate(&self, g: &ContentVector) -> Result<()> {
        if g.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: g.len(),
            });
        }
        for (d, &v) in self.dims.iter().zip(g.values()) {
            if v >= d.cardinality {
                return Err(Error::ValueOutOfRange {
                    dim: d.name.clone(),
                    value: v,
                    cardinality: d.cardinality,
                });
            }
        }
        Ok(())
    }

    /// Lexicographic rank of `g` in the space.
    pub fn game_id(&self, g: &ContentVector) -> u64 {
        debug_assert_eq!(g.len(), self.len());
        self.dims
            .iter()
            .zip(g.values())
            .fold(0u64, |acc, (d, &v)| {
                acc.wrapping_mul(d.cardinality as u64)
                    .wrapping_add(v as u64)
            })
    }

    /// Inverse of [`ContentSchema::game_id`].
    pub fn vector_at(&self, id: u64) -> Result<ContentVector> {
        let size = self.space_size()?;
        if id >= size {
            return Err(Error::InvalidParameter(format!(
                "game id {id} outside space of {size} games"
            )));
        }
        let mut rest = id;
        let mut values = vec![0u32; self.len()];
        for (slot, d) in values.iter_mut().zip(&self.dims).rev() {
            *slot = (rest % d.cardinality as u64) as u32;
            rest /= d.cardinality as u64;
        }
        Ok(ContentVector(values))
    }

    /// Each coordinate mapped to `[0, 1]` by `v / (cardinality - 1)`.
    pub fn normalize(&self, g: &ContentVector) -> Vec<f64> {
        self.dims
            .iter()
            .zip(g.values())
            .map(|(d, &v)| v as f64 / (d.cardinality - 1) as f64)
            .collect()
    }

    /// Uniform random point.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> ContentVector {
        ContentVector(
            self.dims
                .iter()
                .map(|d| rng.gen_range(0..d.cardinality))
                .collect(),
        )
    }

    /// `n` distinct uniform points (all of them when `n` exceeds the space).
    pub fn sample_distinct<R: rand::Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<ContentVector>> {
        let size = self.space_size()?;
        if n as u64 >= size {
            return Ok(enumerate_space(self)?.collect());
        }
        let ids = rand::seq::index::sample(rng, size as usize, n);
        let mut ids: Vec<u64> = ids.into_iter().map(|i| i as u64).collect();
        ids.sort_unstable();
        ids.into_iter().map(|id| self.vector_at(id)).collect()
    }
}

impl TryFrom<Vec<Dimension>> for ContentSchema {
    type Error = Error;
    fn try_from(dims: Vec<Dimension>) -> Result<Self> {
        Self::new(dims)
    }
}

impl From<ContentSchema> for Vec<Dimension> {
    fn from(s: ContentSchema) -> Self {
        s.dims
    }
}

/// A point `g = (g_1, ..., g_D)` of the content space.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentVector(Vec<u32>);

impl ContentVector {
    pub fn new(values: Vec<u32>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<u32>> for ContentVector {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

impl fmt::Display for ContentVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Lexicographic stream over the whole space. Holds only a cursor.
#[derive(Debug, Clone)]
pub struct SpaceIter {
    cards: Vec<u32>,
    next: Option<Vec<u32>>,
    remaining: u64,
}

impl SpaceIter {
    /// Resume enumeration at `cursor` (a game id).
    pub fn starting_at(schema: &ContentSchema, cursor: u64) -> Result<Self> {
        let size = schema.space_size()?;
        let next = if cursor < size {
            Some(schema.vector_at(cursor)?.0)
        } else {
            None
        };
        Ok(Self {
            cards: schema.cardinalities(),
            next,
            remaining: size.saturating_sub(cursor),
        })
    }
}

impl Iterator for SpaceIter {
    type Item = ContentVector;

    fn next(&mut self) -> Option<ContentVector> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut carried = true;
        for (v, &c) in succ.iter_mut().zip(&self.cards).rev() {
            *v += 1;
            if *v < c {
                carried = false;
                break;
            }
            *v = 0;
        }
        if !carried {
            self.next = Some(succ);
        }
        self.remaining -= 1;
        Some(ContentVector(current))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = usize::try_from(self.remaining).unwrap_or(usize::MAX);
        (n, usize::try_from(self.remaining).ok())
    }
}

/// All points of the space in lexicographic order.
pub fn enumerate_space(schema: &ContentSchema) -> Result<SpaceIter> {
    SpaceIter::starting_at(schema, 0)
}

/// Range-normalized L1 distance: mean over dimensions of
/// `|a_i - b_i| / (cardinality_i - 1)`. Lies in `[0, 1]`.
pub fn distance(a: &ContentVector, b: &ContentVector, schema: &ContentSchema) -> Result<f64> {
    schema.validate(a)?;
    schema.validate(b)?;
    let sum: f64 = schema
        .dims()
        .iter()
        .zip(a.values().iter().zip(b.values()))
        .map(|(d, (&x, &y))| x.abs_diff(y) as f64 / (d.cardinality - 1) as f64)
        .sum();
    Ok(sum / schema.len() as f64)
}

/// Developer label for content acceptability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Acceptability {
    Acceptable,
    Unacceptable,
}

impl Acceptability {
    /// `+1` / `-1`.
    pub fn sign(self) -> i8 {
        match self {
            Acceptability::Acceptable => 1,
            Acceptability::Unacceptable => -1,
        }
    }

    pub fn is_acceptable(self) -> bool {
        self == Acceptability::Acceptable
    }

    pub(crate) fn bit(self) -> u8 {
        u8::from(self.is_acceptable())
    }
}

/// A categorical content feature with a declared label domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub categories: Vec<String>,
}

pub const DIFFICULTY_CATEGORIES: [&str; 5] = ["VeryEasy", "Easy", "Moderate", "Hard", "VeryHard"];

impl FeatureSpec {
    /// The single reference feature: five difficulty bands.
    pub fn difficulty() -> Self {
        Self {
            name: "difficulty".into(),
            categories: DIFFICULTY_CATEGORIES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    pub fn category_name(&self, c: usize) -> &str {
        self.categories.get(c).map(String::as_str).unwrap_or("?")
    }
}

/// Labels `c = (c_1, ..., c_F)`, one category index per feature.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<u8>);

impl FeatureVector {
    pub fn new(values: Vec<u8>) -> Self {
        Self(values)
    }

    pub fn single(category: usize) -> Self {
        Self(vec![category as u8])
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, feature: usize) -> Option<usize> {
        self.0.get(feature).map(|&v| v as usize)
    }

    pub fn validate(&self, specs: &[FeatureSpec]) -> Result<()> {
        if self.0.len() != specs.len() {
            return Err(Error::DimensionMismatch {
                expected: specs.len(),
                found: self.0.len(),
            });
        }
        for (spec, &v) in specs.iter().zip(&self.0) {
            if v as usize >= spec.category_count() {
                return Err(Error::InvalidParameter(format!(
                    "feature `{}` has no category {v}",
                    spec.name
                )));
            }
        }
        Ok(())
    }
}

/// A developer-annotated game.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledGame {
    pub game: ContentVector,
    pub acceptability: Acceptability,
    features: Option<FeatureVector>,
}

impl LabeledGame {
    pub fn unacceptable(game: ContentVector) -> Self {
        Self {
            game,
            acceptability: Acceptability::Unacceptable,
            features: None,
        }
    }

    pub fn acceptable(game: ContentVector, features: Option<FeatureVector>) -> Self {
        Self {
            game,
            acceptability: Acceptability::Acceptable,
            features,
        }
    }

    pub fn new(
        game: ContentVector,
        acceptability: Acceptability,
        features: Option<FeatureVector>,
    ) -> Result<Self> {
        if features.is_some() && !acceptability.is_acceptable() {
            return Err(Error::Contract(
                "unacceptable games carry no feature labels".into(),
            ));
        }
        Ok(Self {
            game,
            acceptability,
            features,
        })
    }

    pub fn features(&self) -> Option<&FeatureVector> {
        self.features.as_ref()
    }
}

/// Which named subspace of the content space a game list represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubspaceTag {
    /// The full space.
    Full,
    /// Cluster-sampled reduction of the full space.
    Reduced,
    /// Games the acceptability filter accepts.
    Acceptable,
    /// Cluster-sampled reduction of the acceptable space.
    ReducedAcceptable,
    /// Acceptable games categorized with high confidence.
    ConfidentAcceptable,
}

impl SubspaceTag {
    /// Whether every member of a `self` subspace is, by construction, a
    /// member of an `other` subspace of the same lineage.
    pub fn contained_in(self, other: SubspaceTag) -> bool {
        use SubspaceTag::*;
        matches!(
            (self, other),
            (_, Full)
                | (Acceptable, Acceptable)
                | (ReducedAcceptable, Acceptable)
                | (ConfidentAcceptable, Acceptable)
                | (Reduced, Reduced)
                | (ReducedAcceptable, ReducedAcceptable)
                | (ConfidentAcceptable, ConfidentAcceptable)
        )
    }
}

impl fmt::Display for SubspaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SubspaceTag::Full => "G",
            SubspaceTag::Reduced => "G'",
            SubspaceTag::Acceptable => "G_a",
            SubspaceTag::ReducedAcceptable => "G_a'",
            SubspaceTag::ConfidentAcceptable => "G_ac",
        };
        f.write_str(s)
    }
}

/// An explicit list of games from one schema, tagged with its role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentSubspace {
    pub schema: ContentSchema,
    pub tag: SubspaceTag,
    games: Vec<ContentVector>,
}

impl ContentSubspace {
    pub fn new(schema: ContentSchema, tag: SubspaceTag, games: Vec<ContentVector>) -> Result<Self> {
        for g in &games {
            schema.validate(g)?;
        }
        Ok(Self { schema, tag, games })
    }

    /// Materialize the full space.
    pub fn full(schema: ContentSchema) -> Result<Self> {
        let games = enumerate_space(&schema)?.collect();
        Ok(Self {
            schema,
            tag: SubspaceTag::Full,
            games,
        })
    }

    pub fn games(&self) -> &[ContentVector] {
        &self.games
    }

    pub fn len(&self) -> usize {
        self.games.len()
    }

    pub fn is_empty(&self) -> bool {
        self.games.is_empty()
    }

    pub fn contains(&self, g: &ContentVector) -> bool {
        self.games.contains(g)
    }

    pub fn into_games(self) -> Vec<ContentVector> {
        self.games
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_space_has_116640_games() {
        let s = ContentSchema::default_schema();
        assert_eq!(s.space_size().unwrap(), 116_640);
        assert_eq!(enumerate_space(&s).unwrap().count(), 116_640);
    }

    #[test]
    fn binary_dimension_enumerates_two_points() {
        let s = ContentSchema::from_cardinalities(&[2]).unwrap();
        let all: Vec<_> = enumerate_space(&s).unwrap().collect();
        assert_eq!(all, vec![ContentVector::new(vec![0]), ContentVector::new(vec![1])]);
    }

    #[test]
    fn lexicographic_order_and_bounds() {
        let s = ContentSchema::from_cardinalities(&[2, 3, 4]).unwrap();
        let all: Vec<_> = enumerate_space(&s).unwrap().collect();
        assert_eq!(all.len(), 24);
        assert_eq!(all[0].values(), &[0, 0, 0]);
        assert_eq!(all[23].values(), &[1, 2, 3]);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        for (i, g) in all.iter().enumerate() {
            assert_eq!(s.game_id(g), i as u64);
            assert_eq!(&s.vector_at(i as u64).unwrap(), g);
        }
    }

    #[test]
    fn resumable_from_cursor() {
        let s = ContentSchema::from_cardinalities(&[3, 4, 2]).unwrap();
        let all: Vec<_> = enumerate_space(&s).unwrap().collect();
        let tail: Vec<_> = SpaceIter::starting_at(&s, 10).unwrap().collect();
        assert_eq!(&all[10..], &tail[..]);
    }

    #[test]
    fn overflowing_schema_is_rejected() {
        let s = ContentSchema::from_cardinalities(&[65_535; 5]).unwrap();
        assert!(matches!(s.space_size(), Err(Error::SizeOverflow)));
        assert!(matches!(enumerate_space(&s), Err(Error::SizeOverflow)));
    }

    #[test]
    fn schema_validation() {
        assert!(ContentSchema::from_cardinalities(&[3, 1]).is_err());
        assert!(ContentSchema::from_cardinalities(&[]).is_err());
        let dup = vec![Dimension::new("a", 2), Dimension::new("a", 3)];
        assert!(ContentSchema::new(dup).is_err());
    }

    #[test]
    fn distance_examples() {
        let s = ContentSchema::from_cardinalities(&[3, 5]).unwrap();
        let a = ContentVector::new(vec![0, 0]);
        let b = ContentVector::new(vec![2, 4]);
        assert_eq!(distance(&a, &b, &s).unwrap(), 1.0);
        let a = ContentVector::new(vec![1, 0]);
        let b = ContentVector::new(vec![2, 2]);
        assert_eq!(distance(&a, &b, &s).unwrap(), 0.5);
        assert_eq!(distance(&a, &a, &s).unwrap(), 0.0);
        let short = ContentVector::new(vec![1]);
        assert!(matches!(
            distance(&a, &short, &s),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn features_only_on_acceptable_games() {
        let g = ContentVector::new(vec![0]);
        assert!(LabeledGame::new(g.clone(), Acceptability::Unacceptable, Some(FeatureVector::single(1))).is_err());
        assert!(LabeledGame::new(g, Acceptability::Acceptable, Some(FeatureVector::single(1))).is_ok());
    }

    #[test]
    fn tag_containment_chain() {
        use SubspaceTag::*;
        assert!(Reduced.contained_in(Full));
        assert!(Acceptable.contained_in(Full));
        assert!(ReducedAcceptable.contained_in(Acceptable));
        assert!(ConfidentAcceptable.contained_in(Acceptable));
        assert!(!Acceptable.contained_in(Reduced));
        assert!(!Full.contained_in(Acceptable));
    }

    fn schema_strategy() -> impl Strategy<Value = ContentSchema> {
        prop::collection::vec(2u32..6, 1..=6)
            .prop_map(|c| ContentSchema::from_cardinalities(&c).unwrap())
    }

    fn schema_and_points(n: usize) -> impl Strategy<Value = (ContentSchema, Vec<ContentVector>)> {
        schema_strategy().prop_flat_map(move |s| {
            let point = s
                .cardinalities()
                .into_iter()
                .map(|c| 0..c)
                .collect::<Vec<_>>()
                .prop_map(ContentVector::new);
            (Just(s), prop::collection::vec(point, n))
        })
    }

    proptest! {
        #[test]
        fn enumeration_count_matches_product(s in schema_strategy()) {
            let product: u64 = s.cardinalities().iter().map(|&c| c as u64).product();
            prop_assert_eq!(enumerate_space(&s).unwrap().count() as u64, product);
        }

        #[test]
        fn distance_is_a_metric((s, pts) in schema_and_points(3)) {
            let (a, b, c) = (&pts[0], &pts[1], &pts[2]);
            let ab = distance(a, b, &s).unwrap();
            let ba = distance(b, a, &s).unwrap();
            let bc = distance(b, c, &s).unwrap();
            let ac = distance(a, c, &s).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(ab == 0.0, a == b);
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
