//! Held-out evaluation: ranking, precision/recall, P@N, bag resampling and
//! sentence length statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Instance;
use crate::error::{Error, Result};
use crate::model::EncodedBag;

/// Relation probabilities for one test entity pair. Index 0 (NA) is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBag {
    pub head: String,
    pub tail: String,
    pub scores: Vec<f64>,
    pub gold: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub head: String,
    pub tail: String,
    pub relation: usize,
    pub score: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionRanking {
    pub entries: Vec<RankedEntry>,
}

impl PredictionRanking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Every (bag, non-NA relation) pair, by descending score. Equal scores
/// are ordered by head, tail, then relation id.
pub fn rank_predictions(bags: &[ScoredBag]) -> PredictionRanking {
    let mut entries: Vec<RankedEntry> = bags
        .iter()
        .flat_map(|b| {
            b.scores.iter().enumerate().skip(1).map(move |(r, &score)| RankedEntry {
                head: b.head.clone(),
                tail: b.tail.clone(),
                relation: r,
                score,
                correct: b.gold.contains(&r),
            })
        })
        .collect();
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.head.cmp(&b.head))
            .then_with(|| a.tail.cmp(&b.tail))
            .then_with(|| a.relation.cmp(&b.relation))
    });
    PredictionRanking { entries }
}

/// Number of distinct gold facts over the test bags.
pub fn total_gold(bags: &[ScoredBag]) -> usize {
    let facts: BTreeSet<(&str, &str, usize)> = bags
        .iter()
        .flat_map(|b| b.gold.iter().map(move |&r| (b.head.as_str(), b.tail.as_str(), r)))
        .collect();
    facts.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per rank.
    pub points: Vec<PrPoint>,
    pub area: f64,
    pub total_gold: usize,
}

/// Precision and recall at every rank, and the trapezoidal area under the
/// curve. The first segment starts at recall 0 with the precision of rank
/// 1, so a ranking that is correct throughout has area 1.
pub fn pr_curve(ranking: &PredictionRanking, total_gold: usize) -> Result<PrCurve> {
    if total_gold == 0 {
        return Err(Error::Eval("PR curve needs at least one gold fact".into()));
    }
    let mut points = Vec::with_capacity(ranking.len());
    let mut correct = 0usize;
    for (j, e) in ranking.entries.iter().enumerate() {
        if e.correct {
            correct += 1;
        }
        points.push(PrPoint {
            precision: correct as f64 / (j + 1) as f64,
            recall: correct as f64 / total_gold as f64,
        });
    }
    let mut area = 0.0;
    if let Some(first) = points.first() {
        let mut prev = PrPoint {
            precision: first.precision,
            recall: 0.0,
        };
        for p in &points {
            area += (p.recall - prev.recall) * (p.precision + prev.precision) / 2.0;
            prev = *p;
        }
    }
    Ok(PrCurve {
        points,
        area,
        total_gold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PAtN {
    pub n: Vec<usize>,
    /// Percent correct among the top `n`.
    pub precision: Vec<f64>,
    pub mean: f64,
}

/// P@N in percent for each cutoff, and their unrounded mean.
pub fn p_at_n(ranking: &PredictionRanking, ns: &[usize]) -> Result<PAtN> {
    if ns.is_empty() {
        return Err(Error::Eval("no cutoffs given".into()));
    }
    let mut precision = Vec::with_capacity(ns.len());
    for &n in ns {
        if n == 0 {
            return Err(Error::Eval("P@0 is undefined".into()));
        }
        if ranking.len() < n {
            return Err(Error::Eval(format!("ranking has {} entries, P@{n} needs {n}", ranking.len())));
        }
        let hits = ranking.entries[..n].iter().filter(|e| e.correct).count();
        precision.push(100.0 * hits as f64 / n as f64);
    }
    let mean = precision.iter().sum::<f64>() / precision.len() as f64;
    Ok(PAtN {
        n: ns.to_vec(),
        precision,
        mean,
    })
}

/// How many sentences of each test bag are kept for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BagSetting {
    One,
    Two,
    #[default]
    All,
}

impl fmt::Display for BagSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BagSetting::One => "one",
            BagSetting::Two => "two",
            BagSetting::All => "all",
        })
    }
}

impl FromStr for BagSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "one" => Ok(BagSetting::One),
            "two" => Ok(BagSetting::Two),
            "all" => Ok(BagSetting::All),
            _ => Err(Error::Config(format!("unknown bag setting `{s}` (one, two, all)"))),
        }
    }
}

/// Indices kept out of `len` under `setting`, in ascending order.
pub fn sample_indices(len: usize, setting: BagSetting, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let keep = match setting {
        BagSetting::One => 1,
        BagSetting::Two => 2,
        BagSetting::All => len,
    };
    if keep >= len {
        return (0..len).collect();
    }
    let mut idx = sample(rng, len, keep).into_vec();
    idx.sort_unstable();
    idx
}

/// Resamples the sentences of every bag; deterministic in `seed`.
pub fn sample_bag_setting(bags: &[EncodedBag], setting: BagSetting, seed: u64) -> Vec<EncodedBag> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bags.iter()
        .map(|b| {
            let idx = sample_indices(b.sentences.len(), setting, &mut rng);
            EncodedBag {
                sentences: idx.iter().map(|&i| b.sentences[i].clone()).collect(),
                ..b.clone()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    /// Token length to number of sentences.
    pub histogram: BTreeMap<usize, usize>,
    pub mean: f64,
    pub median: f64,
    /// Fraction of sentences longer than 40 tokens.
    pub over_40: f64,
}

impl LengthStats {
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut histogram = BTreeMap::new();
        for &l in lengths {
            *histogram.entry(l).or_insert(0) += 1;
        }
        let n = lengths.len();
        if n == 0 {
            return LengthStats {
                count: 0,
                histogram,
                mean: 0.0,
                median: 0.0,
                over_40: 0.0,
            };
        }
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
        };
        LengthStats {
            count: n,
            histogram,
            mean: lengths.iter().sum::<usize>() as f64 / n as f64,
            median,
            over_40: lengths.iter().filter(|&&l| l > 40).count() as f64 / n as f64,
        }
    }
}

/// Length statistics of an original corpus and its pruned version, which
/// must contain the same instance ids.
pub fn length_stats(original: &[Instance], pruned: &[Instance]) -> Result<(LengthStats, LengthStats)> {
    let a: BTreeMap<&str, usize> = original.iter().map(|i| (i.id.as_str(), i.tokens.len())).collect();
    let b: BTreeMap<&str, usize> = pruned.iter().map(|i| (i.id.as_str(), i.tokens.len())).collect();
    let mut unaligned: Vec<String> = a.keys().filter(|k| !b.contains_key(*k)).map(|k| k.to_string()).collect();
    unaligned.extend(b.keys().filter(|k| !a.contains_key(*k)).map(|k| k.to_string()));
    if !unaligned.is_empty() || a.len() != original.len() || b.len() != pruned.len() {
        unaligned.truncate(10);
        return Err(Error::Eval(format!(
            "corpora are not aligned by instance id (duplicate or unmatched ids: {})",
            unaligned.join(", ")
        )));
    }
    let la: Vec<usize> = a.values().copied().collect();
    let lb: Vec<usize> = b.values().copied().collect();
    Ok((LengthStats::from_lengths(&la), LengthStats::from_lengths(&lb)))
}

/// PR curve as CSV: `rank,score,correct,precision,recall`.
pub fn write_pr_csv<W: Write>(out: &mut W, ranking: &PredictionRanking, curve: &PrCurve) -> std::io::Result<()> {
    writeln!(out, "rank,score,correct,precision,recall")?;
    for (j, (e, p)) in ranking.entries.iter().zip(&curve.points).enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            j + 1,
            e.score,
            u8::from(e.correct),
            p.precision,
            p.recall
        )?;
    }
    Ok(())
}

/// P@N report in the shape `{setting, n, precision, mean}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PAtNReport {
    pub setting: BagSetting,
    pub n: Vec<usize>,
    pub precision: Vec<f64>,
    pub mean: f64,
}

impl PAtNReport {
    pub fn new(setting: BagSetting, p: PAtN) -> Self {
        PAtNReport {
            setting,
            n: p.n,
            precision: p.precision,
            mean: p.mean,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;
    use crate::encoder::EncodedSentence;
    use rand::Rng;

    fn entries(flags: &[bool]) -> PredictionRanking {
        PredictionRanking {
            entries: flags
                .iter()
                .enumerate()
                .map(|(i, &c)| RankedEntry {
                    head: format!("h{i}"),
                    tail: "t".into(),
                    relation: 1,
                    score: 1.0 - i as f64 * 0.01,
                    correct: c,
                })
                .collect(),
        }
    }

    #[test]
    fn hand_case() {
        let c = pr_curve(&entries(&[true, false, true]), 2).unwrap();
        let p: Vec<f64> = c.points.iter().map(|p| p.precision).collect();
        let r: Vec<f64> = c.points.iter().map(|p| p.recall).collect();
        assert_eq!(p, vec![1.0, 0.5, 2.0 / 3.0]);
        assert_eq!(r, vec![0.5, 0.5, 1.0]);
        // 0.5·1 + 0 + 0.5·(0.5 + 2/3)/2
        assert!((c.area - (0.5 + 0.25 * (0.5 + 2.0 / 3.0))).abs() < 1e-15);
    }

    #[test]
    fn perfect_ranking_has_unit_area() {
        for n in 1..20 {
            let c = pr_curve(&entries(&vec![true; n]), n).unwrap();
            assert!(c.points.iter().all(|p| p.precision == 1.0));
            assert_eq!(c.points.last().unwrap().recall, 1.0);
            assert!((c.area - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gold_is_an_error() {
        assert!(pr_curve(&entries(&[false]), 0).is_err());
    }

    #[test]
    fn ranking_enumerates_pairs_and_breaks_ties() {
        let bag = |h: &str, scores: Vec<f64>, gold: &[usize]| ScoredBag {
            head: h.into(),
            tail: "t".into(),
            scores,
            gold: gold.iter().copied().collect(),
        };
        let bags = vec![bag("b", vec![0.1, 0.9, 0.0], &[1]), bag("a", vec![0.0, 0.5, 0.5], &[])];
        let r = rank_predictions(&bags);
        let got: Vec<(&str, usize, bool)> = r.entries.iter().map(|e| (e.head.as_str(), e.relation, e.correct)).collect();
        assert_eq!(got, vec![("b", 1, true), ("a", 1, false), ("a", 2, false), ("b", 2, false)]);
        assert_eq!(total_gold(&bags), 1);
    }

    #[test]
    fn p_at_n_reports_percent() {
        let mut flags = vec![true; 83];
        flags.extend(vec![false; 17]);
        let p = p_at_n(&entries(&flags), &[100]).unwrap();
        assert_eq!(p.precision, vec![83.0]);
        assert!(p_at_n(&entries(&flags), &[101]).is_err());
        let zero = p_at_n(&entries(&[false; 10]), &[1, 5, 10]).unwrap();
        assert_eq!(zero.precision, vec![0.0; 3]);
        assert_eq!(zero.mean, 0.0);
    }

    fn bag_of(n: usize) -> EncodedBag {
        EncodedBag {
            head: "h".into(),
            tail: "t".into(),
            sentences: (0..n)
                .map(|i| EncodedSentence {
                    words: vec![i],
                    pos1: vec![0],
                    pos2: vec![0],
                    entity: vec![false],
                })
                .collect(),
            relation: 0,
            head_type: 0,
            tail_type: 0,
            gold: BTreeSet::new(),
        }
    }

    #[test]
    fn bag_settings() {
        let bags = vec![bag_of(1), bag_of(3), bag_of(5)];
        assert_eq!(sample_bag_setting(&bags, BagSetting::All, 9), bags);
        let two = sample_bag_setting(&bags, BagSetting::Two, 9);
        assert_eq!(two[0], bags[0]);
        assert_eq!(two.iter().map(|b| b.sentences.len()).collect::<Vec<_>>(), vec![1, 2, 2]);
        assert_eq!(sample_bag_setting(&bags, BagSetting::One, 4), sample_bag_setting(&bags, BagSetting::One, 4));
    }

    #[test]
    fn one_setting_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        for _ in 0..1000 {
            counts[sample_indices(4, BagSetting::One, &mut rng)[0]] += 1;
        }
        assert!(counts.iter().all(|&c| (200..=300).contains(&c)), "{counts:?}");
    }

    fn inst(id: &str, len: usize) -> Instance {
        Instance {
            id: id.into(),
            tokens: (0..len).map(|i| format!("w{i}")).collect(),
            head: Span::new(0, 1),
            tail: Span::new(len - 1, len),
            relation: "NA".into(),
            parse_ref: None,
            kept: None,
        }
    }

    #[test]
    fn length_stats_summaries() {
        let orig = vec![inst("a", 10), inst("b", 50), inst("c", 41), inst("d", 3)];
        let (a, b) = length_stats(&orig, &orig).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mean, 26.0);
        assert_eq!(a.median, 25.5);
        assert_eq!(a.over_40, 0.5);
        assert_eq!(a.histogram.get(&50), Some(&1));
        let mut other = orig.clone();
        other[0].id = "z".into();
        assert!(length_stats(&orig, &other).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = entries(&[true, false]);
        let c = pr_curve(&r, 1).unwrap();
        let mut out = Vec::new();
        write_pr_csv(&mut out, &r, &c).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "rank,score,correct,precision,recall\n1,1,1,1,1\n2,0.99,0,0.5,1\n");
    }

    #[test]
    fn report_json_shape() {
        let p = p_at_n(&entries(&[true, false]), &[1, 2]).unwrap();
        let v = serde_json::to_value(PAtNReport::new(BagSetting::Two, p)).unwrap();
        assert_eq!(v["setting"], "two");
        assert_eq!(v["n"], serde_json::json!([1, 2]));
        assert_eq!(v["precision"], serde_json::json!([100.0, 50.0]));
        assert_eq!(v["mean"], 75.0);
    }

    #[test]
    fn prepending_a_correct_entry_never_lowers_p_at_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let flags: Vec<bool> = (0..30).map(|_| rng.gen_bool(0.4)).collect();
            let mut pre = vec![true];
            pre.extend(&flags);
            for n in 1..=30 {
                let a = p_at_n(&entries(&flags), &[n]).unwrap().mean;
                let b = p_at_n(&entries(&pre), &[n]).unwrap().mean;
                assert!(b >= a);
            }
        }
    }
}
