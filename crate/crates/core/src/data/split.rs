use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SplitMode {
    /// Shuffled split by ratio; `test` gets whatever remains.
    Random { train: f64, val: f64 },
    /// Texts of the held-out topics form the test set; `val` is a ratio of
    /// the remaining texts.
    Topic { holdout: Vec<String>, val: f64 },
}

impl SplitMode {
    /// 8:1:1, the default for in-topic experiments.
    pub fn random_default() -> Self {
        SplitMode::Random {
            train: 0.8,
            val: 0.1,
        }
    }
}

/// Sample indices of each partition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn select<'a>(samples: &'a [Sample], idx: &[usize]) -> Vec<&'a Sample> {
        idx.iter().map(|&i| &samples[i]).collect()
    }

    /// Split by explicit id lists, e.g. read from a split file.
    pub fn from_ids(samples: &[Sample], ids: &SplitIds) -> Result<Self> {
        let pos: HashMap<&str, usize> = samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let mut seen = HashSet::new();
        let mut resolve = |list: &[String]| -> Result<Vec<usize>> {
            list.iter()
                .map(|id| {
                    let &i = pos
                        .get(id.as_str())
                        .ok_or_else(|| Error::Data(format!("split id {id:?} is not in the manifest")))?;
                    if !seen.insert(i) {
                        return Err(Error::Data(format!("split id {id:?} appears twice")));
                    }
                    Ok(i)
                })
                .collect()
        };
        Ok(Self {
            train: resolve(&ids.train)?,
            val: resolve(&ids.val)?,
            test: resolve(&ids.test)?,
        })
    }

    pub fn to_ids(&self, samples: &[Sample]) -> SplitIds {
        let ids = |v: &[usize]| v.iter().map(|&i| samples[i].id.clone()).collect();
        SplitIds {
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }
}

/// Split file contents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    #[serde(default)]
    pub val: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

fn check_ratio(name: &str, r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Config(format!("{name} ratio {r} is outside [0, 1]")));
    }
    Ok(())
}

pub fn split_dataset(samples: &[Sample], mode: &SplitMode, seed: u64) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SplitMode::Random { train, val } => {
            check_ratio("train", *train)?;
            check_ratio("val", *val)?;
            if train + val > 1.0 + 1e-9 {
                return Err(Error::Config(format!("train {train} + val {val} exceeds 1")));
            }
            let mut idx: Vec<usize> = (0..samples.len()).collect();
            idx.shuffle(&mut rng);
            let n = idx.len() as f64;
            let n_train = (train * n).round() as usize;
            let n_val = ((val * n).round() as usize).min(idx.len() - n_train);
            let test = idx.split_off(n_train + n_val);
            let val = idx.split_off(n_train);
            Ok(Split {
                train: idx,
                val,
                test,
            })
        }
        SplitMode::Topic { holdout, val } => {
            check_ratio("val", *val)?;
            if holdout.is_empty() {
                return Err(Error::Config("topic split needs at least one held-out topic".into()));
            }
            let topics: BTreeSet<&str> = samples.iter().map(|s| s.topic.as_str()).collect();
            for t in holdout {
                if !topics.contains(t.as_str()) {
                    return Err(Error::Data(format!("held-out topic {t:?} has no texts")));
                }
            }
            let held: HashSet<&str> = holdout.iter().map(String::as_str).collect();
            let (test, mut rest): (Vec<usize>, Vec<usize>) =
                (0..samples.len()).partition(|&i| held.contains(samples[i].topic.as_str()));
            rest.shuffle(&mut rng);
            let n_val = (val * rest.len() as f64).round() as usize;
            let n_train = rest.len() - n_val;
            let val = rest.split_off(n_train);
            Ok(Split {
                train: rest,
                val,
                test,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                id: format!("s{i}"),
                text: None,
                topic: format!("topic{}", i % 3),
                relevance: BTreeMap::new(),
                ideology: BTreeMap::new(),
            })
            .collect()
    }

    fn all(s: &Split) -> Vec<usize> {
        let mut v: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn random_split_partitions_and_is_seeded() {
        let xs = samples(100);
        let a = split_dataset(&xs, &SplitMode::random_default(), 7).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (80, 10, 10));
        assert_eq!(all(&a), (0..100).collect::<Vec<_>>());
        assert_eq!(a, split_dataset(&xs, &SplitMode::random_default(), 7).unwrap());
        assert_ne!(a, split_dataset(&xs, &SplitMode::random_default(), 8).unwrap());
    }

    #[test]
    fn topic_split_holds_out_whole_topics() {
        let xs = samples(30);
        let mode = SplitMode::Topic {
            holdout: vec!["topic1".into()],
            val: 0.2,
        };
        let s = split_dataset(&xs, &mode, 1).unwrap();
        assert_eq!(all(&s), (0..30).collect::<Vec<_>>());
        assert_eq!(s.test.len(), 10);
        assert!(s.test.iter().all(|&i| xs[i].topic == "topic1"));
        assert!(s.train.iter().chain(&s.val).all(|&i| xs[i].topic != "topic1"));
        assert_eq!(s.val.len(), 4);
    }

    #[test]
    fn bad_configs() {
        let xs = samples(10);
        let over = SplitMode::Random { train: 0.9, val: 0.2 };
        assert!(split_dataset(&xs, &over, 0).is_err());
        let missing = SplitMode::Topic {
            holdout: vec!["nope".into()],
            val: 0.1,
        };
        assert!(split_dataset(&xs, &missing, 0).is_err());
    }

    #[test]
    fn ids_round_trip() {
        let xs = samples(10);
        let s = split_dataset(&xs, &SplitMode::random_default(), 3).unwrap();
        let ids = s.to_ids(&xs);
        assert_eq!(Split::from_ids(&xs, &ids).unwrap(), s);
        let mut dup = ids.clone();
        dup.val.push(dup.train[0].clone());
        assert!(Split::from_ids(&xs, &dup).is_err());
    }
}
