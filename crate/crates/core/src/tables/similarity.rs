use std::collections::HashMap;

use crate::gateway::char_trigrams;

/// Character-trigram TF-IDF with smoothed idf `ln((1+N)/(1+df)) + 1`.
///
/// Trigrams unseen at fit time get the `df = 0` weight, so similarity is
/// defined for any pair of strings and lies in [0, 1].
#[derive(Debug, Clone, Default)]
pub struct TrigramTfIdf {
    df: HashMap<String, usize>,
    docs: usize,
}

impl TrigramTfIdf {
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n = 0;
        for doc in docs {
            n += 1;
            let mut grams = char_trigrams(doc);
            grams.sort();
            grams.dedup();
            for g in grams {
                *df.entry(g).or_default() += 1;
            }
        }
        Self { df, docs: n }
    }

    pub fn idf(&self, trigram: &str) -> f64 {
        let df = self.df.get(trigram).copied().unwrap_or(0) as f64;
        ((1.0 + self.docs as f64) / (1.0 + df)).ln() + 1.0
    }

    pub fn vector(&self, text: &str) -> HashMap<String, f64> {
        let mut tf: HashMap<String, f64> = HashMap::new();
        for g in char_trigrams(text) {
            *tf.entry(g).or_default() += 1.0;
        }
        for (g, w) in tf.iter_mut() {
            *w *= self.idf(g);
        }
        tf
    }

    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let (va, vb) = (self.vector(a), self.vector(b));
        let dot: f64 = va.iter().filter_map(|(g, x)| vb.get(g).map(|y| x * y)).sum();
        let na: f64 = va.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = vb.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}
