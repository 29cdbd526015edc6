//! Seeded synthetic linking datasets with a known generative rule.
//!
//! Each mention gets `candidates` entities whose names are edits of the
//! mention surface. The gold entity is the argmax of
//! `jacc_weight * jacc + prom_weight * prom` (plus optional hidden noise),
//! after which a fraction of labels is moved to a random other candidate.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CandidateEntity, Dataset, LabeledInstance, Mention};
use crate::simfeatures::{char_jaccard, lev_sim, minmax_rescale};

pub const SYLLABLES_A: &[&str] = &["ka", "ri", "to", "ne", "mi", "sa", "lo", "vu", "pe", "da", "ko", "ma"];
pub const SYLLABLES_B: &[&str] = &["zor", "qix", "bel", "wum", "hy", "fa", "jin", "ost", "cre", "plu", "gax", "dri"];
const TYPES: &[&str] = &["Person", "Place", "Work", "Organisation"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub mentions: usize,
    pub candidates: usize,
    pub jacc_weight: f64,
    pub prom_weight: f64,
    pub label_noise: f64,
    /// Standard deviation of a per-candidate term added to the gold rule
    /// but not visible in any feature.
    pub hidden_noise: f64,
    /// Minimum gap between the best and second-best rule score.
    pub min_gap: f64,
    pub syllables: &'static [&'static str],
    /// External column correlated with the final labels.
    pub oracle_column: Option<String>,
    pub oracle_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            mentions: 200,
            candidates: 10,
            jacc_weight: 0.6,
            prom_weight: 0.4,
            label_noise: 0.02,
            hidden_noise: 0.0,
            min_gap: 0.15,
            syllables: SYLLABLES_A,
            oracle_column: None,
            oracle_noise: 0.135,
            seed: 7,
        }
    }
}

fn word(rng: &mut ChaCha8Rng, syl: &[&str], n: usize) -> String {
    (0..n).map(|_| *syl.choose(rng).expect("syllables")).collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// A name related to `surface` to a random degree.
fn candidate_name(rng: &mut ChaCha8Rng, surface: &str, syl: &[&str]) -> String {
    match rng.random_range(0..5) {
        0 => surface.to_string(),
        1 => {
            let n = rng.random_range(1..=3);
            format!("{surface}_{}", capitalize(&word(rng, syl, n)))
        }
        2 => {
            // swap one syllable-sized chunk
            let chars: Vec<char> = surface.chars().collect();
            let at = rng.random_range(0..chars.len().max(1));
            let rep = word(rng, syl, 1);
            let mut s: String = chars[..at].iter().collect();
            s.push_str(&rep);
            s.extend(chars[(at + 2).min(chars.len())..].iter());
            capitalize(&s)
        }
        3 => format!("{}_{surface}", capitalize(&word(rng, syl, 2))),
        _ => {
            let n = rng.random_range(2..=4);
            capitalize(&word(rng, syl, n))
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

/// Generates a dataset. Mentions come in pairs sharing a text so that each
/// has one context mention; the gold entity's description mentions the
/// context surface more often than a negative's does, and its type matches
/// the mention type more often.
pub fn generate(cfg: &SynthConfig, name: &str) -> Dataset {
    generate_with_gold(cfg, name).0
}

/// [`generate`], also returning the rule's gold position per mention
/// before label noise.
pub fn generate_with_gold(cfg: &SynthConfig, name: &str) -> (Dataset, Vec<usize>) {
    let mut golds = Vec::with_capacity(cfg.mentions);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let surfaces: Vec<String> = (0..cfg.mentions)
        .map(|_| {
            let n = rng.random_range(2..=3);
            capitalize(&word(&mut rng, cfg.syllables, n))
        })
        .collect();
    let mut instances = Vec::with_capacity(cfg.mentions);
    for (i, surface) in surfaces.iter().enumerate() {
        let partner = if i % 2 == 0 { (i + 1).min(cfg.mentions - 1) } else { i - 1 };
        let mention_type = TYPES.choose(&mut rng).expect("types").to_string();
        let (mut cands, gold) = loop {
            let mut names: Vec<String> = Vec::new();
            while names.len() < cfg.candidates {
                let n = candidate_name(&mut rng, surface, cfg.syllables);
                if !names.contains(&n) {
                    names.push(n);
                }
            }
            let degrees: Vec<u64> = (0..cfg.candidates)
                .map(|_| (10f64.powf(rng.random_range(0.0..4.0))) as u64)
                .collect();
            let prom = minmax_rescale(&degrees.iter().map(|&d| d as f64).collect::<Vec<_>>())
                .expect("finite degrees");
            let scores: Vec<f64> = names
                .iter()
                .zip(&prom)
                .map(|(n, p)| {
                    cfg.jacc_weight * char_jaccard(surface, n) + cfg.prom_weight * p + cfg.hidden_noise * gaussian(&mut rng)
                })
                .collect();
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            if order.len() < 2 || scores[order[0]] - scores[order[1]] >= cfg.min_gap {
                let cands: Vec<CandidateEntity> = names
                    .into_iter()
                    .zip(degrees)
                    .enumerate()
                    .map(|(j, (n, d))| {
                        let mut c = CandidateEntity::new(format!("{name}:{i}:{j}"), n);
                        c.indegree = d;
                        c
                    })
                    .collect();
                break (cands, order[0]);
            }
        };
        let mut label_at = gold;
        if cfg.candidates > 1 && rng.random::<f64>() < cfg.label_noise {
            while label_at == gold {
                label_at = rng.random_range(0..cfg.candidates);
            }
        }
        let partner_surface = surfaces[partner].clone();
        for (j, c) in cands.iter_mut().enumerate() {
            let is_gold = j == gold;
            let ctx_p = if is_gold { 0.7 } else { 0.1 };
            let filler = word(&mut rng, cfg.syllables, 3);
            c.description = Some(if rng.random::<f64>() < ctx_p {
                format!("{} {filler}", partner_surface.to_lowercase())
            } else {
                filler
            });
            let type_p = if is_gold { 0.8 } else { 0.3 };
            let t = if rng.random::<f64>() < type_p {
                mention_type.clone()
            } else {
                TYPES.choose(&mut rng).expect("types").to_string()
            };
            c.domains.insert(t);
            // token-level surrogate similarity
            let spacy = (lev_sim(surface, &c.name) + 0.1 * gaussian(&mut rng)).clamp(0.0, 1.0);
            c.external_scores.insert("spacy".into(), spacy);
            if let Some(col) = &cfg.oracle_column {
                let y = if j == label_at { 1.0 } else { 0.0 };
                let v = (0.2 + 0.6 * y + cfg.oracle_noise * gaussian(&mut rng)).clamp(0.0, 1.0);
                c.external_scores.insert(col.clone(), v);
            }
        }
        golds.push(gold);
        let labels = (0..cfg.candidates).map(|j| u8::from(j == label_at)).collect();
        instances.push(LabeledInstance {
            mention: Mention {
                id: format!("{name}:m{i}"),
                surface: surface.clone(),
                text_id: format!("{name}:t{}", i / 2),
                context_ids: if partner == i { vec![] } else { vec![format!("{name}:m{partner}")] },
                mention_type: Some(mention_type),
            },
            candidates: cands,
            labels,
        });
    }
    (Dataset::new(name, instances), golds)
}

/// Pearson correlation of two equally long samples.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg, "a");
        assert_eq!(a.len(), 200);
        assert!(a.instances.iter().all(|i| i.candidates.len() == 10 && i.labels.iter().sum::<u8>() == 1));
        assert_eq!(generate(&cfg, "a"), a);
        assert!(crate::corpus::validate_dataset(&a).is_valid());
    }

    #[test]
    fn label_noise_rate() {
        let cfg = SynthConfig { mentions: 2000, label_noise: 0.02, ..SynthConfig::default() };
        let (ds, gold) = generate_with_gold(&cfg, "n");
        let flipped = ds.instances.iter().zip(&gold).filter(|(i, &g)| i.labels[g] != 1).count();
        let rate = flipped as f64 / 2000.0;
        assert!((0.01..=0.03).contains(&rate), "{rate}");
    }

    #[test]
    fn oracle_correlation() {
        let cfg = SynthConfig { mentions: 1000, oracle_column: Some("blink".into()), ..SynthConfig::default() };
        let ds = generate(&cfg, "o");
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for i in &ds.instances {
            for (c, &l) in i.candidates.iter().zip(&i.labels) {
                x.push(c.external_scores["blink"]);
                y.push(l as f64);
            }
        }
        let rho = pearson(&x, &y);
        assert!((0.75..=0.85).contains(&rho), "{rho}");
    }
}
