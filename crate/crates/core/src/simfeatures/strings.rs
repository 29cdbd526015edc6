//! Name similarity functions. All of them case-fold their inputs and return
//! 1.0 when both strings are empty.

use std::collections::HashSet;

fn fold(s: &str) -> Vec<char> {
    s.chars().flat_map(char::to_lowercase).collect()
}

/// Character-set Jaccard similarity. Underscores and punctuation count as
/// ordinary characters.
pub fn char_jaccard(a: &str, b: &str) -> f64 {
    let sa: HashSet<char> = fold(a).into_iter().collect();
    let sb: HashSet<char> = fold(b).into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

fn lev_ratio(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::generic_levenshtein(&a.to_vec(), &b.to_vec()) as f64 / longest as f64
}

/// `1 - levenshtein(a, b) / max(|a|, |b|)`, lengths in characters.
pub fn lev_sim(a: &str, b: &str) -> f64 {
    lev_ratio(&fold(a), &fold(b))
}

/// Jaro-Winkler with prefix scale 0.1 and a common prefix of at most 4.
pub fn jaro_winkler(a: &str, b: &str) -> f64 {
    let (a, b) = (fold(a), fold(b));
    strsim::generic_jaro_winkler(&a, &b)
}

/// Best Levenshtein ratio between the shorter string and every window of
/// the longer string that has the same length.
pub fn partial_ratio(a: &str, b: &str) -> f64 {
    let (a, b) = (fold(a), fold(b));
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 1.0;
    }
    let mut best = 0.0f64;
    for w in long.windows(short.len()) {
        best = best.max(lev_ratio(&short, w));
        if best == 1.0 {
            break;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook O(nm) edit distance, kept independent of `strsim`.
    fn edit_distance(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn jaccard_matches_the_running_example() {
        assert!((char_jaccard("Cameron", "James_Cameron") - 0.7).abs() < 1e-12);
        assert!((char_jaccard("Cameron", "Roderick_Cameron") - 7.0 / 11.0).abs() < 1e-12);
        assert_eq!(char_jaccard("Titanic", "Titanic"), 1.0);
        assert!((char_jaccard("Titanic", "Titanic_(1997_film)") - 5.0 / 14.0).abs() < 1e-12);
        assert_eq!(char_jaccard("", ""), 1.0);
        assert_eq!(char_jaccard("abc", ""), 0.0);
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(lev_sim("Titanic", "Titanic"), 1.0);
        assert_eq!(lev_sim("abc", ""), 0.0);
        assert_eq!(lev_sim("", ""), 1.0);
        let expected = 1.0 - edit_distance("cameron", "camerons") as f64 / 8.0;
        assert_eq!(expected, 0.875);
        assert_eq!(lev_sim("Cameron", "Camerons"), expected);
    }

    #[test]
    fn levenshtein_agrees_with_dp_oracle() {
        let words = ["kitten", "sitting", "saturday", "sunday", "", "a", "flaw", "lawn", "ünïcode", "unicode"];
        for a in words {
            for b in words {
                let n = a.chars().count().max(b.chars().count());
                let want = if n == 0 { 1.0 } else { 1.0 - edit_distance(a, b) as f64 / n as f64 };
                assert!((lev_sim(a, b) - want).abs() < 1e-12, "{a} / {b}");
            }
        }
    }

    #[test]
    fn jaro_winkler_examples() {
        assert_eq!(jaro_winkler("dixon", "dixon"), 1.0);
        assert_eq!(jaro_winkler("", "abc"), 0.0);
        assert_eq!(jaro_winkler("", ""), 1.0);
        // jaro = (6/6 + 6/6 + 5/6) / 3 = 0.94444; prefix "mar" -> +0.3 * 0.05556
        assert!((jaro_winkler("MARTHA", "MARHTA") - 0.9611).abs() < 1e-4);
    }

    #[test]
    fn partial_ratio_examples() {
        assert_eq!(partial_ratio("Titanic", "Titanic_(1997_film)"), 1.0);
        assert_eq!(partial_ratio("Titanic_(1997_film)", "Titanic"), 1.0);
        assert_eq!(partial_ratio("", "abc"), 1.0);
        // windows of "zxbcz": zxb, xbc, bcz -> best "xbc" with distance 1
        let windows = ["zxb", "xbc", "bcz"];
        let oracle = windows
            .iter()
            .map(|w| 1.0 - edit_distance("abc", w) as f64 / 3.0)
            .fold(0.0, f64::max);
        assert!((oracle - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(partial_ratio("abc", "zxbcz"), oracle);
    }
}
