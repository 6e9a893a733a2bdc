use std::collections::BTreeMap;

use promptopt_core::planted::PlantedSpec;

/// Euclidean projection onto the probability simplex by enumerating every
/// assignment of coordinates to {at 0, free, at 1} and keeping the one
/// whose threshold satisfies the KKT conditions.
pub fn kkt_project(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let patterns = 3usize.pow(n as u32);
    for code in 0..patterns {
        // 0 = clamped at 0, 1 = free, 2 = clamped at 1.
        let mut c = code;
        let pat: Vec<usize> = (0..n)
            .map(|_| {
                let d = c % 3;
                c /= 3;
                d
            })
            .collect();
        let free: Vec<usize> = (0..n).filter(|&j| pat[j] == 1).collect();
        let ones = pat.iter().filter(|&&d| d == 2).count() as f64;
        let candidates: Vec<f64> = if free.is_empty() {
            if ones != 1.0 {
                continue;
            }
            // Threshold undetermined; any v in the feasible interval gives the same point.
            let lo = (0..n).filter(|&j| pat[j] == 0).map(|j| z[j]).fold(f64::NEG_INFINITY, f64::max);
            let hi = (0..n).filter(|&j| pat[j] == 2).map(|j| z[j] - 1.0).fold(f64::INFINITY, f64::min);
            if lo > hi + 1e-12 {
                continue;
            }
            vec![if lo.is_finite() { lo } else { hi }]
        } else {
            let s: f64 = free.iter().map(|&j| z[j]).sum();
            vec![(s + ones - 1.0) / free.len() as f64]
        };
        for v in candidates {
            let ok = (0..n).all(|j| match pat[j] {
                0 => z[j] - v <= 1e-12,
                1 => z[j] - v >= -1e-12 && z[j] - v <= 1.0 + 1e-12,
                _ => z[j] - v >= 1.0 - 1e-12,
            });
            if !ok {
                continue;
            }
            let p: Vec<f64> = (0..n)
                .map(|j| match pat[j] {
                    0 => 0.0,
                    1 => z[j] - v,
                    _ => 1.0,
                })
                .collect();
            let d = dist2(&p, z);
            if best.as_ref().is_none_or(|(b, _)| d < *b) {
                best = Some((d, p));
            }
        }
    }
    best.expect("some clamp pattern is KKT-consistent").1
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Every prompt of length `n` over `0..vocab`, in lexicographic order.
pub fn all_prompts(n: usize, vocab: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..vocab).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    out
}

/// Class scores of a planted task computed from its spec alone.
pub fn planted_scores(spec: &PlantedSpec, input: &str, prompt: &[String]) -> Vec<f64> {
    let base = &spec.base_scores[input];
    spec.classes
        .iter()
        .enumerate()
        .map(|(c, class)| {
            let distinct = class.planted.iter().filter(|t| prompt.contains(t)).count();
            base[c] + spec.weight * distinct as f64
        })
        .collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RefLoss {
    CrossEntropy,
    Hinge(f64),
}

pub fn ref_loss(probs: &[f64], label: usize, loss: RefLoss) -> f64 {
    match loss {
        RefLoss::CrossEntropy => -probs[label].max(1e-12).ln(),
        RefLoss::Hinge(m) => {
            let other = probs.iter().enumerate().filter(|&(c, _)| c != label).map(|(_, p)| *p).fold(f64::NEG_INFINITY, f64::max);
            (m - probs[label] + other).max(0.0)
        }
    }
}

/// Mean loss of a prompt over `inputs` (text, label) under the planted spec.
pub fn planted_expected_loss(spec: &PlantedSpec, inputs: &[(String, usize)], prompt: &[String], loss: RefLoss) -> f64 {
    let total: f64 = inputs
        .iter()
        .map(|(text, label)| ref_loss(&softmax(&planted_scores(spec, text, prompt)), *label, loss))
        .sum();
    total / inputs.len() as f64
}

/// Accuracy of a prompt over `inputs` under the planted spec.
pub fn planted_accuracy(spec: &PlantedSpec, inputs: &[(String, usize)], prompt: &[String]) -> f64 {
    let right = inputs
        .iter()
        .filter(|(text, label)| {
            let s = planted_scores(spec, text, prompt);
            let pred = (0..s.len()).fold(0, |b, c| if s[c] > s[b] { c } else { b });
            pred == *label
        })
        .count();
    right as f64 / inputs.len() as f64
}

/// Hand-counted span frequencies: every contiguous run of at most `max_len`
/// words inside each segment.
pub fn count_segment_spans(segments: &[Vec<&str>], max_len: usize) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for seg in segments {
        for i in 0..seg.len() {
            for j in i + 1..=(i + max_len).min(seg.len()) {
                *out.entry(seg[i..j].join(" ")).or_insert(0) += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kkt_reference_on_known_points() {
        let p = kkt_project(&[0.9, 0.8, 0.3]);
        assert!((p[0] - 0.55).abs() < 1e-12 && (p[1] - 0.45).abs() < 1e-12 && p[2] == 0.0);
        assert_eq!(kkt_project(&[2.0]), vec![1.0]);
        assert_eq!(kkt_project(&[5.0, -5.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn prompt_enumeration_order() {
        assert_eq!(all_prompts(2, 2), vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }
}
