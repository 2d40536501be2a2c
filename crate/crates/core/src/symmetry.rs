//! Approximate strategy symmetry.
//!
//! A strategy step is represented by its positional embedding — the KC's
//! learned vector plus a sinusoidal position vector. Two strategies are
//! aligned with a zero-gap local alignment (Smith-Waterman with free
//! gaps), and the symmetry score `r` is the alignment score normalized by
//! the longer length, which keeps `0 ≤ r ≤ 1` and makes `r` invariant to
//! inserted or deleted steps. Cluster coherence is the mean pairwise `r`
//! within each global cluster, averaged over clusters.

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::KcIdx;
use crate::embed::EmbeddingTable;
use crate::rng::rng_from_seed;

#[derive(Debug, Error)]
pub enum SymmetryError {
    #[error("dimension error: positional encoding needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("empty sequence: alignment requires nonempty inputs")]
    EmptySequence,
    #[error("lookup error: no embedding for KC index {0}")]
    MissingEmbedding(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Sinusoidal position vector: component 2i is sin(pos / 10000^(2i/d)),
/// component 2i+1 is cos of the same angle. ‖p‖² = d/2 exactly.
pub fn positional_encoding(position: usize, d: usize) -> Result<Array1<f64>, SymmetryError> {
    if d == 0 || d % 2 != 0 {
        return Err(SymmetryError::OddDimension(d));
    }
    let mut v = Array1::zeros(d);
    for i in 0..d / 2 {
        let angle = position as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
        v[2 * i] = angle.sin();
        v[2 * i + 1] = angle.cos();
    }
    Ok(v)
}

/// Per-step positional embeddings for a strategy: KC vector + position
/// vector, element-wise.
pub fn positional_embed(
    kcs: &[KcIdx],
    embeddings: &EmbeddingTable,
) -> Result<Vec<Array1<f64>>, SymmetryError> {
    let d = embeddings.dim;
    kcs.iter()
        .enumerate()
        .map(|(pos, &k)| {
            if k.0 >= embeddings.kcs.nrows() {
                return Err(SymmetryError::MissingEmbedding(k.0));
            }
            let mut v = positional_encoding(pos, d)?;
            v += &embeddings.kc(k);
            Ok(v)
        })
        .collect()
}

/// Best local alignment between two step-vector sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Matched (index in a, index in b) pairs, strictly increasing in both.
    pub aligned_pairs: Vec<(usize, usize)>,
    pub score: f64,
    pub len_a: usize,
    pub len_b: usize,
}

/// Clamped cosine similarity; zero-norm vectors score 0 by definition.
fn step_similarity(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).max(0.0)
}

#[derive(Clone, Copy, PartialEq)]
enum Move {
    Stop,
    Diag,
    Up,
    Left,
}

/// Zero-gap Smith-Waterman over clamped-cosine similarities.
///
/// H(i,j) = max(0, H(i−1,j−1) + s(aᵢ,bⱼ), H(i−1,j), H(i,j−1)); the result
/// is the traceback from the global maximum of H. Ties prefer diagonal,
/// then up, then left, so alignments are deterministic. O(n·m).
pub fn align(a: &[Array1<f64>], b: &[Array1<f64>]) -> Result<AlignmentResult, SymmetryError> {
    if a.is_empty() || b.is_empty() {
        return Err(SymmetryError::EmptySequence);
    }
    if a[0].len() != b[0].len() {
        return Err(SymmetryError::DimensionMismatch { expected: a[0].len(), got: b[0].len() });
    }
    let (n, m) = (a.len(), b.len());
    let mut h = Array2::<f64>::zeros((n + 1, m + 1));
    let mut moves = vec![Move::Stop; (n + 1) * (m + 1)];
    let (mut best, mut best_cell) = (0.0f64, (0usize, 0usize));
    for i in 1..=n {
        for j in 1..=m {
            let diag = h[(i - 1, j - 1)] + step_similarity(&a[i - 1], &b[j - 1]);
            let up = h[(i - 1, j)];
            let left = h[(i, j - 1)];
            let (mv, val) = if diag >= up && diag >= left && diag > 0.0 {
                (Move::Diag, diag)
            } else if up >= left && up > 0.0 {
                (Move::Up, up)
            } else if left > 0.0 {
                (Move::Left, left)
            } else {
                (Move::Stop, 0.0)
            };
            h[(i, j)] = val;
            moves[i * (m + 1) + j] = mv;
            if val > best {
                best = val;
                best_cell = (i, j);
            }
        }
    }

    let mut aligned_pairs = Vec::new();
    let (mut i, mut j) = best_cell;
    while i > 0 && j > 0 && h[(i, j)] > 0.0 {
        match moves[i * (m + 1) + j] {
            Move::Diag => {
                aligned_pairs.push((i - 1, j - 1));
                i -= 1;
                j -= 1;
            }
            Move::Up => i -= 1,
            Move::Left => j -= 1,
            Move::Stop => break,
        }
    }
    aligned_pairs.reverse();
    Ok(AlignmentResult { aligned_pairs, score: best, len_a: n, len_b: m })
}

/// Symmetry score between two embedded strategies:
/// alignment score over max(n, m). Always in [0, 1] and symmetric.
pub fn symmetry_score_embedded(
    a: &[Array1<f64>],
    b: &[Array1<f64>],
) -> Result<f64, SymmetryError> {
    let result = align(a, b)?;
    Ok(result.score / result.len_a.max(result.len_b) as f64)
}

/// Symmetry score between two strategies given the embedding table.
pub fn symmetry_score(
    a: &[KcIdx],
    b: &[KcIdx],
    embeddings: &EmbeddingTable,
) -> Result<f64, SymmetryError> {
    let ea = positional_embed(a, embeddings)?;
    let eb = positional_embed(b, embeddings)?;
    symmetry_score_embedded(&ea, &eb)
}

/// Coherence of a clustering over strategies.
#[derive(Debug, Clone)]
pub struct CoherenceReport {
    /// Mean pairwise symmetry per cluster (1.0 for clusters with ≤ 1
    /// strategy, which are vacuously symmetric).
    pub per_cluster: Vec<f64>,
    /// Mean over clusters.
    pub overall: f64,
}

/// Mean pairwise symmetry within each cluster, averaged over clusters.
///
/// `clusters` holds indices into `embedded` (one embedded strategy per
/// instance). Clusters whose unordered pair count exceeds `pair_cap` are
/// estimated from `pair_cap` seeded uniform pair draws. Pair scores are
/// computed in parallel but summed in a fixed order, so the result does
/// not depend on the thread count.
pub fn coherence(
    clusters: &[Vec<usize>],
    embedded: &[Vec<Array1<f64>>],
    pair_cap: Option<usize>,
    seed: u64,
) -> CoherenceReport {
    let per_cluster: Vec<f64> = clusters
        .iter()
        .enumerate()
        .map(|(ci, members)| {
            let t = members.len();
            if t <= 1 {
                return 1.0;
            }
            let total_pairs = t * (t - 1) / 2;
            let pairs: Vec<(usize, usize)> = match pair_cap {
                Some(cap) if total_pairs > cap => {
                    let mut rng =
                        rng_from_seed(crate::rng::derive_seed(seed, &format!("coh{ci}")));
                    (0..cap)
                        .map(|_| {
                            let i = rng.random_range(0..t);
                            let mut j = rng.random_range(0..t - 1);
                            if j >= i {
                                j += 1;
                            }
                            (members[i.min(j)], members[i.max(j)])
                        })
                        .collect()
                }
                _ => {
                    let mut all = Vec::with_capacity(total_pairs);
                    for i in 0..t {
                        for j in i + 1..t {
                            all.push((members[i], members[j]));
                        }
                    }
                    all
                }
            };
            let scores: Vec<f64> = pairs
                .par_iter()
                .map(|&(x, y)| {
                    symmetry_score_embedded(&embedded[x], &embedded[y]).unwrap_or(0.0)
                })
                .collect();
            scores.iter().sum::<f64>() / scores.len() as f64
        })
        .collect();
    let overall = if per_cluster.is_empty() {
        1.0
    } else {
        per_cluster.iter().sum::<f64>() / per_cluster.len() as f64
    };
    CoherenceReport { per_cluster, overall }
}

/// Exhaustive best monotone zero-gap alignment score. Exponential; only
/// for cross-checking `align` on short sequences.
pub fn brute_force_alignment_score(a: &[Array1<f64>], b: &[Array1<f64>]) -> f64 {
    fn go(sim: &Array2<f64>, i: usize, j: usize) -> f64 {
        if i == sim.nrows() || j == sim.ncols() {
            return 0.0;
        }
        // a[i] unmatched, or matched to any b[k] with k ≥ j
        let mut best = go(sim, i + 1, j);
        for k in j..sim.ncols() {
            best = best.max(sim[(i, k)] + go(sim, i + 1, k + 1));
        }
        best
    }
    let mut sim = Array2::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        for j in 0..b.len() {
            sim[(i, j)] = step_similarity(&a[i], &b[j]);
        }
    }
    go(&sim, 0, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn unit_axis(axis: usize, d: usize, scale: f64) -> Array1<f64> {
        let mut v = Array1::zeros(d);
        v[axis] = scale;
        v
    }

    fn random_seq(rng: &mut ChaCha8Rng, len: usize, d: usize) -> Vec<Array1<f64>> {
        (0..len)
            .map(|_| Array1::from_iter((0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0)))
            .collect()
    }

    #[test]
    fn encoding_at_position_zero() {
        let v = positional_encoding(0, 4).unwrap();
        assert_eq!(v.to_vec(), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn encoding_norm_is_half_dimension() {
        for (pos, d) in [(0, 8), (3, 8), (17, 32), (149, 64)] {
            let v = positional_encoding(pos, d).unwrap();
            assert_abs_diff_eq!(v.dot(&v), d as f64 / 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn encoding_similarity_decays_with_distance() {
        let p1 = positional_encoding(1, 16).unwrap();
        let p2 = positional_encoding(2, 16).unwrap();
        let p50 = positional_encoding(50, 16).unwrap();
        assert!(p1.dot(&p2) > p1.dot(&p50));
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(positional_encoding(0, 5).is_err());
    }

    #[test]
    fn embed_with_zero_table_is_pure_positions() {
        let table = EmbeddingTable::zeros(1, 3, 1, 6);
        let vs = positional_embed(&[KcIdx(0), KcIdx(2)], &table).unwrap();
        assert_eq!(vs[0], positional_encoding(0, 6).unwrap());
        assert_eq!(vs[1], positional_encoding(1, 6).unwrap());
    }

    #[test]
    fn embed_missing_kc_is_lookup_error() {
        let table = EmbeddingTable::zeros(1, 2, 1, 4);
        match positional_embed(&[KcIdx(5)], &table) {
            Err(SymmetryError::MissingEmbedding(5)) => {}
            other => panic!("expected missing-embedding error, got {other:?}"),
        }
    }

    #[test]
    fn embed_matches_independent_recomputation() {
        let mut table = EmbeddingTable::zeros(1, 3, 1, 4);
        table.kcs[(1, 0)] = 0.5;
        table.kcs[(1, 3)] = -2.0;
        let vs = positional_embed(&[KcIdx(1), KcIdx(1), KcIdx(0)], &table).unwrap();
        for (pos, v) in vs.iter().enumerate() {
            let expect = &positional_encoding(pos, 4).unwrap()
                + &table.kcs.row(if pos < 2 { 1 } else { 0 });
            assert_eq!(v, &expect);
        }
    }

    #[test]
    fn self_alignment_is_full_diagonal() {
        let seq: Vec<Array1<f64>> = (0..4).map(|i| unit_axis(i, 6, 2.0)).collect();
        let r = align(&seq, &seq).unwrap();
        assert_abs_diff_eq!(r.score, 4.0, epsilon = 1e-12);
        assert_eq!(r.aligned_pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn orthogonal_sequences_align_empty() {
        let a: Vec<Array1<f64>> = (0..3).map(|i| unit_axis(i, 8, 1.0)).collect();
        let b: Vec<Array1<f64>> = (0..3).map(|i| unit_axis(i + 4, 8, 1.0)).collect();
        let r = align(&a, &b).unwrap();
        assert_eq!(r.score, 0.0);
        assert!(r.aligned_pairs.is_empty());
    }

    #[test]
    fn empty_sequence_rejected() {
        let a: Vec<Array1<f64>> = vec![unit_axis(0, 4, 1.0)];
        assert!(align(&a, &[]).is_err());
        assert!(align(&[], &a).is_err());
    }

    #[test]
    fn alignment_pairs_strictly_monotone() {
        let mut rng = crate::rng::rng_from_seed(5);
        for _ in 0..50 {
            let n = rng.random_range(1..=6);
            let m = rng.random_range(1..=6);
            let a = random_seq(&mut rng, n, 4);
            let b = random_seq(&mut rng, m, 4);
            let r = align(&a, &b).unwrap();
            for w in r.aligned_pairs.windows(2) {
                assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1);
            }
            assert!(r.score >= 0.0);
        }
    }

    #[test]
    fn alignment_matches_brute_force() {
        let mut rng = crate::rng::rng_from_seed(21);
        // 4-symbol random-embedding alphabet, lengths ≤ 6
        for _ in 0..60 {
            let alphabet = random_seq(&mut rng, 4, 6);
            let n = rng.random_range(1..=6);
            let m = rng.random_range(1..=6);
            let a: Vec<Array1<f64>> =
                (0..n).map(|_| alphabet[rng.random_range(0..4)].clone()).collect();
            let b: Vec<Array1<f64>> =
                (0..m).map(|_| alphabet[rng.random_range(0..4)].clone()).collect();
            let fast = align(&a, &b).unwrap().score;
            let brute = brute_force_alignment_score(&a, &b);
            assert_abs_diff_eq!(fast, brute, epsilon = 1e-12);
        }
    }

    #[test]
    fn prepending_orthogonal_step_keeps_score() {
        let a: Vec<Array1<f64>> = (0..3).map(|i| unit_axis(i, 8, 1.0)).collect();
        let b = a.clone();
        let base = align(&a, &b).unwrap().score;
        let mut a2 = vec![unit_axis(7, 8, 1.0)];
        a2.extend(a.iter().cloned());
        let extended = align(&a2, &b).unwrap().score;
        assert_abs_diff_eq!(base, extended, epsilon = 1e-12);
    }

    #[test]
    fn score_identical_strategies_is_one() {
        let mut table = EmbeddingTable::zeros(1, 3, 1, 8);
        for k in 0..3 {
            table.kcs[(k, k)] = 3.0;
        }
        let kcs = [KcIdx(0), KcIdx(1), KcIdx(2)];
        let r = symmetry_score(&kcs, &kcs, &table).unwrap();
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn score_opposed_strategies_is_zero() {
        // huge opposite-sign components so position vectors cannot create
        // positive cosine
        let a: Vec<Array1<f64>> = vec![unit_axis(0, 4, 1e6)];
        let b: Vec<Array1<f64>> = vec![unit_axis(0, 4, -1e6)];
        assert_eq!(symmetry_score_embedded(&a, &b).unwrap(), 0.0);
    }

    /// Three strategies sharing core steps (same shared-step embeddings),
    /// with different lengths and extra steps. Pairwise r stays > 0.5 and
    /// matches an independent brute-force recomputation.
    #[test]
    fn shared_core_strategies_pairwise_symmetry() {
        let d = 8;
        let scale = 6.0;
        // axes: 0 = coefficient work, 1 = constants, 2 = cleanup,
        // 3 = solve; 4..7 unique filler steps
        let sym = |axis: usize| unit_axis(axis, d, scale);
        let embed_seq = |axes: &[usize]| -> Vec<Array1<f64>> {
            axes.iter()
                .enumerate()
                .map(|(pos, &ax)| &sym(ax) + &positional_encoding(pos, d).unwrap())
                .collect()
        };
        let s1 = embed_seq(&[4, 0, 1, 0, 5, 0, 2, 3]);
        let s2 = embed_seq(&[1, 0, 0, 2, 3]);
        let s3 = embed_seq(&[0, 0, 6, 7, 2, 3]);
        let pairs = [(&s1, &s2), (&s1, &s3), (&s2, &s3)];
        for (a, b) in pairs {
            let r = symmetry_score_embedded(a, b).unwrap();
            let r_swapped = symmetry_score_embedded(b, a).unwrap();
            assert!(r > 0.5, "expected r > 0.5, got {r}");
            assert!(r <= 1.0);
            assert_abs_diff_eq!(r, r_swapped, epsilon = 1e-12);
            let oracle = brute_force_alignment_score(a, b) / a.len().max(b.len()) as f64;
            assert_abs_diff_eq!(r, oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn coherence_singletons_and_identical() {
        let table = {
            let mut t = EmbeddingTable::zeros(1, 2, 1, 4);
            t.kcs[(0, 0)] = 2.0;
            t.kcs[(1, 1)] = 2.0;
            t
        };
        let strat = positional_embed(&[KcIdx(0), KcIdx(1)], &table).unwrap();
        let embedded = vec![strat.clone(), strat];
        let rep = coherence(&[vec![0], vec![1]], &embedded, None, 0);
        assert_eq!(rep.overall, 1.0);
        let rep = coherence(&[vec![0, 1]], &embedded, None, 0);
        assert_abs_diff_eq!(rep.overall, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn coherence_matches_exhaustive_double_loop() {
        let mut rng = crate::rng::rng_from_seed(33);
        let embedded: Vec<Vec<Array1<f64>>> = (0..6)
            .map(|_| {
                let len = rng.random_range(2..=5);
                random_seq(&mut rng, len, 6)
                    .into_iter()
                    .enumerate()
                    .map(|(pos, mut v)| {
                        v += &positional_encoding(pos, 6).unwrap();
                        v
                    })
                    .collect()
            })
            .collect();
        let clusters = vec![vec![0, 1, 2], vec![3, 4, 5]];
        let rep = coherence(&clusters, &embedded, None, 0);
        // exhaustive double loop, written independently
        let mut expect = 0.0;
        for cluster in &clusters {
            let mut sum = 0.0;
            let mut count = 0;
            for i in 0..cluster.len() {
                for j in 0..cluster.len() {
                    if i < j {
                        sum += symmetry_score_embedded(
                            &embedded[cluster[i]],
                            &embedded[cluster[j]],
                        )
                        .unwrap();
                        count += 1;
                    }
                }
            }
            expect += sum / count as f64;
        }
        expect /= clusters.len() as f64;
        assert_abs_diff_eq!(rep.overall, expect, epsilon = 1e-12);
    }

    #[test]
    fn coherence_is_permutation_invariant() {
        let mut rng = crate::rng::rng_from_seed(17);
        let embedded: Vec<Vec<Array1<f64>>> =
            (0..8).map(|_| random_seq(&mut rng, 3, 4)).collect();
        let a = coherence(&[vec![0, 1, 2, 3], vec![4, 5, 6, 7]], &embedded, None, 0);
        let b = coherence(&[vec![7, 5, 6, 4], vec![3, 2, 1, 0]], &embedded, None, 0);
        assert_abs_diff_eq!(a.overall, b.overall, epsilon = 1e-12);
    }

    #[test]
    fn coherence_pair_cap_is_deterministic() {
        let mut rng = crate::rng::rng_from_seed(29);
        let embedded: Vec<Vec<Array1<f64>>> =
            (0..40).map(|_| random_seq(&mut rng, 3, 4)).collect();
        let cluster: Vec<usize> = (0..40).collect();
        let a = coherence(&[cluster.clone()], &embedded, Some(50), 7);
        let b = coherence(&[cluster], &embedded, Some(50), 7);
        assert_eq!(a.overall, b.overall);
        assert!(a.overall >= 0.0 && a.overall <= 1.0);
    }
}
