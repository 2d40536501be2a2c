//! Synthetic corpus generator with planted ground truth.
//!
//! The generator plants `num_strategy_groups` joint student/problem groups:
//! each problem group has a KC pool and a canonical core sequence, and each
//! student group follows a variant of that core (lower-skill groups insert
//! extra review steps, mirroring strategies that share a core but differ in
//! step count). Students attempt problems from their own group, mastery is
//! stratified by group, and CFA outcomes are drawn per step from the
//! group's mastery profile. Everything is a pure function of the seed.
//!
//! The shaping knobs (`group_skew`, `problem_variation`, ...) default to
//! the degenerate values, where every instance of a group pair shares the
//! identical canonical strategy.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

use super::{
    Corpus, CorpusError, Instance, InteractionRecord, KcIdx, ProblemIdx, SectionIdx, StudentIdx,
    UnitIdx, Vocabulary,
};
use crate::rng::{derive_seed, rng_from_seed};

/// Problems per section; sections drive the opportunity sequences used to
/// train the mastery model.
const PROBLEMS_PER_SECTION: usize = 5;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub num_students: usize,
    pub num_problems: usize,
    pub num_kcs: usize,
    pub num_strategy_groups: usize,
    /// 0 = outcomes follow the mastery profile exactly; 1 = coin flips.
    pub mastery_noise: f64,
    pub seed: u64,
    /// Distinct problems each student attempts (capped at the group size).
    pub problems_per_student: usize,
    /// 0 = equal-size student groups; larger values shrink later groups
    /// (group g weight ∝ (1 + skew)^(G−1−g)).
    pub group_skew: f64,
    /// Fraction of core positions re-drawn per problem, giving each problem
    /// its own strategy surface within the group's canonical frame.
    pub problem_variation: f64,
    /// Success probability on KCs the group has not mastered.
    pub unmastered_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_students: 30,
            num_problems: 12,
            num_kcs: 6,
            num_strategy_groups: 1,
            mastery_noise: 0.0,
            seed: 0,
            problems_per_student: 8,
            group_skew: 0.0,
            problem_variation: 0.0,
            unmastered_rate: 0.35,
        }
    }
}

/// Planted structure behind a synthetic corpus.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Strategy group per student vocabulary index.
    pub student_group: Vec<usize>,
    /// Strategy group per problem vocabulary index.
    pub problem_group: Vec<usize>,
    /// Group-level canonical sequence per (student group, problem group).
    pub canonical: BTreeMap<(usize, usize), Vec<KcIdx>>,
    /// Exact planted KC sequence per instance.
    pub planted: BTreeMap<Instance, Vec<KcIdx>>,
}

impl GroundTruth {
    /// Sidecar JSON with `student_group`, `problem_group`, and
    /// `canonical_strategies` keys (plus the exact per-instance sequences).
    pub fn to_sidecar_json(&self, corpus: &Corpus) -> serde_json::Value {
        let students: BTreeMap<String, usize> = self
            .student_group
            .iter()
            .enumerate()
            .map(|(i, &g)| (corpus.vocab.students.name(i).to_string(), g))
            .collect();
        let problems: BTreeMap<String, usize> = self
            .problem_group
            .iter()
            .enumerate()
            .map(|(i, &g)| (corpus.vocab.problems.name(i).to_string(), g))
            .collect();
        let canonical: BTreeMap<String, Vec<String>> = self
            .canonical
            .iter()
            .map(|(&(a, b), kcs)| {
                (
                    format!("sg{a}:pg{b}"),
                    kcs.iter().map(|k| corpus.vocab.kcs.name(k.0).to_string()).collect(),
                )
            })
            .collect();
        let planted: BTreeMap<String, Vec<String>> = self
            .planted
            .iter()
            .map(|(inst, kcs)| {
                (
                    format!(
                        "{}|{}",
                        corpus.vocab.students.name(inst.student.0),
                        corpus.vocab.problems.name(inst.problem.0)
                    ),
                    kcs.iter().map(|k| corpus.vocab.kcs.name(k.0).to_string()).collect(),
                )
            })
            .collect();
        json!({
            "student_group": students,
            "problem_group": problems,
            "canonical_strategies": canonical,
            "planted_strategies": planted,
        })
    }
}

/// Largest-remainder split of `total` into `parts` chunks weighted by `w`,
/// each chunk ≥ 1.
fn apportion(total: usize, w: &[f64]) -> Vec<usize> {
    let parts = w.len();
    assert!(total >= parts);
    let sum: f64 = w.iter().sum();
    let ideal: Vec<f64> = w.iter().map(|x| total as f64 * x / sum).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| (x.floor() as usize).max(1)).collect();
    let mut assigned: usize = counts.iter().sum();
    // distribute leftovers by largest fractional part (ties by index)
    let mut order: Vec<usize> = (0..parts).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut i = 0;
    while assigned < total {
        counts[order[i % parts]] += 1;
        assigned += 1;
        i += 1;
    }
    while assigned > total {
        // can happen when the max(1) floor overshoots; trim largest chunks
        let j = (0..parts).max_by_key(|&j| counts[j]).unwrap();
        counts[j] -= 1;
        assigned -= 1;
    }
    counts
}

/// Group index per entity given per-group counts (contiguous blocks).
fn block_groups(counts: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (g, &c) in counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(g, c));
    }
    out
}

/// Mastery profile: success probability of student group `a` on KC `k`.
///
/// Group `a` masters the first `(a+1)/G` fraction of each pool (higher
/// groups master supersets), so group-level CFA rates are stratified.
fn mastery(
    a: usize,
    kc: usize,
    pools: &[(usize, usize)],
    groups: usize,
    unmastered_rate: f64,
) -> f64 {
    let (pool_start, pool_len) = pools
        .iter()
        .copied()
        .find(|&(s, l)| kc >= s && kc < s + l)
        .expect("kc belongs to a pool");
    let rank = kc - pool_start;
    let level = (a + 1) as f64 / groups as f64;
    let mastered = (rank as f64) < (level * pool_len as f64).ceil();
    if mastered {
        1.0
    } else {
        unmastered_rate
    }
}

/// Generate a corpus and its planted ground truth. Deterministic for a
/// fixed config: the same seed yields byte-identical exports.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(Corpus, GroundTruth), CorpusError> {
    let g = config.num_strategy_groups;
    if g < 1 {
        return Err(CorpusError::Config("num_strategy_groups must be ≥ 1".into()));
    }
    for (what, n) in [
        ("num_students", config.num_students),
        ("num_problems", config.num_problems),
        ("num_kcs", config.num_kcs),
    ] {
        if n < g {
            return Err(CorpusError::Config(format!(
                "{what} = {n} is smaller than num_strategy_groups = {g}"
            )));
        }
    }
    if !(0.0..=1.0).contains(&config.mastery_noise) {
        return Err(CorpusError::Config("mastery_noise must be in [0, 1]".into()));
    }
    if config.problems_per_student == 0 {
        return Err(CorpusError::Config("problems_per_student must be ≥ 1".into()));
    }

    // --- planted structure ------------------------------------------------
    let even = vec![1.0; g];
    let skewed: Vec<f64> = (0..g).map(|i| (1.0 + config.group_skew).powi((g - 1 - i) as i32)).collect();
    let student_counts = apportion(config.num_students, &skewed);
    let problem_counts = apportion(config.num_problems, &even);
    let kc_counts = apportion(config.num_kcs, &even);
    let student_group = block_groups(&student_counts);
    let problem_group = block_groups(&problem_counts);
    let mut pools = Vec::with_capacity(g); // (start kc, len) per group
    let mut start = 0;
    for &c in &kc_counts {
        pools.push((start, c));
        start += c;
    }

    // Group cores: one canonical sequence per problem group.
    let mut cores: Vec<Vec<usize>> = Vec::with_capacity(g);
    for (b, &(pool_start, pool_len)) in pools.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(config.seed, &format!("core{b}")));
        let len = 3 + b % 3;
        let core = (0..len).map(|_| pool_start + rng.random_range(0..pool_len)).collect();
        cores.push(core);
    }

    // Canonical per (student group, problem group): the core plus review
    // steps inserted for lower-skill groups.
    let mut canonical: BTreeMap<(usize, usize), Vec<KcIdx>> = BTreeMap::new();
    let mut inserts: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for a in 0..g {
        for b in 0..g {
            let mut rng = rng_from_seed(derive_seed(config.seed, &format!("decor{a}.{b}")));
            let (pool_start, pool_len) = pools[b];
            let n_inserts = g - 1 - a;
            let mut ins: Vec<(usize, usize)> = (0..n_inserts)
                .map(|_| {
                    let pos = rng.random_range(0..=cores[b].len());
                    let kc = pool_start + rng.random_range(0..pool_len);
                    (pos, kc)
                })
                .collect();
            ins.sort();
            let mut seq = cores[b].clone();
            for &(pos, kc) in ins.iter().rev() {
                seq.insert(pos, kc);
            }
            canonical.insert((a, b), seq.iter().map(|&k| KcIdx(k)).collect());
            inserts.insert((a, b), ins);
        }
    }

    // Per-problem core: group core with a seeded fraction of positions
    // re-drawn from the pool.
    let problem_core = |p: usize| -> Vec<usize> {
        let b = problem_group[p];
        let mut core = cores[b].clone();
        if config.problem_variation > 0.0 {
            let mut rng = rng_from_seed(derive_seed(config.seed, &format!("pvar{p}")));
            let (pool_start, pool_len) = pools[b];
            for slot in core.iter_mut() {
                if rng.random::<f64>() < config.problem_variation {
                    *slot = pool_start + rng.random_range(0..pool_len);
                }
            }
        }
        core
    };

    // --- vocabulary (index == generation order) ---------------------------
    let mut vocab = Vocabulary::default();
    let swidth = config.num_students.to_string().len().max(2);
    let pwidth = config.num_problems.to_string().len().max(2);
    let kwidth = config.num_kcs.to_string().len().max(2);
    for s in 0..config.num_students {
        vocab.students.intern(&format!("S{s:0swidth$}"));
    }
    for p in 0..config.num_problems {
        vocab.problems.intern(&format!("P{p:0pwidth$}"));
    }
    for k in 0..config.num_kcs {
        vocab.kcs.intern(&format!("K{k:0kwidth$}"));
    }
    for grp in 0..g {
        vocab.units.intern(&format!("U{grp}"));
    }
    // sections: per group, PROBLEMS_PER_SECTION problems each
    let mut problem_section: Vec<usize> = Vec::with_capacity(config.num_problems);
    {
        let mut within: Vec<usize> = vec![0; g];
        for &b in problem_group.iter().take(config.num_problems) {
            let j = within[b] / PROBLEMS_PER_SECTION;
            within[b] += 1;
            let sec = vocab.sections.intern(&format!("U{b}.S{j}"));
            problem_section.push(sec);
        }
    }

    // --- records -----------------------------------------------------------
    let group_problems: Vec<Vec<usize>> = (0..g)
        .map(|b| (0..config.num_problems).filter(|&p| problem_group[p] == b).collect())
        .collect();

    let mut records = Vec::new();
    let mut planted: BTreeMap<Instance, Vec<KcIdx>> = BTreeMap::new();
    for s in 0..config.num_students {
        let a = student_group[s];
        let mut pick_rng = rng_from_seed(derive_seed(config.seed, &format!("inst{s}")));
        let mut cfa_rng = rng_from_seed(derive_seed(config.seed, &format!("cfa{s}")));
        let mut pool: Vec<usize> = group_problems[a].clone();
        pool.shuffle(&mut pick_rng);
        pool.truncate(config.problems_per_student.min(pool.len()));

        let mut seq = 0usize;
        for &p in &pool {
            let b = problem_group[p];
            let mut steps = problem_core(p);
            for &(pos, kc) in inserts[&(a, b)].iter().rev() {
                steps.insert(pos, kc);
            }
            planted.insert(
                Instance { student: StudentIdx(s), problem: ProblemIdx(p) },
                steps.iter().map(|&k| KcIdx(k)).collect(),
            );
            for (i, &kc) in steps.iter().enumerate() {
                let m = mastery(a, kc, &pools, g, config.unmastered_rate);
                let prob = (1.0 - config.mastery_noise) * m + 0.5 * config.mastery_noise;
                let cfa = cfa_rng.random::<f64>() < prob;
                records.push(InteractionRecord {
                    student: StudentIdx(s),
                    unit: UnitIdx(a),
                    section: SectionIdx(problem_section[p]),
                    problem: ProblemIdx(p),
                    step_index: i,
                    kc: KcIdx(kc),
                    cfa,
                    sequence_ordinal: seq,
                });
                seq += 1;
            }
        }
    }

    let truth = GroundTruth { student_group, problem_group, canonical, planted };
    Ok((Corpus { records, vocab }, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{extract_strategies, write_canonical_tsv};

    #[test]
    fn degenerate_config_identical_strategy_all_correct() {
        let config = SyntheticConfig {
            num_students: 10,
            num_problems: 6,
            num_kcs: 4,
            num_strategy_groups: 1,
            mastery_noise: 0.0,
            seed: 9,
            problems_per_student: 4,
            ..Default::default()
        };
        let (corpus, truth) = generate_synthetic(&config).unwrap();
        assert!(corpus.records.iter().all(|r| r.cfa));
        let strategies = extract_strategies(&corpus.records);
        let first = strategies.values().next().unwrap().kcs.clone();
        assert!(strategies.values().all(|s| s.kcs == first));
        assert_eq!(&first, truth.canonical.get(&(0, 0)).unwrap());
    }

    #[test]
    fn extraction_recovers_planted_strategies() {
        let config = SyntheticConfig {
            num_students: 10,
            num_problems: 9,
            num_kcs: 6,
            num_strategy_groups: 3,
            mastery_noise: 0.3,
            seed: 42,
            problems_per_student: 5,
            problem_variation: 0.5,
            group_skew: 1.0,
            ..Default::default()
        };
        let (corpus, truth) = generate_synthetic(&config).unwrap();
        let strategies = extract_strategies(&corpus.records);
        assert!(strategies.len() >= 50 - 20); // 10 students × ≤5 problems, minus cap effects
        assert_eq!(strategies.len(), truth.planted.len());
        for (inst, strat) in &strategies {
            assert_eq!(&strat.kcs, truth.planted.get(inst).unwrap(), "instance {inst:?}");
        }
    }

    #[test]
    fn within_group_cores_match_exactly_at_zero_variation() {
        let config = SyntheticConfig {
            num_students: 12,
            num_problems: 9,
            num_kcs: 6,
            num_strategy_groups: 3,
            mastery_noise: 0.0,
            seed: 7,
            problems_per_student: 3,
            ..Default::default()
        };
        let (corpus, truth) = generate_synthetic(&config).unwrap();
        let strategies = extract_strategies(&corpus.records);
        // string-equality oracle: every instance of group pair (a, a) equals
        // the canonical sequence exactly
        for (inst, strat) in &strategies {
            let a = truth.student_group[inst.student.0];
            let b = truth.problem_group[inst.problem.0];
            assert_eq!(a, b, "students attempt their own group's problems");
            assert_eq!(&strat.kcs, truth.canonical.get(&(a, b)).unwrap());
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let config = SyntheticConfig {
            num_students: 20,
            num_problems: 10,
            num_kcs: 6,
            num_strategy_groups: 2,
            mastery_noise: 0.4,
            seed: 123,
            ..Default::default()
        };
        let (c1, t1) = generate_synthetic(&config).unwrap();
        let (c2, t2) = generate_synthetic(&config).unwrap();
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        write_canonical_tsv(&c1, &mut b1).unwrap();
        write_canonical_tsv(&c2, &mut b2).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(
            serde_json::to_string(&t1.to_sidecar_json(&c1)).unwrap(),
            serde_json::to_string(&t2.to_sidecar_json(&c2)).unwrap()
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let config = SyntheticConfig {
            num_students: 2,
            num_strategy_groups: 3,
            num_problems: 9,
            num_kcs: 6,
            ..Default::default()
        };
        assert!(generate_synthetic(&config).is_err());
    }

    #[test]
    fn group_sizes_respect_skew() {
        let config = SyntheticConfig {
            num_students: 70,
            num_problems: 9,
            num_kcs: 6,
            num_strategy_groups: 3,
            group_skew: 1.0, // weights 4:2:1
            ..Default::default()
        };
        let (_, truth) = generate_synthetic(&config).unwrap();
        let mut counts = [0usize; 3];
        for &g in &truth.student_group {
            counts[g] += 1;
        }
        assert_eq!(counts, [40, 20, 10]);
    }
}
