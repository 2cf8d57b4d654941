//! Constructed benchmark data: a small synthetic taxonomy in the target
//! script and postings assembled from generated sentences.
//!
//! Every skill owns four two-character keywords that no other skill uses,
//! and every Level-2 group owns two shared keywords, so lexical signal alone
//! determines the correct label whenever the keywords survive paraphrasing.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evaluation::GoldPosting;
use crate::syngen::{BuildConfig, SyntheticSample, Variant, VariantCounts};
use crate::taxonomy::{Skill, SkillTaxonomy};

const FILLER: &str = "以及相关的专业能力类";

/// Code points reserved for toy keywords. The stub generator draws its
/// paraphrase vocabulary from a disjoint range.
const KEYWORD_RANGE: std::ops::Range<u32> = 0x4E00..0x7800;

fn keyword_pool(rng: &mut ChaCha8Rng, needed: usize) -> Vec<char> {
    let reserved: HashSet<char> = FILLER.chars().chain(crate::syngen::stub_reserved_chars()).collect();
    let mut pool: Vec<char> = KEYWORD_RANGE
        .filter_map(char::from_u32)
        .filter(|c| !reserved.contains(c))
        .collect();
    pool.shuffle(rng);
    pool.truncate(needed);
    pool
}

/// A taxonomy of `n_skills` skills spread evenly over `n_groups` Level-2
/// groups. Deterministic in `seed`.
pub fn toy_taxonomy(n_skills: usize, n_groups: usize, seed: u64) -> Result<SkillTaxonomy> {
    if n_groups == 0 || n_skills < n_groups {
        return Err(Error::invalid(format!(
            "toy taxonomy needs n_skills >= n_groups >= 1, got {n_skills}/{n_groups}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let needed = (n_skills * 4 + n_groups * 2) * 2;
    let pool = keyword_pool(&mut rng, needed);
    if pool.len() < needed {
        return Err(Error::invalid("toy taxonomy too large for the keyword pool"));
    }
    let mut chars = pool.into_iter();
    let mut word = || -> String { chars.by_ref().take(2).collect() };

    let group_words: Vec<[String; 2]> = (0..n_groups).map(|_| [word(), word()]).collect();
    let mut skills = Vec::with_capacity(n_skills);
    for i in 0..n_skills {
        let g = i % n_groups;
        let kw: Vec<String> = (0..4).map(|_| word()).collect();
        let [g1, g2] = &group_words[g];
        skills.push(Skill {
            skill_id: format!("toy-{:02}-{:03}", g, i),
            preferred_label: format!("{}{}", kw[0], kw[1]),
            description: format!(
                "{}、{}、{}、{}以及{}、{}相关的专业能力",
                kw[0], kw[1], kw[2], kw[3], g1, g2
            ),
            level2_id: format!("L2-{g:02}"),
            level2_label: format!("{g1}{g2}类"),
        });
    }
    // Keep file order grouped by Level-2 id, as taxonomy exports are.
    skills.sort_by(|a, b| a.level2_id.cmp(&b.level2_id).then(a.skill_id.cmp(&b.skill_id)));
    SkillTaxonomy::new(skills)
}

/// Stub paraphrase rate for the noisy toy setting.
pub const TOY_PARAPHRASE_RATE: f64 = 0.5;

/// Generation counts for the toy benchmark: 30 single-skill sentences per
/// skill, 50 same-group pairs with 3 sentences each and 100 skill-free
/// sentences.
pub fn toy_build_config(seed: u64) -> BuildConfig {
    BuildConfig {
        counts: VariantCounts {
            single_per_skill: 30,
            multi_constrained_pairs: 50,
            multi_random_pairs: 0,
            multi_per_pair: 3,
            none_total: 100,
            none_per_prompt: 10,
        },
        seed,
        ..BuildConfig::default()
    }
}

/// Assembles postings from generated sentences. Each posting takes
/// `skill_sentences` positive samples and `none_sentences` negatives,
/// shuffles them and joins them with the full-width period. Gold labels are
/// the union of the positives' skill ids.
pub fn toy_postings(
    positives: &[SyntheticSample],
    negatives: &[SyntheticSample],
    n_postings: usize,
    skill_sentences: usize,
    none_sentences: usize,
    seed: u64,
) -> Result<Vec<GoldPosting>> {
    if positives.is_empty() || skill_sentences == 0 {
        return Err(Error::invalid("toy postings need at least one positive sentence"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_postings);
    for p in 0..n_postings {
        let mut parts: Vec<&SyntheticSample> = positives
            .choose_multiple(&mut rng, skill_sentences.min(positives.len()))
            .collect();
        if !negatives.is_empty() {
            for _ in 0..none_sentences {
                parts.push(&negatives[rng.gen_range(0..negatives.len())]);
            }
        }
        parts.shuffle(&mut rng);
        let gold: BTreeSet<String> = parts
            .iter()
            .filter(|s| s.variant != Variant::None)
            .flat_map(|s| s.skill_ids.iter().cloned())
            .collect();
        let text = parts
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("。")
            + "。";
        out.push(GoldPosting {
            posting_id: format!("post-{p:05}"),
            text,
            skill_ids: gold.into_iter().collect(),
        });
    }
    Ok(out)
}
