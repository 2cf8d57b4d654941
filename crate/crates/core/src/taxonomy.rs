//! The skill label universe: leaf skills with descriptions and their Level-2
//! ancestor, plus the pair samplers used for multi-skill generation.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = [
    "skill_id",
    "preferred_label",
    "description",
    "level2_id",
    "level2_label",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skill {
    pub skill_id: String,
    pub preferred_label: String,
    pub description: String,
    pub level2_id: String,
    pub level2_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Level2Group {
    pub level2_id: String,
    pub level2_label: String,
    /// Indices into [`SkillTaxonomy::skills`], in file order.
    pub members: Vec<usize>,
}

/// Warnings that do not prevent loading.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    /// Groups of skill ids sharing an identical description.
    pub duplicate_descriptions: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct SkillTaxonomy {
    skills: Vec<Skill>,
    groups: Vec<Level2Group>,
    by_id: HashMap<String, usize>,
}

impl PartialEq for SkillTaxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.skills == other.skills
    }
}

impl SkillTaxonomy {
    /// Validates the skills and builds the Level-2 partition.
    pub fn new(skills: Vec<Skill>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(skills.len());
        let mut groups: Vec<Level2Group> = Vec::new();
        let mut group_pos: HashMap<String, usize> = HashMap::new();
        for (i, s) in skills.iter().enumerate() {
            let row = i + 1;
            if s.skill_id.trim().is_empty() {
                return Err(Error::TaxonomyLoad {
                    row,
                    message: "missing skill_id".into(),
                });
            }
            if s.description.trim().is_empty() {
                return Err(Error::TaxonomyLoad {
                    row,
                    message: format!("empty description for skill_id {:?}", s.skill_id),
                });
            }
            if s.level2_id.trim().is_empty() {
                return Err(Error::TaxonomyLoad {
                    row,
                    message: format!("missing level2_id for skill_id {:?}", s.skill_id),
                });
            }
            if let Some(prev) = by_id.insert(s.skill_id.clone(), i) {
                return Err(Error::TaxonomyLoad {
                    row,
                    message: format!(
                        "duplicate skill_id {:?} (first seen at row {})",
                        s.skill_id,
                        prev + 1
                    ),
                });
            }
            let g = *group_pos.entry(s.level2_id.clone()).or_insert_with(|| {
                groups.push(Level2Group {
                    level2_id: s.level2_id.clone(),
                    level2_label: s.level2_label.clone(),
                    members: Vec::new(),
                });
                groups.len() - 1
            });
            groups[g].members.push(i);
        }
        Ok(Self {
            skills,
            groups,
            by_id,
        })
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let found: Vec<&str> = headers.iter().collect();
        if found != CSV_HEADER {
            return Err(Error::TaxonomyLoad {
                row: 0,
                message: format!("expected header {:?}, found {:?}", CSV_HEADER, found),
            });
        }
        let mut skills = Vec::new();
        for (i, rec) in rdr.deserialize::<Skill>().enumerate() {
            let skill = rec.map_err(|e| Error::TaxonomyLoad {
                row: i + 1,
                message: e.to_string(),
            })?;
            skills.push(skill);
        }
        Self::new(skills)
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        for s in &self.skills {
            wtr.serialize(s)?;
        }
        wtr.into_inner()
            .map_err(|e| Error::invalid(format!("csv flush: {e}")))
    }

    pub fn skills(&self) -> &[Skill] {
        &self.skills
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn groups(&self) -> &[Level2Group] {
        &self.groups
    }

    pub fn index_of(&self, skill_id: &str) -> Option<usize> {
        self.by_id.get(skill_id).copied()
    }

    pub fn get(&self, skill_id: &str) -> Option<&Skill> {
        self.index_of(skill_id).map(|i| &self.skills[i])
    }

    /// Level-2 id → member skill ids, in first-appearance order.
    pub fn level2_groups(&self) -> Vec<(String, Vec<String>)> {
        self.groups
            .iter()
            .map(|g| {
                let ids = g
                    .members
                    .iter()
                    .map(|&i| self.skills[i].skill_id.clone())
                    .collect();
                (g.level2_id.clone(), ids)
            })
            .collect()
    }

    pub fn validation_report(&self) -> ValidationReport {
        let mut by_desc: Vec<(&str, Vec<String>)> = Vec::new();
        let mut pos: HashMap<&str, usize> = HashMap::new();
        for s in &self.skills {
            let k = s.description.trim();
            match pos.get(k) {
                Some(&p) => by_desc[p].1.push(s.skill_id.clone()),
                None => {
                    pos.insert(k, by_desc.len());
                    by_desc.push((k, vec![s.skill_id.clone()]));
                }
            }
        }
        ValidationReport {
            duplicate_descriptions: by_desc
                .into_iter()
                .filter(|(_, ids)| ids.len() > 1)
                .map(|(_, ids)| ids)
                .collect(),
        }
    }

    /// Two distinct skills from the same Level-2 group: a group is drawn
    /// uniformly among groups with at least two members, then an ordered
    /// pair uniformly within it.
    pub fn sample_constrained_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(&Skill, &Skill)> {
        let eligible: Vec<&Level2Group> =
            self.groups.iter().filter(|g| g.members.len() >= 2).collect();
        if eligible.is_empty() {
            return Err(Error::Sampling(
                "no Level-2 group contains at least two skills".into(),
            ));
        }
        let g = eligible[rng.gen_range(0..eligible.len())];
        let (a, b) = distinct_pair(g.members.len(), rng);
        Ok((&self.skills[g.members[a]], &self.skills[g.members[b]]))
    }

    /// Two distinct skills drawn uniformly, ignoring the hierarchy.
    pub fn sample_uniform_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(&Skill, &Skill)> {
        if self.skills.len() < 2 {
            return Err(Error::Sampling(format!(
                "need at least two skills, taxonomy has {}",
                self.skills.len()
            )));
        }
        let (a, b) = distinct_pair(self.skills.len(), rng);
        Ok((&self.skills[a], &self.skills[b]))
    }
}

fn distinct_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
    let a = rng.gen_range(0..n);
    let mut b = rng.gen_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

pub fn load_taxonomy(path: &Path) -> Result<SkillTaxonomy> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    SkillTaxonomy::from_csv_reader(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn skill(id: &str, l2: &str) -> Skill {
        Skill {
            skill_id: id.into(),
            preferred_label: format!("label {id}"),
            description: format!("description of {id}"),
            level2_id: l2.into(),
            level2_label: format!("group {l2}"),
        }
    }

    const THREE_ROWS: &str = "skill_id,preferred_label,description,level2_id,level2_label\n\
        a,Python,\"Programming, in Python\",S1,ICT\n\
        b,Java,Programming in Java,S1,ICT\n\
        c,Teamwork,Working with others,S2,Social\n";

    #[test]
    fn loads_three_rows_two_groups() {
        let tax = SkillTaxonomy::from_csv_reader(THREE_ROWS.as_bytes()).unwrap();
        assert_eq!(tax.len(), 3);
        assert_eq!(tax.groups().len(), 2);
        assert_eq!(tax.skills()[0].description, "Programming, in Python");
        assert_eq!(
            tax.level2_groups(),
            vec![
                ("S1".to_string(), vec!["a".to_string(), "b".to_string()]),
                ("S2".to_string(), vec!["c".to_string()])
            ]
        );
    }

    #[test]
    fn duplicate_id_names_the_id() {
        let data = "skill_id,preferred_label,description,level2_id,level2_label\n\
            a,x,d1,S1,g\n\
            a,y,d2,S1,g\n";
        let err = SkillTaxonomy::from_csv_reader(data.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("\"a\""), "{msg}");
        assert!(msg.contains("row 2"), "{msg}");
    }

    #[test]
    fn empty_description_and_missing_id_rejected() {
        let data = "skill_id,preferred_label,description,level2_id,level2_label\na,x,,S1,g\n";
        assert!(SkillTaxonomy::from_csv_reader(data.as_bytes()).is_err());
        let data = "skill_id,preferred_label,description,level2_id,level2_label\n,x,d,S1,g\n";
        assert!(SkillTaxonomy::from_csv_reader(data.as_bytes()).is_err());
    }

    #[test]
    fn wrong_header_rejected() {
        let data = "id,label,description,level2_id,level2_label\na,x,d,S1,g\n";
        assert!(SkillTaxonomy::from_csv_reader(data.as_bytes()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let tax = SkillTaxonomy::from_csv_reader(THREE_ROWS.as_bytes()).unwrap();
        let bytes = tax.to_csv_bytes().unwrap();
        let again = SkillTaxonomy::from_csv_reader(bytes.as_slice()).unwrap();
        assert_eq!(tax, again);
    }

    #[test]
    fn duplicate_descriptions_are_flagged_not_rejected() {
        let mut a = skill("a", "S1");
        let mut b = skill("b", "S1");
        a.description = "same".into();
        b.description = "same".into();
        let tax = SkillTaxonomy::new(vec![a, b, skill("c", "S2")]).unwrap();
        assert_eq!(
            tax.validation_report().duplicate_descriptions,
            vec![vec!["a".to_string(), "b".to_string()]]
        );
    }

    #[test]
    fn constrained_pair_single_eligible_group() {
        let tax = SkillTaxonomy::new(vec![skill("a", "S1"), skill("b", "S1"), skill("c", "S2")]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let (x, y) = tax.sample_constrained_pair(&mut rng).unwrap();
            let mut ids = [x.skill_id.as_str(), y.skill_id.as_str()];
            ids.sort();
            assert_eq!(ids, ["a", "b"]);
        }
    }

    #[test]
    fn constrained_pair_requires_group_of_two() {
        let tax = SkillTaxonomy::new(vec![skill("a", "S1"), skill("b", "S2")]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        assert!(matches!(
            tax.sample_constrained_pair(&mut rng),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn uniform_pair_requires_two_skills() {
        let tax = SkillTaxonomy::new(vec![skill("a", "S1")]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        assert!(tax.sample_uniform_pair(&mut rng).is_err());
        let tax = SkillTaxonomy::new(vec![skill("a", "S1"), skill("b", "S2")]).unwrap();
        let (x, y) = tax.sample_uniform_pair(&mut rng).unwrap();
        assert_ne!(x.skill_id, y.skill_id);
    }
}
