//! Discrete trajectories and their CSV form.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One `(state, action, next_state)` transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

impl Step {
    pub fn new(state: usize, action: usize, next_state: usize) -> Self {
        Step {
            state,
            action,
            next_state,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub steps: Vec<Step>,
    pub demographics: BTreeMap<String, String>,
    pub died_in_hospital: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn initial_state(&self) -> Option<usize> {
        self.steps.first().map(|s| s.state)
    }

    pub fn final_state(&self) -> Option<usize> {
        self.steps.last().map(|s| s.next_state)
    }

    /// Every state visited, starting with the initial state.
    pub fn visited_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.initial_state()
            .into_iter()
            .chain(self.steps.iter().map(|s| s.next_state))
    }

    /// `next_state` of each step equals `state` of the following one.
    pub fn is_chained(&self) -> bool {
        self.steps
            .windows(2)
            .all(|w| w[0].next_state == w[1].state)
    }
}

/// An ordered collection of trajectories sharing one set of demographic tags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    /// Demographic tag names, in CSV column order.
    pub tags: Vec<String>,
    pub trajectories: Vec<Trajectory>,
}

/// A subject's per-time-step states and actions before triple assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSequence {
    pub id: String,
    pub states: Vec<usize>,
    /// One action per time step; the last one (if present) has no successor and is ignored.
    pub actions: Vec<usize>,
    pub demographics: BTreeMap<String, String>,
    pub died_in_hospital: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildReport {
    /// Subjects with fewer than two time steps.
    pub excluded: Vec<String>,
}

/// Assemble chained triples from per-subject state/action sequences.
///
/// Subjects with fewer than two steps are dropped and listed in the report.
pub fn build_trajectory_set(
    subjects: impl IntoIterator<Item = SubjectSequence>,
    tags: Vec<String>,
) -> Result<(TrajectorySet, BuildReport)> {
    let mut report = BuildReport::default();
    let mut trajectories = Vec::new();
    for subject in subjects {
        if subject.states.len() < 2 {
            report.excluded.push(subject.id);
            continue;
        }
        if subject.actions.len() + 1 < subject.states.len() {
            return Err(Error::schema(
                "discretize",
                format!(
                    "subject {} has {} states but only {} actions",
                    subject.id,
                    subject.states.len(),
                    subject.actions.len()
                ),
            ));
        }
        let steps = subject
            .states
            .windows(2)
            .zip(&subject.actions)
            .map(|(w, &a)| Step::new(w[0], a, w[1]))
            .collect();
        trajectories.push(Trajectory {
            id: subject.id,
            steps,
            demographics: subject.demographics,
            died_in_hospital: subject.died_in_hospital,
        });
    }
    Ok((TrajectorySet { tags, trajectories }, report))
}

impl TrajectorySet {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trajectory> {
        self.trajectories.iter()
    }

    pub fn max_len(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).max().unwrap_or(0)
    }

    /// Largest state and action ids plus one.
    pub fn dims(&self) -> (usize, usize) {
        let mut n_states = 0;
        let mut n_actions = 0;
        for step in self.trajectories.iter().flat_map(|t| &t.steps) {
            n_states = n_states.max(step.state + 1).max(step.next_state + 1);
            n_actions = n_actions.max(step.action + 1);
        }
        (n_states, n_actions)
    }

    /// The subset whose ids are listed, in this set's order.
    pub fn subset(&self, ids: &[String]) -> TrajectorySet {
        let keep: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        TrajectorySet {
            tags: self.tags.clone(),
            trajectories: self
                .trajectories
                .iter()
                .filter(|t| keep.contains(t.id.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        for t in &self.trajectories {
            if t.is_empty() {
                return Err(Error::schema("trajectory", format!("trajectory {} is empty", t.id)));
            }
            if !t.is_chained() {
                return Err(Error::schema(
                    "trajectory",
                    format!("trajectory {} breaks the state chain", t.id),
                ));
            }
            for s in &t.steps {
                if s.state >= n_states || s.next_state >= n_states || s.action >= n_actions {
                    return Err(Error::schema(
                        "trajectory",
                        format!(
                            "trajectory {} step {:?} outside {} states x {} actions",
                            t.id, s, n_states, n_actions
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["trajectory_id", "step", "state", "action", "next_state"];
        header.extend(self.tags.iter().map(String::as_str));
        header.push("died_in_hospital");
        w.write_record(&header).map_err(csv_err)?;
        for t in &self.trajectories {
            for (i, s) in t.steps.iter().enumerate() {
                let mut row = vec![
                    t.id.clone(),
                    i.to_string(),
                    s.state.to_string(),
                    s.action.to_string(),
                    s.next_state.to_string(),
                ];
                for tag in &self.tags {
                    row.push(t.demographics.get(tag).cloned().unwrap_or_default());
                }
                row.push(if t.died_in_hospital { "1" } else { "0" }.to_string());
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Read the CSV written by [`TrajectorySet::write_csv`]. Rows of one
    /// trajectory must be contiguous and ordered by `step`.
    pub fn read_csv(path: &Path) -> Result<TrajectorySet> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let schema = |message: String| Error::schema("trajectory", format!("{}: {message}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let fixed = ["trajectory_id", "step", "state", "action", "next_state"];
        if header.len() < fixed.len() + 1
            || header[..fixed.len()] != fixed
            || header.last().map(String::as_str) != Some("died_in_hospital")
        {
            return Err(schema(format!("unexpected header {header:?}")));
        }
        let tags: Vec<String> = header[fixed.len()..header.len() - 1].to_vec();
        let mut set = TrajectorySet {
            tags: tags.clone(),
            trajectories: Vec::new(),
        };
        let parse = |field: &str, what: &str, line: u64| -> Result<usize> {
            field
                .trim()
                .parse()
                .map_err(|_| schema(format!("line {line}: bad {what} `{field}`")))
        };
        for record in r.records() {
            let record = record.map_err(csv_err)?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let id = record[0].to_string();
            let step_index = parse(&record[1], "step", line)?;
            let step = Step::new(
                parse(&record[2], "state", line)?,
                parse(&record[3], "action", line)?,
                parse(&record[4], "next_state", line)?,
            );
            let died = match record[header.len() - 1].trim() {
                "1" | "true" => true,
                "0" | "false" | "" => false,
                other => return Err(schema(format!("line {line}: bad died_in_hospital `{other}`"))),
            };
            let start_new = set.trajectories.last().is_none_or(|t| t.id != id);
            if start_new {
                if set.trajectories.iter().any(|t| t.id == id) {
                    return Err(schema(format!("line {line}: rows of trajectory {id} are not contiguous")));
                }
                let demographics = tags
                    .iter()
                    .enumerate()
                    .map(|(i, tag)| (tag.clone(), record[fixed.len() + i].to_string()))
                    .collect();
                set.trajectories.push(Trajectory {
                    id: id.clone(),
                    steps: Vec::new(),
                    demographics,
                    died_in_hospital: died,
                });
            }
            let t = set.trajectories.last_mut().expect("pushed above");
            if step_index != t.steps.len() {
                return Err(schema(format!("line {line}: trajectory {id} step {step_index} out of order")));
            }
            t.steps.push(step);
        }
        for t in &set.trajectories {
            if !t.is_chained() {
                return Err(schema(format!("trajectory {} breaks the state chain", t.id)));
            }
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str, states: Vec<usize>, actions: Vec<usize>) -> SubjectSequence {
        SubjectSequence {
            id: id.into(),
            states,
            actions,
            demographics: BTreeMap::new(),
            died_in_hospital: false,
        }
    }

    #[test]
    fn builds_triples_by_definition() {
        let (set, report) =
            build_trajectory_set([subject("a", vec![3, 3, 9], vec![0, 2])], vec![]).unwrap();
        assert!(report.excluded.is_empty());
        assert_eq!(
            set.trajectories[0].steps,
            vec![Step::new(3, 0, 3), Step::new(3, 2, 9)]
        );
    }

    #[test]
    fn trailing_action_is_ignored() {
        let (set, _) =
            build_trajectory_set([subject("a", vec![3, 3, 9], vec![0, 2, 1])], vec![]).unwrap();
        assert_eq!(set.trajectories[0].len(), 2);
    }

    #[test]
    fn single_step_subject_is_excluded() {
        let (set, report) = build_trajectory_set(
            [subject("a", vec![1], vec![0]), subject("b", vec![1, 2], vec![0])],
            vec![],
        )
        .unwrap();
        assert_eq!(report.excluded, vec!["a".to_string()]);
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn visited_states_include_initial() {
        let (set, _) =
            build_trajectory_set([subject("a", vec![3, 9, 3], vec![0, 1])], vec![]).unwrap();
        let visits: Vec<usize> = set.trajectories[0].visited_states().collect();
        assert_eq!(visits, vec![3, 9, 3]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut demo = BTreeMap::new();
        demo.insert("race".to_string(), "white".to_string());
        let set = TrajectorySet {
            tags: vec!["race".into()],
            trajectories: vec![Trajectory {
                id: "p1".into(),
                steps: vec![Step::new(0, 1, 2), Step::new(2, 0, 2)],
                demographics: demo,
                died_in_hospital: true,
            }],
        };
        set.write_csv(&path).unwrap();
        assert_eq!(TrajectorySet::read_csv(&path).unwrap(), set);
    }

    #[test]
    fn rejects_broken_chain() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(
            &path,
            "trajectory_id,step,state,action,next_state,died_in_hospital\na,0,0,0,1,0\na,1,2,0,1,0\n",
        )
        .unwrap();
        assert!(matches!(TrajectorySet::read_csv(&path), Err(Error::Schema { .. })));
    }
}
