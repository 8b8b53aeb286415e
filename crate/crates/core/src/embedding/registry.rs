use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LadaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Unseen,
    Current,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDescriptor {
    pub task_id: u32,
    pub class_ids: Vec<u32>,
    pub status: TaskStatus,
}

/// Tasks in learning order, each owning a disjoint set of global class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRegistry {
    tasks: Vec<TaskDescriptor>,
    names: BTreeMap<u32, String>,
}

#[derive(Serialize, Deserialize)]
struct RegistryDoc {
    tasks: Vec<TaskDoc>,
}

#[derive(Serialize, Deserialize)]
struct TaskDoc {
    task_id: u32,
    class_ids: Vec<u32>,
    names: Vec<String>,
}

impl ClassRegistry {
    /// Builds a registry from `(task_id, [(class_id, name)])` entries in learning order.
    pub fn new(tasks: Vec<(u32, Vec<(u32, String)>)>) -> Result<Self> {
        let mut task_ids = BTreeSet::new();
        let mut names = BTreeMap::new();
        let mut descriptors = Vec::with_capacity(tasks.len());
        for (task_id, classes) in tasks {
            if !task_ids.insert(task_id) {
                return Err(LadaError::Registry(format!("duplicate task id {task_id}")));
            }
            if classes.is_empty() {
                return Err(LadaError::Registry(format!("task {task_id} has no classes")));
            }
            let mut class_ids = Vec::with_capacity(classes.len());
            for (class_id, name) in classes {
                if names.insert(class_id, name).is_some() {
                    return Err(LadaError::Registry(format!(
                        "class id {class_id} registered twice"
                    )));
                }
                class_ids.push(class_id);
            }
            descriptors.push(TaskDescriptor {
                task_id,
                class_ids,
                status: TaskStatus::Unseen,
            });
        }
        Ok(ClassRegistry {
            tasks: descriptors,
            names,
        })
    }

    /// Task `t` gets `counts[t]` classes; class ids are assigned consecutively
    /// in task order and named `class_<id>`.
    pub fn from_class_counts(counts: &[usize]) -> Result<Self> {
        let mut next = 0u32;
        let tasks = counts
            .iter()
            .enumerate()
            .map(|(t, &m)| {
                let classes = (0..m)
                    .map(|_| {
                        let id = next;
                        next += 1;
                        (id, format!("class_{id}"))
                    })
                    .collect();
                (t as u32, classes)
            })
            .collect();
        Self::new(tasks)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: RegistryDoc = serde_json::from_str(text)
            .map_err(|e| LadaError::Format(format!("registry JSON: {e}")))?;
        let mut tasks = Vec::with_capacity(doc.tasks.len());
        for t in doc.tasks {
            if t.names.len() != t.class_ids.len() {
                return Err(LadaError::Registry(format!(
                    "task {}: {} class ids but {} names",
                    t.task_id,
                    t.class_ids.len(),
                    t.names.len()
                )));
            }
            tasks.push((t.task_id, t.class_ids.into_iter().zip(t.names).collect()));
        }
        Self::new(tasks)
    }

    pub fn to_json_string(&self) -> String {
        let doc = RegistryDoc {
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskDoc {
                    task_id: t.task_id,
                    class_ids: t.class_ids.clone(),
                    names: t.class_ids.iter().map(|c| self.names[c].clone()).collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("registry serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LadaError::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            LadaError::Format(m) => LadaError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| LadaError::io(path, e))
    }

    pub fn tasks(&self) -> &[TaskDescriptor] {
        &self.tasks
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Total registered classes, M = Σ M^i.
    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn name_of(&self, class_id: u32) -> Option<&str> {
        self.names.get(&class_id).map(String::as_str)
    }

    pub fn task(&self, task_id: u32) -> Result<&TaskDescriptor> {
        self.tasks
            .iter()
            .find(|t| t.task_id == task_id)
            .ok_or_else(|| LadaError::Registry(format!("unknown task {task_id}")))
    }

    /// Zero-based learning-order position of a task.
    pub fn position(&self, task_id: u32) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.task_id == task_id)
            .ok_or_else(|| LadaError::Registry(format!("unknown task {task_id}")))
    }

    pub fn task_of(&self, class_id: u32) -> Option<u32> {
        self.tasks
            .iter()
            .find(|t| t.class_ids.contains(&class_id))
            .map(|t| t.task_id)
    }

    pub fn status(&self, task_id: u32) -> Result<TaskStatus> {
        Ok(self.task(task_id)?.status)
    }

    /// Classes of current and learned tasks (C_L), registry order.
    pub fn seen_classes(&self) -> Vec<u32> {
        self.classes_where(|s| s != TaskStatus::Unseen)
    }

    /// Classes of unseen tasks (C_U), registry order.
    pub fn unseen_classes(&self) -> Vec<u32> {
        self.classes_where(|s| s == TaskStatus::Unseen)
    }

    pub fn all_classes(&self) -> Vec<u32> {
        self.classes_where(|_| true)
    }

    fn classes_where(&self, keep: impl Fn(TaskStatus) -> bool) -> Vec<u32> {
        self.tasks
            .iter()
            .filter(|t| keep(t.status))
            .flat_map(|t| t.class_ids.iter().copied())
            .collect()
    }

    pub fn current_task(&self) -> Option<u32> {
        self.tasks
            .iter()
            .find(|t| t.status == TaskStatus::Current)
            .map(|t| t.task_id)
    }

    /// Marks `task_id` current. Every earlier task must already be learned.
    pub fn begin_task(&mut self, task_id: u32) -> Result<()> {
        let pos = self.position(task_id)?;
        if let Some(cur) = self.current_task() {
            return Err(LadaError::Registry(format!(
                "task {cur} is still current; cannot begin task {task_id}"
            )));
        }
        if self.tasks[pos].status != TaskStatus::Unseen {
            return Err(LadaError::Registry(format!(
                "task {task_id} was already started"
            )));
        }
        if let Some(t) = self.tasks[..pos]
            .iter()
            .find(|t| t.status != TaskStatus::Learned)
        {
            return Err(LadaError::Registry(format!(
                "task {} precedes task {task_id} but is not learned",
                t.task_id
            )));
        }
        self.tasks[pos].status = TaskStatus::Current;
        Ok(())
    }

    /// Marks a current task learned. Idempotent on learned tasks.
    pub fn complete_task(&mut self, task_id: u32) -> Result<()> {
        let pos = self.position(task_id)?;
        match self.tasks[pos].status {
            TaskStatus::Unseen => Err(LadaError::Registry(format!(
                "task {task_id} was never started"
            ))),
            _ => {
                self.tasks[pos].status = TaskStatus::Learned;
                Ok(())
            }
        }
    }

    /// Restores statuses recorded in a checkpoint manifest.
    pub fn set_statuses(&mut self, statuses: &[(u32, TaskStatus)]) -> Result<()> {
        for &(task_id, status) in statuses {
            let pos = self.position(task_id)?;
            self.tasks[pos].status = status;
        }
        let current = self
            .tasks
            .iter()
            .filter(|t| t.status == TaskStatus::Current)
            .count();
        if current > 1 {
            return Err(LadaError::Registry(format!(
                "{current} tasks marked current"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_assign_ids_in_task_order() {
        let r = ClassRegistry::from_class_counts(&[2, 3]).unwrap();
        assert_eq!(r.num_classes(), 5);
        assert_eq!(r.tasks()[1].class_ids, vec![2, 3, 4]);
        assert_eq!(r.task_of(3), Some(1));
        assert_eq!(r.name_of(4), Some("class_4"));
    }

    #[test]
    fn duplicate_classes_are_rejected() {
        let err = ClassRegistry::new(vec![
            (0, vec![(0, "a".into())]),
            (1, vec![(0, "b".into())]),
        ])
        .unwrap_err();
        assert!(matches!(err, LadaError::Registry(_)));
    }

    #[test]
    fn json_round_trip() {
        let r = ClassRegistry::from_class_counts(&[1, 2]).unwrap();
        let text = r.to_json_string();
        assert!(text.contains("\"class_ids\""));
        assert_eq!(ClassRegistry::from_json_str(&text).unwrap(), r);
    }

    #[test]
    fn status_transitions_follow_learning_order() {
        let mut r = ClassRegistry::from_class_counts(&[1, 1, 1]).unwrap();
        assert!(r.begin_task(1).is_err());
        r.begin_task(0).unwrap();
        assert!(r.begin_task(1).is_err(), "only one current task");
        assert_eq!(r.seen_classes(), vec![0]);
        assert_eq!(r.unseen_classes(), vec![1, 2]);
        r.complete_task(0).unwrap();
        r.complete_task(0).unwrap();
        r.begin_task(1).unwrap();
        assert_eq!(r.current_task(), Some(1));
        assert!(r.complete_task(2).is_err());
    }
}
