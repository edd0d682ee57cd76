use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::PseudoDemonstration;

/// An example that could not be annotated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub example_id: String,
    pub reason: String,
    pub attempts: u32,
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Annotated(PseudoDemonstration),
    Skipped(SkipRecord),
}

impl Outcome {
    pub fn example_id(&self) -> &str {
        match self {
            Outcome::Annotated(p) => &p.example_id,
            Outcome::Skipped(s) => &s.example_id,
        }
    }
}

/// Durable record of finished annotations.
///
/// The annotators consult [`Journal::lookup`] before calling the model, so a
/// journal pre-filled by an interrupted run makes the rerun skip work that
/// was already committed.
pub trait Journal {
    fn lookup(&self, example_id: &str) -> Option<Outcome>;

    /// Persists a batch, in order. Called between batches only.
    fn commit(&mut self, batch: &[Outcome]) -> Result<()>;
}

/// In-memory journal; the default when nothing needs to survive the process.
#[derive(Debug, Default)]
pub struct MemoryJournal {
    log: Vec<Outcome>,
    index: HashMap<String, usize>,
}

impl MemoryJournal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.log
    }
}

impl Journal for MemoryJournal {
    fn lookup(&self, example_id: &str) -> Option<Outcome> {
        self.index.get(example_id).map(|&i| self.log[i].clone())
    }

    fn commit(&mut self, batch: &[Outcome]) -> Result<()> {
        for o in batch {
            self.index.insert(o.example_id().to_string(), self.log.len());
            self.log.push(o.clone());
        }
        Ok(())
    }
}

impl<J: Journal + ?Sized> Journal for &mut J {
    fn lookup(&self, example_id: &str) -> Option<Outcome> {
        (**self).lookup(example_id)
    }

    fn commit(&mut self, batch: &[Outcome]) -> Result<()> {
        (**self).commit(batch)
    }
}
