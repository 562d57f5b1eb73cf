//! Name-keyed factories for interchangeable strategies.
//!
//! Each family (update rules, backprop modes, line initializers,
//! experiments) is a trait; implementations register under a name and are
//! created at runtime from configuration.

use crate::config::Params;
use crate::error::{Error, Result};

pub type Factory<T> = fn(&Params) -> Result<Box<T>>;

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, Factory<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    /// Registers `factory` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &'static str, factory: Factory<T>) -> &mut Self {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = factory,
            None => self.entries.push((name, factory)),
        }
        self
    }

    pub fn create(&self, name: &str, params: &Params) -> Result<Box<T>> {
        let (_, factory) = self
            .entries
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown {} `{name}`; available: {}",
                    self.kind,
                    self.names().collect::<Vec<_>>().join(", ")
                ))
            })?;
        factory(params)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|(n, _)| *n)
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}
