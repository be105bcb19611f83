use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use super::probe::{current_thread_key, ThreadKey};
use super::CommError;

pub type Provider = Arc<dyn Fn() -> String + Send + Sync>;

#[derive(Clone)]
pub struct Inspectable {
    pub owner: ThreadKey,
    pub provider: Provider,
}

/// Named value providers for one rank, read by the debug agent.
#[derive(Default)]
pub struct InspectRegistry {
    entries: Mutex<BTreeMap<String, Inspectable>>,
}

impl InspectRegistry {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Registers `provider` under `name`, owned by the calling thread.
    pub fn register(&self, name: &str, provider: impl Fn() -> String + Send + Sync + 'static) -> Result<(), CommError> {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(CommError::Argument(format!("invalid inspectable name {name:?}")));
        }
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(name) {
            return Err(CommError::Argument(format!("inspectable {name:?} already registered")));
        }
        entries.insert(
            name.to_string(),
            Inspectable {
                owner: current_thread_key(),
                provider: Arc::new(provider),
            },
        );
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Option<Inspectable> {
        self.entries.lock().unwrap().get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.lock().unwrap().keys().cloned().collect()
    }
}
