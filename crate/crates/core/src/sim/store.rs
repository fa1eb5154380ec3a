use std::collections::BTreeMap;

/// Key-to-bytes map that survives node crashes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DurableStore {
    entries: BTreeMap<String, Vec<u8>>,
}

impl DurableStore {
    pub fn get(&self, key: &str) -> Option<&[u8]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn put(&mut self, key: impl Into<String>, value: Vec<u8>) {
        self.entries.insert(key.into(), value);
    }

    pub fn append(&mut self, key: &str, bytes: &[u8]) {
        self.entries
            .entry(key.to_string())
            .or_default()
            .extend_from_slice(bytes);
    }

    /// Truncates the value at `key` to `len` bytes.
    pub fn truncate(&mut self, key: &str, len: usize) {
        if let Some(v) = self.entries.get_mut(key) {
            v.truncate(len);
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<Vec<u8>> {
        self.entries.remove(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, _)| k.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
