use std::collections::BTreeMap;

use crate::media::{Kbps, SegmentRef};

/// Per-client request handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheEntry {
    pub bitrate_kbps: Kbps,
    /// Bitrate the client expects this push to carry.
    pub expected_kbps: Kbps,
    pub size_kbit: f64,
    pub complete: bool,
    /// Request whose response promised this push.
    pub origin: RequestId,
}

impl CacheEntry {
    pub fn matches_expectation(&self) -> bool {
        self.bitrate_kbps == self.expected_kbps
    }
}

/// Pushed segments waiting to be consumed, at most one per index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PushCache {
    entries: BTreeMap<u32, CacheEntry>,
}

impl PushCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores a promised push. A previous entry for the same index is evicted
    /// and returned.
    pub fn insert(&mut self, index: u32, entry: CacheEntry) -> Option<CacheEntry> {
        self.entries.insert(index, entry)
    }

    pub fn get(&self, index: u32) -> Option<&CacheEntry> {
        self.entries.get(&index)
    }

    pub fn remove(&mut self, index: u32) -> Option<CacheEntry> {
        self.entries.remove(&index)
    }

    /// Marks the push for `index` from `origin` as fully received. Returns
    /// false if that push is no longer cached (discarded or replaced).
    pub fn mark_complete(&mut self, index: u32, origin: RequestId) -> bool {
        match self.entries.get_mut(&index) {
            Some(e) if e.origin == origin => {
                e.complete = true;
                true
            }
            _ => false,
        }
    }

    pub fn segment(&self, index: u32) -> Option<SegmentRef> {
        self.get(index).map(|e| SegmentRef::new(index, e.bitrate_kbps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(bitrate: Kbps, origin: u64) -> CacheEntry {
        CacheEntry {
            bitrate_kbps: bitrate,
            expected_kbps: bitrate,
            size_kbit: f64::from(bitrate),
            complete: false,
            origin: RequestId(origin),
        }
    }

    #[test]
    fn one_entry_per_index() {
        let mut c = PushCache::new();
        assert!(c.insert(5, entry(838, 1)).is_none());
        let evicted = c.insert(5, entry(1401, 2)).unwrap();
        assert_eq!(evicted.bitrate_kbps, 838);
        assert_eq!(c.len(), 1);
        assert_eq!(c.segment(5), Some(SegmentRef::new(5, 1401)));
    }

    #[test]
    fn completion_only_for_current_origin() {
        let mut c = PushCache::new();
        c.insert(5, entry(838, 2));
        assert!(!c.mark_complete(5, RequestId(1)));
        assert!(c.mark_complete(5, RequestId(2)));
        assert!(c.get(5).unwrap().complete);
        c.remove(5);
        assert!(!c.mark_complete(5, RequestId(2)));
    }
}
