//! Set-associative LRU cache holding block addresses only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub capacity: usize,
    pub sets: usize,
    pub ways: usize,
}

impl CacheGeometry {
    pub fn new(capacity: usize, sets: usize, ways: usize) -> Result<Self> {
        if sets == 0 || ways == 0 || capacity == 0 {
            return Err(Error::Config(format!(
                "cache geometry needs positive capacity/sets/ways, got {capacity}/{sets}/{ways}"
            )));
        }
        if !capacity.is_multiple_of(sets * ways) || !(capacity / (sets * ways)).is_power_of_two() {
            return Err(Error::Config(format!(
                "capacity {capacity} over {sets} sets x {ways} ways is not a power-of-two block size"
            )));
        }
        Ok(CacheGeometry { capacity, sets, ways })
    }

    /// 16 KB, 32 sets, 4 ways: 128-byte blocks.
    pub fn l1_default() -> Self {
        CacheGeometry {
            capacity: 16 * 1024,
            sets: 32,
            ways: 4,
        }
    }

    /// 64 KB, 8 ways, 128-byte blocks: 64 sets.
    pub fn l2_default() -> Self {
        CacheGeometry {
            capacity: 64 * 1024,
            sets: 64,
            ways: 8,
        }
    }

    pub fn block_size(&self) -> u64 {
        (self.capacity / (self.sets * self.ways)) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lookup {
    pub hit: bool,
    pub evicted: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct CacheState {
    geometry: CacheGeometry,
    block_size: u64,
    /// Divides the block number before set selection, for slices that only
    /// ever see every n-th block.
    index_divisor: u64,
    /// Per set, block addresses from LRU (front) to MRU (back).
    sets: Vec<Vec<u64>>,
    pub hits: u64,
    pub misses: u64,
}

impl CacheState {
    pub fn new(geometry: CacheGeometry) -> Self {
        Self::interleaved(geometry, 1)
    }

    pub fn interleaved(geometry: CacheGeometry, index_divisor: u64) -> Self {
        CacheState {
            geometry,
            block_size: geometry.block_size(),
            index_divisor: index_divisor.max(1),
            sets: vec![Vec::with_capacity(geometry.ways); geometry.sets],
            hits: 0,
            misses: 0,
        }
    }

    pub fn geometry(&self) -> CacheGeometry {
        self.geometry
    }

    pub fn block_size(&self) -> u64 {
        self.block_size
    }

    fn set_of(&self, block: u64) -> usize {
        ((block / self.block_size / self.index_divisor) % self.geometry.sets as u64) as usize
    }

    fn check_aligned(&self, block: u64) {
        assert!(
            block.is_multiple_of(self.block_size),
            "unaligned block address {block:#x} for {}-byte blocks",
            self.block_size
        );
    }

    /// Hit: move to MRU. Miss: install at MRU, evicting the LRU block of a
    /// full set.
    pub fn access(&mut self, block: u64) -> Lookup {
        self.check_aligned(block);
        let ways = self.geometry.ways;
        let idx = self.set_of(block);
        let set = &mut self.sets[idx];
        if let Some(pos) = set.iter().position(|&b| b == block) {
            let b = set.remove(pos);
            set.push(b);
            self.hits += 1;
            return Lookup {
                hit: true,
                evicted: None,
            };
        }
        self.misses += 1;
        let evicted = if set.len() == ways {
            Some(set.remove(0))
        } else {
            None
        };
        set.push(block);
        Lookup { hit: false, evicted }
    }

    /// Presence query; no recency or counter update.
    pub fn contains(&self, block: u64) -> bool {
        self.check_aligned(block);
        self.sets[self.set_of(block)].contains(&block)
    }

    /// Refreshes recency of a resident block without counting an access and
    /// without ever filling. Returns whether the block was resident.
    pub fn touch(&mut self, block: u64) -> bool {
        self.check_aligned(block);
        let idx = self.set_of(block);
        let set = &mut self.sets[idx];
        match set.iter().position(|&b| b == block) {
            Some(pos) => {
                let b = set.remove(pos);
                set.push(b);
                true
            }
            None => false,
        }
    }

    pub fn resident_blocks(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn accesses(&self) -> u64 {
        self.hits + self.misses
    }
}
