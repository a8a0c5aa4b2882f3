use std::sync::Mutex;

/// Byte accounting for one device's memory.
#[derive(Debug)]
pub struct Arena {
    pub device: String,
    pub capacity: u64,
    state: Mutex<State>,
}

#[derive(Debug, Default)]
struct State {
    in_use: u64,
    peak: u64,
    live: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Full {
    pub requested: u64,
    pub available: u64,
}

impl Arena {
    pub fn new(device: impl Into<String>, capacity: u64) -> Self {
        Arena {
            device: device.into(),
            capacity,
            state: Mutex::default(),
        }
    }

    pub fn alloc(&self, bytes: u64) -> Result<(), Full> {
        let mut s = self.state.lock().unwrap();
        let available = self.capacity - s.in_use;
        if bytes > available {
            return Err(Full { requested: bytes, available });
        }
        s.in_use += bytes;
        s.peak = s.peak.max(s.in_use);
        s.live += 1;
        Ok(())
    }

    pub fn free(&self, bytes: u64) {
        let mut s = self.state.lock().unwrap();
        assert!(s.live > 0 && s.in_use >= bytes, "arena {} freed more than it holds", self.device);
        s.in_use -= bytes;
        s.live -= 1;
    }

    pub fn in_use(&self) -> u64 {
        self.state.lock().unwrap().in_use
    }

    pub fn available(&self) -> u64 {
        self.capacity - self.in_use()
    }

    pub fn peak(&self) -> u64 {
        self.state.lock().unwrap().peak
    }

    pub fn live(&self) -> usize {
        self.state.lock().unwrap().live
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_is_enforced() {
        let a = Arena::new("acc:0", 100);
        a.alloc(60).unwrap();
        assert_eq!(a.alloc(41), Err(Full { requested: 41, available: 40 }));
        a.alloc(40).unwrap();
        a.free(60);
        a.free(40);
        assert_eq!((a.in_use(), a.peak(), a.live()), (0, 100, 0));
    }
}
