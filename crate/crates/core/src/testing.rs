//! Helpers for tests that need to force particular random branches.

use rand::RngCore;

/// An `RngCore` replaying a fixed script of uniforms; `gen::<f64>()` returns
/// exactly the scripted values (to 53 bits), cycling when exhausted.
#[derive(Debug, Clone)]
pub struct ScriptedRng {
    script: Vec<f64>,
    pos: usize,
}

impl ScriptedRng {
    pub fn new(script: &[f64]) -> Self {
        assert!(!script.is_empty());
        assert!(script.iter().all(|u| (0.0..1.0).contains(u)));
        Self {
            script: script.to_vec(),
            pos: 0,
        }
    }
}

impl RngCore for ScriptedRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let u = self.script[self.pos % self.script.len()];
        self.pos += 1;
        ((u * (1u64 << 53) as f64) as u64) << 11
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
