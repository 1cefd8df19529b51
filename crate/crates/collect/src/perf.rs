//! `perf_event_open(2)` counting for one process, all threads included.

use cloak_core::trace::CounterKind;

#[cfg(target_os = "linux")]
mod imp {
    use std::fs::File;
    use std::io::Read;
    use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};

    use cloak_core::trace::CounterKind;

    use crate::sampler::CounterSource;
    use crate::{CollectError, Result};

    const TYPE_HARDWARE: u32 = 0;
    const TYPE_HW_CACHE: u32 = 3;
    const HW_INSTRUCTIONS: u64 = 1;
    const HW_CACHE_REFERENCES: u64 = 2;
    const HW_BRANCH_INSTRUCTIONS: u64 = 4;
    const CACHE_L1D: u64 = 0;
    const CACHE_L1I: u64 = 1;
    const CACHE_OP_READ: u64 = 0;
    const CACHE_RESULT_MISS: u64 = 1;

    const FLAG_INHERIT: u64 = 1 << 1;
    const FLAG_EXCLUDE_KERNEL: u64 = 1 << 5;
    const FLAG_EXCLUDE_HV: u64 = 1 << 6;

    /// `struct perf_event_attr`, revision 5 layout (112 bytes).
    #[repr(C)]
    #[derive(Default)]
    struct Attr {
        kind: u32,
        size: u32,
        config: u64,
        sample_period: u64,
        sample_type: u64,
        read_format: u64,
        flags: u64,
        wakeup_events: u32,
        bp_type: u32,
        config1: u64,
        config2: u64,
        branch_sample_type: u64,
        sample_regs_user: u64,
        sample_stack_user: u32,
        clockid: i32,
        sample_regs_intr: u64,
        aux_watermark: u32,
        sample_max_stack: u16,
        reserved: u16,
    }

    fn event(c: CounterKind) -> (u32, u64) {
        let cache = |id: u64| id | (CACHE_OP_READ << 8) | (CACHE_RESULT_MISS << 16);
        match c {
            CounterKind::TotalInstructions => (TYPE_HARDWARE, HW_INSTRUCTIONS),
            CounterKind::BranchInstructions => (TYPE_HARDWARE, HW_BRANCH_INSTRUCTIONS),
            CounterKind::TotalCacheReferences => (TYPE_HARDWARE, HW_CACHE_REFERENCES),
            CounterKind::L1InstructionCacheMiss => (TYPE_HW_CACHE, cache(CACHE_L1I)),
            CounterKind::L1DataCacheMiss => (TYPE_HW_CACHE, cache(CACHE_L1D)),
        }
    }

    fn open(c: CounterKind, pid: i32) -> std::io::Result<File> {
        let (kind, config) = event(c);
        let attr = Attr {
            kind,
            size: std::mem::size_of::<Attr>() as u32,
            config,
            flags: FLAG_INHERIT | FLAG_EXCLUDE_KERNEL | FLAG_EXCLUDE_HV,
            ..Attr::default()
        };
        // SAFETY: `attr` is a fully initialized perf_event_attr of the size it declares.
        let fd = unsafe { libc::syscall(libc::SYS_perf_event_open, &attr as *const Attr, pid, -1, -1, 0u64) };
        if fd < 0 {
            return Err(std::io::Error::last_os_error());
        }
        // SAFETY: the kernel returned a fresh descriptor that nothing else owns.
        Ok(unsafe { File::from_raw_fd(fd as i32) })
    }

    pub fn available(c: CounterKind) -> bool {
        open(c, 0).is_ok()
    }

    pub struct PerfSource {
        pid: i32,
        counters: Vec<File>,
        pidfd: Option<OwnedFd>,
    }

    impl PerfSource {
        pub fn attach(pid: i32, kinds: &[CounterKind]) -> Result<Self> {
            // SAFETY: signal 0 only checks that the process exists.
            if unsafe { libc::kill(pid, 0) } != 0 && std::io::Error::last_os_error().raw_os_error() == Some(libc::ESRCH) {
                return Err(CollectError::NoSuchProcess(pid));
            }
            let counters = kinds
                .iter()
                .map(|&c| open(c, pid).map_err(|e| if e.raw_os_error() == Some(libc::ESRCH) {
                    CollectError::NoSuchProcess(pid)
                } else {
                    CollectError::Unavailable(c)
                }))
                .collect::<Result<Vec<_>>>()?;
            // SAFETY: plain syscall; a negative result means pidfds are unsupported.
            let raw = unsafe { libc::syscall(libc::SYS_pidfd_open, pid, 0) };
            // SAFETY: nonnegative results are fresh descriptors.
            let pidfd = (raw >= 0).then(|| unsafe { OwnedFd::from_raw_fd(raw as i32) });
            Ok(Self { pid, counters, pidfd })
        }
    }

    impl CounterSource for PerfSource {
        fn read(&mut self) -> Result<Vec<u64>> {
            let mut out = Vec::with_capacity(self.counters.len());
            let mut buf = [0u8; 8];
            for f in &mut self.counters {
                f.read_exact(&mut buf)?;
                out.push(u64::from_ne_bytes(buf));
            }
            Ok(out)
        }

        fn alive(&mut self) -> bool {
            match &self.pidfd {
                // A pidfd turns readable once the process has exited, zombie or not.
                Some(fd) => {
                    let mut p = libc::pollfd { fd: fd.as_raw_fd(), events: libc::POLLIN, revents: 0 };
                    // SAFETY: one valid pollfd, zero timeout.
                    unsafe { libc::poll(&mut p, 1, 0) == 0 }
                }
                // SAFETY: signal 0 only checks that the process exists.
                None => unsafe { libc::kill(self.pid, 0) == 0 },
            }
        }
    }
}

#[cfg(not(target_os = "linux"))]
mod imp {
    use cloak_core::trace::CounterKind;

    use crate::sampler::CounterSource;
    use crate::{CollectError, Result};

    pub fn available(_: CounterKind) -> bool {
        false
    }

    pub enum PerfSource {}

    impl PerfSource {
        pub fn attach(_: i32, kinds: &[CounterKind]) -> Result<Self> {
            Err(CollectError::Unavailable(kinds[0]))
        }
    }

    impl CounterSource for PerfSource {
        fn read(&mut self) -> Result<Vec<u64>> {
            match *self {}
        }

        fn alive(&mut self) -> bool {
            match *self {}
        }
    }
}

pub use imp::PerfSource;

pub fn available(c: CounterKind) -> bool {
    imp::available(c)
}
