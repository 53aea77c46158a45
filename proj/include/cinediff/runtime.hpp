#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cinediff {

/// Keeps large tensor allocations on the heap instead of fresh mmaps; repeated page faults otherwise
/// dominate elementwise ops. No-op outside glibc.
inline void configure_allocator()
{
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

} // namespace cinediff
