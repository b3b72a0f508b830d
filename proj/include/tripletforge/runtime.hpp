#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace tforge {

/// Keeps freed activation buffers in the heap instead of returning them to the
/// OS after every training step.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace tforge
