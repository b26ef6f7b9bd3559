#pragma once

#if __has_include(<malloc.h>)
#include <malloc.h>
#endif

namespace cvlm::bench {

/// glibc hands large blocks straight back to the OS on free, so every run
/// would page-fault its activations in again and warmups would warm nothing.
/// Keeping freed memory in the heap measures the steady state instead, the
/// way a caching allocator behaves in a serving stack. Idempotent.
inline void retain_allocator_memory() {
#if defined(M_MMAP_THRESHOLD) && defined(M_TRIM_THRESHOLD)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace cvlm::bench
