#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace tatt {

/// Keeps large activation buffers on the heap between steps instead of
/// returning them to the OS and faulting them back in.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
    mallopt(M_TOP_PAD, 64 * 1024 * 1024);
#endif
}

}  // namespace tatt
