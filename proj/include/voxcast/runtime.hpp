#pragma once

namespace voxcast {

// Keeps freed activation buffers on the heap instead of returning them to the
// kernel; large tensors are reallocated every step and page faults dominate
// otherwise. Safe to call more than once.
void tune_allocator();

}  // namespace voxcast
