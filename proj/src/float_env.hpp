// SPDX-License-Identifier: Apache-2.0
#pragma once

#if defined(__SSE__) || defined(__x86_64__)
#include <xmmintrin.h>
#endif

namespace srcid::detail {

/// Sets flush-to-zero and denormals-are-zero on the calling thread for the
/// guard's lifetime. Tiny gradients and second moments otherwise turn into
/// subnormals late in training and slow every kernel by an order of magnitude.
class FlushDenormals {
public:
#if defined(__SSE__) || defined(__x86_64__)
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~FlushDenormals() { _mm_setcsr(saved_); }

private:
  unsigned saved_;
#else
  FlushDenormals() = default;
#endif

public:
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;
};

}  // namespace srcid::detail
