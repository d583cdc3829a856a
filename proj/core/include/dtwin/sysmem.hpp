// SPDX-License-Identifier: Apache-2.0
#ifndef DTWIN_SYSMEM_HPP
#define DTWIN_SYSMEM_HPP

#include <cstddef>

namespace dtwin {

/// Resident set size of this process in bytes (0 if unavailable).
std::size_t current_rss_bytes();

/// Lifetime peak resident set size (VmHWM) in bytes (0 if unavailable).
std::size_t peak_rss_bytes();

/// Resets VmHWM to the current RSS. False when the kernel refuses.
bool reset_peak_rss();

} // namespace dtwin

#endif // DTWIN_SYSMEM_HPP
