// SPDX-License-Identifier: Apache-2.0
#include "dtwin/sysmem.hpp"

#include <fstream>
#include <string>

namespace dtwin {

namespace {

std::size_t status_field_kb(const char *key) {
  std::ifstream in("/proc/self/status");
  std::string line;
  const std::string prefix = std::string(key) + ":";
  while (std::getline(in, line)) {
    if (line.rfind(prefix, 0) == 0)
      return std::stoul(line.substr(prefix.size()));
  }
  return 0;
}

} // namespace

std::size_t current_rss_bytes() { return status_field_kb("VmRSS") * 1024; }

std::size_t peak_rss_bytes() { return status_field_kb("VmHWM") * 1024; }

bool reset_peak_rss() {
  std::ofstream out("/proc/self/clear_refs");
  if (!out)
    return false;
  out << "5";
  out.flush();
  return static_cast<bool>(out);
}

} // namespace dtwin
