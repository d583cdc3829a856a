// SPDX-License-Identifier: Apache-2.0
#ifndef DTWIN_TOOLS_CLI_HPP
#define DTWIN_TOOLS_CLI_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace dtwin::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitNotConverged = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitRuntime = 3;

inline constexpr int kFormatVersion = 1;

struct Options {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

/// Runs one subcommand and returns its exit status. Validation problems map
/// to kExitValidation and other failures to kExitRuntime; the message goes
/// to `err`.
int run(const Options &options, std::ostream &out, std::ostream &err);

/// argv front end.
int main_entry(int argc, char **argv);

int cmd_simulate(const Options &options, std::ostream &out, std::ostream &err);
int cmd_recover(const Options &options, std::ostream &out, std::ostream &err);
int cmd_bench(const Options &options, std::ostream &out, std::ostream &err);
int cmd_roofline(const Options &options, std::ostream &out, std::ostream &err);
int cmd_pareto(const Options &options, std::ostream &out, std::ostream &err);
int cmd_gradcheck(const Options &options, std::ostream &out, std::ostream &err);
int cmd_hlscost(const Options &options, std::ostream &out, std::ostream &err);

} // namespace dtwin::cli

#endif // DTWIN_TOOLS_CLI_HPP
