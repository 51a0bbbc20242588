#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bavae::cli {

struct GlobalOptions {
  std::filesystem::path config;
  std::filesystem::path output;  // overrides output_dir when set
  std::optional<std::uint64_t> seed;
  bool force = false;
  int workers = 1;
};

struct SweepOptions {
  std::string hyper = "beta";
  std::vector<double> values;
  std::vector<std::uint64_t> seeds{0};
};

struct ProbeOptions {
  std::filesystem::path checkpoint;
  double split = 0.8;  // fraction of examples used to fit the probe
};

struct TraverseOptions {
  std::filesystem::path checkpoint;
  std::int64_t image_index = 0;
  std::vector<double> grid;  // empty means the default grid
};

/// Each command validates everything before writing, then fills the output
/// directory. Errors are thrown; run() turns them into exit codes.
void cmd_train(const GlobalOptions& g);
/// Returns false when any sweep cell failed (outputs are still written).
bool cmd_sweep(const GlobalOptions& g, const SweepOptions& s);
void cmd_metrics(const GlobalOptions& g, const std::filesystem::path& checkpoint);
void cmd_probe(const GlobalOptions& g, const ProbeOptions& p);
void cmd_traverse(const GlobalOptions& g, const TraverseOptions& t);

/// Parses argv and dispatches. Returns the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bavae::cli
