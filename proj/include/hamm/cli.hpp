#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hamm/data.hpp"

namespace hamm {

enum ExitCode : int {
  kExitOk = 0,
  kExitOther = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
  kExitCheckpoint = 5,
};

/// Runs the `hamm` command line. `args` excludes the program name.
/// Subcommands: synth, split, pretrain, finetune, eval, trials, sweep.
/// Relative paths resolve against $HAMM_OUTPUT_ROOT when it is set.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Text form: ratio and seed echo, per-class counts, then one "split id" line
/// per sample.
void write_split_manifest(const std::filesystem::path& path, const SplitManifest& manifest, std::uint64_t seed);
/// Throws DataError on a malformed file.
SplitManifest read_split_manifest(const std::filesystem::path& path);

}  // namespace hamm
