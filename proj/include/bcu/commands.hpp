// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>

#include "bcu/config.hpp"

namespace bcu {

/// Output modes shared by all commands.
struct CommandContext {
  bool force = false;  // allow overwriting existing outputs
  std::ostream* out = nullptr;  // human-readable progress and tables
  std::ostream* err = nullptr;  // warnings
  unsigned threads = 1;         // worker bound for ablation sweeps
};

/// Each command writes its outputs under config.out together with manifest.json
/// ({"command", "config", ...}); passing that manifest back as --config reruns it.
void cmd_train_clean(const RunConfig& config, const CommandContext& ctx);
void cmd_train_backdoor(const RunConfig& config, const CommandContext& ctx);
void cmd_cleanse(const RunConfig& config, const CommandContext& ctx);
void cmd_finetune(const RunConfig& config, const CommandContext& ctx);
void cmd_ablate(const RunConfig& config, const CommandContext& ctx);
void cmd_evaluate(const RunConfig& config, const CommandContext& ctx);
/// Returns false when some gradient entry fails.
bool cmd_gradcheck(const RunConfig& config, const CommandContext& ctx);
void cmd_export_features(const RunConfig& config, const CommandContext& ctx);

/// Entry point of the `bcu` tool. Returns the process exit code:
/// 0 success, 2 configuration error, 3 data/format error, 4 numeric/training failure.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace bcu
