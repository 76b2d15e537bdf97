#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

namespace flowmix::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

/// Commands validate their config strictly (unknown keys rejected), write
/// their artifacts plus an echo of the resolved config, and throw flowmix
/// errors on failure.
void cmd_generate(const nlohmann::json& config);
void cmd_corrupt(const nlohmann::json& config);
void cmd_train(const nlohmann::json& config);
void cmd_eval(const nlohmann::json& config);
void cmd_diagnose(const nlohmann::json& config);
void cmd_compare(const nlohmann::json& config);

/// Dispatches by name, maps exceptions onto the exit-code contract
/// (0 success, 2 config, 3 I/O, 4 numeric).
int run_command(const std::string& command, nlohmann::json config);

/// --seed / --out flag overrides applied before dispatch.
void apply_overrides(nlohmann::json& config, const std::optional<std::uint64_t>& seed,
                     const std::optional<std::string>& out);

}  // namespace flowmix::cli
