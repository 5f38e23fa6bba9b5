#pragma once

#include <array>
#include <iosfwd>

#include "vibtx/signal_model.hpp"

namespace vibtx::cli {

/// Perception accuracy (%) per hand, in HandArchetype order (CH, VP, IL, SH),
/// from the reference perception experiment.
inline constexpr std::array<double, 4> kPerceptionAccuracy = {58.0, 52.0, 45.0, 37.0};

/// Environment variable naming the default output root.
inline constexpr const char* kOutEnv = "VIBTX_OUT";

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vibtx::cli
