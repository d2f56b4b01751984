#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace foley::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitValidation = 2;

inline constexpr const char* kVersion = "0.1.0";

// Runs one foleyctl command. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

// $FOLEYCTL_DATA_DIR, or ./.foleyctl when unset.
std::filesystem::path data_dir();

}  // namespace foley::cli
