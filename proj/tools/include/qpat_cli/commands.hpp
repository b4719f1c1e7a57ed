#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace qpat::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 1, kDataIntegrity = 2, kNumerical = 3 };

/// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// FNV-1a over the bytes of a file, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

const char* version();

}  // namespace qpat::cli
