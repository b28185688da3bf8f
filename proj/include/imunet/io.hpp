#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace imunet {

// Floating-point values in all CSV artifacts carry 9 significant digits.
std::string format_g9(double v);

// Write-to-temp-then-rename so readers never observe a half-written file and
// reruns either fully replace an artifact or leave the old one intact.
void atomic_write_file(const std::filesystem::path& path, std::string_view contents);

// Whole-file read; throws IoError when the file cannot be opened.
std::string read_text_file(const std::filesystem::path& path);

std::vector<std::string> split(const std::string& line, char delim);

// strtod with full-token validation; `what` names the value in the error.
double parse_double(const std::string& token, const std::string& what);

// Log level from the IMUNET_LOG environment variable: quiet=0, info=1 (the
// default), debug=2. Progress chatter goes to stderr so stdout stays clean
// for machine-readable output.
int log_level();
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace imunet
