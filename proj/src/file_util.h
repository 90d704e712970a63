#ifndef PASKIT_SRC_FILE_UTIL_H_
#define PASKIT_SRC_FILE_UTIL_H_

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace paskit::internal {

// Writes to a sibling temporary file, then renames over `path`.
void AtomicWriteFile(const std::filesystem::path& path,
                     std::span<const std::byte> bytes);
void AtomicWriteFile(const std::filesystem::path& path,
                     std::string_view text);

std::vector<std::byte> ReadFileBytes(const std::filesystem::path& path);
std::string ReadFileText(const std::filesystem::path& path);

// Shortest round-trippable decimal form of a double ("%.17g" trimmed).
std::string FormatDouble(double value);

}  // namespace paskit::internal

#endif  // PASKIT_SRC_FILE_UTIL_H_
