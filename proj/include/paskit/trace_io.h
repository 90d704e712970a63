#ifndef PASKIT_TRACE_IO_H_
#define PASKIT_TRACE_IO_H_

// Single-file trace container.
//
//   offset 0   "PAST"                       magic
//   offset 4   u32 LE                       format version (1)
//   offset 8   u32 LE                       manifest byte length
//   offset 12  manifest                     UTF-8 JSON
//              zero padding                 up to the next 64-byte boundary
//              blob                         little-endian f32 tensors
//
// The manifest carries the header fields, the span layout and token list
// (0-based offsets), the object candidates, the ground-truth objects, the
// blob length and a tensor directory. Each directory entry names one tensor
// ("attention", "logits" or "marginal"), its 0-based token offset, the layer
// for attention rows, dtype "f32", shape, and byte offset/length relative to
// the blob start.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "paskit/trace.h"

namespace paskit {

inline constexpr char kTraceMagic[4] = {'P', 'A', 'S', 'T'};
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kBlobAlignment = 64;

enum class FormatErrorCode {
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kBadManifest,
  kShapeMismatch,
  kNotNormalized,
  kInvariant,
  kIo,
};

std::string_view FormatErrorName(FormatErrorCode code);

// Structured read/write failure; `offset` is the byte offset in the
// container at which the violated constraint was detected.
class TraceFormatError : public std::runtime_error {
 public:
  TraceFormatError(FormatErrorCode code, std::size_t offset,
                   const std::string& detail);

  FormatErrorCode code() const { return code_; }
  std::size_t offset() const { return offset_; }
  const std::string& detail() const { return detail_; }

 private:
  FormatErrorCode code_;
  std::size_t offset_;
  std::string detail_;
};

// Serializes `trace`; refuses (kInvariant) if it violates the model
// invariants. Returns the number of bytes written.
std::size_t WriteTrace(const Trace& trace, std::ostream& sink);
std::vector<std::byte> EncodeTrace(const Trace& trace);
// Writes via a temporary file and rename.
std::size_t WriteTraceFile(const Trace& trace,
                           const std::filesystem::path& path);

// Parses and validates a container. Never reads past the given bytes; every
// failure is reported as TraceFormatError.
Trace DecodeTrace(std::span<const std::byte> bytes);
Trace ReadTrace(std::istream& source);
Trace ReadTraceFile(const std::filesystem::path& path);

struct FileValidation {
  std::filesystem::path path;
  bool ok = false;
  std::vector<std::string> violations;
};

struct ValidationReport {
  std::vector<FileValidation> files;

  bool ok() const;
  std::size_t failures() const;
};

inline constexpr std::string_view kTraceExtension = ".past";

// Validates every "*.past" file directly inside `directory`, in path order.
// Throws std::runtime_error if the directory cannot be read.
ValidationReport ValidateCorpus(const std::filesystem::path& directory);
FileValidation ValidateFile(const std::filesystem::path& path);

// Sorted list of trace files in a corpus directory.
std::vector<std::filesystem::path> ListTraceFiles(
    const std::filesystem::path& directory);

}  // namespace paskit

#endif  // PASKIT_TRACE_IO_H_
