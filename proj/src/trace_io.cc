#include "paskit/trace_io.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <iterator>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "file_util.h"
#include "json.hpp"

namespace paskit {

using nlohmann::json;

std::string_view FormatErrorName(FormatErrorCode code) {
  switch (code) {
    case FormatErrorCode::kBadMagic:
      return "bad magic";
    case FormatErrorCode::kVersionMismatch:
      return "version mismatch";
    case FormatErrorCode::kTruncated:
      return "truncated";
    case FormatErrorCode::kBadManifest:
      return "bad manifest";
    case FormatErrorCode::kShapeMismatch:
      return "shape mismatch";
    case FormatErrorCode::kNotNormalized:
      return "non-normalized attention row";
    case FormatErrorCode::kInvariant:
      return "invariant violation";
    case FormatErrorCode::kIo:
      return "io error";
  }
  return "unknown";
}

namespace {

std::string Describe(FormatErrorCode code, std::size_t offset,
                     const std::string& detail) {
  std::ostringstream out;
  out << FormatErrorName(code) << " at offset " << offset;
  if (!detail.empty()) out << ": " << detail;
  return out.str();
}

}  // namespace

TraceFormatError::TraceFormatError(FormatErrorCode code, std::size_t offset,
                                   const std::string& detail)
    : std::runtime_error(Describe(code, offset, detail)),
      code_(code),
      offset_(offset),
      detail_(detail) {}

namespace {

constexpr std::size_t kPreambleSize = 12;

std::size_t AlignUp(std::size_t value, std::size_t alignment) {
  return (value + alignment - 1) / alignment * alignment;
}

void PutU32(std::vector<std::byte>& out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::byte>((value >> (8 * i)) & 0xffu));
  }
}

std::uint32_t GetU32(std::span<const std::byte> bytes, std::size_t at) {
  std::uint32_t value = 0;
  for (int i = 0; i < 4; ++i) {
    value |= std::to_integer<std::uint32_t>(bytes[at + i]) << (8 * i);
  }
  return value;
}

void PutFloats(std::vector<std::byte>& out, std::span<const float> values) {
  for (float v : values) {
    PutU32(out, std::bit_cast<std::uint32_t>(v));
  }
}

std::string AttentionName(int layer, std::size_t token) {
  return "attention.l" + std::to_string(layer) + ".t" + std::to_string(token);
}
std::string LogitsName(std::size_t token) {
  return "logits.t" + std::to_string(token);
}
std::string MarginalName(std::size_t token) {
  return "marginal.t" + std::to_string(token);
}

json SpanJson(std::size_t begin, std::size_t end) {
  return json::array({begin, end});
}

// Appends a tensor to the blob and returns its directory entry.
json AppendTensor(std::vector<std::byte>& blob, std::string name,
                  std::string kind, std::size_t token, std::optional<int> layer,
                  std::vector<std::size_t> shape,
                  std::span<const float> values) {
  json entry;
  entry["name"] = std::move(name);
  entry["kind"] = std::move(kind);
  entry["token"] = token;
  if (layer) entry["layer"] = *layer;
  entry["dtype"] = "f32";
  entry["shape"] = std::move(shape);
  entry["offset"] = blob.size();
  entry["length"] = values.size() * sizeof(float);
  PutFloats(blob, values);
  return entry;
}

}  // namespace

std::vector<std::byte> EncodeTrace(const Trace& trace) {
  if (auto violation = FindInvariantViolation(trace)) {
    throw TraceFormatError(FormatErrorCode::kInvariant, 0,
                           "refusing to write: " + *violation);
  }
  const SpanLayout& layout = trace.layout;
  std::vector<std::byte> blob;
  json tensors = json::array();
  for (const auto& [key, row] : trace.attention) {
    tensors.push_back(AppendTensor(blob, AttentionName(key.layer,
                                                       key.position - 1),
                                   "attention", key.position - 1, key.layer,
                                   {row.size()}, row));
  }
  for (const auto& [k, logits] : trace.logit_slices) {
    tensors.push_back(AppendTensor(blob, LogitsName(k - 1), "logits", k - 1,
                                   std::nullopt, {logits.size()}, logits));
  }
  for (const auto& [k, marginal] : trace.marginals) {
    tensors.push_back(AppendTensor(
        blob, MarginalName(k - 1), "marginal", k - 1, std::nullopt,
        {marginal.rows(), marginal.vocab_size()}, marginal.values()));
  }

  json manifest;
  const TraceHeader& h = trace.header;
  manifest["schema_version"] = h.schema_version;
  manifest["trace_id"] = h.trace_id;
  manifest["model_tag"] = h.model_tag;
  manifest["vocab_size"] = h.vocab_size;
  manifest["head_count"] = h.head_count;
  manifest["layers"] = h.layers;
  manifest["marginal_prelim_identical"] = h.marginal_prelim_identical;
  manifest["spans"] = {
      {"bos", SpanJson(0, layout.bos_len())},
      {"image", SpanJson(layout.image_span().begin - 1,
                         layout.image_span().end - 1)},
      {"instruction", SpanJson(layout.instruction_span().begin - 1,
                               layout.instruction_span().end - 1)},
      {"output", SpanJson(layout.input_length(), layout.total_length())},
  };
  json tokens = json::array();
  for (const Token& t : trace.tokens) {
    tokens.push_back(json::array({t.id, t.surface}));
  }
  manifest["tokens"] = std::move(tokens);
  json candidates = json::array();
  for (Position k : trace.object_candidates) candidates.push_back(k - 1);
  manifest["object_candidates"] = std::move(candidates);
  manifest["ground_truth_objects"] = trace.ground_truth_objects;
  manifest["blob_length"] = blob.size();
  manifest["tensors"] = std::move(tensors);

  std::string text;
  try {
    text = manifest.dump();
  } catch (const json::exception& e) {
    throw TraceFormatError(FormatErrorCode::kInvariant, 0,
                           std::string("manifest not encodable: ") + e.what());
  }
  if (text.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw TraceFormatError(FormatErrorCode::kInvariant, 0,
                           "manifest exceeds 4 GiB");
  }

  std::vector<std::byte> out;
  const std::size_t blob_start =
      AlignUp(kPreambleSize + text.size(), kBlobAlignment);
  out.reserve(blob_start + blob.size());
  for (char c : kTraceMagic) out.push_back(static_cast<std::byte>(c));
  PutU32(out, kContainerVersion);
  PutU32(out, static_cast<std::uint32_t>(text.size()));
  for (char c : text) out.push_back(static_cast<std::byte>(c));
  out.resize(blob_start, std::byte{0});
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

std::size_t WriteTrace(const Trace& trace, std::ostream& sink) {
  const std::vector<std::byte> bytes = EncodeTrace(trace);
  sink.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  if (!sink) {
    throw TraceFormatError(FormatErrorCode::kIo, 0, "sink write failed");
  }
  return bytes.size();
}

std::size_t WriteTraceFile(const Trace& trace,
                           const std::filesystem::path& path) {
  const std::vector<std::byte> bytes = EncodeTrace(trace);
  try {
    internal::AtomicWriteFile(path, bytes);
  } catch (const std::exception& e) {
    throw TraceFormatError(FormatErrorCode::kIo, 0, e.what());
  }
  return bytes.size();
}

namespace {

// Strict accessors over an untrusted manifest; every failure becomes a
// kBadManifest error at the manifest offset.
class ManifestReader {
 public:
  explicit ManifestReader(std::size_t offset) : offset_(offset) {}

  [[noreturn]] void Fail(const std::string& detail) const {
    throw TraceFormatError(FormatErrorCode::kBadManifest, offset_, detail);
  }

  const json& Field(const json& obj, const char* key) const {
    if (!obj.is_object()) Fail(std::string("expected object holding ") + key);
    auto it = obj.find(key);
    if (it == obj.end()) Fail(std::string("missing key '") + key + "'");
    return *it;
  }

  std::uint64_t Unsigned(const json& value, const char* what) const {
    if (value.is_number_unsigned()) return value.get<std::uint64_t>();
    if (value.is_number_integer() && value.get<std::int64_t>() >= 0) {
      return static_cast<std::uint64_t>(value.get<std::int64_t>());
    }
    Fail(std::string(what) + " must be a non-negative integer");
  }

  std::int64_t Integer(const json& value, const char* what) const {
    if (value.is_number_unsigned()) {
      const auto u = value.get<std::uint64_t>();
      if (u > static_cast<std::uint64_t>(
                  std::numeric_limits<std::int64_t>::max())) {
        Fail(std::string(what) + " out of range");
      }
      return static_cast<std::int64_t>(u);
    }
    if (value.is_number_integer()) return value.get<std::int64_t>();
    Fail(std::string(what) + " must be an integer");
  }

  std::string String(const json& value, const char* what) const {
    if (!value.is_string()) Fail(std::string(what) + " must be a string");
    return value.get<std::string>();
  }

  const json& Array(const json& value, const char* what) const {
    if (!value.is_array()) Fail(std::string(what) + " must be an array");
    return value;
  }

  std::pair<std::uint64_t, std::uint64_t> Span(const json& spans,
                                               const char* key) const {
    const json& s = Array(Field(spans, key), key);
    if (s.size() != 2) Fail(std::string("span '") + key + "' needs 2 bounds");
    const auto begin = Unsigned(s[0], key);
    const auto end = Unsigned(s[1], key);
    if (end < begin) Fail(std::string("span '") + key + "' is reversed");
    return {begin, end};
  }

 private:
  std::size_t offset_;
};

struct TensorEntry {
  std::string kind;
  std::size_t token = 0;
  int layer = 0;
  std::vector<std::uint64_t> shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

std::optional<std::uint64_t> CheckedProduct(
    const std::vector<std::uint64_t>& dims) {
  std::uint64_t product = 1;
  for (auto d : dims) {
    if (d != 0 && product > std::numeric_limits<std::uint64_t>::max() / d) {
      return std::nullopt;
    }
    product *= d;
  }
  return product;
}

std::vector<float> ReadFloats(std::span<const std::byte> bytes,
                              std::size_t at, std::size_t count) {
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = std::bit_cast<float>(GetU32(bytes, at + 4 * i));
  }
  return values;
}

std::string FormatRowSum(double sum) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", sum);
  return buf;
}

Trace DecodeUnchecked(std::span<const std::byte> bytes) {
  if (bytes.size() < 4) {
    throw TraceFormatError(FormatErrorCode::kBadMagic, 0,
                           "input shorter than the magic");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (bytes[i] != static_cast<std::byte>(kTraceMagic[i])) {
      throw TraceFormatError(FormatErrorCode::kBadMagic, 0,
                             "expected \"PAST\"");
    }
  }
  if (bytes.size() < kPreambleSize) {
    throw TraceFormatError(FormatErrorCode::kTruncated, 4,
                           "preamble truncated");
  }
  const std::uint32_t version = GetU32(bytes, 4);
  if (version != kContainerVersion) {
    throw TraceFormatError(FormatErrorCode::kVersionMismatch, 4,
                           "container version " + std::to_string(version) +
                               ", expected " +
                               std::to_string(kContainerVersion));
  }
  const std::size_t manifest_len = GetU32(bytes, 8);
  if (manifest_len > bytes.size() - kPreambleSize) {
    throw TraceFormatError(FormatErrorCode::kTruncated, 8,
                           "manifest length " + std::to_string(manifest_len) +
                               " exceeds input");
  }
  const std::size_t blob_start =
      AlignUp(kPreambleSize + manifest_len, kBlobAlignment);
  const ManifestReader r(kPreambleSize);

  json manifest;
  {
    const char* begin =
        reinterpret_cast<const char*>(bytes.data()) + kPreambleSize;
    manifest = json::parse(begin, begin + manifest_len, nullptr,
                           /*allow_exceptions=*/false);
    if (manifest.is_discarded() || !manifest.is_object()) {
      r.Fail("manifest is not a JSON object");
    }
  }

  const auto schema = r.Unsigned(r.Field(manifest, "schema_version"),
                                 "schema_version");
  if (schema != kSchemaVersion) {
    throw TraceFormatError(FormatErrorCode::kVersionMismatch, kPreambleSize,
                           "schema version " + std::to_string(schema));
  }

  Trace trace;
  TraceHeader& h = trace.header;
  h.schema_version = static_cast<std::uint32_t>(schema);
  h.trace_id = r.String(r.Field(manifest, "trace_id"), "trace_id");
  h.model_tag = r.String(r.Field(manifest, "model_tag"), "model_tag");
  h.vocab_size = r.Unsigned(r.Field(manifest, "vocab_size"), "vocab_size");
  h.head_count = r.Unsigned(r.Field(manifest, "head_count"), "head_count");
  {
    const json& flag = r.Field(manifest, "marginal_prelim_identical");
    if (!flag.is_boolean()) r.Fail("marginal_prelim_identical must be bool");
    h.marginal_prelim_identical = flag.get<bool>();
  }
  for (const json& l : r.Array(r.Field(manifest, "layers"), "layers")) {
    const auto layer = r.Integer(l, "layer");
    if (layer < 0 || layer > std::numeric_limits<int>::max()) {
      r.Fail("layer index out of range");
    }
    h.layers.push_back(static_cast<int>(layer));
  }

  const json& spans = r.Field(manifest, "spans");
  const auto bos = r.Span(spans, "bos");
  const auto image = r.Span(spans, "image");
  const auto instruction = r.Span(spans, "instruction");
  const auto output = r.Span(spans, "output");
  if (bos.first != 0 || image.first != bos.second ||
      instruction.first != image.second || output.first != instruction.second) {
    throw TraceFormatError(FormatErrorCode::kShapeMismatch, kPreambleSize,
                           "spans do not tile [0, n)");
  }

  const json& tokens = r.Array(r.Field(manifest, "tokens"), "tokens");
  if (tokens.size() != output.second) {
    throw TraceFormatError(
        FormatErrorCode::kShapeMismatch, kPreambleSize,
        "token count " + std::to_string(tokens.size()) +
            " != span length " + std::to_string(output.second));
  }
  trace.layout = SpanLayout::Create(
      bos.second, {image.first + 1, image.second + 1},
      {instruction.first + 1, instruction.second + 1}, output.second);
  trace.tokens.reserve(tokens.size());
  for (const json& t : tokens) {
    if (!t.is_array() || t.size() != 2) r.Fail("token must be [id, surface]");
    const auto id = r.Integer(t[0], "token id");
    if (id < std::numeric_limits<std::int32_t>::min() ||
        id > std::numeric_limits<std::int32_t>::max()) {
      r.Fail("token id out of range");
    }
    trace.tokens.push_back(
        {static_cast<std::int32_t>(id), r.String(t[1], "token surface")});
  }
  for (const json& c :
       r.Array(r.Field(manifest, "object_candidates"), "object_candidates")) {
    const auto offset = r.Unsigned(c, "object candidate");
    if (offset >= output.second) r.Fail("object candidate beyond sequence");
    trace.object_candidates.push_back(offset + 1);
  }
  for (const json& g : r.Array(r.Field(manifest, "ground_truth_objects"),
                               "ground_truth_objects")) {
    trace.ground_truth_objects.push_back(r.String(g, "ground-truth object"));
  }

  const auto blob_length =
      r.Unsigned(r.Field(manifest, "blob_length"), "blob_length");
  if (blob_start > bytes.size() || blob_length != bytes.size() - blob_start) {
    const std::size_t actual =
        blob_start > bytes.size() ? 0 : bytes.size() - blob_start;
    throw TraceFormatError(FormatErrorCode::kTruncated,
                           std::min(blob_start, bytes.size()),
                           "declared blob length " +
                               std::to_string(blob_length) + ", actual " +
                               std::to_string(actual));
  }
  const std::span<const std::byte> blob = bytes.subspan(blob_start);

  std::set<std::string> seen;
  for (const json& e : r.Array(r.Field(manifest, "tensors"), "tensors")) {
    TensorEntry entry;
    const std::string name = r.String(r.Field(e, "name"), "tensor name");
    if (!seen.insert(name).second) r.Fail("duplicate tensor " + name);
    entry.kind = r.String(r.Field(e, "kind"), "tensor kind");
    if (r.String(r.Field(e, "dtype"), "dtype") != "f32") {
      r.Fail("tensor " + name + " has unsupported dtype");
    }
    entry.token = r.Unsigned(r.Field(e, "token"), "tensor token");
    if (entry.token >= output.second) {
      throw TraceFormatError(FormatErrorCode::kShapeMismatch, kPreambleSize,
                             "tensor " + name + " beyond sequence");
    }
    for (const json& d : r.Array(r.Field(e, "shape"), "shape")) {
      entry.shape.push_back(r.Unsigned(d, "shape dimension"));
    }
    entry.offset = r.Unsigned(r.Field(e, "offset"), "tensor offset");
    entry.length = r.Unsigned(r.Field(e, "length"), "tensor length");

    const std::size_t file_offset =
        blob_start + std::min<std::uint64_t>(entry.offset, blob.size());
    const auto elements = CheckedProduct(entry.shape);
    if (!elements || *elements > blob.size() / sizeof(float) ||
        *elements * sizeof(float) != entry.length) {
      throw TraceFormatError(FormatErrorCode::kShapeMismatch, file_offset,
                             "tensor " + name + " length disagrees with shape");
    }
    if (entry.offset > blob.size() || entry.length > blob.size() - entry.offset) {
      throw TraceFormatError(FormatErrorCode::kTruncated, file_offset,
                             "tensor " + name + " extends past the blob");
    }
    if (entry.offset % sizeof(float) != 0) {
      throw TraceFormatError(FormatErrorCode::kShapeMismatch, file_offset,
                             "tensor " + name + " misaligned");
    }

    const Position k = entry.token + 1;
    const auto shape_error = [&](const std::string& detail) {
      throw TraceFormatError(FormatErrorCode::kShapeMismatch, file_offset,
                             "tensor " + name + ": " + detail);
    };
    std::vector<float> values = ReadFloats(blob, entry.offset, *elements);
    if (entry.kind == "attention") {
      const auto layer = r.Integer(r.Field(e, "layer"), "tensor layer");
      if (layer < 0 || layer > std::numeric_limits<int>::max()) {
        r.Fail("tensor layer out of range");
      }
      if (name != AttentionName(static_cast<int>(layer), entry.token)) {
        r.Fail("tensor name " + name + " disagrees with its fields");
      }
      if (entry.shape.size() != 1 || entry.shape[0] != entry.token) {
        shape_error("attention row must hold k-1 weights");
      }
      double sum = 0.0;
      for (float w : values) sum += w;
      if (!(std::abs(sum - 1.0) <= kRowSumTolerance)) {
        throw TraceFormatError(FormatErrorCode::kNotNormalized, file_offset,
                               "row sum " + FormatRowSum(sum) +
                                   " at position " + std::to_string(k) +
                                   " (layer " + std::to_string(layer) + ")");
      }
      trace.attention.emplace(AttentionKey{static_cast<int>(layer), k},
                              std::move(values));
    } else if (entry.kind == "logits") {
      if (name != LogitsName(entry.token)) {
        r.Fail("tensor name " + name + " disagrees with its fields");
      }
      if (entry.shape.size() != 1 || entry.shape[0] != h.vocab_size) {
        shape_error("logit slice must hold V values");
      }
      trace.logit_slices.emplace(k, std::move(values));
    } else if (entry.kind == "marginal") {
      if (name != MarginalName(entry.token)) {
        r.Fail("tensor name " + name + " disagrees with its fields");
      }
      if (entry.shape.size() != 2 || entry.shape[1] != h.vocab_size) {
        shape_error("marginal matrix must be L x V");
      }
      trace.marginals.emplace(
          k, MarginalLogits(entry.shape[0], entry.shape[1], std::move(values)));
    } else {
      r.Fail("unknown tensor kind " + entry.kind);
    }
  }

  if (auto violation = FindInvariantViolation(trace)) {
    throw TraceFormatError(FormatErrorCode::kInvariant, kPreambleSize,
                           *violation);
  }
  return trace;
}

}  // namespace

Trace DecodeTrace(std::span<const std::byte> bytes) {
  try {
    return DecodeUnchecked(bytes);
  } catch (const TraceFormatError&) {
    throw;
  } catch (const std::exception& e) {
    // Anything else (allocation failure, layout rejection) is still a
    // malformed container.
    throw TraceFormatError(FormatErrorCode::kBadManifest, kPreambleSize,
                           e.what());
  }
}

Trace ReadTrace(std::istream& source) {
  std::vector<char> raw((std::istreambuf_iterator<char>(source)),
                        std::istreambuf_iterator<char>());
  if (source.bad()) {
    throw TraceFormatError(FormatErrorCode::kIo, 0, "source read failed");
  }
  return DecodeTrace(std::as_bytes(std::span(raw)));
}

Trace ReadTraceFile(const std::filesystem::path& path) {
  std::vector<std::byte> bytes;
  try {
    bytes = internal::ReadFileBytes(path);
  } catch (const std::exception& e) {
    throw TraceFormatError(FormatErrorCode::kIo, 0, e.what());
  }
  return DecodeTrace(bytes);
}

bool ValidationReport::ok() const { return failures() == 0; }

std::size_t ValidationReport::failures() const {
  return static_cast<std::size_t>(std::count_if(
      files.begin(), files.end(), [](const auto& f) { return !f.ok; }));
}

FileValidation ValidateFile(const std::filesystem::path& path) {
  FileValidation result{path, true, {}};
  try {
    ReadTraceFile(path);
  } catch (const TraceFormatError& e) {
    result.ok = false;
    result.violations.push_back(e.what());
  }
  return result;
}

std::vector<std::filesystem::path> ListTraceFiles(
    const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::directory_iterator it(directory, ec);
  if (ec) {
    throw std::runtime_error("cannot read directory " + directory.string() +
                             ": " + ec.message());
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : it) {
    if (entry.is_regular_file() && entry.path().extension() == kTraceExtension) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

ValidationReport ValidateCorpus(const std::filesystem::path& directory) {
  ValidationReport report;
  for (const auto& path : ListTraceFiles(directory)) {
    report.files.push_back(ValidateFile(path));
  }
  return report;
}

}  // namespace paskit
