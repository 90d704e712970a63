#include "paskit/cli.h"

#include <algorithm>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "file_util.h"
#include "json.hpp"
#include "parallel.h"
#include "paskit/evaluation.h"
#include "paskit/object_matching.h"
#include "paskit/report.h"
#include "paskit/scoring.h"
#include "paskit/simulator.h"
#include "paskit/trace_io.h"

namespace paskit {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using internal::AtomicWriteFile;
using internal::FormatDouble;

constexpr std::string_view kRunManifestName = "run_manifest.json";
constexpr std::size_t kMaxPrintedWarnings = 20;

// Failure that maps to exit status 1 with a message.
class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure that maps to exit status 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::string> SplitList(std::string_view text) {
  std::vector<std::string> items;
  std::string current;
  for (char c : text) {
    if (c == ',') {
      if (!current.empty()) items.push_back(current);
      current.clear();
    } else if (c != ' ') {
      current.push_back(c);
    }
  }
  if (!current.empty()) items.push_back(current);
  return items;
}

void WriteRunManifest(const fs::path& path, std::string_view command,
                      ordered_json config, const std::vector<std::string>& inputs,
                      const std::vector<std::string>& outputs,
                      const std::vector<std::uint64_t>& seeds) {
  ordered_json m;
  m["command"] = command;
  m["toolkit_version"] = kToolkitVersion;
  m["config"] = std::move(config);
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["seeds"] = seeds;
  AtomicWriteFile(path, m.dump(2) + "\n");
}

void PrintWarnings(const std::vector<std::string>& warnings,
                   std::ostream& err) {
  for (std::size_t i = 0; i < warnings.size() && i < kMaxPrintedWarnings; ++i) {
    err << "warning: " << warnings[i] << "\n";
  }
  if (warnings.size() > kMaxPrintedWarnings) {
    err << "warning: ... " << warnings.size() - kMaxPrintedWarnings
        << " more warnings\n";
  }
}

void EnsureDirectory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw CommandError("cannot create " + dir.string() + ": " + ec.message());
  }
}

// Loads every trace of a corpus directory; any invalid file is fatal.
std::vector<Trace> LoadCorpus(const fs::path& corpus) {
  std::vector<fs::path> files;
  try {
    files = ListTraceFiles(corpus);
  } catch (const std::exception& e) {
    throw CommandError(e.what());
  }
  if (files.empty()) throw CommandError("no trace files in " + corpus.string());
  std::vector<Trace> traces(files.size());
  internal::ParallelFor(files.size(), ThreadCount(), [&](std::size_t i) {
    try {
      traces[i] = ReadTraceFile(files[i]);
    } catch (const TraceFormatError& e) {
      throw CommandError(files[i].string() + ": " + e.what());
    }
  });
  return traces;
}

ClassVocabulary LoadVocabulary(const std::string& vocab, const fs::path& corpus,
                               std::string& resolved) {
  resolved = vocab;
  if (resolved.empty()) {
    const fs::path fallback = corpus / kVocabularyName;
    if (!fs::exists(fallback)) {
      throw UsageError("--vocab is required (no " +
                       std::string(kVocabularyName) + " in the corpus)");
    }
    resolved = fallback.string();
  }
  try {
    return ResolveVocabulary(resolved);
  } catch (const std::exception& e) {
    throw CommandError("cannot load vocabulary " + resolved + ": " + e.what());
  }
}

std::vector<TraceMentions> MentionsOf(const std::vector<Trace>& traces,
                                      const ClassVocabulary& vocab) {
  std::vector<TraceMentions> corpus;
  corpus.reserve(traces.size());
  for (const Trace& t : traces) corpus.push_back({&t, LabeledMentions(t, vocab)});
  return corpus;
}

// ---------------------------------------------------------------- validate

struct ValidateOptions {
  std::vector<std::string> paths;
};

int CmdValidate(const ValidateOptions& opts, std::ostream& out,
                std::ostream& err) {
  if (opts.paths.empty()) {
    err << "warning: no inputs given\n";
    out << "validated 0 files, 0 failures\n";
    return kExitOk;
  }
  ValidationReport report;
  for (const std::string& p : opts.paths) {
    std::error_code ec;
    if (fs::is_directory(p, ec)) {
      ValidationReport sub;
      try {
        sub = ValidateCorpus(p);
      } catch (const std::exception& e) {
        throw CommandError(e.what());
      }
      report.files.insert(report.files.end(), sub.files.begin(),
                          sub.files.end());
    } else {
      report.files.push_back(ValidateFile(p));
    }
  }
  for (const FileValidation& f : report.files) {
    if (f.ok) {
      out << "ok   " << f.path.string() << "\n";
    } else {
      for (const std::string& v : f.violations) {
        out << "FAIL " << f.path.string() << ": " << v << "\n";
      }
    }
  }
  out << "validated " << report.files.size() << " files, "
      << report.failures() << " failures\n";
  return report.ok() ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
  SimConfig config;
  std::string out;
};

ordered_json SimConfigJson(const SimConfig& config) {
  return ordered_json::parse(SimConfigToJson(config));
}

int CmdSimulate(const SimulateOptions& opts, std::ostream& out,
                std::ostream& /*err*/) {
  try {
    ValidateSimConfig(opts.config);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const fs::path dir(opts.out);
  EnsureDirectory(dir);
  const CorpusSummary summary = GenerateCorpus(opts.config, dir);

  ordered_json config = SimConfigJson(opts.config);
  config["out"] = opts.out;
  std::vector<std::string> outputs;
  for (const auto& f : summary.trace_files) outputs.push_back(f.string());
  outputs.push_back(summary.label_manifest.string());
  outputs.push_back(summary.vocabulary.string());
  WriteRunManifest(dir / kRunManifestName, "simulate", std::move(config), {},
                   outputs, {opts.config.seed});
  out << "wrote " << summary.trace_files.size() << " traces to "
      << dir.string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------- score

struct ScoreOptions {
  std::string corpus;
  std::string vocab;
  std::string detectors = "pas";
  int layer = 0;
  std::string out;
};

std::vector<Detector> ParseDetectorList(std::string_view list) {
  std::vector<Detector> detectors;
  for (const std::string& name : SplitList(list)) {
    const auto d = ParseDetector(name);
    if (!d) {
      throw UsageError("unknown detector '" + name +
                       "'; available: " + DetectorRegistry());
    }
    if (std::find(detectors.begin(), detectors.end(), *d) == detectors.end()) {
      detectors.push_back(*d);
    }
  }
  if (detectors.empty()) {
    throw UsageError("no detectors; available: " + DetectorRegistry());
  }
  return detectors;
}

int CmdScore(const ScoreOptions& opts, std::ostream& out, std::ostream& err) {
  const std::vector<Detector> detectors = ParseDetectorList(opts.detectors);
  if (opts.layer < 0) throw UsageError("--layer must be >= 0");
  const std::vector<Trace> traces = LoadCorpus(opts.corpus);
  std::string vocab_path;
  const ClassVocabulary vocab = LoadVocabulary(opts.vocab, opts.corpus,
                                               vocab_path);
  const std::vector<TraceMentions> corpus = MentionsOf(traces, vocab);

  ScoredCorpus scored;
  try {
    scored = ScoreCorpus(corpus, detectors, opts.layer);
  } catch (const std::exception& e) {
    throw CommandError(e.what());
  }
  PrintWarnings(scored.warnings, err);

  const fs::path out_path(opts.out);
  if (out_path.has_parent_path()) EnsureDirectory(out_path.parent_path());
  AtomicWriteFile(out_path, FormatScoreFile(scored.records));

  std::string detector_list;
  for (Detector d : detectors) {
    if (!detector_list.empty()) detector_list += ",";
    detector_list += DetectorName(d);
  }
  ordered_json config;
  config["corpus"] = opts.corpus;
  config["vocab"] = vocab_path;
  config["detectors"] = detector_list;
  config["layer"] = opts.layer;
  config["out"] = opts.out;
  WriteRunManifest(fs::path(opts.out + ".manifest.json"), "score",
                   std::move(config), {opts.corpus, vocab_path}, {opts.out},
                   {});
  out << "scored " << scored.records.size() << " records from "
      << traces.size() << " traces\n";
  return kExitOk;
}

// -------------------------------------------------------------------- eval

struct EvalOptions {
  std::string scores;
  std::string labels;
  std::string out;
  std::string format = "all";
};

std::vector<ScoreRecord> LoadScores(const std::string& path) {
  std::string text;
  try {
    text = internal::ReadFileText(path);
  } catch (const std::exception& e) {
    throw CommandError(e.what());
  }
  std::vector<ScoreRecord> records;
  try {
    records = ParseScoreFile(text);
  } catch (const std::exception& e) {
    throw CommandError(e.what());
  }
  if (records.empty()) throw CommandError("score file " + path + " is empty");
  return records;
}

void ApplyLabelManifest(const std::string& path,
                        std::vector<ScoreRecord>& records, std::ostream& err) {
  std::map<LabelKey, MentionLabel> labels;
  try {
    labels = ParseLabelManifest(internal::ReadFileText(path));
  } catch (const std::exception& e) {
    throw CommandError(e.what());
  }
  std::size_t missing = 0;
  for (ScoreRecord& r : records) {
    auto it = labels.find({r.trace_id, r.position});
    if (it == labels.end()) {
      r.label = MentionLabel::kUnlabeled;
      ++missing;
    } else {
      r.label = it->second;
    }
  }
  if (missing > 0) {
    err << "warning: " << missing
        << " records have no entry in the label manifest and are ignored\n";
  }
}

int CmdEval(const EvalOptions& opts, std::ostream& out, std::ostream& err) {
  static const std::set<std::string> kFormats = {"all", "csv", "svg", "json"};
  if (!kFormats.contains(opts.format)) {
    throw UsageError("--format must be one of all, csv, svg, json");
  }
  std::vector<ScoreRecord> records = LoadScores(opts.scores);
  if (!opts.labels.empty()) ApplyLabelManifest(opts.labels, records, err);
  const auto groups = GroupByDetector(records);

  const fs::path dir(opts.out);
  EnsureDirectory(dir);
  const bool csv = opts.format == "all" || opts.format == "csv";
  const bool svg = opts.format == "all" || opts.format == "svg";
  const bool js = opts.format == "all" || opts.format == "json";

  std::vector<EvalReport> reports;
  std::vector<std::string> outputs;
  std::string summary =
      "detector,auroc,n_real,n_hallucinated,real_q1,real_median,real_q3,"
      "hallucinated_q1,hallucinated_median,hallucinated_q3\n";
  std::vector<DistributionPanel> panels;
  for (const auto& [detector, group] : groups) {
    const auto n_real = static_cast<std::size_t>(std::count(
        group.labels.begin(), group.labels.end(), MentionLabel::kReal));
    const std::size_t n_halluc = group.labels.size() - n_real;
    if (n_real == 0 || n_halluc == 0) {
      err << "warning: detector " << detector
          << " has a single label class; AUROC undefined\n";
      summary += detector + ",undefined," + std::to_string(n_real) + "," +
                 std::to_string(n_halluc) + ",,,,,,\n";
      continue;
    }
    EvalReport r = Evaluate(detector, group.scores, group.labels);
    summary += detector + "," + FormatDouble(r.auroc) + "," +
               std::to_string(r.n_real) + "," +
               std::to_string(r.n_hallucinated);
    for (const Quartiles& q : {r.real_quartiles, r.hallucinated_quartiles}) {
      summary += "," + FormatDouble(q.q1) + "," + FormatDouble(q.median) +
                 "," + FormatDouble(q.q3);
    }
    summary += "\n";
    DistributionPanel panel{detector, {}, {}};
    for (std::size_t i = 0; i < group.scores.size(); ++i) {
      (group.labels[i] == MentionLabel::kReal ? panel.real
                                              : panel.hallucinated)
          .push_back(group.scores[i]);
    }
    panels.push_back(std::move(panel));
    reports.push_back(std::move(r));
  }

  auto emit = [&](const std::string& name, const std::string& content) {
    AtomicWriteFile(dir / name, content);
    outputs.push_back((dir / name).string());
  };
  emit("summary.csv", summary);
  if (csv) {
    for (const EvalReport& r : reports) {
      emit("roc_" + r.detector + ".csv", FormatCurveCsv(r.roc, "fpr", "tpr"));
      emit("prc_" + r.detector + ".csv",
           FormatCurveCsv(r.prc, "recall", "precision"));
    }
  }
  if (js) emit("report.json", FormatReportJson(reports));
  if (svg && !reports.empty()) {
    std::vector<CurveSeries> roc;
    std::vector<CurveSeries> prc;
    for (const EvalReport& r : reports) {
      roc.push_back({r.detector, r.roc});
      prc.push_back({r.detector, r.prc});
    }
    const double base_rate =
        static_cast<double>(reports[0].n_hallucinated) /
        static_cast<double>(reports[0].n_hallucinated + reports[0].n_real);
    emit("roc.svg", RenderCurveSvg("ROC", "false positive rate",
                                   "true positive rate", roc, true));
    emit("prc.svg", RenderCurveSvg("Precision-recall", "recall", "precision",
                                   prc, false, base_rate));
    emit("distribution.svg", RenderDistributionSvg(panels));
  }

  ordered_json config;
  config["scores"] = opts.scores;
  config["labels"] = opts.labels;
  config["out"] = opts.out;
  config["format"] = opts.format;
  std::vector<std::string> inputs = {opts.scores};
  if (!opts.labels.empty()) inputs.push_back(opts.labels);
  WriteRunManifest(dir / kRunManifestName, "eval", std::move(config), inputs,
                   outputs, {});

  out << summary;
  if (reports.empty()) {
    err << "error: no detector has both label classes\n";
    return kExitFailure;
  }
  return kExitOk;
}

// ------------------------------------------------------------------ ablate

struct AblateOptions {
  std::string corpus;
  std::string vocab;
  std::string layers;
  std::string roles = "prelim,instruction,image,bos";
  int layer = 0;
  std::string out;
};

std::optional<TokenRole> ParseRole(std::string_view name) {
  if (name == "prelim") return TokenRole::kOutput;
  if (name == "instruction") return TokenRole::kInstruction;
  if (name == "image") return TokenRole::kImage;
  if (name == "bos") return TokenRole::kBos;
  return std::nullopt;
}

std::string_view RoleColumn(TokenRole role) {
  return role == TokenRole::kOutput ? "prelim" : RoleName(role);
}

int CmdAblate(const AblateOptions& opts, std::ostream& out,
              std::ostream& /*err*/) {
  std::vector<TokenRole> roles;
  for (const std::string& name : SplitList(opts.roles)) {
    const auto role = ParseRole(name);
    if (!role) {
      throw UsageError("unknown role '" + name +
                       "'; available: prelim, instruction, image, bos");
    }
    roles.push_back(*role);
  }
  const std::vector<Trace> traces = LoadCorpus(opts.corpus);
  std::string vocab_path;
  const ClassVocabulary vocab = LoadVocabulary(opts.vocab, opts.corpus,
                                               vocab_path);
  const std::vector<TraceMentions> corpus = MentionsOf(traces, vocab);

  std::vector<int> layers;
  if (opts.layers.empty()) {
    layers = traces.front().header.layers;
  } else {
    for (const std::string& item : SplitList(opts.layers)) {
      try {
        std::size_t used = 0;
        layers.push_back(std::stoi(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw UsageError("bad layer '" + item + "'");
      }
    }
  }

  std::vector<LayerAuroc> layer_table;
  RoleScoreTable single;
  RoleScoreTable global;
  try {
    layer_table = LayerAblation(corpus, layers);
    single = CollectRoleScores(corpus, opts.layer, LayerPooling::kSingleLayer);
    global = CollectRoleScores(corpus, opts.layer,
                               LayerPooling::kMeanOfLayerSums);
  } catch (const std::exception& e) {
    throw CommandError(e.what());
  }

  std::vector<LayerAuroc> ranked = layer_table;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const LayerAuroc& a, const LayerAuroc& b) {
                     return a.auroc > b.auroc;
                   });
  std::string layer_csv = "rank,layer,auroc\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    layer_csv += std::to_string(i + 1) + "," + std::to_string(ranked[i].layer) +
                 "," + FormatDouble(ranked[i].auroc) + "\n";
  }

  std::string role_csv = "scope,role,auroc\n";
  const std::string layer_scope = "layer" + std::to_string(opts.layer);
  for (const auto& [scope, table] :
       {std::pair<std::string, const RoleScoreTable*>{layer_scope, &single},
        {"global", &global}}) {
    for (const RoleAuroc& r : RoleAblation(*table)) {
      if (std::find(roles.begin(), roles.end(), r.role) == roles.end()) continue;
      role_csv += scope + "," + std::string(RoleColumn(r.role)) + "," +
                  FormatDouble(r.auroc) + "\n";
    }
  }

  std::string corr_csv;
  try {
    const CorrelationMatrix corr = AttentionCorrelation(single);
    corr_csv = "score";
    for (const auto& n : corr.names) corr_csv += "," + n;
    corr_csv += "\n";
    for (std::size_t i = 0; i < corr.names.size(); ++i) {
      corr_csv += corr.names[i];
      for (std::size_t j = 0; j < corr.names.size(); ++j) {
        corr_csv += "," + FormatDouble(corr.at(i, j));
      }
      corr_csv += "\n";
    }
  } catch (const std::invalid_argument& e) {
    corr_csv = std::string("error,") + e.what() + "\n";
  }

  const fs::path dir(opts.out);
  EnsureDirectory(dir);
  AtomicWriteFile(dir / "layer_ablation.csv", layer_csv);
  AtomicWriteFile(dir / "role_ablation.csv", role_csv);
  AtomicWriteFile(dir / "correlation.csv", corr_csv);

  std::string layer_list;
  for (int l : layers) {
    if (!layer_list.empty()) layer_list += ",";
    layer_list += std::to_string(l);
  }
  ordered_json config;
  config["corpus"] = opts.corpus;
  config["vocab"] = vocab_path;
  config["layers"] = layer_list;
  config["roles"] = opts.roles;
  config["layer"] = opts.layer;
  config["out"] = opts.out;
  WriteRunManifest(dir / kRunManifestName, "ablate", std::move(config),
                   {opts.corpus, vocab_path},
                   {(dir / "layer_ablation.csv").string(),
                    (dir / "role_ablation.csv").string(),
                    (dir / "correlation.csv").string()},
                   {});
  out << layer_csv << role_csv;
  return kExitOk;
}

// ----------------------------------------------------------- export-curves

struct ExportOptions {
  std::string scores;
  std::string detector = "pas";
  std::string curve = "roc";
  std::string format = "csv";
  std::string out;
};

int CmdExportCurves(const ExportOptions& opts, std::ostream& out,
                    std::ostream& /*err*/) {
  if (opts.curve != "roc" && opts.curve != "prc") {
    throw UsageError("--curve must be roc or prc");
  }
  if (opts.format != "csv" && opts.format != "svg" && opts.format != "json") {
    throw UsageError("--format must be csv, svg or json");
  }
  const std::vector<ScoreRecord> records = LoadScores(opts.scores);
  const auto groups = GroupByDetector(records);
  auto it = groups.find(opts.detector);
  if (it == groups.end()) {
    throw CommandError("detector " + opts.detector + " not in " + opts.scores);
  }
  Curves curves;
  try {
    curves = RocPrcCurves(it->second.scores, it->second.labels);
  } catch (const std::invalid_argument& e) {
    throw CommandError(opts.detector + ": " + e.what());
  }
  const bool roc = opts.curve == "roc";
  const std::vector<CurvePoint>& points = roc ? curves.roc : curves.prc;
  const std::string_view x = roc ? "fpr" : "recall";
  const std::string_view y = roc ? "tpr" : "precision";
  std::string content;
  if (opts.format == "csv") {
    content = FormatCurveCsv(points, x, y);
  } else if (opts.format == "json") {
    content = FormatCurveJson(points, x, y);
  } else {
    const std::vector<CurveSeries> series = {{opts.detector, points}};
    content = roc ? RenderCurveSvg("ROC", "false positive rate",
                                   "true positive rate", series, true)
                  : RenderCurveSvg("Precision-recall", "recall", "precision",
                                   series, false);
  }
  const fs::path out_path(opts.out);
  if (out_path.has_parent_path()) EnsureDirectory(out_path.parent_path());
  AtomicWriteFile(out_path, content);
  ordered_json config;
  config["scores"] = opts.scores;
  config["detector"] = opts.detector;
  config["curve"] = opts.curve;
  config["format"] = opts.format;
  config["out"] = opts.out;
  WriteRunManifest(fs::path(opts.out + ".manifest.json"), "export-curves",
                   std::move(config), {opts.scores}, {opts.out}, {});
  out << "wrote " << points.size() << " points to " << opts.out << "\n";
  return kExitOk;
}

// ------------------------------------------------------------ config files

// Turns a config object into "--key=value" arguments. Nested objects flatten
// with '-' ("baseline": {"image": x} -> --baseline-image=x). A run manifest
// is accepted too; its "config" member is used.
void AppendConfigArgs(const json& obj, const std::string& prefix,
                      std::vector<std::string>& args) {
  for (const auto& [key, value] : obj.items()) {
    std::string flag = prefix + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (value.is_object()) {
      AppendConfigArgs(value, flag + "-", args);
    } else if (value.is_string()) {
      if (!value.get<std::string>().empty()) {
        args.push_back("--" + flag + "=" + value.get<std::string>());
      }
    } else if (value.is_array()) {
      std::string joined;
      for (const json& item : value) {
        if (!joined.empty()) joined += ",";
        joined += item.is_string() ? item.get<std::string>() : item.dump();
      }
      args.push_back("--" + flag + "=" + joined);
    } else if (!value.is_null()) {
      args.push_back("--" + flag + "=" + value.dump());
    }
  }
}

std::vector<std::string> ExpandConfig(const std::vector<std::string>& args) {
  // args[0] is the subcommand.
  std::string config_path;
  std::vector<std::string> rest;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config_path.empty()) return args;
  json doc;
  try {
    doc = json::parse(internal::ReadFileText(config_path));
  } catch (const std::exception& e) {
    throw UsageError("cannot read config " + config_path + ": " + e.what());
  }
  if (!doc.is_object()) throw UsageError("config must be a JSON object");
  if (doc.contains("command") && doc.contains("config")) {
    if (doc["command"] != args[0]) {
      throw UsageError("manifest was written by '" +
                       doc["command"].get<std::string>() + "', not '" +
                       args[0] + "'");
    }
    doc = doc["config"];
  }
  std::vector<std::string> expanded = {args[0]};
  AppendConfigArgs(doc, "", expanded);
  // Explicit flags come last so they win.
  expanded.insert(expanded.end(), rest.begin(), rest.end());
  return expanded;
}

}  // namespace

int RunCli(const std::vector<std::string>& raw_args, std::ostream& out,
           std::ostream& err) {
  CLI::App app{"Prelim-attention hallucination detection toolkit", "paskit"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolkitVersion));

  std::string ignored_config;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", ignored_config,
                    "JSON config or run manifest; explicit flags win");
  };

  ValidateOptions validate;
  CLI::App* validate_cmd =
      app.add_subcommand("validate", "Validate trace files or corpus dirs");
  validate_cmd->add_option("paths", validate.paths, "Files or directories");
  validate_cmd->add_option("--corpus", validate.paths, "Corpus directory")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  add_config(validate_cmd);

  SimulateOptions simulate;
  SimConfig& sc = simulate.config;
  CLI::App* simulate_cmd =
      app.add_subcommand("simulate", "Generate a synthetic labeled corpus");
  simulate_cmd->add_option("--out", simulate.out, "Output directory")
      ->required();
  simulate_cmd->add_option("--seed", sc.seed);
  simulate_cmd->add_option("--n-traces", sc.n_traces);
  simulate_cmd->add_option("--vocab-size", sc.vocab_size);
  simulate_cmd->add_option("--head-count", sc.head_count);
  simulate_cmd->add_option("--layers", sc.layers);
  simulate_cmd->add_option("--bos-len", sc.bos_len);
  simulate_cmd->add_option("--image-len", sc.image_len);
  simulate_cmd->add_option("--instruction-len", sc.instruction_len);
  simulate_cmd->add_option("--output-len", sc.output_len);
  simulate_cmd->add_option("--class-count", sc.class_count);
  simulate_cmd->add_option("--mentions-per-trace", sc.mentions_per_trace);
  simulate_cmd->add_option("--mode-shift", sc.mode_shift);
  simulate_cmd->add_option("--hallucination-rate", sc.hallucination_rate);
  simulate_cmd->add_option("--concentration", sc.concentration);
  simulate_cmd->add_option("--reference-count", sc.reference_count);
  simulate_cmd->add_option("--signal-layer", sc.signal_layer);
  simulate_cmd->add_option("--baseline-bos", sc.baseline.bos);
  simulate_cmd->add_option("--baseline-image", sc.baseline.image);
  simulate_cmd->add_option("--baseline-instruction", sc.baseline.instruction);
  simulate_cmd->add_option("--baseline-prelim", sc.baseline.prelim);
  simulate_cmd->add_option("--mode-dependent-logits", sc.mode_dependent_logits);
  simulate_cmd->add_option("--plural-rate", sc.plural_rate);
  simulate_cmd->add_option("--subword-rate", sc.subword_rate);
  add_config(simulate_cmd);

  ScoreOptions score;
  CLI::App* score_cmd = app.add_subcommand("score", "Score object mentions");
  score_cmd->add_option("--corpus", score.corpus, "Corpus directory")
      ->required();
  score_cmd->add_option("--vocab", score.vocab,
                        "Vocabulary JSON, or coco / voc (default: "
                        "<corpus>/vocab.json)");
  score_cmd->add_option("--detectors", score.detectors,
                        "Comma list of: " + DetectorRegistry());
  score_cmd->add_option("--layer", score.layer, "Attention layer (default 0)");
  score_cmd->add_option("--out", score.out, "Score file")->required();
  add_config(score_cmd);

  EvalOptions eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a score file");
  eval_cmd->add_option("--scores", eval.scores, "Score file")->required();
  eval_cmd->add_option("--labels", eval.labels, "Label manifest override");
  eval_cmd->add_option("--out", eval.out, "Output directory")->required();
  eval_cmd->add_option("--format", eval.format, "all, csv, svg or json");
  add_config(eval_cmd);

  AblateOptions ablate;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "Layer and token-role ablations");
  ablate_cmd->add_option("--corpus", ablate.corpus)->required();
  ablate_cmd->add_option("--vocab", ablate.vocab);
  ablate_cmd->add_option("--layers", ablate.layers,
                         "Comma list (default: all stored layers)");
  ablate_cmd->add_option("--roles", ablate.roles);
  ablate_cmd->add_option("--layer", ablate.layer,
                         "Layer for the role table (default 0)");
  ablate_cmd->add_option("--out", ablate.out)->required();
  add_config(ablate_cmd);

  ExportOptions export_opts;
  CLI::App* export_cmd =
      app.add_subcommand("export-curves", "Export one ROC or PRC curve");
  export_cmd->add_option("--scores", export_opts.scores)->required();
  export_cmd->add_option("--detector", export_opts.detector);
  export_cmd->add_option("--curve", export_opts.curve, "roc or prc");
  export_cmd->add_option("--format", export_opts.format, "csv, svg or json");
  export_cmd->add_option("--out", export_opts.out)->required();
  add_config(export_cmd);

  try {
    std::vector<std::string> args = raw_args;
    if (!args.empty() && args[0].rfind("-", 0) != 0) args = ExpandConfig(args);
    std::vector<const char*> argv = {"paskit"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kExitOk : kExitUsage;
    }

    if (*validate_cmd) return CmdValidate(validate, out, err);
    if (*simulate_cmd) return CmdSimulate(simulate, out, err);
    if (*score_cmd) return CmdScore(score, out, err);
    if (*eval_cmd) return CmdEval(eval, out, err);
    if (*ablate_cmd) return CmdAblate(ablate, out, err);
    if (*export_cmd) return CmdExportCurves(export_opts, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace paskit
