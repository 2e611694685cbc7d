// Copyright 2026 The t4t Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "t4t/runner.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <unordered_map>

#include "t4t/content_mock.hpp"
#include "t4t/evaluation.hpp"
#include "t4t/text.hpp"

namespace t4t {

namespace fs = std::filesystem;

std::string CellSpec::id() const {
  std::string id = variant.id() + "__" + model;
  if (!g_model.empty() && g_model != model) id += "__g-" + g_model;
  return id;
}

namespace {

// ---------------------------------------------------------------------------
// Configuration

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

ModelSpec model_from_json(const std::string& name, const nlohmann::json& j) {
  ModelSpec m;
  m.name = name;
  m.kind = j.value("kind", std::string("mock"));
  m.model_id = j.value("model_id", name);
  auto& p = m.provider;
  p.endpoint = j.value("endpoint", m.kind == "mock" ? std::string("mock:") : std::string());
  p.credentials_env = j.value("credentials_env", std::string());
  p.max_concurrent = j.value("max_concurrent", std::size_t{4});
  p.requests_per_minute = j.value("requests_per_minute", m.kind == "mock" ? std::size_t{0} : std::size_t{60});
  p.max_retries = j.value("max_retries", std::size_t{5});
  p.backoff_base = std::chrono::milliseconds(j.value("backoff_ms", 500));
  p.timeout = std::chrono::milliseconds(j.value("timeout_ms", 120000));
  if (j.contains("rules")) m.mock_rules = j.at("rules");
  return m;
}

CellSpec cell_from_json(const nlohmann::json& j) {
  CellSpec c;
  auto kind = parse_variant_kind(j.at("variant").get<std::string>());
  if (!kind) throw ConfigError("unknown variant '" + j.at("variant").get<std::string>() + "'");
  c.variant.kind = *kind;
  c.model = j.at("model").get<std::string>();
  c.g_model = j.value("g_model", std::string());
  if (j.contains("inner")) {
    auto inner = parse_variant_kind(j.at("inner").get<std::string>());
    if (!inner) throw ConfigError("unknown inner variant '" + j.at("inner").get<std::string>() + "'");
    c.variant.inner = *inner;
  }
  if (j.contains("controls")) {
    c.variant.controls.clear();
    for (const auto& s : j.at("controls")) {
      auto k = parse_control_id(s.get<std::string>());
      if (!k) throw ConfigError("unknown control '" + s.get<std::string>() + "'");
      c.variant.controls.push_back(*k);
    }
  }
  if (j.contains("mode")) {
    auto m = parse_mode(j.at("mode").get<std::string>());
    if (!m) throw ConfigError("unknown derivation mode '" + j.at("mode").get<std::string>() + "'");
    c.variant.mode = *m;
  }
  c.variant.shots = j.value("shots", std::size_t{0});
  if (j.contains("k")) c.variant.sc_k = j.at("k").get<std::size_t>();
  c.variant.sc_temperature = j.value("temperature", c.variant.sc_temperature);
  return c;
}

nlohmann::ordered_json cell_to_json(const CellSpec& c) {
  nlohmann::ordered_json j;
  j["variant"] = variant_kind_name(c.variant.kind);
  j["model"] = c.model;
  if (!c.g_model.empty()) j["g_model"] = c.g_model;
  if (c.variant.kind == VariantKind::SelfConsistency) {
    j["inner"] = variant_kind_name(c.variant.inner);
    j["k"] = c.variant.sc_k.value_or(VariantConfig::kDefaultScK);
    j["temperature"] = c.variant.sc_temperature;
  }
  auto controls = nlohmann::ordered_json::array();
  for (auto k : c.variant.controls) controls.push_back(control_id(k));
  j["controls"] = std::move(controls);
  j["mode"] = mode_name(c.variant.mode);
  j["shots"] = c.variant.shots;
  j["id"] = c.id();
  return j;
}

// ---------------------------------------------------------------------------
// Files

void write_atomically(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Drops a torn final record left by an interrupted append.
void truncate_to_last_newline(const fs::path& path) {
  if (!fs::exists(path)) return;
  const std::string content = read_file(path);
  const auto keep = content.rfind('\n');
  fs::resize_file(path, keep == std::string::npos ? 0 : keep + 1);
}

// Single writer per partial file; every record is flushed and synced before
// it counts as persisted.
class PartialWriter {
 public:
  explicit PartialWriter(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd_ < 0) throw std::runtime_error("cannot open " + path.string());
  }
  ~PartialWriter() {
    if (fd_ >= 0) ::close(fd_);
  }
  PartialWriter(const PartialWriter&) = delete;
  PartialWriter& operator=(const PartialWriter&) = delete;

  void append(const std::string& line) {
    std::lock_guard lock(mu_);
    std::string rec = line + "\n";
    const char* p = rec.data();
    std::size_t left = rec.size();
    while (left > 0) {
      ssize_t n = ::write(fd_, p, left);
      if (n < 0) throw std::runtime_error("append failed");
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    ::fsync(fd_);
  }

 private:
  int fd_ = -1;
  std::mutex mu_;
};

std::string table_row(std::initializer_list<std::string> cells) {
  std::string out;
  bool first = true;
  for (const auto& c : cells) {
    if (!first) out += " | ";
    out += c;
    first = false;
  }
  return out;
}

std::shared_ptr<Backend> make_backend(const ModelSpec& m) {
  if (m.kind == "mock") {
    MockScript script = MockScript::from_json(m.mock_rules);
    script.respond("content", [](const GenerationRequest& r) {
      std::vector<std::string> out;
      for (int i = 0; i < std::max(1, r.n_samples); ++i) out.push_back(content_mock_completion(r));
      return std::optional<std::vector<std::string>>(std::move(out));
    });
    return std::make_shared<MockBackend>(std::move(script));
  }
  return std::make_shared<ChatCompletionsBackend>(m.provider);
}

std::vector<Session> load_sessions(const ExperimentConfig& cfg) {
  std::vector<Session> sessions;
  try {
    sessions = parse_corpus(cfg.corpus, ParseOptions{false});
  } catch (const CorpusError& e) {
    throw ConfigError(std::string("corpus: ") + e.what());
  }
  if (cfg.anonymization_seed) {
    for (auto& s : sessions) s = anonymize(s, LabelPermutation::identity(), *cfg.anonymization_seed);
  }
  return sessions;
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  try {
    c.corpus = resolve(base_dir, j.at("corpus").get<std::string>());
    c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    if (j.contains("cache_dir")) c.cache_dir = resolve(base_dir, j.at("cache_dir").get<std::string>());
    if (j.contains("anonymization_seed"))
      c.anonymization_seed = j.at("anonymization_seed").get<std::uint64_t>();
    c.demo_session_ids = j.value("demo_session_ids", std::vector<std::string>{});
    c.token_budget = j.value("token_budget", std::size_t{0});
    for (const auto& [name, m] : j.at("models").items()) c.models[name] = model_from_json(name, m);
    for (const auto& cell : j.at("matrix")) c.matrix.push_back(cell_from_json(cell));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

nlohmann::ordered_json ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["corpus"] = corpus.string();
  j["output_dir"] = output_dir.string();
  if (cache_dir) j["cache_dir"] = cache_dir->string();
  if (anonymization_seed) j["anonymization_seed"] = *anonymization_seed;
  j["demo_session_ids"] = demo_session_ids;
  j["token_budget"] = token_budget;
  nlohmann::ordered_json models_j = nlohmann::ordered_json::object();
  for (const auto& [name, m] : models) {
    nlohmann::ordered_json mj;
    mj["kind"] = m.kind;
    mj["model_id"] = m.model_id;
    mj["endpoint"] = m.provider.endpoint;
    if (!m.provider.credentials_env.empty()) mj["credentials_env"] = m.provider.credentials_env;
    mj["max_concurrent"] = m.provider.max_concurrent;
    mj["requests_per_minute"] = m.provider.requests_per_minute;
    mj["max_retries"] = m.provider.max_retries;
    mj["backoff_ms"] = m.provider.backoff_base.count();
    mj["timeout_ms"] = m.provider.timeout.count();
    if (!m.mock_rules.empty()) mj["rules"] = m.mock_rules;
    models_j[name] = std::move(mj);
  }
  j["models"] = std::move(models_j);
  auto matrix_j = nlohmann::ordered_json::array();
  for (const auto& c : matrix) matrix_j.push_back(cell_to_json(c));
  j["matrix"] = std::move(matrix_j);
  j["prompt_template_version"] = prompt_template_version();
  return j;
}

void ExperimentConfig::validate() const {
  if (matrix.empty()) throw ConfigError("matrix is empty");
  std::set<std::string> ids;
  for (const auto& [name, m] : models) {
    if (m.kind != "mock" && m.kind != "openai")
      throw ConfigError("model '" + name + "': unknown kind '" + m.kind + "'");
    if (m.kind == "openai" && !m.provider.is_remote())
      throw ConfigError("model '" + name + "': endpoint must be an http(s) URL");
    if (m.provider.max_concurrent == 0)
      throw ConfigError("model '" + name + "': max_concurrent must be positive");
  }
  for (const auto& c : matrix) {
    if (!models.count(c.model)) throw ConfigError("matrix cell refers to unknown model '" + c.model + "'");
    if (!c.g_model.empty() && !models.count(c.g_model))
      throw ConfigError("matrix cell refers to unknown g_model '" + c.g_model + "'");
    try {
      c.variant.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("cell " + c.id() + ": " + e.what());
    }
    if (c.variant.shots > demo_session_ids.size())
      throw ConfigError("cell " + c.id() + " wants " + std::to_string(c.variant.shots) +
                        " demonstrations but " + std::to_string(demo_session_ids.size()) +
                        " demo ids are configured");
    if (!ids.insert(c.id()).second) throw ConfigError("duplicate matrix cell " + c.id());
  }
}

RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();

  // Credentials first: nothing runs when a remote model cannot authenticate.
  std::set<std::string> used;
  for (const auto& c : config.matrix) {
    used.insert(c.model);
    if (!c.g_model.empty()) used.insert(c.g_model);
  }
  for (const auto& name : used) {
    const auto& m = config.models.at(name);
    if (m.kind == "openai" && !options.backend_overrides.count(name)) {
      try {
        resolve_credentials(m.provider);
      } catch (const AuthError& e) {
        throw ConfigError("model '" + name + "': " + e.what());
      }
    }
  }

  const std::vector<Session> sessions = load_sessions(config);
  std::unordered_map<std::string, const Session*> by_id;
  for (const auto& s : sessions) by_id[s.id] = &s;
  std::vector<Demo> demos;
  for (const auto& id : config.demo_session_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ConfigError("demo session '" + id + "' is not in the corpus");
    demos.emplace_back(*it->second, it->second->ground_truth);
  }
  const std::set<std::string> demo_ids(config.demo_session_ids.begin(), config.demo_session_ids.end());
  std::vector<const Session*> eval;
  for (const auto& s : sessions)
    if (!demo_ids.count(s.id)) eval.push_back(&s);
  if (eval.empty()) throw ConfigError("no sessions left for evaluation");
  const Truths truths = truths_of(sessions);

  const fs::path run_dir = config.output_dir;
  fs::create_directories(run_dir / "predictions");
  fs::create_directories(run_dir / "reports");
  write_atomically(run_dir / "config.snapshot", config.to_json().dump(2) + "\n");
  const fs::path cache_dir = config.cache_dir.value_or(run_dir / "cache");

  std::map<std::string, std::unique_ptr<Provider>> providers;
  for (const auto& name : used) {
    const auto& m = config.models.at(name);
    auto ov = options.backend_overrides.find(name);
    auto backend = ov != options.backend_overrides.end() ? ov->second : make_backend(m);
    providers[name] = std::make_unique<Provider>(backend, m.provider, cache_dir);
  }

  RunSummary summary;
  summary.run_dir = run_dir;
  std::size_t persisted_total = 0;
  std::mutex persisted_mu;

  for (const auto& cell : config.matrix) {
    const std::string id = cell.id();
    CellSummary cs;
    cs.cell = id;
    Provider& f = *providers.at(cell.model);
    Provider& g = *providers.at(cell.g_model.empty() ? cell.model : cell.g_model);
    const std::size_t req0 = f.requests() + (&g != &f ? g.requests() : 0);
    const std::size_t calls0 = f.backend_calls() + (&g != &f ? g.backend_calls() : 0);

    const fs::path final_path = run_dir / "predictions" / (id + ".jsonl");
    const fs::path partial_path = run_dir / "predictions" / (id + ".partial");
    std::map<std::string, Prediction> done;

    if (fs::exists(final_path)) {
      for (const auto& line : text::split_lines(read_file(final_path))) {
        if (text::trim(line).empty()) continue;
        Prediction p = prediction_from_json(nlohmann::json::parse(line));
        done[p.session_id] = std::move(p);
      }
      cs.resumed = done.size();
    } else {
      truncate_to_last_newline(partial_path);
      if (fs::exists(partial_path)) {
        for (const auto& line : text::split_lines(read_file(partial_path))) {
          if (text::trim(line).empty()) continue;
          Prediction p = prediction_from_json(nlohmann::json::parse(line));
          if (by_id.count(p.session_id)) done[p.session_id] = std::move(p);
        }
        cs.resumed = done.size();
      }

      std::vector<const Session*> todo;
      for (const auto* s : eval)
        if (!done.count(s->id)) todo.push_back(s);

      PipelineOptions po;
      po.model_id = config.models.at(cell.model).model_id;
      po.g_model_id = config.models.at(cell.g_model.empty() ? cell.model : cell.g_model).model_id;
      po.demos = demos;
      po.token_budget = config.token_budget;
      Pipeline pipeline(f, po, &g);

      PartialWriter writer(partial_path);
      std::mutex done_mu;
      parallel_for(todo.size(), f.config().max_concurrent, [&](std::size_t i) {
        const Session& s = *todo[i];
        Prediction p;
        try {
          p = pipeline.run(s, cell.variant);
        } catch (const InputError& e) {
          p.session_id = s.id;
          p.variant = cell.variant.id();
          p.error = std::string("InputError: ") + e.what();
        } catch (const OrphanAnswerError& e) {
          p.session_id = s.id;
          p.variant = cell.variant.id();
          p.error = std::string("CorpusError: ") + e.what();
        }
        writer.append(to_json(p).dump());
        {
          std::lock_guard lock(done_mu);
          done[s.id] = std::move(p);
          ++cs.computed;
        }
        if (options.on_persisted) {
          std::lock_guard lock(persisted_mu);
          options.on_persisted(++persisted_total);
        }
      });

      std::string content;
      for (const auto* s : eval) content += to_json(done.at(s->id)).dump() + "\n";
      write_atomically(final_path, content);
      fs::remove(partial_path);
    }

    std::vector<Prediction> preds;
    for (const auto* s : eval) {
      auto it = done.find(s->id);
      if (it == done.end()) throw ReportError("cell " + id + " has no prediction for " + s->id);
      preds.push_back(it->second);
    }
    EvalReport report = evaluate(preds, truths, cell.variant.id(), cell.model);
    write_atomically(run_dir / "reports" / (id + ".json"), report.to_json().dump(2) + "\n");
    write_atomically(run_dir / "reports" / (id + ".csv"), report.per_session_csv());

    cs.provider_requests = f.requests() + (&g != &f ? g.requests() : 0) - req0;
    cs.backend_calls = f.backend_calls() + (&g != &f ? g.backend_calls() : 0) - calls0;
    summary.cells.push_back(std::move(cs));
  }
  emit_report(run_dir);
  return summary;
}

fs::path emit_report(const fs::path& run_dir) {
  const fs::path snap = run_dir / "config.snapshot";
  if (!fs::exists(snap)) throw ReportError("no config.snapshot in " + run_dir.string());
  nlohmann::json cfg = nlohmann::json::parse(read_file(snap));
  std::vector<std::string> cells;
  for (const auto& c : cfg.at("matrix")) cells.push_back(c.at("id").get<std::string>());

  std::vector<std::string> missing;
  for (const auto& c : cells)
    if (!fs::exists(run_dir / "reports" / (c + ".json"))) missing.push_back(c);
  if (!missing.empty()) {
    std::string msg = "missing reports for";
    for (const auto& m : missing) msg += " " + m;
    throw ReportError(msg);
  }

  std::string table = "| Variant | Acc | Acc@2 | invalid_rate | n |\n|---|---|---|---|---|\n";
  for (const auto& c : cells) {
    auto r = EvalReport::from_json(nlohmann::json::parse(read_file(run_dir / "reports" / (c + ".json"))));
    table += "| " + table_row({c, format_percent(r.accuracy), format_percent(r.accuracy_at_2),
                                 format_percent(r.invalid_rate), std::to_string(r.n)}) + " |\n";
  }
  const fs::path out = run_dir / "table.md";
  write_atomically(out, table);
  return out;
}

std::map<std::string, Prediction> load_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open predictions " + path.string());
  std::map<std::string, Prediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      Prediction p = prediction_from_json(nlohmann::json::parse(line));
      out[p.session_id] = std::move(p);
    } catch (const std::exception& e) {
      throw ConfigError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

CorpusValidation validate_corpus(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file " + path.string());
  CorpusValidation v;
  std::vector<Session> sessions;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    Session s;
    try {
      s = parse_session(line, line_no, ParseOptions{false});
    } catch (const CorpusError& e) {
      v.warnings.push_back(e.what());
      continue;
    }
    const std::string where = "line " + std::to_string(line_no) + ": session '" + s.id + "': ";
    if (!ids.insert(s.id).second) {
      v.warnings.push_back(where + "duplicate id");
      continue;
    }
    if (s.judge_votes.empty()) v.warnings.push_back(where + "no judge votes");
    try {
      segment_snippets(s);
    } catch (const OrphanAnswerError& e) {
      v.warnings.push_back(where + e.what());
    }
    sessions.push_back(std::move(s));
  }
  v.stats = corpus_stats(sessions);
  return v;
}

}  // namespace t4t
