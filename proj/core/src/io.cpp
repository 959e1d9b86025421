#include "auber/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "auber/errors.hpp"

namespace auber {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint layout assumes a little-endian host");

constexpr char kMagic[4] = {'A', 'U', 'B', 'R'};
constexpr std::uint32_t kCheckpointVersion = 1;

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) throw ParseError("unknown key \"" + key + "\" in " + where);
  }
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

std::string matrix_kind_str(MatrixKind k) {
  switch (k) {
    case MatrixKind::Value:
      return "value";
    case MatrixKind::Query:
      return "query";
    case MatrixKind::Key:
      return "key";
  }
  throw InputError("unknown matrix kind");
}

MatrixKind matrix_kind_from(const std::string& s) {
  if (s == "value") return MatrixKind::Value;
  if (s == "query") return MatrixKind::Query;
  if (s == "key") return MatrixKind::Key;
  throw ParseError("state matrix must be value, query or key, got \"" + s + "\"");
}

std::string norm_kind_str(NormKind k) { return k == NormKind::L1 ? "l1" : "l2"; }

NormKind norm_kind_from(const std::string& s) {
  if (s == "l1") return NormKind::L1;
  if (s == "l2") return NormKind::L2;
  throw ParseError("state norm must be l1 or l2, got \"" + s + "\"");
}

std::string split_str(SplitRatio r) {
  return r == SplitRatio::TrainOneValTwo ? "one_two" : "two_one";
}

SplitRatio split_from(const std::string& s) {
  if (s == "one_two") return SplitRatio::TrainOneValTwo;
  if (s == "two_one") return SplitRatio::TrainTwoValOne;
  throw ParseError("split must be one_two or two_one, got \"" + s + "\"");
}

json dims_to_json(const ModelDims& d) {
  return json{{"layers", d.layers},       {"heads", d.heads},     {"embed_dim", d.embed_dim},
              {"qk_dim", d.qk_dim},       {"value_dim", d.value_dim}, {"ffn_dim", d.ffn_dim},
              {"max_len", d.max_len},     {"vocab", d.vocab},     {"classes", d.classes}};
}

ModelDims dims_from_json(const json& j) {
  check_keys(j, {"layers", "heads", "embed_dim", "qk_dim", "value_dim", "ffn_dim", "max_len",
                 "vocab", "classes"},
             "model");
  ModelDims d;
  maybe(j, "layers", d.layers);
  maybe(j, "heads", d.heads);
  maybe(j, "embed_dim", d.embed_dim);
  maybe(j, "qk_dim", d.qk_dim);
  maybe(j, "value_dim", d.value_dim);
  maybe(j, "ffn_dim", d.ffn_dim);
  maybe(j, "max_len", d.max_len);
  maybe(j, "vocab", d.vocab);
  maybe(j, "classes", d.classes);
  return d;
}

json config_to_json_obj(const RunConfig& c) {
  json j;
  j["model"] = dims_to_json(c.model);
  j["trainer"] = {{"base_lr", c.trainer.base_lr},
                  {"base_epochs", c.trainer.base_epochs},
                  {"batch", c.trainer.batch},
                  {"inter_lr", c.trainer.inter_lr},
                  {"inter_epochs", c.trainer.inter_epochs},
                  {"final_lr", c.trainer.final_lr},
                  {"patience", c.trainer.patience},
                  {"max_epochs", c.trainer.max_epochs},
                  {"split", split_str(c.trainer.split)}};
  j["agent"] = {{"eps_start", c.agent.eps_start},
                {"eps_end", c.agent.eps_end},
                {"eps_decay", c.agent.eps_decay},
                {"batch", c.agent.batch},
                {"memory", c.agent.memory},
                {"gamma", c.agent.gamma},
                {"lr", c.agent.lr},
                {"tau_sync", c.agent.tau_sync},
                {"episodes", c.agent.episodes},
                {"hidden", c.agent.hidden}};
  j["state"] = {{"matrix", matrix_kind_str(c.state.matrix)}, {"norm", norm_kind_str(c.state.norm)}};
  j["order"] = c.reverse_order ? "reverse" : "forward";
  j["prune_mode"] = c.prune_mode;
  j["seed"] = c.seed;
  j["paths"] = {{"train", c.paths.train},
                {"dev", c.paths.dev},
                {"checkpoint_in", c.paths.checkpoint_in},
                {"checkpoint_out", c.paths.checkpoint_out},
                {"report", c.paths.report},
                {"metrics", c.paths.metrics}};
  j["synthetic"] = {{"train_examples", c.synthetic.train_examples},
                    {"dev_examples", c.synthetic.dev_examples},
                    {"seq_len", c.synthetic.seq_len},
                    {"vocab", c.synthetic.vocab},
                    {"trigger", c.synthetic.trigger},
                    {"label_noise", c.synthetic.label_noise}};
  return j;
}

RunConfig config_from_json(const json& j) {
  check_keys(j, {"model", "trainer", "agent", "state", "order", "prune_mode", "seed", "paths",
                 "synthetic"},
             "config");
  RunConfig c;
  if (j.contains("model")) c.model = dims_from_json(j.at("model"));
  if (j.contains("trainer")) {
    const json& t = j.at("trainer");
    check_keys(t, {"base_lr", "base_epochs", "batch", "inter_lr", "inter_epochs", "final_lr",
                   "patience", "max_epochs", "split"},
               "trainer");
    maybe(t, "base_lr", c.trainer.base_lr);
    maybe(t, "base_epochs", c.trainer.base_epochs);
    maybe(t, "batch", c.trainer.batch);
    maybe(t, "inter_lr", c.trainer.inter_lr);
    maybe(t, "inter_epochs", c.trainer.inter_epochs);
    maybe(t, "final_lr", c.trainer.final_lr);
    maybe(t, "patience", c.trainer.patience);
    maybe(t, "max_epochs", c.trainer.max_epochs);
    if (t.contains("split")) c.trainer.split = split_from(t.at("split").get<std::string>());
  }
  if (j.contains("agent")) {
    const json& a = j.at("agent");
    check_keys(a, {"eps_start", "eps_end", "eps_decay", "batch", "memory", "gamma", "lr",
                   "tau_sync", "episodes", "hidden"},
               "agent");
    maybe(a, "eps_start", c.agent.eps_start);
    maybe(a, "eps_end", c.agent.eps_end);
    maybe(a, "eps_decay", c.agent.eps_decay);
    maybe(a, "batch", c.agent.batch);
    maybe(a, "memory", c.agent.memory);
    maybe(a, "gamma", c.agent.gamma);
    maybe(a, "lr", c.agent.lr);
    maybe(a, "tau_sync", c.agent.tau_sync);
    maybe(a, "episodes", c.agent.episodes);
    maybe(a, "hidden", c.agent.hidden);
  }
  if (j.contains("state")) {
    const json& s = j.at("state");
    check_keys(s, {"matrix", "norm"}, "state");
    if (s.contains("matrix")) c.state.matrix = matrix_kind_from(s.at("matrix").get<std::string>());
    if (s.contains("norm")) c.state.norm = norm_kind_from(s.at("norm").get<std::string>());
  }
  if (j.contains("order")) {
    const std::string order = j.at("order").get<std::string>();
    if (order != "forward" && order != "reverse")
      throw ParseError("order must be forward or reverse, got \"" + order + "\"");
    c.reverse_order = order == "reverse";
  }
  maybe(j, "prune_mode", c.prune_mode);
  maybe(j, "seed", c.seed);
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    check_keys(p, {"train", "dev", "checkpoint_in", "checkpoint_out", "report", "metrics"},
               "paths");
    maybe(p, "train", c.paths.train);
    maybe(p, "dev", c.paths.dev);
    maybe(p, "checkpoint_in", c.paths.checkpoint_in);
    maybe(p, "checkpoint_out", c.paths.checkpoint_out);
    maybe(p, "report", c.paths.report);
    maybe(p, "metrics", c.paths.metrics);
  }
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    check_keys(s, {"train_examples", "dev_examples", "seq_len", "vocab", "trigger", "label_noise"},
               "synthetic");
    maybe(s, "train_examples", c.synthetic.train_examples);
    maybe(s, "dev_examples", c.synthetic.dev_examples);
    maybe(s, "seq_len", c.synthetic.seq_len);
    maybe(s, "vocab", c.synthetic.vocab);
    maybe(s, "trigger", c.synthetic.trigger);
    maybe(s, "label_noise", c.synthetic.label_noise);
  }
  return c;
}

void append_u32(std::string& buf, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  buf.append(b, 4);
}

void append_u64(std::string& buf, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  buf.append(b, 8);
}

void append_doubles(std::string& buf, std::span<const double> v) {
  buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size()) throw FormatError(std::string("checkpoint truncated in ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  void doubles(std::span<double> out, const char* what) {
    need(out.size() * sizeof(double), what);
    std::memcpy(out.data(), buf.data() + pos, out.size() * sizeof(double));
    pos += out.size() * sizeof(double);
  }
  unsigned char byte(const char* what) {
    need(1, what);
    return static_cast<unsigned char>(buf[pos++]);
  }
};

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

RunConfig default_config() { return RunConfig{}; }

void validate(const RunConfig& c) {
  validate(c.model);
  validate(c.agent);
  const TrainerConfig& t = c.trainer;
  if (t.base_lr < 0.0 || t.inter_lr < 0.0 || t.final_lr < 0.0)
    throw InputError("learning rates must be non-negative");
  if (t.base_epochs < 0 || t.inter_epochs < 0) throw InputError("epoch counts must be non-negative");
  if (t.batch < 1) throw InputError("trainer batch size must be positive");
  if (t.patience < 1) throw InputError("patience must be positive");
  if (t.max_epochs < 1) throw InputError("max_epochs must be positive");
  if (c.prune_mode != "gates")
    throw InputError("prune_mode \"" + c.prune_mode + "\" is not supported; use gates");
  const SyntheticSpec& s = c.synthetic;
  if (s.train_examples < 1 || s.dev_examples < 1)
    throw InputError("synthetic example counts must be positive");
  if (s.seq_len < 1) throw InputError("synthetic seq_len must be positive");
  if (s.seq_len > static_cast<int>(c.model.max_len))
    throw InputError("synthetic seq_len exceeds the model max_len");
  if (s.vocab < 2) throw InputError("synthetic vocab must be at least 2");
  if (s.vocab > static_cast<int>(c.model.vocab))
    throw InputError("synthetic vocab exceeds the model vocab");
  if (s.trigger < 0 || s.trigger >= s.vocab)
    throw InputError("synthetic trigger token must lie inside the vocab");
  if (s.label_noise < 0.0 || s.label_noise >= 0.5)
    throw InputError("label noise must lie in [0, 0.5)");
}

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  try {
    c = config_from_json(j);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config field has the wrong type: ") + e.what());
  }
  validate(c);
  return c;
}

RunConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

std::string config_to_json(const RunConfig& cfg) { return config_to_json_obj(cfg).dump(2) + "\n"; }

std::uint64_t token_hash(std::string_view token) { return fnv1a64(token); }

Dataset load_dataset_tsv(const std::string& path, std::size_t vocab, std::size_t max_len,
                         int num_classes) {
  if (vocab == 0) throw InputError("vocab must be positive");
  if (max_len == 0) throw InputError("max_len must be positive");
  if (num_classes < 2) throw InputError("num_classes must be at least 2");

  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path);

  Dataset data;
  data.num_classes = num_classes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected <label>\\t<text>");
    }
    const std::string label_str = line.substr(0, tab);
    int label = 0;
    const auto [ptr, ec] =
        std::from_chars(label_str.data(), label_str.data() + label_str.size(), label);
    if (ec != std::errc{} || ptr != label_str.data() + label_str.size()) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": label \"" + label_str +
                       "\" is not an integer");
    }
    if (label < 0 || label >= num_classes) {
      throw InputError(path + ":" + std::to_string(lineno) + ": label " + std::to_string(label) +
                       " outside " + std::to_string(num_classes) + " classes");
    }

    TrainExample ex;
    ex.label = label;
    std::istringstream words(line.substr(tab + 1));
    std::string word;
    while (words >> word && ex.tokens.size() < max_len) {
      ex.tokens.push_back(static_cast<int>(token_hash(word) % vocab));
    }
    if (ex.tokens.empty()) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": empty text");
    }
    data.examples.push_back(std::move(ex));
  }
  if (data.empty()) throw InputError("no examples in " + path);
  return data;
}

Dataset generate_synthetic(const SyntheticSpec& spec, int count, Rng& rng) {
  if (count < 1) throw InputError("synthetic count must be positive");
  if (spec.seq_len < 1) throw InputError("synthetic seq_len must be positive");
  if (spec.vocab < 2) throw InputError("synthetic vocab must be at least 2");
  if (spec.trigger < 0 || spec.trigger >= spec.vocab)
    throw InputError("synthetic trigger token must lie inside the vocab");
  if (spec.label_noise < 0.0 || spec.label_noise >= 0.5)
    throw InputError("label noise must lie in [0, 0.5)");

  Dataset data;
  data.num_classes = 2;

  // Fill per-class quotas on the clean labels by rejection, so the
  // noise rate stays exactly label_noise afterwards.
  long quota[2];
  quota[1] = count / 2;
  quota[0] = count - quota[1];
  const long max_draws = std::max(1000L, 1000L * count);
  for (long draw = 0; draw < max_draws && data.size() < static_cast<std::size_t>(count); ++draw) {
    TrainExample ex;
    ex.tokens.reserve(static_cast<std::size_t>(spec.seq_len));
    bool has_trigger = false;
    for (int i = 0; i < spec.seq_len; ++i) {
      const int tok = static_cast<int>(rng.index(static_cast<std::size_t>(spec.vocab)));
      has_trigger = has_trigger || tok == spec.trigger;
      ex.tokens.push_back(tok);
    }
    ex.label = has_trigger ? 1 : 0;
    if (quota[ex.label] == 0) continue;
    --quota[ex.label];
    data.examples.push_back(std::move(ex));
  }
  if (data.size() < static_cast<std::size_t>(count)) {
    throw GenerationError("could not balance classes: trigger rate too skewed for vocab " +
                          std::to_string(spec.vocab) + ", seq_len " +
                          std::to_string(spec.seq_len));
  }

  for (TrainExample& ex : data.examples) {
    if (rng.next_double() < spec.label_noise) ex.label = 1 - ex.label;
  }
  return data;
}

void save_checkpoint(const EncoderModel& model, const RunConfig& cfg, std::uint64_t rng_state,
                     const std::string& path) {
  json header;
  header["dims"] = dims_to_json(model.dims);
  header["rng_state"] = rng_state;
  header["config"] = config_to_json_obj(cfg);
  const std::string header_str = header.dump();

  std::string buf;
  buf.append(kMagic, 4);
  append_u32(buf, kCheckpointVersion);
  append_u32(buf, static_cast<std::uint32_t>(header_str.size()));
  buf += header_str;

  append_doubles(buf, std::span<const double>(model.positional.storage()));
  for (const auto& block : parameter_blocks(model)) append_doubles(buf, block);
  for (const EncoderLayer& layer : model.layers)
    for (double g : layer.gates) buf.push_back(g != 0.0 ? '\x01' : '\x00');

  write_file_atomic(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r{buf};

  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError(path + " is not a checkpoint (bad magic)");
  }
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                      ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::uint32_t header_len = r.u32("header length");
  r.need(header_len, "header");
  json header;
  try {
    header = json::parse(buf.substr(r.pos, header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  r.pos += header_len;

  Checkpoint ckpt;
  ckpt.version = version;
  try {
    ckpt.config = config_from_json(header.at("config"));
    ckpt.rng_state = header.at("rng_state").get<std::uint64_t>();
    const ModelDims dims = dims_from_json(header.at("dims"));
    validate(dims);
    Rng scratch(0);
    ckpt.model = make_model(dims, scratch);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is incomplete: ") + e.what());
  }
  validate(ckpt.config);

  r.doubles(std::span<double>(ckpt.model.positional.storage()), "positional table");
  for (auto& block : parameter_blocks(ckpt.model)) r.doubles(block, "parameters");
  for (EncoderLayer& layer : ckpt.model.layers) {
    for (double& g : layer.gates) {
      const unsigned char b = r.byte("gates");
      if (b > 1) throw FormatError("gate byte must be 0 or 1, got " + std::to_string(b));
      g = b;
    }
  }
  if (r.pos != buf.size()) {
    throw FormatError("checkpoint has " + std::to_string(buf.size() - r.pos) + " trailing bytes");
  }
  return ckpt;
}

void emit_report(const PruneReport& report, const RunConfig& cfg, const std::string& path) {
  json j;
  j["config"] = config_to_json_obj(cfg);
  j["method"] = report.method;
  j["layer_policies"] = json::array();
  for (const LayerPolicy& p : report.layer_policies) {
    j["layer_policies"].push_back({{"layer", p.layer},
                                   {"pruned_heads", p.pruned_heads},
                                   {"final_mini_val_accuracy", p.final_mini_val_accuracy}});
  }
  j["order"] = report.order;
  j["total_pruned"] = report.total_pruned;
  j["pre"] = {{"accuracy", report.pre.accuracy}, {"mcc", report.pre.mcc}};
  j["post"] = {{"accuracy", report.post.accuracy}, {"mcc", report.post.mcc}};
  j["seed"] = report.seed;
  write_file_atomic(path, j.dump(2) + "\n");
}

PruneReport load_report(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path + " is not valid JSON: " + e.what());
  }
  PruneReport report;
  try {
    report.method = j.at("method").get<std::string>();
    for (const json& p : j.at("layer_policies")) {
      LayerPolicy pol;
      pol.layer = p.at("layer").get<std::size_t>();
      pol.pruned_heads = p.at("pruned_heads").get<std::vector<std::size_t>>();
      pol.final_mini_val_accuracy = p.at("final_mini_val_accuracy").get<double>();
      report.layer_policies.push_back(std::move(pol));
    }
    report.order = j.at("order").get<std::vector<std::size_t>>();
    report.total_pruned = j.at("total_pruned").get<std::size_t>();
    report.pre.accuracy = j.at("pre").at("accuracy").get<double>();
    report.pre.mcc = j.at("pre").at("mcc").get<double>();
    report.post.accuracy = j.at("post").at("accuracy").get<double>();
    report.post.mcc = j.at("post").at("mcc").get<double>();
    report.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(path + " is missing report fields: " + e.what());
  }
  return report;
}

std::string render_comparison(const std::vector<PruneReport>& reports) {
  if (reports.empty()) throw InputError("nothing to compare");
  std::string out =
      "policy        pruned   pre_acc  post_acc   pre_mcc  post_mcc  delta_pp\n";
  for (const PruneReport& r : reports) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-12s %7zu %8.2f%% %8.2f%% %9.3f %9.3f %+9.2f\n",
                  r.method.c_str(), r.total_pruned, r.pre.accuracy * 100.0,
                  r.post.accuracy * 100.0, r.pre.mcc, r.post.mcc,
                  (r.post.accuracy - r.pre.accuracy) * 100.0);
    out += line;
  }
  return out;
}

void write_metrics_csv(const MetricsLog& log, const std::string& path) {
  std::string out = "epoch,phase,accuracy,loss\n";
  for (const MetricsRow& row : log.rows) {
    if (row.phase.find(',') != std::string::npos)
      throw InputError("metrics phase must not contain commas");
    out += std::to_string(row.epoch) + "," + row.phase + "," + format_double(row.accuracy) + "," +
           format_double(row.loss) + "\n";
  }
  write_file_atomic(path, out);
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write to " + tmp + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " to " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read from " + path + " failed");
  return ss.str();
}

}  // namespace auber
