#pragma once

// File formats
//
//   logistic data   CSV, header "y,x0,...,x{D-1}", one record per line
//   sessions        JSON lines {"user": int, "items": [int, ...]} plus a sidecar
//                   manifest <stem>.manifest.json holding {"P": int, "U": int}
//   config          "key = value" lines, '#' starts a comment
//   checkpoint      JSON; parameter arrays are base64 of little-endian float64

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "avb/errors.hpp"
#include "avb/linalg.hpp"
#include "avb/logreg.hpp"
#include "avb/lvm.hpp"
#include "json.hpp"

namespace avb {

using ordered_json = nlohmann::ordered_json;

namespace detail {

inline std::string_view trim(std::string_view s) {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string_view strip_bom(std::string_view s) {
  if (s.size() >= 3 && static_cast<unsigned char>(s[0]) == 0xEF &&
      static_cast<unsigned char>(s[1]) == 0xBB && static_cast<unsigned char>(s[2]) == 0xBF)
    s.remove_prefix(3);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, std::size_t line, const char* what) {
  const std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size() || !std::isfinite(v))
    throw parse_error(line, std::string("invalid ") + what + " '" + tmp + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path.string() + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open '" + path.string() + "' for writing");
  return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw io_error("write to '" + path.string() + "' failed");
}

}  // namespace detail

// ---------------------------------------------------------------- logistic CSV

inline LogRegDataset parse_logreg_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::size_t d = 0;
  bool have_header = false;
  Vector values;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = line;
    if (lineno == 1) view = detail::strip_bom(view);
    view = detail::trim(view);
    if (view.empty()) continue;
    const auto fields = detail::split(view, ',');
    if (!have_header) {
      if (fields.size() < 2 || fields[0] != "y")
        throw parse_error(lineno, "header must be y,x0,...,x{D-1}");
      for (std::size_t j = 1; j < fields.size(); ++j)
        if (fields[j] != "x" + std::to_string(j - 1))
          throw parse_error(lineno, "header column " + std::to_string(j) + " must be x" +
                                        std::to_string(j - 1));
      d = fields.size() - 1;
      have_header = true;
      continue;
    }
    if (fields.size() != d + 1)
      throw parse_error(lineno, "expected " + std::to_string(d + 1) + " fields, found " +
                                    std::to_string(fields.size()));
    const double y = detail::parse_double(fields[0], lineno, "label");
    if (y != 0.0 && y != 1.0) throw parse_error(lineno, "label must be 0 or 1");
    labels.push_back(static_cast<int>(y));
    for (std::size_t j = 1; j <= d; ++j)
      values.push_back(detail::parse_double(fields[j], lineno, "feature"));
  }
  if (!have_header) throw parse_error(lineno, "missing header");
  LogRegDataset data;
  data.X = Matrix(labels.size(), d, std::move(values));
  data.y = std::move(labels);
  return data;
}

inline void write_logreg_csv(std::ostream& out, const LogRegDataset& data) {
  out << "y";
  for (std::size_t j = 0; j < data.dim(); ++j) out << ",x" << j;
  out << "\n";
  for (std::size_t n = 0; n < data.size(); ++n) {
    out << data.y[n];
    for (double v : data.X.row(n)) out << ',' << detail::format_double(v);
    out << "\n";
  }
}

inline LogRegDataset read_logreg_csv(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return parse_logreg_csv(in);
}

inline void write_logreg_csv(const std::filesystem::path& path, const LogRegDataset& data) {
  auto out = detail::open_out(path);
  write_logreg_csv(out, data);
  detail::finish(out, path);
}

// ------------------------------------------------------------- session JSONL

inline std::filesystem::path manifest_path_for(const std::filesystem::path& data_path) {
  std::filesystem::path p = data_path;
  if (p.extension() == ".jsonl") p.replace_extension();
  p += ".manifest.json";
  return p;
}

inline SessionDataset parse_sessions_jsonl(std::istream& in, std::size_t catalog_size) {
  SessionDataset data;
  data.catalog_size = catalog_size;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = line;
    if (lineno == 1) view = detail::strip_bom(view);
    view = detail::trim(view);
    if (view.empty()) continue;
    ordered_json obj;
    try {
      obj = ordered_json::parse(view);
    } catch (const nlohmann::json::parse_error& e) {
      throw parse_error(lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object() || !obj.contains("user") || !obj.contains("items"))
      throw parse_error(lineno, "expected an object with \"user\" and \"items\"");
    if (!obj["user"].is_number_integer()) throw parse_error(lineno, "\"user\" must be an integer");
    const auto& items = obj["items"];
    if (!items.is_array()) throw parse_error(lineno, "\"items\" must be an array");
    if (items.empty()) throw parse_error(lineno, "empty session (sessions need at least one item)");
    Session s;
    s.reserve(items.size());
    for (const auto& it : items) {
      if (!it.is_number_integer() || it.get<std::int64_t>() < 0)
        throw parse_error(lineno, "item ids must be nonnegative integers");
      const auto id = it.get<std::uint64_t>();
      if (id >= catalog_size)
        throw parse_error(lineno, "item id " + std::to_string(id) + " outside catalog of size " +
                                      std::to_string(catalog_size));
      s.push_back(static_cast<std::size_t>(id));
    }
    data.users.push_back(obj["user"].get<std::int64_t>());
    data.sessions.push_back(std::move(s));
  }
  return data;
}

inline void write_sessions_jsonl(std::ostream& out, const SessionDataset& data) {
  for (std::size_t u = 0; u < data.size(); ++u) {
    ordered_json obj;
    obj["user"] = data.user(u);
    obj["items"] = data.sessions[u];
    out << obj.dump() << "\n";
  }
}

inline ordered_json read_json_file(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  try {
    return ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error(0, "'" + path.string() + "': " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const ordered_json& j) {
  auto out = detail::open_out(path);
  out << j.dump(2) << "\n";
  detail::finish(out, path);
}

// Reads <path> and its sidecar manifest.
inline SessionDataset read_sessions(const std::filesystem::path& path) {
  const ordered_json manifest = read_json_file(manifest_path_for(path));
  if (!manifest.contains("P") || !manifest["P"].is_number_integer() || manifest["P"].get<std::int64_t>() < 1)
    throw parse_error(0, "manifest for '" + path.string() + "' needs a positive integer \"P\"");
  auto in = detail::open_in(path);
  SessionDataset data = parse_sessions_jsonl(in, manifest["P"].get<std::size_t>());
  if (manifest.contains("U") && manifest["U"].get<std::size_t>() != data.size())
    throw parse_error(0, "manifest U = " + std::to_string(manifest["U"].get<std::size_t>()) +
                             " but '" + path.string() + "' holds " + std::to_string(data.size()) +
                             " sessions");
  return data;
}

// Writes <path> and its sidecar manifest; `extra` fields are merged into the manifest.
inline void write_sessions(const std::filesystem::path& path, const SessionDataset& data,
                           const ordered_json& extra = ordered_json::object()) {
  {
    auto out = detail::open_out(path);
    write_sessions_jsonl(out, data);
    detail::finish(out, path);
  }
  ordered_json manifest;
  manifest["P"] = data.catalog_size;
  manifest["U"] = data.size();
  for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
  write_json_file(manifest_path_for(path), manifest);
}

// -------------------------------------------------------------------- config

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != view.npos) view = view.substr(0, hash);
    view = detail::trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == view.npos) throw parse_error(lineno, "expected 'key = value'");
    const auto key = detail::trim(view.substr(0, eq));
    const auto value = detail::trim(view.substr(eq + 1));
    if (key.empty() || value.empty()) throw parse_error(lineno, "expected 'key = value'");
    kv[std::string(key)] = std::string(value);
  }
  return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return parse_key_values(in);
}

namespace detail {
inline double kv_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size()) throw validation_error("config: " + key + " is not a number");
  return d;
}
inline std::uint64_t kv_count(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw validation_error("config: " + key + " must be a nonnegative integer");
  return std::stoull(v);
}
}  // namespace detail

inline void apply_config(const KeyValues& kv, OptimConfig& c) {
  for (const auto& [k, v] : kv) {
    if (k == "learning_rate") c.learning_rate = detail::kv_double(k, v);
    else if (k == "epochs") c.epochs = detail::kv_count(k, v);
    else if (k == "batch_size") c.batch_size = detail::kv_count(k, v);
    else if (k == "optimizer") c.optimizer = parse_optimizer_kind(v);
    else if (k == "momentum") c.momentum = detail::kv_double(k, v);
    else if (k == "beta2") c.beta2 = detail::kv_double(k, v);
    else if (k == "decay") c.decay = detail::kv_double(k, v);
    else if (k == "seed") c.seed = detail::kv_count(k, v);
    else if (k == "mc_samples") c.mc_samples = detail::kv_count(k, v);
    else if (k == "max_iters") c.max_iters = detail::kv_count(k, v);
    else if (k == "tol") c.tol = detail::kv_double(k, v);
    else throw validation_error("config: unknown key '" + k + "'");
  }
}

inline void apply_config(const KeyValues& kv, LvmConfig& c) {
  for (const auto& [k, v] : kv) {
    if (k == "K") c.K = detail::kv_count(k, v);
    else if (k == "negatives") c.negatives = detail::kv_count(k, v);
    else if (k == "epochs") c.epochs = detail::kv_count(k, v);
    else if (k == "batch_sessions") c.batch_sessions = detail::kv_count(k, v);
    else if (k == "learning_rate") c.learning_rate = detail::kv_double(k, v);
    else if (k == "optimizer") c.optimizer = parse_optimizer_kind(v);
    else if (k == "momentum") c.momentum = detail::kv_double(k, v);
    else if (k == "beta2") c.beta2 = detail::kv_double(k, v);
    else if (k == "decay") c.decay = detail::kv_double(k, v);
    else if (k == "seed") c.seed = detail::kv_count(k, v);
    else throw validation_error("config: unknown key '" + k + "'");
  }
}

inline ordered_json config_json(const OptimConfig& c) {
  ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["optimizer"] = to_string(c.optimizer);
  j["momentum"] = c.momentum;
  j["beta2"] = c.beta2;
  j["decay"] = c.decay;
  j["seed"] = c.seed;
  j["mc_samples"] = c.mc_samples;
  j["max_iters"] = c.max_iters;
  j["tol"] = c.tol;
  return j;
}

inline ordered_json config_json(const LvmConfig& c) {
  ordered_json j;
  j["K"] = c.K;
  j["negatives"] = c.negatives;
  j["epochs"] = c.epochs;
  j["batch_sessions"] = c.batch_sessions;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = to_string(c.optimizer);
  j["momentum"] = c.momentum;
  j["beta2"] = c.beta2;
  j["decay"] = c.decay;
  j["seed"] = c.seed;
  return j;
}

// ---------------------------------------------------------------- checkpoint

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += (i + 1 < bytes.size()) ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw parse_error(0, "base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + static_cast<std::size_t>(k)];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        v[k] = value(c);
        if (v[k] < 0 || pad > 0) throw parse_error(0, "base64: invalid character");
      }
    }
    const std::uint32_t bits = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<std::uint8_t>(bits >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((bits >> 8) & 0xFF));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(bits & 0xFF));
  }
  return out;
}

inline std::string encode_doubles(std::span<const double> values) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(values.size() * 8);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return base64_encode(bytes);
}

inline Vector decode_doubles(std::string_view text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 8 != 0) throw parse_error(0, "checkpoint array is not a float64 sequence");
  Vector out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + static_cast<std::size_t>(b)]) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

struct ArrayField {
  std::vector<std::size_t> shape;
  Vector data;
};

struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  std::string model_kind;  // "jj_logreg" or "bouchard_lvm"
  std::string trainer;     // jj | vbem | lrt | lvm
  ordered_json dims = ordered_json::object();
  std::uint64_t seed = 0;
  ordered_json config = ordered_json::object();
  std::map<std::string, ArrayField> arrays;

  const ArrayField& array(const std::string& name) const {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw parse_error(0, "checkpoint is missing array '" + name + "'");
    return it->second;
  }
};

inline ordered_json checkpoint_to_json(const Checkpoint& c) {
  ordered_json j;
  j["format_version"] = c.format_version;
  j["model_kind"] = c.model_kind;
  j["trainer"] = c.trainer;
  j["dims"] = c.dims;
  j["seed"] = c.seed;
  j["config"] = c.config;
  ordered_json arrays = ordered_json::object();
  for (const auto& [name, field] : c.arrays) {
    ordered_json a;
    a["shape"] = field.shape;
    a["dtype"] = "float64-le";
    a["data"] = encode_doubles(field.data);
    arrays[name] = a;
  }
  j["arrays"] = arrays;
  return j;
}

inline Checkpoint checkpoint_from_json(const ordered_json& j) {
  try {
    Checkpoint c;
    c.format_version = j.at("format_version").get<int>();
    if (c.format_version != Checkpoint::kFormatVersion)
      throw validation_error("checkpoint format version " + std::to_string(c.format_version) +
                             " is not supported (expected " +
                             std::to_string(Checkpoint::kFormatVersion) + ")");
    c.model_kind = j.at("model_kind").get<std::string>();
    if (c.model_kind != "jj_logreg" && c.model_kind != "bouchard_lvm")
      throw validation_error("unknown checkpoint model kind '" + c.model_kind + "'");
    c.trainer = j.value("trainer", "");
    c.dims = j.at("dims");
    c.seed = j.at("seed").get<std::uint64_t>();
    c.config = j.value("config", ordered_json::object());
    for (auto it = j.at("arrays").begin(); it != j.at("arrays").end(); ++it) {
      ArrayField f;
      f.shape = it.value().at("shape").get<std::vector<std::size_t>>();
      f.data = decode_doubles(it.value().at("data").get<std::string>());
      std::size_t expected = 1;
      for (std::size_t s : f.shape) expected *= s;
      if (expected != f.data.size())
        throw parse_error(0, "checkpoint array '" + it.key() + "' does not match its shape");
      c.arrays[it.key()] = std::move(f);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(0, std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_json_file(path, checkpoint_to_json(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_json_file(path));
}

inline Checkpoint make_checkpoint(const GaussianVariational& q, const std::string& trainer,
                                  const OptimConfig& config) {
  Checkpoint c;
  c.model_kind = "jj_logreg";
  c.trainer = trainer;
  c.dims["D"] = q.dim();
  c.seed = config.seed;
  c.config = config_json(config);
  c.arrays["mu"] = {{q.dim()}, q.mu};
  c.arrays["cov_lower"] = {{q.dim(), q.dim()}, q.cov.lower().data()};
  return c;
}

inline GaussianVariational logreg_posterior(const Checkpoint& c) {
  if (c.model_kind != "jj_logreg") throw validation_error("checkpoint does not hold a jj_logreg model");
  const auto& mu = c.array("mu");
  const auto& l = c.array("cov_lower");
  const std::size_t d = mu.data.size();
  if (l.shape != std::vector<std::size_t>{d, d}) throw parse_error(0, "cov_lower must be D x D");
  return {mu.data, CovFactor::from_cholesky(Matrix(d, d, l.data))};
}

inline Checkpoint make_checkpoint(const LvmParams& m, const LvmConfig& config) {
  Checkpoint c;
  c.model_kind = "bouchard_lvm";
  c.trainer = "lvm";
  c.dims["P"] = m.P;
  c.dims["K"] = m.K;
  c.seed = config.seed;
  c.config = config_json(config);
  c.arrays["psi"] = {{m.P, m.K}, m.psi.data()};
  c.arrays["rho"] = {{m.P}, m.rho};
  c.arrays["w_mu"] = {{m.K, m.P}, m.w_mu.transpose().data()};
  c.arrays["b_mu"] = {{m.K}, m.b_mu};
  c.arrays["w_sigma"] = {{m.K, m.P}, m.w_sigma.transpose().data()};
  c.arrays["b_sigma"] = {{m.K}, m.b_sigma};
  c.arrays["w_a"] = {{1, m.P}, m.w_a};
  c.arrays["b_a"] = {{1}, {m.b_a}};
  return c;
}

inline LvmParams lvm_params(const Checkpoint& c) {
  if (c.model_kind != "bouchard_lvm")
    throw validation_error("checkpoint does not hold a bouchard_lvm model");
  const std::size_t p = c.dims.at("P").get<std::size_t>();
  const std::size_t k = c.dims.at("K").get<std::size_t>();
  LvmParams m = LvmParams::zeros(p, k);
  auto expect = [&](const std::string& name, std::vector<std::size_t> shape) -> const Vector& {
    const auto& f = c.array(name);
    if (f.shape != shape) throw parse_error(0, "checkpoint array '" + name + "' has the wrong shape");
    return f.data;
  };
  m.psi = Matrix(p, k, expect("psi", {p, k}));
  m.rho = expect("rho", {p});
  m.w_mu = Matrix(k, p, expect("w_mu", {k, p})).transpose();
  m.b_mu = expect("b_mu", {k});
  m.w_sigma = Matrix(k, p, expect("w_sigma", {k, p})).transpose();
  m.b_sigma = expect("b_sigma", {k});
  m.w_a = expect("w_a", {1, p});
  m.b_a = expect("b_a", {1})[0];
  return m;
}

}  // namespace avb
