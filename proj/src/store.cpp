// Copyright 2026 The precipx Authors
// SPDX-License-Identifier: Apache-2.0

#include "precipx/store.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "precipx/hash.hpp"

namespace precipx::store {
namespace {

static_assert(sizeof(float) == 4);

std::vector<char> encode_f32(std::span<const float> data) {
  std::vector<char> out(data.size() * 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(data[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  return out;
}

std::vector<float> decode_f32(const std::vector<char>& bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

std::string bytes_hash(const std::vector<char>& bytes) {
  return sha256_hex(std::span<const std::byte>(reinterpret_cast<const std::byte*>(bytes.data()), bytes.size()));
}

void write_file(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::vector<char>(text.begin(), text.end()));
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& path) {
  auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw IntegrityError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

bool valid_name(const std::string& name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

std::int64_t product(const std::vector<std::int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

Variable Variable::from_grid(std::string name, const FloatGrid& g, std::string units) {
  return Variable{std::move(name), {g.height, g.width}, std::move(units), g.values};
}

std::int64_t Variable::numel() const { return product(shape); }

const Variable& GridPack::get(const std::string& name) const {
  for (const auto& v : variables)
    if (v.name == name) return v;
  throw ValidationError("gridpack has no variable '" + name + "'");
}

bool GridPack::contains(const std::string& name) const {
  return std::any_of(variables.begin(), variables.end(), [&](const Variable& v) { return v.name == name; });
}

FloatGrid GridPack::grid(const std::string& name) const {
  const auto& v = get(name);
  if (v.shape.size() != 2) throw ValidationError("variable '" + name + "' is not 2D");
  FloatGrid g;
  g.height = static_cast<int>(v.shape[0]);
  g.width = static_cast<int>(v.shape[1]);
  g.values = v.data;
  return g;
}

std::string canonical_hash(const json& doc) { return sha256_hex(doc.dump()); }

std::string write_gridpack(const std::vector<Variable>& variables, const json& meta, const fs::path& dir) {
  if (variables.empty()) throw ValidationError("gridpack needs at least one variable");
  if (!meta.is_object()) throw ValidationError("gridpack meta must be a JSON object");
  std::set<std::string> names;
  for (const auto& v : variables) {
    if (!valid_name(v.name)) throw ValidationError("invalid variable name '" + v.name + "'");
    if (!names.insert(v.name).second) throw ValidationError("duplicate variable '" + v.name + "'");
    if (v.shape.empty() || std::any_of(v.shape.begin(), v.shape.end(), [](auto d) { return d <= 0; }))
      throw ValidationError("variable '" + v.name + "' has an empty or non-positive shape");
    if (product(v.shape) != static_cast<std::int64_t>(v.data.size()))
      throw ValidationError("variable '" + v.name + "': data length does not match shape");
  }
  ensure_dir(dir);
  json manifest;
  manifest["schema_version"] = kGridPackSchemaVersion;
  manifest["meta"] = meta;
  manifest["variables"] = json::array();
  for (const auto& v : variables) {
    auto bytes = encode_f32(v.data);
    const std::string file = v.name + ".f32";
    write_file(dir / file, bytes);
    manifest["variables"].push_back({{"name", v.name},
                                     {"shape", v.shape},
                                     {"dtype", "float32"},
                                     {"units", v.units},
                                     {"file", file},
                                     {"byte_length", bytes.size()},
                                     {"sha256", bytes_hash(bytes)}});
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return canonical_hash(manifest);
}

namespace {

json read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw IoError("missing manifest: " + path.string());
  auto manifest = read_json(path);
  if (!manifest.contains("schema_version") || !manifest["schema_version"].is_number_integer())
    throw VersionError("manifest without integer schema_version: " + path.string());
  const int version = manifest["schema_version"].get<int>();
  if (version != kGridPackSchemaVersion)
    throw VersionError("unsupported gridpack schema_version " + std::to_string(version) + " (expected " +
                       std::to_string(kGridPackSchemaVersion) + ")");
  return manifest;
}

}  // namespace

GridPack read_gridpack(const fs::path& dir) {
  const auto manifest = read_manifest(dir);
  GridPack pack;
  pack.meta = manifest.value("meta", json::object());
  try {
    for (const auto& entry : manifest.at("variables")) {
      Variable v;
      v.name = entry.at("name").get<std::string>();
      v.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      v.units = entry.value("units", "");
      if (entry.at("dtype").get<std::string>() != "float32")
        throw ValidationError("variable '" + v.name + "': unsupported dtype");
      const auto path = dir / entry.at("file").get<std::string>();
      if (!fs::exists(path)) throw IntegrityError("variable '" + v.name + "': missing file " + path.string());
      auto bytes = read_file(path);
      const auto expected_len = static_cast<std::size_t>(product(v.shape)) * 4;
      if (bytes.size() != expected_len)
        throw IntegrityError("variable '" + v.name + "': truncated or oversized file (" + std::to_string(bytes.size()) +
                             " bytes, expected " + std::to_string(expected_len) + ")");
      if (bytes_hash(bytes) != entry.at("sha256").get<std::string>())
        throw IntegrityError("variable '" + v.name + "': content hash mismatch");
      v.data = decode_f32(bytes);
      pack.variables.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw IntegrityError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return pack;
}

std::string gridpack_hash(const fs::path& dir) { return canonical_hash(read_manifest(dir)); }

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

namespace {

json header_json(const Checkpoint& ckpt, const std::vector<std::string>& hashes) {
  json h;
  h["format_version"] = kCheckpointFormatVersion;
  h["model_kind"] = ckpt.header.model_kind;
  h["model_config"] = ckpt.header.model_config;
  h["config_echo"] = ckpt.header.config_echo;
  h["stage"] = ckpt.header.stage;
  h["epoch"] = ckpt.header.epoch;
  h["seed"] = ckpt.header.seed;
  h["parent_hash"] = ckpt.header.parent_hash;
  h["params"] = json::array();
  std::int64_t offset = 0;
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const auto& p = ckpt.params[i];
    h["params"].push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}, {"sha256", hashes[i]}});
    offset += static_cast<std::int64_t>(p.data.size());
  }
  return h;
}

std::vector<std::string> param_hashes(const Checkpoint& ckpt) {
  std::vector<std::string> out;
  out.reserve(ckpt.params.size());
  for (const auto& p : ckpt.params) out.push_back(bytes_hash(encode_f32(p.data)));
  return out;
}

void validate_params(const Checkpoint& ckpt) {
  std::set<std::string> names;
  for (const auto& p : ckpt.params) {
    if (!names.insert(p.name).second) throw ValidationError("duplicate parameter '" + p.name + "'");
    if (product(p.shape) != static_cast<std::int64_t>(p.data.size()))
      throw ValidationError("parameter '" + p.name + "': data length does not match shape");
  }
}

}  // namespace

std::string checkpoint_hash(const Checkpoint& ckpt) {
  validate_params(ckpt);
  return canonical_hash(header_json(ckpt, param_hashes(ckpt)));
}

std::string save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  validate_params(ckpt);
  ensure_dir(dir);
  const auto hashes = param_hashes(ckpt);
  std::vector<char> blob;
  for (const auto& p : ckpt.params) {
    auto bytes = encode_f32(p.data);
    blob.insert(blob.end(), bytes.begin(), bytes.end());
  }
  write_file(dir / "params.f32", blob);
  const auto header = header_json(ckpt, hashes);
  write_text(dir / "header.json", header.dump(2) + "\n");
  return canonical_hash(header);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const auto header_path = dir / "header.json";
  if (!fs::exists(header_path)) throw IoError("missing checkpoint header: " + header_path.string());
  const auto h = read_json(header_path);
  Checkpoint ckpt;
  try {
    const int version = h.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw VersionError("unsupported checkpoint format_version " + std::to_string(version));
    ckpt.header.model_kind = h.at("model_kind").get<std::string>();
    ckpt.header.model_config = h.at("model_config");
    ckpt.header.config_echo = h.value("config_echo", json::object());
    ckpt.header.stage = h.at("stage").get<std::string>();
    ckpt.header.epoch = h.at("epoch").get<int>();
    ckpt.header.seed = h.at("seed").get<std::uint64_t>();
    ckpt.header.parent_hash = h.value("parent_hash", "");
    const auto blob = read_file(dir / "params.f32");
    for (const auto& entry : h.at("params")) {
      NamedTensor p;
      p.name = entry.at("name").get<std::string>();
      p.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = static_cast<std::size_t>(entry.at("offset").get<std::int64_t>()) * 4;
      const auto len = static_cast<std::size_t>(product(p.shape)) * 4;
      if (offset + len > blob.size()) throw IntegrityError("parameter '" + p.name + "': params.f32 is truncated");
      std::vector<char> bytes(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                              blob.begin() + static_cast<std::ptrdiff_t>(offset + len));
      if (bytes_hash(bytes) != entry.at("sha256").get<std::string>())
        throw IntegrityError("parameter '" + p.name + "': content hash mismatch");
      p.data = decode_f32(bytes);
      ckpt.params.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw IntegrityError("malformed checkpoint header " + header_path.string() + ": " + e.what());
  }
  return ckpt;
}

std::string checkpoint_hash(const fs::path& dir) {
  const auto header_path = dir / "header.json";
  if (!fs::exists(header_path)) throw IoError("missing checkpoint header: " + header_path.string());
  return canonical_hash(read_json(header_path));
}

void verify_param_set(const Checkpoint& ckpt, const ShapeSet& expected) {
  std::map<std::string, std::vector<std::int64_t>> want(expected.begin(), expected.end());
  std::vector<std::string> offending;
  std::set<std::string> seen;
  for (const auto& p : ckpt.params) {
    seen.insert(p.name);
    auto it = want.find(p.name);
    if (it == want.end()) {
      offending.push_back(p.name + " (unexpected)");
    } else if (it->second != p.shape) {
      offending.push_back(p.name + " (shape mismatch)");
    }
  }
  for (const auto& [name, shape] : want)
    if (!seen.count(name)) offending.push_back(name + " (missing)");
  if (!offending.empty()) {
    std::string msg = "checkpoint of kind '" + ckpt.header.model_kind + "' is incompatible with the model: ";
    for (std::size_t i = 0; i < offending.size(); ++i) {
      if (i) msg += ", ";
      if (i == 8) {
        msg += "... (" + std::to_string(offending.size() - 8) + " more)";
        break;
      }
      msg += offending[i];
    }
    throw IncompatibleError(msg);
  }
}

std::string format_metric_value(const std::optional<double>& v) {
  if (!v || std::isnan(*v)) return "nan";
  if (!std::isfinite(*v)) throw ValidationError("metric values must be finite or undefined");
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), *v);
  return std::string(buf, res.ptr);
}

MetricsLog::MetricsLog(fs::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) ensure_dir(path_.parent_path());
  if (!fs::exists(path_) || fs::file_size(path_) == 0) {
    std::ofstream out(path_, std::ios::trunc);
    if (!out) throw IoError("cannot create metrics log " + path_.string());
    out << kHeader << '\n';
  } else {
    std::ifstream in(path_);
    std::string first;
    std::getline(in, first);
    if (first != kHeader) throw ValidationError("metrics log has an unexpected header: " + path_.string());
  }
}

void MetricsLog::append(const MetricRow& row) { append(std::vector<MetricRow>{row}); }

void MetricsLog::append(const std::vector<MetricRow>& rows) {
  std::ostringstream buf;
  for (const auto& r : rows) {
    for (const auto* field : {&r.run_id, &r.stage, &r.split, &r.metric})
      if (field->find_first_of(",\n\r\"") != std::string::npos)
        throw ValidationError("metric field contains a separator: " + *field);
    buf << r.run_id << ',' << r.stage << ',' << r.epoch << ',' << r.split << ',' << r.metric << ','
        << format_metric_value(r.value) << '\n';
  }
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to " + path_.string());
  out << buf.str();
}

std::vector<MetricRow> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != MetricsLog::kHeader) throw ValidationError("not a metrics log: " + path.string());
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 6) throw ValidationError("malformed metrics row: " + line);
    MetricRow r{f[0], f[1], std::stoi(f[2]), f[3], f[4], std::nullopt};
    if (f[5] != "nan") r.value = std::stod(f[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace precipx::store
