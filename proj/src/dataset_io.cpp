#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include <json.hpp>

#include "rtinv/errors.hpp"
#include "rtinv/experiments.hpp"
#include "text.hpp"

namespace rtinv {

namespace fs = std::filesystem;
using nlohmann::json;
using detail::format_double;
using detail::parse_double;
using detail::parse_int;

namespace {

constexpr const char* kFormat = "rtinv-dataset";
constexpr int kVersion = 1;

std::string record_stem(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "exp_%06zu", k);
  return buf;
}

std::string kind_name(MediumKind k) { return k == MediumKind::scattering ? "scattering" : "absorption"; }

MediumKind parse_kind(const std::string& s) {
  if (s == "scattering") return MediumKind::scattering;
  if (s == "absorption") return MediumKind::absorption;
  throw ConfigError("dataset: unknown mode '" + s + "'");
}

std::ofstream open_out(const fs::path& p, bool binary = false) {
  std::ofstream out(p, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

std::ifstream open_in(const fs::path& p, bool binary = false) {
  std::ifstream in(p, binary ? std::ios::binary : std::ios::in);
  if (!in) throw ConfigError("cannot read " + p.string());
  return in;
}

json read_json(const fs::path& p) {
  auto in = open_in(p);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  auto out = open_out(p);
  out << j.dump(2) << '\n';
}

// Next line that is not a '#' comment.
bool next_line(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty() && line.front() == '#') continue;
    return true;
  }
  return false;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

void write_csv_record(const fs::path& p, const ExperimentPair& e) {
  auto out = open_out(p);
  out << "# source_node,source_angle,noise_std\n";
  out << e.source.node << ',' << e.source.angle << ',' << format_double(e.noise_std) << '\n';
  out << "index,psi\n";
  for (std::size_t i = 0; i < e.measurement.values.size(); ++i) {
    out << i << ',' << format_double(e.measurement.values[i]) << '\n';
  }
}

ExperimentPair read_csv_record(const fs::path& p) {
  auto in = open_in(p);
  const std::string what = p.filename().string();
  std::string line;
  if (!next_line(in, line)) throw ConfigError(what + ": empty record");
  const auto head = split(line, ',');
  if (head.size() != 3) throw ConfigError(what + ": malformed source line");
  ExperimentPair e;
  e.source.node = static_cast<int>(parse_int(head[0], what));
  e.source.angle = static_cast<int>(parse_int(head[1], what));
  e.noise_std = parse_double(head[2], what);
  if (!next_line(in, line) || line != "index,psi") throw ConfigError(what + ": missing 'index,psi' header");
  e.measurement.side = BoundarySide::outflow;
  while (next_line(in, line)) {
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 2) throw ConfigError(what + ": malformed row '" + line + "'");
    if (parse_int(cols[0], what) != static_cast<long long>(e.measurement.values.size())) {
      throw ConfigError(what + ": rows out of order");
    }
    e.measurement.values.push_back(parse_double(cols[1], what));
  }
  return e;
}

void write_binary_record(const fs::path& dir, const std::string& stem, const ExperimentPair& e) {
  static_assert(std::endian::native == std::endian::little, "binary records assume a little-endian host");
  const std::string data_name = stem + ".bin";
  json header = {{"source_node", e.source.node},
                 {"source_angle", e.source.angle},
                 {"noise_std", e.noise_std},
                 {"count", e.measurement.values.size()},
                 {"dtype", "float64"},
                 {"byte_order", "little"},
                 {"data", data_name}};
  write_json(dir / (stem + ".json"), header);
  auto out = open_out(dir / data_name, true);
  out.write(reinterpret_cast<const char*>(e.measurement.values.data()),
            static_cast<std::streamsize>(e.measurement.values.size() * sizeof(double)));
  if (!out) throw Error("cannot write " + (dir / data_name).string());
}

ExperimentPair read_binary_record(const fs::path& dir, const std::string& stem) {
  const json h = read_json(dir / (stem + ".json"));
  ExperimentPair e;
  try {
    if (h.at("dtype").get<std::string>() != "float64" || h.at("byte_order").get<std::string>() != "little") {
      throw ConfigError(stem + ": unsupported dtype or byte order");
    }
    e.source.node = h.at("source_node").get<int>();
    e.source.angle = h.at("source_angle").get<int>();
    e.noise_std = h.at("noise_std").get<double>();
    const auto count = h.at("count").get<std::size_t>();
    e.measurement.side = BoundarySide::outflow;
    e.measurement.values.resize(count);
    const fs::path data = dir / h.at("data").get<std::string>();
    auto in = open_in(data, true);
    in.read(reinterpret_cast<char*>(e.measurement.values.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
      throw ConfigError(data.string() + ": truncated");
    }
  } catch (const json::exception& err) {
    throw ConfigError(stem + ": " + err.what());
  }
  return e;
}

}  // namespace

void write_dataset(const fs::path& dir, const Dataset& data, const Medium* truth) {
  fs::create_directories(dir);
  const auto& info = data.info;
  const PhaseGrid grid(info.n_cells, info.n_angles);

  json records = json::array();
  for (std::size_t k = 0; k < data.pairs.size(); ++k) {
    const auto& e = data.pairs[k];
    if (e.measurement.values.size() != grid.outflow().size()) {
      throw ConfigError("dataset: measurement " + std::to_string(k) + " does not match the grid");
    }
    const std::string stem = record_stem(k);
    if (info.storage == StorageFormat::csv) {
      write_csv_record(dir / (stem + ".csv"), e);
      records.push_back(stem + ".csv");
    } else {
      write_binary_record(dir, stem, e);
      records.push_back(stem + ".json");
    }
  }

  json manifest = {{"format", kFormat},
                   {"version", kVersion},
                   {"grid", {{"n_cells", info.n_cells}, {"n_angles", info.n_angles}}},
                   {"truth", info.truth},
                   {"mode", kind_name(info.kind)},
                   {"seed", info.seed},
                   {"noise_std", info.noise_std},
                   {"count", data.pairs.size()},
                   {"storage", info.storage == StorageFormat::csv ? "csv" : "binary"},
                   {"records", records}};
  if (truth) {
    write_field(dir / "truth.csv", grid, truth->values);
    manifest["truth_field"] = "truth.csv";
  }
  write_json(dir / "manifest.json", manifest);
}

Dataset read_dataset(const fs::path& dir) {
  const json m = read_json(dir / "manifest.json");
  Dataset d;
  try {
    if (m.at("format").get<std::string>() != kFormat) throw ConfigError("dataset: not an rtinv dataset");
    if (m.at("version").get<int>() != kVersion) throw ConfigError("dataset: unsupported version");
    d.info.n_cells = m.at("grid").at("n_cells").get<int>();
    d.info.n_angles = m.at("grid").at("n_angles").get<int>();
    d.info.truth = m.at("truth").get<std::string>();
    d.info.kind = parse_kind(m.at("mode").get<std::string>());
    d.info.seed = m.at("seed").get<std::uint64_t>();
    d.info.noise_std = m.at("noise_std").get<double>();
    const auto storage = m.at("storage").get<std::string>();
    if (storage == "csv") {
      d.info.storage = StorageFormat::csv;
    } else if (storage == "binary") {
      d.info.storage = StorageFormat::binary;
    } else {
      throw ConfigError("dataset: unknown storage '" + storage + "'");
    }
    const PhaseGrid grid(d.info.n_cells, d.info.n_angles);
    for (const auto& r : m.at("records")) {
      const fs::path name = r.get<std::string>();
      ExperimentPair e = d.info.storage == StorageFormat::csv
                             ? read_csv_record(dir / name)
                             : read_binary_record(dir, name.stem().string());
      if (e.measurement.values.size() != grid.outflow().size()) {
        throw ConfigError(name.string() + ": expected " + std::to_string(grid.outflow().size()) + " values");
      }
      e.inflow = delta_inflow(grid, e.source);
      d.pairs.push_back(std::move(e));
    }
    if (d.pairs.size() != m.at("count").get<std::size_t>()) throw ConfigError("dataset: record count mismatch");
  } catch (const json::exception& err) {
    throw ConfigError("dataset manifest: " + std::string(err.what()));
  }
  return d;
}

void write_field(const fs::path& file, const PhaseGrid& grid, const std::vector<double>& values) {
  if (values.size() != static_cast<std::size_t>(grid.node_count())) {
    throw ConfigError("field has " + std::to_string(values.size()) + " values, grid has " +
                      std::to_string(grid.node_count()) + " nodes");
  }
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  auto out = open_out(file);
  out << "m1,m2,x1,x2,value\n";
  for (int node = 0; node < grid.node_count(); ++node) {
    out << grid.node_m1(node) << ',' << grid.node_m2(node) << ',' << format_double(grid.node_x1(node)) << ','
        << format_double(grid.node_x2(node)) << ',' << format_double(values[node]) << '\n';
  }
}

FieldFile read_field(const fs::path& file) {
  auto in = open_in(file);
  const std::string what = file.filename().string();
  std::string line;
  if (!next_line(in, line) || line != "m1,m2,x1,x2,value") throw ConfigError(what + ": missing field header");
  std::vector<std::pair<int, int>> idx;
  std::vector<double> vals;
  int max_m = 0;
  while (next_line(in, line)) {
    if (line.empty()) continue;
    const auto c = split(line, ',');
    if (c.size() != 5) throw ConfigError(what + ": malformed row '" + line + "'");
    const int m1 = static_cast<int>(parse_int(c[0], what));
    const int m2 = static_cast<int>(parse_int(c[1], what));
    if (m1 < 0 || m2 < 0) throw ConfigError(what + ": negative index");
    max_m = std::max({max_m, m1, m2});
    idx.emplace_back(m1, m2);
    vals.push_back(parse_double(c[4], what));
  }
  const int side = max_m + 1;
  if (max_m < 2 || idx.size() != static_cast<std::size_t>(side) * side) {
    throw ConfigError(what + ": expected a full square grid of nodes");
  }
  FieldFile f;
  f.n_cells = max_m;
  f.values.assign(idx.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::size_t node = static_cast<std::size_t>(idx[i].first) * side + idx[i].second;
    if (!std::isnan(f.values[node])) throw ConfigError(what + ": duplicate node");
    f.values[node] = vals[i];
  }
  return f;
}

}  // namespace rtinv
