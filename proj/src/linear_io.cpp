#include <bit>
#include <fstream>
#include <string>

#include <json.hpp>

#include "rtinv/errors.hpp"
#include "rtinv/linear.hpp"

namespace rtinv {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "rtinv-linear-system";
constexpr int kVersion = 1;

void write_array(const fs::path& file, const double* data, std::size_t count) {
  static_assert(std::endian::native == std::endian::little, "cache files assume a little-endian host");
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw Error("cannot write " + file.string());
}

class ArrayReader {
 public:
  explicit ArrayReader(const fs::path& file) : file_(file), in_(file, std::ios::binary) {
    if (!in_) throw ConfigError("cannot read " + file.string());
  }
  void read(double* data, std::size_t count) {
    in_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
    if (in_.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
      throw ConfigError(file_.string() + ": truncated");
    }
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw ConfigError(file_.string() + ": trailing data");
  }

 private:
  fs::path file_;
  std::ifstream in_;
};

}  // namespace

void write_linear_system(const fs::path& dir, const LinearSystem& sys) {
  fs::create_directories(dir);
  const auto n = sys.experiments();
  const auto nx = static_cast<std::size_t>(sys.unknowns());
  const bool rows = !sys.rows.empty();

  std::vector<double> buf;
  buf.reserve(n * nx * nx);
  for (const auto& m : sys.mu) buf.insert(buf.end(), m.data(), m.data() + m.size());
  write_array(dir / "mu.bin", buf.data(), buf.size());
  buf.clear();
  for (const auto& v : sys.nu) buf.insert(buf.end(), v.data(), v.data() + v.size());
  write_array(dir / "nu.bin", buf.data(), buf.size());
  write_array(dir / "mu_mean.bin", sys.mu_mean.data(), static_cast<std::size_t>(sys.mu_mean.size()));
  write_array(dir / "nu_mean.bin", sys.nu_mean.data(), static_cast<std::size_t>(sys.nu_mean.size()));
  if (rows) {
    buf.clear();
    for (const auto& a : sys.rows) buf.insert(buf.end(), a.data(), a.data() + a.size());
    write_array(dir / "rows.bin", buf.data(), buf.size());
    buf.clear();
    for (const auto& b : sys.data) buf.insert(buf.end(), b.data(), b.data() + b.size());
    write_array(dir / "data.bin", buf.data(), buf.size());
  }

  json files = {{"mu", "mu.bin"}, {"nu", "nu.bin"}, {"mu_mean", "mu_mean.bin"}, {"nu_mean", "nu_mean.bin"}};
  if (rows) {
    files["rows"] = "rows.bin";
    files["data"] = "data.bin";
  }
  const json manifest = {{"format", kFormat},
                         {"version", kVersion},
                         {"grid", {{"n_cells", sys.n_cells}, {"n_angles", sys.n_angles}}},
                         {"mode", sys.kind == MediumKind::scattering ? "scattering" : "absorption"},
                         {"experiments", n},
                         {"unknowns", nx},
                         {"detectors", sys.detectors},
                         {"dtype", "float64"},
                         {"byte_order", "little"},
                         {"layout", "column-major"},
                         {"rows_stored", rows},
                         {"files", files}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

LinearSystem read_linear_system(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ConfigError("cannot read " + (dir / "manifest.json").string());
  LinearSystem sys;
  try {
    const json m = json::parse(in);
    if (m.at("format").get<std::string>() != kFormat) throw ConfigError("not an rtinv linear system cache");
    if (m.at("version").get<int>() != kVersion) throw ConfigError("unsupported linear system cache version");
    if (m.at("dtype").get<std::string>() != "float64" || m.at("byte_order").get<std::string>() != "little") {
      throw ConfigError("unsupported cache dtype");
    }
    sys.n_cells = m.at("grid").at("n_cells").get<int>();
    sys.n_angles = m.at("grid").at("n_angles").get<int>();
    const auto mode = m.at("mode").get<std::string>();
    if (mode != "scattering" && mode != "absorption") throw ConfigError("unknown mode '" + mode + "'");
    sys.kind = mode == "scattering" ? MediumKind::scattering : MediumKind::absorption;
    sys.detectors = m.at("detectors").get<std::vector<int>>();
    const auto n = m.at("experiments").get<std::size_t>();
    const auto nx = m.at("unknowns").get<Eigen::Index>();
    const auto nd = static_cast<Eigen::Index>(sys.detectors.size());
    const auto& files = m.at("files");

    ArrayReader mu(dir / files.at("mu").get<std::string>());
    ArrayReader nu(dir / files.at("nu").get<std::string>());
    sys.mu.assign(n, Eigen::MatrixXd(nx, nx));
    sys.nu.assign(n, Eigen::VectorXd(nx));
    for (std::size_t k = 0; k < n; ++k) {
      mu.read(sys.mu[k].data(), static_cast<std::size_t>(nx * nx));
      nu.read(sys.nu[k].data(), static_cast<std::size_t>(nx));
    }
    mu.expect_end();
    nu.expect_end();
    sys.mu_mean.resize(nx, nx);
    sys.nu_mean.resize(nx);
    ArrayReader mm(dir / files.at("mu_mean").get<std::string>());
    mm.read(sys.mu_mean.data(), static_cast<std::size_t>(nx * nx));
    mm.expect_end();
    ArrayReader nm(dir / files.at("nu_mean").get<std::string>());
    nm.read(sys.nu_mean.data(), static_cast<std::size_t>(nx));
    nm.expect_end();
    if (m.at("rows_stored").get<bool>()) {
      ArrayReader rows(dir / files.at("rows").get<std::string>());
      ArrayReader data(dir / files.at("data").get<std::string>());
      sys.rows.assign(n, Eigen::MatrixXd(nd, nx));
      sys.data.assign(n, Eigen::VectorXd(nd));
      for (std::size_t k = 0; k < n; ++k) {
        rows.read(sys.rows[k].data(), static_cast<std::size_t>(nd * nx));
        data.read(sys.data[k].data(), static_cast<std::size_t>(nd));
      }
      rows.expect_end();
      data.expect_end();
    }
  } catch (const json::exception& e) {
    throw ConfigError("linear system manifest: " + std::string(e.what()));
  }
  return sys;
}

}  // namespace rtinv
