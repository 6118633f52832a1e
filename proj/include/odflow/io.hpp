#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "odflow/network.hpp"
#include "odflow/route_choice.hpp"
#include "odflow/sampler.hpp"
#include "odflow/simulator.hpp"

namespace odflow {

/// Error in user-supplied configuration or data files.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io_detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

inline std::string format_double(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

/// Compact formatting for labels (cell names), not for data round trips.
inline std::string format_label(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%g", v);
  return buffer;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse number '" + s + "' for " + what);
  }
}

inline long parse_long(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse integer '" + s + "' for " + what);
  }
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string token;
  while (in >> token) out.push_back(token);
  return out;
}

}  // namespace io_detail

/// Flat structured config text: named [sections] holding key = value lines.
/// Keys may repeat within a section (used for link and od_pair rows).
/// Full-line comments start with '#'.
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse_text(const std::string& text,
                               const std::string& origin = "<string>") {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = io_detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      if (t.front() == '[') {
        if (t.back() != ']') {
          throw ConfigError(origin + ":" + std::to_string(line_no) +
                            ": malformed section header");
        }
        section = io_detail::trim(t.substr(1, t.size() - 2));
        cfg.sections_[section];  // register even if empty
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": expected key = value");
      }
      const std::string key = io_detail::trim(t.substr(0, eq));
      const std::string value = io_detail::trim(t.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": empty key");
      }
      cfg.sections_[section].emplace_back(key, value);
    }
    return cfg;
  }

  static ConfigFile parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
      throw ConfigError("cannot open config file " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_text(buffer.str(), path.string());
  }

  bool has_section(const std::string& section) const {
    return sections_.count(section) > 0;
  }

  std::optional<std::string> get(const std::string& section,
                                 const std::string& key) const {
    auto it = sections_.find(section);
    if (it == sections_.end()) return std::nullopt;
    std::optional<std::string> found;
    for (const auto& [k, v] : it->second) {
      if (k == key) found = v;  // last occurrence wins
    }
    return found;
  }

  std::string require(const std::string& section,
                      const std::string& key) const {
    auto v = get(section, key);
    if (!v) {
      throw ConfigError("missing key '" + key + "' in section [" + section +
                        "]");
    }
    return *v;
  }

  std::vector<std::string> values(const std::string& section,
                                  const std::string& key) const {
    std::vector<std::string> out;
    auto it = sections_.find(section);
    if (it == sections_.end()) return out;
    for (const auto& [k, v] : it->second) {
      if (k == key) out.push_back(v);
    }
    return out;
  }

  double get_double(const std::string& section, const std::string& key,
                    double fallback) const {
    auto v = get(section, key);
    return v ? io_detail::parse_double(*v, section + "." + key) : fallback;
  }

  long get_long(const std::string& section, const std::string& key,
                long fallback) const {
    auto v = get(section, key);
    return v ? io_detail::parse_long(*v, section + "." + key) : fallback;
  }

  std::string get_string(const std::string& section, const std::string& key,
                         std::string fallback) const {
    auto v = get(section, key);
    return v ? *v : fallback;
  }

  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const {
    auto v = get(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError("cannot parse boolean '" + *v + "' for " + section +
                      "." + key);
  }

  std::vector<double> get_double_list(const std::string& section,
                                      const std::string& key) const {
    std::vector<double> out;
    auto v = get(section, key);
    if (!v) return out;
    for (const auto& token : io_detail::split_ws(*v)) {
      out.push_back(io_detail::parse_double(token, section + "." + key));
    }
    return out;
  }

  std::vector<int> get_int_list(const std::string& section,
                                const std::string& key) const {
    std::vector<int> out;
    auto v = get(section, key);
    if (!v) return out;
    for (const auto& token : io_detail::split_ws(*v)) {
      out.push_back(
          static_cast<int>(io_detail::parse_long(token, section + "." + key)));
    }
    return out;
  }

 private:
  std::map<std::string, std::vector<std::pair<std::string, std::string>>>
      sections_;
};

/// Incrementally builds config text with deterministic ordering.
class ConfigWriter {
 public:
  void section(const std::string& name) {
    if (!text_.empty()) text_ += "\n";
    text_ += "[" + name + "]\n";
  }
  void entry(const std::string& key, const std::string& value) {
    text_ += key + " = " + value + "\n";
  }
  void entry(const std::string& key, double value) {
    entry(key, io_detail::format_double(value));
  }
  void entry(const std::string& key, long value) {
    entry(key, std::to_string(value));
  }
  void entry(const std::string& key, int value) {
    entry(key, std::to_string(value));
  }
  void entry(const std::string& key, std::uint64_t value) {
    entry(key, std::to_string(value));
  }
  void entry_list(const std::string& key, const Eigen::VectorXd& values) {
    std::string joined;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      if (i > 0) joined += " ";
      joined += io_detail::format_double(values(i));
    }
    entry(key, joined);
  }
  void entry_matrix(const std::string& key, const Eigen::MatrixXd& m) {
    std::string joined;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (r + c > 0) joined += " ";
        joined += io_detail::format_double(m(r, c));
      }
    }
    entry(key, joined);
  }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
};

/// Writes a file atomically: the content lands under a temporary name and is
/// renamed into place.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot write " + tmp.string());
    }
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// ---------------------------------------------------------------------------
// CSV series: integer day column followed by named value columns.
// ---------------------------------------------------------------------------

struct CsvSeries {
  std::vector<std::string> columns;  // value column names (day column excluded)
  long first_index = 1;              // day of the first row
  Eigen::MatrixXd values;
};

inline void write_series_csv(const std::filesystem::path& path,
                             const std::string& index_name, long first_index,
                             const std::vector<std::string>& columns,
                             const Eigen::MatrixXd& values) {
  if (static_cast<Eigen::Index>(columns.size()) != values.cols()) {
    throw std::invalid_argument("write_series_csv: header width mismatch");
  }
  std::string out = index_name;
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    out += std::to_string(first_index + r);
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      out += ",";
      out += io_detail::format_double(values(r, c));
    }
    out += "\n";
  }
  write_file_atomic(path, out);
}

inline CsvSeries read_series_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open csv " + path.string());
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw ConfigError(path.string() + ": empty csv");
  }
  CsvSeries series;
  {
    std::istringstream header(io_detail::trim(line));
    std::string cell;
    bool first = true;
    while (std::getline(header, cell, ',')) {
      if (first) {
        first = false;
        continue;  // day column
      }
      series.columns.push_back(io_detail::trim(cell));
    }
  }
  std::vector<std::vector<double>> rows;
  bool have_first = false;
  long expected_index = 0;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = io_detail::trim(line);
    if (t.empty()) continue;
    std::istringstream cells(t);
    std::string cell;
    std::vector<double> row;
    bool first = true;
    while (std::getline(cells, cell, ',')) {
      if (first) {
        const long idx = io_detail::parse_long(io_detail::trim(cell),
                                               path.string() + " day column");
        if (!have_first) {
          series.first_index = idx;
          expected_index = idx;
          have_first = true;
        }
        if (idx != expected_index) {
          throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                            ": non-contiguous day index");
        }
        ++expected_index;
        first = false;
        continue;
      }
      row.push_back(io_detail::parse_double(io_detail::trim(cell),
                                            path.string() + " cell"));
    }
    if (row.size() != series.columns.size()) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                        ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  series.values.resize(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(series.columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      series.values(static_cast<Eigen::Index>(r),
                    static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return series;
}

// ---------------------------------------------------------------------------
// Network definition file.
// ---------------------------------------------------------------------------

inline void write_network_file(const std::filesystem::path& path,
                               const Network& network) {
  ConfigWriter w;
  w.section("nodes");
  {
    std::string ids;
    for (std::size_t i = 0; i < network.nodes().size(); ++i) {
      if (i > 0) ids += " ";
      ids += std::to_string(network.nodes()[i]);
    }
    w.entry("ids", ids);
  }
  w.section("links");
  for (const Link& link : network.links()) {
    std::string row = std::to_string(link.id) + " " +
                      std::to_string(link.from) + " " +
                      std::to_string(link.to) + " " +
                      io_detail::format_double(link.tau0) + " " +
                      io_detail::format_double(link.zmax) + " " +
                      io_detail::format_double(link.alpha) + " " +
                      io_detail::format_double(link.beta);
    w.entry("link", row);
  }
  w.section("od_pairs");
  for (const OdPair& od : network.od_pairs()) {
    w.entry("pair", std::to_string(od.origin) + " " +
                        std::to_string(od.destination));
  }
  write_file_atomic(path, w.text());
}

inline Network read_network_file(const std::filesystem::path& path) {
  const ConfigFile cfg = ConfigFile::parse_file(path);
  std::vector<int> nodes = cfg.get_int_list("nodes", "ids");
  if (nodes.empty()) {
    throw ConfigError(path.string() + ": [nodes] ids missing or empty");
  }
  std::vector<Link> links;
  for (const std::string& row : cfg.values("links", "link")) {
    const auto fields = io_detail::split_ws(row);
    if (fields.size() != 7) {
      throw ConfigError(path.string() + ": link row needs 7 fields: " + row);
    }
    Link link;
    link.id = static_cast<int>(io_detail::parse_long(fields[0], "link id"));
    link.from = static_cast<int>(io_detail::parse_long(fields[1], "link from"));
    link.to = static_cast<int>(io_detail::parse_long(fields[2], "link to"));
    link.tau0 = io_detail::parse_double(fields[3], "link tau0");
    link.zmax = io_detail::parse_double(fields[4], "link zmax");
    link.alpha = io_detail::parse_double(fields[5], "link alpha");
    link.beta = io_detail::parse_double(fields[6], "link beta");
    links.push_back(link);
  }
  std::vector<OdPair> pairs;
  for (const std::string& row : cfg.values("od_pairs", "pair")) {
    const auto fields = io_detail::split_ws(row);
    if (fields.size() != 2) {
      throw ConfigError(path.string() + ": od pair row needs 2 fields: " + row);
    }
    pairs.push_back(
        OdPair{static_cast<int>(io_detail::parse_long(fields[0], "origin")),
               static_cast<int>(io_detail::parse_long(fields[1], "dest"))});
  }
  try {
    return Network(std::move(nodes), std::move(links), std::move(pairs));
  } catch (const std::invalid_argument& err) {
    throw ConfigError(path.string() + ": " + err.what());
  }
}

// ---------------------------------------------------------------------------
// Dataset directory: manifest.ini, network.net, theta/x/y/z/c CSVs.
// ---------------------------------------------------------------------------

inline std::vector<std::string> od_column_names(const Network& network) {
  std::vector<std::string> names;
  for (const OdPair& od : network.od_pairs()) {
    names.push_back("od_" + std::to_string(od.origin) + "_" +
                    std::to_string(od.destination));
  }
  return names;
}

inline std::vector<std::string> link_column_names(const Network& network) {
  std::vector<std::string> names;
  for (const Link& link : network.links()) {
    names.push_back("link_" + std::to_string(link.id));
  }
  return names;
}

inline std::vector<std::string> route_column_names(int total_routes) {
  std::vector<std::string> names;
  for (int k = 1; k <= total_routes; ++k) {
    names.push_back("route_" + std::to_string(k));
  }
  return names;
}

inline std::string build_dataset_manifest(const SimulationConfig& config,
                                          const SyntheticDataset& dataset,
                                          const Network& network,
                                          int total_routes,
                                          const std::string& network_source) {
  ConfigWriter w;
  w.section("simulation");
  w.entry("network", network_source);
  w.entry("horizon", config.horizon);
  w.entry("memory", config.memory);
  w.entry("pi", config.pi);
  w.entry_list("phi", config.phi);
  w.entry_list("theta0", config.theta0);
  w.entry("demand_lo", config.demand_lo);
  w.entry("demand_hi", config.demand_hi);
  w.entry("seed", config.seed);
  w.entry_matrix("w_matrix", config.w);
  w.entry_matrix("sigma_x_matrix", config.sigma_x);
  w.entry_matrix("sigma_z_matrix", config.sigma_z);
  w.section("dimensions");
  w.entry("n_od_pairs", network.num_od_pairs());
  w.entry("n_links", network.num_links());
  w.entry("n_routes", total_routes);
  w.section("clamps");
  w.entry("theta_bounds", dataset.clamps.theta_bounds);
  w.entry("x_negative", dataset.clamps.x_negative);
  w.entry("y_negative", dataset.clamps.y_negative);
  w.entry("z_negative", dataset.clamps.z_negative);
  return w.text();
}

inline void write_dataset(const std::filesystem::path& dir,
                          const SimulationConfig& config,
                          const NetworkBundle& bundle,
                          const SyntheticDataset& dataset,
                          const std::string& network_source) {
  std::filesystem::create_directories(dir);
  const Network& network = bundle.network;
  write_network_file(dir / "network.net", network);
  const auto od_cols = od_column_names(network);
  const auto link_cols = link_column_names(network);
  const auto route_cols = route_column_names(bundle.routes.total_routes());
  write_series_csv(dir / "theta.csv", "t", 1, od_cols, dataset.theta);
  write_series_csv(dir / "x.csv", "t", 1, od_cols, dataset.x);
  write_series_csv(dir / "y.csv", "t", 1, route_cols, dataset.y);
  write_series_csv(dir / "z.csv", "t", 1, link_cols, dataset.z);
  write_series_csv(dir / "c.csv", "t", 1 - dataset.memory, route_cols,
                   dataset.costs);
  write_file_atomic(dir / "manifest.ini",
                    build_dataset_manifest(config, dataset, network,
                                           bundle.routes.total_routes(),
                                           network_source));
}

struct LoadedDataset {
  NetworkBundle bundle;
  SyntheticDataset data;
  SimulationConfig config;
  std::vector<int> link_ids;  // z.csv column ids, network link order
};

inline Eigen::MatrixXd manifest_matrix(const ConfigFile& manifest,
                                       const std::string& key, int rows,
                                       int cols) {
  const std::vector<double> flat =
      manifest.get_double_list("simulation", key);
  if (static_cast<int>(flat.size()) != rows * cols) {
    throw ConfigError("manifest: key " + key + " has wrong element count");
  }
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      m(r, c) = flat[static_cast<std::size_t>(r) * cols + c];
    }
  }
  return m;
}

inline LoadedDataset read_dataset(const std::filesystem::path& dir) {
  const ConfigFile manifest = ConfigFile::parse_file(dir / "manifest.ini");
  Network network = read_network_file(dir / "network.net");
  RouteSet routes = enumerate_routes(network);
  const int n = network.num_od_pairs();
  const int num_links = network.num_links();

  SimulationConfig config(n, num_links);
  config.horizon =
      static_cast<int>(manifest.get_long("simulation", "horizon", 100));
  config.memory = static_cast<int>(manifest.get_long("simulation", "memory", 2));
  config.pi = manifest.get_double("simulation", "pi", 0.01);
  config.demand_lo = manifest.get_double("simulation", "demand_lo", 10.0);
  config.demand_hi = manifest.get_double("simulation", "demand_hi", 100.0);
  config.seed = static_cast<std::uint64_t>(
      manifest.get_long("simulation", "seed", 0));
  {
    const auto phi = manifest.get_double_list("simulation", "phi");
    if (!phi.empty()) {
      config.phi = Eigen::Map<const Eigen::VectorXd>(
          phi.data(), static_cast<Eigen::Index>(phi.size()));
    }
    const auto theta0 = manifest.get_double_list("simulation", "theta0");
    if (!theta0.empty()) {
      config.theta0 = Eigen::Map<const Eigen::VectorXd>(
          theta0.data(), static_cast<Eigen::Index>(theta0.size()));
    }
  }
  if (manifest.get("simulation", "w_matrix")) {
    config.w = manifest_matrix(manifest, "w_matrix", n, n);
    config.sigma_x = manifest_matrix(manifest, "sigma_x_matrix", n, n);
    config.sigma_z = manifest_matrix(manifest, "sigma_z_matrix", num_links,
                                     num_links);
  }

  SyntheticDataset data;
  data.memory = config.memory;
  const CsvSeries theta = read_series_csv(dir / "theta.csv");
  const CsvSeries x = read_series_csv(dir / "x.csv");
  const CsvSeries y = read_series_csv(dir / "y.csv");
  const CsvSeries z = read_series_csv(dir / "z.csv");
  const CsvSeries c = read_series_csv(dir / "c.csv");
  data.theta = theta.values;
  data.x = x.values;
  data.y = y.values;
  data.z = z.values;
  data.costs = c.values;
  if (c.first_index != 1 - config.memory) {
    throw ConfigError(dir.string() +
                      ": c.csv pre-sample window does not match manifest "
                      "memory length");
  }

  std::vector<int> link_ids;
  for (const std::string& col : z.columns) {
    if (col.rfind("link_", 0) != 0) {
      throw ConfigError(dir.string() + ": z.csv column '" + col +
                        "' is not a link column");
    }
    link_ids.push_back(static_cast<int>(
        io_detail::parse_long(col.substr(5), "z.csv link column")));
  }

  LoadedDataset out{NetworkBundle{std::move(network), std::move(routes)},
                    std::move(data), std::move(config), std::move(link_ids)};
  return out;
}

// ---------------------------------------------------------------------------
// Trace, theta summary and run summary files.
// ---------------------------------------------------------------------------

inline void write_trace_csv(const std::filesystem::path& path,
                            const Trace& trace) {
  std::string out = "iteration";
  for (Eigen::Index c = 0; c < trace.phi.cols(); ++c) {
    out += ",phi_" + std::to_string(c + 1);
  }
  out += ",log_posterior,accepted\n";
  for (std::size_t r = 0; r < trace.iterations.size(); ++r) {
    out += std::to_string(trace.iterations[r]);
    for (Eigen::Index c = 0; c < trace.phi.cols(); ++c) {
      out += "," + io_detail::format_double(
                       trace.phi(static_cast<Eigen::Index>(r), c));
    }
    out += "," + io_detail::format_double(
                     trace.log_posterior(static_cast<Eigen::Index>(r)));
    out += "," + std::to_string(trace.accepted[r]);
    out += "\n";
  }
  write_file_atomic(path, out);
}

struct TraceOnDisk {
  std::vector<int> iterations;
  Eigen::MatrixXd phi;
  Eigen::VectorXd log_posterior;
  std::vector<int> accepted;
};

inline TraceOnDisk read_trace_csv(const std::filesystem::path& path) {
  const CsvSeries series = read_series_csv(path);
  if (series.columns.size() < 3) {
    throw ConfigError(path.string() + ": malformed trace csv");
  }
  TraceOnDisk out;
  const auto rows = series.values.rows();
  const auto phi_cols = static_cast<Eigen::Index>(series.columns.size()) - 2;
  out.phi = series.values.leftCols(phi_cols);
  out.log_posterior = series.values.col(phi_cols);
  out.iterations.reserve(rows);
  out.accepted.reserve(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    out.iterations.push_back(static_cast<int>(series.first_index + r));
    out.accepted.push_back(
        static_cast<int>(series.values(r, phi_cols + 1)));
  }
  return out;
}

/// theta_hat.csv: long format keyed by (t, od pair).
inline void write_theta_hat_csv(const std::filesystem::path& path,
                                const Eigen::MatrixXd& theta_hat,
                                const Network& network) {
  if (theta_hat.cols() != network.num_od_pairs()) {
    throw std::invalid_argument("write_theta_hat_csv: column mismatch");
  }
  std::string out = "t,origin,destination,theta_mean\n";
  for (Eigen::Index t = 0; t < theta_hat.rows(); ++t) {
    for (Eigen::Index j = 0; j < theta_hat.cols(); ++j) {
      const OdPair& od = network.od_pairs()[static_cast<std::size_t>(j)];
      out += std::to_string(t + 1) + "," + std::to_string(od.origin) + "," +
             std::to_string(od.destination) + "," +
             io_detail::format_double(theta_hat(t, j)) + "\n";
    }
  }
  write_file_atomic(path, out);
}

inline Eigen::MatrixXd read_theta_hat_csv(const std::filesystem::path& path,
                                          const Network& network) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  std::string line;
  std::getline(in, line);  // header
  std::map<std::pair<int, int>, int> pair_index;
  for (int j = 0; j < network.num_od_pairs(); ++j) {
    const OdPair& od = network.od_pairs()[static_cast<std::size_t>(j)];
    pair_index[{od.origin, od.destination}] = j;
  }
  std::vector<Eigen::VectorXd> rows;
  while (std::getline(in, line)) {
    const std::string t = io_detail::trim(line);
    if (t.empty()) continue;
    std::istringstream cells(t);
    std::string cell;
    std::vector<std::string> fields;
    while (std::getline(cells, cell, ',')) fields.push_back(cell);
    if (fields.size() != 4) {
      throw ConfigError(path.string() + ": malformed theta_hat row");
    }
    const int day =
        static_cast<int>(io_detail::parse_long(fields[0], "theta_hat t"));
    const int origin =
        static_cast<int>(io_detail::parse_long(fields[1], "theta_hat origin"));
    const int dest = static_cast<int>(
        io_detail::parse_long(fields[2], "theta_hat destination"));
    const double value = io_detail::parse_double(fields[3], "theta_hat value");
    auto it = pair_index.find({origin, dest});
    if (it == pair_index.end()) {
      throw ConfigError(path.string() + ": unknown od pair in theta_hat");
    }
    while (static_cast<int>(rows.size()) < day) {
      rows.emplace_back(Eigen::VectorXd::Zero(network.num_od_pairs()));
    }
    rows[static_cast<std::size_t>(day - 1)](it->second) = value;
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                      network.num_od_pairs());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = rows[r];
  }
  return out;
}

/// summary.csv: tidy metric,value rows.
inline void write_summary_csv(const std::filesystem::path& path,
                              const PosteriorSummary& summary,
                              long iterations, long burn_in) {
  std::string out = "metric,value\n";
  auto add = [&](const std::string& metric, double value) {
    out += metric + "," + io_detail::format_double(value) + "\n";
  };
  for (Eigen::Index c = 0; c < summary.phi_mean.size(); ++c) {
    const std::string base = "phi_" + std::to_string(c + 1);
    add(base + "_mean", summary.phi_mean(c));
    add(base + "_hpd_lo", summary.phi_hpd[static_cast<std::size_t>(c)].first);
    add(base + "_hpd_hi", summary.phi_hpd[static_cast<std::size_t>(c)].second);
  }
  add("hpd_probability", summary.hpd_probability);
  add("acceptance_rate", summary.acceptance_rate);
  if (summary.has_mse) add("mse", summary.mse);
  add("iterations", static_cast<double>(iterations));
  add("burn_in", static_cast<double>(burn_in));
  write_file_atomic(path, out);
}

inline std::map<std::string, double> read_summary_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open " + path.string());
  }
  std::map<std::string, double> out;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    const std::string t = io_detail::trim(line);
    if (t.empty()) continue;
    const auto comma = t.find(',');
    if (comma == std::string::npos) {
      throw ConfigError(path.string() + ": malformed summary row");
    }
    out[t.substr(0, comma)] =
        io_detail::parse_double(t.substr(comma + 1), "summary value");
  }
  return out;
}

}  // namespace odflow
