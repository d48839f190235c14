#ifndef VINECAL_IO_HPP
#define VINECAL_IO_HPP

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vinecal/ldm.hpp"
#include "vinecal/mh.hpp"
#include "vinecal/model.hpp"
#include "vinecal/optimizer.hpp"
#include "vinecal/prediction.hpp"

namespace vinecal {

/// Malformed input file; message carries file and line.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  if (!s.empty() && *b == '+') ++b;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e) throw ParseError(where + ": not a number: '" + s + "'");
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ParseError("missing column '" + name + "'");
  }
};

inline CsvTable read_csv(std::istream& in, const std::string& name) {
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    const std::string where = name + ":" + std::to_string(lineno);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw ParseError(where + ": expected " + std::to_string(t.header.size()) + " fields, found " +
                       std::to_string(cells.size()));
    std::vector<double> row;
    for (const auto& c : cells) row.push_back(parse_double(c, where));
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw ParseError(name + ": empty file");
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_csv(in, path.string());
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& t) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < t.header.size(); ++i) out << (i ? "," : "") << t.header[i];
  out << '\n';
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << format_double(r[i]);
    out << '\n';
  }
}

namespace detail {
// Number of leading columns named prefix1, prefix2, ...
inline std::size_t count_prefixed(const std::vector<std::string>& header, std::size_t from, const std::string& prefix) {
  std::size_t k = 0;
  while (from + k < header.size() && header[from + k] == prefix + std::to_string(k + 1)) ++k;
  return k;
}

inline void expect_header(const CsvTable& t, std::size_t x_dim, std::size_t t_dim, const std::string& last,
                          const std::string& name) {
  std::vector<std::string> want;
  for (std::size_t k = 1; k <= x_dim; ++k) want.push_back("x" + std::to_string(k));
  for (std::size_t k = 1; k <= t_dim; ++k) want.push_back("t" + std::to_string(k));
  want.push_back(last);
  if (t.header != want) {
    std::string w;
    for (const auto& h : want) w += (w.empty() ? "" : ",") + h;
    throw ParseError(name + ":1: header must be " + w);
  }
}
}  // namespace detail

/// Observations (x1..xd,y) and runs (x1..xd,t1..tk,z).
inline CalibrationDataset read_dataset(const std::filesystem::path& obs_path, const std::filesystem::path& runs_path) {
  const CsvTable o = read_csv(obs_path);
  const CsvTable r = read_csv(runs_path);
  const std::size_t xd = detail::count_prefixed(o.header, 0, "x");
  detail::expect_header(o, xd, 0, "y", obs_path.string());
  const std::size_t td = detail::count_prefixed(r.header, xd, "t");
  detail::expect_header(r, xd, td, "z", runs_path.string());
  std::vector<ExperimentalObservation> obs;
  for (const auto& row : o.rows) obs.push_back({std::vector<double>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(xd)), row[xd]});
  std::vector<ModelRun> runs;
  for (const auto& row : r.rows)
    runs.push_back({std::vector<double>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(xd)),
                    std::vector<double>(row.begin() + static_cast<std::ptrdiff_t>(xd), row.begin() + static_cast<std::ptrdiff_t>(xd + td)),
                    row[xd + td]});
  return CalibrationDataset(std::move(obs), std::move(runs), xd, td);
}

inline void write_dataset(const std::filesystem::path& obs_path, const std::filesystem::path& runs_path,
                          const CalibrationDataset& data) {
  CsvTable o, r;
  for (std::size_t k = 1; k <= data.x_dim(); ++k) {
    o.header.push_back("x" + std::to_string(k));
    r.header.push_back("x" + std::to_string(k));
  }
  for (std::size_t k = 1; k <= data.theta_dim(); ++k) r.header.push_back("t" + std::to_string(k));
  o.header.push_back("y");
  r.header.push_back("z");
  for (const auto& ob : data.observations()) {
    auto row = ob.x;
    row.push_back(ob.y);
    o.rows.push_back(std::move(row));
  }
  for (const auto& run : data.runs()) {
    auto row = run.x;
    row.insert(row.end(), run.theta.begin(), run.theta.end());
    row.push_back(run.z);
    r.rows.push_back(std::move(row));
  }
  write_csv(obs_path, o);
  write_csv(runs_path, r);
}

inline TestSet read_test_set(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t xd = detail::count_prefixed(t.header, 0, "x");
  detail::expect_header(t, xd, 0, "y", path.string());
  TestSet out;
  for (const auto& row : t.rows) out.push_back({std::vector<double>(row.begin(), row.end() - 1), row.back()});
  if (out.empty()) throw ParseError(path.string() + ": no test points");
  return out;
}

inline void write_test_set(const std::filesystem::path& path, const TestSet& test) {
  CsvTable t;
  if (test.empty()) throw std::invalid_argument("write_test_set: empty");
  for (std::size_t k = 1; k <= test.front().x.size(); ++k) t.header.push_back("x" + std::to_string(k));
  t.header.push_back("y");
  for (const auto& p : test) {
    auto row = p.x;
    row.push_back(p.y);
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

/// Records file: Z,N,y (binding energy in MeV).
inline std::vector<NuclideRecord> read_records(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header != std::vector<std::string>{"Z", "N", "y"}) throw ParseError(path.string() + ":1: header must be Z,N,y");
  std::vector<NuclideRecord> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    if (row[0] != std::floor(row[0]) || row[1] != std::floor(row[1]) || row[0] < 1 || row[1] < 1)
      throw ParseError(path.string() + ": record " + std::to_string(i + 1) + " needs integer Z, N >= 1");
    out.push_back({static_cast<int>(row[0]), static_cast<int>(row[1]), row[2]});
  }
  return out;
}

inline void write_records(const std::filesystem::path& path, const std::vector<NuclideRecord>& records) {
  CsvTable t;
  t.header = {"Z", "N", "y"};
  for (const auto& r : records) t.rows.push_back({static_cast<double>(r.Z), static_cast<double>(r.N), r.y});
  write_csv(path, t);
}

/// Flat `key = value` text; '#' starts a comment. Later keys override earlier ones.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& name) {
    Config c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) throw ParseError(name + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(body.substr(0, eq));
      const std::string value = trim(body.substr(eq + 1));
      if (key.empty()) throw ParseError(name + ":" + std::to_string(lineno) + ": empty key");
      c.values_[key] = value;
      c.lines_[key] = lineno;
    }
    c.name_ = name;
    return c;
  }
  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return parse(in, path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const { return values_.at(key); }
  std::string get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }
  double number(const std::string& key, double fallback) const {
    return has(key) ? parse_double(get(key), where(key)) : fallback;
  }
  std::size_t count(const std::string& key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    const double v = number(key, 0.0);
    if (v < 0 || v != std::floor(v)) throw ParseError(where(key) + ": '" + key + "' must be a non-negative integer");
    return static_cast<std::size_t>(v);
  }
  std::string where(const std::string& key) const {
    return name_ + ":" + (lines_.count(key) ? std::to_string(lines_.at(key)) : std::string("?"));
  }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::size_t> lines_;
  std::string name_ = "<config>";
};

inline std::string format_prior(const Prior& p) {
  return std::string(p.kind == Prior::Kind::Normal ? "normal " : "gamma ") + format_double(p.a) + " " + format_double(p.b);
}

inline Prior parse_prior(const std::string& text, const std::string& where) {
  std::istringstream ss(text);
  std::string kind, a, b, extra;
  ss >> kind >> a >> b;
  if (kind.empty() || a.empty() || b.empty() || (ss >> extra))
    throw ParseError(where + ": prior must be 'normal MEAN SD' or 'gamma SHAPE RATE'");
  const double va = parse_double(a, where), vb = parse_double(b, where);
  try {
    if (kind == "normal") return Prior::normal(va, vb);
    if (kind == "gamma") return Prior::gamma(va, vb);
  } catch (const std::domain_error& e) {
    throw ParseError(where + ": " + e.what());
  }
  throw ParseError(where + ": unknown prior family '" + kind + "'");
}

using nlohmann::json;

inline json posterior_json(const VariationalParams& lambda, const LatentLayout& layout) {
  json coords = json::array();
  for (std::size_t j = 0; j < lambda.size(); ++j)
    coords.push_back({{"name", layout.name(j)},
                      {"family", to_string(lambda.kind(j))},
                      {"mean", lambda.mean(j)},
                      {"sd", lambda.sd(j)}});
  return {{"coordinates", coords}};
}

inline VariationalParams posterior_from_json(const json& j, const LatentLayout& layout) {
  const auto& coords = j.at("coordinates");
  if (coords.size() != layout.size()) throw ParseError("posterior summary does not match the model layout");
  Vector m(static_cast<Eigen::Index>(layout.size())), s(static_cast<Eigen::Index>(layout.size()));
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const auto& c = coords[k];
    if (c.at("name").get<std::string>() != layout.name(k))
      throw ParseError("posterior summary coordinate " + std::to_string(k) + " is '" + c.at("name").get<std::string>() +
                       "', expected '" + layout.name(k) + "'");
    m(static_cast<Eigen::Index>(k)) = c.at("mean").get<double>();
    s(static_cast<Eigen::Index>(k)) = c.at("sd").get<double>();
  }
  return VariationalParams::for_layout(layout, m, s);
}

inline CsvTable trace_table(const std::vector<TraceRow>& trace, const LatentLayout& layout) {
  CsvTable t;
  t.header = {"iteration", "wall_seconds"};
  for (const auto& n : layout.names()) t.header.push_back("mean_" + n);
  for (const auto& n : layout.names()) t.header.push_back("sd_" + n);
  t.header.push_back("grad_norm");
  for (const auto& r : trace) {
    std::vector<double> row{static_cast<double>(r.iteration), r.wall_seconds};
    row.insert(row.end(), r.means.begin(), r.means.end());
    row.insert(row.end(), r.sds.begin(), r.sds.end());
    row.push_back(r.grad_norm);
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline CsvTable chain_table(const Chain& chain, const LatentLayout& layout) {
  CsvTable t;
  t.header = {"iteration"};
  for (const auto& n : layout.names()) t.header.push_back(n);
  t.header.push_back("log_posterior");
  t.header.push_back("accepted");
  for (std::size_t i = 0; i < chain.size(); ++i) {
    std::vector<double> row{static_cast<double>(chain.iteration[i])};
    row.insert(row.end(), chain.draws[i].begin(), chain.draws[i].end());
    row.push_back(chain.log_post[i]);
    row.push_back(chain.accepted[i] ? 1.0 : 0.0);
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Chain chain_from_table(const CsvTable& t, const LatentLayout& layout) {
  Chain c;
  for (const auto& n : layout.names()) t.column(n);
  for (const auto& row : t.rows) {
    Vector phi(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t j = 0; j < layout.size(); ++j) phi(static_cast<Eigen::Index>(j)) = row[t.column(layout.name(j))];
    c.draws.push_back(phi);
    c.iteration.push_back(static_cast<std::size_t>(row[0]));
  }
  return c;
}

}  // namespace vinecal

#endif  // VINECAL_IO_HPP
