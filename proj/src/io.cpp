#include "mpctune/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <system_error>

#include "json.hpp"

#include "mpctune/errors.hpp"

namespace mpctune {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw Error(ErrorCode::Io, "not a number: '" + std::string(text) + "'");
  }
  return v;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::string stamp_comment(const RunStamp& stamp) {
  return "# config_hash " + hex64(stamp.config_hash) + "\n# seed " + std::to_string(stamp.seed) + "\n";
}

json stamp_json(const RunStamp& stamp) {
  return {{"config_hash", hex64(stamp.config_hash)}, {"seed", stamp.seed}};
}

std::string join_intervals(const std::vector<Interval>& box) {
  std::string s;
  for (const auto& iv : box) s += " " + format_double(iv.lo) + ":" + format_double(iv.hi);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::int64_t parse_int(std::string_view text) {
  std::int64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw Error(ErrorCode::Io, "not an integer: '" + std::string(text) + "'");
  }
  return v;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

json layout_json(const ThetaLayout& l) {
  return {{"n_x", l.n_x}, {"n_u", l.n_u}, {"N", l.N}, {"n_cx", l.n_cx}, {"n_cu", l.n_cu}};
}

ThetaLayout layout_from(const json& j) {
  return {j.at("n_x").get<Index>(), j.at("n_u").get<Index>(), j.at("N").get<Index>(), j.at("n_cx").get<Index>(),
          j.at("n_cu").get<Index>()};
}

Vector vector_from(const json& j) {
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i) v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

json vector_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

template <typename F>
auto parse_json(std::string_view text, const char* what, F&& f) {
  try {
    return f(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, std::string("malformed ") + what + ": " + e.what());
  }
}

}  // namespace

std::string serialize_dataset(const ScenarioSpec& spec, std::span<const Scenario> data, const RunStamp& stamp) {
  const Index n_d = static_cast<Index>(spec.d_box.size());
  const Index n_x = spec.x0_mean.size();
  const Index n_w = static_cast<Index>(spec.noise_box.size());
  std::string out = "# mpctune dataset v1\n" + stamp_comment(stamp);
  out += "# spec_seed " + std::to_string(spec.seed) + "\n";
  out += "# dims M=" + std::to_string(data.size()) + " T=" + std::to_string(spec.T) + " n_d=" + std::to_string(n_d) +
         " n_x=" + std::to_string(n_x) + " n_w=" + std::to_string(n_w) + "\n";
  out += "# noise_box" + join_intervals(spec.noise_box) + "\n";
  out += "# d_box" + join_intervals(spec.d_box) + "\n";
  out += "# x0_mean";
  for (Index i = 0; i < n_x; ++i) out += " " + format_double(spec.x0_mean(i));
  out += "\n# x0_perturb" + join_intervals(spec.x0_perturb) + "\n";
  out += "# row: id, d[n_d], x0[n_x], w[T*n_w] row-major\n";
  for (const auto& s : data) {
    if (s.d.size() != n_d || s.x0.size() != n_x || s.w.rows() != spec.T || s.w.cols() != n_w) {
      throw Error(ErrorCode::DimensionMismatch, "scenario does not match the dataset spec");
    }
    out += std::to_string(s.id);
    for (Index i = 0; i < n_d; ++i) out += "," + format_double(s.d(i));
    for (Index i = 0; i < n_x; ++i) out += "," + format_double(s.x0(i));
    for (Index t = 0; t < spec.T; ++t)
      for (Index i = 0; i < n_w; ++i) out += "," + format_double(s.w(t, i));
    out += "\n";
  }
  return out;
}

std::vector<Scenario> parse_dataset(std::string_view text) {
  std::map<std::string, std::int64_t> dims;
  std::vector<Scenario> out;
  bool have_dims = false;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (line.rfind("# dims ", 0) == 0) {
        for (auto tok : split(line.substr(7), ' ')) {
          const auto eq = tok.find('=');
          if (eq == std::string_view::npos) continue;
          dims[std::string(tok.substr(0, eq))] = parse_int(tok.substr(eq + 1));
        }
        have_dims = true;
      }
      continue;
    }
    if (!have_dims) throw Error(ErrorCode::Io, "dataset: data row before the '# dims' header");
    const Index n_d = dims.at("n_d"), n_x = dims.at("n_x"), n_w = dims.at("n_w"), T = dims.at("T");
    const auto fields = split(line, ',');
    if (static_cast<Index>(fields.size()) != 1 + n_d + n_x + T * n_w) {
      throw Error(ErrorCode::Io, "dataset line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(1 + n_d + n_x + T * n_w) + " fields, found " +
                                     std::to_string(fields.size()));
    }
    try {
      Scenario s;
      std::size_t f = 0;
      s.id = parse_int(fields[f++]);
      s.d.resize(n_d);
      for (Index i = 0; i < n_d; ++i) s.d(i) = parse_double(fields[f++]);
      s.x0.resize(n_x);
      for (Index i = 0; i < n_x; ++i) s.x0(i) = parse_double(fields[f++]);
      s.w.resize(T, n_w);
      for (Index t = 0; t < T; ++t)
        for (Index i = 0; i < n_w; ++i) s.w(t, i) = parse_double(fields[f++]);
      out.push_back(std::move(s));
    } catch (const Error& e) {
      throw e.with_context("dataset line " + std::to_string(line_no));
    }
  }
  if (have_dims && static_cast<std::int64_t>(out.size()) != dims.at("M")) {
    throw Error(ErrorCode::Io, "dataset header announces " + std::to_string(dims.at("M")) + " rows, found " +
                                   std::to_string(out.size()));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const ScenarioSpec& spec, std::span<const Scenario> data,
                   const RunStamp& stamp) {
  write_text(path, serialize_dataset(spec, data, stamp));
}

std::vector<Scenario> read_dataset(const std::filesystem::path& path) {
  try {
    return parse_dataset(read_text(path));
  } catch (const Error& e) {
    throw e.with_context(path.string());
  }
}

std::string theta_to_json(const ThetaParams<double>& theta, const RunStamp& stamp, std::string_view label) {
  json j = stamp_json(stamp);
  j["format"] = "mpctune-theta-v1";
  j["label"] = std::string(label);
  j["layout"] = layout_json(theta.layout());
  j["theta"] = vector_json(theta.to_vector());
  j["P"] = matrix_json(theta.P());
  j["R"] = matrix_json(theta.R());
  j["eta_x"] = matrix_json(theta.eta_x);
  j["eta_u"] = matrix_json(theta.eta_u);
  return j.dump(2) + "\n";
}

ThetaParams<double> theta_from_json(std::string_view text) {
  return parse_json(text, "theta file", [](const json& j) {
    return ThetaParams<double>::from_vector(layout_from(j.at("layout")), vector_from(j.at("theta")));
  });
}

std::string checkpoint_to_json(const P2LState& state, const RunStamp& stamp) {
  json j = stamp_json(stamp);
  j["format"] = "mpctune-p2l-checkpoint-v1";
  j["k"] = state.k;
  j["training_ids"] = state.training;
  j["converged"] = state.converged;
  j["layout"] = layout_json(state.theta.layout());
  j["theta"] = vector_json(state.theta.to_vector());
  j["loss_history"] = state.loss_history;
  return j.dump(2) + "\n";
}

P2LState checkpoint_from_json(std::string_view text) {
  return parse_json(text, "checkpoint", [](const json& j) {
    P2LState s;
    s.k = j.at("k").get<int>();
    s.training = j.at("training_ids").get<std::vector<std::int64_t>>();
    s.converged = j.at("converged").get<bool>();
    s.theta = ThetaParams<double>::from_vector(layout_from(j.at("layout")), vector_from(j.at("theta")));
    s.loss_history = j.at("loss_history").get<std::vector<double>>();
    if (static_cast<int>(s.training.size()) != s.k) throw Error(ErrorCode::Io, "checkpoint: |training| != k");
    return s;
  });
}

std::string support_to_json(const P2LResult& result, std::int64_t M, const RunStamp& stamp) {
  json j = stamp_json(stamp);
  j["format"] = "mpctune-support-v1";
  j["M"] = M;
  j["k_star"] = result.support.size();
  j["support_ids"] = result.support;
  j["iterations"] = result.iterations;
  j["certifiable"] = result.certifiable;
  j["infeasible_ids"] = result.infeasible_ids;
  j["loss_history"] = result.loss_history;
  return j.dump(2) + "\n";
}

std::string certificate_record(const Certificate& cert, std::uint64_t dataset_hash, const RunStamp& stamp,
                               std::string_view timestamp) {
  std::string s = "# mpctune certificate v1\n";
  s += "config_hash: " + hex64(stamp.config_hash) + "\n";
  s += "seed: " + std::to_string(stamp.seed) + "\n";
  s += "M: " + std::to_string(cert.M) + "\n";
  s += "k_star: " + std::to_string(cert.k_star) + "\n";
  s += "beta: " + format_double(cert.beta) + "\n";
  s += "epsilon: " + format_double(cert.epsilon) + "\n";
  s += std::string("vacuous: ") + (cert.vacuous ? "true" : "false") + "\n";
  s += "dataset_hash: " + hex64(dataset_hash) + "\n";
  s += "statement: " + cert.statement() + "\n";
  s += "timestamp: " + std::string(timestamp) + "\n";
  return s;
}

std::string trajectories_csv(std::span<const TrajectoryBundle> runs, const RunStamp& stamp) {
  std::string s = stamp_comment(stamp);
  if (runs.empty()) return s + "scenario_id,t,gamma,stage_cost\n";
  const Index n_x = runs.front().states.cols();
  const Index n_u = runs.front().inputs.cols();
  s += "scenario_id,t";
  for (Index i = 0; i < n_x; ++i) s += ",x" + std::to_string(i);
  for (Index i = 0; i < n_u; ++i) s += ",u" + std::to_string(i);
  s += ",gamma,stage_cost\n";
  for (const auto& b : runs) {
    for (Index t = 0; t < b.states.rows(); ++t) {
      s += std::to_string(b.scenario_id) + "," + std::to_string(t);
      for (Index i = 0; i < n_x; ++i) s += "," + format_double(b.states(t, i));
      for (Index i = 0; i < n_u; ++i) s += t < b.inputs.rows() ? "," + format_double(b.inputs(t, i)) : ",";
      s += "," + format_double(b.gammas(t)) + "," + format_double(b.stage_costs(t)) + "\n";
    }
  }
  return s;
}

std::string quantiles_csv(std::span<const TrajectoryBundle> runs, std::span<const int> coords, const RunStamp& stamp) {
  std::string s = stamp_comment(stamp) + "t,coord,mean,lo,hi\n";
  if (runs.empty()) return s;
  const Index rows = runs.front().states.rows();
  for (Index t = 0; t < rows; ++t) {
    for (int c : coords) {
      if (c < 0 || c >= runs.front().states.cols()) throw Error(ErrorCode::InvalidArgs, "quantile coordinate out of range");
      double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (const auto& b : runs) {
        const double v = b.states(t, c);
        sum += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      s += std::to_string(t) + "," + std::to_string(c) + "," + format_double(sum / static_cast<double>(runs.size())) +
           "," + format_double(lo) + "," + format_double(hi) + "\n";
    }
  }
  return s;
}

std::string violation_table_csv(std::span<const PolicyRow> rows, const RunStamp& stamp) {
  std::string s = stamp_comment(stamp) + "policy,avg_cost,ratio,total,relative\n";
  for (const auto& r : rows) {
    s += r.policy + "," + format_double(r.report.mean_cost) + "," + format_double(r.report.metrics.ratio) + "," +
         format_double(r.report.metrics.total) + "," + format_double(r.report.metrics.relative) + "\n";
  }
  return s;
}

}  // namespace mpctune
